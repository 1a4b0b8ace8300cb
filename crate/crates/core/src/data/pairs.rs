//! Preference pairs drawn from scored records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IndexEntry;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PreferencePair {
    pub winner: String,
    pub loser: String,
    pub condition: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairIndex {
    pub seed: u64,
    pub pairs: Vec<PreferencePair>,
}

/// Draws per requested pair before giving up.
const RETRIES_PER_PAIR: usize = 1000;

/// Number of unordered same-condition pairs with distinct scores.
pub fn orderable_pairs(records: &[IndexEntry]) -> usize {
    let mut n = 0;
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if a.condition == b.condition && a.score != b.score {
                n += 1;
            }
        }
    }
    n
}

/// Records are sorted by id, shuffled with `seed`, then each draw picks a
/// record and a distinct partner of the same condition uniformly. The
/// higher score wins; ties are redrawn. A record may appear in many pairs.
pub fn build_pairs(records: &[IndexEntry], n_pairs: usize, seed: u64) -> Result<PairIndex> {
    if n_pairs == 0 {
        return Err(Error::invalid("number of pairs must be at least 1"));
    }
    let mut sorted: Vec<(&str, usize, f64)> = records
        .iter()
        .map(|r| {
            r.score
                .map(|s| (r.id.as_str(), r.condition, s))
                .ok_or_else(|| Error::invalid(format!("video {} has no score", r.id)))
        })
        .collect::<Result<_>>()?;
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("duplicate video id {:?}", w[0].0)));
    }
    let achievable = orderable_pairs(records);
    if achievable == 0 {
        return Err(Error::invalid(format!(
            "no orderable pairs among {} records (achievable distinct pairs: 0)",
            records.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let mut by_cond: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in sorted.iter().enumerate() {
        by_cond.entry(r.1).or_default().push(i);
    }

    let mut pairs = Vec::with_capacity(n_pairs);
    let mut draws = 0;
    while pairs.len() < n_pairs {
        if draws == RETRIES_PER_PAIR * n_pairs {
            return Err(Error::invalid(format!(
                "formed only {} of {n_pairs} pairs after {draws} draws (achievable distinct pairs: {achievable})",
                pairs.len()
            )));
        }
        draws += 1;
        let i = rng.gen_range(0..sorted.len());
        let members = &by_cond[&sorted[i].1];
        if members.len() < 2 {
            continue;
        }
        let pos = members.iter().position(|&m| m == i).expect("member of own condition");
        let mut k = rng.gen_range(0..members.len() - 1);
        if k >= pos {
            k += 1;
        }
        let (a, b) = (sorted[i], sorted[members[k]]);
        if a.2 == b.2 {
            continue;
        }
        let (w, l) = if a.2 > b.2 { (a, b) } else { (b, a) };
        pairs.push(PreferencePair {
            winner: w.0.to_string(),
            loser: l.0.to_string(),
            condition: w.1,
        });
    }
    Ok(PairIndex { seed, pairs })
}

impl PairIndex {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# seed={}\n", self.seed);
        for p in &self.pairs {
            let _ = writeln!(s, "{}\t{}\t{}", p.winner, p.loser, p.condition);
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut seed = None;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| format!("line {n}: bad seed {v:?}"))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(format!("line {n}: expected 3 tab-separated fields, found {}", f.len()));
            }
            if f[0] == f[1] {
                return Err(format!("line {n}: video {:?} paired with itself", f[0]));
            }
            pairs.push(PreferencePair {
                winner: f[0].to_string(),
                loser: f[1].to_string(),
                condition: f[2].parse().map_err(|_| format!("line {n}: bad condition {:?}", f[2]))?,
            });
        }
        let seed = seed.ok_or("missing \"# seed=<n>\" header")?;
        Ok(PairIndex { seed, pairs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PairIndex::parse(&text).map_err(|m| Error::format(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, cond: usize, score: f64) -> IndexEntry {
        IndexEntry {
            id: id.into(),
            condition: cond,
            path: format!("{id}.hvdp"),
            score: Some(score),
        }
    }

    fn eight() -> Vec<IndexEntry> {
        (0..8).map(|i| entry(&format!("v{i}"), i % 2, (i * 3 % 5) as f64)).collect()
    }

    #[test]
    fn forced_orientation() {
        let r = [entry("a", 0, 5.0), entry("b", 0, 3.0)];
        let p = build_pairs(&r, 1, 0).unwrap();
        assert_eq!(p.pairs, vec![PreferencePair { winner: "a".into(), loser: "b".into(), condition: 0 }]);
    }

    #[test]
    fn all_ties_fail() {
        let r = [entry("a", 0, 1.0), entry("b", 0, 1.0), entry("c", 0, 1.0)];
        let e = build_pairs(&r, 1, 0).unwrap_err().to_string();
        assert!(e.contains("no orderable pairs") && e.contains("achievable distinct pairs: 0"), "{e}");
        // distinct scores but in different conditions
        let r = [entry("a", 0, 1.0), entry("b", 1, 2.0)];
        assert!(build_pairs(&r, 1, 0).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = build_pairs(&eight(), 16, 7).unwrap();
        let b = build_pairs(&eight(), 16, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs.len(), 16);
        assert_ne!(a, build_pairs(&eight(), 16, 8).unwrap());
    }

    #[test]
    fn tsv_round_trip() {
        let a = build_pairs(&eight(), 5, 3).unwrap();
        let t = a.to_tsv();
        assert!(t.starts_with("# seed=3\n"));
        assert_eq!(PairIndex::parse(&t).unwrap(), a);
        assert!(PairIndex::parse("a\tb\t0\n").is_err());
    }

    proptest! {
        #[test]
        fn invariant_to_input_order_and_well_oriented(seed in any::<u64>(), rot in 0usize..8, n in 1usize..20) {
            let base = eight();
            let mut moved = base.clone();
            moved.rotate_left(rot);
            moved.swap(0, 7 - rot.min(7));
            let a = build_pairs(&base, n, seed).unwrap();
            let b = build_pairs(&moved, n, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for p in &a.pairs {
                let w = base.iter().find(|e| e.id == p.winner).unwrap();
                let l = base.iter().find(|e| e.id == p.loser).unwrap();
                prop_assert!(w.score > l.score);
                prop_assert_eq!(w.condition, l.condition);
                prop_assert_ne!(&p.winner, &p.loser);
            }
        }
    }
}
