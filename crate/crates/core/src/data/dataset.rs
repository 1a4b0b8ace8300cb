//! Dataset directories: `index.tsv` plus one video file per record.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::video::{read_video, write_video};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.tsv";
const INDEX_HEADER: [&str; 4] = ["id", "condition", "path", "score"];

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub condition: usize,
    pub frames: Tensor<f32>,
    pub score: Option<f64>,
}

impl VideoRecord {
    pub fn entry(&self) -> IndexEntry {
        IndexEntry {
            id: self.id.clone(),
            condition: self.condition,
            path: format!("{}.hvdp", self.id),
            score: self.score,
        }
    }
}

/// One row of `index.tsv`; `path` is relative to the dataset directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub condition: usize,
    pub path: String,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    /// Sorted by id.
    pub entries: Vec<IndexEntry>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ',' || c == '/' || c == '\\') {
        return Err(Error::invalid(format!(
            "video id {id:?} must be non-empty without whitespace, commas or slashes"
        )));
    }
    Ok(())
}

fn format_score(s: Option<f64>) -> String {
    s.map(|v| v.to_string()).unwrap_or_default()
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>, mut entries: Vec<IndexEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::invalid(format!("duplicate video id {:?}", w[0].id)));
            }
        }
        for e in &entries {
            check_id(&e.id)?;
            if let Some(s) = e.score {
                if !s.is_finite() {
                    return Err(Error::invalid(format!("score of {} is not finite", e.id)));
                }
            }
        }
        Ok(Dataset {
            root: root.into(),
            entries,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Dataset::new(dir, parse_index(&text).map_err(|m| Error::format(&path, m))?)
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn video_path(&self, e: &IndexEntry) -> PathBuf {
        self.root.join(&e.path)
    }

    pub fn index_text(&self) -> String {
        let mut s = INDEX_HEADER.join("\t");
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.id, e.condition, e.path, format_score(e.score));
        }
        s
    }

    /// Writes `index.tsv` into `dir`. Relative video paths are rewritten so
    /// they still resolve when `dir` differs from the dataset root.
    pub fn write_index(&self, dir: &Path) -> Result<PathBuf> {
        let same = match (fs::canonicalize(dir), fs::canonicalize(&self.root)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        let out = if same {
            self.clone()
        } else {
            let mut d = self.clone();
            for e in &mut d.entries {
                let p = self.root.join(&e.path);
                let p = fs::canonicalize(&p).unwrap_or(p);
                e.path = p.to_string_lossy().into_owned();
            }
            d
        };
        let path = dir.join(INDEX_FILE);
        fs::write(&path, out.index_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads every video, checking geometry and the `[-1, 1]` value range.
    pub fn load_records(&self, shape: &[usize]) -> Result<Vec<VideoRecord>> {
        self.entries
            .iter()
            .map(|e| {
                let path = self.video_path(e);
                let frames = read_video(&path, Some(shape))?;
                if frames.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(Error::format(&path, "values outside [-1, 1]"));
                }
                Ok(VideoRecord {
                    id: e.id.clone(),
                    condition: e.condition,
                    frames,
                    score: e.score,
                })
            })
            .collect()
    }
}

fn parse_index(text: &str) -> std::result::Result<Vec<IndexEntry>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != INDEX_HEADER {
        return Err(format!("expected header {:?}", INDEX_HEADER.join("\t")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cond = row[1]
            .parse()
            .map_err(|_| format!("line {line}: bad condition {:?}", &row[1]))?;
        let score = match &row[3] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("line {line}: bad score {s:?}"))?,
            ),
        };
        out.push(IndexEntry {
            id: row[0].to_string(),
            condition: cond,
            path: row[2].to_string(),
            score,
        });
    }
    Ok(out)
}

/// Writes each video as `{id}.hvdp` into `dir` and merges the records into
/// the directory's index (created if absent). An id already present fails.
pub fn save_records(dir: &Path, records: &[VideoRecord]) -> Result<Dataset> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = if dir.join(INDEX_FILE).exists() {
        Dataset::load(dir)?.entries
    } else {
        Vec::new()
    };
    let existing: HashSet<String> = entries.iter().map(|e| e.id.clone()).collect();
    for r in records {
        check_id(&r.id)?;
        if existing.contains(&r.id) {
            return Err(Error::invalid(format!(
                "video id {:?} already exists in {}",
                r.id,
                dir.display()
            )));
        }
        entries.push(r.entry());
    }
    let ds = Dataset::new(dir, entries)?;
    for r in records {
        write_video(&dir.join(r.entry().path), &r.frames)?;
    }
    ds.write_index(dir)?;
    Ok(ds)
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Attaches `id,score` rows to the dataset at `dataset_dir`. A leading
/// `id,score` header is skipped; for repeated ids the last row wins.
pub fn ingest_scores(dataset_dir: &Path, scores_file: &Path) -> Result<IngestOutcome> {
    let mut dataset = Dataset::load(dataset_dir)?;
    let text = fs::read_to_string(scores_file).map_err(|e| Error::io(scores_file, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut scores: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::format(scores_file, e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if i == 0 && row.len() == 2 && &row[0] == "id" && &row[1] == "score" {
            continue;
        }
        if row.len() != 2 {
            return Err(Error::format(
                scores_file,
                format!("line {line}: expected 2 fields (id,score), found {}", row.len()),
            ));
        }
        let score = row[1]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::format(scores_file, format!("line {line}: bad score {:?}", &row[1]))
            })?;
        let id = row[0].to_string();
        if dataset.get(&id).is_none() {
            return Err(Error::format(scores_file, format!("line {line}: unknown video id {id:?}")));
        }
        if let Some((_, prev)) = scores.insert(id.clone(), (score, line)) {
            let w = format!("{id}: score on line {line} replaces the one on line {prev}");
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    for e in &mut dataset.entries {
        if let Some((s, _)) = scores.get(&e.id) {
            e.score = Some(*s);
        }
    }
    Ok(IngestOutcome { dataset, warnings })
}
