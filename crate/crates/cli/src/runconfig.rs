//! `key = value` run files and the resolved settings written beside outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hvdpo::train::TrainConfig;

/// Keys a run file may set besides the training configuration.
pub const PATH_KEYS: &[&str] = &["data", "pairs", "ref", "out"];

/// Parsed run file, in file order.
#[derive(Clone, Debug, Default)]
pub struct RunFile {
    pub entries: Vec<(String, String)>,
}

impl RunFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let known = TrainConfig::keys();
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{origin}:{}: expected `key = value`, got {raw:?}", n + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            if !known.contains(&k) && !PATH_KEYS.contains(&k) {
                bail!("{origin}:{}: unknown key {k:?}", n + 1);
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(RunFile { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunFile::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunFile::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Last value for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Applies the training keys to `cfg`.
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        for (k, v) in &self.entries {
            if !PATH_KEYS.contains(&k.as_str()) {
                cfg.set(k, v).with_context(|| format!("config key {k}"))?;
            }
        }
        Ok(())
    }
}

/// Flag value if given, else the run-file value.
pub fn path_setting(flag: &Option<PathBuf>, file: &RunFile, key: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| file.get(key).map(PathBuf::from))
}

/// Applies repeated `--set key=value` overrides.
pub fn apply_overrides(cfg: &mut TrainConfig, sets: &[String]) -> Result<()> {
    for s in sets {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects key=value, got {s:?}");
        };
        cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {s}"))?;
    }
    Ok(())
}

/// Ordered settings of one command run.
#[derive(Clone, Debug)]
pub struct Resolved {
    command: &'static str,
    lines: Vec<(String, String)>,
}

impl Resolved {
    pub fn new(command: &'static str) -> Self {
        Resolved {
            command,
            lines: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.push(key, value.display())
    }

    pub fn train(&mut self, cfg: &TrainConfig) -> &mut Self {
        for (k, v) in cfg.entries() {
            self.push(k, v);
        }
        self
    }

    pub fn text(&self) -> String {
        let mut s = format!("# hvdpo {}\n", self.command);
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Logs every setting and writes them next to `out`: inside it for a
    /// directory, as `<out>.config` for a file.
    pub fn write_beside(&self, out: &Path) -> Result<PathBuf> {
        for (k, v) in &self.lines {
            log::info!("{}: {k} = {v}", self.command);
        }
        let path = if out.is_dir() {
            out.join(format!("{}.config", self.command))
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".config");
            out.with_file_name(name)
        };
        fs::write(&path, self.text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let f = RunFile::parse("# run\nlr = 0.01 # fast\n\ndata = d/\niterations=5\n", "t").unwrap();
        assert_eq!(f.get("lr"), Some("0.01"));
        assert_eq!(f.get("data"), Some("d/"));
        let mut cfg = TrainConfig::stage_a(1);
        f.apply(&mut cfg).unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.optim.lr, 0.01);

        let err = RunFile::parse("lr = 1\nlearning_rate = 2\n", "t").unwrap_err();
        assert!(err.to_string().contains("t:2: unknown key"), "{err}");
        assert!(RunFile::parse("lr 1\n", "t").is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let f = RunFile::parse("iterations = 5\n", "t").unwrap();
        let mut cfg = TrainConfig::stage_a(1);
        f.apply(&mut cfg).unwrap();
        apply_overrides(&mut cfg, &["iterations=7".into()]).unwrap();
        assert_eq!(cfg.iterations, 7);
        assert!(apply_overrides(&mut cfg, &["nope=1".into()]).is_err());
    }
}
