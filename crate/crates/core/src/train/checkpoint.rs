//! The `HVCK` checkpoint file.
//!
//! Layout: magic, `u32` version, `u32`-length-prefixed UTF-8 metadata of
//! `key:value` lines, `u32` tensor count, then per tensor a `u32`-prefixed
//! name, `u32` rank, `u32` dims and little-endian `f32` data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{ScheduleConfig, Stage};
use crate::data::binary::{put_f32s, put_u32, ByteReader};
use crate::denoiser::{lora_layout, param_layout, Denoiser, DenoiserParams, LoraParams, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub iteration: usize,
    pub seed: u64,
    /// Hex SHA-256 of the resolved training configuration.
    pub config_digest: String,
    pub schedule: ScheduleConfig,
    pub model: Denoiser<f32>,
}

impl Checkpoint {
    fn metadata(&self) -> Vec<(&'static str, String)> {
        let m = self.model.config();
        vec![
            ("stage", self.stage.to_string()),
            ("iteration", self.iteration.to_string()),
            ("seed", self.seed.to_string()),
            ("config_digest", self.config_digest.clone()),
            ("frames", m.frames.to_string()),
            ("channels", m.channels.to_string()),
            ("height", m.height.to_string()),
            ("width", m.width.to_string()),
            ("hidden", m.hidden.to_string()),
            ("heads", m.heads.to_string()),
            ("categories", m.categories.to_string()),
            ("time_dim", m.time_dim.to_string()),
            ("lora_rank", m.lora_rank.to_string()),
            ("lora_alpha", m.lora_alpha.to_string()),
            ("schedule_steps", self.schedule.steps.to_string()),
            ("beta_start", self.schedule.beta_start.to_string()),
            ("beta_end", self.schedule.beta_end.to_string()),
        ]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let meta: String = self
            .metadata()
            .into_iter()
            .map(|(k, v)| format!("{k}:{v}\n"))
            .collect();
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(meta.as_bytes());

        let mut tensors: Vec<(&str, &Tensor<f32>)> = DenoiserParams::<f32>::NAMES
            .iter()
            .copied()
            .zip(self.model.params().tensors())
            .collect();
        if let Some(l) = self.model.lora() {
            tensors.extend(LoraParams::<f32>::NAMES.iter().copied().zip(l.tensors()));
        }
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, t.data());
        }
        out
    }

    /// With `include_lora = false` any LoRA section is skipped and the
    /// result holds base weights only.
    pub fn decode(bytes: &[u8], include_lora: bool) -> std::result::Result<Self, String> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("bad magic: expected \"HVCK\"".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| "metadata is not UTF-8")?;
        let mut kv = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| format!("metadata line {line:?} lacks ':'"))?;
            kv.insert(k, v);
        }
        fn field<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, k: &str) -> std::result::Result<T, String> {
            let v = kv.get(k).ok_or_else(|| format!("metadata field {k} missing"))?;
            v.parse().map_err(|_| format!("metadata field {k} has bad value {v:?}"))
        }
        let config = ModelConfig {
            frames: field(&kv, "frames")?,
            channels: field(&kv, "channels")?,
            height: field(&kv, "height")?,
            width: field(&kv, "width")?,
            hidden: field(&kv, "hidden")?,
            heads: field(&kv, "heads")?,
            categories: field(&kv, "categories")?,
            time_dim: field(&kv, "time_dim")?,
            lora_rank: field(&kv, "lora_rank")?,
            lora_alpha: field(&kv, "lora_alpha")?,
        };
        config.validate().map_err(|e| e.to_string())?;
        let stage: Stage = kv
            .get("stage")
            .ok_or("metadata field stage missing")?
            .parse()
            .map_err(|e: Error| e.to_string())?;
        let schedule = ScheduleConfig {
            steps: field(&kv, "schedule_steps")?,
            beta_start: field(&kv, "beta_start")?,
            beta_end: field(&kv, "beta_end")?,
        };

        let mut expected: BTreeMap<&str, Vec<usize>> = DenoiserParams::<f32>::NAMES
            .iter()
            .copied()
            .zip(param_layout(&config).into_iter().map(|(s, _)| s))
            .collect();
        expected.extend(LoraParams::<f32>::NAMES.iter().copied().zip(lora_layout(&config)));

        let count = r.u32()? as usize;
        let mut found: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| "tensor name is not UTF-8")?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<std::result::Result<Vec<_>, String>>()?;
            let want = expected
                .get(name.as_str())
                .ok_or_else(|| format!("unknown tensor {name:?}"))?;
            if &shape != want {
                return Err(format!("tensor {name}: shape {shape:?} does not match declared {want:?}"));
            }
            let data = r.f32s(shape.iter().product()).map_err(|e| format!("tensor {name}: {e}"))?;
            if found.insert(name.clone(), Tensor::new(shape, data).map_err(|e| e.to_string())?).is_some() {
                return Err(format!("tensor {name} appears twice"));
            }
        }
        if !r.finished() {
            return Err("trailing bytes after tensor table".into());
        }

        let mut take_set = |names: &[&str]| -> std::result::Result<Option<Vec<Tensor<f32>>>, String> {
            let present = names.iter().filter(|n| found.contains_key(**n)).count();
            if present == 0 {
                return Ok(None);
            }
            names
                .iter()
                .map(|n| found.remove(*n).ok_or_else(|| format!("tensor {n} missing")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
        };
        let base = take_set(DenoiserParams::<f32>::NAMES)?
            .ok_or_else(|| format!("tensor {} missing", DenoiserParams::<f32>::NAMES[0]))?;
        let lora = take_set(LoraParams::<f32>::NAMES)?;
        let params = DenoiserParams::from_tensors(base).map_err(|e| e.to_string())?;
        let lora = match lora {
            Some(t) if include_lora => Some(LoraParams::from_tensors(t).map_err(|e| e.to_string())?),
            _ => None,
        };
        Ok(Checkpoint {
            stage,
            iteration: field(&kv, "iteration")?,
            seed: field(&kv, "seed")?,
            config_digest: field(&kv, "config_digest")?,
            schedule,
            model: Denoiser::new(config, params, lora).map_err(|e| e.to_string())?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, include_lora: bool) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes, include_lora).map_err(|m| Error::format(path, m))
    }

    /// Hex SHA-256 of the encoded checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_lora;

    fn ckpt(with_lora: bool) -> Checkpoint {
        let cfg = ModelConfig {
            frames: 2,
            channels: 2,
            height: 4,
            width: 4,
            hidden: 4,
            heads: 2,
            categories: 3,
            time_dim: 4,
            lora_rank: 2,
            lora_alpha: 3.0,
        };
        let mut model = Denoiser::init(5, cfg.clone()).unwrap();
        if with_lora {
            let mut l = init_lora(6, &cfg).unwrap();
            l.q_b.data_mut()[0] = 0.25;
            model = model.with_lora(Some(l)).unwrap();
        }
        Checkpoint {
            stage: if with_lora { Stage::B } else { Stage::A },
            iteration: 17,
            seed: 99,
            config_digest: "ab".repeat(32),
            schedule: ScheduleConfig::default(),
            model,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for lora in [false, true] {
            let c = ckpt(lora);
            let bytes = c.encode();
            let back = Checkpoint::decode(&bytes, true).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn base_only_load_drops_lora() {
        let c = ckpt(true);
        let base = Checkpoint::decode(&c.encode(), false).unwrap();
        assert!(base.model.lora().is_none());
        assert_eq!(base.model.params(), c.model.params());
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = ckpt(false).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3], true).unwrap_err().contains("unexpected end of data"));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(Checkpoint::decode(&v, true).unwrap_err().contains("version"));
        // bump the first tensor's first dim
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let name = DenoiserParams::<f32>::NAMES[0];
        let at = text.find(name).unwrap() + name.len() + 4;
        let mut v = bytes;
        v[at] += 1;
        let e = Checkpoint::decode(&v, true).unwrap_err();
        assert!(e.contains(name), "{e}");
    }
}
