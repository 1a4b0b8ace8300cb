//! Training configuration and its canonical `key = value` form.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::optim::AdamConfig;
use crate::denoiser::ModelConfig;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Full-network training on the denoising objective.
    A,
    /// LoRA fine-tuning on preference pairs against a frozen reference.
    B,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::A => "A",
            Stage::B => "B",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Stage::A),
            "B" | "b" => Ok(Stage::B),
            _ => Err(Error::invalid(format!("unknown stage {s:?} (expected A or B)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Pairs (stage B) or videos (stage A) per optimizer step.
    pub batch_size: usize,
    pub iterations: usize,
    /// DPO temperature; unused in stage A.
    pub beta: f64,
    pub optim: AdamConfig,
    /// Global L2 norm bound on the gradient.
    pub grad_clip: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
}

impl TrainConfig {
    pub fn stage_a(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::A,
            batch_size: 1,
            iterations: 2000,
            beta: 0.1,
            optim: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            grad_clip: 1.0,
            seed,
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }

    pub fn stage_b(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::B,
            iterations: 1000,
            optim: AdamConfig {
                lr: 1e-4,
                weight_decay: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::stage_a(seed)
        }
    }

    pub fn for_stage(stage: Stage, seed: u64) -> Self {
        match stage {
            Stage::A => TrainConfig::stage_a(seed),
            Stage::B => TrainConfig::stage_b(seed),
        }
    }

    /// Zero iterations is accepted and returns the initial weights.
    pub fn validate(&self) -> Result<()> {
        let o = &self.optim;
        let positive = [
            ("lr", o.lr),
            ("beta", self.beta),
            ("epsilon", o.eps),
            ("grad_clip", self.grad_clip),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("{k} must be positive, got {v}")));
        }
        for (k, v) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        self.model.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    /// Canonical key/value pairs, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, o, s) = (&self.model, &self.optim, &self.schedule);
        vec![
            ("stage", self.stage.to_string()),
            ("seed", self.seed.to_string()),
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", o.lr.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("epsilon", o.eps.to_string()),
            ("weight_decay", o.weight_decay.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("beta", self.beta.to_string()),
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
            ("schedule_steps", s.steps.to_string()),
            ("beta_start", s.beta_start.to_string()),
            ("beta_end", s.beta_end.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        TrainConfig::stage_a(0).entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value {v:?} for {key}")))
        }
        let (m, o, s) = (&mut self.model, &mut self.optim, &mut self.schedule);
        match key {
            "stage" => self.stage = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => o.lr = num(key, value)?,
            "beta1" => o.beta1 = num(key, value)?,
            "beta2" => o.beta2 = num(key, value)?,
            "epsilon" => o.eps = num(key, value)?,
            "weight_decay" => o.weight_decay = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "frames" => m.frames = num(key, value)?,
            "channels" => m.channels = num(key, value)?,
            "height" => m.height = num(key, value)?,
            "width" => m.width = num(key, value)?,
            "hidden" => m.hidden = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "categories" => m.categories = num(key, value)?,
            "time_dim" => m.time_dim = num(key, value)?,
            "lora_rank" => m.lora_rank = num(key, value)?,
            "lora_alpha" => m.lora_alpha = num(key, value)?,
            "schedule_steps" => s.steps = num(key, value)?,
            "beta_start" => s.beta_start = num(key, value)?,
            "beta_end" => s.beta_end = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`TrainConfig::to_text`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
