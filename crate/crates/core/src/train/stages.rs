//! The two training loops.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::Checkpoint;
use super::config::{Stage, TrainConfig};
use super::optim::{clip_global_norm, optimizer_step, AdamState};
use crate::autodiff::{Gradients, Graph, Var};
use crate::data::{PairIndex, VideoRecord};
use crate::denoiser::{init_lora, Denoiser};
use crate::diffusion::{noise_error, q_sample, FrameMask};
use crate::dpo::{dpo_pair_loss, PairSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    /// Batch-mean loss before this step's update.
    pub loss: f64,
    /// Batch-mean implicit-reward margin (stage B only).
    pub margin: Option<f64>,
    /// Gradient norm of the trained tensors before clipping.
    pub grad_norm: f64,
    /// Gradient norm reaching tensors outside the trained set.
    pub frozen_grad_norm: f64,
    pub wall_ms: f64,
}

/// Hooks into a training run.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog) {}
    /// Every clean video fed to the model and its noised latent.
    fn on_latent(&mut self, _x0: &Tensor<f32>, _x_t: &Tensor<f32>) {}
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

pub fn log_tsv(log: &[StepLog]) -> String {
    let mut s = String::from("step\tloss\tmargin\twall_ms\n");
    for l in log {
        let m = l.margin.map(|m| format!("{m:.9}")).unwrap_or_default();
        s.push_str(&format!("{}\t{:.9}\t{}\t{:.3}\n", l.step, l.loss, m, l.wall_ms));
    }
    s
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) as f32)
}

fn norm(gr: &Gradients<f32>, vars: &[Var]) -> f64 {
    vars.iter()
        .filter_map(|v| gr.get(*v))
        .map(|g| g.sq_norm())
        .sum::<f64>()
        .sqrt()
}

fn check_records(records: &[VideoRecord], cfg: &TrainConfig) -> Result<()> {
    let shape = cfg.model.video_shape();
    for r in records {
        if r.frames.shape() != shape {
            return Err(Error::invalid(format!(
                "video {} has geometry {:?}, expected {:?}",
                r.id,
                r.frames.shape(),
                shape
            )));
        }
        if r.condition >= cfg.model.categories {
            return Err(Error::invalid(format!(
                "video {} has condition {} but the model has {} categories",
                r.id, r.condition, cfg.model.categories
            )));
        }
    }
    Ok(())
}

fn finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    log::error!("non-finite loss {loss} at step {step}");
    Err(Error::NonFiniteLoss { step, value: loss })
}

/// Denoising training of every base tensor with frame 0 kept clean.
pub fn train_stage_a(
    cfg: &TrainConfig,
    records: &[VideoRecord],
    init: Denoiser<f32>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::A {
        return Err(Error::invalid("train_stage_a needs a stage A configuration"));
    }
    if records.is_empty() {
        return Err(Error::invalid("stage A needs at least one video"));
    }
    if init.config() != &cfg.model {
        return Err(Error::invalid("initial weights do not match the configured architecture"));
    }
    check_records(records, cfg)?;
    let schedule = cfg.schedule.build()?;
    let mask = FrameMask::first_frame(cfg.model.frames);
    let shape = cfg.model.video_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init.with_lora(None)?;
    let mut state = AdamState::new(&model.params().tensors());
    let mut log = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let started = Instant::now();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true, false)?;
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let rec = &records[rng.gen_range(0..records.len())];
            let t = rng.gen_range(1..=schedule.steps());
            let eps = gaussian(&mut rng, &shape);
            let x_t = q_sample(&rec.frames, t, &eps, &schedule, &mask)?;
            observer.on_latent(&rec.frames, &x_t);
            losses.push(noise_error(&mut g, &bound, &x_t, t, &eps, rec.condition, &mask, true)?);
        }
        let total = sum_scaled(&mut g, &losses)?;
        let loss = g.scalar(total);
        finite(step, loss)?;
        let gr = g.backward(total)?;
        let vars = bound.params.all();
        let mut grads: Vec<Tensor<f32>> = vars.iter().map(|v| gr.wrt(*v)).collect();
        drop(bound);
        let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
        optimizer_step(&mut model.params_mut().tensors_mut(), &grads, &mut state, &cfg.optim)?;
        let entry = StepLog {
            step,
            loss,
            margin: None,
            grad_norm,
            frozen_grad_norm: 0.0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!("stage A step {step} loss {loss:.6}");
        observer.on_step(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            stage: Stage::A,
            iteration: cfg.iterations,
            seed: cfg.seed,
            config_digest: cfg.digest(),
            schedule: cfg.schedule.clone(),
            model,
        },
        log,
    })
}

fn sum_scaled(g: &mut Graph<f32>, losses: &[Var]) -> Result<Var> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    if losses.len() == 1 {
        Ok(total)
    } else {
        g.scale(total, 1.0 / losses.len() as f64)
    }
}

/// LoRA fine-tuning on preference pairs against the frozen `base`.
pub fn train_stage_b(
    cfg: &TrainConfig,
    pairs: &PairIndex,
    records: &[VideoRecord],
    base: &Checkpoint,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::B {
        return Err(Error::invalid("train_stage_b needs a stage B configuration"));
    }
    if base.stage != Stage::A {
        return Err(Error::invalid(format!(
            "stage B starts from a stage A checkpoint, got stage {}",
            base.stage
        )));
    }
    if base.model.config() != &cfg.model {
        return Err(Error::invalid(
            "configured architecture differs from the base checkpoint",
        ));
    }
    if pairs.pairs.is_empty() {
        return Err(Error::invalid("stage B needs at least one preference pair"));
    }
    check_records(records, cfg)?;
    let by_id: HashMap<&str, &VideoRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("pair references unknown video {id:?}")))
    };
    let resolved = pairs
        .pairs
        .iter()
        .map(|p| {
            let (w, l) = (lookup(&p.winner)?, lookup(&p.loser)?);
            if w.condition != p.condition || l.condition != p.condition {
                return Err(Error::invalid(format!(
                    "pair {} > {} disagrees with the dataset on its condition",
                    p.winner, p.loser
                )));
            }
            Ok((w, l))
        })
        .collect::<Result<Vec<_>>>()?;

    let schedule = cfg.schedule.build()?;
    let mask = FrameMask::first_frame(cfg.model.frames);
    let shape = cfg.model.video_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = base.model.clone().with_lora(None)?;
    let mut theta = reference.clone().with_lora(Some(init_lora(cfg.seed, &cfg.model)?))?;
    let mut state = AdamState::new(&theta.lora().expect("lora attached").tensors());
    let mut log = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let started = Instant::now();
        let mut g = Graph::new();
        let bound = theta.bind(&mut g, false, true)?;
        let frozen = reference.bind(&mut g, false, false)?;
        let mut losses = Vec::with_capacity(cfg.batch_size);
        let mut margin = 0.0;
        for _ in 0..cfg.batch_size {
            let (w, l) = resolved[rng.gen_range(0..resolved.len())];
            let t = rng.gen_range(1..=schedule.steps());
            let eps_w = gaussian(&mut rng, &shape);
            let eps_l = gaussian(&mut rng, &shape);
            for (x0, e) in [(&w.frames, &eps_w), (&l.frames, &eps_l)] {
                observer.on_latent(x0, &q_sample(x0, t, e, &schedule, &mask)?);
            }
            let sample = PairSample {
                winner: &w.frames,
                loser: &l.frames,
                eps_winner: &eps_w,
                eps_loser: &eps_l,
                t,
                cond: w.condition,
            };
            let out = dpo_pair_loss(&mut g, &bound, &frozen, &sample, &schedule, &mask, cfg.beta)?;
            margin += out.margin / cfg.batch_size as f64;
            losses.push(out.loss);
        }
        let total = sum_scaled(&mut g, &losses)?;
        let loss = g.scalar(total);
        finite(step, loss)?;
        let gr = g.backward(total)?;
        let lora_vars = bound.lora.as_ref().expect("lora bound").all();
        let mut grads: Vec<Tensor<f32>> = lora_vars.iter().map(|v| gr.wrt(*v)).collect();
        let frozen_grad_norm = norm(&gr, &[bound.params.all(), frozen.params.all()].concat());
        drop((bound, frozen));
        let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
        let lora = theta.lora_mut().expect("lora attached");
        optimizer_step(&mut lora.tensors_mut(), &grads, &mut state, &cfg.optim)?;
        let entry = StepLog {
            step,
            loss,
            margin: Some(margin),
            grad_norm,
            frozen_grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!("stage B step {step} loss {loss:.6} margin {margin:.6}");
        observer.on_step(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            stage: Stage::B,
            iteration: cfg.iterations,
            seed: cfg.seed,
            config_digest: cfg.digest(),
            schedule: cfg.schedule.clone(),
            model: theta,
        },
        log,
    })
}

/// Mean [`dpo_pair_loss`] of `theta` against `reference` over `pairs`, with
/// `draws` seeded (t, ε_w, ε_l) samples per pair. The same seed gives the
/// same samples, so two models can be compared on identical noise.
pub fn mean_pair_loss(
    theta: &Denoiser<f32>,
    reference: &Denoiser<f32>,
    pairs: &[(&VideoRecord, &VideoRecord)],
    schedule: &crate::diffusion::NoiseSchedule,
    beta: f64,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    if pairs.is_empty() || draws == 0 {
        return Err(Error::invalid("need at least one pair and one draw"));
    }
    let cfg = theta.config();
    let mask = FrameMask::first_frame(cfg.frames);
    let shape = cfg.video_shape();
    let reference = reference.clone().with_lora(None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for (w, l) in pairs {
        for _ in 0..draws {
            let t = rng.gen_range(1..=schedule.steps());
            let eps_w = gaussian(&mut rng, &shape);
            let eps_l = gaussian(&mut rng, &shape);
            let mut g = Graph::new();
            let th = theta.bind(&mut g, false, false)?;
            let rf = reference.bind(&mut g, false, false)?;
            let sample = PairSample {
                winner: &w.frames,
                loser: &l.frames,
                eps_winner: &eps_w,
                eps_loser: &eps_l,
                t,
                cond: w.condition,
            };
            let out = dpo_pair_loss(&mut g, &th, &rf, &sample, schedule, &mask, beta)?;
            total += g.scalar(out.loss);
        }
    }
    Ok(total / (pairs.len() * draws) as f64)
}
