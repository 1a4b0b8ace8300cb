//! Central finite differences and the gradient-check suite.
//!
//! Every check evaluates in `f64`: a forward-only perturbation estimate is
//! compared coordinate by coordinate with the reverse-mode gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Primitive, Var};
use crate::denoiser::{init_lora, init_params, Denoiser, LoraParams, ModelConfig};
use crate::diffusion::{Denoise, FrameMask, NoiseSchedule};
use crate::dpo::{dpo_pair_loss, PairSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Perturbation size used by every registered check.
pub const STEP: f64 = 1e-4;
/// Largest accepted per-coordinate relative error.
pub const TOLERANCE: f64 = 1e-4;

/// (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h for every coordinate i.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::domain(
                "finite_difference_gradient",
                format!("non-finite function value at coordinate {i}"),
            ));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// |a − b| / max(|a|, |b|, 1e-6).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instance: usize,
    pub max_rel_error: f64,
    /// Number of gradient coordinates compared.
    pub coordinates: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Every primitive with the parameters used to exercise it.
pub fn registered_primitives() -> Vec<Primitive> {
    vec![
        Primitive::Add,
        Primitive::Subtract,
        Primitive::Multiply,
        Primitive::Scale(-0.7),
        Primitive::Matmul,
        Primitive::Conv2d,
        Primitive::Softmax,
        Primitive::Sigmoid,
        Primitive::LogSigmoid,
        Primitive::Ln,
        Primitive::Exp,
        Primitive::SumAll,
        Primitive::MeanAll,
        Primitive::SquaredNorm,
        Primitive::Reshape(vec![4, 3]),
        Primitive::Concat(1),
        Primitive::Transpose,
        Primitive::Slice {
            axis: 1,
            start: 1,
            len: 2,
        },
    ]
}

fn input_shapes(prim: &Primitive) -> Vec<Vec<usize>> {
    match prim {
        Primitive::Add | Primitive::Subtract | Primitive::Multiply => vec![vec![3, 4]; 2],
        Primitive::Matmul => vec![vec![3, 4], vec![4, 2]],
        Primitive::Conv2d => vec![vec![2, 2, 4, 5], vec![3, 2, 3, 3]],
        Primitive::Concat(_) => vec![vec![2, 3], vec![2, 2], vec![2, 1]],
        Primitive::Reshape(_) => vec![vec![2, 6]],
        Primitive::Slice { .. } => vec![vec![3, 4, 2]],
        Primitive::Softmax => vec![vec![3, 5]],
        _ => vec![vec![3, 4]],
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Compare reverse-mode and finite-difference gradients of `sum(prim(x) ⊙ w)`
/// with respect to every input, for one random instance.
pub fn check_primitive(prim: &Primitive, seed: u64, instance: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (instance as u64).wrapping_mul(0x9e37_79b9));
    let (lo, hi) = if matches!(prim, Primitive::Ln) { (0.5, 1.5) } else { (-1.0, 1.0) };
    let inputs: Vec<Tensor<f64>> = input_shapes(prim)
        .iter()
        .map(|s| random(&mut rng, s, lo, hi))
        .collect();

    let out_shape = {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = g.apply(prim.clone(), &vars)?;
        g.shape(y).to_vec()
    };
    let weight = random(&mut rng, &out_shape, -1.0, 1.0);

    let eval = |xs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let y = g.apply(prim.clone(), &vars)?;
        let w = g.constant(weight.clone());
        let yw = g.mul(y, w)?;
        let root = g.sum(yw)?;
        let value = g.scalar(root);
        if !grads {
            return Ok((value, Vec::new()));
        }
        let gr = g.backward(root)?;
        Ok((value, vars.iter().map(|v| gr.wrt(*v)).collect()))
    };

    let (_, analytic) = eval(&inputs, true)?;
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (j, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |x| {
                let mut xs = inputs.clone();
                xs[j] = x.clone();
                Ok(eval(&xs, false)?.0)
            },
            &inputs[j],
            STEP,
        )?;
        worst = worst.max(max_relative_error(a, &numeric));
        coordinates += a.numel();
    }
    Ok(CheckOutcome {
        name: prim.name().to_string(),
        instance,
        max_rel_error: worst,
        coordinates,
    })
}

/// Configuration used for end-to-end gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        frames: 2,
        channels: 2,
        height: 4,
        width: 4,
        hidden: 4,
        heads: 1,
        categories: 2,
        time_dim: 4,
        lora_rank: 2,
        lora_alpha: 2.0,
    }
}

fn video(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Tensor<f64> {
    random(rng, &cfg.video_shape(), -1.0, 1.0)
}

/// LoRA factors with both `A` and `B` random, so every factor has a nonzero gradient.
fn random_lora(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<LoraParams<f64>> {
    let mut l = init_lora(rng.gen(), cfg)?.cast::<f64>();
    for t in l.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    Ok(l)
}

/// Gradients of the video DPO pair loss with respect to the LoRA factors.
pub fn check_dpo_pair_loss(seed: u64, instance: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd90 ^ ((instance as u64) << 20));
    let cfg = tiny_config();
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let mask = FrameMask::first_frame(cfg.frames);
    let base = Denoiser::new(cfg.clone(), init_params(rng.gen(), &cfg)?, None)?.cast::<f64>();
    let lora = random_lora(&mut rng, &cfg)?;
    let (w, l) = (video(&mut rng, &cfg), video(&mut rng, &cfg));
    let (ew, el) = (video(&mut rng, &cfg), video(&mut rng, &cfg));
    let t = rng.gen_range(1..=1000);
    let cond = rng.gen_range(0..cfg.categories);
    let beta = 0.1;
    let pair = PairSample {
        winner: &w,
        loser: &l,
        eps_winner: &ew,
        eps_loser: &el,
        t,
        cond,
    };

    let eval = |lora: &LoraParams<f64>, grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let theta_model = base.clone().with_lora(Some(lora.clone()))?;
        let mut g = Graph::<f64>::new();
        let theta = theta_model.bind(&mut g, false, true)?;
        let reference = base.bind(&mut g, false, false)?;
        let out = dpo_pair_loss(&mut g, &theta, &reference, &pair, &schedule, &mask, beta)?;
        let value = g.scalar(out.loss);
        if !grads {
            return Ok((value, Vec::new()));
        }
        let gr = g.backward(out.loss)?;
        let lv = theta.lora.expect("bound with lora");
        Ok((value, lv.all().iter().map(|v| gr.wrt(*v)).collect()))
    };

    let (_, analytic) = eval(&lora, true)?;
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (j, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |x| {
                let mut probe = lora.clone();
                *probe.tensors_mut()[j] = x.clone();
                Ok(eval(&probe, false)?.0)
            },
            lora.tensors()[j],
            STEP,
        )?;
        worst = worst.max(max_relative_error(a, &numeric));
        coordinates += a.numel();
    }
    Ok(CheckOutcome {
        name: "dpo_pair_loss".into(),
        instance,
        max_rel_error: worst,
        coordinates,
    })
}

/// Gradients of a weighted sum of the denoiser output with respect to every base weight.
pub fn check_denoiser(seed: u64, instance: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde0 ^ ((instance as u64) << 24));
    let cfg = tiny_config();
    let model = Denoiser::new(cfg.clone(), init_params(rng.gen(), &cfg)?, None)?.cast::<f64>();
    let x = video(&mut rng, &cfg);
    let weight = video(&mut rng, &cfg);
    let t = rng.gen_range(1..=1000);

    let eval = |m: &Denoiser<f64>, grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::<f64>::new();
        let bound = m.bind(&mut g, true, false)?;
        let xv = g.constant(x.clone());
        let y = bound.forward(&mut g, xv, t, 1)?;
        let w = g.constant(weight.clone());
        let yw = g.mul(y, w)?;
        let root = g.sum(yw)?;
        let value = g.scalar(root);
        if !grads {
            return Ok((value, Vec::new()));
        }
        let gr = g.backward(root)?;
        Ok((value, bound.params.all().iter().map(|v| gr.wrt(*v)).collect()))
    };

    let (_, analytic) = eval(&model, true)?;
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (j, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |p| {
                let mut probe = model.clone();
                *probe.params_mut().tensors_mut()[j] = p.clone();
                Ok(eval(&probe, false)?.0)
            },
            model.params().tensors()[j],
            STEP,
        )?;
        worst = worst.max(max_relative_error(a, &numeric));
        coordinates += a.numel();
    }
    Ok(CheckOutcome {
        name: "denoise_forward".into(),
        instance,
        max_rel_error: worst,
        coordinates,
    })
}

/// Every registered primitive and the end-to-end pair loss, `instances` times each.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for prim in registered_primitives() {
        for i in 0..instances {
            out.push(check_primitive(&prim, seed, i)?);
        }
    }
    for i in 0..instances {
        out.push(check_dpo_pair_loss(seed, i)?);
    }
    Ok(out)
}
