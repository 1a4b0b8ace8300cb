//! The noise-prediction network ε_θ(v_t, t, c).
//!
//! Pipeline per call: time and condition embeddings broadcast over frames and
//! pixels, a residual spatial conv block, sparse causal attention over frame
//! tokens, a residual temporal mixing layer, a second spatial block and an
//! output conv back to the latent channel count.

mod attention;
mod embedding;
mod lora;

pub use attention::{partner_frame, sparse_causal_attention, AttentionOutput, AttentionWeights};
pub use embedding::timestep_features;
pub use lora::{lora_effective, lora_effective_weight};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::diffusion::{Denoise, NoisePredictor};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Working channel width inside the network (the attention `d`).
    pub hidden: usize,
    pub heads: usize,
    /// Number of condition ids with a learned embedding row.
    pub categories: usize,
    pub time_dim: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 8,
            channels: 4,
            height: 16,
            width: 16,
            hidden: 8,
            heads: 1,
            categories: 4,
            time_dim: 16,
            lora_rank: 4,
            lora_alpha: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("frames", self.frames),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("categories", self.categories),
            ("time_dim", self.time_dim),
            ("lora_rank", self.lora_rank),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model size {name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::invalid("time_dim must be even"));
        }
        if !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return Err(Error::invalid("lora_alpha must be positive"));
        }
        Ok(())
    }

    pub fn video_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }
}

macro_rules! tensor_set {
    ($(#[$m:meta])* $params:ident, $vars:ident { $($field:ident => $name:literal),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $params<F = f32> {
            $(pub $field: Tensor<F>,)*
        }

        /// Graph handles for each tensor of the matching parameter set.
        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $(pub $field: Var,)*
        }

        impl<F: Scalar> $params<F> {
            pub const NAMES: &'static [&'static str] = &[$($name),*];

            pub fn tensors(&self) -> Vec<&Tensor<F>> {
                vec![$(&self.$field),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
                vec![$(&mut self.$field),*]
            }

            /// Register every tensor as a graph leaf.
            pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> $vars {
                $vars {
                    $($field: if trainable {
                        g.param(self.$field.clone())
                    } else {
                        g.constant(self.$field.clone())
                    },)*
                }
            }

            pub fn cast<G: Scalar>(&self) -> $params<G> {
                $params { $($field: self.$field.cast(),)* }
            }

            /// Build from tensors listed in [`Self::NAMES`] order.
            pub fn from_tensors(tensors: Vec<Tensor<F>>) -> Result<Self> {
                if tensors.len() != Self::NAMES.len() {
                    return Err(Error::invalid(format!(
                        "expected {} tensors, got {}",
                        Self::NAMES.len(),
                        tensors.len()
                    )));
                }
                let mut it = tensors.into_iter();
                Ok($params { $($field: it.next().expect("length checked"),)* })
            }
        }

        impl $vars {
            pub fn all(&self) -> Vec<Var> {
                vec![$(self.$field),*]
            }
        }
    };
}

tensor_set! {
    /// Every learnable weight of the base network.
    DenoiserParams, ParamVars {
        time_proj => "time.proj",
        cond_table => "cond.table",
        block1_conv1 => "block1.conv1",
        block1_conv2 => "block1.conv2",
        attn_q => "attn.q",
        attn_k => "attn.k",
        attn_v => "attn.v",
        attn_o => "attn.o",
        temporal_mix => "temporal.mix",
        block2_conv1 => "block2.conv1",
        block2_conv2 => "block2.conv2",
        out_conv => "out.conv",
    }
}

tensor_set! {
    /// Low-rank factors for the four attention projections.
    LoraParams, LoraVars {
        q_a => "lora.q.a",
        q_b => "lora.q.b",
        k_a => "lora.k.a",
        k_b => "lora.k.b",
        v_a => "lora.v.a",
        v_b => "lora.v.b",
        o_a => "lora.o.a",
        o_b => "lora.o.b",
    }
}

/// Declared shape and fan-in of each base tensor, in [`DenoiserParams::NAMES`] order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(Vec<usize>, usize)> {
    let (c, h, t, f) = (cfg.channels, cfg.hidden, cfg.time_dim, cfg.frames);
    vec![
        (vec![t, h], t),
        (vec![cfg.categories, h], h),
        (vec![h, c, 3, 3], c * 9),
        (vec![h, h, 3, 3], h * 9),
        (vec![h, h], h),
        (vec![h, h], h),
        (vec![h, h], h),
        (vec![h, h], h),
        (vec![f, f], f),
        (vec![h, h, 3, 3], h * 9),
        (vec![h, h, 3, 3], h * 9),
        (vec![c, h, 3, 3], h * 9),
    ]
}

/// Declared shapes of the LoRA factors, in [`LoraParams::NAMES`] order.
pub fn lora_layout(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let (h, r) = (cfg.hidden, cfg.lora_rank);
    (0..4).flat_map(|_| [vec![h, r], vec![r, h]]).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (1.0 / (fan_in as f64).sqrt()) as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Seeded initialization, uniform in ±1/√fan_in per tensor.
pub fn init_params(seed: u64, cfg: &ModelConfig) -> Result<DenoiserParams<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = param_layout(cfg)
        .iter()
        .map(|(shape, fan_in)| uniform(&mut rng, shape, *fan_in))
        .collect();
    DenoiserParams::from_tensors(tensors)
}

/// LoRA factors at initialization: `A` uniform, `B = 0`.
pub fn init_lora(seed: u64, cfg: &ModelConfig) -> Result<LoraParams<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4c6f_5241);
    let tensors = lora_layout(cfg)
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            if i % 2 == 0 {
                uniform(&mut rng, shape, cfg.hidden)
            } else {
                Tensor::zeros(shape)
            }
        })
        .collect();
    LoraParams::from_tensors(tensors)
}

pub(crate) fn check_shapes<F: Scalar>(
    names: &[&str],
    tensors: &[&Tensor<F>],
    shapes: &[Vec<usize>],
) -> Result<()> {
    for ((name, t), shape) in names.iter().zip(tensors).zip(shapes) {
        if t.shape() != shape.as_slice() {
            return Err(Error::invalid(format!(
                "tensor {name} has shape {:?}, architecture declares {shape:?}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::invalid(format!("tensor {name} has non-finite values")));
        }
    }
    Ok(())
}

/// A network with owned weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<F = f32> {
    config: ModelConfig,
    params: DenoiserParams<F>,
    lora: Option<LoraParams<F>>,
}

impl<F: Scalar> Denoiser<F> {
    pub fn new(
        config: ModelConfig,
        params: DenoiserParams<F>,
        lora: Option<LoraParams<F>>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<Vec<usize>> = param_layout(&config).into_iter().map(|(s, _)| s).collect();
        check_shapes(DenoiserParams::<F>::NAMES, &params.tensors(), &shapes)?;
        if let Some(l) = &lora {
            check_shapes(LoraParams::<F>::NAMES, &l.tensors(), &lora_layout(&config))?;
        }
        Ok(Denoiser {
            config,
            params,
            lora,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DenoiserParams<F> {
        &mut self.params
    }

    pub fn lora(&self) -> Option<&LoraParams<F>> {
        self.lora.as_ref()
    }

    pub fn lora_mut(&mut self) -> Option<&mut LoraParams<F>> {
        self.lora.as_mut()
    }

    pub fn with_lora(mut self, lora: Option<LoraParams<F>>) -> Result<Self> {
        if let Some(l) = &lora {
            check_shapes(LoraParams::<F>::NAMES, &l.tensors(), &lora_layout(&self.config))?;
        }
        self.lora = lora;
        Ok(self)
    }

    pub fn cast<G: Scalar>(&self) -> Denoiser<G> {
        Denoiser {
            config: self.config.clone(),
            params: self.params.cast(),
            lora: self.lora.as_ref().map(|l| l.cast()),
        }
    }

    /// Register the weights on `g`. `train_base` and `train_lora` pick which
    /// tensors become gradient-receiving leaves; the rest are constants.
    pub fn bind<'a>(
        &'a self,
        g: &mut Graph<F>,
        train_base: bool,
        train_lora: bool,
    ) -> Result<BoundDenoiser<'a>> {
        let params = self.params.bind(g, train_base);
        let lora = self.lora.as_ref().map(|l| l.bind(g, train_lora));
        BoundDenoiser::new(g, &self.config, params, lora)
    }
}

impl Denoiser<f32> {
    pub fn init(seed: u64, config: ModelConfig) -> Result<Self> {
        let params = init_params(seed, &config)?;
        Denoiser::new(config, params, None)
    }
}

impl NoisePredictor for Denoiser<f32> {
    fn predict(&self, x_t: &Tensor<f32>, t: usize, cond: usize) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let model = self.bind(&mut g, false, false)?;
        let x = g.constant(x_t.clone());
        let y = model.forward(&mut g, x, t, cond)?;
        Ok(g.value(y).clone())
    }
}

/// A [`Denoiser`] whose weights live on a particular graph.
#[derive(Debug)]
pub struct BoundDenoiser<'a> {
    config: &'a ModelConfig,
    pub params: ParamVars,
    pub lora: Option<LoraVars>,
    attention: AttentionWeights,
}

impl<'a> BoundDenoiser<'a> {
    pub fn new<F: Scalar>(
        g: &mut Graph<F>,
        config: &'a ModelConfig,
        params: ParamVars,
        lora: Option<LoraVars>,
    ) -> Result<Self> {
        let attention = match &lora {
            None => AttentionWeights {
                q: params.attn_q,
                k: params.attn_k,
                v: params.attn_v,
                o: params.attn_o,
            },
            Some(l) => {
                let (alpha, r) = (config.lora_alpha, config.lora_rank);
                AttentionWeights {
                    q: lora_effective(g, params.attn_q, l.q_a, l.q_b, alpha, r)?,
                    k: lora_effective(g, params.attn_k, l.k_a, l.k_b, alpha, r)?,
                    v: lora_effective(g, params.attn_v, l.v_a, l.v_b, alpha, r)?,
                    o: lora_effective(g, params.attn_o, l.o_a, l.o_b, alpha, r)?,
                }
            }
        };
        Ok(BoundDenoiser {
            config,
            params,
            lora,
            attention,
        })
    }

    /// `[F, d, H, W]` → `[F, N, d]`
    fn to_tokens<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let (f, d, n) = (self.config.frames, self.config.hidden, self.config.tokens());
        let x = g.reshape(x, &[f, d * n])?;
        let frames = (0..f)
            .map(|i| {
                let fr = g.slice(x, 0, i, 1)?;
                let fr = g.reshape(fr, &[d, n])?;
                g.transpose(fr)
            })
            .collect::<Result<Vec<_>>>()?;
        let all = g.concat(&frames, 0)?;
        g.reshape(all, &[f, n, d])
    }

    /// `[F, N, d]` → `[F, d, H, W]`
    fn from_tokens<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let c = self.config;
        let (f, d, n) = (c.frames, c.hidden, c.tokens());
        let x = g.reshape(x, &[f * n, d])?;
        let frames = (0..f)
            .map(|i| {
                let fr = g.slice(x, 0, i * n, n)?;
                let fr = g.transpose(fr)?;
                g.reshape(fr, &[1, d * n])
            })
            .collect::<Result<Vec<_>>>()?;
        let all = g.concat(&frames, 0)?;
        g.reshape(all, &[f, d, c.height, c.width])
    }

    /// Time + condition embedding broadcast to `[F, d, H, W]`.
    fn embedding_map<F: Scalar>(&self, g: &mut Graph<F>, t: usize, cond: usize) -> Result<Var> {
        let c = self.config;
        let (f, d, n) = (c.frames, c.hidden, c.tokens());
        let feats = g.constant(timestep_features(t, c.time_dim));
        let te = g.matmul(feats, self.params.time_proj)?;
        let ce = g.slice(self.params.cond_table, 0, cond, 1)?;
        let e = g.add(te, ce)?;
        let col = g.reshape(e, &[d, 1])?;
        let ones_n = g.constant(Tensor::ones(&[1, n]));
        let plane = g.matmul(col, ones_n)?;
        let row = g.reshape(plane, &[1, d * n])?;
        let ones_f = g.constant(Tensor::ones(&[f, 1]));
        let all = g.matmul(ones_f, row)?;
        g.reshape(all, &[f, d, c.height, c.width])
    }

    fn spatial_residual<F: Scalar>(&self, g: &mut Graph<F>, x: Var, w1: Var, w2: Var) -> Result<Var> {
        let h = g.conv2d(x, w1)?;
        let h = g.silu(h)?;
        let h = g.conv2d(h, w2)?;
        g.add(x, h)
    }

    fn temporal_mix<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let f = shape[0];
        let flat = g.reshape(x, &[f, shape[1..].iter().product()])?;
        let mixed = g.matmul(self.params.temporal_mix, flat)?;
        let mixed = g.reshape(mixed, &shape)?;
        g.add(x, mixed)
    }

    pub fn attention_weights(&self) -> &AttentionWeights {
        &self.attention
    }
}

impl<F: Scalar> Denoise<F> for BoundDenoiser<'_> {
    fn forward(&self, g: &mut Graph<F>, x_t: Var, t: usize, cond: usize) -> Result<Var> {
        let c = self.config;
        if g.shape(x_t) != c.video_shape() {
            return Err(Error::Shape {
                op: "denoise_forward",
                lhs: g.shape(x_t).to_vec(),
                rhs: c.video_shape().to_vec(),
            });
        }
        if cond >= c.categories {
            return Err(Error::invalid(format!(
                "unknown condition id {cond} (model has {} categories)",
                c.categories
            )));
        }
        let p = &self.params;
        let emb = self.embedding_map(g, t, cond)?;
        let h = g.conv2d(x_t, p.block1_conv1)?;
        let h = g.add(h, emb)?;
        let a = g.silu(h)?;
        let a = g.conv2d(a, p.block1_conv2)?;
        let h = g.add(h, a)?;
        let tokens = self.to_tokens(g, h)?;
        let attn = sparse_causal_attention(g, tokens, &self.attention, c.heads)?;
        let h = self.from_tokens(g, attn.output)?;
        let h = self.temporal_mix(g, h)?;
        let h = self.spatial_residual(g, h, p.block2_conv1, p.block2_conv2)?;
        let h = g.silu(h)?;
        g.conv2d(h, p.out_conv)
    }
}
