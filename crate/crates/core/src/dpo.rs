//! Preference-optimization objectives.
//!
//! Scalar forms (Bradley-Terry probability, implicit reward, closed-form
//! optimal policy, image and video DPO losses) are plain `f64` functions.
//! The two trainable forms, [`policy_dpo_loss`] and [`dpo_pair_loss`], are
//! recorded on a [`Graph`] so their gradients come from the autodiff engine.

use crate::autodiff::{Graph, Var};
use crate::diffusion::{noise_error, q_sample, Denoise, FrameMask, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without cancellation for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// P(winner ≻ loser) = exp(r_w) / (exp(r_w) + exp(r_l)) = σ(r_w − r_l).
pub fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Probability vectors over responses, one row per context.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPolicy {
    rows: Vec<Vec<f64>>,
}

impl CategoricalPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if width == 0 {
            return Err(Error::invalid("policy needs at least one context and response"));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "context {x} has {} responses, expected {width}",
                    row.len()
                )));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "context {x} is not a probability vector (sum {total})"
                )));
            }
        }
        Ok(CategoricalPolicy { rows })
    }

    pub fn uniform(contexts: usize, responses: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / responses as f64; responses]; contexts])
    }

    /// Row-wise softmax of `logits[x][y]`.
    pub fn from_logits(logits: &[Vec<f64>]) -> Result<Self> {
        let rows = logits
            .iter()
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn responses(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    /// Natural-log probabilities as a `[contexts, responses]` tensor.
    pub fn log_probs<F: Scalar>(&self) -> Result<Tensor<F>> {
        if let Some(p) = self.rows.iter().flatten().find(|p| **p <= 0.0) {
            return Err(Error::domain("policy", format!("zero probability {p}")));
        }
        let flat: Vec<f64> = self.rows.iter().flatten().map(|p| p.ln()).collect();
        Tensor::from_f64(&[self.contexts(), self.responses()], &flat)
    }
}

/// One labelled comparison `(x, y_w, y_l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreferenceSample {
    pub context: usize,
    pub winner: usize,
    pub loser: usize,
}

impl PreferenceSample {
    pub fn new(context: usize, winner: usize, loser: usize) -> Result<Self> {
        if winner == loser {
            return Err(Error::invalid(format!(
                "winner and loser are both response {winner}"
            )));
        }
        Ok(PreferenceSample {
            context,
            winner,
            loser,
        })
    }

    fn check(&self, policy: &CategoricalPolicy) -> Result<()> {
        if self.context >= policy.contexts()
            || self.winner >= policy.responses()
            || self.loser >= policy.responses()
        {
            return Err(Error::invalid(format!(
                "sample {self:?} out of range for a {}×{} policy",
                policy.contexts(),
                policy.responses()
            )));
        }
        Ok(())
    }
}

/// r(x, y) = β·ln(π(y|x) / π_ref(y|x)).
pub fn implicit_reward(
    pi: &CategoricalPolicy,
    pi_ref: &CategoricalPolicy,
    x: usize,
    y: usize,
    beta: f64,
) -> Result<f64> {
    let (p, q) = (pi.prob(x, y), pi_ref.prob(x, y));
    if p <= 0.0 || q <= 0.0 {
        return Err(Error::domain(
            "implicit_reward",
            format!("zero probability for context {x}, response {y}"),
        ));
    }
    Ok(beta * (p / q).ln())
}

/// Mean of −ln σ(β·ln π(y_w)/π_ref(y_w) − β·ln π(y_l)/π_ref(y_l)) with
/// π = softmax(`logits`) row-wise; `logits` is `[contexts, responses]`.
pub fn policy_dpo_loss<F: Scalar>(
    g: &mut Graph<F>,
    logits: Var,
    pi_ref: &CategoricalPolicy,
    samples: &[PreferenceSample],
    beta: f64,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::invalid("policy_dpo_loss needs at least one sample"));
    }
    if g.shape(logits) != [pi_ref.contexts(), pi_ref.responses()] {
        return Err(Error::Shape {
            op: "policy_dpo_loss",
            lhs: g.shape(logits).to_vec(),
            rhs: vec![pi_ref.contexts(), pi_ref.responses()],
        });
    }
    let ref_logp = pi_ref.log_probs::<f64>()?;
    let probs = g.softmax(logits)?;
    let logp = g.ln(probs)?;
    let responses = pi_ref.responses();
    let mut terms = Vec::with_capacity(samples.len());
    for s in samples {
        s.check(pi_ref)?;
        let row = g.slice(logp, 0, s.context, 1)?;
        let lw = g.slice(row, 1, s.winner, 1)?;
        let ll = g.slice(row, 1, s.loser, 1)?;
        let diff = g.sub(lw, ll)?;
        let scaled = g.scale(diff, beta)?;
        let r = ref_logp.data();
        let offset =
            beta * (r[s.context * responses + s.loser] - r[s.context * responses + s.winner]);
        let offset = g.constant(Tensor::from_f64(&[1, 1], &[offset])?);
        let arg = g.add(scaled, offset)?;
        let ls = g.log_sigmoid(arg)?;
        terms.push(g.neg(ls)?);
    }
    let all = g.concat(&terms, 0)?;
    g.mean(all)
}

/// [`policy_dpo_loss`] evaluated for explicit probability tables.
pub fn policy_dpo_loss_value(
    pi: &CategoricalPolicy,
    pi_ref: &CategoricalPolicy,
    samples: &[PreferenceSample],
    beta: f64,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let logits = g.constant(pi.log_probs()?);
    let loss = policy_dpo_loss(&mut g, logits, pi_ref, samples, beta)?;
    Ok(g.scalar(loss))
}

/// π*(y|x) = π_ref(y|x)·exp(r(x,y)/β) / Z(x).
pub fn optimal_policy(
    pi_ref: &CategoricalPolicy,
    rewards: &[Vec<f64>],
    beta: f64,
) -> Result<CategoricalPolicy> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if rewards.len() != pi_ref.contexts() || rewards.iter().any(|r| r.len() != pi_ref.responses())
    {
        return Err(Error::invalid("reward table does not match the policy shape"));
    }
    let rows = rewards
        .iter()
        .enumerate()
        .map(|(x, r)| {
            // subtracting the max reward cancels in Z and keeps exp() in range
            let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = r
                .iter()
                .zip(pi_ref.row(x))
                .map(|(rv, p)| p * ((rv - top) / beta).exp())
                .collect();
            let z: f64 = unnorm.iter().sum();
            unnorm.into_iter().map(|u| u / z).collect()
        })
        .collect();
    CategoricalPolicy::new(rows)
}

/// −ln σ(β·(Δ_w − Δ_l)) with Δ = ln p_θ/p_ref.
pub fn image_dpo_loss(delta_w: f64, delta_l: f64, beta: f64) -> f64 {
    -log_sigmoid(beta * (delta_w - delta_l))
}

/// The four squared noise-prediction errors of one preference pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseErrorQuad {
    pub winner_theta: f64,
    pub winner_ref: f64,
    pub loser_theta: f64,
    pub loser_ref: f64,
}

impl NoiseErrorQuad {
    pub fn new(winner_theta: f64, winner_ref: f64, loser_theta: f64, loser_ref: f64) -> Result<Self> {
        let q = NoiseErrorQuad {
            winner_theta,
            winner_ref,
            loser_theta,
            loser_ref,
        };
        let all = [winner_theta, winner_ref, loser_theta, loser_ref];
        if all.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::invalid(format!(
                "noise errors must be finite and non-negative: {q:?}"
            )));
        }
        Ok(q)
    }

    /// m = −β·[(e_wθ − e_wref) − (e_lθ − e_lref)]; positive when θ fits the
    /// winner better than the reference does, relative to the loser.
    pub fn margin(&self, beta: f64) -> f64 {
        -beta * ((self.winner_theta - self.winner_ref) - (self.loser_theta - self.loser_ref))
    }
}

/// −ln σ(m) for the quad's implicit-reward margin m.
pub fn video_dpo_loss_terms(q: &NoiseErrorQuad, beta: f64) -> f64 {
    -log_sigmoid(q.margin(beta))
}

/// A recorded pair loss with its ingredients.
#[derive(Debug)]
pub struct PairLoss {
    pub loss: Var,
    pub margin: f64,
    pub quad: NoiseErrorQuad,
}

/// Inputs of one preference pair at a sampled timestep.
#[derive(Debug)]
pub struct PairSample<'a, F> {
    pub winner: &'a Tensor<F>,
    pub loser: &'a Tensor<F>,
    pub eps_winner: &'a Tensor<F>,
    pub eps_loser: &'a Tensor<F>,
    pub t: usize,
    pub cond: usize,
}

/// Video DPO loss for one pair. Both videos are noised at the same `t`, each
/// with its own ε; squared errors cover noised frames only. The reference
/// model must be bound with frozen (constant) weights.
pub fn dpo_pair_loss<F: Scalar, T: Denoise<F> + ?Sized, R: Denoise<F> + ?Sized>(
    g: &mut Graph<F>,
    theta: &T,
    reference: &R,
    pair: &PairSample<'_, F>,
    schedule: &NoiseSchedule,
    mask: &FrameMask,
    beta: f64,
) -> Result<PairLoss> {
    if pair.winner.shape() != pair.loser.shape() {
        return Err(Error::Shape {
            op: "dpo_pair_loss",
            lhs: pair.winner.shape().to_vec(),
            rhs: pair.loser.shape().to_vec(),
        });
    }
    let xw = q_sample(pair.winner, pair.t, pair.eps_winner, schedule, mask)?;
    let xl = q_sample(pair.loser, pair.t, pair.eps_loser, schedule, mask)?;
    let (t, c) = (pair.t, pair.cond);

    let ew_ref = noise_error(g, reference, &xw, t, pair.eps_winner, c, mask, false)?;
    let el_ref = noise_error(g, reference, &xl, t, pair.eps_loser, c, mask, false)?;
    if g.requires_grad(ew_ref) || g.requires_grad(el_ref) {
        return Err(Error::invalid(
            "reference model has trainable weights; bind it frozen",
        ));
    }
    let ew = noise_error(g, theta, &xw, t, pair.eps_winner, c, mask, false)?;
    let el = noise_error(g, theta, &xl, t, pair.eps_loser, c, mask, false)?;

    let quad = NoiseErrorQuad::new(g.scalar(ew), g.scalar(ew_ref), g.scalar(el), g.scalar(el_ref))?;

    // m = −β·[(e_wθ − e_wref) − (e_lθ − e_lref)]; both differences are
    // exactly zero when θ and the reference coincide
    let dw = g.sub(ew, ew_ref)?;
    let dl = g.sub(el, el_ref)?;
    let d = g.sub(dw, dl)?;
    let m = g.scale(d, -beta)?;
    let ls = g.log_sigmoid(m)?;
    let loss = g.neg(ls)?;
    Ok(PairLoss {
        loss,
        margin: quad.margin(beta),
        quad,
    })
}
