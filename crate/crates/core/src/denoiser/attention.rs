//! Sparse causal attention across frames.
//!
//! Queries of frame `i` attend to the keys and values of frame 0 and frame
//! `i − 1`, concatenated along the token axis. Frame 0 has no predecessor and
//! attends to its own keys and values twice, which keeps every frame's key set
//! at `2N` rows and is equivalent to plain self-attention on frame 0.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Effective (LoRA-merged) projection matrices, each `[d, d]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub o: Var,
}

#[derive(Debug)]
pub struct AttentionOutput {
    /// `tokens + mixed · W_O`, shape `[F, N, d]`.
    pub output: Var,
    /// Attention-weighted values before the output projection, `[F·N, d]`.
    pub mixed: Var,
    /// Attention weights per frame and head, each `[N, 2N]`.
    pub weights: Vec<Vec<Var>>,
}

/// Frame whose keys and values frame `i` reads besides frame 0.
pub fn partner_frame(i: usize) -> usize {
    i.saturating_sub(1)
}

/// `tokens` is `[F, N, d]`; `d` must be divisible by `heads`.
pub fn sparse_causal_attention<F: Scalar>(
    g: &mut Graph<F>,
    tokens: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<AttentionOutput> {
    let shape = g.shape(tokens).to_vec();
    if shape.len() != 3 {
        return Err(Error::domain(
            "sparse_causal_attention",
            format!("expected [frames, tokens, channels], got {shape:?}"),
        ));
    }
    let (frames, n, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::domain(
            "sparse_causal_attention",
            format!("{d} channels not divisible by {heads} heads"),
        ));
    }
    for m in [w.q, w.k, w.v, w.o] {
        if g.shape(m) != [d, d] {
            return Err(Error::Shape {
                op: "sparse_causal_attention",
                lhs: shape.clone(),
                rhs: g.shape(m).to_vec(),
            });
        }
    }
    let dk = d / heads;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();

    let flat = g.reshape(tokens, &[frames * n, d])?;
    let q = g.matmul(flat, w.q)?;
    let k = g.matmul(flat, w.k)?;
    let v = g.matmul(flat, w.v)?;

    let frame_rows = |g: &mut Graph<F>, m: Var, f: usize| g.slice(m, 0, f * n, n);
    let k_frames = (0..frames)
        .map(|f| frame_rows(g, k, f))
        .collect::<Result<Vec<_>>>()?;
    let v_frames = (0..frames)
        .map(|f| frame_rows(g, v, f))
        .collect::<Result<Vec<_>>>()?;

    let mut mixed_frames = Vec::with_capacity(frames);
    let mut weights = Vec::with_capacity(frames);
    for i in 0..frames {
        let j = partner_frame(i);
        let qi = frame_rows(g, q, i)?;
        let kc = g.concat(&[k_frames[0], k_frames[j]], 0)?;
        let vc = g.concat(&[v_frames[0], v_frames[j]], 0)?;
        let mut head_out = Vec::with_capacity(heads);
        let mut head_w = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (qi, kc, vc)
            } else {
                (
                    g.slice(qi, 1, h * dk, dk)?,
                    g.slice(kc, 1, h * dk, dk)?,
                    g.slice(vc, 1, h * dk, dk)?,
                )
            };
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, inv_sqrt)?;
            let p = g.softmax(logits)?;
            head_out.push(g.matmul(p, vh)?);
            head_w.push(p);
        }
        let mi = if heads == 1 {
            head_out[0]
        } else {
            g.concat(&head_out, 1)?
        };
        mixed_frames.push(mi);
        weights.push(head_w);
    }
    let mixed = g.concat(&mixed_frames, 0)?;
    let proj = g.matmul(mixed, w.o)?;
    let out = g.add(flat, proj)?;
    let output = g.reshape(out, &[frames, n, d])?;
    Ok(AttentionOutput {
        output,
        mixed,
        weights,
    })
}
