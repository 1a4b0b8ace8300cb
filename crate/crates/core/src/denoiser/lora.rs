use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `W + (α/r)·A·B` for a `d×r` factor `A` and an `r×d` factor `B`.
pub fn lora_effective_weight<F: Scalar>(
    w: &Tensor<F>,
    a: &Tensor<F>,
    b: &Tensor<F>,
    alpha: f64,
    rank: usize,
) -> Result<Tensor<F>> {
    check_factors(w.shape(), a.shape(), b.shape(), rank)?;
    let s = F::of(alpha / rank as f64);
    let delta = a.matmul(b)?;
    w.zip_map(&delta, "lora", |wv, dv| wv + s * dv)
}

pub(crate) fn check_factors(w: &[usize], a: &[usize], b: &[usize], rank: usize) -> Result<()> {
    if a.len() != 2 || b.len() != 2 || a[1] != rank || b[0] != rank {
        return Err(Error::domain(
            "lora",
            format!("rank mismatch: A {a:?}, B {b:?}, declared rank {rank}"),
        ));
    }
    if w.len() != 2 || a[0] != w[0] || b[1] != w[1] {
        return Err(Error::Shape {
            op: "lora",
            lhs: w.to_vec(),
            rhs: vec![a[0], b[1]],
        });
    }
    Ok(())
}

/// Graph form of [`lora_effective_weight`].
pub fn lora_effective<F: Scalar>(
    g: &mut Graph<F>,
    w: Var,
    a: Var,
    b: Var,
    alpha: f64,
    rank: usize,
) -> Result<Var> {
    check_factors(g.shape(w), g.shape(a), g.shape(b), rank)?;
    let ab = g.matmul(a, b)?;
    let delta = g.scale(ab, alpha / rank as f64)?;
    g.add(w, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[r, c], data).unwrap()
    }

    #[test]
    fn zero_b_returns_w_exactly() {
        let w = Tensor::<f32>::from_fn(&[3, 3], |i| i as f32 * 0.37 - 1.0);
        let a = Tensor::from_fn(&[3, 2], |i| i as f32 + 0.5);
        let b = Tensor::zeros(&[2, 3]);
        assert_eq!(lora_effective_weight(&w, &a, &b, 4.0, 2).unwrap(), w);
        assert_eq!(lora_effective_weight(&w, &b.transpose2().unwrap(), &a.transpose2().unwrap(), 4.0, 2).unwrap(), w);
    }

    #[test]
    fn outer_product_places_single_entry() {
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let a = mat(2, 1, &[1.0, 0.0]);
        let b = mat(1, 2, &[0.0, 1.0]);
        let out = lora_effective_weight(&w, &a, &b, 1.0, 1).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rank_mismatch_fails() {
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[1, 2]);
        let err = lora_effective_weight(&w, &a, &b, 1.0, 2).unwrap_err();
        assert!(err.to_string().contains("rank mismatch"), "{err}");
    }
}
