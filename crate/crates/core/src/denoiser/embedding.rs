use crate::tensor::{Scalar, Tensor};

/// Fixed sinusoidal features of a timestep: `[sin(t·ω_k)…, cos(t·ω_k)…]`,
/// ω_k = 10000^(−k/half). Shape `[1, dim]`.
pub fn timestep_features<F: Scalar>(t: usize, dim: usize) -> Tensor<F> {
    let half = dim / 2;
    let t = t as f64;
    Tensor::from_fn(&[1, dim], |i| {
        let k = i % half;
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        let v = if i < half { (t * freq).sin() } else { (t * freq).cos() };
        F::of(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a: Tensor<f32> = timestep_features(17, 8);
        assert_eq!(a, timestep_features(17, 8));
        assert_ne!(a, timestep_features(18, 8));
        // t = 0: sines vanish, cosines are one
        let z: Tensor<f64> = timestep_features(0, 8);
        assert_eq!(z.data(), &[0., 0., 0., 0., 1., 1., 1., 1.]);
    }
}
