use crate::tensor::{Tensor, TensorError};

/// Largest `f32` strictly below 1. Saturated outputs are clamped here so the
/// range stays open and `1 - y^2` never vanishes exactly.
pub const TANH_LIMIT: f32 = 1.0 - f32::EPSILON / 2.0;

/// Elementwise hyperbolic tangent, evaluated in f64.
pub fn tanh_activation(input: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&z| ((z as f64).tanh() as f32).clamp(-TANH_LIMIT, TANH_LIMIT))
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// `upstream * (1 - output^2)`, using the forward output.
pub fn tanh_grad(output: &Tensor, upstream: &Tensor) -> Result<Tensor, TensorError> {
    upstream.expect_shape("tanh_grad upstream", output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| (g as f64 * (1.0 - y as f64 * y as f64)) as f32)
        .collect();
    Tensor::new(output.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use proptest::prelude::*;

    fn scalar(z: f32) -> f32 {
        tanh_activation(&Tensor::new([1], vec![z]).unwrap()).data()[0]
    }

    #[test]
    fn known_values() {
        assert_eq!(scalar(0.0), 0.0);
        // (e - 1/e) / (e + 1/e)
        let e = std::f64::consts::E;
        let direct = (e - 1.0 / e) / (e + 1.0 / e);
        assert!((direct - 0.7615941559).abs() < 1e-10);
        assert!((scalar(1.0) as f64 - direct).abs() < 1e-7);
    }

    #[test]
    fn saturates_without_overflow() {
        for z in [50.0f32, 1e4, f32::MAX] {
            assert_eq!(scalar(z), TANH_LIMIT);
            assert_eq!(scalar(-z), -TANH_LIMIT);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = Tensor::from_fn([3, 4], |i| (i as f32 - 6.0) * 0.37);
        let up = Tensor::from_fn([3, 4], |i| ((i * 7 % 5) as f32 - 2.0) * 0.5);
        let out = tanh_activation(&x);
        let g = tanh_grad(&out, &up).unwrap();
        let num = numeric_gradient(
            |t| {
                tanh_activation(t)
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum()
            },
            &x,
            1e-3,
        );
        assert!(relative_error(&g, &num) < 1e-4);
    }

    proptest! {
        #[test]
        fn odd_bounded_monotone(z in -30.0f32..30.0, dz in 0.0f32..5.0) {
            let y = scalar(z);
            prop_assert!(y > -1.0 && y < 1.0);
            prop_assert_eq!(scalar(-z), -y);
            prop_assert!(scalar(z + dz) >= y);
        }
    }
}
