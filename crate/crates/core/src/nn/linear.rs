use crate::tensor::{Tensor, TensorError};

use super::LayerGrads;

/// Fully-connected layer, weights `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl FcParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self, TensorError> {
        weights.expect_rank("fc weights", 2)?;
        bias.expect_shape("fc bias", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn check_input(input: &Tensor, params: &FcParams, op: &'static str) -> Result<(), TensorError> {
    if input.len() != params.in_dim() {
        return Err(TensorError::DimensionMismatch {
            op,
            what: "input length",
            expected: params.in_dim(),
            actual: input.len(),
        });
    }
    Ok(())
}

/// `weights * input + bias`. The input may have any shape; it is read flat.
pub fn fully_connected(input: &Tensor, params: &FcParams) -> Result<Tensor, TensorError> {
    check_input(input, params, "fully_connected")?;
    let x = input.data();
    let out = params
        .weights
        .data()
        .chunks_exact(params.in_dim())
        .zip(params.bias.data())
        .map(|(row, &b)| {
            let dot: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
            (dot + b as f64) as f32
        })
        .collect();
    Tensor::new([params.out_dim()], out)
}

pub fn fc_grad(
    input: &Tensor,
    params: &FcParams,
    upstream: &Tensor,
) -> Result<LayerGrads, TensorError> {
    check_input(input, params, "fc_grad")?;
    if upstream.len() != params.out_dim() {
        return Err(TensorError::DimensionMismatch {
            op: "fc_grad",
            what: "upstream length",
            expected: params.out_dim(),
            actual: upstream.len(),
        });
    }
    let (x, up) = (input.data(), upstream.data());
    let in_dim = params.in_dim();

    let mut d_weights = Vec::with_capacity(params.weights.len());
    for &g in up {
        d_weights.extend(x.iter().map(|&v| (g as f64 * v as f64) as f32));
    }

    let mut d_input = vec![0.0f64; in_dim];
    for (row, &g) in params.weights.data().chunks_exact(in_dim).zip(up) {
        for (d, &w) in d_input.iter_mut().zip(row) {
            *d += g as f64 * w as f64;
        }
    }

    Ok(LayerGrads {
        d_weights: Tensor::new(params.weights.shape(), d_weights)?,
        d_bias: upstream.clone().reshape([params.out_dim()])?,
        d_input: Tensor::new(
            input.shape(),
            d_input.into_iter().map(|v| v as f32).collect(),
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_examples() {
        let p = FcParams::new(
            Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::zeros([2]),
        )
        .unwrap();
        let out = fully_connected(&Tensor::new([2], vec![1.0, 1.0]).unwrap(), &p).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);

        let id = FcParams::new(
            Tensor::from_fn([3, 3], |i| (i % 4 == 0) as u8 as f32),
            Tensor::zeros([3]),
        )
        .unwrap();
        let x = Tensor::new([3], vec![0.5, -2.0, 9.0]).unwrap();
        assert_eq!(fully_connected(&x, &id).unwrap(), x);

        let bias = Tensor::new([2], vec![0.25, -3.0]).unwrap();
        let zero = FcParams::new(Tensor::zeros([2, 3]), bias.clone()).unwrap();
        assert_eq!(fully_connected(&x, &zero).unwrap(), bias);
    }

    #[test]
    fn dimension_mismatch() {
        let p = FcParams::new(Tensor::zeros([2, 3]), Tensor::zeros([2])).unwrap();
        let err = fully_connected(&Tensor::zeros([4]), &p).unwrap_err();
        assert!(matches!(
            err,
            TensorError::DimensionMismatch {
                expected: 3,
                actual: 4,
                ..
            }
        ));
        assert!(FcParams::new(Tensor::zeros([2, 3]), Tensor::zeros([3])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand =
                |shape: &[usize]| Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0));
            let p = FcParams::new(rand(&[4, 6]), rand(&[4])).unwrap();
            let x = rand(&[2, 3]);
            let up = rand(&[4]);
            let obj = |x: &Tensor, p: &FcParams| -> f64 {
                fully_connected(x, p)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum()
            };
            let g = fc_grad(&x, &p, &up).unwrap();
            assert_eq!(g.d_input.shape(), x.shape());
            assert!(relative_error(&g.d_input, &numeric_gradient(|t| obj(t, &p), &x, 1e-3)) < 1e-4);
            let nw = numeric_gradient(
                |w| {
                    obj(
                        &x,
                        &FcParams {
                            weights: w.clone(),
                            ..p.clone()
                        },
                    )
                },
                &p.weights,
                1e-3,
            );
            assert!(relative_error(&g.d_weights, &nw) < 1e-4);
            let nb = numeric_gradient(
                |b| {
                    obj(
                        &x,
                        &FcParams {
                            bias: b.clone(),
                            ..p.clone()
                        },
                    )
                },
                &p.bias,
                1e-3,
            );
            assert!(relative_error(&g.d_bias, &nb) < 1e-4);
        }
    }
}
