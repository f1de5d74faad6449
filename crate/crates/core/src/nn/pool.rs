use crate::tensor::{Tensor, TensorError};

/// Winning input position (flat index into the `[c, h, w]` input) for every
/// pooled output.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxRecord {
    input_shape: Vec<usize>,
    winners: Vec<usize>,
}

impl ArgmaxRecord {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// 2x2, stride-2 max-pooling of a `[c, h, w]` tensor.
///
/// Odd trailing rows/columns are treated as padded with -inf, so every
/// window's winner is a real input. Ties go to the lowest row-major index.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, ArgmaxRecord), TensorError> {
    input.expect_rank("maxpool2x2 input", 3)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut winners = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (y, x) = (2 * oy + dy, 2 * ox + dx);
                    if y < h && x < w {
                        let idx = base + y * w + x;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                winners.push(best);
            }
        }
    }
    Ok((
        Tensor::new([c, oh, ow], out)?,
        ArgmaxRecord {
            input_shape: input.shape().to_vec(),
            winners,
        },
    ))
}

/// Routes each upstream value to the input position that won its window.
pub fn maxpool2x2_grad(record: &ArgmaxRecord, upstream: &Tensor) -> Result<Tensor, TensorError> {
    if upstream.len() != record.winners.len() {
        return Err(TensorError::DimensionMismatch {
            op: "maxpool2x2_grad",
            what: "upstream length",
            expected: record.winners.len(),
            actual: upstream.len(),
        });
    }
    let mut d = Tensor::zeros(record.input_shape.clone());
    let dd = d.data_mut();
    for (&idx, &g) in record.winners.iter().zip(upstream.data()) {
        dd[idx] += g;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window() {
        let t = Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, rec) = maxpool2x2(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(rec.winners(), &[3]);
    }

    #[test]
    fn constant_input_and_ties() {
        let t = Tensor::filled([2, 4, 4], 3.5);
        let (out, rec) = maxpool2x2(&t).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.5));
        // ties resolve to the window's top-left element
        assert_eq!(&rec.winners()[..2], &[0, 2]);
    }

    #[test]
    fn distinct_4x4_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vals: Vec<f32> = (0..16).map(|v| v as f32).collect();
        vals.shuffle(&mut rng);
        let t = Tensor::new([1, 4, 4], vals.clone()).unwrap();
        let (out, rec) = maxpool2x2(&t).unwrap();
        for wy in 0..2 {
            for wx in 0..2 {
                let mut m = f32::MIN;
                for y in 2 * wy..2 * wy + 2 {
                    for x in 2 * wx..2 * wx + 2 {
                        m = m.max(vals[y * 4 + x]);
                    }
                }
                assert_eq!(out.data()[wy * 2 + wx], m);
            }
        }
        let up = Tensor::from_fn([1, 2, 2], |i| (i + 1) as f32 * 10.0);
        let d = maxpool2x2_grad(&rec, &up).unwrap();
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 4);
        for (w, g) in rec.winners().iter().zip(up.data()) {
            assert_eq!(d.data()[*w], *g);
            assert_eq!(
                vals[*w],
                out.data()[up.data().iter().position(|v| v == g).unwrap()]
            );
        }
    }

    #[test]
    fn odd_dims_ignore_padding() {
        let t = Tensor::from_fn([1, 3, 3], |i| -(i as f32) - 1.0);
        let (out, rec) = maxpool2x2(&t).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[-1.0, -3.0, -7.0, -9.0]);
        assert_eq!(rec.winners(), &[0, 2, 6, 8]);
    }

    #[test]
    fn backward_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Tensor::from_fn([3, 6, 5], |_| rng.gen_range(-1.0..1.0));
        let (out, rec) = maxpool2x2(&t).unwrap();
        let up = Tensor::from_fn(out.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
        let d = maxpool2x2_grad(&rec, &up).unwrap();
        let sum_d: f64 = d.data().iter().map(|v| v.abs() as f64).sum();
        let sum_u: f64 = up.data().iter().map(|v| v.abs() as f64).sum();
        assert!((sum_d - sum_u).abs() < 1e-5);
        assert!(maxpool2x2_grad(&rec, &Tensor::zeros([1])).is_err());
    }
}
