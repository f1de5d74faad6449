use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function.
///
/// The quotient uses the step actually realised in `f32`
/// (`fl(x + eps) - fl(x - eps)`) rather than the nominal `2 * eps`.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, eps: f32) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let (hi, lo) = (orig + eps, orig - eps);
        probe.data_mut()[i] = hi;
        let f_hi = f(&probe);
        probe.data_mut()[i] = lo;
        let f_lo = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push(((f_hi - f_lo) / (hi as f64 - lo as f64)) as f32);
    }
    Tensor::new(x.shape(), grad).expect("shape preserved")
}

/// `max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|)`, or 0 when both are zero.
///
/// Normalising by the largest magnitude keeps near-zero entries from
/// dominating the comparison.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = analytic.max_abs().max(numeric.max_abs()) as f64;
    if scale == 0.0 {
        return 0.0;
    }
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .fold(0.0, f64::max);
    diff / scale
}
