use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    conv2d, conv2d_grad, fc_grad, fully_connected, maxpool2x2, maxpool2x2_grad, tanh_activation,
    tanh_grad, ArgmaxRecord, ConvParams, FcParams,
};
use crate::par;
use crate::tensor::{Tensor, TensorError};

use super::loss::{row_loss_and_grad, LossKind};
use super::{ModelError, NetworkSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvParams),
    Fc(FcParams),
}

impl LayerParams {
    pub fn weights(&self) -> &Tensor {
        match self {
            LayerParams::Conv(p) => &p.weights,
            LayerParams::Fc(p) => &p.weights,
        }
    }

    pub fn bias(&self) -> &Tensor {
        match self {
            LayerParams::Conv(p) => &p.bias,
            LayerParams::Fc(p) => &p.bias,
        }
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        match self {
            LayerParams::Conv(p) => &mut p.weights,
            LayerParams::Fc(p) => &mut p.weights,
        }
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        match self {
            LayerParams::Conv(p) => &mut p.bias,
            LayerParams::Fc(p) => &mut p.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: String,
    pub params: LayerParams,
}

/// Learned parameters in forward order, together with the spec that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Expected `(id, weight shape)` per layer, in forward order.
pub(crate) fn layer_layout(spec: &NetworkSpec) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut in_ch = 1;
    for (i, g) in spec.groups.iter().enumerate() {
        let k = g.kernel_size;
        out.push((
            format!("group{}.conv1", i + 1),
            vec![g.channels_conv1, in_ch, k, k],
            true,
        ));
        out.push((
            format!("group{}.conv2", i + 1),
            vec![g.channels_conv2, g.channels_conv1, k, k],
            true,
        ));
        in_ch = g.channels_conv2;
    }
    out.push((
        "fc_hidden".into(),
        vec![spec.fc_hidden, spec.flat_features()],
        false,
    ));
    out.push((
        "fc_out".into(),
        vec![spec.output_dim(), spec.fc_hidden],
        false,
    ));
    out
}

impl WeightStore {
    /// Assembles a store from explicit tensors, checking them against `spec`.
    pub fn from_parts(
        spec: NetworkSpec,
        params: Vec<(String, Tensor, Tensor)>,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let layout = layer_layout(&spec);
        if params.len() != layout.len() {
            return Err(ModelError::InvalidSpec(vec![format!(
                "expected {} layers, got {}",
                layout.len(),
                params.len()
            )]));
        }
        let mut layers = Vec::with_capacity(layout.len());
        let mut conv_index = 0;
        for ((id, shape, is_conv), (pid, w, b)) in layout.into_iter().zip(params) {
            if id != pid {
                return Err(ModelError::InvalidSpec(vec![format!(
                    "expected layer {id}, got {pid}"
                )]));
            }
            w.expect_shape("layer weights", &shape)?;
            let params = if is_conv {
                let pad = spec.groups[conv_index / 2].padding();
                conv_index += 1;
                LayerParams::Conv(ConvParams::new(w, b, 1, pad)?)
            } else {
                LayerParams::Fc(FcParams::new(w, b)?)
            };
            layers.push(Layer { id, params });
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.params.weights().len() + l.params.bias().len())
            .sum()
    }

    /// Same layout with every parameter set to zero.
    pub fn zeros_like(&self) -> WeightStore {
        let mut z = self.clone();
        for l in &mut z.layers {
            l.params.weights_mut().data_mut().fill(0.0);
            l.params.bias_mut().data_mut().fill(0.0);
        }
        z
    }
}

/// Initialises weights uniformly in `±sqrt(6 / (fan_in + fan_out))` with zero
/// biases. Deterministic for a given `spec.seed`.
pub fn build_network(spec: &NetworkSpec) -> Result<WeightStore, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = layer_layout(spec)
        .into_iter()
        .map(|(id, shape, _)| {
            let receptive: usize = shape[2..].iter().product();
            let fan_in = shape[1] * receptive;
            let fan_out = shape[0] * receptive;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let w = Tensor::from_fn(shape.clone(), |_| rng.gen_range(-limit..=limit));
            let b = Tensor::zeros([shape[0]]);
            (id, w, b)
        })
        .collect();
    WeightStore::from_parts(spec.clone(), params)
}

/// What the backward pass needs from each forward step.
enum Saved {
    ConvInput(Tensor),
    TanhOutput(Tensor),
    Pool(ArgmaxRecord),
    FcInput(Tensor),
}

struct Trace {
    saved: Vec<Saved>,
}

fn check_sample(spec: &NetworkSpec, x: &Tensor) -> Result<(), ModelError> {
    let expected = [1, spec.input_side, spec.input_side];
    if x.shape() != expected {
        return Err(ModelError::InputShape {
            expected: expected.to_vec(),
            actual: x.shape().to_vec(),
        });
    }
    Ok(())
}

fn run_forward(
    ws: &WeightStore,
    x: &Tensor,
    keep: bool,
) -> Result<(Tensor, Option<Trace>), TensorError> {
    let mut saved = Vec::new();
    let mut h = x.clone();
    let mut layers = ws.layers.iter();
    let n_groups = ws.spec.groups.len();
    for _ in 0..n_groups {
        for _ in 0..2 {
            let LayerParams::Conv(p) = &layers.next().expect("layout").params else {
                unreachable!("layout puts convolutions first")
            };
            let out = tanh_activation(&conv2d(&h, p)?);
            if keep {
                saved.push(Saved::ConvInput(h));
                saved.push(Saved::TanhOutput(out.clone()));
            }
            h = out;
        }
        let (pooled, record) = maxpool2x2(&h)?;
        if keep {
            saved.push(Saved::Pool(record));
        }
        h = pooled;
    }
    for (i, layer) in layers.enumerate() {
        let LayerParams::Fc(p) = &layer.params else {
            unreachable!("layout ends with fully-connected layers")
        };
        let mut out = fully_connected(&h, p)?;
        let hidden = i == 0;
        if hidden {
            out = tanh_activation(&out);
        }
        if keep {
            saved.push(Saved::FcInput(h));
            if hidden {
                saved.push(Saved::TanhOutput(out.clone()));
            }
        }
        h = out;
    }
    Ok((h, keep.then_some(Trace { saved })))
}

/// Walks the trace backwards, returning per-layer gradients in forward order.
fn run_backward(
    ws: &WeightStore,
    trace: Trace,
    d_out: Tensor,
) -> Result<Vec<ParamGrads>, TensorError> {
    let mut grads: Vec<Option<ParamGrads>> = vec![None; ws.layers.len()];
    let mut layer_idx = ws.layers.len();
    let mut d = d_out;
    for saved in trace.saved.into_iter().rev() {
        match saved {
            Saved::TanhOutput(y) => d = tanh_grad(&y, &d)?,
            Saved::Pool(rec) => d = maxpool2x2_grad(&rec, &d)?,
            Saved::FcInput(x) | Saved::ConvInput(x) => {
                layer_idx -= 1;
                let g = match &ws.layers[layer_idx].params {
                    LayerParams::Conv(p) => conv2d_grad(&x, p, &d)?,
                    LayerParams::Fc(p) => fc_grad(&x, p, &d)?,
                };
                d = g.d_input;
                grads[layer_idx] = Some(ParamGrads {
                    d_weights: g.d_weights,
                    d_bias: g.d_bias,
                });
            }
        }
    }
    Ok(grads
        .into_iter()
        .map(|g| g.expect("every layer visited"))
        .collect())
}

/// Forward pass for one `[1, S, S]` input, returning the `2N` landmark vector.
pub fn forward_single(ws: &WeightStore, x: &Tensor) -> Result<Tensor, ModelError> {
    check_sample(&ws.spec, x)?;
    Ok(run_forward(ws, x, false)?.0)
}

fn check_batch(spec: &NetworkSpec, batch: &Tensor) -> Result<usize, ModelError> {
    let s = spec.input_side;
    if batch.rank() != 4 || batch.shape()[1..] != [1, s, s] {
        return Err(ModelError::InputShape {
            expected: vec![batch.shape().first().copied().unwrap_or(1), 1, s, s],
            actual: batch.shape().to_vec(),
        });
    }
    Ok(batch.shape()[0])
}

fn sample(batch: &Tensor, i: usize, side: usize) -> Tensor {
    Tensor::new([1, side, side], batch.outer(i).to_vec()).expect("checked batch shape")
}

/// Batched forward pass: `[B, 1, S, S] -> [B, 2N]`. Samples are independent
/// and may be evaluated in parallel.
pub fn forward(ws: &WeightStore, batch: &Tensor) -> Result<Tensor, ModelError> {
    let b = check_batch(&ws.spec, batch)?;
    let side = ws.spec.input_side;
    let rows = par::try_map_indexed(b, |i| {
        run_forward(ws, &sample(batch, i, side), false).map(|r| r.0)
    })?;
    Ok(Tensor::stack(&rows)?.reshape([b, ws.spec.output_dim()])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

/// Parameter gradients aligned with [`WeightStore::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrads>,
}

impl Gradients {
    pub fn max_abs(&self) -> f32 {
        self.layers
            .iter()
            .map(|g| g.d_weights.max_abs().max(g.d_bias.max_abs()))
            .fold(0.0, f32::max)
    }
}

/// Loss and gradients for a batch with the default (unsquared) loss.
pub fn backward(
    ws: &WeightStore,
    batch: &Tensor,
    gt: &Tensor,
) -> Result<(f64, Gradients), ModelError> {
    backward_with(ws, batch, gt, LossKind::Euclidean)
}

/// Per-sample forward/backward runs through [`par`]; the per-sample loss terms
/// and gradients are then summed in sample order, so the result is the same
/// in sequential and parallel mode.
pub fn backward_with(
    ws: &WeightStore,
    batch: &Tensor,
    gt: &Tensor,
    kind: LossKind,
) -> Result<(f64, Gradients), ModelError> {
    let b = check_batch(&ws.spec, batch)?;
    gt.expect_shape("backward targets", &[b, ws.spec.output_dim()])?;
    let side = ws.spec.input_side;
    let per_sample = par::try_map_indexed(b, |i| -> Result<(f64, Vec<ParamGrads>), TensorError> {
        let (pred, trace) = run_forward(ws, &sample(batch, i, side), true)?;
        let mut d_pred = Tensor::zeros([pred.len()]);
        let loss = row_loss_and_grad(kind, pred.data(), gt.outer(i), b, d_pred.data_mut());
        let grads = run_backward(ws, trace.expect("trace kept"), d_pred)?;
        Ok((loss, grads))
    })?;

    let mut loss = 0.0;
    let mut acc: Vec<(Vec<f64>, Vec<f64>)> = ws
        .layers
        .iter()
        .map(|l| {
            (
                vec![0.0; l.params.weights().len()],
                vec![0.0; l.params.bias().len()],
            )
        })
        .collect();
    for (l, grads) in per_sample {
        loss += l;
        for ((aw, ab), g) in acc.iter_mut().zip(&grads) {
            for (a, v) in aw.iter_mut().zip(g.d_weights.data()) {
                *a += *v as f64;
            }
            for (a, v) in ab.iter_mut().zip(g.d_bias.data()) {
                *a += *v as f64;
            }
        }
    }
    let layers = acc
        .into_iter()
        .zip(&ws.layers)
        .map(|((w, bias), l)| -> Result<ParamGrads, TensorError> {
            Ok(ParamGrads {
                d_weights: Tensor::new(
                    l.params.weights().shape(),
                    w.into_iter().map(|v| v as f32).collect(),
                )?,
                d_bias: Tensor::new(
                    l.params.bias().shape(),
                    bias.into_iter().map(|v| v as f32).collect(),
                )?,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((loss, Gradients { layers }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loss_and_grad, GroupSpec};
    use crate::nn::{numeric_gradient, relative_error};

    fn tiny_spec(side: usize, n: usize, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_side: side,
            n_landmarks: n,
            groups: vec![GroupSpec::new(3, 2, 2); 3],
            fc_hidden: 6,
            seed,
        }
    }

    fn input(b: usize, side: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([b, 1, side, side], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn build_is_deterministic_and_shaped() {
        let spec = NetworkSpec::with_landmarks(68);
        let a = build_network(&spec).unwrap();
        let b = build_network(&spec).unwrap();
        assert_eq!(a, b);
        let out = a.layers().last().unwrap();
        assert_eq!(out.id, "fc_out");
        assert_eq!(out.params.weights().shape(), &[136, 256]);
        assert!(a
            .layers()
            .iter()
            .all(|l| l.params.bias().data().iter().all(|&v| v == 0.0)));
        let mut other = spec.clone();
        other.seed = 8;
        assert_ne!(build_network(&other).unwrap(), a);
    }

    #[test]
    fn init_respects_fan_limits() {
        let ws = build_network(&NetworkSpec::with_landmarks(5)).unwrap();
        let l = ws.layer("group1.conv1").unwrap();
        let limit = (6.0f64 / (9.0 + 32.0 * 9.0)).sqrt() as f32;
        assert!(l.params.weights().data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn zero_weights_emit_final_bias() {
        let spec = tiny_spec(16, 2, 1);
        let mut ws = build_network(&spec).unwrap().zeros_like();
        let bias = Tensor::new([4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        *ws.layers_mut().last_mut().unwrap().params.bias_mut() = bias.clone();
        let out = forward(&ws, &input(3, 16, 2)).unwrap();
        for i in 0..3 {
            assert_eq!(out.outer(i), bias.data());
        }
    }

    #[test]
    fn duplicated_rows_match() {
        let ws = build_network(&tiny_spec(16, 3, 4)).unwrap();
        let one = input(1, 16, 5);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let two = Tensor::new([2, 1, 16, 16], data).unwrap();
        let out = forward(&ws, &two).unwrap();
        assert_eq!(out.shape(), &[2, 6]);
        assert_eq!(out.outer(0), out.outer(1));
    }

    #[test]
    fn rejects_wrong_input() {
        let ws = build_network(&tiny_spec(16, 1, 1)).unwrap();
        assert!(matches!(
            forward(&ws, &Tensor::zeros([1, 1, 8, 8])),
            Err(ModelError::InputShape { .. })
        ));
        assert!(forward(&ws, &Tensor::zeros([1, 2, 16, 16])).is_err());
    }

    #[test]
    fn zero_gradient_at_target() {
        let ws = build_network(&tiny_spec(16, 2, 3)).unwrap();
        let x = input(2, 16, 6);
        let pred = forward(&ws, &x).unwrap();
        let (loss, grads) = backward(&ws, &x, &pred).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn backward_loss_agrees_with_loss_fn() {
        let ws = build_network(&tiny_spec(16, 2, 3)).unwrap();
        let x = input(3, 16, 8);
        let gt = Tensor::from_fn([3, 4], |i| 0.2 + 0.05 * i as f32);
        let (l1, _) = backward(&ws, &x, &gt).unwrap();
        let (l2, _) = loss_and_grad(&forward(&ws, &x).unwrap(), &gt).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn end_to_end_gradient_on_8x8() {
        let spec = tiny_spec(8, 1, 11);
        let ws = build_network(&spec).unwrap();
        let x = input(1, 8, 12);
        let gt = Tensor::new([1, 2], vec![0.3, 0.7]).unwrap();
        let (_, grads) = backward(&ws, &x, &gt).unwrap();
        for (li, layer) in ws.layers().iter().enumerate() {
            let num = numeric_gradient(
                |w| {
                    let mut probe = ws.clone();
                    *probe.layers_mut()[li].params.weights_mut() = w.clone();
                    loss_and_grad(&forward(&probe, &x).unwrap(), &gt).unwrap().0
                },
                layer.params.weights(),
                1e-3,
            );
            let err = relative_error(&grads.layers[li].d_weights, &num);
            assert!(err < 1e-3, "{}: {err}", layer.id);
        }
    }
}
