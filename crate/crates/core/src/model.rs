//! The attacked model family: a fully connected ReLU first layer followed by
//! an arbitrary differentiable head, `m(x) = f_phi(ReLU(W x + b))`.
//!
//! Gradients are derived by hand. The quantity the rest of the crate revolves
//! around is the per-sample, per-neuron coefficient
//! `lambda = dL/dz^h * 1[W^h x + b^h > 0]`, which makes every first-layer
//! gradient row a linear combination of the batch samples.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients with magnitude at or below this are treated as exactly zero.
pub const LAMBDA_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u32);

impl SampleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Cox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Survival { time: f64, event: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Array1<f64>,
    pub y: Label,
    pub sample_id: SampleId,
    /// Ground truth; only the oracle and the metrics may look at it.
    pub client_id: Option<usize>,
}

/// Shape of the head `f_phi`: an MLP over the `input` hidden activations with
/// ReLU between layers and a linear output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl HeadShape {
    pub fn linear(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: Vec::new(),
            output,
        }
    }

    /// `(fan_in, fan_out)` for each layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| i * o + o).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::new();
        let mut acc = 0;
        for (i, o) in self.layers() {
            off.push(acc);
            acc += i * o + o;
        }
        off
    }
}

/// Decomposed parameters `(W, b, phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub phi: Array1<f64>,
    pub head: HeadShape,
}

impl ModelParams {
    pub fn new(w: Array2<f64>, b: Array1<f64>, phi: Array1<f64>, head: HeadShape) -> Result<Self> {
        let params = Self { w, b, phi, head };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w.nrows();
        if self.b.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                actual: self.b.len(),
                context: "bias length vs weight rows",
            });
        }
        if self.head.input != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                actual: self.head.input,
                context: "head input vs hidden neurons",
            });
        }
        if self.phi.len() != self.head.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.head.param_count(),
                actual: self.phi.len(),
                context: "head parameter count",
            });
        }
        Ok(())
    }

    /// First layer uniform in `±1/sqrt(d)`, each head layer uniform in
    /// `±1/sqrt(fan_in)` (weights and biases alike).
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, head_hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let head = HeadShape {
            input: hidden,
            hidden: head_hidden.to_vec(),
            output: outputs,
        };
        let bound = 1.0 / (input_dim as f64).sqrt();
        let w = Array2::from_shape_fn((hidden, input_dim), |_| rng.random_range(-bound..bound));
        let b = Array1::from_shape_fn(hidden, |_| rng.random_range(-bound..bound));
        let mut phi = Vec::with_capacity(head.param_count());
        for (fan_in, fan_out) in head.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            phi.extend((0..fan_in * fan_out + fan_out).map(|_| rng.random_range(-bound..bound)));
        }
        Self {
            w,
            b,
            phi: Array1::from(phi),
            head,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, head: HeadShape) -> Self {
        let r = head.param_count();
        Self {
            w: Array2::zeros((hidden, input_dim)),
            b: Array1::zeros(hidden),
            phi: Array1::zeros(r),
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.head.output
    }

    /// `(W^h, b^h)` as a `d + 1` vector.
    pub fn extended_weights(&self, h: usize) -> Array1<f64> {
        let d = self.input_dim();
        let mut out = Array1::zeros(d + 1);
        out.slice_mut(s![..d]).assign(&self.w.row(h));
        out[d] = self.b[h];
        out
    }

    /// Copy neuron `h`'s extended weights from `other`.
    pub fn reset_neuron(&mut self, h: usize, other: &ModelParams) {
        self.w.row_mut(h).assign(&other.w.row(h));
        self.b[h] = other.b[h];
    }

    /// `(weight [fan_out x fan_in], bias)` of head layer `l`.
    pub fn head_layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = self.head.layers()[l];
        let off = self.head.offsets()[l];
        let w = self.phi.slice(s![off..off + fan_in * fan_out]);
        let w = w.into_shape_with_order((fan_out, fan_in)).expect("contiguous head slice");
        let b = self.phi.slice(s![off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.w.dim() == other.w.dim() && self.phi.len() == other.phi.len() && self.head == other.head
    }

    /// `self += alpha * grad`.
    pub fn apply(&mut self, alpha: f64, grad: &BatchGradient) {
        self.w.scaled_add(alpha, &grad.w);
        self.b.scaled_add(alpha, &grad.b);
        self.phi.scaled_add(alpha, &grad.phi);
    }

    /// Every parameter, first layer then bias then head.
    pub fn flat_len(&self) -> usize {
        self.w.len() + self.b.len() + self.phi.len()
    }
}

/// A batch laid out for matrix arithmetic.
#[derive(Clone, Debug)]
pub struct Batch {
    pub xs: Array2<f64>,
    pub labels: Vec<Label>,
    pub ids: Vec<SampleId>,
}

impl Batch {
    pub fn from_examples<'a, I>(examples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabeledExample>,
    {
        let examples: Vec<&LabeledExample> = examples.into_iter().collect();
        let first = examples.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let d = first.x.len();
        let mut xs = Array2::zeros((examples.len(), d));
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: ex.x.len(),
                    context: "batch sample dimension",
                });
            }
            xs.row_mut(i).assign(&ex.x);
        }
        Ok(Self {
            xs,
            labels: examples.iter().map(|e| e.y).collect(),
            ids: examples.iter().map(|e| e.sample_id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Cox batch with no comparable pair: loss and gradient are zero.
    pub degenerate: bool,
}

/// Single-sample forward pass with the first-layer pre-activations.
#[derive(Clone, Debug)]
pub struct Forward {
    pub pre_activation: Array1<f64>,
    pub output: Array1<f64>,
}

pub fn forward(params: &ModelParams, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    forward_detailed(params, x).map(|f| f.output)
}

pub fn forward_detailed(params: &ModelParams, x: ArrayView1<'_, f64>) -> Result<Forward> {
    check_dim(params, x.len())?;
    let xs = x.insert_axis(Axis(0));
    let pre = first_layer(params, xs);
    let (out, _) = head_forward(params, relu(&pre));
    Ok(Forward {
        pre_activation: pre.row(0).to_owned(),
        output: out.row(0).to_owned(),
    })
}

/// Predictions for every row of `xs`.
pub fn forward_batch(params: &ModelParams, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dim(params, xs.ncols())?;
    let pre = first_layer(params, xs);
    Ok(head_forward(params, relu(&pre)).0)
}

/// Batch loss: summed over samples for cross-entropy, the negative Cox
/// partial log-likelihood over the batch for survival.
pub fn loss(params: &ModelParams, batch: &Batch, kind: LossKind) -> Result<LossValue> {
    check_dim(params, batch.xs.ncols())?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let out = forward_batch(params, batch.xs.view())?;
    loss_and_output_grad(out.view(), &batch.labels, kind).map(|(l, _)| l)
}

/// Full analytic gradient of a batch loss.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: LossValue,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub phi: Array1<f64>,
    /// `dL/dz` for each (sample, neuron), before ReLU gating.
    pub dz: Array2<f64>,
    /// `lambda` for each (sample, neuron); exactly zero outside the batch
    /// activation set.
    pub lambda: Array2<f64>,
    /// First-layer pre-activations `W x + b` for each (sample, neuron).
    pub pre: Array2<f64>,
}

pub fn batch_gradient(params: &ModelParams, batch: &Batch, kind: LossKind) -> Result<BatchGradient> {
    check_dim(params, batch.xs.ncols())?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let pre = first_layer(params, batch.xs.view());
    let (out, tape) = head_forward(params, relu(&pre));
    let (loss, g_out) = loss_and_output_grad(out.view(), &batch.labels, kind)?;
    let (phi, dz) = head_backward(params, &tape, g_out);

    let mut lambda = Array2::zeros(dz.dim());
    ndarray::Zip::from(&mut lambda)
        .and(&dz)
        .and(&pre)
        .for_each(|l, &g, &p| {
            if p > 0.0 && g.abs() > LAMBDA_EPS {
                *l = g;
            }
        });
    let w = lambda.t().dot(&batch.xs);
    let b = lambda.sum_axis(Axis(0));
    Ok(BatchGradient {
        loss,
        w,
        b,
        phi,
        dz,
        lambda,
        pre,
    })
}

/// First-layer gradient together with its per-neuron linear decomposition.
#[derive(Clone, Debug)]
pub struct FirstLayerGradient {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    /// For each neuron, the nonzero `(sample, lambda)` pairs.
    pub lambdas: Vec<Vec<(SampleId, f64)>>,
}

pub fn first_layer_gradients(params: &ModelParams, batch: &Batch, kind: LossKind) -> Result<FirstLayerGradient> {
    let g = batch_gradient(params, batch, kind)?;
    let lambdas = (0..params.hidden())
        .map(|h| {
            g.lambda
                .column(h)
                .iter()
                .zip(&batch.ids)
                .filter(|(l, _)| **l != 0.0)
                .map(|(&l, &id)| (id, l))
                .collect()
        })
        .collect();
    Ok(FirstLayerGradient {
        dw: g.w,
        db: g.b,
        lambdas,
    })
}

/// `{ x in batch : W^h x + b^h > 0 and |dL/dz^h| > LAMBDA_EPS }`, sorted.
pub fn batch_activation_set(params: &ModelParams, batch: &Batch, h: usize, kind: LossKind) -> Result<Vec<SampleId>> {
    if h >= params.hidden() {
        return Err(Error::invalid(format!("neuron {h} out of range (H = {})", params.hidden())));
    }
    let g = batch_gradient(params, batch, kind)?;
    let mut set: Vec<SampleId> = batch
        .ids
        .iter()
        .enumerate()
        .filter(|&(i, _)| g.pre[[i, h]] > 0.0 && g.dz[[i, h]].abs() > LAMBDA_EPS)
        .map(|(_, &id)| id)
        .collect();
    set.sort_unstable();
    set.dedup();
    Ok(set)
}

fn check_dim(params: &ModelParams, d: usize) -> Result<()> {
    if d != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: d,
            context: "sample dimension",
        });
    }
    Ok(())
}

fn first_layer(params: &ModelParams, xs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut pre = xs.dot(&params.w.t());
    pre += &params.b;
    pre
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

struct HeadTape {
    /// Input of each head layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each head layer (the last one is the output).
    pres: Vec<Array2<f64>>,
}

fn head_forward(params: &ModelParams, z: Array2<f64>) -> (Array2<f64>, HeadTape) {
    let n_layers = params.head.layers().len();
    let mut tape = HeadTape {
        inputs: Vec::with_capacity(n_layers),
        pres: Vec::with_capacity(n_layers),
    };
    let mut a = z;
    for l in 0..n_layers {
        let (w, b) = params.head_layer(l);
        let mut pre = a.dot(&w.t());
        pre += &b;
        tape.inputs.push(a);
        a = if l + 1 < n_layers { relu(&pre) } else { pre.clone() };
        tape.pres.push(pre);
    }
    (a, tape)
}

/// Returns `(grad_phi, dL/dz)`.
fn head_backward(params: &ModelParams, tape: &HeadTape, g_out: Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let layers = params.head.layers();
    let offsets = params.head.offsets();
    let mut phi = Array1::zeros(params.phi.len());
    let mut g = g_out;
    for l in (0..layers.len()).rev() {
        let (fan_in, fan_out) = layers[l];
        let off = offsets[l];
        let (w, _) = params.head_layer(l);
        let gw = g.t().dot(&tape.inputs[l]);
        let gb = g.sum_axis(Axis(0));
        phi.slice_mut(s![off..off + fan_in * fan_out])
            .assign(&Array1::from_iter(gw.iter().copied()));
        phi.slice_mut(s![off + fan_in * fan_out..off + fan_in * fan_out + fan_out])
            .assign(&gb);
        let mut g_in = g.dot(&w);
        if l > 0 {
            ndarray::Zip::from(&mut g_in)
                .and(&tape.pres[l - 1])
                .for_each(|gi, &p| {
                    if p <= 0.0 {
                        *gi = 0.0;
                    }
                });
        }
        g = g_in;
    }
    (phi, g)
}

fn loss_and_output_grad(out: ArrayView2<'_, f64>, labels: &[Label], kind: LossKind) -> Result<(LossValue, Array2<f64>)> {
    if out.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: out.nrows(),
            actual: labels.len(),
            context: "labels per batch",
        });
    }
    match kind {
        LossKind::CrossEntropy => cross_entropy(out, labels),
        LossKind::Cox => cox(out, labels),
    }
}

fn cross_entropy(out: ArrayView2<'_, f64>, labels: &[Label]) -> Result<(LossValue, Array2<f64>)> {
    let classes = out.ncols();
    let mut grad = Array2::zeros(out.dim());
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let y = match *label {
            Label::Class(c) if c < classes => c,
            Label::Class(c) => return Err(Error::invalid(format!("class {c} out of range for {classes} outputs"))),
            Label::Survival { .. } => return Err(Error::invalid("cross-entropy needs class labels")),
        };
        let row = out.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let sum: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[y];
        let mut others = 0.0;
        for c in 0..classes {
            if c != y {
                grad[[i, c]] = (row[c] - lse).exp();
                others += grad[[i, c]];
            }
        }
        // p_y - 1 loses all precision once the sample is well classified.
        grad[[i, y]] = -others;
    }
    Ok((
        LossValue {
            value: total,
            degenerate: false,
        },
        grad,
    ))
}

/// Negative Cox partial log-likelihood with risk sets `{ j : t_j >= t_i }`.
fn cox(out: ArrayView2<'_, f64>, labels: &[Label]) -> Result<(LossValue, Array2<f64>)> {
    if out.ncols() != 1 {
        return Err(Error::invalid(format!("cox loss needs a scalar risk score, got {} outputs", out.ncols())));
    }
    let mut times = Vec::with_capacity(labels.len());
    let mut events = Vec::with_capacity(labels.len());
    for label in labels {
        match *label {
            Label::Survival { time, event } => {
                times.push(time);
                events.push(event);
            }
            Label::Class(_) => return Err(Error::invalid("cox loss needs survival labels")),
        }
    }
    let scores = out.column(0);
    let n = labels.len();
    let mut grad = Array2::zeros((n, 1));
    let mut total = 0.0;
    let mut comparable = false;
    for i in (0..n).filter(|&i| events[i]) {
        let risk: Vec<usize> = (0..n).filter(|&j| times[j] >= times[i]).collect();
        if risk.len() > 1 {
            comparable = true;
        }
        let m = risk.iter().fold(f64::NEG_INFINITY, |a, &j| a.max(scores[j]));
        let lse = m + risk.iter().map(|&j| (scores[j] - m).exp()).sum::<f64>().ln();
        total += lse - scores[i];
        for &j in &risk {
            grad[[j, 0]] += (scores[j] - lse).exp();
        }
        grad[[i, 0]] -= 1.0;
    }
    if !comparable {
        grad.fill(0.0);
        total = 0.0;
    }
    Ok((
        LossValue {
            value: total,
            degenerate: !comparable,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn example(x: Array1<f64>, y: Label, id: u32) -> LabeledExample {
        LabeledExample {
            x,
            y,
            sample_id: SampleId(id),
            client_id: None,
        }
    }

    fn identity_head(h: usize) -> (HeadShape, Array1<f64>) {
        let head = HeadShape::linear(h, h);
        let mut phi = Array1::zeros(head.param_count());
        for i in 0..h {
            phi[i * h + i] = 1.0;
        }
        (head, phi)
    }

    #[test]
    fn zero_params_give_zero_output() {
        let (head, phi) = identity_head(3);
        let p = ModelParams::new(Array2::zeros((3, 4)), Array1::zeros(3), phi, head).unwrap();
        let out = forward(&p, array![0.3, -2.0, 5.0, 1.0].view()).unwrap();
        assert_eq!(out, Array1::<f64>::zeros(3));
    }

    #[test]
    fn relu_gates_identity() {
        let (head, phi) = identity_head(2);
        let p = ModelParams::new(Array2::eye(2), Array1::zeros(2), phi, head).unwrap();
        let f = forward_detailed(&p, array![1.0, -1.0].view()).unwrap();
        assert_eq!(f.output, array![1.0, 0.0]);
        assert_eq!(f.pre_activation, array![1.0, -1.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let mut r = rng::stream(1, &[]);
        let p = ModelParams::init(5, 4, &[], 2, &mut r);
        assert!(matches!(
            forward(&p, array![1.0, 2.0].view()),
            Err(Error::DimensionMismatch { expected: 5, actual: 2, .. })
        ));
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let head = HeadShape::linear(3, 2);
        let p = ModelParams::new(Array2::zeros((3, 4)), Array1::zeros(3), Array1::zeros(head.param_count()), head).unwrap();
        for y in 0..2 {
            let batch = Batch::from_examples([&example(array![1.0, 0.0, 1.0, 0.5], Label::Class(y), 0)]).unwrap();
            let l = loss(&p, &batch, LossKind::CrossEntropy).unwrap();
            assert!((l.value - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn cox_single_admissible_element_is_zero() {
        let mut r = rng::stream(3, &[]);
        let p = ModelParams::init(4, 6, &[], 1, &mut r);
        // The event has the latest time, so its risk set is only itself.
        let batch = Batch::from_examples(&[
            example(array![1.0, 0.0, 0.0, 1.0], Label::Survival { time: 2.0, event: false }, 0),
            example(array![0.0, 1.0, 1.0, 0.0], Label::Survival { time: 5.0, event: true }, 1),
        ])
        .unwrap();
        let l = loss(&p, &batch, LossKind::Cox).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.degenerate);
        let g = batch_gradient(&p, &batch, LossKind::Cox).unwrap();
        assert!(g.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cox_without_events_is_degenerate() {
        let mut r = rng::stream(3, &[]);
        let p = ModelParams::init(2, 3, &[], 1, &mut r);
        let batch = Batch::from_examples(&[
            example(array![1.0, 0.0], Label::Survival { time: 2.0, event: false }, 0),
            example(array![0.0, 1.0], Label::Survival { time: 1.0, event: false }, 1),
        ])
        .unwrap();
        let l = loss(&p, &batch, LossKind::Cox).unwrap();
        assert_eq!((l.value, l.degenerate), (0.0, true));
    }

    #[test]
    fn dead_neuron_has_empty_set_and_zero_row() {
        let mut r = rng::stream(5, &[]);
        let mut p = ModelParams::init(3, 4, &[], 2, &mut r);
        p.w.row_mut(2).fill(-1.0);
        p.b[2] = -0.5;
        let batch = Batch::from_examples(&[
            example(array![0.2, 0.5, 0.9], Label::Class(0), 0),
            example(array![1.0, 0.1, 0.3], Label::Class(1), 1),
        ])
        .unwrap();
        let g = first_layer_gradients(&p, &batch, LossKind::CrossEntropy).unwrap();
        assert!(g.lambdas[2].is_empty());
        assert!(g.dw.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(g.db[2], 0.0);
        assert!(batch_activation_set(&p, &batch, 2, LossKind::CrossEntropy).unwrap().is_empty());
    }

    #[test]
    fn zero_head_weights_empty_activation_set() {
        let head = HeadShape::linear(3, 2);
        let p = ModelParams::new(Array2::from_elem((3, 2), 1.0), Array1::from_elem(3, 1.0), Array1::zeros(head.param_count()), head).unwrap();
        let batch = Batch::from_examples(&[example(array![0.5, 0.5], Label::Class(1), 9)]).unwrap();
        for h in 0..3 {
            assert!(batch_activation_set(&p, &batch, h, LossKind::CrossEntropy).unwrap().is_empty());
        }
    }

    #[test]
    fn single_sample_row_is_lambda_times_x() {
        let mut r = rng::stream(11, &[]);
        let p = ModelParams::init(6, 8, &[], 3, &mut r);
        let x = array![0.1, 0.9, 0.4, 0.0, 1.0, 0.3];
        let batch = Batch::from_examples(&[example(x.clone(), Label::Class(2), 4)]).unwrap();
        let g = first_layer_gradients(&p, &batch, LossKind::CrossEntropy).unwrap();
        let mut seen = 0;
        for h in 0..8 {
            if let [(id, lambda)] = g.lambdas[h][..] {
                assert_eq!(id, SampleId(4));
                assert_eq!(g.db[h], lambda);
                for j in 0..6 {
                    assert_eq!(g.dw[[h, j]], lambda * x[j]);
                }
                // The ratio recovers x.
                let ratio = g.dw.row(h).mapv(|v| v / g.db[h]);
                assert!(ratio.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-14));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let mut r = rng::stream(2, &[]);
        let p = ModelParams::init(7, 5, &[4], 3, &mut r);
        let x = Array1::from_shape_fn(7, |i| i as f64 * 0.37 - 1.0);
        let a = forward(&p, x.view()).unwrap();
        let b = forward(&p, x.view()).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
