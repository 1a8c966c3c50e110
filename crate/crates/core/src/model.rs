//! Dense ReLU classifier with analytic gradients and plain SGD.
//!
//! Parameters live in one flat vector. Each layer contributes a row-major
//! weight block of shape `(out, in)` followed by its bias block of length
//! `out`. Hidden layers use ReLU; the last layer emits raw logits, so the
//! penultimate activations fed to it are always non-negative when the model
//! has at least one hidden layer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub out: usize,
    pub inp: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.out * self.inp + self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shapes: Vec<LayerShape>,
    flat: Vec<f64>,
}

/// A client's model delta `theta_i - Theta` for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub client_id: usize,
    pub round: usize,
    pub delta: Vec<f64>,
}

impl ModelUpdate {
    /// Rejects updates of the wrong length or with non-finite entries.
    pub fn new(client_id: usize, round: usize, delta: Vec<f64>, dim: usize) -> Result<Self> {
        if delta.len() != dim {
            return Err(Error::shape(format!(
                "update from client {client_id} has {} entries, model has {dim}",
                delta.len()
            )));
        }
        if !crate::vector::is_finite(&delta) {
            return Err(Error::Data(format!(
                "update from client {client_id} contains non-finite values"
            )));
        }
        Ok(Self {
            client_id,
            round,
            delta,
        })
    }
}

/// A mini-batch: `labels.len()` rows of `width` features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub width: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, width: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("batch must hold at least one sample".into()));
        }
        if inputs.len() != labels.len() * width {
            return Err(Error::shape(format!(
                "batch of {} labels needs {} inputs, got {}",
                labels.len(),
                labels.len() * width,
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Logits and penultimate activations for a batch, both row-major.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub penultimate: Vec<f64>,
    pub classes: usize,
    pub penultimate_width: usize,
}

impl ForwardOutput {
    pub fn logits_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.len() / self.classes)
            .map(|i| argmax(self.logits_row(i)))
            .collect()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtracted), in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl ModelParams {
    /// Uniform Glorot initialisation in `[-s, s]` with `s = sqrt(6 / (in + out))`,
    /// zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config(format!(
                "need at least an input and an output width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let shapes: Vec<LayerShape> = layer_dims
            .windows(2)
            .map(|w| LayerShape { inp: w[0], out: w[1] })
            .collect();
        let mut rng = SimRng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(shapes.iter().map(LayerShape::param_count).sum());
        for s in &shapes {
            let limit = (6.0 / (s.inp + s.out) as f64).sqrt();
            flat.extend((0..s.out * s.inp).map(|_| rng.random_range(-limit..=limit)));
            flat.extend(std::iter::repeat_n(0.0, s.out));
        }
        Ok(Self { shapes, flat })
    }

    /// Rebuild a model from its shapes and a flat parameter vector.
    pub fn from_flat(shapes: Vec<LayerShape>, flat: Vec<f64>) -> Result<Self> {
        let d: usize = shapes.iter().map(LayerShape::param_count).sum();
        if shapes.is_empty() || flat.len() != d {
            return Err(Error::shape(format!(
                "flat vector of length {} does not fit {d} parameters",
                flat.len()
            )));
        }
        Ok(Self { shapes, flat })
    }

    /// Rebuild from explicit `(weights, bias)` pairs.
    pub fn from_layers(layers: &[(Vec<f64>, Vec<f64>)], shapes: Vec<LayerShape>) -> Result<Self> {
        if layers.len() != shapes.len() {
            return Err(Error::shape("layer count does not match shapes"));
        }
        let mut flat = Vec::new();
        for ((w, b), s) in layers.iter().zip(&shapes) {
            if w.len() != s.out * s.inp || b.len() != s.out {
                return Err(Error::shape(format!("layer block does not fit {s:?}")));
            }
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        Self::from_flat(shapes, flat)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn dim(&self) -> usize {
        self.flat.len()
    }

    pub fn input_width(&self) -> usize {
        self.shapes[0].inp
    }

    pub fn classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1].out
    }

    /// Width `r` of the activations feeding the last layer.
    pub fn penultimate_width(&self) -> usize {
        self.shapes[self.shapes.len() - 1].inp
    }

    fn offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(LayerShape::param_count).sum()
    }

    /// `(weights, bias)` views for every layer.
    pub fn layers(&self) -> Vec<(&[f64], &[f64])> {
        let mut at = 0;
        self.shapes
            .iter()
            .map(|s| {
                let w = &self.flat[at..at + s.out * s.inp];
                let b = &self.flat[at + s.out * s.inp..at + s.param_count()];
                at += s.param_count();
                (w, b)
            })
            .collect()
    }

    /// Range of the last layer's weight block inside the flat vector.
    pub fn last_weight_range(&self) -> std::ops::Range<usize> {
        last_weight_range(&self.shapes)
    }

    /// Apply `theta += scale * v`.
    pub fn add_scaled(&mut self, scale: f64, v: &[f64]) {
        crate::vector::axpy(&mut self.flat, scale, v);
    }

    /// Model obtained by adding `delta` to these parameters.
    pub fn with_delta(&self, delta: &[f64]) -> Self {
        let mut out = self.clone();
        out.add_scaled(1.0, delta);
        out
    }

    pub fn forward(&self, inputs: &[f64], width: usize) -> Result<ForwardOutput> {
        let acts = self.activations(inputs, width)?;
        let n = acts.len();
        Ok(ForwardOutput {
            logits: acts[n - 1].clone(),
            penultimate: acts[n - 2].clone(),
            classes: self.classes(),
            penultimate_width: self.penultimate_width(),
        })
    }

    /// All layer activations, starting with the input itself. The last entry
    /// holds raw logits; every entry in between is post-ReLU.
    fn activations(&self, inputs: &[f64], width: usize) -> Result<Vec<Vec<f64>>> {
        if width != self.input_width() {
            return Err(Error::shape(format!(
                "input width {width} does not match model input {}",
                self.input_width()
            )));
        }
        if !inputs.len().is_multiple_of(width) {
            return Err(Error::shape("input length is not a multiple of its width"));
        }
        let rows = inputs.len() / width;
        let last = self.shapes.len() - 1;
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(inputs.to_vec());
        for (l, ((w, b), s)) in self.layers().into_iter().zip(&self.shapes).enumerate() {
            let prev = &acts[l];
            let mut out = vec![0.0; rows * s.out];
            for r in 0..rows {
                let x = &prev[r * s.inp..(r + 1) * s.inp];
                let y = &mut out[r * s.out..(r + 1) * s.out];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * s.inp..(o + 1) * s.inp];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *yo = if l < last { acc.max(0.0) } else { acc };
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let m = self.classes();
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= m) {
            return Err(Error::Data(format!("label {bad} outside [0, {m})")));
        }
        let acts = self.activations(&batch.inputs, batch.width)?;
        let rows = batch.len();
        let inv = 1.0 / rows as f64;

        // dL/dz for the logits: (p - y) / b
        let mut delta = acts[acts.len() - 1].clone();
        let mut loss = 0.0;
        for (r, &y) in batch.labels.iter().enumerate() {
            let z = &mut delta[r * m..(r + 1) * m];
            softmax_in_place(z);
            loss -= z[y].max(f64::MIN_POSITIVE).ln();
            z[y] -= 1.0;
            for v in z.iter_mut() {
                *v *= inv;
            }
        }
        loss *= inv;

        let mut grad = vec![0.0; self.dim()];
        let layers = self.layers();
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let off = self.offset(l);
            let a_prev = &acts[l];
            {
                let (gw, gb) = grad[off..off + s.param_count()].split_at_mut(s.out * s.inp);
                for r in 0..rows {
                    let d = &delta[r * s.out..(r + 1) * s.out];
                    let x = &a_prev[r * s.inp..(r + 1) * s.inp];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        for (g, xi) in gw[o * s.inp..(o + 1) * s.inp].iter_mut().zip(x) {
                            *g += dv * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = layers[l].0;
            let mut prev_delta = vec![0.0; rows * s.inp];
            for r in 0..rows {
                let d = &delta[r * s.out..(r + 1) * s.out];
                let pd = &mut prev_delta[r * s.inp..(r + 1) * s.inp];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (p, wi) in pd.iter_mut().zip(&w[o * s.inp..(o + 1) * s.inp]) {
                        *p += dv * wi;
                    }
                }
                // ReLU mask of the layer below
                for (p, a) in pd.iter_mut().zip(&a_prev[r * s.inp..(r + 1) * s.inp]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev_delta;
        }
        Ok((loss, grad))
    }

    /// Elementwise mean of the penultimate activations over `aux`.
    pub fn representation(&self, aux: &Batch) -> Result<Vec<f64>> {
        if aux.is_empty() {
            return Err(Error::Data("representation needs at least one sample".into()));
        }
        let out = self.forward(&aux.inputs, aux.width)?;
        let r = out.penultimate_width;
        let mut mean = vec![0.0; r];
        for row in out.penultimate.chunks(r) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = aux.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }
}

pub fn last_weight_range(shapes: &[LayerShape]) -> std::ops::Range<usize> {
    let last = shapes.len() - 1;
    let off: usize = shapes[..last].iter().map(LayerShape::param_count).sum();
    off..off + shapes[last].out * shapes[last].inp
}

/// Hyper-parameters of local SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} is invalid", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// One shuffled pass of plain SGD over `data`.
///
/// The loss is multiplied by `loss_scale`. `after_step` sees the parameters
/// right after each step together with the (unscaled) step gradient.
pub fn sgd_epoch(
    params: &mut ModelParams,
    data: &LabeledDataset,
    lr: f64,
    batch_size: usize,
    loss_scale: f64,
    rng: &mut SimRng,
    after_step: &mut dyn FnMut(&mut ModelParams, &[f64]),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for chunk in order.chunks(batch_size) {
        let batch = data.batch(chunk);
        let (_, grad) = params.loss_and_grad(&batch)?;
        let step = lr * loss_scale;
        if step != 0.0 {
            params.add_scaled(-step, &grad);
        }
        after_step(params, &grad);
    }
    Ok(())
}

/// Train a copy of `params` with plain SGD and return `theta_after - theta_before`.
pub fn local_train(
    params: &ModelParams,
    data: &LabeledDataset,
    spec: &TrainSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut local = params.clone();
    for _ in 0..spec.epochs {
        sgd_epoch(&mut local, data, spec.lr, spec.batch_size, 1.0, &mut rng, &mut |_, _| {})?;
    }
    Ok(delta_between(params, &local))
}

pub fn delta_between(before: &ModelParams, after: &ModelParams) -> Vec<f64> {
    after
        .flat
        .iter()
        .zip(&before.flat)
        .map(|(a, b)| a - b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};
    use rand::Rng;

    fn random_batch(rows: usize, width: usize, classes: usize, seed: u64) -> Batch {
        let mut rng = rng_from(seed, &[]);
        let inputs = (0..rows * width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(inputs, labels, width).unwrap()
    }

    /// Straightforward forward pass, one sample and one dot product at a time.
    fn naive_forward(model: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a = x.to_vec();
        let mut pen = a.clone();
        let n = model.shapes().len();
        for (l, (s, (w, b))) in model.shapes().iter().zip(model.layers()).enumerate() {
            pen = a.clone();
            let mut next = Vec::new();
            for o in 0..s.out {
                let mut z = b[o];
                for i in 0..s.inp {
                    z += w[o * s.inp + i] * a[i];
                }
                next.push(if l + 1 < n { z.max(0.0) } else { z });
            }
            a = next;
        }
        (a, pen)
    }

    #[test]
    fn init_dimension_and_determinism() {
        let a = ModelParams::init(&[32, 64, 10], 7).unwrap();
        assert_eq!(a.dim(), 32 * 64 + 64 + 64 * 10 + 10);
        assert_eq!(a.dim(), 2762);
        let b = ModelParams::init(&[32, 64, 10], 7).unwrap();
        assert_eq!(a.flat(), b.flat());
        let c = ModelParams::init(&[32, 64, 10], 8).unwrap();
        assert!(a.flat().iter().zip(c.flat()).any(|(x, y)| x != y));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(ModelParams::init(&[], 1), Err(Error::Config(_))));
        assert!(matches!(ModelParams::init(&[5], 1), Err(Error::Config(_))));
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_bias() {
        let m = ModelParams::init(&[32, 64, 10], 3).unwrap();
        for ((w, b), s) in m.layers().into_iter().zip(m.shapes()) {
            let lim = (6.0 / (s.inp + s.out) as f64).sqrt();
            assert!(w.iter().all(|x| x.abs() <= lim));
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_model_gives_uniform_softmax() {
        let shapes = ModelParams::init(&[4, 3, 5], 1).unwrap().shapes().to_vec();
        let zero = ModelParams::from_flat(shapes, vec![0.0; 4 * 3 + 3 + 3 * 5 + 5]).unwrap();
        let out = zero.forward(&[1.0, -2.0, 3.0, 0.5], 4).unwrap();
        assert!(out.logits.iter().all(|&z| z == 0.0));
        let mut p = out.logits.clone();
        softmax_in_place(&mut p);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_single_layer_returns_one_hot_logits() {
        let m = 4;
        let mut w = vec![0.0; m * m];
        for i in 0..m {
            w[i * m + i] = 1.0;
        }
        let model =
            ModelParams::from_layers(&[(w, vec![0.0; m])], vec![LayerShape { out: m, inp: m }])
                .unwrap();
        for c in 0..m {
            let mut x = vec![0.0; m];
            x[c] = 1.0;
            let out = model.forward(&x, m).unwrap();
            assert_eq!(out.logits, x);
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let model = ModelParams::init(&[32, 64, 10], 7).unwrap();
        let batch = random_batch(16, 32, 10, 3);
        let out = model.forward(&batch.inputs, 32).unwrap();
        for r in 0..16 {
            let (logits, pen) = naive_forward(&model, &batch.inputs[r * 32..(r + 1) * 32]);
            for (a, b) in out.logits_row(r).iter().zip(&logits) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in out.penultimate[r * 64..(r + 1) * 64].iter().zip(&pen) {
                assert!((a - b).abs() < 1e-10);
                assert!(*a >= 0.0);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = ModelParams::init(&[8, 4, 3], 1).unwrap();
        assert!(matches!(model.forward(&[0.0; 7], 7), Err(Error::Shape(_))));
    }

    #[test]
    fn perfect_prediction_has_zero_logit_gradient() {
        // Single layer with huge weight on the true class.
        let m = 3;
        let mut w = vec![0.0; m * m];
        w[m + 1] = 1e3;
        let model =
            ModelParams::from_layers(&[(w, vec![0.0; m])], vec![LayerShape { out: m, inp: m }])
                .unwrap();
        let batch = Batch::new(vec![0.0, 1.0, 0.0], vec![1], m).unwrap();
        let (loss, grad) = model.loss_and_grad(&batch).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn uniform_prediction_gradient_is_p_minus_y() {
        // With zero weights the bias gradient equals dL/dz.
        let m = 10;
        let shapes = vec![LayerShape { out: m, inp: 4 }];
        let model = ModelParams::from_flat(shapes, vec![0.0; 4 * m + m]).unwrap();
        let c = 6;
        let batch = Batch::new(vec![0.3, -1.0, 2.0, 0.1], vec![c], 4).unwrap();
        let (loss, grad) = model.loss_and_grad(&batch).unwrap();
        assert!((loss - (m as f64).ln()).abs() < 1e-12);
        let bias_grad = &grad[4 * m..];
        for (s, g) in bias_grad.iter().enumerate() {
            let want = 1.0 / m as f64 - if s == c { 1.0 } else { 0.0 };
            assert!((g - want).abs() < 1e-12);
        }
    }

    pub(crate) fn fd_relative_error(model: &ModelParams, batch: &Batch, idx: usize, g: f64) -> f64 {
        let h = 1e-5;
        let mut plus = model.clone();
        plus.flat_mut()[idx] += h;
        let mut minus = model.clone();
        minus.flat_mut()[idx] -= h;
        let fp = plus.loss_and_grad(batch).unwrap().0;
        let fm = minus.loss_and_grad(batch).unwrap().0;
        let num = (fp - fm) / (2.0 * h);
        (g - num).abs() / g.abs().max(num.abs()).max(1e-6)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = ModelParams::init(&[32, 64, 10], 11).unwrap();
        let batch = random_batch(8, 32, 10, 5);
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let mut rng = rng_from(99, &[]);
        for _ in 0..50 {
            let idx = rng.random_range(0..model.dim());
            let err = fd_relative_error(&model, &batch, idx, grad[idx]);
            assert!(err < 1e-4, "coordinate {idx}: relative error {err}");
        }
    }

    #[test]
    fn logit_gradient_has_single_negative_entry() {
        let model = ModelParams::init(&[6, 5, 4], 2).unwrap();
        let range = model.last_weight_range();
        let bias_start = range.end;
        for c in 0..4 {
            let batch = random_batch(1, 6, 4, 40 + c as u64);
            let batch = Batch::new(batch.inputs, vec![c], 6).unwrap();
            let (_, grad) = model.loss_and_grad(&batch).unwrap();
            let dz = &grad[bias_start..bias_start + 4];
            let negatives: Vec<usize> = (0..4).filter(|&s| dz[s] < 0.0).collect();
            assert_eq!(negatives, vec![c]);
        }
    }

    #[test]
    fn representation_is_mean_penultimate() {
        let model = ModelParams::init(&[8, 6, 3], 4).unwrap();
        let batch = random_batch(5, 8, 3, 8);
        let rep = model.representation(&batch).unwrap();
        let mut oracle = vec![0.0; 6];
        for r in 0..5 {
            let (_, pen) = naive_forward(&model, &batch.inputs[r * 8..(r + 1) * 8]);
            for (o, p) in oracle.iter_mut().zip(&pen) {
                *o += p / 5.0;
            }
        }
        for (a, b) in rep.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
            assert!(*a >= 0.0);
        }

        let one = Batch::new(batch.inputs[..8].to_vec(), vec![0], 8).unwrap();
        let pen = model.forward(&one.inputs, 8).unwrap().penultimate;
        assert_eq!(model.representation(&one).unwrap(), pen);
        let twice = Batch::new([&one.inputs[..], &one.inputs[..]].concat(), vec![0, 0], 8).unwrap();
        assert_eq!(model.representation(&twice).unwrap(), pen);
        let empty = Batch {
            inputs: vec![],
            labels: vec![],
            width: 8,
        };
        assert!(model.representation(&empty).is_err());
    }

    fn tiny_dataset(seed: u64) -> LabeledDataset {
        let b = random_batch(12, 6, 3, seed);
        LabeledDataset::new(b.inputs, b.labels, 6, 3).unwrap()
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let model = ModelParams::init(&[6, 5, 3], 1).unwrap();
        let spec = TrainSpec {
            epochs: 3,
            lr: 0.0,
            batch_size: 4,
        };
        let delta = local_train(&model, &tiny_dataset(1), &spec, 9).unwrap();
        assert!(delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_full_batch_step_is_minus_lr_grad() {
        let model = ModelParams::init(&[6, 5, 3], 1).unwrap();
        let data = tiny_dataset(2);
        let spec = TrainSpec {
            epochs: 1,
            lr: 0.1,
            batch_size: data.len(),
        };
        let delta = local_train(&model, &data, &spec, 5).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = model.loss_and_grad(&data.batch(&all)).unwrap();
        for (d, g) in delta.iter().zip(&grad) {
            assert!((d + 0.1 * g).abs() < 1e-12);
        }
    }

    #[test]
    fn local_training_is_deterministic() {
        let model = ModelParams::init(&[6, 5, 3], 1).unwrap();
        let data = tiny_dataset(3);
        let spec = TrainSpec {
            epochs: 5,
            lr: 0.05,
            batch_size: 4,
        };
        let a = local_train(&model, &data, &spec, 77).unwrap();
        let b = local_train(&model, &data, &spec, 77).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_dataset_is_a_training_error() {
        let model = ModelParams::init(&[6, 5, 3], 1).unwrap();
        let data = LabeledDataset::empty(6, 3);
        let spec = TrainSpec {
            epochs: 1,
            lr: 0.1,
            batch_size: 4,
        };
        assert!(matches!(
            local_train(&model, &data, &spec, 1),
            Err(Error::Training(_))
        ));
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(seed in 0u64..1000) {
            let m = ModelParams::init(&[5, 7, 3], seed).unwrap();
            let layers: Vec<(Vec<f64>, Vec<f64>)> =
                m.layers().into_iter().map(|(w, b)| (w.to_vec(), b.to_vec())).collect();
            let back = ModelParams::from_layers(&layers, m.shapes().to_vec()).unwrap();
            prop_assert_eq!(back.flat(), m.flat());
        }

        #[test]
        fn one_step_delta_is_linear_in_lr(lr in 0.001f64..1.0, seed in 0u64..100) {
            let model = ModelParams::init(&[6, 5, 3], seed).unwrap();
            let data = tiny_dataset(seed);
            let mk = |lr| TrainSpec { epochs: 1, lr, batch_size: data.len() };
            let a = local_train(&model, &data, &mk(lr), 1).unwrap();
            let b = local_train(&model, &data, &mk(0.5), 1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - lr / 0.5 * y).abs() < 1e-9);
            }
        }
    }
}
