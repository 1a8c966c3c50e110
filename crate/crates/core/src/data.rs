//! Synthetic labelled data, non-IID client partitioning, trigger injection
//! and the ground-truth abstract distribution.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::model::Batch;
use crate::rng::{rng_from, SimRng};

/// `len()` samples of `width` features (row-major) with labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<f64>,
    labels: Vec<usize>,
    width: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<f64>, labels: Vec<usize>, width: usize, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() * width {
            return Err(Error::shape(format!(
                "{} labels need {} feature values, got {}",
                labels.len(),
                labels.len() * width,
                samples.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            samples,
            labels,
            width,
            classes,
        })
    }

    pub fn empty(width: usize, classes: usize) -> Self {
        Self {
            samples: Vec::new(),
            labels: Vec::new(),
            width,
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        debug_assert_eq!(x.len(), self.width);
        debug_assert!(label < self.classes);
        self.samples.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.width, self.classes);
        for &i in indices {
            out.push(self.sample(i), self.labels[i]);
        }
        out
    }

    /// Samples at `indices` as a mini-batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Batch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            width: self.width,
        }
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.samples.clone(), self.labels.clone(), self.width)
    }

    /// Append all samples of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.width != self.width || other.classes != self.classes {
            return Err(Error::shape("datasets differ in width or class count"));
        }
        let mut out = self.clone();
        out.samples.extend_from_slice(&other.samples);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of the samples whose label is `class`.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Write as text: a header line `N,width,classes`, then one
    /// `label,x_0,...,x_{width-1}` row per sample. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{},{}", self.len(), self.width, self.classes)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for x in self.sample(i) {
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("missing dataset header".into()))??;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("bad header {header:?}: {e}")))?;
        let [n, width, classes] = dims[..] else {
            return Err(Error::Data(format!("header {header:?} needs N,width,classes")));
        };
        let mut out = Self::empty(width, classes);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("row {row}: bad label: {e}")))?;
            let x: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("row {row}: bad feature: {e}")))?;
            if x.len() != width || label >= classes {
                return Err(Error::Data(format!("row {row} does not match the header")));
            }
            out.push(&x, label);
        }
        if out.len() != n {
            return Err(Error::Data(format!("header says {n} rows, found {}", out.len())));
        }
        Ok(out)
    }
}

/// Class-conditional isotropic Gaussians with unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTask {
    means: Vec<Vec<f64>>,
}

/// Norm of every class mean. With unit noise this keeps pairwise mean
/// distances near 4.9, well above the required 2.
pub const MEAN_NORM: f64 = 3.5;
const MIN_MEAN_DISTANCE: f64 = 2.0;

impl GaussianTask {
    /// Draw `classes` means on the sphere of radius [`MEAN_NORM`], rejecting
    /// any draw closer than 2 to an earlier mean.
    pub fn new(classes: usize, width: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if width == 0 {
            return Err(Error::config("feature width must be positive"));
        }
        let mut rng = rng_from(seed, &[crate::rng::stream::DATA]);
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while means.len() < classes {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::config(format!(
                    "cannot place {classes} separated means in {width} dimensions"
                )));
            }
            let dir: Vec<f64> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = crate::vector::norm(&dir);
            if n == 0.0 {
                continue;
            }
            let mu = crate::vector::scaled(&dir, MEAN_NORM / n);
            if means
                .iter()
                .all(|m| crate::vector::squared_distance(m, &mu).sqrt() >= MIN_MEAN_DISTANCE)
            {
                means.push(mu);
            }
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn width(&self) -> usize {
        self.means[0].len()
    }

    /// `per_class` samples of every class, grouped by class.
    pub fn sample(&self, per_class: usize, rng: &mut SimRng) -> LabeledDataset {
        let mut out = LabeledDataset::empty(self.width(), self.classes());
        let mut x = vec![0.0; self.width()];
        for (c, mu) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                for (xi, m) in x.iter_mut().zip(mu) {
                    let noise: f64 = StandardNormal.sample(rng);
                    *xi = m + noise;
                }
                out.push(&x, c);
            }
        }
        out
    }
}

/// A linearly learnable `m`-class dataset with `per_class` samples per class.
pub fn gen_dataset(m: usize, r_in: usize, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::config("per_class must be at least 1"));
    }
    let task = GaussianTask::new(m, r_in, seed)?;
    let mut rng = rng_from(seed, &[crate::rng::stream::TEST, 0]);
    Ok(task.sample(per_class, &mut rng))
}

/// Split `data` across `n` clients.
///
/// A `1 - p` fraction is shuffled and dealt out evenly. The remaining `p`
/// fraction is sorted by label, cut into `shards` contiguous shards, and each
/// client receives `shards / n` randomly chosen shards.
pub fn partition_noniid(
    data: &LabeledDataset,
    n: usize,
    p: f64,
    shards: usize,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if n == 0 {
        return Err(Error::config("need at least one client"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("non-IID degree {p} outside [0, 1]")));
    }
    if shards == 0 || !shards.is_multiple_of(n) {
        return Err(Error::config(format!(
            "{shards} shards cannot be split evenly across {n} clients"
        )));
    }
    let total = data.len();
    let mut rng = rng_from(seed, &[crate::rng::stream::PARTITION]);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);

    let skewed = ((total as f64) * p).round() as usize;
    let (uniform, rest) = order.split_at(total - skewed);

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];
    let base = uniform.len() / n;
    let extra = uniform.len() % n;
    let mut at = 0;
    for (c, slot) in assigned.iter_mut().enumerate() {
        let take = base + usize::from(c < extra);
        slot.extend_from_slice(&uniform[at..at + take]);
        at += take;
    }

    let mut sorted = rest.to_vec();
    sorted.sort_by_key(|&i| (data.labels()[i], i));
    let mut shard_ids: Vec<usize> = (0..shards).collect();
    shard_ids.shuffle(&mut rng);
    let per_client = shards / n;
    for (c, ids) in shard_ids.chunks(per_client).enumerate() {
        for &s in ids {
            let lo = s * sorted.len() / shards;
            let hi = (s + 1) * sorted.len() / shards;
            assigned[c].extend_from_slice(&sorted[lo..hi]);
        }
    }
    Ok(assigned.iter().map(|idx| data.subset(idx)).collect())
}

/// `A[i][j] = 1` iff client `j` holds more than `tau` records of class `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractDistribution {
    pub matrix: BinaryMatrix,
    pub tau: usize,
}

pub fn ground_truth_abstract(clients: &[LabeledDataset], tau: usize) -> Result<AbstractDistribution> {
    let m = clients
        .first()
        .map(LabeledDataset::classes)
        .ok_or_else(|| Error::Data("no clients".into()))?;
    let mut matrix = BinaryMatrix::zeros(m, clients.len());
    for (j, c) in clients.iter().enumerate() {
        if c.classes() != m {
            return Err(Error::shape("clients disagree on class count"));
        }
        for (i, &count) in c.class_counts().iter().enumerate() {
            matrix.set(i, j, count > tau);
        }
    }
    Ok(AbstractDistribution { matrix, tau })
}

/// Fixed feature values written at fixed positions, plus the label the
/// attacker wants triggered inputs mapped to.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPattern {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub target_label: usize,
}

impl TriggerPattern {
    pub fn validate(&self, width: usize, classes: usize) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::config("trigger indices and values differ in length"));
        }
        if self.indices.is_empty() {
            return Err(Error::config("trigger has no feature positions"));
        }
        let mut seen = self.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.indices.len() {
            return Err(Error::config("trigger indices must be distinct"));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= width) {
            return Err(Error::config(format!("trigger index {bad} outside [0, {width})")));
        }
        if self.target_label >= classes {
            return Err(Error::config(format!(
                "target label {} outside [0, {classes})",
                self.target_label
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            x[i] = v;
        }
    }

    /// Split the pattern into `parts` contiguous groups of positions.
    pub fn split(&self, parts: usize) -> Result<Vec<TriggerPattern>> {
        if parts == 0 {
            return Err(Error::config("cannot split a trigger into zero parts"));
        }
        let len = self.indices.len();
        (0..parts)
            .map(|k| {
                let lo = k * len / parts;
                let hi = (k + 1) * len / parts;
                if lo == hi {
                    return Err(Error::config(format!(
                        "trigger part {k} of {parts} has no positions"
                    )));
                }
                Ok(TriggerPattern {
                    indices: self.indices[lo..hi].to_vec(),
                    values: self.values[lo..hi].to_vec(),
                    target_label: self.target_label,
                })
            })
            .collect()
    }
}

/// Triggered, relabelled copies of `count` distinct random samples of `ds`.
pub fn triggered_copies(
    ds: &LabeledDataset,
    trig: &TriggerPattern,
    count: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    trig.validate(ds.width(), ds.classes())?;
    if count > ds.len() {
        return Err(Error::Data(format!(
            "cannot poison {count} samples from a pool of {}",
            ds.len()
        )));
    }
    let mut rng = rng_from(seed, &[crate::rng::stream::POISON]);
    let picks = rand::seq::index::sample(&mut rng, ds.len(), count);
    let mut out = LabeledDataset::empty(ds.width(), ds.classes());
    for i in picks.iter() {
        let mut x = ds.sample(i).to_vec();
        trig.apply(&mut x);
        out.push(&x, trig.target_label);
    }
    Ok(out)
}

/// `ds` followed by `count` triggered copies of randomly chosen samples.
pub fn inject_trigger(
    ds: &LabeledDataset,
    trig: &TriggerPattern,
    count: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    ds.concat(&triggered_copies(ds, trig, count, seed)?)
}

/// Draw `count` sample indices uniformly without replacement.
pub fn sample_indices(rng: &mut SimRng, len: usize, count: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, len, count.min(len)).into_vec();
    v.sort_unstable();
    v
}

/// Mean over clients of the standard deviation of their class counts.
pub fn mean_class_count_spread(clients: &[LabeledDataset]) -> f64 {
    let spreads: Vec<f64> = clients
        .iter()
        .map(|c| {
            let counts: Vec<f64> = c.class_counts().iter().map(|&x| x as f64).collect();
            crate::vector::std_dev(&counts)
        })
        .collect();
    crate::vector::mean(&spreads)
}
