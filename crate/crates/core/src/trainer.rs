//! Linear softmax probe standing in for the span classifier head.
//!
//! The probe is trained on source gold labels first, then produces the
//! initial soft pseudo labels for the target split, and is afterwards trained
//! on source gold plus target pseudo labels one epoch at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Dataset, Record, SoftLabel, Split};
use crate::vecmath;

const SOURCE_STREAM: u64 = 0x5100;
const TARGET_STREAM: u64 = 0x7a00;

/// `softmax(W z + b)` with `W` stored row-major, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    n_classes: usize,
    dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        LinearProbe {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn from_parts(
        n_classes: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != n_classes * dim {
            return Err(Error::LengthMismatch {
                left: weights.len(),
                right: n_classes * dim,
            });
        }
        if bias.len() != n_classes {
            return Err(Error::LengthMismatch {
                left: bias.len(),
                right: n_classes,
            });
        }
        Ok(LinearProbe {
            n_classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of scalar parameters (weights then bias).
    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.len();
        if i < nw {
            &mut self.weights[i]
        } else {
            &mut self.bias[i - nw]
        }
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: z.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| vecmath::dot(row, z) + b)
            .collect())
    }

    pub fn forward(&self, z: &[f64]) -> Result<SoftLabel> {
        let p = vecmath::softmax(&self.logits(z)?);
        Ok(SoftLabel::from_normalized(p))
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        Ok(vecmath::hard_label(&self.logits(z)?))
    }

    /// `self -= lr * grad`.
    fn step(&mut self, grad: &LinearProbe, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    fn add_assign(&mut self, other: &LinearProbe) {
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            *w += g;
        }
        for (b, g) in self.bias.iter_mut().zip(&other.bias) {
            *b += g;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Gold,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_source: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs_source: 20,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid(
                "learning_rate must be non-negative".into(),
            ));
        }
        if self.epochs_source == 0 {
            return Err(Error::ConfigInvalid("epochs_source must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

fn target_of(record: &Record, kind: TargetKind, n_classes: usize) -> Result<SoftLabel> {
    match kind {
        TargetKind::Gold => {
            record
                .gold
                .map(|g| SoftLabel::one_hot(n_classes, g))
                .ok_or(Error::MissingTarget {
                    id: record.id,
                    kind: "gold",
                })
        }
        TargetKind::Pseudo => record.pseudo.clone().ok_or(Error::MissingTarget {
            id: record.id,
            kind: "pseudo",
        }),
    }
}

/// Mean soft cross-entropy over `batch` and its exact gradient.
pub fn loss_and_grad(
    probe: &LinearProbe,
    batch: &[&Record],
    kind: TargetKind,
) -> Result<(f64, LinearProbe)> {
    let mut grad = LinearProbe::zeros(probe.n_classes, probe.dim);
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for record in batch {
        let q = target_of(record, kind, probe.n_classes)?;
        let z = record.embedding.values();
        let p = probe.forward(z)?;
        loss += vecmath::soft_cross_entropy(&p, &q);
        for c in 0..probe.n_classes {
            let delta = (p[c] - q[c]) * scale;
            grad.bias[c] += delta;
            let row = &mut grad.weights[c * probe.dim..(c + 1) * probe.dim];
            for (g, zj) in row.iter_mut().zip(z) {
                *g += delta * zj;
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Classes with no source record carrying that gold label.
pub fn missing_source_classes(dataset: &Dataset) -> Vec<usize> {
    let mut seen = vec![false; dataset.n_classes()];
    for r in dataset.split(Split::Source) {
        if let Some(g) = r.gold {
            seen[g] = true;
        }
    }
    (0..seen.len()).filter(|c| !seen[*c]).collect()
}

/// Mini-batch gradient descent on source cross-entropy. Returns the probe and
/// the mean per-batch loss of every epoch.
pub fn train_source(dataset: &Dataset, cfg: &TrainConfig) -> Result<(LinearProbe, Vec<f64>)> {
    cfg.validate()?;
    let source: Vec<&Record> = dataset.split(Split::Source).collect();
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let mut probe = LinearProbe::zeros(dataset.n_classes(), dataset.dim());
    let root = RngStream::new(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs_source);
    for epoch in 0..cfg.epochs_source {
        let mut rng = root.fork(SOURCE_STREAM + epoch as u64);
        let mut order: Vec<usize> = (0..source.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Record> = chunk.iter().map(|&i| source[i]).collect();
            let (loss, grad) = loss_and_grad(&probe, &batch, TargetKind::Gold)?;
            probe.step(&grad, cfg.learning_rate);
            total += loss;
            steps += 1;
        }
        losses.push(total / steps as f64);
    }
    Ok((probe, losses))
}

/// Sets `pseudo = forward(z)` on every target and target-test record.
pub fn assign_initial_pseudo(probe: &LinearProbe, dataset: &mut Dataset) -> Result<()> {
    let labels: Vec<Option<SoftLabel>> = dataset
        .records
        .par_iter()
        .map(|r| match r.split {
            Split::Source => Ok(None),
            _ => probe.forward(r.embedding.values()).map(Some),
        })
        .collect::<Result<_>>()?;
    for (record, label) in dataset.records.iter_mut().zip(labels) {
        if label.is_some() {
            record.pseudo = label;
        }
    }
    Ok(())
}

/// One epoch on `L_src + L_tgt`. Each step pairs one target batch with one
/// source batch (source batches cycle through a reshuffled order) and sums
/// the two mean losses. `on_step` receives the dataset indices of the
/// source batch followed by the target batch, for prototype maintenance.
///
/// Returns the updated probe and the mean step loss.
pub fn train_target_epoch<F>(
    probe: &LinearProbe,
    dataset: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    mut on_step: F,
) -> Result<(LinearProbe, f64)>
where
    F: FnMut(&[usize], &[usize]),
{
    cfg.validate()?;
    let source: Vec<usize> = index_of(dataset, Split::Source);
    let target: Vec<usize> = index_of(dataset, Split::Target);
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    if let Some(&i) = target
        .iter()
        .find(|&&i| dataset.records[i].pseudo.is_none())
    {
        return Err(Error::MissingPseudo {
            id: dataset.records[i].id,
        });
    }

    let mut rng = RngStream::new(cfg.seed).fork(TARGET_STREAM + epoch as u64);
    let mut target_order = target.clone();
    rng.shuffle(&mut target_order);
    let mut source_order = source.clone();
    rng.shuffle(&mut source_order);
    let mut source_cursor = 0;

    let mut probe = probe.clone();
    let mut total = 0.0;
    let mut steps = 0;
    for tchunk in target_order.chunks(cfg.batch_size) {
        let mut schunk = Vec::with_capacity(cfg.batch_size);
        while schunk.len() < cfg.batch_size.min(source.len()) {
            if source_cursor == source_order.len() {
                rng.shuffle(&mut source_order);
                source_cursor = 0;
            }
            schunk.push(source_order[source_cursor]);
            source_cursor += 1;
        }
        let sbatch: Vec<&Record> = schunk.iter().map(|&i| &dataset.records[i]).collect();
        let tbatch: Vec<&Record> = tchunk.iter().map(|&i| &dataset.records[i]).collect();
        let (ls, mut grad) = loss_and_grad(&probe, &sbatch, TargetKind::Gold)?;
        let (lt, gt) = loss_and_grad(&probe, &tbatch, TargetKind::Pseudo)?;
        grad.add_assign(&gt);
        probe.step(&grad, cfg.learning_rate);
        on_step(&schunk, tchunk);
        total += ls + lt;
        steps += 1;
    }
    let mean = if steps == 0 {
        0.0
    } else {
        total / steps as f64
    };
    Ok((probe, mean))
}

fn index_of(dataset: &Dataset, split: Split) -> Vec<usize> {
    dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split)
        .map(|(i, _)| i)
        .collect()
}

/// Fraction of `split` records whose predicted class equals their gold class.
pub fn accuracy(probe: &LinearProbe, dataset: &Dataset, split: Split) -> Result<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for r in dataset.split(split) {
        if let Some(g) = r.gold {
            n += 1;
            if probe.predict(r.embedding.values())? == g {
                hits += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { hits as f64 / n as f64 })
}
