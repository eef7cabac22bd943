//! Global-level decision: EMA class prototypes, dot-product similarities,
//! per-class dynamic thresholds and binary direction vectors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vecmath;

/// Prototype EMA coefficient.
pub const DEFAULT_ALPHA: f64 = 0.99;

const FALLBACK_PROTOTYPE_SEED: u64 = 0x9107_0c1a;

/// One L2-normalized prototype per class.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    alpha: f64,
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeBank {
    pub fn from_prototypes(prototypes: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::ConfigInvalid(format!("alpha {alpha} outside (0,1)")));
        }
        let prototypes = prototypes
            .iter()
            .map(|p| vecmath::l2_normalize(p))
            .collect::<Result<_>>()?;
        Ok(PrototypeBank { alpha, prototypes })
    }

    /// Mean of normalized source embeddings per class. A class without usable
    /// source records falls back to its target records (hard pseudo labels),
    /// then to a random unit vector seeded by the class index.
    pub fn init(
        n_classes: usize,
        dim: usize,
        alpha: f64,
        source: &[(&[f64], usize)],
        target: &[(&[f64], usize)],
    ) -> Result<Self> {
        let prototypes = (0..n_classes)
            .map(|c| {
                class_mean(source, c, dim)
                    .or_else(|| class_mean(target, c, dim))
                    .unwrap_or_else(|| random_unit(c, dim))
            })
            .collect();
        PrototypeBank::from_prototypes(prototypes, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    /// `φ_c ← normalize(α φ_c + (1 − α) z)` applied once per item, in order.
    pub fn ema_update<'a, I>(&mut self, items: I)
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let alpha = self.alpha;
        for (z, class) in items {
            let phi = &mut self.prototypes[class];
            let mixed: Vec<f64> = phi
                .iter()
                .zip(z)
                .map(|(p, x)| alpha * p + (1.0 - alpha) * x)
                .collect();
            // z = -φ scaled to cancel exactly leaves the prototype in place.
            if let Ok(unit) = vecmath::l2_normalize(&mixed) {
                *phi = unit;
            }
        }
    }

    /// `z · φ_c` for every class.
    pub fn similarity(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(self.prototypes.iter().map(|p| vecmath::dot(z, p)).collect())
    }
}

fn class_mean(items: &[(&[f64], usize)], class: usize, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for (z, c) in items {
        if *c != class {
            continue;
        }
        if let Ok(u) = vecmath::l2_normalize(z) {
            sum.iter_mut().zip(&u).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    vecmath::l2_normalize(&mean).ok()
}

fn random_unit(class: usize, dim: usize) -> Vec<f64> {
    let mut rng = RngStream::new(FALLBACK_PROTOTYPE_SEED).fork(class as u64);
    loop {
        if let Ok(u) = vecmath::l2_normalize(&rng.normal_vec(dim)) {
            return u;
        }
    }
}

/// Per-class similarity thresholds tagged with the epoch boundary they were
/// computed at (0 = bootstrap).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    pub values: Vec<f64>,
    pub epoch_computed: usize,
}

/// Mean similarity to class `c` over records whose hard label is `c`. A class
/// with no such record uses the mean over all records.
pub fn class_mean_thresholds(
    sims: &[Vec<f64>],
    hard_labels: &[usize],
    n_classes: usize,
    epoch: usize,
) -> Thresholds {
    debug_assert_eq!(sims.len(), hard_labels.len());
    let mut sum = vec![0.0; n_classes];
    let mut count = vec![0usize; n_classes];
    let mut all = vec![0.0; n_classes];
    for (s, &y) in sims.iter().zip(hard_labels) {
        sum[y] += s[y];
        count[y] += 1;
        for (a, v) in all.iter_mut().zip(s) {
            *a += v;
        }
    }
    let values = (0..n_classes)
        .map(|c| {
            if count[c] > 0 {
                sum[c] / count[c] as f64
            } else if !sims.is_empty() {
                all[c] / sims.len() as f64
            } else {
                0.0
            }
        })
        .collect();
    Thresholds {
        values,
        epoch_computed: epoch,
    }
}

/// Binary update directions over the label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionVector(Vec<u8>);

impl DirectionVector {
    pub fn zeros(n: usize) -> Self {
        DirectionVector(vec![0; n])
    }

    pub fn from_bits(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|b| *b <= 1));
        DirectionVector(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|b| *b as usize).sum()
    }
}

/// `b^c = 1` iff `sim^c > threshold^c`, plus the optional non-entity
/// override: when the similarity argmax is `o_override`, its bit is set
/// regardless of the threshold. With `single`, only the argmax class may be set, under the
/// same test.
pub fn directions(
    sims: &[f64],
    thresholds: &[f64],
    o_override: Option<usize>,
    single: bool,
) -> DirectionVector {
    debug_assert_eq!(sims.len(), thresholds.len());
    let top = vecmath::hard_label(sims);
    let passes = |c: usize| sims[c] > thresholds[c] || (Some(c) == o_override && top == c);
    let bits = (0..sims.len())
        .map(|c| {
            let allowed = !single || c == top;
            u8::from(allowed && passes(c))
        })
        .collect();
    DirectionVector(bits)
}
