//! Synthetic span-embedding benchmark: Gaussian class clusters with a
//! per-class source-to-target shift, a broad dominant non-entity cluster,
//! optional explicit pseudo-label flips and per-epoch representation drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::PrototypeBank;
use crate::rng::RngStream;
use crate::types::{Dataset, Embedding, LabelSpace, Record, SoftLabel, Split};
use crate::vecmath;

const CENTROID_STREAM: u64 = 1;
const SHIFT_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;
const FLIP_STREAM: u64 = 4;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Entity classes, not counting the non-entity class.
    pub n_classes: usize,
    pub dim: usize,
    pub o_fraction: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_test: usize,
    pub cluster_sigma: f64,
    /// Minimum distance between class centroids, in units of `cluster_sigma`.
    pub center_sep: f64,
    /// Length of each class's target shift, in units of `cluster_sigma`.
    pub shift_magnitude: f64,
    pub flip_rate: f64,
    pub drift_eta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 4,
            dim: 32,
            o_fraction: 0.8,
            n_source: 1000,
            n_target: 2000,
            n_target_test: 500,
            cluster_sigma: 1.0,
            center_sep: 6.0,
            shift_magnitude: 2.5,
            flip_rate: 0.0,
            drift_eta: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        for (name, v) in [
            ("o_fraction", self.o_fraction),
            ("flip_rate", self.flip_rate),
            ("drift_eta", self.drift_eta),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::ConfigInvalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.cluster_sigma > 0.0 && self.cluster_sigma.is_finite()) {
            return bad("cluster_sigma must be positive");
        }
        if !(self.center_sep >= 0.0 && self.center_sep.is_finite()) {
            return bad("center_sep must be non-negative");
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return bad("shift_magnitude must be non-negative");
        }
        Ok(())
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::synthetic(self.n_classes)
    }
}

/// Generator parameters behind a synthetic dataset, before normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// Source centroid per class (non-entity class last).
    pub centroids: Vec<Vec<f64>>,
    /// Target-minus-source centroid offset per class.
    pub shifts: Vec<Vec<f64>>,
    /// Gold class of every record, in id order.
    pub gold: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn place_centroids(cfg: &SynthConfig, n: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let min_dist = cfg.center_sep * cfg.cluster_sigma;
    let mut scale = min_dist / (cfg.dim as f64).sqrt();
    if scale == 0.0 {
        scale = cfg.cluster_sigma;
    }
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while centroids.len() < n {
        let cand: Vec<f64> = rng
            .normal_vec(cfg.dim)
            .into_iter()
            .map(|x| x * scale)
            .collect();
        if centroids
            .iter()
            .all(|c| vecmath::squared_distance(c, &cand).sqrt() >= min_dist)
        {
            centroids.push(cand);
            attempts = 0;
        } else {
            attempts += 1;
            if attempts == MAX_PLACEMENT_ATTEMPTS {
                scale *= 1.25;
                attempts = 0;
            }
        }
    }
    centroids
}

fn random_direction(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        if let Ok(u) = vecmath::l2_normalize(&rng.normal_vec(dim)) {
            return u;
        }
    }
}

/// Samples a dataset. Ids run over source, then target, then target-test
/// records; every split carries gold labels.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    if cfg.n_source == 0 {
        return Err(Error::EmptySource);
    }
    let labels = cfg.label_space();
    let n = labels.len();
    let o = labels.o_index();
    let root = RngStream::new(cfg.seed);

    let centroids = place_centroids(cfg, n, &mut root.fork(CENTROID_STREAM));
    let mut shift_rng = root.fork(SHIFT_STREAM);
    let shifts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            random_direction(cfg.dim, &mut shift_rng)
                .into_iter()
                .map(|x| x * cfg.shift_magnitude * cfg.cluster_sigma)
                .collect()
        })
        .collect();

    let mut rng = root.fork(SAMPLE_STREAM);
    let mut records = Vec::with_capacity(cfg.n_source + cfg.n_target + cfg.n_target_test);
    let mut gold = Vec::with_capacity(records.capacity());
    let splits = [
        (Split::Source, cfg.n_source),
        (Split::Target, cfg.n_target),
        (Split::TargetTest, cfg.n_target_test),
    ];
    let mut id = 0u64;
    for (split, count) in splits {
        for _ in 0..count {
            let class = if rng.uniform() < cfg.o_fraction {
                o
            } else {
                rng.below(cfg.n_classes)
            };
            let spread = if class == o { 2.0 } else { 1.0 } * cfg.cluster_sigma;
            let shifted = split != Split::Source;
            let raw: Vec<f64> = (0..cfg.dim)
                .map(|j| {
                    let mean = centroids[class][j] + if shifted { shifts[class][j] } else { 0.0 };
                    mean + spread * rng.normal()
                })
                .collect();
            // Stored at file precision so in-memory and reloaded datasets agree.
            let z: Vec<f64> = vecmath::l2_normalize(&raw)?
                .into_iter()
                .map(|v| f64::from(v as f32))
                .collect();
            records.push(Record {
                id,
                split,
                gold: Some(class),
                pseudo: None,
                embedding: Embedding::new(z)?,
            });
            gold.push(class);
            id += 1;
        }
    }
    Ok(SyntheticDataset {
        dataset: Dataset::new(labels, records)?,
        truth: GroundTruth {
            config: cfg.clone(),
            centroids,
            shifts,
            gold,
        },
    })
}

/// Replaces the pseudo label of exactly `round(rate · n_target)` seeded
/// target records with a one-hot on a uniformly drawn wrong class (wrong
/// relative to gold when known, else to the current hard pseudo label).
/// Returns the flipped ids.
pub fn apply_label_flips(dataset: &mut Dataset, rate: f64, seed: u64) -> Result<Vec<u64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::ConfigInvalid("flip_rate must lie in [0, 1)".into()));
    }
    let n = dataset.n_classes();
    let mut targets: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Target)
        .map(|(i, _)| i)
        .collect();
    let count = (rate * targets.len() as f64).round() as usize;
    if count == 0 || n < 2 {
        return Ok(Vec::new());
    }
    let mut rng = RngStream::new(seed).fork(FLIP_STREAM);
    rng.shuffle(&mut targets);
    let mut chosen: Vec<usize> = targets[..count].to_vec();
    chosen.sort_unstable();
    let mut ids = Vec::with_capacity(count);
    for i in chosen {
        let record = &mut dataset.records[i];
        let avoid = record.gold.or_else(|| record.hard_pseudo()).unwrap_or(0);
        let mut wrong = rng.below(n - 1);
        if wrong >= avoid {
            wrong += 1;
        }
        record.pseudo = Some(SoftLabel::one_hot(n, wrong));
        ids.push(record.id);
    }
    Ok(ids)
}

/// Moves each vector toward the prototype of its label:
/// `z ← normalize(z + η (φ_label − z))`.
pub fn apply_drift(
    vectors: &mut [Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    eta: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::ConfigInvalid("drift_eta must lie in [0, 1]".into()));
    }
    if eta == 0.0 {
        return Ok(());
    }
    for (z, &label) in vectors.iter_mut().zip(labels) {
        let phi = bank.prototype(label);
        let moved: Vec<f64> = z.iter().zip(phi).map(|(x, p)| x + eta * (p - x)).collect();
        if let Ok(unit) = vecmath::l2_normalize(&moved) {
            *z = unit;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_source: 100,
            n_target: 200,
            n_target_test: 50,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset.records, b.dataset.records);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dataset.records.len(), 350);
        for r in &a.dataset.records {
            assert!((vecmath::l2_norm(&r.embedding) - 1.0).abs() < 1e-6);
            assert!(r.gold.is_some());
        }
        assert_eq!(a.dataset.count(Split::Target), 200);
    }

    #[test]
    fn centroids_respect_separation() {
        let cfg = small();
        let g = generate(&cfg).unwrap();
        for i in 0..g.truth.centroids.len() {
            for j in 0..i {
                let d =
                    vecmath::squared_distance(&g.truth.centroids[i], &g.truth.centroids[j]).sqrt();
                assert!(d >= cfg.center_sep * cfg.cluster_sigma);
            }
            let shift = vecmath::l2_norm(&g.truth.shifts[i]);
            assert!((shift - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.n_source = 0;
        assert!(matches!(generate(&c), Err(Error::EmptySource)));
        let c = SynthConfig {
            o_fraction: 1.0,
            ..small()
        };
        assert!(matches!(generate(&c), Err(Error::ConfigInvalid(_))));
        let c = SynthConfig {
            cluster_sigma: 0.0,
            ..small()
        };
        assert!(generate(&c).is_err());
    }

    #[test]
    fn flips_hit_exact_count_with_wrong_class() {
        let mut g = generate(&small()).unwrap();
        for r in g.dataset.records.iter_mut() {
            r.pseudo = r.gold.map(|c| SoftLabel::one_hot(5, c));
        }
        let ids = apply_label_flips(&mut g.dataset, 0.3, 9).unwrap();
        assert_eq!(ids.len(), 60);
        let wrong = g
            .dataset
            .split(Split::Target)
            .filter(|r| r.hard_pseudo() != r.gold)
            .count();
        assert_eq!(wrong, 60);
        assert!(g
            .dataset
            .records
            .iter()
            .filter(|r| ids.contains(&r.id))
            .all(|r| r.split == Split::Target));
    }

    #[test]
    fn drift_examples() {
        let bank = PrototypeBank::from_prototypes(vec![vec![1.0, 0.0, 0.0]], 0.99).unwrap();
        let start = vecmath::l2_normalize(&[0.2, 0.9, -0.3]).unwrap();

        let mut v = vec![start.clone()];
        apply_drift(&mut v, &[0], &bank, 0.0).unwrap();
        assert_eq!(v[0], start);

        let mut v = vec![start.clone()];
        apply_drift(&mut v, &[0], &bank, 1.0).unwrap();
        assert_eq!(v[0], vec![1.0, 0.0, 0.0]);

        let mut v = vec![start.clone()];
        let before = vecmath::angle_degrees(&v[0], bank.prototype(0));
        apply_drift(&mut v, &[0], &bank, 0.1).unwrap();
        assert!(vecmath::angle_degrees(&v[0], bank.prototype(0)) < before);
    }
}
