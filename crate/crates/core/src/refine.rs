//! Combines global and local direction vectors into an update decision and
//! blends it into the soft pseudo label with a decaying retention weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::{directions, DirectionVector, PrototypeBank, Thresholds};
use crate::local::NeighborRepository;
use crate::types::SoftLabel;
use crate::vecmath;

/// Linear per-epoch decay of the retention weight β.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub total_epochs: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            beta_start: 0.95,
            beta_end: 0.80,
            total_epochs: 8,
        }
    }
}

impl BetaSchedule {
    pub fn new(beta_start: f64, beta_end: f64, total_epochs: usize) -> Result<Self> {
        let s = BetaSchedule {
            beta_start,
            beta_end,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta_end && self.beta_end <= self.beta_start && self.beta_start < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "beta schedule needs 0 < end <= start < 1, got {} -> {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::ConfigInvalid("total_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// β for a 1-based epoch.
    pub fn beta_at(&self, epoch: usize) -> Result<f64> {
        if epoch == 0 || epoch > self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        if self.total_epochs == 1 {
            return Ok(self.beta_start);
        }
        let frac = (epoch - 1) as f64 / (self.total_epochs - 1) as f64;
        Ok(self.beta_start - (self.beta_start - self.beta_end) * frac)
    }
}

/// L1-normalized direction mixture, or no update at all.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateDecision {
    Skip,
    Update(Vec<f64>),
}

/// `normalize(d_g + d_l)`, or `Skip` when both are empty.
pub fn integrate_directions(global: &DirectionVector, local: &DirectionVector) -> UpdateDecision {
    debug_assert_eq!(global.len(), local.len());
    let sum: Vec<f64> = global
        .bits()
        .iter()
        .zip(local.bits())
        .map(|(g, l)| f64::from(g + l))
        .collect();
    match vecmath::l1_normalize(&sum) {
        Ok(u) => UpdateDecision::Update(u),
        Err(_) => UpdateDecision::Skip,
    }
}

/// `normalize(β p + (1 − β) u)`; `Skip` returns `p` untouched.
pub fn apply_update(p: &SoftLabel, decision: &UpdateDecision, beta: f64) -> SoftLabel {
    match decision {
        UpdateDecision::Skip => p.clone(),
        UpdateDecision::Update(u) => {
            let mixed: Vec<f64> = p
                .iter()
                .zip(u)
                .map(|(pc, uc)| beta * pc + (1.0 - beta) * uc)
                .collect();
            let normalized =
                vecmath::l1_normalize(&mixed).expect("convex mix of distributions has unit mass");
            SoftLabel::from_normalized(normalized)
        }
    }
}

/// Which levels contribute directions, and whether each level is restricted
/// to its argmax class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseFlags {
    pub global: bool,
    pub local: bool,
    pub single_direction: bool,
    /// Also force the O bit when O dominates the neighborhood. Off by default:
    /// with the override, spans whose neighbors still carry stale O labels are
    /// pinned to O and the local level can never pull them out.
    pub local_o_override: bool,
}

impl Default for DenoiseFlags {
    fn default() -> Self {
        DenoiseFlags {
            global: true,
            local: true,
            single_direction: false,
            local_o_override: false,
        }
    }
}

/// Update counts for one refinement pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub skip: usize,
    pub single: usize,
    pub multi: usize,
}

/// Read-only inputs of one refinement pass. Thresholds and repository must
/// come from an earlier epoch boundary than the pass they serve.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseState<'a> {
    pub bank: &'a PrototypeBank,
    pub repository: &'a NeighborRepository,
    pub global_thresholds: &'a Thresholds,
    pub local_thresholds: &'a Thresholds,
    pub schedule: &'a BetaSchedule,
    pub flags: DenoiseFlags,
    pub k: usize,
    pub o_index: usize,
    /// Local similarities already computed against `repository` for the
    /// targets of this pass, in the same order. Only valid while the target
    /// embeddings are unchanged since the repository was built.
    pub local_sims: Option<&'a [Vec<f64>]>,
}

/// A target record as seen by the refinement pass: id, denoise-space unit
/// embedding and current pseudo label.
pub type TargetView<'a> = (u64, &'a [f64], &'a SoftLabel);

impl DenoiseState<'_> {
    fn check_fresh(&self, epoch: usize) -> Result<()> {
        if self.flags.global && self.global_thresholds.epoch_computed >= epoch {
            return Err(Error::StaleThresholds {
                level: "global",
                computed: self.global_thresholds.epoch_computed,
                current: epoch,
            });
        }
        if self.flags.local {
            for (level, computed) in [
                ("local", self.local_thresholds.epoch_computed),
                ("repository", self.repository.epoch_built()),
            ] {
                if computed >= epoch {
                    return Err(Error::StaleThresholds {
                        level,
                        computed,
                        current: epoch,
                    });
                }
            }
        }
        Ok(())
    }

    /// Direction vectors `(d_g, d_l)` for one target record; `cached` skips
    /// the neighbor search.
    pub fn directions_for(
        &self,
        id: u64,
        z: &[f64],
        cached: Option<&[f64]>,
    ) -> Result<(DirectionVector, DirectionVector)> {
        let n = self.bank.len();
        let single = self.flags.single_direction;
        let global = if self.flags.global {
            let sims = self.bank.similarity(z)?;
            directions(
                &sims,
                &self.global_thresholds.values,
                Some(self.o_index),
                single,
            )
        } else {
            DirectionVector::zeros(n)
        };
        let local = if self.flags.local {
            let local_o = self.flags.local_o_override.then_some(self.o_index);
            let computed;
            let sims = match cached {
                Some(sims) => sims,
                None => {
                    computed = self
                        .repository
                        .local_similarity(&self.repository.knn(id, z, self.k)?, n);
                    &computed
                }
            };
            directions(sims, &self.local_thresholds.values, local_o, single)
        } else {
            DirectionVector::zeros(n)
        };
        Ok((global, local))
    }
}

/// One refinement pass over all target records. Decisions are computed
/// against a read-only snapshot; the returned labels are in input order.
pub fn denoise_epoch(
    state: &DenoiseState<'_>,
    targets: &[TargetView<'_>],
    epoch: usize,
) -> Result<(Vec<SoftLabel>, DirectionStats)> {
    let beta = state.schedule.beta_at(epoch)?;
    state.check_fresh(epoch)?;
    if let Some(cache) = state.local_sims {
        if cache.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: cache.len(),
                right: targets.len(),
            });
        }
    }
    let decisions: Vec<UpdateDecision> = if !state.flags.global && !state.flags.local {
        vec![UpdateDecision::Skip; targets.len()]
    } else {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, (id, z, _))| {
                let cached = state.local_sims.map(|c| c[i].as_slice());
                let (g, l) = state.directions_for(*id, z, cached)?;
                Ok(integrate_directions(&g, &l))
            })
            .collect::<Result<_>>()?
    };

    let mut stats = DirectionStats::default();
    let updated = targets
        .iter()
        .zip(&decisions)
        .map(|((_, _, p), d)| {
            match d {
                UpdateDecision::Skip => stats.skip += 1,
                UpdateDecision::Update(u) if u.iter().filter(|x| **x > 0.0).count() == 1 => {
                    stats.single += 1
                }
                UpdateDecision::Update(_) => stats.multi += 1,
            }
            apply_update(p, d, beta)
        })
        .collect();
    Ok((updated, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(bits: &[u8]) -> DirectionVector {
        DirectionVector::from_bits(bits.to_vec())
    }

    #[test]
    fn integrate_examples() {
        let u = integrate_directions(&dv(&[1, 0, 1, 0]), &dv(&[0, 0, 1, 0]));
        let UpdateDecision::Update(u) = u else {
            panic!("expected update")
        };
        assert!((u[0] - 1.0 / 3.0).abs() < 1e-15 && (u[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(u[1], 0.0);
        assert_eq!(
            integrate_directions(&dv(&[0, 0]), &dv(&[0, 0])),
            UpdateDecision::Skip
        );
        assert_eq!(
            integrate_directions(&dv(&[0, 1, 0, 0]), &dv(&[0, 1, 0, 0])),
            UpdateDecision::Update(vec![0.0, 1.0, 0.0, 0.0])
        );
    }

    #[test]
    fn beta_schedule_examples() {
        let s = BetaSchedule::default();
        assert_eq!(s.beta_at(1).unwrap(), 0.95);
        assert!((s.beta_at(8).unwrap() - 0.80).abs() < 1e-15);
        assert!((s.beta_at(2).unwrap() - (0.95 - 0.15 / 7.0)).abs() < 1e-15);
        assert!((s.beta_at(2).unwrap() - 0.928571).abs() < 1e-6);
        assert!(matches!(s.beta_at(0), Err(Error::EpochOutOfRange { .. })));
        assert!(matches!(s.beta_at(9), Err(Error::EpochOutOfRange { .. })));
        let one = BetaSchedule::new(0.9, 0.8, 1).unwrap();
        assert_eq!(one.beta_at(1).unwrap(), 0.9);
        assert!(BetaSchedule::new(0.8, 0.9, 3).is_err());
        assert!(BetaSchedule::new(1.0, 0.9, 3).is_err());
    }

    #[test]
    fn beta_monotone() {
        let s = BetaSchedule::default();
        let betas: Vec<f64> = (1..=8).map(|e| s.beta_at(e).unwrap()).collect();
        assert!(betas.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn apply_update_examples() {
        let p = SoftLabel::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let u = UpdateDecision::Update(vec![0.0, 0.0, 1.0, 0.0]);
        let out = apply_update(&p, &u, 0.9);
        for (a, e) in out.iter().zip([0.63, 0.09, 0.19, 0.09]) {
            assert!((a - e).abs() < 1e-12);
        }
        for (a, b) in apply_update(&p, &u, 1.0).iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(apply_update(&p, &u, 0.0).probs(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(apply_update(&p, &UpdateDecision::Skip, 0.5), p);
    }

    struct Fixture {
        bank: PrototypeBank,
        repo: NeighborRepository,
        global: Thresholds,
        local: Thresholds,
        points: Vec<Vec<f64>>,
        labels: Vec<SoftLabel>,
    }

    fn fixture() -> Fixture {
        let mut rng = crate::rng::RngStream::new(3);
        let n = 3;
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| vecmath::l2_normalize(&rng.normal_vec(6)).unwrap())
            .collect();
        let labels: Vec<SoftLabel> = (0..40).map(|i| SoftLabel::one_hot(n, i % n)).collect();
        let protos = (0..n).map(|c| points[c].clone()).collect();
        let repo = NeighborRepository::build(
            points
                .iter()
                .enumerate()
                .map(|(i, z)| (i as u64, z.as_slice(), i % n)),
            6,
            0,
        )
        .unwrap();
        let thr = |values: Vec<f64>| Thresholds {
            values,
            epoch_computed: 0,
        };
        Fixture {
            bank: PrototypeBank::from_prototypes(protos, 0.99).unwrap(),
            repo,
            global: thr(vec![0.1, 0.2, 0.3]),
            local: thr(vec![0.3, 0.3, 0.3]),
            points,
            labels,
        }
    }

    fn state<'a>(
        f: &'a Fixture,
        schedule: &'a BetaSchedule,
        local_sims: Option<&'a [Vec<f64>]>,
    ) -> DenoiseState<'a> {
        DenoiseState {
            bank: &f.bank,
            repository: &f.repo,
            global_thresholds: &f.global,
            local_thresholds: &f.local,
            schedule,
            flags: DenoiseFlags::default(),
            k: 5,
            o_index: 2,
            local_sims,
        }
    }

    #[test]
    fn cached_local_similarities_match_fresh_search() {
        let f = fixture();
        let schedule = BetaSchedule::default();
        let views: Vec<TargetView<'_>> = f
            .points
            .iter()
            .zip(&f.labels)
            .enumerate()
            .map(|(i, (z, p))| (i as u64, z.as_slice(), p))
            .collect();
        let queries: Vec<(u64, &[f64])> = views.iter().map(|(id, z, _)| (*id, *z)).collect();
        let cache = f.repo.local_similarities(&queries, 5, 3).unwrap();
        let fresh = denoise_epoch(&state(&f, &schedule, None), &views, 1).unwrap();
        let cached = denoise_epoch(&state(&f, &schedule, Some(&cache)), &views, 1).unwrap();
        assert_eq!(fresh, cached);
        assert_eq!(fresh.1.skip + fresh.1.single + fresh.1.multi, 40);
        let short = &cache[..3];
        assert!(matches!(
            denoise_epoch(&state(&f, &schedule, Some(short)), &views, 1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn thresholds_from_the_current_epoch_are_rejected() {
        let mut f = fixture();
        f.local.epoch_computed = 2;
        let schedule = BetaSchedule::default();
        let views: Vec<TargetView<'_>> = vec![(0, f.points[0].as_slice(), &f.labels[0])];
        let err = denoise_epoch(&state(&f, &schedule, None), &views, 2).unwrap_err();
        assert!(matches!(err, Error::StaleThresholds { level: "local", .. }));
        assert!(denoise_epoch(&state(&f, &schedule, None), &views, 3).is_ok());
    }

    fn prob(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n)
            .prop_filter_map("mass", |v| vecmath::l1_normalize(&v).ok())
    }

    proptest! {
        #[test]
        fn shrinkage_law((p, bits) in (2usize..8).prop_flat_map(|n| (prob(n), prop::collection::vec(0u8..=2, n))), beta in 0.0f64..1.0) {
            let g: Vec<u8> = bits.iter().map(|b| u8::from(*b >= 1)).collect();
            let l: Vec<u8> = bits.iter().map(|b| u8::from(*b == 2)).collect();
            let p = SoftLabel::new(p).unwrap();
            let d = integrate_directions(&dv(&g), &dv(&l));
            let out = apply_update(&p, &d, beta);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|x| *x >= 0.0));
            if let UpdateDecision::Update(u) = &d {
                for c in 0..u.len() {
                    if u[c] == 0.0 {
                        prop_assert!((out[c] - beta * p[c]).abs() <= 1e-12);
                    }
                }
            } else {
                prop_assert_eq!(&out, &p);
            }
        }
    }
}
