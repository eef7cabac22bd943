//! End-to-end teacher-student run: source training, initial pseudo labels,
//! then per-epoch target training, prototype maintenance and refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{span_f1, EvalReport};
use crate::global::{class_mean_thresholds, PrototypeBank, Thresholds, DEFAULT_ALPHA};
use crate::local::{local_thresholds, NeighborRepository, BENCHMARK_K, DEFAULT_K};
use crate::projection::{RandomProjection, DEFAULT_DENOISE_DIM};
use crate::refine::{denoise_epoch, BetaSchedule, DenoiseFlags, DenoiseState, DirectionStats};
use crate::synth::{apply_drift, apply_label_flips};
use crate::trainer::{self, LinearProbe, TrainConfig};
use crate::types::{Dataset, SoftLabel, Split};
use crate::vecmath;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub flags: DenoiseFlags,
    pub drift_eta: f64,
    pub flip_rate: f64,
    pub denoise_dim: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = BetaSchedule::default();
        RunConfig {
            epochs: schedule.total_epochs,
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            beta_start: schedule.beta_start,
            beta_end: schedule.beta_end,
            flags: DenoiseFlags::default(),
            drift_eta: 0.0,
            flip_rate: 0.0,
            denoise_dim: DEFAULT_DENOISE_DIM,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for the desk-scale synthetic benchmark.
    pub fn benchmark() -> Self {
        RunConfig {
            k: BENCHMARK_K,
            ..RunConfig::default()
        }
    }

    pub fn schedule(&self) -> BetaSchedule {
        BetaSchedule {
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            total_epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.train.validate()?;
        if self.k == 0 {
            return Err(Error::ConfigInvalid("k must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::ConfigInvalid("alpha must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.drift_eta) {
            return Err(Error::ConfigInvalid("drift must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.flip_rate) {
            return Err(Error::ConfigInvalid("flip_rate must lie in [0, 1)".into()));
        }
        if self.denoise_dim == 0 {
            return Err(Error::ConfigInvalid("denoise_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub pseudo_f1: f64,
    pub probe_test_f1: f64,
    pub beta: f64,
    /// Thresholds the epoch's refinement pass compared against.
    pub thresholds_global: Vec<f64>,
    pub thresholds_local: Vec<f64>,
    pub direction_stats: DirectionStats,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub probe: LinearProbe,
    pub initial_pseudo_f1: f64,
    /// Source-training loss per source epoch.
    pub source_losses: Vec<f64>,
    /// Mean step loss of each target epoch.
    pub target_losses: Vec<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub flipped: Vec<u64>,
}

impl RunOutput {
    pub fn final_pseudo_f1(&self) -> f64 {
        self.metrics
            .last()
            .map_or(self.initial_pseudo_f1, |m| m.pseudo_f1)
    }

    pub fn final_test_f1(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.probe_test_f1)
    }
}

/// Span F1 of hard pseudo labels against gold over the target split.
pub fn pseudo_report(dataset: &Dataset) -> Result<EvalReport> {
    let (pred, gold): (Vec<usize>, Vec<usize>) = dataset
        .split(Split::Target)
        .filter_map(|r| Some((r.hard_pseudo()?, r.gold?)))
        .unzip();
    span_f1(&pred, &gold, dataset.n_classes(), dataset.labels.o_index())
}

/// Span F1 of probe predictions against gold over the target-test split.
pub fn probe_test_report(probe: &LinearProbe, dataset: &Dataset) -> Result<EvalReport> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for r in dataset.split(Split::TargetTest) {
        if let Some(g) = r.gold {
            pred.push(probe.predict(r.embedding.values())?);
            gold.push(g);
        }
    }
    span_f1(&pred, &gold, dataset.n_classes(), dataset.labels.o_index())
}

/// Unit embeddings used for every denoising computation, aligned with
/// `dataset.records`.
fn denoise_space(dataset: &Dataset, cfg: &RunConfig) -> Result<(Vec<Vec<f64>>, bool)> {
    let projection = if dataset.dim() > cfg.denoise_dim {
        Some(RandomProjection::new(
            dataset.dim(),
            cfg.denoise_dim,
            cfg.train.seed,
        )?)
    } else {
        None
    };
    let space = dataset
        .records
        .iter()
        .map(|r| {
            let z = match &projection {
                Some(p) => p.apply(&r.embedding)?,
                None => r.embedding.values().to_vec(),
            };
            vecmath::l2_normalize(&z)
                .map_err(|_| Error::ConfigInvalid(format!("record {} has a zero embedding", r.id)))
        })
        .collect::<Result<_>>()?;
    Ok((space, projection.is_some()))
}

struct Boundary {
    repository: NeighborRepository,
    global: Thresholds,
    local: Thresholds,
    /// Per-target local similarities, in target order.
    local_sims: Vec<Vec<f64>>,
}

fn compute_boundary(
    dataset: &Dataset,
    space: &[Vec<f64>],
    bank: &PrototypeBank,
    k: usize,
    epoch: usize,
) -> Result<Boundary> {
    let n = dataset.n_classes();
    let repository = NeighborRepository::build(
        dataset.records.iter().zip(space).filter_map(|(r, z)| {
            let label = r.denoise_label()?;
            Some((r.id, z.as_slice(), label))
        }),
        bank.dim(),
        epoch,
    )?;

    let targets: Vec<(usize, u64)> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Target)
        .map(|(i, r)| (i, r.id))
        .collect();
    let hard: Vec<usize> = targets
        .iter()
        .map(|&(i, id)| {
            dataset.records[i]
                .hard_pseudo()
                .ok_or(Error::MissingPseudo { id })
        })
        .collect::<Result<_>>()?;

    let global_sims: Vec<Vec<f64>> = targets
        .iter()
        .map(|&(i, _)| bank.similarity(&space[i]))
        .collect::<Result<_>>()?;
    let global = class_mean_thresholds(&global_sims, &hard, n, epoch);

    let (local, local_sims) = if repository.is_empty() {
        let t = Thresholds {
            values: vec![0.0; n],
            epoch_computed: epoch,
        };
        (t, Vec::new())
    } else {
        let queries: Vec<(u64, &[f64])> = targets
            .iter()
            .map(|&(i, id)| (id, space[i].as_slice()))
            .collect();
        let local_sims = repository.local_similarities(&queries, k, n)?;
        (local_thresholds(&local_sims, &hard, n, epoch), local_sims)
    };
    Ok(Boundary {
        repository,
        global,
        local,
        local_sims,
    })
}

/// Runs the full pipeline on `dataset` (pseudo labels in the input are
/// ignored and reassigned by the source-trained probe).
pub fn run(mut dataset: Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let o_index = dataset.labels.o_index();

    let (mut probe, source_losses) = trainer::train_source(&dataset, &cfg.train)?;
    trainer::assign_initial_pseudo(&probe, &mut dataset)?;
    let flipped = if cfg.flip_rate > 0.0 {
        apply_label_flips(&mut dataset, cfg.flip_rate, cfg.train.seed)?
    } else {
        Vec::new()
    };
    let initial_pseudo_f1 = pseudo_report(&dataset)?.f1;

    let (mut space, projected) = denoise_space(&dataset, cfg)?;
    let labeled = |split: Split, ds: &Dataset, space: &[Vec<f64>]| -> Vec<(Vec<f64>, usize)> {
        ds.records
            .iter()
            .zip(space)
            .filter(|(r, _)| r.split == split)
            .filter_map(|(r, z)| Some((z.clone(), r.denoise_label()?)))
            .collect()
    };
    let src = labeled(Split::Source, &dataset, &space);
    let tgt = labeled(Split::Target, &dataset, &space);
    let src_refs: Vec<(&[f64], usize)> = src.iter().map(|(z, c)| (z.as_slice(), *c)).collect();
    let tgt_refs: Vec<(&[f64], usize)> = tgt.iter().map(|(z, c)| (z.as_slice(), *c)).collect();
    let dim = space.first().map_or(0, Vec::len);
    let mut bank = PrototypeBank::init(dataset.n_classes(), dim, cfg.alpha, &src_refs, &tgt_refs)?;

    let mut boundary = compute_boundary(&dataset, &space, &bank, cfg.k, 0)?;
    let target_rows: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Target)
        .map(|(i, _)| i)
        .collect();

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut target_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (next_probe, loss) =
            trainer::train_target_epoch(&probe, &dataset, &cfg.train, epoch, |s, t| {
                let mut rows: Vec<usize> = s.iter().chain(t).copied().collect();
                rows.sort_by_key(|&i| dataset.records[i].id);
                bank.ema_update(rows.iter().filter_map(|&i| {
                    let label = dataset.records[i].denoise_label()?;
                    Some((space[i].as_slice(), label))
                }));
            })?;
        probe = next_probe;
        target_losses.push(loss);

        if cfg.drift_eta > 0.0 {
            let labels: Vec<usize> = target_rows
                .iter()
                .map(|&i| {
                    dataset.records[i]
                        .hard_pseudo()
                        .expect("target pseudo assigned")
                })
                .collect();
            let mut moved: Vec<Vec<f64>> = target_rows.iter().map(|&i| space[i].clone()).collect();
            apply_drift(&mut moved, &labels, &bank, cfg.drift_eta)?;
            for (&i, z) in target_rows.iter().zip(moved) {
                if !projected {
                    dataset.records[i]
                        .embedding
                        .values_mut()
                        .copy_from_slice(&z);
                }
                space[i] = z;
            }
        }

        let beta = schedule.beta_at(epoch)?;
        let state = DenoiseState {
            bank: &bank,
            repository: &boundary.repository,
            global_thresholds: &boundary.global,
            local_thresholds: &boundary.local,
            schedule: &schedule,
            flags: cfg.flags,
            k: cfg.k,
            o_index,
            local_sims: (cfg.drift_eta == 0.0 && !boundary.local_sims.is_empty())
                .then_some(boundary.local_sims.as_slice()),
        };
        let views: Vec<(u64, &[f64], &SoftLabel)> = target_rows
            .iter()
            .map(|&i| {
                let r = &dataset.records[i];
                (
                    r.id,
                    space[i].as_slice(),
                    r.pseudo.as_ref().expect("target pseudo assigned"),
                )
            })
            .collect();
        let (updated, stats) = denoise_epoch(&state, &views, epoch)?;
        for (&i, p) in target_rows.iter().zip(updated) {
            dataset.records[i].pseudo = Some(p);
        }

        let used_global = std::mem::take(&mut boundary.global.values);
        let used_local = std::mem::take(&mut boundary.local.values);
        boundary = compute_boundary(&dataset, &space, &bank, cfg.k, epoch)?;

        metrics.push(EpochMetrics {
            epoch,
            pseudo_f1: pseudo_report(&dataset)?.f1,
            probe_test_f1: probe_test_report(&probe, &dataset)?.f1,
            beta,
            thresholds_global: used_global,
            thresholds_local: used_local,
            direction_stats: stats,
        });
    }

    Ok(RunOutput {
        dataset,
        probe,
        initial_pseudo_f1,
        source_losses,
        target_losses,
        metrics,
        flipped,
    })
}
