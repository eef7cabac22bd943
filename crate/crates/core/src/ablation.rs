//! Runs the pipeline under each denoising strategy on the same dataset.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::pipeline::{run, EpochMetrics, RunConfig};
use crate::refine::DenoiseFlags;
use crate::types::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Combined,
    NoDenoise,
    GlobalOnly,
    LocalOnly,
    SingleDirection,
}

impl Strategy {
    /// Row order of the comparison table.
    pub const ALL: [Strategy; 5] = [
        Strategy::Combined,
        Strategy::NoDenoise,
        Strategy::GlobalOnly,
        Strategy::LocalOnly,
        Strategy::SingleDirection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Combined => "combined",
            Strategy::NoDenoise => "no_denoise",
            Strategy::GlobalOnly => "global_only",
            Strategy::LocalOnly => "local_only",
            Strategy::SingleDirection => "single_direction",
        }
    }

    /// The strategy's level switches on top of `base`'s remaining options.
    pub fn flags(self, base: DenoiseFlags) -> DenoiseFlags {
        let (global, local, single_direction) = match self {
            Strategy::Combined => (true, true, false),
            Strategy::NoDenoise => (false, false, false),
            Strategy::GlobalOnly => (true, false, false),
            Strategy::LocalOnly => (false, true, false),
            Strategy::SingleDirection => (true, true, true),
        };
        DenoiseFlags {
            global,
            local,
            single_direction,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub initial_pseudo_f1: f64,
    pub final_pseudo_f1: f64,
    pub final_test_f1: f64,
    pub delta_vs_no_denoise: f64,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, strategy: Strategy) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy)
            .expect("every strategy has a row")
    }
}

/// Runs every strategy with `base` otherwise unchanged. Runs are independent
/// and execute concurrently; rows come back in [`Strategy::ALL`] order.
pub fn run_ablation(base: &RunConfig, dataset: &Dataset) -> Result<AblationTable> {
    let outputs = Strategy::ALL
        .par_iter()
        .map(|&strategy| {
            let cfg = RunConfig {
                flags: strategy.flags(base.flags),
                ..base.clone()
            };
            run(dataset.clone(), &cfg).map(|out| (strategy, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = outputs
        .iter()
        .find(|(s, _)| *s == Strategy::NoDenoise)
        .map(|(_, o)| o.final_pseudo_f1())
        .unwrap_or(0.0);
    let rows = outputs
        .into_iter()
        .map(|(strategy, out)| AblationRow {
            strategy,
            initial_pseudo_f1: out.initial_pseudo_f1,
            final_pseudo_f1: out.final_pseudo_f1(),
            final_test_f1: out.final_test_f1(),
            delta_vs_no_denoise: out.final_pseudo_f1() - baseline,
            metrics: out.metrics,
        })
        .collect();
    Ok(AblationTable { rows })
}
