//! Library-level checks of the generator, source training and full runs.

use glode::global::PrototypeBank;
use glode::pipeline::{pseudo_report, run, RunConfig};
use glode::refine::DenoiseFlags;
use glode::synth::{generate, SynthConfig};
use glode::trainer::{accuracy, assign_initial_pseudo, train_source, TrainConfig};
use glode::vecmath::{angle_degrees, l2_normalize};
use glode::{Dataset, Split};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_source: 1000,
        n_target: 600,
        n_target_test: 150,
        seed,
        ..SynthConfig::default()
    }
}

fn quick(epochs: usize) -> RunConfig {
    RunConfig {
        epochs,
        ..RunConfig::benchmark()
    }
}

#[test]
fn initial_prototypes_point_at_generator_centroids() {
    let synth = generate(&SynthConfig::default()).unwrap();
    let ds = &synth.dataset;
    let source: Vec<(&[f64], usize)> = ds
        .split(Split::Source)
        .map(|r| (r.embedding.values(), r.gold.unwrap()))
        .collect();
    let bank = PrototypeBank::init(ds.n_classes(), ds.dim(), 0.99, &source, &[]).unwrap();
    for (c, centroid) in synth.truth.centroids.iter().enumerate() {
        let angle = angle_degrees(bank.prototype(c), &l2_normalize(centroid).unwrap());
        assert!(angle <= 15.0, "class {c}: {angle:.2}°");
    }
}

#[test]
fn unshifted_well_separated_source_probe_is_near_perfect() {
    let cfg = SynthConfig {
        shift_magnitude: 0.0,
        center_sep: 10.0,
        seed: 1,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap().dataset;
    let (probe, losses) = train_source(&ds, &TrainConfig::default()).unwrap();
    let acc = accuracy(&probe, &ds, Split::TargetTest).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
    assert!(losses.last() < losses.first());
}

#[test]
fn default_benchmark_starts_in_the_noisy_band() {
    let mut ds = generate(&SynthConfig::default()).unwrap().dataset;
    let (probe, _) = train_source(&ds, &TrainConfig::default()).unwrap();
    assign_initial_pseudo(&probe, &mut ds).unwrap();
    let f1 = pseudo_report(&ds).unwrap().f1;
    assert!((0.55..=0.80).contains(&f1), "initial pseudo F1 {f1}");
}

#[test]
fn no_denoise_curve_is_flat_and_runs_repeat_exactly() {
    let ds = generate(&small(3)).unwrap().dataset;
    let off = RunConfig {
        flags: DenoiseFlags {
            global: false,
            local: false,
            ..DenoiseFlags::default()
        },
        ..quick(4)
    };
    let out = run(ds.clone(), &off).unwrap();
    assert!(out
        .metrics
        .iter()
        .all(|m| m.pseudo_f1 == out.initial_pseudo_f1));

    let a = run(ds.clone(), &quick(4)).unwrap();
    let b = run(ds, &quick(4)).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.dataset, b.dataset);
}

#[test]
fn betas_follow_the_linear_schedule() {
    let ds = generate(&small(4)).unwrap().dataset;
    let out = run(ds, &quick(8)).unwrap();
    for m in &out.metrics {
        let expected = 0.95 - 0.15 * (m.epoch - 1) as f64 / 7.0;
        assert!(
            (m.beta - expected).abs() < 1e-12,
            "epoch {}: {}",
            m.epoch,
            m.beta
        );
    }
}

#[test]
fn metrics_report_thresholds_and_complete_direction_counts() {
    let ds = generate(&small(6)).unwrap().dataset;
    let out = run(ds, &quick(3)).unwrap();
    for m in &out.metrics {
        assert_eq!(m.thresholds_global.len(), 5);
        assert_eq!(m.thresholds_local.len(), 5);
        assert!(m.thresholds_local.iter().all(|t| (0.0..=1.0).contains(t)));
        assert!(m.thresholds_global.iter().all(|t| (-1.0..=1.0).contains(t)));
        let s = m.direction_stats;
        assert_eq!(s.skip + s.single + s.multi, 600);
    }
}

#[test]
fn drift_moves_target_embeddings_and_stays_deterministic() {
    let ds = generate(&small(7)).unwrap().dataset;
    let cfg = RunConfig {
        drift_eta: 0.2,
        ..quick(3)
    };
    let a = run(ds.clone(), &cfg).unwrap();
    let b = run(ds.clone(), &cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    let moved = |out: &Dataset| {
        out.records
            .iter()
            .zip(&ds.records)
            .filter(|(x, y)| x.embedding != y.embedding)
            .map(|(x, _)| x.split)
            .collect::<Vec<_>>()
    };
    let changed = moved(&a.dataset);
    assert_eq!(changed.len(), 600);
    assert!(changed.iter().all(|s| *s == Split::Target));
}

#[test]
fn wide_embeddings_are_projected_for_denoising() {
    let cfg = SynthConfig {
        dim: 160,
        ..small(8)
    };
    let ds = generate(&cfg).unwrap().dataset;
    let out = run(ds.clone(), &quick(2)).unwrap();
    assert_eq!(out.metrics.len(), 2);
    assert!(out.metrics.iter().all(|m| m.pseudo_f1.is_finite()));
    // Denoising happens in the projected space; the records keep their input.
    assert!(out
        .dataset
        .records
        .iter()
        .zip(&ds.records)
        .all(|(x, y)| x.embedding == y.embedding));
}

#[test]
fn label_flips_are_counted_and_lower_initial_quality() {
    let ds = generate(&small(9)).unwrap().dataset;
    let clean = run(ds.clone(), &quick(1)).unwrap();
    let noisy = run(
        ds,
        &RunConfig {
            flip_rate: 0.2,
            ..quick(1)
        },
    )
    .unwrap();
    assert_eq!(noisy.flipped.len(), 120);
    assert!(
        noisy.initial_pseudo_f1 < clean.initial_pseudo_f1,
        "{} vs {}",
        noisy.initial_pseudo_f1,
        clean.initial_pseudo_f1
    );
}
