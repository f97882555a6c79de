//! A short hyperparameter search with median pruning, a resumable log and
//! confirmation of the best trial on the novel split.

use gdc::calibrate::GdcConfig;
use gdc::episodes::EpisodeSpec;
use gdc::search::{confirm_top, tune, Alpha2Mode, Axis, MetricKind, SearchSpace, TrialSpec, TuneSettings};
use gdc::synth::{generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec::default())?;
    let space = SearchSpace {
        beta: Axis::fixed(1.0),
        m: Axis::grid(0.5, 2.0, 0.5),
        k: Axis::grid(2.0, 8.0, 2.0),
        n_samples: Axis::Set(vec![50.0, 100.0]),
        alpha1: Axis::Set(vec![0.0, 1.0]),
        alpha2: Axis::fixed(0.0),
        alpha2_mode: Alpha2Mode::Absolute,
        metrics: vec![MetricKind::SquaredEuclidean, MetricKind::MahalanobisLog],
        delta: Axis::fixed(1.0),
    };
    let settings = TuneSettings {
        space,
        template: GdcConfig::default(),
        trials: 8,
        master_seed: 1,
        trial_spec: TrialSpec { tasks_per_trial: 40, checkpoint: 20, ..TrialSpec::default() },
    };
    let log = std::env::temp_dir().join("gdc-tune-example.jsonl");
    let _ = std::fs::remove_file(&log);
    let trials = tune(&world.dataset, &settings, Some(&log))?;
    for t in &trials {
        println!(
            "trial {}: {:?} m={} k={} n={} {:?} checkpoint {:.3}",
            t.trial,
            t.status,
            t.config.m,
            t.config.k,
            t.config.n_samples,
            t.config.metric,
            t.checkpoint_mean.unwrap_or(f64::NAN)
        );
    }
    for c in confirm_top(&world.dataset, &trials, 1, 100, EpisodeSpec::default(), 5)? {
        println!(
            "best trial {}: validation {:.3}, novel {:.3} ± {:.3}",
            c.trial, c.validation_mean, c.novel_mean, c.novel_ci95
        );
    }
    Ok(())
}
