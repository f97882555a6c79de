//! Episodic evaluation with and without calibration on a synthetic world.

use gdc::calibrate::GdcConfig;
use gdc::dataset::Split;
use gdc::episodes::{evaluate, EpisodeSpec, EvalSpec, Pipeline};
use gdc::synth::{generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec::default())?;
    let ds = &world.dataset;
    let pipeline = Pipeline::prepare(ds, 1.0)?;
    let spec = EvalSpec::new(EpisodeSpec::default(), 100, 7);
    let gdc = GdcConfig { beta: 1.0, m: 2.0, k: 2, alpha1: 1.0, alpha2: 0.0, n_samples: 200, ..GdcConfig::default() };
    let plain = GdcConfig { n_samples: 0, ..gdc.clone() };
    for (name, cfg) in [("support only", &plain), ("calibrated", &gdc)] {
        let r = evaluate(ds, &pipeline, Split::Novel, cfg, &spec)?;
        println!("{name:>12}: {:.2} ± {:.2}%", 100.0 * r.mean, 100.0 * r.ci95);
    }
    Ok(())
}
