//! Augment the support set of one task and write it with origin tags.

use gdc::calibrate::GdcConfig;
use gdc::dataset::Split;
use gdc::episodes::{sample_task, task_seed, EpisodeSpec, Pipeline};
use gdc::sampling::{augment_task, Origin};
use gdc::synth::{generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec::default())?;
    let ds = &world.dataset;
    let pipeline = Pipeline::prepare(ds, 1.0)?;
    let config =
        GdcConfig { beta: 1.0, m: 1.0, k: 2, alpha1: 1.0, alpha2: 0.0, n_samples: 100, ..GdcConfig::default() };
    let task = sample_task(ds, &ds.partition(Split::Novel), EpisodeSpec::default(), task_seed(0, 0))?;
    let support = pipeline.transform_points(&task.support)?;
    let set = augment_task(&support, &pipeline.base, &config, task.task_seed)?;
    let sampled = set.origins.iter().filter(|&&o| o == Origin::Sampled).count();
    println!("{} support + {sampled} sampled points", support.len());
    let path = std::env::temp_dir().join("gdc-augmented.gdcf");
    set.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
