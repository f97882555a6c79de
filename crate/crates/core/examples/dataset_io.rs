//! Write a dataset in both formats, read it back and inspect its splits.

use gdc::dataset::{load_features, write_features, FileFormat, Split};
use gdc::synth::{generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec { points_per_class: 20, ..SynthSpec::default() })?;
    let dir = std::env::temp_dir().join("gdc-dataset-io");
    std::fs::create_dir_all(&dir)?;
    for (name, format) in [("features.gdcf", FileFormat::Binary), ("features.csv", FileFormat::Csv)] {
        let path = dir.join(name);
        let manifest = dir.join("manifest.json");
        write_features(&world.dataset, &path, &manifest, format)?;
        let back = load_features(&path, &manifest, format)?;
        let exact = back.values() == world.dataset.values();
        println!("{}: {} bytes, {} points, bit-exact {exact}", name, std::fs::metadata(&path)?.len(), back.len());
    }
    for split in Split::ALL {
        let part = world.dataset.partition(split);
        println!("{split}: {} classes, {} points", part.num_classes(), part.num_points());
    }
    Ok(())
}
