//! Power transforms and the automatic choice between them.

use gdc::transforms::{apply_transform, select_transform, tukey, yeo_johnson, TransformChoice};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [0.0, 0.25, 1.0, 4.0];
    for beta in [0.0, 0.5, 1.0] {
        println!("tukey       beta {beta}: {:?}", tukey(&x, beta)?);
    }
    let y = [-3.0, -1.0, 0.0, 3.0];
    for beta in [0.0, 0.5, 2.0] {
        println!("yeo-johnson beta {beta}: {:?}", yeo_johnson(&y, beta));
    }

    let world = gdc::synth::generate(&gdc::synth::SynthSpec { points_per_class: 10, ..Default::default() })?;
    let kind = select_transform(&world.dataset)?;
    println!("synthetic features get {kind:?}");
    let t = apply_transform(&world.dataset, TransformChoice::new(kind, 0.5))?;
    println!("first transformed point: {:?}", &t.point(0)[..4]);
    Ok(())
}
