//! Generate a synthetic Gaussian world and measure how far held-out classes
//! sit from their base parents.

use gdc::synth::{generate, kl_gaussian, CovarianceFamily, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec { covariance_family: CovarianceFamily::RandomSpd, seed: 3, ..SynthSpec::default() };
    let world = generate(&spec)?;
    println!("{} points, dim {}, {} classes", world.dataset.len(), world.dataset.dim(), world.ground_truth.len());
    for (child, parent) in &world.parents {
        let c = &world.ground_truth[child];
        let p = &world.ground_truth[parent];
        let kl = kl_gaussian(&c.mu_vector(), &c.sigma_matrix(), &p.mu_vector(), &p.sigma_matrix())?;
        println!("class {child:>2} <- base {parent:>2}: KL {kl:.3}");
    }
    Ok(())
}
