//! Calibrate one novel support point and compare it with the class it came from.

use gdc::calibrate::{calibrate_support_point, GdcConfig};
use gdc::dataset::Split;
use gdc::episodes::Pipeline;
use gdc::synth::{generate, kl_gaussian, SynthSpec};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec::default())?;
    let ds = &world.dataset;
    let pipeline = Pipeline::prepare(ds, 1.0)?;
    let config = GdcConfig { beta: 1.0, m: 2.0, k: 2, alpha1: 0.0, alpha2: 0.0, ..GdcConfig::default() };

    let classes = pipeline.base.classes();
    let avg = classes.iter().fold(DMatrix::zeros(ds.dim(), ds.dim()), |acc, c| acc + &c.sigma) / classes.len() as f64;

    let novel = ds.partition(Split::Novel);
    for (id, rows) in novel.iter() {
        let x: Vec<f64> = ds.point(rows[0]).iter().map(|&v| f64::from(v)).collect();
        let cal = calibrate_support_point(&x, &pipeline.base, &config, 0)?;
        let truth = &world.ground_truth[&id];
        let (mu, sigma) = (truth.mu_vector(), truth.sigma_matrix());
        let calibrated = kl_gaussian(&cal.mu_prime, &cal.sigma_prime_s, &mu, &sigma)?;
        let naive = kl_gaussian(&DVector::from_vec(x), &avg, &mu, &sigma)?;
        println!(
            "class {id}: neighbours {:?}, KL calibrated {calibrated:.3} vs naive {naive:.3}",
            cal.weights.iter().map(|(c, w)| format!("{c}:{w:.2}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
