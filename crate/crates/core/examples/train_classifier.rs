//! Train the logistic-regression classifier on a toy problem.

use gdc::classify::{accuracy, predict, train_on, TrainRecipe};
use gdc::dataset::LabeledPoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // three blobs on a line
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for i in 0..90 {
        let c = (i % 3) as u32;
        labels.push(c);
        values.extend([c as f64 * 2.0 + ((i as f64) * 0.7).sin() * 0.4, ((i as f64) * 1.3).cos()]);
    }
    let model = train_on(2, &labels, &values, &TrainRecipe::default())?;
    let query: Vec<LabeledPoint> =
        labels.iter().zip(values.chunks(2)).map(|(&c, v)| LabeledPoint { class_id: c, features: v.to_vec() }).collect();
    println!("training accuracy {:.3}", accuracy(&model, &query)?);
    let (class, probs) = predict(&model, &[2.1, 0.0])?;
    println!("x = (2.1, 0): class {class}, probabilities {probs:.3?}");
    Ok(())
}
