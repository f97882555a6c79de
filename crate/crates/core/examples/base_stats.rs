//! Base-class statistics, distance metrics and the stats cache.

use gdc::stats::{compute_base_stats, load_stats_cache, save_stats_cache, BaseStats, DistanceMetric};
use gdc::synth::{generate, SynthSpec};
use gdc::transforms::{apply_transform, select_transform, TransformChoice};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate(&SynthSpec::default())?;
    let kind = select_transform(&world.dataset)?;
    let data = apply_transform(&world.dataset, TransformChoice::new(kind, 1.0))?;
    let stats = compute_base_stats(&data);
    let path = std::env::temp_dir().join("gdc-base.gdcs");
    save_stats_cache(&path, &stats)?;
    assert_eq!(load_stats_cache(&path)?, stats);
    println!("{} base classes cached at {}", stats.len(), path.display());

    let base = BaseStats::new(stats)?;
    let novel = world.dataset.partition(gdc::dataset::Split::Novel);
    let (id, rows) = novel.iter().next().expect("novel classes");
    let x = data.point(rows[0]);
    for metric in
        [DistanceMetric::SquaredEuclidean, DistanceMetric::MahalanobisLog, DistanceMetric::SquaredDelta { delta: 0.5 }]
    {
        let near: Vec<_> = base.top_k(x, 3, metric)?.iter().map(|n| (n.class_id, n.distance)).collect();
        println!("novel class {id}, {metric:?}: {near:.3?}");
    }
    println!("true parent: {}", world.parents[&id]);
    Ok(())
}
