//! Two-point vs one-point gradient estimation on a quadratic.
//!
//! Shows the worked arithmetic for a forced direction, then Monte-Carlo
//! averages: the symmetric estimator converges to the true gradient, the
//! single-sided one to half of it.
//!
//! ```bash
//! cargo run --release -p fedmezo --example two_point_estimator
//! ```

use std::sync::Arc;

use fedmezo::data::Batch;
use fedmezo::linalg::DenseVector;
use fedmezo::objective::{ObjectiveHandle, QuadraticSpec};
use fedmezo::params::ParamsView;
use fedmezo::rng::SeedStream;
use fedmezo::zoo::{one_point_estimate, two_point_estimate, Direction, ZooConfig};

fn main() -> fedmezo::Result<()> {
    // f(theta) = 0.5 ||theta||^2 at theta = (1, 0): gradient (1, 0).
    let spec = Arc::new(QuadraticSpec::isotropic(2, 1.0, vec![0.0, 0.0], 0.0)?);
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1)?;
    let mut params = ParamsView::from_vec(Arc::clone(obj.layout()), vec![1.0, 0.0])?;
    let batch = Batch::full(1)?;
    let cfg = ZooConfig::new(0.1)?;

    let z = DenseVector::new(vec![1.0, 1.0])?;
    let (g2, e2) = two_point_estimate(&obj, &mut params, &batch, &cfg, Direction::Forced(&z))?;
    let (g1, e1) = one_point_estimate(&obj, &mut params, &batch, &cfg, Direction::Forced(&z))?;
    println!("forced z = (1, 1), mu = 0.1 at theta = (1, 0):");
    println!("  two-point: g = {g2:.3}, e = {:?}", e2.as_slice());
    println!("  one-point: g = {g1:.3}, e = {:?}  (biased form)", e1.as_slice());

    // Monte Carlo: average both estimators over seeded directions.
    let d = 10;
    let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, vec![0.0; d], 0.0)?);
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1)?;
    let mut values = vec![0.0; d];
    values[0] = 3.0;
    values[1] = 4.0;
    let mut params = ParamsView::from_vec(Arc::clone(obj.layout()), values.clone())?;
    let cfg = ZooConfig::new(1e-3)?;
    let samples = 100_000;
    let mut seeds = SeedStream::from_seed(7);
    let mut mean2 = vec![0.0; d];
    let mut mean1 = vec![0.0; d];
    for _ in 0..samples {
        let seed = seeds.next_u64();
        let (_, e) = two_point_estimate(&obj, &mut params, &batch, &cfg, Direction::Seeded(seed))?;
        for (m, v) in mean2.iter_mut().zip(e.as_slice()) {
            *m += v / samples as f64;
        }
        let (_, e) = one_point_estimate(&obj, &mut params, &batch, &cfg, Direction::Seeded(seed))?;
        for (m, v) in mean1.iter_mut().zip(e.as_slice()) {
            *m += v / samples as f64;
        }
    }
    let err = |mean: &[f64], scale: f64| -> f64 {
        mean.iter()
            .zip(&values)
            .map(|(m, g)| (m - scale * g) * (m - scale * g))
            .sum::<f64>()
            .sqrt()
            / (scale * 5.0)
    };
    println!("\nMonte Carlo over {samples} seeded directions (d = {d}, ||grad|| = 5):");
    println!("  two-point mean vs grad:        relative error {:.4}", err(&mean2, 1.0));
    println!("  one-point mean vs grad / 2:    relative error {:.4}", err(&mean1, 0.5));
    Ok(())
}
