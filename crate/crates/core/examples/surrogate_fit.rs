//! Fit a GP to Sobol-sampled values of a 2D test function.

use fda::surrogate::{sobol_points, GpBounds, GpModel};

fn f(x: &[f64]) -> f64 {
    (3.0 * x[0]).sin() + x[1] * x[1]
}

fn main() {
    let train = sobol_points(2, 32, 0).expect("sobol points");
    let ys: Vec<f64> = train.iter().map(|x| f(x)).collect();
    let gp = GpModel::fit(&train, &ys, &GpBounds::for_data(&train, &ys)).expect("gp fits");
    println!("{:?}", gp.hyperparams());

    let probe = sobol_points(2, 200, 1000).expect("sobol points");
    let (means, vars) = gp.predict(&probe).expect("predicts");
    let rmse = (probe
        .iter()
        .zip(&means)
        .map(|(x, m)| (f(x) - m).powi(2))
        .sum::<f64>()
        / probe.len() as f64)
        .sqrt();
    let mean_sd = vars.iter().map(|v| v.sqrt()).sum::<f64>() / vars.len() as f64;
    println!("held-out rmse {rmse:.2e}, mean predictive sd {mean_sd:.2e}");
}
