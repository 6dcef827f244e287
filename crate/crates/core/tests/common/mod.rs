//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use fda::lbm::{LatticeState, Physics};

/// Runs a decaying Taylor–Green vortex on an `n`×`n` periodic lattice and
/// returns the relative L2 velocity error against the analytic solution
/// `u(t) = u(0)·exp(−2νk²t)`.
pub fn taylor_green_error(n: usize, u0: f64, nu: f64, steps: usize) -> f64 {
    let k = TAU / n as f64;
    let exact = |x: usize, y: usize, t: f64| {
        let (x, y) = (x as f64, y as f64);
        let decay = (-2.0 * nu * k * k * t).exp();
        (
            -u0 * (k * x).cos() * (k * y).sin() * decay,
            u0 * (k * x).sin() * (k * y).cos() * decay,
        )
    };
    let mut state = LatticeState::periodic(n, n);
    state.init_equilibrium(|x, y| {
        let (ux, uy) = exact(x, y, 0.0);
        let (xf, yf) = (x as f64, y as f64);
        let p = -0.25 * u0 * u0 * ((2.0 * k * xf).cos() + (2.0 * k * yf).cos());
        (1.0 + 3.0 * p, ux, uy)
    });
    let physics = Physics::from_viscosity(nu, 0.0);
    for _ in 0..steps {
        state.step(&physics).expect("Taylor–Green stays stable");
    }
    let (ux, uy) = state.velocity();
    let (mut err, mut norm) = (0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            let (ex, ey) = exact(x, y, steps as f64);
            let i = y * n + x;
            err += (ux[i] - ex).powi(2) + (uy[i] - ey).powi(2);
            norm += ex * ex + ey * ey;
        }
    }
    (err / norm).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Number of 4-connected solid regions in a row-major `n`×`n` mask, found
/// by depth-first search.
pub fn regions(n: usize, cells: &[bool]) -> usize {
    let mut seen = vec![false; cells.len()];
    let mut count = 0;
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % n) as isize, (i / n) as isize);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= n as isize || ny >= n as isize {
                    continue;
                }
                let j = ny as usize * n + nx as usize;
                if cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
