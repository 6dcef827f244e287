//! Solver properties checked by running the flow solver.

mod common;

use fda::encoding::Bitmap;
use fda::lbm::{derive_physics, simulate, LatticeState, LbmConfig, Physics};
use proptest::prelude::*;

fn disk(radius: f64) -> Bitmap {
    let n = 64;
    let c = (n as f64 - 1.0) / 2.0;
    let cells = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
            x * x + y * y <= radius * radius
        })
        .collect();
    Bitmap::from_cells(n, cells).unwrap()
}

#[test]
fn smallest_disk_accelerates_the_flow() {
    let config = LbmConfig::desk();
    let u_in = derive_physics(&config).unwrap().u_in;
    assert!((u_in - 0.075 / 3f64.sqrt()).abs() < 1e-15);
    let m = simulate(&disk(3.1), &config).unwrap();
    assert!(m.u_max > 0.0433, "u_max {}", m.u_max);
}

#[test]
fn symmetric_disk_has_no_lift_before_shedding() {
    let config = LbmConfig {
        warmup_steps: 250,
        measure_steps: 300,
        ..LbmConfig::desk()
    };
    let m = simulate(&disk(10.0), &config).unwrap();
    assert!(m.mean_drag > 0.0);
    assert!(
        m.mean_lift.abs() < 0.05 * m.mean_drag,
        "lift {} drag {}",
        m.mean_lift,
        m.mean_drag
    );
}

#[test]
fn enstrophy_grows_with_nested_disks() {
    let config = LbmConfig::desk();
    let e: Vec<f64> = [6.0, 10.0, 14.0]
        .iter()
        .map(|&r| simulate(&disk(r), &config).unwrap().enstrophy)
        .collect();
    assert!(e[0] <= e[1] && e[1] <= e[2], "{e:?}");
}

#[test]
fn taylor_green_converges_under_diffusive_refinement() {
    // Halving the spacing halves the lattice velocity and quadruples the
    // step count at fixed lattice viscosity.
    let nu = 0.01;
    let coarse = common::taylor_green_error(32, 0.04, nu, 250);
    let fine = common::taylor_green_error(64, 0.02, nu, 1000);
    assert!(fine < coarse / 2.5, "coarse {coarse:.3e} fine {fine:.3e}");
}

#[test]
fn rest_state_is_a_fixed_point() {
    let mut state = LatticeState::periodic(16, 16);
    state.init_equilibrium(|_, _| (1.0, 0.0, 0.0));
    let before = state.populations().to_vec();
    let physics = Physics::from_viscosity(7.1e-4, 0.0);
    for _ in 0..500 {
        state.step(&physics).unwrap();
    }
    for (a, b) in before.iter().zip(state.populations()) {
        assert!((a - b).abs() <= f64::EPSILON, "{a} {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn periodic_mass_is_conserved(
        amp in 0.0f64..0.05,
        ux in -0.05f64..0.05,
        uy in -0.05f64..0.05,
        nu in 1e-3f64..0.1,
    ) {
        let mut state = LatticeState::periodic(24, 24);
        state.init_equilibrium(|x, y| {
            let phase = 0.3 * x as f64 + 0.2 * y as f64;
            (1.0 + amp * phase.sin(), ux * phase.cos(), uy)
        });
        let m0 = state.total_mass();
        let physics = Physics::from_viscosity(nu, 0.0);
        for _ in 0..300 {
            state.step(&physics).unwrap();
        }
        prop_assert!((state.total_mass() - m0).abs() < 1e-10);
    }
}
