//! Channel-flow evaluation of bitmap obstacles with a D2Q9 BGK
//! lattice-Boltzmann solver.
//!
//! The solver favours robustness over accuracy: equilibrium inflow, copy
//! outflow, periodic lateral walls and halfway bounce-back on the obstacle.
//! A diverging run is reported as [`LbmError::Diverged`], never as made-up
//! metrics.

mod field;
mod lattice;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{area, Bitmap};
use crate::validate::Violation;

pub use field::{
    enstrophy, read_fdaf, vorticity, write_fdaf, write_snapshot_csv, FlowSnapshot, VelocityField,
    SNAPSHOT_MAGIC,
};
pub use lattice::{
    equilibrium, Boundaries, LatticeState, Physics, StepStats, CX, CY, DIVERGENCE_SPEED, Q, W,
};

/// Reynolds-number reference length: the side of the obstacle bitmap.
pub const CHARACTERISTIC_LENGTH: f64 = 64.0;
pub const SOUND_SPEED: f64 = 0.577_350_269_189_625_8;
const TAU_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum LbmError {
    #[error("relaxation time {tau} is outside (0.5, {TAU_MAX}]")]
    UnstableConfig { tau: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("obstacle placement: {0}")]
    Placement(String),
    #[error("simulation diverged at step {step} in cell ({x}, {y}), speed {speed}")]
    Diverged {
        step: u64,
        x: usize,
        y: usize,
        speed: f64,
    },
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the obstacle bitmap's lower-left cell sits in the channel;
/// `y = None` centres it vertically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstacleOrigin {
    pub x: usize,
    pub y: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbmConfig {
    pub mach: f64,
    pub reynolds: f64,
    pub domain_nx: usize,
    pub domain_ny: usize,
    pub obstacle_origin: ObstacleOrigin,
    pub warmup_steps: usize,
    pub measure_steps: usize,
    pub snapshot_interval: usize,
    /// How many of the most recent snapshots to keep in [`FlowMetrics`].
    pub kept_snapshots: usize,
    /// Length of the smooth start: the fluid begins at rest and the inflow
    /// speed rises as `sin²` over this many warmup steps. Zero starts
    /// impulsively from the inflow equilibrium everywhere.
    pub inflow_ramp_steps: usize,
}

impl Default for LbmConfig {
    fn default() -> Self {
        Self {
            mach: 0.075,
            reynolds: 3900.0,
            domain_nx: 256,
            domain_ny: 128,
            obstacle_origin: ObstacleOrigin { x: 64, y: None },
            warmup_steps: 4000,
            measure_steps: 8000,
            snapshot_interval: 100,
            kept_snapshots: 6,
            inflow_ramp_steps: 2000,
        }
    }
}

impl LbmConfig {
    /// Small domain and short horizon for interactive use.
    pub fn desk() -> Self {
        Self {
            domain_nx: 128,
            domain_ny: 64,
            obstacle_origin: ObstacleOrigin { x: 24, y: None },
            warmup_steps: 500,
            measure_steps: 1500,
            snapshot_interval: 50,
            inflow_ramp_steps: 250,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.mach > 0.0 && self.mach < 0.3) {
            v.push(Violation::new(
                "mach",
                format!("must lie in (0, 0.3), got {}", self.mach),
            ));
        }
        if !(self.reynolds.is_finite() && self.reynolds > 0.0) {
            v.push(Violation::new("reynolds", "must be positive"));
        }
        if v.is_empty() {
            if let Err(LbmError::UnstableConfig { tau }) = derive_physics(self) {
                v.push(Violation::new(
                    "reynolds",
                    format!("relaxation time {tau} outside (0.5, {TAU_MAX}]"),
                ));
            }
        }
        if self.domain_nx < 8 {
            v.push(Violation::new("domain_nx", "must be at least 8"));
        }
        if self.domain_ny < 4 {
            v.push(Violation::new("domain_ny", "must be at least 4"));
        }
        if self.measure_steps == 0 {
            v.push(Violation::new("measure_steps", "must be at least 1"));
        }
        if self.inflow_ramp_steps > self.warmup_steps {
            v.push(Violation::new(
                "inflow_ramp_steps",
                "must not exceed warmup_steps",
            ));
        }
        if self.snapshot_interval == 0 {
            v.push(Violation::new("snapshot_interval", "must be at least 1"));
        }
        v
    }
}

/// Inflow speed from the Mach number (`c_s = 1/√3`), viscosity from the
/// Reynolds number over [`CHARACTERISTIC_LENGTH`], and `τ = 3ν + ½`.
pub fn derive_physics(config: &LbmConfig) -> Result<Physics, LbmError> {
    let u_in = config.mach * SOUND_SPEED;
    let nu = u_in * CHARACTERISTIC_LENGTH / config.reynolds;
    let tau = 3.0 * nu + 0.5;
    if !(tau > 0.5 && tau <= TAU_MAX) {
        return Err(LbmError::UnstableConfig { tau });
    }
    Ok(Physics { u_in, nu, tau })
}

/// Places the bitmap in the channel and initializes the fluid at the
/// inflow equilibrium, or at rest when the inflow is ramped.
pub fn build_domain(bitmap: &Bitmap, config: &LbmConfig) -> Result<LatticeState, LbmError> {
    let physics = derive_physics(config)?;
    let (nx, ny) = (config.domain_nx, config.domain_ny);
    let res = bitmap.resolution();
    let x0 = config.obstacle_origin.x;
    if res > ny {
        return Err(LbmError::Placement(format!(
            "bitmap of {res} rows exceeds channel height {ny}"
        )));
    }
    let y0 = config.obstacle_origin.y.unwrap_or((ny - res) / 2);
    if y0 + res > ny {
        return Err(LbmError::Placement(format!(
            "rows {y0}..{} exceed channel height {ny}",
            y0 + res
        )));
    }
    // Column 0 is the inflow, the last two columns feed the outflow copy.
    if x0 < 1 || x0 + res + 2 > nx {
        return Err(LbmError::Placement(format!(
            "columns {x0}..{} overlap the inflow/outflow columns of a {nx}-wide channel",
            x0 + res
        )));
    }
    let mut solid = vec![false; nx * ny];
    for by in 0..res {
        for bx in 0..res {
            if bitmap.get(bx, by) {
                solid[(y0 + by) * nx + x0 + bx] = true;
            }
        }
    }
    let mut state = LatticeState::new(nx, ny, solid, Boundaries::Channel);
    let u0 = if config.inflow_ramp_steps > 0 {
        0.0
    } else {
        physics.u_in
    };
    state.init_equilibrium(|_, _| (1.0, u0, 0.0));
    Ok(state)
}

/// Measured flow features of one obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// Largest speed over fluid cells during the measurement window
    /// (lattice units).
    pub u_max: f64,
    /// Time average of `½ Σ ω²` over the measurement snapshots.
    pub enstrophy: f64,
    /// Normalized footprint area of the obstacle.
    pub area: f64,
    pub mean_drag: f64,
    pub mean_lift: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<FlowSnapshot>,
}

fn snapshot(state: &LatticeState) -> (FlowSnapshot, f64) {
    let (ux, uy) = state.velocity();
    let field = VelocityField {
        nx: state.nx(),
        ny: state.ny(),
        ux: &ux,
        uy: &uy,
        solid: Some(state.solid_mask()),
        periodic_x: false,
        periodic_y: true,
    };
    let omega = vorticity(&field);
    let e = enstrophy(&omega, Some(state.solid_mask()));
    let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
    (
        FlowSnapshot {
            step: state.time_step(),
            nx: state.nx(),
            ny: state.ny(),
            ux: to32(&ux),
            uy: to32(&uy),
            vorticity: to32(&omega),
        },
        e,
    )
}

fn ramped(physics: &Physics, step: usize, ramp_steps: usize) -> Physics {
    if step >= ramp_steps {
        return *physics;
    }
    let t = step as f64 / ramp_steps as f64;
    Physics {
        u_in: physics.u_in * (0.5 * std::f64::consts::PI * t).sin().powi(2),
        ..*physics
    }
}

/// Runs warmup then measurement and reports `u_max`, enstrophy and area.
pub fn simulate(bitmap: &Bitmap, config: &LbmConfig) -> Result<FlowMetrics, LbmError> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(LbmError::InvalidConfig(crate::validate::summarize(
            &problems,
        )));
    }
    let physics = derive_physics(config)?;
    let mut state = build_domain(bitmap, config)?;
    for s in 0..config.warmup_steps {
        state.step(&ramped(&physics, s, config.inflow_ramp_steps))?;
    }

    let mut u_max: f64 = 0.0;
    let (mut drag, mut lift) = (0.0, 0.0);
    let mut enstrophy_samples = Vec::new();
    let mut kept = std::collections::VecDeque::new();
    for s in 1..=config.measure_steps {
        let stats = state.step(&physics)?;
        u_max = u_max.max(stats.max_speed);
        drag += stats.force.0;
        lift += stats.force.1;
        if s % config.snapshot_interval == 0
            || (s == config.measure_steps && enstrophy_samples.is_empty())
        {
            let (snap, e) = snapshot(&state);
            enstrophy_samples.push(e);
            if config.kept_snapshots > 0 {
                if kept.len() == config.kept_snapshots {
                    kept.pop_front();
                }
                kept.push_back(snap);
            }
        }
    }
    let steps = config.measure_steps as f64;
    Ok(FlowMetrics {
        u_max,
        enstrophy: enstrophy_samples.iter().sum::<f64>() / enstrophy_samples.len() as f64,
        area: area(bitmap),
        mean_drag: drag / steps,
        mean_lift: lift / steps,
        snapshots: kept.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{express, ShapeGenome};

    #[test]
    fn physics_from_full_scale_flow_parameters() {
        let p = derive_physics(&LbmConfig::default()).unwrap();
        assert!((p.u_in - 0.075 / 3f64.sqrt()).abs() < 1e-15);
        assert!((p.u_in - 0.043301).abs() < 1e-6);
        assert!((p.nu - 7.106e-4).abs() < 1e-6);
        assert!((p.tau - 0.50213).abs() < 1e-5);
    }

    #[test]
    fn zero_mach_is_rejected() {
        let config = LbmConfig {
            mach: 0.0,
            ..LbmConfig::default()
        };
        assert!(
            matches!(derive_physics(&config), Err(LbmError::UnstableConfig { tau }) if tau == 0.5)
        );
        assert!(config.violations().iter().any(|v| v.field == "mach"));
    }

    #[test]
    fn mach_bounds_and_tau_ceiling() {
        let ok = LbmConfig {
            mach: 0.29,
            ..LbmConfig::default()
        };
        assert!(ok.violations().is_empty());
        let fast = LbmConfig {
            mach: 0.5,
            ..LbmConfig::default()
        };
        assert!(fast.violations().iter().any(|v| v.field == "mach"));
        let viscous = LbmConfig {
            reynolds: 1.0,
            ..LbmConfig::default()
        };
        assert!(matches!(
            derive_physics(&viscous),
            Err(LbmError::UnstableConfig { .. })
        ));
    }

    #[test]
    fn placement_is_checked() {
        let bitmap = express(&ShapeGenome::splat(0.5), 64).unwrap();
        let mut config = LbmConfig::desk();
        let state = build_domain(&bitmap, &config).unwrap();
        assert_eq!(
            state.solid_mask().iter().filter(|&&s| s).count(),
            bitmap.solid_count()
        );
        config.obstacle_origin.x = 0;
        assert!(matches!(
            build_domain(&bitmap, &config),
            Err(LbmError::Placement(_))
        ));
        config.obstacle_origin.x = 64;
        assert!(matches!(
            build_domain(&bitmap, &config),
            Err(LbmError::Placement(_))
        ));
        config.obstacle_origin = ObstacleOrigin { x: 24, y: Some(1) };
        assert!(matches!(
            build_domain(&bitmap, &config),
            Err(LbmError::Placement(_))
        ));
        config.domain_ny = 32;
        config.obstacle_origin.y = None;
        assert!(matches!(
            build_domain(&bitmap, &config),
            Err(LbmError::Placement(_))
        ));
    }

    #[test]
    fn short_simulation_is_deterministic() {
        let bitmap = express(&ShapeGenome::splat(0.3), 64).unwrap();
        let config = LbmConfig {
            warmup_steps: 20,
            measure_steps: 40,
            snapshot_interval: 10,
            kept_snapshots: 2,
            inflow_ramp_steps: 10,
            ..LbmConfig::desk()
        };
        let a = simulate(&bitmap, &config).unwrap();
        let b = simulate(&bitmap, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots[1].step, 60);
        assert!(a.u_max >= 0.0 && a.enstrophy >= 0.0);
        assert!((a.area - area(&bitmap)).abs() < 1e-15);
    }
}
