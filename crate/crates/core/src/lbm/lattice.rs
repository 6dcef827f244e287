//! D2Q9 BGK lattice with precomputed streaming links.

use super::LbmError;

pub const Q: usize = 9;
/// Lattice velocities: rest, axis directions, diagonals.
pub const CX: [i32; Q] = [0, 1, 0, -1, 0, 1, -1, -1, 1];
pub const CY: [i32; Q] = [0, 0, 1, 0, -1, 1, 1, -1, -1];
pub const W: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
pub const OPPOSITE: [usize; Q] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// Any local speed above this (just over the lattice sound speed) marks the
/// state as nonphysical.
pub const DIVERGENCE_SPEED: f64 = 0.57;

const DROP: u32 = u32::MAX;
const BOUNCE: u32 = u32::MAX - 1;

#[inline]
pub fn equilibrium(q: usize, rho: f64, ux: f64, uy: f64) -> f64 {
    let cu = CX[q] as f64 * ux + CY[q] as f64 * uy;
    let usq = ux * ux + uy * uy;
    W[q] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundaries {
    /// Periodic on all four sides.
    Periodic,
    /// Equilibrium inflow on the left column, zero-gradient outflow on the
    /// right column, periodic top and bottom.
    Channel,
}

/// Lattice relaxation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physics {
    pub u_in: f64,
    pub nu: f64,
    pub tau: f64,
}

impl Physics {
    pub fn from_viscosity(nu: f64, u_in: f64) -> Self {
        Self {
            u_in,
            nu,
            tau: 3.0 * nu + 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Largest speed over fluid cells before streaming.
    pub max_speed: f64,
    /// Momentum-exchange force on the solid cells.
    pub force: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct LatticeState {
    nx: usize,
    ny: usize,
    boundaries: Boundaries,
    /// Populations, `q`-major planes of `nx * ny` (row-major, `y * nx + x`).
    f: Vec<f64>,
    scratch: Vec<f64>,
    solid: Vec<bool>,
    links: Vec<u32>,
    time_step: u64,
}

impl LatticeState {
    pub fn new(nx: usize, ny: usize, solid: Vec<bool>, boundaries: Boundaries) -> Self {
        assert!(nx >= 3 && ny >= 1);
        assert_eq!(solid.len(), nx * ny);
        let n = nx * ny;
        let mut links = vec![DROP; Q * n];
        for y in 0..ny {
            for x in 0..nx {
                let cell = y * nx + x;
                if solid[cell] {
                    continue;
                }
                for q in 0..Q {
                    let ty = (y as i64 + CY[q] as i64).rem_euclid(ny as i64) as usize;
                    let tx = x as i64 + CX[q] as i64;
                    let tx = match boundaries {
                        Boundaries::Periodic => tx.rem_euclid(nx as i64) as usize,
                        Boundaries::Channel if tx < 0 || tx >= nx as i64 => continue,
                        Boundaries::Channel => tx as usize,
                    };
                    let target = ty * nx + tx;
                    links[q * n + cell] = if solid[target] { BOUNCE } else { target as u32 };
                }
            }
        }
        Self {
            nx,
            ny,
            boundaries,
            f: vec![0.0; Q * n],
            scratch: vec![0.0; Q * n],
            solid,
            links,
            time_step: 0,
        }
    }

    /// Fully periodic domain without obstacles.
    pub fn periodic(nx: usize, ny: usize) -> Self {
        Self::new(nx, ny, vec![false; nx * ny], Boundaries::Periodic)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn boundaries(&self) -> Boundaries {
        self.boundaries
    }

    pub fn time_step(&self) -> u64 {
        self.time_step
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid
    }

    pub fn populations(&self) -> &[f64] {
        &self.f
    }

    /// Sets every fluid cell to the equilibrium of `(rho, ux, uy)` returned
    /// by `field(x, y)`.
    pub fn init_equilibrium(&mut self, mut field: impl FnMut(usize, usize) -> (f64, f64, f64)) {
        let n = self.nx * self.ny;
        for y in 0..self.ny {
            for x in 0..self.nx {
                let cell = y * self.nx + x;
                let (rho, ux, uy) = if self.solid[cell] {
                    (0.0, 0.0, 0.0)
                } else {
                    field(x, y)
                };
                for q in 0..Q {
                    self.f[q * n + cell] = if self.solid[cell] {
                        0.0
                    } else {
                        equilibrium(q, rho, ux, uy)
                    };
                }
            }
        }
    }

    /// Density and velocity of one cell (zeros for solid cells).
    pub fn moments(&self, x: usize, y: usize) -> (f64, f64, f64) {
        let n = self.nx * self.ny;
        let cell = y * self.nx + x;
        if self.solid[cell] {
            return (0.0, 0.0, 0.0);
        }
        let (mut rho, mut mx, mut my) = (0.0, 0.0, 0.0);
        for q in 0..Q {
            let fq = self.f[q * n + cell];
            rho += fq;
            mx += fq * CX[q] as f64;
            my += fq * CY[q] as f64;
        }
        (rho, mx / rho, my / rho)
    }

    pub fn total_mass(&self) -> f64 {
        self.f.iter().sum()
    }

    /// Velocity components of every cell (zero in solids).
    pub fn velocity(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.nx * self.ny;
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        for y in 0..self.ny {
            for x in 0..self.nx {
                let (_, u, v) = self.moments(x, y);
                ux[y * self.nx + x] = u;
                uy[y * self.nx + x] = v;
            }
        }
        (ux, uy)
    }

    /// One BGK collision followed by streaming with halfway bounce-back.
    pub fn step(&mut self, physics: &Physics) -> Result<StepStats, LbmError> {
        let (nx, ny) = (self.nx, self.ny);
        let n = nx * ny;
        let omega = 1.0 / physics.tau;
        let mut max_speed: f64 = 0.0;

        for cell in 0..n {
            if self.solid[cell] {
                continue;
            }
            let mut fq = [0.0; Q];
            let (mut rho, mut mx, mut my) = (0.0, 0.0, 0.0);
            for q in 0..Q {
                let v = self.f[q * n + cell];
                fq[q] = v;
                rho += v;
                mx += v * CX[q] as f64;
                my += v * CY[q] as f64;
            }
            let (ux, uy) = (mx / rho, my / rho);
            let speed = (ux * ux + uy * uy).sqrt();
            if !rho.is_finite() || rho <= 0.0 || !speed.is_finite() || speed > DIVERGENCE_SPEED {
                return Err(LbmError::Diverged {
                    step: self.time_step,
                    x: cell % nx,
                    y: cell / nx,
                    speed,
                });
            }
            max_speed = max_speed.max(speed);
            let mut feq = [0.0; Q];
            for q in 0..Q {
                feq[q] = equilibrium(q, rho, ux, uy);
            }
            // The rest population takes up the rounding residue so that the
            // cell's mass is unchanged by collision.
            let mut moved = 0.0;
            for q in 1..Q {
                let v = fq[q] - omega * (fq[q] - feq[q]);
                self.f[q * n + cell] = v;
                moved += v;
            }
            self.f[cell] = rho - moved;
        }

        let mut force = (0.0, 0.0);
        self.scratch.fill(0.0);
        for q in 0..Q {
            let opp = OPPOSITE[q];
            for cell in 0..n {
                let link = self.links[q * n + cell];
                let value = self.f[q * n + cell];
                match link {
                    DROP => {}
                    BOUNCE => {
                        self.scratch[opp * n + cell] = value;
                        force.0 += 2.0 * CX[q] as f64 * value;
                        force.1 += 2.0 * CY[q] as f64 * value;
                    }
                    target => self.scratch[q * n + target as usize] = value,
                }
            }
        }
        std::mem::swap(&mut self.f, &mut self.scratch);

        if self.boundaries == Boundaries::Channel {
            for y in 0..ny {
                let inlet = y * nx;
                let last = y * nx + nx - 1;
                let before = last - 1;
                for q in 0..Q {
                    if !self.solid[inlet] {
                        self.f[q * n + inlet] = equilibrium(q, 1.0, physics.u_in, 0.0);
                    }
                    if !self.solid[last] {
                        self.f[q * n + last] = self.f[q * n + before];
                    }
                }
            }
        }
        self.time_step += 1;
        Ok(StepStats { max_speed, force })
    }
}
