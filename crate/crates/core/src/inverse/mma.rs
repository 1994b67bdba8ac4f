//! Method of moving asymptotes for box bounds plus at most one inequality
//! constraint, with the subproblem solved through its one-dimensional dual.

use crate::error::{FemError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MmaConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Largest change per step as a fraction of the bound range.
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
}

impl MmaConfig {
    pub fn with_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            move_limit: 0.2,
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MmaState {
    cfg: MmaConfig,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    iter: usize,
}

const RAA0: f64 = 1e-5;

impl MmaState {
    pub fn new(n: usize, cfg: MmaConfig) -> Result<Self> {
        if cfg.lower.len() != n || cfg.upper.len() != n {
            return Err(FemError::InvalidArgument(
                "MMA bounds length differs from design size".into(),
            ));
        }
        if cfg.lower.iter().zip(&cfg.upper).any(|(l, u)| !(l <= u)) {
            return Err(FemError::InvalidArgument(
                "MMA lower bound exceeds upper bound".into(),
            ));
        }
        if !(cfg.move_limit > 0.0) {
            return Err(FemError::InvalidArgument(
                "MMA move limit must be positive".into(),
            ));
        }
        Ok(Self {
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            iter: 0,
            cfg,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One MMA step from `x` with objective gradient `df` and optional
    /// constraint `(g(x), ∇g)` with g ≤ 0 required. Variables whose bounds
    /// coincide are held at that value.
    pub fn update(
        &mut self,
        x: &[f64],
        df: &[f64],
        constraint: Option<(f64, &[f64])>,
    ) -> Result<Vec<f64>> {
        let n = x.len();
        if df.len() != n || self.low.len() != n {
            return Err(FemError::InvalidArgument(
                "MMA vector lengths differ".into(),
            ));
        }
        let cfg = &self.cfg;
        self.iter += 1;
        for j in 0..n {
            let range = cfg.upper[j] - cfg.lower[j];
            if self.iter <= 2 {
                self.low[j] = x[j] - cfg.asy_init * range;
                self.upp[j] = x[j] + cfg.asy_init * range;
            } else {
                let s = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let f = if s < 0.0 {
                    cfg.asy_decr
                } else if s > 0.0 {
                    cfg.asy_incr
                } else {
                    1.0
                };
                let low = x[j] - f * (self.xold1[j] - self.low[j]);
                let upp = x[j] + f * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
                self.upp[j] = upp.clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
            }
        }

        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p1 = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut free = vec![false; n];
        let mut r1 = constraint.map_or(0.0, |(g, _)| g);
        for j in 0..n {
            let range = cfg.upper[j] - cfg.lower[j];
            if range <= 0.0 {
                continue;
            }
            free[j] = true;
            let (l, u) = (self.low[j], self.upp[j]);
            alpha[j] = cfg.lower[j]
                .max(l + 0.1 * (x[j] - l))
                .max(x[j] - cfg.move_limit * range);
            beta[j] = cfg.upper[j]
                .min(u - 0.1 * (u - x[j]))
                .min(x[j] + cfg.move_limit * range);
            let (ux2, xl2) = ((u - x[j]).powi(2), (x[j] - l).powi(2));
            let (dp, dm) = (df[j].max(0.0), (-df[j]).max(0.0));
            p0[j] = ux2 * (1.001 * dp + 0.001 * dm + RAA0 / range);
            q0[j] = xl2 * (0.001 * dp + 1.001 * dm + RAA0 / range);
            if let Some((_, dg)) = constraint {
                let (gp, gm) = (dg[j].max(0.0), (-dg[j]).max(0.0));
                p1[j] = ux2 * (1.001 * gp + 0.001 * gm);
                q1[j] = xl2 * (0.001 * gp + 1.001 * gm);
                r1 -= p1[j] / (u - x[j]) + q1[j] / (x[j] - l);
            }
        }

        let solve_primal = |y: f64| -> Vec<f64> {
            (0..n)
                .map(|j| {
                    if !free[j] {
                        return cfg.lower[j];
                    }
                    let sp = (p0[j] + y * p1[j]).sqrt();
                    let sq = (q0[j] + y * q1[j]).sqrt();
                    let xj = (self.low[j] * sp + self.upp[j] * sq) / (sp + sq);
                    xj.clamp(alpha[j], beta[j])
                })
                .collect()
        };
        let approx_constraint = |xs: &[f64]| -> f64 {
            let mut g = r1;
            for j in 0..n {
                if free[j] {
                    g += p1[j] / (self.upp[j] - xs[j]) + q1[j] / (xs[j] - self.low[j]);
                }
            }
            g
        };

        let x_new = if constraint.is_none() {
            solve_primal(0.0)
        } else {
            let x0 = solve_primal(0.0);
            if approx_constraint(&x0) <= 0.0 {
                x0
            } else {
                let mut hi = 1.0;
                while approx_constraint(&solve_primal(hi)) > 0.0 {
                    hi *= 10.0;
                    if hi > 1e40 {
                        return Err(FemError::Optimizer("MMA subproblem is infeasible".into()));
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if approx_constraint(&solve_primal(mid)) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                // feasible side of the bracket
                solve_primal(hi)
            }
        };
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        Ok(x_new)
    }
}
