//! Reduced objectives Ĵ(θ) = J(U(θ), θ), their adjoint gradients, the
//! Taylor remainder test, and the outer optimization loop.

use crate::assembly::{assemble_jacobian, assemble_param_vjp, WeakFormProblem};
use crate::error::{FemError, Result};
use crate::inverse::mma::{MmaConfig, MmaState};
use crate::par::{dot, norm};
use crate::solvers::{bicgstab_jacobi, newton_solve, LinearSolveConfig, NewtonConfig};

/// Objective J(U, θ) with its partial derivatives.
pub trait Objective: Send + Sync {
    fn value(&self, p: &WeakFormProblem, u: &[f64]) -> f64;
    fn grad_u(&self, p: &WeakFormProblem, u: &[f64]) -> Vec<f64>;
    /// ∂J/∂θ; zero unless overridden.
    fn grad_theta(&self, p: &WeakFormProblem, _u: &[f64]) -> Vec<f64> {
        vec![0.0; p.theta().len()]
    }
}

/// Solve (∂C/∂U)ᵀ λ = (∂J/∂U)ᵀ with the Dirichlet-modified Jacobian at `u`.
pub fn adjoint_solve(
    p: &WeakFormProblem,
    u: &[f64],
    obj: &dyn Objective,
    cfg: &LinearSolveConfig,
) -> Result<Vec<f64>> {
    let rhs = obj.grad_u(p, u);
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; rhs.len()]);
    }
    let kt = assemble_jacobian(p, u)?.transpose();
    let (lambda, _) = bicgstab_jacobi(&kt, &rhs, &vec![0.0; rhs.len()], cfg)?;
    Ok(lambda)
}

/// dĴ/dθ = −λᵀ ∂C/∂θ + ∂J/∂θ.
pub fn total_derivative(
    p: &WeakFormProblem,
    u: &[f64],
    lambda: &[f64],
    obj: &dyn Objective,
) -> Result<Vec<f64>> {
    let mut g = assemble_param_vjp(p, u, lambda)?;
    for (gi, ji) in g.iter_mut().zip(obj.grad_theta(p, u)) {
        *gi = ji - *gi;
    }
    Ok(g)
}

/// A forward problem bound to an objective: θ ↦ Ĵ(θ) by a fresh Newton solve
/// from zero, so repeated evaluations at the same θ are reproducible.
pub struct ReducedProblem<O: Objective> {
    pub problem: WeakFormProblem,
    pub objective: O,
    pub newton: NewtonConfig,
}

impl<O: Objective> ReducedProblem<O> {
    pub fn new(problem: WeakFormProblem, objective: O, newton: NewtonConfig) -> Self {
        Self {
            problem,
            objective,
            newton,
        }
    }

    /// Forward solution at θ.
    pub fn solve(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        self.problem.set_theta(theta)?;
        let u0 = vec![0.0; self.problem.num_dofs()];
        Ok(newton_solve(&self.problem, &u0, &self.newton)?.0)
    }

    pub fn value(&mut self, theta: &[f64]) -> Result<f64> {
        let u = self.solve(theta)?;
        Ok(self.objective.value(&self.problem, &u))
    }

    /// Forward solution, objective and adjoint gradient at θ.
    pub fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        let u = self.solve(theta)?;
        let value = self.objective.value(&self.problem, &u);
        let lambda = adjoint_solve(&self.problem, &u, &self.objective, &self.newton.linear)?;
        let gradient = total_derivative(&self.problem, &u, &lambda, &self.objective)?;
        Ok(Evaluation { u, value, gradient })
    }

    pub fn value_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ev = self.evaluate(theta)?;
        Ok((ev.value, ev.gradient))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub u: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Central difference of `f` along `dir` with step 1e-6·(1 + max|θ|).
pub fn directional_fd<F>(mut f: F, theta: &[f64], dir: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let scale = theta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-6 * (1.0 + scale);
    let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(dir).map(|(t, d)| t + s * d).collect() };
    let fp = f(&shifted(h))?;
    let fm = f(&shifted(-h))?;
    Ok((fp - fm) / (2.0 * h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorReport {
    pub h: Vec<f64>,
    pub r_zeroth: Vec<f64>,
    pub r_first: Vec<f64>,
    /// log(r(h_k)/r(h_{k+1})) / log(h_k/h_{k+1}) for consecutive pairs.
    pub zeroth_orders: Vec<f64>,
    pub first_orders: Vec<f64>,
    /// Least-squares slope of log r against log h over the whole grid.
    pub fitted_zeroth: f64,
    pub fitted_first: f64,
}

impl TaylorReport {
    pub fn passes(&self) -> bool {
        (0.9..=1.1).contains(&self.fitted_zeroth) && (1.9..=2.1).contains(&self.fitted_first)
    }
}

fn successive_orders(h: &[f64], r: &[f64]) -> Vec<f64> {
    (0..h.len() - 1)
        .map(|k| (r[k] / r[k + 1]).ln() / (h[k] / h[k + 1]).ln())
        .collect()
}

fn fitted_slope(h: &[f64], r: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Remainders of the zeroth- and first-order Taylor expansions of `f` about
/// θ along δθ, given Ĵ(θ) and dĴ/dθ.
pub fn taylor_test<F>(
    mut f: F,
    theta: &[f64],
    j0: f64,
    grad: &[f64],
    delta: &[f64],
    h_values: &[f64],
) -> Result<TaylorReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h_values.len() < 2
        || h_values.iter().any(|h| !(*h > 0.0))
        || h_values.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(FemError::InvalidArgument(
            "h values must be positive and strictly descending".into(),
        ));
    }
    if theta.len() != delta.len() || grad.len() != theta.len() {
        return Err(FemError::InvalidArgument(
            "θ, δθ and gradient lengths differ".into(),
        ));
    }
    let slope = dot(grad, delta);
    let mut r_zeroth = Vec::with_capacity(h_values.len());
    let mut r_first = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let th: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + h * d).collect();
        let jh = f(&th).map_err(|e| match e {
            FemError::NonFinite { .. } | FemError::InvertedDeformation { .. } => {
                FemError::NonFiniteObjective { h }
            }
            other => other,
        })?;
        if !jh.is_finite() {
            return Err(FemError::NonFiniteObjective { h });
        }
        r_zeroth.push((jh - j0).abs());
        r_first.push((jh - j0 - h * slope).abs());
    }
    Ok(TaylorReport {
        zeroth_orders: successive_orders(h_values, &r_zeroth),
        first_orders: successive_orders(h_values, &r_first),
        fitted_zeroth: fitted_slope(h_values, &r_zeroth),
        fitted_first: fitted_slope(h_values, &r_first),
        h: h_values.to_vec(),
        r_zeroth,
        r_first,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when ‖∇Ĵ‖ falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease over one iteration falls below this.
    pub rel_decrease_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-8,
            rel_decrease_tol: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

/// One row per objective/gradient evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub evaluation: usize,
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    SmallDecrease,
    IterationBudget,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub history: Vec<HistoryEntry>,
}

struct Recorder<F> {
    f: F,
    history: Vec<HistoryEntry>,
    iteration: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Recorder<F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = (self.f)(x)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(FemError::Optimizer(format!(
                "non-finite objective or gradient at evaluation {}",
                self.history.len()
            )));
        }
        self.history.push(HistoryEntry {
            evaluation: self.history.len(),
            iteration: self.iteration,
            objective: v,
            grad_norm: norm(&g),
        });
        Ok((v, g))
    }
}

fn along(x: &[f64], d: &[f64], a: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db),
/// safeguarded into the interior of the bracket.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let guess = if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
    } else {
        f64::NAN
    };
    let margin = 0.1 * (hi - lo);
    if guess.is_finite() && guess > lo + margin && guess < hi - margin {
        guess
    } else {
        0.5 * (lo + hi)
    }
}

type Point = (f64, f64, Vec<f64>, Vec<f64>);

/// Strong-Wolfe line search (bracketing then zoom). Returns
/// (step, value, x, gradient) or `None` if no acceptable step was found.
fn strong_wolfe<F>(
    rec: &mut Recorder<F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    a0: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dphi0 = dot(g0, d);
    let mut evals = 0;
    let eval = |rec: &mut Recorder<F>, a: f64| -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
        let xa = along(x, d, a);
        let (fa, ga) = rec.eval(&xa)?;
        Ok((fa, dot(&ga, d), xa, ga))
    };
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, dphi0);
    let mut a = a0;
    let (lo, hi);
    loop {
        let (fa, da, xa, ga) = eval(rec, a)?;
        evals += 1;
        if fa > f0 + cfg.c1 * a * dphi0 || (evals > 1 && fa >= f_prev) {
            lo = (a_prev, f_prev, d_prev);
            hi = (a, fa, da);
            break;
        }
        if da.abs() <= -cfg.c2 * dphi0 {
            return Ok(Some((a, fa, xa, ga)));
        }
        if da >= 0.0 {
            lo = (a, fa, da);
            hi = (a_prev, f_prev, d_prev);
            break;
        }
        if evals >= cfg.max_line_search {
            return Ok(None);
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    let (mut lo, mut hi) = (lo, hi);
    while evals < cfg.max_line_search {
        let aj = cubic_step(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let (fj, dj, xj, gj) = eval(rec, aj)?;
        evals += 1;
        if fj > f0 + cfg.c1 * aj * dphi0 || fj >= lo.1 {
            hi = (aj, fj, dj);
        } else {
            if dj.abs() <= -cfg.c2 * dphi0 {
                return Ok(Some((aj, fj, xj, gj)));
            }
            if dj * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (aj, fj, dj);
        }
        if (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // accept the best sufficient-decrease point if the curvature test never held
    if lo.0 > 0.0 && lo.1 < f0 {
        let xa = along(x, d, lo.0);
        let (fa, ga) = rec.eval(&xa)?;
        return Ok(Some((lo.0, fa, xa, ga)));
    }
    Ok(None)
}

/// Limited-memory BFGS with a strong-Wolfe line search. `f` returns the
/// objective and its gradient; every call is recorded in the history.
pub fn lbfgs<F>(f: F, theta0: &[f64], cfg: &LbfgsConfig) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut rec = Recorder {
        f,
        history: Vec::new(),
        iteration: 0,
    };
    let mut x = theta0.to_vec();
    let (mut fx, mut g) = rec.eval(&x)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut stop = StopReason::IterationBudget;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let gn = norm(&g);
        if gn < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            alpha[k] = rho_hist[k] * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alpha[k] * yi;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for k in 0..m {
            let b = rho_hist[k] * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += (alpha[k] - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            // curvature pairs went bad; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let a0 = if s_hist.is_empty() {
            (1.0 / gn).min(1.0)
        } else {
            1.0
        };
        iterations += 1;
        rec.iteration = iterations;
        let Some((_, f_new, x_new, g_new)) = strong_wolfe(&mut rec, &x, fx, &g, &d, a0, cfg)?
        else {
            stop = StopReason::LineSearchFailed;
            iterations -= 1;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= cfg.rel_decrease_tol * fx.abs().max(1e-300) {
            stop = StopReason::SmallDecrease;
            break;
        }
    }
    if stop == StopReason::IterationBudget && norm(&g) < cfg.grad_tol {
        stop = StopReason::GradientTolerance;
    }
    Ok(OptimizeResult {
        grad_norm: norm(&g),
        theta: x,
        objective: fx,
        iterations,
        stop,
        history: rec.history,
    })
}

/// Bound-constrained minimization by MMA with an optional linear
/// inequality `aᵀθ ≤ b`.
pub fn mma_minimize<F>(
    f: F,
    theta0: &[f64],
    cfg: &MmaConfig,
    constraint: Option<(&[f64], f64)>,
    max_iters: usize,
) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut rec = Recorder {
        f,
        history: Vec::new(),
        iteration: 0,
    };
    let mut state = MmaState::new(theta0.len(), cfg.clone())?;
    let mut x = theta0.to_vec();
    let (mut fx, mut g) = rec.eval(&x)?;
    let mut iterations = 0;
    let mut stop = StopReason::IterationBudget;
    while iterations < max_iters {
        let x_new = match constraint {
            Some((a, b)) => {
                let gval = dot(a, &x) - b;
                state.update(&x, &g, Some((gval, a)))?
            }
            None => state.update(&x, &g, None)?,
        };
        iterations += 1;
        rec.iteration = iterations;
        if x_new == x {
            stop = StopReason::SmallDecrease;
            break;
        }
        x = x_new;
        (fx, g) = rec.eval(&x)?;
    }
    Ok(OptimizeResult {
        grad_norm: norm(&g),
        theta: x,
        objective: fx,
        iterations,
        stop,
        history: rec.history,
    })
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Lbfgs(LbfgsConfig),
    Mma {
        config: MmaConfig,
        /// Linear inequality aᵀθ ≤ b.
        constraint: Option<(Vec<f64>, f64)>,
    },
}

/// Run the chosen optimizer on a value-and-gradient callback.
pub fn optimize<F>(
    f: F,
    theta0: &[f64],
    optimizer: &Optimizer,
    budget: usize,
) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    match optimizer {
        Optimizer::Lbfgs(cfg) => lbfgs(
            f,
            theta0,
            &LbfgsConfig {
                max_iters: budget,
                ..*cfg
            },
        ),
        Optimizer::Mma { config, constraint } => mma_minimize(
            f,
            theta0,
            config,
            constraint.as_ref().map(|(a, b)| (a.as_slice(), *b)),
            budget,
        ),
    }
}
