//! Strong solutions of `dZ = [b(t, Z) + AZ] dt + σ dL` and the per-path
//! integral equation `g(t) = x + ∫_{s0}^t b̃(v, g(v) + M_v - M_{s0}) dv`.

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::HolderField;
use crate::integral::{stochastic_integral, MatrixIntegrand};
use crate::levy::{GeneratingTriplet, LevyPath};
use crate::matrix_flow::MatrixExp;
use crate::path::{CadlagPath, Jump};

/// Drift map `(t, y, out)` used by the integral-equation solver.
pub type DriftFn<'a> = &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync);

#[derive(Clone, Debug)]
pub struct SdeProblem {
    a: DMatrix<f64>,
    sigma: MatrixIntegrand,
    drift: HolderField,
    horizon: f64,
    triplet: GeneratingTriplet,
}

impl SdeProblem {
    pub fn new(
        a: DMatrix<f64>,
        sigma: MatrixIntegrand,
        drift: HolderField,
        horizon: f64,
        triplet: GeneratingTriplet,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || sigma.rows() != n || drift.dim() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, σ is {}x{}, drift has dimension {}",
                a.nrows(),
                a.ncols(),
                sigma.rows(),
                sigma.cols(),
                drift.dim()
            )));
        }
        if sigma.cols() != triplet.dim() {
            return Err(Error::Dimension(format!("σ has {} columns, noise has dimension {}", sigma.cols(), triplet.dim())));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        sigma.sup_norm(horizon, 256)?;
        Ok(Self { a, sigma, drift, horizon, triplet })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.sigma.cols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &MatrixIntegrand {
        &self.sigma
    }

    pub fn drift(&self) -> &HolderField {
        &self.drift
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn triplet(&self) -> &GeneratingTriplet {
        &self.triplet
    }

    pub fn with_drift(&self, drift: HolderField) -> Result<Self> {
        Self::new(self.a.clone(), self.sigma.clone(), drift, self.horizon, self.triplet.clone())
    }

    /// `b̃(t, y) = b(t, y) + A y`.
    pub fn tilde_drift(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.drift.eval_into(t, y, out);
        let n = self.n();
        for (r, o) in out.iter_mut().enumerate() {
            *o += (0..n).map(|c| self.a[(r, c)] * y[c]).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial guess is `g ≡ x + offset`.
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-10, max_iter: 10_000, offset: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Explicit left-point recursion.
    Euler,
    /// Damped fixed-point iteration of the trapezoid discretization.
    Picard(PicardOptions),
}

impl Method {
    pub fn picard() -> Self {
        Self::Picard(PicardOptions::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Picard(_) => "picard",
        }
    }
}

/// Resolution of a driver: keep every `dt / base_step`-th base node plus jump nodes.
pub fn resolve(l: &LevyPath, dt: Option<f64>) -> Result<LevyPath> {
    let Some(dt) = dt else { return Ok(l.clone()) };
    let ratio = dt / l.base_step();
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-8 * ratio.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "step {dt} is not a multiple of the driver's base step {}",
            l.base_step()
        )));
    }
    if factor == 1.0 {
        Ok(l.clone())
    } else {
        l.coarsen(factor as usize)
    }
}

#[derive(Clone, Debug)]
pub struct IntegralSolution {
    /// Continuous solution on the nodes of `M` from `s0` on.
    pub path: CadlagPath,
    pub iterations: usize,
    /// Fixed-point residual `sup |T(g) - g|` per Picard iteration.
    pub residual_history: Vec<f64>,
}

fn forcing_at(m: &CadlagPath, i: usize, base: &[f64], left: bool) -> Vec<f64> {
    let v = if left { m.left_limit(i) } else { m.value(i).to_vec() };
    v.iter().zip(base).map(|(a, b)| a - b).collect()
}

/// Solve `g(t) = x + ∫_{s0}^t b̃(v, g(v) + M_v - M_{s0}) dv` on the nodes of `M`
/// from `s0` (a node) to the horizon. With `s0 = 0` and `M_0 = 0` this is the
/// integral equation of path-by-path uniqueness.
pub fn solve_integral_equation(
    tilde_drift: DriftFn<'_>,
    m: &CadlagPath,
    s0: f64,
    x: &[f64],
    method: &Method,
) -> Result<IntegralSolution> {
    let n = m.dim();
    if x.len() != n {
        return Err(Error::Dimension(format!("start point has dimension {}, forcing {n}", x.len())));
    }
    let i0 = m.index_of(s0).ok_or_else(|| Error::InvalidArgument(format!("start time {s0} is not a grid node")))?;
    let times = &m.times()[i0..];
    let len = times.len();
    let base = m.value(i0).to_vec();
    let right: Vec<Vec<f64>> = (i0..m.len()).map(|i| forcing_at(m, i, &base, false)).collect();
    let mut f = vec![0.0; n];
    let mut y = vec![0.0; n];

    let (values, iterations, history) = match method {
        Method::Euler => {
            let mut g = vec![0.0; len * n];
            g[..n].copy_from_slice(x);
            for k in 0..len - 1 {
                for c in 0..n {
                    y[c] = g[k * n + c] + right[k][c];
                }
                tilde_drift(times[k], &y, &mut f);
                let dt = times[k + 1] - times[k];
                for c in 0..n {
                    g[(k + 1) * n + c] = g[k * n + c] + dt * f[c];
                }
            }
            (g, 0, Vec::new())
        }
        Method::Picard(opts) => {
            if !(opts.damping > 0.0 && opts.damping <= 1.0) {
                return Err(Error::InvalidArgument(format!("damping {} outside (0, 1]", opts.damping)));
            }
            let left: Vec<Vec<f64>> = (i0..m.len()).map(|i| forcing_at(m, i, &base, true)).collect();
            let offset = opts.offset.clone().unwrap_or_else(|| vec![0.0; n]);
            if offset.len() != n {
                return Err(Error::Dimension("Picard offset dimension".into()));
            }
            let mut g: Vec<f64> = (0..len).flat_map(|_| x.iter().zip(&offset).map(|(a, b)| a + b)).collect();
            let mut tg = vec![0.0; len * n];
            let mut fr = vec![0.0; n];
            let mut history = Vec::new();
            let mut converged = false;
            let mut iterations = 0;
            while iterations < opts.max_iter {
                iterations += 1;
                tg[..n].copy_from_slice(x);
                for k in 0..len - 1 {
                    for c in 0..n {
                        y[c] = g[k * n + c] + right[k][c];
                    }
                    tilde_drift(times[k], &y, &mut f);
                    for c in 0..n {
                        y[c] = g[(k + 1) * n + c] + left[k + 1][c];
                    }
                    tilde_drift(times[k + 1], &y, &mut fr);
                    let half = 0.5 * (times[k + 1] - times[k]);
                    for c in 0..n {
                        tg[(k + 1) * n + c] = tg[k * n + c] + half * (f[c] + fr[c]);
                    }
                }
                let residual = g.iter().zip(&tg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                history.push(residual);
                if !residual.is_finite() {
                    break;
                }
                if residual <= opts.tol {
                    g.copy_from_slice(&tg);
                    converged = true;
                    break;
                }
                for (a, b) in g.iter_mut().zip(&tg) {
                    *a += opts.damping * (b - *a);
                }
            }
            if !converged {
                let last = history.last().copied().unwrap_or(f64::NAN);
                return Err(Error::NonContraction { iterations, last, history });
            }
            (g, iterations, history)
        }
    };
    Ok(IntegralSolution { path: CadlagPath::continuous(n, times.to_vec(), values)?, iterations, residual_history: history })
}

/// Driver at a chosen resolution together with `M = ∫ σ dL` on its grid.
#[derive(Clone, Debug)]
pub struct Forcing {
    pub driver: LevyPath,
    pub m: CadlagPath,
    pub dt: Option<f64>,
}

impl Forcing {
    pub fn new(problem: &SdeProblem, l: &LevyPath, dt: Option<f64>) -> Result<Self> {
        if l.dim() != problem.d() {
            return Err(Error::Dimension(format!("driver dimension {} != {}", l.dim(), problem.d())));
        }
        if l.horizon() < problem.horizon() * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument("driver does not span the problem horizon".into()));
        }
        let driver = resolve(l, dt)?;
        let m = stochastic_integral(problem.sigma(), &driver)?.total;
        Ok(Self { driver, m, dt })
    }
}

#[derive(Clone, Debug)]
pub struct SolutionPath {
    pub s: f64,
    pub x: Vec<f64>,
    /// Values on the full driver grid; equal to `x` at times `≤ s`.
    pub path: CadlagPath,
    pub method: &'static str,
    pub dt: Option<f64>,
    pub iterations: usize,
}

impl SolutionPath {
    /// CSV with columns `time, z1..zn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time")?;
        for j in 1..=self.path.dim() {
            write!(w, ",z{j}")?;
        }
        writeln!(w)?;
        for (i, t) in self.path.times().iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.path.value(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Solve from `(s, x)` on a prepared forcing: `Z = g + M - M_s` with `g` from
/// [`solve_integral_equation`].
pub fn solve_on(problem: &SdeProblem, forcing: &Forcing, s: f64, x: &[f64], method: &Method) -> Result<SolutionPath> {
    let m = &forcing.m;
    let i0 = m.index_of(s).ok_or_else(|| Error::InvalidArgument(format!("start time {s} is not a grid node")))?;
    let drift = |t: f64, y: &[f64], out: &mut [f64]| problem.tilde_drift(t, y, out);
    let sol = solve_integral_equation(&drift, m, s, x, method)?;
    let n = problem.n();
    let base = m.value(i0).to_vec();
    let mut values = Vec::with_capacity(m.len() * n);
    for _ in 0..i0 {
        values.extend_from_slice(x);
    }
    for k in 0..sol.path.len() {
        let g = sol.path.value(k);
        values.extend(g.iter().zip(m.value(i0 + k)).zip(&base).map(|((g, mv), b)| g + (mv - b)));
    }
    let jumps: Vec<Jump> = m.jumps().iter().filter(|j| j.time > s).cloned().collect();
    let path = CadlagPath::new(n, m.times().to_vec(), values, jumps)?;
    Ok(SolutionPath { s, x: x.to_vec(), path, method: method.name(), dt: forcing.dt, iterations: sol.iterations })
}

/// Strong solution from `(s, x)` driven by `l` resolved at step `dt`.
pub fn solve_strong(
    problem: &SdeProblem,
    l: &LevyPath,
    s: f64,
    x: &[f64],
    method: &Method,
    dt: Option<f64>,
) -> Result<SolutionPath> {
    if !(0.0..problem.horizon()).contains(&s) {
        return Err(Error::TimeRange { time: s, lo: 0.0, hi: problem.horizon() });
    }
    solve_on(problem, &Forcing::new(problem, l, dt)?, s, x, method)
}

/// Sup over the `dt` grid of `|Z^{dt} - Z^{dt/4}|` for the Euler scheme; `l`
/// must resolve `dt/4`.
pub fn richardson_error(problem: &SdeProblem, l: &LevyPath, s: f64, x: &[f64], dt: f64) -> Result<f64> {
    let coarse = solve_strong(problem, l, s, x, &Method::Euler, Some(dt))?;
    let fine = solve_strong(problem, l, s, x, &Method::Euler, Some(dt / 4.0))?;
    coarse.path.sup_distance_on(&fine.path)
}

/// The problem for `U = e^{-tA} Z`: `A = 0`, drift `e^{-rA} b(r, e^{rA} x)`,
/// integrand `e^{-rA} σ(r)`.
pub fn transform_to_modified(problem: &SdeProblem) -> Result<SdeProblem> {
    if problem.a.iter().all(|v| *v == 0.0) {
        return Ok(problem.clone());
    }
    let n = problem.n();
    let fwd = Arc::new(MatrixExp::new(problem.a.clone())?);
    let bwd = Arc::new(MatrixExp::new(-problem.a.clone())?);
    let b = problem.drift.clone();
    let mut sup_bwd = 0.0f64;
    let mut holder = 0.0f64;
    let samples = 256;
    for k in 0..=samples {
        let r = problem.horizon * k as f64 / samples as f64;
        let (eb, ef) = (bwd.at(r)?.norm(), fwd.at(r)?.norm());
        sup_bwd = sup_bwd.max(eb);
        holder = holder.max(eb * b.holder_const() * ef.powf(b.beta()));
    }
    let (f2, b2) = (fwd.clone(), bwd.clone());
    let eval = Arc::new(move |r: f64, x: &[f64], out: &mut [f64]| {
        let ef = f2.at(r).expect("exponential checked on [0, T]");
        let eb = b2.at(r).expect("exponential checked on [0, T]");
        let z: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ef[(i, j)] * x[j]).sum()).collect();
        let bz = b.eval(r, &z);
        for i in 0..n {
            out[i] = (0..n).map(|j| eb[(i, j)] * bz[j]).sum();
        }
    });
    let drift = HolderField::new(
        n,
        format!("modified({})", problem.drift.family()),
        sup_bwd * problem.drift.bound(),
        problem.drift.beta(),
        holder,
        false,
        eval,
    )?;
    let sigma = MatrixIntegrand::modified(&problem.a, problem.sigma.clone())?;
    SdeProblem::new(DMatrix::zeros(n, n), sigma, drift, problem.horizon, problem.triplet.clone())
}

fn map_by_exp(a: &DMatrix<f64>, sign: f64, p: &CadlagPath) -> Result<CadlagPath> {
    let flow = MatrixExp::new(a * sign)?;
    let n = p.dim();
    let apply = |t: f64, v: &[f64]| -> Result<Vec<f64>> {
        let e = flow.at(t)?;
        Ok((0..n).map(|i| (0..n).map(|j| e[(i, j)] * v[j]).sum()).collect())
    };
    let mut values = Vec::with_capacity(p.values().len());
    for (i, t) in p.times().iter().enumerate() {
        values.extend(apply(*t, p.value(i))?);
    }
    let jumps = p
        .jumps()
        .iter()
        .map(|j| Ok(Jump { time: j.time, delta: apply(j.time, &j.delta)? }))
        .collect::<Result<_>>()?;
    CadlagPath::new(n, p.times().to_vec(), values, jumps)
}

/// `U(t) = e^{-tA} Z(t)`.
pub fn to_u(a: &DMatrix<f64>, z: &CadlagPath) -> Result<CadlagPath> {
    map_by_exp(a, -1.0, z)
}

/// `Z(t) = e^{tA} U(t)`.
pub fn to_z(a: &DMatrix<f64>, u: &CadlagPath) -> Result<CadlagPath> {
    map_by_exp(a, 1.0, u)
}

/// Solve from `(s, x)` through the shifted driver `L_{s+·} - L_s` started at 0,
/// then re-index to absolute times. Requires an autonomous drift and a
/// constant integrand.
pub fn shift_solution(
    problem: &SdeProblem,
    l: &LevyPath,
    s: f64,
    x: &[f64],
    method: &Method,
    dt: Option<f64>,
) -> Result<SolutionPath> {
    if !problem.drift.is_autonomous() {
        return Err(Error::Unsupported("the time-shift reduction needs a drift that does not depend on t".into()));
    }
    if !matches!(problem.sigma, MatrixIntegrand::Constant(_)) {
        return Err(Error::Unsupported("the time-shift reduction needs a constant integrand".into()));
    }
    let full = resolve(l, dt)?;
    let shifted_driver = full.shift(s)?;
    let shifted = SdeProblem::new(
        problem.a.clone(),
        problem.sigma.clone(),
        problem.drift.clone(),
        problem.horizon - s,
        problem.triplet.clone(),
    )?;
    let sol = solve_strong(&shifted, &shifted_driver, 0.0, x, method, None)?;
    let i0 = full.index_of(s).expect("shift time is a node");
    let n = problem.n();
    let mut values = Vec::with_capacity(full.len() * n);
    for _ in 0..i0 {
        values.extend_from_slice(x);
    }
    values.extend_from_slice(sol.path.values());
    let jumps = sol.path.jumps().iter().map(|j| Jump { time: full.times()[i0 + sol.path.index_of(j.time).expect("jump node")], delta: j.delta.clone() }).collect();
    let path = CadlagPath::new(n, full.times().to_vec(), values, jumps)?;
    Ok(SolutionPath { s, x: x.to_vec(), path, method: method.name(), dt, iterations: sol.iterations })
}
