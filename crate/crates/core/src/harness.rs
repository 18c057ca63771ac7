//! Numerical checks of the flow generated by the SDE on a fixed noise path:
//! agreement of independent constructions, the flow law, the Hölder modulus
//! in `x`, càdlàg behaviour in `s` and Monte Carlo `L^p`-Lipschitz estimates.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::dist;
use crate::levy::{sample_levy_path, LevyPath};
use crate::path::CadlagPath;
use crate::rng::path_seed;
use crate::sde::{solve_integral_equation, solve_on, Forcing, Method, PicardOptions, SdeProblem, SolutionPath};
use crate::stats::{mean_se, quantile, spearman};

/// Multiple of the Richardson scheme error allowed for identity checks.
pub const SCHEME_FACTOR: f64 = 10.0;

/// Spearman threshold for "no growth trend".
pub const TREND_LIMIT: f64 = 0.5;

/// Spearman threshold (gaps against ladder depth) for "gaps shrink".
pub const DECAY_LIMIT: f64 = -0.5;

/// Absolute allowance for floating-point rounding in identities that are exact in theory.
pub fn roundoff_floor(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct Case {
    pub label: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: Vec<Case>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub scheme_error: f64,
    pub pass: bool,
    /// Diagnostic values that do not enter the pass decision.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<Case>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, cases: Vec<Case>, tolerance: f64, scheme_error: f64) -> Self {
        let max_residual = cases.iter().map(|c| c.residual).fold(f64::NEG_INFINITY, f64::max);
        let max_residual = if cases.is_empty() { 0.0 } else { max_residual };
        let pass = cases.iter().all(|c| c.residual <= tolerance);
        Self { name: name.into(), cases, max_residual, tolerance, scheme_error, pass, details: Vec::new() }
    }

    pub fn with_details(mut self, details: Vec<Case>) -> Self {
        self.details = details;
        self
    }

    /// Merge per-seed reports. Cases and details are prefixed; the headline
    /// residual and tolerance are those of the report with the largest excess.
    pub fn merge(name: impl Into<String>, reports: Vec<(String, CheckReport)>) -> Self {
        let mut cases = Vec::new();
        let mut details = Vec::new();
        let mut scheme_error = 0.0f64;
        let mut pass = true;
        let mut worst: Option<(f64, f64, f64)> = None;
        for (prefix, r) in reports {
            pass &= r.pass;
            scheme_error = scheme_error.max(r.scheme_error);
            let excess = r.max_residual - r.tolerance;
            if !r.cases.is_empty() && worst.is_none_or(|w| excess > w.0) {
                worst = Some((excess, r.max_residual, r.tolerance));
            }
            let tag = |c: Case| Case { label: format!("{prefix}/{}", c.label), residual: c.residual };
            cases.extend(r.cases.into_iter().map(tag));
            details.extend(r.details.into_iter().map(tag));
        }
        let (_, max_residual, tolerance) = worst.unwrap_or((0.0, 0.0, 0.0));
        Self { name: name.into(), cases, max_residual, tolerance, scheme_error, pass, details }
    }

    /// Columns `label, residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "label,residual")?;
        for c in self.cases.iter().chain(&self.details) {
            writeln!(w, "{},{}", c.label, c.residual)?;
        }
        Ok(())
    }
}

fn case(label: impl Into<String>, residual: f64) -> Case {
    Case { label: label.into(), residual }
}

/// Nearest node of `grid` to `t`.
pub fn snap(grid: &CadlagPath, t: f64) -> f64 {
    grid.times()[grid.nearest_index(t)]
}

fn sup_abs(p: &CadlagPath) -> f64 {
    p.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Richardson scheme error of Euler at `dt` against `dt/4` from `(s, x)`.
pub fn scheme_error(problem: &SdeProblem, l: &LevyPath, s: f64, x: &[f64], dt: f64) -> Result<f64> {
    crate::sde::richardson_error(problem, l, s, x, dt)
}

#[derive(Clone, Debug)]
pub struct DavieConfig {
    pub dt: f64,
    /// Offset of the second Picard initial guess `g ≡ x + δ`.
    pub perturbation: Vec<f64>,
    pub picard: PicardOptions,
}

impl DavieConfig {
    pub fn new(dt: f64, perturbation: Vec<f64>) -> Self {
        Self { dt, perturbation, picard: PicardOptions::default() }
    }
}

/// Four constructions of the solution of `g = x + ∫ b̃(v, g + M_v - M_{s0}) dv`
/// on one driver: Euler at `dt` and `dt/2`, Picard from `g ≡ x` and from
/// `g ≡ x + δ`. Passes when all pairwise sup-distances on the `dt` grid are
/// within ten Richardson scheme errors. `l` must resolve `dt/4`.
pub fn davie_uniqueness_check(
    problem: &SdeProblem,
    l: &LevyPath,
    s0: f64,
    x: &[f64],
    config: &DavieConfig,
) -> Result<CheckReport> {
    let coarse = Forcing::new(problem, l, Some(config.dt))?;
    let half = Forcing::new(problem, l, Some(config.dt / 2.0))?;
    let s0 = snap(&coarse.m, s0);
    let drift = |t: f64, y: &[f64], out: &mut [f64]| problem.tilde_drift(t, y, out);
    let solve = |f: &Forcing, m: &Method| solve_integral_equation(&drift, &f.m, s0, x, m).map(|s| s.path);
    let euler = solve(&coarse, &Method::Euler)?;
    let euler_half = solve(&half, &Method::Euler)?;
    let picard = solve(&coarse, &Method::Picard(PicardOptions { offset: None, ..config.picard.clone() }))?;
    let perturbed = solve(
        &coarse,
        &Method::Picard(PicardOptions { offset: Some(config.perturbation.clone()), ..config.picard.clone() }),
    )?;
    let err = scheme_error(problem, l, s0, x, config.dt)?;
    let named = [("euler", &euler), ("euler_half", &euler_half), ("picard", &picard), ("picard_perturbed", &perturbed)];
    let mut cases = Vec::new();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            // every construction is compared on the coarse grid
            let (a, b) = (named[i].1, named[j].1);
            let d = if a.len() <= b.len() { a.sup_distance_on(b)? } else { b.sup_distance_on(a)? };
            cases.push(case(format!("{}~{}", named[i].0, named[j].0), d));
        }
    }
    let tol = SCHEME_FACTOR * err + roundoff_floor(sup_abs(&euler));
    Ok(CheckReport::new("davie-uniqueness", cases, tol, err))
}

/// Flow map `ψ(s, t, x)` tabulated on grids of start times, evaluation times
/// and start points for one driver.
#[derive(Clone, Debug, Serialize)]
pub struct FlowSample {
    pub seed: Option<u64>,
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<Vec<f64>>,
    pub n: usize,
    // [s][t][x][component]
    psi: Vec<f64>,
}

impl FlowSample {
    /// Euler flow on the forcing grid; all times are snapped to grid nodes.
    pub fn build(
        problem: &SdeProblem,
        forcing: &Forcing,
        s_grid: &[f64],
        t_grid: &[f64],
        x_grid: &[Vec<f64>],
        seed: Option<u64>,
    ) -> Result<Self> {
        let n = problem.n();
        let s_grid: Vec<f64> = s_grid.iter().map(|&s| snap(&forcing.m, s)).collect();
        let t_grid: Vec<f64> = t_grid.iter().map(|&t| snap(&forcing.m, t)).collect();
        let mut psi = Vec::with_capacity(s_grid.len() * t_grid.len() * x_grid.len() * n);
        let sols: Vec<Vec<SolutionPath>> = s_grid
            .iter()
            .map(|&s| x_grid.iter().map(|x| solve_on(problem, forcing, s.min(problem.horizon()), x, &Method::Euler)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        for (si, &s) in s_grid.iter().enumerate() {
            for &t in &t_grid {
                for (xi, x) in x_grid.iter().enumerate() {
                    if t <= s {
                        psi.extend_from_slice(x);
                    } else {
                        psi.extend_from_slice(sols[si][xi].path.value_at(t)?);
                    }
                }
            }
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("flow has non-finite entries".into()));
        }
        Ok(Self { seed, s_grid, t_grid, x_grid: x_grid.to_vec(), n, psi })
    }

    pub fn get(&self, si: usize, ti: usize, xi: usize) -> &[f64] {
        let idx = ((si * self.t_grid.len() + ti) * self.x_grid.len() + xi) * self.n;
        &self.psi[idx..idx + self.n]
    }

    /// Columns `s, t, point, psi1..psin`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "s,t,point")?;
        for j in 1..=self.n {
            write!(w, ",psi{j}")?;
        }
        writeln!(w)?;
        for (si, s) in self.s_grid.iter().enumerate() {
            for (ti, t) in self.t_grid.iter().enumerate() {
                for xi in 0..self.x_grid.len() {
                    write!(w, "{s},{t},{xi}")?;
                    for v in self.get(si, ti, xi) {
                        write!(w, ",{v}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

/// `|ψ(s,t,x) - ψ(r,t,ψ(s,r,x))|` over `s ≤ r ≤ t` and the given points, both legs
/// on the same `dt` grid. Tolerance is ten times the largest Richardson error
/// of the underlying solves.
pub fn flow_property_check(
    problem: &SdeProblem,
    l: &LevyPath,
    triples: &[(f64, f64, f64)],
    points: &[Vec<f64>],
    dt: f64,
) -> Result<CheckReport> {
    let forcing = Forcing::new(problem, l, Some(dt))?;
    let mut cache: BTreeMap<(u64, usize), SolutionPath> = BTreeMap::new();
    let mut cases = Vec::new();
    let mut scale = 0.0f64;
    let mut starts: Vec<(f64, usize)> = Vec::new();
    for &(s, r, t) in triples {
        let (s, r, t) = (snap(&forcing.m, s), snap(&forcing.m, r), snap(&forcing.m, t));
        if !(s <= r && r <= t) || s >= problem.horizon() {
            continue;
        }
        for (xi, x) in points.iter().enumerate() {
            let key = (s.to_bits(), xi);
            let first = match cache.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    starts.push((s, xi));
                    e.insert(solve_on(problem, &forcing, s, x, &Method::Euler)?)
                }
            };
            let direct = first.path.value_at(t)?.to_vec();
            let mid = first.path.value_at(r)?.to_vec();
            let restarted = if r >= problem.horizon() || r == t {
                mid.clone()
            } else {
                solve_on(problem, &forcing, r, &mid, &Method::Euler)?.path.value_at(t)?.to_vec()
            };
            scale = scale.max(direct.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            cases.push(case(format!("s={s},r={r},t={t},x={xi}"), dist(&direct, &restarted)));
        }
    }
    let err = starts
        .par_iter()
        .map(|&(s, xi)| scheme_error(problem, l, s, &points[xi], dt))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckReport::new("flow-property", cases, SCHEME_FACTOR * err + roundoff_floor(scale), err))
}

/// Pairs `(x, x + 2^{-k} u)` with `x` uniform in the cube of half-width
/// `radius` and `u` a random unit vector, `per_scale` pairs for each `k`.
pub fn dyadic_point_pairs(n: usize, radius: f64, ks: &[u32], per_scale: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Auxiliary);
    let mut out = Vec::with_capacity(ks.len() * per_scale);
    for &k in ks {
        let h = 2f64.powi(-(k as i32));
        for _ in 0..per_scale {
            let x: Vec<f64> = (0..n).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let u: Vec<f64> = loop {
                let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nz > 0.0 {
                    break z.into_iter().map(|v| v / nz).collect();
                }
            };
            let y = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            out.push((x, y));
        }
    }
    out
}

/// Normalized modulus
/// `r(x,y) = sup_t |ψ(s,t,x) - ψ(s,t,y)| / (|x-y|^{(m-2n)/m} max((|x| ∨ |y|)^{(2n+1)/m}, 1))`.
/// Pairs are grouped by dyadic `|x-y|`; passes when the 99th percentile per group
/// shows no increasing trend in `1/|x-y|`.
pub fn holder_flow_modulus_check(
    problem: &SdeProblem,
    l: &LevyPath,
    s: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    m: u32,
    dt: f64,
) -> Result<CheckReport> {
    let n = problem.n() as f64;
    if (m as f64) <= 2.0 * n {
        return Err(Error::InvalidArgument(format!("m = {m} must exceed 2n = {}", 2.0 * n)));
    }
    let forcing = Forcing::new(problem, l, Some(dt))?;
    let s = snap(&forcing.m, s);
    let mf = m as f64;
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (x, y) in pairs {
        let gap = dist(x, y);
        if gap == 0.0 {
            continue;
        }
        let px = solve_on(problem, &forcing, s, x, &Method::Euler)?;
        let py = solve_on(problem, &forcing, s, y, &Method::Euler)?;
        let sup = px.path.sup_distance(&py.path)?;
        let big = dist(x, &vec![0.0; x.len()]).max(dist(y, &vec![0.0; y.len()]));
        let r = sup / (gap.powf((mf - 2.0 * n) / mf) * big.powf((2.0 * n + 1.0) / mf).max(1.0));
        groups.entry((-gap.log2()).round() as i64).or_default().push(r);
    }
    let mut inv_gap = Vec::new();
    let mut p99 = Vec::new();
    let mut details = Vec::new();
    for (k, rs) in &groups {
        let q = quantile(rs, 0.99);
        inv_gap.push(2f64.powi(*k as i32));
        p99.push(q);
        details.push(case(format!("p99@2^-{k}"), q));
    }
    let trend = if p99.iter().all(|v| *v == p99[0]) { -1.0 } else { spearman(&p99, &inv_gap) };
    Ok(CheckReport::new("holder-modulus", vec![case("spearman(p99, 1/|x-y|)", trend)], TREND_LIMIT, 0.0)
        .with_details(details))
}

#[derive(Clone, Debug, Serialize)]
pub struct LpRow {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: f64,
    /// Estimate of `E sup_{t ≥ s} |Z^{s,x}_t - Z^{s,y}_t|^p / |x-y|^p` at `dt`.
    pub ratio: f64,
    pub se: f64,
    /// Same estimate at `dt/4`; the difference is the scheme error of the row.
    pub ratio_fine: f64,
}

impl LpRow {
    pub fn gap(&self) -> f64 {
        dist(&self.x, &self.y)
    }

    pub fn scheme_error(&self) -> f64 {
        (self.ratio - self.ratio_fine).abs()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LpReport {
    pub rows: Vec<LpRow>,
    pub max_ratio: f64,
    pub max_se: f64,
    /// Largest excess `ratio(s) - ratio(s_min) - 3 SE` over later starts.
    pub s_excess: f64,
    /// Largest excess of a finer `|x-y|` scale over the coarsest at the same start, beyond `3 SE`.
    pub scale_excess: f64,
    pub pass: bool,
}

impl LpReport {
    /// Columns `s, p, gap, ratio, se, ratio_fine`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,p,gap,ratio,se,ratio_fine")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.s, r.p, r.gap(), r.ratio, r.se, r.ratio_fine)?;
        }
        Ok(())
    }
}

fn combined_se(a: &LpRow, b: &LpRow) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}

/// Monte Carlo `L^p`-Lipschitz table over `n_paths` drivers sampled with
/// `n_steps` base steps, solved by Euler at `dt` and `dt/4`. Passes when the
/// table is stable: no later start exceeds the earliest one, and no finer
/// `|x-y|` exceeds the coarsest, by more than three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn lp_lipschitz_estimate(
    problem: &SdeProblem,
    p: f64,
    starts: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<LpReport> {
    if p < 2.0 {
        return Err(Error::InvalidArgument(format!("p = {p} must be at least 2")));
    }
    if n_paths < 2 || starts.is_empty() || pairs.is_empty() {
        return Err(Error::InvalidArgument("need two paths, a start time and a pair".into()));
    }
    let horizon = problem.horizon();
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let l = sample_levy_path(problem.triplet(), horizon, n_steps, path_seed(seed, i as u64))?;
            let mut out = Vec::with_capacity(2 * starts.len() * pairs.len());
            for f in [Forcing::new(problem, &l, Some(dt))?, Forcing::new(problem, &l, Some(dt / 4.0))?] {
                for &s in starts {
                    let s = snap(&f.m, s);
                    for (x, y) in pairs {
                        let zx = solve_on(problem, &f, s, x, &Method::Euler)?;
                        let zy = solve_on(problem, &f, s, y, &Method::Euler)?;
                        out.push((zx.path.sup_distance(&zy.path)? / dist(x, y)).powf(p));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let half = starts.len() * pairs.len();
    let mut rows = Vec::with_capacity(half);
    for (si, &s) in starts.iter().enumerate() {
        for (pi, (x, y)) in pairs.iter().enumerate() {
            let j = si * pairs.len() + pi;
            let coarse = mean_se(&per_path.iter().map(|r| r[j]).collect::<Vec<_>>());
            let fine = mean_se(&per_path.iter().map(|r| r[half + j]).collect::<Vec<_>>());
            rows.push(LpRow { s, x: x.clone(), y: y.clone(), p, ratio: coarse.mean, se: coarse.se, ratio_fine: fine.mean });
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let max_se = rows.iter().map(|r| r.se).fold(0.0, f64::max);
    let mut s_excess = f64::NEG_INFINITY;
    let mut scale_excess = f64::NEG_INFINITY;
    let np = pairs.len();
    for pi in 0..np {
        let first = &rows[pi];
        for si in 1..starts.len() {
            let r = &rows[si * np + pi];
            s_excess = s_excess.max(r.ratio - first.ratio - 3.0 * combined_se(r, first));
        }
    }
    for si in 0..starts.len() {
        let block = &rows[si * np..(si + 1) * np];
        let coarsest = block.iter().max_by(|a, b| a.gap().total_cmp(&b.gap())).expect("non-empty");
        for r in block {
            if r.gap() < coarsest.gap() {
                scale_excess = scale_excess.max(r.ratio - coarsest.ratio - 3.0 * combined_se(r, coarsest));
            }
        }
    }
    let pass = s_excess <= 0.0 && scale_excess <= 0.0;
    Ok(LpReport { rows, max_ratio, max_se, s_excess, scale_excess, pass })
}

/// Right and left gaps of the flow at a start time `s*`:
/// right `sup_{x,t} |ψ(s*+2^{-m}, t, x) - ψ(s*, t, x)|` and left
/// `sup_{x,t} |ψ(s*-2^{-m}, t, x) - ψ(s*-, t, x)|`, where the left-limit field is
/// `x` before `s*` and `ψ(s*, t, x + ΔM_{s*})` from `s*` on. Passes when both
/// ladders decay (Spearman of gap against `m` at most -0.5, or identically zero).
pub fn cadlag_in_s_probe(
    problem: &SdeProblem,
    l: &LevyPath,
    s_star: f64,
    ladder: &[u32],
    points: &[Vec<f64>],
    dt: f64,
) -> Result<CheckReport> {
    let forcing = Forcing::new(problem, l, Some(dt))?;
    let grid = &forcing.m;
    let is = grid.nearest_index(s_star);
    let s_star = grid.times()[is];
    let jump = grid.jump_at(is).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; problem.n()]);
    let mut right = Vec::new();
    let mut left = Vec::new();
    let mut details = Vec::new();
    let mut jump_effect = 0.0f64;
    for x in points {
        let at = solve_on(problem, &forcing, s_star, x, &Method::Euler)?;
        let shifted: Vec<f64> = x.iter().zip(&jump).map(|(a, b)| a + b).collect();
        let after = solve_on(problem, &forcing, s_star, &shifted, &Method::Euler)?;
        let left_field = {
            let mut values = Vec::with_capacity(grid.values().len());
            for (i, _) in grid.times().iter().enumerate() {
                if i < is {
                    values.extend_from_slice(x);
                } else {
                    values.extend_from_slice(after.path.value(i));
                }
            }
            values
        };
        jump_effect = jump_effect.max(
            at.path.values().iter().zip(&left_field).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );
        for (k, &m) in ladder.iter().enumerate() {
            let h = 2f64.powi(-(m as i32));
            if right.len() <= k {
                right.push(0.0f64);
                left.push(0.0f64);
            }
            let r = snap(grid, s_star + h);
            if r > s_star && r < problem.horizon() {
                let pr = solve_on(problem, &forcing, r, x, &Method::Euler)?;
                right[k] = right[k].max(pr.path.sup_distance(&at.path)?);
            }
            let lt = snap(grid, s_star - h);
            if lt < s_star && s_star - h >= 0.0 {
                let pl = solve_on(problem, &forcing, lt, x, &Method::Euler)?;
                let gap = pl.path.values().iter().zip(&left_field).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                left[k] = left[k].max(gap);
            }
        }
    }
    let ms: Vec<f64> = ladder.iter().map(|&m| m as f64).collect();
    let floor = roundoff_floor(1.0);
    let decay = |gaps: &[f64]| if gaps.iter().all(|g| *g <= floor) { -1.0 } else { spearman(gaps, &ms) };
    for (k, m) in ladder.iter().enumerate() {
        details.push(case(format!("right@2^-{m}"), right[k]));
        details.push(case(format!("left@2^-{m}"), left[k]));
    }
    details.push(case("jump_effect", jump_effect));
    let cases = vec![case("right-gap decay", decay(&right)), case("left-gap decay", decay(&left))];
    Ok(CheckReport::new("cadlag-in-s", cases, DECAY_LIMIT, 0.0).with_details(details))
}
