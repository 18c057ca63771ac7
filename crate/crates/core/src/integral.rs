//! Additive processes `M_t = ∫_0^t σ(r) dL_r` and `M̃_t = ∫_0^t e^{-rA} σ(r) dL_r`,
//! split along the Lévy–Itô components of the driver, plus Monte Carlo checks
//! of their increment moments and tails.

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::{sample_levy_path, theta_moment, GeneratingTriplet, LevyPath};
use crate::matrix_flow::MatrixExp;
use crate::path::{CadlagPath, Jump};
use crate::rng::path_seed;
use crate::stats::{mean_se, spearman, MeanSe};

/// Spearman correlation of ratio against `1/|t-s|` above which a growth trend is declared.
pub const TREND_THRESHOLD: f64 = 0.5;

/// Deterministic integrand `t ↦ σ(t) ∈ R^{n×d}`.
#[derive(Clone, Debug)]
pub enum MatrixIntegrand {
    Constant(DMatrix<f64>),
    /// `values[i]` on `[breaks[i], breaks[i+1])`, the last value extending to the right.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<DMatrix<f64>> },
    /// `t ↦ t σ_0`.
    Ramp(DMatrix<f64>),
    /// `t ↦ e^{-tA} σ(t)`; `neg` holds the exponential of `-A`.
    Modified { neg: Arc<MatrixExp>, inner: Box<MatrixIntegrand> },
}

impl MatrixIntegrand {
    pub fn identity(n: usize) -> Self {
        Self::Constant(DMatrix::identity(n, n))
    }

    pub fn piecewise_constant(breaks: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(Error::InvalidArgument("need one value per breakpoint".into()));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::Dimension("piecewise values differ in shape".into()));
        }
        Ok(Self::PiecewiseConstant { breaks, values })
    }

    pub fn modified(a: &DMatrix<f64>, inner: MatrixIntegrand) -> Result<Self> {
        if a.nrows() != inner.rows() {
            return Err(Error::Dimension(format!("A is {}x{}, σ has {} rows", a.nrows(), a.ncols(), inner.rows())));
        }
        Ok(Self::Modified { neg: Arc::new(MatrixExp::new(-a)?), inner: Box::new(inner) })
    }

    pub fn rows(&self) -> usize {
        match self {
            Self::Constant(m) | Self::Ramp(m) => m.nrows(),
            Self::PiecewiseConstant { values, .. } => values[0].nrows(),
            Self::Modified { inner, .. } => inner.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Constant(m) | Self::Ramp(m) => m.ncols(),
            Self::PiecewiseConstant { values, .. } => values[0].ncols(),
            Self::Modified { inner, .. } => inner.cols(),
        }
    }

    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(match self {
            Self::Constant(m) => m.clone(),
            Self::Ramp(m) => m * t,
            Self::PiecewiseConstant { breaks, values } => {
                let k = breaks.partition_point(|b| *b <= t).saturating_sub(1);
                values[k].clone()
            }
            Self::Modified { neg, inner } => neg.at(t)? * inner.eval(t)?,
        })
    }

    /// Largest Frobenius norm over `n_samples + 1` equispaced points of `[0, horizon]`.
    pub fn sup_norm(&self, horizon: f64, n_samples: usize) -> Result<f64> {
        let n = n_samples.max(1);
        let mut sup = 0.0f64;
        for k in 0..=n {
            let m = self.eval(horizon * k as f64 / n as f64)?;
            let norm = m.norm();
            if !norm.is_finite() {
                return Err(Error::UnboundedIntegrand { horizon });
            }
            sup = sup.max(norm);
        }
        Ok(sup)
    }
}

/// `∫ σ dL` split as small-jump (`I`), Gaussian (`J`) and large-jump (`K`) parts.
#[derive(Clone, Debug)]
pub struct IntegralDecomposition {
    pub small: CadlagPath,
    pub gaussian: CadlagPath,
    pub large: CadlagPath,
    pub total: CadlagPath,
}

fn accumulate(sig: &[DMatrix<f64>], comp: &CadlagPath, pure_jump: bool, n: usize) -> Result<CadlagPath> {
    let len = comp.len();
    let d = comp.dim();
    let mut values = vec![0.0; len * n];
    let mut jumps = Vec::with_capacity(comp.jumps().len());
    let mut inc = vec![0.0; d];
    for i in 0..len - 1 {
        let (head, tail) = values.split_at_mut((i + 1) * n);
        let prev = &head[i * n..];
        let next = &mut tail[..n];
        next.copy_from_slice(prev);
        let jump = comp.jump_at(i + 1);
        if !pure_jump {
            let (a, b) = (comp.value(i), comp.value(i + 1));
            for k in 0..d {
                inc[k] = b[k] - a[k] - jump.map_or(0.0, |j| j[k]);
            }
            let s = &sig[i];
            for r in 0..n {
                next[r] += (0..d).map(|c| s[(r, c)] * inc[c]).sum::<f64>();
            }
        }
        if let Some(j) = jump {
            let s = &sig[i + 1];
            let delta: Vec<f64> = (0..n).map(|r| (0..d).map(|c| s[(r, c)] * j[c]).sum()).collect();
            for (v, x) in next.iter_mut().zip(&delta) {
                *v += x;
            }
            if delta.iter().any(|x| *x != 0.0) {
                jumps.push(Jump { time: comp.times()[i + 1], delta });
            }
        }
    }
    CadlagPath::new(n, comp.times().to_vec(), values, jumps)
}

/// Left-point sums against the continuous increments of each component and
/// exact `σ(u) ΔL_u` at its jumps. The large-jump component is treated as pure
/// jump, so `K` is piecewise constant.
pub fn stochastic_integral(sigma: &MatrixIntegrand, l: &LevyPath) -> Result<IntegralDecomposition> {
    if sigma.cols() != l.dim() {
        return Err(Error::Dimension(format!("σ has {} columns, driver has dimension {}", sigma.cols(), l.dim())));
    }
    let n = sigma.rows();
    let sig: Vec<DMatrix<f64>> = l.times().iter().map(|&t| sigma.eval(t)).collect::<Result<_>>()?;
    if sig.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
        return Err(Error::UnboundedIntegrand { horizon: l.horizon() });
    }
    let small = accumulate(&sig, l.small(), false, n)?;
    let gaussian = accumulate(&sig, l.gaussian(), false, n)?;
    let large = accumulate(&sig, l.large(), true, n)?;
    let total = small.add(&gaussian)?.add(&large)?;
    Ok(IntegralDecomposition { small, gaussian, large, total })
}

/// `∫ e^{-rA} σ(r) dL_r`.
pub fn modified_integral(a: &DMatrix<f64>, sigma: &MatrixIntegrand, l: &LevyPath) -> Result<IntegralDecomposition> {
    stochastic_integral(&MatrixIntegrand::modified(a, sigma.clone())?, l)
}

/// Pairs `(s, s + 2^{-k})` for `k = k_min..=k_max`.
pub fn dyadic_pairs(s: f64, k_min: u32, k_max: u32) -> Vec<(f64, f64)> {
    (k_min..=k_max).map(|k| (s, s + 2f64.powi(-(k as i32)))).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn increment_norm(p: &CadlagPath, s: f64, t: f64) -> Result<f64> {
    let (a, b) = (p.value_at(s)?, p.value_at(t)?);
    Ok(norm(&a.iter().zip(b).map(|(x, y)| y - x).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, Serialize)]
pub struct PairMoment {
    pub s: f64,
    pub t: f64,
    /// `E|I_t - I_s|^2`
    pub small: MeanSe,
    /// `E|J_t - J_s|^2`
    pub gaussian: MeanSe,
    /// `E|K_t - K_s|^θ`
    pub large: MeanSe,
}

impl PairMoment {
    pub fn gap(&self) -> f64 {
        self.t - self.s
    }

    /// `(moment, se) / |t - s|` for the three components.
    pub fn ratios(&self) -> [(f64, f64); 3] {
        let g = self.gap();
        [self.small, self.gaussian, self.large].map(|m| (m.mean / g, m.se / g))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub theta: f64,
    pub rows: Vec<PairMoment>,
    pub max_ratio: f64,
    /// Largest Spearman correlation of a component's ratio against `1/|t-s|`.
    pub trend_stat: f64,
    pub pass: bool,
}

impl MomentReport {
    /// Columns `s, t, component, moment, se, ratio`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,t,component,moment,se,ratio")?;
        for r in &self.rows {
            for (name, m) in [("small", r.small), ("gaussian", r.gaussian), ("large", r.large)] {
                writeln!(w, "{},{},{name},{},{},{}", r.s, r.t, m.mean, m.se, m.mean / r.gap())?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "pass": self.pass, "max_ratio": self.max_ratio, "trend_stat": self.trend_stat })
    }
}

/// Monte Carlo estimate of `E|I_t-I_s|^2`, `E|J_t-J_s|^2` and `E|K_t-K_s|^θ`
/// over `n_paths` drivers. Passes when no component's ratio to `|t-s|` grows
/// with `1/|t-s|` (Spearman at most [`TREND_THRESHOLD`]).
#[allow(clippy::too_many_arguments)]
pub fn moment_estimates_check(
    triplet: &GeneratingTriplet,
    sigma: &MatrixIntegrand,
    horizon: f64,
    pairs: &[(f64, f64)],
    n_paths: usize,
    n_steps: usize,
    theta: f64,
    seed: u64,
) -> Result<MomentReport> {
    let tm = theta_moment(triplet, theta)?;
    if !tm.finite {
        return Err(Error::InfiniteMoment { theta });
    }
    if pairs.is_empty() || n_paths < 2 {
        return Err(Error::InvalidArgument("need at least one pair and two paths".into()));
    }
    for &(s, t) in pairs {
        if !(0.0 <= s && s < t && t <= horizon) {
            return Err(Error::InvalidArgument(format!("pair ({s}, {t}) outside [0, {horizon}]")));
        }
    }
    let samples: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let l = sample_levy_path(triplet, horizon, n_steps, path_seed(seed, i as u64))?;
            let dec = stochastic_integral(sigma, &l)?;
            let mut out = Vec::with_capacity(3 * pairs.len());
            for &(s, t) in pairs {
                out.push(increment_norm(&dec.small, s, t)?.powi(2));
                out.push(increment_norm(&dec.gaussian, s, t)?.powi(2));
                out.push(increment_norm(&dec.large, s, t)?.powf(theta));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let column = |j: usize| -> MeanSe { mean_se(&samples.iter().map(|r| r[j]).collect::<Vec<_>>()) };
    let rows: Vec<PairMoment> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(s, t))| PairMoment { s, t, small: column(3 * k), gaussian: column(3 * k + 1), large: column(3 * k + 2) })
        .collect();
    let inv_gap: Vec<f64> = rows.iter().map(|r| 1.0 / r.gap()).collect();
    let mut max_ratio = 0.0f64;
    let mut trend_stat = f64::NEG_INFINITY;
    for c in 0..3 {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratios()[c].0).collect();
        max_ratio = ratios.iter().copied().fold(max_ratio, f64::max);
        trend_stat = trend_stat.max(spearman(&ratios, &inv_gap));
    }
    Ok(MomentReport { theta, rows, max_ratio, trend_stat, pass: trend_stat <= TREND_THRESHOLD })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub r: f64,
    pub s: f64,
    pub probability: f64,
    pub se: f64,
    /// `c_3 (|r-s|^{3/4} + |r-s|^{1-θ/8})` with the fitted `c_3`.
    pub envelope: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub theta: f64,
    pub c3: f64,
    pub rows: Vec<TailRow>,
    pub pass: bool,
}

impl TailReport {
    /// Columns `r, s, probability, se, envelope`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,s,probability,se,envelope")?;
        for row in &self.rows {
            writeln!(w, "{},{},{},{},{}", row.r, row.s, row.probability, row.se, row.envelope)?;
        }
        Ok(())
    }

    /// Largest `probability - envelope` over the finer pairs.
    pub fn max_excess(&self) -> f64 {
        self.rows.iter().skip(1).map(|r| r.probability - r.envelope).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `|r-s|^{3/4} + |r-s|^{1-θ/8}`.
pub fn tail_envelope(gap: f64, theta: f64) -> f64 {
    gap.powf(0.75) + gap.powf(1.0 - theta / 8.0)
}

/// Empirical `P(|M̃_s - M̃_r| > |r-s|^{1/8})` per pair against the envelope
/// with `c_3` fitted on the widest pair; passes when every narrower pair lies
/// at or below the fitted envelope.
pub fn tail_bound_check(ensemble: &[CadlagPath], pairs: &[(f64, f64)], theta: f64) -> Result<TailReport> {
    if ensemble.is_empty() || pairs.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble or pair list".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| {
        let gi = (pairs[i].1 - pairs[i].0).abs();
        let gj = (pairs[j].1 - pairs[j].0).abs();
        gj.total_cmp(&gi)
    });
    let n = ensemble.len() as f64;
    let mut rows = Vec::with_capacity(pairs.len());
    for &k in &order {
        let (r, s) = pairs[k];
        let gap = (s - r).abs();
        if gap == 0.0 {
            return Err(Error::InvalidArgument("pair with zero gap".into()));
        }
        let level = gap.powf(0.125);
        let mut hits = 0usize;
        for p in ensemble {
            if increment_norm(p, r.min(s), r.max(s))? > level {
                hits += 1;
            }
        }
        let probability = hits as f64 / n;
        let se = (probability * (1.0 - probability) / n).sqrt();
        rows.push(TailRow { r, s, probability, se, envelope: 0.0 });
    }
    let coarse_gap = (rows[0].s - rows[0].r).abs();
    let c3 = rows[0].probability / tail_envelope(coarse_gap, theta);
    for row in &mut rows {
        row.envelope = c3 * tail_envelope((row.s - row.r).abs(), theta);
    }
    let pass = rows.iter().skip(1).all(|row| row.probability <= row.envelope);
    Ok(TailReport { theta, c3, rows, pass })
}
