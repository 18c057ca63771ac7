//! Lévy laws given by their generating triplet `(Q, 0, ν)`: the
//! characteristic exponent, large-jump θ-moments and path sampling through the
//! Lévy–Itô split into compensated small jumps, a Gaussian part and a
//! compound-Poisson large-jump part.

use std::ops::Deref;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::path::{merge_jumps, CadlagPath, Jump};
use crate::quad::adaptive_simpson;
use crate::rng::{stream_rng, stream_rng_raw, Stream};

/// Tolerance on negative eigenvalues of `Q`.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Default truncation radius for infinite-activity small jumps.
pub const DEFAULT_SMALL_JUMP_CUTOFF: f64 = 1e-3;

/// Jump-size law of a compound-Poisson component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpLaw {
    /// Every jump equals `atom`.
    PointMass { atom: Vec<f64> },
    /// Centered isotropic normal jumps with per-coordinate standard deviation `std`.
    Normal { std: f64 },
    /// Radius `scale * U^{-1/index}`, direction uniform on the sphere.
    Pareto { index: f64, scale: f64 },
}

/// Lévy measure families with closed-form moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LevyMeasure {
    None,
    CompoundPoisson { intensity: f64, jumps: JumpLaw },
    /// Symmetric α-stable-like jumps along each coordinate axis, density
    /// `scale/2 · |x|^{-1-α}` on `0 < |x| <= 1`.
    SmallJumpStable { alpha: f64, scale: f64 },
    Sum { parts: Vec<LevyMeasure> },
}

/// How the infinite-activity part below the cutoff is represented.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SmallJumpStrategy {
    /// Drop jumps with `|x| <= epsilon`.
    Truncate { epsilon: f64 },
    /// Replace them by a Brownian motion with matched covariance.
    GaussianSurrogate { epsilon: f64 },
}

impl Default for SmallJumpStrategy {
    fn default() -> Self {
        SmallJumpStrategy::Truncate { epsilon: DEFAULT_SMALL_JUMP_CUTOFF }
    }
}

impl SmallJumpStrategy {
    fn epsilon(&self) -> f64 {
        match *self {
            SmallJumpStrategy::Truncate { epsilon } | SmallJumpStrategy::GaussianSurrogate { epsilon } => epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaMoment {
    pub finite: bool,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratingTriplet {
    dim: usize,
    q: DMatrix<f64>,
    gaussian_factor: DMatrix<f64>,
    measure: LevyMeasure,
    small_jumps: SmallJumpStrategy,
}

impl GeneratingTriplet {
    pub fn new(q: DMatrix<f64>, measure: LevyMeasure) -> Result<Self> {
        let dim = q.nrows();
        if dim == 0 || q.ncols() != dim {
            return Err(Error::InvalidTriplet("Q must be a non-empty square matrix".into()));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidTriplet("Q is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(q.clone());
        if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
            if min < -PSD_TOLERANCE * scale {
                return Err(Error::InvalidTriplet(format!("Q has negative eigenvalue {min:e}")));
            }
        }
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let gaussian_factor = &eig.eigenvectors * sqrt_diag;
        validate_measure(&measure, dim)?;
        Ok(Self { dim, q, gaussian_factor, measure, small_jumps: SmallJumpStrategy::default() })
    }

    /// Standard Brownian motion in `R^dim`.
    pub fn brownian(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), LevyMeasure::None).expect("identity covariance is valid")
    }

    pub fn with_small_jumps(mut self, strategy: SmallJumpStrategy) -> Result<Self> {
        let eps = strategy.epsilon();
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidTriplet(format!("small-jump cutoff {eps} outside (0, 1)")));
        }
        self.small_jumps = strategy;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.measure
    }

    pub fn small_jump_strategy(&self) -> SmallJumpStrategy {
        self.small_jumps
    }

    /// `∫ min(1, |v|²) ν(dv)` in closed form.
    pub fn levy_integrability(&self) -> f64 {
        leaves(&self.measure).iter().map(|m| leaf_integrability(m, self.dim)).sum()
    }

    /// Drift `∫_{|x|<=1} x ν(dx)` removed from the small-jump sum per unit time.
    pub fn small_jump_compensator(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for leaf in leaves(&self.measure) {
            if let LevyMeasure::CompoundPoisson { intensity, jumps: JumpLaw::PointMass { atom } } = leaf {
                if norm(atom) <= 1.0 {
                    for (ci, a) in c.iter_mut().zip(atom) {
                        *ci += intensity * a;
                    }
                }
            }
        }
        c
    }
}

fn validate_measure(m: &LevyMeasure, dim: usize) -> Result<()> {
    match m {
        LevyMeasure::None => Ok(()),
        LevyMeasure::CompoundPoisson { intensity, jumps } => {
            if !(intensity.is_finite() && *intensity > 0.0) {
                return Err(Error::InvalidTriplet(format!("intensity {intensity} must be positive")));
            }
            match jumps {
                JumpLaw::PointMass { atom } => {
                    if atom.len() != dim {
                        return Err(Error::InvalidTriplet("jump atom dimension".into()));
                    }
                    if norm(atom) == 0.0 || atom.iter().any(|a| !a.is_finite()) {
                        return Err(Error::InvalidTriplet("jump atom must be finite and nonzero".into()));
                    }
                }
                JumpLaw::Normal { std } => {
                    if !(std.is_finite() && *std > 0.0) {
                        return Err(Error::InvalidTriplet("normal jump std must be positive".into()));
                    }
                }
                JumpLaw::Pareto { index, scale } => {
                    if !(index.is_finite() && *index > 0.0 && scale.is_finite() && *scale > 0.0) {
                        return Err(Error::InvalidTriplet("pareto index and scale must be positive".into()));
                    }
                }
            }
            Ok(())
        }
        LevyMeasure::SmallJumpStable { alpha, scale } => {
            if !(*alpha > 0.0 && *alpha < 2.0) {
                return Err(Error::InvalidTriplet(format!("stability index {alpha} outside (0, 2)")));
            }
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(Error::InvalidTriplet("stable scale must be positive".into()));
            }
            Ok(())
        }
        LevyMeasure::Sum { parts } => parts.iter().try_for_each(|p| validate_measure(p, dim)),
    }
}

fn leaves(m: &LevyMeasure) -> Vec<&LevyMeasure> {
    match m {
        LevyMeasure::Sum { parts } => parts.iter().flat_map(leaves).collect(),
        LevyMeasure::None => Vec::new(),
        other => vec![other],
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaf_integrability(m: &LevyMeasure, dim: usize) -> f64 {
    match m {
        LevyMeasure::CompoundPoisson { intensity, jumps } => {
            let e = match jumps {
                JumpLaw::PointMass { atom } => norm(atom).powi(2).min(1.0),
                JumpLaw::Normal { std } => {
                    // E[min(1, s²χ²_d)] = s² d F_{d+2}(1/s²) + 1 - F_d(1/s²)
                    let d = dim as f64;
                    let c = 1.0 / (std * std);
                    let f_d = ChiSquared::new(d).expect("dof").cdf(c);
                    let f_d2 = ChiSquared::new(d + 2.0).expect("dof").cdf(c);
                    std * std * d * f_d2 + 1.0 - f_d
                }
                JumpLaw::Pareto { index, scale } => {
                    if *scale >= 1.0 {
                        1.0
                    } else {
                        let tail = scale.powf(*index);
                        let body = if (*index - 2.0).abs() < 1e-12 {
                            index * tail * (1.0 / scale).ln()
                        } else {
                            index * tail * (1.0 - scale.powf(2.0 - index)) / (2.0 - index)
                        };
                        body + tail
                    }
                }
            };
            intensity * e
        }
        LevyMeasure::SmallJumpStable { alpha, scale } => dim as f64 * scale / (2.0 - alpha),
        _ => 0.0,
    }
}

/// Characteristic exponent `φ` with `E exp(i<k, L_t>) = exp(-t φ(k))`.
pub fn levy_exponent(triplet: &GeneratingTriplet, k: &[f64]) -> Result<Complex64> {
    if k.len() != triplet.dim {
        return Err(Error::Dimension(format!("k has length {}, triplet dimension {}", k.len(), triplet.dim)));
    }
    let kv = nalgebra::DVector::from_column_slice(k);
    let mut phi = Complex64::new(0.5 * kv.dot(&(&triplet.q * &kv)), 0.0);
    for leaf in leaves(&triplet.measure) {
        match leaf {
            LevyMeasure::CompoundPoisson { intensity, jumps } => {
                let (cf, small_mean) = match jumps {
                    JumpLaw::PointMass { atom } => {
                        let cf = Complex64::new(0.0, dot(k, atom)).exp();
                        let small = if norm(atom) <= 1.0 { dot(k, atom) } else { 0.0 };
                        (cf, small)
                    }
                    JumpLaw::Normal { std } => (Complex64::new((-0.5 * std * std * dot(k, k)).exp(), 0.0), 0.0),
                    JumpLaw::Pareto { .. } => {
                        return Err(Error::Unsupported(
                            "pareto jump law has no closed-form characteristic function".into(),
                        ))
                    }
                };
                phi -= intensity * (cf - 1.0 - Complex64::new(0.0, small_mean));
            }
            LevyMeasure::SmallJumpStable { alpha, scale } => {
                for kj in k {
                    phi += scale * one_minus_cos_integral(*kj, *alpha)?;
                }
            }
            _ => {}
        }
    }
    Ok(phi)
}

/// `∫_0^1 (1 - cos(k r)) r^{-1-α} dr`: power series on `[0, min(1, 1/|k|)]`,
/// adaptive quadrature on the remainder.
fn one_minus_cos_integral(k: f64, alpha: f64) -> Result<f64> {
    let ak = k.abs();
    if ak == 0.0 {
        return Ok(0.0);
    }
    let c = (1.0 / ak).min(1.0);
    let kc2 = (ak * c).powi(2);
    let mut sum = 0.0;
    let mut pow_fact = 1.0; // (kc)^{2m} / (2m)!
    for m in 1..200 {
        let two_m = 2.0 * m as f64;
        pow_fact *= kc2 / ((two_m - 1.0) * two_m);
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * pow_fact / (two_m - alpha);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    let head = sum * c.powf(-alpha);
    if c >= 1.0 {
        return Ok(head);
    }
    let tail = adaptive_simpson(|r| 2.0 * (0.5 * k * r).sin().powi(2) * r.powf(-1.0 - alpha), c, 1.0, 1e-13)?;
    Ok(head + tail.value)
}

/// Large-jump θ-moment `∫_{|x|>1} |x|^θ ν(dx)`; finite iff `E|L_1|^θ < ∞`.
pub fn theta_moment(triplet: &GeneratingTriplet, theta: f64) -> Result<ThetaMoment> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside (0, 1)")));
    }
    let mut value = 0.0;
    for leaf in leaves(&triplet.measure) {
        if let LevyMeasure::CompoundPoisson { intensity, jumps } = leaf {
            let e = match jumps {
                JumpLaw::PointMass { atom } => {
                    let r = norm(atom);
                    if r > 1.0 {
                        r.powf(theta)
                    } else {
                        0.0
                    }
                }
                JumpLaw::Normal { std } => normal_radial_theta_tail(*std, triplet.dim, theta)?,
                JumpLaw::Pareto { index, scale } => {
                    if *index <= theta {
                        return Ok(ThetaMoment { finite: false, value: f64::INFINITY });
                    }
                    let lo = scale.max(1.0);
                    index * scale.powf(*index) * lo.powf(theta - index) / (index - theta)
                }
            };
            value += intensity * e;
        }
    }
    Ok(ThetaMoment { finite: true, value })
}

fn normal_radial_theta_tail(std: f64, dim: usize, theta: f64) -> Result<f64> {
    let d = dim as f64;
    let ln_norm = (d / 2.0 - 1.0) * 2f64.ln() + ln_gamma(d / 2.0) + d * std.ln();
    let density = |r: f64| ((d - 1.0) * r.ln() - r * r / (2.0 * std * std) - ln_norm).exp();
    let hi = 1.0 + 40.0 * std * (1.0 + d.sqrt());
    Ok(adaptive_simpson(|r| r.powf(theta) * density(r), 1.0, hi, 1e-14)?.value)
}

/// A sampled driving path with its Lévy–Itô components retained.
#[derive(Clone, Debug)]
pub struct LevyPath {
    small: CadlagPath,
    gaussian: CadlagPath,
    large: CadlagPath,
    total: CadlagPath,
    // base-grid counter of each node, `usize::MAX` for inserted jump nodes
    base_index: Vec<usize>,
}

impl Deref for LevyPath {
    type Target = CadlagPath;
    fn deref(&self) -> &CadlagPath {
        &self.total
    }
}

impl LevyPath {
    pub fn from_components(small: CadlagPath, gaussian: CadlagPath, large: CadlagPath) -> Result<Self> {
        let base_index = (0..small.len()).collect();
        Self::assemble(small, gaussian, large, base_index)
    }

    fn assemble(small: CadlagPath, gaussian: CadlagPath, large: CadlagPath, base_index: Vec<usize>) -> Result<Self> {
        if !gaussian.jumps().is_empty() {
            return Err(Error::InvalidArgument("gaussian component must be continuous".into()));
        }
        let total = small.add(&gaussian)?.add(&large)?;
        Ok(Self { small, gaussian, large, total, base_index })
    }

    /// Driver whose only motion is the given jumps, recorded as the
    /// finite-variation (large-jump) component.
    pub fn pure_jump(dim: usize, times: Vec<f64>, jumps: Vec<Jump>) -> Result<Self> {
        let mut values = vec![0.0; times.len() * dim];
        let mut acc = vec![0.0; dim];
        let mut next = 0;
        for (i, t) in times.iter().enumerate() {
            while next < jumps.len() && jumps[next].time <= *t {
                for (a, d) in acc.iter_mut().zip(&jumps[next].delta) {
                    *a += d;
                }
                next += 1;
            }
            values[i * dim..(i + 1) * dim].copy_from_slice(&acc);
        }
        let large = CadlagPath::new(dim, times.clone(), values, jumps)?;
        let zero = CadlagPath::zeros(dim, times)?;
        Self::from_components(zero.clone(), zero, large)
    }

    /// Continuous driver (e.g. a Brownian path given node by node).
    pub fn continuous(gaussian: CadlagPath) -> Result<Self> {
        let zero = CadlagPath::zeros(gaussian.dim(), gaussian.times().to_vec())?;
        Self::from_components(zero.clone(), gaussian, zero)
    }

    pub fn total(&self) -> &CadlagPath {
        &self.total
    }

    /// Compensated small-jump component (`A`).
    pub fn small(&self) -> &CadlagPath {
        &self.small
    }

    /// Gaussian component (`B`).
    pub fn gaussian(&self) -> &CadlagPath {
        &self.gaussian
    }

    /// Large-jump compound-Poisson component (`C`).
    pub fn large(&self) -> &CadlagPath {
        &self.large
    }

    /// Number of base (uniform) steps covered by the grid.
    pub fn base_steps(&self) -> usize {
        let first = self.base_index.iter().find(|&&b| b != usize::MAX).copied().unwrap_or(0);
        let last = self.base_index.iter().rev().find(|&&b| b != usize::MAX).copied().unwrap_or(0);
        last - first
    }

    /// Width of one base step.
    pub fn base_step(&self) -> f64 {
        (self.horizon() - self.start()) / self.base_steps().max(1) as f64
    }

    /// Keep every `factor`-th base node plus all jump nodes.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("coarsening factor must be positive".into()));
        }
        let last_base = self.base_index.iter().rev().find(|&&b| b != usize::MAX).copied().unwrap_or(0);
        if last_base % factor != 0 {
            return Err(Error::InvalidArgument(format!("{last_base} base steps not divisible by {factor}")));
        }
        let jump_nodes: Vec<usize> = {
            let mut v: Vec<usize> = self
                .small
                .jump_slots()
                .iter()
                .chain(self.large.jump_slots())
                .copied()
                .collect();
            v.sort_unstable();
            v
        };
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let b = self.base_index[i];
                (b != usize::MAX && b.is_multiple_of(factor)) || jump_nodes.binary_search(&i).is_ok()
            })
            .collect();
        let base_index = keep
            .iter()
            .map(|&i| {
                let b = self.base_index[i];
                if b != usize::MAX && b.is_multiple_of(factor) {
                    b / factor
                } else {
                    usize::MAX
                }
            })
            .collect();
        Self::assemble(self.small.select(&keep)?, self.gaussian.select(&keep)?, self.large.select(&keep)?, base_index)
    }

    /// Shifted driver `t ↦ L_{s+t} - L_s`; `s` must be a grid node.
    pub fn shift(&self, s: f64) -> Result<Self> {
        let i0 = self
            .index_of(s)
            .ok_or_else(|| Error::InvalidArgument(format!("shift time {s} is not a grid node")))?;
        let shift_one = |p: &CadlagPath| -> Result<CadlagPath> {
            let dim = p.dim();
            let base = p.value(i0).to_vec();
            let times: Vec<f64> = p.times()[i0..].iter().map(|t| t - s).collect();
            let mut values = Vec::with_capacity(times.len() * dim);
            for i in i0..p.len() {
                values.extend(p.value(i).iter().zip(&base).map(|(v, b)| v - b));
            }
            let jumps = p
                .jumps()
                .iter()
                .filter(|j| j.time > s)
                .map(|j| Jump { time: j.time - s, delta: j.delta.clone() })
                .collect();
            CadlagPath::new(dim, times, values, jumps)
        };
        Self::assemble(
            shift_one(&self.small)?,
            shift_one(&self.gaussian)?,
            shift_one(&self.large)?,
            self.base_index[i0..].to_vec(),
        )
    }
}

struct RawJump {
    time: f64,
    small: Vec<f64>,
    large: Vec<f64>,
}

fn sample_jump(law: &JumpLaw, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match law {
        JumpLaw::PointMass { atom } => atom.clone(),
        JumpLaw::Normal { std } => (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
        JumpLaw::Pareto { index, scale } => {
            let u: f64 = 1.0 - rng.random::<f64>();
            let radius = scale * u.powf(-1.0 / index);
            let dir: Vec<f64> = if dim == 1 {
                vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
            } else {
                loop {
                    let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let n = norm(&z);
                    if n > 0.0 {
                        break z.into_iter().map(|x| x / n).collect();
                    }
                }
            };
            dir.into_iter().map(|x| radius * x).collect()
        }
    }
}

fn poisson_count(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Uniform time in `(0, horizon]`.
fn jump_time(horizon: f64, rng: &mut ChaCha8Rng) -> f64 {
    horizon * (1.0 - rng.random::<f64>())
}

/// Sample `L` on `[0, horizon]` with `n_steps` uniform steps, the grid refined
/// to contain every jump time. Deterministic in `(triplet, horizon, n_steps, seed)`;
/// jumps come from their own streams and do not depend on `n_steps`.
pub fn sample_levy_path(triplet: &GeneratingTriplet, horizon: f64, n_steps: usize, seed: u64) -> Result<LevyPath> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    let dim = triplet.dim;
    let eps = triplet.small_jumps.epsilon();
    let mut raw: Vec<RawJump> = Vec::new();
    let mut surrogate_var = vec![0.0; dim];

    for (j, leaf) in leaves(&triplet.measure).into_iter().enumerate() {
        match leaf {
            LevyMeasure::CompoundPoisson { intensity, jumps } => {
                let mut rng = stream_rng_raw(seed, Stream::LargeJumps as u64 + 16 * j as u64);
                let count = poisson_count(intensity * horizon, &mut rng);
                for _ in 0..count {
                    let time = jump_time(horizon, &mut rng);
                    let x = sample_jump(jumps, dim, &mut rng);
                    let zero = vec![0.0; dim];
                    let (small, large) = if norm(&x) > 1.0 { (zero, x) } else { (x, zero) };
                    raw.push(RawJump { time, small, large });
                }
            }
            LevyMeasure::SmallJumpStable { alpha, scale } => {
                let mut rng = stream_rng_raw(seed, Stream::SmallJumps as u64 + 16 * j as u64);
                let e_pow = eps.powf(-alpha);
                let rate = scale * (e_pow - 1.0) / alpha;
                for axis in 0..dim {
                    let count = poisson_count(rate * horizon, &mut rng);
                    for _ in 0..count {
                        let time = jump_time(horizon, &mut rng);
                        let u: f64 = rng.random();
                        let r = (e_pow - u * (e_pow - 1.0)).powf(-1.0 / alpha);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        let mut small = vec![0.0; dim];
                        small[axis] = sign * r;
                        raw.push(RawJump { time, small, large: vec![0.0; dim] });
                    }
                    if let SmallJumpStrategy::GaussianSurrogate { .. } = triplet.small_jumps {
                        surrogate_var[axis] += scale * eps.powf(2.0 - alpha) / (2.0 - alpha);
                    }
                }
            }
            _ => {}
        }
    }
    raw.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut merged: Vec<RawJump> = Vec::with_capacity(raw.len());
    for r in raw {
        match merged.last_mut() {
            Some(last) if last.time == r.time => {
                for (a, b) in last.small.iter_mut().zip(&r.small) {
                    *a += b;
                }
                for (a, b) in last.large.iter_mut().zip(&r.large) {
                    *a += b;
                }
            }
            _ => merged.push(r),
        }
    }

    // grid: base nodes plus jump times
    let mut times = Vec::with_capacity(n_steps + 1 + merged.len());
    let mut base_index = Vec::with_capacity(n_steps + 1 + merged.len());
    let base_time = |k: usize| horizon * (k as f64 / n_steps as f64);
    times.push(0.0);
    base_index.push(0);
    let mut next = 0;
    for k in 1..=n_steps {
        let tk = base_time(k);
        while next < merged.len() && merged[next].time < tk {
            if merged[next].time > *times.last().expect("grid") {
                times.push(merged[next].time);
                base_index.push(usize::MAX);
            }
            next += 1;
        }
        times.push(tk);
        base_index.push(k);
    }

    let compensator = triplet.small_jump_compensator();
    let n = times.len();
    let mut small_v = vec![0.0; n * dim];
    let mut large_v = vec![0.0; n * dim];
    let mut small_jumps = Vec::new();
    let mut large_jumps = Vec::new();
    {
        let mut s_acc = vec![0.0; dim];
        let mut l_acc = vec![0.0; dim];
        let mut next = 0;
        for (i, t) in times.iter().enumerate() {
            while next < merged.len() && merged[next].time <= *t {
                let r = &merged[next];
                // a jump landing between nodes cannot happen: the grid holds every jump time
                let at = *t;
                if r.small.iter().any(|x| *x != 0.0) {
                    small_jumps.push(Jump { time: at, delta: r.small.clone() });
                }
                if r.large.iter().any(|x| *x != 0.0) {
                    large_jumps.push(Jump { time: at, delta: r.large.clone() });
                }
                for (a, b) in s_acc.iter_mut().zip(&r.small) {
                    *a += b;
                }
                for (a, b) in l_acc.iter_mut().zip(&r.large) {
                    *a += b;
                }
                next += 1;
            }
            for c in 0..dim {
                small_v[i * dim + c] = s_acc[c] - t * compensator[c];
                large_v[i * dim + c] = l_acc[c];
            }
        }
    }
    let small_jumps = merge_jumps(&small_jumps, 1.0, &[], 0.0);
    let large_jumps = merge_jumps(&large_jumps, 1.0, &[], 0.0);

    let gaussian_v = brownian_on_grid(&triplet.gaussian_factor, &times, &base_index, seed, Stream::Gaussian, Stream::Bridge);
    if surrogate_var.iter().any(|v| *v > 0.0) {
        let factor = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(dim, surrogate_var.iter().map(|v| v.sqrt())));
        let extra = brownian_on_grid(&factor, &times, &base_index, seed, Stream::Surrogate, Stream::Auxiliary);
        for (a, b) in small_v.iter_mut().zip(extra) {
            *a += b;
        }
    }

    let small = CadlagPath::new(dim, times.clone(), small_v, small_jumps)?;
    let gaussian = CadlagPath::continuous(dim, times.clone(), gaussian_v)?;
    let large = CadlagPath::new(dim, times, large_v, large_jumps)?;
    LevyPath::assemble(small, gaussian, large, base_index)
}

/// Brownian motion with covariance `F Fᵀ` per unit time. Base-step increments
/// come from `main`; inserted nodes are filled by Brownian bridges from `bridge`.
fn brownian_on_grid(
    factor: &DMatrix<f64>,
    times: &[f64],
    base_index: &[usize],
    seed: u64,
    main: Stream,
    bridge: Stream,
) -> Vec<f64> {
    let dim = factor.nrows();
    let mut out = vec![0.0; times.len() * dim];
    if factor.iter().all(|x| *x == 0.0) {
        return out;
    }
    let mut rng = stream_rng(seed, main);
    let mut brng = stream_rng(seed, bridge);
    let mut z = nalgebra::DVector::zeros(dim);
    let mut i = 0;
    while i + 1 < times.len() {
        // next base node
        let mut j = i + 1;
        while base_index[j] == usize::MAX {
            j += 1;
        }
        let (a, b) = (times[i], times[j]);
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let inc = factor * &z * (b - a).sqrt();
        let end: Vec<f64> = (0..dim).map(|c| out[i * dim + c] + inc[c]).collect();
        let mut prev_t = a;
        for m in i + 1..j {
            let u = times[m];
            let w = (u - prev_t) / (b - prev_t);
            let sd = ((u - prev_t) * (b - u) / (b - prev_t)).sqrt();
            for zk in z.iter_mut() {
                *zk = brng.sample(StandardNormal);
            }
            let noise = factor * &z * sd;
            for c in 0..dim {
                let prev = out[(m - 1) * dim + c];
                out[m * dim + c] = prev + w * (end[c] - prev) + noise[c];
            }
            prev_t = u;
        }
        out[j * dim..(j + 1) * dim].copy_from_slice(&end);
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(intensity: f64, atom: f64) -> GeneratingTriplet {
        GeneratingTriplet::new(
            DMatrix::zeros(1, 1),
            LevyMeasure::CompoundPoisson { intensity, jumps: JumpLaw::PointMass { atom: vec![atom] } },
        )
        .unwrap()
    }

    #[test]
    fn gaussian_exponent_is_half_norm_squared() {
        let t = GeneratingTriplet::brownian(2);
        let phi = levy_exponent(&t, &[1.0, 1.0]).unwrap();
        assert!((phi.re - 1.0).abs() < 1e-15 && phi.im == 0.0);
    }

    #[test]
    fn zero_process_has_zero_exponent() {
        let t = GeneratingTriplet::new(DMatrix::zeros(3, 3), LevyMeasure::None).unwrap();
        assert_eq!(levy_exponent(&t, &[0.3, -2.0, 5.0]).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn point_mass_above_one_has_no_compensator() {
        let phi = levy_exponent(&cp(2.0, 3.0), &[0.5]).unwrap();
        let expected = -2.0 * (Complex64::new(0.0, 1.5).exp() - 1.0);
        assert!((phi - expected).norm() < 1e-15);
    }

    #[test]
    fn small_atom_is_compensated() {
        let phi = levy_exponent(&cp(1.5, 0.5), &[2.0]).unwrap();
        let expected = -1.5 * (Complex64::new(0.0, 1.0).exp() - 1.0 - Complex64::new(0.0, 1.0));
        assert!((phi - expected).norm() < 1e-15);
    }

    #[test]
    fn stable_exponent_matches_direct_quadrature() {
        for &(k, alpha) in &[(0.5, 0.5), (3.0, 1.2), (40.0, 0.7), (-7.0, 1.9)] {
            let got = one_minus_cos_integral(k, alpha).unwrap();
            // substitution r = u^{1/(2-α)} removes the endpoint singularity
            let p = 2.0 - alpha;
            let f = |u: f64| {
                if u == 0.0 {
                    return 0.5 * k * k / p;
                }
                let r = u.powf(1.0 / p);
                2.0 * (0.5 * k * r).sin().powi(2) / (r * r) / p
            };
            let oracle = adaptive_simpson(f, 0.0, 1.0, 1e-11).unwrap().value;
            assert!((got - oracle).abs() < 1e-9 * oracle.max(1.0), "k={k} alpha={alpha}: {got} vs {oracle}");
        }
    }

    #[test]
    fn theta_moments() {
        let none = GeneratingTriplet::brownian(1);
        assert_eq!(theta_moment(&none, 0.5).unwrap(), ThetaMoment { finite: true, value: 0.0 });
        let m = theta_moment(&cp(2.0, 3.0), 0.5).unwrap();
        assert!(m.finite && (m.value - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        let pareto = GeneratingTriplet::new(
            DMatrix::zeros(1, 1),
            LevyMeasure::CompoundPoisson { intensity: 1.0, jumps: JumpLaw::Pareto { index: 0.3, scale: 1.0 } },
        )
        .unwrap();
        assert!(!theta_moment(&pareto, 0.5).unwrap().finite);
        let pareto_ok = GeneratingTriplet::new(
            DMatrix::zeros(1, 1),
            LevyMeasure::CompoundPoisson { intensity: 1.0, jumps: JumpLaw::Pareto { index: 1.5, scale: 2.0 } },
        )
        .unwrap();
        // ∫_2^∞ r^{0.5} 1.5·2^{1.5} r^{-2.5} dr = 1.5·2^{1.5}·2^{-1} = 2.1213...
        let v = theta_moment(&pareto_ok, 0.5).unwrap().value;
        assert!((v - 1.5 * 2f64.powf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn normal_theta_tail_matches_one_dimensional_formula() {
        // d = 1: ∫_{|x|>1} |x|^θ φ(x/s)/s dx by direct quadrature
        let s: f64 = 1.7;
        let theta = 0.4;
        let t = GeneratingTriplet::new(
            DMatrix::zeros(1, 1),
            LevyMeasure::CompoundPoisson { intensity: 1.0, jumps: JumpLaw::Normal { std: s } },
        )
        .unwrap();
        let got = theta_moment(&t, theta).unwrap().value;
        let dens = |x: f64| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let oracle = 2.0 * adaptive_simpson(|x| x.powf(theta) * dens(x), 1.0, 80.0, 1e-13).unwrap().value;
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_triplets() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GeneratingTriplet::new(asym, LevyMeasure::None).is_err());
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(GeneratingTriplet::new(neg, LevyMeasure::None).is_err());
        let bad_alpha = LevyMeasure::SmallJumpStable { alpha: 2.0, scale: 1.0 };
        assert!(GeneratingTriplet::new(DMatrix::zeros(1, 1), bad_alpha).is_err());
        let zero_atom = LevyMeasure::CompoundPoisson { intensity: 1.0, jumps: JumpLaw::PointMass { atom: vec![0.0] } };
        assert!(GeneratingTriplet::new(DMatrix::zeros(1, 1), zero_atom).is_err());
    }

    #[test]
    fn singular_covariance_is_accepted() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let t = GeneratingTriplet::new(q.clone(), LevyMeasure::None).unwrap();
        let f = &t.gaussian_factor;
        assert!((f * f.transpose() - q).amax() < 1e-12);
    }

    #[test]
    fn zero_triplet_gives_zero_path() {
        let t = GeneratingTriplet::new(DMatrix::zeros(2, 2), LevyMeasure::None).unwrap();
        let p = sample_levy_path(&t, 1.0, 16, 3).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));
        assert!(p.jumps().is_empty());
        assert_eq!(p.len(), 17);
    }

    #[test]
    fn jump_times_are_grid_nodes_and_left_limits_consistent() {
        let t = GeneratingTriplet::new(
            DMatrix::identity(1, 1),
            LevyMeasure::Sum {
                parts: vec![
                    LevyMeasure::CompoundPoisson { intensity: 3.0, jumps: JumpLaw::PointMass { atom: vec![2.0] } },
                    LevyMeasure::CompoundPoisson { intensity: 5.0, jumps: JumpLaw::Normal { std: 0.3 } },
                ],
            },
        )
        .unwrap();
        let p = sample_levy_path(&t, 2.0, 50, 11).unwrap();
        assert!(!p.jumps().is_empty());
        for j in p.jumps() {
            let i = p.index_of(j.time).expect("jump on grid");
            let left = p.left_limit(i);
            assert!((p.value(i)[0] - left[0] - j.delta[0]).abs() < 1e-15);
        }
        assert_eq!(p.value(0), &[0.0]);
    }

    #[test]
    fn levy_integrability_closed_forms() {
        let s = GeneratingTriplet::new(DMatrix::zeros(2, 2), LevyMeasure::SmallJumpStable { alpha: 0.5, scale: 3.0 }).unwrap();
        assert!((s.levy_integrability() - 2.0 * 3.0 / 1.5).abs() < 1e-15);
        // normal, d = 1: E[min(1, X²)] by quadrature
        let sd: f64 = 0.8;
        let n = GeneratingTriplet::new(
            DMatrix::zeros(1, 1),
            LevyMeasure::CompoundPoisson { intensity: 2.0, jumps: JumpLaw::Normal { std: sd } },
        )
        .unwrap();
        let dens = |x: f64| (-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let oracle = 2.0 * adaptive_simpson(|x| (x * x).min(1.0) * dens(x), -1.0, 1.0, 1e-13).unwrap().value
            + 2.0 * 2.0 * adaptive_simpson(dens, 1.0, 60.0, 1e-13).unwrap().value;
        assert!((n.levy_integrability() - oracle).abs() < 1e-9);
    }
}
