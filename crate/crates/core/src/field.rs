//! Hölder drift fields with certified bound and Hölder constant, and the
//! smooth cutoff that turns a locally Hölder field into a bounded one.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Bounded drift `(t, x) ↦ b(t, x) ∈ R^n` with `|b| ≤ bound` and
/// `|b(t,x) - b(t,y)| ≤ holder_const |x-y|^beta`.
#[derive(Clone)]
pub struct HolderField {
    dim: usize,
    family: String,
    bound: f64,
    beta: f64,
    holder_const: f64,
    autonomous: bool,
    eval: FieldFn,
}

impl fmt::Debug for HolderField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HolderField")
            .field("dim", &self.dim)
            .field("family", &self.family)
            .field("bound", &self.bound)
            .field("beta", &self.beta)
            .field("holder_const", &self.holder_const)
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

impl HolderField {
    pub fn new(
        dim: usize,
        family: impl Into<String>,
        bound: f64,
        beta: f64,
        holder_const: f64,
        autonomous: bool,
        eval: FieldFn,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("field dimension must be positive".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("Hölder exponent {beta} outside (0, 1]")));
        }
        if !(bound >= 0.0 && bound.is_finite() && holder_const >= 0.0 && holder_const.is_finite()) {
            return Err(Error::InvalidArgument("bound and Hölder constant must be finite and non-negative".into()));
        }
        Ok(Self { dim, family: family.into(), bound, beta, holder_const, autonomous, eval })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, "zero", 0.0, 1.0, 0.0, true, Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)))
            .expect("valid zero field")
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let bound = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dim = c.len();
        Self::new(dim, "constant", bound, 1.0, 0.0, true, Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&c)))
            .expect("valid constant field")
    }

    /// Componentwise `sin`, Lipschitz with constant 1.
    pub fn sine(dim: usize) -> Self {
        Self::new(
            dim,
            "sine",
            (dim as f64).sqrt(),
            1.0,
            1.0,
            true,
            Arc::new(|_, x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.sin();
                }
            }),
        )
        .expect("valid sine field")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    /// True when the field does not depend on `t`.
    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn is_zero(&self) -> bool {
        self.family == "zero"
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out);
        out
    }

    /// Largest sampled Hölder quotient and largest sampled norm over `n_pairs`
    /// Gaussian pairs of spread `scale` at each time in `times`.
    pub fn sampled_moduli(&self, times: &[f64], n_pairs: usize, scale: f64, seed: u64) -> (f64, f64) {
        let mut rng = stream_rng(seed, Stream::Auxiliary);
        let mut quotient = 0.0f64;
        let mut sup = 0.0f64;
        for &t in times {
            for _ in 0..n_pairs {
                let x: Vec<f64> = (0..self.dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let spread = scale * 10f64.powf(-4.0 * rng.random::<f64>());
                let y: Vec<f64> = x.iter().map(|v| v + spread * rng.sample::<f64, _>(StandardNormal)).collect();
                let (bx, by) = (self.eval(t, &x), self.eval(t, &y));
                sup = sup.max(bx.iter().map(|v| v * v).sum::<f64>().sqrt());
                let dxy = dist(&x, &y);
                if dxy > 0.0 {
                    quotient = quotient.max(dist(&bx, &by) / dxy.powf(self.beta));
                }
            }
        }
        (quotient, sup)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub type RadiusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Possibly unbounded drift with per-ball certificates: on `|x| ≤ R`,
/// `|b| ≤ local_bound(R)` and the β-Hölder constant is at most `local_holder(R)`.
#[derive(Clone)]
pub struct LocallyHolderField {
    pub dim: usize,
    pub beta: f64,
    pub eval: FieldFn,
    pub local_bound: RadiusFn,
    pub local_holder: RadiusFn,
    pub autonomous: bool,
}

impl LocallyHolderField {
    /// `b(x) = x`.
    pub fn linear(dim: usize) -> Self {
        Self {
            dim,
            beta: 1.0,
            eval: Arc::new(|_, x: &[f64], out: &mut [f64]| out.copy_from_slice(x)),
            local_bound: Arc::new(|r| r),
            local_holder: Arc::new(|_| 1.0),
            autonomous: true,
        }
    }

    /// Bounded field seen as a locally Hölder one.
    pub fn from_bounded(b: &HolderField) -> Self {
        let (bound, holder) = (b.bound(), b.holder_const());
        let inner = b.clone();
        Self {
            dim: b.dim(),
            beta: b.beta(),
            eval: Arc::new(move |t, x: &[f64], out: &mut [f64]| inner.eval_into(t, x, out)),
            local_bound: Arc::new(move |_| bound),
            local_holder: Arc::new(move |_| holder),
            autonomous: b.is_autonomous(),
        }
    }
}

/// Lipschitz constant of the unit-width transition in [`cutoff`].
pub const CUTOFF_SLOPE: f64 = 2.0;

fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let f = |v: f64| (-1.0 / v).exp();
    f(u) / (f(u) + f(1.0 - u))
}

/// Smooth `η` with `η = 1` on `|x| ≤ radius`, `η = 0` on `|x| ≥ radius + margin`.
pub fn cutoff(x: &[f64], radius: f64, margin: f64) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1.0 - smooth_step((r - radius) / margin)
}

/// `η_R b` with recomputed certificates. The bound is `sup_{|x| ≤ R+m} |b|`
/// and the Hölder constant `[b]_{β,R+m} + Lip(η)^β sup_{|x| ≤ R+m} |b|`.
pub fn localize_drift(b: &LocallyHolderField, radius: f64, margin: f64) -> Result<HolderField> {
    if !(radius >= 0.0 && margin > 0.0) {
        return Err(Error::InvalidArgument(format!("radius {radius} and margin {margin} must be non-negative / positive")));
    }
    let outer = radius + margin;
    let sup = (b.local_bound)(outer);
    let lip = CUTOFF_SLOPE / margin;
    let holder = (b.local_holder)(outer) + lip.powf(b.beta) * sup;
    let inner = b.eval.clone();
    HolderField::new(
        b.dim,
        "localized",
        sup,
        b.beta,
        holder,
        b.autonomous,
        Arc::new(move |t, x: &[f64], out: &mut [f64]| {
            let eta = cutoff(x, radius, margin);
            if eta == 0.0 {
                out.fill(0.0);
                return;
            }
            inner(t, x, out);
            for o in out.iter_mut() {
                *o *= eta;
            }
        }),
    )
}
