//! Matrix exponentials `e^{tA}` and the pathwise integration-by-parts identity
//!
//! `∫_s^t e^{(t-r)A} A M_r dr = ∫_s^t e^{(t-r)A} σ(r) dL_r + e^{(t-s)A} M_s - M_t`.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::integral::{stochastic_integral, MatrixIntegrand};
use crate::levy::LevyPath;

/// Powers `A^k` below this are treated as zero when detecting nilpotency.
pub const NILPOTENT_TOLERANCE: f64 = 1e-14;

/// Largest `|tA|_1` accepted before reporting overflow.
const MAX_EXP_NORM: f64 = 700.0;

/// `t ↦ e^{tA}` for a fixed generator. Nilpotent generators use the finite
/// series; everything else goes through Padé scaling-and-squaring with a
/// per-instance cache keyed by `t`.
#[derive(Debug)]
pub struct MatrixExp {
    a: DMatrix<f64>,
    // A^0 .. A^{m-1} when A^m = 0
    nilpotent_powers: Option<Vec<DMatrix<f64>>>,
    cache: Mutex<HashMap<u64, DMatrix<f64>>>,
}

impl Clone for MatrixExp {
    fn clone(&self) -> Self {
        Self { a: self.a.clone(), nilpotent_powers: self.nilpotent_powers.clone(), cache: Mutex::new(HashMap::new()) }
    }
}

impl MatrixExp {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("generator is {}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("generator has non-finite entries".into()));
        }
        let n = a.nrows();
        let a_norm = a.amax().max(1.0);
        let mut powers = vec![DMatrix::identity(n, n)];
        let mut nilpotent = None;
        for k in 1..=n {
            let next = &powers[k - 1] * &a;
            if next.amax() <= NILPOTENT_TOLERANCE * a_norm.powi(k as i32) {
                nilpotent = Some(powers.clone());
                break;
            }
            powers.push(next);
        }
        Ok(Self { a, nilpotent_powers: nilpotent, cache: Mutex::new(HashMap::new()) })
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Smallest `m` with `A^m = 0`, if any.
    pub fn nilpotency_index(&self) -> Option<usize> {
        self.nilpotent_powers.as_ref().map(|p| p.len())
    }

    pub fn at(&self, t: f64) -> Result<DMatrix<f64>> {
        if let Some(powers) = &self.nilpotent_powers {
            let n = self.dim();
            let mut out = DMatrix::zeros(n, n);
            let mut coef = 1.0;
            for (k, p) in powers.iter().enumerate() {
                if k > 0 {
                    coef *= t / k as f64;
                }
                out += p * coef;
            }
            return Ok(out);
        }
        if t == 0.0 {
            return Ok(DMatrix::identity(self.dim(), self.dim()));
        }
        let key = t.to_bits();
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let ta = &self.a * t;
        let norm1 = (0..ta.ncols()).map(|j| ta.column(j).abs().sum()).fold(0.0, f64::max);
        if norm1 > MAX_EXP_NORM {
            return Err(Error::ExpOverflow { norm: norm1 });
        }
        let e = ta.exp();
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::ExpOverflow { norm: norm1 });
        }
        self.cache.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }
}

pub fn matexp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    MatrixExp::new(a.clone())?.at(t)
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum()).collect()
}

/// Sup-norm of the discretized difference between the two sides of the
/// integration-by-parts identity on `[s, t]` (both grid nodes of `l`).
///
/// The `dr` integral uses the trapezoid rule with the left limit of `M` at the
/// right end of each cell; cells on which `M` is constant are integrated exactly.
/// The `dL` integral uses left-point weights for continuous increments and
/// `e^{(t-u)A} σ(u) ΔL_u` at jumps.
pub fn integration_by_parts_residual(
    a: &DMatrix<f64>,
    sigma: &MatrixIntegrand,
    l: &LevyPath,
    s: f64,
    t: f64,
) -> Result<f64> {
    if s > t {
        return Err(Error::InvalidArgument(format!("s = {s} > t = {t}")));
    }
    let node = |x: f64| l.index_of(x).ok_or_else(|| Error::InvalidArgument(format!("{x} is not a grid node")));
    let (is, it) = (node(s)?, node(t)?);
    let n = a.nrows();
    let flow = MatrixExp::new(a.clone())?;
    let m = stochastic_integral(sigma, l)?.total;
    let times = l.times();

    let weights: Vec<DMatrix<f64>> = (is..=it).map(|i| flow.at(t - times[i])).collect::<Result<_>>()?;
    let w = |i: usize| &weights[i - is];

    let mut lhs = vec![0.0; n];
    for i in is..it {
        let (ta, tb) = (times[i], times[i + 1]);
        let ma = m.value(i);
        let mb = m.left_limit(i + 1);
        let contrib: Vec<f64> = if ma == mb.as_slice() {
            mat_vec(&(w(i) - w(i + 1)), ma)
        } else {
            let fa = mat_vec(&(w(i) * a), ma);
            let fb = mat_vec(&(w(i + 1) * a), &mb);
            fa.iter().zip(&fb).map(|(x, y)| 0.5 * (tb - ta) * (x + y)).collect()
        };
        for (acc, c) in lhs.iter_mut().zip(contrib) {
            *acc += c;
        }
    }

    let mut rhs = vec![0.0; n];
    for comp in [l.small(), l.gaussian(), l.large()] {
        let pure_jump = std::ptr::eq(comp, l.large());
        for i in is..it {
            let jump = comp.jump_at(i + 1);
            if !pure_jump {
                let mut cont: Vec<f64> = comp.value(i + 1).iter().zip(comp.value(i)).map(|(b, a)| b - a).collect();
                if let Some(j) = jump {
                    for (c, d) in cont.iter_mut().zip(j) {
                        *c -= d;
                    }
                }
                let wv = mat_vec(&(w(i) * sigma.eval(times[i])?), &cont);
                for (acc, c) in rhs.iter_mut().zip(wv) {
                    *acc += c;
                }
            }
            if let Some(j) = jump {
                let wv = mat_vec(&(w(i + 1) * sigma.eval(times[i + 1])?), j);
                for (acc, c) in rhs.iter_mut().zip(wv) {
                    *acc += c;
                }
            }
        }
    }
    let carry = mat_vec(w(is), m.value(is));
    for ((r, c), mt) in rhs.iter_mut().zip(carry).zip(m.value(it)) {
        *r += c - mt;
    }
    Ok(lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Kinetic generator `[[0, I], [0, 0]]` on `R^{2d}`.
pub fn kinetic_generator(d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        a[(i, d + i)] = 1.0;
    }
    a
}
