//! Kinetic Langevin system `dX = V dt`, `dV = F(X, V) dt + dW` embedded as
//! `dZ = [b(Z) + AZ] dt + C dW` on `R^{2d}`, and its explicit integral form.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::HolderField;
use crate::integral::MatrixIntegrand;
use crate::levy::GeneratingTriplet;
use crate::matrix_flow::kinetic_generator;
use crate::path::CadlagPath;
use crate::rng::{stream_rng, Stream};
use crate::sde::SdeProblem;

/// Lower end of the exponent range where pathwise uniqueness is expected for the kinetic system.
pub const UNIQUENESS_GAMMA_MIN: f64 = 2.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeShape {
    /// `sgn(z)|z|^p`, Hölder constant `2^{1-p}`.
    Odd,
    /// `|z|^p`, Hölder constant 1.
    Even,
}

impl RidgeShape {
    fn apply(self, z: f64, p: f64) -> f64 {
        match self {
            Self::Odd => z.signum() * z.abs().powf(p),
            Self::Even => z.abs().powf(p),
        }
    }

    fn holder(self, p: f64) -> f64 {
        match self {
            Self::Odd => 2f64.powf(1.0 - p),
            Self::Even => 1.0,
        }
    }
}

/// One term `weight · clip(shape(direction·y - offset), ±clip)` added to `F_component`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeTerm {
    pub component: usize,
    pub weight: f64,
    pub direction: Vec<f64>,
    pub offset: f64,
    pub shape: RidgeShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    pub d: usize,
    pub gamma: f64,
    pub beta_prime: f64,
    pub clip: f64,
    /// Terms in the position variable (exponent `gamma`).
    pub x_terms: Vec<RidgeTerm>,
    /// Terms in the velocity variable (exponent `beta_prime`).
    pub v_terms: Vec<RidgeTerm>,
}

impl ForceSpec {
    /// Built-in instance: per component an odd ridge in `x_i + x_{i+1}/2`
    /// and an even ridge in `v_i`.
    pub fn standard(d: usize, gamma: f64, beta_prime: f64) -> Self {
        let mut x_terms = Vec::with_capacity(d);
        let mut v_terms = Vec::with_capacity(d);
        for i in 0..d {
            let mut u = vec![0.0; d];
            u[i] += 1.0;
            u[(i + 1) % d] += 0.5;
            x_terms.push(RidgeTerm { component: i, weight: 1.0, direction: u, offset: 0.1, shape: RidgeShape::Odd });
            let mut w = vec![0.0; d];
            w[i] = 1.0;
            v_terms.push(RidgeTerm { component: i, weight: 0.5, direction: w, offset: -0.2, shape: RidgeShape::Even });
        }
        Self { d, gamma, beta_prime, clip: 1.0, x_terms, v_terms }
    }

    pub fn zero(d: usize, gamma: f64, beta_prime: f64) -> Self {
        Self { d, gamma, beta_prime, clip: 1.0, x_terms: Vec::new(), v_terms: Vec::new() }
    }
}

/// Bounded force with certified constants: `|F| ≤ bound` and
/// `|F(x,v) - F(x',v')| ≤ c_x |x-x'|^γ + c_v |v-v'|^{β'}`.
#[derive(Clone, Debug)]
pub struct KineticForce {
    spec: ForceSpec,
    bound: f64,
    c_x: f64,
    c_v: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Build the force and its certificates from the ridge family's closed-form moduli.
pub fn holder_force_field(spec: ForceSpec) -> Result<KineticForce> {
    let d = spec.d;
    if d == 0 {
        return Err(Error::Dimension("base dimension must be positive".into()));
    }
    for (name, p) in [("gamma", spec.gamma), ("beta_prime", spec.beta_prime)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!("{name} = {p} outside (0, 1]")));
        }
    }
    if !(spec.clip > 0.0 && spec.clip.is_finite()) {
        return Err(Error::InvalidArgument("clip level must be positive and finite".into()));
    }
    let mut sup = vec![0.0; d];
    let mut cx = vec![0.0; d];
    let mut cv = vec![0.0; d];
    for (terms, p, acc) in [(&spec.x_terms, spec.gamma, &mut cx), (&spec.v_terms, spec.beta_prime, &mut cv)] {
        for t in terms {
            if t.component >= d || t.direction.len() != d {
                return Err(Error::Dimension("ridge term does not match the base dimension".into()));
            }
            sup[t.component] += t.weight.abs() * spec.clip;
            acc[t.component] += t.weight.abs() * t.shape.holder(p) * norm(&t.direction).powf(p);
        }
    }
    Ok(KineticForce { bound: norm(&sup), c_x: norm(&cx), c_v: norm(&cv), spec })
}

impl KineticForce {
    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn spec(&self) -> &ForceSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn beta_prime(&self) -> f64 {
        self.spec.beta_prime
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `C` with `|F(x,v) - F(x',v')| ≤ C(|x-x'|^γ + |v-v'|^{β'})`.
    pub fn constant(&self) -> f64 {
        self.c_x.max(self.c_v)
    }

    pub fn position_constant(&self) -> f64 {
        self.c_x
    }

    pub fn velocity_constant(&self) -> f64 {
        self.c_v
    }

    /// Whether `γ ∈ (2/3, 1)`.
    pub fn in_uniqueness_regime(&self) -> bool {
        self.spec.gamma > UNIQUENESS_GAMMA_MIN && self.spec.gamma < 1.0
    }

    pub fn eval_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let s = &self.spec;
        for (terms, y, p) in [(&s.x_terms, x, s.gamma), (&s.v_terms, v, s.beta_prime)] {
            for t in terms {
                let z = dot(&t.direction, y) - t.offset;
                out[t.component] += t.weight * t.shape.apply(z, p).clamp(-s.clip, s.clip);
            }
        }
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d()];
        self.eval_into(x, v, &mut out);
        out
    }

    /// Largest sampled `|F(x,v) - F(x',v')| / (|x-x'|^γ + |v-v'|^{β'})` and largest `|F|`.
    pub fn sampled_moduli(&self, n_pairs: usize, scale: f64, seed: u64) -> (f64, f64) {
        let d = self.d();
        let mut rng = stream_rng(seed, Stream::Auxiliary);
        let gauss = |s: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (mut q, mut sup) = (0.0f64, 0.0f64);
        for _ in 0..n_pairs {
            let (x, v) = (gauss(scale, &mut rng), gauss(scale, &mut rng));
            let sx = scale * 10f64.powf(-4.0 * rng.random::<f64>());
            let sv = scale * 10f64.powf(-4.0 * rng.random::<f64>());
            let dx = gauss(sx, &mut rng);
            let dv = gauss(sv, &mut rng);
            let x2: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let v2: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + b).collect();
            let (f1, f2) = (self.eval(&x, &v), self.eval(&x2, &v2));
            sup = sup.max(norm(&f1));
            let den = norm(&dx).powf(self.gamma()) + norm(&dv).powf(self.beta_prime());
            if den > 0.0 {
                let num = norm(&f1.iter().zip(&f2).map(|(a, b)| a - b).collect::<Vec<_>>());
                q = q.max(num / den);
            }
        }
        (q, sup)
    }

    /// Drift `b(x, v) = (0, F(x, v))` on `R^{2d}` with `β = min(γ, β')`.
    pub fn drift(&self) -> Result<HolderField> {
        let d = self.d();
        let beta = self.gamma().min(self.beta_prime());
        let holder = (self.c_x + self.c_v).max(2.0 * self.bound);
        let force = self.clone();
        let tag = if self.in_uniqueness_regime() { "kinetic" } else { "kinetic(outside uniqueness regime)" };
        HolderField::new(
            2 * d,
            tag,
            self.bound,
            beta,
            holder,
            true,
            Arc::new(move |_, z: &[f64], out: &mut [f64]| {
                out[..d].fill(0.0);
                force.eval_into(&z[..d], &z[d..], &mut out[d..]);
            }),
        )
    }
}

/// `C = (0; I)` stacked.
pub fn kinetic_noise_matrix(d: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(2 * d, d);
    for i in 0..d {
        c[(d + i, i)] = 1.0;
    }
    c
}

/// `n = 2d`, `A = [[0, I], [0, 0]]`, `σ ≡ (0; I)`, `b = (0; F)`, Brownian noise.
pub fn make_kinetic_problem(force: &KineticForce, horizon: f64) -> Result<SdeProblem> {
    let d = force.d();
    SdeProblem::new(
        kinetic_generator(d),
        MatrixIntegrand::Constant(kinetic_noise_matrix(d)),
        force.drift()?,
        horizon,
        GeneratingTriplet::brownian(d),
    )
}

/// Solution of the explicit system: position and velocity paths on the grid of `W`.
#[derive(Clone, Debug)]
pub struct KineticPath {
    pub position: CadlagPath,
    pub velocity: CadlagPath,
}

impl KineticPath {
    /// `(x, v)` stacked as one path on `R^{2d}`.
    pub fn stacked(&self) -> Result<CadlagPath> {
        let d = self.position.dim();
        let mut values = Vec::with_capacity(self.position.values().len() * 2);
        for i in 0..self.position.len() {
            values.extend_from_slice(self.position.value(i));
            values.extend_from_slice(self.velocity.value(i));
        }
        CadlagPath::continuous(2 * d, self.position.times().to_vec(), values)
    }
}

/// Solve `x(t) = x + tv + ∫_0^t (t-s) F ds + ∫_0^t W ds`, `v(t) = v + ∫_0^t F ds + W_t`
/// by a predictor-corrector sweep on the grid of `W`. The kernel is handled as
/// `t ∫F ds - ∫ sF ds`, so the cost is linear in the number of steps.
pub fn explicit_kinetic_solve(force: &KineticForce, w: &CadlagPath, x0: &[f64], v0: &[f64]) -> Result<KineticPath> {
    let d = force.d();
    if w.dim() != d || x0.len() != d || v0.len() != d {
        return Err(Error::Dimension("noise or start point does not match the base dimension".into()));
    }
    if !w.jumps().is_empty() {
        return Err(Error::InvalidArgument("the explicit system needs a continuous noise path".into()));
    }
    if w.value(0).iter().any(|v| *v != 0.0) {
        return Err(Error::InvalidArgument("noise path must start at zero".into()));
    }
    let times = w.times();
    let len = times.len();
    let mut xs = Vec::with_capacity(len * d);
    let mut vs = Vec::with_capacity(len * d);
    xs.extend_from_slice(x0);
    vs.extend_from_slice(v0);
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut iw = vec![0.0; d];
    let (mut f0, mut f1) = (vec![0.0; d], vec![0.0; d]);
    let (mut xp, mut vp) = (vec![0.0; d], vec![0.0; d]);
    for k in 0..len - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        force.eval_into(&xs[k * d..(k + 1) * d], &vs[k * d..(k + 1) * d], &mut f0);
        let (wa, wb) = (w.value(k), w.value(k + 1));
        for i in 0..d {
            iw[i] += 0.5 * h * (wa[i] + wb[i]);
            let p1 = s1[i] + h * f0[i];
            let p2 = s2[i] + h * t0 * f0[i];
            xp[i] = x0[i] + t1 * v0[i] + t1 * p1 - p2 + iw[i];
            vp[i] = v0[i] + p1 + wb[i];
        }
        force.eval_into(&xp, &vp, &mut f1);
        for i in 0..d {
            s1[i] += 0.5 * h * (f0[i] + f1[i]);
            s2[i] += 0.5 * h * (t0 * f0[i] + t1 * f1[i]);
            xs.push(x0[i] + t1 * v0[i] + t1 * s1[i] - s2[i] + iw[i]);
            vs.push(v0[i] + s1[i] + wb[i]);
        }
    }
    Ok(KineticPath {
        position: CadlagPath::continuous(d, times.to_vec(), xs)?,
        velocity: CadlagPath::continuous(d, times.to_vec(), vs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_flow::MatrixExp;

    #[test]
    fn zero_force() {
        let f = holder_force_field(ForceSpec::zero(2, 0.75, 0.5)).unwrap();
        assert_eq!(f.constant(), 0.0);
        assert_eq!(f.eval(&[1.0, 2.0], &[3.0, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_even_term_certificate() {
        let spec = ForceSpec {
            d: 1,
            gamma: 0.75,
            beta_prime: 0.5,
            clip: 1.0,
            x_terms: vec![RidgeTerm { component: 0, weight: 1.0, direction: vec![1.0], offset: 0.0, shape: RidgeShape::Even }],
            v_terms: Vec::new(),
        };
        let f = holder_force_field(spec).unwrap();
        assert_eq!(f.constant(), 1.0);
        for x in [1e-6, 1e-3, 0.2, 0.9] {
            let q = (f.eval(&[x], &[0.0])[0] - f.eval(&[0.0], &[0.0])[0]).abs() / x.powf(0.75);
            assert!((q - 1.0).abs() < 1e-12);
        }
        assert_eq!(f.eval(&[8.0], &[0.0]), vec![1.0]);
    }

    #[test]
    fn standard_force_certificates_dominate_samples() {
        for gamma in [0.6, 0.75, 0.95] {
            let f = holder_force_field(ForceSpec::standard(2, gamma, 0.5)).unwrap();
            let (q, sup) = f.sampled_moduli(10_000, 1.0, 3);
            assert!(q <= f.constant() * (1.0 + 1e-6), "{q} > {}", f.constant());
            assert!(sup <= f.bound() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn regime_tag() {
        assert!(!holder_force_field(ForceSpec::standard(1, 0.6, 0.5)).unwrap().in_uniqueness_regime());
        assert!(holder_force_field(ForceSpec::standard(1, 0.75, 0.5)).unwrap().in_uniqueness_regime());
        assert!(holder_force_field(ForceSpec::standard(1, 0.0, 0.5)).is_err());
        assert!(holder_force_field(ForceSpec::standard(1, 0.5, 1.2)).is_err());
    }

    #[test]
    fn kinetic_problem_shape() {
        let f = holder_force_field(ForceSpec::standard(1, 0.75, 0.5)).unwrap();
        let p = make_kinetic_problem(&f, 1.0).unwrap();
        assert_eq!((p.n(), p.d()), (2, 1));
        let a = p.a();
        assert_eq!(a * a, DMatrix::zeros(2, 2));
        let e = MatrixExp::new(a.clone()).unwrap().at(0.4).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.0, 1.0]));
        let b = p.drift().eval(0.0, &[0.3, -0.1]);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[1], f.eval(&[0.3], &[-0.1])[0]);
    }

    #[test]
    fn drift_certificate_dominates_samples() {
        let f = holder_force_field(ForceSpec::standard(2, 0.75, 0.5)).unwrap();
        let b = f.drift().unwrap();
        let (q, sup) = b.sampled_moduli(&[0.0], 10_000, 1.0, 5);
        assert!(q <= b.holder_const() * (1.0 + 1e-6));
        assert!(sup <= b.bound() * (1.0 + 1e-12));
    }

    #[test]
    fn free_and_constant_force_explicit_solutions() {
        let times: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let w = CadlagPath::zeros(1, times).unwrap();
        let f = holder_force_field(ForceSpec::zero(1, 0.75, 0.5)).unwrap();
        let sol = explicit_kinetic_solve(&f, &w, &[0.5], &[2.0]).unwrap();
        for (i, t) in w.times().iter().enumerate() {
            assert!((sol.position.value(i)[0] - (0.5 + 2.0 * t)).abs() < 1e-14);
            assert_eq!(sol.velocity.value(i)[0], 2.0);
        }
        // clipped even ridge with a huge offset is the constant 0.3
        let spec = ForceSpec {
            d: 1,
            gamma: 0.75,
            beta_prime: 0.5,
            clip: 1.0,
            x_terms: vec![RidgeTerm { component: 0, weight: 0.3, direction: vec![0.0], offset: -100.0, shape: RidgeShape::Even }],
            v_terms: Vec::new(),
        };
        let c = holder_force_field(spec).unwrap();
        let sol = explicit_kinetic_solve(&c, &w, &[0.5], &[2.0]).unwrap();
        for (i, t) in w.times().iter().enumerate() {
            assert!((sol.position.value(i)[0] - (0.5 + 2.0 * t + 0.15 * t * t)).abs() < 1e-10);
            assert!((sol.velocity.value(i)[0] - (2.0 + 0.3 * t)).abs() < 1e-10);
        }
    }
}
