use davie_core::harness::{
    cadlag_in_s_probe, davie_uniqueness_check, dyadic_point_pairs, flow_property_check, holder_flow_modulus_check,
    lp_lipschitz_estimate, DavieConfig, FlowSample,
};
use davie_core::kinetic::{RidgeShape, RidgeTerm};
use davie_core::rng::path_seed;
use davie_core::sde::{resolve, Forcing};
use davie_core::{
    explicit_kinetic_solve, holder_force_field, make_kinetic_problem, sample_levy_path, solve_strong, CadlagPath,
    ForceSpec, GeneratingTriplet, HolderField, Jump, LevyPath, MatrixIntegrand, Method, SdeProblem,
};
use nalgebra::DMatrix;

fn free(n: usize) -> SdeProblem {
    SdeProblem::new(DMatrix::zeros(n, n), MatrixIntegrand::identity(n), HolderField::zero(n), 1.0, GeneratingTriplet::brownian(n))
        .unwrap()
}

fn kinetic(gamma: f64) -> SdeProblem {
    make_kinetic_problem(&holder_force_field(ForceSpec::standard(1, gamma, 0.5)).unwrap(), 1.0).unwrap()
}

fn detail(r: &davie_core::CheckReport, label: &str) -> f64 {
    r.details.iter().find(|c| c.label == label).unwrap_or_else(|| panic!("no detail {label}")).residual
}

#[test]
fn davie_surrogate_with_lipschitz_drift() {
    let p = SdeProblem::new(DMatrix::zeros(2, 2), MatrixIntegrand::identity(2), HolderField::sine(2), 1.0, GeneratingTriplet::brownian(2))
        .unwrap();
    for i in 0..20 {
        let l = sample_levy_path(p.triplet(), 1.0, 400, path_seed(41, i)).unwrap();
        let r = davie_uniqueness_check(&p, &l, 0.0, &[0.5, -0.5], &DavieConfig::new(0.01, vec![0.6, 0.8])).unwrap();
        assert!(r.pass, "seed {i}: {} > {}", r.max_residual, r.tolerance);
        assert_eq!(r.cases.len(), 6);
    }
}

#[test]
fn davie_surrogate_with_zero_drift_is_exact() {
    let p = free(1);
    let l = sample_levy_path(p.triplet(), 1.0, 400, 42).unwrap();
    let r = davie_uniqueness_check(&p, &l, 0.0, &[1.0], &DavieConfig::new(0.01, vec![1.0])).unwrap();
    assert!(r.pass);
    assert_eq!(r.max_residual, 0.0);
}

#[test]
fn davie_residuals_shrink_with_the_step() {
    let p = kinetic(0.75);
    let mut coarse = 0.0;
    let mut fine = 0.0;
    for i in 0..10 {
        let l = sample_levy_path(p.triplet(), 1.0, 800, path_seed(43, i)).unwrap();
        let x = [0.3, -0.2];
        coarse += davie_uniqueness_check(&p, &l, 0.0, &x, &DavieConfig::new(0.02, vec![1.0, 0.0])).unwrap().max_residual;
        fine += davie_uniqueness_check(&p, &l, 0.0, &x, &DavieConfig::new(0.01, vec![1.0, 0.0])).unwrap().max_residual;
    }
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn flow_law_and_start_identity() {
    let p = kinetic(0.75);
    let times = [0.0, 0.2, 0.5, 0.8, 1.0];
    let mut triples = Vec::new();
    for &s in &times {
        for &r in &times {
            for &t in &times {
                triples.push((s, r, t));
            }
        }
    }
    let points = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
    let l = sample_levy_path(p.triplet(), 1.0, 400, 44).unwrap();
    let r = flow_property_check(&p, &l, &triples, &points, 0.01).unwrap();
    assert!(r.pass, "{} > {}", r.max_residual, r.tolerance);
    assert!(r.cases.iter().filter(|c| c.label.contains("s=0.5,r=0.5")).all(|c| c.residual == 0.0));

    let forcing = Forcing::new(&p, &l, Some(0.01)).unwrap();
    let sample = FlowSample::build(&p, &forcing, &[0.0, 0.5], &[0.0, 0.5, 1.0], &points, Some(44)).unwrap();
    for (xi, x) in points.iter().enumerate() {
        assert_eq!(sample.get(0, 0, xi), x.as_slice());
        assert_eq!(sample.get(1, 1, xi), x.as_slice());
    }
    let mut csv = Vec::new();
    sample.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().lines().count() > 1);
}

#[test]
fn holder_modulus_without_drift_is_translation() {
    let p = free(2);
    let l = sample_levy_path(p.triplet(), 1.0, 400, 45).unwrap();
    let pairs = dyadic_point_pairs(2, 1.0, &[2, 4, 6, 8], 6, 45);
    let r = holder_flow_modulus_check(&p, &l, 0.0, &pairs, 9, 0.01).unwrap();
    assert!(r.pass);
    // r = |x-y|^{2n/m} / max(.., 1) decreases with the gap
    let p2 = detail(&r, "p99@2^-2");
    let p8 = detail(&r, "p99@2^-8");
    assert!(p8 < p2);
    assert!(holder_flow_modulus_check(&p, &l, 0.0, &pairs, 4, 0.01).is_err());
}

#[test]
fn holder_modulus_kinetic_shows_no_blow_up() {
    let p = kinetic(0.75);
    let pairs = dyadic_point_pairs(2, 1.0, &[2, 3, 4, 5, 6, 7, 8], 8, 46);
    for i in 0..5 {
        let l = sample_levy_path(p.triplet(), 1.0, 400, path_seed(46, i)).unwrap();
        let r = holder_flow_modulus_check(&p, &l, 0.0, &pairs, 9, 0.01).unwrap();
        assert!(r.pass, "seed {i}: {}", r.max_residual);
    }
}

#[test]
fn lp_ratio_is_one_without_drift() {
    let p = free(1);
    let pairs = vec![(vec![0.0], vec![0.5]), (vec![1.0], vec![1.0 + 1.0 / 128.0])];
    let rep = lp_lipschitz_estimate(&p, 2.0, &[0.0, 0.5], &pairs, 20, 400, 0.01, 47).unwrap();
    for row in &rep.rows {
        assert!((row.ratio - 1.0).abs() < 1e-12 && row.se < 1e-12);
    }
    assert!(rep.pass);
    assert!(lp_lipschitz_estimate(&p, 1.5, &[0.0], &pairs, 20, 400, 0.01, 47).is_err());
}

#[test]
fn lp_ratios_respect_jensen_ordering() {
    let p = kinetic(0.75);
    let x = vec![0.3, -0.2];
    let pairs = vec![(x.clone(), vec![0.3 + 1.0 / 16.0, -0.2]), (x, vec![0.3, -0.2 + 1.0 / 64.0])];
    let two = lp_lipschitz_estimate(&p, 2.0, &[0.0, 0.5], &pairs, 100, 400, 0.01, 48).unwrap();
    let four = lp_lipschitz_estimate(&p, 4.0, &[0.0, 0.5], &pairs, 100, 400, 0.01, 48).unwrap();
    for (a, b) in two.rows.iter().zip(&four.rows) {
        assert!(a.ratio <= b.ratio.sqrt() * (1.0 + 1e-12), "{} > {}", a.ratio, b.ratio.sqrt());
    }
}

#[test]
fn cadlag_probe_on_continuous_driver() {
    let p = kinetic(0.75);
    let points = vec![vec![0.0, 0.0], vec![0.5, 0.5]];
    for i in 0..5 {
        let l = sample_levy_path(p.triplet(), 1.0, 1024, path_seed(49, i)).unwrap();
        let r = cadlag_in_s_probe(&p, &l, 0.5, &[2, 3, 4, 5, 6, 7, 8], &points, 1.0 / 256.0).unwrap();
        assert!(r.pass, "seed {i}: {:?}", r.cases);
        assert!(detail(&r, "jump_effect") < 1e-12);
    }
}

#[test]
fn cadlag_probe_sees_a_jump_at_the_start_time() {
    let p = free(1);
    let times: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    let l = LevyPath::pure_jump(1, times, vec![Jump { time: 0.5, delta: vec![0.75] }]).unwrap();
    let r = cadlag_in_s_probe(&p, &l, 0.5, &[2, 3, 4, 5], &[vec![0.0], vec![1.0]], 1.0 / 64.0).unwrap();
    assert!(r.pass);
    assert!((detail(&r, "jump_effect") - 0.75).abs() < 1e-15);
    for m in [2, 3, 4, 5] {
        assert_eq!(detail(&r, &format!("right@2^-{m}")), 0.0);
        assert_eq!(detail(&r, &format!("left@2^-{m}")), 0.0);
    }
}

#[test]
fn explicit_kinetic_system_matches_block_form() {
    let force = holder_force_field(ForceSpec::standard(2, 0.75, 0.5)).unwrap();
    let p = make_kinetic_problem(&force, 1.0).unwrap();
    let x = [0.3, -0.2, 0.1, 0.4];
    for i in 0..20 {
        let l = sample_levy_path(p.triplet(), 1.0, 400, path_seed(50, i)).unwrap();
        let block = solve_strong(&p, &l, 0.0, &x, &Method::Euler, Some(0.01)).unwrap();
        let w = resolve(&l, Some(0.01)).unwrap();
        let explicit = explicit_kinetic_solve(&force, w.total(), &x[..2], &x[2..]).unwrap().stacked().unwrap();
        let err = davie_core::harness::scheme_error(&p, &l, 0.0, &x, 0.01).unwrap();
        let d = block.path.sup_distance(&explicit).unwrap();
        assert!(d <= 10.0 * err + 1e-12, "seed {i}: {d} vs {err}");
    }
}

#[test]
fn free_kinetic_motion_integrates_the_noise() {
    let force = holder_force_field(ForceSpec::zero(1, 0.75, 0.5)).unwrap();
    let l = sample_levy_path(&GeneratingTriplet::brownian(1), 1.0, 200, 51).unwrap();
    let w = l.total();
    let sol = explicit_kinetic_solve(&force, w, &[0.2], &[1.0]).unwrap();
    let mut integral = 0.0;
    for (i, t) in w.times().iter().enumerate() {
        if i > 0 {
            integral += 0.5 * (t - w.times()[i - 1]) * (w.value(i)[0] + w.value(i - 1)[0]);
        }
        assert!((sol.position.value(i)[0] - (0.2 + t + integral)).abs() < 1e-12);
        assert!((sol.velocity.value(i)[0] - (1.0 + w.value(i)[0])).abs() < 1e-12);
    }
}

#[test]
fn constant_force_is_integrated_exactly() {
    let c: f64 = 0.7;
    let gamma: f64 = 0.75;
    let term = RidgeTerm { component: 0, weight: 1.0, direction: vec![0.0], offset: -c.powf(1.0 / gamma), shape: RidgeShape::Even };
    let force =
        holder_force_field(ForceSpec { d: 1, gamma, beta_prime: 0.5, clip: 1.0, x_terms: vec![term], v_terms: Vec::new() }).unwrap();
    assert!((force.eval(&[3.0], &[-2.0])[0] - c).abs() < 1e-15);
    let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let still = CadlagPath::zeros(1, times.clone()).unwrap();
    let sol = explicit_kinetic_solve(&force, &still, &[0.4], &[-1.1]).unwrap();
    let p = make_kinetic_problem(&force, 1.0).unwrap();
    let block = solve_strong(&p, &LevyPath::continuous(still).unwrap(), 0.0, &[0.4, -1.1], &Method::picard(), None).unwrap();
    for (i, t) in times.iter().enumerate() {
        let x = 0.4 - 1.1 * t + 0.5 * c * t * t;
        let v = -1.1 + c * t;
        assert!((sol.position.value(i)[0] - x).abs() < 1e-10);
        assert!((sol.velocity.value(i)[0] - v).abs() < 1e-10);
        assert!((block.path.value(i)[0] - x).abs() < 1e-10 && (block.path.value(i)[1] - v).abs() < 1e-10);
    }
}
