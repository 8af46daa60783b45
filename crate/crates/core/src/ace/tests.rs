use super::*;
use crate::control::DiscretePlant;
use crate::gpc::Standardizer;
use crate::ident::{build_archive, ArchiveSettings, HistorianSpec, IdentOptions};
use crate::plant::PlantParams;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

/// O(n^2) LOF written directly from the definitions, with full sorts.
fn brute_force_lof(points: &[Vec<f64>], q: &[f64], k: usize) -> f64 {
    let st = Standardizer::fit(&points.iter().map(|p| p.as_slice()).collect::<Vec<_>>()).unwrap();
    let z: Vec<Vec<f64>> = points.iter().map(|p| st.apply(p)).collect();
    let zq = st.apply(q);
    if z.iter().all(|p| p == &z[0]) {
        return 1.0;
    }
    let k = k.min(z.len() - 1);
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let knn = |x: &[f64], skip: Option<usize>| {
        let mut v: Vec<(f64, usize)> = (0..z.len()).filter(|i| Some(*i) != skip).map(|i| (d(x, &z[i]), i)).collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        v.truncate(k);
        v
    };
    let kdist: Vec<f64> = (0..z.len()).map(|i| knn(&z[i], Some(i))[k - 1].0).collect();
    let lrd_of = |nb: &[(f64, usize)]| {
        let s: f64 = nb.iter().map(|(dd, o)| dd.max(kdist[*o])).sum();
        1.0 / (s / k as f64).max(f64::MIN_POSITIVE)
    };
    let lrd: Vec<f64> = (0..z.len()).map(|i| lrd_of(&knn(&z[i], Some(i)))).collect();
    let nq = knn(&zq, None);
    let mean: f64 = nq.iter().map(|(_, o)| lrd[*o]).sum::<f64>() / k as f64;
    mean / lrd_of(&nq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn lof_matches_brute_force(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 3..40),
        q in prop::collection::vec(-4.0f64..4.0, 3),
        k in 1usize..12,
    ) {
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let fast = lof::lof(&refs, &q, k).unwrap();
        let slow = brute_force_lof(&pts, &q, k);
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn lof_grid_interior_and_exterior() {
    let pts: Vec<Vec<f64>> = (0..5).flat_map(|i| (0..5).map(move |j| vec![i as f64, j as f64])).collect();
    let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let inner = lof::lof(&refs, &[2.0, 2.0], 4).unwrap();
    assert_abs_diff_eq!(inner, brute_force_lof(&pts, &[2.0, 2.0], 4), epsilon = 1e-12);
    assert!((inner - 1.0).abs() < 0.1);
    let outer = lof::lof(&refs, &[14.0, 2.0], 4).unwrap();
    assert!(outer > 1.5);
}

const THETA0: [f64; 4] = [8.0, 0.1, 1.0, 0.5];

/// 1-D toy: only Kp varies, passing for Kp above 10.5.
fn toy_data() -> LabeledDataset {
    let mut d = LabeledDataset::new(4);
    for i in 0..=20 {
        let x = i as f64;
        d.push(vec![x, 0.1, 1.0, 0.5], u8::from(x > 10.5), Provenance::Historian).unwrap();
    }
    d
}

fn toy_spec() -> CostSpec {
    let mut s = CostSpec::new(&THETA0);
    s.mask = vec![true, false, false, false];
    s
}

fn toy_posterior(d: &LabeledDataset) -> GpcPosterior {
    fit_laplace(d, &KernelSpec::median_heuristic(d).unwrap()).unwrap()
}

#[test]
fn cost_examples() {
    let d = toy_data();
    let m = CostModel::new(toy_spec(), &d).unwrap();
    let gate = PlausibilityGate::disabled();
    assert_eq!(m.cost(&THETA0, 0.0, 7.0, &gate), 3.5);
    let t = [9.0, 0.1, 1.0, 0.5];
    let mut spec0 = toy_spec();
    spec0.beta = 0.0;
    let m0 = CostModel::new(spec0, &d).unwrap();
    assert_eq!(m0.cost(&t, 0.5, 7.0, &gate), m0.distance(&t));
    assert_abs_diff_eq!(m0.distance(&t), 1.0 / m0.scales()[0], epsilon = 1e-15);
    let mut on = toy_spec();
    on.lof_k = 3;
    let gate = PlausibilityGate::fit(&d, &on, Execution::Sequential).unwrap();
    assert_eq!(m.cost(&[60.0, 0.1, 1.0, 0.5], 0.5, 2.0, &gate), f64::INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cost_without_sparsity_or_gate_is_two_term(
        x in 4.0f64..12.0, f in 0.0f64..1.0, lambda in 1.0f64..1e3,
    ) {
        let d = toy_data();
        let mut spec = toy_spec();
        spec.beta = 0.0;
        spec.lof_enabled = false;
        let m = CostModel::new(spec.clone(), &d).unwrap();
        let gate = PlausibilityGate::fit(&d, &spec, Execution::Sequential).unwrap();
        let t = [x, 0.1, 1.0, 0.5];
        let expect = (x - 8.0).abs() / m.scales()[0] + lambda * (f - 0.5).abs();
        prop_assert_eq!(m.cost(&t, f, lambda, &gate), expect);
    }

    #[test]
    fn schedule_is_increasing_and_reaches_max(l0 in 1.01f64..50.0, p in 1.01f64..3.0, lmax in 60.0f64..1e6) {
        let s = PenaltySchedule { lambda0: l0, lambda_max: lmax, growth: p, epsilon: 1e-3 };
        let bound = ((lmax.ln() / l0.ln()).ln() / p.ln()).ceil() as usize + 1;
        let mut l = l0;
        let mut steps = 0;
        while l < lmax {
            let n = s.next(l);
            prop_assert!(n > l);
            l = n;
            steps += 1;
        }
        prop_assert!(steps <= bound);
        prop_assert_eq!(steps, s.steps_to_max());
    }
}

#[test]
fn trust_region_respects_mask_and_floors() {
    let spec = CostSpec::new(&[0.2, 3.0, 40.0, 0.3]);
    let b = spec.trust_region().unwrap();
    assert_eq!(b.lo(), &[0.0, 1.5, 20.0, 1e-3]);
    assert_eq!(b.hi(), &[0.7, 4.5, 60.0, 0.8]);
    let b = toy_spec().trust_region().unwrap();
    assert_eq!(b.lo()[1..], THETA0[1..]);
    assert_eq!(b.hi()[1..], THETA0[1..]);
}

/// EI by composite Simpson integration over the latent Gaussian.
fn ei_quadrature(post: &GpcPosterior, m: &CostModel, lambda: f64, j_star: f64, theta: &[f64]) -> f64 {
    let pred = post.predict(theta);
    let sd = pred.sigma2_a.sqrt();
    let base = m.base_cost(theta);
    let n = 40_000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let g = |z: f64| {
        let f = logistic(pred.mu_a + sd * z);
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (j_star - base - lambda * (f - 0.5).abs()).max(0.0) * phi
    };
    let mut s = g(a) + g(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn monte_carlo_ei_matches_quadrature() {
    let d = toy_data();
    let post = toy_posterior(&d);
    let m = CostModel::new(toy_spec(), &d).unwrap();
    let gate = PlausibilityGate::disabled();
    let lambda = 4.0;
    let j_star = incumbent_cost(&post, &m, &gate, lambda, &[THETA0.to_vec()]);
    for x in [8.0, 9.0, 10.0, 10.5, 11.5] {
        let t = [x, 0.1, 1.0, 0.5];
        let mc = expected_improvement(&post, &m, &gate, lambda, j_star, &t, 100_000, 11);
        let quad = ei_quadrature(&post, &m, lambda, j_star, &t);
        assert!((mc - quad).abs() <= 0.01 * j_star, "x = {x}: mc {mc} quad {quad}");
        assert!(mc >= 0.0);
    }
}

#[test]
fn ei_vanishes_when_incumbent_is_below_every_cost() {
    let d = toy_data();
    let post = toy_posterior(&d);
    let m = CostModel::new(toy_spec(), &d).unwrap();
    let gate = PlausibilityGate::disabled();
    // Costs are nonnegative, so J* = 0 leaves nothing to improve.
    let ei = expected_improvement(&post, &m, &gate, 2.0, 0.0, &THETA0, 256, 1);
    assert_eq!(ei, 0.0);
}

#[test]
fn all_frozen_mask_proposes_theta0() {
    let d = toy_data();
    let post = toy_posterior(&d);
    let mut spec = toy_spec();
    spec.mask = vec![false; 4];
    let m = CostModel::new(spec.clone(), &d).unwrap();
    let gate = PlausibilityGate::fit(&d, &spec, Execution::Sequential).unwrap();
    let j = incumbent_cost(&post, &m, &gate, 2.0, &[THETA0.to_vec()]);
    let est = EiEstimator::new(&post, &m, &gate, 2.0, j, 64, 3);
    let p = propose(&est, None, &SearchSettings::default(), 5);
    assert_eq!(p.theta, THETA0.to_vec());
}

#[test]
fn proposal_is_deterministic_and_contained() {
    let d = toy_data();
    let post = toy_posterior(&d);
    let spec = toy_spec();
    let m = CostModel::new(spec.clone(), &d).unwrap();
    let gate = PlausibilityGate::fit(&d, &spec, Execution::Sequential).unwrap();
    let j = incumbent_cost(&post, &m, &gate, 2.0, &[THETA0.to_vec()]);
    let est = EiEstimator::new(&post, &m, &gate, 2.0, j, 64, 3);
    let a = propose(&est, None, &SearchSettings::default(), 5);
    let b = propose(&est, None, &SearchSettings::default(), 5);
    assert_eq!(a, b);
    assert!(m.trust_region().contains(&a.theta));
    assert!(gate.is_inlier(&a.theta));
    assert!(a.ei > 0.0);
}

#[test]
fn boundary_sample_matches_grid_scan() {
    let d = toy_data();
    let post = toy_posterior(&d);
    let spec = toy_spec();
    let m = CostModel::new(spec.clone(), &d).unwrap();
    let gate = PlausibilityGate::fit(&d, &spec, Execution::Sequential).unwrap();
    let s = SearchSettings::default();
    let bs = sample_decision_boundary(&post, &m, &gate, &[], &s, 9);
    assert!(bs.feasible);
    assert!((bs.p - 0.5).abs() <= s.delta_b);

    let b = m.trust_region();
    let n = 200_000;
    let mut best = f64::NAN;
    for i in 0..=n {
        let x = b.lo()[0] + (b.hi()[0] - b.lo()[0]) * i as f64 / n as f64;
        let t = [x, 0.1, 1.0, 0.5];
        if (post.predict(&t).p - 0.5).abs() <= s.delta_b
            && gate.is_inlier(&t)
            && (best.is_nan() || (x - 8.0).abs() < (best - 8.0).abs())
        {
            best = x;
        }
    }
    let unit = post.kernel().length_scales[0] * post.standardizer().scale[0];
    assert!((bs.theta[0] - best).abs() <= 0.05 * unit, "{} vs {best}", bs.theta[0]);
    assert_eq!(bs.theta[1..], THETA0[1..]);
}

#[test]
fn boundary_at_theta0_returns_theta0() {
    // Labels symmetric about Kp = 8 put the boundary at theta0.
    let mut d = LabeledDataset::new(4);
    for i in 0..=16 {
        let x = i as f64;
        if x != 8.0 {
            d.push(vec![x, 0.1, 1.0, 0.5], u8::from(x > 8.0), Provenance::Historian).unwrap();
        }
    }
    let post = toy_posterior(&d);
    assert_abs_diff_eq!(post.predict(&THETA0).p, 0.5, epsilon = 1e-9);
    let spec = toy_spec();
    let m = CostModel::new(spec.clone(), &d).unwrap();
    let gate = PlausibilityGate::fit(&d, &spec, Execution::Sequential).unwrap();
    let bs = sample_decision_boundary(&post, &m, &gate, &[], &SearchSettings::default(), 1);
    assert!(bs.feasible);
    assert_eq!(bs.theta, THETA0.to_vec());
}

fn case1_archive() -> (DiscretePlant, LabeledDataset) {
    let plant = DiscretePlant::from_params(&PlantParams::default()).unwrap();
    let theta0 = ControllerTheta::from_slice(&[3.693, 0.054, 39.708, 1.175]).unwrap();
    let settings = ArchiveSettings {
        historian: HistorianSpec::around(&theta0),
        ident: IdentOptions::default(),
        n_hist: 30,
        max_attempts: 5,
    };
    let a = build_archive(&plant, &SimConfig::default(), &SpecThresholds::default(), &settings, 7, Execution::Parallel)
        .unwrap();
    (plant, a.dataset)
}

#[test]
fn seeded_run_is_reproducible_and_respects_contracts() {
    let (plant, d) = case1_archive();
    let spec = CostSpec::new(&[3.693, 0.054, 39.708, 1.175]);
    let settings = AceSettings { budget: 25, ..AceSettings::default() };
    let cfg = SimConfig::default();
    let tau = SpecThresholds::default();
    let r = run_ace(&plant, &cfg, &tau, &d, &spec, &settings, 3, Execution::Parallel).unwrap();
    let again = run_ace(&plant, &cfg, &tau, &d, &spec, &settings, 3, Execution::Sequential).unwrap();
    assert_eq!(r, again);

    assert!(r.tests <= settings.budget);
    assert_eq!(r.tests, r.trace.len());
    assert_eq!(r.trace[0].kind, CandidateKind::Baseline);
    assert_eq!(r.trace[0].label, 0);
    let box_ = spec.trust_region().unwrap();
    for rec in &r.trace {
        assert!(box_.contains(&rec.theta));
        assert!(rec.ei >= 0.0);
        if rec.kind == CandidateKind::Proposal {
            assert!(rec.lof <= spec.lof_threshold);
        }
    }
    let lambdas: Vec<f64> = r.trace.iter().filter(|c| c.kind == CandidateKind::Proposal).map(|c| c.lambda).collect();
    assert!(lambdas.windows(2).all(|w| w[1] > w[0] || w[1] == settings.schedule.lambda0));
    if r.valid {
        let d_cfe = r.trace.iter().find(|c| c.theta == r.cfe).unwrap().distance;
        assert!(r.trace.iter().filter(|c| c.label == 1).all(|c| c.distance >= d_cfe));
        assert_ne!(r.cfe, spec.theta0);
    }
    for j in 0..4 {
        assert_eq!(r.delta[j], r.cfe[j] - spec.theta0[j]);
    }
}

#[test]
fn passing_baseline_returns_immediately() {
    let (plant, d) = case1_archive();
    let spec = CostSpec::new(&[3.693, 0.074, 39.708, 1.175]);
    let r = run_ace(&plant, &SimConfig::noise_free(), &SpecThresholds::default(), &d, &spec, &AceSettings::default(), 1, Execution::Sequential)
        .unwrap();
    assert!(r.valid);
    assert_eq!(r.tests, 1);
    assert_eq!(r.delta, vec![0.0; 4]);
    assert_eq!(r.cfe, spec.theta0);
}
