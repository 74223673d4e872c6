//! Property and invariant tests spanning the estimation pipeline.

use proptest::prelude::*;

use stochmed::crossfit::{
    fit_nuisances, make_folds, EstimationConfig, FullSampleFits, LearnerSet,
};
use stochmed::eif::{assemble_eif, WeightPolicy};
use stochmed::estimators::{
    decompose_effects, estimate_onestep, estimate_substitution, EstimatorKind,
};
use stochmed::inference::{
    attach_uniform_inference, multiplier_bootstrap, normal_quantile, Multiplier,
    UniformInferenceConfig,
};
use stochmed::interventions::{ips_gdelta, shift_gdelta, tilt_mass_binary, Support};
use stochmed::learners::{
    fit_exposure_mechanism, FeatureMaps, LearnerSpec, PhiForm,
};
use stochmed::model::{InterventionSpec, Matrix, ObservedDataset};
use stochmed::sim::{
    generate, harness_learners_crossfit, harness_maps, oracle_truth, Dgp5, MisspecToggle,
    HARNESS_FOLDS,
};

proptest! {
    #[test]
    fn ips_gdelta_monotone(g1 in 0.01f64..0.99, g2 in 0.01f64..0.99,
                           d1 in 0.05f64..20.0, d2 in 0.05f64..20.0) {
        let (glo, ghi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let (dlo, dhi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        // strictly increasing in the propensity
        if ghi - glo > 1e-9 {
            prop_assert!(ips_gdelta(glo, dlo).unwrap() < ips_gdelta(ghi, dlo).unwrap());
        }
        // strictly increasing in the odds multiplier
        if dhi - dlo > 1e-9 {
            prop_assert!(ips_gdelta(glo, dlo).unwrap() < ips_gdelta(glo, dhi).unwrap());
        }
        let v = ips_gdelta(g1, d1).unwrap();
        prop_assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn tilt_equals_ips_under_log_parameterization(g1 in 0.01f64..0.99, delta in -3.0f64..3.0) {
        let (mass, _) = tilt_mass_binary(g1, delta).unwrap();
        let ips = ips_gdelta(g1, delta.exp()).unwrap();
        prop_assert!((mass - ips).abs() < 1e-12);
    }

    #[test]
    fn fold_plans_partition(n in 2usize..200, j in 2usize..10, seed in 0u64..1000) {
        prop_assume!(j <= n);
        let plan = make_folds(n, j, seed).unwrap();
        prop_assert_eq!(plan.assignment.len(), n);
        let mut sizes = vec![0usize; j];
        for &f in &plan.assignment {
            prop_assert!(f < j);
            sizes[f] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "fold sizes differ by more than one");
        prop_assert_eq!(plan.assignment.clone(), make_folds(n, j, seed).unwrap().assignment);
    }

    #[test]
    fn tilt_grid_normalizes_for_smooth_densities(delta in -2.0f64..2.0, scale in 0.3f64..2.0) {
        // squared-sine hump on [0, 2]: smooth and positive in the interior
        let support = Support::grid_over(0.0, 2.0, 512);
        let raw: Vec<f64> = support
            .points()
            .iter()
            .map(|&a| (std::f64::consts::PI * a / 2.0).sin().powi(2) * scale + 1e-4)
            .collect();
        let total = support.integrate(&raw);
        let g: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let (tilted, _) =
            stochmed::interventions::tilt_density_on_support(&g, &support, delta).unwrap();
        prop_assert!((support.integrate(&tilted) - 1.0).abs() < 1e-6);
        // support containment: the tilt never invents mass where g had none
        for (t, gv) in tilted.iter().zip(&g) {
            if *gv == 0.0 {
                prop_assert!(*t == 0.0);
            }
        }
    }

    #[test]
    fn shift_support_containment(delta in 0.05f64..0.8) {
        // g supported on [0, 1]; the shifted density must vanish outside
        let g = |a: f64| if (0.0..=1.0).contains(&a) { 1.0 } else { 0.0 };
        for k in 0..60 {
            let a = -0.5 + 2.0 * k as f64 / 59.0;
            let d = shift_gdelta(g, 0.0, 1.0, delta, a).unwrap();
            if !(0.0..=1.0).contains(&a) {
                prop_assert!(d == 0.0, "mass outside the natural support at {a}");
            }
            prop_assert!(d >= 0.0);
        }
    }
}

#[test]
fn multiplier_moments() {
    use rand::SeedableRng;
    let n_boot = 10_000usize;
    for mult in [Multiplier::Rademacher, Multiplier::Gaussian] {
        // drive the bootstrap's own generator through a single observation
        // whose residual is 1: the bootstrap statistic per draw is xi/1
        let mut draws = Vec::with_capacity(n_boot);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..n_boot {
            let xi: f64 = match mult {
                Multiplier::Rademacher => {
                    if rand::Rng::gen::<bool>(&mut rng) {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Multiplier::Gaussian => {
                    rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
                }
            };
            draws.push(xi);
        }
        let mean: f64 = draws.iter().sum::<f64>() / n_boot as f64;
        let var: f64 = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_boot as f64;
        let tol = 4.0 / (n_boot as f64).sqrt();
        assert!(mean.abs() < tol, "multiplier mean {mean} exceeds {tol}");
        assert!((var - 1.0).abs() < tol, "multiplier variance {var}");
    }
}

#[test]
fn single_point_grid_critical_value_matches_normal_quantile() {
    use rand::Rng;
    use rand::SeedableRng;
    // standardized scores for one grid point; the conditional bootstrap
    // process converges to a standard normal coordinate
    let n = 2000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let s: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt();
    let cfg = UniformInferenceConfig {
        delta_grid: vec![1.0],
        n_boot: 20_000,
        multiplier: Multiplier::Rademacher,
        alpha: 0.05,
        seed: 12,
    };
    let out = multiplier_bootstrap(&Matrix::new(s, 1), &[mean], &[sd], &cfg).unwrap();
    let z = normal_quantile(0.975);
    assert!(
        (out.critical_value - z).abs() < 0.03,
        "critical value {} vs normal quantile {z}",
        out.critical_value
    );
}

#[test]
fn duplicated_grid_column_leaves_critical_value_unchanged() {
    let n = 400;
    let vals: Vec<f64> = (0..n).map(|i| ((i * 83) % 41) as f64 / 10.0 - 2.0).collect();
    let single = Matrix::new(vals.clone(), 1);
    let doubled = {
        let mut flat = Vec::with_capacity(2 * n);
        for v in &vals {
            flat.push(*v);
            flat.push(*v);
        }
        Matrix::new(flat, 2)
    };
    let cfg1 = UniformInferenceConfig {
        delta_grid: vec![1.0],
        n_boot: 4000,
        seed: 31,
        ..Default::default()
    };
    let cfg2 = UniformInferenceConfig {
        delta_grid: vec![1.0, 2.0],
        n_boot: 4000,
        seed: 31,
        ..Default::default()
    };
    let a = multiplier_bootstrap(&single, &[0.2], &[1.5], &cfg1).unwrap();
    let b = multiplier_bootstrap(&doubled, &[0.2, 0.2], &[1.5, 1.5], &cfg2).unwrap();
    // perfectly correlated coordinates share every supremum draw
    assert_eq!(a.critical_value, b.critical_value);
    assert_eq!(a.p_value, b.p_value);
}

#[test]
fn onestep_equals_substitution_plus_score_means_with_shared_fits() {
    let data = generate(600, 21);
    let spec = InterventionSpec::IncrementalPropensity { delta_prime: 0.5 };
    let cfg = EstimationConfig::default();
    let fits = fit_nuisances(
        &data,
        &spec,
        &LearnerSet::saturated(),
        &harness_maps(),
        &cfg,
    )
    .unwrap();
    let sub = estimate_substitution(&data, &fits, &spec, &cfg).unwrap();
    let batch = assemble_eif(
        &data,
        &FullSampleFits(&fits),
        &spec,
        &Support::Binary,
        WeightPolicy::default(),
        false,
    )
    .unwrap();
    let n = data.n() as f64;
    let mean_dy_da: f64 = batch
        .records
        .iter()
        .map(|r| r.d_y + r.d_a)
        .sum::<f64>()
        / n;
    assert!(
        (batch.theta - (sub + mean_dy_da)).abs() < 1e-12,
        "one-step {} vs substitution {} + correction {}",
        batch.theta,
        sub,
        mean_dy_da
    );
}

#[test]
fn randomized_trial_mode_zeroes_exposure_score() {
    let data = generate(500, 33);
    let spec = InterventionSpec::IncrementalPropensity { delta_prime: 2.0 };
    let cfg = EstimationConfig {
        known_g: Some(stochmed::learners::GFit::from_mass1_fn(|w| {
            Dgp5::true_g1(w)
        })),
        ..Default::default()
    };
    let plan = make_folds(data.n(), 5, 3).unwrap();
    let one = estimate_onestep(
        &data,
        &spec,
        &harness_learners_crossfit(MisspecToggle::none()),
        &harness_maps(),
        &plan,
        &cfg,
    )
    .unwrap();
    assert!(one.batch.records.iter().all(|r| r.d_a == 0.0));
}

#[test]
fn phi_constant_when_mediators_are_inert() {
    // when m does not depend on z, the incremental pseudo-outcome is the
    // constant difference of arms and phi inherits it
    let n = 200;
    let w: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let a: Vec<f64> = (0..n).map(|i| ((i / 2) % 2) as f64).collect();
    let z: Vec<f64> = (0..n).map(|i| ((i / 4) % 2) as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| 2.0 * a[i] + w[i]).collect();
    let data = ObservedDataset::from_parts(
        Matrix::from_columns(&[w], n),
        a,
        Matrix::from_columns(&[z], n),
        y,
    )
    .unwrap();
    let maps = FeatureMaps::default();
    let fits = fit_nuisances(
        &data,
        &InterventionSpec::IncrementalPropensity { delta_prime: 2.0 },
        &LearnerSet::saturated(),
        &maps,
        &EstimationConfig::default(),
    )
    .unwrap();
    for wv in [0.0, 1.0] {
        assert!(
            (fits.phi.eval(0.0, &[wv]) - 2.0).abs() < 1e-9,
            "phi at w={wv}: {}",
            fits.phi.eval(0.0, &[wv])
        );
    }
}

#[test]
fn phi_empty_mediators_reduces_to_marginal_regression() {
    // with no mediators the stabilizing factor is identically one and the
    // tilt pseudo-outcome is b(A, W) itself
    let data = generate(800, 44).without_mediators();
    let spec = InterventionSpec::ExponentialTilt { delta: 0.3 };
    let maps = FeatureMaps::default();
    let fits = fit_nuisances(
        &data,
        &spec,
        &LearnerSet::saturated(),
        &maps,
        &EstimationConfig::default(),
    )
    .unwrap();
    assert_eq!(fits.phi.extreme_weights, 0);
    // phi regressed b(A,W) on (A,W) with exact strata: it reproduces the
    // marginal outcome regression
    for a in [0.0, 1.0] {
        for wbits in 0..8u32 {
            let w = [
                (wbits & 1) as f64,
                ((wbits >> 1) & 1) as f64,
                ((wbits >> 2) & 1) as f64,
            ];
            let lhs = fits.phi.eval(a, &w);
            let rhs = fits.m.predict(a, &[], &w);
            assert!(
                (lhs - rhs).abs() < 1e-12,
                "phi({a},{w:?}) = {lhs} vs b = {rhs}"
            );
        }
    }
}

#[test]
fn phi_matches_enumeration_on_benchmark() {
    // saturated fit at n = 5000: phi(w) should be near its exact value,
    // which is 1 for the benchmark process (the exposure coefficient)
    let data = generate(5000, 55);
    let fits = fit_nuisances(
        &data,
        &InterventionSpec::IncrementalPropensity { delta_prime: 0.5 },
        &stochmed::sim::harness_learners_full(MisspecToggle::none()),
        &harness_maps(),
        &EstimationConfig::default(),
    )
    .unwrap();
    for wbits in 0..8u32 {
        let w = [
            (wbits & 1) as f64,
            ((wbits >> 1) & 1) as f64,
            ((wbits >> 2) & 1) as f64,
        ];
        let phi = fits.phi.eval(0.0, &w);
        assert!((phi - 1.0).abs() < 0.05, "phi({w:?}) = {phi}");
    }
}

#[test]
fn unstabilized_phi_form_agrees_at_exact_strata() {
    // both parameterizations estimate the same function; on fully discrete
    // data with saturated fits they agree closely at observed strata
    let data = generate(6000, 66);
    let spec = InterventionSpec::ExponentialTilt { delta: 0.4 };
    let cfg = EstimationConfig::default();
    let mut learners = LearnerSet::saturated();
    let stabilized = fit_nuisances(&data, &spec, &learners, &harness_maps(), &cfg).unwrap();
    learners.phi_form = PhiForm::Unstabilized;
    let unstabilized = fit_nuisances(&data, &spec, &learners, &harness_maps(), &cfg).unwrap();
    let mut diffs = Vec::new();
    for a in [0.0, 1.0] {
        for wbits in 0..8u32 {
            let w = [
                (wbits & 1) as f64,
                ((wbits >> 1) & 1) as f64,
                ((wbits >> 2) & 1) as f64,
            ];
            diffs.push((stabilized.phi.eval(a, &w) - unstabilized.phi.eval(a, &w)).abs());
        }
    }
    let worst = diffs.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 0.25, "parameterizations diverge: {worst}");
}

#[test]
fn stratified_exposure_fit_is_empirical_frequency() {
    let data = generate(400, 77);
    let feats = {
        let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.w().row(i).to_vec()).collect();
        let mut flat = Vec::new();
        for r in &rows {
            flat.extend_from_slice(r);
        }
        Matrix::new(flat, 3)
    };
    let g = fit_exposure_mechanism(
        &LearnerSpec::saturated(),
        &feats,
        data.a(),
        stochmed::model::ExposureKind::Binary,
    )
    .unwrap();
    // compare against hand counting per observed stratum
    for wbits in 0..8u32 {
        let w = [
            (wbits & 1) as f64,
            ((wbits >> 1) & 1) as f64,
            ((wbits >> 2) & 1) as f64,
        ];
        let mut count = 0.0f64;
        let mut hits = 0.0f64;
        for i in 0..data.n() {
            if data.w().row(i) == w {
                count += 1.0;
                if data.a()[i] == 1.0 {
                    hits += 1.0;
                }
            }
        }
        if count > 0.0 {
            let expected = (hits / count).clamp(1e-6, 1.0 - 1e-6);
            assert!(
                (g.mass1(&w) - expected).abs() < 1e-12,
                "stratum {w:?}: {} vs {expected}",
                g.mass1(&w)
            );
        }
    }
}

#[test]
fn estimators_converge_to_enumeration_truth() {
    let spec = InterventionSpec::IncrementalPropensity { delta_prime: 0.5 };
    let truth = oracle_truth(&spec).unwrap().direct;
    let n = 100_000;
    let data = generate(n, 88);
    let ybar = data.ybar();
    let cfg = EstimationConfig::default();
    let maps = harness_maps();

    let fits = fit_nuisances(&data, &spec, &LearnerSet::saturated(), &maps, &cfg).unwrap();
    let sub = estimate_substitution(&data, &fits, &spec, &cfg).unwrap() - ybar;
    let (ipw, _) = stochmed::estimators::estimate_reweighted(&data, &fits, &spec, &cfg).unwrap();
    let ipw = ipw - ybar;
    let plan = make_folds(n, 5, 89).unwrap();
    let one = estimate_onestep(
        &data,
        &spec,
        &harness_learners_crossfit(MisspecToggle::none()),
        &maps,
        &plan,
        &cfg,
    )
    .unwrap();
    let one = one.theta - ybar;

    for (name, est) in [("substitution", sub), ("reweighted", ipw), ("one-step", one)] {
        assert!(
            (est - truth).abs() < 0.01,
            "{name} at n=100000: {est} vs truth {truth}"
        );
    }
}

#[test]
fn bands_contain_pointwise_intervals() {
    let n = 2000;
    let data = generate(n, 99);
    let plan = make_folds(n, HARNESS_FOLDS, 100).unwrap();
    let grid = UniformInferenceConfig::log_grid(0.5, 2.0, 6);
    let mut dec = decompose_effects(
        &data,
        &InterventionSpec::IncrementalPropensity { delta_prime: 0.5 },
        &grid,
        EstimatorKind::OneStep,
        &harness_learners_crossfit(MisspecToggle::none()),
        &harness_maps(),
        &plan,
        &EstimationConfig::default(),
    )
    .unwrap();
    let cfg = UniformInferenceConfig {
        delta_grid: grid.clone(),
        n_boot: 3000,
        seed: 7,
        ..Default::default()
    };
    attach_uniform_inference(&mut dec.report, &dec.s_direct, &cfg).unwrap();
    let r = &dec.report;
    let (band_lo, band_hi) = (r.band_lo.as_ref().unwrap(), r.band_hi.as_ref().unwrap());
    for k in 0..grid.len() {
        assert!(
            band_lo[k] <= r.ci_lo[k] + 1e-12 && r.ci_hi[k] <= band_hi[k] + 1e-12,
            "band does not contain the pointwise interval at grid point {k}"
        );
        assert!(r.ci_lo[k] <= r.direct[k] && r.direct[k] <= r.ci_hi[k]);
    }
    assert!(r.sup_test_p.is_some());
}

#[test]
fn report_serialization_roundtrip_after_analysis() {
    let n = 800;
    let data = generate(n, 123);
    let plan = make_folds(n, 5, 124).unwrap();
    let dec = decompose_effects(
        &data,
        &InterventionSpec::IncrementalPropensity { delta_prime: 2.0 },
        &[2.0],
        EstimatorKind::OneStep,
        &harness_learners_crossfit(MisspecToggle::none()),
        &harness_maps(),
        &plan,
        &EstimationConfig::default(),
    )
    .unwrap();
    let json = serde_json::to_string_pretty(&dec.report).unwrap();
    let back: stochmed::model::EffectReport = serde_json::from_str(&json).unwrap();
    assert_eq!(dec.report, back);
}

#[test]
fn one_step_on_constant_outcomes_is_degenerate() {
    let n = 120;
    let w: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let a: Vec<f64> = (0..n).map(|i| ((i / 2) % 2) as f64).collect();
    let z: Vec<f64> = (0..n).map(|i| ((i / 4) % 2) as f64).collect();
    let y = vec![2.5; n];
    let data = ObservedDataset::from_parts(
        Matrix::from_columns(&[w], n),
        a,
        Matrix::from_columns(&[z], n),
        y,
    )
    .unwrap();
    let plan = make_folds(n, 4, 1).unwrap();
    let one = estimate_onestep(
        &data,
        &InterventionSpec::IncrementalPropensity { delta_prime: 2.0 },
        &LearnerSet::saturated(),
        &FeatureMaps::default(),
        &plan,
        &EstimationConfig::default(),
    )
    .unwrap();
    assert!((one.theta - 2.5).abs() < 1e-12);
    assert!(one.sigma < 1e-12);
}

#[test]
fn indirect_effect_vanishes_when_mediators_ignore_exposure() {
    // enumeration toy: Z depends on W only and the outcome regression is
    // additive with no exposure-mediator interaction, so the mediated path
    // carries nothing and psi(delta) equals theta(delta) exactly
    let pw = [0.65, 0.35]; // P(W = 0), P(W = 1)
    let g1 = |w: f64| 0.25 + 0.4 * w;
    let q1 = |w: f64| 0.3 + 0.5 * w; // P(Z = 1 | w), no exposure term
    let m = |a: f64, z: f64, w: f64| 0.7 * a + 1.3 * z - 0.4 * w + 0.1;
    for dp in [0.5, 2.0, 4.0] {
        let mut theta = 0.0;
        let mut psi = 0.0;
        for (wi, &pwv) in pw.iter().enumerate() {
            let w = wi as f64;
            let g = g1(w);
            let gd = ips_gdelta(g, dp).unwrap();
            for z in [0.0, 1.0] {
                let qz = if z == 1.0 { q1(w) } else { 1.0 - q1(w) };
                for (ap, gda) in [(0.0, 1.0 - gd), (1.0, gd)] {
                    // natural mediator law equals the intervened one here
                    theta += pwv * qz * gda * m(ap, z, w);
                    psi += pwv * gda * qz * m(ap, z, w);
                }
            }
        }
        assert!(
            (psi - theta).abs() < 1e-12,
            "indirect = {} at delta' = {dp}",
            psi - theta
        );
    }
}
