use abc_core::abc2::abc_second_order;
use abc_core::asympt::{fit_power_law, stationary_phase_c};
use abc_core::baker::{
    autocorrelation, classify_decay, coherent_state, inner, BakerMap, Convention, DecayClass, DecaySeries,
};
use abc_core::diagrams::{evaluate_M2, solve_recursion, DiagramExpression, WickTerm};
use abc_core::model::validate_model;
use abc_core::oracle::{fock_evolve, FockDiscretization};
use abc_core::quad::integrate_momentum;
use abc_core::{Complex64, DispersionLaw, Family, FormFactor, ModelSpec, QuadMode, QuadratureSettings};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian(family: Family, d: usize, n: usize, dispersion: DispersionLaw, w: f64, lambda: f64) -> ModelSpec {
    ModelSpec { family, d, n, dispersion, form_factor: FormFactor::IsotropicGaussian { a: 1.0, w }, lambda }
}

fn relativistic(m: f64) -> DispersionLaw {
    DispersionLaw::Relativistic { m }
}

fn ladder_terms() -> Vec<WickTerm> {
    let rec = solve_recursion(4).unwrap();
    rec.q.iter().chain(&rec.m).flat_map(|e| e.terms().collect::<Vec<_>>()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_ignores_line_names(pick in 0usize..1000, shift in 1u32..50, seed in any::<u64>()) {
        let terms = ladder_terms();
        let d = &terms[pick % terms.len()].diagram;
        let lines: Vec<u32> = d.lines().into_iter().collect();
        let mut image: Vec<u32> = lines.iter().map(|l| l + shift).collect();
        image.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let renamed = d.relabeled(|l| image[lines.iter().position(|x| *x == l).unwrap()]);
        prop_assert_eq!(renamed.canonical(), d.canonical());
        prop_assert_eq!(d.canonical().canonical(), d.canonical());
    }

    #[test]
    fn expression_ignores_insertion_order(seed in any::<u64>()) {
        let rec = solve_recursion(4).unwrap();
        for e in rec.q.iter().chain(&rec.m) {
            let mut terms: Vec<WickTerm> = e.terms().collect();
            terms.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let rebuilt = DiagramExpression::from_terms(e.order, terms);
            prop_assert_eq!(rebuilt.serialize(), e.serialize());
        }
    }

    #[test]
    fn baker_preserves_norm(q in 0.0f64..1.0, p in 0.0f64..1.0, log_n in 1u32..9, integer in any::<bool>()) {
        let n = 1usize << log_n;
        let conv = if integer { Convention::Integer } else { Convention::HalfInteger };
        let b = BakerMap::new(n, conv).unwrap();
        let mut psi = coherent_state(n, q, p, conv);
        for _ in 0..100 {
            b.apply(&mut psi);
        }
        prop_assert!((inner(&psi, &psi).re.sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_law_fit_is_scale_equivariant(scale in 0.01f64..100.0, alpha in 0.2f64..2.0) {
        let ts: Vec<f64> = (1..=400).map(|j| j as f64 * 0.5).collect();
        let c: Vec<Complex64> = ts.iter().map(|&t| Complex64::from_polar(t.powf(-alpha), 1.7 * t)).collect();
        let scaled: Vec<Complex64> = c.iter().map(|z| z * scale).collect();
        let a = fit_power_law(&ts, &c, [10.0, 200.0]).unwrap();
        let b = fit_power_law(&ts, &scaled, [10.0, 200.0]).unwrap();
        prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
        prop_assert!((b.f_bound / a.f_bound - scale).abs() < 1e-9 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stable_abc_invariants(lambda in 0.01f64..0.5, w in 0.5f64..2.0, m in 0.5f64..2.0) {
        let spec = gaussian(Family::PairCreation, 1, 2, relativistic(m), w, lambda);
        let ts: Vec<f64> = (0..=40).map(|j| j as f64).collect();
        let settings = QuadratureSettings::default();
        let abc = abc_second_order(&spec, &ts, &settings).unwrap();
        prop_assert!(abc.a.re.abs() <= 1e-14 * abc.a.im.abs().max(1.0));
        prop_assert!(abc.b.im == 0.0 && abc.b.re <= 0.0);
        prop_assert_eq!(abc.c[0], -abc.b);
        prop_assert!((abc.amplitude()[0] - 1.0).norm() < 1e-15);
        let flipped = abc_second_order(&ModelSpec { lambda: -lambda, ..spec }, &ts, &settings).unwrap();
        prop_assert_eq!(&flipped.c, &abc.c);
        for u in abc.amplitude() {
            prop_assert!(u.norm() <= 1.0 + 1e-12 && u.norm() >= (2.0 * abc.b.re).exp());
        }
    }

    #[test]
    fn sigma_autocorrelation_is_hermitian(sigma in 0.1f64..20.0, d in 1usize..4) {
        let spec = gaussian(Family::PairCreation, d, 1, relativistic(1.0), 1.0, 1.0);
        let settings = QuadratureSettings::default();
        let f = |s: f64| {
            integrate_momentum(
                |p| {
                    let v = spec.form_factor_flat(p);
                    Complex64::from_polar(v * v, -s * spec.energy_flat(p))
                },
                &spec,
                &settings,
            )
            .unwrap()
        };
        let (plus, minus) = (f(sigma), f(-sigma));
        prop_assert!((plus.value - minus.value.conj()).norm() <= 1e-12 + plus.err + minus.err);
    }

    #[test]
    fn fock_amplitude_bounded_and_order_free(lambda in 0.05f64..0.3, t in 0.0f64..20.0, seed in any::<u64>()) {
        let spec = gaussian(Family::LinearSolvable, 3, 1, relativistic(1.0), 1.0, lambda);
        let disc = FockDiscretization::radial_for(&spec, &QuadratureSettings::default(), 20.0, 12).unwrap();
        let u = fock_evolve(&disc, &spec, t, lambda).unwrap();
        prop_assert!(u.norm() <= 1.0 + 1e-12);
        let mut order: Vec<usize> = (0..disc.weights.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = FockDiscretization {
            mode_momenta: order.iter().map(|&i| disc.mode_momenta[i].clone()).collect(),
            weights: order.iter().map(|&i| disc.weights[i]).collect(),
            per_mode_truncation: disc.per_mode_truncation,
        };
        let v = fock_evolve(&shuffled, &spec, t, lambda).unwrap();
        prop_assert!((u - v).norm() <= 1e-13);
    }

    #[test]
    fn m2_is_real_within_error(p in -2.0f64..2.0, lambda in 0.01f64..1.0) {
        let spec = gaussian(Family::TranslationInvariantTrilinear, 1, 2, relativistic(1.0), 1.0, lambda);
        let m2 = evaluate_M2(&spec, &[p], &QuadratureSettings::default()).unwrap();
        prop_assert!(m2.value.im.abs() <= m2.err.max(1e-15));
    }
}

#[test]
fn decay_flag_follows_dispersion() {
    for (law, decays) in [
        (relativistic(1.0), false),
        (DispersionLaw::Constant { omega0: 2.0 }, false),
        (DispersionLaw::NonRelShifted { omega0: 0.5 }, true),
    ] {
        let spec = gaussian(Family::PairCreation, 2, 1, law, 1.0, 0.1);
        assert_eq!(validate_model(&spec).decay_flag, decays, "{:?}", spec.dispersion);
    }
}

#[test]
fn tensor_refinement_within_reported_error() {
    let spec = gaussian(Family::PairCreation, 2, 2, relativistic(1.0), 1.0, 1.0);
    let integrand = |p: &[f64]| {
        let v = spec.form_factor_flat(p);
        Complex64::new(v * v / spec.energy_flat(p), 0.0)
    };
    let coarse = QuadratureSettings { points_per_axis: 32, ..QuadratureSettings::default() };
    let fine = QuadratureSettings { points_per_axis: 64, ..QuadratureSettings::default() };
    let a = integrate_momentum(integrand, &spec, &coarse).unwrap();
    let b = integrate_momentum(integrand, &spec, &fine).unwrap();
    assert!((a.value - b.value).norm() <= a.err.max(1e-14), "{a:?} {b:?}");
}

#[test]
fn monte_carlo_variance_scales_inversely_with_samples() {
    // Six momentum dimensions, where MC is the default mode.
    let spec = gaussian(Family::PairCreation, 3, 2, relativistic(1.0), 1.0, 1.0);
    let integrand = |p: &[f64]| {
        let v = spec.form_factor_flat(p);
        Complex64::new(v * v / spec.energy_flat(p), 0.0)
    };
    let run = |n: usize, seed: u64| {
        let s = QuadratureSettings { mode: QuadMode::MonteCarlo, mc_samples: n, seed, ..QuadratureSettings::default() };
        integrate_momentum(integrand, &spec, &s).unwrap()
    };

    // The reported error is a within-run variance estimate over n/2 stratum pairs.
    let mut x = Vec::new();
    let mut y = Vec::new();
    for n in [100_000usize, 400_000, 1_600_000] {
        for seed in 0..2 {
            x.push((n as f64).ln());
            y.push((run(n, seed).err.powi(2)).ln());
        }
    }
    let (slope, _, _, _) = abc_core::asympt::linear_fit(&x, &y);
    assert!((slope + 1.0).abs() <= 0.15, "variance slope {slope}");

    // And it matches the scatter across seeds.
    let seeds = 32;
    let runs: Vec<_> = (0..seeds).map(|seed| run(100_000, 100 + seed)).collect();
    let mean = runs.iter().map(|r| r.value.re).sum::<f64>() / seeds as f64;
    let var = runs.iter().map(|r| (r.value.re - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
    let reported = runs.iter().map(|r| r.err.powi(2)).sum::<f64>() / seeds as f64;
    let ratio = var / reported;
    assert!((0.5..2.0).contains(&ratio), "empirical / reported variance = {ratio}");
}

#[test]
fn stationary_phase_error_shrinks_with_time() {
    let spec = gaussian(Family::LinearSolvable, 1, 1, relativistic(1.0), 1.0, 1.0);
    let ts = [25.0, 50.0, 100.0, 200.0];
    let abc = abc_second_order(&spec, &ts, &QuadratureSettings::default()).unwrap();
    let errs: Vec<f64> =
        ts.iter().zip(&abc.c).map(|(&t, c)| (stationary_phase_c(&spec, t).unwrap() - c).norm() / c.norm()).collect();
    let drops = errs.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 2, "{errs:?}");
    assert!(errs[3] < errs[0]);
}

#[test]
fn baker_classification_is_stable_under_doubling() {
    let class = |n: usize| {
        let b = BakerMap::new(n, Convention::HalfInteger).unwrap();
        let psi = coherent_state(n, 1.0 / 3.0, 2.0 / 3.0, Convention::HalfInteger);
        let s = autocorrelation(&b, &psi, (n as f64).log2() as usize).unwrap();
        let series = DecaySeries {
            label: format!("N={n}"),
            t: s.t_values.iter().map(|&t| t as f64).collect(),
            values: s.f,
            floor: abc_core::baker::baker_floor(n),
        };
        classify_decay(&series).unwrap().class
    };
    for n in [256, 1024] {
        assert_eq!(class(n), DecayClass::Exponential, "N = {n}");
        assert_eq!(class(2 * n), DecayClass::Exponential, "N = {}", 2 * n);
    }
}
