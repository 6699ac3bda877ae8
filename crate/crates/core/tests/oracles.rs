//! Independent checks of worked examples: brute-force enumerations, closed
//! forms and finite differences.

mod common;

use std::f64::consts::{LN_2, PI};

use kamred::arithmetics::{check_rotation_condition, estimate_psi, Frequency, PsiPreset, DEFAULT_LATTICE_BUDGET};
use kamred::counterexample::{build_counterexample, certify_nonsolvability, find_resonances};
use kamred::fourier::{multiply, FourierMatrixSeries, NormContext};
use kamred::kam::{build_schedule, conjugacy_residual, solve_cohomological, SolveMode};
use kamred::mat2::{elliptic_rotation_number, real_normal_form, CMat2, Mat2};
use kamred::rotation::{fibered_rotation_number, lyapunov_exponent, CocycleSpec, MAX_STEP_SCALE};
use kamred::weights::{
    classify_conditions, subadditivity_margin, verify_subadditivity, ClassifyOptions, TabulatedWeight, Verdict,
    WeightSpec,
};
use kamred::Execution;
use num_complex::Complex64;

const GOLDEN: f64 = 1.618_033_988_749_895;

/// `max 1/|2πk·ω|` over all nonzero `k` with `|k|₁ ≤ kmax`, by full enumeration.
fn brute_psi(omega: [f64; 2], kmax: i32) -> (f64, [i32; 2]) {
    let mut best = (0.0, [0, 0]);
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            if (a, b) == (0, 0) || a.abs() + b.abs() > kmax {
                continue;
            }
            let v = 1.0 / (2.0 * PI * (a as f64 * omega[0] + b as f64 * omega[1])).abs();
            if v > best.0 {
                best = (v, [a, b]);
            }
        }
    }
    best
}

fn same_up_to_sign(k: &[i32], w: [i32; 2]) -> bool {
    k == w || (k[0] == -w[0] && k[1] == -w[1])
}

fn step_for(c: &CocycleSpec) -> f64 {
    0.5 * MAX_STEP_SCALE / c.size()
}

#[test]
fn psi_first_shells_match_enumeration() {
    let psi = common::golden_psi(30);
    let (p1, w1) = brute_psi([1.0, GOLDEN], 1);
    assert!((psi.value(1) - p1).abs() < 1e-15);
    assert!((psi.value(1) - 0.159155).abs() < 1e-6);
    assert!(same_up_to_sign(psi.witness(1), w1) && same_up_to_sign(psi.witness(1), [1, 0]));
    let (p2, w2) = brute_psi([1.0, GOLDEN], 2);
    assert!((psi.value(2) - p2).abs() < 1e-14);
    assert!((psi.value(2) - 0.257518).abs() < 1e-6);
    assert!(same_up_to_sign(psi.witness(2), w2) && same_up_to_sign(psi.witness(2), [1, -1]));
    for k in 3..=30 {
        let (pk, _) = brute_psi([1.0, GOLDEN], k);
        assert!((psi.value(k as u32) / pk - 1.0).abs() < 1e-12, "K = {k}");
    }
}

#[test]
fn psi_inverse_round_trip() {
    let psi = common::golden_psi(200);
    let y = 2.0 * psi.value(2);
    let v = psi.inverse(y).unwrap();
    assert!(v > 2.0);
    assert!((psi.ext(v) / y - 1.0).abs() < 1e-12);
    for &y in &[1.0, 3.7, 40.0, 1e3] {
        let v = psi.inverse(y).unwrap();
        assert!((psi.ext(v) / y - 1.0).abs() < 1e-12, "y = {y}");
    }
}

/// Literal `|2ρ ± 2πk·ω| ≥ 1/Ψ(|k|)` over all `0 < |k|₁ ≤ kmax`.
fn brute_rotation_condition(rho: f64, kmax: i32) -> (bool, f64) {
    let mut min_gap = f64::INFINITY;
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            let n = a.abs() + b.abs();
            if n == 0 || n > kmax {
                continue;
            }
            let x = 2.0 * PI * (a as f64 + b as f64 * GOLDEN);
            let threshold = 1.0 / brute_psi([1.0, GOLDEN], n).0;
            let v = (2.0 * rho - x).abs().min((2.0 * rho + x).abs());
            min_gap = min_gap.min(v - threshold);
        }
    }
    (min_gap >= 0.0, min_gap)
}

#[test]
fn rotation_condition_agrees_with_enumeration() {
    let freq = Frequency::golden();
    let psi = common::golden_psi(10);
    for &(rho, k) in &[(0.0, 5), (1.0, 10), (0.3, 10), (2.2, 8)] {
        let ours = check_rotation_condition(rho, &freq, &psi, k as u32, Execution::Sequential).unwrap();
        let (holds, gap) = brute_rotation_condition(rho, k);
        assert_eq!(ours.holds, holds, "rho {rho}, K {k}");
        assert!((ours.min_gap - gap).abs() < 1e-12, "rho {rho}: {} vs {gap}", ours.min_gap);
    }
    // ρ = 0: the record divisor sits exactly on its own threshold.
    let zero = check_rotation_condition(0.0, &freq, &psi, 5, Execution::Sequential).unwrap();
    assert!(zero.min_gap.abs() < 1e-15);
    // ρ = 1: k = (1, 0) gives |2 − 2π| ≈ 4.28 below 1/Ψ(1) = 2π, so the literal condition fails.
    let one = check_rotation_condition(1.0, &freq, &psi, 10, Execution::Sequential).unwrap();
    assert!(!one.holds);
    // Exact resonance 2ρ = 2πk₀·ω.
    let rho = PI * freq.dot(&[2, -1]);
    let res = check_rotation_condition(rho, &freq, &psi, 5, Execution::Sequential).unwrap();
    assert!(!res.holds);
    assert!(res.min_divisor < 1e-14);
}

#[test]
fn gevrey_weight_value() {
    assert_eq!(WeightSpec::gevrey(2.0).unwrap().value(4.0), 2.0);
    assert_eq!(WeightSpec::Analytic.value(7.5), 7.5);
}

#[test]
fn subadditivity_examples() {
    let rep = verify_subadditivity(&WeightSpec::gevrey(2.0).unwrap(), 100.0, 10_000, Execution::Sequential).unwrap();
    assert!(rep.holds);
    assert!(rep.pairs_checked > 1000);
    let grid: Vec<f64> = (1..=100).map(f64::from).collect();
    // Λ(v) = v with a jump of 40 at v = 10.
    let values: Vec<f64> = grid.iter().map(|&v| if v >= 10.0 { v + 40.0 } else { v }).collect();
    let jump = WeightSpec::Tabulated(TabulatedWeight::new(grid, values, None).unwrap());
    assert!((subadditivity_margin(&jump, 5.0, 5.0) - 40.0).abs() < 1e-12);
    let rep = verify_subadditivity(&jump, 100.0, 10_000, Execution::Sequential).unwrap();
    assert!(!rep.holds);
    // The sampled worst pair straddles the jump, which the table interpolates over [9, 10].
    let (x, y) = rep.worst_pair;
    assert!(x + y > 9.0 && subadditivity_margin(&jump, x, y) > 0.0, "{x} {y}");
}

#[test]
fn classifier_panels_match_closed_form() {
    let opts = ClassifyOptions::default();
    // Integrand (1/α) v^{β−1−1/α}; antiderivative (1/α) v^γ/γ with γ = β − 1/α.
    for &(alpha, beta) in &[(2.0, 0.3), (2.0, 0.8), (1.0, 0.5), (3.0, 1.1)] {
        let w = WeightSpec::gevrey(alpha).unwrap();
        let rep = classify_conditions(&w, &PsiPreset::StretchedExp { beta }, &opts).unwrap();
        let g = beta - 1.0 / alpha;
        let exact = (opts.vmax.powf(g) - 1.0) / (alpha * g);
        let sum: f64 = rep.lambda_br.panels.iter().sum();
        assert!((sum / exact - 1.0).abs() < 1e-8, "α {alpha} β {beta}: {sum} vs {exact}");
        let expected = if g < 0.0 { Verdict::Converges } else { Verdict::Diverges };
        assert_eq!(rep.lambda_br.verdict, expected, "α {alpha} β {beta}");
    }
    // Analytic weight with a power-law Ψ: ∫₁^∞ τ ln v / v² dv = τ.
    let tau = 2.5;
    let rep = classify_conditions(&WeightSpec::Analytic, &PsiPreset::Power { tau }, &opts).unwrap();
    let total = rep.lambda_br.accumulated + rep.lambda_br.extrapolated_tail.unwrap_or(f64::NAN);
    assert!((total / tau - 1.0).abs() < 1e-4, "{total}");
    for v in [rep.lambda_br.verdict, rep.br_equivalent.verdict, rep.russmann.verdict] {
        assert_eq!(v, Verdict::Converges);
    }
    // ∫ v/v² dv = ∞: the analytic class itself is quasi-analytic.
    assert_eq!(rep.quasi_analytic.verdict, Verdict::Diverges);
}

#[test]
fn norm_of_single_cosine() {
    let f = FourierMatrixSeries::real_trig(2, &[(vec![1, 0], Mat2::j(), Mat2::zero())]).unwrap();
    assert_eq!(f.len(), 2);
    for (_, c) in f.iter() {
        assert!((c.norm() - 0.5).abs() < 1e-15);
    }
    let n = f.weighted_norm(&WeightSpec::Analytic, 0.1).unwrap();
    assert!((n - (0.2 * PI).exp()).abs() < 1e-14);
    assert!((n - 1.874456).abs() < 1e-6);
}

#[test]
fn product_of_cosines() {
    let f = FourierMatrixSeries::real_trig(2, &[(vec![1, 0], Mat2::identity(), Mat2::zero())]).unwrap();
    let p = multiply(&f, &f).unwrap();
    let id = CMat2::identity();
    assert_eq!(p.len(), 3);
    assert!((*p.coeff(&[0, 0]).unwrap() - id.scale_re(0.5)).max_abs() < 1e-16);
    assert!((*p.coeff(&[2, 0]).unwrap() - id.scale_re(0.25)).max_abs() < 1e-16);
    assert!((*p.coeff(&[-2, 0]).unwrap() - id.scale_re(0.25)).max_abs() < 1e-16);
    // cos² = (1 + cos 2x)/2 pointwise.
    for &t in &[0.1, 0.37, 0.8] {
        let v = p.evaluate(&[t, 0.2]).re().0[0][0];
        assert!((v - (2.0 * PI * t).cos().powi(2)).abs() < 1e-15);
    }
}

#[test]
fn derivative_matches_finite_difference() {
    let freq = Frequency::golden();
    for k in [vec![1, 0], vec![2, -3], vec![-1, 4]] {
        let f = FourierMatrixSeries::from_coeffs(2, vec![(k.clone(), CMat2::identity())], false).unwrap();
        let df = f.directional_derivative(&freq).unwrap().evaluate(&[0.0, 0.0]);
        let expected = Complex64::new(0.0, 2.0 * PI * freq.dot(&k));
        assert!((df.0[0][0] - expected).norm() < 1e-13);
        assert!(df.0[0][1].norm() == 0.0);
        let h = 1e-5;
        let fd = (f.evaluate_along(&freq, h) - f.evaluate_along(&freq, -h)).scale_re(0.5 / h);
        assert!((fd - df).max_abs() < 1e-6 * expected.norm().max(1.0));
    }
}

#[test]
fn normal_form_of_scaled_rotation() {
    let a = Mat2::new(0.0, 2.0, -8.0, 0.0);
    assert_eq!(elliptic_rotation_number(&a).unwrap(), 4.0);
    let nf = real_normal_form(&a).unwrap();
    assert_eq!(nf.alpha, 4.0);
    assert!(nf.residual(&a) < 1e-14);
    assert!(nf.p.norm() <= 2.0 * 2f64.sqrt());
    assert!((nf.p * nf.p_inv - Mat2::identity()).max_abs() < 1e-15);
    // Characteristic polynomial λ² + det A: eigenvalues ±4i.
    assert_eq!(a.det(), 16.0);
}

#[test]
fn commutant_closed_form() {
    let freq = Frequency::golden();
    let c = 0.01;
    let g = FourierMatrixSeries::real_trig(2, &[(vec![1, -1], Mat2::j().scale(2.0 * c), Mat2::zero())]).unwrap();
    let sol = solve_cohomological(1.0, &g, &freq, 2, 1.0, SolveMode::Measured).unwrap();
    let x = sol.x.coeff(&[1, -1]).unwrap();
    let divisor = 2.0 * PI * (1.0 - GOLDEN);
    assert!((x.norm() - c / divisor.abs()).abs() < 1e-17);
    assert!((x.norm() - 0.0025752).abs() < 1e-7);
}

#[test]
fn schedule_halves_and_sigma_formula() {
    let psi = common::golden_psi(600);
    let w = WeightSpec::Analytic;
    let s = build_schedule(0.2, 1e-4, 1.0, &w, &psi, 4).unwrap();
    for pair in s.entries.windows(2) {
        let ratio = pair[1].psi_n * pair[1].eps / (pair[0].psi_n * pair[0].eps);
        assert!((ratio - 0.5).abs() < 1e-12);
        assert!((pair[1].eps / pair[0].eps - 0.25).abs() < 1e-15);
    }
    for e in &s.entries {
        assert!((e.sigma - 3.0 * LN_2 / (PI * e.n)).abs() < 1e-15);
    }
    assert!((3.0 * LN_2 / (100.0 * PI) - 0.0066191).abs() < 1e-7);
}

#[test]
fn residual_of_first_order_conjugacy_is_the_quadratic_term() {
    // With Y = I + X and ∂X = [A,X] + G one has ∂Y − (A+G)Y + YA = −GX.
    let freq = Frequency::golden();
    let alpha = 0.1;
    let w = WeightSpec::Analytic;
    let g = common::three_mode_shape().scale(1e-3);
    let sol = solve_cohomological(alpha, &g, &freq, 2, 2.0, SolveMode::Measured).unwrap();
    let y = sol.x.add_constant(&CMat2::identity());
    let a = Mat2::j().scale(alpha);
    let c = CocycleSpec::new(freq, a, g.clone(), 0.2).unwrap();
    let res = conjugacy_residual(&y, &c, &a, &w, 0.1, Execution::Sequential).unwrap();
    let gx = NormContext::new(w, 0.1).unwrap().norm(&multiply(&g, &sol.x).unwrap());
    assert!((res.norm / gx - 1.0).abs() < 1e-9, "{} vs {gx}", res.norm);
    assert!(res.grid_max <= gx * (1.0 + 1e-9));
}

#[test]
fn lyapunov_of_reducible_and_hyperbolic_systems() {
    let freq = Frequency::golden();
    let u = FourierMatrixSeries::real_trig(2, &[(vec![0, 1], Mat2::j().scale(0.4), Mat2::zero())]).unwrap();
    let elliptic = CocycleSpec::new(freq.clone(), Mat2::j().scale(0.9), u, 0.2).unwrap();
    let l = lyapunov_exponent(&elliptic, 2000.0, step_for(&elliptic)).unwrap();
    assert!(l.value.abs() < 1e-2, "{}", l.value);
    let hyperbolic = CocycleSpec::constant(freq, Mat2::diag(0.5, -0.5)).unwrap();
    let l = lyapunov_exponent(&hyperbolic, 2000.0, step_for(&hyperbolic)).unwrap();
    assert!((l.value - 0.5).abs() < 1e-2, "{}", l.value);
    // det X = 1 up to the RK4 defect, so the exponents cancel.
    assert!((l.value + l.second).abs() < 1e-5, "{}", l.value + l.second);
}

#[test]
fn counterexample_has_the_prescribed_rotation_number() {
    let freq = Frequency::from_continued_fraction(&[2, 8, 5, 21]).unwrap();
    let psi = estimate_psi(&freq, 200, DEFAULT_LATTICE_BUDGET, Execution::default()).unwrap();
    let w = WeightSpec::gevrey(2.0).unwrap();
    let chain = find_resonances(&freq, &w, &psi, 3).unwrap();
    let (eps, rho) = (0.01, 0.8);
    let (u, c) = build_counterexample(&chain, rho, eps).unwrap();
    // Each term of |u − ρ|_r is εC⁻¹|2πk·ω|e^{2πrΛ} ≤ εC⁻¹e^{−πrΛ}.
    let bound: f64 = chain.modes.iter().map(|m| 2.0 * eps / chain.c * (-PI * chain.r * m.lambda).exp()).sum();
    let osc = u.oscillation_norm(&w, chain.r);
    assert!(osc <= bound * (1.0 + 1e-12) && bound <= eps * (1.0 + 1e-12));
    // For uJ the angle equation is φ′ = u, so the windowed mean over [T/2, T]
    // deviates from ρ by Σ û(k)(e^{iδT} − e^{iδT/2})/(iδ·T/2), δ = 2πk·ω.
    let horizon = 1e4;
    let est = fibered_rotation_number(&c, horizon, step_for(&c)).unwrap();
    let mut exact = Complex64::new(0.0, 0.0);
    let mut bound = 0.0;
    for (k, uh) in u.iter().filter(|(k, _)| !k.is_zero()) {
        let delta = 2.0 * PI * freq.dot(&k.0);
        let i_delta = Complex64::new(0.0, delta);
        exact += uh * ((i_delta * horizon).exp() - (i_delta * horizon / 2.0).exp()) / (i_delta * horizon / 2.0);
        bound += 4.0 * uh.norm() / (delta.abs() * horizon);
    }
    assert!(exact.im.abs() < 1e-15);
    assert!((est.value - rho - exact.re).abs() < 1e-12, "{} vs {}", est.value - rho, exact.re);
    assert!((est.value - rho).abs() <= bound);
    let ev = certify_nonsolvability(&u, &freq, &chain, eps);
    for (j, p) in ev.partial_sums.iter().enumerate() {
        assert!((p.l1 - 2.0 * (j + 1) as f64 * eps / chain.c).abs() < 1e-14);
    }
}

#[test]
fn golden_frequency_supplies_no_analytic_chain_but_a_log_squared_one() {
    let freq = Frequency::golden();
    let psi = common::golden_psi(3000);
    let err = find_resonances(&freq, &WeightSpec::Analytic, &psi, 3).unwrap_err();
    assert_eq!(err.kind(), "insufficient_resonances");
    // lnΨ/Λ decays along the records under Λ(v) = v.
    let ratios: Vec<f64> = psi.records().iter().map(|&k| psi.value(k).ln() / k as f64).filter(|q| *q > 0.0).collect();
    assert!(ratios.last().unwrap() < &(0.5 * ratios.iter().cloned().fold(0.0, f64::max)));

    let grid: Vec<f64> = (1..=4000).map(f64::from).collect();
    let values: Vec<f64> = grid.iter().map(|v| 1.0 + v.ln().powi(2)).collect();
    let weak = WeightSpec::Tabulated(TabulatedWeight::new(grid, values, Some("1+ln^2".into())).unwrap());
    let chain = find_resonances(&freq, &weak, &psi, 3).unwrap();
    assert!(chain.modes.len() >= 3);
    assert!(chain.persistence >= 0.5);
    assert!(chain.modes.iter().all(|m| m.margin >= 0.0));
}
