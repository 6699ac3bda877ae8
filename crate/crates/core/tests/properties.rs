mod common;

use std::f64::consts::PI;

use kamred::arithmetics::{estimate_psi, Frequency, DEFAULT_LATTICE_BUDGET};
use kamred::fourier::{multiply, multiply_with, FourierMatrixSeries};
use kamred::kam::{solve_cohomological, SolveMode};
use kamred::mat2::{real_normal_form, Mat2};
use kamred::rotation::{fibered_rotation_number, CocycleSpec, MAX_STEP_SCALE};
use kamred::weights::WeightSpec;
use kamred::Execution;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series(seed: u64, d: usize, max_l1: u32, modes: usize) -> FourierMatrixSeries {
    common::random_complex_series(&mut ChaCha8Rng::seed_from_u64(seed), d, max_l1, modes)
}

fn weight(gevrey: bool) -> WeightSpec {
    if gevrey {
        WeightSpec::gevrey(2.0).unwrap()
    } else {
        WeightSpec::Analytic
    }
}

fn step_for(c: &CocycleSpec) -> f64 {
    0.5 * MAX_STEP_SCALE / c.size()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn banach_algebra(seed in any::<u64>(), d in 1usize..=2, r in 0.05f64..0.5, gevrey in any::<bool>()) {
        let f = series(seed, d, 6, 5);
        let g = series(seed ^ 0xABCD, d, 6, 5);
        let w = weight(gevrey);
        let lhs = multiply(&f, &g).unwrap().weighted_norm(&w, r).unwrap();
        let rhs = f.weighted_norm(&w, r).unwrap() * g.weighted_norm(&w, r).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn sequential_and_parallel_products_agree(seed in any::<u64>(), d in 1usize..=3) {
        let f = series(seed, d, 8, 30);
        let g = series(seed.rotate_left(7), d, 8, 30);
        let a = multiply_with(&f, &g, Execution::Sequential).unwrap();
        let b = multiply_with(&f, &g, Execution::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip(seed in any::<u64>(), d in 1usize..=3, tail in 0.0f64..1e-3) {
        let mut f = series(seed, d, 5, 8);
        f.add_tail(tail);
        let back = FourierMatrixSeries::from_text(&f.to_text()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn normal_form_conjugates_to_rotation(a in -3.0f64..3.0, b in 0.05f64..3.0, s in 0.1f64..3.0, flip in any::<bool>()) {
        // a₁₂·a₂₁ < −a₁₁² makes the traceless matrix elliptic.
        let c = -(a * a + s) / b;
        let m = if flip { Mat2::new(a, -b, -c, -a) } else { Mat2::new(a, b, c, -a) };
        let nf = real_normal_form(&m).unwrap();
        prop_assert!((nf.alpha - m.det().sqrt()).abs() <= 1e-12 * nf.alpha.max(1.0));
        prop_assert!(nf.residual(&m) <= 1e-12 * m.norm().max(1.0));
        prop_assert!(nf.p_inv.norm() <= 1.0 + 1e-14);
    }

    #[test]
    fn solver_inverts_the_operator(seed in any::<u64>(), alpha in 0.05f64..0.3) {
        let freq = Frequency::golden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_real_zero_mean(&mut rng, 2, 8, 6);
        let sol = solve_cohomological(alpha, &g, &freq, 8, 1.0, SolveMode::Measured).unwrap();
        let aj = FourierMatrixSeries::constant_real(2, Mat2::j().scale(alpha));
        let comm = multiply(&aj, &sol.x).unwrap().sub(&multiply(&sol.x, &aj).unwrap()).unwrap();
        let res = sol.x.directional_derivative(&freq).unwrap().sub(&comm).unwrap().sub(&g).unwrap();
        let scale = g.coefficient_sum();
        prop_assert!(res.max_coeff_distance(&FourierMatrixSeries::zero(2)) <= 1e-13 * scale);
        prop_assert!(sol.x.real_symmetric());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotation_number_shifts_with_the_mean(rho0 in 0.3f64..1.5, amp in 0.0f64..0.4, shift in -0.2f64..0.2) {
        let freq = Frequency::golden();
        let f = FourierMatrixSeries::real_trig(2, &[(vec![1, 0], Mat2::j().scale(amp), Mat2::zero())]).unwrap();
        let base = CocycleSpec::new(freq.clone(), Mat2::j().scale(rho0), f.clone(), 0.2).unwrap();
        let moved = CocycleSpec::new(freq, Mat2::j().scale(rho0 + shift), f, 0.2).unwrap();
        let step = step_for(&base).min(step_for(&moved));
        let a = fibered_rotation_number(&base, 2000.0, step).unwrap();
        let b = fibered_rotation_number(&moved, 2000.0, step).unwrap();
        prop_assert!((b.value - a.value - shift).abs() < 1e-10);
    }

    #[test]
    fn rotation_number_is_conjugation_invariant(p11 in 0.5f64..2.0, p12 in -1.0f64..1.0, amp in 0.0f64..0.2) {
        let freq = Frequency::golden();
        // Orientation-preserving constant conjugacy with det P = 1.
        let p = Mat2::new(p11, p12, 0.0, 1.0 / p11);
        let p_inv = p.inverse().unwrap();
        let f = FourierMatrixSeries::real_trig(
            2,
            &[(vec![1, 0], Mat2::new(0.0, amp, amp, 0.0), Mat2::zero()), (vec![0, 1], Mat2::diag(amp, -amp), Mat2::zero())],
        )
        .unwrap();
        let a = Mat2::j();
        let base = CocycleSpec::new(freq.clone(), a, f.clone(), 0.2).unwrap();
        let conj = CocycleSpec::new(freq, a.conjugate_by(&p, &p_inv), f.conjugate_by(&p, &p_inv), 0.2).unwrap();
        let horizon = 2000.0;
        let step = step_for(&base).min(step_for(&conj));
        let x = fibered_rotation_number(&base, horizon, step).unwrap();
        let y = fibered_rotation_number(&conj, horizon, step).unwrap();
        // The angles differ by less than π at each time, and the value is a mean over [T/2, T].
        prop_assert!((x.value - y.value).abs() <= 2.0 * PI / (horizon / 2.0));
    }
}

#[test]
fn psi_table_is_independent_of_execution_mode() {
    let freq = Frequency::from_continued_fraction(&[1, 2, 3, 4, 5]).unwrap();
    let a = estimate_psi(&freq, 300, DEFAULT_LATTICE_BUDGET, Execution::Sequential).unwrap();
    let b = estimate_psi(&freq, 300, DEFAULT_LATTICE_BUDGET, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
