mod common;

use common::*;
use mtb_core::backbone::{
    generating_fn, generating_fn_from_pmf, immigration_exponent, mean_offspring_matrix,
    sample_branch_event,
};
use mtb_core::conditioning::condition;
use mtb_core::extinction::{extinction_upper_bound, extinction_vector};
use mtb_core::laplace::{solve_u, solve_v};
use mtb_core::mechanism::ScalarAtom;
use mtb_core::simulate::{rng_from_seed, simulate_backbone, simulate_mcb, InitialParticle};
use mtb_core::spectral::perron_frobenius;
use mtb_core::tolerances::J_MAX_DEFAULT;
use mtb_core::{suite, BackboneSpec, Mechanism};
use nalgebra::DVector;
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn psi_vanishes_at_origin(m in any_mechanism(3)) {
        let zero = vec![0.0; m.ell()];
        for i in 0..m.ell() {
            prop_assert_eq!(m.psi(i, &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn psi_is_midpoint_convex((m, a) in with_point(any_mechanism(3), 5.0), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(k, x)| (x * 1.7 + (seed >> k) as f64 % 3.0) % 5.0).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        for i in 0..m.ell() {
            let fm = m.psi(i, &mid).unwrap();
            let avg = 0.5 * (m.psi(i, &a).unwrap() + m.psi(i, &b).unwrap());
            prop_assert!(fm <= avg + 1e-12 * (1.0 + avg.abs()), "ψ({i}) midpoint {fm} > {avg}");
        }
    }

    #[test]
    fn compensated_form_agrees((m, theta) in with_point(any_mechanism(3), 5.0)) {
        for i in 0..m.ell() {
            let a = m.psi(i, &theta).unwrap();
            let b = m.psi_compensated(i, &theta).unwrap();
            prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_central_differences((m, theta) in with_point(any_mechanism(3), 4.0)) {
        let h = 1e-5;
        for i in 0..m.ell() {
            let g = m.psi_grad(i, &theta).unwrap();
            for j in 0..m.ell() {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[j] += h;
                down[j] = (down[j] - h).max(0.0);
                let fd = (m.psi(i, &up).unwrap() - m.psi(i, &down).unwrap()) / (up[j] - down[j]);
                prop_assert!(close(g[j], fd, 1e-5), "∂{j}ψ({i}) = {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn local_nonlocal_form_agrees(
        ell in 1usize..=3,
        raw in prop::collection::vec(0.0..1.0f64, 32),
        theta in prop::collection::vec(0.0..3.0f64, 3),
    ) {
        let theta = &theta[..ell];
        let b: Vec<f64> = raw[0..ell].iter().map(|x| 2.0 * x).collect();
        let d: Vec<f64> = raw[3..3 + ell].iter().map(|x| 2.0 * x).collect();
        let beta: Vec<f64> = raw[6..6 + ell].to_vec();
        let pi: Vec<Vec<f64>> = (0..ell)
            .map(|i| {
                let row: Vec<f64> = (0..ell).map(|j| 0.1 + raw[9 + 3 * i + j]).collect();
                let s: f64 = row.iter().sum();
                row.iter().map(|x| x / s).collect()
            })
            .collect();
        let local: Vec<Vec<ScalarAtom>> = (0..ell)
            .map(|i| vec![ScalarAtom { rate: raw[18 + i], size: 1.0 + raw[21 + i] }])
            .collect();
        let nonlocal: Vec<Vec<ScalarAtom>> = (0..ell)
            .map(|i| vec![ScalarAtom { rate: raw[24 + i], size: 0.5 + 2.0 * raw[27 + i] }])
            .collect();
        let m = Mechanism::from_local_nonlocal(&b, &d, &pi, &beta, &local, &nonlocal).unwrap();
        for i in 0..ell {
            let pit = dot(theta, &pi[i]);
            let mut li = b[i] * theta[i] + beta[i] * theta[i] * theta[i] - d[i] * pit;
            for a in &local[i] {
                li += a.rate * ((-a.size * theta[i]).exp() - 1.0 + theta[i] * a.size);
            }
            for a in &nonlocal[i] {
                li += a.rate * ((-a.size * pit).exp() - 1.0);
            }
            let ours = m.psi(i, theta).unwrap();
            prop_assert!(close(ours, li, 1e-12), "{ours} vs {li}");
        }
    }

    #[test]
    fn mean_matrix_eigenvectors_and_semigroup(m in supercritical(3), s in 0.0..1.5f64, t in 0.0..1.5f64) {
        let sd = perron_frobenius(&m).unwrap();
        let u = DVector::from_column_slice(&sd.u);
        let v = DVector::from_column_slice(&sd.v);
        let mt = sd.mean_matrix(t).unwrap();
        let growth = (sd.gamma * t).exp();
        let right = &mt * &u - &u * growth;
        let left = mt.transpose() * &v - &v * growth;
        prop_assert!(right.amax() <= 1e-9 * growth * (1.0 + u.amax()));
        prop_assert!(left.amax() <= 1e-9 * growth * (1.0 + v.amax()));
        let joint = sd.mean_matrix(s + t).unwrap();
        let product = sd.mean_matrix(s).unwrap() * &mt;
        prop_assert!((joint.clone() - product).amax() <= 1e-9 * (1.0 + joint.amax()));
    }

    #[test]
    fn w_is_below_the_spectral_bound(m in supercritical(3)) {
        let sd = perron_frobenius(&m).unwrap();
        let w = extinction_vector(&m).unwrap();
        let bound = extinction_upper_bound(&m, &sd).unwrap();
        let top = w.w.iter().copied().fold(0.0, f64::max);
        prop_assert!(top <= bound * (1.0 + 1e-8), "max w {top} > bound {bound}");
        prop_assert!(m.psi_sup_norm(&w.w) <= 1e-10 * (1.0 + sup_norm(&w.w)));
    }

    #[test]
    fn conditioned_mechanism_is_a_shift((m, theta) in with_point(supercritical(3), 3.0)) {
        let w = extinction_vector(&m).unwrap();
        let d = condition(&m, &w).unwrap();
        let shifted: Vec<f64> = theta.iter().zip(&w.w).map(|(a, b)| a + b).collect();
        let scale = 1e-9 * (1.0 + sup_norm(&shifted)).powi(2);
        for i in 0..m.ell() {
            let a = d.psi(i, &theta).unwrap();
            let b = m.psi(i, &shifted).unwrap();
            prop_assert!((a - b).abs() <= scale, "ψ† {a} vs ψ(·+w) {b}");
            let ga = d.psi_grad(i, &theta).unwrap();
            let gb = m.psi_grad(i, &shifted).unwrap();
            for (x, y) in ga.iter().zip(&gb) {
                prop_assert!(close(*x, *y, 1e-10));
            }
        }
    }

    #[test]
    fn immigration_exponent_is_a_gradient_increment((m, lam) in with_point(supercritical(3), 3.0)) {
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        let shifted: Vec<f64> = lam.iter().zip(&w.w).map(|(a, b)| a + b).collect();
        for i in 0..m.ell() {
            let direct = immigration_exponent(&m, &w.w, i, &lam).unwrap();
            let stored = spec.phi.eval(i, &lam);
            let via_grad = m.psi_grad(i, &shifted).unwrap()[i] - m.psi_grad(i, &w.w).unwrap()[i];
            prop_assert!(close(direct, stored, 1e-14));
            prop_assert!(close(direct, via_grad, 1e-10), "φ {direct} vs gradient increment {via_grad}");
        }
    }

    #[test]
    fn offspring_tables_are_normalised(m in supercritical(3)) {
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        for i in 0..m.ell() {
            let target = w.w[i] * spec.q[i];
            prop_assert!((spec.mixture_total(i) - target).abs() <= 1e-10 * target);
            prop_assert!((spec.pmf[i].total() - 1.0).abs() <= 1e-12);
            let zero = vec![0u32; m.ell()];
            let mut unit = zero.clone();
            unit[i] = 1;
            prop_assert_eq!(spec.pmf[i].get(&zero), 0.0);
            prop_assert_eq!(spec.pmf[i].get(&unit), 0.0);
        }
    }

    #[test]
    fn generating_function_two_routes(m in supercritical(2), s in prop::collection::vec(0.0..=1.0f64, 2)) {
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        let s = &s[..m.ell()];
        for i in 0..m.ell() {
            let closed = generating_fn(&m, &w.w, i, s).unwrap();
            let table = generating_fn_from_pmf(&spec, i, s).unwrap();
            let allowance = 1e-8 + spec.q[i] * spec.pmf[i].tail;
            prop_assert!((closed - table).abs() <= allowance, "{closed} vs {table}");
        }
    }

    #[test]
    fn backbone_generator_has_eigenvalue_gamma(m in supercritical(3)) {
        let sd = perron_frobenius(&m).unwrap();
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        let gen = spec.generator_matrix(&mean_offspring_matrix(&m, &w.w, &spec.q));
        let lead = gen
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((lead - sd.gamma).abs() <= 1e-8 * (1.0 + sd.gamma.abs()), "{lead} vs Γ = {}", sd.gamma);
    }

    #[test]
    fn branch_events_never_degenerate(m in supercritical(3), seed in any::<u64>()) {
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        let mut rng = rng_from_seed(seed);
        for i in 0..m.ell() {
            for _ in 0..200 {
                let ev = sample_branch_event(&spec, i, &mut rng).unwrap();
                let total: u32 = ev.offspring.iter().sum();
                prop_assert!(total >= 1);
                prop_assert!(!(total == 1 && ev.offspring[i] == 1));
                prop_assert!(ev.mass.iter().all(|x| *x >= 0.0));
            }
        }
    }

    #[test]
    fn json_round_trip(m in any_mechanism(3)) {
        let back = Mechanism::from_json_str(&m.to_json_pretty()).unwrap();
        prop_assert_eq!(back.content_hash(), m.content_hash());
        prop_assert_eq!(back, m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_property((m, theta) in with_point(supercritical(3), 3.0), s in 0.1..1.0f64, t in 0.1..1.0f64) {
        let step = 1e-3;
        let s = (s / step).round() * step;
        let t = (t / step).round() * step;
        let direct = solve_v(&m, &theta, s + t, step).unwrap();
        let first = solve_v(&m, &theta, t, step).unwrap();
        let second = solve_v(&m, first.last(), s, step).unwrap();
        for (a, b) in direct.last().iter().zip(second.last()) {
            prop_assert!(close(*a, *b, 1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn v_is_monotone_in_theta((m, theta) in with_point(supercritical(3), 3.0), bump in prop::collection::vec(0.0..1.0f64, 3)) {
        let larger: Vec<f64> = theta.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let lo = solve_v(&m, &theta, 1.0, 1e-2).unwrap();
        let hi = solve_v(&m, &larger, 1.0, 1e-2).unwrap();
        for (a, b) in lo.values.iter().zip(&hi.values) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!(*x <= *y + 1e-12);
            }
        }
    }

    #[test]
    fn zero_and_w_are_fixed_points(m in supercritical(3)) {
        let w = extinction_vector(&m).unwrap();
        let at_w = solve_v(&m, &w.w, 2.0, 1e-2).unwrap();
        for row in &at_w.values {
            for (x, y) in row.iter().zip(&w.w) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y));
            }
        }
        let at_zero = solve_v(&m, &vec![0.0; m.ell()], 2.0, 1e-2).unwrap();
        prop_assert!(at_zero.values.iter().all(|r| r.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn rk4_has_fourth_order((m, theta) in with_point(supercritical(2), 3.0)) {
        let coarse = solve_v(&m, &theta, 1.0, 0.02).unwrap();
        let mid = solve_v(&m, &theta, 1.0, 0.01).unwrap();
        let fine = solve_v(&m, &theta, 1.0, 0.005).unwrap();
        // sup over the shared grid, so a coordinate whose leading error
        // term happens to vanish at one time cannot skew the ratio
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        for (k, c) in coarse.values.iter().enumerate() {
            for (i, ci) in c.iter().enumerate() {
                d1 = d1.max((ci - mid.values[2 * k][i]).abs());
                d2 = d2.max((mid.values[2 * k][i] - fine.values[4 * k][i]).abs());
            }
        }
        prop_assume!(d2 > 1e-11);
        let ratio = d1 / d2;
        prop_assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn backbone_transform_stays_in_unit_interval(
        (m, f) in with_point(supercritical(3), 2.0),
        h in prop::collection::vec(prop_oneof![Just(f64::INFINITY), 0.0..4.0f64], 3),
    ) {
        let w = extinction_vector(&m).unwrap();
        let sol = solve_u(&m, &w.w, &f, &h[..m.ell()], 2.0, 1e-2).unwrap();
        prop_assert!(sol.g.values.iter().all(|g| g.iter().all(|x| (0.0..=1.0).contains(x))));
    }

    #[test]
    fn simulations_are_seed_deterministic(m in supercritical(2), seed in any::<u64>()) {
        let y0 = vec![0.7; m.ell()];
        let a = simulate_mcb(&m, &y0, 0.5, 1e-2, seed).unwrap();
        let b = simulate_mcb(&m, &y0, 0.5, 1e-2, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let w = extinction_vector(&m).unwrap();
        let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
        let nu0 = vec![InitialParticle { kind: 0, position: None }];
        let f1 = simulate_backbone(&spec, &nu0, 1.0, seed, None).unwrap();
        let f2 = simulate_backbone(&spec, &nu0, 1.0, seed, None).unwrap();
        prop_assert_eq!(f1, f2);
    }
}

#[test]
fn suite_mechanisms_classify_supercritical() {
    for m in suite::all() {
        assert!(perron_frobenius(&m).unwrap().gamma > 0.0);
    }
}
