mod common;

use common::*;
use mtb_core::backbone::{mean_offspring_matrix, sample_branch_event};
use mtb_core::conditioning::condition;
use mtb_core::extinction::extinction_vector;
use mtb_core::laplace::solve_v;
use mtb_core::simulate::{
    derive_seed, mc_laplace_estimate, mean_and_se, poissonize_initial, rng_from_seed,
    simulate_backbone, simulate_dressed, simulate_mcb_batch, DressedOptions, InitialParticle,
    McbOptions,
};
use mtb_core::spectral::perron_frobenius;
use mtb_core::tolerances::J_MAX_DEFAULT;
use mtb_core::{suite, BackboneSpec, LevyAtom, Mechanism};
use nalgebra::DVector;
use rayon::prelude::*;

fn quiet(t_max: f64, dt: f64) -> McbOptions {
    McbOptions {
        record_every: usize::MAX,
        record_jumps: false,
        ..McbOptions::new(t_max, dt)
    }
}

fn within(value: f64, target: f64, se: f64, extra: f64) -> bool {
    (value - target).abs() <= 4.0 * se + extra
}

/// `c·ψ` for a scalar `c > 0`.
fn scaled(m: &Mechanism, c: f64) -> Mechanism {
    let atoms = (0..m.ell())
        .map(|i| {
            m.atoms(i)
                .iter()
                .map(|a| LevyAtom::new(c * a.rate(), a.jump().to_vec()).unwrap())
                .collect()
        })
        .collect();
    Mechanism::new(m.b() * c, m.beta().iter().map(|b| c * b).collect(), atoms).unwrap()
}

#[test]
fn mean_follows_the_mean_matrix() {
    let m = suite::asymmetric_pair();
    let sd = perron_frobenius(&m).unwrap();
    let t = 1.0;
    let n = 40_000;
    for y0 in [[1.0, 0.0], [0.0, 1.0]] {
        let paths = simulate_mcb_batch(&m, &y0, &quiet(t, 1e-3), 11, n).unwrap();
        let expected = sd.mean_matrix(t).unwrap().transpose() * DVector::from_column_slice(&y0);
        for j in 0..2 {
            let xs: Vec<f64> = paths.iter().map(|p| p.final_mass()[j]).collect();
            let (mean, se) = mean_and_se(&xs);
            assert!(
                within(mean, expected[j], se, 0.0),
                "y0 {y0:?} coord {j}: {mean} ± {se} vs {}",
                expected[j]
            );
        }
    }
}

#[test]
fn logistic_mean_and_laplace() {
    let m = suite::logistic();
    let n = 100_000;
    let paths = simulate_mcb_batch(&m, &[1.0], &quiet(1.0, 1e-3), 3, n).unwrap();
    let xs: Vec<f64> = paths.iter().map(|p| p.final_mass()[0]).collect();
    let (mean, se) = mean_and_se(&xs);
    assert!(within(mean, 1f64.exp(), se, 0.0), "mean {mean} ± {se}");
    let est = mc_laplace_estimate(&paths, &[1.0], 1.0).unwrap();
    let v = solve_v(&m, &[1.0], 1.0, 1e-3).unwrap();
    let exact = (-v.last()[0]).exp();
    assert!(
        within(est.estimate, exact, est.se, 0.05 * 1e-3),
        "{} ± {} vs {exact}",
        est.estimate,
        est.se
    );
}

#[test]
fn laplace_estimator_edge_cases() {
    let m = suite::asymmetric_pair();
    let paths = simulate_mcb_batch(&m, &[0.5, 0.5], &quiet(1.0, 1e-2), 1, 50).unwrap();
    let est = mc_laplace_estimate(&paths, &[0.0, 0.0], 1.0).unwrap();
    assert_eq!((est.estimate, est.se), (1.0, 0.0));
    let det = Mechanism::new(
        nalgebra::DMatrix::from_element(1, 1, 0.3),
        vec![0.0],
        vec![vec![]],
    )
    .unwrap();
    let one = simulate_mcb_batch(&det, &[2.0], &quiet(1.0, 1e-2), 1, 1).unwrap();
    let est = mc_laplace_estimate(&one, &[0.4], 1.0).unwrap();
    assert_eq!(est.estimate, (-0.4 * one[0].final_mass()[0]).exp());
    assert_eq!(est.se, 0.0);
}

#[test]
fn yule_backbone_mean() {
    // logistic: w = 1, q = 1 and only binary splits
    let m = suite::logistic();
    let w = extinction_vector(&m).unwrap();
    let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
    let nu0 = [InitialParticle {
        kind: 0,
        position: None,
    }];
    let counts: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|k| {
            simulate_backbone(&spec, &nu0, 1.0, derive_seed(21, k), None)
                .unwrap()
                .population_at(1.0) as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&counts);
    assert!(within(mean, 1f64.exp(), se, 0.0), "{mean} ± {se}");
}

#[test]
fn backbone_time_rescaling() {
    let m = suite::asymmetric_pair();
    let c = 2.0;
    let fast = scaled(&m, c);
    let spec = BackboneSpec::new(&m, &extinction_vector(&m).unwrap(), J_MAX_DEFAULT).unwrap();
    let spec_fast =
        BackboneSpec::new(&fast, &extinction_vector(&fast).unwrap(), J_MAX_DEFAULT).unwrap();
    let nu0 = [InitialParticle {
        kind: 1,
        position: None,
    }];
    let run = |s: &BackboneSpec, t: f64, master: u64| -> Vec<Vec<f64>> {
        (0..10_000u64)
            .into_par_iter()
            .map(|k| {
                let f = simulate_backbone(s, &nu0, t, derive_seed(master, k), None).unwrap();
                f.counts_at(2, t).iter().map(|x| *x as f64).collect()
            })
            .collect()
    };
    let slow_counts = run(&spec, 1.0, 5);
    let fast_counts = run(&spec_fast, 1.0 / c, 6);
    for j in 0..2 {
        let a: Vec<f64> = slow_counts.iter().map(|x| x[j]).collect();
        let b: Vec<f64> = fast_counts.iter().map(|x| x[j]).collect();
        let (ma, sa) = mean_and_se(&a);
        let (mb, sb) = mean_and_se(&b);
        assert!(
            (ma - mb).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(),
            "type {j}: {ma} ± {sa} vs {mb} ± {sb}"
        );
    }
}

#[test]
fn backbone_population_never_decreases() {
    let m = suite::asymmetric_pair();
    let spec = BackboneSpec::new(&m, &extinction_vector(&m).unwrap(), J_MAX_DEFAULT).unwrap();
    let nu0 = [InitialParticle {
        kind: 0,
        position: None,
    }];
    for seed in 0..200 {
        let f = simulate_backbone(&spec, &nu0, 2.0, seed, None).unwrap();
        let mut last = 0;
        for k in 0..=200 {
            let n = f.population_at(k as f64 * 0.01);
            assert!(n >= last, "seed {seed}: {n} < {last}");
            last = n;
        }
        for p in &f.particles {
            if let Some(d) = p.death {
                assert!(p.birth < d);
            }
            if let Some(parent) = p.parent {
                assert_eq!(Some(p.birth), f.particles[parent].death);
            }
        }
    }
}

#[test]
fn poissonized_initial_counts() {
    let m = suite::asymmetric_pair();
    let w = extinction_vector(&m).unwrap();
    let mu = [0.6, 0.3];
    let n = 100_000u64;
    let draws: Vec<Vec<InitialParticle>> = (0..n)
        .into_par_iter()
        .map(|k| poissonize_initial(&w.w, &mu, derive_seed(9, k)).unwrap())
        .collect();
    for (i, m) in mu.iter().enumerate() {
        let xs: Vec<f64> = draws
            .iter()
            .map(|d| d.iter().filter(|p| p.kind == i).count() as f64)
            .collect();
        let (mean, se) = mean_and_se(&xs);
        assert!(within(mean, w.w[i] * m, se, 0.0), "type {i}: {mean} ± {se}");
    }
    let empty: Vec<f64> = draws
        .iter()
        .map(|d| if d.is_empty() { 1.0 } else { 0.0 })
        .collect();
    let (p, se) = mean_and_se(&empty);
    assert!(
        within(p, (-dot(&w.w, &mu)).exp(), se, 0.0),
        "P(empty) {p} ± {se}"
    );
    assert!(poissonize_initial(&w.w, &[0.0, 0.0], 1).unwrap().is_empty());
}

#[test]
fn branch_event_frequencies_and_means() {
    let m = suite::asymmetric_pair();
    let w = extinction_vector(&m).unwrap();
    let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
    let mean = mean_offspring_matrix(&m, &w.w, &spec.q);
    let n = 200_000;
    for i in 0..2 {
        let mut rng = rng_from_seed(40 + i as u64);
        let events: Vec<_> = (0..n)
            .map(|_| sample_branch_event(&spec, i, &mut rng).unwrap())
            .collect();
        for k in 0..2 {
            let xs: Vec<f64> = events.iter().map(|e| e.offspring[k] as f64).collect();
            let (mk, se) = mean_and_se(&xs);
            assert!(
                within(mk, mean[(i, k)], se, 0.0),
                "m[{i}][{k}] {mk} ± {se} vs {}",
                mean[(i, k)]
            );
        }
        for entry in spec.pmf[i].entries.iter().filter(|e| e.p > 1e-3) {
            let hits = events.iter().filter(|e| e.offspring == entry.j).count() as f64 / n as f64;
            let se = (entry.p * (1.0 - entry.p) / n as f64).sqrt();
            assert!(
                within(hits, entry.p, se, 0.0),
                "p{:?} {hits} vs {}",
                entry.j,
                entry.p
            );
        }
    }
}

#[test]
fn dressed_without_backbone_is_the_conditioned_process() {
    let m = suite::asymmetric_pair();
    let w = extinction_vector(&m).unwrap();
    let d = condition(&m, &w).unwrap();
    let spec = BackboneSpec::new(&m, &w, J_MAX_DEFAULT).unwrap();
    let y = [0.8, 0.5];
    let theta = [1.0, 0.5];
    let dt = 1e-3;
    let opts = DressedOptions {
        record_every: 1000,
        ..DressedOptions::new(1.0, dt, 0.01)
    };
    let values: Vec<f64> = (0..20_000u64)
        .into_par_iter()
        .map(|k| {
            let s =
                simulate_dressed(&m, &d, &spec, &[], Some(&y), &opts, derive_seed(17, k)).unwrap();
            assert!(s.forest.particles.is_empty() && s.forest.immigration_events.is_empty());
            (-dot(&theta, s.path.final_mass())).exp()
        })
        .collect();
    let (est, se) = mean_and_se(&values);
    let exact = (-dot(&y, solve_v(&d, &theta, 1.0, 1e-3).unwrap().last())).exp();
    assert!(within(est, exact, se, 0.05 * dt), "{est} ± {se} vs {exact}");
}
