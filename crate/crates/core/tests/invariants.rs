use proptest::prelude::*;
use tgnn::fdm::{harmonic_mean, simulate, BoundaryConditions, GridSpec, Simulator};
use tgnn::kle::{CovarianceSpec, FieldRealization, KleBasis};
use tgnn::metrics::{add_noise, head_range, score};
use tgnn::net::{evaluate_batch, forward_with_derivs, init_params, Architecture, NetworkParams, Order};
use tgnn::physics::{ConstraintSpec, Dataset, LabeledPoint, Problem, TermWeights};
use tgnn::trainer::{dynamic_stop, update_multipliers, MultiplierState};

fn small_grid() -> GridSpec {
    GridSpec {
        nx: 9,
        ny: 6,
        n_steps: 8,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn kle_spectrum_is_sorted_and_bounded(
        variance in 0.1f64..4.0,
        eta in 50.0f64..2000.0,
        n_terms in 1usize..40,
    ) {
        let spec = CovarianceSpec { correlation_length: eta, variance, ..Default::default() };
        let basis = KleBasis::new(&spec, n_terms).unwrap();
        prop_assert_eq!(basis.n_terms(), n_terms);
        prop_assert!(basis.terms().windows(2).all(|w| w[0].eigenvalue >= w[1].eigenvalue));
        prop_assert!(basis.terms().iter().all(|t| t.eigenvalue > 0.0));
        let e = basis.retained_energy();
        prop_assert!(e > 0.0 && e <= 1.0 + 1e-12);
        for &(x, y) in &[(0.0, 0.0), (300.0, 700.0), (1020.0, 510.0)] {
            prop_assert!(basis.pointwise_variance(x, y) <= variance * (1.0 + 1e-9));
        }
    }

    #[test]
    fn harmonic_mean_lies_between_inputs(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
        let h = harmonic_mean(a, b);
        prop_assert!(h >= a.min(b) * (1.0 - 1e-12) && h <= a.max(b) * (1.0 + 1e-12));
        prop_assert!(h <= 0.5 * (a + b) * (1.0 + 1e-12));
    }

    #[test]
    fn heads_obey_maximum_principle_and_mass_balance(seed in 0u64..10_000, variance in 0.0f64..2.0) {
        let spec = CovarianceSpec { variance, ..Default::default() };
        let field = FieldRealization::generate(&spec, 20, seed).unwrap();
        let grid = small_grid();
        let bcs = BoundaryConditions::default();
        let sim = Simulator::for_field(&field, grid, bcs).unwrap();
        let mut h = bcs.initial_heads(&grid);
        for _ in 0..grid.n_steps {
            let out = sim.step(&h, grid.dt).unwrap();
            prop_assert!(out.mass_balance_error() < 1e-6);
            h = out.heads;
            for j in 0..grid.ny {
                prop_assert_eq!(h[j * grid.nx], 1.0);
                prop_assert_eq!(h[j * grid.nx + grid.nx - 1], 0.0);
            }
            prop_assert!(h.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
        }
    }

    #[test]
    fn batch_evaluation_equals_pointwise(seed in 0u64..1000, n in 1usize..40) {
        let arch = Architecture { hidden_layers: 2, width: 7, ..Default::default() };
        let p = init_params(&arch, seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) / n as f64;
                [10.0 * s, 1020.0 * (1.0 - s), 1020.0 * s * s]
            })
            .collect();
        let batch = evaluate_batch(&p, &pts, Order::Full);
        for (b, pt) in batch.iter().zip(&pts) {
            let single = forward_with_derivs(&p, pt[0], pt[1], pt[2]);
            for (u, v) in [(b.value, single.value), (b.dt, single.dt), (b.dx, single.dx), (b.dxx, single.dxx), (b.dyy, single.dyy)] {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(v.abs()).max(1e-12));
            }
        }
    }

    #[test]
    fn multiplier_traces_are_nondecreasing(
        seed in 0u64..1000,
        nus in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..50),
    ) {
        let mut m = MultiplierState::random(1.25, seed).unwrap();
        let mut prev = m.values();
        for (a, b, c) in nus {
            update_multipliers(&mut m, a, b, c).unwrap();
            let cur = m.values();
            prop_assert!((0..3).all(|k| cur[k] >= prev[k]));
            prev = cur;
        }
    }

    #[test]
    fn satisfied_constraints_have_zero_violation(a in 0.0f64..0.4, c in -0.2f64..0.2, w_t in -0.05f64..0.05) {
        // N = 0.7 + w_t t/10 - a x/L + c y/L: corners stay in [0.05, 0.95], ∂N/∂x ≤ 0.
        let arch = Architecture { hidden_layers: 0, ..Default::default() };
        let p = NetworkParams::from_values(arch, 0, vec![w_t, -a, c, 0.7]).unwrap();
        let field = FieldRealization::generate(&CovarianceSpec::default(), 20, 1).unwrap();
        let mut ds = Dataset::default();
        ds.observations.push(LabeledPoint { t: 1.0, x: 10.0, y: 10.0, h: 0.5 });
        for k in 0..50 {
            let s = k as f64 / 49.0;
            ds.ec.push([10.0 * s, 1020.0 * s, 1020.0 * (1.0 - s)]);
            ds.ek.push([10.0 * (1.0 - s), 1020.0 * s, 1020.0 * s]);
        }
        ds.pde.push([1.0, 500.0, 500.0]);
        let problem = Problem::new(ds, &field, 1e-4, ConstraintSpec::default()).unwrap();
        let b = problem.evaluate(&p, &TermWeights::lagrangian([1.0; 3]), None).unwrap();
        prop_assert_eq!(b.nu_ec, 0.0);
        prop_assert_eq!(b.nu_ek, 0.0);
        prop_assert_eq!(b.mse_ec, 0.0);
        prop_assert_eq!(b.mse_ek, 0.0);
    }

    #[test]
    fn scores_are_bounded(
        reference in prop::collection::vec(-5.0f64..5.0, 2..60),
        noise in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        prop_assume!(reference.iter().any(|&r| (r - reference[0]).abs() > 1e-6));
        let pred: Vec<f64> = reference.iter().zip(&noise).map(|(r, e)| r + e).collect();
        let (mse, rel, r2) = score(&pred, &reference).unwrap();
        prop_assert!(mse >= 0.0 && rel >= 0.0 && r2 <= 1.0);
        let (m0, r0, one) = score(&reference, &reference).unwrap();
        prop_assert_eq!((m0, r0, one), (0.0, 0.0, 1.0));
    }

    #[test]
    fn noise_is_bounded_by_head_range(seed in 0u64..1000, alpha in 0.0f64..50.0) {
        let field = FieldRealization::generate(&CovarianceSpec::default(), 20, 3).unwrap();
        let grid = small_grid();
        let sol = simulate(&field, grid, BoundaryConditions::default()).unwrap();
        let range = head_range(&sol);
        let obs: Vec<LabeledPoint> = (0..grid.nx)
            .map(|i| LabeledPoint { t: grid.time(3), x: grid.x(i), y: grid.y(2), h: sol.head(3, 2, i) })
            .collect();
        let noisy = add_noise(&sol, &obs, alpha, seed).unwrap();
        for (i, (a, b)) in noisy.iter().zip(&obs).enumerate() {
            prop_assert!((a.h - b.h).abs() <= range[2 * grid.nx + i] * alpha / 100.0 + 1e-15);
        }
    }

    #[test]
    fn dynamic_stop_reads_only_the_window(
        head in prop::collection::vec(0.0f64..10.0, 0..20),
        tail in prop::collection::vec(0.0f64..0.5, 1..20),
    ) {
        let mut losses = head.clone();
        losses.extend(&tail);
        prop_assert!(dynamic_stop(&losses, tail.len(), 0.5));
        let mut bumped = losses.clone();
        let last = bumped.len() - 1;
        bumped[last] = 0.5;
        prop_assert!(!dynamic_stop(&bumped, tail.len(), 0.5));
        prop_assert!(!dynamic_stop(&losses, losses.len() + 1, 0.5));
    }
}
