//! Finite-difference checks of every derivative the training loop uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgnn::kle::{CovarianceSpec, FieldRealization};
use tgnn::net::{forward_with_derivs, init_params, Architecture, Gradient, NetworkParams};
use tgnn::physics::{residual_from, ConstraintSpec, Dataset, LabeledPoint, Problem, TermWeights};

const SCALE: [f64; 3] = [10.0, 1020.0, 1020.0];

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_net(rng: &mut ChaCha8Rng) -> NetworkParams {
    let arch = Architecture {
        hidden_layers: rng.random_range(1..=4),
        width: rng.random_range(2..=12),
        ..Default::default()
    };
    let mut p = init_params(&arch, rng.random());
    // Nonzero biases so the check is not restricted to the origin.
    for v in p.values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    p
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.5..9.5),
        rng.random_range(50.0..970.0),
        rng.random_range(50.0..970.0),
    ]
}

fn value(p: &NetworkParams, pt: [f64; 3]) -> f64 {
    forward_with_derivs(p, pt[0], pt[1], pt[2]).value
}

#[test]
fn input_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let p = random_net(&mut rng);
        let pt = random_point(&mut rng);
        let b = forward_with_derivs(&p, pt[0], pt[1], pt[2]);
        let analytic_first = [b.dt, b.dx, b.dy];
        for d in 0..3 {
            // Step in normalized units: central error ~ h², roundoff ~ eps / h.
            let h = 1e-4 * SCALE[d];
            let mut up = pt;
            let mut dn = pt;
            up[d] += h;
            dn[d] -= h;
            let fd = (value(&p, up) - value(&p, dn)) / (2.0 * h);
            // Compare in normalized units so all three share one floor.
            let r = rel(analytic_first[d] * SCALE[d], fd * SCALE[d], 1e-6);
            assert!(r < 1e-5, "case {case} dim {d}: {} vs {fd} (rel {r})", analytic_first[d]);
        }
        for (d, analytic) in [(1, b.dxx), (2, b.dyy)] {
            let h = 1e-3 * SCALE[d];
            let mut up = pt;
            let mut dn = pt;
            up[d] += h;
            dn[d] -= h;
            let fd = (value(&p, up) - 2.0 * b.value + value(&p, dn)) / (h * h);
            let s2 = SCALE[d] * SCALE[d];
            let r = rel(analytic * s2, fd * s2, 1e-4);
            assert!(r < 1e-3, "case {case} second dim {d}: {analytic} vs {fd} (rel {r})");
        }
    }
}

fn residual_problem(rng: &mut ChaCha8Rng, field: &FieldRealization) -> Problem {
    let mut ds = Dataset::default();
    for _ in 0..6 {
        let [t, x, y] = random_point(rng);
        ds.observations.push(LabeledPoint { t, x, y, h: rng.random() });
    }
    for _ in 0..12 {
        ds.pde.push(random_point(rng));
    }
    let constraints = ConstraintSpec {
        enable_ec: false,
        enable_ek: false,
        ..Default::default()
    };
    Problem::new(ds, field, 1e-4, constraints).unwrap()
}

#[test]
fn residual_loss_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let field = FieldRealization::generate(&CovarianceSpec::default(), 20, 5).unwrap();
    for case in 0..100 {
        let mut p = random_net(&mut rng);
        let problem = residual_problem(&mut rng, &field);
        let weights = TermWeights::lagrangian([rng.random_range(0.5..5.0), 0.0, 0.0]);
        let mut grad = Gradient::zeros(&p);
        problem.evaluate(&p, &weights, Some(&mut grad)).unwrap();
        let total = |p: &NetworkParams| weights.total(&problem.evaluate(p, &weights, None).unwrap());
        // A sample of coordinates keeps the suite fast.
        for _ in 0..8 {
            let k = rng.random_range(0..p.len());
            let v = p.values()[k];
            let h = 1e-6 * v.abs().max(1.0);
            p.values_mut()[k] = v + h;
            let up = total(&p);
            p.values_mut()[k] = v - h;
            let dn = total(&p);
            p.values_mut()[k] = v;
            let fd = (up - dn) / (2.0 * h);
            let r = rel(grad.0[k], fd, 1e-6);
            assert!(r < 1e-4, "case {case} param {k}: {} vs {fd} (rel {r})", grad.0[k]);
        }
    }
}

#[test]
fn residual_is_assembled_from_bundle_derivatives() {
    // f = S_s N_t - K (N_xx + N_yy) - K (Z_x N_x + Z_y N_y), by hand.
    let field = FieldRealization::generate(&CovarianceSpec::default(), 20, 9).unwrap();
    let p = init_params(&Architecture::default(), 3);
    let pt = [3.0, 400.0, 700.0];
    let b = forward_with_derivs(&p, pt[0], pt[1], pt[2]);
    let k = field.eval_log_k(pt[1], pt[2]).unwrap();
    let kk = k.z.exp();
    let expected = 1e-4 * b.dt - kk * (b.dxx + b.dyy) - kk * (k.dz_dx * b.dx + k.dz_dy * b.dy);
    assert!(rel(residual_from(&b, &k, 1e-4), expected, 1e-300) < 1e-14);
}
