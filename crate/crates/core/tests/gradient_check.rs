//! Analytic gradients against central finite differences for every
//! objective kind.

use rae_core::gradient::{evaluate, forward_for, loss, StepNoise};
use rae_core::model::Network;
use rae_core::objectives::{gram, DenoisingRelation, Reconstruction};
use rae_core::trainer::init_for;
use rae_core::{Matrix, ObjectiveKind, ObjectiveSpec, Rng};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn noise_for(net: &Network, x: &Matrix, spec: &ObjectiveSpec, rng: &mut Rng) -> StepNoise {
    StepNoise {
        corrupted: spec.kind.is_denoising().then(|| {
            let d = rng.gaussian(0.0, 0.1, x.rows(), x.cols()).unwrap();
            x.add(&d).unwrap()
        }),
        latent: spec
            .kind
            .is_variational()
            .then(|| rng.standard_normal_matrix(x.rows(), net.latent_dim())),
    }
}

trait NormalMatrix {
    fn standard_normal_matrix(&mut self, r: usize, c: usize) -> Matrix;
}

impl NormalMatrix for Rng {
    fn standard_normal_matrix(&mut self, r: usize, c: usize) -> Matrix {
        self.gaussian(0.0, 1.0, r, c).unwrap()
    }
}

fn total(net: &Network, x: &Matrix, spec: &ObjectiveSpec, noise: &StepNoise) -> f64 {
    let trace = forward_for(net, x, spec, noise).unwrap();
    loss(net, x, spec, &trace).unwrap().total
}

/// Largest relative error over all parameters.
fn worst_error(net: &Network, x: &Matrix, spec: &ObjectiveSpec, noise: &StepNoise) -> (f64, usize) {
    let (_, grads) = evaluate(net, x, spec, noise).unwrap();
    let analytic = grads.flatten();
    let params = net.flat_params();
    assert_eq!(analytic.len(), params.len());
    let mut probe = net.clone();
    let mut worst = (0.0, 0);
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + STEP;
        probe.set_flat_params(&p).unwrap();
        let up = total(&probe, x, spec, noise);
        p[i] = params[i] - STEP;
        probe.set_flat_params(&p).unwrap();
        let down = total(&probe, x, spec, noise);
        let numeric = (up - down) / (2.0 * STEP);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

fn check_grid(recon: Reconstruction) {
    let mut rng = Rng::new(2024);
    let x = rng.uniform(0.05, 0.95, 6, 5).unwrap();
    let t_median = median(gram(&x).as_slice());
    for (k, kind) in ObjectiveKind::ALL.into_iter().enumerate() {
        for alpha in [0.0, 0.5, 1.0] {
            for t in [0.0, t_median] {
                for lambda in [0.0, 0.01] {
                    let spec = ObjectiveSpec::new(kind)
                        .with_alpha(alpha)
                        .with_t(t)
                        .with_lambda(lambda)
                        .with_delta(0.1)
                        .with_recon(recon);
                    let net = init_for(&[5, 3, 2], &spec, 100 + k as u64).unwrap();
                    let noise = noise_for(&net, &x, &spec, &mut rng);
                    let (err, at) = worst_error(&net, &x, &spec, &noise);
                    assert!(
                        err < TOLERANCE,
                        "{kind} alpha={alpha} t={t} lambda={lambda} {recon}: relative error {err:e} at parameter {at}"
                    );
                }
            }
        }
    }
}

#[test]
fn all_kinds_match_finite_differences_squared_error() {
    check_grid(Reconstruction::SquaredError);
}

#[test]
fn all_kinds_match_finite_differences_cross_entropy() {
    check_grid(Reconstruction::CrossEntropy);
}

#[test]
fn literal_denoising_relation_matches_finite_differences() {
    let mut rng = Rng::new(7);
    let x = rng.uniform(0.05, 0.95, 6, 5).unwrap();
    let mut spec = ObjectiveSpec::new(ObjectiveKind::Rdae).with_alpha(0.5).with_delta(0.2);
    spec.denoising_relation = DenoisingRelation::CorruptedInput;
    let net = init_for(&[5, 3, 2], &spec, 1).unwrap();
    let noise = noise_for(&net, &x, &spec, &mut rng);
    let (err, at) = worst_error(&net, &x, &spec, &noise);
    assert!(err < TOLERANCE, "relative error {err:e} at parameter {at}");
}
