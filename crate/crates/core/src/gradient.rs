//! Objective evaluation on a network and exact backpropagation.
//!
//! A training step runs [`forward_for`] (which feeds the corrupted input to
//! denoising kinds and the reparameterized sample to variational kinds),
//! then [`loss`] and [`gradient`] on the resulting trace. Tied weights
//! collect both the encoder-path and the decoder-path contribution in one
//! gradient matrix.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ForwardTrace, Gradients, Network};
use crate::objectives::{
    self, gae_similarity, reconstruction_grad, relation_grad, weighted_distance_grad,
    DenoisingRelation, LossValue, ObjectiveKind, ObjectiveSpec,
};

/// Per-step random inputs: the corrupted batch for denoising kinds and the
/// standard-normal draws `xi` for the latent sample of variational kinds.
#[derive(Debug, Clone, Default)]
pub struct StepNoise {
    pub corrupted: Option<Matrix>,
    pub latent: Option<Matrix>,
}

/// Forward pass wired the way `spec` trains.
pub fn forward_for(
    net: &Network,
    x: &Matrix,
    spec: &ObjectiveSpec,
    noise: &StepNoise,
) -> Result<ForwardTrace> {
    let input = if spec.kind.is_denoising() {
        noise.corrupted.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs a corrupted batch", spec.kind))
        })?
    } else {
        x
    };
    if input.shape() != x.shape() {
        return Err(Error::DimensionMismatch {
            op: "forward_for",
            left: input.shape(),
            right: x.shape(),
        });
    }
    if spec.kind.is_variational() {
        let xi = noise.latent.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs latent noise", spec.kind))
        })?;
        net.forward_sampled(input, xi)
    } else {
        net.forward(input)
    }
}

fn check_trace(net: &Network, x: &Matrix, spec: &ObjectiveSpec, trace: &ForwardTrace) -> Result<()> {
    let mismatch = |why: &str| Err(Error::InvalidArgument(format!("trace/spec mismatch: {why}")));
    if trace.encoder.len() != net.layers.len() || trace.decoder.len() != net.layers.len() {
        return mismatch("layer count differs from the network");
    }
    if trace.input.shape() != x.shape() || trace.reconstruction().shape() != x.shape() {
        return mismatch("trace was produced on a different batch shape");
    }
    if spec.kind.is_variational() != trace.latent.log_var.is_some() {
        return mismatch("variational objectives need a sampled trace and vice versa");
    }
    if !spec.kind.is_denoising() && trace.input != *x {
        return mismatch("trace input differs from the batch");
    }
    Ok(())
}

/// Loss of `spec` for the clean batch `x` given a trace from [`forward_for`].
pub fn loss(net: &Network, x: &Matrix, spec: &ObjectiveSpec, trace: &ForwardTrace) -> Result<LossValue> {
    check_trace(net, x, spec, trace)?;
    let xr = trace.reconstruction();
    match spec.kind {
        ObjectiveKind::Bae => objectives::bae_loss(x, xr, spec),
        ObjectiveKind::Gae => objectives::gae_loss(x, xr),
        ObjectiveKind::Rae => objectives::rae_loss(x, xr, spec),
        ObjectiveKind::Sae => objectives::sae_loss(x, xr, net, spec),
        ObjectiveKind::Rsae => objectives::rsae_loss(x, xr, net, spec),
        ObjectiveKind::Dae => objectives::dae_loss(x, xr, &trace.input, spec),
        ObjectiveKind::Rdae => objectives::rdae_loss(x, xr, &trace.input, spec),
        ObjectiveKind::Vae | ObjectiveKind::Rvae => {
            let mean = trace.code_mean();
            let log_var = trace.latent.log_var.as_ref().expect("checked");
            if spec.kind == ObjectiveKind::Vae {
                objectives::vae_loss(x, mean, log_var, xr, spec)
            } else {
                objectives::rvae_loss(x, mean, log_var, xr, spec)
            }
        }
    }
}

/// Gradient of `loss(net, x, spec, trace).total` with respect to every
/// parameter of `net`.
pub fn gradient(net: &Network, x: &Matrix, spec: &ObjectiveSpec, trace: &ForwardTrace) -> Result<Gradients> {
    check_trace(net, x, spec, trace)?;
    let w = spec.weights();
    let xr = trace.reconstruction();

    let mut d_recon = if spec.kind == ObjectiveKind::Gae {
        weighted_distance_grad(&gae_similarity(x), x, xr)?
    } else {
        reconstruction_grad(spec.recon, x, xr)?.scale(w.data)
    };
    let relation_through_recon = !(spec.kind == ObjectiveKind::Rdae
        && spec.denoising_relation == DenoisingRelation::CorruptedInput);
    if w.relation != 0.0 && relation_through_recon {
        d_recon.add_scaled_in_place(&relation_grad(x, xr, spec.t)?, w.relation)?;
    }

    let mut grads = Gradients::zeros_like(net);
    let n_layers = net.layers.len();

    // Decoder: D_i = s(D_{i+1} W_i + b_dec_i), walked from the output down.
    let mut d_out = d_recon;
    for i in 0..n_layers {
        let layer = &net.layers[i];
        let d_pre = layer
            .spec
            .activation
            .backprop(trace.decoder_output(i), &d_out);
        let input = trace.decoder_input(i);
        let g = &mut grads.layers[i];
        g.weight.add_scaled_in_place(&input.t_matmul(&d_pre)?, 1.0)?;
        g.dec_bias = d_pre.column_sums();
        d_out = d_pre.matmul_t(&layer.weight)?;
    }
    let d_code = d_out;

    // Latent: code = mu (+ exp(s / 2) * xi for variational nets).
    let mut d_below_top: Option<Matrix> = None;
    let d_mean = match (&trace.latent.log_var, &trace.latent.noise, &net.variance_head) {
        (Some(log_var), Some(xi), Some(head)) => {
            let mean = trace.code_mean();
            let d_mean = d_code.zip_map(mean, |g, mu| g + w.kl * mu)?;
            let spread = log_var.zip_map(xi, |lv, e| 0.5 * (0.5 * lv).exp() * e)?;
            let d_log_var = d_code
                .hadamard(&spread)?
                .zip_map(log_var, |g, lv| g + w.kl * 0.5 * (lv.exp() - 1.0))?;
            let below = trace.encoder_input(n_layers - 1);
            let hg = grads.variance_head.as_mut().expect("zeros_like mirrors the head");
            hg.weight = d_log_var.t_matmul(below)?;
            hg.bias = d_log_var.column_sums();
            d_below_top = Some(d_log_var.matmul(&head.weight)?);
            d_mean
        }
        (None, None, _) => d_code,
        _ => {
            return Err(Error::InvalidArgument(
                "trace/spec mismatch: latent sample without a variance head".into(),
            ))
        }
    };

    // Encoder: H_{i+1} = s(H_i W_i^T + b_enc_i), walked from the top down.
    let mut d_h = d_mean;
    for i in (0..n_layers).rev() {
        let layer = &net.layers[i];
        let d_pre = layer.spec.activation.backprop(&trace.encoder[i], &d_h);
        let input = trace.encoder_input(i);
        let g = &mut grads.layers[i];
        g.weight.add_scaled_in_place(&d_pre.t_matmul(input)?, 1.0)?;
        g.enc_bias = d_pre.column_sums();
        if i > 0 {
            d_h = d_pre.matmul(&layer.weight)?;
            if i == n_layers - 1 {
                if let Some(extra) = d_below_top.take() {
                    d_h.add_scaled_in_place(&extra, 1.0)?;
                }
            }
        }
    }

    if w.regularizer != 0.0 {
        for (g, l) in grads.layers.iter_mut().zip(&net.layers) {
            g.weight.add_scaled_in_place(&l.weight, 2.0 * w.regularizer)?;
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(grads)
}

/// Forward pass, loss and gradient in one call.
pub fn evaluate(
    net: &Network,
    x: &Matrix,
    spec: &ObjectiveSpec,
    noise: &StepNoise,
) -> Result<(LossValue, Gradients)> {
    let trace = forward_for(net, x, spec, noise)?;
    let value = loss(net, x, spec, &trace)?;
    let grads = gradient(net, x, spec, &trace)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_network;
    use crate::objectives::gram;
    use crate::rng::Rng;

    #[test]
    fn alpha_zero_relational_gradient_equals_plain() {
        let mut rng = Rng::new(3);
        let net = init_network(&[5, 3, 2], &mut rng).unwrap();
        let x = rng.uniform(0.0, 1.0, 6, 5).unwrap();
        let trace = net.forward(&x).unwrap();
        let bae = gradient(&net, &x, &ObjectiveSpec::new(ObjectiveKind::Bae), &trace).unwrap();
        let rae = gradient(&net, &x, &ObjectiveSpec::new(ObjectiveKind::Rae).with_t(0.5), &trace)
            .unwrap();
        assert_eq!(bae, rae);
    }

    #[test]
    fn entries_clipped_in_both_grams_pass_no_gradient() {
        let mut rng = Rng::new(4);
        let net = init_network(&[5, 3, 2], &mut rng).unwrap();
        let x = rng.uniform(0.0, 1.0, 6, 5).unwrap();
        let trace = net.forward(&x).unwrap();
        let xr = trace.reconstruction();
        let above_all = gram(&x)
            .as_slice()
            .iter()
            .chain(gram(xr).as_slice())
            .fold(0.0f64, |m, v| m.max(*v))
            + 1.0;
        let d = relation_grad(&x, xr, above_all).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
        let rel = ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(0.0);
        let clipped = ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(0.7).with_t(above_all);
        let g0 = gradient(&net, &x, &rel, &trace).unwrap().flatten();
        let g1 = gradient(&net, &x, &clipped, &trace).unwrap().flatten();
        for (a, b) in g0.iter().zip(&g1) {
            assert!((0.3 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let mut rng = Rng::new(5);
        let net = init_network(&[5, 3, 2], &mut rng).unwrap();
        let x = rng.uniform(0.0, 1.0, 6, 5).unwrap();
        let trace = net.forward(&x).unwrap();
        let vae = ObjectiveSpec::new(ObjectiveKind::Vae);
        assert!(gradient(&net, &x, &vae, &trace).is_err());
        let other = rng.uniform(0.0, 1.0, 6, 5).unwrap();
        assert!(gradient(&net, &other, &ObjectiveSpec::new(ObjectiveKind::Bae), &trace).is_err());
        assert!(forward_for(&net, &x, &ObjectiveSpec::new(ObjectiveKind::Dae), &StepNoise::default())
            .is_err());
    }
}
