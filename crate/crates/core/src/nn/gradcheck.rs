//! Central-difference verification of the analytic gradients.
//!
//! Central differences are only a valid oracle where the loss is smooth
//! across the probe window, so the checker defends its own validity:
//!
//! - If perturbing a parameter flips any discrete forward decision (a
//!   ReLU activation or a pool argmax), the window straddles a kink and
//!   the step is shrunk tenfold until the window is clean.
//! - Gradients below the difference quotient's cancellation noise
//!   (`~machine-eps · |loss| / step`) cannot be resolved by any finite
//!   difference; when both sides sit under that floor they count as
//!   agreeing.
//! - Batch-norm channels with near-zero batch variance make the loss
//!   curvature explode (`d/dx (var+eps)^-1/2` scales like `var^-3/2`);
//!   [`grad_check`] redraws its random test point until every channel's
//!   variance is healthy, then checks every parameter.

use super::{loss_xent_soft, LayerState, Network, NetworkSpec, Tensor4};
use crate::{Error, Result};
use rand::Rng;

/// Worst relative disagreement between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter where the worst disagreement occurred.
    pub location: String,
    pub n_params: usize,
    /// Parameters whose probe step was shrunk to clear a kink.
    pub kink_retries: usize,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max relative error {:.3e} over {} parameters ({} kink retries; worst at {})",
            self.max_rel_error, self.n_params, self.kink_retries, self.location
        )
    }
}

fn param_descriptions(net: &Network) -> Vec<String> {
    let mut out = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerState::BatchNorm(_) => {
                out.push(format!("layer {i} bn gamma"));
                out.push(format!("layer {i} bn beta"));
            }
            LayerState::Conv(_) => {
                out.push(format!("layer {i} conv weights"));
                out.push(format!("layer {i} conv bias"));
            }
            LayerState::Fc(_) => {
                out.push(format!("layer {i} fc weights"));
                out.push(format!("layer {i} fc bias"));
            }
            _ => {}
        }
    }
    out
}

/// Compares every parameter's analytic gradient against the central
/// difference `(L(θ+ε) − L(θ−ε)) / 2ε`, dropout masks held fixed across
/// all evaluations. Relative error is `|a−n| / max(|a|+|n|, 1e-8)`.
pub fn grad_check_network<R: Rng + ?Sized>(
    net: &mut Network,
    images: &Tensor4,
    targets: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let masks = net.sample_dropout_masks(images, rng);
    let cache = net.forward_train_with_masks(images, &masks)?;
    let base_signature = cache.discrete_signature();
    let analytic = net.backward(&cache, targets)?.to_flat();
    let descriptions = param_descriptions(net);
    let (n, k) = (cache.n, cache.k);

    let mut worst = 0.0f64;
    let mut worst_loc = String::from("none");
    let mut kink_retries = 0usize;
    let mut flat_idx = 0usize;
    let n_tensors = net.param_tensors().len();
    for tensor_i in 0..n_tensors {
        let len = net.param_tensors()[tensor_i].len();
        for offset in 0..len {
            let original = net.param_tensors()[tensor_i][offset];

            // Shrink the step until neither probe crosses a kink.
            let mut eps = epsilon;
            let mut measurement = None;
            for shrink in 0..4 {
                net.param_tensors_mut()[tensor_i][offset] = original + eps;
                let plus = net.forward_train_with_masks(images, &masks)?;
                net.param_tensors_mut()[tensor_i][offset] = original - eps;
                let minus = net.forward_train_with_masks(images, &masks)?;
                net.param_tensors_mut()[tensor_i][offset] = original;
                if plus.discrete_signature() == base_signature
                    && minus.discrete_signature() == base_signature
                {
                    let loss_plus = loss_xent_soft(&plus.logits, targets, n, k);
                    let loss_minus = loss_xent_soft(&minus.logits, targets, n, k);
                    measurement = Some((loss_plus, loss_minus, eps));
                    if shrink > 0 {
                        kink_retries += 1;
                    }
                    break;
                }
                eps /= 10.0;
            }
            let Some((loss_plus, loss_minus, eps)) = measurement else {
                return Err(Error::Config(format!(
                    "gradient check: {}[{offset}] sits on a kink at every probe step",
                    descriptions[tensor_i]
                )));
            };

            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let a = analytic[flat_idx];
            // Differences below the quotient's cancellation noise are
            // unresolvable; both sides under the floor counts as a match.
            let noise_floor =
                1e4 * f64::EPSILON * loss_plus.abs().max(loss_minus.abs()).max(1.0) / eps;
            let rel = if a.abs() <= noise_floor && numeric.abs() <= noise_floor {
                0.0
            } else {
                (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8)
            };
            if rel > worst {
                worst = rel;
                worst_loc = format!(
                    "{}[{offset}] (analytic {a:.6e}, numeric {numeric:.6e}, eps {eps:.1e})",
                    descriptions[tensor_i]
                );
            }
            flat_idx += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        location: worst_loc,
        n_params: flat_idx,
        kink_retries,
    })
}

const BN_VARIANCE_FLOOR: f64 = 1e-3;

/// Builds a freshly initialized network from `spec` and a random
/// four-sample batch (mixed one-hot and blended 0.5/0.5 targets), redraws
/// until every batch-norm channel sees healthy variance, then runs
/// [`grad_check_network`].
pub fn grad_check<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    epsilon: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (c, h, w) = spec.input;
    let k = spec.n_classes();
    let batch = 4;
    for _attempt in 0..64 {
        let mut net = Network::new(spec.clone(), rng)?;
        let mut images = Tensor4::zeros(batch, c, h, w);
        for v in &mut images.data {
            *v = rng.gen::<f64>();
        }
        let mut targets = vec![0.0; batch * k];
        for row in 0..batch {
            if row % 2 == 0 {
                targets[row * k + rng.gen_range(0..k)] = 1.0;
            } else {
                targets[row * k + rng.gen_range(0..k)] += 0.5;
                targets[row * k + rng.gen_range(0..k)] += 0.5;
            }
        }
        // Probe the test point: reject draws whose batch statistics make
        // the finite-difference oracle ill-conditioned.
        let masks = net.sample_dropout_masks(&images, rng);
        let probe = net.forward_train_with_masks(&images, &masks)?;
        if probe.min_bn_variance() < BN_VARIANCE_FLOOR {
            continue;
        }
        return grad_check_network(&mut net, &images, &targets, epsilon, rng);
    }
    Err(Error::Config(
        "gradient check: no well-conditioned test point found in 64 draws".into(),
    ))
}
