//! Gradient-weighted class activation maps.
//!
//! For a target class c, the gradient of logit_c is propagated back to a
//! chosen conv stage's post-ReLU activations A_k. Channel weights are the
//! spatial means of those gradients; the heatmap is ReLU of the weighted
//! activation sum, min-max scaled to [0, 1].

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    encoder_backward_single, encoder_forward_single, linear_head_forward, EncoderParams,
    LinearLayer, Tensor,
};
use crate::spectro::resize_bilinear;

#[derive(Debug, Clone)]
pub struct GradCamResult {
    /// Heatmap at the target stage's spatial resolution, values in [0, 1].
    pub heatmap: Tensor,
    pub stage_h: usize,
    pub stage_w: usize,
    /// The class logit the map explains.
    pub logit: f64,
}

/// Compute the activation map of `class` for one input (C x H x W tensor,
/// already normalized the way the encoder was trained).
pub fn grad_cam(
    encoder: &EncoderParams,
    head: &LinearLayer,
    input: &Tensor,
    class: usize,
    target_stage: usize,
) -> Result<GradCamResult> {
    let n_stages = encoder.arch.stages.len();
    if target_stage >= n_stages {
        return Err(Error::config(format!(
            "target stage {target_stage} out of range for {n_stages} stages"
        )));
    }
    let n_classes = head.weight.shape()[0];
    if class >= n_classes {
        return Err(Error::config(format!(
            "class {class} out of range for {n_classes} classes"
        )));
    }

    let (features, cache) = encoder_forward_single(encoder, input)?;
    let d = features.len();
    let feature_tensor = Tensor::from_vec(&[1, d], features)?;
    let logits = linear_head_forward(head, &feature_tensor)?;
    let logit = logits.data()[class];

    // d(logit_c)/d(features) is row c of the head weights.
    let grad_features: Vec<f64> =
        head.weight.data()[class * d..(class + 1) * d].to_vec();
    let mut sink = encoder.zeros_like();
    let grad_stage = encoder_backward_single(
        encoder,
        &cache,
        &grad_features,
        &mut sink,
        Some(target_stage),
    )?
    .expect("stage gradient was requested");

    let activation = cache.stage_activation(target_stage);
    let (channels, h, w) = (
        grad_stage.shape()[0],
        grad_stage.shape()[1],
        grad_stage.shape()[2],
    );
    let spatial = (h * w) as f64;

    let mut heat = vec![0.0f64; h * w];
    for k in 0..channels {
        let grad_plane = &grad_stage.data()[k * h * w..(k + 1) * h * w];
        let alpha: f64 = grad_plane.iter().sum::<f64>() / spatial;
        let act_plane = &activation.data()[k * h * w..(k + 1) * h * w];
        for (out, &a) in heat.iter_mut().zip(act_plane) {
            *out += alpha * a;
        }
    }
    for v in &mut heat {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let hi = heat.iter().cloned().fold(0.0f64, f64::max);
    let lo = heat.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi > lo && hi > 0.0 {
        for v in &mut heat {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        heat.fill(0.0);
    }

    Ok(GradCamResult {
        heatmap: Tensor::from_vec(&[h, w], heat)?,
        stage_h: h,
        stage_w: w,
        logit,
    })
}

/// Blend a heatmap over a display image: the map is bilinearly upsampled to
/// the image size and rendered on a blue-to-red ramp at 50% opacity.
pub fn overlay_heatmap(base: &Image, cam: &GradCamResult) -> Image {
    let mut heat_img = Image::zeros(cam.stage_h, cam.stage_w);
    for r in 0..cam.stage_h {
        for c in 0..cam.stage_w {
            let v = cam.heatmap.data()[r * cam.stage_w + c];
            heat_img.set_pixel(r, c, [v, 0.0, 1.0 - v]);
        }
    }
    let up = resize_bilinear(&heat_img, base.height(), base.width());
    let mut out = Image::zeros(base.height(), base.width());
    for r in 0..base.height() {
        for c in 0..base.width() {
            let b = base.pixel(r, c);
            let h = up.pixel(r, c);
            out.set_pixel(
                r,
                c,
                [
                    (0.5 * b[0] + 0.5 * h[0]).clamp(0.0, 1.0),
                    (0.5 * b[1] + 0.5 * h[1]).clamp(0.0, 1.0),
                    (0.5 * b[2] + 0.5 * h[2]).clamp(0.0, 1.0),
                ],
            );
        }
    }
    out
}
