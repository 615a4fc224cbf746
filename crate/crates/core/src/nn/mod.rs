//! Minimal dense-tensor neural substrate: a tiny convolutional encoder with
//! hand-written reverse-mode differentiation, a linear classification head,
//! softmax cross-entropy, Adam, and the warmup/cosine learning-rate schedule.

mod adam;
mod encoder;
mod schedule;
pub mod serialize;
mod tensor;

pub use adam::{adam_step, adam_step_with, AdamState, BETA1, BETA2, EPSILON};
pub use encoder::{
    cross_entropy, encoder_backward, encoder_backward_single, encoder_forward,
    encoder_forward_cached, encoder_forward_single, linear_head_backward, linear_head_forward,
    ArchDescriptor, ConvLayer, EncoderCache, EncoderParams, LinearLayer, SampleCache, StageSpec,
};
pub use schedule::LrSchedule;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
        let mut rng = Rng::seeded(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.range(-scale, scale)).collect()).unwrap()
    }

    /// Relative error with a floor on the denominator; gradients below the
    /// finite-difference resolution are compared absolutely.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Scalar loss used by encoder-level checks: a fixed random projection
    /// of the output features.
    fn probe_loss(params: &EncoderParams, image: &Tensor, coeffs: &[f64]) -> f64 {
        let (features, _) = encoder_forward_single(params, image).unwrap();
        features.iter().zip(coeffs).map(|(f, c)| f * c).sum()
    }

    #[test]
    fn output_rows_are_unit_norm() {
        let arch = ArchDescriptor::tiny(64);
        let params = EncoderParams::init(&arch, 3).unwrap();
        let batch = random_tensor(&[4, 3, 32, 32], 5, 1.0);
        let features = encoder_forward(&params, &batch, 2).unwrap();
        for i in 0..4 {
            let row = &features.data()[i * 64..(i + 1) * 64];
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "row {i} norm {norm}");
        }
    }

    #[test]
    fn zero_input_with_zero_biases_is_defined() {
        let arch = ArchDescriptor::micro(8);
        let mut params = EncoderParams::init(&arch, 3).unwrap();
        params.proj.bias.data_mut().fill(0.0);
        let batch = Tensor::zeros(&[1, 3, 16, 16]);
        let features = encoder_forward(&params, &batch, 1).unwrap();
        assert!(features.data().iter().all(|v| v.is_finite()));
        // Pre-normalization features are all zero; the epsilon guard maps
        // them to the zero vector rather than NaN.
        assert!(features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_across_thread_counts() {
        let arch = ArchDescriptor::micro(8);
        let params = EncoderParams::init(&arch, 11).unwrap();
        let batch = random_tensor(&[6, 3, 16, 16], 13, 1.0);
        let a = encoder_forward(&params, &batch, 1).unwrap();
        let b = encoder_forward(&params, &batch, 4).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        // Exhaustive central-difference check over every parameter of a
        // reduced architecture on a 3x8x8 input.
        let arch = ArchDescriptor {
            input_channels: 3,
            stages: vec![
                StageSpec { out_channels: 4, kernel: 3, stride: 2, pad: 1 },
                StageSpec { out_channels: 5, kernel: 3, stride: 2, pad: 1 },
            ],
            feature_dim: 6,
            l2_normalize: true,
        };
        let params = EncoderParams::init(&arch, 17).unwrap();
        let image = random_tensor(&[3, 8, 8], 19, 1.0);
        let mut rng = Rng::seeded(23);
        let coeffs: Vec<f64> = (0..arch.feature_dim).map(|_| rng.range(-1.0, 1.0)).collect();

        let (_, cache) = encoder_forward_single(&params, &image).unwrap();
        let mut grads = params.zeros_like();
        encoder_backward_single(&params, &cache, &coeffs, &mut grads, None).unwrap();

        let step = 1e-5;
        let groups = params.group_sizes();
        let mut worst = 0.0f64;
        for group in 0..groups.len() {
            for idx in 0..groups[group] {
                let mut plus = params.clone();
                plus.param_slices_mut()[group][idx] += step;
                let mut minus = params.clone();
                minus.param_slices_mut()[group][idx] -= step;
                let fd =
                    (probe_loss(&plus, &image, &coeffs) - probe_loss(&minus, &image, &coeffs))
                        / (2.0 * step);
                let analytic = grads.param_slices()[group][idx];
                let err = rel_err(analytic, fd);
                worst = worst.max(err);
                assert!(
                    err < 1e-5,
                    "group {group} index {idx}: analytic {analytic}, fd {fd}, rel {err}"
                );
            }
        }
        assert!(worst > 0.0);
    }

    #[test]
    fn default_encoder_composite_gradient_spot_check() {
        // Sampled parameters of the full-size backbone; composite tolerance.
        let arch = ArchDescriptor::tiny(64);
        let params = EncoderParams::init(&arch, 29).unwrap();
        let image = random_tensor(&[3, 24, 32], 31, 1.0);
        let mut rng = Rng::seeded(37);
        let coeffs: Vec<f64> = (0..64).map(|_| rng.range(-1.0, 1.0)).collect();

        let (_, cache) = encoder_forward_single(&params, &image).unwrap();
        let mut grads = params.zeros_like();
        encoder_backward_single(&params, &cache, &coeffs, &mut grads, None).unwrap();

        let step = 1e-5;
        let groups = params.group_sizes();
        for _ in 0..60 {
            let group = rng.index(groups.len());
            let idx = rng.index(groups[group]);
            let mut plus = params.clone();
            plus.param_slices_mut()[group][idx] += step;
            let mut minus = params.clone();
            minus.param_slices_mut()[group][idx] -= step;
            let fd = (probe_loss(&plus, &image, &coeffs) - probe_loss(&minus, &image, &coeffs))
                / (2.0 * step);
            let analytic = grads.param_slices()[group][idx];
            assert!(
                rel_err(analytic, fd) < 1e-3,
                "group {group} index {idx}: analytic {analytic}, fd {fd}"
            );
        }
    }

    #[test]
    fn linear_head_gradient_matches_finite_differences() {
        let (b, d, c) = (3usize, 5usize, 4usize);
        let features = random_tensor(&[b, d], 41, 1.0);
        let mut head = LinearLayer::zeros(c, d);
        let mut rng = Rng::seeded(43);
        for v in head.weight.data_mut() {
            *v = rng.range(-0.5, 0.5);
        }
        for v in head.bias.data_mut() {
            *v = rng.range(-0.5, 0.5);
        }
        let labels: Vec<u32> = (0..b).map(|i| (i % c) as u32).collect();

        let logits = linear_head_forward(&head, &features).unwrap();
        let (_, grad_logits) = cross_entropy(&logits, &labels).unwrap();
        let (grad_head, grad_features) =
            linear_head_backward(&head, &features, &grad_logits, true).unwrap();

        let loss_of = |head: &LinearLayer, features: &Tensor| -> f64 {
            let logits = linear_head_forward(head, features).unwrap();
            cross_entropy(&logits, &labels).unwrap().0
        };

        let step = 1e-6;
        for idx in 0..c * d {
            let mut plus = head.clone();
            plus.weight.data_mut()[idx] += step;
            let mut minus = head.clone();
            minus.weight.data_mut()[idx] -= step;
            let fd = (loss_of(&plus, &features) - loss_of(&minus, &features)) / (2.0 * step);
            let err = rel_err(grad_head.weight.data()[idx], fd);
            assert!(err < 1e-6, "weight {idx}: rel {err}");
        }
        for idx in 0..b * d {
            let mut plus = features.clone();
            plus.data_mut()[idx] += step;
            let mut minus = features.clone();
            minus.data_mut()[idx] -= step;
            let fd = (loss_of(&head, &plus) - loss_of(&head, &minus)) / (2.0 * step);
            let err = rel_err(grad_features.as_ref().unwrap().data()[idx], fd);
            assert!(err < 1e-6, "feature {idx}: rel {err}");
        }
    }

    #[test]
    fn identity_like_head_passes_features_through() {
        let d = 4;
        let mut head = LinearLayer::zeros(d, d);
        for i in 0..d {
            head.weight.data_mut()[i * d + i] = 1.0;
        }
        let features = random_tensor(&[2, d], 47, 1.0);
        let logits = linear_head_forward(&head, &features).unwrap();
        assert_eq!(logits.data(), features.data());

        let zero_head = LinearLayer::zeros(3, d);
        let logits = linear_head_forward(&zero_head, &features).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let logits = Tensor::zeros(&[2, 6]);
        let (loss, _) = cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let mut logits = Tensor::zeros(&[1, 4]);
            logits.data_mut()[2] = margin;
            let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = random_tensor(&[3, 5], 53, 2.0);
        let labels = [4u32, 0, 2];
        let (_, grad) = cross_entropy(&logits, &labels).unwrap();
        // Finite differences on the mean loss.
        let step = 1e-6;
        for idx in 0..15 {
            let mut plus = logits.clone();
            plus.data_mut()[idx] += step;
            let mut minus = logits.clone();
            minus.data_mut()[idx] -= step;
            let fd = (cross_entropy(&plus, &labels).unwrap().0
                - cross_entropy(&minus, &labels).unwrap().0)
                / (2.0 * step);
            assert!(
                (grad.data()[idx] - fd).abs() < 1e-8,
                "logit {idx}: {} vs {fd}",
                grad.data()[idx]
            );
        }
    }

    #[test]
    fn cross_entropy_invariant_to_logit_shift() {
        let logits = random_tensor(&[2, 7], 59, 3.0);
        let labels = [1u32, 6];
        let (base, _) = cross_entropy(&logits, &labels).unwrap();
        let mut shifted = logits.clone();
        for v in shifted.data_mut() {
            *v += 123.456;
        }
        let (moved, _) = cross_entropy(&shifted, &labels).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(cross_entropy(&logits, &[3]).is_err());
        assert!(cross_entropy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn descriptor_text_roundtrip() {
        for arch in [ArchDescriptor::tiny(64), ArchDescriptor::micro(8)] {
            let text = arch.to_text();
            let back = ArchDescriptor::parse(&text).unwrap();
            assert_eq!(arch, back);
        }
        assert!(ArchDescriptor::parse("not a descriptor").is_err());
    }

    #[test]
    fn encoder_serialization_reproduces_outputs_bit_exactly() {
        let arch = ArchDescriptor::micro(8);
        let params = EncoderParams::init(&arch, 61).unwrap();
        let bytes = serialize::encode_encoder(&params);
        let restored = serialize::decode_encoder(&bytes).unwrap();
        assert_eq!(params, restored);

        let batch = random_tensor(&[2, 3, 16, 16], 67, 1.0);
        let a = encoder_forward(&params, &batch, 1).unwrap();
        let b = encoder_forward(&restored, &batch, 1).unwrap();
        assert_eq!(a.data(), b.data());

        // Re-serialization is byte-identical.
        assert_eq!(bytes, serialize::encode_encoder(&restored));
    }

    #[test]
    fn shape_mismatch_names_the_problem() {
        let arch = ArchDescriptor::micro(8);
        let params = EncoderParams::init(&arch, 71).unwrap();
        let bad = Tensor::zeros(&[1, 4, 16, 16]);
        let err = encoder_forward(&params, &bad, 1).unwrap_err();
        assert!(err.to_string().contains("[3, h, w]"), "{err}");
    }

    #[test]
    fn batch_backward_equals_summed_single_backward() {
        let arch = ArchDescriptor::micro(8);
        let params = EncoderParams::init(&arch, 73).unwrap();
        let batch = random_tensor(&[3, 3, 12, 12], 79, 1.0);
        let (features, cache) = encoder_forward_cached(&params, &batch, 2).unwrap();
        let grad_features = random_tensor(features.shape(), 83, 1.0);

        let batched = encoder_backward(&params, &cache, &grad_features, 3).unwrap();

        let mut summed = params.zeros_like();
        let d = arch.feature_dim;
        for i in 0..3 {
            let image = Tensor::from_vec(
                &[3, 12, 12],
                batch.data()[i * 3 * 144..(i + 1) * 3 * 144].to_vec(),
            )
            .unwrap();
            let (_, single_cache) = encoder_forward_single(&params, &image).unwrap();
            let mut grads = params.zeros_like();
            encoder_backward_single(
                &params,
                &single_cache,
                &grad_features.data()[i * d..(i + 1) * d],
                &mut grads,
                None,
            )
            .unwrap();
            summed.accumulate(&grads);
        }
        for (a, b) in batched.param_slices().iter().zip(summed.param_slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }
    }
}
