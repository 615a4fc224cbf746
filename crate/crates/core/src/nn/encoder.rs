//! Convolutional encoder with hand-written reverse-mode differentiation.
//!
//! Architecture: a stack of stride-2 3x3 conv + ReLU stages, global average
//! pooling, a linear projection to the feature dimension, and (by default)
//! L2 normalization of each output row. No batch norm and no padding tricks,
//! so forward passes are bit-deterministic.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::Rng;

const NORM_EPSILON: f64 = 1e-12;

/// One conv stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Shape-level description of an encoder; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDescriptor {
    pub input_channels: usize,
    pub stages: Vec<StageSpec>,
    pub feature_dim: usize,
    pub l2_normalize: bool,
}

impl ArchDescriptor {
    /// Default desk-scale backbone: 3 -> 8 -> 16 -> 32 -> 64 channels,
    /// 3x3 kernels, stride 2, pad 1, feature dimension `feature_dim`.
    pub fn tiny(feature_dim: usize) -> Self {
        let stage = |out_channels| StageSpec {
            out_channels,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        ArchDescriptor {
            input_channels: 3,
            stages: vec![stage(8), stage(16), stage(32), stage(64)],
            feature_dim,
            l2_normalize: true,
        }
    }

    /// Smaller, shallower variant for fast tests and gradient checks.
    pub fn micro(feature_dim: usize) -> Self {
        let stage = |out_channels| StageSpec {
            out_channels,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        ArchDescriptor {
            input_channels: 3,
            stages: vec![stage(4), stage(6)],
            feature_dim,
            l2_normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.feature_dim == 0 || self.stages.is_empty() {
            return Err(Error::config("architecture needs channels, stages, and a feature dim"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(Error::config(format!("stage {i} has a zero dimension")));
            }
            if s.pad >= s.kernel {
                return Err(Error::config(format!(
                    "stage {i}: pad {} must be smaller than kernel {}",
                    s.pad, s.kernel
                )));
            }
        }
        Ok(())
    }

    pub fn last_channels(&self) -> usize {
        self.stages.last().map(|s| s.out_channels).unwrap_or(0)
    }

    /// Spatial dims after each stage for an input of h x w; errors if any
    /// stage would collapse below 1x1.
    pub fn stage_dims(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut dims = Vec::with_capacity(self.stages.len());
        let mut cur = (h, w);
        for (i, s) in self.stages.iter().enumerate() {
            let out = |n: usize| -> Option<usize> {
                (n + 2 * s.pad).checked_sub(s.kernel).map(|v| v / s.stride + 1)
            };
            match (out(cur.0), out(cur.1)) {
                (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
                    cur = (oh, ow);
                    dims.push(cur);
                }
                _ => {
                    return Err(Error::config(format!(
                        "stage {i} reduces {}x{} below 1x1",
                        cur.0, cur.1
                    )))
                }
            }
        }
        Ok(dims)
    }

    /// Canonical text form stored in checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::from("arch v1\n");
        out.push_str(&format!("input_channels {}\n", self.input_channels));
        for s in &self.stages {
            out.push_str(&format!(
                "stage {} k{} s{} p{}\n",
                s.out_channels, s.kernel, s.stride, s.pad
            ));
        }
        out.push_str(&format!("feature_dim {}\n", self.feature_dim));
        out.push_str(&format!("l2_normalize {}\n", u8::from(self.l2_normalize)));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("arch v1") {
            return Err(Error::data("architecture descriptor missing 'arch v1' header"));
        }
        let mut input_channels = None;
        let mut stages = Vec::new();
        let mut feature_dim = None;
        let mut l2_normalize = true;
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("input_channels") => {
                    input_channels = Some(parse_usize(parts.next(), "input_channels")?);
                }
                Some("feature_dim") => {
                    feature_dim = Some(parse_usize(parts.next(), "feature_dim")?);
                }
                Some("l2_normalize") => {
                    l2_normalize = parse_usize(parts.next(), "l2_normalize")? != 0;
                }
                Some("stage") => {
                    let out_channels = parse_usize(parts.next(), "stage channels")?;
                    let mut kernel = 3;
                    let mut stride = 2;
                    let mut pad = 1;
                    for token in parts {
                        let (tag, value) = token.split_at(1);
                        let value: usize = value
                            .parse()
                            .map_err(|_| Error::data(format!("bad stage token '{token}'")))?;
                        match tag {
                            "k" => kernel = value,
                            "s" => stride = value,
                            "p" => pad = value,
                            _ => return Err(Error::data(format!("bad stage token '{token}'"))),
                        }
                    }
                    stages.push(StageSpec {
                        out_channels,
                        kernel,
                        stride,
                        pad,
                    });
                }
                Some(other) => {
                    return Err(Error::data(format!("unknown descriptor line '{other}'")))
                }
                None => {}
            }
        }
        let arch = ArchDescriptor {
            input_channels: input_channels
                .ok_or_else(|| Error::data("descriptor missing input_channels"))?,
            stages,
            feature_dim: feature_dim.ok_or_else(|| Error::data("descriptor missing feature_dim"))?,
            l2_normalize,
        };
        arch.validate()?;
        Ok(arch)
    }
}

fn parse_usize(token: Option<&str>, what: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::data(format!("bad {what} in architecture descriptor")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// [out_channels, in_channels, k, k]
    pub weight: Tensor,
    /// [out_channels]
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// [out, in]
    pub weight: Tensor,
    /// [out]
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

/// All trainable parameters of an encoder. The same struct doubles as the
/// gradient container since shapes match one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: ArchDescriptor,
    pub convs: Vec<ConvLayer>,
    pub proj: LinearLayer,
}

impl EncoderParams {
    /// He-style seeded initialization: Gaussian conv/projection weights
    /// scaled by fan-in, zero biases.
    pub fn init(arch: &ArchDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut convs = Vec::with_capacity(arch.stages.len());
        let mut in_channels = arch.input_channels;
        for (i, stage) in arch.stages.iter().enumerate() {
            let fan_in = in_channels * stage.kernel * stage.kernel;
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = Rng::substream(seed, &[0xe4c, i as u64]);
            let n = stage.out_channels * fan_in;
            let weight = Tensor::from_vec(
                &[stage.out_channels, in_channels, stage.kernel, stage.kernel],
                (0..n).map(|_| rng.gaussian() * std).collect(),
            )?;
            convs.push(ConvLayer {
                weight,
                bias: Tensor::zeros(&[stage.out_channels]),
            });
            in_channels = stage.out_channels;
        }
        let mut rng = Rng::substream(seed, &[0xbead]);
        let std = (1.0 / arch.last_channels() as f64).sqrt();
        let proj = LinearLayer {
            weight: Tensor::from_vec(
                &[arch.feature_dim, arch.last_channels()],
                (0..arch.feature_dim * arch.last_channels())
                    .map(|_| rng.gaussian() * std)
                    .collect(),
            )?,
            bias: Tensor::zeros(&[arch.feature_dim]),
        };
        Ok(EncoderParams {
            arch: arch.clone(),
            convs,
            proj,
        })
    }

    /// Same-shape container filled with zeros (for gradients).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for conv in &mut out.convs {
            conv.weight.data_mut().fill(0.0);
            conv.bias.data_mut().fill(0.0);
        }
        out.proj.weight.data_mut().fill(0.0);
        out.proj.bias.data_mut().fill(0.0);
        out
    }

    /// Flat views over all parameter groups, in descriptor order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut slices = Vec::with_capacity(self.convs.len() * 2 + 2);
        for conv in &self.convs {
            slices.push(conv.weight.data());
            slices.push(conv.bias.data());
        }
        slices.push(self.proj.weight.data());
        slices.push(self.proj.bias.data());
        slices
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut slices = Vec::with_capacity(self.convs.len() * 2 + 2);
        for conv in &mut self.convs {
            slices.push(conv.weight.data_mut());
            slices.push(conv.bias.data_mut());
        }
        slices.push(self.proj.weight.data_mut());
        slices.push(self.proj.bias.data_mut());
        slices
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Accumulate `other` into self elementwise (gradient reduction).
    pub fn accumulate(&mut self, other: &EncoderParams) {
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for slice in self.param_slices_mut() {
            for v in slice {
                *v *= factor;
            }
        }
    }

    /// FNV-1a digest over the raw parameter bytes; detects any mutation.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for slice in self.param_slices() {
            for v in slice {
                for byte in v.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Per-sample activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    /// Input to each conv stage; `stage_inputs[0]` is the image.
    stage_inputs: Vec<Tensor>,
    /// Pre-ReLU output of each stage.
    stage_preacts: Vec<Tensor>,
    /// Post-ReLU output of the last stage (input to pooling).
    pool_input: Tensor,
    /// Pooled features [last_channels].
    pooled: Vec<f64>,
    /// Projection output before normalization [feature_dim].
    projected: Vec<f64>,
    /// Spatial dims per stage.
    dims: Vec<(usize, usize)>,
}

impl SampleCache {
    /// Post-ReLU activation map of a stage (the Grad-CAM target).
    pub fn stage_activation(&self, stage: usize) -> &Tensor {
        if stage + 1 < self.stage_inputs.len() {
            &self.stage_inputs[stage + 1]
        } else {
            &self.pool_input
        }
    }

    pub fn stage_dims(&self) -> &[(usize, usize)] {
        &self.dims
    }
}

/// Batch cache: one entry per sample.
pub struct EncoderCache {
    samples: Vec<SampleCache>,
}

impl EncoderCache {
    pub fn sample(&self, i: usize) -> &SampleCache {
        &self.samples[i]
    }
}

fn conv_forward(
    input: &Tensor,
    in_dims: (usize, usize),
    layer: &ConvLayer,
    spec: &StageSpec,
    out_dims: (usize, usize),
) -> Tensor {
    let (h, w) = in_dims;
    let (oh_max, ow_max) = out_dims;
    let in_channels = layer.weight.shape()[1];
    let k = spec.kernel;
    let stride = spec.stride;
    let pad = spec.pad as i64;
    let mut out = Tensor::zeros(&[layer.weight.shape()[0], oh_max, ow_max]);

    let input_data = input.data();
    let weight = layer.weight.data();
    let out_data = out.data_mut();
    for co in 0..layer.weight.shape()[0] {
        let bias = layer.bias.data()[co];
        let out_base = co * oh_max * ow_max;
        out_data[out_base..out_base + oh_max * ow_max].fill(bias);
        for ci in 0..in_channels {
            let in_base = ci * h * w;
            let w_base = (co * in_channels + ci) * k * k;
            for oh in 0..oh_max {
                let out_row = &mut out_data[out_base + oh * ow_max..out_base + (oh + 1) * ow_max];
                for kr in 0..k {
                    let ih = oh as i64 * stride as i64 + kr as i64 - pad;
                    if ih < 0 || ih >= h as i64 {
                        continue;
                    }
                    let in_row = &input_data[in_base + ih as usize * w..in_base + (ih as usize + 1) * w];
                    for kc in 0..k {
                        let wgt = weight[w_base + kr * k + kc];
                        let off = kc as i64 - pad;
                        // Valid output column range for this kernel column.
                        if w as i64 - 1 - off < 0 {
                            continue;
                        }
                        let lo = if off >= 0 {
                            0usize
                        } else {
                            ((-off) as usize).div_ceil(stride)
                        };
                        let hi_excl = (((w as i64 - 1 - off) / stride as i64) + 1)
                            .clamp(0, ow_max as i64) as usize;
                        if lo >= hi_excl {
                            continue;
                        }
                        let start = (lo * stride) as i64 + off;
                        let src = &in_row[start as usize..];
                        for (o, s) in out_row[lo..hi_excl]
                            .iter_mut()
                            .zip(src.iter().step_by(stride))
                        {
                            *o += wgt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward through one conv stage. Returns grad wrt input when requested.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    in_dims: (usize, usize),
    layer: &ConvLayer,
    spec: &StageSpec,
    out_dims: (usize, usize),
    grad_out: &Tensor,
    grad_layer: &mut ConvLayer,
    want_grad_input: bool,
) -> Option<Tensor> {
    let (h, w) = in_dims;
    let (oh_max, ow_max) = out_dims;
    let out_channels = layer.weight.shape()[0];
    let in_channels = layer.weight.shape()[1];
    let k = spec.kernel;
    let stride = spec.stride;
    let pad = spec.pad as i64;

    let input_data = input.data();
    let weight = layer.weight.data();
    let g_out = grad_out.data();
    let g_weight = grad_layer.weight.data_mut();
    let g_bias = grad_layer.bias.data_mut();
    let mut grad_input = want_grad_input.then(|| Tensor::zeros(&[in_channels, h, w]));

    for co in 0..out_channels {
        let out_base = co * oh_max * ow_max;
        g_bias[co] += g_out[out_base..out_base + oh_max * ow_max].iter().sum::<f64>();
        for ci in 0..in_channels {
            let in_base = ci * h * w;
            let w_base = (co * in_channels + ci) * k * k;
            for oh in 0..oh_max {
                let g_row = &g_out[out_base + oh * ow_max..out_base + (oh + 1) * ow_max];
                for kr in 0..k {
                    let ih = oh as i64 * stride as i64 + kr as i64 - pad;
                    if ih < 0 || ih >= h as i64 {
                        continue;
                    }
                    let row_start = in_base + ih as usize * w;
                    for kc in 0..k {
                        let off = kc as i64 - pad;
                        if w as i64 - 1 - off < 0 {
                            continue;
                        }
                        let lo = if off >= 0 {
                            0usize
                        } else {
                            ((-off) as usize).div_ceil(stride)
                        };
                        let hi_excl = (((w as i64 - 1 - off) / stride as i64) + 1)
                            .clamp(0, ow_max as i64) as usize;
                        if lo >= hi_excl {
                            continue;
                        }
                        let start = ((lo * stride) as i64 + off) as usize;

                        let in_row = &input_data[row_start..row_start + w];
                        let mut acc = 0.0;
                        for (g, s) in g_row[lo..hi_excl]
                            .iter()
                            .zip(in_row[start..].iter().step_by(stride))
                        {
                            acc += g * s;
                        }
                        g_weight[w_base + kr * k + kc] += acc;

                        if let Some(grad_input) = grad_input.as_mut() {
                            let wgt = weight[w_base + kr * k + kc];
                            let gi_row = &mut grad_input.data_mut()[row_start..row_start + w];
                            for (gi, g) in gi_row[start..]
                                .iter_mut()
                                .step_by(stride)
                                .zip(&g_row[lo..hi_excl])
                            {
                                *gi += wgt * g;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_input
}

fn l2_normalize(vec: &[f64]) -> (Vec<f64>, f64) {
    let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPSILON);
    (vec.iter().map(|v| v / norm).collect(), norm)
}

/// Forward one sample (C x H x W) through the encoder, retaining activations.
pub fn encoder_forward_single(
    params: &EncoderParams,
    image: &Tensor,
) -> Result<(Vec<f64>, SampleCache)> {
    let arch = &params.arch;
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != arch.input_channels {
        return Err(Error::config(format!(
            "encoder input must be [{}, h, w], got {shape:?}",
            arch.input_channels
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let dims = arch.stage_dims(h, w)?;

    let mut stage_inputs = Vec::with_capacity(arch.stages.len());
    let mut stage_preacts = Vec::with_capacity(arch.stages.len());
    let mut current = image.clone();
    let mut cur_dims = (h, w);
    for (i, (spec, layer)) in arch.stages.iter().zip(&params.convs).enumerate() {
        let preact = conv_forward(&current, cur_dims, layer, spec, dims[i]);
        preact.check_finite(&format!("conv stage {i}"))?;
        let mut post = preact.clone();
        for v in post.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        stage_inputs.push(current);
        stage_preacts.push(preact);
        current = post;
        cur_dims = dims[i];
    }
    let pool_input = current;

    let (ph, pw) = cur_dims;
    let spatial = (ph * pw) as f64;
    let c_last = arch.last_channels();
    let mut pooled = vec![0.0f64; c_last];
    for (c, out) in pooled.iter_mut().enumerate() {
        *out = pool_input.data()[c * ph * pw..(c + 1) * ph * pw].iter().sum::<f64>() / spatial;
    }

    let d = arch.feature_dim;
    let mut projected = vec![0.0f64; d];
    for (o, out) in projected.iter_mut().enumerate() {
        let row = &params.proj.weight.data()[o * c_last..(o + 1) * c_last];
        *out = params.proj.bias.data()[o]
            + row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>();
        if !out.is_finite() {
            return Err(Error::numeric(format!("non-finite value in projection output {o}")));
        }
    }

    let features = if arch.l2_normalize {
        l2_normalize(&projected).0
    } else {
        projected.clone()
    };

    Ok((
        features,
        SampleCache {
            stage_inputs,
            stage_preacts,
            pool_input,
            pooled,
            projected,
            dims,
        },
    ))
}

/// Backward one sample. `grad_feature` is dL/d(features). When
/// `want_stage_grad` is set, also returns dL/d(post-ReLU activation) of that
/// stage.
pub fn encoder_backward_single(
    params: &EncoderParams,
    cache: &SampleCache,
    grad_feature: &[f64],
    grads: &mut EncoderParams,
    want_stage_grad: Option<usize>,
) -> Result<Option<Tensor>> {
    let arch = &params.arch;
    let d = arch.feature_dim;
    if grad_feature.len() != d {
        return Err(Error::config(format!(
            "feature gradient has {} entries, expected {d}",
            grad_feature.len()
        )));
    }

    // Through L2 normalization.
    let grad_projected: Vec<f64> = if arch.l2_normalize {
        let (y, norm) = l2_normalize(&cache.projected);
        if cache.projected.iter().map(|v| v * v).sum::<f64>().sqrt() < NORM_EPSILON {
            grad_feature.iter().map(|g| g / NORM_EPSILON).collect()
        } else {
            let g_dot_y: f64 = grad_feature.iter().zip(&y).map(|(g, yi)| g * yi).sum();
            grad_feature
                .iter()
                .zip(&y)
                .map(|(g, yi)| (g - yi * g_dot_y) / norm)
                .collect()
        }
    } else {
        grad_feature.to_vec()
    };

    // Through the projection.
    let c_last = arch.last_channels();
    let mut grad_pooled = vec![0.0f64; c_last];
    for o in 0..d {
        let g = grad_projected[o];
        grads.proj.bias.data_mut()[o] += g;
        let w_row = &params.proj.weight.data()[o * c_last..(o + 1) * c_last];
        let gw_row = &mut grads.proj.weight.data_mut()[o * c_last..(o + 1) * c_last];
        for c in 0..c_last {
            gw_row[c] += g * cache.pooled[c];
            grad_pooled[c] += g * w_row[c];
        }
    }

    // Through global average pooling.
    let (ph, pw) = *cache.dims.last().unwrap();
    let spatial = (ph * pw) as f64;
    let mut grad_stage_output = Tensor::zeros(&[c_last, ph, pw]);
    for c in 0..c_last {
        let g = grad_pooled[c] / spatial;
        grad_stage_output.data_mut()[c * ph * pw..(c + 1) * ph * pw].fill(g);
    }

    // Through the conv stack.
    let mut captured = None;
    for stage in (0..arch.stages.len()).rev() {
        if want_stage_grad == Some(stage) {
            captured = Some(grad_stage_output.clone());
        }
        // ReLU mask from the pre-activation.
        let mut grad_preact = grad_stage_output;
        for (g, &pre) in grad_preact
            .data_mut()
            .iter_mut()
            .zip(cache.stage_preacts[stage].data())
        {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        let in_dims = if stage == 0 {
            let shape = cache.stage_inputs[0].shape();
            (shape[1], shape[2])
        } else {
            cache.dims[stage - 1]
        };
        let grad_input = conv_backward(
            &cache.stage_inputs[stage],
            in_dims,
            &params.convs[stage],
            &arch.stages[stage],
            cache.dims[stage],
            &grad_preact,
            &mut grads.convs[stage],
            stage > 0,
        );
        grad_stage_output = match grad_input {
            Some(g) => g,
            None => break,
        };
    }
    Ok(captured)
}

/// Batch forward: input [B, C, H, W] to unit-norm features [B, D].
pub fn encoder_forward(params: &EncoderParams, batch: &Tensor, threads: usize) -> Result<Tensor> {
    let (features, _) = encoder_forward_cached(params, batch, threads)?;
    Ok(features)
}

/// Batch forward retaining per-sample caches for a later backward pass.
pub fn encoder_forward_cached(
    params: &EncoderParams,
    batch: &Tensor,
    threads: usize,
) -> Result<(Tensor, EncoderCache)> {
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::config(format!(
            "encoder batch must be [b, c, h, w], got {shape:?}"
        )));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let sample_len = c * h * w;
    let results = parallel::parallel_map(b, threads, |i| {
        let image = Tensor::from_vec(
            &[c, h, w],
            batch.data()[i * sample_len..(i + 1) * sample_len].to_vec(),
        )
        .expect("slice length matches");
        encoder_forward_single(params, &image)
    });

    let d = params.arch.feature_dim;
    let mut features = Tensor::zeros(&[b, d]);
    let mut samples = Vec::with_capacity(b);
    for (i, result) in results.into_iter().enumerate() {
        let (feat, cache) = result?;
        features.data_mut()[i * d..(i + 1) * d].copy_from_slice(&feat);
        samples.push(cache);
    }
    Ok((features, EncoderCache { samples }))
}

/// Batch backward: accumulates parameter gradients summed over samples.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_features: &Tensor,
    threads: usize,
) -> Result<EncoderParams> {
    let b = cache.samples.len();
    let d = params.arch.feature_dim;
    if grad_features.shape() != [b, d] {
        return Err(Error::config(format!(
            "feature gradient shape {:?} does not match [{b}, {d}]",
            grad_features.shape()
        )));
    }
    let per_sample = parallel::parallel_map(b, threads, |i| {
        let mut grads = params.zeros_like();
        let g = &grad_features.data()[i * d..(i + 1) * d];
        encoder_backward_single(params, &cache.samples[i], g, &mut grads, None).map(|_| grads)
    });
    let mut total = params.zeros_like();
    for result in per_sample {
        total.accumulate(&result?);
    }
    Ok(total)
}

/// Affine classification head: logits = features * W^T + b.
pub fn linear_head_forward(head: &LinearLayer, features: &Tensor) -> Result<Tensor> {
    let shape = features.shape();
    if shape.len() != 2 || shape[1] != head.weight.shape()[1] {
        return Err(Error::config(format!(
            "head expects [b, {}] features, got {shape:?}",
            head.weight.shape()[1]
        )));
    }
    let (b, d) = (shape[0], shape[1]);
    let c = head.weight.shape()[0];
    let mut logits = Tensor::zeros(&[b, c]);
    for i in 0..b {
        let f = &features.data()[i * d..(i + 1) * d];
        let row = &mut logits.data_mut()[i * c..(i + 1) * c];
        for (o, out) in row.iter_mut().enumerate() {
            let w_row = &head.weight.data()[o * d..(o + 1) * d];
            *out = head.bias.data()[o] + w_row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
        }
    }
    logits.check_finite("linear head")?;
    Ok(logits)
}

/// Backward for the head; optionally also the gradient wrt features.
pub fn linear_head_backward(
    head: &LinearLayer,
    features: &Tensor,
    grad_logits: &Tensor,
    want_grad_features: bool,
) -> Result<(LinearLayer, Option<Tensor>)> {
    let (b, d) = (features.shape()[0], features.shape()[1]);
    let c = head.weight.shape()[0];
    if grad_logits.shape() != [b, c] {
        return Err(Error::config(format!(
            "logit gradient shape {:?} does not match [{b}, {c}]",
            grad_logits.shape()
        )));
    }
    let mut grad_head = LinearLayer::zeros(c, d);
    let mut grad_features = want_grad_features.then(|| Tensor::zeros(&[b, d]));
    for i in 0..b {
        let f = &features.data()[i * d..(i + 1) * d];
        let g_row = &grad_logits.data()[i * c..(i + 1) * c];
        for (o, &g) in g_row.iter().enumerate() {
            grad_head.bias.data_mut()[o] += g;
            let gw_row = &mut grad_head.weight.data_mut()[o * d..(o + 1) * d];
            for (gw, &x) in gw_row.iter_mut().zip(f) {
                *gw += g * x;
            }
        }
        if let Some(gf) = grad_features.as_mut() {
            let gf_row = &mut gf.data_mut()[i * d..(i + 1) * d];
            for (o, &g) in g_row.iter().enumerate() {
                let w_row = &head.weight.data()[o * d..(o + 1) * d];
                for (gf_elem, &w) in gf_row.iter_mut().zip(w_row) {
                    *gf_elem += g * w;
                }
            }
        }
    }
    Ok((grad_head, grad_features))
}

/// Mean softmax cross-entropy over a batch, with the gradient wrt logits.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::config(format!(
            "logits {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let (b, c) = (shape[0], shape[1]);
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(&[b, c]);
    for i in 0..b {
        let label = labels[i] as usize;
        if label >= c {
            return Err(Error::data(format!(
                "label {label} out of range for {c} classes (sample {i})"
            )));
        }
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0f64;
        for &l in row {
            denom += (l - max).exp();
        }
        loss += denom.ln() - (row[label] - max);
        let g_row = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (j, &l) in row.iter().enumerate() {
            let softmax = (l - max).exp() / denom;
            let onehot = if j == label { 1.0 } else { 0.0 };
            g_row[j] = (softmax - onehot) / b as f64;
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite cross-entropy loss"));
    }
    Ok((loss, grad))
}
