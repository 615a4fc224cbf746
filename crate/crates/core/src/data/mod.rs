//! Ingestion, resampling, windowing, subject splits, and synthetic
//! dataset generation for triaxial IMU recordings and image corpora.

mod ingest;
mod ppm;
mod splits;
mod synth;

pub use ingest::{ingest_csv, CsvSchema, IngestReport};
pub use ppm::{read_ppm, write_ppm};
pub use splits::{kfold_subjects, split_subjects, SubjectSplit};
pub use synth::{
    degenerate_class_pairs, synth_image_corpus, synth_imu_dataset, Envelope, SynthClassSpec,
    SynthSpec,
};

use crate::error::{Error, Result};
use crate::image::{ChannelStats, Image};

/// A timestamped triaxial recording from one subject at a nominal rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialSeries {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub rate_hz: f64,
    pub subject_id: String,
    /// Per-sample class ids; `None` for unlabeled recordings.
    pub labels: Option<Vec<u32>>,
}

impl TriaxialSeries {
    /// Build a series, validating lengths, monotonicity, and that the
    /// nominal rate agrees with the median sample spacing within 1%.
    pub fn new(
        t: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        rate_hz: f64,
        subject_id: impl Into<String>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = t.len();
        if x.len() != n || y.len() != n || z.len() != n {
            return Err(Error::data(format!(
                "axis lengths differ: t={} x={} y={} z={}",
                n,
                x.len(),
                y.len(),
                z.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::data(format!(
                    "label length {} does not match {} samples",
                    labels.len(),
                    n
                )));
            }
        }
        if n < 2 {
            return Err(Error::data("series needs at least 2 samples"));
        }
        for i in 1..n {
            if !(t[i] > t[i - 1]) {
                return Err(Error::data(format!(
                    "timestamps not strictly increasing at sample {i}: {} then {}",
                    t[i - 1],
                    t[i]
                )));
            }
        }
        if !(rate_hz > 0.0) {
            return Err(Error::data(format!("rate must be positive, got {rate_hz}")));
        }
        let median_rate = 1.0 / median_dt(&t);
        if (median_rate - rate_hz).abs() > 0.01 * rate_hz {
            return Err(Error::data(format!(
                "rate {rate_hz} Hz inconsistent with median sample spacing ({median_rate:.3} Hz)"
            )));
        }
        Ok(TriaxialSeries {
            t,
            x,
            y,
            z,
            rate_hz,
            subject_id: subject_id.into(),
            labels,
        })
    }

    /// Infer the rate from the median sample spacing.
    pub fn from_samples(
        t: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        subject_id: impl Into<String>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::data("series needs at least 2 samples"));
        }
        let rate = 1.0 / median_dt(&t);
        TriaxialSeries::new(t, x, y, z, rate, subject_id, labels)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn median_dt(t: &[f64]) -> f64 {
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dts.len();
    if m % 2 == 1 {
        dts[m / 2]
    } else {
        0.5 * (dts[m / 2 - 1] + dts[m / 2])
    }
}

/// A fixed-length slice of a series: the unit of conversion and augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<[f64; 3]>,
    pub rate_hz: f64,
    pub label: Option<u32>,
    pub subject_id: String,
    /// Start sample in the source series.
    pub origin_index: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Pooled standard deviation over all axes and samples.
    pub fn pooled_std(&self) -> f64 {
        let n = (self.samples.len() * 3) as f64;
        let mean: f64 = self.samples.iter().flatten().sum::<f64>() / n;
        let var: f64 = self
            .samples
            .iter()
            .flatten()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

/// Resample onto a uniform grid at `target_hz` over [t0, t_end] by linear
/// interpolation. Exact grid hits reproduce source samples bit-for-bit.
pub fn resample(series: &TriaxialSeries, target_hz: f64) -> Result<TriaxialSeries> {
    if !(target_hz > 0.0) {
        return Err(Error::config(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    if series.len() < 2 {
        return Err(Error::data("cannot resample a series with fewer than 2 samples"));
    }
    let t0 = series.t[0];
    let t_end = *series.t.last().unwrap();
    // Tolerate last-ulp overshoot when the span is an exact multiple of the step.
    let count = (((t_end - t0) * target_hz) * (1.0 + 1e-12)).floor() as usize + 1;

    let mut t = Vec::with_capacity(count);
    let mut x = Vec::with_capacity(count);
    let mut y = Vec::with_capacity(count);
    let mut z = Vec::with_capacity(count);
    let mut labels = series.labels.as_ref().map(|_| Vec::with_capacity(count));

    let mut seg = 0usize; // index of the segment [t[seg], t[seg+1]]
    for i in 0..count {
        let ti = (t0 + i as f64 / target_hz).min(t_end);
        while seg + 2 < series.len() && series.t[seg + 1] < ti {
            seg += 1;
        }
        let (tl, tr) = (series.t[seg], series.t[seg + 1]);
        let alpha = (ti - tl) / (tr - tl);
        let lerp = |l: f64, r: f64| -> f64 {
            if alpha == 0.0 {
                l
            } else if alpha == 1.0 {
                r
            } else {
                l + alpha * (r - l)
            }
        };
        t.push(ti);
        x.push(lerp(series.x[seg], series.x[seg + 1]));
        y.push(lerp(series.y[seg], series.y[seg + 1]));
        z.push(lerp(series.z[seg], series.z[seg + 1]));
        if let (Some(out), Some(src)) = (labels.as_mut(), series.labels.as_ref()) {
            // Nearest sample in time; ties go to the earlier sample.
            out.push(if alpha <= 0.5 { src[seg] } else { src[seg + 1] });
        }
    }

    Ok(TriaxialSeries {
        t,
        x,
        y,
        z,
        rate_hz: target_hz,
        subject_id: series.subject_id.clone(),
        labels,
    })
}

/// Slice a series into fixed-length windows with fractional overlap.
///
/// Window length is `round(window_seconds * rate_hz)` samples and the hop is
/// `round(N * (1 - overlap_fraction))`, floored at 1. A series shorter than
/// one window yields an empty list. Per-window labels are the majority label
/// over the span, ties resolved toward the lower class id.
pub fn make_windows(
    series: &TriaxialSeries,
    window_seconds: f64,
    overlap_fraction: f64,
) -> Result<Vec<Window>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::config(format!(
            "overlap fraction must be in [0, 1), got {overlap_fraction}"
        )));
    }
    let n = (window_seconds * series.rate_hz).round() as usize;
    if n < 2 {
        return Err(Error::config(format!(
            "window of {window_seconds} s at {} Hz has {n} samples; need at least 2",
            series.rate_hz
        )));
    }
    let hop = ((n as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;

    let mut windows = Vec::new();
    let mut origin = 0usize;
    while origin + n <= series.len() {
        let samples: Vec<[f64; 3]> = (origin..origin + n)
            .map(|i| [series.x[i], series.y[i], series.z[i]])
            .collect();
        let label = series
            .labels
            .as_ref()
            .map(|labels| majority_label(&labels[origin..origin + n]));
        windows.push(Window {
            samples,
            rate_hz: series.rate_hz,
            label,
            subject_id: series.subject_id.clone(),
            origin_index: origin,
        });
        origin += hop;
    }
    Ok(windows)
}

fn majority_label(labels: &[u32]) -> u32 {
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    // BTreeMap iterates in ascending key order; keeping only strictly larger
    // counts makes the lower class id win ties.
    let mut best = (u32::MAX, 0usize);
    for (&label, &count) in &counts {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

/// A pool of same-sized images with their per-channel statistics.
///
/// Pixels are stored 8-bit quantized (exactly what the pixmap files hold), so
/// an in-memory corpus and one that went through disk train identically.
#[derive(Debug, Clone)]
pub struct ImageCorpus {
    h: usize,
    w: usize,
    pixels: Vec<Vec<u8>>,
    stats: ChannelStats,
}

impl ImageCorpus {
    pub fn from_images(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::data("image corpus is empty"));
        }
        let (h, w) = (images[0].height(), images[0].width());
        for (i, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(Error::data(format!(
                    "corpus image {i} is {}x{}, expected {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            if !img.is_finite() {
                return Err(Error::numeric(format!("corpus image {i} has non-finite pixels")));
            }
        }
        let pixels: Vec<Vec<u8>> = images.iter().map(Image::to_bytes).collect();
        Ok(Self::from_quantized(h, w, pixels))
    }

    pub(crate) fn from_quantized(h: usize, w: usize, pixels: Vec<Vec<u8>>) -> Self {
        let stats = corpus_stats(h, w, &pixels);
        ImageCorpus { h, w, pixels, stats }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_bytes(self.h, self.w, &self.pixels[i]).expect("stored pixels are consistent")
    }
}

/// Two-pass per-channel mean/std over dequantized pixel values.
fn corpus_stats(h: usize, w: usize, pixels: &[Vec<u8>]) -> ChannelStats {
    let per_channel = (h * w * pixels.len()) as f64;
    let mut mean = [0.0f64; 3];
    for img in pixels {
        for px in img.chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64 / 255.0;
            }
        }
    }
    for m in &mut mean {
        *m /= per_channel;
    }
    let mut var = [0.0f64; 3];
    for img in pixels {
        for px in img.chunks_exact(3) {
            for c in 0..3 {
                let d = px[c] as f64 / 255.0 - mean[c];
                var[c] += d * d;
            }
        }
    }
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        std[c] = (var[c] / per_channel).sqrt();
    }
    ChannelStats { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_series(n: usize, rate: f64) -> TriaxialSeries {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let x = t.clone();
        let y: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        let z: Vec<f64> = t.iter().map(|v| -v).collect();
        TriaxialSeries::new(t, x, y, z, rate, "s0", None).unwrap()
    }

    #[test]
    fn series_invariants_enforced() {
        let t = vec![0.0, 0.02, 0.01];
        let v = vec![0.0; 3];
        assert!(TriaxialSeries::new(t, v.clone(), v.clone(), v.clone(), 50.0, "s", None).is_err());

        let t = vec![0.0, 0.02, 0.04];
        let bad_rate =
            TriaxialSeries::new(t.clone(), v.clone(), v.clone(), v.clone(), 80.0, "s", None);
        assert!(bad_rate.is_err());
        assert!(TriaxialSeries::new(t, v.clone(), v.clone(), v, 50.0, "s", None).is_ok());
    }

    #[test]
    fn resample_same_rate_is_bit_exact() {
        let series = ramp_series(100, 50.0);
        let out = resample(&series, 50.0).unwrap();
        assert_eq!(out.len(), series.len());
        assert_eq!(out.x, series.x);
        assert_eq!(out.y, series.y);
        assert_eq!(out.z, series.z);
    }

    #[test]
    fn resample_ramp_is_exact_on_grid() {
        // x(t) = t sampled at 100 Hz, resampled to 50 Hz: linear
        // interpolation is exact on ramps, and even-index grid points hit
        // source samples exactly.
        let series = ramp_series(201, 100.0);
        let out = resample(&series, 50.0).unwrap();
        assert_eq!(out.len(), 101);
        for (i, (&t, &x)) in out.t.iter().zip(out.x.iter()).enumerate() {
            assert_eq!(x, t, "sample {i}");
        }
    }

    #[test]
    fn resample_sine_matches_analytic() {
        // 5 Hz sine sampled at 500 Hz, resampled to 50 Hz; oracle is the
        // analytic sine at the grid times.
        let rate = 500.0;
        let t: Vec<f64> = (0..2000).map(|i| i as f64 / rate).collect();
        let x: Vec<f64> = t
            .iter()
            .map(|&ti| (std::f64::consts::TAU * 5.0 * ti).sin())
            .collect();
        let zeros = vec![0.0; t.len()];
        let series =
            TriaxialSeries::new(t, x, zeros.clone(), zeros, rate, "s0", None).unwrap();
        let out = resample(&series, 50.0).unwrap();
        let max_err = out
            .t
            .iter()
            .zip(out.x.iter())
            .map(|(&ti, &xi)| (xi - (std::f64::consts::TAU * 5.0 * ti).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max abs error {max_err}");
    }

    #[test]
    fn resample_rejects_single_sample() {
        let s = TriaxialSeries {
            t: vec![0.0],
            x: vec![1.0],
            y: vec![1.0],
            z: vec![1.0],
            rate_hz: 50.0,
            subject_id: "s".into(),
            labels: None,
        };
        assert!(resample(&s, 50.0).is_err());
    }

    #[test]
    fn resample_preserves_constants_and_is_idempotent() {
        let n = 157;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / 73.0).collect();
        let c = vec![3.25; n];
        let series =
            TriaxialSeries::new(t, c.clone(), c.clone(), c.clone(), 73.0, "s", None).unwrap();
        let once = resample(&series, 50.0).unwrap();
        assert!(once.x.iter().all(|&v| v == 3.25));
        let twice = resample(&once, 50.0).unwrap();
        assert_eq!(once.x, twice.x);
        assert_eq!(once.t, twice.t);
    }

    #[test]
    fn window_count_matches_arithmetic_oracle() {
        // 100 samples, N = 50, overlap 0.5: floor((100 - 50) / 25) + 1 = 3.
        let series = ramp_series(100, 50.0);
        let windows = make_windows(&series, 1.0, 0.5).unwrap();
        assert_eq!(windows.len(), 3);
        let origins: Vec<usize> = windows.iter().map(|w| w.origin_index).collect();
        assert_eq!(origins, vec![0, 25, 50]);
        assert!(windows.iter().all(|w| w.len() == 50));
    }

    #[test]
    fn two_second_window_at_50hz_has_100_samples() {
        let series = ramp_series(250, 50.0);
        let windows = make_windows(&series, 2.0, 0.5).unwrap();
        assert!(windows.iter().all(|w| w.len() == 100));
    }

    #[test]
    fn short_series_yields_no_windows() {
        let series = ramp_series(49, 50.0);
        let windows = make_windows(&series, 1.0, 0.5).unwrap();
        assert!(windows.is_empty());
    }

    #[test]
    fn majority_label_breaks_ties_low() {
        assert_eq!(majority_label(&[2, 1, 1, 2]), 1);
        assert_eq!(majority_label(&[0, 1, 1]), 1);
        assert_eq!(majority_label(&[5]), 5);
    }

    #[test]
    fn windows_carry_majority_labels() {
        let rate = 10.0;
        let t: Vec<f64> = (0..20).map(|i| i as f64 / rate).collect();
        let v = vec![0.0; 20];
        let mut labels = vec![0u32; 20];
        for l in labels.iter_mut().skip(9) {
            *l = 1;
        }
        let series =
            TriaxialSeries::new(t, v.clone(), v.clone(), v, rate, "s", Some(labels)).unwrap();
        let windows = make_windows(&series, 1.0, 0.0).unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].label, Some(0));
        assert_eq!(windows[1].label, Some(1));
    }

    #[test]
    fn corpus_requires_uniform_dims() {
        let images = vec![Image::zeros(4, 4), Image::zeros(4, 5)];
        assert!(ImageCorpus::from_images(&images).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_origins_step_by_hop_and_stay_inside(
                len in 2usize..400,
                n in 2usize..80,
                overlap in 0.0f64..0.95,
            ) {
                let rate = 10.0;
                let series = ramp_series(len, rate);
                let window_seconds = n as f64 / rate;
                let windows = make_windows(&series, window_seconds, overlap).unwrap();
                let hop = ((n as f64) * (1.0 - overlap)).round().max(1.0) as usize;
                for (i, w) in windows.iter().enumerate() {
                    prop_assert_eq!(w.origin_index, i * hop);
                    prop_assert!(w.origin_index + n <= len);
                    prop_assert_eq!(w.len(), n);
                }
                // Maximal: one more hop would overrun the series.
                let count = if len >= n { (len - n) / hop + 1 } else { 0 };
                prop_assert_eq!(windows.len(), count);
            }
        }
    }
}
