//! Triaxial window to RGB spectrogram conversion.
//!
//! Each axis is transformed to a log-magnitude spectrogram and mapped to a
//! color channel (R from x, G from y, B from z). A joint min-max scale over
//! all three channels puts the image in [0, 1] so that relative motion
//! intensity between axes shows up as relative brightness. Rows are flipped
//! so DC sits on the bottom row; columns advance with time.

mod stft;

pub use stft::{frame_count, hann_window, stft_magnitude, Spectrogram};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::image::{ChannelStats, Image};

const LOG_EPSILON: f64 = 1e-10;

/// Parameters of the window-to-image conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    /// FFT length; power of two. The tuning grid uses {32, 64, 128, 256}.
    pub nfft: usize,
    /// Overlapping samples between frames; < nfft.
    pub noverlap: usize,
    /// Log-magnitude floor in dB.
    pub log_floor_db: f64,
    /// Output height after resize.
    pub out_h: usize,
    /// Output width after resize.
    pub out_w: usize,
    /// Per-channel normalization statistics, if known.
    pub normalize_stats: Option<ChannelStats>,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            nfft: 32,
            noverlap: 24,
            log_floor_db: -80.0,
            out_h: 96,
            out_w: 128,
            normalize_stats: None,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.nfft.is_power_of_two() || self.nfft < 2 {
            return Err(Error::config(format!(
                "nfft must be a power of two >= 2, got {}",
                self.nfft
            )));
        }
        if self.noverlap >= self.nfft {
            return Err(Error::config(format!(
                "noverlap {} must be smaller than nfft {}",
                self.noverlap, self.nfft
            )));
        }
        if self.out_h == 0 || self.out_w == 0 {
            return Err(Error::config("output size must be positive"));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.nfft - self.noverlap
    }
}

/// Per-axis log spectrograms mapped to RGB at native bins-by-frames size.
///
/// Row 0 is the highest frequency; the bottom row is DC.
pub fn to_rgb_spectrogram(window: &Window, cfg: &SpectrogramConfig) -> Result<Image> {
    cfg.validate()?;
    if window.len() < cfg.nfft {
        return Err(Error::data(format!(
            "nfft exceeds window length: window has {} samples, nfft is {}",
            window.len(),
            cfg.nfft
        )));
    }
    let mut channels = Vec::with_capacity(3);
    for axis in 0..3 {
        let signal: Vec<f64> = window.samples.iter().map(|s| s[axis]).collect();
        let mut spec = stft_magnitude(&signal, cfg.nfft, cfg.noverlap)?;
        for v in &mut spec.data {
            *v = (20.0 * (*v + LOG_EPSILON).log10()).max(cfg.log_floor_db);
        }
        channels.push(spec);
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for spec in &channels {
        for &v in &spec.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;

    let (bins, frames) = (channels[0].bins, channels[0].frames);
    let mut img = Image::zeros(bins, frames);
    for (ch, spec) in channels.iter().enumerate() {
        for bin in 0..bins {
            let row = bins - 1 - bin; // flip: DC at the bottom
            for frame in 0..frames {
                let value = if span > 0.0 {
                    (spec.get(bin, frame) - lo) / span
                } else {
                    0.0
                };
                img.set(row, frame, ch, value);
            }
        }
    }
    Ok(img)
}

/// Separable bilinear resize with corner-aligned sampling.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = Image::zeros(out_h, out_w);
    let scale = |out_len: usize, in_len: usize, i: usize| -> f64 {
        if out_len <= 1 || in_len <= 1 {
            0.0
        } else {
            i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
        }
    };
    for r in 0..out_h {
        let sr = scale(out_h, h, r);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let fr = sr - r0 as f64;
        for c in 0..out_w {
            let sc = scale(out_w, w, c);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(w - 1);
            let fc = sc - c0 as f64;
            for ch in 0..3 {
                let top = img.get(r0, c0, ch) * (1.0 - fc) + img.get(r0, c1, ch) * fc;
                let bottom = img.get(r1, c0, ch) * (1.0 - fc) + img.get(r1, c1, ch) * fc;
                out.set(r, c, ch, top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    out
}

/// Per-channel standardization: (v - mean) / std.
pub fn normalize(img: &Image, stats: &ChannelStats) -> Result<Image> {
    for (ch, &std) in stats.std.iter().enumerate() {
        if !(std > 0.0) {
            return Err(Error::numeric(format!(
                "normalization std for channel {ch} must be positive, got {std}"
            )));
        }
    }
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            for ch in 0..3 {
                out.set(r, c, ch, (img.get(r, c, ch) - stats.mean[ch]) / stats.std[ch]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &Image, stats: &ChannelStats) -> Image {
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            for ch in 0..3 {
                out.set(r, c, ch, img.get(r, c, ch) * stats.std[ch] + stats.mean[ch]);
            }
        }
    }
    out
}

/// Full conversion used by training and evaluation: spectrogram, resize to
/// the configured output size, then normalization when stats are present.
pub fn convert_window(window: &Window, cfg: &SpectrogramConfig) -> Result<Image> {
    let native = to_rgb_spectrogram(window, cfg)?;
    let resized = resize_bilinear(&native, cfg.out_h, cfg.out_w);
    match &cfg.normalize_stats {
        Some(stats) => normalize(&resized, stats),
        None => Ok(resized),
    }
}

/// One grid-search evaluation.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub nfft: usize,
    pub noverlap: usize,
    pub score: f64,
}

/// Tuning grid: nfft in {32, 64, 128, 256} crossed with noverlap in
/// {nfft-2, nfft-4, nfft-8, nfft-16}, keeping combinations that fit the
/// window length.
pub fn spectro_grid(window_len: usize) -> Vec<(usize, usize)> {
    let mut grid = Vec::new();
    for nfft in [32usize, 64, 128, 256] {
        if nfft > window_len {
            continue;
        }
        for delta in [2usize, 4, 8, 16] {
            grid.push((nfft, nfft - delta));
        }
    }
    grid
}

/// Evaluate the feasible grid with `probe_eval` (validation macro-F1) and
/// return the best configuration plus the full table.
///
/// Ties prefer smaller nfft, then larger noverlap — the iteration order —
/// by keeping the first strictly-best score.
pub fn grid_search_spectro<F>(
    base: &SpectrogramConfig,
    window_len: usize,
    mut probe_eval: F,
) -> Result<(SpectrogramConfig, Vec<GridEntry>)>
where
    F: FnMut(&SpectrogramConfig) -> Result<f64>,
{
    let grid = spectro_grid(window_len);
    if grid.is_empty() {
        return Err(Error::data(format!(
            "no feasible spectrogram grid for windows of {window_len} samples"
        )));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(SpectrogramConfig, f64)> = None;
    for (nfft, noverlap) in grid {
        let mut cfg = base.clone();
        cfg.nfft = nfft;
        cfg.noverlap = noverlap;
        let score = probe_eval(&cfg)?;
        table.push(GridEntry { nfft, noverlap, score });
        let better = match &best {
            None => true,
            Some((_, best_score)) => score > *best_score,
        };
        if better {
            best = Some((cfg, score));
        }
    }
    let (cfg, _) = best.expect("grid was nonempty");
    Ok((cfg, table))
}
