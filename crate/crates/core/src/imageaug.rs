//! Sensor-aware image augmentations and the positive-view pair sampler.
//!
//! Four transforms whose image-space invariances mirror physical sensor
//! invariances: TranslateX (cyclic column shift = window start jitter),
//! PermuteX (chunk reordering = local-structure-preserving temporal
//! permutation), Hue (channel rotation = sensor axis rotation), and Jitter
//! (per-pixel uniform noise = measurement noise).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Which augmentations a policy may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugKind {
    TranslateX,
    PermuteX,
    Hue,
    Jitter,
}

impl AugKind {
    pub const ALL: [AugKind; 4] = [
        AugKind::TranslateX,
        AugKind::PermuteX,
        AugKind::Hue,
        AugKind::Jitter,
    ];

    pub fn letter(&self) -> char {
        match self {
            AugKind::TranslateX => 'T',
            AugKind::PermuteX => 'P',
            AugKind::Hue => 'H',
            AugKind::Jitter => 'J',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'T' => Ok(AugKind::TranslateX),
            'P' => Ok(AugKind::PermuteX),
            'H' => Ok(AugKind::Hue),
            'J' => Ok(AugKind::Jitter),
            other => Err(Error::config(format!("unknown augmentation letter '{other}'"))),
        }
    }
}

/// View-sampling policy: enabled subset, gate probabilities, and parameter
/// ranges. Application order is fixed: TranslateX, PermuteX, Hue, Jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct AugPolicy {
    pub enabled: Vec<AugKind>,
    /// Independent apply-probability per enabled augmentation.
    pub probability: f64,
    /// Chunk counts PermuteX may choose from.
    pub permute_chunks: Vec<usize>,
    /// Hue angle drawn uniformly from [0, hue_max_deg).
    pub hue_max_deg: f64,
    /// Jitter amplitude drawn uniformly from [0, jitter_max].
    pub jitter_max: f64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            enabled: AugKind::ALL.to_vec(),
            probability: 0.5,
            permute_chunks: vec![2, 3, 4],
            hue_max_deg: 360.0,
            jitter_max: 0.1,
        }
    }
}

impl AugPolicy {
    /// A policy restricted to the given subset letters, e.g. "TPJ".
    pub fn subset(letters: &str) -> Result<Self> {
        let mut enabled = Vec::new();
        for c in letters.chars() {
            if c == ',' || c.is_whitespace() {
                continue;
            }
            let kind = AugKind::from_letter(c)?;
            if !enabled.contains(&kind) {
                enabled.push(kind);
            }
        }
        Ok(AugPolicy {
            enabled,
            ..AugPolicy::default()
        })
    }

    pub fn letters(&self) -> String {
        AugKind::ALL
            .iter()
            .filter(|k| self.enabled.contains(k))
            .map(AugKind::letter)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config(format!(
                "apply probability must be in [0, 1], got {}",
                self.probability
            )));
        }
        if !(0.0..=1.0).contains(&self.jitter_max) {
            return Err(Error::config(format!(
                "jitter amplitude bound must be in [0, 1], got {}",
                self.jitter_max
            )));
        }
        if !(0.0..=360.0).contains(&self.hue_max_deg) {
            return Err(Error::config(format!(
                "hue bound must be in [0, 360], got {}",
                self.hue_max_deg
            )));
        }
        if self.enabled.contains(&AugKind::PermuteX) {
            if self.permute_chunks.is_empty() {
                return Err(Error::config("permute chunk list is empty"));
            }
            if self.permute_chunks.iter().any(|&n| n < 2) {
                return Err(Error::config("permute chunk counts must be at least 2"));
            }
        }
        Ok(())
    }
}

/// Cyclic column shift: pixel (r, c) moves to (r, (c + s) mod W).
pub fn translate_x(img: &Image, s: i64) -> Image {
    let w = img.width() as i64;
    let shift = s.rem_euclid(w) as usize;
    let mut out = Image::zeros(img.height(), img.width());
    for r in 0..img.height() {
        for c in 0..img.width() {
            let dst = (c + shift) % img.width();
            out.set_pixel(r, dst, img.pixel(r, c));
        }
    }
    out
}

/// Column index ranges of `n_chunks` near-equal chunks over width `w`,
/// remainder columns going to the leftmost chunks.
pub fn chunk_spans(w: usize, n_chunks: usize) -> Vec<(usize, usize)> {
    let base = w / n_chunks;
    let extra = w % n_chunks;
    let mut spans = Vec::with_capacity(n_chunks);
    let mut start = 0;
    for i in 0..n_chunks {
        let len = base + usize::from(i < extra);
        spans.push((start, start + len));
        start += len;
    }
    spans
}

/// Split columns into chunks and emit them in `perm` order.
pub fn permute_x(img: &Image, n_chunks: usize, perm: &[usize]) -> Result<Image> {
    let w = img.width();
    if n_chunks < 2 || n_chunks > w {
        return Err(Error::config(format!(
            "chunk count {n_chunks} out of range for width {w}"
        )));
    }
    if perm.len() != n_chunks {
        return Err(Error::config(format!(
            "permutation of length {} does not cover {n_chunks} chunks",
            perm.len()
        )));
    }
    let mut seen = vec![false; n_chunks];
    for &p in perm {
        if p >= n_chunks || seen[p] {
            return Err(Error::config(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }

    let spans = chunk_spans(w, n_chunks);
    let mut out = Image::zeros(img.height(), w);
    let mut dst = 0usize;
    for &src_chunk in perm {
        let (start, end) = spans[src_chunk];
        for src_col in start..end {
            for r in 0..img.height() {
                out.set_pixel(r, dst, img.pixel(r, src_col));
            }
            dst += 1;
        }
    }
    Ok(out)
}

/// Rotate hue by `theta` degrees via per-pixel RGB -> HSV -> RGB.
///
/// The value component (max channel) is preserved exactly, and whole turns
/// are bit-exact identities.
pub fn hue_rotate(img: &Image, theta: f64) -> Image {
    if theta.rem_euclid(360.0) == 0.0 {
        return img.clone();
    }
    let mut out = Image::zeros(img.height(), img.width());
    for r in 0..img.height() {
        for c in 0..img.width() {
            let (h, s, v) = rgb_to_hsv(img.pixel(r, c));
            let rotated = (h + theta).rem_euclid(360.0);
            out.set_pixel(r, c, hsv_to_rgb(rotated, s, v));
        }
    }
    out
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Add uniform noise in (-a, a) per pixel and channel, clamped to [0, 1].
pub fn jitter(img: &Image, a: f64, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::config(format!("jitter amplitude must be in [0, 1], got {a}")));
    }
    if a == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = Rng::substream(seed, &[0x71e7]);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + rng.range(-a, a)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Apply one random draw of the augmentation chain.
pub fn apply_policy(img: &Image, policy: &AugPolicy, seed: u64) -> Result<Image> {
    policy.validate()?;
    let mut rng = Rng::substream(seed, &[0xc4a1]);
    let mut out = img.clone();
    for kind in AugKind::ALL {
        if !policy.enabled.contains(&kind) {
            continue;
        }
        let gate = rng.bool_with(policy.probability);
        // Parameter draws happen regardless of the gate so that toggling one
        // augmentation's gate leaves the other draws aligned.
        match kind {
            AugKind::TranslateX => {
                let s = rng.index(img.width().max(1)) as i64;
                if gate {
                    out = translate_x(&out, s);
                }
            }
            AugKind::PermuteX => {
                let n = policy.permute_chunks[rng.index(policy.permute_chunks.len())];
                let perm = rng.permutation(n);
                if gate {
                    out = permute_x(&out, n, &perm)?;
                }
            }
            AugKind::Hue => {
                let theta = rng.range(0.0, policy.hue_max_deg.max(f64::MIN_POSITIVE));
                if gate {
                    out = hue_rotate(&out, theta);
                }
            }
            AugKind::Jitter => {
                let a = rng.range(0.0, policy.jitter_max);
                let sub = rng.next_u64();
                if gate {
                    out = jitter(&out, a, sub)?;
                }
            }
        }
    }
    Ok(out)
}

/// Two independent augmented views of one source image.
///
/// Per-view seeds derive from (seed, view index), so identical inputs give a
/// bit-identical pair and different sources can be processed in parallel.
pub fn sample_view_pair(img: &Image, policy: &AugPolicy, seed: u64) -> Result<(Image, Image)> {
    let view1 = apply_policy(img, policy, crate::rng::derive_seed(seed, &[0]))?;
    let view2 = apply_policy(img, policy, crate::rng::derive_seed(seed, &[1]))?;
    Ok((view1, view2))
}
