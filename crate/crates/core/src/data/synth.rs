//! Seeded synthetic data: a multi-subject IMU activity set and a procedural
//! image corpus, both bit-deterministic under a fixed seed.

use super::{ImageCorpus, Window};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Amplitude envelope applied over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Constant,
    /// On/off bursts: `period_s` seconds per cycle, on for `duty` of it.
    Burst { period_s: f64, duty: f64 },
    /// Linear ramp from `from` to `to` across the window.
    Ramp { from: f64, to: f64 },
}

impl Envelope {
    fn value(&self, t: f64, window_seconds: f64) -> f64 {
        match *self {
            Envelope::Constant => 1.0,
            Envelope::Burst { period_s, duty } => {
                let phase = (t / period_s).fract();
                if phase < duty {
                    1.0
                } else {
                    0.15
                }
            }
            Envelope::Ramp { from, to } => from + (to - from) * (t / window_seconds),
        }
    }
}

/// One activity class: per-axis carrier frequencies, an envelope, and a
/// noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClassSpec {
    pub carrier_hz: [f64; 3],
    pub envelope: Envelope,
    pub noise_amp: f64,
}

/// Generator description for a whole dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: Vec<SynthClassSpec>,
    pub rate_hz: f64,
    pub window_seconds: f64,
    /// Per-subject gain drawn uniformly from this range.
    pub subject_gain: (f64, f64),
}

impl SynthSpec {
    /// Built-in class table used by the CLI presets; up to four classes.
    ///
    /// Classes are deliberately adjacent in frequency so a probe has to rely
    /// on representation quality rather than trivially separated bands.
    pub fn preset(n_classes: usize, rate_hz: f64, window_seconds: f64) -> Result<Self> {
        if !(2..=4).contains(&n_classes) {
            return Err(Error::config(format!(
                "built-in synthetic presets cover 2..=4 classes, got {n_classes}"
            )));
        }
        let table = [
            SynthClassSpec {
                carrier_hz: [2.0, 2.5, 3.0],
                envelope: Envelope::Constant,
                noise_amp: 0.35,
            },
            SynthClassSpec {
                carrier_hz: [3.5, 4.5, 5.5],
                envelope: Envelope::Burst {
                    period_s: 0.8,
                    duty: 0.5,
                },
                noise_amp: 0.35,
            },
            SynthClassSpec {
                carrier_hz: [6.0, 7.0, 8.0],
                envelope: Envelope::Ramp { from: 0.4, to: 1.2 },
                noise_amp: 0.35,
            },
            SynthClassSpec {
                carrier_hz: [9.5, 10.5, 11.5],
                envelope: Envelope::Burst {
                    period_s: 0.5,
                    duty: 0.3,
                },
                noise_amp: 0.35,
            },
        ];
        Ok(SynthSpec {
            classes: table[..n_classes].to_vec(),
            rate_hz,
            window_seconds,
            subject_gain: (0.6, 1.4),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.classes.len()
            )));
        }
        if !(self.rate_hz > 0.0) || !(self.window_seconds > 0.0) {
            return Err(Error::config("rate and window length must be positive"));
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.noise_amp < 0.0 {
                return Err(Error::config(format!("class {i} has negative noise level")));
            }
        }
        Ok(())
    }
}

/// Pairs of classes whose definitions are identical.
///
/// With equal specs and zero noise a probe cannot exceed chance on the pair,
/// so callers should treat a nonempty result as a degenerate request.
pub fn degenerate_class_pairs(spec: &SynthSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..spec.classes.len() {
        for j in i + 1..spec.classes.len() {
            if spec.classes[i] == spec.classes[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Generate `n_windows_per_class` windows per (class, subject).
///
/// Subjects differ by per-axis gain and phase so subject-wise splits carry
/// real distribution shift; windows differ by a fresh phase offset and noise.
pub fn synth_imu_dataset(
    spec: &SynthSpec,
    n_subjects: usize,
    n_windows_per_class: usize,
    seed: u64,
) -> Result<Vec<Window>> {
    spec.validate()?;
    if n_subjects == 0 || n_windows_per_class == 0 {
        return Err(Error::config("need at least one subject and one window per class"));
    }
    let n = (spec.window_seconds * spec.rate_hz).round() as usize;
    if n < 2 {
        return Err(Error::config("window too short for the configured rate"));
    }

    let mut windows = Vec::with_capacity(spec.classes.len() * n_subjects * n_windows_per_class);
    for subject in 0..n_subjects {
        let mut subject_rng = Rng::substream(seed, &[0x51b, subject as u64]);
        let gain: [f64; 3] = std::array::from_fn(|_| {
            subject_rng.range(spec.subject_gain.0, spec.subject_gain.1)
        });
        let phase: [f64; 3] =
            std::array::from_fn(|_| subject_rng.range(0.0, std::f64::consts::TAU));

        for (class_id, class) in spec.classes.iter().enumerate() {
            for w_idx in 0..n_windows_per_class {
                let mut rng = Rng::substream(
                    seed,
                    &[0x11d0, subject as u64, class_id as u64, w_idx as u64],
                );
                let window_phase = rng.range(0.0, std::f64::consts::TAU);
                let mut samples = Vec::with_capacity(n);
                for s in 0..n {
                    let t = s as f64 / spec.rate_hz;
                    let env = class.envelope.value(t, spec.window_seconds);
                    let mut v = [0.0f64; 3];
                    for (axis, value) in v.iter_mut().enumerate() {
                        let carrier = (std::f64::consts::TAU * class.carrier_hz[axis] * t
                            + phase[axis]
                            + window_phase)
                            .sin();
                        let noise = rng.range(-class.noise_amp, class.noise_amp);
                        *value = gain[axis] * env * carrier + noise;
                    }
                    samples.push(v);
                }
                windows.push(Window {
                    samples,
                    rate_hz: spec.rate_hz,
                    label: Some(class_id as u32),
                    subject_id: format!("subj{subject:02}"),
                    origin_index: w_idx * n,
                });
            }
        }
    }
    Ok(windows)
}

/// Procedural pre-training corpus: oriented sinusoidal gratings, random
/// axis-aligned color blocks, and Gaussian color blobs.
pub fn synth_image_corpus(n: usize, h: usize, w: usize, seed: u64) -> Result<ImageCorpus> {
    if n == 0 {
        return Err(Error::config("corpus size must be at least 1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::config(format!("invalid corpus image size {h}x{w}")));
    }
    let pixels: Vec<Vec<u8>> = crate::parallel::parallel_map(n, crate::parallel::default_threads(), |i| {
        let mut rng = Rng::substream(seed, &[0xc0_21u64, i as u64]);
        let img = match rng.index(3) {
            0 => grating(h, w, &mut rng),
            1 => color_blocks(h, w, &mut rng),
            _ => gaussian_blobs(h, w, &mut rng),
        };
        img.to_bytes()
    });
    Ok(ImageCorpus::from_quantized(h, w, pixels))
}

fn grating(h: usize, w: usize, rng: &mut Rng) -> Image {
    let mut img = Image::zeros(h, w);
    let theta = rng.range(0.0, std::f64::consts::PI);
    let (dir_r, dir_c) = (theta.sin(), theta.cos());
    let cycles = rng.range(1.5, 12.0);
    let freq = std::f64::consts::TAU * cycles / w.max(h) as f64;
    let phase = rng.range(0.0, std::f64::consts::TAU);
    // Per-channel amplitude/offset gives the grating a color cast.
    let amp: [f64; 3] = std::array::from_fn(|_| rng.range(0.15, 0.5));
    let offset: [f64; 3] = std::array::from_fn(|_| rng.range(0.3, 0.7));
    let chroma_phase: [f64; 3] = std::array::from_fn(|_| rng.range(-0.8, 0.8));
    for r in 0..h {
        for c in 0..w {
            let proj = dir_r * r as f64 + dir_c * c as f64;
            for ch in 0..3 {
                let v = offset[ch] + amp[ch] * (freq * proj + phase + chroma_phase[ch]).sin();
                img.set(r, c, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn color_blocks(h: usize, w: usize, rng: &mut Rng) -> Image {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.range(0.0, 1.0));
    let mut img = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            img.set_pixel(r, c, bg);
        }
    }
    let blocks = 2 + rng.index(6);
    for _ in 0..blocks {
        let r0 = rng.index(h);
        let c0 = rng.index(w);
        let bh = 1 + rng.index(h - r0);
        let bw = 1 + rng.index(w - c0);
        let color: [f64; 3] = std::array::from_fn(|_| rng.range(0.0, 1.0));
        for r in r0..r0 + bh {
            for c in c0..c0 + bw {
                img.set_pixel(r, c, color);
            }
        }
    }
    img
}

fn gaussian_blobs(h: usize, w: usize, rng: &mut Rng) -> Image {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.range(0.1, 0.5));
    let mut img = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            img.set_pixel(r, c, bg);
        }
    }
    let blobs = 1 + rng.index(4);
    for _ in 0..blobs {
        let cr = rng.range(0.0, h as f64);
        let cc = rng.range(0.0, w as f64);
        let sigma = rng.range(0.04, 0.25) * h.max(w) as f64;
        let color: [f64; 3] = std::array::from_fn(|_| rng.range(-0.6, 0.6));
        for r in 0..h {
            for c in 0..w {
                let d2 = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)) / (2.0 * sigma * sigma);
                let weight = (-d2).exp();
                let mut px = img.pixel(r, c);
                for ch in 0..3 {
                    px[ch] = (px[ch] + weight * color[ch]).clamp(0.0, 1.0);
                }
                img.set_pixel(r, c, px);
            }
        }
    }
    img
}
