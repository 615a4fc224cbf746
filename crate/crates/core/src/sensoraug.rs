//! Synthetic sensory augmentations applied to raw triaxial windows.
//!
//! These build the robustness-test variants (time-shifted, masked, noised,
//! rotated) and serve as the physical counterparts of the image-space
//! augmentations. All four preserve window length, rate, label, and subject.

use crate::data::Window;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// 3x3 rotation matrix, row-major.
pub type Rot3 = [[f64; 3]; 3];

pub const IDENTITY_ROT: Rot3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// One sensory augmentation with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SensoryAugSpec {
    TimeShift { k: i64 },
    Mask { start: usize, len: usize },
    Noise { amplitude: f64 },
    Rotate { matrix: Rot3 },
}

impl SensoryAugSpec {
    /// Apply to a window; noise draws from `seed`.
    pub fn apply(&self, window: &Window, seed: u64) -> Result<Window> {
        match self {
            SensoryAugSpec::TimeShift { k } => Ok(time_shift(window, *k)),
            SensoryAugSpec::Mask { start, len } => mask(window, *start, *len),
            SensoryAugSpec::Noise { amplitude } => add_noise(window, *amplitude, seed),
            SensoryAugSpec::Rotate { matrix } => rotate(window, matrix),
        }
    }

    /// Parse from config text, e.g. `aug = rotate; axis = z; degrees = 90`.
    ///
    /// Recognized forms:
    /// `aug = time_shift; k = 25`
    /// `aug = mask; start = 10; len = 25`
    /// `aug = noise; amplitude = 0.1`
    /// `aug = rotate; axis = x|y|z; degrees = 90`
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key = value, got '{part}'")))?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let kind = fields
            .get("aug")
            .ok_or_else(|| Error::config("augmentation spec missing 'aug' key"))?
            .as_str();
        let get = |key: &str| -> Result<&String> {
            fields
                .get(key)
                .ok_or_else(|| Error::config(format!("augmentation '{kind}' missing '{key}'")))
        };
        match kind {
            "time_shift" => {
                let k = get("k")?
                    .parse()
                    .map_err(|_| Error::config("time_shift 'k' must be an integer"))?;
                Ok(SensoryAugSpec::TimeShift { k })
            }
            "mask" => {
                let start = get("start")?
                    .parse()
                    .map_err(|_| Error::config("mask 'start' must be a non-negative integer"))?;
                let len = get("len")?
                    .parse()
                    .map_err(|_| Error::config("mask 'len' must be a non-negative integer"))?;
                Ok(SensoryAugSpec::Mask { start, len })
            }
            "noise" => {
                let amplitude: f64 = get("amplitude")?
                    .parse()
                    .map_err(|_| Error::config("noise 'amplitude' must be a number"))?;
                if amplitude < 0.0 {
                    return Err(Error::config("noise amplitude must be non-negative"));
                }
                Ok(SensoryAugSpec::Noise { amplitude })
            }
            "rotate" => {
                let axis = get("axis")?.as_str();
                let degrees: f64 = get("degrees")?
                    .parse()
                    .map_err(|_| Error::config("rotate 'degrees' must be a number"))?;
                Ok(SensoryAugSpec::Rotate {
                    matrix: axis_rotation(axis, degrees)?,
                })
            }
            other => Err(Error::config(format!("unknown augmentation kind '{other}'"))),
        }
    }
}

/// Rotation about a coordinate axis.
///
/// Convention matches the window-space mapping used throughout: 90 degrees
/// about z sends (x, y, z) to (y, -x, z).
pub fn axis_rotation(axis: &str, degrees: f64) -> Result<Rot3> {
    let (s, c) = degrees.to_radians().sin_cos();
    match axis {
        "x" => Ok([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]]),
        "y" => Ok([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]),
        "z" => Ok([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]),
        other => Err(Error::config(format!("unknown rotation axis '{other}'"))),
    }
}

/// Permutation matrix sending axis i of the output to axis `perm[i]` of the
/// input, e.g. perm = [1, 2, 0] gives (x, y, z) -> (y, z, x).
pub fn axis_permutation(perm: [usize; 3]) -> Result<Rot3> {
    let mut seen = [false; 3];
    for &p in &perm {
        if p > 2 || seen[p] {
            return Err(Error::config(format!("invalid axis permutation {perm:?}")));
        }
        seen[p] = true;
    }
    let mut m = [[0.0; 3]; 3];
    for (i, &p) in perm.iter().enumerate() {
        m[i][p] = 1.0;
    }
    Ok(m)
}

fn orthonormality_error(r: &Rot3) -> f64 {
    let mut max_err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            max_err = max_err.max((dot - expected).abs());
        }
    }
    max_err
}

fn det3(r: &Rot3) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Validate that `r` is a proper rotation: orthonormal within 1e-9 and
/// determinant +1.
pub fn validate_rotation(r: &Rot3) -> Result<()> {
    let err = orthonormality_error(r);
    if err > 1e-9 {
        return Err(Error::config(format!(
            "matrix is not orthonormal (max deviation {err:.3e})"
        )));
    }
    let det = det3(r);
    if (det - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!(
            "matrix determinant {det} is not +1 (improper rotation)"
        )));
    }
    Ok(())
}

/// Cyclic shift by `k` samples inside the window; content moves toward
/// later indices for positive `k`.
pub fn time_shift(window: &Window, k: i64) -> Window {
    let n = window.len() as i64;
    let shift = k.rem_euclid(n) as usize;
    let mut out = window.clone();
    for (i, sample) in out.samples.iter_mut().enumerate() {
        let src = (i + window.len() - shift) % window.len();
        *sample = window.samples[src];
    }
    out
}

/// Zero the samples in [start, start + len); everything else is untouched.
pub fn mask(window: &Window, start: usize, len: usize) -> Result<Window> {
    let n = window.len();
    if start > n || start + len > n {
        return Err(Error::config(format!(
            "mask span [{start}, {}) exceeds window of {n} samples",
            start + len
        )));
    }
    let mut out = window.clone();
    for sample in &mut out.samples[start..start + len] {
        *sample = [0.0, 0.0, 0.0];
    }
    Ok(out)
}

/// Add independent uniform noise in (-a, a) to every sample and axis.
pub fn add_noise(window: &Window, amplitude: f64, seed: u64) -> Result<Window> {
    if amplitude < 0.0 {
        return Err(Error::config(format!(
            "noise amplitude must be non-negative, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(window.clone());
    }
    let mut rng = Rng::substream(seed, &[0x2015e]);
    let mut out = window.clone();
    for sample in &mut out.samples {
        for v in sample.iter_mut() {
            *v += rng.range(-amplitude, amplitude);
        }
    }
    Ok(out)
}

/// Apply a proper rotation to every sample.
pub fn rotate(window: &Window, r: &Rot3) -> Result<Window> {
    validate_rotation(r)?;
    let mut out = window.clone();
    for sample in &mut out.samples {
        let v = *sample;
        for (i, value) in sample.iter_mut().enumerate() {
            *value = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_window(n: usize) -> Window {
        let mut rng = Rng::seeded(21);
        Window {
            samples: (0..n)
                .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
                .collect(),
            rate_hz: 50.0,
            label: Some(2),
            subject_id: "s1".into(),
            origin_index: 7,
        }
    }

    fn metadata_preserved(a: &Window, b: &Window) -> bool {
        a.len() == b.len()
            && a.rate_hz == b.rate_hz
            && a.label == b.label
            && a.subject_id == b.subject_id
    }

    #[test]
    fn time_shift_identities() {
        let w = test_window(40);
        assert_eq!(time_shift(&w, 0), w);
        assert_eq!(time_shift(&w, 40), w);
        assert_eq!(time_shift(&w, -40), w);
    }

    #[test]
    fn time_shift_group_property() {
        let w = test_window(40);
        let k = 13;
        let back = time_shift(&time_shift(&w, k), 40 - k);
        assert_eq!(back, w);
    }

    #[test]
    fn time_shift_moves_content_forward() {
        let mut w = test_window(8);
        for (i, s) in w.samples.iter_mut().enumerate() {
            *s = [i as f64, 0.0, 0.0];
        }
        let shifted = time_shift(&w, 3);
        assert_eq!(shifted.samples[3][0], 0.0);
        assert_eq!(shifted.samples[0][0], 5.0);
    }

    #[test]
    fn time_shift_preserves_sample_multiset() {
        let w = test_window(33);
        let shifted = time_shift(&w, 19);
        let key = |s: &[f64; 3]| (s[0].to_bits(), s[1].to_bits(), s[2].to_bits());
        let mut a: Vec<_> = w.samples.iter().map(key).collect();
        let mut b: Vec<_> = shifted.samples.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert!(metadata_preserved(&w, &shifted));
    }

    #[test]
    fn mask_identities_and_extremes() {
        let w = test_window(20);
        assert_eq!(mask(&w, 5, 0).unwrap(), w);
        let all = mask(&w, 0, 20).unwrap();
        assert!(all.samples.iter().all(|s| *s == [0.0, 0.0, 0.0]));
        assert!(mask(&w, 10, 11).is_err());
        assert!(mask(&w, 21, 0).is_err());
    }

    #[test]
    fn mask_zeroes_span_and_leaves_complement() {
        let w = test_window(30);
        let masked = mask(&w, 8, 10).unwrap();
        for i in 0..30 {
            if (8..18).contains(&i) {
                assert_eq!(masked.samples[i], [0.0, 0.0, 0.0]);
            } else {
                assert_eq!(masked.samples[i], w.samples[i]);
            }
        }
        // Idempotent.
        assert_eq!(mask(&masked, 8, 10).unwrap(), masked);
    }

    #[test]
    fn noise_zero_amplitude_is_identity() {
        let w = test_window(25);
        assert_eq!(add_noise(&w, 0.0, 3).unwrap(), w);
    }

    #[test]
    fn noise_is_deterministic_given_seed() {
        let w = test_window(25);
        let a = add_noise(&w, 0.5, 3).unwrap();
        let b = add_noise(&w, 0.5, 3).unwrap();
        assert_eq!(a, b);
        let c = add_noise(&w, 0.5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_mean_is_centered() {
        // Monte-Carlo oracle: over 1e6 draws the sample mean of the added
        // noise must sit within (-0.01 a, 0.01 a).
        let n = 1_000_000 / 3;
        let w = Window {
            samples: vec![[0.0; 3]; n],
            rate_hz: 50.0,
            label: None,
            subject_id: "s".into(),
            origin_index: 0,
        };
        let a = 0.4;
        let noised = add_noise(&w, a, 12).unwrap();
        let sum: f64 = noised.samples.iter().flatten().sum();
        let mean = sum / (3 * n) as f64;
        assert!(mean.abs() < 0.01 * a, "mean {mean}");
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let w = test_window(10);
        assert_eq!(rotate(&w, &IDENTITY_ROT).unwrap(), w);

        let r = axis_rotation("z", 90.0).unwrap();
        let rotated = rotate(&w, &r).unwrap();
        for (orig, rot) in w.samples.iter().zip(&rotated.samples) {
            assert!((rot[0] - orig[1]).abs() < 1e-12);
            assert!((rot[1] + orig[0]).abs() < 1e-12);
            assert!((rot[2] - orig[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let w = test_window(50);
        let r = axis_rotation("y", 37.0).unwrap();
        let rotated = rotate(&w, &r).unwrap();
        for (orig, rot) in w.samples.iter().zip(&rotated.samples) {
            let n0: f64 = orig.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = rot.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-9);
        }
        assert!(metadata_preserved(&w, &rotated));
    }

    #[test]
    fn improper_matrices_rejected() {
        let w = test_window(5);
        let scaled = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(rotate(&w, &scaled).is_err());
        // Orthonormal but det = -1 (a reflection).
        let reflect = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(rotate(&w, &reflect).is_err());
    }

    #[test]
    fn axis_permutation_matrices() {
        let m = axis_permutation([1, 2, 0]).unwrap();
        validate_rotation(&m).unwrap();
        let w = test_window(4);
        let rotated = rotate(&w, &m).unwrap();
        for (orig, rot) in w.samples.iter().zip(&rotated.samples) {
            assert_eq!(rot[0], orig[1]);
            assert_eq!(rot[1], orig[2]);
            assert_eq!(rot[2], orig[0]);
        }
        // Swapping two axes is a reflection; not expressible here.
        assert!(axis_permutation([1, 0, 2]).and_then(|m| validate_rotation(&m)).is_err());
        assert!(axis_permutation([0, 0, 1]).is_err());
    }

    #[test]
    fn parse_config_text() {
        let spec = SensoryAugSpec::parse("aug = rotate; axis = z; degrees = 90").unwrap();
        let SensoryAugSpec::Rotate { matrix } = spec else {
            panic!("expected rotation");
        };
        validate_rotation(&matrix).unwrap();

        assert_eq!(
            SensoryAugSpec::parse("aug = time_shift; k = -3").unwrap(),
            SensoryAugSpec::TimeShift { k: -3 }
        );
        assert_eq!(
            SensoryAugSpec::parse("aug = mask; start = 4; len = 10").unwrap(),
            SensoryAugSpec::Mask { start: 4, len: 10 }
        );
        assert_eq!(
            SensoryAugSpec::parse("aug = noise; amplitude = 0.25").unwrap(),
            SensoryAugSpec::Noise { amplitude: 0.25 }
        );
        assert!(SensoryAugSpec::parse("aug = warp").is_err());
        assert!(SensoryAugSpec::parse("axis = z").is_err());
    }
}
