//! Short-time Fourier transform magnitudes via an iterative radix-2 FFT.

use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// In-place iterative radix-2 FFT over interleaved (re, im) pairs.
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let angle = -std::f64::consts::TAU / len as f64;
        let (wn_im, wn_re) = angle.sin_cos();
        let mut start = 0;
        while start < n {
            let mut w_re = 1.0;
            let mut w_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * w_re - im[b] * w_im;
                let t_im = re[b] * w_im + im[b] * w_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = w_re * wn_re - w_im * wn_im;
                w_im = w_re * wn_im + w_im * wn_re;
                w_re = next_re;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Magnitude spectrogram: frequency bins (rows, DC first) by frames (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    /// Row-major: `data[bin * frames + frame]`.
    pub data: Vec<f64>,
}

impl Spectrogram {
    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }
}

/// Number of full frames for a signal of `n` samples.
pub fn frame_count(n: usize, nfft: usize, hop: usize) -> usize {
    if n < nfft {
        0
    } else {
        (n - nfft) / hop + 1
    }
}

/// Hann-windowed one-sided magnitude STFT.
///
/// Frames start every `hop = nfft - noverlap` samples and must lie fully
/// inside the signal; no padding is applied, so boundary effects are absent
/// and trailing samples that do not fill a frame are dropped. The result has
/// `nfft / 2 + 1` bins per frame.
pub fn stft_magnitude(signal: &[f64], nfft: usize, noverlap: usize) -> Result<Spectrogram> {
    if !nfft.is_power_of_two() || nfft < 2 {
        return Err(Error::config(format!("nfft must be a power of two >= 2, got {nfft}")));
    }
    if noverlap >= nfft {
        return Err(Error::config(format!(
            "noverlap {noverlap} must be smaller than nfft {nfft}"
        )));
    }
    if signal.len() < nfft {
        return Err(Error::data(format!(
            "signal of {} samples is shorter than nfft; need at least {nfft}",
            signal.len()
        )));
    }
    let hop = nfft - noverlap;
    let frames = frame_count(signal.len(), nfft, hop);
    let bins = nfft / 2 + 1;
    let window = hann_window(nfft);

    let mut data = vec![0.0f64; bins * frames];
    let mut re = vec![0.0f64; nfft];
    let mut im = vec![0.0f64; nfft];
    for frame in 0..frames {
        let start = frame * hop;
        for i in 0..nfft {
            re[i] = signal[start + i] * window[i];
            im[i] = 0.0;
        }
        fft_radix2(&mut re, &mut im);
        for bin in 0..bins {
            data[bin * frames + frame] = (re[bin] * re[bin] + im[bin] * im[bin]).sqrt();
        }
    }
    Ok(Spectrogram { bins, frames, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Brute-force O(n^2) DFT magnitude oracle with the same Hann window.
    fn naive_stft(signal: &[f64], nfft: usize, noverlap: usize) -> Spectrogram {
        let hop = nfft - noverlap;
        let frames = frame_count(signal.len(), nfft, hop);
        let bins = nfft / 2 + 1;
        let window = hann_window(nfft);
        let mut data = vec![0.0f64; bins * frames];
        for frame in 0..frames {
            let start = frame * hop;
            for bin in 0..bins {
                let mut re = 0.0;
                let mut im = 0.0;
                for i in 0..nfft {
                    let angle = -std::f64::consts::TAU * bin as f64 * i as f64 / nfft as f64;
                    let v = signal[start + i] * window[i];
                    re += v * angle.cos();
                    im += v * angle.sin();
                }
                data[bin * frames + frame] = (re * re + im * im).sqrt();
            }
        }
        Spectrogram { bins, frames, data }
    }

    #[test]
    fn zero_signal_gives_zero_magnitudes() {
        let spec = stft_magnitude(&vec![0.0; 128], 32, 24).unwrap();
        assert!(spec.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_concentrates_in_dc() {
        // A Hann-windowed constant is the Hann window itself, whose DFT has
        // components at bins 0 and 1 only (ratio exactly 1/2); every bin
        // from 2 up must vanish.
        let spec = stft_magnitude(&vec![3.5; 128], 32, 24).unwrap();
        for frame in 0..spec.frames {
            let dc = spec.get(0, frame);
            assert!(dc > 0.0);
            assert!((spec.get(1, frame) / dc - 0.5).abs() < 1e-12);
            for bin in 2..spec.bins {
                assert!(
                    spec.get(bin, frame) / dc < 1e-9,
                    "bin {bin} has relative magnitude {}",
                    spec.get(bin, frame) / dc
                );
            }
        }
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        // 5 Hz tone at 50 Hz sampling, nfft = 32: true frequency bin is
        // 5 * 32 / 50 = 3.2, so the magnitude peak must land on bin 3.
        let rate = 50.0;
        let signal: Vec<f64> = (0..100)
            .map(|i| (std::f64::consts::TAU * 5.0 * i as f64 / rate).sin())
            .collect();
        let spec = stft_magnitude(&signal, 32, 24).unwrap();
        let oracle = naive_stft(&signal, 32, 24);
        for frame in 0..spec.frames {
            let argmax = (0..spec.bins)
                .max_by(|&a, &b| spec.get(a, frame).partial_cmp(&spec.get(b, frame)).unwrap())
                .unwrap();
            assert_eq!(argmax, 3, "frame {frame}");
            let oracle_argmax = (0..oracle.bins)
                .max_by(|&a, &b| {
                    oracle.get(a, frame).partial_cmp(&oracle.get(b, frame)).unwrap()
                })
                .unwrap();
            assert_eq!(oracle_argmax, 3);
        }
    }

    #[test]
    fn shape_follows_frame_formula() {
        for (n, nfft, noverlap) in [(100usize, 32usize, 24usize), (256, 64, 48), (64, 64, 0)] {
            let hop = nfft - noverlap;
            let spec = stft_magnitude(&vec![1.0; n], nfft, noverlap).unwrap();
            assert_eq!(spec.bins, nfft / 2 + 1);
            assert_eq!(spec.frames, (n - nfft) / hop + 1);
        }
    }

    #[test]
    fn matches_naive_dft_oracle_on_random_signals() {
        let mut rng = Rng::seeded(40);
        for &nfft in &[32usize, 64, 128, 256] {
            let n = nfft + rng.index(257 - nfft);
            let signal: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let noverlap = nfft - nfft / 4;
            let fast = stft_magnitude(&signal, nfft, noverlap).unwrap();
            let slow = naive_stft(&signal, nfft, noverlap);
            assert_eq!(fast.bins, slow.bins);
            assert_eq!(fast.frames, slow.frames);
            let scale = slow.data.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!(
                    (a - b).abs() / scale < 1e-9,
                    "nfft {nfft}: {a} vs {b} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn too_short_signal_names_minimum() {
        let err = stft_magnitude(&vec![0.0; 31], 32, 24).unwrap_err();
        assert!(err.to_string().contains("at least 32"), "{err}");
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(stft_magnitude(&vec![0.0; 100], 48, 24).is_err());
    }
}
