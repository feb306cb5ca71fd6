use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};

/// `|DFT|²` of each windowed frame, bins `0..=window/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major `frames × bins`.
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hamming window (the DFT-even form used for spectral analysis).
pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Short-time power spectrum without centre padding; frame `t` starts at
/// sample `t · hop`.
pub fn stft_power(clip: &AudioClip, window: usize, hop: usize) -> Result<PowerSpectrogram> {
    if window < 2 || hop == 0 {
        return Err(Error::Param(format!("invalid framing: window {window}, hop {hop}")));
    }
    let len = clip.samples.len();
    if len < window {
        return Err(Error::TooShort { len, window });
    }
    let frames = 1 + (len - window) / hop;
    let bins = window / 2 + 1;
    let win = hamming(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let frame = &clip.samples[t * hop..t * hop + window];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&win) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrogram { frames, bins, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new("c", 44_100, samples).unwrap()
    }

    /// O(n²) DFT power of the Hamming-windowed frame.
    fn naive_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        let w = hamming(n);
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, (&x, &wi)) in frame.iter().zip(&w).enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * wi * ang.cos();
                    im += x * wi * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn framing_formula_for_five_seconds() {
        let s = stft_power(&clip(vec![0.0; 220_500]), 1014, 507).unwrap();
        assert_eq!(s.frames, 433);
        assert_eq!(s.bins, 508);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short() {
        let e = stft_power(&clip(vec![0.1; 100]), 1014, 507).unwrap_err();
        assert!(matches!(e, Error::TooShort { len: 100, window: 1014 }));
    }

    #[test]
    fn bin_centred_sinusoid_matches_naive_dft() {
        let n = 256;
        let k0 = 19;
        let samples: Vec<f64> = (0..n * 2)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * (k0 * i) as f64 / n as f64).cos())
            .collect();
        let s = stft_power(&clip(samples.clone()), n, n / 2).unwrap();
        for t in 0..s.frames {
            let want = naive_power(&samples[t * n / 2..t * n / 2 + n]);
            let got = s.frame(t);
            let peak = (0..got.len()).max_by(|&a, &b| got[a].total_cmp(&got[b])).unwrap();
            assert_eq!(peak, k0);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9 * w.abs().max(want[k0] * 1e-6), "{g} vs {w}");
            }
        }
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 64usize..5000, window in 2usize..64, hop in 1usize..40) {
            let s = stft_power(&clip(vec![0.01; len]), window, hop).unwrap();
            prop_assert_eq!(s.frames, 1 + (len - window) / hop);
        }

        #[test]
        fn parseval(seed in any::<u64>(), window in prop::sample::select(vec![64usize, 100, 1014])) {
            let x = crate::synth::white_noise(window, 0.3, seed);
            let x: Vec<f64> = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let s = stft_power(&clip(x.clone()), window, window).unwrap();
            let w = hamming(window);
            let energy: f64 = x.iter().zip(&w).map(|(a, b)| (a * b) * (a * b)).sum();
            // One-sided spectrum: interior bins stand for two conjugate bins.
            let p = s.frame(0);
            let mut total = p[0];
            for k in 1..p.len() {
                let doubled = !(window % 2 == 0 && k == window / 2);
                total += if doubled { 2.0 * p[k] } else { p[k] };
            }
            total /= window as f64;
            prop_assert!((total - energy).abs() <= 1e-6 * energy);
        }
    }
}
