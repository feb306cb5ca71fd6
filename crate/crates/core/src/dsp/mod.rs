//! Audio decoding and log mel-band energy features.

mod features;
mod mel;
mod stft;
mod wav;

pub use features::{read_features, write_features, write_features_csv, FEATURE_MAGIC, FEATURE_VERSION};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{hamming, stft_power, PowerSpectrogram};
pub use wav::{decode_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio normalised to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Param("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Param("audio clip has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Param("samples must be finite and within [-1, 1]".into()));
        }
        Ok(AudioClip {
            id: id.into(),
            sample_rate,
            samples,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Analysis window length in samples (Hamming).
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    /// Added to mel energies before the logarithm.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    /// 23 ms windows at 44.1 kHz with 50% overlap, 40 bands, full band.
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 44_100,
            window: 1014,
            hop: 507,
            n_mels: 40,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Frames produced for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window).then(|| 1 + (len - self.window) / self.hop)
    }
}

/// `T × F` log mel-band energies of one recording, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub id: String,
    frames: usize,
    bands: usize,
    data: Vec<f64>,
    pub hop_seconds: f64,
}

impl FeatureMatrix {
    pub fn new(id: impl Into<String>, frames: usize, bands: usize, data: Vec<f64>, hop_seconds: f64) -> Result<Self> {
        if frames == 0 || bands == 0 || data.len() != frames * bands {
            return Err(Error::shape("feature matrix", &[frames, bands], &[data.len()]));
        }
        Ok(FeatureMatrix {
            id: id.into(),
            frames,
            bands,
            data,
            hop_seconds,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }
}

/// `ln(mel · power + ε)` for every frame of `clip`.
pub fn extract_logmel(clip: &AudioClip, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if clip.sample_rate != config.sample_rate {
        return Err(Error::Param(format!(
            "{}: sample rate {} Hz differs from configured {} Hz (resampling is not supported)",
            clip.id, clip.sample_rate, config.sample_rate
        )));
    }
    if config.log_floor < 0.0 {
        return Err(Error::Param("log floor must be non-negative".into()));
    }
    let power = stft_power(clip, config.window, config.hop)?;
    let fb = mel_filterbank(
        config.sample_rate,
        config.window,
        config.n_mels,
        config.fmin,
        config.fmax_hz(),
    )?;
    let k = power.bins;
    let mut out = vec![0.0; power.frames * config.n_mels];
    crate::tensor::kernels::gemm(
        power.frames,
        k,
        config.n_mels,
        &power.data,
        false,
        fb.data(),
        true,
        &mut out,
        false,
    );
    out.iter_mut().for_each(|v| *v = (*v + config.log_floor).ln());
    FeatureMatrix::new(clip.id.clone(), power.frames, config.n_mels, out, config.hop_seconds())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, freq: f64, amp: f64, sr: u32) -> AudioClip {
        let s = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin())
            .collect();
        AudioClip::new("tone", sr, s).unwrap()
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new("s", 44_100, vec![0.0; 5000]).unwrap();
        let f = extract_logmel(&clip, &cfg).unwrap();
        assert!(f.data().iter().all(|&v| v == (1e-10f64).ln()));
    }

    #[test]
    fn five_seconds_gives_433_by_40() {
        let cfg = FeatureConfig::default();
        let clip = tone(220_500, 1000.0, 0.5, 44_100);
        let f = extract_logmel(&clip, &cfg).unwrap();
        assert_eq!((f.frames(), f.bands()), (433, 40));
        assert!(f.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let cfg = FeatureConfig {
            log_floor: 0.0,
            ..FeatureConfig::default()
        };
        let mut noise = crate::synth::white_noise(20_000, 0.2, 3);
        noise.iter_mut().for_each(|v| *v = v.clamp(-0.45, 0.45));
        let a = AudioClip::new("a", 44_100, noise.clone()).unwrap();
        let b = AudioClip::new("b", 44_100, noise.iter().map(|v| 2.0 * v).collect()).unwrap();
        let fa = extract_logmel(&a, &cfg).unwrap();
        let fb = extract_logmel(&b, &cfg).unwrap();
        for (x, y) in fa.data().iter().zip(fb.data()) {
            assert!((y - x - 4f64.ln()).abs() < 1e-9, "{x} {y}");
        }
    }

    #[test]
    fn rejects_mismatched_sample_rate() {
        let cfg = FeatureConfig::default();
        let clip = tone(4000, 440.0, 0.5, 16_000);
        assert!(matches!(extract_logmel(&clip, &cfg), Err(Error::Param(_))));
    }

    #[test]
    fn deterministic() {
        let cfg = FeatureConfig::default();
        let clip = tone(30_000, 3000.0, 0.3, 44_100);
        let a = extract_logmel(&clip, &cfg).unwrap();
        let b = extract_logmel(&clip, &cfg).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
