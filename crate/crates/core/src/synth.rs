//! Synthetic weakly labelled corpora: tone bursts over white noise.
//!
//! Positive clips carry one or more sinusoidal bursts whose intervals are
//! written out as exact strong labels; negative clips are noise only.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_strong_annotations, write_weak_manifest, Event, StrongAnnotation, WeakManifestEntry};
use crate::dsp::{write_wav, AudioClip};
use crate::error::{Error, Result};

/// Gaussian white noise with standard deviation `std`.
pub fn white_noise(len: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub positives: usize,
    pub negatives: usize,
    pub duration_seconds: f64,
    pub sample_rate: u32,
    pub noise_rms: f64,
    pub min_burst_seconds: f64,
    pub max_burst_seconds: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub min_bursts: usize,
    pub max_bursts: usize,
    /// Burst SNR (tone RMS over noise RMS, dB) drawn uniformly from this range.
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    /// When set, every positive clip gets exactly one burst per listed SNR
    /// and the burst count / SNR ranges are ignored.
    pub burst_snr_db: Option<Vec<f64>>,
    /// Raw label written to the weak manifest for positive clips.
    pub label: String,
    /// Prefix for recording ids.
    pub prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            positives: 40,
            negatives: 40,
            duration_seconds: 5.0,
            sample_rate: 44_100,
            noise_rms: 0.05,
            min_burst_seconds: 0.1,
            max_burst_seconds: 1.0,
            min_freq_hz: 500.0,
            max_freq_hz: 8000.0,
            min_bursts: 1,
            max_bursts: 3,
            min_snr_db: 0.0,
            max_snr_db: 10.0,
            burst_snr_db: None,
            label: "tone".into(),
            prefix: String::new(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Param(format!("synth: {m}")));
        if self.sample_rate == 0 || self.duration_seconds <= 0.0 {
            return fail("duration and sample rate must be positive");
        }
        if !(0.0 < self.min_burst_seconds && self.min_burst_seconds <= self.max_burst_seconds) {
            return fail("burst length range");
        }
        if !(0.0 < self.min_freq_hz && self.min_freq_hz <= self.max_freq_hz)
            || self.max_freq_hz >= self.sample_rate as f64 / 2.0
        {
            return fail("burst frequency range must lie below Nyquist");
        }
        if self.min_bursts == 0 || self.min_bursts > self.max_bursts {
            return fail("burst count range must start at 1 or more");
        }
        if self.burst_snr_db.as_ref().is_some_and(|v| v.is_empty()) {
            return fail("burst_snr_db list is empty");
        }
        if self.min_snr_db > self.max_snr_db || self.noise_rms <= 0.0 {
            return fail("SNR range / noise level");
        }
        let bursts = self.burst_snr_db.as_ref().map_or(self.max_bursts, Vec::len);
        if bursts as f64 * self.max_burst_seconds > self.duration_seconds {
            return fail("bursts cannot fit in the clip");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub positive: bool,
    pub events: Vec<Event>,
}

impl SynthClip {
    pub fn annotation(&self) -> StrongAnnotation {
        StrongAnnotation {
            id: self.clip.id.clone(),
            events: self.events.clone(),
        }
    }
}

/// Non-overlapping burst spans: lengths are drawn first, then the
/// remaining silence is split at random between the gaps.
fn place_bursts(rng: &mut ChaCha8Rng, cfg: &SynthConfig, count: usize) -> Vec<(f64, f64)> {
    let lens: Vec<f64> = (0..count)
        .map(|_| rng.random_range(cfg.min_burst_seconds..=cfg.max_burst_seconds))
        .collect();
    let slack = (cfg.duration_seconds - lens.iter().sum::<f64>()).max(0.0);
    let weights: Vec<f64> = (0..=count).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut t = 0.0;
    let mut spans = Vec::with_capacity(count);
    for (len, w) in lens.iter().zip(&weights) {
        t += slack * w / total;
        spans.push((t, t + len));
        t += len;
    }
    spans
}

/// Positives first (`pos_000`, ...), then negatives (`neg_000`, ...).
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as f64;
    let len = (cfg.duration_seconds * sr).round() as usize;
    let fade = ((0.005 * sr) as usize).max(1);
    let mut out = Vec::with_capacity(cfg.positives + cfg.negatives);
    for k in 0..cfg.positives + cfg.negatives {
        let positive = k < cfg.positives;
        let id = if positive {
            format!("{}pos_{k:03}", cfg.prefix)
        } else {
            format!("{}neg_{:03}", cfg.prefix, k - cfg.positives)
        };
        let mut samples = white_noise(len, cfg.noise_rms, rng.random());
        let mut events = Vec::new();
        if positive {
            let snrs: Vec<f64> = match &cfg.burst_snr_db {
                Some(list) => list.clone(),
                None => {
                    let n = rng.random_range(cfg.min_bursts..=cfg.max_bursts);
                    (0..n).map(|_| rng.random_range(cfg.min_snr_db..=cfg.max_snr_db)).collect()
                }
            };
            let spans = place_bursts(&mut rng, cfg, snrs.len());
            for (&(a, b), snr) in spans.iter().zip(&snrs) {
                let freq = rng.random_range(cfg.min_freq_hz..=cfg.max_freq_hz);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = cfg.noise_rms * 10f64.powf(snr / 20.0) * std::f64::consts::SQRT_2;
                let (s0, s1) = ((a * sr).round() as usize, ((b * sr).round() as usize).min(len));
                let n = s1 - s0;
                for i in 0..n {
                    let edge = i.min(n - 1 - i);
                    let ramp = if edge < fade {
                        0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos()
                    } else {
                        1.0
                    };
                    let t = (s0 + i) as f64 / sr;
                    samples[s0 + i] += amp * ramp * (std::f64::consts::TAU * freq * t + phase).sin();
                }
                events.push(Event::new(s0 as f64 / sr, s1 as f64 / sr)?);
            }
            events.sort_by(|x, y| x.onset.total_cmp(&y.onset));
        }
        samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        out.push(SynthClip {
            clip: AudioClip::new(id, cfg.sample_rate, samples)?,
            positive,
            events,
        });
    }
    Ok(out)
}

/// Paths of a corpus written by [`write_corpus`].
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub manifest: PathBuf,
    pub strong: PathBuf,
    pub audio_dir: PathBuf,
}

/// Writes `audio/<id>.wav`, `weak.csv` (paths relative to `dir`) and
/// `strong.csv` under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, clips: &[SynthClip], label: &str) -> Result<CorpusFiles> {
    let dir = dir.as_ref();
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for c in clips {
        let rel = PathBuf::from("audio").join(format!("{}.wav", c.clip.id));
        write_wav(dir.join(&rel), &c.clip)?;
        entries.push(WeakManifestEntry {
            id: c.clip.id.clone(),
            path: rel,
            labels: if c.positive {
                [label.to_string()].into()
            } else {
                Default::default()
            },
        });
    }
    let manifest = dir.join("weak.csv");
    write_weak_manifest(&manifest, &entries)?;
    let strong = dir.join("strong.csv");
    let anns: Vec<StrongAnnotation> = clips.iter().map(SynthClip::annotation).collect();
    write_strong_annotations(&strong, &anns)?;
    Ok(CorpusFiles {
        manifest,
        strong,
        audio_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            positives: 3,
            negatives: 2,
            duration_seconds: 2.0,
            sample_rate: 22_050,
            max_bursts: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = synthesize(&small(), 7).unwrap();
        let b = synthesize(&small(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for c in &a {
            assert_eq!(c.clip.samples.len(), 44_100);
            assert_eq!(c.positive, !c.events.is_empty());
            assert!(c.clip.samples.iter().all(|v| v.abs() <= 1.0));
        }
        let other = synthesize(&small(), 8).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn listed_snrs_give_one_burst_each_without_overlap() {
        let cfg = SynthConfig {
            burst_snr_db: Some(vec![10.0, -3.0]),
            ..small()
        };
        for c in synthesize(&cfg, 1).unwrap().iter().filter(|c| c.positive) {
            assert_eq!(c.events.len(), 2);
            assert!(c.events[0].offset <= c.events[1].onset);
        }
    }

    #[test]
    fn burst_raises_energy_inside_its_interval() {
        let cfg = SynthConfig {
            burst_snr_db: Some(vec![20.0]),
            ..small()
        };
        let clips = synthesize(&cfg, 3).unwrap();
        let c = &clips[0];
        let e = c.events[0];
        let sr = 22_050.0;
        let rms = |a: f64, b: f64| {
            let s = &c.clip.samples[(a * sr) as usize..(b * sr) as usize];
            (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
        };
        let inside = rms(e.onset + 0.01, e.offset - 0.01);
        assert!(inside > 5.0 * cfg.noise_rms, "{inside}");
    }

    #[test]
    fn writes_manifest_with_empty_negative_rows() {
        let dir = tempfile::tempdir().unwrap();
        let clips = synthesize(&small(), 2).unwrap();
        let files = write_corpus(dir.path(), &clips, "tone").unwrap();
        let m = crate::data::load_weak_manifest(&files.manifest).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.iter().filter(|e| e.labels.is_empty()).count(), 2);
        assert!(dir.path().join("audio/neg_001.wav").exists());
    }
}
