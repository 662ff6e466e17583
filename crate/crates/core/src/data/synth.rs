//! Synthetic hyperspectral scenes for desk-scale runs.
//!
//! Each class owns a smooth spectrum defined on a continuous wavelength axis
//! `[0, 1]`; a scene with `bands` channels samples it at band centres. Two
//! configs with the same `signature_seed` but different band counts thus
//! look like the same materials seen by different sensors.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DomainDataset, HyperCube, LabelRaster, Sensor};
use crate::{rng_from_seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub sensor: Sensor,
    pub classes: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Seeds the per-class spectra. Class `c` gets the same spectrum in every
    /// config sharing this seed.
    pub signature_seed: u64,
    pub noise_std: f64,
    /// Typical blob diameter in pixels.
    pub blob_scale: f64,
    /// Seeds the class map and the noise.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            sensor: Sensor::Aviris,
            classes: 4,
            bands: 32,
            height: 64,
            width: 64,
            signature_seed: 0,
            noise_std: 0.1,
            blob_scale: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("synthetic scene needs >= 2 classes, got {}", self.classes)));
        }
        if self.bands == 0 {
            return Err(Error::Config("synthetic scene needs >= 1 band".into()));
        }
        if self.height * self.width < self.classes {
            return Err(Error::Config(format!(
                "a {}x{} scene cannot hold {} classes",
                self.height, self.width, self.classes
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if !(self.blob_scale > 0.0) {
            return Err(Error::Config(format!("blob_scale must be > 0, got {}", self.blob_scale)));
        }
        Ok(())
    }
}

/// A smooth spectrum: baseline plus a few Gaussian bumps.
#[derive(Clone, Debug)]
struct Signature {
    base: f64,
    bumps: Vec<(f64, f64, f64)>,
}

impl Signature {
    fn draw(signature_seed: u64, class: usize) -> Self {
        let mut rng = rng_from_seed(signature_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(class as u64));
        let base = rng.random_range(0.1..0.4);
        let count = rng.random_range(2..=4);
        let bumps = (0..count)
            .map(|_| {
                (
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.03..0.15),
                )
            })
            .collect();
        Self { base, bumps }
    }

    fn at(&self, u: f64) -> f64 {
        self.base
            + self
                .bumps
                .iter()
                .map(|&(a, mu, s)| a * (-(u - mu).powi(2) / (2.0 * s * s)).exp())
                .sum::<f64>()
    }

    fn sample(&self, bands: usize) -> Vec<f64> {
        (0..bands).map(|b| self.at((b as f64 + 0.5) / bands as f64)).collect()
    }
}

/// Class map by nearest-seed growth. The first `classes` seeds carry one
/// class each, so every class is present.
fn class_map(cfg: &SynthConfig, rng: &mut crate::Rng) -> Vec<u16> {
    let (h, w) = (cfg.height, cfg.width);
    let wanted = ((h * w) as f64 / (cfg.blob_scale * cfg.blob_scale)).round() as usize;
    let sites = wanted.clamp(cfg.classes, h * w);
    let pos: Vec<(f64, f64)> = sample(rng, h * w, sites)
        .into_iter()
        .map(|p| ((p / w) as f64, (p % w) as f64))
        .collect();
    let class: Vec<usize> = (0..sites)
        .map(|i| if i < cfg.classes { i } else { rng.random_range(0..cfg.classes) })
        .collect();
    let mut out = vec![0u16; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = (f64::INFINITY, 0);
            for (i, &(sy, sx)) in pos.iter().enumerate() {
                let d = (sy - y as f64).powi(2) + (sx - x as f64).powi(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
            out[y * w + x] = class[best.1] as u16 + 1;
        }
    }
    out
}

/// Generate a fully labelled scene. Train/test indices are left empty; use
/// [`DomainDataset::split`] or [`DomainDataset::use_all_for_training`].
pub fn synth_generate(cfg: &SynthConfig) -> Result<DomainDataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let labels = class_map(cfg, &mut rng);
    let spectra: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|c| Signature::draw(cfg.signature_seed, c).sample(cfg.bands))
        .collect();
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise std");
    let plane = cfg.height * cfg.width;
    let mut data = vec![0f32; cfg.bands * plane];
    for (p, &label) in labels.iter().enumerate() {
        let spectrum = &spectra[label as usize - 1];
        for (b, &v) in spectrum.iter().enumerate() {
            data[b * plane + p] = (v + noise.sample(&mut rng)) as f32;
        }
    }
    let mut cube = HyperCube::new(cfg.bands, cfg.height, cfg.width, data)?;
    cube.wavelengths = Some((0..cfg.bands).map(|b| (b as f64 + 0.5) / cfg.bands as f64).collect());
    let labels = LabelRaster::new(cfg.height, cfg.width, labels)?;
    DomainDataset::new(cfg.name.clone(), cfg.sensor, cfg.classes, cube, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_classes_have_identical_spectra() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            height: 16,
            width: 16,
            ..Default::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        for c in 1..=cfg.classes as u16 {
            let pixels: Vec<usize> = (0..256).filter(|&p| ds.labels.labels[p] == c).collect();
            let first = ds.cube.spectrum(pixels[0] % 16, pixels[0] / 16);
            for &p in &pixels {
                assert_eq!(ds.cube.spectrum(p % 16, p / 16), first);
            }
        }
    }

    #[test]
    fn every_class_present() {
        for seed in 0..10 {
            let cfg = SynthConfig {
                classes: 4,
                height: 32,
                width: 32,
                seed,
                ..Default::default()
            };
            let ds = synth_generate(&cfg).unwrap();
            for c in 1..=4u16 {
                assert!(ds.labels.labels.contains(&c), "seed {seed} lacks class {c}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            height: 20,
            width: 24,
            seed: 9,
            ..Default::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.cube.data, b.cube.data);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn band_count_changes_the_sensor_not_the_material() {
        let sig = Signature::draw(3, 1);
        let coarse = sig.sample(24);
        let fine = sig.sample(48);
        assert_eq!(coarse.len(), 24);
        assert_eq!(fine.len(), 48);
        // band 0 of the coarse sensor covers bands 0 and 1 of the fine one
        let between = sig.at(1.0 / 48.0);
        assert!((coarse[0] - between).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let one_class = SynthConfig {
            classes: 1,
            ..Default::default()
        };
        assert!(matches!(synth_generate(&one_class), Err(Error::Config(_))));
        let no_bands = SynthConfig {
            bands: 0,
            ..Default::default()
        };
        assert!(matches!(synth_generate(&no_bands), Err(Error::Config(_))));
    }
}
