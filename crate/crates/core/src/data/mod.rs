//! Hyperspectral scenes: loading, splitting, normalisation, patch sampling
//! and a synthetic generator.

pub mod envi;
mod patch;
mod synth;

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use envi::{load_envi, write_envi, ByteOrder, EnviDataType, EnviHeader, Interleave};
pub use patch::{augment_d4, d4_apply, d4_compose, d4_source, extract_patch, extract_patch_into, reflect};
pub use synth::{synth_generate, SynthConfig};

/// Image cube stored band-major: element (b, y, x) at `(b·height + y)·width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub wavelengths: Option<Vec<f64>>,
}

impl HyperCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bands * height * width {
            return Err(Error::shape(
                "HyperCube::new",
                format!("{} values for {bands}x{height}x{width}", bands * height * width),
                data.len(),
            ));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
            wavelengths: None,
        })
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(b, y, x)).collect()
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }
}

/// Per-pixel class labels, row-major. 0 means unlabelled; classes are 1..=K.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "LabelRaster::new",
                format!("{} labels for {height}x{width}", height * width),
                labels.len(),
            ));
        }
        Ok(Self { height, width, labels })
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Whitespace-separated integers, one raster row per line.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<u16> = line
                .split_whitespace()
                .map(|t| t.parse::<u16>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Data(format!("label grid line {}: {e}", i + 1)))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::Data(format!(
                        "label grid line {} has {} columns, expected {w}",
                        i + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            labels.extend(row);
            height += 1;
        }
        Self::new(height, width.unwrap_or(0), labels)
    }

    /// Load either an ENVI single-band integer raster (path ending in `.hdr`;
    /// the raw file is the header path without extension, or with `.img`,
    /// `.raw` or `.dat`) or a plain-text grid.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("hdr")) {
            let data_path = envi_companion(path)?;
            let (header, values) = envi::load_raw(path, &data_path)?;
            if header.bands != 1 || !header.data_type.is_integer() {
                return Err(Error::Data(format!(
                    "{}: label raster must be a single-band integer image",
                    path.display()
                )));
            }
            let labels = values
                .into_iter()
                .map(|v| {
                    if (0.0..=u16::MAX as f64).contains(&v) {
                        Ok(v as u16)
                    } else {
                        Err(Error::Data(format!("{}: label {v} out of range", path.display())))
                    }
                })
                .collect::<Result<_>>()?;
            Self::new(header.lines, header.samples, labels)
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::parse_text(&text)
        }
    }
}

fn envi_companion(header: &Path) -> Result<PathBuf> {
    let stem = header.with_extension("");
    [stem.clone(), stem.with_extension("img"), stem.with_extension("raw"), stem.with_extension("dat")]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Data(format!("no raster file next to {}", header.display())))
}

/// Acquisition instrument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensor {
    #[serde(rename = "A", alias = "AVIRIS")]
    Aviris,
    #[serde(rename = "R", alias = "ROSIS")]
    Rosis,
    #[serde(rename = "H", alias = "Hyperion")]
    Hyperion,
}

/// A scene plus its train/test pixel indices (row-major `y·width + x`).
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub sensor: Sensor,
    pub classes: usize,
    pub cube: HyperCube,
    pub labels: LabelRaster,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DomainDataset {
    pub fn new(name: String, sensor: Sensor, classes: usize, cube: HyperCube, labels: LabelRaster) -> Result<Self> {
        if (cube.height, cube.width) != (labels.height, labels.width) {
            return Err(Error::Data(format!(
                "{name}: label raster is {}x{}, cube is {}x{}",
                labels.height, labels.width, cube.height, cube.width
            )));
        }
        if labels.max_label() as usize > classes {
            return Err(Error::Data(format!(
                "{name}: label {} exceeds the declared {classes} classes",
                labels.max_label()
            )));
        }
        Ok(Self {
            name,
            sensor,
            classes,
            cube,
            labels,
            train_idx: Vec::new(),
            test_idx: Vec::new(),
        })
    }

    pub fn bands(&self) -> usize {
        self.cube.bands
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.labels.labels.len()).filter(|&i| self.labels.labels[i] != 0).collect()
    }

    /// Zero-based class of a labelled pixel.
    #[inline]
    pub fn class_of(&self, idx: usize) -> usize {
        self.labels.labels[idx] as usize - 1
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cube.width, idx / self.cube.width)
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_idx,
            Split::Test => &self.test_idx,
        }
    }

    /// Draw `n_per_class` training pixels per class; the rest go to test.
    pub fn split(&mut self, n_per_class: usize, rng: &mut crate::Rng) -> Result<()> {
        let (train, test) = split_per_class(self, n_per_class, rng)?;
        self.train_idx = train;
        self.test_idx = test;
        Ok(())
    }

    /// Every labelled pixel becomes training data (source domains).
    pub fn use_all_for_training(&mut self) {
        self.train_idx = self.labeled_indices();
        self.test_idx.clear();
    }

    /// Band-major patch of pixel `idx` into `out`.
    pub fn patch_into(&self, idx: usize, patch: usize, out: &mut [f32]) {
        let (x, y) = self.coords(idx);
        extract_patch_into(&self.cube, x, y, patch, out);
    }
}

/// Pick exactly `n_per_class` labelled pixels of every class for training;
/// all remaining labelled pixels form the test split. Both are sorted.
pub fn split_per_class(ds: &DomainDataset, n_per_class: usize, rng: &mut crate::Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class = vec![Vec::new(); ds.classes];
    for idx in ds.labeled_indices() {
        by_class[ds.class_of(idx)].push(idx);
    }
    let mut train = Vec::with_capacity(n_per_class * ds.classes);
    let mut test = Vec::new();
    for (c, pixels) in by_class.iter().enumerate() {
        if pixels.len() < n_per_class {
            return Err(Error::Data(format!(
                "{}: class {} has {} labelled pixels, {n_per_class} requested for training",
                ds.name,
                c + 1,
                pixels.len()
            )));
        }
        let mut chosen = vec![false; pixels.len()];
        for i in sample(rng, pixels.len(), n_per_class) {
            chosen[i] = true;
        }
        for (i, &p) in pixels.iter().enumerate() {
            if chosen[i] {
                train.push(p);
            } else {
                test.push(p);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Standardise every band with mean and standard deviation measured on the
/// training pixels. A constant band is only centred.
pub fn normalize_bands(mut ds: DomainDataset) -> Result<DomainDataset> {
    if ds.train_idx.is_empty() {
        return Err(Error::Data(format!("{}: cannot normalise without training pixels", ds.name)));
    }
    let plane = ds.cube.height * ds.cube.width;
    let n = ds.train_idx.len() as f64;
    for b in 0..ds.cube.bands {
        let band = &mut ds.cube.data[b * plane..(b + 1) * plane];
        let mean = ds.train_idx.iter().map(|&i| band[i] as f64).sum::<f64>() / n;
        let var = ds.train_idx.iter().map(|&i| (band[i] as f64 - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 {
            1.0 / var.sqrt()
        } else {
            log::warn!("{}: band {b} is constant on the training split; centring only", ds.name);
            1.0
        };
        for v in band.iter_mut() {
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }
    Ok(ds)
}

/// On-disk description of a user-supplied scene. Relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub sensor: Sensor,
    pub header: PathBuf,
    pub data: PathBuf,
    pub labels: PathBuf,
    pub classes: usize,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.header, &mut m.data, &mut m.labels] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    /// Load the scene; train/test indices are left empty.
    pub fn load(&self) -> Result<DomainDataset> {
        let cube = load_envi(&self.header, &self.data)?;
        let labels = LabelRaster::load(&self.labels)?;
        DomainDataset::new(self.name.clone(), self.sensor, self.classes, cube, labels)
    }
}

/// Writes a scene as `<name>.hdr/.img` (f32 BSQ), a u16 label raster
/// `<name>_labels.hdr/.img` and the manifest `<name>.json`, all in `dir`.
/// Returns the manifest path.
pub fn save_scene(ds: &DomainDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = |suffix: &str| dir.join(format!("{}{suffix}", ds.name));
    write_envi(
        &ds.cube,
        &file(".hdr"),
        &file(".img"),
        EnviDataType::F32,
        Interleave::Bsq,
        ByteOrder::Little,
    )?;
    let labels = HyperCube::new(1, ds.labels.height, ds.labels.width, ds.labels.labels.iter().map(|&l| l as f32).collect())?;
    write_envi(
        &labels,
        &file("_labels.hdr"),
        &file("_labels.img"),
        EnviDataType::U16,
        Interleave::Bsq,
        ByteOrder::Little,
    )?;
    let name = |suffix: &str| PathBuf::from(format!("{}{suffix}", ds.name));
    let manifest = DatasetManifest {
        name: ds.name.clone(),
        sensor: ds.sensor,
        header: name(".hdr"),
        data: name(".img"),
        labels: name("_labels.hdr"),
        classes: ds.classes,
    };
    let path = file(".json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
