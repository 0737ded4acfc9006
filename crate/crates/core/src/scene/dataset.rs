//! On-disk dataset layout: `index.json` plus one 16-bit PNG per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttributeVector, MorphCoeffs, SceneSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::write_atomic;

const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

/// Latent codes attached to generator corpus samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCodes {
    pub w_geo: Vec<f64>,
    pub w_tex: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub identity_id: u64,
    pub seed: u64,
    pub coeffs: MorphCoeffs,
    pub attributes: AttributeVector,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<SampleCodes>,
}

impl SampleRecord {
    pub fn spec(&self) -> SceneSpec {
        SceneSpec { coeffs: self.coeffs.clone(), identity_id: self.identity_id, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub resolution: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetIndex {
    /// Sample ids grouped by identity.
    pub fn identity_groups(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for r in &self.samples {
            groups.entry(r.identity_id).or_default().push(r.id);
        }
        groups
    }
}

#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.index.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.samples.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.index.resolution
    }

    pub fn record(&self, i: usize) -> &SampleRecord {
        &self.index.samples[i]
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.index.samples
    }

    pub fn load_image(&self, i: usize) -> Result<Image> {
        let img = Image::load_png(&self.root.join(&self.index.samples[i].image))?;
        if img.resolution() != self.index.resolution {
            return Err(self.corrupt(format!("image {} has resolution {}", i, img.resolution())));
        }
        Ok(img)
    }

    pub fn load_images(&self) -> Result<Vec<Image>> {
        (0..self.len()).map(|i| self.load_image(i)).collect()
    }

    fn corrupt(&self, reason: String) -> Error {
        Error::CorruptIndex { path: self.root.join(INDEX_FILE), reason }
    }
}

fn prepare_dir(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() {
        let occupied = !path.is_dir() || fs::read_dir(path)?.next().is_some();
        if occupied && !overwrite {
            return Err(Error::PathExists(path.to_path_buf()));
        }
        if path.is_dir() {
            fs::remove_dir_all(path)?;
        } else {
            fs::remove_file(path)?;
        }
    }
    fs::create_dir_all(path)?;
    Ok(())
}

/// Writes a dataset directory. `codes`, when given, must align with `specs`.
pub fn write_dataset(
    specs: &[SceneSpec],
    images: &[Image],
    attributes: &[AttributeVector],
    codes: Option<&[SampleCodes]>,
    path: &Path,
    overwrite: bool,
) -> Result<DatasetHandle> {
    let n = specs.len();
    if images.len() != n || attributes.len() != n || codes.is_some_and(|c| c.len() != n) {
        return Err(Error::arg("specs, images, attributes and codes must have equal lengths"));
    }
    if n == 0 {
        return Err(Error::arg("cannot write an empty dataset"));
    }
    let resolution = images[0].resolution();
    if images.iter().any(|im| im.resolution() != resolution) {
        return Err(Error::arg("all images must share one resolution"));
    }
    prepare_dir(path, overwrite)?;
    let mut samples = Vec::with_capacity(n);
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("{i:06}.png");
        images[i].save_png(&path.join(&name))?;
        samples.push(SampleRecord {
            id: i,
            identity_id: spec.identity_id,
            seed: spec.seed,
            coeffs: spec.coeffs.clone(),
            attributes: attributes[i].clone(),
            image: name,
            codes: codes.map(|c| c[i].clone()),
        });
    }
    let index = DatasetIndex { version: INDEX_VERSION, resolution, samples };
    write_atomic(&path.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)?;
    Ok(DatasetHandle { root: path.to_path_buf(), index })
}

pub fn read_dataset(path: &Path) -> Result<DatasetHandle> {
    let index_path = path.join(INDEX_FILE);
    let corrupt = |reason: String| Error::CorruptIndex { path: index_path.clone(), reason };
    let bytes = fs::read(&index_path).map_err(|e| corrupt(e.to_string()))?;
    let index: DatasetIndex = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if index.version != INDEX_VERSION {
        return Err(corrupt(format!("unsupported index version {}", index.version)));
    }
    if index.samples.is_empty() {
        return Err(corrupt("no samples".into()));
    }
    for (i, r) in index.samples.iter().enumerate() {
        if r.id != i {
            return Err(corrupt(format!("sample {i} has id {}", r.id)));
        }
        r.coeffs.validate().map_err(|e| corrupt(format!("sample {i}: {e}")))?;
        AttributeVector::new(r.attributes.values().to_vec()).map_err(|e| corrupt(format!("sample {i}: {e}")))?;
        if r.image.contains('/') || r.image.contains("..") || !path.join(&r.image).is_file() {
            return Err(corrupt(format!("sample {i}: missing image {}", r.image)));
        }
    }
    Ok(DatasetHandle { root: path.to_path_buf(), index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CoeffRanges;
    use crate::scene::{attribute_oracle, sample_scene_coeffs};

    fn fake_images(n: usize) -> Vec<Image> {
        (0..n).map(|i| Image::filled(32, [i as f32 / n as f32, 0.5, 0.25])).collect()
    }

    fn fixture(n: usize, ids: usize) -> (Vec<SceneSpec>, Vec<Image>, Vec<AttributeVector>) {
        let ranges = CoeffRanges::default();
        let specs = sample_scene_coeffs(11, n, ids, &ranges).unwrap();
        let attrs = specs.iter().map(|s| attribute_oracle(s, &ranges)).collect();
        (specs, fake_images(n), attrs)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (specs, images, attrs) = fixture(16, 4);
        write_dataset(&specs, &images, &attrs, None, &dir.path().join("d"), false).unwrap();
        let h = read_dataset(&dir.path().join("d")).unwrap();
        for (r, s) in h.records().iter().zip(&specs) {
            assert_eq!(r.coeffs.to_flat(), s.coeffs.to_flat());
            assert_eq!(r.identity_id, s.identity_id);
        }
        assert_eq!(h.load_image(3).unwrap(), images[3].quantized());
    }

    #[test]
    fn collision_requires_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let (specs, images, attrs) = fixture(4, 2);
        let p = dir.path().join("d");
        write_dataset(&specs, &images, &attrs, None, &p, false).unwrap();
        assert!(matches!(write_dataset(&specs, &images, &attrs, None, &p, false), Err(Error::PathExists(_))));
        write_dataset(&specs, &images, &attrs, None, &p, true).unwrap();
    }

    #[test]
    fn truncated_index_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let (specs, images, attrs) = fixture(4, 2);
        let p = dir.path().join("d");
        write_dataset(&specs, &images, &attrs, None, &p, false).unwrap();
        let idx = p.join(INDEX_FILE);
        let bytes = fs::read(&idx).unwrap();
        fs::write(&idx, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::CorruptIndex { .. })));
    }

    #[test]
    fn misaligned_lengths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (specs, images, attrs) = fixture(4, 2);
        assert!(write_dataset(&specs, &images[..3], &attrs, None, dir.path(), true).is_err());
    }
}
