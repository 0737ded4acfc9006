use std::path::Path;

use super::model::Generator;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::seeded_rng;
use crate::scene::{attributes_of, read_dataset, write_dataset, AttributeVector, DatasetHandle, SampleCodes, SceneSpec};

/// Style-mixed generator samples with their ground-truth codes.
#[derive(Debug, Clone)]
pub struct InversionCorpus {
    /// Mixed source coefficients: geometry and view from one draw, texture
    /// from another.
    pub specs: Vec<SceneSpec>,
    pub codes: Vec<SampleCodes>,
    pub images: Vec<Image>,
    pub attributes: Vec<AttributeVector>,
}

impl InversionCorpus {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Sub-corpus of the given indices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            specs: idx.iter().map(|&i| self.specs[i].clone()).collect(),
            codes: idx.iter().map(|&i| self.codes[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            attributes: idx.iter().map(|&i| self.attributes[i].clone()).collect(),
        }
    }

    /// First `n` records and the rest.
    pub fn split(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let a: Vec<usize> = (0..n).collect();
        let b: Vec<usize> = (n..self.len()).collect();
        (self.subset(&a), self.subset(&b))
    }

    pub fn write(&self, path: &Path, overwrite: bool) -> Result<DatasetHandle> {
        write_dataset(&self.specs, &self.images, &self.attributes, Some(&self.codes), path, overwrite)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_dataset(&read_dataset(path)?)
    }

    pub fn from_dataset(h: &DatasetHandle) -> Result<Self> {
        let mut codes = Vec::with_capacity(h.len());
        for (i, r) in h.records().iter().enumerate() {
            codes.push(r.codes.clone().ok_or_else(|| Error::CorruptIndex {
                path: h.root.join("index.json"),
                reason: format!("sample {i} has no code vectors"),
            })?);
        }
        Ok(Self {
            specs: h.records().iter().map(|r| r.spec()).collect(),
            codes,
            images: h.load_images()?,
            attributes: h.records().iter().map(|r| r.attributes.clone()).collect(),
        })
    }
}

/// Samples `count` style-mixed codes from the latent prior and renders them.
pub fn sample_training_corpus(g: &Generator, count: usize, seed: u64) -> Result<InversionCorpus> {
    let mut rng = seeded_rng(seed, "corpus");
    let d_d = g.arch().d_d;
    let draws: Vec<_> = (0..count).map(|_| g.prior().sample_mixed(&mut rng, d_d)).collect();
    let frozen = g.frozen()?;
    let mut images = Vec::with_capacity(count);
    for chunk in draws.chunks(16) {
        let wg: Vec<Vec<f64>> = chunk.iter().map(|m| m.w_geo.clone()).collect();
        let wt: Vec<Vec<f64>> = chunk.iter().map(|m| m.w_tex.clone()).collect();
        let vs: Vec<Vec<f64>> = chunk.iter().map(|m| m.d.clone()).collect();
        let out = frozen.render_codes(&wg, &wt, &vs, g.arch().output_resolution)?;
        images.extend(Image::batch_from_tensor(&out.image)?);
    }
    let ranges = &g.prior().ranges;
    Ok(InversionCorpus {
        specs: draws
            .iter()
            .enumerate()
            .map(|(i, m)| SceneSpec { coeffs: m.coeffs.clone(), identity_id: i as u64, seed })
            .collect(),
        attributes: draws.iter().map(|m| attributes_of(&m.coeffs, ranges)).collect(),
        codes: draws
            .into_iter()
            .map(|m| SampleCodes { w_geo: m.w_geo, w_tex: m.w_tex, d: m.d })
            .collect(),
        images,
    })
}
