use std::collections::BTreeMap;

use crate::config::MorphMode;
use crate::encoder::{Encoder, StyleCode};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::image::Image;
use crate::scene::{AttributeVector, MorphCoeffs};

use super::FlowModel;

/// Frozen models used by image-level editing.
pub struct EditPipeline<'a> {
    pub generator: &'a Generator,
    pub encoder: &'a Encoder,
    pub flows: Option<&'a FlowModel>,
    pub mode: MorphMode,
}

impl EditPipeline<'_> {
    /// Encodes one image; `oracle` is needed in oracle mode.
    pub fn invert(&self, image: &Image, oracle: Option<&MorphCoeffs>) -> Result<(StyleCode, Vec<f64>)> {
        let o = oracle.map(|c| vec![c.clone()]);
        Ok(self.encoder.encode(std::slice::from_ref(image), self.mode, o.as_deref())?.remove(0))
    }

    pub fn render(&self, w: &StyleCode, d: &[f64]) -> Result<Image> {
        let res = self.generator.arch().output_resolution;
        let out = self.generator.render_codes(&[w.w_geo.clone()], &[w.w_tex.clone()], &[d.to_vec()], res)?;
        Ok(Image::batch_from_tensor(&out.image)?.remove(0))
    }
}

/// Encode, edit the routed branch codes through the flows, and re-render
/// with the original view code.
pub fn edit_image(
    p: &EditPipeline,
    image: &Image,
    oracle: Option<&MorphCoeffs>,
    attributes: &AttributeVector,
    edits: &BTreeMap<String, f64>,
) -> Result<Image> {
    let (w, d) = p.invert(image, oracle)?;
    if edits.is_empty() {
        return p.render(&w, &d);
    }
    let flows = p.flows.ok_or_else(|| Error::arg("editing needs a flow checkpoint"))?;
    let (g, t) = flows.edit_codes(&w.w_geo, &w.w_tex, attributes, edits)?;
    p.render(&StyleCode { w_geo: g, w_tex: t }, &d)
}

/// Geometry code and view of the first image with the texture code of the
/// second.
pub fn texture_transfer(
    p: &EditPipeline,
    geo_source: &Image,
    tex_source: &Image,
    oracles: Option<(&MorphCoeffs, &MorphCoeffs)>,
) -> Result<Image> {
    let (wg, d) = p.invert(geo_source, oracles.map(|o| o.0))?;
    let (wt, _) = p.invert(tex_source, oracles.map(|o| o.1))?;
    p.render(&StyleCode { w_geo: wg.w_geo, w_tex: wt.w_tex }, &d)
}
