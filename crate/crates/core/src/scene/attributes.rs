use serde::{Deserialize, Serialize};

use super::{MorphCoeffs, SceneSpec};
use crate::config::CoeffRanges;
use crate::error::{Error, Result};

pub const K: usize = 4;

/// Attribute order used everywhere a vector of attributes appears.
pub const ATTRIBUTE_NAMES: [&str; K] = ["elongation", "feature_size", "hue", "light_elevation"];

pub fn attribute_index(name: &str) -> Result<usize> {
    ATTRIBUTE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector(Vec<f64>);

impl AttributeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != K {
            return Err(Error::arg(format!("attribute vector needs {K} entries, got {}", values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("attribute values must lie in [0, 1]"));
        }
        Ok(Self(values))
    }

    /// Clamps into `[0, 1]`.
    pub fn clipped(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.0[attribute_index(name)?])
    }

    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let mut v = self.0.clone();
        v[attribute_index(name)?] = value;
        Self::new(v)
    }
}

/// Deterministic attribute annotation of a scene.
///
/// With `x̂` the coefficient normalized to `[-1, 1]` over its range:
/// - elongation      = 0.5 + 0.25 (ŝhape₁ − ŝhape₀)   (head height vs width)
/// - feature_size    = 0.5 + 0.25 (ŝhape₃ + ŝhape₄)   (eye and nose size)
/// - hue             = 0.5 + 0.5 âlbedo₀               (skin hue)
/// - light_elevation = 0.5 + 0.5 l̂ight₁
///
/// Each is clamped to `[0, 1]`. The first two read only geometry
/// coefficients, the last two only texture coefficients.
pub fn attribute_oracle(spec: &SceneSpec, ranges: &CoeffRanges) -> AttributeVector {
    attributes_of(&spec.coeffs, ranges)
}

pub fn attributes_of(c: &MorphCoeffs, ranges: &CoeffRanges) -> AttributeVector {
    let n = |v: f64, r: [f64; 2]| 2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0;
    let s = |i: usize| n(c.shape[i], ranges.shape);
    let values = vec![
        0.5 + 0.25 * (s(1) - s(0)),
        0.5 + 0.25 * (s(3) + s(4)),
        0.5 + 0.5 * n(c.albedo[0], ranges.albedo),
        0.5 + 0.5 * n(c.light[1], ranges.light),
    ];
    AttributeVector::clipped(&values).expect("length K")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sample_scene_coeffs;

    #[test]
    fn midpoint_is_half() {
        let r = CoeffRanges::default();
        let spec = SceneSpec { coeffs: MorphCoeffs::neutral(&r), identity_id: 0, seed: 0 };
        let a = attribute_oracle(&spec, &r);
        assert_eq!(a.values(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn geometry_attrs_ignore_texture() {
        let r = CoeffRanges::default();
        let specs = sample_scene_coeffs(3, 10, 10, &r).unwrap();
        for s in &specs {
            let mut t = s.clone();
            t.coeffs.albedo = [0.9, -0.3, 0.2, 0.0, 0.1, 0.5];
            t.coeffs.light = [-0.5, 0.5, 0.1];
            let (a, b) = (attribute_oracle(s, &r), attribute_oracle(&t, &r));
            assert_eq!(a.values()[..2], b.values()[..2]);
            let mut g = s.clone();
            g.coeffs.shape = [0.4; 8];
            g.coeffs.expression = [-0.2; 4];
            let c = attribute_oracle(&g, &r);
            assert_eq!(a.values()[2..], c.values()[2..]);
        }
    }

    #[test]
    fn bad_vectors_rejected() {
        assert!(AttributeVector::new(vec![0.1, 0.2, 0.3]).is_err());
        assert!(AttributeVector::new(vec![0.1, 0.2, 0.3, 1.2]).is_err());
        assert!(matches!(attribute_index("age"), Err(Error::UnknownAttribute(_))));
    }
}
