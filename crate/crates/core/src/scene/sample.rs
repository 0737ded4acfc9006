use rand::{Rng, RngCore};

use super::{MorphCoeffs, SceneSpec, D_ALBEDO, D_DISP, D_EXPR, D_LIGHT, D_SHAPE};
use crate::config::CoeffRanges;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

fn fill<const N: usize, R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> [f64; N] {
    std::array::from_fn(|_| uniform(rng, r))
}

/// One independent draw of every coefficient, in declaration order.
pub fn sample_coeffs<R: Rng + ?Sized>(rng: &mut R, ranges: &CoeffRanges) -> MorphCoeffs {
    let shape = fill::<D_SHAPE, _>(rng, ranges.shape);
    let expression = fill::<D_EXPR, _>(rng, ranges.expression);
    let displacement = fill::<D_DISP, _>(rng, ranges.displacement);
    let albedo = fill::<D_ALBEDO, _>(rng, ranges.albedo);
    let light = fill::<D_LIGHT, _>(rng, ranges.light);
    let camera = [uniform(rng, ranges.fov), uniform(rng, ranges.distance)];
    let pose = [uniform(rng, ranges.yaw), uniform(rng, ranges.pitch), uniform(rng, ranges.roll)];
    MorphCoeffs { shape, expression, displacement, albedo, light, camera, pose }
}

/// Samples `count` scenes over `identities` distinct (shape, albedo) pairs.
///
/// Procedure, on the `"scene-sample"` stream of `seed`:
/// 1. for each identity draw `shape` then `albedo`;
/// 2. sample `i` takes identity `i` when `i < identities`, otherwise a uniform
///    identity index; it then draws expression, displacement, light, fov,
///    distance, yaw, pitch, roll and finally a `u64` per-sample seed.
pub fn sample_scene_coeffs(
    seed: u64,
    count: usize,
    identities: usize,
    ranges: &CoeffRanges,
) -> Result<Vec<SceneSpec>> {
    if count == 0 || identities == 0 {
        return Err(Error::arg("count and identities must be positive"));
    }
    if identities > count {
        return Err(Error::arg("identities must not exceed count"));
    }
    let mut rng = seeded_rng(seed, "scene-sample");
    let ids: Vec<([f64; D_SHAPE], [f64; D_ALBEDO])> = (0..identities)
        .map(|_| {
            let s = fill::<D_SHAPE, _>(&mut rng, ranges.shape);
            let a = fill::<D_ALBEDO, _>(&mut rng, ranges.albedo);
            (s, a)
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = if i < identities { i } else { rng.random_range(0..identities) };
        let (shape, albedo) = ids[id];
        let expression = fill::<D_EXPR, _>(&mut rng, ranges.expression);
        let displacement = fill::<D_DISP, _>(&mut rng, ranges.displacement);
        let light = fill::<D_LIGHT, _>(&mut rng, ranges.light);
        let camera = [uniform(&mut rng, ranges.fov), uniform(&mut rng, ranges.distance)];
        let pose = [
            uniform(&mut rng, ranges.yaw),
            uniform(&mut rng, ranges.pitch),
            uniform(&mut rng, ranges.roll),
        ];
        let sample_seed = rng.next_u64();
        out.push(SceneSpec {
            coeffs: MorphCoeffs { shape, expression, displacement, albedo, light, camera, pose },
            identity_id: id as u64,
            seed: sample_seed,
        });
    }
    Ok(out)
}
