use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{AttributeVector, D_SHAPE};
use crate::encoder::CoeffRegressor;

fn check_pair(x: &Image, y: &Image) -> Result<()> {
    if x.resolution() != y.resolution() {
        return Err(Error::arg(format!("image sizes differ: {} vs {}", x.resolution(), y.resolution())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio at unit range, capped at `cap` dB.
pub fn psnr(x: &Image, y: &Image, cap: f64) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.data().len() as f64;
    let mse = x.data().iter().zip(y.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok((-10.0 * mse.log10()).min(cap))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `n × n` plane.
fn filter(plane: &[f64], n: usize, g: &[f64]) -> Vec<f64> {
    let w = g.len();
    let m = n + 1 - w;
    let mut rows = vec![0.0; n * m];
    for y in 0..n {
        for x in 0..m {
            rows[y * m + x] = (0..w).map(|k| g[k] * plane[y * n + x + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            out[y * m + x] = (0..w).map(|k| g[k] * rows[(y + k) * m + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions and channels, with a Gaussian
/// window and stabilizers `(0.01)²`, `(0.03)²`.
pub fn ssim(x: &Image, y: &Image, window: usize, sigma: f64) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.resolution();
    if window == 0 || window > n {
        return Err(Error::arg(format!("SSIM window {window} does not fit a {n}x{n} image")));
    }
    let g = gaussian_window(window, sigma);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let a: Vec<f64> = x.data()[c * n * n..(c + 1) * n * n].iter().map(|v| *v as f64).collect();
        let b: Vec<f64> = y.data()[c * n * n..(c + 1) * n * n].iter().map(|v| *v as f64).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
        let (ma, mb) = (filter(&a, n, &g), filter(&b, n, &g));
        let (saa, sbb, sab) = (filter(&aa, n, &g), filter(&bb, n, &g), filter(&ab, n, &g));
        for i in 0..ma.len() {
            let (mu1, mu2) = (ma[i], mb[i]);
            let v1 = saa[i] - mu1 * mu1;
            let v2 = sbb[i] - mu2 * mu2;
            let cov = sab[i] - mu1 * mu2;
            total += ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Cosine similarity of two vectors; `0` when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine between the shape coefficients the regressor predicts for the two
/// images.
pub fn identity_score(regressor: &CoeffRegressor, x: &Image, y: &Image) -> Result<f64> {
    if !regressor.is_trained() {
        return Err(Error::arg("identity score needs a trained coefficient regressor"));
    }
    check_pair(x, y)?;
    if x == y {
        return Ok(1.0);
    }
    let p = regressor.predict_normalized(&[x.clone(), y.clone()])?;
    Ok(cosine(&p[0][..D_SHAPE], &p[1][..D_SHAPE]))
}

/// Mean over frames after the first and over components of
/// `|a_i − a_1|`.
pub fn attribute_inconsistency(preds: &[AttributeVector]) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::arg("attribute inconsistency needs at least two frames"));
    }
    let first = preds[0].values();
    let mut s = 0.0;
    let mut n = 0usize;
    for p in &preds[1..] {
        for (a, b) in p.values().iter().zip(first) {
            s += (a - b).abs();
            n += 1;
        }
    }
    Ok(s / n as f64)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `0` if either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Intersection over union of two opacity maps thresholded at 0.5.
pub fn mask_iou(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (*x > 0.5, *y > 0.5);
        inter += (p && q) as usize;
        uni += (p || q) as usize;
    }
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut r = crate::nn::seeded_rng(seed, "img");
        Image::new(n, (0..3 * n * n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Per-window SSIM straight from the definition.
    fn ssim_brute(x: &Image, y: &Image, w: usize, sigma: f64) -> f64 {
        let n = x.resolution();
        let g = gaussian_window(w, sigma);
        let (c1, c2) = (1e-4, 9e-4);
        let mut vals = Vec::new();
        for c in 0..3 {
            for oy in 0..=n - w {
                for ox in 0..=n - w {
                    let (mut m1, mut m2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..w {
                        for j in 0..w {
                            let k = g[i] * g[j];
                            let a = x.get(c, oy + i, ox + j) as f64;
                            let b = y.get(c, oy + i, ox + j) as f64;
                            m1 += k * a;
                            m2 += k * b;
                            s11 += k * a * a;
                            s22 += k * b * b;
                            s12 += k * a * b;
                        }
                    }
                    let (v1, v2, cv) = (s11 - m1 * m1, s22 - m2 * m2, s12 - m1 * m2);
                    vals.push(((2.0 * m1 * m2 + c1) * (2.0 * cv + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2)));
                }
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let z = Image::filled(8, [0.0; 3]);
        let o = Image::filled(8, [1.0; 3]);
        assert_eq!(psnr(&z, &o, 99.0).unwrap(), 0.0);
        assert_eq!(psnr(&z, &z, 99.0).unwrap(), 99.0);
        let h = Image::filled(8, [0.1; 3]);
        assert!((psnr(&z, &h, 99.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&z, &Image::filled(4, [0.0; 3]), 99.0).is_err());
    }

    #[test]
    fn ssim_matches_direct_definition() {
        let x = random_image(16, 1);
        let y = random_image(16, 2);
        assert!((ssim(&x, &x, 7, 1.5).unwrap() - 1.0).abs() < 1e-12);
        let a = ssim(&x, &y, 7, 1.5).unwrap();
        let b = ssim_brute(&x, &y, 7, 1.5);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        assert!((a - ssim(&y, &x, 7, 1.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn inconsistency_arithmetic() {
        let f = |v: f64| AttributeVector::new(vec![v; 4]).unwrap();
        assert!((attribute_inconsistency(&[f(0.5), f(0.6), f(0.6)]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(attribute_inconsistency(&[f(0.3), f(0.3)]).unwrap(), 0.0);
        assert!(attribute_inconsistency(&[f(0.3)]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.1, 0.3, 0.2, 0.5, 0.9]) - 0.9).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn iou_and_cosine() {
        assert_eq!(mask_iou(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]), 1.0 / 3.0);
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
    }
}
