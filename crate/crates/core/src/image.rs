//! Square RGB images stored planar (CHW) as `f32` in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    res: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(res: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * res * res {
            return Err(Error::arg(format!(
                "image data has {} values, expected 3x{res}x{res}",
                data.len()
            )));
        }
        Ok(Self { res, data })
    }

    pub fn filled(res: usize, rgb: [f32; 3]) -> Self {
        let mut data = vec![0.0; 3 * res * res];
        for (c, v) in rgb.iter().enumerate() {
            data[c * res * res..(c + 1) * res * res].fill(*v);
        }
        Self { res, data }
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.res + y) * self.res + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.res + y) * self.res + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// Left-right mirror.
    pub fn mirror_x(&self) -> Self {
        let mut out = self.clone();
        let r = self.res;
        for c in 0..3 {
            for y in 0..r {
                for x in 0..r {
                    out.set(c, y, x, self.get(c, y, r - 1 - x));
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Rounds to the 16-bit grid used by the on-disk format.
    pub fn quantized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| to_u16(v) as f32 / 65535.0)
            .collect();
        Self { res: self.res, data }
    }

    /// Stacks images into a `(B, 3, R, R)` tensor.
    pub fn batch_to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
        let res = images
            .first()
            .map(|i| i.res)
            .ok_or_else(|| Error::arg("empty image batch"))?;
        let mut buf = Vec::with_capacity(images.len() * 3 * res * res);
        for img in images {
            if img.res != res {
                return Err(Error::arg("mixed resolutions in image batch"));
            }
            buf.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(buf, (images.len(), 3, res, res), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Self::batch_to_tensor(&[self], dtype, device)
    }

    /// Splits a `(B, 3, R, R)` tensor into images.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Image>> {
        let (b, c, h, w) = t.dims4()?;
        if c != 3 || h != w {
            return Err(Error::arg(format!("expected (B,3,R,R), got {:?}", t.dims())));
        }
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let n = 3 * h * w;
        Ok((0..b)
            .map(|i| Image { res: h, data: flat[i * n..(i + 1) * n].to_vec() })
            .collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.res as u32, self.res as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header()?;
        let r = self.res;
        let mut bytes = Vec::with_capacity(6 * r * r);
        for y in 0..r {
            for x in 0..r {
                for c in 0..3 {
                    bytes.extend_from_slice(&to_u16(self.get(c, y, x)).to_be_bytes());
                }
            }
        }
        writer.write_image_data(&bytes)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let dec = png::Decoder::new(BufReader::new(file));
        let mut reader = dec.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.width != info.height {
            return Err(Error::Png(format!("{} is not square", path.display())));
        }
        let r = info.width as usize;
        let mut img = Image::filled(r, [0.0; 3]);
        match (info.color_type, info.bit_depth) {
            (png::ColorType::Rgb, png::BitDepth::Sixteen) => {
                for y in 0..r {
                    for x in 0..r {
                        for c in 0..3 {
                            let o = ((y * r + x) * 3 + c) * 2;
                            let v = u16::from_be_bytes([buf[o], buf[o + 1]]);
                            img.set(c, y, x, v as f32 / 65535.0);
                        }
                    }
                }
            }
            (png::ColorType::Rgb, png::BitDepth::Eight) => {
                for y in 0..r {
                    for x in 0..r {
                        for c in 0..3 {
                            img.set(c, y, x, buf[(y * r + x) * 3 + c] as f32 / 255.0);
                        }
                    }
                }
            }
            other => return Err(Error::Png(format!("unsupported png layout {other:?}"))),
        }
        Ok(img)
    }
}

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// RGB in `[0,1]` to (hue in `[0,1)`, saturation, value).
pub fn rgb_to_hsv(rgb: [f32; 3]) -> (f32, f32, f32) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 1e-8 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max <= 1e-8 { 0.0 } else { d / max };
    (h, s, max)
}
