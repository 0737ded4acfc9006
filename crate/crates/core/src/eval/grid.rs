use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Multiview,
    AttributeSweep,
    TextureTransfer,
    VideoStrip,
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiview" => Ok(Self::Multiview),
            "attribute-sweep" => Ok(Self::AttributeSweep),
            "texture-transfer" => Ok(Self::TextureTransfer),
            "video-strip" => Ok(Self::VideoStrip),
            _ => Err(Error::arg(format!("unknown grid kind `{s}`"))),
        }
    }
}

/// Row and column labels written next to the grid image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabels {
    pub kind: GridKind,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub tile: usize,
    pub gap: usize,
}

pub const GRID_GAP: usize = 2;

/// Tiles `rows × cols` equal-size images with a white gap.
pub fn tile_grid(tiles: &[Vec<Image>]) -> Result<Image> {
    let rows = tiles.len();
    let cols = tiles.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || tiles.iter().any(|r| r.len() != cols) {
        return Err(Error::arg("grid needs a nonempty rectangular set of tiles"));
    }
    let n = tiles[0][0].resolution();
    if tiles.iter().flatten().any(|t| t.resolution() != n) {
        return Err(Error::arg("grid tiles differ in size"));
    }
    let (h, w) = (rows * n + (rows - 1) * GRID_GAP, cols * n + (cols - 1) * GRID_GAP);
    let side = h.max(w);
    let mut out = Image::filled(side, [1.0; 3]);
    for (r, row) in tiles.iter().enumerate() {
        for (c, t) in row.iter().enumerate() {
            let (oy, ox) = (r * (n + GRID_GAP), c * (n + GRID_GAP));
            for ch in 0..3 {
                for y in 0..n {
                    for x in 0..n {
                        out.set(ch, oy + y, ox + x, t.get(ch, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reads tile `(r, c)` back out of a grid made by [`tile_grid`].
pub fn grid_tile(grid: &Image, tile: usize, r: usize, c: usize) -> Result<Image> {
    let (oy, ox) = (r * (tile + GRID_GAP), c * (tile + GRID_GAP));
    if oy + tile > grid.resolution() || ox + tile > grid.resolution() {
        return Err(Error::arg("tile index outside the grid"));
    }
    let mut out = Image::filled(tile, [0.0; 3]);
    for ch in 0..3 {
        for y in 0..tile {
            for x in 0..tile {
                out.set(ch, y, x, grid.get(ch, oy + y, ox + x));
            }
        }
    }
    Ok(out)
}

/// Writes `out_path` (PNG) and `out_path` with a `.json` extension (labels).
pub fn emit_grid(kind: GridKind, tiles: &[Vec<Image>], rows: Vec<String>, cols: Vec<String>, out_path: &Path) -> Result<()> {
    let grid = tile_grid(tiles)?;
    if rows.len() != tiles.len() || cols.len() != tiles[0].len() {
        return Err(Error::arg("grid labels do not match the tile layout"));
    }
    grid.save_png(out_path)?;
    let labels = GridLabels { kind, rows, cols, tile: tiles[0][0].resolution(), gap: GRID_GAP };
    write_atomic(&out_path.with_extension("json"), serde_json::to_string_pretty(&labels)?.as_bytes())
}
