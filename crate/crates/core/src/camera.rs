//! Pinhole camera orbiting the head centre.
//!
//! The camera sits at `R(yaw, pitch, roll) * (0, 0, distance)` and looks at the
//! origin, with `R = R_y(yaw) R_x(pitch) R_z(roll)`. Pixel `(row, col)` maps to
//! image-plane coordinates `u = 2 (col + 0.5) / res - 1` (right) and
//! `v = 1 - 2 (row + 0.5) / res` (up).

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub tan_half_fov: f64,
    pub distance: f64,
}

/// Row-major rotation `R_y(yaw) R_x(pitch) R_z(roll)`.
pub fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&matmul3(&ry, &rx), &rz)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

impl Camera {
    /// `fov` is the full vertical field of view in radians.
    pub fn new(fov: f64, distance: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        let r = rotation(yaw, pitch, roll);
        let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
        let ez = col(2);
        Self {
            origin: scale(ez, distance),
            right: col(0),
            up: col(1),
            forward: scale(ez, -1.0),
            tan_half_fov: (fov * 0.5).tan(),
            distance,
        }
    }

    /// Unit ray direction through pixel centre `(row, col)`.
    pub fn ray_dir(&self, row: usize, col: usize, res: usize) -> Vec3 {
        let (u, v) = pixel_uv(row, col, res);
        let d = add(
            self.forward,
            add(scale(self.right, u * self.tan_half_fov), scale(self.up, v * self.tan_half_fov)),
        );
        normalize(d)
    }
}

pub fn pixel_uv(row: usize, col: usize, res: usize) -> (f64, f64) {
    let u = 2.0 * (col as f64 + 0.5) / res as f64 - 1.0;
    let v = 1.0 - 2.0 * (row as f64 + 0.5) / res as f64;
    (u, v)
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}
