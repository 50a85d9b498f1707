//! Deterministic CPU preview renderer.
//!
//! Gaussians are projected with the linearized (Jacobian) camera model, sorted
//! front to back once, and alpha-composited per pixel:
//! `C = Σ c_i α_i Π_{j<i} (1 − α_j)` over a black background.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::{Error, Result};

const NEAR: f64 = 1e-2;
/// Added to the 2D covariance diagonal (px²) when it is numerically singular.
const SINGULAR_PAD: f64 = 0.3;
/// Mahalanobis² cutoff, 3σ.
const CUTOFF: f64 = 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    fn basis(&self) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(Error::Contract(format!("fov {} outside (0, 180)", self.vertical_fov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("image size must be nonzero".into()));
        }
        let forward = Vector3::from(self.look_at) - Vector3::from(self.eye);
        let right = forward.cross(&Vector3::from(self.up));
        if forward.norm() < 1e-12 || right.norm() < 1e-12 * forward.norm() {
            return Err(Error::Contract("degenerate camera basis".into()));
        }
        let forward = forward.normalize();
        let right = right.normalize();
        let up = right.cross(&forward);
        Ok((right, up, forward))
    }

    fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.vertical_fov.to_radians()).tan()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major linear RGB.
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

struct Splat {
    center: Vector2<f32>,
    conic: Matrix2<f32>,
    color: [f32; 3],
    opacity: f32,
    // inclusive pixel bounds
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
}

fn project(cloud: &GaussianCloud, cam: &Camera) -> Result<Vec<Splat>> {
    let (right, up, forward) = cam.basis()?;
    let view = Matrix3::from_rows(&[right.transpose(), up.transpose(), forward.transpose()]);
    let f = cam.focal();
    let (cx, cy) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    let eye = Vector3::from(cam.eye);

    let mut depth_sorted: Vec<(f64, usize)> = Vec::new();
    let mut projected = Vec::new();
    for g in &cloud.gaussians {
        let p = view * (Vector3::from(g.position) - eye);
        if p.z <= NEAR {
            continue;
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ));
        let r = q.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&Vector3::from(g.scale()));
        let m = r * s;
        let sigma = m * m.transpose();
        // pixel v grows downward, hence the sign on the second row
        let j = nalgebra::Matrix2x3::new(
            f / p.z,
            0.0,
            -f * p.x / (p.z * p.z),
            0.0,
            -f / p.z,
            f * p.y / (p.z * p.z),
        );
        let t = j * view;
        let mut cov = t * sigma * t.transpose();
        let det = cov.determinant();
        let scale = cov.trace().powi(2).max(f64::MIN_POSITIVE);
        if !(det > 1e-12 * scale) {
            cov[(0, 0)] += SINGULAR_PAD;
            cov[(1, 1)] += SINGULAR_PAD;
        }
        let Some(conic) = cov.try_inverse() else { continue };
        let center = Vector2::new(cx + f * p.x / p.z, cy - f * p.y / p.z);
        let rx = 3.0 * cov[(0, 0)].sqrt();
        let ry = 3.0 * cov[(1, 1)].sqrt();
        // pixel centers sit at (i + 0.5)
        let x0 = (center.x - rx - 0.5).ceil() as i64;
        let x1 = (center.x + rx - 0.5).floor() as i64;
        let y0 = (center.y - ry - 0.5).ceil() as i64;
        let y1 = (center.y + ry - 0.5).floor() as i64;
        if x1 < 0 || y1 < 0 || x0 >= cam.width as i64 || y0 >= cam.height as i64 {
            continue;
        }
        depth_sorted.push((p.z, projected.len()));
        projected.push(Splat {
            center: center.cast(),
            conic: conic.cast(),
            color: g.color.map(|c| c as f32),
            opacity: g.opacity as f32,
            x0,
            x1,
            y0,
            y1,
        });
    }
    // stable sort: equal depths keep input order
    depth_sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut slots: Vec<Option<Splat>> = projected.into_iter().map(Some).collect();
    Ok(depth_sorted
        .into_iter()
        .map(|(_, k)| slots[k].take().expect("each splat is taken once"))
        .collect())
}

/// Render `cloud` from `cam`.
pub fn render(cloud: &GaussianCloud, cam: &Camera) -> Result<Image> {
    let splats = project(cloud, cam)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut pixels = vec![[0.0f32; 3]; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let yi = y as i64;
        let active: Vec<&Splat> = splats.iter().filter(|s| s.y0 <= yi && yi <= s.y1).collect();
        let py = y as f32 + 0.5;
        for (x, out) in row.iter_mut().enumerate() {
            let xi = x as i64;
            let px = x as f32 + 0.5;
            let mut transmittance = 1.0f32;
            let mut color = [0.0f32; 3];
            for s in active.iter().filter(|s| s.x0 <= xi && xi <= s.x1) {
                let d = Vector2::new(px - s.center.x, py - s.center.y);
                let m = (d.transpose() * s.conic * d)[(0, 0)];
                if m > CUTOFF as f32 {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * m).exp();
                for c in 0..3 {
                    color[c] += s.color[c] * alpha * transmittance;
                }
                transmittance *= 1.0 - alpha;
            }
            *out = color;
        }
    });
    Ok(Image {
        width: cam.width,
        height: cam.height,
        pixels,
    })
}

/// Write an 8-bit RGB PNG.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_png(image, BufWriter::new(file))
}

pub fn encode_png<W: std::io::Write>(image: &Image, writer: W) -> Result<()> {
    let mut enc = png::Encoder::new(writer, image.width, image.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    w.write_image_data(&image.to_rgb8())
        .map_err(|e| Error::Image(e.to_string()))?;
    w.finish().map_err(|e| Error::Image(e.to_string()))
}
