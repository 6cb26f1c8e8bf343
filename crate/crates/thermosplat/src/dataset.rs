//! On-disk RGB-T datasets.
//!
//! ```text
//! dataset/
//!   transforms.json
//!   rgb/000.png        8-bit RGB
//!   thermal/000.pfm    one channel, degrees Celsius
//! ```
//!
//! `transforms.json` holds shared intrinsics, the temperature bounds and one entry per
//! frame with a 4x4 camera-to-world matrix in the OpenGL convention (`+y` up, looking
//! down `-z`). Unknown keys are ignored.
//!
//! ```json
//! {
//!   "t_min": -20.0, "t_max": 120.0,
//!   "width": 64, "height": 64, "fx": 110.0, "fy": 110.0, "cx": 32.0, "cy": 32.0,
//!   "frames": [ { "name": "000", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]] } ]
//! }
//! ```
//!
//! Frame image paths default to `rgb/<name>.png` and `thermal/<name>.pfm` and may be
//! overridden per frame with `rgb` / `thermal` keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermosplat_core::math::{self, Mat3};
use thermosplat_core::model::View;
use thermosplat_core::radiation::RadiationConfig;
use thermosplat_core::raster::Camera;

use crate::error::{Error, Result};
use crate::pfm::{self, FloatImage};
use crate::png_io;

pub const MANIFEST: &str = "transforms.json";

fn default_t_min() -> f64 {
    -20.0
}

fn default_t_max() -> f64 {
    120.0
}

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<String>,
    pub transform_matrix: [[f64; 4]; 4],
}

impl Frame {
    pub fn rgb_path(&self) -> String {
        self.rgb.clone().unwrap_or_else(|| format!("rgb/{}.png", self.name))
    }

    pub fn thermal_path(&self) -> String {
        self.thermal.clone().unwrap_or_else(|| format!("thermal/{}.pfm", self.name))
    }
}

impl Manifest {
    pub fn radiation(&self) -> RadiationConfig {
        RadiationConfig { t_min: self.t_min, t_max: self.t_max, ..RadiationConfig::default() }
    }

    pub fn camera(&self, frame: &Frame) -> Result<Camera> {
        let (rotation, translation) = world_to_camera(&frame.transform_matrix)
            .map_err(|m| Error::Dataset(format!("frame `{}`: {m}", frame.name)))?;
        let cam = Camera {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation,
            translation,
            near: self.near,
            far: self.far,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// OpenGL camera-to-world to the rasterizer's world-to-camera (`+y` down, `+z` forward).
pub fn world_to_camera(c2w: &[[f64; 4]; 4]) -> std::result::Result<(Mat3, [f64; 3]), String> {
    if c2w.iter().flatten().any(|v| !v.is_finite()) {
        return Err(String::from("transform has non-finite entries"));
    }
    if c2w[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(format!("bottom row must be [0, 0, 0, 1], got {:?}", c2w[3]));
    }
    // flip the y and z axes: c2w_cv = c2w_gl * diag(1, -1, -1)
    let r_c2w: Mat3 = std::array::from_fn(|i| [c2w[i][0], -c2w[i][1], -c2w[i][2]]);
    let r = math::mat3_transpose(&r_c2w);
    let rrt = math::mat3_mul(&r, &r_c2w);
    for (i, row) in rrt.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > 1e-6 {
                return Err(String::from("rotation block is not orthonormal"));
            }
        }
    }
    let center = [c2w[0][3], c2w[1][3], c2w[2][3]];
    let t = math::scale3(&math::mat3_vec(&r, &center), -1.0);
    Ok((r, t))
}

pub fn camera_to_world(cam: &Camera) -> [[f64; 4]; 4] {
    let r_c2w = math::mat3_transpose(&cam.rotation);
    let c = cam.center();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i] = [r_c2w[i][0], -r_c2w[i][1], -r_c2w[i][2], c[i]];
    }
    m[3] = [0.0, 0.0, 0.0, 1.0];
    m
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Thermal images normalized to `[0, 1]` with the manifest bounds.
    pub views: Vec<View>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if !(m.t_min < m.t_max) {
        return Err(Error::Dataset(format!("need t_min < t_max, got {} / {}", m.t_min, m.t_max)));
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    check_unposed(dir, &manifest)?;
    let rad = manifest.radiation();
    let mut views = Vec::with_capacity(manifest.frames.len());
    for f in &manifest.frames {
        let camera = manifest.camera(f)?;
        let rgb_path = dir.join(f.rgb_path());
        let th_path = dir.join(f.thermal_path());
        for p in [&rgb_path, &th_path] {
            if !p.is_file() {
                return Err(Error::Dataset(format!("frame `{}`: missing file {}", f.name, p.display())));
            }
        }
        let rgb = png_io::load_rgb(&rgb_path)?;
        let th = pfm::load(&th_path)?;
        for (what, w, h, c) in [("rgb", rgb.width, rgb.height, 3), ("thermal", th.width, th.height, 1)] {
            let ch = if what == "rgb" { 3 } else { th.channels };
            if (w, h) != (manifest.width, manifest.height) || ch != c {
                return Err(Error::Dataset(format!(
                    "frame `{}`: {what} image is {w}x{h}x{ch}, expected {}x{}x{c}",
                    f.name, manifest.width, manifest.height
                )));
            }
        }
        // bounds that f32 cannot represent exactly may round outward when written
        let tol = 1e-6 * (manifest.t_min.abs() + manifest.t_max.abs());
        let (lo, hi) = (manifest.t_min - tol, manifest.t_max + tol);
        if let Some(k) = th.data.iter().position(|&v| !(v as f64 >= lo && v as f64 <= hi)) {
            return Err(Error::Dataset(format!(
                "frame `{}`: temperature {} C at pixel ({}, {}) is outside [{}, {}]",
                f.name,
                th.data[k],
                k % th.width,
                k / th.width,
                manifest.t_min,
                manifest.t_max
            )));
        }
        let mut thermal = th.to_image();
        thermal.data.iter_mut().for_each(|v| *v = rad.normalize(*v));
        views.push(View { camera, rgb, thermal });
    }
    Ok(Dataset { manifest, views })
}

fn check_unposed(dir: &Path, m: &Manifest) -> Result<()> {
    let mut known: BTreeSet<PathBuf> = BTreeSet::new();
    for f in &m.frames {
        known.insert(PathBuf::from(f.rgb_path()));
        known.insert(PathBuf::from(f.thermal_path()));
    }
    for (sub, ext) in [("rgb", "png"), ("thermal", "pfm")] {
        let Ok(entries) = std::fs::read_dir(dir.join(sub)) else { continue };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(&format!(".{ext}")))
            .collect();
        names.sort();
        for n in names {
            let rel = PathBuf::from(sub).join(&n);
            if !known.contains(&rel) {
                return Err(Error::Dataset(format!("{} has no pose in {MANIFEST}", rel.display())));
            }
        }
    }
    Ok(())
}

/// Thermal image in Celsius at `f32` precision.
pub fn thermal_celsius(thermal: &thermosplat_core::image::Image, rad: &RadiationConfig) -> FloatImage {
    let mut out = FloatImage::from_image(&thermal.map(|t| rad.denormalize(t)));
    out.data.iter_mut().for_each(|v| *v = v.clamp(rad.t_min as f32, rad.t_max as f32));
    out
}

pub fn frame_name(i: usize) -> String {
    format!("{i:03}")
}

/// Write `views` (thermal normalized with `rad`) in the layout above. Cameras must share intrinsics.
pub fn write(dir: &Path, views: &[View], rad: &RadiationConfig) -> Result<Manifest> {
    let first = views.first().ok_or_else(|| Error::Dataset(String::from("no views to write")))?;
    let c0 = &first.camera;
    for sub in ["rgb", "thermal"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(Error::io(&p))?;
    }
    let mut frames = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let c = &v.camera;
        if (c.width, c.height, c.fx, c.fy, c.cx, c.cy, c.near, c.far) != (c0.width, c0.height, c0.fx, c0.fy, c0.cx, c0.cy, c0.near, c0.far) {
            return Err(Error::Dataset(format!("view {i} has different intrinsics from view 0")));
        }
        let frame = Frame { name: frame_name(i), rgb: None, thermal: None, transform_matrix: camera_to_world(c) };
        png_io::save_rgb(&dir.join(frame.rgb_path()), &v.rgb)?;
        pfm::save(&dir.join(frame.thermal_path()), &thermal_celsius(&v.thermal, rad))?;
        frames.push(frame);
    }
    let m = Manifest {
        t_min: rad.t_min,
        t_max: rad.t_max,
        width: c0.width,
        height: c0.height,
        fx: c0.fx,
        fy: c0.fy,
        cx: c0.cx,
        cy: c0.cy,
        near: c0.near,
        far: c0.far,
        frames,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(Error::io(&path))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        let rad = RadiationConfig { t_min: -20.0, t_max: 120.0, ..RadiationConfig::default() };
        assert_eq!(rad.normalize(50.0), 0.5);
        assert_eq!(rad.normalize(-20.0), 0.0);
        assert_eq!(rad.normalize(120.0), 1.0);
    }

    #[test]
    fn pose_conversion_inverts() {
        let cam = Camera::look_at(&[1.0, -2.0, 3.0], &[0.1, 0.2, -0.3], &[0.0, 0.0, 1.0], 8, 6, 10.0);
        let (r, t) = world_to_camera(&camera_to_world(&cam)).unwrap();
        for i in 0..3 {
            assert!((t[i] - cam.translation[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((r[i][j] - cam.rotation[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_gl_pose_looks_down_negative_z() {
        let m = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 4.0], [0.0, 0.0, 0.0, 1.0]];
        let (r, t) = world_to_camera(&m).unwrap();
        let p = math::add3(&math::mat3_vec(&r, &[0.0, 1.0, 0.0]), &t);
        // a point at the origin, shifted up, is in front of the camera and above center
        assert!((p[2] - 4.0).abs() < 1e-12);
        assert!(p[1] < 0.0);
    }

    #[test]
    fn bad_poses_are_rejected() {
        let mut m = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 4.0], [0.0, 0.0, 0.0, 1.0]];
        m[0][0] = 2.0;
        assert!(world_to_camera(&m).is_err());
        m[0][0] = 1.0;
        m[3][3] = 2.0;
        assert!(world_to_camera(&m).is_err());
    }
}
