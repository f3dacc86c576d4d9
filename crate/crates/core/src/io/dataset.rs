//! Synthetic multi-view datasets and their on-disk layout.
//!
//! A dataset directory holds
//!
//! - `cameras.csv`: one row per camera with split, intrinsics, position and
//!   the row-major world-from-camera rotation;
//! - `frame_%04d_cam_%02d.ppm` (or `.chgr`): one image per frame and camera,
//!   held-out cameras numbered after the training ones;
//! - `meta`: TOML with the scene configuration, seed, image format and frame times;
//! - `manifest.sha256`: `sha256  filename` for every other file.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::Grid;
use crate::analytic::{AnalyticScene, SceneConfig};
use crate::error::{Error, Result};
use crate::radiance::{render_image, RenderMode};
use crate::render::{Camera, Image};

pub const MANIFEST_FILE: &str = "manifest.sha256";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    /// 8-bit binary PPM.
    #[default]
    Ppm,
    /// 64-bit float CHGR slice.
    Chgr,
}

impl ImageFormat {
    fn extension(self) -> &'static str {
        match self {
            Self::Ppm => "ppm",
            Self::Chgr => "chgr",
        }
    }
}

/// Rendered views of an analytic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub config: SceneConfig,
    pub seed: u64,
    pub format: ImageFormat,
    /// Training cameras followed by held-out cameras.
    pub cameras: Vec<Camera>,
    pub train_cameras: usize,
    pub times: Vec<f64>,
    /// Frame-major: `images[frame * cameras.len() + camera]`.
    pub images: Vec<Image>,
}

impl SyntheticSequence {
    pub fn frames(&self) -> usize {
        self.times.len()
    }

    pub fn image(&self, frame: usize, camera: usize) -> &Image {
        &self.images[frame * self.cameras.len() + camera]
    }

    pub fn holdout(&self) -> std::ops::Range<usize> {
        self.train_cameras..self.cameras.len()
    }

    pub fn image_name(&self, frame: usize, camera: usize) -> String {
        format!("frame_{frame:04}_cam_{camera:02}.{}", self.format.extension())
    }

    /// Write the dataset into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let files = self.files()?;
        for (name, bytes) in &files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join(MANIFEST_FILE), manifest(&files))?;
        Ok(())
    }

    /// Read a dataset written by [`SyntheticSequence::save`], checking every hash in the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        verify_manifest(dir)?;
        let meta: Meta = toml::from_str(&std::fs::read_to_string(dir.join("meta"))?).map_err(|e| Error::Format(format!("meta: {e}")))?;
        let (cameras, train_cameras) = read_cameras(&std::fs::read(dir.join("cameras.csv"))?)?;
        let mut seq = Self {
            config: meta.scene,
            seed: meta.seed,
            format: meta.image_format,
            cameras,
            train_cameras,
            times: meta.times,
            images: Vec::new(),
        };
        for f in 0..seq.frames() {
            for c in 0..seq.cameras.len() {
                let path = dir.join(seq.image_name(f, c));
                let img = match seq.format {
                    ImageFormat::Ppm => Image::load_ppm(&path)?,
                    ImageFormat::Chgr => Grid::load(&path)?.to_image()?,
                };
                let cam = &seq.cameras[c];
                if (img.width, img.height) != (cam.width, cam.height) {
                    return Err(Error::Format(format!("{} does not match its camera resolution", path.display())));
                }
                seq.images.push(img);
            }
        }
        Ok(seq)
    }

    /// SHA-256 of the manifest the dataset would be saved with.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(manifest(&self.files()?).as_bytes()))
    }

    /// Every file of the saved layout except the manifest, sorted by name.
    fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = vec![("cameras.csv".to_string(), self.cameras_csv()?), ("meta".to_string(), self.meta_toml()?)];
        for f in 0..self.frames() {
            for c in 0..self.cameras.len() {
                let mut buf = Vec::new();
                match self.format {
                    ImageFormat::Ppm => self.image(f, c).write_ppm(&mut buf)?,
                    ImageFormat::Chgr => {
                        let mut g = Grid::from_image(self.image(f, c));
                        g.time = self.times[f];
                        g.write_to(&mut buf)?
                    }
                }
                files.push((self.image_name(f, c), buf));
            }
        }
        files.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(files)
    }

    fn cameras_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (i, c) in self.cameras.iter().enumerate() {
            let split = if i < self.train_cameras { "train" } else { "holdout" };
            w.serialize(CameraRow::from_camera(i, split, c)).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    fn meta_toml(&self) -> Result<Vec<u8>> {
        let meta = Meta { seed: self.seed, image_format: self.format, times: self.times.clone(), scene: self.config.clone() };
        Ok(toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?.into_bytes())
    }
}

fn manifest(files: &[(String, Vec<u8>)]) -> String {
    files.iter().map(|(n, b)| format!("{}  {n}\n", sha256_hex(b))).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    seed: u64,
    image_format: ImageFormat,
    times: Vec<f64>,
    scene: SceneConfig,
}

#[derive(Serialize, Deserialize)]
struct CameraRow {
    index: usize,
    split: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    px: f64,
    py: f64,
    pz: f64,
    r00: f64,
    r01: f64,
    r02: f64,
    r10: f64,
    r11: f64,
    r12: f64,
    r20: f64,
    r21: f64,
    r22: f64,
}

impl CameraRow {
    fn from_camera(index: usize, split: &str, c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            index,
            split: split.into(),
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            px: c.position.x,
            py: c.position.y,
            pz: c.position.z,
            r00: r[(0, 0)],
            r01: r[(0, 1)],
            r02: r[(0, 2)],
            r10: r[(1, 0)],
            r11: r[(1, 1)],
            r12: r[(1, 2)],
            r20: r[(2, 0)],
            r21: r[(2, 1)],
            r22: r[(2, 2)],
        }
    }

    fn to_camera(&self) -> Result<Camera> {
        let rot = Matrix3::new(self.r00, self.r01, self.r02, self.r10, self.r11, self.r12, self.r20, self.r21, self.r22);
        Camera::new(rot, Vector3::new(self.px, self.py, self.pz), [self.fx, self.fy], [self.cx, self.cy], [self.width, self.height])
    }
}

fn read_cameras(bytes: &[u8]) -> Result<(Vec<Camera>, usize)> {
    let mut rows: Vec<CameraRow> = Vec::new();
    for r in csv::Reader::from_reader(bytes).deserialize() {
        rows.push(r.map_err(|e| Error::Format(format!("cameras.csv: {e}")))?);
    }
    let mut train = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.index != i {
            return Err(Error::Format("cameras.csv rows out of order".into()));
        }
        match r.split.as_str() {
            "train" if train == i => train += 1,
            "holdout" => {}
            other => return Err(Error::Format(format!("camera {i}: unexpected split {other:?}"))),
        }
    }
    Ok((rows.iter().map(CameraRow::to_camera).collect::<Result<_>>()?, train))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Recompute every hash listed in `dir/manifest.sha256`.
pub fn verify_manifest(dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, name) = line.split_once("  ").ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
        if name.contains('/') || name.contains("..") {
            return Err(Error::Format(format!("manifest entry {name:?} escapes the dataset")));
        }
        if sha256_hex(&std::fs::read(dir.join(name))?) != hash {
            return Err(Error::Format(format!("hash mismatch for {name}")));
        }
    }
    Ok(())
}

/// Render every training and held-out view of the ground-truth scene.
///
/// Rendering samples at bin centers, so the output is a pure function of the
/// configuration; `seed` is recorded for bookkeeping.
pub fn synthesize_dataset(config: &SceneConfig, seed: u64, format: ImageFormat) -> Result<SyntheticSequence> {
    let scene = AnalyticScene::from_config(config)?;
    let train = config.cameras.training_cameras(&config.domain)?;
    let train_cameras = train.len();
    let cameras: Vec<Camera> = train.into_iter().chain(config.cameras.holdout_cameras(&config.domain)?).collect();
    if cameras.is_empty() {
        return Err(Error::Config("no cameras".into()));
    }
    for (i, c) in cameras.iter().enumerate() {
        check_camera(&scene, c).map_err(|m| Error::InvalidArgument(format!("camera {i}: {m}")))?;
    }
    let times = config.frame_times();
    let jobs: Vec<(f64, &Camera)> = times.iter().flat_map(|&t| cameras.iter().map(move |c| (t, c))).collect();
    let images = jobs
        .par_iter()
        .map(|(t, c)| render_image(&scene, c, *t, &config.render, RenderMode::Composite))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence { config: config.clone(), seed, format, cameras, train_cameras, times, images })
}

fn check_camera(scene: &AnalyticScene, cam: &Camera) -> std::result::Result<(), String> {
    let center = cam.ray(cam.width / 2, cam.height / 2);
    if center.clip_to(&scene.domain).is_none() {
        return Err("does not see the scene domain".into());
    }
    if let Some(sdf) = &scene.obstacle {
        if sdf.distance(&cam.position) <= 0.0 {
            return Err("sits inside the obstacle".into());
        }
    }
    Ok(())
}
