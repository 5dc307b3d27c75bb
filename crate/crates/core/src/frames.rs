//! Frame directories and raster file formats.
//!
//! A frame directory holds `frame_%05d.png` (RGB), `depth_%05d.pfm` (float32
//! single channel, metric camera-z), `mask_%05d.png` (8-bit, nonzero = tool)
//! and `cameras.json`, a list of camera records matched to frames by their
//! `frame` field (or by position when it is absent).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::camera::{Camera, CameraError, CameraRecord, Frame, FrameInvariant, Raster, RgbImage};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("malformed PFM {path}: {reason}")]
    Pfm { path: PathBuf, reason: String },
    #[error("no frame_*.png files in {0}")]
    NoFrames(PathBuf),
    #[error("missing files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),
    #[error("cameras.json: {0}")]
    CameraFile(String),
    #[error("frame {frame}: invalid camera: {source}")]
    Camera { frame: usize, source: CameraError },
    #[error("frame {frame}: {source}")]
    Invariant { frame: usize, source: FrameInvariant },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameError + '_ {
    move |source| FrameError::Io { path: path.to_path_buf(), source }
}

pub fn read_png_rgb(path: &Path) -> Result<RgbImage, FrameError> {
    let img = image::open(path)
        .map_err(|e| FrameError::Image { path: path.to_path_buf(), reason: e.to_string() })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Raster { width: w as usize, height: h as usize, data })
}

pub fn read_png_mask(path: &Path) -> Result<Raster<bool>, FrameError> {
    let img = image::open(path)
        .map_err(|e| FrameError::Image { path: path.to_path_buf(), reason: e.to_string() })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Raster { width: w as usize, height: h as usize, data: img.pixels().map(|p| p[0] != 0).collect() })
}

/// 8-bit RGB encoding with round-to-nearest quantization.
pub fn rgb_to_bytes(img: &RgbImage) -> Vec<u8> {
    img.data
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect()
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    let enc = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        enc,
        &rgb_to_bytes(img),
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory PNG encoding");
    out
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<(), FrameError> {
    fs::write(path, encode_png_rgb(img)).map_err(io_err(path))
}

pub fn write_png_mask(path: &Path, mask: &Raster<bool>) -> Result<(), FrameError> {
    let bytes: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(path, &bytes, mask.width as u32, mask.height as u32, image::ExtendedColorType::L8)
        .map_err(|e| FrameError::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// Grayscale PFM (`Pf`), little-endian, rows stored bottom to top.
pub fn write_pfm(path: &Path, depth: &Raster<f64>) -> Result<(), FrameError> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            out.extend_from_slice(&(*depth.get(x, y) as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f64>, FrameError> {
    let bad = |reason: &str| FrameError::Pfm { path: path.to_path_buf(), reason: reason.to_string() };
    let mut r = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line).map_err(io_err(path))? == 0 {
            return Err(bad("truncated header"));
        }
        tokens.extend(line.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "Pf" {
        return Err(bad("only single-channel 'Pf' is supported"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated data"))?;
    let mut data = vec![0.0; width * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, row) = (i % width, i / width);
        data[(height - 1 - row) * width + x] = v as f64;
    }
    Ok(Raster { width, height, data })
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>, FrameError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| FrameError::CameraFile(e.to_string()))?;
    let records = if value.is_array() {
        serde_json::from_value::<Vec<CameraRecord>>(value)
    } else {
        serde_json::from_value::<CameraRecord>(value).map(|r| vec![r])
    };
    records.map_err(|e| FrameError::CameraFile(e.to_string()))
}

/// Cameras of `cameras.json`, converted and validated, in file order.
pub fn load_cameras(path: &Path) -> Result<Vec<Camera>, FrameError> {
    read_cameras(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Camera::try_from(r).map_err(|source| FrameError::Camera { frame: r.frame.unwrap_or(i), source })
        })
        .collect()
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<(), FrameError> {
    let recs: Vec<CameraRecord> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| CameraRecord { frame: Some(i), ..CameraRecord::from(c) })
        .collect();
    let text = serde_json::to_string_pretty(&recs).expect("camera records serialize");
    fs::write(path, text).map_err(io_err(path))
}

fn frame_indices(dir: &Path) -> Result<Vec<usize>, FrameError> {
    let mut idx = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let name = entry.map_err(io_err(dir))?.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            if num.len() == 5 {
                if let Ok(i) = num.parse() {
                    idx.push(i);
                }
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Loads every complete frame of `dir` in index order.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>, FrameError> {
    let indices = frame_indices(dir)?;
    if indices.is_empty() {
        return Err(FrameError::NoFrames(dir.to_path_buf()));
    }
    let mut missing = Vec::new();
    for &i in &indices {
        for name in [format!("depth_{i:05}.pfm"), format!("mask_{i:05}.png")] {
            if !dir.join(&name).exists() {
                missing.push(name);
            }
        }
    }
    let cam_path = dir.join("cameras.json");
    if !cam_path.exists() {
        missing.push("cameras.json".into());
    }
    if !missing.is_empty() {
        return Err(FrameError::MissingFiles(missing));
    }

    let records = read_cameras(&cam_path)?;
    let mut frames = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let rec = records
            .iter()
            .find(|r| r.frame == Some(i))
            .or_else(|| records.get(pos).filter(|r| r.frame.is_none()))
            .ok_or_else(|| FrameError::CameraFile(format!("no camera for frame {i}")))?;
        let camera = Camera::try_from(rec).map_err(|source| FrameError::Camera { frame: i, source })?;
        let frame = Frame {
            image: read_png_rgb(&dir.join(format!("frame_{i:05}.png")))?,
            depth: read_pfm(&dir.join(format!("depth_{i:05}.pfm")))?,
            mask: read_png_mask(&dir.join(format!("mask_{i:05}.png")))?,
            camera,
        };
        frame.validate().map_err(|source| FrameError::Invariant { frame: i, source })?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_frames(dir: &Path, frames: &[Frame]) -> Result<(), FrameError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        write_png_rgb(&dir.join(format!("frame_{i:05}.png")), &f.image)?;
        write_pfm(&dir.join(format!("depth_{i:05}.pfm")), &f.depth)?;
        write_png_mask(&dir.join(format!("mask_{i:05}.png")), &f.mask)?;
    }
    let cams: Vec<Camera> = frames.iter().map(|f| f.camera.clone()).collect();
    write_cameras(&dir.join("cameras.json"), &cams)
}
