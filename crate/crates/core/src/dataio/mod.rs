//! Image and label files, palettes, synthetic data and checkpoints.
//!
//! Images are binary PPM scaled to `[0, 1]`; label maps are binary PGM whose
//! values are class ids, with 255 marking ignored pixels. A dataset
//! directory holds `images/NAME.ppm` and `labels/NAME.pgm` pairs.

mod checkpoint;
mod palette;
mod pnm;
mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ops::IGNORE_ID;
use crate::tensor::Tensor;

pub use checkpoint::{
    checkpoint_layout, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    CheckpointLayout, MAGIC, VERSION,
};
pub use palette::{colorize, decolorize, Palette, PaletteEntry};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, Raster};
pub use synth::{synth_dataset, SynthConfig};

/// Row-major grid of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || ids.len() != height * width {
            return Err(Error::shape(format!(
                "{} label ids for a {width}x{height} grid",
                ids.len()
            )));
        }
        Ok(LabelMap { height, width, ids })
    }

    /// First id that is neither below `k` nor the ignore id.
    pub fn first_invalid(&self, k: usize) -> Option<(usize, u8)> {
        self.ids
            .iter()
            .position(|&id| id != IGNORE_ID && id as usize >= k)
            .map(|i| (i, self.ids[i]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub labels: LabelMap,
    pub name: String,
}

impl Sample {
    pub fn new(image: Tensor<f32>, labels: LabelMap, name: impl Into<String>) -> Result<Self> {
        let d = image.dims();
        if d.n != 1 || d.c != 3 || (d.h, d.w) != (labels.height, labels.width) {
            return Err(Error::shape(format!(
                "image {d} does not match a {}x{} label grid",
                labels.width, labels.height
            )));
        }
        Ok(Sample {
            image,
            labels,
            name: name.into(),
        })
    }

    /// The image as 8-bit RGB, rounding to the nearest level.
    pub fn image_rgb(&self) -> Vec<u8> {
        let d = self.image.dims();
        let plane = d.plane();
        let data = self.image.data();
        let mut out = Vec::with_capacity(3 * plane);
        for px in 0..plane {
            for c in 0..3 {
                out.push((data[c * plane + px].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

pub fn image_from_raster(r: &Raster) -> Result<Tensor<f32>> {
    if r.channels != 3 {
        return Err(Error::shape(format!(
            "expected an RGB raster, got {} channels",
            r.channels
        )));
    }
    let plane = r.width * r.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (px, rgb) in r.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + px] = f32::from(rgb[c]) / 255.0;
        }
    }
    Tensor::from_vec((1, 3, r.height, r.width), data)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    image_from_raster(&decode_ppm(&std::fs::read(path)?)?)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let r = decode_pgm(&std::fs::read(path)?)?;
    LabelMap::new(r.height, r.width, r.data)
}

/// Every label id is below `k` or ignored, and all samples share one size.
pub fn validate_dataset(samples: &[Sample], k: usize) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::Data("dataset is empty".into()));
    };
    for s in samples {
        if (s.labels.height, s.labels.width) != (first.labels.height, first.labels.width) {
            return Err(Error::Data(format!(
                "sample `{}` is {}x{}, `{}` is {}x{}",
                s.name,
                s.labels.width,
                s.labels.height,
                first.name,
                first.labels.width,
                first.labels.height
            )));
        }
        if let Some((i, id)) = s.labels.first_invalid(k) {
            return Err(Error::Data(format!(
                "sample `{}`: label {id} at pixel ({}, {}) is not a class below {k} or the ignore id {IGNORE_ID}",
                s.name,
                i / s.labels.width,
                i % s.labels.width
            )));
        }
    }
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Load `images/*.ppm` with their `labels/*.pgm` partners, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = sorted_files(&dir.join("images"), "ppm")?;
    if images.is_empty() {
        return Err(Error::Data(format!(
            "no .ppm files in {}",
            dir.join("images").display()
        )));
    }
    images
        .iter()
        .map(|img| {
            let stem = img
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("unusable file name {}", img.display())))?;
            let lbl = dir.join("labels").join(format!("{stem}.pgm"));
            let with_path = |p: &Path, e: Error| match e {
                Error::Format {
                    what,
                    offset,
                    message,
                } => Error::Format {
                    what,
                    offset,
                    message: format!("{message} ({})", p.display()),
                },
                Error::Io(io) => Error::Data(format!("{}: {io}", p.display())),
                other => other,
            };
            let image = load_image(img).map_err(|e| with_path(img, e))?;
            let labels = load_labels(&lbl).map_err(|e| with_path(&lbl, e))?;
            Sample::new(image, labels, stem)
        })
        .collect()
}

/// Write samples in the layout read by [`load_dataset`].
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("labels"))?;
    for s in samples {
        let (w, h) = (s.labels.width, s.labels.height);
        std::fs::write(
            dir.join("images").join(format!("{}.ppm", s.name)),
            encode_ppm(w, h, &s.image_rgb())?,
        )?;
        std::fs::write(
            dir.join("labels").join(format!("{}.pgm", s.name)),
            encode_pgm(w, h, &s.labels.ids)?,
        )?;
    }
    Ok(())
}
