use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

/// Sliding-window patch geometry. A stride equal to the patch size gives a
/// non-overlapping grid; a smaller stride gives overlapping windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_w: usize,
    pub patch_h: usize,
    pub stride_x: usize,
    pub stride_y: usize,
}

impl PatchConfig {
    pub fn square(size: usize) -> Self {
        PatchConfig {
            patch_w: size,
            patch_h: size,
            stride_x: size,
            stride_y: size,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_w * self.patch_h
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.patch_w == 0 || self.patch_h == 0 || self.stride_x == 0 || self.stride_y == 0 {
            return Err(Error::domain("patch sizes and strides must be positive"));
        }
        if self.patch_w > width || self.patch_h > height {
            return Err(Error::domain(format!(
                "patch {}x{} larger than image {}x{}",
                self.patch_w, self.patch_h, width, height
            )));
        }
        Ok(())
    }

    /// Number of windows per image: `(⌊(w-pw)/sx⌋+1)·(⌊(h-ph)/sy⌋+1)`.
    pub fn patches_per_image(&self, width: usize, height: usize) -> Result<usize> {
        self.validate(width, height)?;
        Ok(((width - self.patch_w) / self.stride_x + 1) * ((height - self.patch_h) / self.stride_y + 1))
    }
}

/// A window cut from image `image` at row-major position `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: usize,
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Cuts `image` into windows in row-major order.
pub fn extract_patches(image_id: usize, image: &GrayImage, cfg: &PatchConfig) -> Result<Vec<Patch>> {
    cfg.validate(image.width, image.height)?;
    let mut out = Vec::with_capacity(cfg.patches_per_image(image.width, image.height)?);
    let mut y = 0;
    while y + cfg.patch_h <= image.height {
        let mut x = 0;
        while x + cfg.patch_w <= image.width {
            let mut pixels = Vec::with_capacity(cfg.patch_len());
            for row in y..y + cfg.patch_h {
                let start = row * image.width + x;
                pixels.extend_from_slice(&image.pixels[start..start + cfg.patch_w]);
            }
            out.push(Patch {
                image: image_id,
                index: out.len(),
                x,
                y,
                width: cfg.patch_w,
                height: cfg.patch_h,
                pixels,
            });
            x += cfg.stride_x;
        }
        y += cfg.stride_y;
    }
    Ok(out)
}
