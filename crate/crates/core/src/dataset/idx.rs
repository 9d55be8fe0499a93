//! The IDX container used by MNIST: a big-endian header followed by raw
//! `u8` payload. Gzip-compressed files are detected by their magic bytes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::GrayImage;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(path))
}

fn truncated(path: &Path) -> Error {
    Error::format(format!("IDX file {}", path.display()), "truncated")
}

/// Reads an image file (magic `0x00000803`), scaling pixels to `[0, 1]`.
pub fn read_images(path: &Path) -> Result<Vec<GrayImage>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            format!("IDX file {}", path.display()),
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(format!("IDX file {}", path.display()), "zero image size"));
    }
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(truncated(path));
    }
    Ok(payload
        .chunks_exact(size)
        .take(count)
        .map(|px| GrayImage {
            width: cols,
            height: rows,
            pixels: px.iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect())
}

/// Reads a label file (magic `0x00000801`).
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            format!("IDX file {}", path.display()),
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(truncated(path));
    }
    Ok(payload[..count].to_vec())
}

/// Loads paired image and label files.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(GrayImage, u8)>> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            "IDX pair",
            format!("{} images but {} labels", images.len(), labels.len()),
        ));
    }
    Ok(images.into_iter().zip(labels).collect())
}

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(file, Compression::default())))
    } else {
        Ok(Box::new(file))
    }
}

/// Writes same-sized images; pixels are quantized with `round(255 p)`.
pub fn write_images(path: &Path, images: &[GrayImage]) -> Result<()> {
    let (w, h) = images.first().map_or((0, 0), |im| (im.width, im.height));
    if images.iter().any(|im| im.width != w || im.height != h) {
        return Err(Error::domain("IDX image files require equally sized images"));
    }
    let mut out = open_writer(path)?;
    out.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    out.write_all(&(images.len() as u32).to_be_bytes())?;
    out.write_all(&(h as u32).to_be_bytes())?;
    out.write_all(&(w as u32).to_be_bytes())?;
    for im in images {
        let bytes: Vec<u8> = im.pixels.iter().map(|&p| quantize(p)).collect();
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = open_writer(path)?;
    out.write_all(&LABELS_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn quantize(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn reads_hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(IMAGES_MAGIC, &[2, 2, 3]);
        images.extend_from_slice(&[0, 1, 2, 3, 4, 5, 255, 128, 64, 32, 16, 8]);
        let mut labels = header(LABELS_MAGIC, &[2]);
        labels.extend_from_slice(&[7, 3]);
        std::fs::write(dir.path().join("img"), &images).unwrap();
        std::fs::write(dir.path().join("lab"), &labels).unwrap();

        let pairs = load_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].0.width, pairs[0].0.height), (3, 2));
        let bytes: Vec<u8> = pairs[1].0.pixels.iter().map(|&p| quantize(p)).collect();
        assert_eq!(bytes, vec![255, 128, 64, 32, 16, 8]);
        assert_eq!(pairs[0].1, 7);
        assert_eq!(pairs[1].1, 3);

        // gzip round trip through the writer
        let gz = dir.path().join("img.gz");
        let originals: Vec<GrayImage> = pairs.iter().map(|p| p.0.clone()).collect();
        write_images(&gz, &originals).unwrap();
        assert_eq!(read_images(&gz).unwrap(), originals);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, header(LABELS_MAGIC, &[1, 1, 1])).unwrap();
        assert!(matches!(read_images(&p), Err(Error::Format { .. })));

        let mut short = header(IMAGES_MAGIC, &[3, 2, 2]);
        short.extend_from_slice(&[0; 5]);
        std::fs::write(&p, &short).unwrap();
        assert!(read_images(&p).unwrap_err().to_string().contains("truncated"));

        std::fs::write(&p, [0u8, 0, 8]).unwrap();
        assert!(read_labels(&p).is_err());

        let mut img = header(IMAGES_MAGIC, &[1, 1, 1]);
        img.push(9);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[1, 2]);
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lab).unwrap();
        assert!(load_idx(&dir.path().join("i"), &dir.path().join("l")).is_err());
    }
}
