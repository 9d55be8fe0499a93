//! Image data: IDX ingestion, the MNIST-derived experiment datasets, patch
//! extraction and label-noise protocols.

mod idx;
mod patch;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use idx::{load_idx, read_images, read_labels, write_images, write_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use patch::{extract_patches, Patch, PatchConfig};

use crate::concept::{ConceptSchema, ConceptVector};
use crate::error::{Error, Result};
use crate::rules::RuleExpr;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain(format!("pixel intensity {p} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    /// Copies `tile` into this image with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, tile: &GrayImage, x: usize, y: usize) {
        for row in 0..tile.height {
            let dst = (y + row) * self.width + x;
            self.pixels[dst..dst + tile.width]
                .copy_from_slice(&tile.pixels[row * tile.width..(row + 1) * tile.width]);
        }
    }
}

/// An image with its concept label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image: GrayImage,
    pub label: ConceptVector,
}

/// A labeled image collection bound to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ConceptSchema,
    pub records: Vec<ImageRecord>,
}

const IMAGES_FILE: &str = "images.idx";
const CONCEPTS_FILE: &str = "concepts.csv";
const SCHEMA_FILE: &str = "schema.json";

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<ConceptVector> {
        self.records.iter().map(|r| r.label.clone()).collect()
    }

    /// Writes `images.idx`, `concepts.csv` and `schema.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let images: Vec<GrayImage> = self.records.iter().map(|r| r.image.clone()).collect();
        write_images(&dir.join(IMAGES_FILE), &images)?;

        let mut writer = csv::Writer::from_path(dir.join(CONCEPTS_FILE)).map_err(csv_err)?;
        let mut header = vec!["image_id".to_string()];
        header.extend((0..self.schema.len()).map(|r| format!("c{r}")));
        writer.write_record(&header).map_err(csv_err)?;
        for (i, rec) in self.records.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(rec.label.values().iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
            writer.write_record(&row).map_err(csv_err)?;
        }
        writer.flush()?;

        let schema = serde_json::to_string_pretty(&self.schema).map_err(|e| Error::format("schema", e))?;
        fs::write(dir.join(SCHEMA_FILE), schema + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let schema_text = fs::read_to_string(dir.join(SCHEMA_FILE))?;
        let schema: ConceptSchema =
            serde_json::from_str(&schema_text).map_err(|e| Error::format(SCHEMA_FILE, e))?;
        let images = read_images(&dir.join(IMAGES_FILE))?;

        let mut reader = csv::Reader::from_path(dir.join(CONCEPTS_FILE)).map_err(csv_err)?;
        let mut labels = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(csv_err)?;
            if row.len() != schema.len() + 1 {
                return Err(Error::format(
                    CONCEPTS_FILE,
                    format!("row {i} has {} cells, expected {}", row.len(), schema.len() + 1),
                ));
            }
            if row[0].parse::<usize>().ok() != Some(i) {
                return Err(Error::format(CONCEPTS_FILE, format!("row {i} has image_id `{}`", &row[0])));
            }
            let values = row
                .iter()
                .skip(1)
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<u16>()
                            .map(Some)
                            .map_err(|_| Error::format(CONCEPTS_FILE, format!("bad value `{cell}` in row {i}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            labels.push(ConceptVector::new(&schema, values)?);
        }
        if labels.len() != images.len() {
            return Err(Error::format(
                "dataset",
                format!("{} images but {} label rows", images.len(), labels.len()),
            ));
        }
        let records = images
            .into_iter()
            .zip(labels)
            .map(|(image, label)| ImageRecord { image, label })
            .collect();
        Ok(Dataset { schema, records })
    }
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::format("CSV", format!("{other:?}")),
        }
    } else {
        Error::format("CSV", e)
    }
}

/// Source digits grouped by class.
#[derive(Debug, Clone)]
pub struct DigitPool {
    by_digit: Vec<Vec<GrayImage>>,
}

impl DigitPool {
    pub fn new(digits: Vec<(GrayImage, u8)>) -> Result<Self> {
        let mut by_digit = vec![Vec::new(); 10];
        let mut dims = None;
        for (image, digit) in digits {
            if digit > 9 {
                return Err(Error::domain(format!("digit label {digit} outside 0..=9")));
            }
            let d = (image.width, image.height);
            if *dims.get_or_insert(d) != d {
                return Err(Error::domain("digit images must share one size"));
            }
            by_digit[digit as usize].push(image);
        }
        Ok(DigitPool { by_digit })
    }

    pub fn digits(&self, digit: u8) -> &[GrayImage] {
        &self.by_digit[digit as usize]
    }
}

/// Schema of the four-digit grid dataset: the largest digit (seven classes,
/// digits 3..=9 as values 1..=7) then presence of digits 1..9 and 0.
pub fn grid_schema() -> ConceptSchema {
    let mut pairs = vec![("max_digit".to_string(), 7u16)];
    pairs.extend(GRID_PRESENCE_ORDER.iter().map(|d| (format!("has_{d}"), 2u16)));
    ConceptSchema::from_pairs(pairs).expect("grid schema is valid")
}

const GRID_PRESENCE_ORDER: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 0];

/// Concept index of the "digit `d` is present" concept in [`grid_schema`].
pub fn grid_presence_concept(digit: u8) -> usize {
    if digit == 0 {
        10
    } else {
        digit as usize
    }
}

/// Label of a grid holding the four distinct `digits`.
pub fn grid_label(digits: &[u8]) -> Result<ConceptVector> {
    let schema = grid_schema();
    let mut sorted = digits.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if digits.len() != 4 || sorted.len() != 4 || sorted[3] > 9 {
        return Err(Error::domain("a grid holds four distinct digits"));
    }
    let mut values = vec![1u16; schema.len()];
    values[0] = (sorted[3] - 2) as u16;
    for &d in digits {
        values[grid_presence_concept(d)] = 2;
    }
    ConceptVector::full(&schema, &values)
}

/// Builds `n` images of four distinct digits arranged 2×2.
pub fn compose_grid_dataset(pool: &DigitPool, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("grid dataset size must be positive"));
    }
    if let Some(d) = (0..10u8).find(|&d| pool.digits(d).is_empty()) {
        return Err(Error::domain(format!("digit pool has no images of digit {d}")));
    }
    let tile = &pool.digits(0)[0];
    let (tw, th) = (tile.width, tile.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let mut all: Vec<u8> = (0..10).collect();
        all.shuffle(&mut rng);
        let digits = &all[..4];
        let mut image = GrayImage::blank(2 * tw, 2 * th);
        for (slot, &d) in digits.iter().enumerate() {
            let choices = pool.digits(d);
            let src = &choices[rng.random_range(0..choices.len())];
            image.paste(src, (slot % 2) * tw, (slot / 2) * th);
        }
        records.push(ImageRecord {
            image,
            label: grid_label(digits)?,
        });
    }
    Ok(Dataset {
        schema: grid_schema(),
        records,
    })
}

/// Concept annotation of a single MNIST digit, 0-based as published:
/// `[target, odd, below five, remainder mod 3]`.
pub const MNIST_CONCEPTS: [[u8; 4]; 10] = [
    [0, 0, 1, 0],
    [1, 1, 1, 1],
    [0, 0, 1, 2],
    [1, 1, 1, 0],
    [0, 0, 1, 1],
    [0, 1, 0, 2],
    [1, 0, 0, 0],
    [0, 1, 0, 1],
    [1, 0, 0, 2],
    [0, 1, 0, 0],
];

pub fn annotated_schema() -> ConceptSchema {
    ConceptSchema::from_pairs([("target", 2), ("odd", 2), ("below_five", 2), ("mod3", 3)])
        .expect("annotated schema is valid")
}

/// 0-based concept row for `digit`.
pub fn annotate_original_mnist(digit: u8) -> Result<[u8; 4]> {
    MNIST_CONCEPTS
        .get(digit as usize)
        .copied()
        .ok_or_else(|| Error::domain(format!("digit {digit} outside 0..=9")))
}

/// The 1-based label used by [`annotated_schema`].
pub fn annotated_label(digit: u8) -> Result<ConceptVector> {
    let raw = annotate_original_mnist(digit)?;
    let values: Vec<u16> = raw.iter().map(|&v| v as u16 + 1).collect();
    ConceptVector::full(&annotated_schema(), &values)
}

/// Labels original MNIST digits with the four annotated concepts.
pub fn annotated_dataset(digits: Vec<(GrayImage, u8)>) -> Result<Dataset> {
    let records = digits
        .into_iter()
        .map(|(image, d)| Ok(ImageRecord { image, label: annotated_label(d)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        schema: annotated_schema(),
        records,
    })
}

/// A seeded random subset of `n` digits (all of them when `n` exceeds the
/// pool), in shuffled order.
pub fn sample_digits(digits: &[(GrayImage, u8)], n: usize, seed: u64) -> Vec<(GrayImage, u8)> {
    let mut idx: Vec<usize> = (0..digits.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.into_iter().take(n).map(|i| digits[i].clone()).collect()
}

/// Result of a label-inversion run.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub dataset: Dataset,
    /// Indices whose target changed, in sampling order.
    pub flipped: Vec<usize>,
}

/// Inverts the target of a `beta` fraction of the dataset, drawn among
/// instances whose label satisfies `rule`.
///
/// When the rule constrains the target, only instances whose inverted target
/// violates the rule are eligible and the new value is drawn among the
/// violating ones. Otherwise every satisfying instance is eligible and the new
/// value is any other target value. The candidate permutation and the
/// replacement values depend only on `seed`, so flipped sets are nested
/// across increasing `beta`.
pub fn invert_labels(dataset: &Dataset, rule: &RuleExpr, beta: f64, seed: u64) -> Result<Inversion> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain(format!("inversion fraction {beta} outside [0, 1]")));
    }
    rule.check(&dataset.schema)?;
    let n_target = dataset.schema.cardinality(0);
    let constrains_target = rule.expr.mentions(0);

    let mut candidates: Vec<(usize, Vec<u16>)> = Vec::new();
    for (i, rec) in dataset.records.iter().enumerate() {
        let Some(z) = rec.label.as_combination() else { continue };
        if !rule.eval(&z) {
            continue;
        }
        let mut values = z.values().to_vec();
        let current = values[0];
        let alternatives: Vec<u16> = (1..=n_target)
            .filter(|&v| v != current)
            .filter(|&v| {
                if !constrains_target {
                    return true;
                }
                values[0] = v;
                let violated = !rule.expr.eval(&values);
                values[0] = current;
                violated
            })
            .collect();
        if !alternatives.is_empty() {
            candidates.push((i, alternatives));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let replacements: Vec<u16> = candidates
        .iter()
        .map(|(_, alts)| alts[rng.random_range(0..alts.len())])
        .collect();

    let wanted = (beta * dataset.len() as f64 + 1e-9).floor() as usize;
    let take = wanted.min(candidates.len());
    let mut out = dataset.clone();
    let mut flipped = Vec::with_capacity(take);
    for ((i, _), &v) in candidates.iter().zip(&replacements).take(take) {
        out.records[*i].label.set(0, v);
        flipped.push(*i);
    }
    Ok(Inversion { dataset: out, flipped })
}
