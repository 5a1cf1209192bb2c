//! Procedural planted-motif datasets with exact ground-truth boxes.
//!
//! Each image is an independent function of `(config, index)`: the
//! background is seeded smoothed noise and every motif of the image's class
//! lands at a uniformly random interior position. Image `i` draws from a
//! generator seeded with `seed + i`, so images can be rendered in any order
//! or in parallel.

mod image;
mod manifest;
mod motif;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::tensor::{ImageTensor, Shape, Tensor};

pub use image::{decode_image, encode_image, read_image, to_byte, write_image, ImageError};
pub use manifest::{DatasetManifest, GtBox, ImageRecord, ManifestError, Split, MANIFEST_VERSION};
pub use motif::{MotifKind, MotifSpec};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("motif of size {size} with margin {margin} does not fit a {image}x{image} image")]
    MotifTooLarge {
        size: usize,
        margin: usize,
        image: usize,
    },
    #[error("could not place {count} non-overlapping motifs in image {index}")]
    Placement { index: usize, count: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot write dataset: {0}")]
    Io(#[from] std::io::Error),
}

/// One image class: every image of the class carries all of `motifs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub motifs: Vec<MotifSpec>,
    pub count: usize,
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, motifs: Vec<MotifSpec>, count: usize) -> Self {
        ClassSpec {
            name: name.into(),
            motifs,
            count,
        }
    }

    /// A class named after its single motif.
    pub fn single(motif: MotifSpec, count: usize) -> Self {
        ClassSpec::new(motif.kind.name(), vec![motif], count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub classes: Vec<ClassSpec>,
    /// Background-only images.
    pub negatives: usize,
    pub image_size: usize,
    /// Standard deviation of the background texture.
    pub noise_level: f32,
    pub background: f32,
    /// Motif contrast is drawn uniformly from `[1 - jitter, 1]`.
    pub contrast_jitter: f32,
    /// Fraction of each class (and of the negatives) assigned to the test
    /// split; the last images of each group go to test.
    pub test_fraction: f32,
    /// Minimum distance between a motif and the image border.
    pub margin: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            classes: Vec::new(),
            negatives: 0,
            image_size: 64,
            noise_level: 0.06,
            background: 0.5,
            contrast_jitter: 0.2,
            test_fraction: 0.0,
            margin: 12,
            seed: 0,
        }
    }
}

/// Which group an image index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Class(usize),
    Negative,
}

/// Where each motif goes in one image, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub index: usize,
    pub origin: Origin,
    pub split: Split,
    pub noise_seed: u64,
    /// Motif, top-left `(x, y)`, contrast.
    pub placements: Vec<(MotifSpec, usize, usize, f32)>,
}

impl GeneratorConfig {
    pub fn total_images(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum::<usize>() + self.negatives
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.classes.is_empty() {
            return Err(GenerateError::Config(
                "at least one class is required".into(),
            ));
        }
        if self.image_size < 8 {
            return Err(GenerateError::Config(format!(
                "image size {} too small",
                self.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(GenerateError::Config(
                "test fraction must be in [0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.contrast_jitter)
            || !(0.0..=1.0).contains(&self.background)
            || !(self.noise_level >= 0.0 && self.noise_level.is_finite())
        {
            return Err(GenerateError::Config(
                "noise, background, and jitter must be finite and within range".into(),
            ));
        }
        for class in &self.classes {
            if class.count == 0 {
                return Err(GenerateError::Config(format!(
                    "class {} has zero images",
                    class.name
                )));
            }
            if class.motifs.is_empty() {
                return Err(GenerateError::Config(format!(
                    "class {} has no motifs",
                    class.name
                )));
            }
            if class.name.is_empty()
                || class.name.contains(char::is_whitespace)
                || class.name == "-"
            {
                return Err(GenerateError::Config(format!(
                    "bad class name {:?}",
                    class.name
                )));
            }
            for m in &class.motifs {
                if m.size + 2 * self.margin > self.image_size {
                    return Err(GenerateError::MotifTooLarge {
                        size: m.size,
                        margin: self.margin,
                        image: self.image_size,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self, index: usize) -> Option<(Origin, Split)> {
        let split_of = |i: usize, n: usize| {
            let test = (n as f32 * self.test_fraction).round() as usize;
            if i >= n - test.min(n) {
                Split::Test
            } else {
                Split::Train
            }
        };
        let mut start = 0;
        for (c, class) in self.classes.iter().enumerate() {
            if index < start + class.count {
                return Some((Origin::Class(c), split_of(index - start, class.count)));
            }
            start += class.count;
        }
        (index < start + self.negatives)
            .then(|| (Origin::Negative, split_of(index - start, self.negatives)))
    }

    /// Draws motif positions and contrasts for image `index`.
    pub fn plan(&self, index: usize) -> Result<SamplePlan, GenerateError> {
        let (origin, split) = self
            .origin(index)
            .ok_or_else(|| GenerateError::Config(format!("image index {index} out of range")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64));
        let noise_seed = rng.gen();
        let mut placements: Vec<(MotifSpec, usize, usize, f32)> = Vec::new();
        if let Origin::Class(c) = origin {
            let motifs = &self.classes[c].motifs;
            // restart the whole layout when a motif cannot be placed, so an
            // unlucky first position cannot block the rest
            'layout: for _ in 0..200 {
                placements.clear();
                for m in motifs {
                    let hi = self.image_size - self.margin - m.size;
                    let x = rng.gen_range(self.margin..=hi);
                    let y = rng.gen_range(self.margin..=hi);
                    let gap = 2;
                    let clear = placements.iter().all(|(o, ox, oy, _)| {
                        x + m.size + gap <= *ox
                            || *ox + o.size + gap <= x
                            || y + m.size + gap <= *oy
                            || *oy + o.size + gap <= y
                    });
                    if !clear {
                        continue 'layout;
                    }
                    let contrast = 1.0 - rng.gen::<f32>() * self.contrast_jitter;
                    placements.push((*m, x, y, contrast));
                }
                break;
            }
            if placements.len() != motifs.len() {
                return Err(GenerateError::Placement {
                    index,
                    count: motifs.len(),
                });
            }
        }
        Ok(SamplePlan {
            index,
            origin,
            split,
            noise_seed,
            placements,
        })
    }

    /// Background texture for a plan.
    pub fn background_image(&self, noise_seed: u64) -> ImageTensor {
        let n = self.image_size;
        let shape = Shape::new(3, n, n);
        if self.noise_level == 0.0 {
            return Tensor::filled(shape, self.background);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let field = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            smooth(&smooth(&raw, n, 2), n, 2)
        };
        let luma = field(&mut rng);
        let chroma: Vec<Vec<f32>> = (0..3).map(|_| field(&mut rng)).collect();
        let mixed: Vec<f32> = (0..3)
            .flat_map(|c| {
                let luma = &luma;
                let ch = &chroma[c];
                (0..n * n).map(move |i| luma[i] + 0.3 * ch[i])
            })
            .collect();
        let mean = mixed.iter().map(|&v| v as f64).sum::<f64>() / mixed.len() as f64;
        let var = mixed
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / mixed.len() as f64;
        let scale = self.noise_level as f64 / var.sqrt().max(1e-12);
        let data = mixed
            .iter()
            .map(|&v| (self.background as f64 + (v as f64 - mean) * scale).clamp(0.0, 1.0) as f32)
            .collect();
        Tensor::from_vec(shape, data).expect("finite background")
    }

    /// Renders a plan into an image and its ground-truth boxes.
    pub fn render(&self, plan: &SamplePlan) -> (ImageTensor, Vec<GtBox>) {
        let mut img = self.background_image(plan.noise_seed);
        let boxes = plan
            .placements
            .iter()
            .filter_map(|(m, x, y, contrast)| {
                m.render(&mut img, *x, *y, *contrast, self.background)
                    .map(|bbox| GtBox {
                        label: m.kind.name().to_string(),
                        bbox,
                    })
            })
            .collect();
        (img, boxes)
    }

    /// Plans and renders image `index`.
    pub fn sample(&self, index: usize) -> Result<(ImageTensor, Vec<GtBox>), GenerateError> {
        Ok(self.render(&self.plan(index)?))
    }

    pub fn label_of(&self, origin: Origin) -> Option<String> {
        match origin {
            Origin::Class(c) => Some(self.classes[c].name.clone()),
            Origin::Negative => None,
        }
    }
}

/// Box blur with the given radius, clamping at the borders.
fn smooth(src: &[f32], n: usize, radius: usize) -> Vec<f32> {
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f32;
    let mut tmp = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for d in -r..=r {
                let xx = (x as isize + d).clamp(0, n as isize - 1) as usize;
                acc += src[y * n + xx];
            }
            tmp[y * n + x] = acc * norm;
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for d in -r..=r {
                let yy = (y as isize + d).clamp(0, n as isize - 1) as usize;
                acc += tmp[yy * n + x];
            }
            out[y * n + x] = acc * norm;
        }
    }
    out
}

fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

/// Renders every image into `out_dir/images/` and writes
/// `out_dir/manifest.txt`. Returns the manifest.
pub fn generate(
    config: &GeneratorConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, GenerateError> {
    config.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let records = (0..config.total_images())
        .into_par_iter()
        .map(|i| {
            let plan = config.plan(i)?;
            let (img, boxes) = config.render(&plan);
            let id = image_id(i);
            let rel = format!("images/{id}.ppm");
            write_image(out_dir.join(&rel), &img)?;
            Ok(ImageRecord {
                id,
                path: rel,
                label: config.label_of(plan.origin),
                split: plan.split,
                boxes,
            })
        })
        .collect::<Result<Vec<_>, GenerateError>>()?;
    let manifest = DatasetManifest::from_config(config, records);
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Images and labels produced in memory, without touching the file system.
pub fn generate_in_memory(
    config: &GeneratorConfig,
) -> Result<Vec<(ImageRecord, ImageTensor)>, GenerateError> {
    config.validate()?;
    (0..config.total_images())
        .into_par_iter()
        .map(|i| {
            let plan = config.plan(i)?;
            let (img, boxes) = config.render(&plan);
            let id = image_id(i);
            Ok((
                ImageRecord {
                    path: format!("images/{id}.ppm"),
                    id,
                    label: config.label_of(plan.origin),
                    split: plan.split,
                    boxes,
                },
                img,
            ))
        })
        .collect()
}
