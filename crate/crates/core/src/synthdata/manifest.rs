//! Dataset manifest: a line-oriented text file.
//!
//! ```text
//! patternnet-manifest 1
//! seed <u64>
//! param <key> <value>                 generator settings, echoed
//! class <name> <count> <motif>...     motif = kind:size:r:g:b
//! image <id> <path> <label|-> <train|test>
//! box <image-id> <label> <x_min> <y_min> <x_max> <y_max>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Paths are relative
//! to the manifest's directory. Boxes are half-open pixel ranges.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use super::{ClassSpec, GeneratorConfig, MotifSpec};
use crate::bbox::BBox;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// A labelled ground-truth box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtBox {
    pub label: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    /// Class name; `None` for background-only images.
    pub label: Option<String>,
    pub split: Split,
    pub boxes: Vec<GtBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub params: Vec<(String, String)>,
    pub classes: Vec<ClassSpec>,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn from_config(config: &GeneratorConfig, images: Vec<ImageRecord>) -> Self {
        let params = vec![
            ("image_size".to_string(), config.image_size.to_string()),
            ("negatives".to_string(), config.negatives.to_string()),
            ("noise_level".to_string(), config.noise_level.to_string()),
            ("background".to_string(), config.background.to_string()),
            (
                "contrast_jitter".to_string(),
                config.contrast_jitter.to_string(),
            ),
            (
                "test_fraction".to_string(),
                config.test_fraction.to_string(),
            ),
            ("margin".to_string(), config.margin.to_string()),
        ];
        DatasetManifest {
            seed: config.seed,
            params,
            classes: config.classes.clone(),
            images,
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Rebuilds the generator settings recorded in the manifest.
    pub fn generator_config(&self) -> Result<GeneratorConfig, ManifestError> {
        fn get<T: FromStr>(m: &DatasetManifest, key: &str) -> Result<T, ManifestError> {
            m.param(key)
                .ok_or_else(|| ManifestError::Invalid(format!("missing param {key}")))?
                .parse()
                .map_err(|_| ManifestError::Invalid(format!("bad param {key}")))
        }
        Ok(GeneratorConfig {
            classes: self.classes.clone(),
            negatives: get(self, "negatives")?,
            image_size: get(self, "image_size")?,
            noise_level: get(self, "noise_level")?,
            background: get(self, "background")?,
            contrast_jitter: get(self, "contrast_jitter")?,
            test_fraction: get(self, "test_fraction")?,
            margin: get(self, "margin")?,
            seed: self.seed,
        })
    }

    pub fn image_size(&self) -> Option<usize> {
        self.param("image_size").and_then(|v| v.parse().ok())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "patternnet-manifest {MANIFEST_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        for (k, v) in &self.params {
            let _ = writeln!(out, "param {k} {v}");
        }
        for c in &self.classes {
            let motifs: Vec<String> = c.motifs.iter().map(|m| m.to_token()).collect();
            let _ = writeln!(out, "class {} {} {}", c.name, c.count, motifs.join(" "));
        }
        for r in &self.images {
            let _ = writeln!(
                out,
                "image {} {} {} {}",
                r.id,
                r.path,
                r.label.as_deref().unwrap_or("-"),
                r.split.as_str()
            );
        }
        for r in &self.images {
            for b in &r.boxes {
                let _ = writeln!(out, "box {} {} {}", r.id, b.label, b.bbox);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let err = |line: usize, message: String| ManifestError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == format!("patternnet-manifest {MANIFEST_VERSION}") => {}
            Some((n, l)) => return Err(err(n, format!("bad header {l:?}"))),
            None => return Err(err(0, "empty manifest".into())),
        }
        let mut seed = None;
        let mut params = Vec::new();
        let mut classes = Vec::new();
        let mut images: Vec<ImageRecord> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["seed", v] => {
                    seed = Some(v.parse().map_err(|_| err(n, format!("bad seed {v:?}")))?);
                }
                ["param", k, v] => params.push((k.to_string(), v.to_string())),
                ["class", name, count, motifs @ ..] if !motifs.is_empty() => {
                    let count = count
                        .parse()
                        .map_err(|_| err(n, format!("bad count {count:?}")))?;
                    let motifs = motifs
                        .iter()
                        .map(|m| MotifSpec::from_token(m))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|m| err(n, m))?;
                    classes.push(ClassSpec::new(*name, motifs, count));
                }
                ["image", id, path, label, split] => {
                    if index.contains_key(*id) {
                        return Err(err(n, format!("duplicate image id {id}")));
                    }
                    index.insert(id.to_string(), images.len());
                    images.push(ImageRecord {
                        id: id.to_string(),
                        path: path.to_string(),
                        label: (*label != "-").then(|| label.to_string()),
                        split: split.parse().map_err(|m| err(n, m))?,
                        boxes: Vec::new(),
                    });
                }
                ["box", id, label, coords @ ..] if coords.len() == 4 => {
                    let mut c = [0usize; 4];
                    for (dst, v) in c.iter_mut().zip(coords) {
                        *dst = v
                            .parse()
                            .map_err(|_| err(n, format!("bad coordinate {v:?}")))?;
                    }
                    let bbox = BBox::new(c[0], c[1], c[2], c[3])
                        .ok_or_else(|| err(n, "empty box".into()))?;
                    let &i = index
                        .get(*id)
                        .ok_or_else(|| err(n, format!("box for unknown image {id}")))?;
                    images[i].boxes.push(GtBox {
                        label: label.to_string(),
                        bbox,
                    });
                }
                _ => return Err(err(n, format!("unrecognised line {line:?}"))),
            }
        }
        Ok(DatasetManifest {
            seed: seed.ok_or_else(|| err(0, "missing seed".into()))?,
            params,
            classes,
            images,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        DatasetManifest::parse(&fs::read_to_string(path)?)
    }

    /// Checks that labels name declared classes, boxes lie inside the image,
    /// and (when `root` is given) that every image file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<(), ManifestError> {
        let size = self.image_size();
        for r in &self.images {
            if let Some(l) = &r.label {
                if !self.classes.iter().any(|c| &c.name == l) {
                    return Err(ManifestError::Invalid(format!(
                        "image {} has undeclared label {l}",
                        r.id
                    )));
                }
            }
            if let Some(s) = size {
                if let Some(b) = r.boxes.iter().find(|b| !b.bbox.within(s, s)) {
                    return Err(ManifestError::Invalid(format!(
                        "image {} box {} outside {s}x{s}",
                        r.id, b.bbox
                    )));
                }
            }
            if let Some(root) = root {
                if !root.join(&r.path).is_file() {
                    return Err(ManifestError::Invalid(format!(
                        "image file {} missing",
                        r.path
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn image_path(&self, root: &Path, record: &ImageRecord) -> PathBuf {
        root.join(&record.path)
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_in_memory, MotifKind};

    #[test]
    fn text_round_trip() {
        let cfg = GeneratorConfig {
            classes: vec![ClassSpec::single(MotifSpec::new(MotifKind::Ring, 14), 3)],
            negatives: 2,
            seed: 5,
            ..Default::default()
        };
        let records = generate_in_memory(&cfg)
            .unwrap()
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let m = DatasetManifest::from_config(&cfg, records);
        let text = m.to_text();
        let back = DatasetManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.generator_config().unwrap(), cfg);
        back.validate(None).unwrap();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "patternnet-manifest 1\nseed 1\nimage a x.ppm - train\nbox b cross 0 0 1 1\n";
        match DatasetManifest::parse(text) {
            Err(ManifestError::Parse { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(DatasetManifest::parse("patternnet-manifest 2\nseed 1\n").is_err());
        assert!(DatasetManifest::parse("patternnet-manifest 1\nseed 1\nbogus\n").is_err());
    }

    #[test]
    fn out_of_bounds_box_fails_validation() {
        let text = "patternnet-manifest 1\nseed 1\nparam image_size 32\n\
                    class cross 1 cross:16\nimage a a.ppm cross train\nbox a cross 20 20 40 30\n";
        let m = DatasetManifest::parse(text).unwrap();
        assert!(matches!(m.validate(None), Err(ManifestError::Invalid(_))));
    }
}
