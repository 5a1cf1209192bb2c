//! Command-line front end: `gen`, `mine`, `propose`, `eval`, `classify`,
//! `describe-weights`.
//!
//! Settings come from a TOML file (`--config`, or the path in
//! `PATTERNNET_CONFIG`) whose keys are the long flag names with `_` for
//! `-`; flags given on the command line win over the file. Unknown keys
//! are rejected.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::{
    builtin_filterbank, load_weights, save_weights, BackboneError, BackboneSpec, WeightsError,
    BUILTIN_FILTERS,
};
use crate::evalkit::{
    accuracy, evaluate, ClassificationReport, ConfusionMatrix, EvalError, FeatureLayer,
    FeatureMode, GroundTruth, ProposalSet,
};
use crate::localizer::{propose_in_trace, rank_patterns, BoxList, LocalizeError};
use crate::miner::{
    mine, BankError, HeadConfig, LabeledSet, MinerError, PatternBank, ThresholdPolicy,
};
use crate::synthdata::{
    generate, read_image, ClassSpec, DatasetManifest, GenerateError, GeneratorConfig, ImageError,
    ImageRecord, ManifestError, MotifSpec, Split,
};
use crate::tensor::Shape;

pub const CONFIG_ENV: &str = "PATTERNNET_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<MinerError> for CliError {
    fn from(e: MinerError) -> Self {
        match e {
            MinerError::Diverged { .. } => CliError::Numerical(e.to_string()),
            MinerError::Config(_) | MinerError::Quantile(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Diverged { .. } => CliError::Numerical(e.to_string()),
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(
    std::io::Error,
    BankError,
    BackboneError,
    WeightsError,
    LocalizeError,
    ManifestError,
    ImageError
);

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Config(_) | GenerateError::MotifTooLarge { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "patternnet",
    about = "Visual pattern mining over frozen convolutional filters"
)]
struct Cli {
    /// TOML settings file; defaults to the path in PATTERNNET_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-motif dataset into <out>.
    Gen,
    /// Mine patterns for one class (or every class) of the manifest.
    Mine,
    /// Localise detected patterns and write a box list.
    Propose,
    /// Score a box list against the manifest's ground truth.
    Eval,
    /// Train and test the softmax classifier on pattern features.
    Classify,
    /// Print the backbone's layer stack.
    DescribeWeights {
        /// Also write the backbone in PNWT format to this path.
        #[arg(long)]
        save: Option<PathBuf>,
    },
}

/// Every tunable. Each key doubles as a `--flag` and a TOML key.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Random seed for generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all processors when unset.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// PNWT weights file; the builtin filter bank when unset.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Dataset manifest; defaults to <out>/manifest.txt.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Classes to generate, `name=kind[:size[:r:g:b]][+kind...]` or a
    /// bare motif whose kind names the class.
    #[arg(long, global = true, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Images per class.
    #[arg(long, global = true)]
    pub per_class: Option<usize>,
    /// Background-only images.
    #[arg(long, global = true)]
    pub negatives: Option<usize>,
    /// Square image side in pixels.
    #[arg(long, global = true)]
    pub image_size: Option<usize>,
    /// Standard deviation of the background texture.
    #[arg(long, global = true)]
    pub noise_level: Option<f32>,
    /// Mean background intensity.
    #[arg(long, global = true)]
    pub background: Option<f32>,
    /// Motif contrast is drawn from [1 - jitter, 1].
    #[arg(long, global = true)]
    pub contrast_jitter: Option<f32>,
    /// Fraction of each class and of the negatives held out for test.
    #[arg(long, global = true)]
    pub test_fraction: Option<f32>,
    /// Minimum distance from a motif to the image border.
    #[arg(long, global = true)]
    pub margin: Option<usize>,

    /// Class to mine; every class when unset.
    #[arg(long, global = true)]
    pub class: Option<String>,
    /// Negative set for mining: `background`, `others`, or `class:<name>`.
    #[arg(long, global = true)]
    pub reference: Option<String>,
    /// Head neurons, the number of patterns sought.
    #[arg(long, global = true)]
    pub neurons: Option<usize>,
    /// Filters per pattern.
    #[arg(long, global = true)]
    pub pattern_size: Option<usize>,
    /// Threshold quantile.
    #[arg(long, global = true)]
    pub quantile: Option<f64>,
    /// Threshold fit set: `positive`, `reference`, or `all`.
    #[arg(long, global = true)]
    pub fit_set: Option<String>,
    /// L1 penalty on the head weights.
    #[arg(long, global = true)]
    pub l1: Option<f64>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Maximum optimizer iterations.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,

    /// Pattern banks; defaults to every `bank-*.txt` in <out>.
    #[arg(long, global = true, value_delimiter = ',')]
    pub banks: Option<Vec<PathBuf>>,
    /// Deconvolution region threshold relative to the map's maximum.
    #[arg(long, global = true)]
    pub tau: Option<f32>,
    /// Proposals kept per image.
    #[arg(long, global = true)]
    pub max_proposals: Option<usize>,
    /// Write a PGM mask per proposal under <out>/masks.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub masks: Option<bool>,
    /// Images to use: `all`, `train`, or `test`.
    #[arg(long, global = true)]
    pub split: Option<String>,

    /// Box list; defaults to <out>/boxes.txt.
    #[arg(long, global = true)]
    pub boxes: Option<PathBuf>,
    /// Overlap at which a box counts as recalled.
    #[arg(long, global = true)]
    pub iou_threshold: Option<f64>,
    /// Accept artifacts produced from a different dataset or backbone.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub allow_mismatch: Option<bool>,
    /// Pattern feature values: `binary` or `margin`.
    #[arg(long, global = true)]
    pub feature_mode: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl Settings {
    /// Values from `top` replace those in `self`.
    pub fn overlay(&mut self, top: &Settings) {
        overlay!(self, top; seed, jobs, out, weights, manifest, classes, per_class,
            negatives, image_size, noise_level, background, contrast_jitter,
            test_fraction, margin, class, reference, neurons, pattern_size, quantile,
            fit_set, l1, learning_rate, batch_size, iterations, banks, tau,
            max_proposals, masks, split, boxes, iou_threshold, allow_mismatch,
            feature_mode);
    }

    pub fn from_toml(text: &str) -> Result<Settings, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out().join("manifest.txt"))
    }

    fn split(&self) -> Result<Option<Split>, CliError> {
        match self.split.as_deref().unwrap_or("all") {
            "all" => Ok(None),
            "train" => Ok(Some(Split::Train)),
            "test" => Ok(Some(Split::Test)),
            s => Err(CliError::Usage(format!(
                "unknown split {s:?} (all|train|test)"
            ))),
        }
    }

    fn allow_mismatch(&self) -> bool {
        self.allow_mismatch.unwrap_or(false)
    }

    fn tau(&self) -> Result<f32, CliError> {
        let tau = self.tau.unwrap_or(0.1);
        if !(0.0..1.0).contains(&tau) {
            return Err(CliError::Usage(format!("tau {tau} outside [0, 1)")));
        }
        Ok(tau)
    }

    fn iou_threshold(&self) -> Result<f64, CliError> {
        let t = self.iou_threshold.unwrap_or(0.5);
        if !(t > 0.0 && t <= 1.0) {
            return Err(CliError::Usage(format!("IoU threshold {t} outside (0, 1]")));
        }
        Ok(t)
    }

    fn policy(&self) -> Result<ThresholdPolicy, CliError> {
        let d = ThresholdPolicy::default();
        let policy = ThresholdPolicy {
            quantile: self.quantile.unwrap_or(d.quantile),
            fit_set: match &self.fit_set {
                Some(s) => s.parse().map_err(CliError::Usage)?,
                None => d.fit_set,
            },
        };
        if !(0.0..=1.0).contains(&policy.quantile) {
            return Err(CliError::Usage(format!(
                "quantile {} outside [0, 1]",
                policy.quantile
            )));
        }
        Ok(policy)
    }

    fn head_config(&self) -> Result<HeadConfig, CliError> {
        let d = HeadConfig::default();
        let cfg = HeadConfig {
            neurons: self.neurons.unwrap_or(d.neurons),
            l1: self.l1.unwrap_or(d.l1),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_iterations: self.iterations.unwrap_or(d.max_iterations),
            seed: self.seed(),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn pattern_size(&self) -> Result<usize, CliError> {
        match self.pattern_size.unwrap_or(3) {
            0 => Err(CliError::Usage("pattern size must be positive".into())),
            k => Ok(k),
        }
    }

    fn generator_config(&self) -> Result<GeneratorConfig, CliError> {
        let d = GeneratorConfig::default();
        let per_class = self.per_class.unwrap_or(200);
        let specs = self
            .classes
            .clone()
            .unwrap_or_else(|| vec!["checker".to_string()]);
        let classes = specs
            .iter()
            .map(|s| parse_class(s, per_class))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GeneratorConfig {
            classes,
            negatives: self.negatives.unwrap_or(200),
            image_size: self.image_size.unwrap_or(d.image_size),
            noise_level: self.noise_level.unwrap_or(d.noise_level),
            background: self.background.unwrap_or(d.background),
            contrast_jitter: self.contrast_jitter.unwrap_or(d.contrast_jitter),
            test_fraction: self.test_fraction.unwrap_or(d.test_fraction),
            margin: self.margin.unwrap_or(d.margin),
            seed: self.seed(),
        })
    }
}

/// `name=motif+motif` or a bare `motif`.
fn parse_class(spec: &str, count: usize) -> Result<ClassSpec, CliError> {
    let (name, motifs) = match spec.split_once('=') {
        Some((n, m)) => (n.to_string(), m),
        None => (spec.split(':').next().unwrap_or(spec).to_string(), spec),
    };
    let motifs = motifs
        .split('+')
        .map(MotifSpec::from_token)
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Usage)?;
    Ok(ClassSpec::new(name, motifs, count))
}

/// First 16 hex digits of the SHA-256 of `key=value` lines.
pub fn fingerprint(parts: &[(&str, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize()[..8])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)[..8]))
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut settings = match &config_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            Settings::from_toml(&text)?
        }
        None => Settings::default(),
    };
    settings.overlay(&cli.settings);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = settings.jobs {
        if n == 0 {
            return Err(CliError::Usage("jobs must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen => cmd_gen(&settings),
        Command::Mine => cmd_mine(&settings),
        Command::Propose => cmd_propose(&settings),
        Command::Eval => cmd_eval(&settings),
        Command::Classify => cmd_classify(&settings),
        Command::DescribeWeights { save } => cmd_describe(&settings, save.as_deref()),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_gen(s: &Settings) -> Result<(), CliError> {
    let config = s.generator_config()?;
    let out = s.out();
    let manifest = generate(&config, &out)?;
    manifest.validate(Some(&out))?;
    println!(
        "wrote {} images ({} classes, {} negatives) to {}",
        manifest.images.len(),
        config.classes.len(),
        config.negatives,
        out.join("manifest.txt").display()
    );
    Ok(())
}

/// A manifest with its directory and digest.
struct Dataset {
    manifest: DatasetManifest,
    root: PathBuf,
    digest: String,
}

fn load_dataset(s: &Settings) -> Result<Dataset, CliError> {
    let path = s.manifest_path();
    let manifest = DatasetManifest::read(&path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate(Some(&root))?;
    Ok(Dataset {
        digest: file_digest(&path)?,
        manifest,
        root,
    })
}

/// The backbone to run, whether it is the builtin bank, and its
/// fingerprint.
struct Backbone {
    spec: BackboneSpec,
    builtin: bool,
    fingerprint: String,
}

impl Backbone {
    fn filter_name(&self, f: usize) -> String {
        match (self.builtin, BUILTIN_FILTERS.get(f)) {
            (true, Some(info)) => info.name.to_string(),
            _ => format!("f{f}"),
        }
    }
}

fn load_backbone(s: &Settings, image_size: usize) -> Result<Backbone, CliError> {
    let (spec, builtin) = match &s.weights {
        Some(p) => (load_weights(p)?, false),
        None => (builtin_filterbank(image_size, image_size)?, true),
    };
    Ok(Backbone {
        fingerprint: spec.fingerprint(),
        spec,
        builtin,
    })
}

fn dataset_image_size(d: &Dataset) -> Result<usize, CliError> {
    d.manifest
        .image_size()
        .ok_or_else(|| CliError::Data("manifest has no image_size param".into()))
}

fn records(d: &Dataset, split: Option<Split>) -> Vec<&ImageRecord> {
    d.manifest
        .images
        .iter()
        .filter(|r| split.is_none_or(|s| s == r.split))
        .collect()
}

fn pooled_for(d: &Dataset, b: &Backbone, recs: &[&ImageRecord]) -> Result<Vec<Vec<f32>>, CliError> {
    recs.par_iter()
        .map(|r| {
            let img = read_image(d.manifest.image_path(&d.root, r))?;
            Ok(b.spec.pooled_responses(&img)?)
        })
        .collect()
}

fn cmd_mine(s: &Settings) -> Result<(), CliError> {
    let d = load_dataset(s)?;
    let b = load_backbone(s, dataset_image_size(&d)?)?;
    let policy = s.policy()?;
    let config = s.head_config()?;
    let k = s.pattern_size()?;
    let reference = s.reference.clone().unwrap_or_else(|| "background".into());
    let classes: Vec<String> = match &s.class {
        Some(c) => vec![c.clone()],
        None => d
            .manifest
            .class_names()
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let train = records(&d, Some(Split::Train));
    let pooled = pooled_for(&d, &b, &train)?;
    let ids: Vec<String> = train.iter().map(|r| r.id.clone()).collect();
    let out = s.out();
    for class in &classes {
        if !d.manifest.class_names().contains(&class.as_str()) {
            return Err(CliError::Usage(format!("unknown class {class:?}")));
        }
        let label = |i: usize| train[i].label.as_deref();
        let positives: Vec<usize> = (0..train.len())
            .filter(|&i| label(i) == Some(class))
            .collect();
        let negatives: Vec<usize> = match reference.as_str() {
            "background" => (0..train.len()).filter(|&i| label(i).is_none()).collect(),
            "others" => (0..train.len())
                .filter(|&i| label(i) != Some(class))
                .collect(),
            r => match r.strip_prefix("class:") {
                Some(other) if other != class => (0..train.len())
                    .filter(|&i| label(i) == Some(other))
                    .collect(),
                _ => {
                    return Err(CliError::Usage(format!(
                        "bad reference {r:?} (background|others|class:<name>)"
                    )))
                }
            },
        };
        if positives.is_empty() || negatives.is_empty() {
            return Err(CliError::Data(format!(
                "class {class}: {} positive and {} reference training images",
                positives.len(),
                negatives.len()
            )));
        }
        let labels = LabeledSet::new(positives, negatives)?;
        let outcome = mine(&ids, &pooled, &labels, policy, &config, k)?;
        let fp = fingerprint(&[
            ("stage", "mine".into()),
            ("dataset", d.digest.clone()),
            ("backbone", b.fingerprint.clone()),
            ("class", class.clone()),
            ("reference", reference.clone()),
            ("neurons", config.neurons.to_string()),
            ("pattern_size", k.to_string()),
            ("quantile", policy.quantile.to_string()),
            ("fit_set", policy.fit_set.to_string()),
            ("l1", config.l1.to_string()),
            ("learning_rate", config.learning_rate.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("iterations", config.max_iterations.to_string()),
            ("seed", config.seed.to_string()),
        ]);
        let bank = PatternBank {
            fingerprint: fp,
            backbone: b.fingerprint.clone(),
            class: class.clone(),
            reference: reference.clone(),
            pattern_size: k,
            thresholds: outcome.thresholds,
            patterns: outcome.patterns,
        };
        let path = out.join(format!("bank-{class}.txt"));
        write_file(&path, bank.to_text().as_bytes())?;
        let head = &outcome.head;
        println!(
            "class {class}: {} patterns, loss {:.4} -> {:.4} in {} iterations, wrote {}",
            bank.patterns.len(),
            head.initial_loss().unwrap_or(f64::NAN),
            head.final_loss().unwrap_or(f64::NAN),
            head.iterations(),
            path.display()
        );
        for (p, st) in &bank.patterns {
            let names: Vec<String> = p.filters.iter().map(|&f| b.filter_name(f)).collect();
            println!(
                "  pattern {} [{}] positive {:.3} negative {:.3}",
                p.neuron,
                names.join(", "),
                st.positive_rate,
                st.negative_rate
            );
        }
    }
    Ok(())
}

fn load_banks(s: &Settings, b: &Backbone) -> Result<Vec<PatternBank>, CliError> {
    let paths = match &s.banks {
        Some(p) => p.clone(),
        None => {
            let out = s.out();
            let mut found: Vec<PathBuf> = fs::read_dir(&out)
                .map_err(|e| CliError::Data(format!("cannot list {}: {e}", out.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("bank-") && n.ends_with(".txt"))
                })
                .collect();
            found.sort();
            found
        }
    };
    if paths.is_empty() {
        return Err(CliError::Data("no pattern banks found".into()));
    }
    let banks = paths
        .iter()
        .map(|p| PatternBank::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    for bank in &banks {
        if bank.filter_count() != b.spec.filter_count() {
            return Err(CliError::Data(format!(
                "bank {} has {} thresholds but the backbone has {} filters",
                bank.class,
                bank.filter_count(),
                b.spec.filter_count()
            )));
        }
        if bank.backbone != b.fingerprint && !s.allow_mismatch() {
            return Err(CliError::Data(format!(
                "bank {} was mined with backbone {} but {} is loaded (use --allow-mismatch to override)",
                bank.class, bank.backbone, b.fingerprint
            )));
        }
    }
    Ok(banks)
}

fn cmd_propose(s: &Settings) -> Result<(), CliError> {
    let d = load_dataset(s)?;
    let b = load_backbone(s, dataset_image_size(&d)?)?;
    let banks = load_banks(s, &b)?;
    let tau = s.tau()?;
    let max = s.max_proposals.unwrap_or(5);
    let masks = s.masks.unwrap_or(false);
    let split = s.split()?;
    let out = s.out();

    let ranked = rank_patterns(&banks);
    let recs = records(&d, split);
    let per_image = recs
        .par_iter()
        .map(|r| {
            let img = read_image(d.manifest.image_path(&d.root, r))?;
            let trace = b.spec.forward(&img)?;
            Ok(propose_in_trace(&r.id, &trace, &b.spec, &ranked, tau, max)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut parts = vec![
        ("stage", "propose".to_string()),
        ("dataset", d.digest.clone()),
        ("backbone", b.fingerprint.clone()),
        ("tau", tau.to_string()),
        ("max_proposals", max.to_string()),
        ("split", s.split.clone().unwrap_or_else(|| "all".into())),
    ];
    for bank in &banks {
        parts.push(("bank", bank.fingerprint.clone()));
    }
    let list = BoxList {
        fingerprint: fingerprint(&parts),
        dataset: d.digest.clone(),
        proposals: per_image.iter().flatten().map(|(p, _)| p.clone()).collect(),
    };
    let path = out.join("boxes.txt");
    write_file(&path, list.to_text().as_bytes())?;
    if masks {
        let dir = out.join("masks");
        fs::create_dir_all(&dir)?;
        for (p, region) in per_image.iter().flatten() {
            let name = format!("{}_{}.pgm", p.image, p.pattern.replace('/', "_"));
            write_file(&dir.join(name), &region.to_pgm())?;
        }
    }
    println!(
        "{} proposals over {} images, wrote {}",
        list.proposals.len(),
        recs.len(),
        path.display()
    );
    Ok(())
}

fn cmd_eval(s: &Settings) -> Result<(), CliError> {
    let d = load_dataset(s)?;
    let split = s.split()?;
    let boxes_path = s.boxes.clone().unwrap_or_else(|| s.out().join("boxes.txt"));
    let list = BoxList::read(&boxes_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", boxes_path.display())))?;
    if list.dataset != d.digest && !s.allow_mismatch() {
        return Err(CliError::Data(format!(
            "box list was produced from dataset {} but the manifest is {} (use --allow-mismatch to override)",
            list.dataset, d.digest
        )));
    }
    let size = dataset_image_size(&d)?;
    if let Some(p) = list.proposals.iter().find(|p| !p.bbox.within(size, size)) {
        return Err(CliError::Data(format!(
            "box {} for image {} lies outside the {size}x{size} image",
            p.bbox, p.image
        )));
    }
    let threshold = s.iou_threshold()?;
    let gt = GroundTruth::from_manifest(&d.manifest, split);
    let images = records(&d, split).len();
    let proposals = ProposalSet::from_proposals(&list.proposals);
    let fp = fingerprint(&[
        ("stage", "eval".into()),
        ("dataset", d.digest.clone()),
        ("boxes", list.fingerprint.clone()),
        ("iou_threshold", threshold.to_string()),
        ("split", s.split.clone().unwrap_or_else(|| "all".into())),
    ]);
    let report = evaluate(&gt, &proposals, images, threshold, &fp)?;
    let text = report.to_text();
    write_file(&s.out().join("metrics.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_classify(s: &Settings) -> Result<(), CliError> {
    let d = load_dataset(s)?;
    let b = load_backbone(s, dataset_image_size(&d)?)?;
    let banks = load_banks(s, &b)?;
    let mode: FeatureMode = s
        .feature_mode
        .as_deref()
        .unwrap_or("binary")
        .parse()
        .map_err(CliError::Usage)?;
    let config = s.head_config()?;
    let classes: Vec<String> = d
        .manifest
        .class_names()
        .into_iter()
        .map(String::from)
        .collect();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass.into());
    }
    let labelled = |split: Split| -> Vec<&ImageRecord> {
        d.manifest
            .images
            .iter()
            .filter(|r| r.split == split && r.label.is_some())
            .collect()
    };
    let (train, test) = (labelled(Split::Train), labelled(Split::Test));
    if test.is_empty() {
        return Err(CliError::Data(
            "no labelled test images (generate with a test fraction)".into(),
        ));
    }
    let label_index = |r: &ImageRecord| {
        let l = r.label.as_deref().unwrap_or_default();
        classes.iter().position(|c| c == l).unwrap_or(0)
    };
    let train_pooled = pooled_for(&d, &b, &train)?;
    let test_pooled = pooled_for(&d, &b, &test)?;
    let layer = FeatureLayer::new(&banks, mode, &train_pooled)?;
    let feats = |rows: &[Vec<f32>]| {
        rows.iter()
            .map(|p| layer.features(p))
            .collect::<Result<Vec<_>, _>>()
    };
    let (xtr, xte) = (feats(&train_pooled)?, feats(&test_pooled)?);
    let ytr: Vec<usize> = train.iter().map(|r| label_index(r)).collect();
    let yte: Vec<usize> = test.iter().map(|r| label_index(r)).collect();
    let clf = crate::evalkit::train_softmax(&xtr, &ytr, classes.clone(), &config)?;
    let ptr = clf.classify(&xtr)?;
    let pte = clf.classify(&xte)?;
    let mut parts = vec![
        ("stage", "classify".to_string()),
        ("dataset", d.digest.clone()),
        ("backbone", b.fingerprint.clone()),
        ("feature_mode", format!("{mode:?}")),
        ("l1", config.l1.to_string()),
        ("learning_rate", config.learning_rate.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("iterations", config.max_iterations.to_string()),
        ("seed", config.seed.to_string()),
    ];
    for bank in &banks {
        parts.push(("bank", bank.fingerprint.clone()));
    }
    let report = ClassificationReport {
        fingerprint: fingerprint(&parts),
        feature_dim: layer.dim(),
        train_accuracy: accuracy(&ptr, &ytr)?,
        test_accuracy: accuracy(&pte, &yte)?,
        confusion: ConfusionMatrix::new(classes, &pte, &yte)?,
    };
    let text = report.to_text();
    write_file(&s.out().join("classification.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_describe(s: &Settings, save: Option<&Path>) -> Result<(), CliError> {
    let size = s.image_size.unwrap_or(64);
    let b = load_backbone(s, size)?;
    let input = Shape::new(b.spec.input_channels(), size, size);
    let mut text = b.spec.describe(Some(input))?;
    if b.builtin {
        for (i, f) in BUILTIN_FILTERS.iter().enumerate() {
            let _ = writeln!(text, "filter {i} {} {:?}", f.name, f.kind);
        }
    }
    print!("{text}");
    if let Some(path) = save {
        save_weights(&b.spec, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
