//! Planted-motif benchmark shared by the integration tests.

#![allow(dead_code)]

use patternnet::backbone::{builtin_filterbank, BackboneSpec};
use patternnet::miner::{mine, HeadConfig, LabeledSet, MiningOutcome, ThresholdPolicy};
use patternnet::synthdata::{ClassSpec, GeneratorConfig, MotifKind, MotifSpec};
use rayon::prelude::*;

pub const IMAGE_SIZE: usize = 64;
pub const MOTIF_SIZE: usize = 16;

/// 200 checker positives followed by 200 noise negatives.
pub fn benchmark_config() -> GeneratorConfig {
    GeneratorConfig {
        classes: vec![ClassSpec::single(
            MotifSpec::new(MotifKind::Checker, MOTIF_SIZE),
            200,
        )],
        negatives: 200,
        image_size: IMAGE_SIZE,
        seed: 7,
        ..GeneratorConfig::default()
    }
}

pub fn builtin() -> BackboneSpec {
    builtin_filterbank(IMAGE_SIZE, IMAGE_SIZE).unwrap()
}

pub fn pooled_all(config: &GeneratorConfig, spec: &BackboneSpec) -> Vec<Vec<f32>> {
    (0..config.total_images())
        .into_par_iter()
        .map(|i| spec.pooled_responses(&config.sample(i).unwrap().0).unwrap())
        .collect()
}

/// Mines `positives` against `negatives` with N_f = 8, k = 3.
pub fn mine_sets(
    pooled: &[Vec<f32>],
    positives: Vec<usize>,
    negatives: Vec<usize>,
    seed: u64,
) -> MiningOutcome {
    let ids: Vec<String> = (0..pooled.len()).map(|i| i.to_string()).collect();
    let labels = LabeledSet::new(positives, negatives).unwrap();
    let config = HeadConfig {
        neurons: 8,
        seed,
        ..HeadConfig::default()
    };
    mine(
        &ids,
        pooled,
        &labels,
        ThresholdPolicy::default(),
        &config,
        3,
    )
    .unwrap()
}
