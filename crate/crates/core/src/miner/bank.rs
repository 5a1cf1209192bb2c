//! Pattern bank text format.
//!
//! ```text
//! patternnet-bank 1
//! fingerprint <hex>                       run configuration that produced it
//! backbone <hex>
//! class <name>
//! reference <description>
//! pattern-size <k>
//! threshold-policy <positive|reference|all> <q>
//! thresholds <T_0> <T_1> ... <T_{N_c-1}>
//! pattern <neuron> <f,f,...> <w,w,...> <positive-rate> <negative-rate>
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so writing and reading
//! a bank reproduces every value exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{ThresholdPolicy, ThresholdVector, VisualPattern};

pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot access pattern bank: {0}")]
    Io(#[from] std::io::Error),
    #[error("pattern bank line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid pattern bank: {0}")]
    Invalid(String),
}

/// Training-set detection rates of a pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternStats {
    pub positive_rate: f64,
    pub negative_rate: f64,
}

impl PatternStats {
    pub fn gap(&self) -> f64 {
        self.positive_rate - self.negative_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternBank {
    pub fingerprint: String,
    pub backbone: String,
    pub class: String,
    pub reference: String,
    pub pattern_size: usize,
    pub thresholds: ThresholdVector,
    pub patterns: Vec<(VisualPattern, PatternStats)>,
}

fn join<T: std::fmt::Display>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

impl PatternBank {
    pub fn filter_count(&self) -> usize {
        self.thresholds.len()
    }

    /// Patterns ordered by decreasing positive-minus-negative rate, ties
    /// by neuron.
    pub fn ranked(&self) -> Vec<&(VisualPattern, PatternStats)> {
        let mut v: Vec<_> = self.patterns.iter().collect();
        v.sort_by(|a, b| {
            b.1.gap()
                .total_cmp(&a.1.gap())
                .then(a.0.neuron.cmp(&b.0.neuron))
        });
        v
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "patternnet-bank {BANK_VERSION}");
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        let _ = writeln!(out, "backbone {}", self.backbone);
        let _ = writeln!(out, "class {}", self.class);
        let _ = writeln!(out, "reference {}", self.reference);
        let _ = writeln!(out, "pattern-size {}", self.pattern_size);
        let p = self.thresholds.policy;
        let _ = writeln!(out, "threshold-policy {} {}", p.fit_set, p.quantile);
        let _ = writeln!(out, "thresholds {}", join(&self.thresholds.values, " "));
        for (pat, stats) in &self.patterns {
            let _ = writeln!(
                out,
                "pattern {} {} {} {} {}",
                pat.neuron,
                join(&pat.filters, ","),
                join(&pat.weights, ","),
                stats.positive_rate,
                stats.negative_rate
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), BankError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, BankError> {
        PatternBank::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, BankError> {
        let err = |line: usize, message: String| BankError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == format!("patternnet-bank {BANK_VERSION}") => {}
            Some((n, l)) => return Err(err(n, format!("bad header {l:?}"))),
            None => return Err(err(0, "empty pattern bank".into())),
        }
        let mut fingerprint = None;
        let mut backbone = None;
        let mut class = None;
        let mut reference = None;
        let mut pattern_size = None;
        let mut policy = None;
        let mut values: Option<Vec<f32>> = None;
        let mut patterns = Vec::new();
        fn num<T: std::str::FromStr>(n: usize, v: &str) -> Result<T, BankError> {
            v.parse().map_err(|_| BankError::Parse {
                line: n,
                message: format!("bad number {v:?}"),
            })
        }
        fn list<T: std::str::FromStr>(n: usize, v: &str) -> Result<Vec<T>, BankError> {
            v.split(',').map(|x| num(n, x)).collect()
        }
        for (n, line) in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let fields: Vec<&str> = rest.split_whitespace().collect();
            match (key, fields.as_slice()) {
                ("fingerprint", [v]) => fingerprint = Some(v.to_string()),
                ("backbone", [v]) => backbone = Some(v.to_string()),
                ("class", [v]) => class = Some(v.to_string()),
                ("reference", _) if !rest.is_empty() => reference = Some(rest.to_string()),
                ("pattern-size", [v]) => pattern_size = Some(num::<usize>(n, v)?),
                ("threshold-policy", [set, q]) => {
                    policy = Some(ThresholdPolicy {
                        fit_set: set.parse().map_err(|m| err(n, m))?,
                        quantile: num(n, q)?,
                    })
                }
                ("thresholds", vs) => {
                    values = Some(vs.iter().map(|v| num(n, v)).collect::<Result<_, _>>()?)
                }
                ("pattern", [neuron, filters, weights, pos, neg]) => {
                    let filters: Vec<usize> = list(n, filters)?;
                    let weights: Vec<f64> = list(n, weights)?;
                    if filters.len() != weights.len() {
                        return Err(err(n, "filter and weight counts differ".into()));
                    }
                    patterns.push((
                        VisualPattern {
                            neuron: num(n, neuron)?,
                            filters,
                            weights,
                        },
                        PatternStats {
                            positive_rate: num(n, pos)?,
                            negative_rate: num(n, neg)?,
                        },
                    ));
                }
                _ => return Err(err(n, format!("unrecognised line {line:?}"))),
            }
        }
        let missing = |what: &str| BankError::Invalid(format!("missing {what} line"));
        let bank = PatternBank {
            fingerprint: fingerprint.ok_or_else(|| missing("fingerprint"))?,
            backbone: backbone.ok_or_else(|| missing("backbone"))?,
            class: class.ok_or_else(|| missing("class"))?,
            reference: reference.ok_or_else(|| missing("reference"))?,
            pattern_size: pattern_size.ok_or_else(|| missing("pattern-size"))?,
            thresholds: ThresholdVector {
                values: values.ok_or_else(|| missing("thresholds"))?,
                policy: policy.ok_or_else(|| missing("threshold-policy"))?,
            },
            patterns,
        };
        bank.validate()?;
        Ok(bank)
    }

    /// Filter indices in range, sorted and distinct; thresholds finite.
    pub fn validate(&self) -> Result<(), BankError> {
        let n_c = self.filter_count();
        if self.thresholds.values.iter().any(|t| !t.is_finite()) {
            return Err(BankError::Invalid("non-finite threshold".into()));
        }
        for (p, _) in &self.patterns {
            if p.filters.is_empty()
                || p.filters.windows(2).any(|w| w[0] >= w[1])
                || p.filters.iter().any(|&f| f >= n_c)
            {
                return Err(BankError::Invalid(format!(
                    "pattern of neuron {} has bad filter set {:?} for {n_c} filters",
                    p.neuron, p.filters
                )));
            }
        }
        Ok(())
    }
}
