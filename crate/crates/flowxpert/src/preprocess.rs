//! From raw flow records to fixed-width model inputs.
//!
//! The categorical protocol becomes a 3-way one-hot prefix and the twelve
//! continuous features are min-max scaled against bounds fitted on
//! training data, giving 15-dimensional vectors. Labeling, fold splits,
//! and downsampling are index-based helpers so callers can slice one
//! record set many ways without copying it.

use std::fmt;
use std::net::IpAddr;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::RawFeatureRecord;
use crate::pcap::Protocol;

/// One-hot protocol slots followed by the scaled continuous features.
pub const PROTOCOL_SLOTS: usize = 3;
pub const CONTINUOUS_DIM: usize = 12;
pub const FEATURE_DIM: usize = PROTOCOL_SLOTS + CONTINUOUS_DIM;

/// Fixed one-hot slot order.
pub const PROTOCOL_VOCAB: [Protocol; PROTOCOL_SLOTS] =
    [Protocol::Tcp, Protocol::Udp, Protocol::Other];

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("EmptyTrainingSet: cannot fit a scaler on zero records")]
    EmptyTrainingSet,
    #[error("MalformedRule: line {line}: {detail}")]
    MalformedRule { line: usize, detail: String },
    #[error("UnknownLabel: {0:?} (expected \"benign\" or \"malicious\")")]
    UnknownLabel(String),
    #[error("TooFewRecords: cannot split {n} records into {k} folds")]
    TooFewRecords { n: usize, k: usize },
    #[error("InvalidRate: downsample rate {0} outside (0, 1]")]
    InvalidRate(f64),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ground-truth / predicted traffic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Benign,
    Malicious,
}

impl Class {
    /// Index into logit/probability arrays.
    pub fn index(self) -> usize {
        match self {
            Class::Benign => 0,
            Class::Malicious => 1,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Benign => "benign",
            Class::Malicious => "malicious",
        })
    }
}

impl std::str::FromStr for Class {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Class::Benign),
            "malicious" => Ok(Class::Malicious),
            other => Err(PreprocessError::UnknownLabel(other.to_string())),
        }
    }
}

/// Parse raw label strings (e.g. a CSV label column).
pub fn parse_labels(raw: &[String]) -> Result<Vec<Class>, PreprocessError> {
    raw.iter().map(|s| s.parse()).collect()
}

/// Model input vector: one-hot protocol plus scaled continuous features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f32; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

fn protocol_one_hot(p: Protocol) -> [f32; PROTOCOL_SLOTS] {
    let mut slots = [0.0; PROTOCOL_SLOTS];
    let idx = PROTOCOL_VOCAB.iter().position(|&v| v == p).expect("in vocab");
    slots[idx] = 1.0;
    slots
}

/// Per-feature min-max bounds fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Scaler {
    /// Fit bounds over the training records' continuous features.
    pub fn fit(records: &[RawFeatureRecord]) -> Result<Self, PreprocessError> {
        if records.is_empty() {
            return Err(PreprocessError::EmptyTrainingSet);
        }
        let mut mins = vec![f64::INFINITY; CONTINUOUS_DIM];
        let mut maxs = vec![f64::NEG_INFINITY; CONTINUOUS_DIM];
        for r in records {
            for (i, v) in r.continuous().into_iter().enumerate() {
                mins[i] = mins[i].min(v);
                maxs[i] = maxs[i].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    /// Scale one record into a model input. Values are clamped to [0, 1]
    /// so out-of-range inference inputs stay inside the trained domain; a
    /// constant training feature (max == min) maps to 0.
    pub fn transform(&self, record: &RawFeatureRecord) -> FeatureVector {
        let mut out = [0.0f32; FEATURE_DIM];
        out[..PROTOCOL_SLOTS].copy_from_slice(&protocol_one_hot(record.protocol));
        for (i, v) in record.continuous().into_iter().enumerate() {
            let span = self.maxs[i] - self.mins[i];
            let scaled = if span == 0.0 {
                0.0
            } else {
                ((v - self.mins[i]) / span).clamp(0.0, 1.0)
            };
            out[PROTOCOL_SLOTS + i] = scaled as f32;
        }
        FeatureVector(out)
    }

    pub fn transform_all(&self, records: &[RawFeatureRecord]) -> Vec<FeatureVector> {
        records.iter().map(|r| self.transform(r)).collect()
    }
}

/// One labeling rule: every populated field must match; `None` is a
/// wildcard. A rule matches a flow in either orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRule {
    pub src_ip: Option<IpAddr>,
    pub dst_ip: Option<IpAddr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<Protocol>,
    pub class: Class,
}

impl LabelRule {
    fn matches(&self, r: &RawFeatureRecord) -> bool {
        let dir = |a_ip: Option<IpAddr>,
                   a_port: Option<u16>,
                   b_ip: Option<IpAddr>,
                   b_port: Option<u16>| {
            a_ip.is_none_or(|v| v == r.meta.src_ip)
                && a_port.is_none_or(|v| v == r.meta.src_port)
                && b_ip.is_none_or(|v| v == r.meta.dst_ip)
                && b_port.is_none_or(|v| v == r.meta.dst_port)
        };
        self.protocol.is_none_or(|p| p == r.protocol)
            && (dir(self.src_ip, self.src_port, self.dst_ip, self.dst_port)
                || dir(self.dst_ip, self.dst_port, self.src_ip, self.src_port))
    }
}

pub const LABEL_SPEC_HEADER: &str = "src_ip,dst_ip,src_port,dst_port,protocol,label";

/// Ordered labeling rules; the first match wins, no match means benign.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSpec {
    pub rules: Vec<LabelRule>,
}

impl LabelSpec {
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(PreprocessError::MalformedRule {
            line: 1,
            detail: "empty label spec".to_string(),
        })?;
        if header != LABEL_SPEC_HEADER {
            return Err(PreprocessError::MalformedRule {
                line: 1,
                detail: format!("expected header {LABEL_SPEC_HEADER:?}"),
            });
        }

        let mut rules = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(PreprocessError::MalformedRule {
                    line: lineno,
                    detail: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            fn opt<T: std::str::FromStr>(
                s: &str,
                line: usize,
                what: &str,
            ) -> Result<Option<T>, PreprocessError> {
                if s == "*" {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| PreprocessError::MalformedRule {
                            line,
                            detail: format!("bad {what} {s:?}"),
                        })
                }
            }
            rules.push(LabelRule {
                src_ip: opt(fields[0], lineno, "src_ip")?,
                dst_ip: opt(fields[1], lineno, "dst_ip")?,
                src_port: opt(fields[2], lineno, "src_port")?,
                dst_port: opt(fields[3], lineno, "dst_port")?,
                protocol: opt(fields[4], lineno, "protocol")?,
                class: fields[5]
                    .parse()
                    .map_err(|_| PreprocessError::MalformedRule {
                        line: lineno,
                        detail: format!("bad label {:?}", fields[5]),
                    })?,
            });
        }
        Ok(Self { rules })
    }

    pub fn from_path(path: &Path) -> Result<Self, PreprocessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn classify(&self, record: &RawFeatureRecord) -> Class {
        self.rules
            .iter()
            .find(|rule| rule.matches(record))
            .map_or(Class::Benign, |rule| rule.class)
    }

    pub fn classify_all(&self, records: &[RawFeatureRecord]) -> Vec<Class> {
        records.iter().map(|r| self.classify(r)).collect()
    }
}

/// Split `0..n` into `k` near-equal disjoint folds (sizes differ by at
/// most one), shuffled by `seed`, each fold sorted ascending.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, PreprocessError> {
    if k < 2 || n < k {
        return Err(PreprocessError::TooFewRecords { n, k });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold: Vec<usize> = indices[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Pick ceil(rate * n) distinct indices uniformly without replacement,
/// returned sorted ascending.
pub fn downsample(n: usize, rate: f64, seed: u64) -> Result<Vec<usize>, PreprocessError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PreprocessError::InvalidRate(rate));
    }
    let m = ((rate * n as f64).ceil() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..m {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut picked = indices[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
