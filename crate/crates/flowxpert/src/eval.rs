//! Metrics, diagnostics, benchmarking, and embedding export.
//!
//! Scoring is one-vs-rest per class with the P+R=0 convention (F1 = 0).
//! Accuracy is deliberately absent: with heavy class imbalance it says
//! nothing, so only precision/recall/F1 are reported. The benchmark
//! times batch-1 single-thread inference per stage; the sparsity and
//! gradient-norm probes quantify why near-zero inputs starve first-layer
//! weight updates (the gradient is the rank-1 outer product of the
//! upstream error and the input, so its norm is proportional to the
//! input norm).

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bundle::ModelBundle;
use crate::flow::RawFeatureRecord;
use crate::nn::layers::Dense;
use crate::nn::matrix::Matrix;
use crate::preprocess::{Class, FeatureVector};
use crate::train::predict;
use crate::util::fmt_g9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("LengthMismatch: {0}")]
    LengthMismatch(String),
    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),
    #[error("BenchWindowTooSmall: need iters >= 1000 and warmup >= 100, got {iters}/{warmup}")]
    BenchWindowTooSmall { iters: usize, warmup: usize },
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// One-vs-rest confusion counts and derived metrics for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { tp, fp, fn_, tn, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub total: usize,
    pub benign: ClassMetrics,
    pub malicious: ClassMetrics,
}

/// Score predictions against ground truth, one-vs-rest per class.
pub fn score(predictions: &[Class], labels: &[Class]) -> Result<MetricsReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput("score needs at least one prediction"));
    }
    let mut counts = [[0usize; 2]; 2]; // [label][prediction]
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l.index()][p.index()] += 1;
    }
    let class = |c: usize| {
        let o = 1 - c;
        ClassMetrics::from_counts(counts[c][c], counts[o][c], counts[c][o], counts[o][o])
    };
    Ok(MetricsReport {
        total: predictions.len(),
        benign: class(Class::Benign.index()),
        malicious: class(Class::Malicious.index()),
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class      precision  recall     f1         tp/fp/fn/tn")?;
        for (name, m) in [("benign", &self.benign), ("malicious", &self.malicious)] {
            writeln!(
                f,
                "{name:<10} {:<10.4} {:<10.4} {:<10.4} {}/{}/{}/{}",
                m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
            )?;
        }
        write!(f, "total records: {}", self.total)
    }
}

/// Fraction of near-zero components, per feature and overall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub tau: f64,
    pub per_feature: Vec<f64>,
    pub overall: f64,
    pub vectors: usize,
}

/// Count components with `|value| < tau` exactly.
pub fn sparsity_report(vectors: &[FeatureVector], tau: f64) -> Result<SparsityReport, EvalError> {
    if vectors.is_empty() {
        return Err(EvalError::EmptyInput("sparsity_report needs at least one vector"));
    }
    let dim = vectors[0].0.len();
    let mut near_zero = vec![0usize; dim];
    for v in vectors {
        for (count, &x) in near_zero.iter_mut().zip(v.as_slice()) {
            if (x as f64).abs() < tau {
                *count += 1;
            }
        }
    }
    let n = vectors.len();
    let per_feature: Vec<f64> = near_zero.iter().map(|&c| c as f64 / n as f64).collect();
    let overall = near_zero.iter().sum::<usize>() as f64 / (n * dim) as f64;
    Ok(SparsityReport { tau, per_feature, overall, vectors: n })
}

impl fmt::Display for SparsityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "near-zero fraction (|x| < {}), {} vectors:", self.tau, self.vectors)?;
        for (i, frac) in self.per_feature.iter().enumerate() {
            writeln!(f, "  feature {i:>2}: {frac:.4}")?;
        }
        write!(f, "  overall:    {:.4}", self.overall)
    }
}

/// One row of the gradient-norm probe: the measured first-layer weight
/// gradient norm at one input scale, against the rank-1 prediction
/// `scale * ||delta|| * ||x||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub scale: f64,
    pub grad_norm: f64,
    pub predicted_norm: f64,
    pub ratio_to_unit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientNormProbe {
    pub delta_norm: f64,
    pub input_norm: f64,
    pub rows: Vec<ProbeRow>,
}

fn frobenius(m: &Matrix<f32>) -> f64 {
    m.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Drive the production dense backward pass with a fixed upstream error
/// on scaled copies of one input and report the first-layer weight
/// gradient norm per scale. For a dense layer the gradient is the outer
/// product `delta^T x`, so the norm must track the input norm exactly;
/// power-of-two scales make the proportionality bit-exact.
pub fn gradient_norm_probe(
    in_dim: usize,
    out_dim: usize,
    scales: &[f64],
    seed: u64,
) -> GradientNormProbe {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let layer: Dense<f32> = Dense::init(in_dim, out_dim, &mut rng);
    let x: Vec<f32> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let delta: Vec<f32> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dy = Matrix::from_vec(1, out_dim, delta.clone());

    let norm = |v: &[f32]| v.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt();
    let delta_norm = norm(&delta);
    let input_norm = norm(&x);

    let unit_norm = {
        let xm = Matrix::from_vec(1, in_dim, x.clone());
        let (_, g) = layer.backward(&xm, &dy);
        frobenius(&g.dw)
    };
    let rows = scales
        .iter()
        .map(|&s| {
            let scaled: Vec<f32> = x.iter().map(|&v| v * s as f32).collect();
            let xm = Matrix::from_vec(1, in_dim, scaled);
            let (_, g) = layer.backward(&xm, &dy);
            let grad_norm = frobenius(&g.dw);
            ProbeRow {
                scale: s,
                grad_norm,
                predicted_norm: s.abs() * delta_norm * input_norm,
                ratio_to_unit: if unit_norm > 0.0 { grad_norm / unit_norm } else { 0.0 },
            }
        })
        .collect();
    GradientNormProbe { delta_norm, input_norm, rows }
}

impl fmt::Display for GradientNormProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "first-layer gradient norm vs input scale (||delta|| = {}, ||x|| = {}):",
            fmt_g9(self.delta_norm),
            fmt_g9(self.input_norm)
        )?;
        writeln!(f, "scale        measured       predicted      ratio-to-unit")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:<14} {:<14} {}",
                fmt_g9(r.scale),
                fmt_g9(r.grad_norm),
                fmt_g9(r.predicted_norm),
                fmt_g9(r.ratio_to_unit)
            )?;
        }
        Ok(())
    }
}

/// Latency percentiles (microseconds) and throughput for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStats {
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
    /// 1e6 / mean_us: throughput implied by the mean latency.
    pub qps_mean_derived: f64,
    /// iters / wall time of the measured loop, including loop overhead.
    pub qps_measured: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub warmup: usize,
    pub iters: usize,
    pub embedding: StageStats,
    pub encoder_head: StageStats,
    pub end_to_end: StageStats,
}

fn run_stage(iters: usize, warmup: usize, mut op: impl FnMut(usize)) -> StageStats {
    for i in 0..warmup {
        op(i);
    }
    let mut lat_ns: Vec<u64> = Vec::with_capacity(iters);
    let loop_start = Instant::now();
    for i in 0..iters {
        let t = Instant::now();
        op(i);
        lat_ns.push(t.elapsed().as_nanos() as u64);
    }
    let total = loop_start.elapsed();
    lat_ns.sort_unstable();
    let pct = |k: f64| -> f64 {
        let rank = ((k / 100.0 * iters as f64).ceil() as usize).clamp(1, iters);
        lat_ns[rank - 1] as f64 / 1_000.0
    };
    let mean_us = lat_ns.iter().sum::<u64>() as f64 / iters as f64 / 1_000.0;
    StageStats {
        p50_us: pct(50.0),
        p90_us: pct(90.0),
        p99_us: pct(99.0),
        mean_us,
        qps_mean_derived: 1e6 / mean_us,
        qps_measured: iters as f64 / total.as_secs_f64(),
    }
}

/// Time batch-1 inference per stage on one thread: the embedding network
/// alone, the encoder plus head on a precomputed joint row, and the full
/// record-to-class prediction. File I/O is excluded throughout.
pub fn bench(
    bundle: &ModelBundle,
    records: &[RawFeatureRecord],
    iters: usize,
    warmup: usize,
) -> Result<BenchReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput("bench needs at least one record"));
    }
    if iters < 1000 || warmup < 100 {
        return Err(EvalError::BenchWindowTooSmall { iters, warmup });
    }
    let vectors = bundle.scaler.transform_all(records);
    let n = records.len();
    let in_dim = vectors[0].0.len();

    let embedding = run_stage(iters, warmup, |i| {
        let v = &vectors[i % n];
        let x = Matrix::from_vec(1, in_dim, v.0.to_vec());
        std::hint::black_box(bundle.embedding.forward_eval(std::hint::black_box(&x)));
    });

    let joints: Vec<Matrix<f32>> = vectors
        .iter()
        .map(|v| {
            let x = Matrix::from_vec(1, in_dim, v.0.to_vec());
            Matrix::hconcat(&x, &bundle.embedding.forward_eval(&x))
        })
        .collect();
    let encoder_head = run_stage(iters, warmup, |i| {
        let joint = std::hint::black_box(&joints[i % n]);
        std::hint::black_box(bundle.head.forward(&bundle.encoder.forward_eval(joint)));
    });

    let end_to_end = run_stage(iters, warmup, |i| {
        let record = std::hint::black_box(&records[i % n]);
        std::hint::black_box(predict(bundle, record));
    });

    Ok(BenchReport {
        batch_size: 1,
        warmup,
        iters,
        embedding,
        encoder_head,
        end_to_end,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "latency (microseconds), batch size {}, {} iterations after {} warmup:",
            self.batch_size, self.iters, self.warmup
        )?;
        writeln!(f, "stage          p50        p90        p99        mean       qps")?;
        for (name, s) in [
            ("embedding", &self.embedding),
            ("encoder+head", &self.encoder_head),
            ("end-to-end", &self.end_to_end),
        ] {
            writeln!(
                f,
                "{name:<14} {:<10.2} {:<10.2} {:<10.2} {:<10.2} {:.0}",
                s.p50_us, s.p90_us, s.p99_us, s.mean_us, s.qps_measured
            )?;
        }
        Ok(())
    }
}

/// Write embeddings as CSV: one row per record in dataset order, values
/// at 9 significant digits, with optional label and cluster columns left
/// empty when unknown. Identical inputs produce identical bytes.
pub fn export_embeddings(
    bundle: &ModelBundle,
    records: &[RawFeatureRecord],
    labels: Option<&[Class]>,
    clusters: Option<&[i32]>,
    out: &mut impl Write,
) -> Result<(), EvalError> {
    if let Some(l) = labels {
        if l.len() != records.len() {
            return Err(EvalError::LengthMismatch(format!(
                "{} labels vs {} records",
                l.len(),
                records.len()
            )));
        }
    }
    if let Some(c) = clusters {
        if c.len() != records.len() {
            return Err(EvalError::LengthMismatch(format!(
                "{} cluster ids vs {} records",
                c.len(),
                records.len()
            )));
        }
    }
    let vectors = bundle.scaler.transform_all(records);
    let dim = bundle.embedding.out_dim();
    let mut header = String::from("index");
    for i in 0..dim {
        header.push_str(&format!(",e{i}"));
    }
    header.push_str(",label,cluster");
    writeln!(out, "{header}")?;

    let mut index = 0usize;
    for chunk in vectors.chunks(1024) {
        let mut data = Vec::with_capacity(chunk.len() * chunk[0].0.len());
        for v in chunk {
            data.extend_from_slice(v.as_slice());
        }
        let x = Matrix::from_vec(chunk.len(), chunk[0].0.len(), data);
        let emb = bundle.embedding.forward_eval(&x);
        for r in 0..chunk.len() {
            let mut line = index.to_string();
            for &v in emb.row(r) {
                line.push(',');
                line.push_str(&fmt_g9(v as f64));
            }
            line.push(',');
            if let Some(l) = labels {
                line.push_str(&l[index].to_string());
            }
            line.push(',');
            if let Some(c) = clusters {
                line.push_str(&c[index].to_string());
            }
            writeln!(out, "{line}")?;
            index += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::TrainingManifest;
    use crate::nn::nets::{
        ClassifierHead, EmbeddingNet, EncoderNet, EMBED_DIM, EMBED_HIDDEN, ENCODER_DIMS,
        INPUT_DIM, NUM_CLASSES,
    };
    use crate::preprocess::Scaler;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(v: &[u8]) -> Vec<Class> {
        v.iter()
            .map(|&x| if x == 0 { Class::Benign } else { Class::Malicious })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = b(&[0, 1, 0, 1, 1]);
        let report = score(&labels, &labels).unwrap();
        for m in [report.benign, report.malicious] {
            assert_eq!(m.precision, 1.0);
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.f1, 1.0);
            assert_eq!(m.fp, 0);
            assert_eq!(m.fn_, 0);
        }
        assert_eq!(report.total, 5);
    }

    #[test]
    fn known_confusion_counts_give_known_metrics() {
        // Malicious one-vs-rest: TP=9, FP=1, FN=3, TN=2.
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..9 {
            labels.push(Class::Malicious);
            preds.push(Class::Malicious);
        }
        labels.push(Class::Benign);
        preds.push(Class::Malicious);
        for _ in 0..3 {
            labels.push(Class::Malicious);
            preds.push(Class::Benign);
        }
        for _ in 0..2 {
            labels.push(Class::Benign);
            preds.push(Class::Benign);
        }
        let m = score(&preds, &labels).unwrap().malicious;
        assert_eq!(m.tp, 9);
        assert_eq!(m.fp, 1);
        assert_eq!(m.fn_, 3);
        assert_eq!(m.tn, 2);
        assert!((m.precision - 0.9).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.818181818181818).abs() < 1e-12);
    }

    #[test]
    fn all_benign_predictions_zero_out_malicious_metrics() {
        let labels = b(&[0, 1, 1, 0, 1]);
        let preds = vec![Class::Benign; 5];
        let report = score(&preds, &labels).unwrap();
        assert_eq!(report.malicious.recall, 0.0);
        assert_eq!(report.malicious.f1, 0.0);
        assert_eq!(report.malicious.precision, 0.0);
        // Benign soaks up everything it predicted.
        assert_eq!(report.benign.tp, 2);
        assert_eq!(report.benign.fp, 3);
    }

    #[test]
    fn score_matches_brute_force_recount_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(1..400);
            let labels: Vec<Class> = (0..n).map(|_| b(&[rng.gen_range(0..2u8)])[0]).collect();
            let preds: Vec<Class> = (0..n).map(|_| b(&[rng.gen_range(0..2u8)])[0]).collect();
            let report = score(&preds, &labels).unwrap();
            for class in [Class::Benign, Class::Malicious] {
                let tp = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l == class && p == class)
                    .count();
                let fp = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l != class && p == class)
                    .count();
                let fn_ = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &p)| l == class && p != class)
                    .count();
                let tn = n - tp - fp - fn_;
                let m = if class == Class::Benign { report.benign } else { report.malicious };
                assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
                assert_eq!(m.tp + m.fp + m.fn_ + m.tn, n);
            }
        }
    }

    #[test]
    fn score_rejects_mismatched_and_empty_inputs() {
        assert!(matches!(
            score(&b(&[0]), &b(&[0, 1])),
            Err(EvalError::LengthMismatch(_))
        ));
        assert!(matches!(score(&[], &[]), Err(EvalError::EmptyInput(_))));
    }

    #[test]
    fn sparsity_counts_exactly() {
        let zeros = vec![FeatureVector([0.0; INPUT_DIM]); 4];
        assert_eq!(sparsity_report(&zeros, 0.01).unwrap().overall, 1.0);

        // One-hot only: a single 1.0 per vector, everything else zero.
        let mut v = [0.0f32; INPUT_DIM];
        v[1] = 1.0;
        let report = sparsity_report(&[FeatureVector(v); 3], 0.01).unwrap();
        assert!((report.overall - 14.0 / 15.0).abs() < 1e-12);
        assert_eq!(report.per_feature[1], 0.0);
        assert_eq!(report.per_feature[0], 1.0);

        let dense = vec![FeatureVector([0.75; INPUT_DIM]); 5];
        assert_eq!(sparsity_report(&dense, 0.01).unwrap().overall, 0.0);
    }

    #[test]
    fn sparsity_matches_independent_count_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let tau = 0.3;
        let vectors: Vec<FeatureVector> = (0..200)
            .map(|_| {
                let mut v = [0.0f32; INPUT_DIM];
                for x in &mut v {
                    *x = rng.gen_range(-1.0..1.0);
                }
                FeatureVector(v)
            })
            .collect();
        let report = sparsity_report(&vectors, tau).unwrap();
        let expected = vectors
            .iter()
            .flat_map(|v| v.as_slice())
            .filter(|&&x| (x as f64).abs() < tau)
            .count() as f64
            / (200 * INPUT_DIM) as f64;
        assert_eq!(report.overall, expected);
    }

    #[test]
    fn gradient_norm_tracks_input_scale_exactly() {
        let probe = gradient_norm_probe(15, 128, &[1.0, 0.5, 0.25, 0.125], 7);
        assert_eq!(probe.rows[0].ratio_to_unit, 1.0);
        for (row, expected) in probe.rows.iter().zip([1.0, 0.5, 0.25, 0.125]) {
            assert!(
                (row.ratio_to_unit - expected).abs() < 1e-6,
                "scale {}: ratio {}",
                row.scale,
                row.ratio_to_unit
            );
            // Rank-1 identity: measured norm equals ||delta|| * ||x|| * s.
            assert!((row.grad_norm - row.predicted_norm).abs() / row.predicted_norm < 1e-5);
        }
    }

    #[test]
    fn zero_input_zeroes_the_weight_gradient_only() {
        let probe = gradient_norm_probe(8, 4, &[0.0], 9);
        assert_eq!(probe.rows[0].grad_norm, 0.0);
        // The upstream error itself is nonzero; only the weight gradient
        // vanishes with the input.
        assert!(probe.delta_norm > 0.0);
    }

    fn tiny_bundle() -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        ModelBundle {
            scaler: Scaler {
                mins: vec![0.0; 12],
                maxs: vec![1.0; 12],
            },
            protocols: vec!["TCP".into(), "UDP".into(), "OTHER".into()],
            margin: 1.0,
            embedding: EmbeddingNet::init(INPUT_DIM, EMBED_HIDDEN, EMBED_DIM, &mut rng),
            encoder: EncoderNet::init(INPUT_DIM + EMBED_DIM, ENCODER_DIMS, &mut rng),
            head: ClassifierHead::init(ENCODER_DIMS[2], NUM_CLASSES, &mut rng),
            manifest: TrainingManifest::placeholder(),
        }
    }

    fn sample_record(i: u64) -> RawFeatureRecord {
        RawFeatureRecord {
            protocol: crate::pcap::Protocol::Tcp,
            flow_dur: 0.5 + i as f64 * 0.01,
            pkt_num: 3 + i,
            pkts_per_sec: 6.0,
            iat_mean: 0.1,
            iat_std: 0.05,
            syn_num: 1,
            fin_num: 1,
            rst_num: 0,
            num_s_port: 2,
            num_d_ip: 1,
            num_d_port: 1,
            con_per_sec: 0.8,
            meta: crate::flow::FlowMeta::unspecified(),
        }
    }

    #[test]
    fn bench_produces_ordered_percentiles_and_positive_throughput() {
        let bundle = tiny_bundle();
        let records: Vec<RawFeatureRecord> = (0..4).map(sample_record).collect();
        let report = bench(&bundle, &records, 1000, 100).unwrap();
        for s in [report.embedding, report.encoder_head, report.end_to_end] {
            assert!(s.p50_us <= s.p90_us);
            assert!(s.p90_us <= s.p99_us);
            assert!(s.mean_us > 0.0);
            assert!(s.qps_measured > 0.0);
            assert!((s.qps_mean_derived - 1e6 / s.mean_us).abs() < 1e-9);
        }
        assert_eq!(report.batch_size, 1);
    }

    #[test]
    fn bench_rejects_tiny_windows() {
        let bundle = tiny_bundle();
        let records = vec![sample_record(0)];
        assert!(matches!(
            bench(&bundle, &records, 10, 100),
            Err(EvalError::BenchWindowTooSmall { .. })
        ));
        assert!(matches!(
            bench(&bundle, &records, 1000, 5),
            Err(EvalError::BenchWindowTooSmall { .. })
        ));
    }

    #[test]
    fn embedding_export_is_deterministic_and_row_per_record() {
        let bundle = tiny_bundle();
        let records: Vec<RawFeatureRecord> = (0..5).map(sample_record).collect();
        let classes = b(&[0, 1, 0, 0, 1]);
        let clusters = vec![0, 1, 0, -1, 1];
        let mut a = Vec::new();
        export_embeddings(&bundle, &records, Some(&classes), Some(&clusters), &mut a).unwrap();
        let mut bbytes = Vec::new();
        export_embeddings(&bundle, &records, Some(&classes), Some(&clusters), &mut bbytes).unwrap();
        assert_eq!(a, bbytes);

        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("index,e0,"));
        assert!(lines[0].ends_with(",label,cluster"));
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].ends_with(",benign,0"));
        assert!(lines[4].ends_with(",benign,-1"));
    }

    #[test]
    fn zeroed_embedding_exports_zero_columns() {
        let mut bundle = tiny_bundle();
        for t in bundle.embedding.trainable_mut() {
            for v in t {
                *v = 0.0;
            }
        }
        let records = vec![sample_record(1)];
        let mut out = Vec::new();
        export_embeddings(&bundle, &records, None, None, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row, format!("0,{},,", vec!["0"; EMBED_DIM].join(",")));
    }
}
