//! Acceptance suite: ten end-to-end checks covering parameter accounting,
//! gradient correctness, clustering equivalence, margin separation, loss
//! monotonicity, exact flow features, detection quality, gradient-norm
//! scaling, prediction latency, and byte-level determinism. Each test
//! prints one `PASS <name>: <detail>` line; failures panic with a
//! matching `FAIL <name>` message.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowxpert::bundle::{encode_model, ModelBundle, TrainingManifest};
use flowxpert::cluster::{dbscan, PairLabel, PseudoLabels, NOISE};
use flowxpert::eval::{bench, gradient_norm_probe, score};
use flowxpert::flow::{FlowConfig, FlowTable, RawFeatureRecord};
use flowxpert::nn::gradcheck::{finite_diff_gradient, max_rel_err, DEFAULT_STEP};
use flowxpert::nn::loss::{contrastive, cross_entropy, pairwise_hinge, ContrastivePair};
use flowxpert::nn::matrix::Matrix;
use flowxpert::nn::nets::{
    ClassifierHead, EmbeddingNet, EncoderNet, EMBED_DIM, EMBED_HIDDEN, ENCODER_DIMS, INPUT_DIM,
    NUM_CLASSES,
};
use flowxpert::pcap::CaptureReader;
use flowxpert::preprocess::{split_folds, Class, Scaler, FEATURE_DIM};
use flowxpert::train::{predict_all, train_embedding, train_pipeline, EmbedTrainConfig, PipelineConfig};
use flowxpert::util::fmt_g9;

/// The heavy tests share one CPU; serializing them keeps every wall-clock
/// budget meaningful regardless of the harness thread count.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

macro_rules! ensure {
    ($name:expr, $cond:expr, $($why:tt)+) => {
        assert!($cond, "FAIL {}: {}", $name, format_args!($($why)+))
    };
}

fn report_pass(name: &str, detail: impl std::fmt::Display) {
    println!("PASS {name}: {detail}");
}

fn full_size_bundle(scaler: Scaler, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelBundle {
        scaler,
        protocols: vec!["TCP".into(), "UDP".into(), "OTHER".into()],
        margin: 1.0,
        embedding: EmbeddingNet::init(INPUT_DIM, EMBED_HIDDEN, EMBED_DIM, &mut rng),
        encoder: EncoderNet::init(INPUT_DIM + EMBED_DIM, ENCODER_DIMS, &mut rng),
        head: ClassifierHead::init(ENCODER_DIMS[2], NUM_CLASSES, &mut rng),
        manifest: TrainingManifest::placeholder(),
    }
}

fn unit_scaler() -> Scaler {
    Scaler { mins: vec![0.0; 12], maxs: vec![1.0; 12] }
}

// ---- 1. parameter accounting ----------------------------------------------

#[test]
fn model_reports_exact_parameter_count_and_payload_size() {
    let _guard = serial();
    const NAME: &str = "parameter accounting";
    let t0 = Instant::now();

    let bundle = full_size_bundle(unit_scaler(), 1);
    let (e, n, h) = (
        bundle.embedding.param_count(),
        bundle.encoder.param_count(),
        bundle.head.param_count(),
    );
    ensure!(NAME, e == 4_368, "embedding has {e} trainable parameters, expected 4368");
    ensure!(NAME, n == 180_608, "encoder has {n} trainable parameters, expected 180608");
    ensure!(NAME, h == 258, "classifier head has {h} trainable parameters, expected 258");
    let total = bundle.param_count();
    ensure!(NAME, total == 185_234, "model has {total} trainable parameters, expected 185234");

    // Byte check against the serialized file itself, header excluded.
    let bytes = encode_model(&bundle);
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = bytes.len() - 12 - header_len - 4;
    let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    let tensors = header["tensors"].as_array().unwrap();
    let first_frozen = tensors
        .iter()
        .position(|t| !t["trainable"].as_bool().unwrap())
        .unwrap_or(tensors.len());
    ensure!(
        NAME,
        tensors[first_frozen..].iter().all(|t| !t["trainable"].as_bool().unwrap()),
        "learned tensors are not a contiguous payload prefix"
    );
    let tensor_bytes = |t: &serde_json::Value| -> usize {
        t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap() as usize).product::<usize>() * 4
    };
    let learned: usize = tensors[..first_frozen].iter().map(tensor_bytes).sum();
    let frozen: usize = tensors[first_frozen..].iter().map(tensor_bytes).sum();
    ensure!(NAME, learned == 740_936, "learned payload is {learned} bytes, expected 740936");
    ensure!(
        NAME,
        frozen == 2 * EMBED_HIDDEN * 4,
        "non-learned payload is {frozen} bytes, expected {} of batch-norm running stats",
        2 * EMBED_HIDDEN * 4
    );
    ensure!(
        NAME,
        payload == learned + frozen,
        "payload is {payload} bytes, header table declares {}",
        learned + frozen
    );

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(1), "took {elapsed:?}, budget 1 s");
    report_pass(
        NAME,
        format_args!(
            "185234 parameters (4368 + 180608 + 258); 740936-byte learned payload as a \
             contiguous prefix, plus 1024 bytes of batch-norm running stats; in {elapsed:?}"
        ),
    );
}

// ---- 2. gradient correctness ----------------------------------------------

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

fn embed_trainables(net: &EmbeddingNet<f64>) -> Vec<f64> {
    net.tensors()
        .into_iter()
        .filter(|(s, _)| s.trainable)
        .flat_map(|(_, v)| v.to_vec())
        .collect()
}

fn set_embed_trainables(net: &mut EmbeddingNet<f64>, theta: &[f64]) {
    let mut offset = 0;
    for slice in net.trainable_mut() {
        slice.copy_from_slice(&theta[offset..offset + slice.len()]);
        offset += slice.len();
    }
    assert_eq!(offset, theta.len());
}

#[test]
fn analytic_gradients_match_finite_differences_for_both_losses() {
    let _guard = serial();
    const NAME: &str = "gradient correctness";
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0usize;

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Contrastive loss through dense, batch-norm, and leaky-relu.
        let base: EmbeddingNet<f64> = EmbeddingNet::init(4, 6, 2, &mut rng);
        let x = random_matrix(5, 4, 0.0, 1.0, &mut rng);
        let pairs = vec![
            ContrastivePair { i: 0, j: 1, label: PairLabel::Positive },
            ContrastivePair { i: 1, j: 2, label: PairLabel::Positive },
            ContrastivePair { i: 0, j: 3, label: PairLabel::Negative },
            ContrastivePair { i: 2, j: 4, label: PairLabel::Negative },
        ];
        let theta = embed_trainables(&base);
        let loss_at = |t: &[f64]| -> f64 {
            // Fresh clone per evaluation: forward_train moves running
            // stats, and probes must not see each other's state.
            let mut net = base.clone();
            set_embed_trainables(&mut net, t);
            let (out, _) = net.forward_train(&x).unwrap();
            contrastive(&out, &pairs, 1.0).0
        };
        let mut net = base.clone();
        let (out, cache) = net.forward_train(&x).unwrap();
        let (_, demb) = contrastive(&out, &pairs, 1.0);
        let grads = net.backward(&cache, &demb);
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
        let numeric = finite_diff_gradient(loss_at, &theta, DEFAULT_STEP);
        let err = max_rel_err(&analytic, &numeric);
        ensure!(NAME, err < 1e-4, "contrastive, seed {seed}: max relative error {err:.3e}");
        worst = worst.max(err);
        checks += 1;

        // Cross-entropy through the encoder stack and classifier head.
        let enc_base: EncoderNet<f64> = EncoderNet::init(5, [7, 6, 4], &mut rng);
        let head_base: ClassifierHead<f64> = ClassifierHead::init(4, 2, &mut rng);
        let x2 = random_matrix(5, 5, -1.0, 1.0, &mut rng);
        let targets = vec![0usize, 1, 0, 1, 1];

        let theta2: Vec<f64> = enc_base
            .tensors()
            .into_iter()
            .chain(head_base.tensors())
            .filter(|(s, _)| s.trainable)
            .flat_map(|(_, v)| v.to_vec())
            .collect();
        let set2 = |enc: &mut EncoderNet<f64>, head: &mut ClassifierHead<f64>, t: &[f64]| {
            let mut offset = 0;
            let mut params = enc.trainable_mut();
            params.extend(head.trainable_mut());
            for slice in params {
                slice.copy_from_slice(&t[offset..offset + slice.len()]);
                offset += slice.len();
            }
            assert_eq!(offset, t.len());
        };
        let loss2_at = |t: &[f64]| -> f64 {
            let mut enc = enc_base.clone();
            let mut head = head_base.clone();
            set2(&mut enc, &mut head, t);
            let (enc_out, _) = enc.forward_train(&x2);
            cross_entropy(&head.forward(&enc_out), &targets).0
        };
        let (enc_out, cache2) = enc_base.forward_train(&x2);
        let logits = head_base.forward(&enc_out);
        let (_, dlogits) = cross_entropy(&logits, &targets);
        let (d_enc_out, g_head) = head_base.backward(&enc_out, &dlogits);
        let g_enc = enc_base.backward(&cache2, &d_enc_out);
        let mut analytic2: Vec<f64> = g_enc.slices().into_iter().flatten().copied().collect();
        analytic2.extend(g_head.dw.data());
        analytic2.extend(&g_head.db);
        let numeric2 = finite_diff_gradient(loss2_at, &theta2, DEFAULT_STEP);
        let err2 = max_rel_err(&analytic2, &numeric2);
        ensure!(NAME, err2 < 1e-4, "cross-entropy, seed {seed}: max relative error {err2:.3e}");
        worst = worst.max(err2);
        checks += 1;
    }

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60 s");
    report_pass(
        NAME,
        format_args!("{checks} finite-difference checks across 20 seeds and both losses, worst relative error {worst:.3e}; in {elapsed:?}"),
    );
}

// ---- 3. clustering oracle equivalence --------------------------------------

/// Reference DBSCAN sharing no code with production: brute-force core
/// flags, union-find over core pairs, borders to the lowest reaching
/// cluster id.
fn naive_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let is_core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(i, j) <= eps).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if is_core[i] && is_core[j] && dist(i, j) <= eps {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut ids: HashMap<usize, i32> = HashMap::new();
    let mut labels = vec![NOISE; n];
    for i in 0..n {
        if is_core[i] {
            let root = find(&mut parent, i);
            let next = ids.len() as i32;
            labels[i] = *ids.entry(root).or_insert(next);
        }
    }
    for i in 0..n {
        if !is_core[i] {
            labels[i] = (0..n)
                .filter(|&j| is_core[j] && dist(i, j) <= eps)
                .map(|j| labels[j])
                .min()
                .unwrap_or(NOISE);
        }
    }
    labels
}

fn as_partition(labels: &[i32]) -> (BTreeSet<usize>, BTreeSet<BTreeSet<usize>>) {
    let mut noise = BTreeSet::new();
    let mut clusters: HashMap<i32, BTreeSet<usize>> = HashMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == NOISE {
            noise.insert(i);
        } else {
            clusters.entry(l).or_default().insert(i);
        }
    }
    (noise, clusters.into_values().collect())
}

#[test]
fn clustering_matches_naive_reference_on_random_instances() {
    let _guard = serial();
    const NAME: &str = "clustering oracle equivalence";
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total_points = 0usize;
    let mut total_clusters = 0usize;

    for case in 0..100 {
        let n: usize = rng.gen_range(1..=200);
        let dim: usize = rng.gen_range(1..=15);
        // Alternate diffuse and blob-structured instances so both the
        // all-noise and the dense-cluster regimes are exercised.
        let points: Vec<Vec<f64>> = if case % 2 == 0 {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect()
        } else {
            let k: usize = rng.gen_range(1..=4);
            let sigma: f64 = rng.gen_range(0.1..1.0);
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            (0..n)
                .map(|i| {
                    centers[i % k]
                        .iter()
                        .map(|c| c + rng.gen_range(-sigma..sigma))
                        .collect()
                })
                .collect()
        };
        let eps: f64 = rng.gen_range(0.1..4.0);
        let min_pts: usize = rng.gen_range(1..=8);

        let got = dbscan(&points, eps, min_pts);
        let want = naive_dbscan(&points, eps, min_pts);
        ensure!(
            NAME,
            as_partition(&got.labels) == as_partition(&want),
            "case {case} (n={n}, dim={dim}, eps={eps:.3}, min_pts={min_pts}): partitions differ"
        );
        total_points += n;
        total_clusters += got.clusters;
    }

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60 s");
    report_pass(
        NAME,
        format_args!("100 random instances ({total_points} points, {total_clusters} clusters found) match the independent reference exactly; in {elapsed:?}"),
    );
}

// ---- 4. margin separation ---------------------------------------------------

#[test]
fn contrastive_training_separates_gaussian_clusters_by_margin() {
    let _guard = serial();
    const NAME: &str = "margin separation";
    let t0 = Instant::now();

    let sigma = 0.05;
    let centers = [[0.2f32; FEATURE_DIM], [0.5; FEATURE_DIM], [0.8; FEATURE_DIM]];
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            ensure!(
                NAME,
                d >= 6.0 * sigma,
                "centers {i} and {j} are {d:.3} apart, need at least 6 sigma = {:.3}",
                6.0 * sigma
            );
        }
    }

    let (vectors, ids) = common::gaussian_blobs(&centers, sigma, 100, 40);
    let pseudo = PseudoLabels { labels: ids.clone(), clusters: 3 };
    let cfg = EmbedTrainConfig {
        epochs: 150,
        batch_size: 64,
        margin: 1.0,
        ..EmbedTrainConfig::default()
    };
    let (net, losses) = train_embedding(&vectors, &pseudo, &cfg).unwrap();
    ensure!(NAME, losses.len() == 150, "expected 150 epoch losses, got {}", losses.len());
    ensure!(
        NAME,
        losses[149] < 0.1 * losses[0],
        "final loss {:.5} is not below 10% of the first epoch's {:.5}",
        losses[149],
        losses[0]
    );

    let n = vectors.len();
    let rows: Vec<f32> = vectors.iter().flat_map(|v| v.0).collect();
    let emb = net.forward_eval(&Matrix::from_vec(n, FEATURE_DIM, rows));
    let m = cfg.margin;
    let (mut intra_ok, mut intra_n, mut inter_ok, mut inter_n) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = emb
                .row(i)
                .iter()
                .zip(emb.row(j))
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if ids[i] == ids[j] {
                intra_n += 1;
                if d <= m + 0.1 {
                    intra_ok += 1;
                }
            } else {
                inter_n += 1;
                if d >= 2.0 * m - 0.1 {
                    inter_ok += 1;
                }
            }
        }
    }
    let intra_frac = intra_ok as f64 / intra_n as f64;
    let inter_frac = inter_ok as f64 / inter_n as f64;
    ensure!(
        NAME,
        intra_frac >= 0.95,
        "only {:.2}% of same-cluster pairs are within margin + 0.1",
        100.0 * intra_frac
    );
    ensure!(
        NAME,
        inter_frac >= 0.95,
        "only {:.2}% of cross-cluster pairs are beyond 2*margin - 0.1",
        100.0 * inter_frac
    );

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(120), "took {elapsed:?}, budget 2 min");
    report_pass(
        NAME,
        format_args!(
            "after 150 epochs: {:.1}% of intra pairs <= m+0.1, {:.1}% of inter pairs >= 2m-0.1, final loss at {:.2}% of epoch 1; in {elapsed:?}",
            100.0 * intra_frac,
            100.0 * inter_frac,
            100.0 * losses[149] / losses[0]
        ),
    );
}

// ---- 5. hinge monotonicity ---------------------------------------------------

#[test]
fn hinge_pair_never_increases_when_distances_improve_along_the_margin_line() {
    let _guard = serial();
    const NAME: &str = "hinge monotonicity";
    let m = 1.0f64;
    let mut checked = 0usize;

    for a in 0..100 {
        // Base points ride the margin line: separation exactly m.
        let e_pos = 3.0 * m * a as f64 / 99.0;
        let e_neg = e_pos + m;
        let base = pairwise_hinge(e_pos, e_neg, m);
        for k in 1..=100 {
            let eps = m * k as f64 / 100.0;
            let moved = pairwise_hinge(e_pos - eps, e_neg + eps, m);
            ensure!(
                NAME,
                moved <= base,
                "pulling the positive to {:.4} and pushing the negative to {:.4} raised the loss from {base:.17} to {moved:.17}",
                e_pos - eps,
                e_neg + eps
            );
            checked += 1;
        }
    }
    report_pass(
        NAME,
        format_args!("{checked} exact comparisons on the 100x100 grid along the margin line, loss never increased"),
    );
}

// ---- 6. golden capture features ---------------------------------------------

fn flows_from_pcap_bytes(bytes: Vec<u8>) -> Vec<RawFeatureRecord> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capture.pcap");
    std::fs::write(&path, bytes).unwrap();
    let mut reader = CaptureReader::open(&path).unwrap();
    let mut table = FlowTable::new(FlowConfig::default());
    let mut records = Vec::new();
    while let Some(pkt) = reader.next_packet().unwrap() {
        records.extend(table.assign(&pkt));
    }
    records.extend(table.finish());
    records
}

#[test]
fn golden_capture_yields_exact_flow_features() {
    let _guard = serial();
    const NAME: &str = "golden capture features";
    let t0 = Instant::now();

    let records = flows_from_pcap_bytes(common::golden_three_packet_pcap());
    ensure!(NAME, records.len() == 1, "expected 1 flow, got {}", records.len());
    let r = &records[0];
    ensure!(NAME, r.pkt_num == 3, "pkt_num {} != 3", r.pkt_num);
    ensure!(NAME, r.flow_dur == 0.3, "flow_dur {} is not exactly 0.3", r.flow_dur);
    ensure!(NAME, r.pkts_per_sec == 10.0, "pkts_per_sec {} is not exactly 10", r.pkts_per_sec);
    // Timing means carry one rounding per packet gap; exactness is
    // defined at the CSV's 9-significant-digit output precision.
    ensure!(
        NAME,
        fmt_g9(r.iat_mean) == "0.15" && (r.iat_mean - 0.15).abs() < 1e-12,
        "iat_mean {} does not render as 0.15",
        r.iat_mean
    );
    ensure!(
        NAME,
        fmt_g9(r.iat_std) == "0.05" && (r.iat_std - 0.05).abs() < 1e-12,
        "iat_std {} does not render as 0.05",
        r.iat_std
    );

    // One source probing 40 ports of one target, 0.25 s apart: the
    // generator's own counts and rates must come back verbatim.
    let ports = 40u64;
    let scans = flows_from_pcap_bytes(common::scan_pcap(10, 250_000, ports as u16));
    ensure!(NAME, scans.len() == ports as usize, "expected {ports} probe flows, got {}", scans.len());
    for (i, r) in scans.iter().enumerate() {
        ensure!(NAME, r.num_d_port == ports, "probe {i}: num_d_port {} != {ports}", r.num_d_port);
        ensure!(NAME, r.num_s_port == ports, "probe {i}: num_s_port {} != {ports}", r.num_s_port);
        ensure!(NAME, r.num_d_ip == 1, "probe {i}: num_d_ip {} != 1", r.num_d_ip);
        let truth = ports as f64 / (i as f64 * 0.25).max(1e-3);
        ensure!(
            NAME,
            r.con_per_sec == truth,
            "probe {i}: con_per_sec {} != generated truth {truth}",
            r.con_per_sec
        );
    }

    let elapsed = t0.elapsed();
    report_pass(
        NAME,
        format_args!("3-packet flow matches exact duration, rate, and gap statistics; 40-probe scan matches generated fan-out and connection rates; in {elapsed:?}"),
    );
}

// ---- 7. synthetic detection --------------------------------------------------

#[test]
fn detector_reaches_f1_targets_on_synthetic_corpus() {
    let _guard = serial();
    const NAME: &str = "synthetic detection";
    let t0 = Instant::now();

    let (records, classes) = common::synth_corpus(50_000, 7);
    let folds = split_folds(records.len(), 5, 99).unwrap();
    let held: HashSet<usize> = folds[0].iter().copied().collect();
    let mut train_r = Vec::new();
    let mut train_c = Vec::new();
    let mut test_r = Vec::new();
    let mut test_c = Vec::new();
    for i in 0..records.len() {
        if held.contains(&i) {
            test_r.push(records[i].clone());
            test_c.push(classes[i]);
        } else {
            train_r.push(records[i].clone());
            train_c.push(classes[i]);
        }
    }

    let cfg = PipelineConfig::default();
    let outcome = train_pipeline(&train_r, &train_c, &cfg, "synthetic-corpus".into()).unwrap();
    let preds: Vec<Class> = predict_all(&outcome.bundle, &test_r).into_iter().map(|(c, _)| c).collect();
    let report = score(&preds, &test_c).unwrap();
    ensure!(
        NAME,
        report.benign.f1 >= 0.95,
        "benign f1 {:.4} below 0.95 (malicious f1 {:.4}, {} pseudo-clusters)",
        report.benign.f1,
        report.malicious.f1,
        outcome.pseudo.clusters
    );
    ensure!(
        NAME,
        report.malicious.f1 >= 0.95,
        "malicious f1 {:.4} below 0.95 (benign f1 {:.4}, {} pseudo-clusters)",
        report.malicious.f1,
        report.benign.f1,
        outcome.pseudo.clusters
    );

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(600), "took {elapsed:?}, budget 10 min");
    report_pass(
        NAME,
        format_args!(
            "50000 flows, default config, held-out fifth: benign f1 {:.4}, malicious f1 {:.4}, {} pseudo-clusters from {} sampled flows; in {elapsed:?}",
            report.benign.f1, report.malicious.f1, outcome.pseudo.clusters, outcome.pseudo.sampled
        ),
    );
}

// ---- 8. gradient-norm scaling -------------------------------------------------

#[test]
fn first_layer_gradient_norm_tracks_input_scale() {
    let _guard = serial();
    const NAME: &str = "gradient-norm scaling";
    // Power-of-two scales keep the proportionality exact in float.
    let scales = [0.25, 0.5, 2.0, 4.0, 8.0, 16.0];
    let probe = gradient_norm_probe(INPUT_DIM, EMBED_HIDDEN, &scales, 8);
    let mut worst = 0.0f64;
    for row in &probe.rows {
        let ratio_err = (row.ratio_to_unit / row.scale - 1.0).abs();
        ensure!(
            NAME,
            ratio_err < 1e-6,
            "scale {}: gradient-norm ratio {} deviates from the scale by {ratio_err:.3e}",
            row.scale,
            row.ratio_to_unit
        );
        let pred_err = (row.grad_norm / row.predicted_norm - 1.0).abs();
        ensure!(
            NAME,
            pred_err < 1e-6,
            "scale {}: measured norm {} vs rank-1 prediction {} deviates by {pred_err:.3e}",
            row.scale,
            row.grad_norm,
            row.predicted_norm
        );
        worst = worst.max(ratio_err).max(pred_err);
    }
    report_pass(
        NAME,
        format_args!(
            "{} input scales on a {}x{} layer, worst relative deviation {worst:.3e} (< 1e-6)",
            scales.len(),
            INPUT_DIM,
            EMBED_HIDDEN
        ),
    );
}

// ---- 9. prediction latency ----------------------------------------------------

#[test]
fn single_record_prediction_latency_stays_within_budget() {
    let _guard = serial();
    const NAME: &str = "prediction latency";
    let t0 = Instant::now();

    // Latency depends only on the architecture, so an untrained
    // full-size bundle with a corpus-fitted scaler is representative.
    let (records, _) = common::synth_corpus(64, 9);
    let scaler = Scaler::fit(&records).unwrap();
    let bundle = full_size_bundle(scaler, 9);
    let report = bench(&bundle, &records[..16], 5_000, 500).unwrap();

    ensure!(NAME, report.batch_size == 1, "batch size {} != 1", report.batch_size);
    for (stage, s) in [
        ("embedding", report.embedding),
        ("encoder+head", report.encoder_head),
        ("end-to-end", report.end_to_end),
    ] {
        ensure!(
            NAME,
            s.p50_us <= s.p90_us && s.p90_us <= s.p99_us,
            "{stage}: percentiles out of order ({} / {} / {})",
            s.p50_us,
            s.p90_us,
            s.p99_us
        );
        ensure!(NAME, s.mean_us > 0.0, "{stage}: non-positive mean {}", s.mean_us);
        ensure!(NAME, s.qps_measured > 0.0, "{stage}: non-positive throughput {}", s.qps_measured);
        let derived = 1e6 / s.mean_us;
        ensure!(
            NAME,
            (s.qps_mean_derived - derived).abs() <= 1e-9 * derived,
            "{stage}: derived qps {} disagrees with 1e6/mean {}",
            s.qps_mean_derived,
            derived
        );
    }
    ensure!(
        NAME,
        report.end_to_end.p50_us < 50.0,
        "end-to-end p50 {:.2} us is not below 50 us",
        report.end_to_end.p50_us
    );

    let elapsed = t0.elapsed();
    ensure!(NAME, elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60 s");
    report_pass(
        NAME,
        format_args!(
            "end-to-end p50 {:.2} us (embedding {:.2}, encoder+head {:.2}), 5000 single-record iterations, report invariants hold; in {elapsed:?}",
            report.end_to_end.p50_us, report.embedding.p50_us, report.encoder_head.p50_us
        ),
    );
}

// ---- 10. determinism ------------------------------------------------------------

#[test]
fn reruns_with_identical_seeds_produce_byte_identical_outputs() {
    let _guard = serial();
    const NAME: &str = "determinism";
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_flowxpert");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| -> PathBuf { dir.path().join(name) };
    let arg = |p: PathBuf| -> String { p.into_os_string().into_string().unwrap() };

    std::fs::write(path("capture.pcap"), common::golden_three_packet_pcap()).unwrap();
    std::fs::write(path("scan.pcap"), common::scan_pcap(10, 250_000, 40)).unwrap();
    common::write_label_spec(&path("labels.csv"));
    let (records, classes) = common::synth_corpus(3_000, 11);
    common::write_corpus_csv(&path("corpus.csv"), &records, Some(&classes));

    let run = |args: &[String]| {
        let out = Command::new(bin).args(args).output().expect("spawn cli");
        ensure!(
            NAME,
            out.status.success(),
            "{:?} exited with {:?}\nstderr: {}",
            args,
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    };
    // Re-run the identical command into the same paths and demand the
    // files come back byte for byte.
    let rerun_identical = |label: &str, args: Vec<String>, outputs: Vec<PathBuf>| {
        run(&args);
        let first: Vec<Vec<u8>> = outputs
            .iter()
            .map(|p| std::fs::read(p).unwrap_or_else(|e| panic!("FAIL {NAME}: {label}: {} unreadable: {e}", p.display())))
            .collect();
        run(&args);
        for (p, before) in outputs.iter().zip(&first) {
            let after = std::fs::read(p).unwrap();
            ensure!(
                NAME,
                &after == before,
                "{label}: {} differs between identical re-runs",
                p.display()
            );
        }
    };
    let s = |v: &str| v.to_string();

    rerun_identical(
        "extract",
        vec![
            s("extract"),
            s("--pcap"), arg(path("capture.pcap")),
            s("--pcap"), arg(path("scan.pcap")),
            s("--labels"), arg(path("labels.csv")),
            s("--out"), arg(path("flows.csv")),
            s("--seed"), s("5"),
        ],
        vec![path("flows.csv"), path("flows.csv.report.json"), path("flows.csv.manifest.json")],
    );
    rerun_identical(
        "cluster",
        vec![
            s("cluster"),
            s("--flows"), arg(path("corpus.csv")),
            s("--out"), arg(path("clusters.csv")),
            s("--eps"), s("0.3"),
            s("--min-pts"), s("5"),
            s("--sample-rate"), s("0.2"),
            s("--k-distance"), arg(path("kdist.csv")),
            s("--seed"), s("5"),
        ],
        vec![path("clusters.csv"), path("kdist.csv"), path("clusters.csv.manifest.json")],
    );
    rerun_identical(
        "train-embed",
        vec![
            s("train-embed"),
            s("--flows"), arg(path("corpus.csv")),
            s("--out"), arg(path("embed-loss.csv")),
            s("--sample-rate"), s("0.2"),
            s("--min-pts"), s("5"),
            s("--epochs"), s("12"),
            s("--seed"), s("5"),
        ],
        vec![path("embed-loss.csv"), path("embed-loss.csv.manifest.json")],
    );
    rerun_identical(
        "train",
        vec![
            s("train"),
            s("--flows"), arg(path("corpus.csv")),
            s("--labels"), arg(path("labels.csv")),
            s("--out"), arg(path("model.fxm")),
            s("--losses"), arg(path("losses.csv")),
            s("--sample-rate"), s("0.2"),
            s("--min-pts"), s("5"),
            s("--embed-epochs"), s("12"),
            s("--detector-epochs"), s("4"),
            s("--seed"), s("5"),
        ],
        vec![path("model.fxm"), path("losses.csv"), path("model.fxm.manifest.json")],
    );
    rerun_identical(
        "eval",
        vec![
            s("eval"),
            s("--model"), arg(path("model.fxm")),
            s("--flows"), arg(path("corpus.csv")),
            s("--labels"), arg(path("labels.csv")),
            s("--out"), arg(path("eval.json")),
            s("--seed"), s("5"),
        ],
        vec![path("eval.json"), path("eval.json.manifest.json")],
    );

    let elapsed = t0.elapsed();
    report_pass(
        NAME,
        format_args!("extract, cluster, train-embed, train, and eval each re-ran byte-identically (13 output files compared); in {elapsed:?}"),
    );
}
