//! Two-phase training and single-record prediction.
//!
//! Phase one trains the embedding network contrastively on a downsampled
//! slice of the training data, using density-based pseudo-labels instead
//! of ground truth: anchors are non-noise points, each paired with one
//! same-cluster positive and one different-cluster negative per epoch.
//! Phase two freezes the embedding and trains the encoder and classifier
//! head with cross-entropy on the full (labeled) training split, feeding
//! each raw vector concatenated with its frozen embedding.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{ModelBundle, TrainingManifest};
use crate::cluster::{dbscan, PairLabel, PseudoLabels};
use crate::flow::RawFeatureRecord;
use crate::nn::loss::{contrastive, cross_entropy, ContrastivePair};
use crate::nn::matrix::Matrix;
use crate::nn::nets::{
    detector_logits, ClassifierHead, EmbeddingNet, EncoderNet, EMBED_DIM, EMBED_HIDDEN,
    ENCODER_DIMS, INPUT_DIM, NUM_CLASSES,
};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::NeuralError;
use crate::preprocess::{downsample, Class, FeatureVector, PreprocessError, Scaler, PROTOCOL_VOCAB};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("InsufficientClusters: pseudo-labeling found {clusters} cluster(s), need at least 2")]
    InsufficientClusters { clusters: usize },
    #[error("NoTrainablePairs: every cluster is a singleton, no positive pairs exist")]
    NoTrainablePairs,
    #[error("SingleClassTrainingSet: detector training needs both classes present")]
    SingleClassTrainingSet,
    #[error("LengthMismatch: {0}")]
    LengthMismatch(String),
    #[error("NonFiniteLoss: loss diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Hyperparameters for the contrastive embedding phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Fraction of the training split the caller sampled before
    /// pseudo-labeling; recorded here so the manifest can carry it.
    pub downsample_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 256,
            learning_rate: 1e-3,
            margin: 1.0,
            downsample_rate: 0.02,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

/// Hyperparameters for the frozen-embedding detector phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 512,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

fn rows_matrix(vectors: &[FeatureVector], indices: &[usize]) -> Matrix<f32> {
    let dim = vectors.first().map_or(INPUT_DIM, |v| v.0.len());
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        data.extend_from_slice(vectors[i].as_slice());
    }
    Matrix::from_vec(indices.len(), dim, data)
}

/// Train the embedding network contrastively against pseudo-labels.
/// Returns the network and the mean batch loss per epoch.
pub fn train_embedding(
    vectors: &[FeatureVector],
    pseudo: &PseudoLabels,
    cfg: &EmbedTrainConfig,
) -> Result<(EmbeddingNet<f32>, Vec<f64>), TrainError> {
    if vectors.len() != pseudo.labels.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} vectors vs {} pseudo-labels",
            vectors.len(),
            pseudo.labels.len()
        )));
    }
    if pseudo.clusters < 2 {
        return Err(TrainError::InsufficientClusters {
            clusters: pseudo.clusters,
        });
    }

    let members = pseudo.members();
    // Anchors need a same-cluster partner; singleton clusters provide
    // none (their points still serve as negatives for others).
    let mut anchors: Vec<usize> = Vec::new();
    for m in &members {
        if m.len() >= 2 {
            anchors.extend_from_slice(m);
        }
    }
    anchors.sort_unstable();
    if anchors.is_empty() {
        return Err(TrainError::NoTrainablePairs);
    }
    // Per-cluster complements over non-noise points, for O(1) negative
    // sampling.
    let non_noise: Vec<usize> = pseudo
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != crate::cluster::NOISE)
        .map(|(i, _)| i)
        .collect();
    let others: Vec<Vec<usize>> = (0..pseudo.clusters)
        .map(|c| {
            non_noise
                .iter()
                .copied()
                .filter(|&i| pseudo.labels[i] != c as i32)
                .collect()
        })
        .collect();
    if others.iter().any(|o| o.is_empty()) {
        // With >= 2 clusters every cluster has a non-empty complement.
        unreachable!("complement empty despite multiple clusters");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net: EmbeddingNet<f32> = EmbeddingNet::init(
        vectors.first().map_or(INPUT_DIM, |v| v.0.len()),
        EMBED_HIDDEN,
        EMBED_DIM,
        &mut rng,
    );
    let mut opt: Optimizer<f32> = Optimizer::new(cfg.optimizer);
    let lr = cfg.learning_rate as f32;
    let margin = cfg.margin as f32;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order = anchors.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            // Sample one positive and one negative per anchor, then pack
            // the distinct points into one forward batch.
            let mut batch_rows: Vec<usize> = Vec::with_capacity(chunk.len() * 3);
            let mut row_of = std::collections::HashMap::new();
            let mut row = |idx: usize, rows: &mut Vec<usize>| -> usize {
                *row_of.entry(idx).or_insert_with(|| {
                    rows.push(idx);
                    rows.len() - 1
                })
            };
            let mut pairs: Vec<ContrastivePair> = Vec::with_capacity(chunk.len() * 2);
            for &a in chunk {
                let c = pseudo.labels[a] as usize;
                let mates = &members[c];
                let r = rng.gen_range(0..mates.len() - 1);
                let p = if mates[r] == a { mates[mates.len() - 1] } else { mates[r] };
                let n = others[c][rng.gen_range(0..others[c].len())];
                let (ra, rp, rn) = (
                    row(a, &mut batch_rows),
                    row(p, &mut batch_rows),
                    row(n, &mut batch_rows),
                );
                pairs.push(ContrastivePair { i: ra, j: rp, label: PairLabel::Positive });
                pairs.push(ContrastivePair { i: ra, j: rn, label: PairLabel::Negative });
            }

            let x = rows_matrix(vectors, &batch_rows);
            let (emb, cache) = net.forward_train(&x)?;
            let (loss, demb) = contrastive(&emb, &pairs, margin);
            let grads = net.backward(&cache, &demb);
            opt.step(&mut net.trainable_mut(), &grads.slices(), lr)?;

            loss_sum += loss as f64;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((net, epoch_losses))
}

/// Embed every vector in evaluation mode and concatenate it with the raw
/// input: the detector's input representation.
pub fn joint_features(vectors: &[FeatureVector], embedding: &EmbeddingNet<f32>) -> Matrix<f32> {
    let all: Vec<usize> = (0..vectors.len()).collect();
    let x = rows_matrix(vectors, &all);
    let emb = embedding.forward_eval(&x);
    Matrix::hconcat(&x, &emb)
}

/// What [`train_detector`] produces: both networks and the mean batch
/// loss per epoch.
pub type DetectorParts = (EncoderNet<f32>, ClassifierHead<f32>, Vec<f64>);

/// Train encoder and head with cross-entropy on top of the frozen
/// embedding.
pub fn train_detector(
    vectors: &[FeatureVector],
    classes: &[Class],
    embedding: &EmbeddingNet<f32>,
    cfg: &DetectorTrainConfig,
) -> Result<DetectorParts, TrainError> {
    if vectors.len() != classes.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} vectors vs {} labels",
            vectors.len(),
            classes.len()
        )));
    }
    let malicious = classes.iter().filter(|&&c| c == Class::Malicious).count();
    if malicious == 0 || malicious == classes.len() {
        return Err(TrainError::SingleClassTrainingSet);
    }

    let joint = joint_features(vectors, embedding);
    let targets: Vec<usize> = classes.iter().map(|c| c.index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder: EncoderNet<f32> = EncoderNet::init(joint.cols(), ENCODER_DIMS, &mut rng);
    let mut head: ClassifierHead<f32> = ClassifierHead::init(ENCODER_DIMS[2], NUM_CLASSES, &mut rng);
    let mut opt: Optimizer<f32> = Optimizer::new(cfg.optimizer);
    let lr = cfg.learning_rate as f32;

    let mut indices: Vec<usize> = (0..vectors.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * joint.cols());
            let mut batch_targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(joint.row(i));
                batch_targets.push(targets[i]);
            }
            let x = Matrix::from_vec(chunk.len(), joint.cols(), data);

            let (enc_out, cache) = encoder.forward_train(&x);
            let logits = head.forward(&enc_out);
            let (loss, dlogits) = cross_entropy(&logits, &batch_targets);
            let (d_enc_out, g_head) = head.backward(&enc_out, &dlogits);
            let g_enc = encoder.backward(&cache, &d_enc_out);

            let mut params = encoder.trainable_mut();
            params.extend(head.trainable_mut());
            let mut grads = g_enc.slices();
            grads.push(g_head.dw.data());
            grads.push(&g_head.db);
            opt.step(&mut params, &grads, lr)?;

            loss_sum += loss as f64;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((encoder, head, epoch_losses))
}

/// End-to-end training options; one seed deterministically derives every
/// stage's random stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub eps: f64,
    pub min_pts: usize,
    pub downsample_rate: f64,
    pub margin: f64,
    pub embed_epochs: usize,
    pub embed_batch: usize,
    pub embed_lr: f64,
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            eps: 0.3,
            min_pts: 10,
            downsample_rate: 0.02,
            margin: 1.0,
            embed_epochs: 150,
            embed_batch: 256,
            embed_lr: 1e-3,
            detector_epochs: 30,
            detector_batch: 512,
            detector_lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PipelineConfig {
    pub fn embed_config(&self) -> EmbedTrainConfig {
        EmbedTrainConfig {
            epochs: self.embed_epochs,
            batch_size: self.embed_batch,
            learning_rate: self.embed_lr,
            margin: self.margin,
            downsample_rate: self.downsample_rate,
            optimizer: self.optimizer,
            seed: derive_seed(self.seed, "embed"),
        }
    }

    pub fn detector_config(&self) -> DetectorTrainConfig {
        DetectorTrainConfig {
            epochs: self.detector_epochs,
            batch_size: self.detector_batch,
            learning_rate: self.detector_lr,
            optimizer: self.optimizer,
            seed: derive_seed(self.seed, "detector"),
        }
    }
}

/// Summary of the pseudo-labeling stage.
#[derive(Debug, Clone, Serialize)]
pub struct PseudoSummary {
    pub sampled: usize,
    pub clusters: usize,
    pub non_noise: usize,
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub embed_losses: Vec<f64>,
    pub detector_losses: Vec<f64>,
    pub pseudo: PseudoSummary,
}

/// Full training pipeline over already-extracted flow records: fit the
/// scaler, downsample, pseudo-label, train both phases, assemble a
/// serializable model.
pub fn train_pipeline(
    records: &[RawFeatureRecord],
    classes: &[Class],
    cfg: &PipelineConfig,
    dataset_hash: String,
) -> Result<TrainOutcome, TrainError> {
    if records.len() != classes.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} records vs {} labels",
            records.len(),
            classes.len()
        )));
    }
    let scaler = Scaler::fit(records)?;
    let vectors = scaler.transform_all(records);

    let sample = downsample(
        vectors.len(),
        cfg.downsample_rate,
        derive_seed(cfg.seed, "downsample"),
    )?;
    let sampled: Vec<FeatureVector> = sample.iter().map(|&i| vectors[i]).collect();
    let points: Vec<Vec<f64>> = sampled.iter().map(|v| v.to_f64_vec()).collect();
    let pseudo = dbscan(&points, cfg.eps, cfg.min_pts);

    let (embedding, embed_losses) = train_embedding(&sampled, &pseudo, &cfg.embed_config())?;
    let (encoder, head, detector_losses) =
        train_detector(&vectors, classes, &embedding, &cfg.detector_config())?;

    let manifest = TrainingManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        dataset_hash,
        eps: cfg.eps,
        min_pts: cfg.min_pts,
        downsample_rate: cfg.downsample_rate,
        margin: cfg.margin,
        embed_epochs: cfg.embed_epochs,
        embed_batch: cfg.embed_batch,
        embed_lr: cfg.embed_lr,
        detector_epochs: cfg.detector_epochs,
        detector_batch: cfg.detector_batch,
        detector_lr: cfg.detector_lr,
        optimizer: cfg.optimizer,
    };
    let bundle = ModelBundle {
        scaler,
        protocols: PROTOCOL_VOCAB.iter().map(|p| p.to_string()).collect(),
        margin: cfg.margin,
        embedding,
        encoder,
        head,
        manifest,
    };
    Ok(TrainOutcome {
        bundle,
        embed_losses,
        detector_losses,
        pseudo: PseudoSummary {
            sampled: sample.len(),
            clusters: pseudo.clusters,
            non_noise: pseudo.non_noise(),
        },
    })
}

/// Classify one record: scale, embed, encode, and take the class with
/// the larger logit; an exact tie goes to benign. Returns the class and
/// `[p_benign, p_malicious]`.
pub fn predict(bundle: &ModelBundle, record: &RawFeatureRecord) -> (Class, [f32; 2]) {
    let v = bundle.scaler.transform(record);
    predict_vector(bundle, &v)
}

pub fn predict_vector(bundle: &ModelBundle, v: &FeatureVector) -> (Class, [f32; 2]) {
    let x = Matrix::from_vec(1, v.0.len(), v.0.to_vec());
    let logits = detector_logits(&x, &bundle.embedding, &bundle.encoder, &bundle.head);
    let (l0, l1) = (logits.get(0, 0), logits.get(0, 1));
    let class = if l1 > l0 { Class::Malicious } else { Class::Benign };
    (class, softmax2(l0, l1))
}

/// Batched prediction over many records.
pub fn predict_all(bundle: &ModelBundle, records: &[RawFeatureRecord]) -> Vec<(Class, [f32; 2])> {
    let vectors = bundle.scaler.transform_all(records);
    let mut out = Vec::with_capacity(records.len());
    for chunk in vectors.chunks(1024) {
        let rows: Vec<usize> = (0..chunk.len()).collect();
        let x = rows_matrix(chunk, &rows);
        let logits = detector_logits(&x, &bundle.embedding, &bundle.encoder, &bundle.head);
        for i in 0..chunk.len() {
            let (l0, l1) = (logits.get(i, 0), logits.get(i, 1));
            let class = if l1 > l0 { Class::Malicious } else { Class::Benign };
            out.push((class, softmax2(l0, l1)));
        }
    }
    out
}

fn softmax2(l0: f32, l1: f32) -> [f32; 2] {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}
