//! End-to-end orchestration: preprocessing, training-pair construction,
//! training with lowest-validation-loss checkpointing, inaccuracy scoring,
//! statistical-baseline scoring, labeling, disagreement maps and the
//! evaluation report.

use crate::config::UseCaseConfig;
use crate::corrupt::{corrupt_mask, RngSeed};
use crate::error::{Error, Result};
use crate::metrics::{
    binary_dice_slices, bootstrap_ci, MetricKind, ScoredCase,
};
use crate::nets::ReconModel;
use crate::neural::{checkpoint, AdamConfig, Tape, Tensor};
use crate::shapestats::{extract_features, mahalanobis_score, GaussianModel};
use crate::voxelgrid::{
    crop_about_foreground_com, pad_or_crop_center, resample_nearest, BoundingBox,
    MultiChannelVolume, Spacing, VoxelMask,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Seed derivation of all training/validation randomness: one documented
/// mixing function keyed by (master, stream tag, index).
fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut x = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x
}

const TAG_TRAIN_NOISE: u64 = 1;
const TAG_VAL_NOISE: u64 = 2;
const TAG_VAE_EPS: u64 = 3;
const TAG_SHUFFLE: u64 = 4;

/// A case after preprocessing, plus the organs that were missing (their
/// channels are empty).
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCase {
    pub volume: MultiChannelVolume,
    pub missing: Vec<String>,
}

/// Resamples each organ mask to the common spacing, pads/crops it to the
/// common size, stacks channels in config organ order, and optionally
/// applies the center-of-mass crop. Missing organs become empty channels
/// and are recorded.
pub fn preprocess_case(
    masks: &BTreeMap<String, VoxelMask>,
    cfg: &UseCaseConfig,
) -> Result<PreprocessedCase> {
    let mut named: Vec<(String, VoxelMask)> = Vec::with_capacity(cfg.organs.len());
    let mut missing = Vec::new();
    for organ in &cfg.organs {
        match masks.get(organ) {
            Some(mask) => {
                let resampled = resample_nearest(mask, cfg.spacing);
                let padded = pad_or_crop_center(&resampled, cfg.size)?;
                named.push((organ.clone(), padded));
            }
            None => {
                missing.push(organ.clone());
                named.push((
                    organ.clone(),
                    VoxelMask::zeros(cfg.size, cfg.spacing)?,
                ));
            }
        }
    }
    let refs: Vec<(String, &VoxelMask)> =
        named.iter().map(|(n, m)| (n.clone(), m)).collect();
    let mut volume = MultiChannelVolume::from_masks(&refs)?;
    if let Some(crop) = cfg.crop_size {
        volume = crop_about_foreground_com(&volume, crop)?;
    }
    Ok(PreprocessedCase { volume, missing })
}

/// Preprocesses a volume already stacked channel-wise (e.g. read from an
/// OMV file); channels are matched to config organs by name.
pub fn preprocess_volume(vol: &MultiChannelVolume, cfg: &UseCaseConfig) -> Result<PreprocessedCase> {
    let mut masks = BTreeMap::new();
    for organ in &cfg.organs {
        if let Some(c) = vol.channel_index(organ) {
            masks.insert(organ.clone(), vol.channel_as_mask(c));
        }
    }
    preprocess_case(&masks, cfg)
}

/// Builds one training pair: the target is the clean ground truth, the
/// input corrupts every channel with that organ's noise spec. Per-channel
/// corruption seeds are drawn from a ChaCha8 stream over `seed` in channel
/// order. Empty channels stay empty.
pub fn make_training_pair(
    gt: &MultiChannelVolume,
    cfg: &UseCaseConfig,
    seed: u64,
) -> Result<(MultiChannelVolume, MultiChannelVolume)> {
    if !gt.is_binary() {
        return Err(Error::InvalidArgument(
            "training targets must be binary".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = gt.clone();
    for (c, organ) in cfg.organs.iter().enumerate() {
        let channel_seed = rng.next_u64();
        let mask = gt.channel_as_mask(c);
        if mask.is_empty() {
            continue;
        }
        let spec = cfg.noise.get(organ).ok_or_else(|| {
            Error::InvalidArgument(format!("no noise spec configured for {organ}"))
        })?;
        let corrupted = corrupt_mask(&mask, spec, RngSeed(channel_seed))?;
        input.set_channel_from_mask(c, &corrupted)?;
    }
    Ok((input, gt.clone()))
}

/// Copies a volume into a [1, C, nz, ny, nx] tensor (layouts coincide).
pub fn volume_to_tensor(vol: &MultiChannelVolume) -> Tensor<f32> {
    let (nx, ny, nz) = vol.dims();
    Tensor::from_vec(
        &[1, vol.channel_count(), nz, ny, nx],
        vol.values().to_vec(),
    )
}

/// Stacks equally shaped volumes into a batch tensor [N, C, nz, ny, nx].
pub fn volumes_to_batch(vols: &[&MultiChannelVolume]) -> Tensor<f32> {
    let first = vols.first().expect("nonempty batch");
    let (nx, ny, nz) = first.dims();
    let mut data = Vec::with_capacity(vols.len() * first.values().len());
    for v in vols {
        data.extend_from_slice(v.values());
    }
    Tensor::from_vec(&[vols.len(), first.channel_count(), nz, ny, nx], data)
}

/// Copies batch element `n` of a [N, C, nz, ny, nx] tensor into a volume.
pub fn tensor_to_volume(
    t: &Tensor<f32>,
    n: usize,
    channels: Vec<String>,
    spacing: Spacing,
) -> MultiChannelVolume {
    let (nb, c, d, h, w) = t.dims5();
    assert!(n < nb);
    assert_eq!(c, channels.len());
    let per = c * d * h * w;
    let mut vol = MultiChannelVolume::zeros(channels, (w, h, d), spacing).expect("valid dims");
    vol.values_mut()
        .copy_from_slice(&t.data()[n * per..(n + 1) * per]);
    vol
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub checkpointed: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

pub fn training_log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,checkpointed\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch,
            row.train_loss,
            row.val_loss,
            u8::from(row.checkpointed)
        ));
    }
    out
}

/// Trains a reconstruction model on freshly corrupted copies of the
/// ground-truth volumes.
///
/// Each epoch iterates the training set in a seeded shuffled order with
/// per-(epoch, case) corruption seeds; validation uses fixed per-case
/// seeds so its loss is comparable across epochs, and scores the
/// deterministic (mean-latent) pathway for VAE kinds. Parameters are
/// persisted to `checkpoint_path` whenever validation loss strictly
/// improves; training stops at `max_epochs` or after `patience` epochs
/// without improvement. A non-finite loss aborts with a diagnostic.
pub fn train<M: ReconModel<f32>>(
    model: &mut M,
    train_gt: &[MultiChannelVolume],
    val_gt: &[MultiChannelVolume],
    cfg: &UseCaseConfig,
    checkpoint_path: &Path,
) -> Result<TrainReport> {
    if train_gt.is_empty() || val_gt.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let params = cfg.train;
    let adam = AdamConfig {
        lr: params.lr,
        ..AdamConfig::default()
    };
    let master = params.seed;
    let n_train = train_gt.len();

    // fixed validation pairs: corruption seeds do not depend on the epoch
    let val_pairs: Vec<(MultiChannelVolume, MultiChannelVolume)> = val_gt
        .iter()
        .enumerate()
        .map(|(i, gt)| make_training_pair(gt, cfg, derive_seed(master, TAG_VAL_NOISE, i as u64)))
        .collect::<Result<_>>()?;

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    for epoch in 1..=params.max_epochs {
        // seeded shuffle of the training order
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(master, TAG_SHUFFLE, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = (shuffle_rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }

        let mut train_loss_sum = 0.0f64;
        let mut train_seen = 0usize;
        for (batch_idx, chunk) in order.chunks(params.batch_size).enumerate() {
            let pairs: Vec<(MultiChannelVolume, MultiChannelVolume)> = chunk
                .iter()
                .map(|&i| {
                    make_training_pair(
                        &train_gt[i],
                        cfg,
                        derive_seed(master, TAG_TRAIN_NOISE, (epoch * n_train + i) as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let inputs: Vec<&MultiChannelVolume> = pairs.iter().map(|(i, _)| i).collect();
            let targets: Vec<&MultiChannelVolume> = pairs.iter().map(|(_, t)| t).collect();
            let input = volumes_to_batch(&inputs);
            let target = volumes_to_batch(&targets);

            model.params_mut().zero_grads();
            let mut tape = Tape::new();
            let eps_seed = derive_seed(master, TAG_VAE_EPS, (epoch * n_train + batch_idx) as u64);
            let loss_id = model.loss_on_tape(&mut tape, input, target, Some(eps_seed));
            let loss = tape.scalar(loss_id) as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, value: loss });
            }
            tape.backward(loss_id)?;
            tape.accumulate_param_grads(model.params_mut())?;
            model.apply_adam(&adam);

            train_loss_sum += loss * chunk.len() as f64;
            train_seen += chunk.len();
        }
        let train_loss = train_loss_sum / train_seen as f64;

        // validation on the fixed pairs, deterministic pathway
        let mut val_loss_sum = 0.0f64;
        for (input_vol, target_vol) in &val_pairs {
            let mut tape = Tape::new();
            let loss_id = model.loss_on_tape(
                &mut tape,
                volume_to_tensor(input_vol),
                volume_to_tensor(target_vol),
                None,
            );
            let loss = tape.scalar(loss_id) as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, value: loss });
            }
            val_loss_sum += loss;
        }
        let val_loss = val_loss_sum / val_pairs.len() as f64;

        let improved = val_loss < best_val;
        if improved {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            checkpoint::save_checkpoint(model.params(), checkpoint_path)?;
        } else {
            since_best += 1;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            checkpointed: improved,
        });
        if since_best > params.patience {
            break;
        }
    }
    Ok(TrainReport {
        log,
        best_val_loss: best_val,
        best_epoch,
    })
}

/// Binarizes reconstruction probabilities at 0.5.
fn binarize_volume(mut vol: MultiChannelVolume) -> MultiChannelVolume {
    for v in vol.values_mut() {
        *v = f32::from(*v >= 0.5);
    }
    vol
}

/// Per-organ inaccuracy scores plus the binarized reconstruction.
#[derive(Debug, Clone)]
pub struct CaseScores {
    pub scores: BTreeMap<String, f64>,
    pub reconstruction: MultiChannelVolume,
}

/// Scores a preprocessed case through a multi-organ model (denoiser or
/// multi-organ VAE): forward, sigmoid, binarize at 0.5, then per organ
/// `1 - dice(input channel, reconstructed channel)`. Channels empty on
/// both sides score 0. `eps_seed` selects the sampled VAE pathway;
/// `None` is the deterministic mean pathway.
pub fn score_multi_organ<M: ReconModel<f32>>(
    model: &M,
    pre: &MultiChannelVolume,
    organs: &[String],
    eps_seed: Option<u64>,
) -> Result<CaseScores> {
    if pre.channel_count() != organs.len() {
        return Err(Error::ShapeMismatch(format!(
            "case has {} channels, expected {}",
            pre.channel_count(),
            organs.len()
        )));
    }
    let probs = model.reconstruct_probs(volume_to_tensor(pre), eps_seed);
    let recon = binarize_volume(tensor_to_volume(
        &probs,
        0,
        organs.to_vec(),
        pre.spacing(),
    ));
    let mut scores = BTreeMap::new();
    for (c, organ) in organs.iter().enumerate() {
        let d = binary_dice_slices(pre.channel(c), recon.channel(c))?;
        scores.insert(organ.clone(), 1.0 - d);
    }
    Ok(CaseScores {
        scores,
        reconstruction: recon,
    })
}

/// Scores a preprocessed case through per-organ single-channel models.
pub fn score_single_organ_models<M: ReconModel<f32>>(
    models: &BTreeMap<String, M>,
    pre: &MultiChannelVolume,
    organs: &[String],
    eps_seed: Option<u64>,
) -> Result<CaseScores> {
    let mut scores = BTreeMap::new();
    let mut recon =
        MultiChannelVolume::zeros(organs.to_vec(), pre.dims(), pre.spacing())?;
    for (c, organ) in organs.iter().enumerate() {
        let model = models.get(organ).ok_or_else(|| {
            Error::InvalidArgument(format!("no model trained for organ {organ}"))
        })?;
        let mask = pre.channel_as_mask(c);
        let single = MultiChannelVolume::from_masks(&[(organ.clone(), &mask)])?;
        let probs = model.reconstruct_probs(volume_to_tensor(&single), eps_seed);
        let organ_recon = binarize_volume(tensor_to_volume(
            &probs,
            0,
            vec![organ.clone()],
            pre.spacing(),
        ));
        let d = binary_dice_slices(single.channel(0), organ_recon.channel(0))?;
        scores.insert(organ.clone(), 1.0 - d);
        recon.set_channel_from_mask(c, &organ_recon.channel_as_mask(0))?;
    }
    Ok(CaseScores {
        scores,
        reconstruction: recon,
    })
}

/// Mahalanobis inaccuracy scores per organ. An empty organ channel scores
/// positive infinity (maximally anomalous).
pub fn score_statistical(
    models: &BTreeMap<String, GaussianModel>,
    pre: &MultiChannelVolume,
    organs: &[String],
) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for (c, organ) in organs.iter().enumerate() {
        let model = models.get(organ).ok_or_else(|| {
            Error::InvalidArgument(format!("no fitted model for organ {organ}"))
        })?;
        let score = match extract_features(pre, c) {
            Ok(features) => mahalanobis_score(model, &features)?,
            Err(Error::EmptyForeground(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        scores.insert(organ.clone(), score);
    }
    Ok(scores)
}

/// Fits the per-organ Gaussian feature models on reference volumes
/// (training plus validation ground truths).
pub fn fit_statistical_models(
    reference: &[MultiChannelVolume],
    organs: &[String],
) -> Result<BTreeMap<String, GaussianModel>> {
    let mut models = BTreeMap::new();
    for (c, organ) in organs.iter().enumerate() {
        let features: Vec<_> = reference
            .iter()
            .map(|vol| extract_features(vol, c))
            .collect::<Result<_>>()?;
        models.insert(organ.clone(), crate::shapestats::fit_gaussian(&features, organ)?);
    }
    Ok(models)
}

/// Applies the organ-specific thresholds: label 1 (inaccurate) iff
/// `true_dice < threshold`, strictly.
pub fn label_cases(
    cases: &mut [ScoredCase],
    thresholds: &BTreeMap<String, f64>,
) -> Result<()> {
    for case in cases.iter_mut() {
        let threshold = thresholds
            .get(&case.organ)
            .ok_or_else(|| Error::UnknownOrgan(case.organ.clone()))?;
        let true_dice = case.true_dice.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "case {} organ {} has no true Dice to label",
                case.case_id, case.organ
            ))
        })?;
        case.label = u8::from(true_dice < *threshold);
    }
    Ok(())
}

/// Per-voxel disagreement classification between an auto-segmentation and
/// its reconstruction.
pub const EXPLAIN_BOTH_BACKGROUND: u8 = 0;
pub const EXPLAIN_BOTH_FOREGROUND: u8 = 1;
/// Auto-segmentation only: suspected excess.
pub const EXPLAIN_AUTO_ONLY: u8 = 2;
/// Reconstruction only: suspected missing region.
pub const EXPLAIN_RECON_ONLY: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementComponent {
    pub label: u8,
    pub voxels: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct ExplainMap {
    pub dims: (usize, usize, usize),
    pub spacing: Spacing,
    /// One label in 0..=3 per voxel, x-fastest.
    pub labels: Vec<u8>,
    /// Voxel counts per label value.
    pub counts: [usize; 4],
    /// Connected components (6-connectivity) of the two disagreement
    /// labels.
    pub components: Vec<DisagreementComponent>,
}

impl ExplainMap {
    /// Packs the map into a single-channel volume (`explain:<organ>`,
    /// values 0-3) for OMV export.
    pub fn to_volume(&self, organ: &str) -> MultiChannelVolume {
        let mut vol = MultiChannelVolume::zeros(
            vec![format!("explain:{organ}")],
            self.dims,
            self.spacing,
        )
        .expect("valid dims");
        for (dst, &l) in vol.values_mut().iter_mut().zip(&self.labels) {
            *dst = l as f32;
        }
        vol
    }
}

/// Classifies every voxel of (auto, reconstruction) into the four
/// disagreement classes and extracts connected disagreement components.
pub fn explain(auto: &VoxelMask, recon: &VoxelMask) -> Result<ExplainMap> {
    if auto.dims() != recon.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", auto.dims()),
            got: format!("{:?}", recon.dims()),
        });
    }
    let n = auto.len();
    let mut labels = vec![0u8; n];
    let mut counts = [0usize; 4];
    for i in 0..n {
        let a = auto.data()[i] == 1;
        let r = recon.data()[i] == 1;
        let label = match (a, r) {
            (false, false) => EXPLAIN_BOTH_BACKGROUND,
            (true, true) => EXPLAIN_BOTH_FOREGROUND,
            (true, false) => EXPLAIN_AUTO_ONLY,
            (false, true) => EXPLAIN_RECON_ONLY,
        };
        labels[i] = label;
        counts[label as usize] += 1;
    }

    let (nx, ny, nz) = auto.dims();
    let mut components = Vec::new();
    let mut visited = vec![false; n];
    for label in [EXPLAIN_AUTO_ONLY, EXPLAIN_RECON_ONLY] {
        for start in 0..n {
            if visited[start] || labels[start] != label {
                continue;
            }
            // BFS over the 6-neighborhood
            let mut queue = vec![start];
            visited[start] = true;
            let mut voxels = 0usize;
            let mut lo = (usize::MAX, usize::MAX, usize::MAX);
            let mut hi = (0usize, 0usize, 0usize);
            while let Some(idx) = queue.pop() {
                voxels += 1;
                let x = idx % nx;
                let y = (idx / nx) % ny;
                let z = idx / (nx * ny);
                lo = (lo.0.min(x), lo.1.min(y), lo.2.min(z));
                hi = (hi.0.max(x), hi.1.max(y), hi.2.max(z));
                let mut push = |nidx: usize| {
                    if !visited[nidx] && labels[nidx] == label {
                        visited[nidx] = true;
                        queue.push(nidx);
                    }
                };
                if x > 0 {
                    push(idx - 1);
                }
                if x + 1 < nx {
                    push(idx + 1);
                }
                if y > 0 {
                    push(idx - nx);
                }
                if y + 1 < ny {
                    push(idx + nx);
                }
                if z > 0 {
                    push(idx - nx * ny);
                }
                if z + 1 < nz {
                    push(idx + nx * ny);
                }
            }
            components.push(DisagreementComponent {
                label,
                voxels,
                bbox: BoundingBox { lo, hi },
            });
        }
    }
    Ok(ExplainMap {
        dims: auto.dims(),
        spacing: auto.spacing(),
        labels,
        counts,
        components,
    })
}

/// One scored (case, organ) pair of a method run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub case_id: String,
    pub organ: String,
    pub method: String,
    pub score: f64,
}

pub fn score_rows_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("case_id,organ,method,score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.case_id, r.organ, r.method, r.score
        ));
    }
    out
}

pub fn score_rows_from_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("case_id,organ,method,score") {
        return Err(Error::SchemaMismatch("unexpected score header".into()));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [case_id, organ, method, score] = fields[..] else {
            return Err(Error::SchemaMismatch(format!(
                "score line {}: expected 4 fields",
                ln + 2
            )));
        };
        rows.push(ScoreRow {
            case_id: case_id.to_string(),
            organ: organ.to_string(),
            method: method.to_string(),
            score: score.parse().map_err(|_| {
                Error::SchemaMismatch(format!("score line {}: bad score", ln + 2))
            })?,
        });
    }
    Ok(rows)
}

/// Joins score rows with manifest true-Dice values and applies the
/// thresholds, yielding labeled cases grouped by method.
pub fn join_scores_with_manifest(
    rows: &[ScoreRow],
    manifest: &[crate::phantom::ManifestRow],
    thresholds: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, Vec<ScoredCase>>> {
    let mut dice_lookup: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for m in manifest {
        dice_lookup.insert((m.case_id.as_str(), m.organ.as_str()), m.true_dice);
    }
    let mut by_method: BTreeMap<String, Vec<ScoredCase>> = BTreeMap::new();
    for row in rows {
        let true_dice = dice_lookup
            .get(&(row.case_id.as_str(), row.organ.as_str()))
            .copied()
            .ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "manifest has no entry for ({}, {})",
                    row.case_id, row.organ
                ))
            })?;
        by_method.entry(row.method.clone()).or_default().push(ScoredCase {
            case_id: row.case_id.clone(),
            organ: row.organ.clone(),
            score: row.score,
            true_dice: Some(true_dice),
            label: 0,
        });
    }
    for cases in by_method.values_mut() {
        label_cases(cases, thresholds)?;
    }
    Ok(by_method)
}

/// One evaluation row: (organ, method, metric) with its point estimate and
/// 95% bootstrap interval, plus the organ's inaccurate-case percentage.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalRow {
    pub organ: String,
    pub method: String,
    pub metric: String,
    pub point: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pct_inaccurate: f64,
    pub status: String,
}

/// Evaluates labeled cases per (organ, method): AUROC and AUPR with
/// bootstrap confidence intervals. Organs with a single label class under
/// a method yield rows marked `undefined` and the run continues.
pub fn evaluate(
    by_method: &BTreeMap<String, Vec<ScoredCase>>,
    resamples: usize,
    seed: u64,
) -> Vec<EvalRow> {
    let mut rows = Vec::new();
    for (method, cases) in by_method {
        let mut organs: Vec<String> = cases.iter().map(|c| c.organ.clone()).collect();
        organs.sort();
        organs.dedup();
        for organ in organs {
            let organ_cases: Vec<ScoredCase> = cases
                .iter()
                .filter(|c| c.organ == organ)
                .cloned()
                .collect();
            let positives = organ_cases.iter().filter(|c| c.label == 1).count();
            let pct = 100.0 * positives as f64 / organ_cases.len() as f64;
            for metric in [MetricKind::Auroc, MetricKind::Aupr] {
                match bootstrap_ci(&organ_cases, metric, resamples, seed) {
                    Ok((point, lo, hi)) => rows.push(EvalRow {
                        organ: organ.clone(),
                        method: method.clone(),
                        metric: metric.to_string(),
                        point: Some(point),
                        lo: Some(lo),
                        hi: Some(hi),
                        pct_inaccurate: pct,
                        status: "ok".into(),
                    }),
                    Err(Error::UndefinedMetric(_)) => rows.push(EvalRow {
                        organ: organ.clone(),
                        method: method.clone(),
                        metric: metric.to_string(),
                        point: None,
                        lo: None,
                        hi: None,
                        pct_inaccurate: pct,
                        status: "undefined".into(),
                    }),
                    Err(_) => unreachable!("bootstrap only fails on undefined metrics"),
                }
            }
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn eval_rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("organ,method,metric,point,lo,hi,pct_inaccurate,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.organ,
            r.method,
            r.metric,
            fmt_opt(r.point),
            fmt_opt(r.lo),
            fmt_opt(r.hi),
            r.pct_inaccurate,
            r.status
        ));
    }
    out
}

/// JSON summary grouped organ -> method -> metric.
pub fn eval_rows_to_json(rows: &[EvalRow]) -> serde_json::Value {
    let mut organs: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let mut grouped: BTreeMap<(String, String), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry((r.organ.clone(), r.method.clone()))
            .or_default()
            .push(r);
    }
    for ((organ, method), rs) in grouped {
        let organ_entry = organs
            .entry(organ.clone())
            .or_insert_with(|| serde_json::json!({ "methods": {} }));
        let mut metrics = serde_json::Map::new();
        for r in &rs {
            metrics.insert(
                r.metric.clone(),
                serde_json::json!({
                    "point": r.point,
                    "lo": r.lo,
                    "hi": r.hi,
                    "status": r.status,
                }),
            );
        }
        organ_entry["methods"][&method] = serde_json::Value::Object(metrics);
        organ_entry["pct_inaccurate"] = serde_json::json!(rs[0].pct_inaccurate);
    }
    serde_json::json!({ "organs": organs })
}
