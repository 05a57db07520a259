//! Dice-family metrics and detection statistics: AUROC, AUPR and
//! percentile bootstrap confidence intervals.

use crate::error::{Error, Result};
use crate::voxelgrid::{MultiChannelVolume, VoxelMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One scored auto-segmentation: higher `score` means more suspect,
/// `label` 1 marks a truly inaccurate segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCase {
    pub case_id: String,
    pub organ: String,
    pub score: f64,
    pub true_dice: Option<f64>,
    pub label: u8,
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &VoxelMask, b: &VoxelMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", a.dims()),
            got: format!("{:?}", b.dims()),
        });
    }
    let mut na = 0u64;
    let mut nb = 0u64;
    let mut overlap = 0u64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as u64;
        nb += y as u64;
        overlap += (x & y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / (na + nb) as f64)
}

/// Dice on two equally sized value slices treated as sets via a 0.5
/// threshold. Both-empty scores 1.
pub fn binary_dice_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} voxels", a.len()),
            got: format!("{}", b.len()),
        });
    }
    let mut na = 0u64;
    let mut nb = 0u64;
    let mut overlap = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        let fx = x >= 0.5;
        let fy = y >= 0.5;
        na += fx as u64;
        nb += fy as u64;
        overlap += (fx && fy) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / (na + nb) as f64)
}

/// Mean over channels of the soft Dice loss
/// `1 - 2*Σ(r*t) / (Σr + Σt)`. Accepts soft reconstructions against soft or
/// binary targets; a channel that is empty on both sides contributes 0.
pub fn mean_dice_loss(recon: &MultiChannelVolume, target: &MultiChannelVolume) -> Result<f64> {
    if recon.dims() != target.dims() || recon.channel_count() != target.channel_count() {
        return Err(Error::ShapeMismatch(format!(
            "recon {:?} x{} vs target {:?} x{}",
            recon.dims(),
            recon.channel_count(),
            target.dims(),
            target.channel_count()
        )));
    }
    let c_total = recon.channel_count();
    let mut sum = 0.0f64;
    for c in 0..c_total {
        let r = recon.channel(c);
        let t = target.channel(c);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (&rv, &tv) in r.iter().zip(t) {
            num += rv as f64 * tv as f64;
            den += rv as f64 + tv as f64;
        }
        if den > 0.0 {
            sum += 1.0 - 2.0 * num / den;
        }
    }
    Ok(sum / c_total as f64)
}

fn split_labels(cases: &[ScoredCase]) -> (Vec<f64>, Vec<f64>) {
    let pos = cases
        .iter()
        .filter(|c| c.label == 1)
        .map(|c| c.score)
        .collect();
    let neg = cases
        .iter()
        .filter(|c| c.label == 0)
        .map(|c| c.score)
        .collect();
    (pos, neg)
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive outscores the negative,
/// ties counted 0.5. Errors when either class is absent.
pub fn auroc(cases: &[ScoredCase]) -> Result<f64> {
    let (pos, neg) = split_labels(cases);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }
    // average ranks over the pooled scores; rank-sum of positives
    let mut pooled: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    let n = pooled.len();
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j averaged over the tie block
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = pos.len() as f64;
    let q = neg.len() as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Area under the precision-recall curve as average precision: cases are
/// sorted by descending score, tie groups are processed as one block, and
/// `AP = Σ ΔRecall * Precision-at-block-end`. Errors when no positives
/// exist.
pub fn aupr(cases: &[ScoredCase]) -> Result<f64> {
    let total_pos = cases.iter().filter(|c| c.label == 1).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("AUPR needs at least one positive".into()));
    }
    let mut sorted: Vec<(f64, u8)> = cases.iter().map(|c| (c.score, c.label)).collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must not be NaN"));

    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        for item in &sorted[i..j] {
            tp += (item.1 == 1) as usize;
        }
        seen += j - i;
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Which detection metric a bootstrap run recomputes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auroc,
    Aupr,
}

impl MetricKind {
    pub fn compute(self, cases: &[ScoredCase]) -> Result<f64> {
        match self {
            MetricKind::Auroc => auroc(cases),
            MetricKind::Aupr => aupr(cases),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Auroc => write!(f, "auroc"),
            MetricKind::Aupr => write!(f, "aupr"),
        }
    }
}

/// Point estimate with a 95% percentile bootstrap interval.
///
/// Cases are resampled with replacement `resamples` times; resamples on
/// which the metric is undefined (single class) are skipped. The index
/// stream is a single seeded ChaCha8 sequence generated upfront, so results
/// are deterministic per seed. Percentiles interpolate linearly between
/// order statistics. When every resample is degenerate the interval
/// collapses to the point estimate.
pub fn bootstrap_ci(
    cases: &[ScoredCase],
    metric: MetricKind,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let point = metric.compute(cases)?;
    let n = cases.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index_lists: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.gen_range(0..n)).collect())
        .collect();

    let mut values = Vec::with_capacity(resamples);
    let mut resample = Vec::with_capacity(n);
    for indices in &index_lists {
        resample.clear();
        resample.extend(indices.iter().map(|&i| cases[i].clone()));
        if let Ok(v) = metric.compute(&resample) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Ok((point, point, point));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    Ok((
        point,
        percentile(&values, 0.025),
        percentile(&values, 0.975),
    ))
}

/// Linear-interpolation percentile over a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes cases as `case_id,organ,score,true_dice,label` CSV.
pub fn scored_cases_to_csv(cases: &[ScoredCase]) -> String {
    let mut out = String::from("case_id,organ,score,true_dice,label\n");
    for c in cases {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.case_id,
            c.organ,
            c.score,
            fmt_opt(c.true_dice),
            c.label
        ));
    }
    out
}

/// Parses the CSV produced by [`scored_cases_to_csv`].
pub fn scored_cases_from_csv(text: &str) -> Result<Vec<ScoredCase>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "case_id,organ,score,true_dice,label" {
        return Err(Error::SchemaMismatch(format!(
            "unexpected scored-case header {header:?}"
        )));
    }
    let mut cases = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [case_id, organ, score, true_dice, label] = fields[..] else {
            return Err(Error::SchemaMismatch(format!(
                "line {}: expected 5 fields, got {}",
                ln + 2,
                fields.len()
            )));
        };
        let parse_f = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| Error::SchemaMismatch(format!("line {}: bad number {t:?}", ln + 2)))
        };
        cases.push(ScoredCase {
            case_id: case_id.to_string(),
            organ: organ.to_string(),
            score: parse_f(score)?,
            true_dice: if true_dice.is_empty() {
                None
            } else {
                Some(parse_f(true_dice)?)
            },
            label: match label {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::SchemaMismatch(format!(
                        "line {}: bad label {other:?}",
                        ln + 2
                    )))
                }
            },
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgrid::Spacing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    fn mask_with(dims: (usize, usize, usize), fg: &[(usize, usize, usize)]) -> VoxelMask {
        let mut m = VoxelMask::zeros(dims, unit()).unwrap();
        for &(x, y, z) in fg {
            m.set(x, y, z, 1);
        }
        m
    }

    fn cases(scores: &[f64], labels: &[u8]) -> Vec<ScoredCase> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &l))| ScoredCase {
                case_id: format!("c{i}"),
                organ: "organ".into(),
                score: s,
                true_dice: None,
                label: l,
            })
            .collect()
    }

    #[test]
    fn dice_basics() {
        let a = mask_with((4, 4, 4), &[(0, 0, 0), (1, 0, 0)]);
        let b = mask_with((4, 4, 4), &[(1, 0, 0), (2, 0, 0)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let c = mask_with((4, 4, 4), &[(3, 3, 3)]);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let e = VoxelMask::zeros((4, 4, 4), unit()).unwrap();
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let other = VoxelMask::zeros((4, 4, 5), unit()).unwrap();
        assert!(dice(&a, &other).is_err());
    }

    #[test]
    fn mean_dice_loss_binary_cases() {
        let a = mask_with((4, 4, 4), &[(0, 0, 0), (1, 0, 0)]);
        let vol = MultiChannelVolume::from_masks(&[("a".into(), &a)]).unwrap();
        assert_eq!(mean_dice_loss(&vol, &vol).unwrap(), 0.0);

        // two channels with dice 1.0 and 0.5 -> mean loss 0.25
        let b = mask_with((4, 4, 4), &[(1, 0, 0), (2, 0, 0)]);
        let recon =
            MultiChannelVolume::from_masks(&[("p".into(), &a), ("q".into(), &a)]).unwrap();
        let target =
            MultiChannelVolume::from_masks(&[("p".into(), &a), ("q".into(), &b)]).unwrap();
        assert!((mean_dice_loss(&recon, &target).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mean_dice_loss_empty_channel_contributes_zero() {
        let e = VoxelMask::zeros((4, 4, 4), unit()).unwrap();
        let a = mask_with((4, 4, 4), &[(0, 0, 0)]);
        let recon =
            MultiChannelVolume::from_masks(&[("p".into(), &e), ("q".into(), &a)]).unwrap();
        let target =
            MultiChannelVolume::from_masks(&[("p".into(), &e), ("q".into(), &a)]).unwrap();
        assert_eq!(mean_dice_loss(&recon, &target).unwrap(), 0.0);
    }

    #[test]
    fn mean_dice_loss_soft_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = (6, 5, 4);
        let mut recon =
            MultiChannelVolume::zeros(vec!["a".into(), "b".into()], dims, unit()).unwrap();
        for v in recon.values_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut target =
            MultiChannelVolume::zeros(vec!["a".into(), "b".into()], dims, unit()).unwrap();
        for v in target.values_mut() {
            *v = f32::from(rng.gen_bool(0.4));
        }

        // brute-force per-voxel summation oracle
        let n = recon.voxels_per_channel();
        let mut expect = 0.0f64;
        for c in 0..2 {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for i in 0..n {
                let r = recon.values()[c * n + i] as f64;
                let t = target.values()[c * n + i] as f64;
                num += r * t;
                den += r + t;
            }
            expect += 1.0 - 2.0 * num / den;
        }
        expect /= 2.0;
        assert!((mean_dice_loss(&recon, &target).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn auroc_examples() {
        let perfect = cases(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]);
        assert_eq!(auroc(&perfect).unwrap(), 1.0);

        let single_class = cases(&[0.9, 0.8], &[1, 1]);
        assert!(matches!(auroc(&single_class), Err(Error::UndefinedMetric(_))));

        let mixed = cases(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1]);
        assert!((auroc(&mixed).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auroc_matches_pairwise_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(4..30);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if !labels.contains(&0) || !labels.contains(&1) {
                continue;
            }
            let cs = cases(&scores, &labels);
            let got = auroc(&cs).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for p in cs.iter().filter(|c| c.label == 1) {
                for q in cs.iter().filter(|c| c.label == 0) {
                    den += 1.0;
                    if p.score > q.score {
                        num += 1.0;
                    } else if p.score == q.score {
                        num += 0.5;
                    }
                }
            }
            assert!((got - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_invariances() {
        let cs = cases(&[0.1, 0.25, 0.3, 0.44, 0.9], &[0, 1, 0, 1, 1]);
        let base = auroc(&cs).unwrap();
        // strictly monotone transform leaves the ranking unchanged
        let transformed: Vec<ScoredCase> = cs
            .iter()
            .map(|c| ScoredCase {
                score: (3.0 * c.score + 1.0).exp(),
                ..c.clone()
            })
            .collect();
        assert!((auroc(&transformed).unwrap() - base).abs() < 1e-12);
        // reversing labels maps auroc -> 1 - auroc
        let reversed: Vec<ScoredCase> = cs
            .iter()
            .map(|c| ScoredCase {
                label: 1 - c.label,
                ..c.clone()
            })
            .collect();
        assert!((auroc(&reversed).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&cases(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(aupr(&cases(&[0.1, 0.9], &[1, 0])).unwrap(), 0.5);
        assert!(matches!(
            aupr(&cases(&[0.5, 0.4], &[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
        // all positives outrank all negatives -> 1
        let cs = cases(&[0.9, 0.8, 0.7, 0.2, 0.1], &[1, 1, 1, 0, 0]);
        assert_eq!(aupr(&cs).unwrap(), 1.0);
    }

    /// Exhaustive threshold-sweep oracle: evaluate (recall, precision) at
    /// every distinct score treated as "predict positive iff score >= s".
    fn aupr_sweep_oracle(cs: &[ScoredCase]) -> f64 {
        let total_pos = cs.iter().filter(|c| c.label == 1).count() as f64;
        let mut thresholds: Vec<f64> = cs.iter().map(|c| c.score).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let tp = cs.iter().filter(|c| c.label == 1 && c.score >= t).count() as f64;
            let fp = cs.iter().filter(|c| c.label == 0 && c.score >= t).count() as f64;
            let recall = tp / total_pos;
            let precision = tp / (tp + fp);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn aupr_matches_threshold_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = 20;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if !labels.contains(&1) {
                continue;
            }
            let cs = cases(&scores, &labels);
            assert!((aupr(&cs).unwrap() - aupr_sweep_oracle(&cs)).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..50)
            .map(|i| u8::from(scores[i] + rng.gen_range(-0.3..0.3) > 0.5))
            .collect();
        let cs = cases(&scores, &labels);
        let a = bootstrap_ci(&cs, MetricKind::Auroc, 500, 77).unwrap();
        let b = bootstrap_ci(&cs, MetricKind::Auroc, 500, 77).unwrap();
        assert_eq!(a, b);
        let (point, lo, hi) = a;
        assert!(lo <= hi);
        assert!(lo <= point && point <= hi);
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn bootstrap_constant_metric_collapses() {
        // one positive tied with duplicated negatives at lower score: every
        // valid resample has AUROC exactly 1
        let cs = cases(&[0.9, 0.1, 0.1, 0.1], &[1, 0, 0, 0]);
        let (point, lo, hi) = bootstrap_ci(&cs, MetricKind::Auroc, 200, 3).unwrap();
        assert_eq!(point, 1.0);
        assert_eq!(lo, 1.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn bootstrap_errors_when_point_undefined() {
        let cs = cases(&[0.9, 0.8], &[1, 1]);
        assert!(bootstrap_ci(&cs, MetricKind::Auroc, 100, 1).is_err());
    }

    #[test]
    fn scored_case_csv_roundtrip() {
        let cs = vec![
            ScoredCase {
                case_id: "case001".into(),
                organ: "bladder".into(),
                score: 0.125,
                true_dice: Some(0.875),
                label: 0,
            },
            ScoredCase {
                case_id: "case002".into(),
                organ: "urethra".into(),
                score: f64::INFINITY,
                true_dice: None,
                label: 1,
            },
        ];
        let text = scored_cases_to_csv(&cs);
        assert_eq!(scored_cases_from_csv(&text).unwrap(), cs);
    }
}
