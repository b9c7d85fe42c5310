//! OOD scoring and evaluation measures: accuracy, ECE and AUROC.
//!
//! The detection score is the maximum softmax probability (MSP): higher means
//! more in-distribution-like. AUROC is computed from average ranks
//! (Mann-Whitney form, ties count one half); the brute-force pair count lives
//! in the test suite as an oracle only.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::eval_logits;
use crate::tensor::Tensor;
use crate::train::{checkpoint_hash, Checkpoint};

/// Stable row-wise softmax.
pub fn softmax_rows(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    if logits.ndim() != 2 {
        return Err(Error::shape(
            "softmax_rows",
            format!("expected NxK logits, got {:?}", logits.shape()),
        ));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut out = vec![0.0f32; n * k];
    for row in 0..n {
        let src = &logits.data()[row * k..(row + 1) * k];
        let max = src.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0f32;
        for &v in src {
            sum += (v - max).exp();
        }
        for (o, &v) in out[row * k..(row + 1) * k].iter_mut().zip(src) {
            *o = (v - max).exp() / sum;
        }
    }
    Tensor::new(&[n, k], out)
}

/// Maximum softmax probability per row; values lie in [1/K, 1].
pub fn msp_score(logits: &Tensor<f32>) -> Result<Vec<f64>> {
    let probs = softmax_rows(logits)?;
    let (n, k) = (probs.dim(0), probs.dim(1));
    Ok((0..n)
        .map(|row| {
            probs.data()[row * k..(row + 1) * k]
                .iter()
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64
        })
        .collect())
}

/// Probability that a random in-distribution score exceeds a random
/// out-of-distribution score, ties counted one half. Computed by average
/// ranks over the pooled sample in O(n log n).
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Usage(
            "auroc needs nonempty ID and OOD score sets".into(),
        ));
    }
    if id_scores
        .iter()
        .chain(ood_scores)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("non-finite detection score".into()));
    }
    let n_id = id_scores.len();
    let n_ood = ood_scores.len();
    // pool (score, is_id) and sort ascending
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    // average ranks within tie groups; accumulate the ID rank sum
    let mut rank_sum_id = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for p in &pooled[i..j] {
            if p.1 {
                rank_sum_id += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

/// Expected calibration error over equal-width confidence bins.
///
/// The unit interval is split into `n_bins` left-open, right-closed bins;
/// confidence 0 joins the first bin. ECE = sum_b |B_b|/N * |acc(B_b) - conf(B_b)|.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Usage("ece needs at least one sample".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape(
            "ece",
            format!(
                "{} confidences vs {} correctness flags",
                confidences.len(),
                correct.len()
            ),
        ));
    }
    if n_bins == 0 {
        return Err(Error::Usage("ece needs n_bins >= 1".into()));
    }
    if confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::Usage("confidences must lie in [0,1]".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut correct_sum = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        // left-open right-closed: bin index ceil(c * B) - 1, with c = 0 in bin 0
        let bin = ((c * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[bin] += 1;
        conf_sum[bin] += c;
        correct_sum[bin] += ok as usize;
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let acc = correct_sum[b] as f64 / count[b] as f64;
        let conf = conf_sum[b] / count[b] as f64;
        total += (count[b] as f64 / n) * (acc - conf).abs();
    }
    Ok(total)
}

/// Fraction of rows whose argmax matches the label; argmax ties resolve to
/// the lowest class index.
pub fn accuracy(logits: &Tensor<f32>, labels: &[u8]) -> Result<f64> {
    if logits.ndim() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Usage("accuracy needs at least one sample".into()));
    }
    let k = logits.dim(1);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut argmax = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[argmax] {
                    argmax = j;
                }
            }
            argmax == label as usize
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Confidence scores for one ID test set and one OOD set.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

/// One line of a metrics report; the optional fields depend on the row kind
/// (ID rows carry accuracy/ECE, OOD rows carry AUROC).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub study: String,
    pub checkpoint_hash: String,
    pub id_dataset: String,
    pub ood_dataset: Option<String>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub temperature: Option<f64>,
    pub seed: u64,
    pub epoch_budget: usize,
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub auroc: Option<f64>,
}

/// Experiment-level fields stamped onto every row produced by one evaluation.
#[derive(Clone, Debug, Default)]
pub struct RowContext {
    pub experiment: String,
    pub study: String,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub temperature: Option<f64>,
    pub seed: u64,
    pub epoch_budget: usize,
}

pub const DEFAULT_ECE_BINS: usize = 15;
pub const EVAL_CHUNK: usize = 256;

/// Evaluate a checkpoint: one row with accuracy and ECE on the ID test set,
/// then one AUROC row per OOD set (MSP scores, ID statistics normalization
/// assumed upstream).
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    id_test: &LabeledDataset,
    ood_sets: &[&LabeledDataset],
    ctx: &RowContext,
) -> Result<Vec<MetricsRow>> {
    let hash = checkpoint_hash(ckpt)?;
    let id_logits = eval_logits(&ckpt.params, &ckpt.spec, id_test.images(), EVAL_CHUNK)?;
    let id_labels = id_test.labels()?;
    let id_msp = msp_score(&id_logits)?;
    let correct: Vec<bool> = {
        let k = id_logits.dim(1);
        id_labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let row = &id_logits.data()[i * k..(i + 1) * k];
                let mut argmax = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[argmax] {
                        argmax = j;
                    }
                }
                argmax == label as usize
            })
            .collect()
    };
    let base = MetricsRow {
        experiment: ctx.experiment.clone(),
        study: ctx.study.clone(),
        checkpoint_hash: hash,
        id_dataset: id_test.name().to_string(),
        ood_dataset: None,
        alpha: ctx.alpha,
        lambda: ctx.lambda,
        temperature: ctx.temperature,
        seed: ctx.seed,
        epoch_budget: ctx.epoch_budget,
        accuracy: None,
        ece: None,
        auroc: None,
    };
    let mut rows = vec![MetricsRow {
        accuracy: Some(accuracy(&id_logits, id_labels)?),
        ece: Some(ece(&id_msp, &correct, DEFAULT_ECE_BINS)?),
        ..base.clone()
    }];
    for ood in ood_sets {
        let ood_logits = eval_logits(&ckpt.params, &ckpt.spec, ood.images(), EVAL_CHUNK)?;
        let ood_msp = msp_score(&ood_logits)?;
        rows.push(MetricsRow {
            ood_dataset: Some(ood.name().to_string()),
            auroc: Some(auroc(&id_msp, &ood_msp)?),
            ..base.clone()
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msp_uniform_logits() {
        let logits = Tensor::zeros(&[3, 10]);
        let scores = msp_score(&logits).unwrap();
        for s in scores {
            assert!((s - 0.1).abs() < 1e-7);
        }
    }

    #[test]
    fn msp_hand_value() {
        let logits = Tensor::new(&[1, 3], vec![10.0, 0.0, 0.0]).unwrap();
        let scores = msp_score(&logits).unwrap();
        // e^10/(e^10 + 2) = 1/(1 + 2 e^-10)
        let expect = 1.0 / (1.0 + 2.0 * (-10.0f64).exp());
        assert!((scores[0] - expect).abs() < 1e-6);
        assert!((scores[0] - 0.99991).abs() < 1e-5);
    }

    #[test]
    fn msp_shift_invariance() {
        let logits = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, -1.0]).unwrap();
        let shifted = logits.map(|v| v + 100.0);
        let a = msp_score(&logits).unwrap();
        let b = msp_score(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn auroc_perfect_separation() {
        let id = vec![0.9; 5];
        let ood = vec![0.1; 7];
        assert_eq!(auroc(&id, &ood).unwrap(), 1.0);
        assert_eq!(auroc(&ood, &id).unwrap(), 0.0);
    }

    #[test]
    fn auroc_identical_multisets_is_half() {
        let a = vec![0.2, 0.5, 0.5, 0.9];
        assert!((auroc(&a, &a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auroc_hand_case() {
        // 3 of 4 pairs have ID > OOD
        let id = vec![0.9, 0.8];
        let ood = vec![0.7, 0.85];
        assert!((auroc(&id, &ood).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auroc_rejects_empty() {
        assert!(matches!(auroc(&[], &[0.1]).unwrap_err(), Error::Usage(_)));
        assert!(matches!(auroc(&[0.1], &[]).unwrap_err(), Error::Usage(_)));
    }

    #[test]
    fn ece_hand_cases() {
        // one sample, confidence 1.0, correct -> 0
        assert_eq!(ece(&[1.0], &[true], 15).unwrap(), 0.0);
        // all samples confidence 0.8, all correct -> 0.2
        let conf = vec![0.8; 10];
        let ok = vec![true; 10];
        assert!((ece(&conf, &ok, 10).unwrap() - 0.2).abs() < 1e-12);
        // two bins: bin A half the mass |acc-conf|=0.1, bin B |acc-conf|=0.3 -> 0.2
        // bin (0,0.5]: confidences 0.4, half correct -> acc 0.5, conf 0.4 -> gap 0.1
        // bin (0.5,1]: confidences 0.6, 90% correct  -> acc 0.9, conf 0.6 -> gap 0.3
        let mut conf = vec![0.4; 10];
        conf.extend(vec![0.6; 10]);
        let mut ok = vec![true; 5];
        ok.extend(vec![false; 5]);
        ok.extend(vec![true; 9]);
        ok.push(false);
        assert!((ece(&conf, &ok, 2).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ece_zero_when_bins_are_calibrated() {
        // within each occupied bin, mean confidence equals bin accuracy
        let conf = vec![0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75];
        let ok = vec![true, false, false, false, true, true, true, false];
        assert!(ece(&conf, &ok, 2).unwrap() < 1e-12);
    }

    #[test]
    fn ece_bounds_and_order_invariance() {
        let conf = vec![0.1, 0.9, 0.3, 0.7, 0.5];
        let ok = vec![false, true, true, false, true];
        let a = ece(&conf, &ok, 15).unwrap();
        assert!((0.0..=1.0).contains(&a));
        let conf_rev: Vec<f64> = conf.iter().rev().copied().collect();
        let ok_rev: Vec<bool> = ok.iter().rev().copied().collect();
        assert!((a - ece(&conf_rev, &ok_rev, 15).unwrap()).abs() < 1e-12);
        // confidence 0 lands in the first bin, no panic
        assert!(ece(&[0.0], &[false], 15).unwrap() == 0.0);
    }

    #[test]
    fn ece_rejects_empty() {
        assert!(matches!(ece(&[], &[], 15).unwrap_err(), Error::Usage(_)));
    }

    #[test]
    fn accuracy_cases() {
        let logits = Tensor::new(
            &[4, 3],
            vec![
                1.0, 0.0, 0.0, // -> 0
                0.0, 1.0, 0.0, // -> 1
                0.0, 0.0, 1.0, // -> 2
                1.0, 0.0, 0.0, // -> 0
            ],
        )
        .unwrap();
        assert_eq!(accuracy(&logits, &[0, 1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 2, 0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&logits, &[0, 1, 2, 1]).unwrap(), 0.75);
        // argmax ties resolve to the lowest index
        let tied = Tensor::new(&[1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(accuracy(&tied, &[0]).unwrap(), 1.0);
        assert_eq!(accuracy(&tied, &[1]).unwrap(), 0.0);
    }
}
