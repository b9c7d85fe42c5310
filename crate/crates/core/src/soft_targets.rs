//! Target construction and the soft-label loss family.
//!
//! A soft target mixes a one-hot ground truth `q` with a soft distribution
//! `q'` as `(1-a)q + a q'`, subject to the mixed target keeping the true
//! class as its argmax. Cross-entropy against a mixed target decomposes
//! linearly: H((1-a)q + a q', p) = (1-a) H(q,p) + a H(q',p). Label smoothing
//! is the `q' = uniform` instance; knowledge distillation uses the teacher's
//! prediction; outlier exposure adds a uniform-target term on out-of-
//! distribution samples.
//!
//! Losses consume log-probabilities (rows of a log-softmax output); targets
//! are plain probabilities. Each loss exists in two forms: a value-level
//! function matching the contracts here, and a graph builder used by the
//! training loop. The value forms are computed through the same graph ops,
//! so gradient checks cover the training path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Scalar, Tensor};

/// Probability vector over K classes; entries sum to 1 within 1e-6.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution<T: Scalar = f32> {
    probs: Vec<T>,
}

impl<T: Scalar> TargetDistribution<T> {
    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Usage(format!(
                "a target distribution needs K >= 2 classes, got {}",
                probs.len()
            )));
        }
        if probs
            .iter()
            .any(|&p| !(T::zero()..=T::one() + T::from_f64(1e-6)).contains(&p))
        {
            return Err(Error::Constraint(
                "target probabilities must lie in [0,1]".into(),
            ));
        }
        let sum: f64 = probs.iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Constraint(format!(
                "target probabilities sum to {sum}, expected 1 within 1e-6"
            )));
        }
        Ok(TargetDistribution { probs })
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Usage(format!(
                "one_hot needs K >= 2, got {num_classes}"
            )));
        }
        if class >= num_classes {
            return Err(Error::Usage(format!(
                "class {class} out of range for K={num_classes}"
            )));
        }
        let mut probs = vec![T::zero(); num_classes];
        probs[class] = T::one();
        Ok(TargetDistribution { probs })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_one_hot(&self) -> bool {
        self.probs.iter().filter(|&&p| p == T::one()).count() == 1
            && self.probs.iter().filter(|&&p| p == T::zero()).count() == self.probs.len() - 1
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .map(|p| p.as_f64())
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

/// Uniform distribution over K classes: every entry 1/K.
pub fn uniform_target<T: Scalar>(num_classes: usize) -> Result<TargetDistribution<T>> {
    if num_classes < 2 {
        return Err(Error::Usage(format!(
            "uniform_target needs K >= 2, got {num_classes}"
        )));
    }
    let p = T::one() / T::from_f64(num_classes as f64);
    Ok(TargetDistribution {
        probs: vec![p; num_classes],
    })
}

/// Mixed soft target `(1-alpha) q + alpha q'`.
///
/// `q` must be one-hot, and the result must keep the true class as its
/// argmax; otherwise the mix is rejected.
pub fn mix_soft_target<T: Scalar>(
    q: &TargetDistribution<T>,
    q_prime: &TargetDistribution<T>,
    alpha: f64,
) -> Result<TargetDistribution<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    if !q.is_one_hot() {
        return Err(Error::Constraint("mix_soft_target needs a one-hot q".into()));
    }
    if q.num_classes() != q_prime.num_classes() {
        return Err(Error::shape(
            "mix_soft_target",
            format!("q has K={}, q' has K={}", q.num_classes(), q_prime.num_classes()),
        ));
    }
    let a = T::from_f64(alpha);
    let probs: Vec<T> = q
        .probs
        .iter()
        .zip(&q_prime.probs)
        .map(|(&qv, &qp)| (T::one() - a) * qv + a * qp)
        .collect();
    let mixed = TargetDistribution { probs };
    if mixed.argmax() != q.argmax() {
        return Err(Error::Constraint(format!(
            "mixing with alpha={alpha} moves the argmax from class {} to class {}",
            q.argmax(),
            mixed.argmax()
        )));
    }
    Ok(mixed)
}

/// Stack target rows into an NxK tensor.
pub fn target_matrix<T: Scalar>(targets: &[TargetDistribution<T>]) -> Result<Tensor<T>> {
    if targets.is_empty() {
        return Err(Error::Usage("empty target batch".into()));
    }
    let k = targets[0].num_classes();
    if targets.iter().any(|t| t.num_classes() != k) {
        return Err(Error::shape("target_matrix", "ragged target batch"));
    }
    let data: Vec<T> = targets.iter().flat_map(|t| t.probs.iter().copied()).collect();
    Tensor::new(&[targets.len(), k], data)
}

/// One-hot target rows for a label batch.
pub fn one_hot_matrix<T: Scalar>(labels: &[usize], num_classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::Usage("empty label batch".into()));
    }
    let mut data = vec![T::zero(); labels.len() * num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::Usage(format!(
                "label {label} out of range for K={num_classes}"
            )));
        }
        data[i * num_classes + label] = T::one();
    }
    Tensor::new(&[labels.len(), num_classes], data)
}

/// Temperature-scale probability rows: softmax(log p / T) per row.
///
/// For rows produced by a softmax of logits `z` this equals softmax(z/T)
/// exactly, so the teacher's logits never need to be kept around. T=1 returns
/// the input unchanged.
pub fn temperature_scale<T: Scalar>(probs: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    if temperature <= 0.0 {
        return Err(Error::Usage(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if probs.ndim() != 2 {
        return Err(Error::shape(
            "temperature_scale",
            format!("expected NxK probabilities, got {:?}", probs.shape()),
        ));
    }
    if temperature == 1.0 {
        return Ok(probs.clone());
    }
    let (n, k) = (probs.dim(0), probs.dim(1));
    let inv_t = T::from_f64(1.0 / temperature);
    let mut out = vec![T::zero(); n * k];
    for row in 0..n {
        let src = &probs.data()[row * k..(row + 1) * k];
        // ln(0) = -inf is fine here: exp brings it back to 0.
        let scaled: Vec<T> = src.iter().map(|&p| p.ln() * inv_t).collect();
        let max = scaled.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for &v in &scaled {
            sum = sum + (v - max).exp();
        }
        for (o, &v) in out[row * k..(row + 1) * k].iter_mut().zip(&scaled) {
            *o = (v - max).exp() / sum;
        }
    }
    Tensor::new(&[n, k], out)
}

fn check_target_rows<T: Scalar>(targets: &Tensor<T>, context: &'static str) -> Result<()> {
    let k = targets.dim(1);
    for row in 0..targets.dim(0) {
        let sum: f64 = targets.data()[row * k..(row + 1) * k]
            .iter()
            .map(|p| p.as_f64())
            .sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Constraint(format!(
                "{context}: target row {row} sums to {sum}, expected 1 within 1e-6"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Graph builders (used by the training loop; gradients flow into log_probs).
// ---------------------------------------------------------------------------

/// H(targets, p) as a graph node: mean over rows of -sum_k t_k log p_k.
pub fn soft_cross_entropy_node<T: Scalar>(
    graph: &mut Graph<T>,
    log_probs: NodeId,
    targets: Tensor<T>,
) -> Result<NodeId> {
    check_target_rows(&targets, "soft_cross_entropy")?;
    graph.soft_cross_entropy(log_probs, targets)
}

/// (1-alpha) H(q,p) + alpha H(U(K),p) as a graph node.
pub fn label_smoothing_node<T: Scalar>(
    graph: &mut Graph<T>,
    log_probs: NodeId,
    labels: &[usize],
    alpha: f64,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    let k = graph.value(log_probs).dim(1);
    let hard = one_hot_matrix::<T>(labels, k)?;
    let hard_term = graph.soft_cross_entropy(log_probs, hard)?;
    let uniform = Tensor::full(&[labels.len(), k], T::one() / T::from_f64(k as f64));
    let uniform_term = graph.soft_cross_entropy(log_probs, uniform)?;
    let lhs = graph.scale(hard_term, T::from_f64(1.0 - alpha));
    let rhs = graph.scale(uniform_term, T::from_f64(alpha));
    graph.add(lhs, rhs)
}

/// (1-alpha) H(q,p) + alpha H(p_t,p) as a graph node, with
/// p_t = temperature-scaled teacher probabilities (a constant: no gradient
/// flows toward the teacher).
pub fn distillation_node<T: Scalar>(
    graph: &mut Graph<T>,
    log_probs_student: NodeId,
    labels: &[usize],
    teacher_probs: &Tensor<T>,
    alpha: f64,
    temperature: f64,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    check_target_rows(teacher_probs, "distillation teacher")?;
    let k = graph.value(log_probs_student).dim(1);
    let hard = one_hot_matrix::<T>(labels, k)?;
    let hard_term = graph.soft_cross_entropy(log_probs_student, hard)?;
    let scaled_teacher = temperature_scale(teacher_probs, temperature)?;
    let soft_term = graph.soft_cross_entropy(log_probs_student, scaled_teacher)?;
    let lhs = graph.scale(hard_term, T::from_f64(1.0 - alpha));
    let rhs = graph.scale(soft_term, T::from_f64(alpha));
    graph.add(lhs, rhs)
}

/// mean H(q, p_id) + lambda * mean H(U(K), p_ood) as a graph node.
///
/// With lambda = 0 the out-of-distribution term is dropped entirely (and
/// `log_probs_ood` may be `None`).
pub fn outlier_exposure_node<T: Scalar>(
    graph: &mut Graph<T>,
    log_probs_id: NodeId,
    labels: &[usize],
    log_probs_ood: Option<NodeId>,
    lambda: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Usage(format!("lambda must be >= 0, got {lambda}")));
    }
    let k = graph.value(log_probs_id).dim(1);
    let hard = one_hot_matrix::<T>(labels, k)?;
    let id_term = graph.soft_cross_entropy(log_probs_id, hard)?;
    if lambda == 0.0 {
        return Ok(id_term);
    }
    let ood = log_probs_ood.ok_or_else(|| {
        Error::Usage("outlier exposure with lambda > 0 needs an out-of-distribution batch".into())
    })?;
    let ood_v = graph.value(ood);
    if ood_v.dim(1) != k {
        return Err(Error::shape(
            "outlier_exposure",
            format!("ID has K={k}, OOD batch is {:?}", ood_v.shape()),
        ));
    }
    let m = ood_v.dim(0);
    let uniform = Tensor::full(&[m, k], T::one() / T::from_f64(k as f64));
    let ood_term = graph.soft_cross_entropy(ood, uniform)?;
    let scaled = graph.scale(ood_term, T::from_f64(lambda));
    graph.add(id_term, scaled)
}

// ---------------------------------------------------------------------------
// Value-level losses (same graph ops under the hood).
// ---------------------------------------------------------------------------

/// Mean over the batch of -sum_k target_k log p_k.
pub fn soft_cross_entropy<T: Scalar>(
    targets: &[TargetDistribution<T>],
    log_probs: &Tensor<T>,
) -> Result<T> {
    let t = target_matrix(targets)?;
    let mut graph = Graph::new();
    let lp = graph.constant(log_probs.clone());
    let loss = soft_cross_entropy_node(&mut graph, lp, t)?;
    graph.value(loss).item()
}

/// (1-alpha) H(q,p) + alpha H(U(K),p); equals cross-entropy against the mixed
/// target `mix_soft_target(q, uniform, alpha)`.
pub fn label_smoothing_loss<T: Scalar>(
    targets: &[TargetDistribution<T>],
    log_probs: &Tensor<T>,
    alpha: f64,
) -> Result<T> {
    let labels: Vec<usize> = targets
        .iter()
        .map(|t| {
            if t.is_one_hot() {
                Ok(t.argmax())
            } else {
                Err(Error::Constraint("label smoothing needs one-hot q".into()))
            }
        })
        .collect::<Result<_>>()?;
    let mut graph = Graph::new();
    let lp = graph.constant(log_probs.clone());
    let loss = label_smoothing_node(&mut graph, lp, &labels, alpha)?;
    graph.value(loss).item()
}

/// (1-alpha) H(q,p) + alpha H(p_t,p) with p_t the temperature-scaled teacher
/// prediction. T=1 uses the teacher prediction as-is.
pub fn distillation_loss<T: Scalar>(
    targets: &[TargetDistribution<T>],
    log_probs_student: &Tensor<T>,
    teacher_probs: &Tensor<T>,
    alpha: f64,
    temperature: f64,
) -> Result<T> {
    let labels: Vec<usize> = targets
        .iter()
        .map(|t| {
            if t.is_one_hot() {
                Ok(t.argmax())
            } else {
                Err(Error::Constraint("distillation needs one-hot q".into()))
            }
        })
        .collect::<Result<_>>()?;
    let mut graph = Graph::new();
    let lp = graph.constant(log_probs_student.clone());
    let loss = distillation_node(&mut graph, lp, &labels, teacher_probs, alpha, temperature)?;
    graph.value(loss).item()
}

/// mean H(q, p_id) + lambda * mean H(U(K), p_ood).
pub fn outlier_exposure_loss<T: Scalar>(
    targets_id: &[TargetDistribution<T>],
    log_probs_id: &Tensor<T>,
    log_probs_ood: Option<&Tensor<T>>,
    lambda: f64,
) -> Result<T> {
    let labels: Vec<usize> = targets_id
        .iter()
        .map(|t| {
            if t.is_one_hot() {
                Ok(t.argmax())
            } else {
                Err(Error::Constraint("outlier exposure needs one-hot q".into()))
            }
        })
        .collect::<Result<_>>()?;
    if lambda > 0.0 {
        match log_probs_ood {
            None => {
                return Err(Error::Usage(
                    "outlier exposure with lambda > 0 needs an OOD batch".into(),
                ))
            }
            Some(t) if t.dim(0) == 0 => {
                return Err(Error::Usage("empty OOD batch with lambda > 0".into()))
            }
            _ => {}
        }
    }
    let mut graph = Graph::new();
    let lp_id = graph.constant(log_probs_id.clone());
    let lp_ood = log_probs_ood.map(|t| graph.constant(t.clone()));
    let loss = outlier_exposure_node(&mut graph, lp_id, &labels, lp_ood, lambda)?;
    graph.value(loss).item()
}

/// Mixing weight and soft-target mode for a soft-label run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelConfig {
    pub alpha: f64,
    pub mode: SoftLabelMode,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftLabelMode {
    Uniform,
    Teacher,
}

impl SoftLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Usage(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Usage(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Weight of the out-of-distribution term in the outlier-exposure loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OEConfig {
    pub lambda: f64,
}

impl Default for OEConfig {
    fn default() -> Self {
        OEConfig { lambda: 0.5 }
    }
}

impl OEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Usage(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_probs_from<T: Scalar>(rows: &[Vec<f64>]) -> Tensor<T> {
        let k = rows[0].len();
        let data: Vec<T> = rows
            .iter()
            .flat_map(|r| r.iter().map(|&p| T::from_f64(p.ln())))
            .collect();
        Tensor::new(&[rows.len(), k], data).unwrap()
    }

    #[test]
    fn uniform_target_cases() {
        let u = uniform_target::<f64>(10).unwrap();
        assert_eq!(u.probs(), &[0.1; 10]);
        let u2 = uniform_target::<f64>(2).unwrap();
        assert_eq!(u2.probs(), &[0.5, 0.5]);
        let u3 = uniform_target::<f64>(3).unwrap();
        let sum: f64 = u3.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(
            uniform_target::<f64>(1).unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn mix_endpoints_and_hand_case() {
        let q = TargetDistribution::<f64>::one_hot(10, 3).unwrap();
        let u = uniform_target::<f64>(10).unwrap();

        let same = mix_soft_target(&q, &u, 0.0).unwrap();
        assert_eq!(same.probs(), q.probs());

        let mut probs = vec![0.05; 10];
        probs[3] = 0.55;
        let qp = TargetDistribution::from_probs(probs).unwrap();
        let full = mix_soft_target(&q, &qp, 1.0).unwrap();
        assert_eq!(full.probs(), qp.probs());

        let mixed = mix_soft_target(&q, &u, 0.1).unwrap();
        for (i, &p) in mixed.probs().iter().enumerate() {
            let expect = if i == 3 { 0.91 } else { 0.01 };
            assert!((p - expect).abs() < 1e-12, "class {i}: {p}");
        }
    }

    #[test]
    fn mix_rejects_argmax_violation() {
        let q = TargetDistribution::<f64>::one_hot(3, 0).unwrap();
        let qp = TargetDistribution::from_probs(vec![0.1, 0.8, 0.1]).unwrap();
        // alpha = 1 would hand the argmax to class 1
        assert!(matches!(
            mix_soft_target(&q, &qp, 1.0).unwrap_err(),
            Error::Constraint(_)
        ));
        // small alpha keeps class 0 on top
        assert!(mix_soft_target(&q, &qp, 0.2).is_ok());
    }

    #[test]
    fn soft_ce_reduces_to_hard_ce_on_one_hot() {
        let q = vec![TargetDistribution::<f64>::one_hot(4, 2).unwrap()];
        let lp = log_probs_from::<f64>(&[vec![0.1, 0.2, 0.6, 0.1]]);
        let loss = soft_cross_entropy(&q, &lp).unwrap();
        assert!((loss - (-(0.6f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn soft_ce_uniform_uniform_is_ln_k() {
        let q = vec![uniform_target::<f64>(10).unwrap(); 3];
        let lp = log_probs_from::<f64>(&[vec![0.1; 10], vec![0.1; 10], vec![0.1; 10]]);
        let loss = soft_cross_entropy(&q, &lp).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_ce_fair_coin_is_ln_2() {
        let q = vec![TargetDistribution::<f64>::from_probs(vec![0.5, 0.5]).unwrap()];
        let lp = log_probs_from::<f64>(&[vec![0.5, 0.5]]);
        let loss = soft_cross_entropy(&q, &lp).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_smoothing_endpoints() {
        let q = vec![TargetDistribution::<f64>::one_hot(10, 4).unwrap()];
        let lp = {
            let mut row = vec![0.01; 10];
            row[4] = 0.91;
            log_probs_from::<f64>(&[row])
        };
        let hard = soft_cross_entropy(&q, &lp).unwrap();
        let ls0 = label_smoothing_loss(&q, &lp, 0.0).unwrap();
        assert!((ls0 - hard).abs() < 1e-12);

        let uniform_pred = log_probs_from::<f64>(&[vec![0.1; 10]]);
        let ls1 = label_smoothing_loss(&q, &uniform_pred, 1.0).unwrap();
        assert!((ls1 - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_smoothing_matches_mixed_target_route() {
        // both sides of the decomposition, evaluated independently
        let q = TargetDistribution::<f64>::one_hot(10, 4).unwrap();
        let u = uniform_target::<f64>(10).unwrap();
        let alpha = 0.1;
        let lp = {
            let mut row = vec![0.01; 10];
            row[4] = 0.91;
            log_probs_from::<f64>(&[row])
        };
        let two_term = label_smoothing_loss(&[q.clone()], &lp, alpha).unwrap();
        let mixed = mix_soft_target(&q, &u, alpha).unwrap();
        let one_term = soft_cross_entropy(&[mixed], &lp).unwrap();
        assert!((two_term - one_term).abs() < 1e-9);
    }

    #[test]
    fn decomposition_identity_high_precision() {
        // |H(mixed, p) - [(1-a)H(q,p) + aH(q',p)]| < 1e-9 over 1000 seeded trials
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let k = rng.random_range(2..=12);
            let class = rng.random_range(0..k);
            let q = TargetDistribution::<f64>::one_hot(k, class).unwrap();
            // random simplex point sharing the argmax
            let mut qp: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            qp[class] += 2.0; // force argmax at the true class
            let sum: f64 = qp.iter().sum();
            for v in &mut qp {
                *v /= sum;
            }
            let qp = TargetDistribution::from_probs(qp).unwrap();
            let alpha: f64 = rng.random();
            // random log-probs
            let mut pred: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let psum: f64 = pred.iter().sum();
            for v in &mut pred {
                *v /= psum;
            }
            let lp = log_probs_from::<f64>(&[pred]);

            let mixed = mix_soft_target(&q, &qp, alpha).unwrap();
            let lhs = soft_cross_entropy(&[mixed], &lp).unwrap();
            let hard = soft_cross_entropy(&[q.clone()], &lp).unwrap();
            let soft = soft_cross_entropy(&[qp.clone()], &lp).unwrap();
            let rhs = (1.0 - alpha) * hard + alpha * soft;
            assert!(
                (lhs - rhs).abs() < 1e-9,
                "decomposition violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn distillation_endpoints() {
        let q = vec![TargetDistribution::<f64>::one_hot(2, 0).unwrap()];
        let student = log_probs_from::<f64>(&[vec![0.5, 0.5]]);
        let teacher = Tensor::new(&[1, 2], vec![0.9, 0.1]).unwrap();

        // alpha = 0: teacher ignored
        let hard = soft_cross_entropy(&q, &student).unwrap();
        let kd0 = distillation_loss(&q, &student, &teacher, 0.0, 1.0).unwrap();
        assert!((kd0 - hard).abs() < 1e-12);

        // alpha = 1, student equals teacher p_t -> loss = entropy of p_t
        let teacher_flat = Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap();
        let kd1 = distillation_loss(&q, &student, &teacher_flat, 1.0, 1.0).unwrap();
        assert!((kd1 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_smoothing_is_distillation_with_uniform_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.random_range(2..=10);
            let class = rng.random_range(0..k);
            let q = vec![TargetDistribution::<f64>::one_hot(k, class).unwrap()];
            let mut pred: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let psum: f64 = pred.iter().sum();
            for v in &mut pred {
                *v /= psum;
            }
            let lp = log_probs_from::<f64>(&[pred]);
            let alpha: f64 = rng.random();
            let uniform = Tensor::full(&[1, k], 1.0 / k as f64);
            let ls = label_smoothing_loss(&q, &lp, alpha).unwrap();
            let kd = distillation_loss(&q, &lp, &uniform, alpha, 1.0).unwrap();
            assert!((ls - kd).abs() < 1e-12);
        }
    }

    #[test]
    fn gibbs_inequality() {
        // H(t, log p) >= entropy(t), equality iff p = t
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let k = rng.random_range(2..=8);
            let mut t: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let ts: f64 = t.iter().sum();
            for v in &mut t {
                *v /= ts;
            }
            let target = TargetDistribution::from_probs(t.clone()).unwrap();
            let mut p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let ps: f64 = p.iter().sum();
            for v in &mut p {
                *v /= ps;
            }
            let ce = soft_cross_entropy(&[target.clone()], &log_probs_from::<f64>(&[p])).unwrap();
            assert!(ce >= target.entropy() - 1e-7);
            let ce_self =
                soft_cross_entropy(&[target.clone()], &log_probs_from::<f64>(&[t])).unwrap();
            assert!((ce_self - target.entropy()).abs() < 1e-7);
        }
    }

    #[test]
    fn outlier_exposure_cases() {
        let q = vec![TargetDistribution::<f64>::one_hot(10, 0).unwrap()];
        let lp_id = {
            let mut row = vec![0.01; 10];
            row[0] = 0.91;
            log_probs_from::<f64>(&[row])
        };
        let lp_ood = log_probs_from::<f64>(&[vec![0.1; 10], vec![0.1; 10]]);

        // lambda = 0: ID term only
        let id_only = outlier_exposure_loss(&q, &lp_id, None, 0.0).unwrap();
        let hard = soft_cross_entropy(&q, &lp_id).unwrap();
        assert!((id_only - hard).abs() < 1e-12);

        // uniform OOD predictions contribute lambda * ln K
        let lambda = 0.5;
        let with_ood = outlier_exposure_loss(&q, &lp_id, Some(&lp_ood), lambda).unwrap();
        assert!((with_ood - (hard + lambda * 10f64.ln())).abs() < 1e-12);

        // lambda > 0 without an OOD batch is a usage error
        assert!(matches!(
            outlier_exposure_loss(&q, &lp_id, None, 0.5).unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn ood_term_minimizer_is_uniform() {
        // gradient descent on free logits under H(U(K), softmax(z)) must
        // converge to equal logits
        let k = 5;
        let mut logits = Tensor::new(&[1, k], vec![2.0, -1.0, 0.5, 0.0, -0.5]).unwrap();
        for _ in 0..2000 {
            let mut graph = Graph::new();
            let z = graph.leaf(logits.clone(), true);
            let lp = graph.log_softmax(z).unwrap();
            let uniform = Tensor::full(&[1, k], 1.0 / k as f64);
            let loss = graph.soft_cross_entropy(lp, uniform).unwrap();
            graph.backward(loss).unwrap();
            let grad = graph.grad(z).unwrap().to_vec();
            for (w, g) in logits.data_mut().iter_mut().zip(grad) {
                *w -= 0.5 * g;
            }
        }
        // softmax(z) ~ uniform
        let mut graph = Graph::new();
        let z = graph.constant(logits);
        let lp = graph.log_softmax(z).unwrap();
        for &v in graph.value(lp).data() {
            assert!((v.exp() - 1.0 / k as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn losses_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(2..=6);
            let class = rng.random_range(0..k);
            let q = vec![TargetDistribution::<f64>::one_hot(k, class).unwrap()];
            let mut p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let ps: f64 = p.iter().sum();
            for v in &mut p {
                *v /= ps;
            }
            let lp = log_probs_from::<f64>(&[p.clone()]);
            let alpha = rng.random::<f64>();
            assert!(soft_cross_entropy(&q, &lp).unwrap() >= 0.0);
            assert!(label_smoothing_loss(&q, &lp, alpha).unwrap() >= 0.0);
            let teacher = Tensor::new(&[1, k], p).unwrap();
            assert!(distillation_loss(&q, &lp, &teacher, alpha, 2.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn temperature_one_is_identity() {
        let probs = Tensor::new(&[1, 3], vec![0.2f64, 0.5, 0.3]).unwrap();
        let scaled = temperature_scale(&probs, 1.0).unwrap();
        assert_eq!(scaled, probs);
        // high temperature flattens
        let hot = temperature_scale(&probs, 100.0).unwrap();
        for &v in hot.data() {
            assert!((v - 1.0 / 3.0).abs() < 0.01);
        }
    }
}
