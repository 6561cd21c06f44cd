//! Level-set purity, Bayes agreement, mean-estimation errors, the
//! generalization-bound evaluator, and the per-run report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisegen::{argmax, top_two, LabeledSet, MixtureOracle, TrainingSet};
use crate::numkit::{cholesky, cholesky_solve, column_means, norm1, norm2, sub, sym_eig, Matrix};
use crate::robustmean::AgnosticMean;

/// Resolution of the τ grid over [0, ½].
pub const TAU_GRID_STEPS: usize = 50;

/// Anything that assigns a label to a feature vector.
pub trait Predict {
    fn predict(&self, x: &[f64]) -> usize;
}

impl<F: Fn(&[f64]) -> usize> Predict for F {
    fn predict(&self, x: &[f64]) -> usize {
        self(x)
    }
}

/// The Bayes classifier η*.
impl Predict for MixtureOracle {
    fn predict(&self, x: &[f64]) -> usize {
        self.bayes_label(x).expect("oracle dimension matches its own samples")
    }
}

/// Constants of the consistency and bounded-density assumptions, chosen by
/// hand for synthetic sanity checks. They are not estimated from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryParams {
    pub beta: f64,
    pub v: f64,
    pub c_star: f64,
    pub c_upper: f64,
    pub xi: f64,
}

impl TheoryParams {
    pub fn new(beta: f64, v: f64, c_star: f64, c_upper: f64, xi: f64) -> Result<Self> {
        let p = Self {
            beta,
            v,
            c_star,
            c_upper,
            xi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.v >= 0.0) {
            return Err(Error::invalid("need beta > 0 and v ≥ 0"));
        }
        if !(self.c_star > 0.0 && self.c_upper >= self.c_star) {
            return Err(Error::invalid("need 0 < c_star ≤ c_upper"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::invalid(format!("xi {} outside (0, 1)", self.xi)));
        }
        Ok(())
    }

    /// ℓ = c^*/c_*.
    pub fn ell(&self) -> f64 {
        self.c_upper / self.c_star
    }

    /// 1 + ξv/(βℓ), the factor by which ½ − τ grows per round.
    pub fn growth_factor(&self) -> f64 {
        1.0 + self.xi * self.v / (self.beta * self.ell())
    }

    /// Threshold of the pure level set guaranteed after one round, or `None`
    /// when τ is outside [3ξv, ½).
    pub fn improved_tau(&self, tau: f64) -> Option<f64> {
        if tau < 3.0 * self.xi * self.v || tau >= 0.5 {
            return None;
        }
        Some((0.5 - self.growth_factor() * (0.5 - tau)).max(0.0))
    }

    /// Floor on P[y_f(x) = η*(x)] for the final classifier.
    pub fn agreement_floor(&self) -> f64 {
        1.0 - 3.0 * self.xi * self.c_upper * self.v
    }
}

/// Samples with their true posteriors precomputed.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    features: Matrix,
    bayes: Vec<usize>,
    margins: Vec<f64>,
}

impl ReferenceSet {
    pub fn new(oracle: &MixtureOracle, features: Matrix) -> Result<Self> {
        let mut bayes = Vec::with_capacity(features.rows());
        let mut margins = Vec::with_capacity(features.rows());
        let binary = oracle.num_classes() == 2;
        for x in features.row_iter() {
            let p = oracle.bayes_posterior(x)?;
            bayes.push(argmax(&p));
            margins.push(if binary {
                (p[1] - 0.5).abs()
            } else {
                let (a, b) = top_two(&p);
                p[a] - p[b]
            });
        }
        Ok(Self {
            features,
            bayes,
            margins,
        })
    }

    pub fn len(&self) -> usize {
        self.bayes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bayes.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn bayes_labels(&self) -> &[usize] {
        &self.bayes
    }

    /// |η(x) − ½| for two classes, otherwise the top-two posterior gap.
    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    fn predictions(&self, clf: &impl Predict) -> Vec<usize> {
        self.features.row_iter().map(|x| clf.predict(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityPoint {
    pub tau: f64,
    pub purity: f64,
    /// The level set held no samples; `purity` is then 1 by convention.
    pub empty: bool,
}

fn purity_from_predictions(reference: &ReferenceSet, predicted: &[usize], tau: f64) -> PurityPoint {
    let mut total = 0usize;
    let mut agree = 0usize;
    for ((&m, &b), &p) in reference.margins.iter().zip(&reference.bayes).zip(predicted) {
        if m >= tau {
            total += 1;
            agree += usize::from(p == b);
        }
    }
    PurityPoint {
        tau,
        purity: if total == 0 { 1.0 } else { agree as f64 / total as f64 },
        empty: total == 0,
    }
}

/// Fraction of the level set {margin ≥ τ} on which `clf` agrees with η*.
pub fn level_set_purity(clf: &impl Predict, reference: &ReferenceSet, tau: f64) -> PurityPoint {
    purity_from_predictions(reference, &reference.predictions(clf), tau)
}

fn grid_tau(i: usize) -> f64 {
    i as f64 / (2 * TAU_GRID_STEPS) as f64
}

/// Purity at τ = 0, 0.01, …, 0.5.
pub fn purity_curve(clf: &impl Predict, reference: &ReferenceSet) -> Vec<PurityPoint> {
    let predicted = reference.predictions(clf);
    (0..=TAU_GRID_STEPS)
        .map(|i| purity_from_predictions(reference, &predicted, grid_tau(i)))
        .collect()
}

/// Smallest grid τ whose level set is nonempty with purity ≥ `threshold`,
/// or ½ when there is none.
pub fn min_pure_tau_of(curve: &[PurityPoint], threshold: f64) -> f64 {
    curve
        .iter()
        .find(|p| !p.empty && p.purity >= threshold)
        .map_or(0.5, |p| p.tau)
}

pub fn min_pure_tau(clf: &impl Predict, reference: &ReferenceSet, threshold: f64) -> f64 {
    min_pure_tau_of(&purity_curve(clf, reference), threshold)
}

/// Fraction of samples on which `clf` predicts the Bayes label.
pub fn bayes_agreement(clf: &impl Predict, reference: &ReferenceSet) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    let predicted = reference.predictions(clf);
    let agree = predicted.iter().zip(&reference.bayes).filter(|(p, b)| p == b).count();
    agree as f64 / reference.len() as f64
}

/// Fraction of `labels` matched by `clf`.
pub fn accuracy(clf: &impl Predict, features: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    let hits = features
        .row_iter()
        .zip(labels)
        .filter(|(x, &y)| clf.predict(x) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// φ(Σ̄) = 4κ/(1+κ)² with κ = ‖Σ̄⁻¹‖₂‖Σ̄‖₂.
pub fn phi(sigma_bar: &Matrix) -> Result<f64> {
    let kappa = condition_number(sigma_bar)?;
    Ok(4.0 * kappa / ((1.0 + kappa) * (1.0 + kappa)))
}

fn condition_number(sigma: &Matrix) -> Result<f64> {
    let eig = sym_eig(sigma)?;
    let lo = eig.min_value();
    if lo <= 0.0 {
        return Err(Error::SingularCovariance("Σ̄".into()));
    }
    Ok(eig.max_value() / lo)
}

/// Σ̄, or Σ̄ + 1e-8·tr/d·I when Σ̄ is not positive definite.
fn regularized(sigma: &Matrix) -> Result<Matrix> {
    if cholesky(sigma).is_some() && sym_eig(sigma)?.min_value() > 0.0 {
        return Ok(sigma.clone());
    }
    let mut s = sigma.clone();
    let d = s.rows() as f64;
    if !(s.trace() > 0.0) {
        return Err(Error::SingularCovariance("Σ̄ has zero trace".into()));
    }
    let jitter = 1e-8 * s.trace() / d;
    s.add_diag(jitter);
    if cholesky(&s).is_none() || sym_eig(&s)?.min_value() <= 0.0 {
        return Err(Error::SingularCovariance("Σ̄".into()));
    }
    Ok(s)
}

/// Upper bound on the noisy-label error from estimated class means:
/// Σ_k Σ_{k'≠k} exp(−⅛ Δᵀ Σ̄⁻¹ Δ · φ(Σ̄)) + C Σ_k ‖μ̄^k − μ^k‖₁ with Δ = μ̄^k − μ̄^{k'}.
pub fn generalization_bound(
    estimated_means: &[Vec<f64>],
    true_means: &[Vec<f64>],
    sigma_bar: &Matrix,
    c_bound: f64,
) -> Result<f64> {
    let k = estimated_means.len();
    if k < 2 {
        return Err(Error::invalid("the bound needs at least two classes"));
    }
    if true_means.len() != k {
        return Err(Error::LengthMismatch {
            what: "true means",
            expected: k,
            got: true_means.len(),
        });
    }
    let d = sigma_bar.rows();
    if !sigma_bar.is_square() {
        return Err(Error::invalid("Σ̄ must be square"));
    }
    for m in estimated_means.iter().chain(true_means) {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.len(),
            });
        }
    }
    let sigma = regularized(sigma_bar)?;
    let phi = phi(&sigma)?;
    let chol = cholesky(&sigma).ok_or(Error::SingularCovariance("Σ̄".into()))?;

    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let delta = sub(&estimated_means[a], &estimated_means[b]);
            let solved = cholesky_solve(&chol, &delta);
            let quad: f64 = delta.iter().zip(&solved).map(|(x, y)| x * y).sum();
            total += (-0.125 * quad * phi).exp();
        }
    }
    let l1: f64 = estimated_means
        .iter()
        .zip(true_means)
        .map(|(e, t)| norm1(&sub(e, t)))
        .sum();
    Ok(total + c_bound * l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanError {
    pub l2: f64,
    pub l1: f64,
}

pub fn mean_error(estimate: &[f64], truth: &[f64]) -> MeanError {
    let diff = sub(estimate, truth);
    MeanError {
        l2: norm2(&diff),
        l1: norm1(&diff),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMeanError {
    pub class: usize,
    pub robust: MeanError,
    pub empirical: MeanError,
}

/// Per-class ℓ2 and ℓ1 errors of robust and empirical mean estimates.
pub fn mean_error_report(robust: &[Vec<f64>], empirical: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<ClassMeanError>> {
    if robust.len() != truths.len() || empirical.len() != truths.len() {
        return Err(Error::LengthMismatch {
            what: "class estimates",
            expected: truths.len(),
            got: robust.len().min(empirical.len()),
        });
    }
    let mut out = Vec::with_capacity(truths.len());
    for (c, ((r, e), t)) in robust.iter().zip(empirical).zip(truths).enumerate() {
        if r.len() != t.len() || e.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                got: r.len(),
            });
        }
        out.push(ClassMeanError {
            class: c,
            robust: mean_error(r, t),
            empirical: mean_error(e, t),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Correction,
}

/// What the trainer did in one epoch, before evaluation.
#[derive(Debug, Clone, Default)]
pub struct EpochActivity {
    pub tau: Option<f64>,
    pub corrected_count: usize,
    pub fixpoint_rounds: usize,
    pub fixpoint_cap_hit: bool,
    pub train_loss: f64,
    pub sampled_count: usize,
    pub sampled_loss: Option<f64>,
    pub skipped_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub tau: Option<f64>,
    pub corrected_count: usize,
    pub fixpoint_rounds: usize,
    pub fixpoint_cap_hit: bool,
    pub train_loss: f64,
    pub sampled_count: usize,
    pub sampled_loss: Option<f64>,
    pub skipped_classes: Vec<usize>,
    pub purity_curve: Vec<PurityPoint>,
    pub min_pure_tau: f64,
    pub bayes_agreement: f64,
    pub test_accuracy: f64,
    pub noisy_val_accuracy: Option<f64>,
    pub mean_errors: Vec<ClassMeanError>,
    /// Fraction of current training labels that differ from the clean ones.
    pub achieved_noise_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub epochs_completed: usize,
    pub initial_noise_rate: f64,
    pub final_noise_rate: f64,
    pub final_agreement: f64,
    pub final_accuracy: f64,
    pub final_noisy_val_accuracy: Option<f64>,
    pub cap_hits: usize,
    /// Whether min_pure_tau never rose across correction epochs.
    pub min_pure_tau_non_increasing: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn new(variant: impl Into<String>, seed: u64, initial_noise_rate: f64) -> Self {
        Self {
            variant: variant.into(),
            seed,
            epochs: Vec::new(),
            summary: RunSummary {
                epochs_completed: 0,
                initial_noise_rate,
                final_noise_rate: initial_noise_rate,
                final_agreement: 0.0,
                final_accuracy: 0.0,
                final_noisy_val_accuracy: None,
                cap_hits: 0,
                min_pure_tau_non_increasing: true,
                failure: None,
            },
        }
    }

    pub fn push(&mut self, record: EpochRecord) {
        let s = &mut self.summary;
        s.epochs_completed = record.epoch;
        s.final_noise_rate = record.achieved_noise_rate;
        s.final_agreement = record.bayes_agreement;
        s.final_accuracy = record.test_accuracy;
        s.final_noisy_val_accuracy = record.noisy_val_accuracy;
        s.cap_hits += usize::from(record.fixpoint_cap_hit);
        self.epochs.push(record);
        s.min_pure_tau_non_increasing = min_pure_tau_non_increasing(&self.epochs);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn final_purity_curve(&self) -> &[PurityPoint] {
        self.epochs.last().map_or(&[], |e| &e.purity_curve)
    }
}

/// True when min_pure_tau never increases from one correction epoch to the next.
pub fn min_pure_tau_non_increasing(epochs: &[EpochRecord]) -> bool {
    let taus: Vec<f64> = epochs
        .iter()
        .filter(|e| e.phase == Phase::Correction)
        .map(|e| e.min_pure_tau)
        .collect();
    taus.windows(2).all(|w| w[1] <= w[0])
}

/// Writes `tau,purity,empty_flag` rows.
pub fn write_purity_csv<W: Write>(writer: W, curve: &[PurityPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tau", "purity", "empty_flag"])?;
    for p in curve {
        w.write_record([p.tau.to_string(), p.purity.to_string(), u8::from(p.empty).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Holds everything evaluation needs and training must not see: the
/// oracle, the clean test set, and the clean training labels.
#[derive(Debug, Clone)]
pub struct Evaluator {
    oracle: MixtureOracle,
    reference: ReferenceSet,
    test_labels: Vec<usize>,
    clean_train_labels: Vec<usize>,
    noisy_val: Option<LabeledSet>,
    estimator: AgnosticMean,
}

impl Evaluator {
    pub fn new(oracle: MixtureOracle, test: LabeledSet, clean_train_labels: Vec<usize>) -> Result<Self> {
        if test.features.cols() != oracle.dim() {
            return Err(Error::DimensionMismatch {
                expected: oracle.dim(),
                got: test.features.cols(),
            });
        }
        let reference = ReferenceSet::new(&oracle, test.features)?;
        Ok(Self {
            oracle,
            reference,
            test_labels: test.labels,
            clean_train_labels,
            noisy_val: None,
            estimator: AgnosticMean::default(),
        })
    }

    pub fn with_noisy_validation(mut self, val: LabeledSet) -> Self {
        self.noisy_val = Some(val);
        self
    }

    pub fn with_estimator(mut self, estimator: AgnosticMean) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn oracle(&self) -> &MixtureOracle {
        &self.oracle
    }

    pub fn reference(&self) -> &ReferenceSet {
        &self.reference
    }

    /// Fraction of `labels` that differ from the clean training labels.
    pub fn noise_rate(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let wrong = labels.iter().zip(&self.clean_train_labels).filter(|(a, b)| a != b).count();
        wrong as f64 / labels.len() as f64
    }

    /// Robust and empirical mean errors per class under the current labels.
    /// Classes with no samples are left out.
    pub fn class_mean_errors(&self, data: &TrainingSet) -> Result<Vec<ClassMeanError>> {
        let truths = self.oracle.means();
        let mut out = Vec::new();
        for (c, truth) in truths.iter().enumerate() {
            let x = data.class_features(c);
            if x.rows() == 0 {
                continue;
            }
            out.push(ClassMeanError {
                class: c,
                robust: mean_error(&self.estimator.estimate(&x)?, truth),
                empirical: mean_error(&column_means(&x)?, truth),
            });
        }
        Ok(out)
    }

    pub fn record(
        &self,
        epoch: usize,
        phase: Phase,
        clf: &impl Predict,
        data: &TrainingSet,
        activity: EpochActivity,
    ) -> Result<EpochRecord> {
        let purity_curve = purity_curve(clf, &self.reference);
        Ok(EpochRecord {
            epoch,
            phase,
            tau: activity.tau,
            corrected_count: activity.corrected_count,
            fixpoint_rounds: activity.fixpoint_rounds,
            fixpoint_cap_hit: activity.fixpoint_cap_hit,
            train_loss: activity.train_loss,
            sampled_count: activity.sampled_count,
            sampled_loss: activity.sampled_loss,
            skipped_classes: activity.skipped_classes,
            min_pure_tau: min_pure_tau_of(&purity_curve, 1.0),
            purity_curve,
            bayes_agreement: bayes_agreement(clf, &self.reference),
            test_accuracy: accuracy(clf, self.reference.features(), &self.test_labels),
            noisy_val_accuracy: self.noisy_val.as_ref().map(|v| accuracy(clf, &v.features, &v.labels)),
            mean_errors: self.class_mean_errors(data)?,
            achieved_noise_rate: self.noise_rate(data.labels()),
        })
    }
}
