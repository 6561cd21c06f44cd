//! Softmax-linear classifier, SGD with momentum, progressive label
//! correction, and the epoch loop that ties correction to calibrated
//! resampling.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_models, sample_calibrated, CalibrationConfig};
use crate::error::{Error, Result};
use crate::noisegen::{argmax, softmax, TrainingSet};
use crate::numkit::{derived_stream, Matrix, Stream};
use crate::verify::{EpochActivity, Evaluator, Phase, Predict, RunReport};

/// f(x) = softmax(Wx + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: Matrix::zeros(k, d),
            bias: vec![0.0; k],
        }
    }

    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::LengthMismatch {
                what: "bias",
                expected: weights.rows(),
                got: bias.len(),
            });
        }
        let clf = Self { weights, bias };
        if !clf.is_finite() {
            return Err(Error::NonFinite("classifier parameters"));
        }
        Ok(clf)
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Probability of class 1, the binary f(x).
    pub fn positive_score(&self, x: &[f64]) -> f64 {
        self.predict_proba(x)[1]
    }

    /// Weights row by row, then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let (k, d) = (self.num_classes(), self.dim());
        if params.len() != k * d + k {
            return Err(Error::LengthMismatch {
                what: "parameters",
                expected: k * d + k,
                got: params.len(),
            });
        }
        self.weights = Matrix::from_vec(k, d, params[..k * d].to_vec())?;
        self.bias = params[k * d..].to_vec();
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

impl Predict for LinearClassifier {
    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// −log softmax(Wx + b)_y.
pub fn cross_entropy(clf: &LinearClassifier, x: &[f64], y: usize) -> f64 {
    let z = clf.logits(x);
    log_sum_exp(&z) - z[y]
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut g = self.weights.as_slice().to_vec();
        g.extend_from_slice(&self.bias);
        g
    }
}

/// Mean cross-entropy over `rows` and its gradient.
pub fn loss_and_gradient(clf: &LinearClassifier, features: &Matrix, labels: &[usize], rows: &[usize]) -> (f64, Gradient) {
    let (k, d) = (clf.num_classes(), clf.dim());
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for &i in rows {
        let x = features.row(i);
        let y = labels[i];
        let z = clf.logits(x);
        let lse = log_sum_exp(&z);
        loss += lse - z[y];
        for c in 0..k {
            let g = (z[c] - lse).exp() - f64::from(u8::from(c == y));
            gb[c] += g;
            for (acc, xj) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                *acc += g * xj;
            }
        }
    }
    let n = rows.len().max(1) as f64;
    gw.iter_mut().for_each(|v| *v /= n);
    gb.iter_mut().for_each(|v| *v /= n);
    (
        loss / n,
        Gradient {
            weights: Matrix::from_vec(k, d, gw).expect("k·d entries"),
            bias: gb,
        },
    )
}

/// SGD with heavy-ball momentum: v ← μv + g, θ ← θ − ηv.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

pub const MOMENTUM: f64 = 0.9;

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: MOMENTUM,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, clf: &mut LinearClassifier, grad: &Gradient) {
        let g = grad.flatten();
        if self.velocity.len() != g.len() {
            self.velocity = vec![0.0; g.len()];
        }
        let mut p = clf.params();
        for ((v, gi), pi) in self.velocity.iter_mut().zip(&g).zip(&mut p) {
            *v = self.momentum * *v + gi;
            *pi -= self.lr * *v;
        }
        clf.set_params(&p).expect("same parameter count");
    }
}

/// One shuffled pass of mini-batch SGD. Returns the mean loss over the
/// epoch, each batch's loss taken before its update. On a non-finite loss
/// or parameter the classifier and optimizer are restored to the state
/// before the offending batch.
pub fn train_epoch(
    clf: &mut LinearClassifier,
    opt: &mut Sgd,
    features: &Matrix,
    labels: &[usize],
    batch_size: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let n = labels.len();
    if n == 0 || features.rows() != n {
        return Err(if n == 0 {
            Error::EmptyInput
        } else {
            Error::LengthMismatch {
                what: "labels",
                expected: features.rows(),
                got: n,
            }
        });
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut total = 0.0;
    let mut last_finite = f64::NAN;
    for batch in order.chunks(batch_size) {
        let (loss, grad) = loss_and_gradient(clf, features, labels, batch);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                last_finite_loss: last_finite,
            });
        }
        let (saved_clf, saved_opt) = (clf.clone(), opt.clone());
        opt.step(clf, &grad);
        if !clf.is_finite() {
            *clf = saved_clf;
            *opt = saved_opt;
            return Err(Error::Diverged { last_finite_loss: loss });
        }
        last_finite = loss;
        total += loss * batch.len() as f64;
    }
    Ok(total / n as f64)
}

/// Relabels samples the classifier is confident about. Two classes: ỹ ←
/// 1{f(x) ≥ ½} where |f(x) − ½| > τ. More classes: ỹ ← argmax f where
/// f_argmax − f_ỹ > τ. Returns how many labels changed value.
pub fn correct_labels(clf: &LinearClassifier, data: &mut TrainingSet, tau: f64) -> usize {
    let binary = data.num_classes() == 2;
    let mut changed = 0;
    for i in 0..data.len() {
        let p = clf.predict_proba(data.features().row(i));
        let current = data.labels()[i];
        let proposal = if binary {
            let f = p[1];
            ((f - 0.5).abs() > tau).then_some(usize::from(f >= 0.5))
        } else {
            let g = argmax(&p);
            (p[g] - p[current] > tau).then_some(g)
        };
        if let Some(label) = proposal {
            if label != current {
                data.set_label(i, label);
                changed += 1;
            }
        }
    }
    changed
}

pub const DEFAULT_FIXPOINT_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FixpointOutcome {
    pub rounds: usize,
    /// Labels changed in each round; the last entry is 0 unless the cap hit.
    pub corrections: Vec<usize>,
    pub cap_hit: bool,
}

impl FixpointOutcome {
    pub fn total(&self) -> usize {
        self.corrections.iter().sum()
    }
}

/// Alternates correction and a training pass until a round changes no
/// label or `cap` rounds have run.
#[allow(clippy::too_many_arguments)]
pub fn correction_fixpoint(
    clf: &mut LinearClassifier,
    opt: &mut Sgd,
    data: &mut TrainingSet,
    tau: f64,
    batch_size: usize,
    cap: usize,
    rng: &mut Stream,
) -> Result<FixpointOutcome> {
    let mut out = FixpointOutcome::default();
    loop {
        let changed = correct_labels(clf, data, tau);
        out.rounds += 1;
        out.corrections.push(changed);
        if changed == 0 {
            break;
        }
        if out.rounds >= cap {
            out.cap_hit = true;
            break;
        }
        train_epoch(clf, opt, data.features(), data.labels(), batch_size, rng)?;
    }
    Ok(out)
}

/// Linear decay of the correction threshold with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSchedule {
    pub tau0: f64,
    pub decay: f64,
    pub tau_min: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self {
            tau0: 0.3,
            decay: 0.05,
            tau_min: 0.05,
        }
    }
}

impl TauSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > self.tau_min && self.tau_min >= 0.0 && self.decay > 0.0) {
            return Err(Error::Config(format!(
                "tau schedule needs tau0 > tau_min ≥ 0 and decay > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// τ(t) = max(τ_min, τ0 − decay·(t − t_w − 1)) for t > t_w.
    pub fn tau_of(&self, t: usize, t_w: usize) -> f64 {
        let steps = t.saturating_sub(t_w + 1) as f64;
        (self.tau0 - self.decay * steps).max(self.tau_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_t_w")]
    pub t_w: usize,
    #[serde(default = "default_lr_main")]
    pub lr_main: f64,
    #[serde(default = "default_lr_sampled")]
    pub lr_sampled: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub schedule: TauSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fixpoint_cap")]
    pub fixpoint_cap: usize,
}

fn default_t_max() -> usize {
    30
}
fn default_t_w() -> usize {
    5
}
fn default_lr_main() -> f64 {
    0.01
}
fn default_lr_sampled() -> f64 {
    0.0001
}
fn default_batch_size() -> usize {
    128
}
fn default_fixpoint_cap() -> usize {
    DEFAULT_FIXPOINT_CAP
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            t_w: default_t_w(),
            lr_main: default_lr_main(),
            lr_sampled: default_lr_sampled(),
            batch_size: default_batch_size(),
            calibration: CalibrationConfig::default(),
            schedule: TauSchedule::default(),
            seed: 0,
            fixpoint_cap: default_fixpoint_cap(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_w > self.t_max {
            return Err(Error::Config(format!("t_w {} exceeds t_max {}", self.t_w, self.t_max)));
        }
        if !(self.lr_main > 0.0 && self.lr_sampled > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.fixpoint_cap == 0 {
            return Err(Error::Config("batch_size and fixpoint_cap must be positive".into()));
        }
        self.schedule.validate()?;
        self.calibration.validate()
    }

    /// `standard` (warm-up only), `correction_only` (λ = 0), or the
    /// calibration method name.
    pub fn variant(&self) -> String {
        if self.t_max == self.t_w {
            "standard".into()
        } else if self.calibration.lambda == 0.0 {
            "correction_only".into()
        } else {
            self.calibration.method.to_string()
        }
    }
}

/// Stream indices derived from the run seed. Sampling has its own stream so
/// runs that differ only in λ consume the main stream identically.
const MAIN_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub classifier: LinearClassifier,
    pub data: TrainingSet,
}

/// A run that stopped early, with the report up to the last completed epoch.
#[derive(Debug)]
pub struct RunFailure {
    pub report: RunReport,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed after {} epochs: {}", self.report.epochs.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Warm-up on the noisy labels, then per epoch: correct to a fixpoint at
/// τ(t), train on the corrected labels, fit class models, sample
/// round(λn) points and train on them with the second optimizer.
pub fn run_experiment(
    config: &TrainConfig,
    data: TrainingSet,
    evaluator: &Evaluator,
) -> std::result::Result<RunOutput, RunFailure> {
    let mut report = RunReport::new(config.variant(), config.seed, evaluator.noise_rate(data.labels()));
    if let Err(error) = config.validate() {
        return Err(RunFailure { report, error });
    }
    let mut state = RunState {
        clf: LinearClassifier::zeros(data.num_classes(), data.dim()),
        main: Sgd::new(config.lr_main),
        sampled: Sgd::new(config.lr_sampled),
        main_rng: derived_stream(config.seed, MAIN_STREAM),
        sampling_rng: derived_stream(config.seed, SAMPLING_STREAM),
        data,
    };
    for t in 1..=config.t_max {
        let step = state.epoch(config, t).and_then(|(phase, activity)| {
            evaluator.record(t, phase, &state.clf, &state.data, activity)
        });
        match step {
            Ok(record) => {
                log::debug!(
                    "epoch {t}: agreement {:.4} corrected {} noise {:.4}",
                    record.bayes_agreement,
                    record.corrected_count,
                    record.achieved_noise_rate
                );
                report.push(record);
            }
            Err(error) => {
                report.summary.failure = Some(error.to_string());
                return Err(RunFailure { report, error });
            }
        }
    }
    Ok(RunOutput {
        report,
        classifier: state.clf,
        data: state.data,
    })
}

struct RunState {
    clf: LinearClassifier,
    main: Sgd,
    sampled: Sgd,
    main_rng: Stream,
    sampling_rng: Stream,
    data: TrainingSet,
}

impl RunState {
    fn epoch(&mut self, config: &TrainConfig, t: usize) -> Result<(Phase, EpochActivity)> {
        let bs = config.batch_size;
        if t <= config.t_w {
            let loss = train_epoch(&mut self.clf, &mut self.main, self.data.features(), self.data.labels(), bs, &mut self.main_rng)?;
            return Ok((
                Phase::Warmup,
                EpochActivity {
                    train_loss: loss,
                    ..EpochActivity::default()
                },
            ));
        }
        let tau = config.schedule.tau_of(t, config.t_w);
        let fix = correction_fixpoint(
            &mut self.clf,
            &mut self.main,
            &mut self.data,
            tau,
            bs,
            config.fixpoint_cap,
            &mut self.main_rng,
        )?;
        let loss = train_epoch(&mut self.clf, &mut self.main, self.data.features(), self.data.labels(), bs, &mut self.main_rng)?;
        let mut activity = EpochActivity {
            tau: Some(tau),
            corrected_count: fix.total(),
            fixpoint_rounds: fix.rounds,
            fixpoint_cap_hit: fix.cap_hit,
            train_loss: loss,
            ..EpochActivity::default()
        };

        let lambda = config.calibration.lambda;
        if lambda > 0.0 {
            let fitted = fit_models(&config.calibration, &self.data)?;
            activity.skipped_classes = fitted.skipped;
            if !fitted.models.is_empty() {
                let sampled = sample_calibrated(&fitted.models, lambda, self.data.len(), &mut self.sampling_rng)?;
                activity.sampled_count = sampled.len();
                if !sampled.is_empty() {
                    let l = train_epoch(
                        &mut self.clf,
                        &mut self.sampled,
                        &sampled.features,
                        &sampled.labels,
                        bs,
                        &mut self.sampling_rng,
                    )?;
                    activity.sampled_loss = Some(l);
                }
            }
        }
        Ok((Phase::Correction, activity))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::stream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_classifier(k: usize, d: usize, rng: &mut Stream) -> LinearClassifier {
        let w: Vec<f64> = (0..k * d).map(|_| StandardNormal.sample(rng)).collect();
        let b: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        LinearClassifier::new(Matrix::from_vec(k, d, w).unwrap(), b).unwrap()
    }

    fn random_points(n: usize, d: usize, rng: &mut Stream) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let p = LinearClassifier::zeros(4, 3).predict_proba(&[1.0, -2.0, 0.5]);
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn large_weights_saturate() {
        let clf = LinearClassifier::new(Matrix::from_rows(&[[-1e3], [1e3]]).unwrap(), vec![0.0, 0.0]).unwrap();
        assert!(clf.positive_score(&[1.0]) > 1.0 - 1e-12);
        assert!((cross_entropy(&clf, &[1.0], 1)).abs() < 1e-12);
        assert!((cross_entropy(&clf, &[1.0], 0) - 2e3).abs() < 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = stream(1);
        let clf = random_classifier(5, 3, &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let s: f64 = clf.predict_proba(&x).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = stream(2);
        let h = 1e-4;
        for _ in 0..20 {
            let k = rng.random_range(2..5);
            let d = rng.random_range(1..6);
            let clf = random_classifier(k, d, &mut rng);
            let x = random_points(1, d, &mut rng);
            let y = vec![rng.random_range(0..k)];
            let (_, g) = loss_and_gradient(&clf, &x, &y, &[0]);
            let g = g.flatten();
            let p0 = clf.params();
            for j in 0..p0.len() {
                let mut plus = clf.clone();
                let mut minus = clf.clone();
                let mut p = p0.clone();
                p[j] += h;
                plus.set_params(&p).unwrap();
                p[j] -= 2.0 * h;
                minus.set_params(&p).unwrap();
                let fd = (cross_entropy(&plus, x.row(0), y[0]) - cross_entropy(&minus, x.row(0), y[0])) / (2.0 * h);
                let scale = fd.abs().max(g[j].abs()).max(1e-3);
                assert!((fd - g[j]).abs() / scale < 1e-5, "param {j}: fd {fd} analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = stream(3);
        let mut clf = random_classifier(3, 2, &mut rng);
        let before = clf.clone();
        let x = random_points(20, 2, &mut rng);
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let mut opt = Sgd::new(0.0);
        let loss = train_epoch(&mut clf, &mut opt, &x, &y, 4, &mut rng).unwrap();
        assert_eq!(clf, before);
        assert!(loss > 0.0);
    }

    #[test]
    fn separable_toy_loss_decreases() {
        let x = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0], [-2.0, -1.0], [-1.0, -2.0]]).unwrap();
        let y = vec![1, 1, 0, 0];
        let mut clf = LinearClassifier::zeros(2, 2);
        let mut opt = Sgd::new(0.1);
        let mut rng = stream(4);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss = train_epoch(&mut clf, &mut opt, &x, &y, 4, &mut rng).unwrap();
            assert!(loss < prev, "{loss} !< {prev}");
            prev = loss;
        }
    }

    /// Independent full-batch reference: per-sample softmax gradients
    /// accumulated with explicit loops, heavy-ball momentum.
    fn reference_gd(w: &mut [Vec<f64>], b: &mut [f64], vel: &mut [f64], x: &[Vec<f64>], y: &[usize], lr: f64) {
        let k = b.len();
        let d = w[0].len();
        let n = x.len() as f64;
        let mut grad = vec![0.0; k * d + k];
        for (xi, &yi) in x.iter().zip(y) {
            let z: Vec<f64> = (0..k).map(|c| (0..d).map(|j| w[c][j] * xi[j]).sum::<f64>() + b[c]).collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let delta = e[c] / s - if c == yi { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[c * d + j] += delta * xi[j] / n;
                }
                grad[k * d + c] += delta / n;
            }
        }
        for (i, g) in grad.iter().enumerate() {
            vel[i] = 0.9 * vel[i] + g;
            if i < k * d {
                w[i / d][i % d] -= lr * vel[i];
            } else {
                b[i - k * d] -= lr * vel[i];
            }
        }
    }

    #[test]
    fn full_batch_matches_reference_descent() {
        let mut rng = stream(5);
        let (k, d, n) = (3, 4, 10);
        let x = random_points(n, d, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut clf = LinearClassifier::zeros(k, d);
        let mut opt = Sgd::new(0.05);
        let mut w = vec![vec![0.0; d]; k];
        let mut b = vec![0.0; k];
        let mut vel = vec![0.0; k * d + k];
        let xr = x.to_rows();
        for _ in 0..25 {
            train_epoch(&mut clf, &mut opt, &x, &y, n, &mut rng).unwrap();
            reference_gd(&mut w, &mut b, &mut vel, &xr, &y, 0.05);
            for c in 0..k {
                for j in 0..d {
                    assert!((clf.weights()[(c, j)] - w[c][j]).abs() < 1e-10);
                }
                assert!((clf.bias()[c] - b[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn divergence_restores_last_finite_state() {
        let x = Matrix::from_rows(&[[1e200], [-1e200]]).unwrap();
        let y = vec![0, 1];
        let mut clf = LinearClassifier::zeros(2, 1);
        let mut opt = Sgd::new(1e200);
        let mut rng = stream(6);
        let err = train_epoch(&mut clf, &mut opt, &x, &y, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(clf.is_finite());
    }

    fn binary_clf(w: f64) -> LinearClassifier {
        LinearClassifier::new(Matrix::from_rows(&[[-w / 2.0], [w / 2.0]]).unwrap(), vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn binary_rule() {
        // f(x) = σ(w x); with w x = ln 19, f = 0.95
        let clf = binary_clf(19f64.ln());
        let mut data = TrainingSet::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0], 2).unwrap();
        assert!((clf.positive_score(&[1.0]) - 0.95).abs() < 1e-12);
        assert_eq!(correct_labels(&clf, &mut data, 0.3), 1);
        assert_eq!(data.labels(), &[1]);
        assert_eq!(data.corrected_mask(), &[true]);
    }

    #[test]
    fn tau_half_never_corrects() {
        let clf = binary_clf(1e3);
        let x = Matrix::from_rows(&[[1.0], [-1.0], [5.0]]).unwrap();
        let mut data = TrainingSet::new(x, vec![0, 1, 0], 2).unwrap();
        assert_eq!(correct_labels(&clf, &mut data, 0.5), 0);
    }

    #[test]
    fn correction_is_idempotent() {
        let mut rng = stream(7);
        for k in [2, 4] {
            let clf = random_classifier(k, 3, &mut rng);
            let x = random_points(200, 3, &mut rng);
            let y: Vec<usize> = (0..200).map(|_| rng.random_range(0..k)).collect();
            let mut data = TrainingSet::new(x, y, k).unwrap();
            let first = correct_labels(&clf, &mut data, 0.1);
            assert!(first > 0);
            let snapshot = data.clone();
            assert_eq!(correct_labels(&clf, &mut data, 0.1), 0);
            assert_eq!(data, snapshot);
            assert!(data.labels().iter().all(|&l| l < k));
        }
    }

    #[test]
    fn multiclass_rule_uses_confidence_gap() {
        // logits (2, 0, 0): f = (0.787, 0.106, 0.106), gap 0.68
        let clf = LinearClassifier::new(Matrix::zeros(3, 1), vec![2.0, 0.0, 0.0]).unwrap();
        let mut data = TrainingSet::new(Matrix::zeros(2, 1), vec![1, 0], 3).unwrap();
        assert_eq!(correct_labels(&clf, &mut data, 0.7), 0);
        assert_eq!(correct_labels(&clf, &mut data, 0.6), 1);
        assert_eq!(data.labels(), &[0, 0]);
    }

    #[test]
    fn uniform_classifier_fixpoint_is_one_round() {
        let mut clf = LinearClassifier::zeros(3, 2);
        let mut data = TrainingSet::new(Matrix::zeros(5, 2), vec![0, 1, 2, 0, 1], 3).unwrap();
        let out = correction_fixpoint(&mut clf, &mut Sgd::new(0.01), &mut data, 0.1, 8, 10, &mut stream(8)).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.corrections, vec![0]);
        assert!(!out.cap_hit);
    }

    #[test]
    fn consistent_labels_fixpoint_is_one_round() {
        let mut clf = binary_clf(10.0);
        let x = Matrix::from_rows(&[[1.0], [2.0], [-1.0]]).unwrap();
        let mut data = TrainingSet::new(x, vec![1, 1, 0], 2).unwrap();
        let out = correction_fixpoint(&mut clf, &mut Sgd::new(0.01), &mut data, 0.3, 8, 10, &mut stream(9)).unwrap();
        assert_eq!(out.rounds, 1);
    }

    #[test]
    fn schedule() {
        let s = TauSchedule::default();
        assert_eq!(s.tau_of(6, 5), 0.3);
        assert!((s.tau_of(11, 5) - 0.05).abs() < 1e-15);
        assert_eq!(s.tau_of(30, 5), 0.05);
        let mut prev = f64::INFINITY;
        for t in 6..40 {
            let v = s.tau_of(t, 5);
            assert!(v <= prev);
            prev = v;
        }
        assert!(TauSchedule { tau0: 0.1, decay: 0.05, tau_min: 0.2 }.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"t_max": 3, "bogus": 1}"#).is_err());
    }
}
