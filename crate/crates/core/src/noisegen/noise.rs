use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{NoisyDataset, TrainingSet};
use super::oracle::{top_two, MixtureOracle};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Stream};

/// Instance-dependent noise function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PmdType {
    #[serde(rename = "I")]
    TypeI,
    #[serde(rename = "II")]
    TypeII,
    #[serde(rename = "III")]
    TypeIII,
    #[serde(rename = "none")]
    None,
}

impl PmdType {
    /// Unscaled flip probability as a function of the top-two posterior gap
    /// η_a(x) − η_b(x).
    pub fn rho(self, gap: f64) -> f64 {
        match self {
            PmdType::TypeI => -0.5 * gap * gap + 0.5,
            PmdType::TypeII => 1.0 - gap.powi(3),
            PmdType::TypeIII => 1.0 - (gap.powi(3) + gap * gap + gap) / 3.0,
            PmdType::None => 0.0,
        }
    }
}

impl std::fmt::Display for PmdType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PmdType::TypeI => "I",
            PmdType::TypeII => "II",
            PmdType::TypeIII => "III",
            PmdType::None => "none",
        };
        f.write_str(s)
    }
}

/// Bound constants of the polynomial-margin-diminishing definition. Carried
/// as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmdConstants {
    pub t0: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Symmetric,
    Asymmetric,
}

/// Shorthand for a class-dependent transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassNoise {
    pub kind: TransitionKind,
    pub epsilon: f64,
    /// Source → target pairs for the asymmetric kind.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub pmd_type: PmdType,
    #[serde(default)]
    pub target_level: f64,
    /// Multiplier on ρ; `None` until resolved against a sample.
    #[serde(default)]
    pub scale_factor: Option<f64>,
    #[serde(default)]
    pub class_noise: Option<ClassNoise>,
    /// Explicit row-stochastic matrix; takes precedence over `class_noise`.
    #[serde(default)]
    pub class_matrix: Option<Matrix>,
    #[serde(default)]
    pub pmd_constants: Option<PmdConstants>,
    #[serde(default)]
    pub class_sampling: ClassSampling,
}

/// How the class-dependent transition is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSampling {
    /// Within each source class, exact largest-remainder counts per target,
    /// assigned by a random permutation. Every point still lands on `j`
    /// with probability T_ij; only the realized counts are pinned.
    #[default]
    Stratified,
    /// One categorical draw per point.
    Independent,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            pmd_type: PmdType::None,
            target_level: 0.0,
            scale_factor: None,
            class_noise: None,
            class_matrix: None,
            pmd_constants: None,
            class_sampling: ClassSampling::default(),
        }
    }

    pub fn pmd(pmd_type: PmdType, target_level: f64) -> Self {
        Self {
            pmd_type,
            target_level,
            ..Self::clean()
        }
    }

    pub fn with_class_noise(mut self, class_noise: ClassNoise) -> Self {
        self.class_noise = Some(class_noise);
        self
    }

    /// Transition matrix for `k` classes, if any class-dependent noise is set.
    pub fn transition_matrix(&self, k: usize) -> Result<Option<Matrix>> {
        if let Some(m) = &self.class_matrix {
            validate_row_stochastic(m, k)?;
            return Ok(Some(m.clone()));
        }
        match &self.class_noise {
            Some(cn) => class_transition_matrix(cn.kind, k, cn.epsilon, &cn.pairs).map(Some),
            None => Ok(None),
        }
    }

    /// Short label used in aggregate tables, e.g. `I-0.35+sym-0.2`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.pmd_type != PmdType::None {
            parts.push(format!("{}-{}", self.pmd_type, self.target_level));
        }
        if let Some(cn) = &self.class_noise {
            let kind = match cn.kind {
                TransitionKind::Symmetric => "sym",
                TransitionKind::Asymmetric => "asym",
            };
            parts.push(format!("{kind}-{}", cn.epsilon));
        } else if self.class_matrix.is_some() {
            parts.push("matrix".to_string());
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

fn validate_row_stochastic(m: &Matrix, k: usize) -> Result<()> {
    if m.rows() != k || m.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: m.rows(),
        });
    }
    for (i, row) in m.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 || row.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(format!("transition row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Clamped PMD flip probability for a point with posterior `posterior` and
/// current label `label`. Only labels equal to the most confident class can
/// flip; returns the probability and the target (second most confident) class.
pub fn flip_probability(posterior: &[f64], label: usize, pmd_type: PmdType, scale: f64) -> (f64, usize) {
    let (a, b) = top_two(posterior);
    if label != a || pmd_type == PmdType::None {
        return (0.0, b);
    }
    let gap = posterior[a] - posterior[b];
    ((scale * pmd_type.rho(gap)).clamp(0.0, 1.0), b)
}

/// Applies the PMD flip rule to one labelled point.
pub fn pmd_flip(oracle: &MixtureOracle, x: &[f64], label: usize, spec: &NoiseSpec, rng: &mut Stream) -> Result<usize> {
    if oracle.num_classes() < 2 {
        return Err(Error::invalid("PMD noise needs k ≥ 2"));
    }
    if spec.pmd_type == PmdType::None {
        return Err(Error::invalid("pmd_flip called with pmd_type none"));
    }
    let scale = spec.scale_factor.unwrap_or(1.0);
    let posterior = oracle.bayes_posterior(x)?;
    let (p, target) = flip_probability(&posterior, label, spec.pmd_type, scale);
    let u: f64 = rng.random();
    Ok(if u < p { target } else { label })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleResolution {
    pub scale_factor: f64,
    /// Monte-Carlo mean flip probability over the sample at `scale_factor`.
    pub achieved_level: f64,
    pub max_achievable: f64,
}

/// Tolerance on |achieved − target| for [`resolve_scale`].
pub const SCALE_TOLERANCE: f64 = 0.005;

/// Finds the multiplier on ρ whose mean clamped flip probability over the
/// sample hits `target_level`, by bisection.
pub fn resolve_scale(
    oracle: &MixtureOracle,
    features: &Matrix,
    labels: &[usize],
    pmd_type: PmdType,
    target_level: f64,
) -> Result<ScaleResolution> {
    if !(0.0..=0.95).contains(&target_level) {
        return Err(Error::invalid(format!("target level {target_level} outside [0, 0.95]")));
    }
    if features.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: features.rows(),
            got: labels.len(),
        });
    }
    if features.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let n = labels.len() as f64;
    let mut rhos = Vec::with_capacity(labels.len());
    for (x, &y) in features.row_iter().zip(labels) {
        let posterior = oracle.bayes_posterior(x)?;
        let (a, b) = top_two(&posterior);
        if y == a && pmd_type != PmdType::None {
            rhos.push(pmd_type.rho(posterior[a] - posterior[b]));
        }
    }
    let level = |s: f64| rhos.iter().map(|r| (s * r).clamp(0.0, 1.0)).sum::<f64>() / n;
    let max_achievable = rhos.iter().filter(|r| **r > 0.0).count() as f64 / n;

    if target_level == 0.0 {
        return Ok(ScaleResolution {
            scale_factor: 0.0,
            achieved_level: 0.0,
            max_achievable,
        });
    }
    let unreachable = || Error::UnreachableTarget {
        target: target_level,
        max_achievable,
    };
    if target_level > max_achievable {
        return Err(unreachable());
    }

    let mut hi = 1.0;
    while level(hi) < target_level {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(unreachable());
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if level(mid) < target_level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let scale_factor = 0.5 * (lo + hi);
    let achieved_level = level(scale_factor);
    if (achieved_level - target_level).abs() > SCALE_TOLERANCE {
        return Err(unreachable());
    }
    Ok(ScaleResolution {
        scale_factor,
        achieved_level,
        max_achievable,
    })
}

/// Class-dependent transition matrix T with T_ij = P(ỹ = j | y = i).
pub fn class_transition_matrix(kind: TransitionKind, k: usize, epsilon: f64, pairs: &[(usize, usize)]) -> Result<Matrix> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1)")));
    }
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    let mut t = Matrix::identity(k);
    match kind {
        TransitionKind::Symmetric => {
            if k < 2 {
                return Ok(t);
            }
            let off = epsilon / (k - 1) as f64;
            for i in 0..k {
                for j in 0..k {
                    t[(i, j)] = if i == j { 1.0 - epsilon } else { off };
                }
            }
        }
        TransitionKind::Asymmetric => {
            if pairs.is_empty() {
                return Err(Error::invalid("asymmetric noise needs a pair map"));
            }
            let mut seen = vec![false; k];
            for &(src, dst) in pairs {
                if src >= k || dst >= k {
                    return Err(Error::invalid(format!("pair ({src}, {dst}) out of range for k = {k}")));
                }
                if src == dst {
                    return Err(Error::invalid(format!("pair map sends class {src} to itself")));
                }
                if seen[src] {
                    return Err(Error::invalid(format!("class {src} mapped twice")));
                }
                seen[src] = true;
                t[(src, src)] = 1.0 - epsilon;
                t[(src, dst)] = epsilon;
            }
        }
    }
    Ok(t)
}

fn sample_row(row: &[f64], rng: &mut Stream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left the cumulative sum a hair under 1
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Splits `m` over probabilities `p` by largest remainder; ties go to the
/// lower index.
fn allocate(p: &[f64], m: usize) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|v| v * m as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &j in order.iter().take(m.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

fn stratified_transition(labels: &mut [usize], t: &Matrix, rng: &mut Stream) {
    let k = t.rows();
    let snapshot = labels.to_vec();
    for i in 0..k {
        let members: Vec<usize> = (0..snapshot.len()).filter(|&n| snapshot[n] == i).collect();
        let mut targets: Vec<usize> = allocate(t.row(i), members.len())
            .into_iter()
            .enumerate()
            .flat_map(|(j, c)| std::iter::repeat_n(j, c))
            .collect();
        targets.shuffle(rng);
        for (&n, &j) in members.iter().zip(&targets) {
            labels[n] = j;
        }
    }
}

/// Corrupts clean labels: PMD flip first, then the class-dependent
/// transition applied to the PMD output. Features and clean labels are
/// carried through untouched.
pub fn corrupt(
    features: Matrix,
    clean_labels: Vec<usize>,
    oracle: &MixtureOracle,
    spec: &NoiseSpec,
    rng: &mut Stream,
) -> Result<NoisyDataset> {
    if features.rows() != clean_labels.len() {
        return Err(Error::LengthMismatch {
            what: "clean labels",
            expected: features.rows(),
            got: clean_labels.len(),
        });
    }
    let k = oracle.num_classes();
    if spec.pmd_type != PmdType::None && spec.scale_factor.is_none() {
        return Err(Error::invalid("noise spec has an unresolved scale factor"));
    }
    let transition = spec.transition_matrix(k)?;
    let mut noisy = Vec::with_capacity(clean_labels.len());
    for (x, &y) in features.row_iter().zip(&clean_labels) {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for k = {k}")));
        }
        let mut label = y;
        if spec.pmd_type != PmdType::None {
            label = pmd_flip(oracle, x, label, spec, rng)?;
        }
        if let (Some(t), ClassSampling::Independent) = (&transition, spec.class_sampling) {
            label = sample_row(t.row(label), rng);
        }
        noisy.push(label);
    }
    if let (Some(t), ClassSampling::Stratified) = (&transition, spec.class_sampling) {
        stratified_transition(&mut noisy, t, rng);
    }
    let flips = noisy.iter().zip(&clean_labels).filter(|(a, b)| a != b).count();
    let flip_rate = if noisy.is_empty() {
        0.0
    } else {
        flips as f64 / noisy.len() as f64
    };
    Ok(NoisyDataset {
        training: TrainingSet::new(features, noisy, k)?,
        clean_labels,
        flip_rate,
    })
}
