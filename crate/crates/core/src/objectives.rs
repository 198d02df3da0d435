//! Adversarial objectives as `kl2` term lists, plus the linear-mapping
//! baseline loss and linear-kernel MMD.
//!
//! Every sum over a mini-batch side is divided by that side's row count, a
//! constant rescaling that keeps learning rates comparable across batch sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    augment_batch, loss_and_grads, Batch, Head, LinearSoftmaxModel, LinearTransform,
    LossEvaluation, LossTerm, ModelSet, Prediction, Reference, Side, TransformGrad,
};
use crate::numerics::{Class, DenseMatrix, ProbPair};

/// Methods known to the library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PAN")]
    Pan,
    #[serde(rename = "PADA")]
    Pada,
    #[serde(rename = "PADA_S")]
    PadaS,
    #[serde(rename = "PADA_F")]
    PadaF,
    #[serde(rename = "DSFT_P_linear")]
    DsftLinear,
    #[serde(rename = "DIST")]
    Dist,
    #[serde(rename = "COM_P")]
    ComP,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pan => "PAN",
            Method::Pada => "PADA",
            Method::PadaS => "PADA_S",
            Method::PadaF => "PADA_F",
            Method::DsftLinear => "DSFT_P_linear",
            Method::Dist => "DIST",
            Method::ComP => "COM_P",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [
            Method::Pan,
            Method::Pada,
            Method::PadaS,
            Method::PadaF,
            Method::DsftLinear,
            Method::Dist,
            Method::ComP,
        ]
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown method `{name}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of an objective. `eta` only matters for PADA_S, `gamma_mmd` only for the mapping baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub method: Method,
    pub lambda: f64,
    pub eta: f64,
    pub gamma_mmd: f64,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("gamma_mmd", self.gamma_mmd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameter groups updated by the trainers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Player {
    Classifier,
    Discriminator,
    DomainDiscriminator,
    Transformer,
}

/// A term list tagged with which players ascend and which descend on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub terms: Vec<LossTerm>,
    pub maximizers: Vec<Player>,
    pub minimizers: Vec<Player>,
}

impl Objective {
    pub fn evaluate(&self, models: &ModelSet<'_>, batch: &Batch<'_>) -> Result<LossEvaluation> {
        loss_and_grads(models, &self.terms, batch)
    }

    /// The sub-objective whose terms depend on `head`.
    pub fn involving(&self, head: Head) -> Objective {
        Objective {
            terms: self.terms.iter().filter(|t| t.involves(head)).cloned().collect(),
            maximizers: self.maximizers.clone(),
            minimizers: self.minimizers.clone(),
        }
    }

    /// `+1` for players ascending on the objective, `-1` for those descending.
    pub fn direction(&self, player: Player) -> Option<f64> {
        if self.maximizers.contains(&player) {
            Some(1.0)
        } else if self.minimizers.contains(&player) {
            Some(-1.0)
        } else {
            None
        }
    }
}

fn term(weight: f64, side: Side, reference: Reference, head: Head, swapped: bool) -> LossTerm {
    LossTerm {
        weight,
        side,
        reference,
        prediction: Prediction { head, swapped },
    }
}

fn require_head<'a>(
    models: &ModelSet<'a>,
    head: Head,
    name: &str,
) -> Result<&'a LinearSoftmaxModel> {
    models
        .head(head)
        .ok_or_else(|| Error::Config(format!("{name} is not bound")))
}

/// Feature width the heads see on the unlabeled side.
fn unlabeled_width(models: &ModelSet<'_>, batch: &Batch<'_>) -> usize {
    match models.transform {
        Some(b) => b.common_dim + b.transform.output_dim(),
        None => batch.unlabeled.cols(),
    }
}

fn check_head_dims(
    model: &LinearSoftmaxModel,
    name: &str,
    positive: usize,
    unlabeled: usize,
) -> Result<()> {
    if model.input_dim() != positive || model.input_dim() != unlabeled {
        return Err(Error::Config(format!(
            "{name} expects {} features; positive side has {positive}, unlabeled side {unlabeled}",
            model.input_dim()
        )));
    }
    Ok(())
}

/// The four adversarial PU terms:
/// `-KL(P1||D(x_p)) - KL(P0||D(x_u)) + lambda [KL(D(x_u)||C(x_u)) - KL(D(x_u)||swap C(x_u))]`.
/// The discriminator maximizes, the classifier minimizes.
pub fn pan_terms(models: &ModelSet<'_>, batch: &Batch<'_>, lambda: f64) -> Result<Objective> {
    let c = require_head(models, Head::Classifier, "classifier")?;
    let d = require_head(models, Head::Discriminator, "discriminator")?;
    let pos = batch.positive.cols();
    let unl = unlabeled_width(models, batch);
    check_head_dims(d, "discriminator", pos, unl)?;
    if c.input_dim() != unl {
        return Err(Error::Config(format!(
            "classifier expects {} features, unlabeled side has {unl}",
            c.input_dim()
        )));
    }
    Ok(adversarial_pu_objective(lambda, models.transform.is_some()))
}

fn adversarial_pu_objective(lambda: f64, with_transform: bool) -> Objective {
    let d = Head::Discriminator;
    let c = Head::Classifier;
    let mut minimizers = vec![Player::Classifier];
    if with_transform {
        minimizers.push(Player::Transformer);
    }
    Objective {
        terms: vec![
            term(-1.0, Side::Positive, Reference::OneHot(Class::Positive), d, false),
            term(-1.0, Side::Unlabeled, Reference::OneHot(Class::Negative), d, false),
            term(lambda, Side::Unlabeled, Reference::Head(d), c, false),
            term(-lambda, Side::Unlabeled, Reference::Head(d), c, true),
        ],
        maximizers: vec![Player::Discriminator],
        minimizers,
    }
}

fn check_schema(models: &ModelSet<'_>, batch: &Batch<'_>) -> Result<()> {
    let binding = models
        .transform
        .ok_or_else(|| Error::Config("feature transformer is not bound".into()))?;
    let f = binding.transform;
    let c = binding.common_dim;
    if f.input_dim() != batch.unlabeled.cols() {
        return Err(Error::Config(format!(
            "transformer expects {} target features, batch has {}",
            f.input_dim(),
            batch.unlabeled.cols()
        )));
    }
    if c > f.input_dim() || c + f.output_dim() != batch.positive.cols() {
        return Err(Error::Config(format!(
            "source batch has {} features, expected common {c} + source-specific {}",
            batch.positive.cols(),
            f.output_dim()
        )));
    }
    Ok(())
}

/// Joint alignment and PU objective: the PU terms with target rows replaced by `[t_c; F(x_t)]`.
/// The transformer joins the classifier as a minimizer.
pub fn pada_terms(models: &ModelSet<'_>, batch: &Batch<'_>, lambda: f64) -> Result<Objective> {
    check_schema(models, batch)?;
    pan_terms(models, batch, lambda)
}

/// Frozen base classifier producing soft labels for target rows.
#[derive(Clone, Debug, PartialEq)]
pub enum SoftLabeler {
    /// Reads only the first `common_dim` columns of a target row.
    Common {
        classifier: LinearSoftmaxModel,
        common_dim: usize,
    },
    /// Reads `[t_c; F(x_t)]` with its own frozen transformer.
    Adapted {
        classifier: LinearSoftmaxModel,
        transform: LinearTransform,
        common_dim: usize,
    },
    /// Reads the full raw target row.
    Full { classifier: LinearSoftmaxModel },
}

impl SoftLabeler {
    pub fn soft_labels(&self, target: &DenseMatrix) -> Result<Vec<ProbPair>> {
        match self {
            SoftLabeler::Common {
                classifier,
                common_dim,
            } => {
                if *common_dim > target.cols() {
                    return Err(Error::Config("common dimension exceeds target width".into()));
                }
                classifier.classify_batch(&target.select_columns(0, *common_dim))
            }
            SoftLabeler::Adapted {
                classifier,
                transform,
                common_dim,
            } => classifier.classify_batch(&augment_batch(transform, *common_dim, target)?),
            SoftLabeler::Full { classifier } => classifier.classify_batch(target),
        }
    }
}

/// PADA terms plus the soft-label pair
/// `eta [KL(C0(.)||C(x_hat)) - KL(C0(.)||swap C(x_hat))]`.
/// `C0` is frozen: its outputs enter as fixed per-row distributions.
pub fn pada_s_terms(
    models: &ModelSet<'_>,
    batch: &Batch<'_>,
    teacher: &SoftLabeler,
    lambda: f64,
    eta: f64,
) -> Result<Objective> {
    let mut objective = pada_terms(models, batch, lambda)?;
    let labels = teacher.soft_labels(batch.unlabeled)?;
    objective.terms.push(term(
        eta,
        Side::Unlabeled,
        Reference::Soft(labels.clone()),
        Head::Classifier,
        false,
    ));
    objective.terms.push(term(
        -eta,
        Side::Unlabeled,
        Reference::Soft(labels),
        Head::Classifier,
        true,
    ));
    Ok(objective)
}

/// Domain-adversarial pair `-KL(P1||D_f(x_s)) - KL(P0||D_f(x_hat_t))`.
/// The domain discriminator maximizes; the transformer (if bound) minimizes.
pub fn domain_adv_terms(models: &ModelSet<'_>, batch: &Batch<'_>) -> Result<Objective> {
    let df = require_head(models, Head::DomainDiscriminator, "domain discriminator")?;
    if models.transform.is_some() {
        check_schema(models, batch)?;
    }
    check_head_dims(
        df,
        "domain discriminator",
        batch.positive.cols(),
        unlabeled_width(models, batch),
    )?;
    let h = Head::DomainDiscriminator;
    Ok(Objective {
        terms: vec![
            term(-1.0, Side::Positive, Reference::OneHot(Class::Positive), h, false),
            term(-1.0, Side::Unlabeled, Reference::OneHot(Class::Negative), h, false),
        ],
        maximizers: vec![Player::DomainDiscriminator],
        minimizers: if models.transform.is_some() {
            vec![Player::Transformer]
        } else {
            vec![]
        },
    })
}

/// Distillation loss `KL(C0(.)||C(x_t))` on raw target rows; the classifier minimizes.
pub fn distillation_terms(
    models: &ModelSet<'_>,
    batch: &Batch<'_>,
    teacher: &SoftLabeler,
) -> Result<Objective> {
    let c = require_head(models, Head::Classifier, "classifier")?;
    if c.input_dim() != batch.unlabeled.cols() {
        return Err(Error::Config(format!(
            "student expects {} features, target batch has {}",
            c.input_dim(),
            batch.unlabeled.cols()
        )));
    }
    let labels = teacher.soft_labels(batch.unlabeled)?;
    Ok(Objective {
        terms: vec![term(
            1.0,
            Side::Unlabeled,
            Reference::Soft(labels),
            Head::Classifier,
            false,
        )],
        maximizers: vec![],
        minimizers: vec![Player::Classifier],
    })
}

/// Squared linear-kernel MMD: `||mean_row(a) - mean_row(b)||^2`.
pub fn mmd2(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("mmd2 of an empty matrix".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::InvalidInput(format!(
            "mmd2 column mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    Ok(a.column_means()
        .iter()
        .zip(b.column_means())
        .map(|(x, y)| (x - y).powi(2))
        .sum())
}

/// Value breakdown and gradients of the linear-mapping baseline loss.
#[derive(Clone, Debug)]
pub struct DsftEvaluation {
    pub value: f64,
    /// `||Psi_t(T_c) - T_t||^2 / n_t`
    pub target_reconstruction: f64,
    /// `||Psi_s(S_c) - S_s||^2 / n_s`
    pub source_reconstruction: f64,
    /// Unweighted `mmd2` of the augmented matrices.
    pub mmd: f64,
    pub grad_source_map: TransformGrad,
    pub grad_target_map: TransformGrad,
}

/// Source and target blocks consumed by [`dsft_loss`].
#[derive(Clone, Copy, Debug)]
pub struct DsftBlocks<'a> {
    pub source_common: &'a DenseMatrix,
    pub source_specific: &'a DenseMatrix,
    pub target_common: &'a DenseMatrix,
    pub target_specific: &'a DenseMatrix,
}

/// Accumulates `||X W + b - Y||^2 / n` and its gradient into `grad` (scaled by 2/n).
fn reconstruction(map: &LinearTransform, x: &DenseMatrix, y: &DenseMatrix, grad: &mut TransformGrad) -> f64 {
    let n = x.rows().max(1) as f64;
    let s = map.output_dim();
    let mut pred = vec![0.0; s];
    let mut loss = 0.0;
    for (xi, yi) in x.row_iter().zip(y.row_iter()) {
        map.apply_into(xi, &mut pred);
        for j in 0..s {
            let r = pred[j] - yi[j];
            loss += r * r;
            let g = 2.0 * r / n;
            grad.bias[j] += g;
            for (k, &xk) in xi.iter().enumerate() {
                grad.weights[k * s + j] += xk * g;
            }
        }
    }
    loss / n
}

/// `||Psi_t(T_c)-T_t||^2/n_t + ||Psi_s(S_c)-S_s||^2/n_s + gamma * mmd2(X_hat_s, X_hat_t)`
/// with `X_hat_s = [S_c; S_s; Psi_t(S_c)]` and `X_hat_t = [T_c; Psi_s(T_c); T_t]`.
pub fn dsft_loss(
    blocks: DsftBlocks<'_>,
    source_map: &LinearTransform,
    target_map: &LinearTransform,
    gamma_mmd: f64,
) -> Result<DsftEvaluation> {
    let DsftBlocks {
        source_common: sc,
        source_specific: ss,
        target_common: tc,
        target_specific: tt,
    } = blocks;
    let c = sc.cols();
    if tc.cols() != c || sc.rows() != ss.rows() || tc.rows() != tt.rows() {
        return Err(Error::Config("inconsistent block shapes".into()));
    }
    if source_map.input_dim() != c || source_map.output_dim() != ss.cols() {
        return Err(Error::Config(format!(
            "source map must be {c} -> {}, got {} -> {}",
            ss.cols(),
            source_map.input_dim(),
            source_map.output_dim()
        )));
    }
    if target_map.input_dim() != c || target_map.output_dim() != tt.cols() {
        return Err(Error::Config(format!(
            "target map must be {c} -> {}, got {} -> {}",
            tt.cols(),
            target_map.input_dim(),
            target_map.output_dim()
        )));
    }
    if sc.is_empty() || tc.is_empty() {
        return Err(Error::InvalidInput("empty domain".into()));
    }
    let mut g_s = TransformGrad {
        weights: vec![0.0; c * ss.cols()],
        bias: vec![0.0; ss.cols()],
    };
    let mut g_t = TransformGrad {
        weights: vec![0.0; c * tt.cols()],
        bias: vec![0.0; tt.cols()],
    };
    let target_reconstruction = reconstruction(target_map, tc, tt, &mut g_t);
    let source_reconstruction = reconstruction(source_map, sc, ss, &mut g_s);

    let mean_sc = sc.column_means();
    let mean_tc = tc.column_means();
    let mean_ss = ss.column_means();
    let mean_tt = tt.column_means();
    let mapped_tc = source_map.transform(&mean_tc)?;
    let mapped_sc = target_map.transform(&mean_sc)?;
    let common_gap: f64 = mean_sc.iter().zip(&mean_tc).map(|(a, b)| (a - b).powi(2)).sum();
    // source-specific block: mean(S_s) - mean(Psi_s(T_c))
    let delta_s: Vec<f64> = mean_ss.iter().zip(&mapped_tc).map(|(a, b)| a - b).collect();
    // target-specific block: mean(Psi_t(S_c)) - mean(T_t)
    let delta_t: Vec<f64> = mapped_sc.iter().zip(&mean_tt).map(|(a, b)| a - b).collect();
    let mmd = common_gap
        + delta_s.iter().map(|d| d * d).sum::<f64>()
        + delta_t.iter().map(|d| d * d).sum::<f64>();

    if gamma_mmd != 0.0 {
        let s = ss.cols();
        for (j, d) in delta_s.iter().enumerate() {
            g_s.bias[j] -= 2.0 * gamma_mmd * d;
            for (k, m) in mean_tc.iter().enumerate() {
                g_s.weights[k * s + j] -= 2.0 * gamma_mmd * m * d;
            }
        }
        let t = tt.cols();
        for (j, d) in delta_t.iter().enumerate() {
            g_t.bias[j] += 2.0 * gamma_mmd * d;
            for (k, m) in mean_sc.iter().enumerate() {
                g_t.weights[k * t + j] += 2.0 * gamma_mmd * m * d;
            }
        }
    }

    Ok(DsftEvaluation {
        value: target_reconstruction + source_reconstruction + gamma_mmd * mmd,
        target_reconstruction,
        source_reconstruction,
        mmd,
        grad_source_map: g_s,
        grad_target_map: g_t,
    })
}

/// Augmented matrices `([S_c; S_s; Psi_t(S_c)], [T_c; Psi_s(T_c); T_t])`.
pub fn dsft_augment(
    blocks: DsftBlocks<'_>,
    source_map: &LinearTransform,
    target_map: &LinearTransform,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let source = blocks
        .source_common
        .hstack(blocks.source_specific)?
        .hstack(&target_map.transform_batch(blocks.source_common)?)?;
    let target = blocks
        .target_common
        .hstack(&source_map.transform_batch(blocks.target_common)?)?
        .hstack(blocks.target_specific)?;
    Ok((source, target))
}
