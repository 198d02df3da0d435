//! Training loops for every method, each returning frozen models plus a
//! per-step loss trace.
//!
//! All adversarial loops use plain SGD with one gradient step per player per
//! iteration and fresh mini-batches drawn uniformly with replacement.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    augment_batch, Batch, Head, LinearSoftmaxModel, LinearTransform, ModelSet, TransformBinding,
};
use crate::numerics::{Class, DenseMatrix, ProbPair, RngSeed, SeededRng};
use crate::objectives::{
    distillation_terms, domain_adv_terms, dsft_augment, dsft_loss, pada_s_terms, pada_terms,
    pan_terms, DsftBlocks, Method, Objective, Player, SoftLabeler,
};

/// Learning rates searched by default.
pub const LEARNING_RATE_GRID: [f64; 7] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];
/// Values of `lambda` and `eta` searched by default.
pub const WEIGHT_GRID: [f64; 9] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0];

/// Hyperparameters shared by all trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub eta: f64,
    /// SGD iterations per training run (also the DSFT gradient-descent budget).
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_soft_rounds: usize,
    pub val_patience: usize,
    pub gamma_mmd: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            lambda: 1.0,
            eta: 1.0,
            steps: 5000,
            batch_size: 128,
            seed: 0,
            max_soft_rounds: 5,
            val_patience: 1,
            gamma_mmd: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("training.{field} {why}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        for (name, v) in [("lambda", self.lambda), ("eta", self.eta), ("gamma_mmd", self.gamma_mmd)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be nonnegative");
            }
        }
        if self.steps == 0 {
            return bad("steps", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.max_soft_rounds == 0 {
            return bad("max_soft_rounds", "must be positive");
        }
        Ok(())
    }

    fn root(&self) -> RngSeed {
        RngSeed(self.seed)
    }
}

/// Named per-step loss values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossTrace {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    /// Comma-separated text with a `step` column; floats print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// How a trained classifier consumes raw target rows `[t_c; t_t]`.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureMap {
    /// Rows are fed unchanged.
    Identity,
    /// Only the first `common_dim` columns.
    Common { common_dim: usize },
    /// `[t_c; F(x_t)]`.
    Adapted {
        transform: LinearTransform,
        common_dim: usize,
    },
    /// `[t_c; Psi_s(t_c); t_t]`.
    Dsft {
        source_map: LinearTransform,
        common_dim: usize,
    },
}

impl FeatureMap {
    pub fn apply(&self, target: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            FeatureMap::Identity => Ok(target.clone()),
            FeatureMap::Common { common_dim } => {
                if *common_dim > target.cols() {
                    return Err(Error::Config("common dimension exceeds target width".into()));
                }
                Ok(target.select_columns(0, *common_dim))
            }
            FeatureMap::Adapted {
                transform,
                common_dim,
            } => augment_batch(transform, *common_dim, target),
            FeatureMap::Dsft {
                source_map,
                common_dim,
            } => {
                let tc = target.select_columns(0, *common_dim);
                tc.hstack(&source_map.transform_batch(&tc)?)?
                    .hstack(&target.select_columns(*common_dim, target.cols()))
            }
        }
    }
}

/// Result of one DSFT fit.
#[derive(Clone, Debug)]
pub struct DsftFit {
    pub source_map: LinearTransform,
    pub target_map: LinearTransform,
    pub source_augmented: DenseMatrix,
    pub target_augmented: DenseMatrix,
    /// Loss after each accepted descent step.
    pub losses: Vec<f64>,
}

/// Frozen output of a trainer.
#[derive(Clone, Debug)]
pub struct TrainedArtifacts {
    pub method: Method,
    pub classifier: LinearSoftmaxModel,
    pub discriminator: Option<LinearSoftmaxModel>,
    pub domain_discriminator: Option<LinearSoftmaxModel>,
    pub transform: Option<LinearTransform>,
    pub feature_map: FeatureMap,
    /// Teacher used in each soft-labeling round, in round order.
    pub base_classifiers: Vec<SoftLabeler>,
    pub trace: LossTrace,
    /// Validation accuracy per round (round 0 is the common-feature base classifier).
    pub round_validation: Vec<f64>,
    /// Index into `round_validation` of the returned classifier.
    pub selected_round: usize,
    pub dsft: Option<DsftFit>,
}

impl TrainedArtifacts {
    /// Class-probability pairs for raw target rows.
    pub fn predict(&self, target: &DenseMatrix) -> Result<Vec<ProbPair>> {
        self.classifier.classify_batch(&self.feature_map.apply(target)?)
    }

    /// Every model parameter, in a fixed order.
    pub fn all_params(&self) -> Vec<f64> {
        let mut out = self.classifier.params();
        for m in [&self.discriminator, &self.domain_discriminator].into_iter().flatten() {
            out.extend(m.params());
        }
        if let Some(f) = &self.transform {
            out.extend(f.params());
        }
        out
    }
}

/// Source rows `[S_c; S_s]`, target rows `[T_c; T_t]`, and the common width `c`.
#[derive(Clone, Copy, Debug)]
pub struct DomainPair<'a> {
    pub source: &'a DenseMatrix,
    pub target: &'a DenseMatrix,
    pub common_dim: usize,
}

impl DomainPair<'_> {
    fn source_specific_dim(&self) -> usize {
        self.source.cols() - self.common_dim
    }

    fn check(&self) -> Result<()> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(Error::InvalidInput("source and target need at least one row".into()));
        }
        if self.common_dim >= self.source.cols() || self.common_dim >= self.target.cols() {
            return Err(Error::Config(format!(
                "common dimension {} leaves no domain-specific columns (source {}, target {})",
                self.common_dim,
                self.source.cols(),
                self.target.cols()
            )));
        }
        Ok(())
    }

    fn common(&self) -> (DenseMatrix, DenseMatrix) {
        (
            self.source.select_columns(0, self.common_dim),
            self.target.select_columns(0, self.common_dim),
        )
    }
}

/// Labeled target rows used only for model selection.
#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub features: &'a DenseMatrix,
    pub labels: &'a [Class],
}

// RNG sub-streams. Fixed so traces only depend on the seed.
const STREAM_CLASSIFIER: u64 = 1;
const STREAM_DISCRIMINATOR: u64 = 2;
const STREAM_TRANSFORM: u64 = 3;
const STREAM_DOMAIN_DISC: u64 = 4;
const STREAM_BATCHES: u64 = 5;
const STREAM_ROUNDS: u64 = 6;

fn sample(rng: &mut SeededRng, x: &DenseMatrix, m: usize) -> DenseMatrix {
    x.select_rows(&rng.sample_with_replacement(x.rows(), m))
}

fn apply_step(objective: &Objective, player: Player, models: &mut Players, grads: &crate::models::GradientBundle, lr: f64) -> Result<()> {
    let direction = objective
        .direction(player)
        .ok_or_else(|| Error::Config(format!("{player:?} does not play this objective")))?;
    let scale = direction * lr;
    let missing = || Error::Config(format!("no gradient for {player:?}"));
    match player {
        Player::Classifier => models.classifier.step(grads.classifier.as_ref().ok_or_else(missing)?, scale),
        Player::Discriminator => models
            .discriminator
            .as_mut()
            .ok_or_else(missing)?
            .step(grads.discriminator.as_ref().ok_or_else(missing)?, scale),
        Player::DomainDiscriminator => models
            .domain_discriminator
            .as_mut()
            .ok_or_else(missing)?
            .step(grads.domain_discriminator.as_ref().ok_or_else(missing)?, scale),
        Player::Transformer => models
            .transform
            .as_mut()
            .ok_or_else(missing)?
            .step(grads.transform.as_ref().ok_or_else(missing)?, scale),
    }
}

/// Mutable models of one run.
#[derive(Clone, Debug)]
struct Players {
    classifier: LinearSoftmaxModel,
    discriminator: Option<LinearSoftmaxModel>,
    domain_discriminator: Option<LinearSoftmaxModel>,
    transform: Option<LinearTransform>,
    common_dim: usize,
}

impl Players {
    fn view(&self, with_transform: bool) -> ModelSet<'_> {
        ModelSet {
            classifier: Some(&self.classifier),
            discriminator: self.discriminator.as_ref(),
            domain_discriminator: self.domain_discriminator.as_ref(),
            transform: if with_transform {
                self.transform.as_ref().map(|transform| TransformBinding {
                    transform,
                    common_dim: self.common_dim,
                })
            } else {
                None
            },
        }
    }
}

const PU_COLUMNS: [&str; 5] = [
    "value",
    "disc_positive",
    "disc_unlabeled",
    "classifier_pair",
    "classifier_swap",
];

fn trace_row(eval: &crate::models::LossEvaluation) -> Vec<f64> {
    let mut row = vec![eval.value];
    row.extend_from_slice(&eval.term_values);
    row
}

fn pu_loop(
    positive: &DenseMatrix,
    unlabeled: &DenseMatrix,
    config: &TrainConfig,
    classifier: Option<LinearSoftmaxModel>,
) -> Result<(Players, LossTrace)> {
    if positive.is_empty() || unlabeled.is_empty() {
        return Err(Error::InvalidInput("positive and unlabeled sets must be non-empty".into()));
    }
    if positive.cols() != unlabeled.cols() {
        return Err(Error::Config(format!(
            "positive rows have {} features, unlabeled rows {}",
            positive.cols(),
            unlabeled.cols()
        )));
    }
    config.validate()?;
    let root = config.root();
    let d = positive.cols();
    let mut players = Players {
        classifier: classifier
            .unwrap_or_else(|| LinearSoftmaxModel::init(d, &mut root.derive(STREAM_CLASSIFIER).rng())),
        discriminator: Some(LinearSoftmaxModel::init(d, &mut root.derive(STREAM_DISCRIMINATOR).rng())),
        domain_discriminator: None,
        transform: None,
        common_dim: d,
    };
    let mut rng = root.derive(STREAM_BATCHES).rng();
    let m = config.batch_size;
    let mut trace = LossTrace::new(&PU_COLUMNS);
    let empty = DenseMatrix::zeros(0, d);
    for _ in 0..config.steps {
        let xp = sample(&mut rng, positive, m);
        let xu = sample(&mut rng, unlabeled, m);
        let batch = Batch {
            positive: &xp,
            unlabeled: &xu,
        };
        let objective = pan_terms(&players.view(false), &batch, config.lambda)?;
        let eval = objective.evaluate(&players.view(false), &batch)?;
        trace.rows.push(trace_row(&eval));
        apply_step(&objective, Player::Discriminator, &mut players, &eval.grads, config.learning_rate)?;

        let xu = sample(&mut rng, unlabeled, m);
        let batch = Batch {
            positive: &empty,
            unlabeled: &xu,
        };
        let objective = pan_terms(&players.view(false), &batch, config.lambda)?.involving(Head::Classifier);
        let eval = objective.evaluate(&players.view(false), &batch)?;
        apply_step(&objective, Player::Classifier, &mut players, &eval.grads, config.learning_rate)?;
    }
    Ok((players, trace))
}

fn artifacts(method: Method, players: Players, feature_map: FeatureMap, trace: LossTrace) -> TrainedArtifacts {
    TrainedArtifacts {
        method,
        classifier: players.classifier,
        discriminator: players.discriminator,
        domain_discriminator: players.domain_discriminator,
        transform: players.transform,
        feature_map,
        base_classifiers: Vec::new(),
        trace,
        round_validation: Vec::new(),
        selected_round: 0,
        dsft: None,
    }
}

/// Adversarial PU learning in a single feature space.
///
/// Each step ascends the discriminator on a fresh positive/unlabeled batch and
/// then descends the classifier on a fresh unlabeled-only batch.
pub fn train_pan(positive: &DenseMatrix, unlabeled: &DenseMatrix, config: &TrainConfig) -> Result<TrainedArtifacts> {
    let (players, trace) = pu_loop(positive, unlabeled, config, None)?;
    Ok(artifacts(Method::Pan, players, FeatureMap::Identity, trace))
}

/// PU learning on the common block only.
pub fn train_com_p(
    source_common: &DenseMatrix,
    target_common: &DenseMatrix,
    config: &TrainConfig,
) -> Result<TrainedArtifacts> {
    let (players, trace) = pu_loop(source_common, target_common, config, None)?;
    let common_dim = source_common.cols();
    Ok(artifacts(Method::ComP, players, FeatureMap::Common { common_dim }, trace))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Joint,
    SeparateAlignment,
}

fn init_pada_players(data: &DomainPair<'_>, root: RngSeed, variant: Variant) -> Players {
    let c = data.common_dim;
    let s = data.source_specific_dim();
    let width = c + s;
    Players {
        classifier: LinearSoftmaxModel::init(width, &mut root.derive(STREAM_CLASSIFIER).rng()),
        discriminator: Some(LinearSoftmaxModel::init(width, &mut root.derive(STREAM_DISCRIMINATOR).rng())),
        domain_discriminator: (variant == Variant::SeparateAlignment)
            .then(|| LinearSoftmaxModel::init(width, &mut root.derive(STREAM_DOMAIN_DISC).rng())),
        transform: Some(LinearTransform::init(
            data.target.cols(),
            s,
            &mut root.derive(STREAM_TRANSFORM).rng(),
        )),
        common_dim: c,
    }
}

/// Builds the PU objective of a step, with the soft-label pair when a teacher is given.
fn step_objective(
    players: &Players,
    batch: &Batch<'_>,
    config: &TrainConfig,
    teacher: Option<&SoftLabeler>,
) -> Result<Objective> {
    let view = players.view(true);
    match teacher {
        Some(t) => pada_s_terms(&view, batch, t, config.lambda, config.eta),
        None => pada_terms(&view, batch, config.lambda),
    }
}

fn pada_loop(
    data: &DomainPair<'_>,
    config: &TrainConfig,
    teacher: Option<&SoftLabeler>,
    variant: Variant,
    root: RngSeed,
) -> Result<(Players, LossTrace)> {
    data.check()?;
    config.validate()?;
    let mut players = init_pada_players(data, root, variant);
    let mut rng = root.derive(STREAM_BATCHES).rng();
    let m = config.batch_size;
    let lr = config.learning_rate;
    let mut columns = PU_COLUMNS.to_vec();
    if teacher.is_some() {
        columns.extend(["soft_pair", "soft_swap"]);
    }
    if variant == Variant::SeparateAlignment {
        columns.extend(["align_positive", "align_unlabeled"]);
    }
    let mut trace = LossTrace::new(&columns);
    let empty = DenseMatrix::zeros(0, data.source.cols());

    for _ in 0..config.steps {
        // discriminator ascent
        let xs = sample(&mut rng, data.source, m);
        let xt = sample(&mut rng, data.target, m);
        let batch = Batch {
            positive: &xs,
            unlabeled: &xt,
        };
        let objective = step_objective(&players, &batch, config, teacher)?;
        let eval = objective.evaluate(&players.view(true), &batch)?;
        let mut row = trace_row(&eval);
        apply_step(&objective, Player::Discriminator, &mut players, &eval.grads, lr)?;

        // transformer descent
        let xs = sample(&mut rng, data.source, m);
        let xt = sample(&mut rng, data.target, m);
        let batch = Batch {
            positive: &xs,
            unlabeled: &xt,
        };
        match variant {
            Variant::Joint => {
                let objective = step_objective(&players, &batch, config, teacher)?;
                let eval = objective.evaluate(&players.view(true), &batch)?;
                apply_step(&objective, Player::Transformer, &mut players, &eval.grads, lr)?;
            }
            Variant::SeparateAlignment => {
                let objective = domain_adv_terms(&players.view(true), &batch)?;
                let eval = objective.evaluate(&players.view(true), &batch)?;
                row.extend_from_slice(&eval.term_values);
                apply_step(&objective, Player::DomainDiscriminator, &mut players, &eval.grads, lr)?;
                apply_step(&objective, Player::Transformer, &mut players, &eval.grads, lr)?;
            }
        }

        // classifier descent on a target-only batch
        let xt = sample(&mut rng, data.target, m);
        let batch = Batch {
            positive: &empty,
            unlabeled: &xt,
        };
        let objective = step_objective(&players, &batch, config, teacher)?.involving(Head::Classifier);
        let eval = objective.evaluate(&players.view(true), &batch)?;
        apply_step(&objective, Player::Classifier, &mut players, &eval.grads, lr)?;

        trace.rows.push(row);
    }
    Ok((players, trace))
}

fn adapted_map(players: &Players) -> FeatureMap {
    FeatureMap::Adapted {
        transform: players.transform.clone().expect("transformer trained"),
        common_dim: players.common_dim,
    }
}

/// Joint adversarial alignment and PU learning.
///
/// Per step: discriminator ascent, transformer descent, then classifier
/// descent on a target-only batch, each on freshly sampled rows.
pub fn train_pada(data: &DomainPair<'_>, config: &TrainConfig) -> Result<TrainedArtifacts> {
    let (players, trace) = pada_loop(data, config, None, Variant::Joint, config.root())?;
    let map = adapted_map(&players);
    Ok(artifacts(Method::Pada, players, map, trace))
}

/// Ablation: the transformer is trained only against a separate domain
/// discriminator and receives no gradient from the PU terms.
pub fn train_pada_f(data: &DomainPair<'_>, config: &TrainConfig) -> Result<TrainedArtifacts> {
    let (players, trace) = pada_loop(data, config, None, Variant::SeparateAlignment, config.root())?;
    let map = adapted_map(&players);
    Ok(artifacts(Method::PadaF, players, map, trace))
}

/// Accuracy of `p1 > 0.5` against labels.
fn validation_accuracy(predictions: &[ProbPair], labels: &[Class]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| (p.p1 > 0.5) == (**l == Class::Positive))
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Iterated soft labeling.
///
/// Round 0 trains a common-feature base classifier. Each later round trains
/// PADA with the soft-label terms against the previous round's frozen
/// classifier (models are reinitialized every round). Stops after
/// `val_patience` rounds without validation improvement or after
/// `max_soft_rounds` rounds, returning the best validated round. With
/// `eta = 0` only round 1 runs and it equals [`train_pada`].
pub fn train_pada_s(
    data: &DomainPair<'_>,
    config: &TrainConfig,
    validation: Validation<'_>,
) -> Result<TrainedArtifacts> {
    data.check()?;
    config.validate()?;
    if validation.features.is_empty() || validation.labels.len() != validation.features.rows() {
        return Err(Error::Config("soft labeling needs a labeled validation set".into()));
    }
    let (sc, tc) = data.common();
    let base = train_com_p(&sc, &tc, config)?;
    let mut teacher = SoftLabeler::Common {
        classifier: base.classifier.clone(),
        common_dim: data.common_dim,
    };
    let mut rounds = vec![validation_accuracy(&base.predict(validation.features)?, validation.labels)];
    let mut teachers = Vec::new();
    let mut best: Option<(f64, usize, Players, LossTrace)> = None;
    let mut stale = 0;
    for round in 1..=config.max_soft_rounds {
        // round 1 shares the plain PADA seed so that eta = 0 reproduces it exactly
        let seed = if round == 1 {
            config.root()
        } else {
            config.root().derive(STREAM_ROUNDS).derive(round as u64)
        };
        let (players, trace) = pada_loop(data, config, Some(&teacher), Variant::Joint, seed)?;
        let acc = validation_accuracy(
            &players
                .classifier
                .classify_batch(&adapted_map(&players).apply(validation.features)?)?,
            validation.labels,
        );
        log::debug!("soft-label round {round}: validation accuracy {acc:.4}");
        rounds.push(acc);
        teachers.push(teacher);
        teacher = SoftLabeler::Adapted {
            classifier: players.classifier.clone(),
            transform: players.transform.clone().expect("transformer trained"),
            common_dim: data.common_dim,
        };
        let improved = best.as_ref().is_none_or(|b| acc > b.0);
        if improved {
            best = Some((acc, round, players, trace));
            stale = 0;
            if config.eta == 0.0 {
                // soft labels carry no weight, later rounds would only reseed
                break;
            }
        } else {
            stale += 1;
            if stale >= config.val_patience.max(1) {
                break;
            }
        }
    }
    let (_, round, players, trace) = best.expect("at least one round");
    let map = adapted_map(&players);
    let mut out = artifacts(Method::PadaS, players, map, trace);
    out.base_classifiers = teachers;
    out.round_validation = rounds;
    out.selected_round = round;
    Ok(out)
}

/// Distills a frozen teacher into a fresh classifier on full target rows.
pub fn train_dist(target: &DenseMatrix, teacher: &SoftLabeler, config: &TrainConfig) -> Result<TrainedArtifacts> {
    if target.is_empty() {
        return Err(Error::InvalidInput("target set is empty".into()));
    }
    config.validate()?;
    let root = config.root();
    let mut players = Players {
        classifier: LinearSoftmaxModel::init(target.cols(), &mut root.derive(STREAM_CLASSIFIER).rng()),
        discriminator: None,
        domain_discriminator: None,
        transform: None,
        common_dim: target.cols(),
    };
    let mut rng = root.derive(STREAM_BATCHES).rng();
    let empty = DenseMatrix::zeros(0, target.cols());
    let mut trace = LossTrace::new(&["value"]);
    for _ in 0..config.steps {
        let xt = sample(&mut rng, target, config.batch_size);
        let batch = Batch {
            positive: &empty,
            unlabeled: &xt,
        };
        let objective = distillation_terms(&players.view(false), &batch, teacher)?;
        let eval = objective.evaluate(&players.view(false), &batch)?;
        trace.rows.push(vec![eval.value]);
        apply_step(&objective, Player::Classifier, &mut players, &eval.grads, config.learning_rate)?;
    }
    let mut out = artifacts(Method::Dist, players, FeatureMap::Identity, trace);
    out.base_classifiers = vec![teacher.clone()];
    Ok(out)
}

/// Fits the two linear block mappings by full-batch gradient descent with a
/// backtracking line search, for at most `config.steps` accepted steps.
pub fn train_dsft(data: &DomainPair<'_>, config: &TrainConfig) -> Result<DsftFit> {
    data.check()?;
    config.validate()?;
    let c = data.common_dim;
    if c == 0 {
        return Err(Error::Config("DSFT needs at least one common feature".into()));
    }
    let sc = data.source.select_columns(0, c);
    let ss = data.source.select_columns(c, data.source.cols());
    let tc = data.target.select_columns(0, c);
    let tt = data.target.select_columns(c, data.target.cols());
    let blocks = DsftBlocks {
        source_common: &sc,
        source_specific: &ss,
        target_common: &tc,
        target_specific: &tt,
    };
    let mut source_map = LinearTransform::zeros(c, ss.cols());
    let mut target_map = LinearTransform::zeros(c, tt.cols());
    let mut eval = dsft_loss(blocks, &source_map, &target_map, config.gamma_mmd)?;
    let mut losses = Vec::new();
    let mut step = 1.0;
    for _ in 0..config.steps {
        let gs = &eval.grad_source_map;
        let gt = &eval.grad_target_map;
        let norm2: f64 = gs.flatten().iter().chain(gt.flatten().iter()).map(|g| g * g).sum();
        if norm2 < 1e-24 {
            break;
        }
        let mut accepted = None;
        let mut t = step * 2.0;
        while t > 1e-12 {
            let mut s_try = source_map.clone();
            let mut t_try = target_map.clone();
            s_try.step(gs, -t)?;
            t_try.step(gt, -t)?;
            let trial = dsft_loss(blocks, &s_try, &t_try, config.gamma_mmd)?;
            // Armijo sufficient decrease
            if trial.value <= eval.value - 0.5 * t * norm2 {
                accepted = Some((s_try, t_try, trial, t));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((s_new, t_new, trial, t)) => {
                source_map = s_new;
                target_map = t_new;
                eval = trial;
                step = t;
                losses.push(eval.value);
            }
            None => break,
        }
    }
    let (source_augmented, target_augmented) = dsft_augment(blocks, &source_map, &target_map)?;
    Ok(DsftFit {
        source_map,
        target_map,
        source_augmented,
        target_augmented,
        losses,
    })
}

/// DSFT augmentation followed by PU learning in the augmented space.
pub fn train_dsft_p(data: &DomainPair<'_>, config: &TrainConfig) -> Result<TrainedArtifacts> {
    let fit = train_dsft(data, config)?;
    let (players, trace) = pu_loop(&fit.source_augmented, &fit.target_augmented, config, None)?;
    let map = FeatureMap::Dsft {
        source_map: fit.source_map.clone(),
        common_dim: data.common_dim,
    };
    let mut out = artifacts(Method::DsftLinear, players, map, trace);
    out.dsft = Some(fit);
    Ok(out)
}

/// Trains `method` on a source/target pair. DIST distills a freshly trained
/// common-feature classifier; PADA_S requires validation rows.
pub fn train_method(
    method: Method,
    data: &DomainPair<'_>,
    config: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainedArtifacts> {
    data.check()?;
    match method {
        Method::Pan => train_pan(data.source, data.target, config),
        Method::ComP => {
            let (sc, tc) = data.common();
            train_com_p(&sc, &tc, config)
        }
        Method::Dist => {
            let (sc, tc) = data.common();
            let base = train_com_p(&sc, &tc, config)?;
            let teacher = SoftLabeler::Common {
                classifier: base.classifier,
                common_dim: data.common_dim,
            };
            train_dist(data.target, &teacher, config)
        }
        Method::Pada => train_pada(data, config),
        Method::PadaF => train_pada_f(data, config),
        Method::PadaS => train_pada_s(
            data,
            config,
            validation.ok_or_else(|| Error::Config("PADA_S needs a labeled validation set".into()))?,
        ),
        Method::DsftLinear => train_dsft_p(data, config),
    }
}
