//! Linear softmax heads, the linear feature transformer, and analytic
//! backpropagation through weighted lists of `kl2` terms.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kl2, softmax2_unchecked, swap, Class, DenseMatrix, ProbPair, SeededRng, Softmax2};

/// Linear two-class model `softmax2(W^T x + b)` with `W` of shape `input_dim x 2`.
///
/// Houses the classifier, both discriminators, the base classifier used for
/// soft labels, and the diagnostic discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    weights: DenseMatrix,
    bias: [f64; 2],
}

impl LinearSoftmaxModel {
    /// Uniform weights in `[-1/sqrt(d), 1/sqrt(d)]`, zero bias.
    pub fn init(input_dim: usize, rng: &mut SeededRng) -> Self {
        let r = 1.0 / (input_dim.max(1) as f64).sqrt();
        let values = (0..input_dim * 2).map(|_| rng.uniform(-r, r)).collect();
        Self {
            weights: DenseMatrix::new(input_dim, 2, values).expect("finite init"),
            bias: [0.0; 2],
        }
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(input_dim, 2),
            bias: [0.0; 2],
        }
    }

    pub fn from_parts(weights: DenseMatrix, bias: [f64; 2]) -> Result<Self> {
        if weights.cols() != 2 {
            return Err(Error::InvalidInput(format!(
                "softmax head needs 2 weight columns, got {}",
                weights.cols()
            )));
        }
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidInput("non-finite bias".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> [f64; 2] {
        self.bias
    }

    #[inline]
    pub(crate) fn logits(&self, x: &[f64]) -> (f64, f64) {
        let mut z0 = self.bias[0];
        let mut z1 = self.bias[1];
        let w = self.weights.values();
        for (k, &xk) in x.iter().enumerate() {
            z0 += w[2 * k] * xk;
            z1 += w[2 * k + 1] * xk;
        }
        (z0, z1)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, got {dim}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn classify(&self, x: &[f64]) -> Result<ProbPair> {
        self.check_dim(x.len())?;
        let (z0, z1) = self.logits(x);
        Ok(softmax2_unchecked(z0, z1).probs)
    }

    pub fn classify_batch(&self, xs: &DenseMatrix) -> Result<Vec<ProbPair>> {
        self.check_dim(xs.cols())?;
        Ok(xs
            .row_iter()
            .map(|x| {
                let (z0, z1) = self.logits(x);
                softmax2_unchecked(z0, z1).probs
            })
            .collect())
    }

    pub fn num_params(&self) -> usize {
        self.weights.rows() * 2 + 2
    }

    /// Flattened parameters: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.values().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        let n = self.weights.values().len();
        self.weights.values_mut().copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
        Ok(())
    }

    /// `theta <- theta + scale * grad`; the model is untouched if the result is non-finite.
    pub fn step(&mut self, grad: &ModelGrad, scale: f64) -> Result<()> {
        if grad.weights.len() != self.weights.values().len() {
            return Err(Error::InvalidInput("gradient shape mismatch".into()));
        }
        let updated: Vec<f64> = self
            .params()
            .iter()
            .zip(grad.weights.iter().chain(grad.bias.iter()))
            .map(|(p, g)| p + scale * g)
            .collect();
        self.set_params(&updated)
    }
}

/// Linear map `W^T x + b` with `W` of shape `input_dim x output_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearTransform {
    weights: DenseMatrix,
    bias: Vec<f64>,
}

impl LinearTransform {
    pub fn init(input_dim: usize, output_dim: usize, rng: &mut SeededRng) -> Self {
        let r = 1.0 / (input_dim.max(1) as f64).sqrt();
        let values = (0..input_dim * output_dim)
            .map(|_| rng.uniform(-r, r))
            .collect();
        Self {
            weights: DenseMatrix::new(input_dim, output_dim, values).expect("finite init"),
            bias: vec![0.0; output_dim],
        }
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(input_dim, output_dim),
            bias: vec![0.0; output_dim],
        }
    }

    pub fn from_parts(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::InvalidInput(format!(
                "transform bias has {} entries for {} outputs",
                bias.len(),
                weights.cols()
            )));
        }
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidInput("non-finite bias".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        let s = self.output_dim();
        let w = self.weights.values();
        for (k, &xk) in x.iter().enumerate() {
            let row = &w[k * s..(k + 1) * s];
            for (o, wk) in out.iter_mut().zip(row) {
                *o += wk * xk;
            }
        }
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "transform expects {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub fn transform_batch(&self, xs: &DenseMatrix) -> Result<DenseMatrix> {
        if xs.cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "transform expects {} features, got {}",
                self.input_dim(),
                xs.cols()
            )));
        }
        let s = self.output_dim();
        let mut values = vec![0.0; xs.rows() * s];
        for (i, x) in xs.row_iter().enumerate() {
            self.apply_into(x, &mut values[i * s..(i + 1) * s]);
        }
        DenseMatrix::new(xs.rows(), s, values)
    }

    pub fn num_params(&self) -> usize {
        self.weights.values().len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.values().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        let n = self.weights.values().len();
        self.weights.values_mut().copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn step(&mut self, grad: &TransformGrad, scale: f64) -> Result<()> {
        if grad.weights.len() != self.weights.values().len() || grad.bias.len() != self.bias.len() {
            return Err(Error::InvalidInput("gradient shape mismatch".into()));
        }
        let updated: Vec<f64> = self
            .params()
            .iter()
            .zip(grad.weights.iter().chain(grad.bias.iter()))
            .map(|(p, g)| p + scale * g)
            .collect();
        self.set_params(&updated)
    }
}

/// `[common; F(x)]` for one target row.
pub fn augment_row(transform: &LinearTransform, common_dim: usize, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = x[..common_dim.min(x.len())].to_vec();
    out.extend(transform.transform(x)?);
    Ok(out)
}

/// `[T_c; F(X_t)]` for a whole target matrix.
pub fn augment_batch(
    transform: &LinearTransform,
    common_dim: usize,
    xs: &DenseMatrix,
) -> Result<DenseMatrix> {
    if common_dim > xs.cols() {
        return Err(Error::Config(format!(
            "common dimension {common_dim} exceeds {} target columns",
            xs.cols()
        )));
    }
    xs.select_columns(0, common_dim)
        .hstack(&transform.transform_batch(xs)?)
}

/// Gradient of a [`LinearSoftmaxModel`], same layout as its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

impl ModelGrad {
    fn zeros(input_dim: usize) -> Self {
        Self {
            weights: vec![0.0; input_dim * 2],
            bias: [0.0; 2],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.bias);
        v
    }
}

/// Gradient of a [`LinearTransform`], same layout as its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TransformGrad {
    fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.bias);
        v
    }
}

/// Softmax heads a loss term can reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Head {
    Classifier,
    Discriminator,
    DomainDiscriminator,
}

/// Which half of a mini-batch a term sums over.
///
/// `Positive` rows are fed to heads as-is. `Unlabeled` rows pass through the
/// bound transformer first (`[x_c; F(x)]`) when one is bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Positive,
    Unlabeled,
}

/// First argument of a `kl2` term.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    OneHot(Class),
    Head(Head),
    /// Fixed per-row distributions (no gradient), one per row of the side.
    Soft(Vec<ProbPair>),
}

/// Second argument of a `kl2` term: a head output, optionally swapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub head: Head,
    pub swapped: bool,
}

/// `weight / n * sum_i kl2(reference(x_i), prediction(x_i))` over the rows of `side`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub weight: f64,
    pub side: Side,
    pub reference: Reference,
    pub prediction: Prediction,
}

impl LossTerm {
    pub fn involves(&self, head: Head) -> bool {
        self.prediction.head == head || self.reference == Reference::Head(head)
    }
}

/// Transformer bound to the unlabeled side of a batch.
#[derive(Clone, Copy, Debug)]
pub struct TransformBinding<'a> {
    pub transform: &'a LinearTransform,
    pub common_dim: usize,
}

/// Models available to a term list. Unbound heads cannot be referenced.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelSet<'a> {
    pub classifier: Option<&'a LinearSoftmaxModel>,
    pub discriminator: Option<&'a LinearSoftmaxModel>,
    pub domain_discriminator: Option<&'a LinearSoftmaxModel>,
    pub transform: Option<TransformBinding<'a>>,
}

impl<'a> ModelSet<'a> {
    pub fn head(&self, head: Head) -> Option<&'a LinearSoftmaxModel> {
        match head {
            Head::Classifier => self.classifier,
            Head::Discriminator => self.discriminator,
            Head::DomainDiscriminator => self.domain_discriminator,
        }
    }
}

/// Mini-batch with a positive (source) half and an unlabeled (target) half.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub positive: &'a DenseMatrix,
    pub unlabeled: &'a DenseMatrix,
}

impl Batch<'_> {
    fn side(&self, side: Side) -> &DenseMatrix {
        match side {
            Side::Positive => self.positive,
            Side::Unlabeled => self.unlabeled,
        }
    }
}

/// Gradients for every bound model; unbound models stay `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBundle {
    pub classifier: Option<ModelGrad>,
    pub discriminator: Option<ModelGrad>,
    pub domain_discriminator: Option<ModelGrad>,
    pub transform: Option<TransformGrad>,
}

impl GradientBundle {
    pub fn head(&self, head: Head) -> Option<&ModelGrad> {
        match head {
            Head::Classifier => self.classifier.as_ref(),
            Head::Discriminator => self.discriminator.as_ref(),
            Head::DomainDiscriminator => self.domain_discriminator.as_ref(),
        }
    }

    fn head_mut(&mut self, head: Head) -> &mut Option<ModelGrad> {
        match head {
            Head::Classifier => &mut self.classifier,
            Head::Discriminator => &mut self.discriminator,
            Head::DomainDiscriminator => &mut self.domain_discriminator,
        }
    }
}

/// Total loss, per-term values (in term order), and gradients.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub value: f64,
    pub term_values: Vec<f64>,
    pub grads: GradientBundle,
}

struct HeadOutputs {
    outputs: Vec<Softmax2>,
    grad: Vec<[f64; 2]>,
}

fn head_name(head: Head) -> &'static str {
    match head {
        Head::Classifier => "classifier",
        Head::Discriminator => "discriminator",
        Head::DomainDiscriminator => "domain discriminator",
    }
}

/// Evaluates a term list and backpropagates analytically through
/// softmax, `kl2`, swap, the transformer, and the `[x_c; F(x)]` concatenation.
pub fn loss_and_grads(
    models: &ModelSet<'_>,
    terms: &[LossTerm],
    batch: &Batch<'_>,
) -> Result<LossEvaluation> {
    // Resolve the inputs each side presents to the heads.
    let unlabeled_inputs = match models.transform {
        Some(binding) => {
            if batch.unlabeled.cols() != binding.transform.input_dim() {
                return Err(Error::Config(format!(
                    "transformer expects {} target features, batch has {}",
                    binding.transform.input_dim(),
                    batch.unlabeled.cols()
                )));
            }
            Some(augment_batch(binding.transform, binding.common_dim, batch.unlabeled)?)
        }
        None => None,
    };
    let inputs = |side: Side| -> &DenseMatrix {
        match (side, &unlabeled_inputs) {
            (Side::Unlabeled, Some(aug)) => aug,
            _ => batch.side(side),
        }
    };

    let mut cache: HashMap<(Head, Side), HeadOutputs> = HashMap::new();
    let mut ensure = |head: Head, side: Side| -> Result<()> {
        if cache.contains_key(&(head, side)) {
            return Ok(());
        }
        let model = models.head(head).ok_or_else(|| {
            Error::Config(format!("loss term references unbound {}", head_name(head)))
        })?;
        let xs = inputs(side);
        if xs.cols() != model.input_dim() {
            return Err(Error::Config(format!(
                "{} expects {} features, {:?} side provides {}",
                head_name(head),
                model.input_dim(),
                side,
                xs.cols()
            )));
        }
        let outputs: Vec<Softmax2> = xs
            .row_iter()
            .map(|x| {
                let (z0, z1) = model.logits(x);
                softmax2_unchecked(z0, z1)
            })
            .collect();
        let grad = vec![[0.0; 2]; outputs.len()];
        cache.insert((head, side), HeadOutputs { outputs, grad });
        Ok(())
    };

    for term in terms {
        if !term.weight.is_finite() {
            return Err(Error::Config("non-finite term weight".into()));
        }
        ensure(term.prediction.head, term.side)?;
        match &term.reference {
            Reference::Head(h) => ensure(*h, term.side)?,
            Reference::Soft(labels) => {
                if labels.len() != batch.side(term.side).rows() {
                    return Err(Error::Config(format!(
                        "{} soft labels for {} rows",
                        labels.len(),
                        batch.side(term.side).rows()
                    )));
                }
            }
            Reference::OneHot(_) => {}
        }
    }

    let mut term_values = Vec::with_capacity(terms.len());
    let mut total = 0.0;
    for term in terms {
        let n = batch.side(term.side).rows();
        if n == 0 {
            term_values.push(0.0);
            continue;
        }
        let scale = term.weight / n as f64;
        let pred_key = (term.prediction.head, term.side);
        let ref_key = match term.reference {
            Reference::Head(h) => Some((h, term.side)),
            _ => None,
        };
        let mut sum = 0.0;
        for i in 0..n {
            let c = cache[&pred_key].outputs[i].probs;
            let q = if term.prediction.swapped { swap(c) } else { c };
            let p = match &term.reference {
                Reference::OneHot(class) => ProbPair::one_hot(*class),
                Reference::Head(_) => cache[&ref_key.unwrap()].outputs[i].probs,
                Reference::Soft(labels) => labels[i],
            };
            sum += kl2(p, q);

            // d kl / d q_j = -p_j / q_j
            let dq = [-p.p0 / q.p0, -p.p1 / q.p1];
            let dc = if term.prediction.swapped {
                [dq[1], dq[0]]
            } else {
                dq
            };
            let g = &mut cache.get_mut(&pred_key).unwrap().grad[i];
            g[0] += scale * dc[0];
            g[1] += scale * dc[1];

            if let Some(key) = ref_key {
                // d kl / d p_j = ln(p_j / q_j) + 1
                let g = &mut cache.get_mut(&key).unwrap().grad[i];
                g[0] += scale * ((p.p0 / q.p0).ln() + 1.0);
                g[1] += scale * ((p.p1 / q.p1).ln() + 1.0);
            }
        }
        let value = term.weight * sum / n as f64;
        term_values.push(value);
        total += value;
    }

    let mut grads = GradientBundle::default();
    for head in [Head::Classifier, Head::Discriminator, Head::DomainDiscriminator] {
        if let Some(model) = models.head(head) {
            *grads.head_mut(head) = Some(ModelGrad::zeros(model.input_dim()));
        }
    }
    let mut input_grad = models.transform.map(|b| {
        (
            b,
            vec![0.0; batch.unlabeled.rows() * b.transform.output_dim()],
        )
    });

    // Fixed iteration order keeps the summation sequence reproducible.
    let mut keys: Vec<(Head, Side)> = cache.keys().copied().collect();
    keys.sort_by_key(|(h, s)| (*h, matches!(s, Side::Unlabeled)));
    for key in keys {
        let (head, side) = key;
        let model = models.head(head).unwrap();
        let xs = inputs(side);
        let outputs = &cache[&key];
        let mgrad = grads.head_mut(head).as_mut().unwrap();
        let w = model.weights().values();
        for (i, x) in xs.row_iter().enumerate() {
            let Softmax2 { probs, clamped } = outputs.outputs[i];
            if clamped {
                continue;
            }
            let g = outputs.grad[i];
            let inner = g[0] * probs.p0 + g[1] * probs.p1;
            let gz = [probs.p0 * (g[0] - inner), probs.p1 * (g[1] - inner)];
            for (k, &xk) in x.iter().enumerate() {
                mgrad.weights[2 * k] += xk * gz[0];
                mgrad.weights[2 * k + 1] += xk * gz[1];
            }
            mgrad.bias[0] += gz[0];
            mgrad.bias[1] += gz[1];

            if let (Side::Unlabeled, Some((binding, dx))) = (side, input_grad.as_mut()) {
                let c = binding.common_dim;
                let s = binding.transform.output_dim();
                let row = &mut dx[i * s..(i + 1) * s];
                for (j, d) in row.iter_mut().enumerate() {
                    let k = c + j;
                    *d += w[2 * k] * gz[0] + w[2 * k + 1] * gz[1];
                }
            }
        }
    }

    if let Some((binding, dx)) = input_grad {
        let s = binding.transform.output_dim();
        let mut tgrad = TransformGrad::zeros(binding.transform.input_dim(), s);
        for (i, x) in batch.unlabeled.row_iter().enumerate() {
            let d = &dx[i * s..(i + 1) * s];
            for (k, &xk) in x.iter().enumerate() {
                let row = &mut tgrad.weights[k * s..(k + 1) * s];
                for (t, dj) in row.iter_mut().zip(d) {
                    *t += xk * dj;
                }
            }
            for (b, dj) in tgrad.bias.iter_mut().zip(d) {
                *b += dj;
            }
        }
        grads.transform = Some(tgrad);
    }

    Ok(LossEvaluation {
        value: total,
        term_values,
        grads,
    })
}

pub const CHECKPOINT_FORMAT: &str = "pada-checkpoint";

/// Serialized model parameters with shape metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointModel {
    LinearSoftmax(LinearSoftmaxModel),
    LinearTransform(LinearTransform),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: String,
    pub model: CheckpointModel,
}

impl Checkpoint {
    pub fn new(model: CheckpointModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: crate::VERSION.to_string(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", ckpt.format)));
        }
        // re-validate invariants bypassed by deserialization
        match &ckpt.model {
            CheckpointModel::LinearSoftmax(m) => {
                LinearSoftmaxModel::from_parts(
                    DenseMatrix::new(m.weights.rows(), m.weights.cols(), m.weights.values().to_vec())?,
                    m.bias,
                )?;
            }
            CheckpointModel::LinearTransform(t) => {
                LinearTransform::from_parts(
                    DenseMatrix::new(t.weights.rows(), t.weights.cols(), t.weights.values().to_vec())?,
                    t.bias.clone(),
                )?;
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngSeed;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        let cols = rows.first().map_or(0, |r| r.len());
        DenseMatrix::from_rows(rows, cols).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = LinearSoftmaxModel::zeros(3);
        assert_eq!(model.classify(&[1.0, -4.0, 9.0]).unwrap(), ProbPair::UNIFORM);
    }

    #[test]
    fn classify_matches_direct_multiply() {
        // logits (ln 1, ln 3) for x = (1, 0)
        let model =
            LinearSoftmaxModel::from_parts(m(&[&[0.0, 3f64.ln()], &[5.0, -2.0]]), [0.0, 0.0])
                .unwrap();
        let p = model.classify(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.p0, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.p1, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn classify_batch_preserves_order() {
        let mut rng = RngSeed(1).rng();
        let model = LinearSoftmaxModel::init(2, &mut rng);
        let xs = m(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 2.0]]);
        let batch = model.classify_batch(&xs).unwrap();
        for (i, p) in batch.iter().enumerate() {
            assert_eq!(*p, model.classify(xs.row(i)).unwrap());
        }
    }

    #[test]
    fn classify_rejects_wrong_dim() {
        let model = LinearSoftmaxModel::zeros(3);
        assert!(matches!(model.classify(&[1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn transform_identity_and_constant() {
        let id = LinearTransform::from_parts(
            m(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]),
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(id.transform(&[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 6.0]);
        let constant = LinearTransform::from_parts(DenseMatrix::zeros(3, 2), vec![1.5, -2.0]).unwrap();
        assert_eq!(constant.transform(&[4.0, 5.0, 6.0]).unwrap(), vec![1.5, -2.0]);
        assert!(constant.transform(&[1.0]).is_err());
    }

    #[test]
    fn transform_matches_dot_products() {
        let mut rng = RngSeed(9).rng();
        let mut t = LinearTransform::init(4, 3, &mut rng);
        let bias: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let mut p = t.params();
        let n = p.len();
        p[n - 3..].copy_from_slice(&bias);
        t.set_params(&p).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let out = t.transform(&x).unwrap();
        for j in 0..3 {
            let mut dot = bias[j];
            for (k, xk) in x.iter().enumerate() {
                dot += t.weights().get(k, j) * xk;
            }
            assert_abs_diff_eq!(out[j], dot, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_at_zero() {
        let d = LinearSoftmaxModel::zeros(2);
        let xs = m(&[&[2.0, -1.0]]);
        let empty = DenseMatrix::zeros(0, 2);
        let terms = [LossTerm {
            weight: 1.0,
            side: Side::Positive,
            reference: Reference::OneHot(Class::Positive),
            prediction: Prediction {
                head: Head::Discriminator,
                swapped: false,
            },
        }];
        let models = ModelSet {
            discriminator: Some(&d),
            ..Default::default()
        };
        let eval = loss_and_grads(
            &models,
            &terms,
            &Batch {
                positive: &xs,
                unlabeled: &empty,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(eval.value, 2f64.ln(), epsilon = 1e-5);
        let g = eval.grads.discriminator.unwrap();
        // (softmax - onehot) outer x, onehot clamped to (eps, 1 - eps)
        let eps = crate::numerics::PROB_EPS;
        let dz = [0.5 - eps, 0.5 - (1.0 - eps)];
        let expected = [2.0 * dz[0], 2.0 * dz[1], -dz[0], -dz[1]];
        for (a, b) in g.weights.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(g.bias[0], dz[0], epsilon = 1e-6);
        assert!(eval.grads.classifier.is_none());
    }

    #[test]
    fn unbound_head_is_config_error() {
        let xs = m(&[&[1.0]]);
        let terms = [LossTerm {
            weight: 1.0,
            side: Side::Positive,
            reference: Reference::OneHot(Class::Positive),
            prediction: Prediction {
                head: Head::Classifier,
                swapped: false,
            },
        }];
        let err = loss_and_grads(
            &ModelSet::default(),
            &terms,
            &Batch {
                positive: &xs,
                unlabeled: &xs,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = RngSeed(5).rng();
        let model = LinearSoftmaxModel::init(7, &mut rng);
        let ckpt = Checkpoint::new(CheckpointModel::LinearSoftmax(model.clone()));
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        match back.model {
            CheckpointModel::LinearSoftmax(m2) => {
                let a: Vec<u64> = model.params().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = m2.params().iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b);
            }
            _ => panic!("wrong kind"),
        }
        let t = LinearTransform::init(3, 5, &mut rng);
        let ckpt = Checkpoint::new(CheckpointModel::LinearTransform(t.clone()));
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back.model, CheckpointModel::LinearTransform(t));
        assert!(Checkpoint::from_json("{\"format\":\"x\"}").is_err());
    }

    #[test]
    fn step_rejects_non_finite() {
        let mut model = LinearSoftmaxModel::zeros(1);
        let grad = ModelGrad {
            weights: vec![f64::INFINITY, 0.0],
            bias: [0.0; 2],
        };
        assert!(model.step(&grad, 1.0).is_err());
        assert_eq!(model, LinearSoftmaxModel::zeros(1));
    }
}
