#![allow(dead_code)]

use pada_core::models::{Batch, GradientBundle, ModelSet, TransformBinding};
use pada_core::objectives::{
    distillation_terms, domain_adv_terms, dsft_loss, pada_s_terms, pada_terms, pan_terms,
    DsftBlocks, SoftLabeler,
};
use pada_core::{DenseMatrix, LinearSoftmaxModel, LinearTransform, RngSeed, SeededRng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Central differences of `f` at `params`.
pub fn central_diff(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Pan,
    Pada,
    PadaS,
    DomainAdversarial,
    Distillation,
    Dsft,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 6] = [
        ObjectiveKind::Pan,
        ObjectiveKind::Pada,
        ObjectiveKind::PadaS,
        ObjectiveKind::DomainAdversarial,
        ObjectiveKind::Distillation,
        ObjectiveKind::Dsft,
    ];
}

fn scaled_model(rng: &mut SeededRng, dim: usize) -> LinearSoftmaxModel {
    let mut m = LinearSoftmaxModel::init(dim, rng);
    let p: Vec<f64> = (0..m.num_params()).map(|_| 0.5 * rng.normal()).collect();
    m.set_params(&p).unwrap();
    m
}

fn scaled_transform(rng: &mut SeededRng, input: usize, output: usize) -> LinearTransform {
    let mut t = LinearTransform::init(input, output, rng);
    let p: Vec<f64> = (0..t.num_params()).map(|_| 0.5 * rng.normal()).collect();
    t.set_params(&p).unwrap();
    t
}

/// A random instantiation of one objective: models, batch, and weights.
#[derive(Clone)]
pub struct GradInstance {
    pub kind: ObjectiveKind,
    pub c: usize,
    pub classifier: LinearSoftmaxModel,
    pub discriminator: LinearSoftmaxModel,
    pub domain_discriminator: LinearSoftmaxModel,
    pub transform: LinearTransform,
    pub second_transform: LinearTransform,
    pub teacher: SoftLabeler,
    pub common_teacher: LinearSoftmaxModel,
    pub source: DenseMatrix,
    pub target: DenseMatrix,
    pub lambda: f64,
    pub eta: f64,
    pub gamma: f64,
}

impl GradInstance {
    pub fn random(kind: ObjectiveKind, seed: u64) -> Self {
        let mut rng = RngSeed(seed).rng();
        let c = 1 + rng.index(3);
        let s = 1 + rng.index(3);
        let t = 1 + rng.index(3);
        let ns = 2 + rng.index(4);
        let nt = 2 + rng.index(4);
        let (source, target, head_dim, f_out) = match kind {
            ObjectiveKind::Pan => {
                let d = c + s;
                (random_matrix(&mut rng, ns, d), random_matrix(&mut rng, nt, d), d, s)
            }
            ObjectiveKind::Distillation => (
                random_matrix(&mut rng, ns, c + s),
                random_matrix(&mut rng, nt, c + t),
                c + t,
                s,
            ),
            _ => (
                random_matrix(&mut rng, ns, c + s),
                random_matrix(&mut rng, nt, c + t),
                c + s,
                s,
            ),
        };
        let classifier = scaled_model(&mut rng, head_dim);
        let discriminator = scaled_model(&mut rng, head_dim);
        let domain_discriminator = scaled_model(&mut rng, head_dim);
        let (transform, second_transform) = if kind == ObjectiveKind::Dsft {
            (scaled_transform(&mut rng, c, s), scaled_transform(&mut rng, c, t))
        } else {
            (scaled_transform(&mut rng, c + t, f_out), scaled_transform(&mut rng, c, t))
        };
        let teacher = if rng.bernoulli(0.5) {
            SoftLabeler::Common {
                classifier: scaled_model(&mut rng, c),
                common_dim: c,
            }
        } else {
            SoftLabeler::Adapted {
                classifier: scaled_model(&mut rng, c + s),
                transform: scaled_transform(&mut rng, c + t, s),
                common_dim: c,
            }
        };
        let common_teacher = scaled_model(&mut rng, c);
        Self {
            kind,
            c,
            common_teacher,
            classifier,
            discriminator,
            domain_discriminator,
            transform,
            second_transform,
            teacher,
            source,
            target,
            lambda: rng.uniform(0.05, 1.0),
            eta: rng.uniform(0.05, 1.0),
            gamma: rng.uniform(0.1, 2.0),
        }
    }

    fn dsft_blocks(&self) -> (DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
        let c = self.c;
        (
            self.source.select_columns(0, c),
            self.source.select_columns(c, self.source.cols()),
            self.target.select_columns(0, c),
            self.target.select_columns(c, self.target.cols()),
        )
    }

    /// Objective value and analytic gradients (transform slot holds Psi_s for the mapping loss).
    pub fn evaluate(&self) -> (f64, GradientBundle, Option<Vec<f64>>) {
        if self.kind == ObjectiveKind::Dsft {
            let (sc, ss, tc, tt) = self.dsft_blocks();
            let eval = dsft_loss(
                DsftBlocks {
                    source_common: &sc,
                    source_specific: &ss,
                    target_common: &tc,
                    target_specific: &tt,
                },
                &self.transform,
                &self.second_transform,
                self.gamma,
            )
            .unwrap();
            let grads = GradientBundle {
                transform: Some(eval.grad_source_map),
                ..Default::default()
            };
            return (eval.value, grads, Some(eval.grad_target_map.flatten()));
        }
        let binding = TransformBinding {
            transform: &self.transform,
            common_dim: self.c,
        };
        let batch = Batch {
            positive: &self.source,
            unlabeled: &self.target,
        };
        let (models, objective) = match self.kind {
            ObjectiveKind::Pan => {
                let m = ModelSet {
                    classifier: Some(&self.classifier),
                    discriminator: Some(&self.discriminator),
                    ..Default::default()
                };
                (m, pan_terms(&m, &batch, self.lambda).unwrap())
            }
            ObjectiveKind::Pada => {
                let m = ModelSet {
                    classifier: Some(&self.classifier),
                    discriminator: Some(&self.discriminator),
                    transform: Some(binding),
                    ..Default::default()
                };
                (m, pada_terms(&m, &batch, self.lambda).unwrap())
            }
            ObjectiveKind::PadaS => {
                let m = ModelSet {
                    classifier: Some(&self.classifier),
                    discriminator: Some(&self.discriminator),
                    transform: Some(binding),
                    ..Default::default()
                };
                (
                    m,
                    pada_s_terms(&m, &batch, &self.teacher, self.lambda, self.eta).unwrap(),
                )
            }
            ObjectiveKind::DomainAdversarial => {
                let m = ModelSet {
                    domain_discriminator: Some(&self.domain_discriminator),
                    transform: Some(binding),
                    ..Default::default()
                };
                (m, domain_adv_terms(&m, &batch).unwrap())
            }
            ObjectiveKind::Distillation => {
                let m = ModelSet {
                    classifier: Some(&self.classifier),
                    ..Default::default()
                };
                let teacher = SoftLabeler::Common {
                    classifier: self.common_teacher.clone(),
                    common_dim: self.c,
                };
                (m, distillation_terms(&m, &batch, &teacher).unwrap())
            }
            ObjectiveKind::Dsft => unreachable!(),
        };
        let eval = objective.evaluate(&models, &batch).unwrap();
        (eval.value, eval.grads, None)
    }

    pub fn value(&self) -> f64 {
        self.evaluate().0
    }

    /// Worst relative error between analytic and central-difference gradients over every trainable model.
    pub fn max_relative_error(&self) -> f64 {
        let (_, grads, second) = self.evaluate();
        let mut worst: f64 = 0.0;
        if let Some(g) = &grads.classifier {
            let fd = central_diff(&self.classifier.params(), FD_STEP, |p| {
                let mut inst = self.clone();
                inst.classifier.set_params(p).unwrap();
                inst.value()
            });
            worst = worst.max(relative_error(&g.flatten(), &fd));
        }
        if let Some(g) = &grads.discriminator {
            let fd = central_diff(&self.discriminator.params(), FD_STEP, |p| {
                let mut inst = self.clone();
                inst.discriminator.set_params(p).unwrap();
                inst.value()
            });
            worst = worst.max(relative_error(&g.flatten(), &fd));
        }
        if let Some(g) = &grads.domain_discriminator {
            let fd = central_diff(&self.domain_discriminator.params(), FD_STEP, |p| {
                let mut inst = self.clone();
                inst.domain_discriminator.set_params(p).unwrap();
                inst.value()
            });
            worst = worst.max(relative_error(&g.flatten(), &fd));
        }
        if let Some(g) = &grads.transform {
            let fd = central_diff(&self.transform.params(), FD_STEP, |p| {
                let mut inst = self.clone();
                inst.transform.set_params(p).unwrap();
                inst.value()
            });
            worst = worst.max(relative_error(&g.flatten(), &fd));
        }
        if let Some(g) = second {
            let fd = central_diff(&self.second_transform.params(), FD_STEP, |p| {
                let mut inst = self.clone();
                inst.second_transform.set_params(p).unwrap();
                inst.value()
            });
            worst = worst.max(relative_error(&g, &fd));
        }
        worst
    }
}
