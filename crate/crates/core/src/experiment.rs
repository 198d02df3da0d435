//! Evaluation protocol: split and standardize a setting, train every grid
//! cell for every seed, select by mean validation accuracy, then evaluate on
//! a sealed test split.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, split, split_indices, DomainMatrix, DomainStandardizer, FeatureSchema, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{discrimination_accuracy, mean, validation_accuracy, DiscriminationConfig, EvalReport};
use crate::numerics::{Class, DenseMatrix};
use crate::objectives::Method;
use crate::trainers::{train_method, DomainPair, FeatureMap, TrainConfig, TrainedArtifacts, Validation, WEIGHT_GRID, LEARNING_RATE_GRID};

/// Labeled rows in raw target layout `[t_c; t_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: DenseMatrix,
    pub labels: Vec<Class>,
}

impl LabeledSet {
    pub fn as_validation(&self) -> Validation<'_> {
        Validation {
            features: &self.features,
            labels: &self.labels,
        }
    }
}

/// Test rows that can only be read through [`SealedTest::open`], which counts reads.
#[derive(Debug)]
pub struct SealedTest {
    set: LabeledSet,
    reads: AtomicUsize,
}

impl SealedTest {
    fn new(set: LabeledSet) -> Self {
        Self {
            set,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn open(&self) -> &LabeledSet {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.set
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

/// Everything a trainer may see: source rows, unlabeled target training rows,
/// and the labeled validation rows used for model selection.
#[derive(Clone, Debug)]
pub struct TrainingView {
    pub common_dim: usize,
    pub source: DenseMatrix,
    pub target: DenseMatrix,
    pub validation: LabeledSet,
}

impl TrainingView {
    pub fn pair(&self) -> DomainPair<'_> {
        DomainPair {
            source: &self.source,
            target: &self.target,
            common_dim: self.common_dim,
        }
    }
}

/// A split, standardized source/target setting.
#[derive(Debug)]
pub struct PreparedSetting {
    pub name: String,
    pub schema: FeatureSchema,
    pub view: TrainingView,
    /// Hidden labels of the target training rows; only for analytics.
    pub train_labels: Vec<Class>,
    /// Source-specific view of the target training rows, when the data source can provide it.
    pub train_source_view: Option<DenseMatrix>,
    pub test: SealedTest,
    pub oracle_accuracy: Option<f64>,
    pub common_oracle_accuracy: Option<f64>,
}

fn labels_of(m: &DomainMatrix) -> Result<Vec<Class>> {
    m.labels()
        .map(<[Class]>::to_vec)
        .ok_or_else(|| Error::Config("target data needs evaluation labels".into()))
}

/// Splits the target, fits the standardizer on source and target-train rows,
/// and seals the test split.
pub fn prepare(
    name: &str,
    source: &DomainMatrix,
    target: &DomainMatrix,
    split_spec: &SplitSpec,
) -> Result<PreparedSetting> {
    if source.schema() != target.schema() {
        return Err(Error::Schema("source and target use different schemas".into()));
    }
    let (train, val, test) = split(target, split_spec)?;
    let st = DomainStandardizer::fit(source, &train);
    let features = |m: &DomainMatrix| -> Result<DenseMatrix> { Ok(st.apply(m)?.features()) };
    Ok(PreparedSetting {
        name: name.to_string(),
        schema: target.schema().clone(),
        view: TrainingView {
            common_dim: target.schema().common_dim(),
            source: features(source)?,
            target: features(&train)?,
            validation: LabeledSet {
                features: features(&val)?,
                labels: labels_of(&val)?,
            },
        },
        train_labels: labels_of(&train)?,
        train_source_view: None,
        test: SealedTest::new(LabeledSet {
            features: features(&test)?,
            labels: labels_of(&test)?,
        }),
        oracle_accuracy: None,
        common_oracle_accuracy: None,
    })
}

/// Generates and prepares a synthetic setting. The hypothetical source-specific
/// features of the target training rows are kept for the correlation analytics.
pub fn prepare_synthetic(name: &str, spec: &SyntheticSpec, split_spec: &SplitSpec) -> Result<PreparedSetting> {
    let data = generate_synthetic(spec)?;
    let (rows, _, _) = split_indices(data.target.rows(), data.target.labels(), split_spec)?;
    let mut prepared = prepare(name, &data.source, &data.target, split_spec)?;
    prepared.train_source_view = Some(data.target_source_view.select_rows(&rows));
    prepared.oracle_accuracy = Some(data.oracle_accuracy);
    prepared.common_oracle_accuracy = Some(data.common_oracle_accuracy);
    Ok(prepared)
}

/// Hyperparameter values searched per method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            learning_rate: LEARNING_RATE_GRID.to_vec(),
            lambda: WEIGHT_GRID.to_vec(),
            eta: WEIGHT_GRID.to_vec(),
        }
    }
}

/// One point of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl GridCell {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            eta: self.eta,
            seed,
            ..base.clone()
        }
    }

    fn key(&self) -> [f64; 3] {
        [self.learning_rate, self.lambda, self.eta]
    }
}

fn uses_eta(method: Method) -> bool {
    method == Method::PadaS
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &[f64], positive: bool| -> Result<()> {
            if v.is_empty() {
                return Err(Error::Config(format!("grid.{name} is empty")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0 || (positive && *x == 0.0)) {
                return Err(Error::Config(format!("grid.{name} has an invalid value")));
            }
            Ok(())
        };
        check("learning_rate", &self.learning_rate, true)?;
        check("lambda", &self.lambda, false)?;
        check("eta", &self.eta, false)
    }

    /// Cells in ascending (learning rate, lambda, eta) order. Methods without
    /// soft labels take `eta` from `base`.
    pub fn cells(&self, method: Method, base: &TrainConfig) -> Vec<GridCell> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let etas = if uses_eta(method) { sorted(&self.eta) } else { vec![base.eta] };
        let mut out = Vec::new();
        for &learning_rate in &sorted(&self.learning_rate) {
            for &lambda in &sorted(&self.lambda) {
                for &eta in &etas {
                    out.push(GridCell {
                        learning_rate,
                        lambda,
                        eta,
                    });
                }
            }
        }
        out
    }
}

/// Index of the cell with the highest score; ties go to the smallest
/// learning rate, then lambda, then eta. Non-finite scores never win.
pub fn select_best(scores: &[(GridCell, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (cell, score)) in scores.iter().enumerate() {
        if !score.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let (bc, bs) = &scores[j];
                let better = *score > *bs
                    || (*score == *bs
                        && cell.key().iter().zip(bc.key()).find(|(a, b)| **a != *b).is_some_and(|(a, b)| *a < b));
                Some(if better { i } else { j })
            }
        };
    }
    best
}

/// Result of training one cell with one seed.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub seed: u64,
    pub result: std::result::Result<(TrainedArtifacts, f64), String>,
}

/// Trains `method` for one cell and seed and scores it on the validation rows.
pub fn train_cell(method: Method, view: &TrainingView, base: &TrainConfig, cell: GridCell, seed: u64) -> CellOutcome {
    let config = cell.apply(base, seed);
    let result = train_method(method, &view.pair(), &config, Some(view.validation.as_validation()))
        .and_then(|art| {
            let acc = validation_accuracy(|x| art.predict(x), view.validation.as_validation())?;
            Ok((art, acc))
        })
        .map_err(|e| e.to_string());
    if let Err(e) = &result {
        log::warn!("{} cell {cell:?} seed {seed} failed: {e}", method.name());
    }
    CellOutcome { cell, seed, result }
}

/// Mean validation accuracy of a cell across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: GridCell,
    pub mean_validation: f64,
    pub failures: Vec<String>,
}

/// Grid search outcome for one method.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub cells: Vec<CellSummary>,
    pub selected: GridCell,
    /// Models of the selected cell with their seeds and validation accuracies.
    pub models: Vec<(u64, TrainedArtifacts, f64)>,
}

impl MethodRun {
    pub fn mean_validation(&self) -> f64 {
        mean(&self.models.iter().map(|m| m.2).collect::<Vec<_>>())
    }
}

/// Groups outcomes by cell (a cell with any failed seed scores NaN) and keeps the selected cell's models.
pub fn summarize(method: Method, cells: &[GridCell], outcomes: Vec<CellOutcome>) -> Result<MethodRun> {
    let mut per_cell: Vec<Vec<CellOutcome>> = vec![Vec::new(); cells.len()];
    for o in outcomes {
        let i = cells
            .iter()
            .position(|c| c.key() == o.cell.key())
            .ok_or_else(|| Error::Config("outcome for a cell outside the grid".into()))?;
        per_cell[i].push(o);
    }
    let summaries: Vec<CellSummary> = cells
        .iter()
        .zip(&per_cell)
        .map(|(cell, outs)| {
            let failures: Vec<String> = outs.iter().filter_map(|o| o.result.as_ref().err().cloned()).collect();
            let accs: Vec<f64> = outs.iter().filter_map(|o| o.result.as_ref().ok().map(|r| r.1)).collect();
            CellSummary {
                cell: *cell,
                mean_validation: if failures.is_empty() && !accs.is_empty() { mean(&accs) } else { f64::NAN },
                failures,
            }
        })
        .collect();
    let scores: Vec<(GridCell, f64)> = summaries.iter().map(|s| (s.cell, s.mean_validation)).collect();
    let best = select_best(&scores)
        .ok_or_else(|| Error::Config(format!("every grid cell of {} failed", method.name())))?;
    let mut models: Vec<(u64, TrainedArtifacts, f64)> = per_cell
        .swap_remove(best)
        .into_iter()
        .filter_map(|o| o.result.ok().map(|(a, v)| (o.seed, a, v)))
        .collect();
    models.sort_by_key(|m| m.0);
    Ok(MethodRun {
        method,
        cells: summaries,
        selected: cells[best],
        models,
    })
}

/// Serial grid search over every cell and seed.
pub fn run_method(
    method: Method,
    view: &TrainingView,
    base: &TrainConfig,
    grid: &Grid,
    seeds: &[u64],
) -> Result<MethodRun> {
    grid.validate()?;
    let cells = grid.cells(method, base);
    let outcomes = cells
        .iter()
        .flat_map(|&cell| seeds.iter().map(move |&seed| (cell, seed)))
        .map(|(cell, seed)| train_cell(method, view, base, cell, seed))
        .collect();
    summarize(method, &cells, outcomes)
}

/// Test accuracy and AUC of the selected models.
pub fn evaluate(run: &MethodRun, test: &SealedTest) -> Result<EvalReport> {
    let set = test.open();
    let mut report = EvalReport::new(run.method.name());
    for (_, art, _) in &run.models {
        report.push(&art.predict(&set.features)?, &set.labels)?;
    }
    Ok(report)
}

/// Source and target rows in a model's aligned space.
pub fn aligned_features(
    map: &FeatureMap,
    source: &DenseMatrix,
    target: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let source_aligned = match map {
        FeatureMap::Common { common_dim } => source.select_columns(0, *common_dim),
        FeatureMap::Adapted { .. } | FeatureMap::Identity => source.clone(),
        FeatureMap::Dsft { .. } => {
            return Err(Error::Config("discrimination diagnostics do not cover the DSFT space".into()))
        }
    };
    Ok((source_aligned, map.apply(target)?))
}

/// `(Acc_d^pp, Acc_d^pn)` in the space defined by `map`, on the given labeled target rows.
pub fn space_discrimination(
    map: &FeatureMap,
    source: &DenseMatrix,
    target: &LabeledSet,
    config: &DiscriminationConfig,
) -> Result<(f64, f64)> {
    let (s, t) = aligned_features(map, source, &target.features)?;
    discrimination_accuracy(&s, &t, &target.labels, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(lr: f64, l: f64, e: f64) -> GridCell {
        GridCell {
            learning_rate: lr,
            lambda: l,
            eta: e,
        }
    }

    #[test]
    fn ties_break_toward_smaller_values() {
        let scores = vec![
            (cell(0.1, 0.5, 1.0), 0.8),
            (cell(0.01, 1.0, 1.0), 0.8),
            (cell(0.01, 0.5, 1.0), 0.8),
            (cell(0.001, 0.5, 1.0), 0.7),
            (cell(0.5, 0.5, 1.0), f64::NAN),
        ];
        assert_eq!(select_best(&scores), Some(2));
        assert_eq!(select_best(&scores[4..]), None);
    }

    #[test]
    fn cells_are_ordered_and_eta_only_for_soft_labels() {
        let grid = Grid {
            learning_rate: vec![0.1, 0.01],
            lambda: vec![1.0],
            eta: vec![0.5, 0.1],
        };
        let base = TrainConfig::default();
        let pada = grid.cells(Method::Pada, &base);
        assert_eq!(pada.len(), 2);
        assert_eq!(pada[0].learning_rate, 0.01);
        assert_eq!(grid.cells(Method::PadaS, &base).len(), 4);
    }

    #[test]
    fn sealed_test_counts_reads() {
        let prepared = prepare_synthetic(
            "s",
            &SyntheticSpec {
                n_source: 100,
                n_target: 200,
                oracle_rows: 100,
                ..Default::default()
            },
            &SplitSpec::default(),
        )
        .unwrap();
        assert_eq!(prepared.test.reads(), 0);
        let _ = prepared.test.open();
        assert_eq!(prepared.test.reads(), 1);
        assert_eq!(prepared.train_source_view.as_ref().unwrap().rows(), prepared.view.target.rows());
    }
}
