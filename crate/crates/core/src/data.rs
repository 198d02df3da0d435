//! Feature-role schema, tabular I/O, ratings aggregation, splits,
//! standardization, and the synthetic PU-HDA generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Class, DenseMatrix, RngSeed, SeededRng};

/// Which side of the adaptation problem a matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Assignment of column names to feature roles.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub common: Vec<String>,
    pub source_specific: Vec<String>,
    pub target_specific: Vec<String>,
    #[serde(default)]
    pub label_column: Option<String>,
    /// Cell value mapped to the positive class; anything else is negative. Defaults to `1`.
    #[serde(default)]
    pub positive_value: Option<String>,
}

impl FeatureSchema {
    /// Disjoint role lists with at least one domain-specific column per domain.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self
            .common
            .iter()
            .chain(&self.source_specific)
            .chain(&self.target_specific)
        {
            if !seen.insert(name) {
                return Err(Error::Schema(format!("column `{name}` assigned to two roles")));
            }
        }
        if let Some(label) = &self.label_column {
            if seen.contains(label) {
                return Err(Error::Schema(format!("label column `{label}` is also a feature")));
            }
        }
        if self.source_specific.is_empty() || self.target_specific.is_empty() {
            return Err(Error::Schema(
                "source_specific and target_specific need at least one column each".into(),
            ));
        }
        Ok(())
    }

    pub fn common_dim(&self) -> usize {
        self.common.len()
    }

    pub fn source_dim(&self) -> usize {
        self.source_specific.len()
    }

    pub fn target_dim(&self) -> usize {
        self.target_specific.len()
    }

    pub fn specific(&self, domain: Domain) -> &[String] {
        match domain {
            Domain::Source => &self.source_specific,
            Domain::Target => &self.target_specific,
        }
    }

    fn positive_value(&self) -> &str {
        self.positive_value.as_deref().unwrap_or("1")
    }
}

/// Samples of one domain split into common and domain-specific blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMatrix {
    domain: Domain,
    schema: FeatureSchema,
    common: DenseMatrix,
    specific: DenseMatrix,
    labels: Option<Vec<Class>>,
}

impl DomainMatrix {
    pub fn new(
        domain: Domain,
        schema: FeatureSchema,
        common: DenseMatrix,
        specific: DenseMatrix,
        labels: Option<Vec<Class>>,
    ) -> Result<Self> {
        if common.cols() != schema.common_dim() || specific.cols() != schema.specific(domain).len() {
            return Err(Error::Schema(format!(
                "block widths {}+{} do not match schema {}+{}",
                common.cols(),
                specific.cols(),
                schema.common_dim(),
                schema.specific(domain).len()
            )));
        }
        if common.rows() != specific.rows() {
            return Err(Error::InvalidInput("blocks have different row counts".into()));
        }
        if let Some(l) = &labels {
            if l.len() != common.rows() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} rows",
                    l.len(),
                    common.rows()
                )));
            }
        }
        Ok(Self {
            domain,
            schema,
            common,
            specific,
            labels,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.common.rows()
    }

    pub fn common(&self) -> &DenseMatrix {
        &self.common
    }

    pub fn specific(&self) -> &DenseMatrix {
        &self.specific
    }

    /// `[common; specific]` per row.
    pub fn features(&self) -> DenseMatrix {
        self.common.hstack(&self.specific).expect("equal row counts")
    }

    pub fn labels(&self) -> Option<&[Class]> {
        self.labels.as_deref()
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            domain: self.domain,
            schema: self.schema.clone(),
            common: self.common.select_rows(indices),
            specific: self.specific.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Rows whose hidden label is `class`. Errors when labels are absent.
    pub fn rows_with_label(&self, class: Class) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config("matrix carries no labels".into()))?;
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        Ok(self.select_rows(&idx))
    }

    pub fn positive_fraction(&self) -> Option<f64> {
        self.labels.as_ref().map(|l| {
            l.iter().filter(|&&c| c == Class::Positive).count() as f64 / l.len().max(1) as f64
        })
    }

    fn with_blocks(&self, common: DenseMatrix, specific: DenseMatrix) -> Self {
        Self {
            common,
            specific,
            ..self.clone()
        }
    }

    fn column_names(&self) -> Vec<&str> {
        self.schema
            .common
            .iter()
            .chain(self.schema.specific(self.domain))
            .map(String::as_str)
            .collect()
    }
}

fn read_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => Error::Csv(e),
    }
}

/// Reads a comma-separated file with a header row, keeping the schema columns of `domain`.
pub fn load_csv(path: &Path, schema: &FeatureSchema, domain: Domain) -> Result<DomainMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_error(path))?;
    let header = reader.headers().map_err(read_error(path))?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let common_idx: Vec<usize> = schema.common.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let specific_idx: Vec<usize> = schema
        .specific(domain)
        .iter()
        .map(|n| find(n))
        .collect::<Result<_>>()?;
    let label_idx = schema
        .label_column
        .as_ref()
        .and_then(|name| header.iter().position(|h| h == name));

    let mut common = Vec::new();
    let mut specific = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(read_error(path))?;
        let parse = |idx: usize| -> Result<f64> {
            let cell = record.get(idx).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data {
                    row,
                    column: header[idx].to_string(),
                    message: format!("`{cell}` is not a finite number"),
                }),
            }
        };
        for &i in &common_idx {
            common.push(parse(i)?);
        }
        for &i in &specific_idx {
            specific.push(parse(i)?);
        }
        if let Some(i) = label_idx {
            let cell = record.get(i).unwrap_or("");
            labels.push(if cell == schema.positive_value() {
                Class::Positive
            } else {
                Class::Negative
            });
        }
    }
    let n = if common_idx.is_empty() {
        specific.len() / specific_idx.len().max(1)
    } else {
        common.len() / common_idx.len()
    };
    DomainMatrix::new(
        domain,
        schema.clone(),
        DenseMatrix::new(n, common_idx.len(), common)?,
        DenseMatrix::new(n, specific_idx.len(), specific)?,
        label_idx.map(|_| labels),
    )
}

/// Sidecar written next to a matrix file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub version: String,
    pub domain: Domain,
    pub schema: FeatureSchema,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".schema.toml");
    path.with_file_name(name)
}

/// Writes the matrix as CSV (header row, schema column order, label column last if present)
/// plus a `<file>.schema.toml` sidecar. Values round-trip bit-exactly.
pub fn write_csv(matrix: &DomainMatrix, path: &Path) -> Result<()> {
    let mut schema = matrix.schema.clone();
    let label_name = schema.label_column.clone().unwrap_or_else(|| "label".into());
    if matrix.labels.is_some() {
        schema.label_column = Some(label_name.clone());
        schema.positive_value = Some("1".into());
    }
    let mut writer = csv::Writer::from_path(path).map_err(read_error(path))?;
    let mut header: Vec<&str> = matrix.column_names();
    if matrix.labels.is_some() {
        header.push(&label_name);
    }
    writer.write_record(&header)?;
    for i in 0..matrix.rows() {
        let mut record: Vec<String> = matrix
            .common
            .row(i)
            .iter()
            .chain(matrix.specific.row(i))
            .map(|v| v.to_string())
            .collect();
        if let Some(labels) = &matrix.labels {
            record.push(if labels[i] == Class::Positive { "1" } else { "0" }.into());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = MatrixSidecar {
        version: crate::VERSION.into(),
        domain: matrix.domain,
        schema,
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

/// Reads a matrix written by [`write_csv`] using its sidecar.
pub fn read_csv_with_sidecar(path: &Path) -> Result<DomainMatrix> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: MatrixSidecar = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    load_csv(path, &sidecar.schema, sidecar.domain)
}

/// One `(user, item, rating)` triple.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

/// Genre roles for aggregation. The label genre is never emitted as a feature.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenreAssignment {
    pub common: Vec<String>,
    pub source_specific: Vec<String>,
    pub target_specific: Vec<String>,
    pub label_genre: String,
}

#[derive(Clone, Debug)]
pub struct AggregatedRatings {
    pub matrix: DomainMatrix,
    /// User identifiers in row order.
    pub users: Vec<String>,
    pub skipped_users: usize,
}

/// Per user and genre: mean rating of items tagged with the genre minus the
/// user's overall mean rating (0 when the user rated no such item). The label
/// is positive iff the label genre's deviation is strictly positive.
pub fn aggregate_ratings(
    ratings: &[Rating],
    genres: &HashMap<String, Vec<String>>,
    assignment: &GenreAssignment,
    domain: Domain,
) -> Result<AggregatedRatings> {
    let strip = |names: &[String]| -> Vec<String> {
        names
            .iter()
            .filter(|g| **g != assignment.label_genre)
            .cloned()
            .collect()
    };
    let schema = FeatureSchema {
        common: strip(&assignment.common),
        source_specific: strip(&assignment.source_specific),
        target_specific: strip(&assignment.target_specific),
        label_column: Some(assignment.label_genre.clone()),
        positive_value: None,
    };

    let mut per_user: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for r in ratings {
        if !genres.get(&r.item).is_some_and(|g| !g.is_empty()) {
            return Err(Error::InvalidInput(format!("item `{}` has no genre", r.item)));
        }
        per_user.entry(&r.user).or_default().push((&r.item, r.rating));
    }

    let mut users = Vec::new();
    let mut common = Vec::new();
    let mut specific = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for (user, mut items) in per_user {
        items.retain(|(_, r)| r.is_finite());
        if items.is_empty() {
            skipped += 1;
            continue;
        }
        // canonical order so sums do not depend on input order
        items.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
        let overall = items.iter().map(|(_, r)| r).sum::<f64>() / items.len() as f64;
        let deviation = |genre: &str| -> f64 {
            let (sum, n) = items
                .iter()
                .filter(|(item, _)| genres[*item].iter().any(|g| g == genre))
                .fold((0.0, 0usize), |(s, n), (_, r)| (s + r, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64 - overall
            }
        };
        users.push(user.to_string());
        common.extend(schema.common.iter().map(|g| deviation(g)));
        specific.extend(schema.specific(domain).iter().map(|g| deviation(g)));
        labels.push(if deviation(&assignment.label_genre) > 0.0 {
            Class::Positive
        } else {
            Class::Negative
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} users without usable ratings");
    }
    let n = users.len();
    let matrix = DomainMatrix::new(
        domain,
        schema.clone(),
        DenseMatrix::new(n, schema.common_dim(), common)?,
        DenseMatrix::new(n, schema.specific(domain).len(), specific)?,
        Some(labels),
    )?;
    Ok(AggregatedRatings {
        matrix,
        users,
        skipped_users: skipped,
    })
}

/// Reads `user,item,rating` triples (header row required).
pub fn load_ratings(path: &Path) -> Result<Vec<Rating>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_error(path))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(row, r)| {
            r.map_err(|e| Error::Data {
                row,
                column: "rating".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads `item,genres` rows with `|`-separated genres (header row required).
pub fn load_item_genres(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_error(path))?;
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(read_error(path))?;
        let item = record.get(0).unwrap_or("").to_string();
        let genres = record
            .get(1)
            .unwrap_or("")
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(String::from)
            .collect();
        out.insert(item, genres);
    }
    Ok(out)
}

/// Train/validation/test fractions and shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Row indices of a shuffled train/validation/test partition, stratified by
/// label when labels are given.
pub fn split_indices(
    n: usize,
    labels: Option<&[Class]>,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = RngSeed(spec.seed).rng();
    let groups: Vec<Vec<usize>> = match labels {
        Some(labels) => [Class::Positive, Class::Negative]
            .iter()
            .map(|c| (0..n).filter(|&i| labels[i] == *c).collect())
            .collect(),
        None => vec![(0..n).collect()],
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        rng.shuffle(&mut group);
        let n = group.len();
        let n_train = ((spec.train * n as f64).round() as usize).min(n);
        let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);
        train.extend_from_slice(&group[..n_train]);
        val.extend_from_slice(&group[n_train..n_train + n_val]);
        test.extend_from_slice(&group[n_train + n_val..]);
    }
    for (name, part) in [("train", &mut train), ("validation", &mut val), ("test", &mut test)] {
        if part.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
        rng.shuffle(part);
    }
    Ok((train, val, test))
}

/// Shuffled train/validation/test partition, stratified by label when labels exist.
pub fn split(matrix: &DomainMatrix, spec: &SplitSpec) -> Result<(DomainMatrix, DomainMatrix, DomainMatrix)> {
    let (train, val, test) = split_indices(matrix.rows(), matrix.labels(), spec)?;
    Ok((
        matrix.select_rows(&train),
        matrix.select_rows(&val),
        matrix.select_rows(&test),
    ))
}

/// Per-column z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ColumnScaler {
    /// Zero-variance columns get unit scale.
    pub fn fit(x: &DenseMatrix) -> Self {
        let means = x.column_means();
        let mut vars = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for ((v, xi), m) in vars.iter_mut().zip(row).zip(&means) {
                *v += (xi - m).powi(2);
            }
        }
        let n = x.rows().max(1) as f64;
        let stds = vars
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, stds }
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.means.len() {
            return Err(Error::InvalidInput("scaler width mismatch".into()));
        }
        let cols = x.cols();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.means[i % cols]) / self.stds[i % cols])
            .collect();
        DenseMatrix::new(x.rows(), cols, values)
    }
}

/// Z-scoring for a source/target pair.
///
/// Common columns use target training statistics for both domains so the
/// positive-only source keeps its offset relative to the target mixture.
/// Each domain-specific block uses its own domain's training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStandardizer {
    pub common: ColumnScaler,
    pub source_specific: ColumnScaler,
    pub target_specific: ColumnScaler,
}

impl DomainStandardizer {
    pub fn fit(source: &DomainMatrix, target_train: &DomainMatrix) -> Self {
        Self {
            common: ColumnScaler::fit(target_train.common()),
            source_specific: ColumnScaler::fit(source.specific()),
            target_specific: ColumnScaler::fit(target_train.specific()),
        }
    }

    pub fn apply(&self, matrix: &DomainMatrix) -> Result<DomainMatrix> {
        let specific = match matrix.domain() {
            Domain::Source => &self.source_specific,
            Domain::Target => &self.target_specific,
        };
        Ok(matrix.with_blocks(
            self.common.apply(matrix.common())?,
            specific.apply(matrix.specific())?,
        ))
    }
}

/// Knobs of the synthetic PU-HDA generator.
///
/// With `s = +1/-1` the label sign, `u, u'` independent standard normal latents,
/// and fixed random unit directions `a_*` and loadings `A_*`:
///
/// ```text
/// common          = common_signal * s * a_c + A_c u + noise
/// source-specific = source_signal * s * a_s + A_s u + noise
/// target-specific = target_signal * s * a_t + A_t (rho u + sqrt(1 - rho^2) u') + noise
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub common: usize,
    pub source_specific: usize,
    pub target_specific: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub positive_ratio: f64,
    pub common_signal: f64,
    pub source_signal: f64,
    pub target_signal: f64,
    /// Coupling `rho` between the target-specific and source-specific latents.
    pub coupling: f64,
    pub latent_dim: usize,
    pub loading_scale: f64,
    pub noise: f64,
    /// Held-out rows used to estimate the Bayes-oracle accuracy.
    pub oracle_rows: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            common: 4,
            source_specific: 6,
            target_specific: 6,
            n_source: 2000,
            n_target: 4000,
            positive_ratio: 0.5,
            common_signal: 0.35,
            source_signal: 1.2,
            target_signal: 1.2,
            coupling: 0.8,
            latent_dim: 3,
            loading_scale: 0.6,
            noise: 0.6,
            oracle_rows: 20_000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return Err(Error::Config("positive_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config("coupling must lie in [0, 1]".into()));
        }
        if self.source_specific == 0 || self.target_specific == 0 {
            return Err(Error::Config("domain-specific blocks need at least one column".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        let positives = (self.positive_ratio * self.n_target as f64).round() as usize;
        if positives < 10 || self.n_target.saturating_sub(positives) < 10 {
            return Err(Error::Config(format!(
                "positive_ratio {} leaves fewer than 10 samples of a class among {} target rows",
                self.positive_ratio, self.n_target
            )));
        }
        if self.n_source < 10 {
            return Err(Error::Config("n_source must be at least 10".into()));
        }
        for v in [
            self.common_signal,
            self.source_signal,
            self.target_signal,
            self.loading_scale,
            self.noise,
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config("signal, loading and noise scales must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect();
        FeatureSchema {
            common: names("c", self.common),
            source_specific: names("s", self.source_specific),
            target_specific: names("t", self.target_specific),
            label_column: Some("label".into()),
            positive_value: None,
        }
    }
}

/// Feature blocks for the synthetic generator's Bayes oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Common,
    SourceSpecific,
    TargetSpecific,
}

/// All three blocks drawn for the same rows.
#[derive(Clone, Debug)]
pub struct FullSample {
    pub labels: Vec<Class>,
    pub common: DenseMatrix,
    pub source_specific: DenseMatrix,
    pub target_specific: DenseMatrix,
}

impl FullSample {
    fn block(&self, b: Block) -> &DenseMatrix {
        match b {
            Block::Common => &self.common,
            Block::SourceSpecific => &self.source_specific,
            Block::TargetSpecific => &self.target_specific,
        }
    }

    fn select(&self, blocks: &[Block]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.labels.len(), 0);
        for b in blocks {
            out = out.hstack(self.block(*b)).expect("equal rows");
        }
        out
    }
}

/// Fixed generative parameters drawn from a [`SyntheticSpec`].
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    directions: [Vec<f64>; 3],
    loadings: [DenseMatrix; 3],
}

fn unit_vector(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl SyntheticGenerator {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngSeed(spec.seed).derive(0).rng();
        let dims = [spec.common, spec.source_specific, spec.target_specific];
        let directions = dims.map(|d| unit_vector(&mut rng, d));
        let k = spec.latent_dim;
        let scale = spec.loading_scale / (k as f64).sqrt();
        let loadings = dims.map(|d| {
            DenseMatrix::new(d, k, (0..d * k).map(|_| scale * rng.normal()).collect())
                .expect("finite loadings")
        });
        Ok(Self {
            spec: spec.clone(),
            directions,
            loadings,
        })
    }

    fn signal(&self, b: Block) -> f64 {
        match b {
            Block::Common => self.spec.common_signal,
            Block::SourceSpecific => self.spec.source_signal,
            Block::TargetSpecific => self.spec.target_signal,
        }
    }

    fn index(b: Block) -> usize {
        match b {
            Block::Common => 0,
            Block::SourceSpecific => 1,
            Block::TargetSpecific => 2,
        }
    }

    /// Latent loading of `b` on `(u, u')`, as a `dim x 2k` matrix.
    fn latent_loading(&self, b: Block) -> DMatrix<f64> {
        let a = &self.loadings[Self::index(b)];
        let k = self.spec.latent_dim;
        let rho = self.spec.coupling;
        let (on_u, on_u2) = match b {
            Block::TargetSpecific => (rho, (1.0 - rho * rho).max(0.0).sqrt()),
            _ => (1.0, 0.0),
        };
        DMatrix::from_fn(a.rows(), 2 * k, |i, j| {
            if j < k {
                on_u * a.get(i, j)
            } else {
                on_u2 * a.get(i, j - k)
            }
        })
    }

    /// Draws `labels.len()` rows with the given labels.
    pub fn sample_with_labels(&self, labels: Vec<Class>, rng: &mut SeededRng) -> FullSample {
        let n = labels.len();
        let k = self.spec.latent_dim;
        let rho = self.spec.coupling;
        let rho2 = (1.0 - rho * rho).max(0.0).sqrt();
        let mut blocks: [Vec<f64>; 3] = Default::default();
        for &label in &labels {
            let sign = if label == Class::Positive { 1.0 } else { -1.0 };
            let u: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let u2: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            for b in [Block::Common, Block::SourceSpecific, Block::TargetSpecific] {
                let bi = Self::index(b);
                let a = &self.loadings[bi];
                let dir = &self.directions[bi];
                for (i, d) in dir.iter().enumerate() {
                    let mut v = self.signal(b) * sign * d + self.spec.noise * rng.normal();
                    for j in 0..k {
                        let latent = match b {
                            Block::TargetSpecific => rho * u[j] + rho2 * u2[j],
                            _ => u[j],
                        };
                        v += a.get(i, j) * latent;
                    }
                    blocks[bi].push(v);
                }
            }
        }
        let [c, s, t] = blocks;
        FullSample {
            labels,
            common: DenseMatrix::new(n, self.spec.common, c).expect("finite"),
            source_specific: DenseMatrix::new(n, self.spec.source_specific, s).expect("finite"),
            target_specific: DenseMatrix::new(n, self.spec.target_specific, t).expect("finite"),
        }
    }

    /// Exactly `round(prior * n)` positives in shuffled order.
    pub fn sample(&self, n: usize, prior: f64, rng: &mut SeededRng) -> FullSample {
        let positives = (prior * n as f64).round() as usize;
        let mut labels: Vec<Class> = (0..n)
            .map(|i| if i < positives { Class::Positive } else { Class::Negative })
            .collect();
        rng.shuffle(&mut labels);
        self.sample_with_labels(labels, rng)
    }

    /// Linear discriminant `(w, b)` of the Bayes rule on `blocks` under class prior `prior`.
    ///
    /// Classes share the covariance `L L^T + noise^2 I`, so the rule is
    /// `w^T x + b > 0` with `w = Sigma^{-1} (mu_+ - mu_-)` and `b = ln(prior / (1 - prior))`.
    pub fn bayes_rule(&self, blocks: &[Block], prior: f64) -> (Vec<f64>, f64) {
        let mut mean = Vec::new();
        let mut rows: Vec<DMatrix<f64>> = Vec::new();
        for &b in blocks {
            let dir = &self.directions[Self::index(b)];
            mean.extend(dir.iter().map(|d| 2.0 * self.signal(b) * d));
            rows.push(self.latent_loading(b));
        }
        let dim = mean.len();
        let k2 = 2 * self.spec.latent_dim;
        let mut loading = DMatrix::zeros(dim, k2);
        let mut offset = 0;
        for r in rows {
            loading.view_mut((offset, 0), (r.nrows(), k2)).copy_from(&r);
            offset += r.nrows();
        }
        let noise2 = self.spec.noise * self.spec.noise;
        let cov = &loading * loading.transpose() + DMatrix::identity(dim, dim) * noise2.max(1e-12);
        let delta = DVector::from_vec(mean);
        let w = cov
            .cholesky()
            .map(|ch| ch.solve(&delta))
            .unwrap_or_else(|| delta.clone());
        (w.iter().copied().collect(), (prior / (1.0 - prior)).ln())
    }

    /// Empirical accuracy of the Bayes rule on fresh target-distribution rows.
    pub fn oracle_accuracy(&self, blocks: &[Block], rows: usize, prior: f64, seed: RngSeed) -> f64 {
        let mut rng = seed.rng();
        let sample = self.sample(rows, prior, &mut rng);
        let (w, b) = self.bayes_rule(blocks, prior);
        let x = sample.select(blocks);
        let correct = x
            .row_iter()
            .zip(&sample.labels)
            .filter(|(row, label)| {
                let score: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                (score > 0.0) == (**label == Class::Positive)
            })
            .count();
        correct as f64 / rows.max(1) as f64
    }
}

/// Output of [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// Positive rows only, `[S_c; S_s]`.
    pub source: DomainMatrix,
    /// `[T_c; T_t]` with hidden labels.
    pub target: DomainMatrix,
    /// Source-specific features the target rows would have had; only for analytics.
    pub target_source_view: DenseMatrix,
    /// Bayes-oracle accuracy on target rows from common + target-specific features.
    pub oracle_accuracy: f64,
    /// Bayes-oracle accuracy from common features alone.
    pub common_oracle_accuracy: f64,
}

/// Draws a source/target pair from the synthetic generator.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let generator = SyntheticGenerator::new(spec)?;
    let schema = spec.schema();
    let root = RngSeed(spec.seed);

    let mut rng = root.derive(1).rng();
    let source = generator.sample_with_labels(vec![Class::Positive; spec.n_source], &mut rng);
    let mut rng = root.derive(2).rng();
    let target = generator.sample(spec.n_target, spec.positive_ratio, &mut rng);

    let oracle_seed = root.derive(3);
    let oracle_accuracy = generator.oracle_accuracy(
        &[Block::Common, Block::TargetSpecific],
        spec.oracle_rows,
        spec.positive_ratio,
        oracle_seed,
    );
    let common_oracle_accuracy =
        generator.oracle_accuracy(&[Block::Common], spec.oracle_rows, spec.positive_ratio, oracle_seed);

    Ok(SyntheticData {
        source: DomainMatrix::new(
            Domain::Source,
            schema.clone(),
            source.common,
            source.source_specific,
            Some(source.labels),
        )?,
        target: DomainMatrix::new(
            Domain::Target,
            schema,
            target.common,
            target.target_specific,
            Some(target.labels),
        )?,
        target_source_view: target.source_specific,
        oracle_accuracy,
        common_oracle_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn schema() -> FeatureSchema {
        FeatureSchema {
            common: vec!["a".into()],
            source_specific: vec!["s".into()],
            target_specific: vec!["t1".into(), "t2".into()],
            label_column: Some("y".into()),
            positive_value: Some("yes".into()),
        }
    }

    fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_csv_keeps_schema_order_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "t.csv",
            "t2,y,a,extra,t1\n1,yes,2,x,3\n4,no,5,x,6\n7,yes,8,x,9\n",
        );
        let m = load_csv(&path, &schema(), Domain::Target).unwrap();
        assert_eq!(m.rows(), 3);
        assert_eq!(m.common().column(0), vec![2.0, 5.0, 8.0]);
        assert_eq!(m.specific().row(1), &[6.0, 4.0]);
        assert_eq!(
            m.labels().unwrap(),
            &[Class::Positive, Class::Negative, Class::Positive]
        );
    }

    #[test]
    fn load_csv_names_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "s.csv", "a,y\n1,yes\n");
        match load_csv(&path, &schema(), Domain::Source) {
            Err(Error::MissingColumn { column }) => assert_eq!(column, "s"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_csv_reports_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "s.csv", "a,s\n1,2\n3,oops\n");
        match load_csv(&path, &schema(), Domain::Source) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "s");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_rejects_overlap() {
        let mut s = schema();
        s.target_specific.push("a".into());
        assert!(s.validate().is_err());
        assert!(schema().validate().is_ok());
    }

    fn rating(user: &str, item: &str, rating: f64) -> Rating {
        Rating {
            user: user.into(),
            item: item.into(),
            rating,
        }
    }

    fn genre_map() -> HashMap<String, Vec<String>> {
        [
            ("m1", "Adventure"),
            ("m2", "Adventure"),
            ("m3", "Drama"),
            ("m4", "Drama"),
            ("m5", "Comedy|Drama"),
        ]
        .iter()
        .map(|(i, g)| (i.to_string(), g.split('|').map(String::from).collect()))
        .collect()
    }

    fn assignment() -> GenreAssignment {
        GenreAssignment {
            common: vec!["Adventure".into(), "Drama".into()],
            source_specific: vec!["Comedy".into()],
            target_specific: vec!["Horror".into()],
            label_genre: "Adventure".into(),
        }
    }

    #[test]
    fn aggregation_hand_example() {
        let ratings = vec![
            rating("u1", "m1", 5.0),
            rating("u1", "m2", 5.0),
            rating("u1", "m3", 3.0),
            rating("u1", "m4", 3.0),
        ];
        let out = aggregate_ratings(&ratings, &genre_map(), &assignment(), Domain::Target).unwrap();
        let m = &out.matrix;
        // label genre removed from the common block
        assert_eq!(m.schema().common, vec!["Drama".to_string()]);
        assert_abs_diff_eq!(m.common().get(0, 0), -1.0, epsilon = 1e-12);
        // Horror never rated
        assert_eq!(m.specific().get(0, 0), 0.0);
        assert_eq!(m.labels().unwrap(), &[Class::Positive]);
    }

    #[test]
    fn constant_rater_is_negative() {
        let ratings: Vec<Rating> = ["m1", "m3", "m5"].iter().map(|i| rating("u", i, 4.0)).collect();
        let out = aggregate_ratings(&ratings, &genre_map(), &assignment(), Domain::Source).unwrap();
        assert!(out.matrix.features().values().iter().all(|v| *v == 0.0));
        assert_eq!(out.matrix.labels().unwrap(), &[Class::Negative]);
    }

    #[test]
    fn aggregation_ignores_triple_order() {
        let mut ratings = vec![
            rating("u1", "m1", 4.5),
            rating("u2", "m3", 1.0),
            rating("u1", "m5", 2.0),
            rating("u2", "m2", 3.5),
            rating("u1", "m3", 3.1),
        ];
        let a = aggregate_ratings(&ratings, &genre_map(), &assignment(), Domain::Source).unwrap();
        ratings.reverse();
        let b = aggregate_ratings(&ratings, &genre_map(), &assignment(), Domain::Source).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.users, b.users);
    }

    #[test]
    fn aggregation_rejects_unknown_item() {
        let ratings = vec![rating("u1", "nope", 4.0)];
        assert!(aggregate_ratings(&ratings, &genre_map(), &assignment(), Domain::Source).is_err());
    }

    fn labelled(n: usize, positives: usize) -> DomainMatrix {
        let s = SyntheticSpec::default().schema();
        let common = DenseMatrix::new(n, 4, (0..n * 4).map(|v| v as f64).collect()).unwrap();
        let specific = DenseMatrix::zeros(n, 6);
        let labels = (0..n)
            .map(|i| if i < positives { Class::Positive } else { Class::Negative })
            .collect();
        DomainMatrix::new(Domain::Target, s, common, specific, Some(labels)).unwrap()
    }

    #[test]
    fn split_sizes_and_stratification() {
        let m = labelled(100, 50);
        let spec = SplitSpec {
            seed: 3,
            ..Default::default()
        };
        let (train, val, test) = split(&m, &spec).unwrap();
        assert_eq!((train.rows(), val.rows(), test.rows()), (60, 20, 20));
        for part in [&train, &val, &test] {
            assert!((part.positive_fraction().unwrap() - 0.5).abs() <= 0.02);
        }
        let (train2, _, _) = split(&m, &spec).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_parts() {
        let m = labelled(100, 50);
        let bad = SplitSpec {
            train: 0.5,
            val: 0.2,
            test: 0.2,
            seed: 0,
        };
        assert!(split(&m, &bad).is_err());
        let tiny = labelled(2, 1);
        assert!(matches!(split(&tiny, &SplitSpec::default()), Err(Error::Config(_))));
    }

    #[test]
    fn standardizer_uses_target_common_stats() {
        let data = generate_synthetic(&SyntheticSpec {
            n_source: 200,
            n_target: 400,
            oracle_rows: 100,
            ..Default::default()
        })
        .unwrap();
        let st = DomainStandardizer::fit(&data.source, &data.target);
        let t = st.apply(&data.target).unwrap();
        for m in t.features().column_means() {
            assert!(m.abs() < 1e-9);
        }
        let s = st.apply(&data.source).unwrap();
        for m in s.specific().column_means() {
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn synthetic_source_is_positive_only() {
        let data = generate_synthetic(&SyntheticSpec {
            oracle_rows: 1000,
            ..Default::default()
        })
        .unwrap();
        assert!(data.source.labels().unwrap().iter().all(|c| *c == Class::Positive));
        assert!((data.target.positive_fraction().unwrap() - 0.5).abs() <= 0.02);
        assert_eq!(data.target_source_view.rows(), data.target.rows());
        assert!(data.oracle_accuracy >= data.common_oracle_accuracy - 0.02);
    }

    #[test]
    fn synthetic_is_reproducible() {
        let spec = SyntheticSpec {
            n_source: 50,
            n_target: 100,
            oracle_rows: 100,
            seed: 17,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.oracle_accuracy.to_bits(), b.oracle_accuracy.to_bits());
    }

    #[test]
    fn uninformative_target_block_has_chance_oracle() {
        let spec = SyntheticSpec {
            coupling: 0.0,
            target_signal: 0.0,
            ..Default::default()
        };
        let g = SyntheticGenerator::new(&spec).unwrap();
        let acc = g.oracle_accuracy(&[Block::TargetSpecific], 20_000, 0.5, RngSeed(1));
        assert!((acc - 0.5).abs() < 0.02, "{acc}");
    }

    #[test]
    fn infeasible_prior_rejected() {
        let spec = SyntheticSpec {
            n_target: 50,
            positive_ratio: 0.1,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let data = generate_synthetic(&SyntheticSpec {
            n_source: 30,
            n_target: 40,
            oracle_rows: 10,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("target.csv");
        write_csv(&data.target, &path).unwrap();
        let back = read_csv_with_sidecar(&path).unwrap();
        let bits = |m: &DomainMatrix| -> Vec<u64> { m.features().values().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back), bits(&data.target));
        assert_eq!(back.labels(), data.target.labels());
    }
}
