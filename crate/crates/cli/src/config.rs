//! Experiment configuration documents (TOML).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use pada_core::data::{
    aggregate_ratings, load_csv, load_item_genres, load_ratings, Domain, DomainMatrix, FeatureSchema,
    GenreAssignment, SplitSpec, SyntheticSpec,
};
use pada_core::experiment::{prepare, prepare_synthetic, Grid, PreparedSetting};
use pada_core::metrics::DiscriminationConfig;
use pada_core::objectives::Method;
use pada_core::trainers::TrainConfig;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "PADA_OUT_DIR";

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub methods: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub discrimination: DiscriminationConfig,
    #[serde(default)]
    pub settings: Vec<SettingConfig>,
    /// Directory relative paths are resolved against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub name: String,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default)]
    pub ratings: Option<RatingsSource>,
}

/// Source and target tables sharing one schema.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub source: PathBuf,
    pub target: PathBuf,
    pub schema: FeatureSchema,
}

/// Rating triples and item genres per domain.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingsSource {
    pub source_ratings: PathBuf,
    pub source_items: PathBuf,
    pub target_ratings: PathBuf,
    pub target_items: PathBuf,
    pub genres: GenreAssignment,
}

/// Where a setting's data comes from.
pub enum SettingSource<'a> {
    Synthetic(&'a SyntheticSpec),
    Csv(&'a CsvSource),
    Ratings(&'a RatingsSource),
}

impl SettingConfig {
    pub fn source(&self) -> Result<SettingSource<'_>> {
        match (&self.synthetic, &self.csv, &self.ratings) {
            (Some(s), None, None) => Ok(SettingSource::Synthetic(s)),
            (None, Some(c), None) => Ok(SettingSource::Csv(c)),
            (None, None, Some(r)) => Ok(SettingSource::Ratings(r)),
            _ => bail!(
                "settings `{}`: exactly one of `synthetic`, `csv`, `ratings` must be given",
                self.name
            ),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("`methods` must list at least one method");
        }
        self.parsed_methods()?;
        if self.seeds.is_empty() {
            bail!("`seeds` must not be empty");
        }
        if self.settings.is_empty() {
            bail!("at least one [[settings]] entry is required");
        }
        let mut names = HashSet::new();
        for s in &self.settings {
            if s.name.is_empty()
                || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            {
                bail!("settings.name `{}` must be non-empty and use only letters, digits, `-`, `_`, `.`", s.name);
            }
            if !names.insert(&s.name) {
                bail!("settings.name `{}` is used twice", s.name);
            }
            s.source()?;
        }
        self.split.validate().context("in [split]")?;
        self.training.validate().context("in [training]")?;
        self.grid.validate().context("in [grid]")?;
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| Method::parse(m).with_context(|| format!("in `methods`: `{m}`")))
            .collect()
    }

    /// `--out` flag, then the environment override, then `out_dir`, then `./pada-out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV) {
            return PathBuf::from(p);
        }
        match &self.out_dir {
            Some(p) => self.resolve(p),
            None => PathBuf::from("pada-out"),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Loads a CSV or ratings setting as source and target matrices.
    pub fn load_domains(&self, setting: &SettingConfig) -> Result<(DomainMatrix, DomainMatrix)> {
        match setting.source()? {
            SettingSource::Synthetic(spec) => {
                let data = pada_core::data::generate_synthetic(spec)?;
                Ok((data.source, data.target))
            }
            SettingSource::Csv(c) => {
                c.schema.validate()?;
                let source = load_csv(&self.resolve(&c.source), &c.schema, Domain::Source)
                    .with_context(|| format!("loading {}", c.source.display()))?;
                let target = load_csv(&self.resolve(&c.target), &c.schema, Domain::Target)
                    .with_context(|| format!("loading {}", c.target.display()))?;
                // PU-HDA: only positive source rows are used when labels are present
                let source = match source.labels() {
                    Some(_) => source.rows_with_label(pada_core::Class::Positive)?,
                    None => source,
                };
                Ok((source, target))
            }
            SettingSource::Ratings(r) => {
                let load = |ratings: &Path, items: &Path, domain: Domain| -> Result<DomainMatrix> {
                    let triples = load_ratings(&self.resolve(ratings))
                        .with_context(|| format!("loading {}", ratings.display()))?;
                    let genres = load_item_genres(&self.resolve(items))
                        .with_context(|| format!("loading {}", items.display()))?;
                    let agg = aggregate_ratings(&triples, &genres, &r.genres, domain)?;
                    if agg.skipped_users > 0 {
                        log::warn!("{}: skipped {} users", ratings.display(), agg.skipped_users);
                    }
                    Ok(agg.matrix)
                };
                let source = load(&r.source_ratings, &r.source_items, Domain::Source)?
                    .rows_with_label(pada_core::Class::Positive)?;
                let target = load(&r.target_ratings, &r.target_items, Domain::Target)?;
                Ok((source, target))
            }
        }
    }

    pub fn prepare(&self, setting: &SettingConfig) -> Result<PreparedSetting> {
        let prepared = match setting.source()? {
            SettingSource::Synthetic(spec) => prepare_synthetic(&setting.name, spec, &self.split)?,
            _ => {
                let (source, target) = self.load_domains(setting)?;
                prepare(&setting.name, &source, &target, &self.split)?
            }
        };
        Ok(prepared)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
methods = ["COM_P", "PADA"]
[[settings]]
name = "toy"
[settings.synthetic]
n_source = 100
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.training.batch_size, 128);
        assert_eq!(c.parsed_methods().unwrap(), vec![Method::ComP, Method::Pada]);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = MINIMAL.replace("n_source = 100", "n_sources = 100");
        let err = format!("{:#}", ExperimentConfig::parse(&text).unwrap_err());
        assert!(err.contains("n_sources"), "{err}");
    }

    #[test]
    fn bad_learning_rate_is_named() {
        let text = format!("{MINIMAL}\n[training]\nlearning_rate = -1.0\n");
        let err = format!("{:#}", ExperimentConfig::parse(&text).unwrap_err());
        assert!(err.contains("training.learning_rate"), "{err}");
    }

    #[test]
    fn unknown_method_is_named() {
        let text = MINIMAL.replace("\"PADA\"", "\"PADX\"");
        let err = format!("{:#}", ExperimentConfig::parse(&text).unwrap_err());
        assert!(err.contains("PADX"), "{err}");
    }
}
