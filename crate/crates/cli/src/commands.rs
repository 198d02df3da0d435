//! Subcommand implementations. Every command writes plain CSV/text/JSON files
//! whose bytes depend only on the configuration and seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pada_core::data::write_csv;
use pada_core::experiment::{
    evaluate, space_discrimination, summarize, train_cell, GridCell, MethodRun, PreparedSetting,
};
use pada_core::metrics::{
    aligned_table, correlation_analytics, improvement_metrics, mean, reports_table, reports_to_csv,
    AnalyticsInput, DiscriminationConfig, EvalReport, FeatureAnalytics,
};
use pada_core::models::{Checkpoint, CheckpointModel};
use pada_core::objectives::Method;
use pada_core::trainers::{FeatureMap, TrainedArtifacts};

use crate::config::{ExperimentConfig, SettingSource};

/// Options shared by the commands that train models.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
}

/// Parses `"0,1,2"` or `"0..3"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        bail!("--seeds selects no seeds");
    }
    Ok(seeds)
}

struct Context_ {
    config: ExperimentConfig,
    out: PathBuf,
    seeds: Vec<u64>,
    pool: rayon::ThreadPool,
}

fn open(opts: &RunOptions) -> Result<Context_> {
    let config = ExperimentConfig::load(&opts.config)?;
    let out = config.output_dir(opts.out.as_deref());
    let seeds = opts.seeds.clone().unwrap_or_else(|| config.seeds.clone());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Context_ {
        config,
        out,
        seeds,
        pool,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Grid search for one method; cells and seeds run on the pool, results keep grid order.
fn search(ctx: &Context_, method: Method, setting: &PreparedSetting) -> Result<MethodRun> {
    let base = &ctx.config.training;
    let cells = ctx.config.grid.cells(method, base);
    let tasks: Vec<(GridCell, u64)> = cells
        .iter()
        .flat_map(|&c| ctx.seeds.iter().map(move |&s| (c, s)))
        .collect();
    log::info!("{}: {} on {} runs", setting.name, method, tasks.len());
    let outcomes = ctx.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cell, seed)| train_cell(method, &setting.view, base, cell, seed))
            .collect()
    });
    Ok(summarize(method, &cells, outcomes)?)
}

fn grid_csv(run: &MethodRun) -> String {
    let mut s = String::from("learning_rate,lambda,eta,mean_validation,failures,selected\n");
    for c in &run.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.cell.learning_rate,
            c.cell.lambda,
            c.cell.eta,
            c.mean_validation,
            c.failures.len(),
            c.cell == run.selected
        );
    }
    s
}

fn save_artifacts(dir: &Path, method: Method, seed: u64, art: &TrainedArtifacts) -> Result<()> {
    let stem = format!("{}_seed{seed}", method.name());
    write(&dir.join("telemetry").join(format!("{stem}.csv")), art.trace.to_csv())?;
    if !art.round_validation.is_empty() {
        let mut s = String::from("round,validation_accuracy,selected\n");
        for (i, v) in art.round_validation.iter().enumerate() {
            let _ = writeln!(s, "{i},{v},{}", i == art.selected_round);
        }
        write(&dir.join("telemetry").join(format!("{stem}_rounds.csv")), s)?;
    }
    let mut models = vec![("classifier", CheckpointModel::LinearSoftmax(art.classifier.clone()))];
    if let Some(m) = &art.discriminator {
        models.push(("discriminator", CheckpointModel::LinearSoftmax(m.clone())));
    }
    if let Some(m) = &art.domain_discriminator {
        models.push(("domain_discriminator", CheckpointModel::LinearSoftmax(m.clone())));
    }
    if let Some(t) = &art.transform {
        models.push(("transform", CheckpointModel::LinearTransform(t.clone())));
    }
    if let Some(d) = &art.dsft {
        models.push(("source_map", CheckpointModel::LinearTransform(d.source_map.clone())));
        models.push(("target_map", CheckpointModel::LinearTransform(d.target_map.clone())));
    }
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    for (role, model) in models {
        Checkpoint::new(model).save(&ckpt_dir.join(format!("{stem}_{role}.json")))?;
    }
    Ok(())
}

/// Correlation analytics on the target training rows with their hidden labels.
fn analytics(setting: &PreparedSetting, reports: &[EvalReport]) -> Result<FeatureAnalytics> {
    let c = setting.view.common_dim;
    let t = &setting.view.target;
    let acc = |m: Method| reports.iter().find(|r| r.method == m.name()).map(EvalReport::mean_accuracy);
    let accuracies = match (acc(Method::ComP), acc(Method::Dist), acc(Method::PadaS)) {
        (Some(a), Some(b), Some(d)) if a < 1.0 => Some((a, b, d)),
        _ => None,
    };
    Ok(correlation_analytics(AnalyticsInput {
        target_common: &t.select_columns(0, c),
        target_specific: &t.select_columns(c, t.cols()),
        labels: &setting.train_labels,
        source_specific_view: setting.train_source_view.as_ref(),
        common_names: &setting.schema.common,
        target_names: &setting.schema.target_specific,
        accuracies,
    })?)
}

/// Top-level record of a `run`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub settings: Vec<String>,
    /// `setting/method` to error message, for methods whose every grid cell failed.
    pub failures: BTreeMap<String, String>,
}

/// Trains, selects, and evaluates every configured method on every setting.
pub fn run(opts: &RunOptions) -> Result<Manifest> {
    let ctx = open(opts)?;
    let methods = ctx.config.parsed_methods()?;
    let mut comparison = Vec::new();
    let mut failures = BTreeMap::new();
    for setting_cfg in &ctx.config.settings {
        let setting = ctx.config.prepare(setting_cfg)?;
        let dir = ctx.out.join(&setting.name);
        let mut reports = Vec::new();
        let mut selection = String::from("method,learning_rate,lambda,eta,mean_validation\n");
        for &method in &methods {
            let run = match search(&ctx, method, &setting) {
                Ok(r) => r,
                Err(e) => {
                    log::error!("{}/{}: {e:#}", setting.name, method);
                    failures.insert(format!("{}/{}", setting.name, method), format!("{e:#}"));
                    continue;
                }
            };
            write(&dir.join("reports").join(format!("grid_{}.csv", method.name())), grid_csv(&run))?;
            let _ = writeln!(
                selection,
                "{},{},{},{},{}",
                method.name(),
                run.selected.learning_rate,
                run.selected.lambda,
                run.selected.eta,
                run.mean_validation()
            );
            for (seed, art, _) in &run.models {
                save_artifacts(&dir, method, *seed, art)?;
            }
            let report = evaluate(&run, &setting.test)?;
            write(
                &dir.join("reports").join(format!("{}.csv", method.name())),
                reports_to_csv(std::slice::from_ref(&report)),
            )?;
            reports.push(report);
        }
        write(&dir.join("reports/selection.csv"), selection)?;
        write(&dir.join("reports/summary.csv"), reports_to_csv(&reports))?;
        write(&dir.join("reports/summary.txt"), reports_table(&reports))?;
        write_json(&dir.join("reports/analytics.json"), &analytics(&setting, &reports)?)?;
        comparison.extend(reports.into_iter().map(|r| (setting.name.clone(), r)));
    }
    write_comparison(&ctx.out, &comparison)?;
    let manifest = Manifest {
        name: ctx.config.name.clone(),
        version: pada_core::VERSION.to_string(),
        seeds: ctx.seeds.clone(),
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        settings: ctx.config.settings.iter().map(|s| s.name.clone()).collect(),
        failures,
    };
    write_json(&ctx.out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_comparison(out: &Path, rows: &[(String, EvalReport)]) -> Result<()> {
    let mut csv = String::from("setting,method,accuracy,auc,seeds\n");
    let mut table = Vec::new();
    for (setting, r) in rows {
        let auc = r.mean_auc();
        let _ = writeln!(
            csv,
            "{setting},{},{},{},{}",
            r.method,
            r.mean_accuracy(),
            auc.map(|a| a.to_string()).unwrap_or_default(),
            r.accuracy.len()
        );
        table.push(vec![
            setting.clone(),
            r.method.clone(),
            format!("{:.2}", 100.0 * r.mean_accuracy()),
            auc.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_else(|| "-".into()),
        ]);
    }
    write(&out.join("comparison.csv"), csv)?;
    write(
        &out.join("comparison.txt"),
        aligned_table(&["setting", "method", "accuracy(%)", "auc(%)"], &table),
    )
}

/// Mean accuracy (fraction) per `(setting, method)` from a CSV with
/// `setting`, `method`, `accuracy` columns. Values above 1 are read as percentages.
pub fn read_accuracies(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    #[derive(Deserialize)]
    struct Row {
        setting: String,
        method: String,
        accuracy: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row: Row = record
            .deserialize(Some(&headers))
            .with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let acc = if row.accuracy > 1.0 { row.accuracy / 100.0 } else { row.accuracy };
        let method = Method::parse(&row.method).map(|m| m.name().to_string()).unwrap_or(row.method);
        out.insert((row.setting, method), acc);
    }
    Ok(out)
}

/// One line of the improvement/correlation analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub setting: String,
    pub acc_com: f64,
    pub acc_dist: f64,
    pub acc_pada_s: f64,
    pub p_dist: f64,
    pub p_pada_s: f64,
    pub corr_tar_lab: Option<f64>,
    pub corr_com_lab: Option<f64>,
    pub r_tar_com: Option<f64>,
    pub corr_tar_sou: Option<f64>,
}

/// Improvement ratios from `<out>/comparison.csv` (or `accuracies`) joined with
/// each setting's saved correlation analytics.
pub fn analyze(out: &Path, accuracies: Option<&Path>) -> Result<Vec<AnalysisRow>> {
    let source = accuracies.map(Path::to_path_buf).unwrap_or_else(|| out.join("comparison.csv"));
    let accs = read_accuracies(&source)?;
    let mut settings: Vec<&String> = accs.keys().map(|k| &k.0).collect();
    settings.dedup();
    let mut rows = Vec::new();
    for setting in settings {
        let get = |m: Method| {
            accs.get(&(setting.clone(), m.name().to_string()))
                .copied()
                .ok_or_else(|| anyhow!("setting `{setting}` has no {} accuracy in {}", m.name(), source.display()))
        };
        let (com, dist, pada_s) = (get(Method::ComP)?, get(Method::Dist)?, get(Method::PadaS)?);
        let (p_dist, p_pada_s) =
            improvement_metrics(com, dist, pada_s).with_context(|| format!("setting `{setting}`"))?;
        let analytics_path = out.join(setting).join("reports/analytics.json");
        let analytics: Option<FeatureAnalytics> = match fs::read_to_string(&analytics_path) {
            Ok(text) => Some(serde_json::from_str(&text).with_context(|| analytics_path.display().to_string())?),
            Err(_) => None,
        };
        rows.push(AnalysisRow {
            setting: setting.clone(),
            acc_com: com,
            acc_dist: dist,
            acc_pada_s: pada_s,
            p_dist,
            p_pada_s,
            corr_tar_lab: analytics.as_ref().map(|a| a.corr_tar_lab),
            corr_com_lab: analytics.as_ref().map(|a| a.corr_com_lab),
            r_tar_com: analytics.as_ref().map(|a| a.r_tar_com),
            corr_tar_sou: analytics.as_ref().and_then(|a| a.corr_tar_sou),
        });
    }
    if rows.is_empty() {
        bail!("{} lists no accuracies", source.display());
    }
    let opt = |v: Option<f64>, digits: usize| v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into());
    let mut csv = String::from(
        "setting,acc_com,acc_dist,acc_pada_s,p_dist,p_pada_s,corr_tar_lab,corr_com_lab,r_tar_com,corr_tar_sou\n",
    );
    let raw = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut table = Vec::new();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.setting,
            r.acc_com,
            r.acc_dist,
            r.acc_pada_s,
            r.p_dist,
            r.p_pada_s,
            raw(r.corr_tar_lab),
            raw(r.corr_com_lab),
            raw(r.r_tar_com),
            raw(r.corr_tar_sou)
        );
        table.push(vec![
            r.setting.clone(),
            format!("{:.3}", r.p_dist),
            format!("{:.3}", r.p_pada_s),
            opt(r.corr_tar_lab, 3),
            opt(r.corr_com_lab, 3),
            opt(r.r_tar_com, 2),
            opt(r.corr_tar_sou, 3),
        ]);
    }
    write(&out.join("analysis.csv"), csv)?;
    write(
        &out.join("analysis.txt"),
        aligned_table(
            &["setting", "P_dist", "P_pada_s", "corr_tar_lab", "corr_com_lab", "R_tar/com", "corr_tar_sou"],
            &table,
        ),
    )?;
    Ok(rows)
}

/// Accuracy and domain discrimination of the ablation pair on one setting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub acc_pada: f64,
    pub acc_pada_f: f64,
    /// `(pp, pn)` pairs in the common, PADA, and PADA_F spaces.
    pub common: (f64, f64),
    pub pada: (f64, f64),
    pub pada_f: (f64, f64),
}

fn mean_pair(v: &[(f64, f64)]) -> (f64, f64) {
    (
        mean(&v.iter().map(|p| p.0).collect::<Vec<_>>()),
        mean(&v.iter().map(|p| p.1).collect::<Vec<_>>()),
    )
}

/// Trains PADA and PADA_F and measures how well a fresh discriminator tells
/// source positives from target positives (pp) and target negatives (pn) on the test rows.
pub fn ablate(opts: &RunOptions) -> Result<Vec<AblationRow>> {
    let ctx = open(opts)?;
    let disc = &ctx.config.discrimination;
    let mut rows = Vec::new();
    for setting_cfg in &ctx.config.settings {
        let setting = ctx.config.prepare(setting_cfg)?;
        let pada = search(&ctx, Method::Pada, &setting)?;
        let pada_f = search(&ctx, Method::PadaF, &setting)?;
        let acc_pada = evaluate(&pada, &setting.test)?.mean_accuracy();
        let acc_pada_f = evaluate(&pada_f, &setting.test)?.mean_accuracy();
        let test = setting.test.open();
        let common_map = FeatureMap::Common {
            common_dim: setting.view.common_dim,
        };
        let space = |map: &FeatureMap, seed: u64| -> Result<(f64, f64)> {
            let cfg = DiscriminationConfig { seed, ..disc.clone() };
            Ok(space_discrimination(map, &setting.view.source, test, &cfg)?)
        };
        let mut common = Vec::new();
        for &seed in &ctx.seeds {
            common.push(space(&common_map, seed)?);
        }
        let per_model = |run: &MethodRun| -> Result<Vec<(f64, f64)>> {
            run.models.iter().map(|(seed, art, _)| space(&art.feature_map, *seed)).collect()
        };
        rows.push(AblationRow {
            setting: setting.name.clone(),
            acc_pada,
            acc_pada_f,
            common: mean_pair(&common),
            pada: mean_pair(&per_model(&pada)?),
            pada_f: mean_pair(&per_model(&pada_f)?),
        });
    }
    let avg = |f: &dyn Fn(&AblationRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    let average = AblationRow {
        setting: "Average".into(),
        acc_pada: avg(&|r| r.acc_pada),
        acc_pada_f: avg(&|r| r.acc_pada_f),
        common: (avg(&|r| r.common.0), avg(&|r| r.common.1)),
        pada: (avg(&|r| r.pada.0), avg(&|r| r.pada.1)),
        pada_f: (avg(&|r| r.pada_f.0), avg(&|r| r.pada_f.1)),
    };
    rows.push(average);
    let mut csv = String::from("setting,acc_pada,acc_pada_f,common_pp,common_pn,pada_pp,pada_pn,pada_f_pp,pada_f_pn\n");
    let mut table = Vec::new();
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.setting, r.acc_pada, r.acc_pada_f, r.common.0, r.common.1, r.pada.0, r.pada.1, r.pada_f.0, r.pada_f.1
        );
        table.push(vec![
            r.setting.clone(),
            pct(r.acc_pada),
            pct(r.acc_pada_f),
            pct(r.common.0),
            pct(r.common.1),
            pct(r.pada.0),
            pct(r.pada.1),
            pct(r.pada_f.0),
            pct(r.pada_f.1),
        ]);
    }
    write(&ctx.out.join("ablation.csv"), csv)?;
    write(
        &ctx.out.join("ablation.txt"),
        aligned_table(
            &["setting", "PADA", "PADA_F", "com pp", "com pn", "PADA pp", "PADA pn", "PADA_F pp", "PADA_F pn"],
            &table,
        ),
    )?;
    Ok(rows)
}

#[derive(Serialize)]
struct OracleInfo {
    oracle_accuracy: f64,
    common_oracle_accuracy: f64,
    source_rows: usize,
    target_rows: usize,
}

/// Writes each synthetic setting's source and target tables (with schema sidecars).
pub fn generate(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let ctx = open(opts)?;
    let mut written = Vec::new();
    for s in &ctx.config.settings {
        let SettingSource::Synthetic(spec) = s.source()? else {
            continue;
        };
        let data = pada_core::data::generate_synthetic(spec)?;
        let dir = ctx.out.join(&s.name);
        fs::create_dir_all(&dir)?;
        write_csv(&data.source, &dir.join("source.csv"))?;
        write_csv(&data.target, &dir.join("target.csv"))?;
        write_json(
            &dir.join("oracle.json"),
            &OracleInfo {
                oracle_accuracy: data.oracle_accuracy,
                common_oracle_accuracy: data.common_oracle_accuracy,
                source_rows: data.source.rows(),
                target_rows: data.target.rows(),
            },
        )?;
        written.push(dir);
    }
    if written.is_empty() {
        bail!("the config has no synthetic settings");
    }
    Ok(written)
}

/// Aggregates each ratings setting into per-user feature tables.
pub fn aggregate(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let ctx = open(opts)?;
    let mut written = Vec::new();
    for s in &ctx.config.settings {
        if !matches!(s.source()?, SettingSource::Ratings(_)) {
            continue;
        }
        let (source, target) = ctx.config.load_domains(s)?;
        let dir = ctx.out.join(&s.name);
        fs::create_dir_all(&dir)?;
        write_csv(&source, &dir.join("source.csv"))?;
        write_csv(&target, &dir.join("target.csv"))?;
        written.push(dir);
    }
    if written.is_empty() {
        bail!("the config has no ratings settings");
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_lists_and_ranges() {
        assert_eq!(parse_seeds("0, 2,5").unwrap(), vec![0, 2, 5]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("4..4").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
