//! Condition-wise evaluation (SNRi for matched/partially matched queries,
//! attenuation for unmatched ones), inactive-count sweeps and classifier reports.

mod conditions;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use conditions::{make_eval_query, paired_eval_query, ConditionKind, EvalQuery, QueryCondition};

use crate::error::{Result, TseError};
use crate::metrics::{attenuation_ratio_samples, confusion_per_class, macro_f1, snr_improvement_samples};
use crate::model::{to_f64, to_model_input, TseModel};
use crate::refinement::{apply_refinement, write_trace, RefinementConfig, RefinementMode, TraceRecord};
use crate::synthesis::SampleSource;

/// SNRi values above this are clipped before averaging.
pub const SNRI_CAP_DB: f64 = 60.0;
/// Threshold for the headline macro-F1 figure.
pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Seed of the per-sample query draws; shared across systems for paired comparison.
    pub seed: u64,
    pub system: String,
    pub checkpoint_id: String,
    /// When set, must match the dataset vocabulary fingerprint.
    pub vocabulary_fingerprint: Option<String>,
    /// Optional line-delimited refinement trace.
    pub trace: Option<PathBuf>,
}

impl EvalOptions {
    pub fn new(seed: u64, system: &str) -> Self {
        Self {
            seed,
            system: system.to_string(),
            checkpoint_id: String::new(),
            vocabulary_fingerprint: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    pub condition: QueryCondition,
    pub label: String,
    pub kind: ConditionKind,
    pub mode: RefinementMode,
    /// Threshold for model-mode rows.
    pub theta: Option<f64>,
    /// Mean capped SNRi; FMQ and PMQ rows only.
    pub mean_snri: Option<f64>,
    /// Mean attenuation ratio; FUQ rows only.
    pub mean_amix: Option<f64>,
    pub n: usize,
    pub capped: usize,
    pub skipped: usize,
}

impl EvalRow {
    pub fn value(&self) -> Option<f64> {
        self.mean_snri.or(self.mean_amix)
    }

    pub fn setting_label(&self) -> String {
        setting_label(self.mode, self.theta)
    }
}

fn setting_label(mode: RefinementMode, theta: Option<f64>) -> String {
    match (mode, theta) {
        (RefinementMode::Model, Some(t)) => format!("θ={t:.2}"),
        (m, _) => m.name().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub checkpoint_id: String,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub samples: usize,
    /// Macro F1 at 0.5 over mixture labels; absent without a classifier.
    pub macro_f1: Option<f64>,
    pub rows: Vec<EvalRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum ReportRecord {
    Meta {
        system: String,
        checkpoint_id: String,
        dataset_fingerprint: String,
        seed: u64,
        samples: usize,
        macro_f1: Option<f64>,
    },
    Row(EvalRow),
}

impl EvalReport {
    pub fn row(&self, cond: QueryCondition, mode: RefinementMode, theta: Option<f64>) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.condition == cond && r.mode == mode && r.theta == theta)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&ReportRecord::Meta {
            system: self.system.clone(),
            checkpoint_id: self.checkpoint_id.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            seed: self.seed,
            samples: self.samples,
            macro_f1: self.macro_f1,
        })?;
        out.push('\n');
        for row in &self.rows {
            out.push_str(&serde_json::to_string(&ReportRecord::Row(row.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut report: Option<EvalReport> = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<ReportRecord>(line)? {
                ReportRecord::Meta { system, checkpoint_id, dataset_fingerprint, seed, samples, macro_f1 } => {
                    report = Some(EvalReport {
                        system,
                        checkpoint_id,
                        dataset_fingerprint,
                        seed,
                        samples,
                        macro_f1,
                        rows: Vec::new(),
                    })
                }
                ReportRecord::Row(r) => report
                    .as_mut()
                    .ok_or_else(|| TseError::ConfigInvalid("report rows precede the metadata record".into()))?
                    .rows
                    .push(r),
            }
        }
        report.ok_or_else(|| TseError::ConfigInvalid("report has no metadata record".into()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(TseError::MissingArtifact(path.to_path_buf()));
        }
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    /// Aligned text table: one line per refinement setting, one column per condition.
    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

/// Stacks several reports into one table. They must share the query seed and dataset.
pub fn compare_reports(reports: &[EvalReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| TseError::ConfigInvalid("nothing to compare".into()))?;
    for r in reports {
        if r.seed != first.seed || r.dataset_fingerprint != first.dataset_fingerprint {
            return Err(TseError::ConfigInvalid(format!(
                "report for {} used seed {} on dataset {}, but {} used seed {} on {}; queries are not paired",
                r.system, r.seed, r.dataset_fingerprint, first.system, first.seed, first.dataset_fingerprint
            )));
        }
    }
    let mut out = render_table(reports);
    let _ = writeln!(out, "query seed {} shared by all rows (dataset {})", first.seed, first.dataset_fingerprint);
    Ok(out)
}

fn render_table(reports: &[EvalReport]) -> String {
    let mut conditions: Vec<QueryCondition> = Vec::new();
    for r in reports.iter().flat_map(|r| &r.rows) {
        if !conditions.contains(&r.condition) {
            conditions.push(r.condition);
        }
    }
    let mut header = vec!["system".to_string(), "setting".to_string()];
    header.extend(conditions.iter().map(|c| {
        let metric = if c.kind() == ConditionKind::Fuq { "A^mix" } else { "SNRi" };
        format!("{} {}", metric, c.label())
    }));
    header.push("F1".to_string());
    let mut lines = vec![header];
    for report in reports {
        let mut settings: Vec<(RefinementMode, Option<f64>)> = Vec::new();
        for r in &report.rows {
            if !settings.iter().any(|&(m, t)| m == r.mode && t == r.theta) {
                settings.push((r.mode, r.theta));
            }
        }
        for (mode, theta) in settings {
            let mut line = vec![report.system.clone(), setting_label(mode, theta)];
            for c in &conditions {
                line.push(match report.row(*c, mode, theta).and_then(EvalRow::value) {
                    Some(v) => format!("{v:.2}"),
                    None => "-".to_string(),
                });
            }
            line.push(report.macro_f1.map_or("-".to_string(), |f| format!("{f:.3}")));
            lines.push(line);
        }
    }
    let widths: Vec<usize> =
        (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (k, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                let pad = w - cell.chars().count();
                if i < 2 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if k == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

/// Outcome of one (condition, setting) cell for one sample.
#[derive(Debug, Clone, Copy)]
enum Cell {
    Value { value: f64, capped: bool },
    Skipped,
}

struct SampleOutcome {
    cells: Vec<Cell>,
    probs: Option<Vec<f64>>,
    labels: Vec<bool>,
    trace: Vec<TraceRecord>,
}

fn check_compat(model: &TseModel<f32>, source: &dyn SampleSource, opts: &EvalOptions) -> Result<()> {
    let vocab = source.vocabulary();
    if vocab.len() != model.classes() {
        return Err(TseError::IncompatibleVocabulary(format!(
            "model predicts {} classes, dataset has {}",
            model.classes(),
            vocab.len()
        )));
    }
    if let Some(fp) = &opts.vocabulary_fingerprint {
        if *fp != vocab.fingerprint() {
            return Err(TseError::IncompatibleVocabulary(format!(
                "checkpoint vocabulary {fp} differs from dataset vocabulary {}",
                vocab.fingerprint()
            )));
        }
    }
    Ok(())
}

fn evaluate_sample(
    model: &TseModel<f32>,
    source: &dyn SampleSource,
    index: usize,
    conditions: &[QueryCondition],
    settings: &[RefinementConfig],
    opts: &EvalOptions,
) -> Result<SampleOutcome> {
    let sample = source.sample(index)?;
    let key = source.sample_key(index);
    let mixture = sample.mixture.samples();
    let analysis = model.analyze(&to_model_input::<f32>(mixture))?;
    let probs = analysis.prediction.as_ref().map(|p| p.clip_probs_f64());
    let mut memo: HashMap<Vec<bool>, Vec<f64>> = HashMap::new();
    let mut cells = Vec::with_capacity(conditions.len() * settings.len());
    let mut trace = Vec::new();
    for &cond in conditions {
        let eq = match paired_eval_query(&sample.activity, cond, opts.seed, key) {
            Ok(q) => q,
            Err(TseError::InsufficientClasses { .. }) => {
                cells.extend(std::iter::repeat_n(Cell::Skipped, settings.len()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let target = sample.target_for(&eq.target_classes);
        for setting in settings {
            let refined = apply_refinement(&eq.query, setting, probs.as_deref(), Some(&sample.activity))?;
            if opts.trace.is_some() {
                trace.push(TraceRecord {
                    sample_id: format!("{index}:{}", cond.label()),
                    original: eq.query.bits().to_vec(),
                    probs: probs.clone(),
                    theta: setting.theta,
                    mode: setting.mode,
                    refined: refined.bits().to_vec(),
                });
            }
            let bits = refined.bits().to_vec();
            if !memo.contains_key(&bits) {
                let est = to_f64(&model.extract(&analysis, &refined)?);
                memo.insert(bits.clone(), est);
            }
            let est = &memo[&bits];
            let cell = if cond.kind() == ConditionKind::Fuq {
                Cell::Value { value: attenuation_ratio_samples(mixture, est)?, capped: false }
            } else {
                let v = snr_improvement_samples(target.samples(), est, mixture)?;
                Cell::Value { value: v.min(SNRI_CAP_DB), capped: v >= SNRI_CAP_DB }
            };
            cells.push(cell);
        }
    }
    Ok(SampleOutcome { cells, probs, labels: sample.activity.clone(), trace })
}

/// Evaluates every `(condition, setting)` pair on `source`. Queries are drawn
/// per sample from `opts.seed`, so runs with the same seed are paired.
pub fn evaluate(
    model: &TseModel<f32>,
    source: &dyn SampleSource,
    conditions: &[QueryCondition],
    settings: &[RefinementConfig],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_compat(model, source, opts)?;
    if settings.iter().any(|s| s.mode == RefinementMode::Model) && !model.has_classifier() {
        return Err(TseError::NoClassifier(format!(
            "system {} was trained without it; evaluate with --mode off or --mode oracle",
            opts.system
        )));
    }
    let outcomes: Vec<SampleOutcome> = (0..source.len())
        .into_par_iter()
        .map(|i| evaluate_sample(model, source, i, conditions, settings, opts))
        .collect::<Result<_>>()?;

    if let Some(path) = &opts.trace {
        let mut w = BufWriter::new(File::create(path)?);
        for rec in outcomes.iter().flat_map(|o| &o.trace) {
            write_trace(&mut w, rec)?;
        }
        w.flush()?;
    }

    let mut rows = Vec::with_capacity(conditions.len() * settings.len());
    for (ci, &cond) in conditions.iter().enumerate() {
        for (si, setting) in settings.iter().enumerate() {
            let (mut sum, mut n, mut capped, mut skipped) = (0.0, 0usize, 0usize, 0usize);
            for o in &outcomes {
                match o.cells[ci * settings.len() + si] {
                    Cell::Value { value, capped: c } => {
                        sum += value;
                        n += 1;
                        capped += usize::from(c);
                    }
                    Cell::Skipped => skipped += 1,
                }
            }
            let mean = (n > 0).then(|| sum / n as f64);
            let fuq = cond.kind() == ConditionKind::Fuq;
            rows.push(EvalRow {
                system: opts.system.clone(),
                condition: cond,
                label: cond.label(),
                kind: cond.kind(),
                mode: setting.mode,
                theta: (setting.mode == RefinementMode::Model).then_some(setting.theta),
                mean_snri: if fuq { None } else { mean },
                mean_amix: if fuq { mean } else { None },
                n,
                capped,
                skipped,
            });
        }
    }

    let macro_f1 = if model.has_classifier() && !outcomes.is_empty() {
        let probs: Vec<Vec<f64>> = outcomes.iter().map(|o| o.probs.clone().unwrap_or_default()).collect();
        let labels: Vec<Vec<bool>> = outcomes.iter().map(|o| o.labels.clone()).collect();
        Some(macro_f1(&probs, &labels, F1_THRESHOLD)?.value)
    } else {
        None
    };

    Ok(EvalReport {
        system: opts.system.clone(),
        checkpoint_id: opts.checkpoint_id.clone(),
        dataset_fingerprint: source.fingerprint(),
        seed: opts.seed,
        samples: source.len(),
        macro_f1,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_inactive: usize,
    pub system: String,
    pub theta: Option<f64>,
    pub mode: RefinementMode,
    pub mean_snri: f64,
    pub n: usize,
    pub capped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "n_inactive,system,theta,mode,mean_snri,n,capped";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let theta = r.theta.map_or(String::new(), |t| format!("{t}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{}",
                r.n_inactive,
                r.system,
                theta,
                r.mode.name(),
                r.mean_snri,
                r.n,
                r.capped
            );
        }
        out
    }

    pub fn extend(&mut self, other: SweepTable) {
        self.rows.extend(other.rows);
    }

    /// The series for one `(mode, θ)` setting, ordered by `n_inactive`.
    pub fn series(&self, system: &str, mode: RefinementMode, theta: Option<f64>) -> Vec<(usize, f64)> {
        let mut s: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.system == system && r.mode == mode && r.theta == theta)
            .map(|r| (r.n_inactive, r.mean_snri))
            .collect();
        s.sort_by_key(|p| p.0);
        s
    }
}

/// Mean SNRi for `(n_active : k)` at each `k` in `n_inactive`, per setting.
pub fn n_inactive_sweep(
    model: &TseModel<f32>,
    source: &dyn SampleSource,
    n_active: usize,
    n_inactive: &[usize],
    settings: &[RefinementConfig],
    opts: &EvalOptions,
) -> Result<SweepTable> {
    if n_active == 0 {
        return Err(TseError::ConfigInvalid("the sweep measures SNRi and needs n_active >= 1".into()));
    }
    let classes = source.vocabulary().len();
    if let Some(&max) = n_inactive.iter().max() {
        if max + n_active > classes {
            return Err(TseError::ConfigInvalid(format!(
                "n_inactive up to {max} with {n_active} active exceeds the {classes}-class vocabulary"
            )));
        }
    }
    let conditions: Vec<QueryCondition> =
        n_inactive.iter().map(|&k| QueryCondition::new(n_active, k)).collect::<Result<_>>()?;
    let report = evaluate(model, source, &conditions, settings, opts)?;
    let rows = report
        .rows
        .into_iter()
        .filter_map(|r| {
            r.mean_snri.map(|m| SweepRow {
                n_inactive: r.condition.n_inactive,
                system: r.system,
                theta: r.theta,
                mode: r.mode,
                mean_snri: m,
                n: r.n,
                capped: r.capped,
            })
        })
        .collect();
    Ok(SweepTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub theta: f64,
    pub macro_f1: f64,
    pub fp_rate: Vec<f64>,
    pub fn_rate: Vec<f64>,
    pub mean_fp_rate: f64,
    pub mean_fn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub samples: usize,
    pub thresholds: Vec<ThresholdStats>,
    /// Macro F1 at 0.5 with a 95% bootstrap interval.
    pub f1_at_half: f64,
    pub f1_ci95: (f64, f64),
}

impl ClassifierReport {
    pub fn at(&self, theta: f64) -> Option<&ThresholdStats> {
        self.thresholds.iter().find(|t| t.theta == theta)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("theta   macroF1   meanFP   meanFN\n");
        for t in &self.thresholds {
            let _ = writeln!(out, "{:<6.2}  {:>7.3}  {:>7.3}  {:>7.3}", t.theta, t.macro_f1, t.mean_fp_rate, t.mean_fn_rate);
        }
        let _ = writeln!(
            out,
            "macro F1 at 0.5: {:.3} (95% CI {:.3}..{:.3}, {} samples)",
            self.f1_at_half, self.f1_ci95.0, self.f1_ci95.1, self.samples
        );
        out
    }
}

const BOOTSTRAP_ROUNDS: usize = 1000;

/// Classifier statistics from precomputed clip probabilities and labels.
pub fn classifier_report_from_probs(
    probs: &[Vec<f64>],
    labels: &[Vec<bool>],
    thetas: &[f64],
    seed: u64,
) -> Result<ClassifierReport> {
    let mut grid: Vec<f64> = thetas.to_vec();
    if !grid.contains(&F1_THRESHOLD) {
        grid.push(F1_THRESHOLD);
    }
    grid.sort_by(f64::total_cmp);
    let mut thresholds = Vec::with_capacity(grid.len());
    for &theta in &grid {
        let conf = confusion_per_class(probs, labels, theta)?;
        let fp_rate: Vec<f64> = conf.iter().map(|c| c.fp_rate()).collect();
        let fn_rate: Vec<f64> = conf.iter().map(|c| c.fn_rate()).collect();
        let k = conf.len().max(1) as f64;
        thresholds.push(ThresholdStats {
            theta,
            macro_f1: conf.iter().map(|c| c.f1()).sum::<f64>() / k,
            mean_fp_rate: fp_rate.iter().sum::<f64>() / k,
            mean_fn_rate: fn_rate.iter().sum::<f64>() / k,
            fp_rate,
            fn_rate,
        });
    }
    let f1_at_half = macro_f1(probs, labels, F1_THRESHOLD)?.value;
    let n = probs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = Vec::with_capacity(BOOTSTRAP_ROUNDS);
    for _ in 0..BOOTSTRAP_ROUNDS {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let p: Vec<Vec<f64>> = idx.iter().map(|&i| probs[i].clone()).collect();
        let y: Vec<Vec<bool>> = idx.iter().map(|&i| labels[i].clone()).collect();
        boot.push(macro_f1(&p, &y, F1_THRESHOLD)?.value);
    }
    boot.sort_by(f64::total_cmp);
    let pick = |q: f64| boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
    Ok(ClassifierReport { samples: n, thresholds, f1_at_half, f1_ci95: (pick(0.025), pick(0.975)) })
}

/// Runs the classifier over `source` and reports per-threshold statistics.
pub fn classifier_report(
    model: &TseModel<f32>,
    source: &dyn SampleSource,
    thetas: &[f64],
    seed: u64,
) -> Result<ClassifierReport> {
    if !model.has_classifier() {
        return Err(TseError::NoClassifier("classifier statistics need a proposed-system checkpoint".into()));
    }
    if source.is_empty() {
        return Err(TseError::ConfigInvalid("no samples to evaluate".into()));
    }
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..source.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let sample = source.sample(i)?;
            let analysis = model.analyze(&to_model_input::<f32>(sample.mixture.samples()))?;
            let probs = analysis.prediction.expect("classifier present").clip_probs_f64();
            Ok((probs, sample.activity))
        })
        .collect::<Result<_>>()?;
    let (probs, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    classifier_report_from_probs(&probs, &labels, thetas, seed)
}
