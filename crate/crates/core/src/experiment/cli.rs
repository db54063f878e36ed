//! Command-line front end. Every invocation writes its reports plus a
//! manifest that `replay` reruns and compares byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{read_json, task_digest, Bundle, FusionBundle, TaskBundle};
use super::manifest::{hash_inputs, strip_out_flag, Manifest, OutputDir, MANIFEST_FILE};
use super::pipeline::{
    calibration_seed, derive_seed, evaluate_scores, fusion_fold, means, session_ids, test_seed, train_task_on_cohort,
};
use super::policy::{Calibration, Policy, PredictionRecord, Withhold};
use super::presets::{baseline_preset, fusion_preset, task_preset, TaskPreset};
use super::search::{search_fusion, search_task, SearchOptions};
use super::subgroup::{subgroup_analysis, SubgroupReport};
use crate::data::{
    gen_synthetic_cohort, join_fragments, load_task_csv, make_split, subject_labels, write_task_csv, Cohort,
    ColumnMapping, Fold, SplitPlan, SyntheticCohortSpec, DEFAULT_RATIOS,
};
use crate::data::csv::{load_cohort_dir, write_subjects_csv};
use crate::error::{Error, Result};
use crate::fusion::{train_baseline, train_ufnet, BaselineKind, FusionMode, UfnetConfig};
use crate::metrics::{aggregate_seeds, EvalReport, SeedAggregate};
use crate::task_model::{McPrediction, TaskModel, TaskModelConfig};
use crate::types::{parse_task_list, subject_digest, TaskKind};
use crate::uncertainty::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};

const DEFAULT_OUT: &str = "ufnet-out";
const TOOL: &str = "ufnet";

#[derive(Debug, Parser)]
#[command(name = "ufnet", version, about = "Uncertainty-calibrated multimodal fusion experiments")]
struct Cli {
    /// Output directory [default: ufnet-out; replay: <manifest dir>/replay]
    #[arg(long, global = true, env = "UFNET_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort as task CSVs.
    GenSynth(GenSynthArgs),
    /// Stratified subject-level train/val/test split.
    Split(SplitArgs),
    /// Train a single-task model.
    TrainTask(TrainTaskArgs),
    /// Train a fusion model or a fusion baseline on frozen task models.
    TrainFuse(TrainFuseArgs),
    /// Evaluate a bundle on the test fold, optionally withholding predictions.
    Eval(EvalArgs),
    /// Error rates and significance tests across demographic groups.
    Subgroup(SubgroupArgs),
    /// Seeded random hyperparameter search.
    Search(SearchArgs),
    /// Rerun a manifest and check the outputs are byte-identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Task CSV, or a directory of `<task>.csv` tables.
    #[arg(long)]
    data: PathBuf,
    /// Split plan JSON [default: seed-0 stratified 60/20/20 split of the data]
    #[arg(long)]
    split: Option<PathBuf>,
    /// Column-mapping JSON for tables with other header names.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// `desk` or `default`.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Cohort spec JSON; replaces the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainTaskArgs {
    #[arg(long)]
    task: Option<String>,
    /// Task preset [default: the task name]
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Number of runs; more than one derives a seed per run and aggregates.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct TrainFuseArgs {
    /// Comma-separated tasks [default: the preset's]
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long, default_value = "ufnet-all")]
    preset: String,
    #[command(flatten)]
    data: DataArgs,
    /// Frozen task bundles, one per task.
    #[arg(long, value_delimiter = ',')]
    task_bundles: Vec<PathBuf>,
    /// Task presets used when no bundles are given [default: <task>-mc]
    #[arg(long, value_delimiter = ',')]
    task_presets: Vec<String>,
    /// `early` or `hybrid`.
    #[arg(long)]
    fusion_mode: Option<String>,
    /// Train a baseline instead: majority, late, early or hybrid.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value = "shallow")]
    baseline_preset: String,
    /// Add each task model's own test scores to the report.
    #[arg(long)]
    compare_singletask: bool,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Label smoothing for the fusion network's training loss.
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Task bundles the fusion bundle was trained against.
    #[arg(long, value_delimiter = ',')]
    task_bundles: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// `none`, `mc-ci` or `conformal`.
    #[arg(long, default_value = "none")]
    withhold: String,
    /// Platt-scale the scores, fitted on the validation fold.
    #[arg(long)]
    platt: bool,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Expected training label smoothing; must match the bundle.
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct SubgroupArgs {
    /// `predictions.csv` written by eval.
    #[arg(long)]
    predictions: PathBuf,
    /// Data holding the demographics.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// `task`, `task-mc` or `fusion`.
    #[arg(long, default_value = "task")]
    space: String,
    #[arg(long)]
    task: Option<String>,
    /// Fusion tasks [default: tapping,smile,speech]
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long, value_delimiter = ',')]
    task_bundles: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    task_presets: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on sampled epoch counts.
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run(argv: &[String]) -> Result<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.render().to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Replay(ref a) => replay(&a.manifest, cli.out.as_deref()),
        _ => execute(cli, argv).map(|_| ()),
    }
}

struct Ctx {
    out: OutputDir,
    inputs: Vec<PathBuf>,
    seeds: Vec<u64>,
}

fn execute(cli: Cli, argv: &[String]) -> Result<Manifest> {
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut ctx = Ctx {
        out: OutputDir::create(&root)?,
        inputs: Vec::new(),
        seeds: Vec::new(),
    };
    let (name, config) = match &cli.command {
        Command::GenSynth(a) => ("gen-synth", gen_synth(&mut ctx, a)?),
        Command::Split(a) => ("split", split(&mut ctx, a)?),
        Command::TrainTask(a) => ("train-task", train_task(&mut ctx, a)?),
        Command::TrainFuse(a) => ("train-fuse", train_fuse(&mut ctx, a)?),
        Command::Eval(a) => ("eval", eval(&mut ctx, a)?),
        Command::Subgroup(a) => ("subgroup", subgroup(&mut ctx, a)?),
        Command::Search(a) => ("search", search(&mut ctx, a)?),
        Command::Replay(_) => unreachable!("replay writes no manifest"),
    };
    let manifest = Manifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        args: strip_out_flag(&argv[1..]),
        seeds: ctx.seeds,
        config,
        inputs: hash_inputs(&ctx.inputs)?,
        outputs: ctx.out.hashes()?,
    };
    super::bundle::write_json(&root.join(MANIFEST_FILE), &manifest)?;
    println!("wrote {} files to {}", manifest.outputs.len() + 1, root.display());
    Ok(manifest)
}

fn replay(path: &Path, out: Option<&Path>) -> Result<()> {
    let recorded: Manifest = read_json(path)?;
    let changed = recorded.changed_inputs()?;
    if !changed.is_empty() {
        return Err(Error::data(format!("inputs changed since the recorded run: {}", changed.join(", "))));
    }
    let origin = path.parent().unwrap_or(Path::new("."));
    let target = out.map_or_else(|| origin.join("replay"), Path::to_path_buf);
    if target.join(MANIFEST_FILE) == path {
        return Err(Error::config("replay output directory must differ from the recorded one"));
    }
    let mut argv = vec![TOOL.to_string()];
    argv.extend(recorded.args.iter().cloned());
    argv.push("--out".into());
    argv.push(target.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Usage(e.render().to_string()))?;
    let fresh = execute(cli, &argv)?;
    let diverged = recorded.diverging_outputs(&fresh);
    if !diverged.is_empty() {
        return Err(Error::State(format!("replay diverged on {}", diverged.join(", "))));
    }
    println!("replay: {} outputs byte-identical", recorded.outputs.len());
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn load_mapping(ctx: &mut Ctx, path: Option<&Path>) -> Result<Option<ColumnMapping>> {
    path.map(|p| {
        ctx.inputs.push(p.to_path_buf());
        ColumnMapping::load(p)
    })
    .transpose()
}

/// A directory of task tables, or one table whose task is `hint` or its
/// file stem.
fn load_cohort(ctx: &mut Ctx, path: &Path, mapping: Option<&Path>, hint: Option<TaskKind>) -> Result<Cohort> {
    let mapping = load_mapping(ctx, mapping)?;
    if !path.exists() {
        return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
    }
    ctx.inputs.push(path.to_path_buf());
    if path.is_dir() {
        return load_cohort_dir(path, &BTreeMap::new(), mapping.as_ref());
    }
    let task = match hint {
        Some(t) => t,
        None => path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config(format!("cannot infer a task from {}", path.display())))?
            .parse()?,
    };
    let rows = load_task_csv(path, task, None, mapping.as_ref())?;
    join_fragments([(task, rows)].into_iter().collect())
}

fn load_split(ctx: &mut Ctx, cohort: &Cohort, split: Option<&Path>) -> Result<SplitPlan> {
    match split {
        Some(p) => {
            ctx.inputs.push(p.to_path_buf());
            read_json(p)
        }
        None => {
            let plan = make_split(&subject_labels(&cohort.sessions)?, DEFAULT_RATIOS, 0)?;
            ctx.out.write_json("split.json", &plan)?;
            Ok(plan)
        }
    }
}

fn load_data(ctx: &mut Ctx, a: &DataArgs, hint: Option<TaskKind>) -> Result<(Cohort, SplitPlan, String)> {
    let cohort = load_cohort(ctx, &a.data, a.mapping.as_deref(), hint)?;
    let plan = load_split(ctx, &cohort, a.split.as_deref())?;
    let digest = plan.digest()?;
    Ok((cohort, plan, digest))
}

fn read_task_bundle(ctx: &mut Ctx, path: &Path) -> Result<TaskBundle> {
    ctx.inputs.push(path.to_path_buf());
    read_json::<Bundle>(path)?.into_task()
}

fn check_split(what: &str, bundle_digest: &str, digest: &str) -> Result<()> {
    if bundle_digest != digest {
        return Err(Error::data(format!(
            "{what} was trained on split {}, the current split is {}; refusing to mix splits",
            short(bundle_digest),
            short(digest)
        )));
    }
    Ok(())
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

/// Task bundles reordered to `tasks`, all trained on `digest`.
fn task_bundles(ctx: &mut Ctx, paths: &[PathBuf], tasks: &[TaskKind], digest: &str) -> Result<Vec<TaskBundle>> {
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let mut by_task = BTreeMap::new();
    for p in paths {
        let b = read_task_bundle(ctx, p)?;
        check_split(&format!("task bundle {}", p.display()), &b.split_digest, digest)?;
        let t = b.model.task.ok_or_else(|| Error::input(format!("{} has no task kind", p.display())))?;
        if by_task.insert(t, b).is_some() {
            return Err(Error::config(format!("two task bundles for {t}")));
        }
    }
    tasks
        .iter()
        .map(|t| by_task.remove(t).ok_or_else(|| Error::config(format!("no task bundle for {t}"))))
        .collect()
}

/// `None` for a single run (configured seeds verbatim), else `0..n`.
fn runs(n: u64) -> Result<Vec<Option<u64>>> {
    match n {
        0 => Err(Error::config("--seeds must be at least 1")),
        1 => Ok(vec![None]),
        _ => Ok((0..n).map(Some).collect()),
    }
}

fn run_seed(run: Option<u64>, base: u64) -> u64 {
    run.map_or(base, |r| derive_seed(r, base))
}

fn run_dir(run: Option<u64>) -> String {
    run.map_or_else(String::new, |r| format!("seed-{r:02}/"))
}

fn aggregate(reports: &[&EvalReport]) -> Result<Option<SeedAggregate>> {
    if reports.len() < 2 {
        return Ok(None);
    }
    aggregate_seeds(&reports.iter().map(|r| (*r).clone()).collect::<Vec<_>>()).map(Some)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

const TABLE_METRICS: [&str; 9] =
    ["coverage", "accuracy", "auroc", "auprc", "f1", "sensitivity", "specificity", "ece", "brier"];

fn report_table(rows: &[(String, &EvalReport)]) -> String {
    let mut s = format!("{:<24}{:>6}", "model", "n");
    for m in TABLE_METRICS {
        let _ = write!(s, "{m:>13}");
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(s, "{name:<24}{:>6}", r.n);
        let map = r.metric_map();
        for m in TABLE_METRICS {
            let _ = write!(s, "{:>13}", fmt_opt(map.get(m).copied()));
        }
        s.push('\n');
    }
    s
}

fn aggregate_table(rows: &[(String, &SeedAggregate)]) -> String {
    let mut s = format!("{:<24}{:>4}", "model", "k");
    for m in TABLE_METRICS {
        let _ = write!(s, "{m:>18}");
    }
    s.push('\n');
    for (name, a) in rows {
        let _ = write!(s, "{name:<24}{:>4}", a.k);
        for m in TABLE_METRICS {
            let cell = a.metrics.get(m).map_or_else(|| "-".into(), |c| format!("{:.4}±{:.4}", c.mean, c.half_width));
            let _ = write!(s, "{cell:>18}");
        }
        s.push('\n');
    }
    s
}

// ---- gen-synth ----

fn gen_synth(ctx: &mut Ctx, a: &GenSynthArgs) -> Result<serde_json::Value> {
    let mut spec = match &a.spec {
        Some(p) => {
            ctx.inputs.push(p.clone());
            read_json(p)?
        }
        None => match a.preset.as_str() {
            "desk" => SyntheticCohortSpec::desk(),
            "default" => SyntheticCohortSpec::default(),
            other => return Err(Error::config(format!("unknown cohort preset {other:?} (desk, default)"))),
        },
    };
    if let Some(n) = a.subjects {
        spec.subjects = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    ctx.seeds.push(spec.seed);
    let cohort = gen_synthetic_cohort(&spec)?;
    for task in cohort.widths.keys() {
        let p = ctx.out.claim(&format!("{task}.csv"))?;
        write_task_csv(&p, &cohort, *task)?;
    }
    write_subjects_csv(&ctx.out.claim("subjects.csv")?, &cohort)?;
    ctx.out.write_json("cohort_spec.json", &spec)?;
    println!("{} subjects, {} sessions", spec.subjects, cohort.sessions.len());
    to_value(&spec)
}

// ---- split ----

#[derive(Serialize)]
struct FoldSummary {
    fold: Fold,
    subjects: usize,
    pd_fraction: f64,
}

fn split(ctx: &mut Ctx, a: &SplitArgs) -> Result<serde_json::Value> {
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| Error::config("--ratios takes three comma-separated fractions"))?;
    let cohort = load_cohort(ctx, &a.data, a.mapping.as_deref(), None)?;
    let labels = subject_labels(&cohort.sessions)?;
    let plan = make_split(&labels, ratios, a.seed)?;
    ctx.seeds.push(a.seed);
    ctx.out.write_json("split.json", &plan)?;
    for fold in [Fold::Train, Fold::Val, Fold::Test] {
        let s = plan.subjects_in(fold);
        let pd = s.iter().filter(|id| labels[**id].is_positive()).count();
        let summary = FoldSummary {
            fold,
            subjects: s.len(),
            pd_fraction: pd as f64 / s.len().max(1) as f64,
        };
        println!("{:?}: {} subjects, {:.3} PD", summary.fold, summary.subjects, summary.pd_fraction);
    }
    to_value(&serde_json::json!({ "ratios": ratios, "seed": a.seed }))
}

// ---- train-task ----

#[derive(Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub run: Option<u64>,
    pub seed: u64,
    pub bundle: String,
    pub test: EvalReport,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub single: BTreeMap<TaskKind, EvalReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub preset: String,
    pub split_digest: String,
    pub test_sessions: usize,
    pub runs: Vec<RunResult>,
    pub aggregate: Option<SeedAggregate>,
}

fn resolve_task_preset(task: Option<&str>, preset: Option<&str>) -> Result<(String, TaskPreset)> {
    let task: Option<TaskKind> = task.map(str::parse).transpose()?;
    let name = match (preset, task) {
        (Some(p), _) => p.to_string(),
        (None, Some(t)) => t.to_string(),
        (None, None) => return Err(Error::config("give --task or --preset")),
    };
    let p = task_preset(&name)?.clone();
    if let Some(t) = task {
        if t != p.task {
            return Err(Error::config(format!("preset {name} is for {}, not {t}", p.task)));
        }
    }
    Ok((name, p))
}

fn task_test_predictions(cohort: &Cohort, plan: &SplitPlan, model: &TaskModel, fold: Fold, seed: u64) -> Result<(Vec<McPrediction>, Vec<bool>, Vec<String>)> {
    let task = model.task.ok_or_else(|| Error::input("task model has no task kind"))?;
    let idx = cohort.select(plan, fold, &[task])?;
    if idx.is_empty() {
        return Err(Error::data(format!("no {fold:?} session has {task}")));
    }
    let d = cohort.task_data(&idx, task)?;
    let preds = model.predict(&d.x, seed)?;
    let ids = idx.iter().map(|&i| cohort.sessions[i].session_id.clone()).collect();
    Ok((preds, d.labels, ids))
}

fn train_task(ctx: &mut Ctx, a: &TrainTaskArgs) -> Result<serde_json::Value> {
    let (name, preset) = resolve_task_preset(a.task.as_deref(), a.preset.as_deref())?;
    preset.config.validate()?;
    let task = preset.task;
    let (cohort, plan, digest) = load_data(ctx, &a.data, Some(task))?;
    let runs = runs(a.seeds)?;
    let trained = runs
        .par_iter()
        .map(|&r| {
            let model = train_task_on_cohort(&cohort, &plan, task, &preset.config, r)?;
            let (preds, labels, _) = task_test_predictions(&cohort, &plan, &model, Fold::Test, test_seed(r.unwrap_or(0)))?;
            let report = evaluate_scores(&means(&preds), &labels, DEFAULT_THRESHOLD)?;
            Ok((model, report))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    for (&r, (model, report)) in runs.iter().zip(trained) {
        let bundle = format!("{}bundle.json", run_dir(r));
        let seed = model.config.train.seed;
        ctx.seeds.push(seed);
        ctx.out.write_json(
            &bundle,
            &Bundle::Task(TaskBundle {
                version: env!("CARGO_PKG_VERSION").into(),
                preset: Some(name.clone()),
                split_digest: digest.clone(),
                run: r.unwrap_or(0),
                model,
            }),
        )?;
        results.push(RunResult {
            run: r,
            seed,
            bundle,
            test: report,
            single: BTreeMap::new(),
        });
    }
    let reports: Vec<&EvalReport> = results.iter().map(|r| &r.test).collect();
    let report = TaskReport {
        task,
        preset: name.clone(),
        split_digest: digest,
        test_sessions: results[0].test.n,
        aggregate: aggregate(&reports)?,
        runs: results,
    };
    let text = match &report.aggregate {
        Some(agg) => aggregate_table(&[(name.clone(), agg)]),
        None => report_table(&[(name.clone(), &report.runs[0].test)]),
    };
    ctx.out.write_json("report.json", &report)?;
    ctx.out.write_text("report.txt", &text)?;
    print!("{text}");
    to_value(&serde_json::json!({ "preset": name, "task": task, "config": preset.config, "seeds": a.seeds }))
}

// ---- train-fuse ----

enum Target {
    Ufnet(UfnetConfig),
    Baseline(BaselineKind, TaskModelConfig),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FuseReport {
    pub model: String,
    pub tasks: Vec<TaskKind>,
    pub preset: String,
    pub mode: Option<FusionMode>,
    pub head_input_width: Option<usize>,
    pub split_digest: String,
    pub test_sessions: usize,
    pub runs: Vec<RunResult>,
    pub aggregate: Option<SeedAggregate>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub single_aggregate: BTreeMap<TaskKind, SeedAggregate>,
}

fn parse_baseline(s: &str) -> Result<BaselineKind> {
    BaselineKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::config(format!("unknown baseline {s:?} (majority, late, early, hybrid)")))
}

fn default_task_presets(tasks: &[TaskKind], given: &[String]) -> Result<Vec<String>> {
    if given.is_empty() {
        return Ok(tasks.iter().map(|t| format!("{t}-mc")).collect());
    }
    if given.len() != tasks.len() {
        return Err(Error::config(format!("{} task presets for {} tasks", given.len(), tasks.len())));
    }
    Ok(given.to_vec())
}

/// Frozen bundles when given, otherwise one trained model per task.
fn task_models_for_run(
    cohort: &Cohort,
    plan: &SplitPlan,
    tasks: &[TaskKind],
    frozen: &[TaskBundle],
    presets: &[TaskPreset],
    run: Option<u64>,
) -> Result<Vec<TaskModel>> {
    if !frozen.is_empty() {
        return Ok(frozen.iter().map(|b| b.model.clone()).collect());
    }
    tasks
        .iter()
        .zip(presets)
        .map(|(t, p)| train_task_on_cohort(cohort, plan, *t, &p.config, run))
        .collect()
}

fn train_fuse(ctx: &mut Ctx, a: &TrainFuseArgs) -> Result<serde_json::Value> {
    let mut cfg = fusion_preset(&a.preset)?.clone();
    if let Some(t) = &a.tasks {
        cfg.tasks = parse_task_list(t)?;
    }
    if let Some(m) = &a.fusion_mode {
        cfg.mode = m.parse()?;
    }
    if let Some(eps) = a.smoothing {
        cfg.train.label_smoothing = eps;
    }
    cfg.validate()?;
    let tasks = cfg.tasks.clone();
    let target = match &a.baseline {
        None => Target::Ufnet(cfg.clone()),
        Some(b) => {
            let mut bcfg = baseline_preset(&a.baseline_preset)?.clone();
            if let Some(eps) = a.smoothing {
                bcfg.train.label_smoothing = eps;
            }
            bcfg.validate()?;
            Target::Baseline(parse_baseline(b)?, bcfg)
        }
    };

    let (cohort, plan, digest) = load_data(ctx, &a.data, None)?;
    let frozen = task_bundles(ctx, &a.task_bundles, &tasks, &digest)?;
    let preset_names = if frozen.is_empty() {
        default_task_presets(&tasks, &a.task_presets)?
    } else {
        Vec::new()
    };
    let presets = preset_names
        .iter()
        .zip(&tasks)
        .map(|(n, t)| {
            let p = task_preset(n)?.clone();
            if p.task != *t {
                return Err(Error::config(format!("task preset {n} is for {}, not {t}", p.task)));
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;

    let runs = runs(a.seeds)?;
    let outcomes = runs
        .par_iter()
        .map(|&r| {
            let run = r.unwrap_or(0);
            let models = task_models_for_run(&cohort, &plan, &tasks, &frozen, &presets, r)?;
            let refs: Vec<&TaskModel> = models.iter().collect();
            let train = fusion_fold(&cohort, &plan, Fold::Train, &refs, run)?;
            let val = fusion_fold(&cohort, &plan, Fold::Val, &refs, run)?;
            let test = fusion_fold(&cohort, &plan, Fold::Test, &refs, run)?;
            let digests = refs.iter().map(|m| task_digest(m)).collect::<Result<Vec<_>>>()?;
            let wrap = |preset: &str| (env!("CARGO_PKG_VERSION").to_string(), Some(preset.to_string()));
            let (bundle, seed, report) = match &target {
                Target::Ufnet(c) => {
                    let mut c = c.clone();
                    c.train.seed = run_seed(r, c.train.seed);
                    let m = train_ufnet(&train, Some(&val), &c, &refs)?;
                    let rep = evaluate_scores(&means(&m.predict(&test, test_seed(run))?), &test.labels, DEFAULT_THRESHOLD)?;
                    let (version, preset) = wrap(&a.preset);
                    let b = FusionBundle { version, preset, split_digest: digest.clone(), task_models: digests, run, model: m };
                    (Bundle::Ufnet(b), c.train.seed, rep)
                }
                Target::Baseline(kind, c) => {
                    let mut c = c.clone();
                    c.train.seed = run_seed(r, c.train.seed);
                    let m = train_baseline(*kind, &train, Some(&val), &c)?;
                    let rep = evaluate_scores(&means(&m.predict(&test, test_seed(run))?), &test.labels, m.threshold)?;
                    let (version, preset) = wrap(&a.baseline_preset);
                    let b = FusionBundle { version, preset, split_digest: digest.clone(), task_models: digests, run, model: m };
                    (Bundle::Baseline(b), c.train.seed, rep)
                }
            };
            let mut single = BTreeMap::new();
            if a.compare_singletask {
                for (ti, t) in tasks.iter().enumerate() {
                    single.insert(*t, evaluate_scores(&test.mu.column(ti), &test.labels, DEFAULT_THRESHOLD)?);
                }
            }
            Ok((models, bundle, seed, report, single))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    for (&r, (models, bundle, seed, report, single)) in runs.iter().zip(outcomes) {
        let dir = run_dir(r);
        if frozen.is_empty() {
            for (m, p) in models.into_iter().zip(&preset_names) {
                let task = m.task.expect("cohort-trained models carry their task");
                ctx.out.write_json(
                    &format!("{dir}task-{task}.json"),
                    &Bundle::Task(TaskBundle {
                        version: env!("CARGO_PKG_VERSION").into(),
                        preset: Some(p.clone()),
                        split_digest: digest.clone(),
                        run: r.unwrap_or(0),
                        model: m,
                    }),
                )?;
            }
        }
        let name = format!("{dir}bundle.json");
        ctx.out.write_json(&name, &bundle)?;
        ctx.seeds.push(seed);
        results.push(RunResult {
            run: r,
            seed,
            bundle: name,
            test: report,
            single,
        });
    }

    let (model_name, mode, width) = match &target {
        Target::Ufnet(c) => ("ufnet".to_string(), Some(c.mode), Some(c.head_input_width())),
        Target::Baseline(k, _) => (format!("baseline-{}", k.name()), None, None),
    };
    let reports: Vec<&EvalReport> = results.iter().map(|r| &r.test).collect();
    let mut single_aggregate = BTreeMap::new();
    for t in &tasks {
        let per: Vec<&EvalReport> = results.iter().filter_map(|r| r.single.get(t)).collect();
        if let Some(agg) = aggregate(&per)? {
            single_aggregate.insert(*t, agg);
        }
    }
    let report = FuseReport {
        model: model_name.clone(),
        tasks: tasks.clone(),
        preset: a.preset.clone(),
        mode,
        head_input_width: width,
        split_digest: digest,
        test_sessions: results[0].test.n,
        aggregate: aggregate(&reports)?,
        single_aggregate,
        runs: results,
    };
    let text = match &report.aggregate {
        Some(agg) => {
            let mut rows = vec![(model_name.clone(), agg)];
            rows.extend(report.single_aggregate.iter().map(|(t, a)| (t.to_string(), a)));
            aggregate_table(&rows)
        }
        None => {
            let r0 = &report.runs[0];
            let mut rows = vec![(model_name.clone(), &r0.test)];
            rows.extend(r0.single.iter().map(|(t, r)| (t.to_string(), r)));
            report_table(&rows)
        }
    };
    ctx.out.write_json("report.json", &report)?;
    ctx.out.write_text("report.txt", &text)?;
    print!("{text}");
    let target_cfg = match &target {
        Target::Ufnet(c) => to_value(c)?,
        Target::Baseline(k, c) => serde_json::json!({ "baseline": k, "config": c }),
    };
    to_value(&serde_json::json!({
        "preset": a.preset,
        "target": target_cfg,
        "task_presets": preset_names,
        "seeds": a.seeds,
        "compare_singletask": a.compare_singletask,
    }))
}

// ---- eval ----

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub bundle: String,
    pub split_digest: String,
    pub calibration: Calibration,
    pub report: EvalReport,
}

fn trained_smoothing(b: &Bundle) -> f64 {
    match b {
        Bundle::Task(t) => t.model.config.train.label_smoothing,
        Bundle::Ufnet(f) => f.model.config.train.label_smoothing,
        Bundle::Baseline(f) => f.model.model.as_ref().map_or(0.0, |m| m.config.train.label_smoothing),
    }
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<serde_json::Value> {
    let policy = Policy {
        withhold: a.withhold.parse::<Withhold>()?,
        platt: a.platt,
        alpha: a.alpha,
        threshold: a.threshold,
    };
    ctx.inputs.push(a.bundle.clone());
    let bundle: Bundle = read_json(&a.bundle)?;
    if let Some(eps) = a.smoothing {
        let trained = trained_smoothing(&bundle);
        if (trained - eps).abs() > 1e-12 {
            return Err(Error::config(format!(
                "bundle was trained with label smoothing {trained}, not {eps}; retrain with --smoothing {eps}"
            )));
        }
    }
    let hint = match &bundle {
        Bundle::Task(t) => t.model.task,
        _ => None,
    };
    let (cohort, plan, digest) = load_data(ctx, &a.data, hint)?;

    let (tasks, frozen) = match &bundle {
        Bundle::Task(t) => (vec![t.model.task.ok_or_else(|| Error::input("task bundle has no task kind"))?], Vec::new()),
        Bundle::Ufnet(f) => (f.model.config.tasks.clone(), fusion_inputs(ctx, a, &f.task_models, &f.model.config.tasks)?),
        Bundle::Baseline(f) => {
            let tasks = task_order(ctx, a)?;
            (tasks.clone(), fusion_inputs(ctx, a, &f.task_models, &tasks)?)
        }
    };

    // Leakage guard: no test subject may have been seen by any model involved.
    let mut seen: std::collections::BTreeSet<&str> = bundle.seen_subjects().iter().map(String::as_str).collect();
    for b in &frozen {
        seen.extend(b.model.seen_subjects.iter().map(String::as_str));
    }
    let test_idx = cohort.select(&plan, Fold::Test, &tasks)?;
    let overlap = test_idx
        .iter()
        .map(|&i| &cohort.sessions[i].subject_id)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .filter(|s| seen.contains(subject_digest(s).as_str()))
        .count();
    if overlap > 0 {
        return Err(Error::data(format!("refusing to evaluate: {overlap} test subjects were seen during training")));
    }
    check_split("bundle", bundle.split_digest(), &digest)?;

    let (val, test, ids) = match &bundle {
        Bundle::Task(t) => {
            let run = t.run;
            let val = policy
                .needs_calibration()
                .then(|| task_test_predictions(&cohort, &plan, &t.model, Fold::Val, calibration_seed(run)))
                .transpose()?
                .map(|(p, l, _)| (p, l));
            let (p, l, ids) = task_test_predictions(&cohort, &plan, &t.model, Fold::Test, test_seed(run))?;
            (val, (p, l), ids)
        }
        Bundle::Ufnet(f) => fusion_predictions(&cohort, &plan, &frozen, f.run, &policy, &tasks, |d, s| f.model.predict(d, s))?,
        Bundle::Baseline(f) => fusion_predictions(&cohort, &plan, &frozen, f.run, &policy, &tasks, |d, s| f.model.predict(d, s))?,
    };
    let calibration = match &val {
        Some((p, l)) => policy.fit(p, l)?,
        None => policy.fit(&[], &[])?,
    };
    let (report, records) = calibration.evaluate(&test.0, &test.1, &ids)?;

    let out = EvalOutput {
        bundle: bundle.kind().into(),
        split_digest: digest,
        calibration,
        report,
    };
    let label = format!("{} {}{}", bundle.kind(), policy.withhold, if policy.platt { " +platt" } else { "" });
    let text = report_table(&[(label, &out.report)]);
    ctx.out.write_json("report.json", &out)?;
    ctx.out.write_text("report.txt", &text)?;
    write_predictions(&ctx.out.claim("predictions.csv")?, &records)?;
    print!("{text}");
    to_value(&serde_json::json!({ "policy": policy, "bundle_kind": bundle.kind() }))
}

/// Baseline bundles do not store their tasks; they follow the task bundles.
fn task_order(ctx: &mut Ctx, a: &EvalArgs) -> Result<Vec<TaskKind>> {
    let mut tasks = Vec::new();
    for p in &a.task_bundles {
        let b = read_task_bundle(ctx, p)?;
        tasks.push(b.model.task.ok_or_else(|| Error::input(format!("{} has no task kind", p.display())))?);
    }
    tasks.sort();
    Ok(tasks)
}

fn fusion_inputs(ctx: &mut Ctx, a: &EvalArgs, expected: &[String], tasks: &[TaskKind]) -> Result<Vec<TaskBundle>> {
    if a.task_bundles.is_empty() {
        return Err(Error::config("fusion bundles need --task-bundles"));
    }
    let mut by_task = BTreeMap::new();
    for p in &a.task_bundles {
        let b = read_task_bundle(ctx, p)?;
        let t = b.model.task.ok_or_else(|| Error::input(format!("{} has no task kind", p.display())))?;
        by_task.insert(t, b);
    }
    let ordered = tasks
        .iter()
        .map(|t| by_task.remove(t).ok_or_else(|| Error::config(format!("no task bundle for {t}"))))
        .collect::<Result<Vec<_>>>()?;
    let digests = ordered.iter().map(|b| task_digest(&b.model)).collect::<Result<Vec<_>>>()?;
    if digests != expected {
        return Err(Error::data("task bundles differ from the ones the fusion bundle was trained against"));
    }
    Ok(ordered)
}

type Preds = (Vec<McPrediction>, Vec<bool>);

fn fusion_predictions(
    cohort: &Cohort,
    plan: &SplitPlan,
    frozen: &[TaskBundle],
    run: u64,
    policy: &Policy,
    tasks: &[TaskKind],
    predict: impl Fn(&crate::fusion::FusionData, u64) -> Result<Vec<McPrediction>>,
) -> Result<(Option<Preds>, Preds, Vec<String>)> {
    let refs: Vec<&TaskModel> = frozen.iter().map(|b| &b.model).collect();
    let val = if policy.needs_calibration() {
        let v = fusion_fold(cohort, plan, Fold::Val, &refs, run)?;
        Some((predict(&v, calibration_seed(run))?, v.labels))
    } else {
        None
    };
    let test = fusion_fold(cohort, plan, Fold::Test, &refs, run)?;
    let ids = session_ids(cohort, plan, Fold::Test, tasks)?;
    Ok((val, (predict(&test, test_seed(run))?, test.labels), ids))
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = ::csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

// ---- subgroup ----

fn subgroup_text(r: &SubgroupReport) -> String {
    let mut s = format!("{} predictions, {} withheld\n", r.n, r.withheld);
    for a in &r.attributes {
        let _ = writeln!(s, "\n[{}]", a.attribute);
        for g in &a.groups {
            let _ = writeln!(s, "  {:<16} n={:<6} error {:.4} ± {:.4}", g.group, g.n, g.rate, g.half_width);
        }
        for t in &a.tests {
            let fisher = t.fisher.as_ref().map_or_else(|| "-".into(), |f| format!("{:.4}", f.p_value));
            let _ = writeln!(s, "  {:<24} z={:+.3} p={:.4} fisher p={fisher}", t.comparison, t.z, t.z_p_value);
        }
        for n in &a.notices {
            let _ = writeln!(s, "  note: {n}");
        }
    }
    if let Some(d) = &r.duration {
        let _ = writeln!(s, "\n[disease duration]");
        match &d.kendall {
            Some(k) => {
                let _ = writeln!(s, "  kendall tau {:+.4} p={:.4} over {} durations", k.tau, k.p_value, d.durations.len());
            }
            None => {
                let _ = writeln!(s, "  note: {}", d.notice.as_deref().unwrap_or("no trend"));
            }
        }
    }
    s
}

fn subgroup(ctx: &mut Ctx, a: &SubgroupArgs) -> Result<serde_json::Value> {
    ctx.inputs.push(a.predictions.clone());
    let records = read_predictions(&a.predictions)?;
    let cohort = load_cohort(ctx, &a.data, a.mapping.as_deref(), None)?;
    let report = subgroup_analysis(&records, &cohort.sessions)?;
    let text = subgroup_text(&report);
    ctx.out.write_json("subgroup.json", &report)?;
    ctx.out.write_text("subgroup.txt", &text)?;
    print!("{text}");
    Ok(serde_json::Value::Null)
}

// ---- search ----

fn search(ctx: &mut Ctx, a: &SearchArgs) -> Result<serde_json::Value> {
    let opts = SearchOptions {
        trials: a.trials,
        seed: a.seed,
        max_epochs: a.max_epochs,
    };
    if a.trials == 0 {
        return Err(Error::config("search needs at least one trial"));
    }
    ctx.seeds.push(a.seed);
    match a.space.as_str() {
        "task" | "task-mc" => {
            let task: TaskKind = a.task.as_deref().ok_or_else(|| Error::config("--task is required"))?.parse()?;
            let (cohort, plan, _) = load_data(ctx, &a.data, Some(task))?;
            let tr = cohort.select(&plan, Fold::Train, &[task])?;
            let va = cohort.select(&plan, Fold::Val, &[task])?;
            let result = search_task(task, &cohort.task_data(&tr, task)?, &cohort.task_data(&va, task)?, a.space == "task-mc", opts)?;
            let best = result.best_trial();
            ctx.out.write_json("trials.json", &result)?;
            ctx.out.write_json(
                "best.json",
                &serde_json::json!({
                    "trial": best.index,
                    "val_auroc": best.val_auroc,
                    "preset": TaskPreset { task, config: best.config.clone() },
                }),
            )?;
            println!("best trial {} val AUROC {}", best.index, fmt_opt(best.val_auroc));
        }
        "fusion" => {
            let tasks = parse_task_list(a.tasks.as_deref().unwrap_or("tapping,smile,speech"))?;
            let (cohort, plan, digest) = load_data(ctx, &a.data, None)?;
            let frozen = task_bundles(ctx, &a.task_bundles, &tasks, &digest)?;
            let presets = if frozen.is_empty() {
                default_task_presets(&tasks, &a.task_presets)?
                    .iter()
                    .map(|n| task_preset(n).cloned())
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let models = task_models_for_run(&cohort, &plan, &tasks, &frozen, &presets, None)?;
            let refs: Vec<&TaskModel> = models.iter().collect();
            let train = fusion_fold(&cohort, &plan, Fold::Train, &refs, 0)?;
            let val = fusion_fold(&cohort, &plan, Fold::Val, &refs, 0)?;
            let result = search_fusion(&train, &val, &refs, opts)?;
            let best = result.best_trial();
            ctx.out.write_json("trials.json", &result)?;
            ctx.out.write_json(
                "best.json",
                &serde_json::json!({ "trial": best.index, "val_auroc": best.val_auroc, "config": best.config }),
            )?;
            println!("best trial {} val AUROC {}", best.index, fmt_opt(best.val_auroc));
        }
        other => return Err(Error::config(format!("unknown search space {other:?} (task, task-mc, fusion)"))),
    }
    to_value(&opts)
}
