//! The `itgpt` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (divergence or a failing check).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Arg, ArgMatches, Command};

use crate::checkpoint::Checkpoint;
use crate::checks::{self, CheckReport, GradSuite};
use crate::config::TrainConfig;
use crate::data::{load_dataset, split_kfold, synth_generate, write_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::manifest::{dataset_fingerprint, RunManifest};
use crate::report::{aggregate, read_results, write_results, write_trace, GROUP_COLUMNS};
use crate::train::{evaluate, run_experiment_grid_with, train, GridSpec, ResultRow};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "ITGPT_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "itgpt-runs";

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.csv";

fn config_args() -> Vec<Arg> {
    TrainConfig::default()
        .to_kv()
        .keys()
        .map(|k| {
            let k: &'static str = Box::leak(k.to_string().into_boxed_str());
            Arg::new(k).long(k).value_name("VALUE").help_heading("Config overrides")
        })
        .collect()
}

fn out_arg() -> Arg {
    Arg::new("out")
        .long("out")
        .value_name("DIR")
        .value_parser(clap::value_parser!(PathBuf))
        .help(format!("output directory (default: ${OUT_ROOT_ENV} or `{DEFAULT_OUT_ROOT}`, plus the command name)"))
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn seed_arg() -> Arg {
    Arg::new("seed")
        .long("seed")
        .value_name("N")
        .value_parser(clap::value_parser!(u64))
        .default_value("0")
}

pub fn command() -> Command {
    Command::new("itgpt")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Causal cross-attention models for irregularly sampled multimodal timeseries")
        .subcommand_required(true)
        .subcommand(
            Command::new("synth")
                .about("Generate a seeded synthetic dataset")
                .arg(path_arg("spec", "generator spec file (key = value); defaults when omitted"))
                .arg(out_arg())
                .arg(seed_arg()),
        )
        .subcommand(
            Command::new("train")
                .about("Train on one cross-validation fold and evaluate on its validation part")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg("config", "training config file (key = value)"))
                .arg(out_arg())
                .args(config_args()),
        )
        .subcommand(
            Command::new("eval")
                .about("Evaluate a checkpoint")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg("checkpoint", "checkpoint file").required(true))
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["valid", "train", "all"])
                        .default_value("valid")
                        .help("observations to score: the checkpoint's validation fold, its training folds, or everything"),
                )
                .arg(out_arg()),
        )
        .subcommand(
            Command::new("check")
                .about("Run a randomized invariant suite")
                .arg(
                    Arg::new("kind")
                        .required(true)
                        .value_parser(["grad", "oracle", "causality", "pe", "metrics", "all"]),
                )
                .arg(seed_arg())
                .arg(
                    Arg::new("size")
                        .long("size")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .help("cases: seeds for grad, instances for oracle/metrics, observations for causality, pairs for pe"),
                )
                .arg(
                    Arg::new("depth")
                        .long("depth")
                        .value_name("L")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("3")
                        .help("largest depth used by the gradient check"),
                ),
        )
        .subcommand(
            Command::new("report")
                .about("Aggregate results tables into median/quartile/mean/std per group")
                .arg(
                    Arg::new("results")
                        .value_name("RESULTS")
                        .num_args(0..)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("group-by")
                        .long("group-by")
                        .value_delimiter(',')
                        .help(format!("columns among {}", GROUP_COLUMNS.join(","))),
                )
                .arg(Arg::new("metric").long("metric").value_delimiter(',').help("keep only these metrics"))
                .arg(out_arg()),
        )
        .subcommand(
            Command::new("grid")
                .about("Run an experiment grid over folds and hyperparameters")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg("grid", "grid spec file").required(true))
                .arg(out_arg()),
        )
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn say(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", msg.as_ref());
    }

    fn warn(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.err, "warning: {}", msg.as_ref());
    }
}

fn out_dir(m: &ArgMatches, command: &str) -> PathBuf {
    m.get_one::<PathBuf>("out").cloned().unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
            .join(command)
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn required<'a>(m: &'a ArgMatches, name: &str) -> &'a PathBuf {
    m.get_one::<PathBuf>(name).expect("required by clap")
}

fn load(path: &Path, io: &mut Io<'_>) -> Result<Dataset> {
    let (dataset, report) = load_dataset(path)?;
    if report.resorted > 0 {
        io.warn(format!("{} series had unsorted rows and were re-sorted by time", report.resorted));
    }
    if dataset.is_empty() {
        return Err(Error::data(path, 0, "dataset has no observations"));
    }
    Ok(dataset)
}

fn resolve_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    for key in TrainConfig::default().to_kv().keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(m: &ArgMatches, argv: Vec<String>, io: &mut Io<'_>) -> Result<()> {
    let start = Instant::now();
    let spec = match m.get_one::<PathBuf>("spec") {
        Some(p) => SynthSpec::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p)?,
        None => SynthSpec::default(),
    };
    spec.validate()?;
    let seed = *m.get_one::<u64>("seed").expect("default");
    let out = out_dir(m, "synth");
    if out.exists() && fs::read_dir(&out).map_err(|e| Error::io(&out, e))?.next().is_some() {
        return Err(Error::Config(format!("{} exists and is not empty; choose another --out", out.display())));
    }
    let dataset = synth_generate(&spec, seed)?;
    write_dataset(&dataset, &out)?;
    let mut manifest = RunManifest::new(argv);
    manifest.seeds.push(("synth".into(), seed));
    for (k, v) in crate::kv::KvFile::parse(&spec.render(), Path::new("<spec>"))?.entries() {
        manifest.settings.push((format!("spec.{k}"), v.to_string()));
    }
    manifest.dataset = Some((out.clone(), dataset_fingerprint(&out)?));
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&out)?;
    io.say(format!("wrote {} observations to {}", dataset.len(), out.display()));
    Ok(())
}

fn cmd_train(m: &ArgMatches, argv: Vec<String>, io: &mut Io<'_>) -> Result<()> {
    let start = Instant::now();
    let data = required(m, "data");
    let cfg = resolve_config(m)?;
    let dataset = load(data, io)?;
    let folds = split_kfold(dataset.len(), cfg.folds, cfg.split_seed)?;
    let fold = &folds[cfg.fold];
    let out = out_dir(m, "train");
    ensure_dir(&out)?;

    let outcome = train(&dataset, &fold.train, Some(&fold.valid), &cfg)?;
    for w in &outcome.warnings {
        io.warn(w);
    }
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        params: outcome.params.clone(),
    };
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_trace(&out.join(TRACE_FILE), &outcome.trace)?;
    let rows = match (evaluate(&outcome.params, &dataset, &fold.valid, &cfg), &outcome.failure) {
        (Ok(evaluation), _) => {
            let rows = ResultRow::from_summary(cfg.fold, &cfg, &evaluation.summary);
            write_results(&out.join(RESULTS_FILE), &rows)?;
            Some(rows)
        }
        (Err(e), Some(_)) => {
            io.warn(format!("validation fold not scored: {e}"));
            None
        }
        (Err(e), None) => return Err(e),
    };

    let mut manifest = RunManifest::new(argv);
    manifest.config = Some(cfg.clone());
    manifest.dataset = Some((data.clone(), dataset_fingerprint(data)?));
    manifest.seeds = vec![("run".into(), cfg.seed), ("split".into(), cfg.split_seed)];
    manifest.settings.push(("resolved.lambda".into(), format!("{:?}", outcome.lambda)));
    manifest.settings.push(("resolved.labeled_observations".into(), outcome.labeled.len().to_string()));
    manifest.settings.push(("resolved.optimizer_steps".into(), outcome.steps.to_string()));
    for name in [CHECKPOINT_FILE, TRACE_FILE, RESULTS_FILE] {
        if name != RESULTS_FILE || rows.is_some() {
            manifest.add_artifact(&out, name)?;
        }
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&out)?;

    io.say(format!(
        "fold {}/{}: {} training, {} validation observations, {} labeled, {} steps",
        cfg.fold,
        cfg.folds,
        fold.train.len(),
        fold.valid.len(),
        outcome.labeled.len(),
        outcome.steps
    ));
    for r in outcome.trace.iter().filter(|r| r.split == "train") {
        io.say(format!("epoch {:>3} {:<7} loss {:.6}", r.epoch, r.objective, r.loss));
    }
    for r in rows.iter().flatten() {
        io.say(format!("{:<14} {}", r.metric, r.value.map_or("undefined".to_string(), |v| format!("{v:.4}"))));
    }
    io.say(format!("artifacts in {}", out.display()));
    match outcome.failure {
        Some(e) => {
            io.warn(format!("training stopped early; the checkpoint holds the last good parameters: {e}"));
            Err(e)
        }
        None => Ok(()),
    }
}

fn cmd_eval(m: &ArgMatches, argv: Vec<String>, io: &mut Io<'_>) -> Result<()> {
    let start = Instant::now();
    let data = required(m, "data");
    let ck_path = required(m, "checkpoint");
    let ck = Checkpoint::load(ck_path)?;
    let dataset = load(data, io)?;
    let dims = dataset.schema.modality_dims();
    if dims != ck.params.spec.modality_dims || dataset.schema.num_classes != ck.params.spec.num_classes {
        return Err(Error::Schema(format!(
            "checkpoint expects modalities {:?} and {} classes, dataset has {dims:?} and {}",
            ck.params.spec.modality_dims, ck.params.spec.num_classes, dataset.schema.num_classes
        )));
    }
    let cfg = &ck.config;
    let split = m.get_one::<String>("split").expect("default").as_str();
    let idx: Vec<usize> = if split == "all" {
        (0..dataset.len()).collect()
    } else {
        let folds = split_kfold(dataset.len(), cfg.folds, cfg.split_seed)?;
        let f = &folds[cfg.fold];
        if split == "valid" { f.valid.clone() } else { f.train.clone() }
    };
    let evaluation = evaluate(&ck.params, &dataset, &idx, cfg)?;
    let out = out_dir(m, "eval");
    ensure_dir(&out)?;
    let rows = ResultRow::from_summary(cfg.fold, cfg, &evaluation.summary);
    write_results(&out.join(RESULTS_FILE), &rows)?;
    let mut manifest = RunManifest::new(argv);
    manifest.config = Some(cfg.clone());
    manifest.dataset = Some((data.clone(), dataset_fingerprint(data)?));
    manifest.seeds = vec![("run".into(), cfg.seed), ("split".into(), cfg.split_seed)];
    manifest.settings.push(("checkpoint".into(), ck_path.display().to_string()));
    manifest.settings.push(("split".into(), split.into()));
    manifest.add_artifact(&out, RESULTS_FILE)?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&out)?;
    io.say(format!("{} scored rows from {} observations", evaluation.summary.rows, idx.len()));
    if let Some(ce) = evaluation.ce {
        io.say(format!("{:<14} {ce:.6}", "cross_entropy"));
    }
    for r in &rows {
        io.say(format!("{:<14} {}", r.metric, r.value.map_or("undefined".to_string(), |v| format!("{v:.4}"))));
    }
    Ok(())
}

fn cmd_check(m: &ArgMatches, io: &mut Io<'_>) -> Result<()> {
    let kind = m.get_one::<String>("kind").expect("required").as_str();
    let seed = *m.get_one::<u64>("seed").expect("default");
    let size = m.get_one::<usize>("size").copied();
    let depth = *m.get_one::<usize>("depth").expect("default");
    if depth == 0 {
        return Err(Error::Config("--depth must be at least 1".into()));
    }
    let kinds: Vec<&str> = if kind == "all" {
        vec!["pe", "metrics", "oracle", "causality", "grad"]
    } else {
        vec![kind]
    };
    let mut reports: Vec<CheckReport> = Vec::new();
    for k in kinds {
        let report = match k {
            "grad" => {
                let suite = GradSuite {
                    seeds: size.unwrap_or(5) as u64,
                    max_depth: depth,
                    ..GradSuite::default()
                };
                checks::grad_suite(&suite, seed)?
            }
            "oracle" => checks::oracle_suite(size.unwrap_or(1000), seed)?,
            "causality" => checks::causality_suite(size.unwrap_or(100), 20, seed)?,
            "pe" => checks::pe_suite(size.unwrap_or(10_000), &[8, 32, 64], seed)?,
            "metrics" => checks::metrics_suite(size.unwrap_or(500), 300, seed)?,
            other => unreachable!("clap restricts kind, got {other}"),
        };
        io.say(report.to_string());
        reports.push(report);
    }
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(Error::Check(bad.suite.clone()));
    }
    Ok(())
}

fn cmd_report(m: &ArgMatches, io: &mut Io<'_>) -> Result<()> {
    let files: Vec<PathBuf> = m.get_many::<PathBuf>("results").map(|v| v.cloned().collect()).unwrap_or_default();
    let group_by: Vec<String> = m.get_many::<String>("group-by").map(|v| v.cloned().collect()).unwrap_or_default();
    let metrics: Vec<String> = m.get_many::<String>("metric").map(|v| v.cloned().collect()).unwrap_or_default();
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_results(f)?);
    }
    if rows.is_empty() {
        io.warn("no result rows to aggregate; the report is empty");
    }
    let report = aggregate(&rows, &group_by, &metrics)?;
    let out = match m.get_one::<PathBuf>("out") {
        Some(p) => p.clone(),
        None => out_dir(m, "report").join(REPORT_FILE),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    report.write_csv(&out)?;
    let _ = write!(io.out, "{}", report.render_table());
    io.say(format!("wrote {}", out.display()));
    Ok(())
}

fn cmd_grid(m: &ArgMatches, argv: Vec<String>, io: &mut Io<'_>) -> Result<()> {
    let start = Instant::now();
    let data = required(m, "data");
    let grid_path = required(m, "grid");
    let text = fs::read_to_string(grid_path).map_err(|e| Error::io(grid_path, e))?;
    let grid = GridSpec::parse(&text, grid_path)?;
    let dataset = load(data, io)?;
    let out = out_dir(m, "grid");
    ensure_dir(&out)?;
    let cells = grid.configs().len();
    let outcome = run_experiment_grid_with(&dataset, &grid, |fold, cfg, result| {
        let status = match result {
            Ok(r) => r
                .evaluation
                .summary
                .auroc
                .map_or_else(|| "auroc undefined".to_string(), |a| format!("auroc {a:.4}")),
            Err(e) => format!("failed: {e}"),
        };
        let _ = writeln!(
            io.out,
            "fold {fold} scheme={} depth={} mixing={} dropout={} p_l={} seed={}: {status}",
            cfg.scheme, cfg.depth, cfg.mixing, cfg.dropout, cfg.label_fraction, cfg.seed
        );
    })?;
    for (fold, cell, e) in &outcome.failures {
        io.warn(format!("fold {fold} {cell}: {e}"));
    }
    write_results(&out.join(RESULTS_FILE), &outcome.rows)?;
    let mut manifest = RunManifest::new(argv);
    manifest.config = Some(grid.base.clone());
    manifest.dataset = Some((data.clone(), dataset_fingerprint(data)?));
    manifest.seeds.push(("split".into(), grid.base.split_seed));
    for s in &grid.seeds {
        manifest.seeds.push(("run".into(), *s));
    }
    manifest.settings.push(("grid.file".into(), grid_path.display().to_string()));
    for (k, v) in crate::kv::KvFile::parse(&text, grid_path)?.entries() {
        manifest.settings.push((format!("grid.{k}"), v.to_string()));
    }
    manifest.settings.push(("grid.cells_per_fold".into(), cells.to_string()));
    manifest.settings.push(("grid.failed_cells".into(), outcome.failures.len().to_string()));
    manifest.add_artifact(&out, RESULTS_FILE)?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&out)?;
    io.say(format!("{} result rows in {}", outcome.rows.len(), out.join(RESULTS_FILE).display()));
    Ok(())
}

/// Parses `args` (including the program name) and runs the command, writing
/// to the given streams. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let matches = match command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = write!(err, "{}", e.render().ansi());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let mut io = Io { out, err };
    let result = match matches.subcommand() {
        Some(("synth", m)) => cmd_synth(m, argv, &mut io),
        Some(("train", m)) => cmd_train(m, argv, &mut io),
        Some(("eval", m)) => cmd_eval(m, argv, &mut io),
        Some(("check", m)) => cmd_check(m, &mut io),
        Some(("report", m)) => cmd_report(m, &mut io),
        Some(("grid", m)) => cmd_grid(m, argv, &mut io),
        _ => unreachable!("subcommand_required"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}
