//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::compare::compare_reports;
use crate::config::{load_layers, LoadedConfig, SplitMode};
use crate::data::{
    dataset_stats, expand_instances, merge_and_hold_out, parse_dataset_with, read_instances, read_predictions,
    split_dev_protocol, write_instances, write_predictions, AspectInstance, DatasetFormat, DatasetSplit,
    PredictionRecord, SentenceRecord, StatsInput,
};
use crate::error::{Error, Result};
use crate::llm::{
    default_exemplars, run_baseline, sample_exemplars, ChatTransport, ExemplarMode, HttpTransport, ReplayTransport,
    SYSTEM_PROMPT,
};
use crate::manifest::{digest_tree, timestamp, FileDigest, RunManifest};
use crate::metrics::{align_predictions, evaluate, va_heatmap, ReportDocument};
use crate::model::{checkpoint, DimAsrModel, EncoderConfig};
use crate::trainer::{fit_with, write_history_csv, RmseValidator};

const ENV_HELP: &str = "\
Environment:
  DIMASR_API_KEY   bearer token for `llm-baseline --live` (the variable name
                   can be changed with [llm.endpoint] api_key_env)
  RUST_LOG         log filter, default `info`

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 runtime failure.";

#[derive(Debug, Parser)]
#[command(name = "dimasr", version, about = "Aspect-level valence/arousal regression", after_help = ENV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config; repeat to layer files, later ones win.
    #[arg(long = "config", value_name = "FILE")]
    pub configs: Vec<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Common {
    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out <DIR> is required".into()))
    }

    fn load(&self) -> Result<LoadedConfig> {
        load_layers(&self.configs, self.seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse dataset files, split them, and print sentence/instance counts.
    Prepare(PrepareArgs),
    /// Fine-tune the encoder with both regression heads.
    Train(TrainArgs),
    /// Predict V#A for every instance with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Few-shot prompting baseline through a chat-completion endpoint.
    #[command(after_help = ENV_HELP)]
    LlmBaseline(LlmArgs),
    /// Side-by-side RMSE_VA table from evaluation reports.
    Compare(CompareArgs),
    /// Repeat the command recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// task_json or simple_jsonl.
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    #[arg(long, value_enum)]
    pub mode: Option<SplitMode>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output of `prepare`; reads fit.jsonl and holdout.jsonl.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub train_file: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub val_file: Option<PathBuf>,
    /// Print the resolved hyperparameters and exit.
    #[arg(long)]
    pub show_config: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Instance file (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Row label for comparison tables.
    #[arg(long)]
    pub method: Option<String>,
    /// Column label for comparison tables.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Heatmap bin edges on both axes, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "EDGES")]
    pub edges: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Answer requests from a recorded transcript instead of the network.
    #[arg(long, value_name = "FILE", conflicts_with = "live")]
    pub replay: Option<PathBuf>,
    /// Query the configured endpoint; needs the API key variable.
    #[arg(long)]
    pub live: bool,
    /// Labelled instances to draw exemplars from in sampled mode.
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// report.json files, or directories containing one.
    #[arg(required = true, value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// run_manifest.json, or the directory holding it.
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Predict(a) => cmd_predict(a, argv),
        Command::Evaluate(a) => cmd_evaluate(a, argv),
        Command::LlmBaseline(a) => cmd_llm_baseline(a, argv),
        Command::Compare(a) => cmd_compare(a, argv),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("encoding output", e))?;
    write_text(path, &(text + "\n"))
}

fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(digest_tree(p)?.into_iter().map(|mut d| {
                d.path = p.join(d.path);
                d
            }));
        } else {
            out.push(FileDigest::of(p)?);
        }
    }
    Ok(out)
}

fn finish(command: &str, argv: Vec<String>, loaded: &LoadedConfig, inputs: &[&Path], out: &Path) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        argv,
        cwd: std::env::current_dir().map_err(|e| Error::io("reading working directory", e))?,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: loaded.config.seed,
        config_files: loaded.files.clone(),
        overrides: loaded.overrides.clone(),
        config: serde_json::to_value(&loaded.config).map_err(|e| Error::json("encoding config", e))?,
        inputs: digests(inputs)?,
        outputs: digest_tree(out)?,
        timestamp: timestamp(),
    };
    manifest.write(out)?;
    Ok(())
}

fn read_records(path: &Path, loaded: &LoadedConfig, format: Option<DatasetFormat>) -> Result<Vec<SentenceRecord>> {
    let format = format.unwrap_or(loaded.config.data.format);
    parse_dataset_with(path, format, &loaded.config.data.fields)
}

fn split_summary(name: &str, side: &[AspectInstance]) -> String {
    format!(
        "{name:<10} {:>10} {:>10}\n",
        DatasetSplit::sentence_ids(side).len(),
        side.len()
    )
}

pub fn cmd_prepare(a: PrepareArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let out = a.common.out()?;
    let data = &loaded.config.data;
    let seed = loaded.config.seed;
    let mode = a.mode.unwrap_or(data.mode);
    let train_path = a
        .train
        .clone()
        .or_else(|| data.train.clone())
        .ok_or_else(|| Error::Config("no training file: pass --train or set data.train".into()))?;
    let dev_path = a.dev.clone().or_else(|| data.dev.clone());
    let test_path = a.test.clone().or_else(|| data.test.clone());

    let train_records = read_records(&train_path, &loaded, a.format)?;
    let dev_records = match &dev_path {
        Some(p) => read_records(p, &loaded, a.format)?,
        None => Vec::new(),
    };
    let test_records = match &test_path {
        Some(p) => read_records(p, &loaded, a.format)?,
        None => Vec::new(),
    };
    let mut groups = vec![StatsInput {
        language: &data.language,
        domain: &data.domain,
        split: "train",
        records: &train_records,
    }];
    if dev_path.is_some() {
        groups.push(StatsInput {
            language: &data.language,
            domain: &data.domain,
            split: "dev",
            records: &dev_records,
        });
    }
    if test_path.is_some() {
        groups.push(StatsInput {
            language: &data.language,
            domain: &data.domain,
            split: "test",
            records: &test_records,
        });
    }
    let stats = dataset_stats(&groups);

    create_out(out)?;
    let train = expand_instances(&train_records);
    let dev = expand_instances(&dev_records);
    let mut summary = format!("{:<10} {:>10} {:>10}\n", "Output", "Sentences", "Instances");
    let (fit, holdout) = match mode {
        SplitMode::Dev => {
            let split = split_dev_protocol(&train, data.train_ratio, seed)?;
            write_instances(&out.join("train.jsonl"), &split.train)?;
            write_instances(&out.join("eval.jsonl"), &split.eval)?;
            summary += &split_summary("train", &split.train);
            summary += &split_summary("eval", &split.eval);
            let inner = merge_and_hold_out(&split.train, &[], data.holdout_fraction, seed)?;
            (inner.train, inner.eval)
        }
        SplitMode::Submission => {
            let split = merge_and_hold_out(&train, &dev, data.holdout_fraction, seed)?;
            (split.train, split.eval)
        }
    };
    write_instances(&out.join("fit.jsonl"), &fit)?;
    write_instances(&out.join("holdout.jsonl"), &holdout)?;
    summary += &split_summary("fit", &fit);
    summary += &split_summary("holdout", &holdout);
    if test_path.is_some() {
        let test = expand_instances(&test_records);
        write_instances(&out.join("test.jsonl"), &test)?;
        summary += &split_summary("test", &test);
    }
    let text = format!("{stats}\n\n{summary}");
    write_text(&out.join("stats.txt"), &text)?;
    write_json(&out.join("stats.json"), &stats)?;
    println!("{text}");

    let mut inputs: Vec<&Path> = vec![&train_path];
    inputs.extend(dev_path.as_deref());
    inputs.extend(test_path.as_deref());
    finish("prepare", argv, &loaded, &inputs, out)
}

pub fn cmd_train(a: TrainArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let config = &loaded.config;
    println!("{}", config.describe_training());
    if a.show_config {
        return Ok(());
    }
    let out = a.common.out()?;
    let from_data = |name: &str| a.data.as_ref().map(|d| d.join(name));
    let fit_path = a
        .train_file
        .clone()
        .or_else(|| from_data("fit.jsonl"))
        .ok_or_else(|| Error::Config("no training data: pass --data or --train-file".into()))?;
    let val_path = a
        .val_file
        .clone()
        .or_else(|| from_data("holdout.jsonl"))
        .ok_or_else(|| Error::Data("validation set required: pass --data or --val-file".into()))?;
    if !val_path.exists() {
        return Err(Error::Data(format!("validation set required: {} not found", val_path.display())));
    }
    let fit_set = read_instances(&fit_path)?;
    let val_set = read_instances(&val_path)?;
    let mut validator = RmseValidator::new(&val_set)?;

    let mut model = DimAsrModel::from_config(&config.encoder, config.train.max_len, config.model_config(), config.seed)?;
    log::info!(
        "training {} parameters on {} instances, validating on {}",
        model.num_parameters(),
        fit_set.len(),
        val_set.len()
    );
    let history = fit_with(&mut model, &fit_set, &mut validator, &config.train, |_, _| Ok(()))?;
    create_out(out)?;
    checkpoint::save_checkpoint(&model, &out.join("checkpoint"))?;
    write_history_csv(&out.join("history.csv"), &history)?;
    write_json(&out.join("history.json"), &history)?;
    println!(
        "best epoch {} with validation RMSE_VA {:.4}{}",
        history.best_epoch,
        history.best_val_rmse_va,
        if history.stopped_early { " (stopped early)" } else { "" }
    );
    finish("train", argv, &loaded, &[&fit_path, &val_path], out)
}

pub fn cmd_predict(a: PredictArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let out = a.common.out()?;
    let model = match (&loaded.config.encoder, a.common.configs.is_empty()) {
        (EncoderConfig::StandIn(s), false) => checkpoint::load_checkpoint_expecting(&a.checkpoint, s.hidden_dim)?,
        _ => checkpoint::load_checkpoint(&a.checkpoint)?,
    };
    let instances = read_instances(&a.input)?;
    let preds = model.predict(&instances)?;
    let records: Vec<PredictionRecord> = instances
        .iter()
        .zip(preds)
        .map(|(i, va)| PredictionRecord::new(i, va))
        .collect();
    create_out(out)?;
    write_predictions(&out.join("predictions.jsonl"), &records)?;
    println!("wrote {} predictions", records.len());
    finish("predict", argv, &loaded, &[&a.checkpoint, &a.input], out)
}

pub const HEATMAP_NOTE: &str =
    "Cells bin instances by gold valence (rows) and arousal (columns); the 4x4 grid on [1,3,5,7,9] is a chosen default.";

pub fn cmd_evaluate(a: EvaluateArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let out = a.common.out()?;
    let cfg = &loaded.config;
    let gold = read_instances(&a.gold)?;
    let preds = read_predictions(&a.pred)?;
    let (p, g) = align_predictions(&gold, &preds)?;
    let report = evaluate(&p, &g)?;
    let (v_edges, a_edges) = match &a.edges {
        Some(e) => (e.clone(), e.clone()),
        None => (cfg.evaluate.v_edges.clone(), cfg.evaluate.a_edges.clone()),
    };
    let heatmap = va_heatmap(&p, &g, &v_edges, &a_edges)?;
    let note = if v_edges == crate::metrics::DEFAULT_EDGES && a_edges == crate::metrics::DEFAULT_EDGES {
        HEATMAP_NOTE.to_string()
    } else {
        "Cells bin instances by gold valence (rows) and arousal (columns).".to_string()
    };
    let doc = ReportDocument {
        method: a.method.clone().unwrap_or_else(|| cfg.evaluate.method.clone()),
        dataset: a.dataset.clone().unwrap_or_else(|| cfg.data.dataset.clone()),
        report,
        heatmap,
        heatmap_note: note,
    };
    let text = format!(
        "{} on {}\n\n{}\n\nRMSE_VA by gold VA region\n{}\n{}\n",
        doc.method, doc.dataset, doc.report, doc.heatmap, doc.heatmap_note
    );
    create_out(out)?;
    write_json(&out.join("report.json"), &doc)?;
    write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    finish("evaluate", argv, &loaded, &[&a.gold, &a.pred], out)
}

pub fn cmd_llm_baseline(a: LlmArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let out = a.common.out()?;
    let cfg = &loaded.config.llm;
    let instances = read_instances(&a.input)?;
    let mut inputs: Vec<&Path> = vec![&a.input];
    let exemplars = match &cfg.exemplars {
        ExemplarMode::Fixed => default_exemplars(),
        ExemplarMode::Sampled { k } => {
            let pool_path = a
                .pool
                .as_deref()
                .ok_or_else(|| Error::Config("sampled exemplars need --pool <FILE>".into()))?;
            inputs.push(pool_path);
            sample_exemplars(&read_instances(pool_path)?, *k, loaded.config.seed)?
        }
    };
    let transport: Box<dyn ChatTransport> = match (&a.replay, a.live) {
        (Some(path), _) => {
            inputs.push(path);
            Box::new(ReplayTransport::from_file(path)?)
        }
        (None, true) => Box::new(HttpTransport::new(&cfg.endpoint)?),
        (None, false) => {
            return Err(Error::Config(
                "choose a transport: --replay <FILE> for a recorded transcript or --live for the endpoint".into(),
            ))
        }
    };
    let run = run_baseline(&instances, &exemplars, SYSTEM_PROMPT, cfg, transport.as_ref())?;
    create_out(out)?;
    write_predictions(&out.join("predictions.jsonl"), &run.predictions)?;
    crate::llm::transport::write_transcript(&out.join("transcript.jsonl"), &run.transcript)?;
    write_json(&out.join("run_log.json"), &run.log)?;
    println!(
        "{} instances, {} requests, {} parse failures, {} transport errors, {} fallbacks",
        run.log.instances,
        run.log.requests,
        run.log.parse_failures,
        run.log.transport_errors,
        run.log.fallbacks.len()
    );
    finish("llm-baseline", argv, &loaded, &inputs, out)?;
    if run.log.all_failed() {
        return Err(Error::Llm(format!(
            "every one of {} instances fell back; see {}",
            run.log.instances,
            out.join("transcript.jsonl").display()
        )));
    }
    Ok(())
}

pub fn cmd_compare(a: CompareArgs, argv: Vec<String>) -> Result<()> {
    let loaded = a.common.load()?;
    let out = a.common.out()?;
    let paths: Vec<PathBuf> = a
        .reports
        .iter()
        .map(|p| if p.is_dir() { p.join("report.json") } else { p.clone() })
        .collect();
    let mut docs = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        let doc: ReportDocument =
            serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", p.display()), e))?;
        docs.push(doc);
    }
    let table = compare_reports(&docs)?;
    let text = format!("{table}\n");
    create_out(out)?;
    write_text(&out.join("comparison.txt"), &text)?;
    write_json(&out.join("comparison.json"), &table)?;
    print!("{text}");
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    finish("compare", argv, &loaded, &inputs, out)
}

fn cmd_rerun(a: RerunArgs) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    let mut argv = recorded.argv.clone();
    let new_out = match &a.out {
        Some(o) => Some(std::path::absolute(o).map_err(|e| Error::io(format!("resolving {}", o.display()), e))?),
        None => None,
    };
    let mut out_dir = None;
    let mut i = 0;
    while i < argv.len() {
        if argv[i] == "--out" && i + 1 < argv.len() {
            if let Some(o) = &new_out {
                argv[i + 1] = o.to_string_lossy().into_owned();
            }
            out_dir = Some(PathBuf::from(&argv[i + 1]));
            i += 1;
        } else if let Some(v) = argv[i].strip_prefix("--out=").map(str::to_string) {
            let dir = new_out.clone().unwrap_or_else(|| PathBuf::from(v));
            argv[i] = format!("--out={}", dir.display());
            out_dir = Some(dir);
        }
        i += 1;
    }
    let out_dir = out_dir.ok_or_else(|| Error::Config("recorded command has no --out".into()))?;
    std::env::set_current_dir(&recorded.cwd)
        .map_err(|e| Error::io(format!("entering {}", recorded.cwd.display()), e))?;
    let cli = Cli::try_parse_from(std::iter::once("dimasr".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Error::Config(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::Config("a rerun manifest cannot point at another rerun".into()));
    }
    dispatch(cli.command, argv)?;
    let changed = recorded.changed_outputs(&out_dir)?;
    if changed.is_empty() {
        println!("rerun reproduced all {} recorded outputs", recorded.outputs.len());
    } else {
        let list: Vec<String> = changed.iter().map(|p| p.display().to_string()).collect();
        println!("rerun outputs differ from the record: {}", list.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_names_the_credential_variable() {
        let help = Cli::command().render_long_help().to_string();
        assert!(help.contains("DIMASR_API_KEY"), "{help}");
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["dimasr", "prepare", "--format", "xml", "--out", "x"]), 1);
        assert_eq!(run(["dimasr", "bogus"]), 1);
        assert_eq!(run(["dimasr", "--help"]), 0);
    }
}
