//! `mone`: train, evaluate and analyse dense, MoE and MoNE language models.
//!
//! Failures print one line `error[<category>]: <message>` on stderr and
//! exit with 2 (usage), 3 (invalid configuration or arguments), 4 (numeric
//! divergence or failed gradient check) or 1 (anything else).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mone_core::analysis::{
    activated_param_count, activation_stats, load_balance_variance, prune_scan, throughput_bench, write_csv_file,
    write_summary, ActivationReport, BalanceReport, BenchOptions, BenchReport, PruneSweepResult, DEFAULT_NEAR_ZERO,
};
use mone_core::analysis::report::num;
use mone_core::model::{
    evaluate, full_gradcheck, load_checkpoint, probe_sequences, read_manifest, save_checkpoint, train, Dataset,
    ModelConfig, ModelParams, RunConfig, TrainState,
};
use mone_core::numerics::{DType, Element};
use mone_core::Error;

const THREADS_ENV: &str = "MONE_THREADS";
const GRADCHECK_TOL: f64 = 1e-4;
const FILE_EVAL_FRACTION: f64 = 0.1;

#[derive(Parser)]
#[command(name = "mone", version, about = "Neuron-granular mixture-of-experts laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config and write metrics plus a checkpoint.
    Train(TrainArgs),
    /// Held-out cross-entropy and accuracy of a checkpoint.
    Eval(DataArgs),
    /// Evaluate with each routed expert cut to its top neurons per token.
    PruneScan(PruneArgs),
    /// Gate value histograms and medians per layer.
    ActStats(DataArgs),
    /// Variance of neuron dispatch fractions per layer and expert.
    LbVariance(DataArgs),
    /// Total and activated parameter counts.
    ParamCount(ParamArgs),
    /// Greedy-decoding throughput of two equally sized configurations.
    Bench(BenchArgs),
    /// Full-model analytic vs finite-difference gradient comparison.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Resume from this checkpoint instead of a fresh init.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Token file overriding the config's data section.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Replaces `model.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config whose data section supplies the corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Token file; its held-out tail is evaluated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for synthetic corpora; defaults to the checkpoint's model seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated keep ratios in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Exactly two run configs.
    #[arg(long, num_args = 1, required = true)]
    config: Vec<PathBuf>,
    #[arg(long, default_value_t = 7)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long)]
    config: PathBuf,
    /// Width the model is shrunk to for the check.
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[arg(long)]
    seed: Option<u64>,
}

/// Error raised by flag combinations clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
struct GradcheckFailed(String);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<Usage>().is_some() {
        return ("usage", 2);
    }
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return ("gradcheck", 4);
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) => {
            let code = match e {
                Error::Config(_)
                | Error::Argument(_)
                | Error::Mode(_)
                | Error::Dimension(_)
                | Error::Input(_)
                | Error::EmptyInput(_)
                | Error::EmptyBatch(_) => 3,
                Error::Divergence { .. } | Error::Numeric(_) | Error::DegenerateInput(_) => 4,
                _ => 1,
            };
            (e.category(), code)
        }
        None => ("io", 1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let line = text.lines().next().unwrap_or("bad usage").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = classify(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{cat}]: {msg}");
            ExitCode::from(code)
        }
    }
}

fn threads() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV}=`{v}` is not a positive integer")).into()),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

/// Runs a generic function with the element type named by a [`DType`].
macro_rules! with_dtype {
    ($dtype:expr, $f:ident($($arg:expr),* $(,)?)) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => {
            let dtype = read_manifest(&a.checkpoint)?.dtype;
            with_dtype!(dtype, cmd_eval(&a))
        }
        Command::PruneScan(a) => {
            let dtype = read_manifest(&a.data.checkpoint)?.dtype;
            with_dtype!(dtype, cmd_prune(&a))
        }
        Command::ActStats(a) => {
            let dtype = read_manifest(&a.checkpoint)?.dtype;
            with_dtype!(dtype, cmd_act(&a))
        }
        Command::LbVariance(a) => {
            let dtype = read_manifest(&a.checkpoint)?.dtype;
            with_dtype!(dtype, cmd_lb(&a))
        }
        Command::ParamCount(a) => cmd_params(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

/// Corpus from `--data`, else from the run config's data section.
fn dataset(data: Option<&Path>, config: Option<&Path>, vocab: usize, seed: u64) -> anyhow::Result<Dataset> {
    if let Some(p) = data {
        return Ok(Dataset::from_file(p, vocab, FILE_EVAL_FRACTION)?);
    }
    let Some(cp) = config else {
        return Err(usage("no corpus: pass --data or a --config with a [data] section"));
    };
    let run = RunConfig::load(cp)?;
    match run.data {
        Some(d) => Ok(Dataset::from_config(&d, vocab, seed)?),
        None => Err(usage(format!("{} has no [data] section and --data is absent", cp.display()))),
    }
}

fn check_data_flags(a: &DataArgs) -> anyhow::Result<()> {
    if a.data.is_none() && a.config.is_none() {
        return Err(usage("one of --data or --config is required"));
    }
    Ok(())
}

struct Loaded<T: Element> {
    cfg: ModelConfig,
    params: ModelParams<T>,
    eval: Vec<Vec<u32>>,
}

fn load_with_data<T: Element>(a: &DataArgs) -> anyhow::Result<Loaded<T>> {
    check_data_flags(a)?;
    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let cfg = ck.config;
    let data = dataset(a.data.as_deref(), a.config.as_deref(), cfg.vocab_size, a.seed.unwrap_or(cfg.seed))?;
    let eval = data.eval_sequences(cfg.seq_len);
    Ok(Loaded {
        cfg,
        params: ck.state.params,
        eval,
    })
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        run.model.seed = s;
    }
    if a.data.is_none() && run.data.is_none() {
        return Err(usage(format!("{} has no [data] section and --data is absent", a.config.display())));
    }
    let ckpt_out = a.out.join("checkpoint");
    if let Some(src) = &a.checkpoint {
        if src.canonicalize().ok() == ckpt_out.canonicalize().ok() && ckpt_out.exists() {
            return Err(usage("--out would overwrite the input checkpoint"));
        }
    }
    let data = dataset(a.data.as_deref(), Some(&a.config), run.model.vocab_size, run.model.seed)?;
    let threads = threads()?;
    with_dtype!(run.model.dtype, train_typed(&run, &data, a.checkpoint.as_deref(), &a.out, threads))
}

fn train_typed<T: Element>(
    run: &RunConfig,
    data: &Dataset,
    resume: Option<&Path>,
    out: &Path,
    threads: usize,
) -> anyhow::Result<()> {
    let mut state = match resume {
        Some(p) => {
            let ck = load_checkpoint::<T>(p)?;
            if ck.config != run.model {
                bail!(Error::Config("checkpoint model differs from the config's [model] section".into()));
            }
            ck.state
        }
        None => TrainState::<T>::init(&run.model)?,
    };
    ensure_dir(out)?;
    let log_every = run.train.log_every.max(1);
    let log_path = out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let history = train(&mut state, &run.model, &run.train, data, threads, |m| {
        let line = m.log_line();
        writeln!(log, "{line}")?;
        if m.step % log_every == 0 || m.step == run.train.steps {
            println!("{line}");
        }
        Ok(())
    })?;
    log.flush()?;
    // Wall-clock throughput stays out of the CSV so reruns are byte-identical.
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|m| vec![m.step.to_string(), num(m.ce_loss), num(m.aux_loss), num(m.grad_norm), num(m.lr)])
        .collect();
    write_csv_file(&out.join("metrics.csv"), &["step", "ce_loss", "aux_loss", "grad_norm", "lr"], &rows)?;
    save_checkpoint(&state, &run.model, &out.join("checkpoint"))?;
    let eval = data.eval_sequences(run.model.seq_len);
    if !eval.is_empty() {
        let m = evaluate(&state.params, &run.model, &eval, None, threads)?;
        write_summary(&out.join("eval.json"), "mone.eval", &m)?;
    }
    Ok(())
}

fn cmd_eval<T: Element>(a: &DataArgs) -> anyhow::Result<()> {
    let l = load_with_data::<T>(a)?;
    let m = evaluate(&l.params, &l.cfg, &l.eval, None, threads()?)?;
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_csv_file(
            &out.join("eval.csv"),
            &["ce_loss", "accuracy", "tokens"],
            &[vec![num(m.ce_loss), num(m.accuracy), m.tokens.to_string()]],
        )?;
        write_summary(&out.join("eval.json"), "mone.eval", &m)?;
    }
    print_json(&m)
}

fn cmd_prune<T: Element>(a: &PruneArgs) -> anyhow::Result<()> {
    let l = load_with_data::<T>(&a.data)?;
    let id = a.data.checkpoint.display().to_string();
    let r = prune_scan(&l.params, &l.cfg, &l.eval, &a.ratios, &id, threads()?)?;
    if let Some(out) = &a.data.out {
        ensure_dir(out)?;
        write_csv_file(&out.join("prune_scan.csv"), &PruneSweepResult::CSV_HEADER, &r.csv_rows())?;
        write_summary(&out.join("prune_scan.json"), "mone.prune_scan", &r)?;
    }
    print_json(&r)
}

fn cmd_act<T: Element>(a: &DataArgs) -> anyhow::Result<()> {
    let l = load_with_data::<T>(a)?;
    let r = activation_stats(&l.params, &l.cfg, &l.eval, DEFAULT_NEAR_ZERO)?;
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_csv_file(&out.join("act_stats.csv"), &ActivationReport::CSV_HEADER, &r.csv_rows())?;
        write_summary(&out.join("act_stats.json"), "mone.act_stats", &r)?;
    }
    let medians: Vec<f64> = r.layers.iter().map(|l| l.median_selected_abs).collect();
    print_json(&serde_json::json!({ "tokens": r.tokens, "median_selected_abs": medians }))
}

fn cmd_lb<T: Element>(a: &DataArgs) -> anyhow::Result<()> {
    let l = load_with_data::<T>(a)?;
    let r = load_balance_variance(&l.params, &l.cfg, &l.eval)?;
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_csv_file(&out.join("lb_variance.csv"), &BalanceReport::CSV_HEADER, &r.csv_rows())?;
        write_summary(&out.join("lb_variance.json"), "mone.lb_variance", &r)?;
    }
    print_json(&serde_json::json!({ "tokens": r.tokens, "mean_variance": r.mean_variance }))
}

fn cmd_params(a: &ParamArgs) -> anyhow::Result<()> {
    let cfg = match (&a.config, &a.checkpoint) {
        (Some(c), _) => RunConfig::load(c)?.model,
        (None, Some(ck)) => read_manifest(ck)?.config,
        (None, None) => return Err(usage("one of --config or --checkpoint is required")),
    };
    let c = activated_param_count(&cfg);
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let v = serde_json::to_value(&c)?;
        let rows: Vec<Vec<String>> = v
            .as_object()
            .expect("struct serializes to an object")
            .iter()
            .map(|(k, v)| vec![k.clone(), v.to_string()])
            .collect();
        write_csv_file(&out.join("param_count.csv"), &["quantity", "value"], &rows)?;
        write_summary(&out.join("param_count.json"), "mone.param_count", &c)?;
    }
    print_json(&c)
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let [ca, cb] = a.config.as_slice() else {
        return Err(usage(format!("bench takes exactly two --config flags, got {}", a.config.len())));
    };
    let (ma, mb) = (RunConfig::load(ca)?.model, RunConfig::load(cb)?.model);
    let seq = ma.seq_len.min(mb.seq_len);
    let prompt_len = (seq / 4).max(1);
    let opts = BenchOptions {
        prompt_len,
        new_tokens: seq - prompt_len,
        trials: a.trials,
        seed: a.seed,
        ..BenchOptions::default()
    };
    let mut r = throughput_bench(&ma, &mb, &opts)?;
    r.entries[0].label = ca.display().to_string();
    r.entries[1].label = cb.display().to_string();
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_csv_file(&out.join("bench.csv"), &BenchReport::CSV_HEADER, &r.csv_rows())?;
        write_summary(&out.join("bench.json"), "mone.bench", &r)?;
    }
    print_json(&r)
}

/// The config's model shrunk to `dims` wide, in f64.
fn gradcheck_model(mut m: ModelConfig, dims: usize) -> anyhow::Result<ModelConfig> {
    if dims == 0 {
        return Err(Error::Argument("--dims must be positive".into()).into());
    }
    m.d_model = dims;
    m.d_expert = m.d_expert.min(dims);
    if dims % m.n_heads != 0 {
        m.n_heads = 1;
    }
    if let Some(s) = m.mone.as_mut() {
        s.neurons_per_expert = s.neurons_per_expert.min(m.d_expert);
    }
    m.vocab_size = m.vocab_size.min(4 * dims).max(2);
    m.seq_len = m.seq_len.min(6);
    m.dtype = DType::F64;
    // Large enough weights that gates leave their linear regime.
    m.init_std = 0.4;
    m.validate()?;
    Ok(m)
}

fn cmd_gradcheck(a: &GradArgs) -> anyhow::Result<()> {
    let run = RunConfig::load(&a.config)?;
    let mut cfg = gradcheck_model(run.model, a.dims)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let params = ModelParams::<f64>::init(&cfg)?;
    let seqs = probe_sequences(&cfg, 2, cfg.seq_len, cfg.seed);
    let r = full_gradcheck(&params, &cfg, &seqs, 1e-5)?;
    print_json(&serde_json::json!({
        "global_rel_l2": r.global_rel_l2,
        "worst_rel_l2": r.worst_rel_l2,
        "worst_tensor": r.worst_tensor,
        "parameters": params.param_count(),
        "tolerance": GRADCHECK_TOL,
    }))?;
    if !r.passes(GRADCHECK_TOL) {
        return Err(GradcheckFailed(format!(
            "relative error {:.3e} in `{}` exceeds {GRADCHECK_TOL:e}",
            r.worst_rel_l2, r.worst_tensor
        ))
        .into());
    }
    Ok(())
}
