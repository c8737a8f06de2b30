use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Generator, ModelConfig, ModelParams};
use crate::numerics::{memory, DType, Element, Rng};

use super::activation::median;
use super::params::activated_param_count;
use super::report::num;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchOptions {
    /// Independent prompts decoded one after another per trial.
    pub batch: usize,
    pub prompt_len: usize,
    pub new_tokens: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch: 4,
            prompt_len: 8,
            new_tokens: 32,
            trials: 7,
            warmup: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchEntry {
    pub label: String,
    pub layer_kind: String,
    pub activated_params: u64,
    /// Generated tokens per second, one value per trial.
    pub trial_tokens_per_sec: Vec<f64>,
    pub median_tokens_per_sec: f64,
    /// Parameter bytes plus the high-water mark of decode-time tensors.
    pub peak_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub threads: usize,
    pub options: BenchOptions,
    pub entries: [BenchEntry; 2],
    /// `|a − b| / max(a, b)` of the two medians.
    pub relative_difference: f64,
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 5] = ["label", "trial", "tokens_per_sec", "activated_params", "peak_bytes"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for e in &self.entries {
            for (i, tps) in e.trial_tokens_per_sec.iter().enumerate() {
                rows.push(vec![
                    e.label.clone(),
                    i.to_string(),
                    num(*tps),
                    e.activated_params.to_string(),
                    e.peak_bytes.to_string(),
                ]);
            }
        }
        rows
    }
}

trait Trial {
    /// Seconds spent and peak decode bytes above the starting live size.
    fn run(&mut self) -> Result<(f64, usize)>;
    fn param_bytes(&self) -> usize;
}

struct Runner<T: Element> {
    params: ModelParams<T>,
    cfg: ModelConfig,
    prompts: Vec<Vec<u32>>,
    new_tokens: usize,
}

impl<T: Element> Trial for Runner<T> {
    fn run(&mut self) -> Result<(f64, usize)> {
        memory::reset_peak();
        let base = memory::live_bytes();
        let start = Instant::now();
        let mut g = Generator::new(&self.params, &self.cfg)?;
        for p in &self.prompts {
            g.reset();
            std::hint::black_box(g.greedy(p, self.new_tokens)?);
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((secs, memory::peak_bytes().saturating_sub(base)))
    }

    fn param_bytes(&self) -> usize {
        self.params.param_count() * T::DTYPE.size_bytes()
    }
}

fn runner(cfg: &ModelConfig, opts: &BenchOptions) -> Result<Box<dyn Trial>> {
    cfg.validate()?;
    if opts.prompt_len + opts.new_tokens > cfg.seq_len {
        return Err(Error::Config(format!(
            "prompt_len + new_tokens = {} exceeds seq_len {}",
            opts.prompt_len + opts.new_tokens,
            cfg.seq_len
        )));
    }
    // Same prompts for both models.
    let mut rng = Rng::new(opts.seed).split(11);
    let prompts: Vec<Vec<u32>> = (0..opts.batch)
        .map(|_| (0..opts.prompt_len).map(|_| rng.below(cfg.vocab_size) as u32).collect())
        .collect();
    fn boxed<T: Element>(cfg: &ModelConfig, prompts: Vec<Vec<u32>>, new_tokens: usize) -> Result<Box<dyn Trial>> {
        Ok(Box::new(Runner::<T> {
            params: ModelParams::init(cfg)?,
            cfg: cfg.clone(),
            prompts,
            new_tokens,
        }))
    }
    match cfg.dtype {
        DType::F32 => boxed::<f32>(cfg, prompts, opts.new_tokens),
        DType::F64 => boxed::<f64>(cfg, prompts, opts.new_tokens),
    }
}

/// Single-threaded greedy decoding throughput of two configurations with
/// equal activated parameters. Trials alternate between the two models,
/// swapping which goes first each round, so slow drifts hit both alike.
pub fn throughput_bench(a: &ModelConfig, b: &ModelConfig, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.trials < 5 {
        return Err(Error::Argument(format!("need at least 5 trials, got {}", opts.trials)));
    }
    if opts.batch == 0 || opts.prompt_len == 0 || opts.new_tokens == 0 {
        return Err(Error::Argument("batch, prompt_len and new_tokens must be positive".into()));
    }
    let (ca, cb) = (activated_param_count(a), activated_param_count(b));
    if ca.model_activated != cb.model_activated {
        return Err(Error::Config(format!(
            "activated parameters differ: {} vs {}",
            ca.model_activated, cb.model_activated
        )));
    }
    let mut runners = [runner(a, opts)?, runner(b, opts)?];
    for _ in 0..opts.warmup {
        for r in runners.iter_mut() {
            r.run()?;
        }
    }
    let tokens = (opts.batch * opts.new_tokens) as f64;
    let mut tps = [Vec::new(), Vec::new()];
    let mut peak = [0usize; 2];
    for trial in 0..opts.trials {
        let order = if trial % 2 == 0 { [0, 1] } else { [1, 0] };
        for i in order {
            let (secs, p) = runners[i].run()?;
            tps[i].push(tokens / secs.max(1e-12));
            peak[i] = peak[i].max(p);
        }
    }
    let entry = |i: usize, cfg: &ModelConfig, activated: u64, label: &str| BenchEntry {
        label: label.to_string(),
        layer_kind: cfg.layer_kind.name().to_string(),
        activated_params: activated,
        median_tokens_per_sec: median(tps[i].clone()),
        trial_tokens_per_sec: tps[i].clone(),
        peak_bytes: (runners[i].param_bytes() + peak[i]) as u64,
    };
    let entries = [entry(0, a, ca.model_activated, "a"), entry(1, b, cb.model_activated, "b")];
    let (ma, mb) = (entries[0].median_tokens_per_sec, entries[1].median_tokens_per_sec);
    Ok(BenchReport {
        threads: 1,
        options: opts.clone(),
        relative_difference: (ma - mb).abs() / ma.max(mb),
        entries,
    })
}
