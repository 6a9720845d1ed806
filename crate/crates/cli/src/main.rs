use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use npolab::diffusion::Condition;
use npolab::evalharness::{paired_eval, sample_items, sweep_with_threads, SweepSetup};
use npolab::pipeline::{
    load_model, load_offset, run_finetune, run_scorer, run_train_base, Artifact, LoadedWeights,
    RunConfig,
};
use npolab::training::{PoFamily, Polarity};
use npolab::weightalg::project_offsets;
use npolab::{LabError, Result};

const THREADS_ENV: &str = "NPOLAB_THREADS";

#[derive(Parser)]
#[command(name = "npolab", version, about = "Negative preference optimization lab for toy diffusion models")]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.dpo.lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base noise predictor.
    TrainBase,
    /// Fine-tune the base model toward or against the preference signal.
    Finetune {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, value_enum)]
        polarity: PolarityArg,
    },
    /// Draw guided samples with the configured recipe.
    Sample {
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Paired comparison of the two configured recipes.
    Eval,
    /// Grid sweep of the negative-branch recipe against classical guidance.
    Sweep {
        /// Worker threads (default: available cores). NPOLAB_THREADS takes precedence.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Split the negative offset into components along and across the positive one.
    Decompose,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Dpo,
    Dr,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Po,
    Npo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| LabError::config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg = cfg.with_override(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::TrainBase => train_base(&cfg),
        Command::Finetune { family, polarity } => {
            let family = match family {
                FamilyArg::Dpo => PoFamily::Dpo,
                FamilyArg::Dr => PoFamily::Dr,
            };
            let polarity = match polarity {
                PolarityArg::Po => Polarity::Po,
                PolarityArg::Npo => Polarity::Npo,
            };
            finetune(&cfg, family, polarity)
        }
        Command::Sample { omega } => sample(&cfg, omega),
        Command::Eval => eval(&cfg),
        Command::Sweep { threads } => sweep(&cfg, resolve_threads(threads)?),
        Command::Decompose => decompose(&cfg),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| LabError::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(LabError::config("thread count must be at least 1"));
    }
    Ok(n)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, body).map_err(|e| LabError::io(path, e))
}

fn emit_summary(cfg: &RunConfig, stage: &str, summary: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&summary)?;
    write_file(&cfg.output_dir.join(format!("{stage}_summary.json")), &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(())
}

fn train_base(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let (_, log, ck) = run_train_base(cfg)?;
    let path = cfg.path(Artifact::Base);
    write_file(&path, &ck.to_json()?)?;
    log.write_jsonl(cfg.output_dir.join("base_log.jsonl"))?;
    emit_summary(
        cfg,
        "train_base",
        json!({
            "checkpoint": path,
            "iterations": log.entries.len(),
            "final_loss": log.entries.last().map(|e| e.loss),
            "global_seed": cfg.global_seed,
            "data_seed": cfg.stage_seed("base_data", cfg.train.base.seed),
            "init_seed": cfg.stage_seed("base_init", cfg.train.base.seed),
        }),
    )
}

fn finetune(cfg: &RunConfig, family: PoFamily, polarity: Polarity) -> Result<()> {
    let base = load_model(cfg.path(Artifact::Base))?;
    let scorer = run_scorer(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let out = run_finetune(cfg, &base, family, polarity, &scorer)?;
    let (model_path, offset_path, other) = match polarity {
        Polarity::Po => (cfg.path(Artifact::Po), cfg.path(Artifact::Eta), cfg.path(Artifact::Delta)),
        Polarity::Npo => (cfg.path(Artifact::Npo), cfg.path(Artifact::Delta), cfg.path(Artifact::Eta)),
    };
    write_file(&model_path, &out.model_checkpoint.to_json()?)?;
    write_file(&offset_path, &out.offset_checkpoint.to_json()?)?;
    let method = family.method(polarity);
    let stage = format!("{}_{}", family_name(family), polarity_name(polarity));
    out.log.write_jsonl(cfg.output_dir.join(format!("{stage}_log.jsonl")))?;
    let mut summary = json!({
        "method": method,
        "checkpoint": model_path,
        "offset": offset_path,
        "offset_norm": out.offset.norm(),
        "iterations": out.log.entries.len(),
        "batch_seed": cfg.stage_seed(&format!("finetune_{}", family_name(family)), cfg.train.for_family(family).seed),
    });
    if other.exists() {
        let other = load_offset(&other, &base)?;
        let (eta, delta) = match polarity {
            Polarity::Po => (&out.offset, &other),
            Polarity::Npo => (&other, &out.offset),
        };
        summary["decomposition"] = decomposition_json(eta, delta)?;
    }
    emit_summary(cfg, &stage, summary)
}

fn family_name(f: PoFamily) -> &'static str {
    match f {
        PoFamily::Dpo => "dpo",
        PoFamily::Dr => "dr",
    }
}

fn polarity_name(p: Polarity) -> &'static str {
    match p {
        Polarity::Po => "po",
        Polarity::Npo => "npo",
    }
}

fn decomposition_json(eta: &npolab::Params, delta: &npolab::Params) -> Result<serde_json::Value> {
    let d = project_offsets(eta, delta)?;
    Ok(json!({
        "eta_norm": eta.norm(),
        "delta_norm": delta.norm(),
        "parallel_norm": d.parallel.norm(),
        "orthogonal_norm": d.orthogonal.norm(),
        "cosine": d.cosine,
        "component_cosine": d.component_cosine(),
    }))
}

#[derive(Serialize)]
struct SampleRecord {
    condition: usize,
    seed: u64,
    x: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

fn sample(cfg: &RunConfig, omega: Option<f64>) -> Result<()> {
    let spec = match omega {
        Some(w) => cfg.sampler.with_omega(w),
        None => cfg.sampler,
    };
    spec.validate().map_err(|e| LabError::config(e.to_string()))?;
    let weights = LoadedWeights::load(cfg, &[&cfg.sample.recipe])?;
    let sc = weights.sampler_config(&cfg.sample.recipe, spec)?;
    let scorer = if cfg.sample.score { Some(run_scorer(cfg)?) } else { None };
    let items = npolab::evalharness::cycled_items(cfg.sample.n, weights.base.num_classes(), cfg.sample.first_seed);
    let xs = sample_items(&weights.base, &sc, &items)?;
    let mut body = String::new();
    for (it, x) in items.iter().zip(&xs) {
        let score = match &scorer {
            Some(s) => Some(s.score(x, Condition::Class(it.condition))?),
            None => None,
        };
        body.push_str(&serde_json::to_string(&SampleRecord {
            condition: it.condition,
            seed: it.seed,
            x: *x,
            score,
        })?);
        body.push('\n');
    }
    let path = cfg.output_dir.join("samples.jsonl");
    write_file(&path, &body)?;
    println!("wrote {} samples to {}", items.len(), path.display());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let weights = LoadedWeights::load(cfg, &[&cfg.eval.a, &cfg.eval.b])?;
    let a = weights.sampler_config(&cfg.eval.a, cfg.sampler)?;
    let b = weights.sampler_config(&cfg.eval.b, cfg.sampler)?;
    let scorer = run_scorer(cfg)?;
    let items = cfg.eval.items(weights.base.num_classes());
    let report = paired_eval(&weights.base, &a, &b, &items, &scorer)?;
    let text = serde_json::to_string_pretty(&json!({
        "metric": npolab::evalharness::metric_name(&scorer),
        "a": cfg.eval.a,
        "b": cfg.eval.b,
        "omega": cfg.sampler.omega,
        "report": report,
    }))?;
    write_file(&cfg.output_dir.join("eval.json"), &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(())
}

fn sweep(cfg: &RunConfig, threads: usize) -> Result<()> {
    let base = load_model(cfg.path(Artifact::Base))?;
    let eta = load_offset(cfg.path(Artifact::Eta), &base)?;
    let delta = load_offset(cfg.path(Artifact::Delta), &base)?;
    let scorer = run_scorer(cfg)?;
    let items = cfg.eval.items(base.num_classes());
    let setup = SweepSetup {
        template: &base,
        theta: base.params(),
        eta: &eta,
        delta: &delta,
        sampler: cfg.sampler,
        items: &items,
        scorer: &scorer,
    };
    let report = sweep_with_threads(&setup, &cfg.sweep, threads)?;
    ensure_dir(&cfg.output_dir)?;
    report.write(&cfg.output_dir, "sweep")?;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(report.to_csv()?.as_bytes());
    Ok(())
}

fn decompose(cfg: &RunConfig) -> Result<()> {
    let base = load_model(cfg.path(Artifact::Base))?;
    let eta = load_offset(cfg.path(Artifact::Eta), &base)?;
    let delta = load_offset(cfg.path(Artifact::Delta), &base)?;
    let text = serde_json::to_string_pretty(&decomposition_json(&eta, &delta)?)?;
    println!("{text}");
    Ok(())
}
