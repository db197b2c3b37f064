use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use softlogic_cli::{
    cmd_check_grad, cmd_eval, cmd_exec, cmd_gen_data, cmd_interpret, cmd_parse, cmd_train,
    exit_code, interp_client, load_model, load_scene, CheckFailed, EvalOutcome, InterpMode,
    ModelSource, RunConfig, RunManifest,
};
use softlogic_core::interp::CompletionClient;

#[derive(Parser)]
#[command(
    name = "softlogic",
    version,
    about = "Differentiable first-order logic programs over learned concepts"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Feature noise level.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Write a run manifest here (train and gen-data always write one into
    /// their output directory).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use hand-set weights that reproduce the ground truth.
    #[arg(long)]
    oracle: bool,
}

impl ModelArgs {
    fn source(&self) -> Result<ModelSource> {
        match (&self.checkpoint, self.oracle) {
            (Some(p), _) => Ok(ModelSource::Checkpoint(p.clone())),
            (None, true) => Ok(ModelSource::Oracle),
            (None, false) => bail!(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "either --checkpoint or --oracle is required"
            )),
        }
    }
}

#[derive(Args)]
struct CacheArgs {
    /// Completion cache file (defaults to the configured one).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Append new completions to the cache.
    #[arg(long, conflicts_with = "replay")]
    record: bool,
    /// Never contact the endpoint.
    #[arg(long)]
    replay: bool,
    #[arg(long)]
    max_attempts: Option<usize>,
}

impl CacheArgs {
    fn mode(&self) -> InterpMode {
        if self.record {
            InterpMode::Record
        } else if self.replay {
            InterpMode::Replay
        } else {
            InterpMode::Default
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program file (one program per line) and print canonical forms.
    Parse { file: PathBuf },
    /// Execute a program on a scene.
    Exec {
        /// Program text, or @path to read it from a file.
        program: String,
        /// Scene JSON, or a record file whose first line holds a scene.
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Print every evaluated node.
        #[arg(long)]
        trace: bool,
        /// Print the answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Turn a natural-language query into a program.
    Interpret {
        query: String,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Generate training, validation and transfer data.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_scenes: Option<usize>,
        #[arg(long)]
        val_scenes: Option<usize>,
        #[arg(long)]
        train_examples: Option<usize>,
        #[arg(long)]
        val_examples: Option<usize>,
        #[arg(long)]
        transfer_examples: Option<usize>,
    },
    /// Train concept modules on generated data.
    Train {
        /// Directory with train.jsonl and val.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Train on this fraction of the training examples.
        #[arg(long, default_value_t = 1.0)]
        data_fraction: f64,
    },
    /// Evaluate a model on question or transfer records.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Obtain programs from the interpreter instead of the records.
        #[arg(long)]
        interpret: bool,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Compare backpropagated gradients with finite differences.
    CheckGrad {
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Parse { .. } => "parse",
            Command::Exec { .. } => "exec",
            Command::Interpret { .. } => "interpret",
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::CheckGrad { .. } => "check-grad",
        }
    }
}

fn config(global: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(t) = global.threads {
        cfg.threads = t;
    }
    if let Some(n) = global.noise {
        cfg.features.noise = n;
    }
    Ok(cfg)
}

fn client(cfg: &RunConfig, args: &CacheArgs) -> Result<Box<dyn CompletionClient>> {
    let path = args
        .cache
        .clone()
        .unwrap_or_else(|| cfg.interp.cache.clone());
    Ok(Box::new(interp_client(cfg, &path, args.mode())?))
}

fn read_program(arg: &str) -> Result<String> {
    match arg.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(Path::new(p)).with_context(|| format!("reading {p}")),
        None => Ok(arg.to_string()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    let (mut manifest, started) = RunManifest::new(cli.command.name(), &cfg);
    match &cli.command {
        Command::Parse { file } => {
            let text = std::fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))?;
            let out = cmd_parse(&text);
            for (line, p) in &out.programs {
                println!("{line}: {p}");
            }
            for e in &out.errors {
                eprintln!("error: {e}");
            }
            if !out.errors.is_empty() {
                bail!(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!(
                        "{} of {} programs failed to parse",
                        out.errors.len(),
                        out.errors.len() + out.programs.len()
                    )
                ));
            }
        }
        Command::Exec {
            program,
            scene,
            model,
            trace,
            json,
        } => {
            let text = read_program(program)?;
            let scene = load_scene(scene)?;
            let reg = load_model(&cfg, &model.source()?)?;
            let out = cmd_exec(&cfg, text.trim(), &scene, &reg, *trace)?;
            for line in &out.trace {
                println!("{line}");
            }
            if *json {
                println!("{}", serde_json::to_string(&out.readout)?);
            } else {
                println!("{}", out.readout.summary());
            }
        }
        Command::Interpret { query, cache } => {
            if let Some(m) = cache.max_attempts {
                cfg.interp.max_attempts = m;
            }
            let c = client(&cfg, cache)?;
            let r = cmd_interpret(&cfg, query, c.as_ref())?;
            println!("{}", r.program_text);
            eprintln!("attempts: {}", r.attempts);
        }
        Command::GenData {
            out,
            train_scenes,
            val_scenes,
            train_examples,
            val_examples,
            transfer_examples,
        } => {
            let d = &mut cfg.data;
            d.train_scenes = train_scenes.unwrap_or(d.train_scenes);
            d.val_scenes = val_scenes.unwrap_or(d.val_scenes);
            d.train_examples = train_examples.unwrap_or(d.train_examples);
            d.val_examples = val_examples.unwrap_or(d.val_examples);
            d.transfer_examples = transfer_examples.unwrap_or(d.transfer_examples);
            let o = cmd_gen_data(&cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&o)?);
            manifest.artifacts = o.artifacts;
        }
        Command::Train {
            data,
            out,
            epochs,
            lr,
            batch_size,
            data_fraction,
        } => {
            let t = &mut cfg.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.learning_rate = lr.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            let o = cmd_train(&cfg, data, out, *data_fraction)?;
            for m in &o.history {
                println!("{}", serde_json::to_string(m)?);
            }
            println!(
                "trained on {} examples; val accuracy {:.4} ({} / {})",
                o.train_examples, o.val.accuracy, o.val.correct, o.val.total
            );
            manifest.artifacts.insert("checkpoint".into(), o.checkpoint);
            manifest.artifacts.insert("metrics".into(), o.metrics);
        }
        Command::Eval {
            data,
            model,
            interpret,
            cache,
        } => {
            if let Some(m) = cache.max_attempts {
                cfg.interp.max_attempts = m;
            }
            let reg = load_model(&cfg, &model.source()?)?;
            let c = if *interpret {
                Some(client(&cfg, cache)?)
            } else {
                None
            };
            let out = cmd_eval(&cfg, data, &reg, c.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            if let EvalOutcome::Interpreted(r) = &out {
                eprintln!(
                    "accuracy {:.4}, executable accuracy {:.4}, syntax failures {}, semantic failures {}",
                    r.accuracy, r.executable_accuracy, r.syntax_failures, r.semantic_failures
                );
            }
        }
        Command::CheckGrad {
            points,
            coords,
            eps,
            tol,
        } => {
            let s = cmd_check_grad(&cfg, *points, *coords, *eps)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            if s.max_rel_error > *tol {
                bail!(CheckFailed(format!(
                    "max relative error {:e} exceeds {:e}",
                    s.max_rel_error, tol
                )));
            }
        }
    }
    if let Some(path) = &cli.global.manifest {
        manifest.config = cfg;
        manifest.write(path, started)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
