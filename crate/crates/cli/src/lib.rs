//! Commands behind the `softlogic` binary, usable as a library so that
//! experiments can be scripted and tested in-process.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use softlogic_core::datagen::{
    evaluate_transfer, gen_qa_split, gen_scene, gen_transfer_set, learnable_registry,
    oracle_registry, read_jsonl, to_dataset, transfer_records, write_jsonl, DatagenError, QaRecord,
    Scene, SplitConfig, TaskReport, TransferRecord, TransferTask,
};
use softlogic_core::exec::{ExecError, Executor, Readout};
use softlogic_core::grounding::{ConceptRegistry, FeatureProvider, GroundingError};
use softlogic_core::interp::{
    interpret, CacheMode, CachedClient, CompletionCache, CompletionClient, EndpointConfig,
    HttpClient, InterpError, InterpResult, PromptSpec,
};
use softlogic_core::lang::{parse, parse_program_file, pretty_print, LangError};
use softlogic_core::train::{
    check_gradients, evaluate, train, write_metrics_jsonl, Answer, EpochMetrics, EvalReport,
    TrainError,
};

pub use config::{DataConfig, FeatureConfig, InterpConfig, RunConfig};

/// What a run did and everything needed to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub version: String,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> (Self, Instant) {
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        (
            Self {
                command: command.into(),
                config: config.clone(),
                seed: config.seed,
                artifacts: BTreeMap::new(),
                version: env!("CARGO_PKG_VERSION").into(),
                started_unix_secs: started,
                wall_clock_secs: 0.0,
            },
            Instant::now(),
        )
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write(&mut self, path: &Path, started: Instant) -> Result<()> {
        self.wall_clock_secs = started.elapsed().as_secs_f64();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Raised when a check command finds a violation.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// 0 success, 1 input error, 2 execution error, 3 service error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<InterpError>() {
            return match e {
                InterpError::EndpointUnavailable(_)
                | InterpError::Endpoint(_)
                | InterpError::CacheMiss(_) => 3,
                InterpError::ExhaustedResamples { .. } => 2,
                InterpError::Cache(_) | InterpError::InvalidPrompt(_) => 1,
            };
        }
        if cause.is::<ExecError>() || cause.is::<CheckFailed>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::InvalidConfig(_) | TrainError::Io(_) | TrainError::MissingScene(_) => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<GroundingError>() {
            return match e {
                GroundingError::Io(_)
                | GroundingError::CorruptFile(_)
                | GroundingError::VersionMismatch { .. } => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<DatagenError>() {
            return match e {
                DatagenError::Oracle(_) | DatagenError::NotUnique(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<LangError>() || cause.is::<std::io::Error>() {
            return 1;
        }
    }
    1
}

pub struct ParseOutcome {
    /// Line number and canonical form of every program that parsed.
    pub programs: Vec<(usize, String)>,
    pub errors: Vec<String>,
}

/// Parses a program file: one program per line, `#` comments.
pub fn cmd_parse(text: &str) -> ParseOutcome {
    let mut out = ParseOutcome {
        programs: Vec::new(),
        errors: Vec::new(),
    };
    for (line, r) in parse_program_file(text) {
        match r {
            Ok(e) => out.programs.push((line, pretty_print(&e))),
            Err(e) => out.errors.push(e.to_string()),
        }
    }
    out
}

/// Where concept weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    /// Hand-set weights that reproduce the ground truth on clean features.
    Oracle,
}

pub fn load_model(cfg: &RunConfig, source: &ModelSource) -> Result<ConceptRegistry> {
    Ok(match source {
        ModelSource::Checkpoint(p) => ConceptRegistry::load(p)
            .with_context(|| format!("loading checkpoint {}", p.display()))?,
        ModelSource::Oracle => oracle_registry(&cfg.provider(), cfg.data.scene.axis_gap)?,
    })
}

/// Reads a scene from a JSON file holding either a scene or a record with
/// a `scene` field (the first line of a JSONL file is used).
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let value: serde_json::Value = serde_json::from_str(&text)
        .or_else(|_| serde_json::from_str(first))
        .with_context(|| format!("parsing {}", path.display()))?;
    let value = value.get("scene").cloned().unwrap_or(value);
    Ok(serde_json::from_value(value)
        .with_context(|| format!("{} holds no scene", path.display()))?)
}

pub struct ExecOutcome {
    pub readout: Readout,
    pub trace: Vec<String>,
}

pub fn cmd_exec(
    cfg: &RunConfig,
    program: &str,
    scene: &Scene,
    model: &ConceptRegistry,
    trace: bool,
) -> Result<ExecOutcome> {
    let e = parse(program)?;
    let ctx = cfg.provider().build_context(scene)?;
    let mut ex = Executor::new(&ctx, model);
    if trace {
        ex = ex.with_trace();
    }
    let v = ex.execute(&e)?;
    Ok(ExecOutcome {
        readout: ex.readout(&v),
        trace: ex.trace().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    /// Cache hits first; misses go to the endpoint if one is configured
    /// and are not stored.
    Default,
    /// Like `Default`, but replies are appended to the cache.
    Record,
    /// Cache only.
    Replay,
}

pub fn interp_client(cfg: &RunConfig, cache: &Path, mode: InterpMode) -> Result<CachedClient> {
    let cache = CompletionCache::open(cache)?;
    let endpoint = match mode {
        InterpMode::Replay => None,
        _ => EndpointConfig::from_env(),
    };
    let inner = endpoint.map(|c| Box::new(HttpClient::new(c)) as Box<dyn CompletionClient>);
    let mode = match mode {
        InterpMode::Default => CacheMode::ReadThrough,
        InterpMode::Record => CacheMode::Record,
        InterpMode::Replay => CacheMode::Replay,
    };
    Ok(CachedClient::new(cache, mode, &cfg.interp.model, inner))
}

pub fn cmd_interpret(
    cfg: &RunConfig,
    query: &str,
    client: &dyn CompletionClient,
) -> Result<InterpResult> {
    Ok(interpret(
        query,
        &PromptSpec::default(),
        &cfg.vocab().categories(),
        client,
        cfg.interp.max_attempts,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataOutcome {
    pub train: usize,
    pub val: usize,
    pub transfer: BTreeMap<String, usize>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

fn split(cfg: &RunConfig, name: &str, scenes: usize, keep: usize) -> Result<Vec<QaRecord>> {
    let (_, mut records) = gen_qa_split(&SplitConfig {
        split: name.into(),
        scenes,
        seed: cfg.seed,
        scene: cfg.data.scene.clone(),
        qa: cfg.data.qa.clone(),
        max_boolean_share: cfg.data.max_boolean_share,
    })?;
    if records.len() < keep {
        bail!(DatagenError::ConfigInfeasible(format!(
            "{name}: {scenes} scenes gave {} questions, {keep} requested",
            records.len()
        )));
    }
    records.truncate(keep);
    Ok(records)
}

/// Writes `train.jsonl`, `val.jsonl` and one `transfer_<task>.jsonl` per
/// transfer task into `out`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<GenDataOutcome> {
    let (mut manifest, started) = RunManifest::new("gen-data", cfg);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let train = split(cfg, "train", cfg.data.train_scenes, cfg.data.train_examples)?;
    let val = split(cfg, "val", cfg.data.val_scenes, cfg.data.val_examples)?;
    let mut outcome = GenDataOutcome {
        train: train.len(),
        val: val.len(),
        transfer: BTreeMap::new(),
        artifacts: BTreeMap::new(),
    };
    for (name, rows) in [("train", &train), ("val", &val)] {
        let p = out.join(format!("{name}.jsonl"));
        write_jsonl(&p, rows)?;
        outcome.artifacts.insert(name.into(), p);
    }
    if cfg.data.transfer_examples > 0 {
        for (k, task) in TransferTask::ALL.into_iter().enumerate() {
            let seed = cfg.seed.wrapping_add(1_000_000 * (k as u64 + 1));
            let scene_cfg = &cfg.data.scene;
            let items = gen_transfer_set(
                task,
                cfg.data.transfer_examples,
                seed,
                |s| gen_scene(scene_cfg, &format!("{}-{s}", task.name()), s),
                cfg.vocab(),
            )?;
            let rows = transfer_records(&items, "transfer");
            let p = out.join(format!("transfer_{}.jsonl", task.name()));
            write_jsonl(&p, &rows)?;
            outcome.transfer.insert(task.name().into(), rows.len());
            outcome
                .artifacts
                .insert(format!("transfer_{}", task.name()), p);
        }
    }
    manifest.artifacts = outcome.artifacts.clone();
    manifest.write(&out.join("manifest.json"), started)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub val: EvalReport,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub train_examples: usize,
}

/// Trains on `data/train.jsonl`, validating on `data/val.jsonl` after
/// every epoch, and writes `checkpoint.bin`, `metrics.jsonl` and
/// `manifest.json` into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, fraction: f64) -> Result<TrainOutcome> {
    let (mut manifest, started) = RunManifest::new("train", cfg);
    let provider = cfg.provider();
    let train_rows: Vec<QaRecord> = read_jsonl(&data.join("train.jsonl"))?;
    let val_rows: Vec<QaRecord> = read_jsonl(&data.join("val.jsonl"))?;
    let mut train_set = to_dataset(&train_rows, &provider, true)?;
    if fraction < 1.0 {
        train_set = train_set.subsample(fraction, cfg.seed)?;
    }
    let val_set = to_dataset(&val_rows, &provider, true)?;
    let mut reg = learnable_registry(cfg.vocab(), cfg.seed, cfg.features.viewpoint)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let history = train(&mut reg, &train_set, Some(&val_set), &tcfg, |_| {})?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let checkpoint = out.join("checkpoint.bin");
    let metrics = out.join("metrics.jsonl");
    reg.save(&checkpoint)?;
    write_metrics_jsonl(&metrics, &history)?;
    let val = history
        .last()
        .and_then(|m| m.val.clone())
        .unwrap_or_else(|| evaluate(&reg, &val_set));
    manifest
        .artifacts
        .insert("checkpoint".into(), checkpoint.clone());
    manifest.artifacts.insert("metrics".into(), metrics.clone());
    manifest.artifacts.insert("data".into(), data.to_path_buf());
    manifest.write(&out.join("manifest.json"), started)?;
    Ok(TrainOutcome {
        history,
        val,
        checkpoint,
        metrics,
        train_examples: train_set.len(),
    })
}

/// How one interpreted question fared end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum InterpOutcome {
    Correct {
        program: String,
    },
    /// No well-formed program after resampling.
    SyntaxFailure {
        error: String,
    },
    /// A well-formed program that failed to execute or gave the wrong answer.
    SemanticFailure {
        program: String,
        detail: String,
    },
    /// The completion service could not be reached.
    ServiceFailure {
        error: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpEvalReport {
    pub total: usize,
    pub correct: usize,
    pub syntax_failures: usize,
    pub semantic_failures: usize,
    pub service_failures: usize,
    /// Correct among all questions.
    pub accuracy: f64,
    /// Correct among questions whose program parsed and validated.
    pub executable_accuracy: f64,
    pub items: Vec<(String, InterpOutcome)>,
}

pub fn interpret_and_execute(
    cfg: &RunConfig,
    records: &[QaRecord],
    client: &dyn CompletionClient,
    model: &ConceptRegistry,
) -> InterpEvalReport {
    let provider = cfg.provider();
    let categories = cfg.vocab().categories();
    let spec = PromptSpec::default();
    let run = || -> Vec<(String, InterpOutcome)> {
        records
            .par_iter()
            .map(|r| {
                let outcome = match interpret(
                    &r.question,
                    &spec,
                    &categories,
                    client,
                    cfg.interp.max_attempts,
                ) {
                    Err(InterpError::ExhaustedResamples { last, .. }) => {
                        InterpOutcome::SyntaxFailure { error: last }
                    }
                    Err(e) => InterpOutcome::ServiceFailure {
                        error: e.to_string(),
                    },
                    Ok(res) => {
                        let program = res.program_text.clone();
                        let readout = provider.build_context(&r.scene).and_then(|ctx| {
                            softlogic_core::exec::execute(&res.program, &ctx, model)
                        });
                        match readout {
                            Ok(ro) if r.answer.matches(&ro) => InterpOutcome::Correct { program },
                            Ok(ro) => InterpOutcome::SemanticFailure {
                                program,
                                detail: format!("expected {}, got {}", r.answer, ro.summary()),
                            },
                            Err(e) => InterpOutcome::SemanticFailure {
                                program,
                                detail: e.to_string(),
                            },
                        }
                    }
                };
                (r.id.clone(), outcome)
            })
            .collect()
    };
    let items = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.interp.parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut rep = InterpEvalReport {
        total: items.len(),
        ..Default::default()
    };
    for (_, o) in &items {
        match o {
            InterpOutcome::Correct { .. } => rep.correct += 1,
            InterpOutcome::SyntaxFailure { .. } => rep.syntax_failures += 1,
            InterpOutcome::SemanticFailure { .. } => rep.semantic_failures += 1,
            InterpOutcome::ServiceFailure { .. } => rep.service_failures += 1,
        }
    }
    let executable = rep.correct + rep.semantic_failures;
    rep.accuracy = rep.correct as f64 / rep.total.max(1) as f64;
    rep.executable_accuracy = rep.correct as f64 / executable.max(1) as f64;
    rep.items = items;
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalOutcome {
    Qa(EvalReport),
    Transfer {
        tasks: BTreeMap<TransferTask, TaskReport>,
    },
    Interpreted(InterpEvalReport),
}

fn is_transfer_file(path: &Path) -> Result<bool> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let v: serde_json::Value =
        serde_json::from_str(first).with_context(|| format!("parsing {}", path.display()))?;
    Ok(v.get("task").is_some())
}

/// Evaluates question records (with their ground-truth programs, or
/// through the interpreter when `client` is given) or transfer records.
pub fn cmd_eval(
    cfg: &RunConfig,
    data: &Path,
    model: &ConceptRegistry,
    client: Option<&dyn CompletionClient>,
) -> Result<EvalOutcome> {
    let provider = cfg.provider();
    if is_transfer_file(data)? {
        let rows: Vec<TransferRecord> = read_jsonl(data)?;
        return Ok(EvalOutcome::Transfer {
            tasks: evaluate_transfer(model, &provider, &rows)?,
        });
    }
    let rows: Vec<QaRecord> = read_jsonl(data)?;
    Ok(match client {
        Some(c) => EvalOutcome::Interpreted(interpret_and_execute(cfg, &rows, c, model)),
        None => EvalOutcome::Qa(evaluate(model, &to_dataset(&rows, &provider, true)?)),
    })
}

/// Programs the gradient check differentiates through, one per operator
/// family, with a target answer of the right type.
pub const GRADCHECK_PROGRAMS: [(&str, &str); 7] = [
    (
        "exists(Object, lambda x: and(red(x), left(x, iota(Object, lambda y: cube(y)))))",
        "true",
    ),
    (
        "forall(Object, lambda x: or(not(sphere(x)), metal(x)))",
        "false",
    ),
    (
        "count(Object, lambda x: and(large(x), front(x, iota(Object, lambda y: blue(y)))))",
        "1",
    ),
    (
        "greater_than(count(Object, lambda x: cube(x)), count(Object, lambda y: sphere(y)))",
        "true",
    ),
    ("equal(count(Object, lambda x: rubber(x)), 2)", "false"),
    (
        "point(Object, lambda x: and(green(x), behind(x, iota(Object, lambda y: small(y)))))",
        "entity",
    ),
    (
        "describe(Color, lambda c: color(c, iota(Object, lambda x: cylinder(x))))",
        "red",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub points: usize,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<String>,
}

/// Finite-difference check of backpropagated gradients at `points` random
/// parameter settings, cycling through [`GRADCHECK_PROGRAMS`].
pub fn cmd_check_grad(
    cfg: &RunConfig,
    points: usize,
    coords: usize,
    eps: f64,
) -> Result<GradCheckSummary> {
    let provider = cfg.provider();
    let programs: Vec<_> = GRADCHECK_PROGRAMS
        .iter()
        .map(|(p, a)| Ok((parse(p)?, *a)))
        .collect::<Result<_, LangError>>()?;
    let results: Vec<Result<(usize, usize, f64, String)>> = (0..points)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed.wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reg = learnable_registry(cfg.vocab(), rng.gen(), false)?;
            let scene = gen_scene(&cfg.data.scene, &format!("grad-{k}"), rng.gen())?;
            let ctx = provider.build_context(&scene)?;
            let (program, answer) = &programs[k % programs.len()];
            let answer = match *answer {
                "true" => Answer::Boolean(true),
                "false" => Answer::Boolean(false),
                "entity" => Answer::Entity(rng.gen_range(0..scene.len())),
                a => a
                    .parse()
                    .map(Answer::Count)
                    .unwrap_or_else(|_| Answer::Word(a.into())),
            };
            let r = check_gradients(&reg, &ctx, program, &answer, coords, eps, seed)?;
            let worst = r
                .worst
                .map(|(id, i, a, n)| {
                    format!("{id:?}[{i}] analytic {a:e} numeric {n:e} in {program}")
                })
                .unwrap_or_default();
            Ok((r.checked, r.kinks, r.max_rel_error, worst))
        })
        .collect();
    let mut summary = GradCheckSummary {
        points,
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for r in results {
        let (checked, kinks, err, worst) = r?;
        summary.checked += checked;
        summary.kinks += kinks;
        if summary.worst.is_none() || err > summary.max_rel_error {
            summary.max_rel_error = summary.max_rel_error.max(err);
            summary.worst = Some(worst);
        }
    }
    Ok(summary)
}
