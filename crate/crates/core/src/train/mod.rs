//! Question/answer supervision, losses, optimization and evaluation.

mod adam;
mod gradcheck;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use gradcheck::{check_gradients, rel_error, GradCheck, KINK_REL, REL_ERROR_FLOOR};

use crate::exec::{ExecError, Executor, GroundingContext, ParamId, Readout, Value};
use crate::grounding::{ConceptRegistry, ModuleKind};
use crate::lang::{Arg, BoolKind, Expression, QuantKind, Sort};
use crate::tensor::{NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("answer type mismatch: {0}")]
    TypeMismatch(String),
    #[error("example {id}: {source}")]
    Example {
        id: String,
        #[source]
        source: ExecError,
    },
    #[error("example {0} refers to an unknown scene")]
    MissingScene(String),
    #[error("gradient audit failed for example {id}: {detail}")]
    GradientFlow { id: String, detail: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Exec(e.into())
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Boolean,
    Count,
    Entity,
    Word,
}

impl AnswerType {
    pub const ALL: [AnswerType; 4] = [
        AnswerType::Boolean,
        AnswerType::Count,
        AnswerType::Entity,
        AnswerType::Word,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnswerType::Boolean => "boolean",
            AnswerType::Count => "count",
            AnswerType::Entity => "entity",
            AnswerType::Word => "word",
        }
    }

    /// Answer type a program's root produces, if it produces one.
    pub fn of_program(e: &Expression) -> Option<Self> {
        match e {
            Expression::Compare { .. } => Some(AnswerType::Boolean),
            Expression::Bool { kind, operands } => {
                let rest: Vec<&Expression> = operands
                    .iter()
                    .filter(|o| {
                        !matches!(
                            o,
                            Expression::Quantified {
                                kind: QuantKind::View,
                                ..
                            }
                        )
                    })
                    .collect();
                if *kind == BoolKind::And && rest.len() == 1 && rest.len() < operands.len() {
                    Self::of_program(rest[0])
                } else {
                    Some(AnswerType::Boolean)
                }
            }
            Expression::Quantified { kind, .. } => match kind {
                QuantKind::Exists | QuantKind::Forall => Some(AnswerType::Boolean),
                QuantKind::Count => Some(AnswerType::Count),
                QuantKind::Iota | QuantKind::Point | QuantKind::View => Some(AnswerType::Entity),
                QuantKind::Describe => Some(AnswerType::Word),
                QuantKind::Do => None,
            },
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Answer {
    Boolean(bool),
    Count(u32),
    Entity(usize),
    Word(String),
}

impl Answer {
    pub fn answer_type(&self) -> AnswerType {
        match self {
            Answer::Boolean(_) => AnswerType::Boolean,
            Answer::Count(_) => AnswerType::Count,
            Answer::Entity(_) => AnswerType::Entity,
            Answer::Word(_) => AnswerType::Word,
        }
    }

    /// Exact-match check of a readout: booleans at 0.5, counts rounded,
    /// entities and words by argmax.
    pub fn matches(&self, r: &Readout) -> bool {
        match (self, r) {
            (Answer::Boolean(b), Readout::Boolean { probability, .. }) => {
                (*probability > 0.5) == *b
            }
            (Answer::Count(k), Readout::Count { expected }) => expected.round() == f64::from(*k),
            (Answer::Entity(i), Readout::Entity { index, .. }) => index == i,
            (Answer::Word(w), Readout::Word { word, .. }) => word == w,
            _ => false,
        }
    }
}

impl std::fmt::Display for Answer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Answer::Boolean(b) => write!(f, "{b}"),
            Answer::Count(k) => write!(f, "{k}"),
            Answer::Entity(i) => write!(f, "entity {i}"),
            Answer::Word(w) => write!(f, "{w}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub scene_id: String,
    /// `None` when no executable program is available (e.g. the
    /// interpreter failed); such examples always count as wrong.
    pub program: Option<Expression>,
    pub answer: Answer,
}

impl TrainExample {
    pub fn answer_type(&self) -> AnswerType {
        self.answer.answer_type()
    }

    /// The answer type must match what the program root computes.
    pub fn check(&self) -> Result<(), TrainError> {
        let Some(p) = &self.program else {
            return Ok(());
        };
        match AnswerType::of_program(p) {
            Some(t) if t == self.answer_type() => Ok(()),
            other => Err(TrainError::TypeMismatch(format!(
                "example {}: program computes {:?}, answer is {}",
                self.id,
                other.map(AnswerType::name),
                self.answer_type().name()
            ))),
        }
    }
}

/// Examples plus the grounding contexts of the scenes they refer to.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub contexts: BTreeMap<String, GroundingContext>,
    pub examples: Vec<TrainExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn context(&self, ex: &TrainExample) -> Result<&GroundingContext, TrainError> {
        self.contexts
            .get(&ex.scene_id)
            .ok_or_else(|| TrainError::MissingScene(ex.id.clone()))
    }

    /// Deterministic subsample of `fraction` of the examples (at least one),
    /// keeping only the contexts still referenced.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset, TrainError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "data fraction {fraction} not in (0, 1]"
            )));
        }
        let keep = ((self.examples.len() as f64 * fraction).round() as usize)
            .clamp(1, self.examples.len().max(1));
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        let examples: Vec<TrainExample> =
            idx.into_iter().map(|i| self.examples[i].clone()).collect();
        let used: BTreeSet<&String> = examples.iter().map(|e| &e.scene_id).collect();
        let contexts = self
            .contexts
            .iter()
            .filter(|(k, _)| used.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Dataset { contexts, examples })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Pick an answer type uniformly, then an example of that type.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss node for `value` against `answer`.
pub fn loss(tape: &mut Tape, value: &Value, answer: &Answer) -> Result<NodeId, TrainError> {
    let mismatch = || {
        TrainError::TypeMismatch(format!(
            "answer {} does not fit the program's result",
            answer.answer_type().name()
        ))
    };
    Ok(match (answer, value) {
        (
            Answer::Boolean(b),
            Value::Scalar {
                node,
                kind: crate::exec::ScalarKind::Logit,
            },
        ) => {
            // -log σ(l) = softplus(-l); -log(1-σ(l)) = softplus(l)
            let x = if *b { tape.neg(*node)? } else { *node };
            tape.softplus(x)?
        }
        (
            Answer::Count(k),
            Value::Scalar {
                node,
                kind: crate::exec::ScalarKind::Count,
            },
        ) => {
            let d = tape.shift(*node, -f64::from(*k))?;
            tape.mul(d, d)?
        }
        (Answer::Entity(i), Value::Entity { logits, .. }) => {
            if *i >= tape.shape(*logits)[0] {
                return Err(mismatch());
            }
            let lp = tape.log_softmax(*logits, 0)?;
            let pick = tape.select(lp, 0, *i)?;
            tape.neg(pick)?
        }
        (
            Answer::Word(w),
            Value::Text {
                members, logits, ..
            },
        ) => {
            let i = members.iter().position(|m| m == w).ok_or_else(mismatch)?;
            let lp = tape.log_softmax(*logits, 0)?;
            let pick = tape.select(lp, 0, i)?;
            tape.neg(pick)?
        }
        _ => return Err(mismatch()),
    })
}

/// Loss value and parameter gradients of one example.
pub fn example_gradients(
    reg: &ConceptRegistry,
    ctx: &GroundingContext,
    program: &Expression,
    answer: &Answer,
) -> Result<(f64, BTreeMap<ParamId, Tensor>), TrainError> {
    let mut ex = Executor::new(ctx, reg);
    let value = ex.execute(program)?;
    let l = loss(ex.tape_mut(), &value, answer)?;
    let grads = ex.tape().backward(l)?;
    Ok((
        ex.tape().value(l).data()[0],
        ex.bindings().gradients(&grads),
    ))
}

/// Loss of one example without gradients.
pub fn example_loss(
    reg: &ConceptRegistry,
    ctx: &GroundingContext,
    program: &Expression,
    answer: &Answer,
) -> Result<f64, TrainError> {
    let mut ex = Executor::new(ctx, reg);
    let value = ex.execute(program)?;
    let l = loss(ex.tape_mut(), &value, answer)?;
    Ok(ex.tape().value(l).data()[0])
}

/// Concepts with trainable parameters that a program reads, found by
/// walking its syntax (category members count for `describe`).
pub fn used_modules(reg: &ConceptRegistry, program: &Expression) -> BTreeSet<String> {
    let mut used = BTreeSet::new();
    let add = |name: &str, used: &mut BTreeSet<String>| {
        if let Some(m) = reg.get(name) {
            if m.kind == ModuleKind::Mlp {
                used.insert(m.signature.name.clone());
            }
        }
    };
    program.walk(&mut |e| match e {
        Expression::Quantified {
            kind: QuantKind::Describe,
            sort: Sort::Category(cat),
            ..
        } => {
            for m in reg.categories().members(cat).unwrap_or_default() {
                add(m, &mut used);
            }
        }
        Expression::Quantified {
            kind: QuantKind::Do,
            body,
            ..
        } => {
            // an action whose only arguments are its own variable and text
            // is never evaluated
            if let Expression::Concept { name, args } = body.as_ref() {
                if args
                    .iter()
                    .any(|a| matches!(a, Arg::Expr(x) if !matches!(x, Expression::Var(_))))
                {
                    add(name, &mut used);
                }
            }
        }
        Expression::Concept { name, args } if !args.is_empty() => {
            let generative = reg
                .get(name)
                .is_some_and(|m| m.kind == ModuleKind::Symbolic);
            if !generative {
                add(name, &mut used);
            }
        }
        _ => {}
    });
    used
}

/// Checks that the loss of an example reaches the shared layer of every
/// module the program uses and of no other module.
pub fn audit_gradient_flow(
    reg: &ConceptRegistry,
    ctx: &GroundingContext,
    ex: &TrainExample,
) -> Result<(), TrainError> {
    let Some(program) = &ex.program else {
        return Ok(());
    };
    let (_, grads) =
        example_gradients(reg, ctx, program, &ex.answer).map_err(|e| with_id(e, &ex.id))?;
    let reached: BTreeSet<String> = grads.keys().map(|p| p.concept.clone()).collect();
    let used = used_modules(reg, program);
    let fail = |detail: String| TrainError::GradientFlow {
        id: ex.id.clone(),
        detail,
    };
    if reached != used {
        return Err(fail(format!("used {used:?}, reached {reached:?}")));
    }
    for c in &used {
        for p in ["w1", "b1"] {
            if !grads.contains_key(&ParamId::new(c, p)) {
                return Err(fail(format!("{c}.{p} not reached")));
            }
        }
    }
    Ok(())
}

fn with_id(e: TrainError, id: &str) -> TrainError {
    match e {
        TrainError::Exec(source) => TrainError::Example {
            id: id.to_string(),
            source,
        },
        other => other,
    }
}

/// Accuracy counts for one answer type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    /// Examples whose program exists and executes.
    pub executable: usize,
    pub correct: usize,
    /// Correct over all examples; non-executable ones count as wrong.
    pub accuracy: f64,
    /// Correct over executable examples only.
    pub executable_accuracy: f64,
    pub per_type: BTreeMap<AnswerType, TypeReport>,
}

/// Outcome of evaluating one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Correct(Readout),
    Wrong(Readout),
    NotExecutable(String),
}

pub fn predict(reg: &ConceptRegistry, data: &Dataset, ex: &TrainExample) -> Outcome {
    let Some(program) = &ex.program else {
        return Outcome::NotExecutable("no program".into());
    };
    let ctx = match data.context(ex) {
        Ok(c) => c,
        Err(e) => return Outcome::NotExecutable(e.to_string()),
    };
    match crate::exec::execute(program, ctx, reg) {
        Ok(r) if ex.answer.matches(&r) => Outcome::Correct(r),
        Ok(r) => Outcome::Wrong(r),
        Err(e) => Outcome::NotExecutable(e.to_string()),
    }
}

pub fn evaluate(reg: &ConceptRegistry, data: &Dataset) -> EvalReport {
    let outcomes: Vec<Outcome> = data
        .examples
        .par_iter()
        .map(|ex| predict(reg, data, ex))
        .collect();
    summarize(data, &outcomes)
}

pub fn summarize(data: &Dataset, outcomes: &[Outcome]) -> EvalReport {
    let mut report = EvalReport {
        total: outcomes.len(),
        ..EvalReport::default()
    };
    for (ex, o) in data.examples.iter().zip(outcomes) {
        let t = report.per_type.entry(ex.answer_type()).or_default();
        t.total += 1;
        match o {
            Outcome::Correct(_) => {
                t.correct += 1;
                report.correct += 1;
                report.executable += 1;
            }
            Outcome::Wrong(_) => report.executable += 1,
            Outcome::NotExecutable(_) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    report.accuracy = ratio(report.correct, report.total);
    report.executable_accuracy = ratio(report.correct, report.executable);
    for t in report.per_type.values_mut() {
        t.accuracy = ratio(t.correct, t.total);
    }
    report
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val: Option<EvalReport>,
}

/// Draws example indices for each step.
struct Sampler {
    rng: ChaCha8Rng,
    by_type: Vec<Vec<usize>>,
    all: Vec<usize>,
    balanced: bool,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(data: &Dataset, trainable: &[usize], cfg: &TrainConfig) -> Self {
        let mut by_type: BTreeMap<AnswerType, Vec<usize>> = BTreeMap::new();
        for &i in trainable {
            by_type
                .entry(data.examples[i].answer_type())
                .or_default()
                .push(i);
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3f),
            by_type: by_type.into_values().collect(),
            all: trainable.to_vec(),
            balanced: cfg.balanced,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn next(&mut self) -> usize {
        if self.balanced {
            let group = &self.by_type[self.rng.gen_range(0..self.by_type.len())];
            return group[self.rng.gen_range(0..group.len())];
        }
        if self.cursor == self.order.len() {
            self.order = self.all.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

/// Trains `reg` in place. `on_epoch` sees each epoch's metrics as soon as
/// they are available.
pub fn train(
    reg: &mut ConceptRegistry,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    for ex in &data.examples {
        ex.check()?;
        data.context(ex)?;
    }
    let trainable: Vec<usize> = (0..data.len())
        .filter(|&i| data.examples[i].program.is_some())
        .collect();
    if trainable.is_empty() {
        return Err(TrainError::InvalidConfig("no trainable examples".into()));
    }
    // audit one example per answer type before any update
    let mut seen = BTreeSet::new();
    for &i in &trainable {
        let ex = &data.examples[i];
        if seen.insert(ex.answer_type()) {
            audit_gradient_flow(reg, data.context(ex)?, ex)?;
        }
    }
    let mut sampler = Sampler::new(data, &trainable, cfg);
    let mut adam = Adam::new(cfg.learning_rate);
    let steps_per_epoch = trainable.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for _ in 0..steps_per_epoch {
            let batch: Vec<usize> = (0..cfg.batch_size).map(|_| sampler.next()).collect();
            let frozen: &ConceptRegistry = reg;
            let results: Vec<Result<(f64, BTreeMap<ParamId, Tensor>), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &data.examples[i];
                    let program = ex.program.as_ref().expect("trainable");
                    example_gradients(frozen, data.context(ex)?, program, &ex.answer)
                        .map_err(|e| with_id(e, &ex.id))
                })
                .collect();
            let mut total: BTreeMap<ParamId, Tensor> = BTreeMap::new();
            for r in results {
                let (l, grads) = r?;
                loss_sum += l;
                seen += 1;
                for (id, g) in grads {
                    match total.get_mut(&id) {
                        Some(acc) => add_into(acc, &g),
                        None => {
                            total.insert(id, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in total.values_mut() {
                scale_in_place(g, scale);
            }
            adam.step(reg, &total)?;
        }
        let metrics = EpochMetrics {
            epoch,
            steps: steps_per_epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val: val.map(|v| evaluate(reg, v)),
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn scale_in_place(t: &mut Tensor, c: f64) {
    for x in t.data_mut() {
        *x *= c;
    }
}

/// Writes one JSON object per line.
pub fn write_metrics_jsonl(path: &Path, history: &[EpochMetrics]) -> Result<(), TrainError> {
    let mut out = Vec::new();
    for m in history {
        serde_json::to_writer(&mut out, m).map_err(|e| TrainError::Io(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests;
