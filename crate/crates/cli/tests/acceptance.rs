//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p softlogic-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softlogic_cli::{
    cmd_check_grad, cmd_eval, cmd_gen_data, cmd_train, interp_client, interpret_and_execute,
    load_model, EvalOutcome, InterpMode, ModelSource, RunConfig,
};
use softlogic_core::datagen::{read_jsonl, QaRecord, TransferTask};
use softlogic_core::exec::{ScalarKind, TableSource};
use softlogic_core::lang::generate::{ProgramGenerator, ProgramKind, Vocabulary};
use softlogic_core::lang::{Arg, BoolKind, CompareKind, QuantKind};
use softlogic_core::tensor::sigmoid;
use softlogic_core::{
    execute, parse, pretty_print, Categories, ComparisonParams, Executor, Expression,
    GroundingContext, Readout, Tensor, Value,
};

// Pinned thresholds.
const A1_PROGRAMS: usize = 200;
const A1_MAX_ENTITIES: usize = 5;
const A1_WORLD_TRIES: usize = 2000;
const A2_POINTS: usize = 100;
const A2_COORDS: usize = 20;
const A2_EPS: f64 = 1e-5;
const A2_TOL: f64 = 1e-4;
const A3_MIN_ACCURACY: f64 = 0.95;
const A4_FRACTION: f64 = 0.1;
const A4_MAX_DROP: f64 = 0.10;
const A5_MIN: [(TransferTask, f64); 3] = [
    (TransferTask::Ref, 0.90),
    (TransferTask::Puzzle, 0.80),
    (TransferTask::Rpm, 0.80),
];
const A6_TARGET: f64 = 0.880797;
const A6_TOL: f64 = 1e-6;
const A7_PROGRAMS: usize = 500;
const A9_MIN_QUERIES: usize = 30;
const A9_MIN_ACCURACY: f64 = 0.90;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{id} {} {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

// ---------------------------------------------------------------- A1 ---

/// Crisp world over `n` entities, with truth for every concept of the
/// vocabulary. Viewpoint concepts are indexed `[i, j, anchor]`.
struct World {
    n: usize,
    truth: BTreeMap<String, (usize, Vec<bool>)>,
    viewpoint: BTreeSet<String>,
}

impl World {
    fn sample(vocab: &Vocabulary, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut truth = BTreeMap::new();
        let mut categorized = BTreeSet::new();
        for (_, members) in vocab.categories.iter() {
            let mut tables = vec![vec![false; n]; members.len()];
            for e in 0..n {
                tables[rng.gen_range(0..members.len())][e] = true;
            }
            for (m, t) in members.iter().zip(tables) {
                truth.insert(m.clone(), (1, t));
                categorized.insert(m.clone());
            }
        }
        let random = |arity: usize, rng: &mut ChaCha8Rng| -> Vec<bool> {
            (0..n.pow(arity as u32))
                .map(|_| rng.gen_bool(0.4))
                .collect()
        };
        for u in vocab.unary.iter().filter(|u| !categorized.contains(*u)) {
            truth.insert(u.clone(), (1, random(1, rng)));
        }
        for b in &vocab.binary {
            truth.insert(b.clone(), (2, random(2, rng)));
        }
        for t in &vocab.ternary {
            truth.insert(t.clone(), (3, random(3, rng)));
        }
        for (a, objects, _) in &vocab.actions {
            truth.insert(a.clone(), (*objects, random(*objects, rng)));
        }
        let mut viewpoint = BTreeSet::new();
        for v in &vocab.viewpoint {
            truth.insert(v.clone(), (3, random(3, rng)));
            viewpoint.insert(v.clone());
        }
        Self {
            n,
            truth,
            viewpoint,
        }
    }

    fn source(&self) -> TableSource {
        let mut s = TableSource::new();
        for (name, (arity, t)) in &self.truth {
            if self.viewpoint.contains(name) {
                s.insert_viewpoint(name, self.n, t);
            } else {
                s.insert(name, self.n, *arity, t);
            }
        }
        s
    }

    fn holds(&self, name: &str, idx: &[usize], anchor: Option<usize>) -> Option<bool> {
        let (_, t) = self.truth.get(name)?;
        let mut cells = idx.to_vec();
        if self.viewpoint.contains(name) {
            cells.push(anchor?);
        }
        let flat = cells.iter().fold(0, |acc, &i| acc * self.n + i);
        Some(t[flat])
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Crisp {
    Bool(bool),
    Num(f64),
    Entity(usize),
    Word(String),
    Action(String, Vec<usize>),
}

/// Brute-force boolean semantics. `None` when a definite description has
/// no unique referent.
struct Oracle<'a> {
    world: &'a World,
    categories: &'a Categories,
    anchor: Option<usize>,
}

impl Oracle<'_> {
    fn unique(
        &mut self,
        var: &str,
        body: &Expression,
        env: &mut Vec<(String, usize)>,
    ) -> Option<usize> {
        let mut hits = Vec::new();
        for e in 0..self.world.n {
            env.push((var.to_string(), e));
            let b = self.boolean(body, env);
            env.pop();
            if b? {
                hits.push(e);
            }
        }
        (hits.len() == 1).then(|| hits[0])
    }

    fn boolean(&mut self, e: &Expression, env: &mut Vec<(String, usize)>) -> Option<bool> {
        match self.eval(e, env)? {
            Crisp::Bool(b) => Some(b),
            other => panic!("expected a boolean, got {other:?}"),
        }
    }

    fn entity_args(
        &mut self,
        args: &[Arg],
        env: &mut Vec<(String, usize)>,
        skip: Option<&str>,
    ) -> Option<Vec<usize>> {
        let mut idx = Vec::new();
        for a in args {
            match a {
                Arg::Expr(Expression::Var(v)) if Some(v.as_str()) == skip => {}
                Arg::Expr(Expression::Var(v)) => idx.push(
                    env.iter()
                        .rev()
                        .find(|(w, _)| w == v)
                        .expect("bound variable")
                        .1,
                ),
                Arg::Expr(inner) => match self.eval(inner, env)? {
                    Crisp::Entity(i) => idx.push(i),
                    other => panic!("argument evaluated to {other:?}"),
                },
                Arg::Text(_) => {}
            }
        }
        Some(idx)
    }

    fn eval(&mut self, e: &Expression, env: &mut Vec<(String, usize)>) -> Option<Crisp> {
        Some(match e {
            Expression::Number(x) => Crisp::Num(*x),
            Expression::Var(v) => panic!("bare variable {v}"),
            Expression::Concept { name, args } => {
                let idx = self.entity_args(args, env, None)?;
                Crisp::Bool(
                    self.world
                        .holds(name, &idx, self.anchor)
                        .expect("known concept"),
                )
            }
            Expression::Bool { kind, operands } => {
                let mut vals = Vec::new();
                for o in operands {
                    let is_view = matches!(
                        o,
                        Expression::Quantified {
                            kind: QuantKind::View,
                            ..
                        }
                    );
                    let v = self.eval(o, env)?;
                    if !is_view {
                        vals.push(v);
                    }
                }
                let bools: Vec<bool> = vals
                    .into_iter()
                    .map(|v| match v {
                        Crisp::Bool(b) => b,
                        other => panic!("connective over {other:?}"),
                    })
                    .collect();
                Crisp::Bool(match kind {
                    BoolKind::And => bools.iter().all(|&b| b),
                    BoolKind::Or => bools.iter().any(|&b| b),
                    BoolKind::Not => !bools[0],
                })
            }
            Expression::Compare { kind, lhs, rhs } => {
                let num = |v: Crisp| match v {
                    Crisp::Num(x) => x,
                    other => panic!("comparison over {other:?}"),
                };
                let (a, b) = (num(self.eval(lhs, env)?), num(self.eval(rhs, env)?));
                Crisp::Bool(match kind {
                    CompareKind::Eq => a == b,
                    CompareKind::Gt => a > b,
                    CompareKind::Lt => a < b,
                })
            }
            Expression::Quantified {
                kind,
                var,
                body,
                sort,
            } => match kind {
                QuantKind::Exists | QuantKind::Forall | QuantKind::Count => {
                    let mut hits = 0;
                    for i in 0..self.world.n {
                        env.push((var.clone(), i));
                        let b = self.boolean(body, env);
                        env.pop();
                        hits += usize::from(b?);
                    }
                    match kind {
                        QuantKind::Exists => Crisp::Bool(hits > 0),
                        QuantKind::Forall => Crisp::Bool(hits == self.world.n),
                        _ => Crisp::Num(hits as f64),
                    }
                }
                QuantKind::Iota | QuantKind::Point => Crisp::Entity(self.unique(var, body, env)?),
                QuantKind::View => {
                    let target = self.unique(var, body, env)?;
                    self.anchor = Some(target);
                    Crisp::Entity(target)
                }
                QuantKind::Describe => {
                    let Expression::Concept { args, .. } = body.as_ref() else {
                        panic!("describe body")
                    };
                    let target = self.entity_args(args, env, Some(var))?;
                    let members = self.categories.members(sort.name()).expect("category");
                    let words: Vec<&String> = members
                        .iter()
                        .filter(|m| self.world.holds(m, &target, None) == Some(true))
                        .collect();
                    assert_eq!(words.len(), 1, "categories are one-hot");
                    Crisp::Word(words[0].clone())
                }
                QuantKind::Do => {
                    let Expression::Concept { name, args } = body.as_ref() else {
                        panic!("do body")
                    };
                    Crisp::Action(name.clone(), self.entity_args(args, env, Some(var))?)
                }
            },
        })
    }
}

fn crisp_readout(r: &Readout) -> Crisp {
    match r {
        Readout::Boolean { probability, .. } => Crisp::Bool(*probability > 0.5),
        Readout::Count { expected } => Crisp::Num(expected.round()),
        Readout::Number { value } => Crisp::Num(*value),
        Readout::Entity { index, .. } => Crisp::Entity(*index),
        Readout::Word { word, .. } => Crisp::Word(word.clone()),
        Readout::Action { name, args, .. } => Crisp::Action(
            name.clone(),
            args.iter()
                .filter_map(|a| match a {
                    softlogic_core::exec::ReadoutArg::Entity { index, .. } => Some(*index),
                    _ => None,
                })
                .collect(),
        ),
        Readout::Logits { .. } => panic!("closed programs never read out logits"),
    }
}

fn operators(e: &Expression, seen: &mut BTreeSet<&'static str>) {
    e.walk(&mut |x| {
        match x {
            Expression::Quantified { kind, .. } => seen.insert(kind.keyword()),
            Expression::Bool { kind, .. } => seen.insert(kind.keyword()),
            Expression::Compare { kind, .. } => seen.insert(kind.keyword()),
            _ => false,
        };
    });
}

fn a1_vocab() -> Vocabulary {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    Vocabulary {
        unary: s(&["red", "blue", "green", "cube", "sphere", "small"]),
        binary: s(&["left", "front"]),
        ternary: s(&["between"]),
        viewpoint: s(&["facing"]),
        categories: Categories::new()
            .with("Color", &["red", "blue", "green"])
            .with("Shape", &["cube", "sphere"]),
        actions: vec![("pick_up".into(), 1, false), ("put".into(), 2, true)],
        modifiers: s(&["far", "near"]),
    }
}

fn a1(report: &mut Report) {
    let started = Instant::now();
    let vocab = a1_vocab();
    let gen = ProgramGenerator::new(vocab.clone());
    let kinds = gen.kinds();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut agree, mut resampled, mut replaced) = (0, 0, 0);
    let mut seen = BTreeSet::new();
    let mut mismatches = Vec::new();
    for i in 0..A1_PROGRAMS {
        let kind: ProgramKind = kinds[i % kinds.len()];
        // resample the world until every description has a unique referent;
        // a program none of A1_WORLD_TRIES worlds can ground is replaced
        let (program, world, expected) = 'program: loop {
            let program = gen.generate_kind(kind, &mut rng);
            for _ in 0..A1_WORLD_TRIES {
                let n = rng.gen_range(1..=A1_MAX_ENTITIES);
                let world = World::sample(&vocab, n, &mut rng);
                let mut oracle = Oracle {
                    world: &world,
                    categories: &vocab.categories,
                    anchor: None,
                };
                match oracle.eval(&program, &mut Vec::new()) {
                    Some(v) => break 'program (program, world, v),
                    None => resampled += 1,
                }
            }
            replaced += 1;
        };
        operators(&program, &mut seen);
        let ctx = GroundingContext::featureless(world.n, vocab.categories.clone()).unwrap();
        let got = execute(&program, &ctx, &world.source()).map(|r| crisp_readout(&r));
        if got.as_ref().ok() == Some(&expected) {
            agree += 1;
        } else if mismatches.len() < 3 {
            mismatches.push(format!(
                "{} -> {got:?} vs {expected:?}",
                pretty_print(&program)
            ));
        }
    }
    let all_ops = [
        "exists",
        "forall",
        "iota",
        "count",
        "point",
        "describe",
        "do",
        "view",
        "and",
        "or",
        "not",
        "eq",
        "less_than",
        "greater_than",
    ];
    let missing: Vec<_> = all_ops.iter().filter(|o| !seen.contains(*o)).collect();
    let pass = agree == A1_PROGRAMS && missing.is_empty();
    report.line(
        "A1",
        pass,
        format!(
            "soft/hard equivalence: {agree}/{A1_PROGRAMS} thresholded outputs match the boolean oracle \
             (N<={A1_MAX_ENTITIES}, {resampled} worlds resampled and {replaced} ungroundable programs replaced for unique referents, operators missing: {missing:?}){}",
            if mismatches.is_empty() { String::new() } else { format!("; e.g. {}", mismatches.join(" | ")) }
        ),
        started,
    );
}

// ---------------------------------------------------------------- A2 ---

fn a2(report: &mut Report) {
    let started = Instant::now();
    let s = cmd_check_grad(&RunConfig::default(), A2_POINTS, A2_COORDS, A2_EPS)
        .expect("gradient check runs");
    let secs = started.elapsed().as_secs_f64();
    report.line(
        "A2",
        s.max_rel_error <= A2_TOL && secs < 120.0,
        format!(
            "gradient check: max relative error {:.3e} (<= {A2_TOL:e}) over {} coordinates at {} points, \
             {} kink-straddling coordinates compared one-sided",
            s.max_rel_error, s.checked, s.points, s.kinks
        ),
        started,
    );
}

// ------------------------------------------------------------ A3..A5, A8 ---

fn train_run(cfg: &RunConfig, root: &Path, name: &str, fraction: f64) -> (f64, usize, f64) {
    let started = Instant::now();
    let data = root.join(format!("{name}-data"));
    cmd_gen_data(cfg, &data).expect("data generation");
    let out = cmd_train(cfg, &data, &root.join(name), fraction).expect("training");
    (
        out.val.accuracy,
        out.train_examples,
        started.elapsed().as_secs_f64(),
    )
}

fn a9(report: &mut Report, cfg: &RunConfig, checkpoint: &Path) {
    let started = Instant::now();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let records: Vec<QaRecord> =
        read_jsonl(&fixtures.join("interp_records.jsonl")).expect("fixture records");
    let client = interp_client(
        cfg,
        &fixtures.join("interp_cache.jsonl"),
        InterpMode::Replay,
    )
    .expect("cache");
    let model =
        load_model(cfg, &ModelSource::Checkpoint(checkpoint.to_path_buf())).expect("checkpoint");
    let r = interpret_and_execute(cfg, &records, &client, &model);
    let classified =
        r.correct + r.syntax_failures + r.semantic_failures == r.total && r.service_failures == 0;
    report.line(
        "A9",
        r.total >= A9_MIN_QUERIES && r.accuracy >= A9_MIN_ACCURACY && classified,
        format!(
            "interpreter replay: {}/{} queries correct end to end ({:.4} >= {A9_MIN_ACCURACY}); \
             failures: {} syntax, {} semantic, {} unclassified; executable accuracy {:.4}",
            r.correct,
            r.total,
            r.accuracy,
            r.syntax_failures,
            r.semantic_failures,
            r.service_failures,
            r.executable_accuracy
        ),
        started,
    );
}

// ---------------------------------------------------------------- A6 ---

fn a6(report: &mut Report) {
    let started = Instant::now();
    let params = ComparisonParams::default();
    let ctx = GroundingContext::featureless(1, Categories::new()).unwrap();
    let src = TableSource::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut values = vec![0.0, 1.0, 3.0, 1e6];
    values.extend((0..200).map(|_| rng.gen_range(-50.0..50.0)));
    for s in values {
        let mut ex = Executor::new(&ctx, &src);
        let node = ex.tape_mut().leaf(Tensor::scalar(s));
        let v = Value::Scalar {
            node,
            kind: ScalarKind::Count,
        };
        let out = ex.exec_compare(CompareKind::Eq, &v, &v).expect("compare");
        let p = match ex.readout(&out) {
            Readout::Boolean { probability, .. } => probability,
            other => panic!("{other:?}"),
        };
        worst = worst.max((p - A6_TARGET).abs());
        worst = worst.max((sigmoid(params.score(CompareKind::Eq, s, s)) - A6_TARGET).abs());
    }
    report.line(
        "A6",
        worst <= A6_TOL,
        format!(
            "eq(s, s) = sigma(alpha*gamma) with alpha={}, gamma={}: max deviation from {A6_TARGET} is {worst:.2e} (<= {A6_TOL:e})",
            params.alpha, params.gamma
        ),
        started,
    );
}

// ---------------------------------------------------------------- A7 ---

fn a7(report: &mut Report) {
    let started = Instant::now();
    let mut vocab = a1_vocab();
    vocab.binary.push("next_to".into());
    let gen = ProgramGenerator::new(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds = gen.kinds();
    let mut ok = 0;
    for _ in 0..A7_PROGRAMS {
        let kind = *kinds.choose(&mut rng).unwrap();
        let text = pretty_print(&gen.generate_kind(kind, &mut rng));
        let fixpoint = parse(&text)
            .ok()
            .and_then(|e| parse(&pretty_print(&e)).ok().map(|f| (e, f)))
            .is_some_and(|(e, f)| e == f && pretty_print(&f) == text);
        ok += usize::from(fixpoint);
    }
    report.line(
        "A7",
        ok == A7_PROGRAMS,
        format!("parser round trip: {ok}/{A7_PROGRAMS} programs reach the parse/print fixpoint"),
        started,
    );
}

fn main() {
    let mut report = Report { failed: 0 };
    let root = tempfile::tempdir().expect("temp dir");
    let cfg = RunConfig::default();

    a1(&mut report);
    a2(&mut report);

    let started = Instant::now();
    let (full, n_full, secs) = train_run(&cfg, root.path(), "a3", 1.0);
    report.line(
        "A3",
        full >= A3_MIN_ACCURACY && secs < 900.0,
        format!(
            "concept learning: val accuracy {full:.4} (>= {A3_MIN_ACCURACY}) after {} epochs on {n_full} examples, {} held out",
            cfg.train.epochs, cfg.data.val_examples
        ),
        started,
    );

    let started = Instant::now();
    let mut small = cfg.clone();
    // same number of optimizer steps as the full run
    small.train.epochs = (cfg.train.epochs as f64 / A4_FRACTION).round() as usize;
    let (frac, n_frac, _) = train_run(&small, root.path(), "a4", A4_FRACTION);
    let drop = full - frac;
    report.line(
        "A4",
        (0.0..=A4_MAX_DROP).contains(&drop),
        format!(
            "data efficiency: {:.0}% of the data ({n_frac} examples, {} epochs) gives {frac:.4} vs {full:.4}, \
             a drop of {:.1} points (<= {:.0})",
            A4_FRACTION * 100.0,
            small.train.epochs,
            drop * 100.0,
            A4_MAX_DROP * 100.0
        ),
        started,
    );

    let started = Instant::now();
    let model = load_model(
        &cfg,
        &ModelSource::Checkpoint(root.path().join("a3/checkpoint.bin")),
    )
    .expect("checkpoint");
    let mut parts = Vec::new();
    let mut pass = true;
    for (task, min) in A5_MIN {
        let file = root
            .path()
            .join(format!("a3-data/transfer_{}.jsonl", task.name()));
        let acc = match cmd_eval(&cfg, &file, &model, None).expect("transfer eval") {
            EvalOutcome::Transfer { tasks } => tasks[&task].accuracy,
            other => panic!("{other:?}"),
        };
        pass &= acc >= min;
        parts.push(format!("{} {acc:.2} (>= {min})", task.name()));
    }
    report.line(
        "A5",
        pass,
        format!(
            "zero-shot transfer with ground-truth programs, {} examples each: {}",
            cfg.data.transfer_examples,
            parts.join(", ")
        ),
        started,
    );

    a6(&mut report);
    a7(&mut report);

    let started = Instant::now();
    train_run(&cfg, root.path(), "a8", 1.0);
    let read = |p: &str| std::fs::read(root.path().join(p)).expect("artifact");
    let same_data = [
        "train.jsonl",
        "val.jsonl",
        "transfer_ref.jsonl",
        "transfer_puzzle.jsonl",
        "transfer_rpm.jsonl",
    ]
    .iter()
    .all(|f| read(&format!("a3-data/{f}")) == read(&format!("a8-data/{f}")));
    let same_metrics = read("a3/metrics.jsonl") == read("a8/metrics.jsonl");
    let same_ckpt = read("a3/checkpoint.bin") == read("a8/checkpoint.bin");
    report.line(
        "A8",
        same_data && same_metrics && same_ckpt,
        format!(
            "determinism: repeated seed-{} run gives identical data: {same_data}, metrics: {same_metrics}, checkpoint bytes: {same_ckpt}",
            cfg.seed
        ),
        started,
    );

    a9(&mut report, &cfg, &root.path().join("a3/checkpoint.bin"));

    println!("acceptance: {} of 9 criteria failed", report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}
