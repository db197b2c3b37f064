//! Zero-shot transfer tasks: referring expressions, four-object puzzles and
//! 3x3 attribute-progression grids.

use std::collections::HashMap;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{canonicalize, Expression, QuantKind, Sort};

use super::oracle::{OracleValue, SymbolicOracle};
use super::qa::{article, relation_text, Desc};
use super::scene::{relation_holds, Attribute, AttributeVocab, Scene, RELATIONS};
use super::DatagenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferTask {
    Ref,
    Puzzle,
    Rpm,
}

impl TransferTask {
    pub const ALL: [TransferTask; 3] = [TransferTask::Ref, TransferTask::Puzzle, TransferTask::Rpm];

    pub fn name(self) -> &'static str {
        match self {
            TransferTask::Ref => "ref",
            TransferTask::Puzzle => "puzzle",
            TransferTask::Rpm => "rpm",
        }
    }
}

/// One transfer question. Puzzles carry one program and answer per object
/// slot; the example is solved only if every slot is right.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferExample {
    pub task: TransferTask,
    pub question: String,
    pub programs: Vec<Expression>,
    pub answers: Vec<usize>,
}

const VERBS: [&str; 3] = ["Select", "Find", "Point to"];

fn point(var: &str, body: Expression) -> Expression {
    canonicalize(&Expression::quant(
        QuantKind::Point,
        Sort::Object,
        var,
        body,
    ))
}

fn oracle_entity(scene: &Scene, vocab: &AttributeVocab, e: &Expression) -> Option<usize> {
    match SymbolicOracle::new(scene, vocab).eval(e, &mut HashMap::new()) {
        Ok(OracleValue::Entity(i)) => Some(i),
        _ => None,
    }
}

/// A description of `entity` using between 1 and 2 of its attributes.
fn desc_of<R: Rng>(scene: &Scene, i: usize, rng: &mut R) -> Desc {
    let k = rng.gen_range(1..=2);
    let attrs = Attribute::ALL.into_iter().choose_multiple(rng, k);
    Desc::of(&scene.entities[i], &attrs)
}

fn unique_desc_of<R: Rng>(scene: &Scene, i: usize, rng: &mut R) -> Option<Desc> {
    for _ in 0..8 {
        let d = desc_of(scene, i, rng);
        if d.matching(scene) == [i] {
            return Some(d);
        }
    }
    None
}

/// Relations holding from `i` to `j`.
fn true_relations(scene: &Scene, i: usize, j: usize) -> Vec<&'static str> {
    RELATIONS
        .into_iter()
        .filter(|r| relation_holds(scene, r, i, j) == Some(true))
        .collect()
}

/// A referring expression using one of the four templates. `None` when
/// this attempt did not produce a unique referent.
pub fn gen_ref(scene: &Scene, vocab: &AttributeVocab, seed: u64) -> Option<TransferExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = rng.gen_range(1..=4);
    let verb = *VERBS.choose(&mut rng).unwrap();
    let n = scene.len();
    let target = rng.gen_range(0..n);
    let (question, program) = match template {
        1 => {
            let d1 = unique_desc_of(scene, target, &mut rng)?;
            (
                format!("{verb} the {}.", d1.text()),
                point("x", d1.body("x")),
            )
        }
        2 | 3 | 4 => {
            let o2 = (0..n).filter(|&j| j != target).choose(&mut rng)?;
            let r1 = *true_relations(scene, target, o2).choose(&mut rng)?;
            let d1 = desc_of(scene, target, &mut rng);
            match template {
                2 => {
                    let d2 = unique_desc_of(scene, o2, &mut rng)?;
                    let body = Expression::and(vec![
                        d1.body("x"),
                        Expression::concept(
                            r1,
                            vec![Expression::var("x"), Expression::iota("y", d2.body("y"))],
                        ),
                    ]);
                    (
                        format!(
                            "{verb} the {} that is {} the {}.",
                            d1.text(),
                            relation_text(r1),
                            d2.text()
                        ),
                        point("x", body),
                    )
                }
                3 => {
                    let o3 = (0..n)
                        .filter(|&j| j != target && j != o2)
                        .choose(&mut rng)?;
                    let r2 = *true_relations(scene, target, o3).choose(&mut rng)?;
                    let d2 = unique_desc_of(scene, o2, &mut rng)?;
                    let d3 = unique_desc_of(scene, o3, &mut rng)?;
                    let body = Expression::and(vec![
                        d1.body("x"),
                        Expression::concept(
                            r1,
                            vec![Expression::var("x"), Expression::iota("y", d2.body("y"))],
                        ),
                        Expression::concept(
                            r2,
                            vec![Expression::var("x"), Expression::iota("z", d3.body("z"))],
                        ),
                    ]);
                    (
                        format!(
                            "{verb} the {} that is {} the {} and {} the {}.",
                            d1.text(),
                            relation_text(r1),
                            d2.text(),
                            relation_text(r2),
                            d3.text()
                        ),
                        point("x", body),
                    )
                }
                _ => {
                    // "There is a(n) O2 R2 the O3, select the O1 R1 it."
                    let o3 = (0..n)
                        .filter(|&j| j != target && j != o2)
                        .choose(&mut rng)?;
                    let r2 = *true_relations(scene, o2, o3).choose(&mut rng)?;
                    let d2 = desc_of(scene, o2, &mut rng);
                    let d3 = unique_desc_of(scene, o3, &mut rng)?;
                    let it = Expression::iota(
                        "y",
                        Expression::and(vec![
                            d2.body("y"),
                            Expression::concept(
                                r2,
                                vec![Expression::var("y"), Expression::iota("z", d3.body("z"))],
                            ),
                        ]),
                    );
                    let body = Expression::and(vec![
                        d1.body("x"),
                        Expression::concept(r1, vec![Expression::var("x"), it]),
                    ]);
                    let t2 = d2.text();
                    (
                        format!(
                            "There is {} {t2} that is {} the {}, {} the {} that is {} it.",
                            article(&t2),
                            relation_text(r2),
                            d3.text(),
                            verb.to_lowercase(),
                            d1.text(),
                            relation_text(r1)
                        ),
                        point("x", body),
                    )
                }
            }
        }
        _ => unreachable!(),
    };
    // every iota inside and the final selection must be unique
    let answer = oracle_entity(scene, vocab, &program)?;
    (answer == target).then(|| TransferExample {
        task: TransferTask::Ref,
        question,
        programs: vec![program],
        answers: vec![answer],
    })
}

/// Satisfying assignments of the four puzzle variables, with entities
/// allowed to repeat (the programs do not force distinctness).
fn puzzle_solutions(
    scene: &Scene,
    descs: &[Desc],
    edges: &[(usize, usize, &str)],
) -> Vec<[usize; 4]> {
    let n = scene.len();
    let cand: Vec<Vec<usize>> = descs.iter().map(|d| d.matching(scene)).collect();
    let mut out = Vec::new();
    for &a in &cand[0] {
        for &b in &cand[1] {
            for &c in &cand[2] {
                for &d in &cand[3] {
                    let s = [a, b, c, d];
                    if edges
                        .iter()
                        .all(|&(i, j, r)| relation_holds(scene, r, s[i], s[j]) == Some(true))
                    {
                        out.push(s);
                    }
                }
            }
        }
    }
    debug_assert!(out.iter().all(|s| s.iter().all(|&i| i < n)));
    out
}

/// Four descriptions, none unique on its own, plus three relations whose
/// joint solution is unique.
pub fn gen_puzzle(scene: &Scene, vocab: &AttributeVocab, seed: u64) -> Option<TransferExample> {
    let _ = vocab;
    let n = scene.len();
    if n < 4 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let solution: [usize; 4] = [ids[0], ids[1], ids[2], ids[3]];
    // random spanning tree over the four slots
    let mut edges: Vec<(usize, usize, &str)> = Vec::with_capacity(3);
    for child in 1..4 {
        let parent = rng.gen_range(0..child);
        let (i, j) = if rng.gen_bool(0.5) {
            (child, parent)
        } else {
            (parent, child)
        };
        let rel = *true_relations(scene, solution[i], solution[j]).choose(&mut rng)?;
        edges.push((i, j, rel));
    }
    let mut descs = Vec::with_capacity(4);
    for &e in &solution {
        let d = (0..8)
            .map(|_| desc_of(scene, e, &mut rng))
            .find(|d| d.matching(scene).len() >= 2)?;
        descs.push(d);
    }
    if puzzle_solutions(scene, &descs, &edges) != [solution] {
        return None;
    }
    let vars = ["x", "y", "z", "w"];
    let mut parts: Vec<String> = (0..4)
        .map(|i| format!("Object {} is {}", i + 1, descs[i].text()))
        .collect();
    for &(i, j, r) in &edges {
        parts.push(format!(
            "Object {} is {} object {}",
            i + 1,
            relation_text(r),
            j + 1
        ));
    }
    let question = format!(
        "Can you find four objects from the image such that: {}.",
        parts.join("; ")
    );
    let mut programs = Vec::with_capacity(4);
    for slot in 0..4 {
        let mut conj: Vec<Expression> = (0..4).map(|i| descs[i].body(vars[i])).collect();
        conj.extend(
            edges
                .iter()
                .map(|&(i, j, r)| Expression::apply(r, &[vars[i], vars[j]])),
        );
        let mut body = Expression::and(conj);
        for other in (0..4).rev().filter(|&o| o != slot) {
            body = Expression::exists(vars[other], body);
        }
        programs.push(point(vars[slot], body));
    }
    Some(TransferExample {
        task: TransferTask::Puzzle,
        question,
        programs,
        answers: solution.to_vec(),
    })
}

/// A 3x3 grid where one attribute follows a fixed sequence along every row
/// and another is constant within each row; the missing bottom-right cell
/// is forced and matches exactly one scene entity.
pub fn gen_rpm(scene: &Scene, vocab: &AttributeVocab, seed: u64) -> Option<TransferExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.gen_range(0..scene.len());
    let mut dims = Attribute::ALL.to_vec();
    dims.shuffle(&mut rng);
    let (col_dim, row_dim) = (dims[0], dims[1]);
    let answer = Desc::of(&scene.entities[target], &[col_dim, row_dim]);
    if answer.matching(scene) != [target] {
        return None;
    }
    let value = |a: Attribute| scene.entities[target].get(a).to_string();
    let pick = |rng: &mut ChaCha8Rng, a: Attribute| vocab.values(a).choose(rng).unwrap().clone();
    // along a row: col_dim cycles through seq; down a column: row_dim per row
    let mut seq = vec![
        pick(&mut rng, col_dim),
        pick(&mut rng, col_dim),
        value(col_dim),
    ];
    if vocab.values(col_dim).len() >= 3 {
        let mut vals = vocab.values(col_dim).to_vec();
        vals.retain(|v| *v != value(col_dim));
        vals.shuffle(&mut rng);
        seq = vec![vals[0].clone(), vals[1].clone(), value(col_dim)];
    }
    let rows = [
        pick(&mut rng, row_dim),
        pick(&mut rng, row_dim),
        value(row_dim),
    ];
    let mut cells = Vec::with_capacity(8);
    for (r, row_value) in rows.iter().enumerate() {
        for (c, col_value) in seq.iter().enumerate() {
            if r == 2 && c == 2 {
                continue;
            }
            let d = Desc {
                values: {
                    let mut v = vec![(col_dim, col_value.clone()), (row_dim, row_value.clone())];
                    v.sort();
                    v
                },
            };
            cells.push(format!(
                "row {} col {} is {} {}",
                r + 1,
                c + 1,
                article(&d.text()),
                d.text()
            ));
        }
    }
    let question = format!(
        "There are 9 objects, ordered in a 3x3 grid: {}; I am missing one object at row 3 col 3. Can you find an object in the scene that can fit there?",
        cells.join("; ")
    );
    let program = point("x", answer.body("x"));
    debug_assert_eq!(oracle_entity(scene, vocab, &program), Some(target));
    Some(TransferExample {
        task: TransferTask::Rpm,
        question,
        programs: vec![program],
        answers: vec![target],
    })
}

/// Generates `count` examples of a task, drawing fresh scenes as needed.
pub fn gen_transfer_set(
    task: TransferTask,
    count: usize,
    seed: u64,
    mut scene_for: impl FnMut(u64) -> Result<Scene, DatagenError>,
    vocab: &AttributeVocab,
) -> Result<Vec<(Scene, TransferExample)>, DatagenError> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    let budget = (count as u64 + 10) * 500;
    while out.len() < count {
        if attempt >= budget {
            return Err(DatagenError::ConfigInfeasible(format!(
                "only {} of {count} {} examples after {budget} attempts",
                out.len(),
                task.name()
            )));
        }
        let scene = scene_for(seed.wrapping_mul(1_000_003).wrapping_add(attempt))?;
        let s = seed ^ attempt.wrapping_mul(0x2545_f491_4f6c_dd1d);
        attempt += 1;
        let ex = match task {
            TransferTask::Ref => gen_ref(&scene, vocab, s),
            TransferTask::Puzzle => gen_puzzle(&scene, vocab, s),
            TransferTask::Rpm => gen_rpm(&scene, vocab, s),
        };
        if let Some(ex) = ex {
            out.push((scene, ex));
        }
    }
    Ok(out)
}
