use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::exec::{execute, ConceptSource, Readout};
use crate::grounding::FeatureProvider;
use crate::lang::{canonicalize, parse};
use crate::train::{Answer, AnswerType, Dataset, TrainExample};

use super::features::SceneFeatureProvider;
use super::qa::{gen_qa, QaConfig};
use super::scene::{gen_scene, Scene, SceneConfig};
use super::transfer::{TransferExample, TransferTask};
use super::DatagenError;

pub const SCHEMA_VERSION: u32 = 1;

/// One question-answer pair as stored on disk. Programs are kept in
/// canonical surface syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub schema_version: u32,
    pub id: String,
    pub split: String,
    pub scene: Scene,
    pub question: String,
    pub program: String,
    pub answer: Answer,
    pub answer_type: AnswerType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub schema_version: u32,
    pub id: String,
    pub task: TransferTask,
    pub scene: Scene,
    pub question: String,
    pub programs: Vec<String>,
    pub answers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub split: String,
    pub scenes: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub qa: QaConfig,
    /// Largest share either boolean answer may take among boolean questions.
    pub max_boolean_share: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            split: "train".into(),
            scenes: 500,
            seed: 0,
            scene: SceneConfig::default(),
            qa: QaConfig::default(),
            max_boolean_share: 0.55,
        }
    }
}

fn derive_seed(base: u64, split: &str, index: u64) -> u64 {
    let mut h = base ^ 0xcbf2_9ce4_8422_2325;
    for b in split.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scenes and questions for one split. Boolean questions that would push
/// either answer past `max_boolean_share` are dropped.
pub fn gen_qa_split(config: &SplitConfig) -> Result<(Vec<Scene>, Vec<QaRecord>), DatagenError> {
    if !(0.5..=1.0).contains(&config.max_boolean_share) {
        return Err(DatagenError::InvalidConfig(format!(
            "max_boolean_share {} not in [0.5, 1]",
            config.max_boolean_share
        )));
    }
    config.scene.validate()?;
    let mut scenes = Vec::with_capacity(config.scenes);
    let mut records = Vec::new();
    let (mut yes, mut no) = (0usize, 0usize);
    for s in 0..config.scenes {
        let id = format!("{}-{s:05}", config.split);
        let scene = gen_scene(
            &config.scene,
            &id,
            derive_seed(config.seed, &config.split, s as u64),
        )?;
        let items = gen_qa(
            &scene,
            &config.scene.vocab,
            &config.qa,
            derive_seed(config.seed ^ 0x5bd1_e995, &config.split, s as u64),
        );
        for (q, item) in items.into_iter().enumerate() {
            if let Answer::Boolean(b) = item.answer {
                let (y, n) = if b { (yes + 1, no) } else { (yes, no + 1) };
                let share = y.max(n) as f64 / (y + n) as f64;
                if y + n > 10 && share > config.max_boolean_share {
                    continue;
                }
                (yes, no) = (y, n);
            }
            records.push(QaRecord {
                schema_version: SCHEMA_VERSION,
                id: format!("{id}-q{q:02}"),
                split: config.split.clone(),
                scene: scene.clone(),
                question: item.question,
                program: item.program.to_string(),
                answer_type: item.answer.answer_type(),
                answer: item.answer,
            });
        }
        scenes.push(scene);
    }
    Ok((scenes, records))
}

/// Records with their scenes' features. When `use_programs` is false the
/// examples carry no program (to be filled by an interpreter).
pub fn to_dataset(
    records: &[QaRecord],
    provider: &SceneFeatureProvider,
    use_programs: bool,
) -> Result<Dataset, DatagenError> {
    let mut contexts = BTreeMap::new();
    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        if r.schema_version != SCHEMA_VERSION {
            return Err(DatagenError::Record(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                r.id, r.schema_version
            )));
        }
        if !contexts.contains_key(&r.scene.id) {
            let ctx = provider
                .build_context(&r.scene)
                .map_err(|e| DatagenError::Record(format!("{}: {e}", r.id)))?;
            contexts.insert(r.scene.id.clone(), ctx);
        }
        let program = if use_programs {
            Some(parse(&r.program).map_err(|e| DatagenError::Record(format!("{}: {e}", r.id)))?)
        } else {
            None
        };
        examples.push(TrainExample {
            id: r.id.clone(),
            scene_id: r.scene.id.clone(),
            program,
            answer: r.answer.clone(),
        });
    }
    Ok(Dataset { contexts, examples })
}

pub fn transfer_records(items: &[(Scene, TransferExample)], prefix: &str) -> Vec<TransferRecord> {
    items
        .iter()
        .enumerate()
        .map(|(i, (scene, ex))| TransferRecord {
            schema_version: SCHEMA_VERSION,
            id: format!("{prefix}-{}-{i:05}", ex.task.name()),
            task: ex.task,
            scene: scene.clone(),
            question: ex.question.clone(),
            programs: ex
                .programs
                .iter()
                .map(|p| canonicalize(p).to_string())
                .collect(),
            answers: ex.answers.clone(),
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatagenError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| DatagenError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatagenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| DatagenError::Record(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Transfer accuracy per task. An example counts as solved only when every
/// one of its programs selects the recorded entity; programs that fail to
/// execute count as wrong.
pub fn evaluate_transfer(
    source: &(dyn ConceptSource + Sync),
    provider: &SceneFeatureProvider,
    records: &[TransferRecord],
) -> Result<BTreeMap<TransferTask, TaskReport>, DatagenError> {
    let solved: Vec<Result<(TransferTask, bool), DatagenError>> = records
        .par_iter()
        .map(|r| {
            let ctx = provider
                .build_context(&r.scene)
                .map_err(|e| DatagenError::Record(format!("{}: {e}", r.id)))?;
            let mut ok = r.programs.len() == r.answers.len();
            for (p, &a) in r.programs.iter().zip(&r.answers) {
                let e = parse(p).map_err(|e| DatagenError::Record(format!("{}: {e}", r.id)))?;
                ok &= matches!(execute(&e, &ctx, source), Ok(Readout::Entity { index, .. }) if index == a);
            }
            Ok((r.task, ok))
        })
        .collect();
    let mut out: BTreeMap<TransferTask, TaskReport> = BTreeMap::new();
    for s in solved {
        let (task, ok) = s?;
        let t = out.entry(task).or_default();
        t.total += 1;
        t.correct += usize::from(ok);
    }
    for t in out.values_mut() {
        t.accuracy = t.correct as f64 / t.total as f64;
    }
    Ok(out)
}
