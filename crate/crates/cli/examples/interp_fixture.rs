//! Writes the replay fixture used by the interpreter pipeline tests:
//! `interp_records.jsonl` (question records with scenes) and
//! `interp_cache.jsonl` (completions keyed as the interpreter looks them up).
//!
//! Completions are scripted from the ground-truth programs. A few queries
//! get a malformed first reply that is fixed on resampling, one never gets
//! a well-formed program and one gets a well-formed but wrong program.
//!
//! ```text
//! cargo run -p softlogic-cli --example interp_fixture -- crates/cli/tests/fixtures
//! ```

use std::path::PathBuf;

use anyhow::{Context, Result};
use softlogic_cli::RunConfig;
use softlogic_core::datagen::{gen_qa_split, write_jsonl, SplitConfig};
use softlogic_core::interp::{build_prompt, CompletionCache, PromptSpec, TEMPERATURES};
use softlogic_core::Answer;

const QUERIES: usize = 32;

fn reply(question: &str, program: &str) -> String {
    let simplified = question.trim_end_matches(['?', '.']).to_lowercase();
    format!("Simplified: {simplified}\n```\n{program}\n```")
}

fn main() -> Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .context("usage: interp_fixture OUT_DIR")?,
    );
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let (_, records) = gen_qa_split(&SplitConfig {
        split: "interp".into(),
        scenes: 12,
        seed: 11,
        scene: cfg.data.scene.clone(),
        qa: cfg.data.qa.clone(),
        max_boolean_share: cfg.data.max_boolean_share,
    })?;
    let records: Vec<_> = records.into_iter().take(QUERIES).collect();
    anyhow::ensure!(records.len() == QUERIES, "too few questions generated");

    let wrong = (QUERIES - 4..QUERIES)
        .find(|&i| matches!(records[i].answer, Answer::Boolean(_)))
        .context("no boolean question to answer wrongly")?;
    let unrecoverable = if wrong == QUERIES - 1 {
        QUERIES - 2
    } else {
        QUERIES - 1
    };

    let records_path = out.join("interp_records.jsonl");
    let cache_path = out.join("interp_cache.jsonl");
    let _ = std::fs::remove_file(&cache_path);
    write_jsonl(&records_path, &records)?;
    let cache = CompletionCache::open(&cache_path)?;
    let spec = PromptSpec::default();
    let model = &cfg.interp.model;

    for (i, r) in records.iter().enumerate() {
        let prompt = build_prompt(&spec, &r.question);
        let good = reply(&r.question, &r.program);
        let unbalanced = reply(&r.question, r.program.trim_end_matches(')'));
        let replies: Vec<String> = if i == unrecoverable {
            vec![
                unbalanced.clone(),
                unbalanced.clone(),
                format!("{unbalanced})))"),
            ]
        } else if i == wrong {
            vec![reply(&r.question, &format!("not({})", r.program))]
        } else if i % 8 == 3 {
            vec![unbalanced, good]
        } else if i % 8 == 7 {
            // a concept applied to a variable no lambda binds
            vec![
                reply(&r.question, "exists(Object, lambda x: left(x, y))"),
                good,
            ]
        } else {
            vec![good]
        };
        for (t, text) in TEMPERATURES.iter().zip(&replies) {
            cache.insert(model, &prompt, *t, text)?;
        }
    }
    println!(
        "{} queries, {} cached completions; unrecoverable #{unrecoverable}, wrong #{wrong}",
        records.len(),
        cache.len()
    );
    Ok(())
}
