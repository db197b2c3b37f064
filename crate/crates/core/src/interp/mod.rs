//! Natural-language queries to programs through a chat-completion model,
//! with validation, resampling and an offline record/replay cache.

mod cache;
mod client;
mod prompt;


use rayon::prelude::*;
use thiserror::Error;

use crate::lang::{parse, validate, Categories, Expression};

pub use cache::{cache_key, CacheMode, CachedClient, CompletionCache};
pub use client::{
    CompletionClient, EndpointConfig, HttpClient, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL,
};
pub use prompt::{build_prompt, PromptExample, PromptSpec};

/// Sampling temperature for each attempt.
pub const TEMPERATURES: [f64; 3] = [0.0, 0.5, 0.8];
pub const MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("no cached completion for key {0}")]
    CacheMiss(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("no valid program after {attempts} attempts; last error: {last}")]
    ExhaustedResamples {
        attempts: usize,
        last: String,
        raw: String,
    },
}

/// Why an extracted program was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramFailure {
    Syntax(String),
    Validation(String),
}

impl std::fmt::Display for ProgramFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProgramFailure::Syntax(m) => write!(f, "syntax error: {m}"),
            ProgramFailure::Validation(m) => write!(f, "validation error: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpResult {
    pub raw: String,
    pub program_text: String,
    pub program: Expression,
    pub attempts: usize,
}

/// The last fenced code block in `reply`, or the whole trimmed reply when
/// it has none. A language tag on the opening fence is dropped.
pub fn extract_program(reply: &str) -> String {
    let parts: Vec<&str> = reply.split("```").collect();
    // odd indices are inside fences; an unclosed final fence still counts
    let last_inside = (1..parts.len()).step_by(2).last();
    match last_inside {
        Some(i) => {
            let block = parts[i];
            let body = match block.split_once('\n') {
                Some((tag, rest)) if !tag.trim().is_empty() && !tag.contains('(') => rest,
                _ => block,
            };
            body.trim().to_string()
        }
        None => reply.trim().to_string(),
    }
}

/// Parses and validates a candidate program.
pub fn check_program(text: &str, categories: &Categories) -> Result<Expression, ProgramFailure> {
    let e = parse(text).map_err(|e| ProgramFailure::Syntax(e.to_string()))?;
    validate(&e, categories).map_err(|errs| {
        ProgramFailure::Validation(
            errs.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    Ok(e)
}

/// Requests a program for `query`, resampling at rising temperature while
/// the reply fails to parse or validate. Programs that are well-formed but
/// mean the wrong thing cannot be detected here and are returned as is.
pub fn interpret(
    query: &str,
    spec: &PromptSpec,
    categories: &Categories,
    client: &dyn CompletionClient,
    max_attempts: usize,
) -> Result<InterpResult, InterpError> {
    let prompt = build_prompt(spec, query);
    let max_attempts = max_attempts.clamp(1, TEMPERATURES.len());
    let mut last = None;
    for (attempt, &t) in TEMPERATURES.iter().take(max_attempts).enumerate() {
        let raw = client.complete(&prompt, t)?;
        let text = extract_program(&raw);
        match check_program(&text, categories) {
            Ok(program) => {
                return Ok(InterpResult {
                    raw,
                    program_text: text,
                    program,
                    attempts: attempt + 1,
                })
            }
            Err(f) => last = Some((f, raw)),
        }
    }
    let (failure, raw) = last.expect("at least one attempt");
    Err(InterpError::ExhaustedResamples {
        attempts: max_attempts,
        last: failure.to_string(),
        raw,
    })
}

/// Interprets many queries with at most `parallelism` requests in flight.
/// Results keep the input order.
pub fn interpret_all(
    queries: &[String],
    spec: &PromptSpec,
    categories: &Categories,
    client: &dyn CompletionClient,
    max_attempts: usize,
    parallelism: usize,
) -> Vec<Result<InterpResult, InterpError>> {
    let run = || {
        queries
            .par_iter()
            .map(|q| interpret(q, spec, categories, client, max_attempts))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
