//! The first-order reasoning language: syntax tree, parser, canonical
//! printer, signature inference and static validation.
//!
//! Surface grammar, by example:
//!
//! ```text
//! exists(Object, lambda x: and(red(x), left(x, iota(Object, lambda y: cube(y)))))
//! greater_than(count(Object, lambda x: sphere(x)), 2)
//! describe(Color, lambda c: color(c, iota(Object, lambda x: large(x))))
//! do(Action, lambda a: put(a, iota(Object, lambda x: cake(x)), iota(Object, lambda y: cat(y)), "far"))
//! ```
//!
//! Infix `and` / `or` are accepted as sugar; the printer always emits the
//! prefix form.

mod ast;
pub mod generate;
mod lexer;
mod parser;
mod printer;
mod signature;
mod validate;

pub use ast::{Arg, BoolKind, Categories, CompareKind, Expression, QuantKind, Sort};
pub use parser::{parse, parse_program_file};
pub use printer::{alpha_eq, canonical_var_name, canonicalize, pretty_print};
pub use signature::{infer_corpus_signatures, infer_signatures, ArgSort, ConceptSignature};
pub use validate::{validate, ValidationError};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unbound variable `{name}` at {line}:{col}")]
    UnboundVariable {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("concept `{name}` used with arity {first} and {second}")]
    ArityConflict {
        name: String,
        first: usize,
        second: usize,
    },
    #[error("concept `{name}` used with argument sorts {first:?} and {second:?}")]
    SortConflict {
        name: String,
        first: Vec<ArgSort>,
        second: Vec<ArgSort>,
    },
}

impl LangError {
    /// Rebases a single-line parse error onto line `line` of a file.
    pub fn on_line(self, line: usize) -> Self {
        match self {
            LangError::Syntax { col, message, .. } => LangError::Syntax { line, col, message },
            LangError::UnboundVariable { name, col, .. } => {
                LangError::UnboundVariable { name, line, col }
            }
            other => other,
        }
    }
}
