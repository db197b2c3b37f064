use serde::{Deserialize, Serialize};

use crate::lang::{parse, pretty_print, Expression};

use super::InterpError;

/// One worked example: a query, its simplified restatement and the program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub query: String,
    pub simplified: String,
    pub program: String,
}

/// Domain-independent instructions for turning a query into a program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub syntax_rules: String,
    pub examples: Vec<PromptExample>,
    /// Ask the model to restate the query before writing the program.
    pub step_by_step: bool,
}

const SYNTAX_RULES: &str = "\
Translate the query into a program in first-order logic.
Programs are built from these forms:
- concept(x), relation(x, y): a named concept applied to variables or entity expressions
- and(a, b, ...), or(a, b, ...), not(a)
- exists(Object, lambda x: body) and forall(Object, lambda x: body): is there / are all
- count(Object, lambda x: body): the number of objects satisfying body
- iota(Object, lambda x: body): the unique object satisfying body, usable as an argument
- point(Object, lambda x: body): answer with the unique object satisfying body
- describe(Category, lambda c: concept(c, target)): answer with a word from the category
- greater_than(a, b), less_than(a, b), equal(a, b): compare counts or numbers
- view(Object, lambda x: body): look from the object satisfying body
- do(Action, lambda a: verb(a, target, \"text\")): answer with an action
Concept names are lowercase words taken from the query; use underscores instead of spaces.
To classify whether two objects have a certain property, use a relation such as on(x, y).
Every variable must be bound by a lambda. Do not invent concepts that the query does not mention.";

impl Default for PromptSpec {
    fn default() -> Self {
        let ex = |q: &str, s: &str, p: &str| PromptExample {
            query: q.into(),
            simplified: s.into(),
            program: p.into(),
        };
        Self {
            syntax_rules: SYNTAX_RULES.into(),
            examples: vec![
                ex(
                    "Is there an apple next to the cake?",
                    "there is an apple that is next to the cake",
                    "exists(Object, lambda x: and(apple(x), next_to(x, iota(Object, lambda y: cake(y)))))",
                ),
                ex(
                    "How many cats are sleeping?",
                    "count the cats that are sleeping",
                    "count(Object, lambda x: and(cat(x), sleeping(x)))",
                ),
                ex(
                    "Are there more cats than dogs?",
                    "the number of cats is greater than the number of dogs",
                    "greater_than(count(Object, lambda x: cat(x)), count(Object, lambda y: dog(y)))",
                ),
                ex(
                    "Which fruit is on the plate?",
                    "point to the fruit that is on the plate",
                    "point(Object, lambda x: and(fruit(x), on(x, iota(Object, lambda y: plate(y)))))",
                ),
                ex(
                    "What flavor is the cake?",
                    "describe the flavor of the cake",
                    "describe(Flavor, lambda c: flavor(c, iota(Object, lambda x: cake(x))))",
                ),
                ex(
                    "Is every apple ripe?",
                    "every object that is an apple is ripe",
                    "forall(Object, lambda x: or(not(apple(x)), ripe(x)))",
                ),
            ],
            step_by_step: true,
        }
    }
}

impl PromptSpec {
    /// Every example must parse, and none may mention a reserved word.
    pub fn validate(&self, reserved: &[&str]) -> Result<(), InterpError> {
        for ex in &self.examples {
            let e = parse(&ex.program)
                .map_err(|e| InterpError::InvalidPrompt(format!("{}: {e}", ex.program)))?;
            let mut names = Vec::new();
            concept_names(&e, &mut names);
            if let Some(w) = names.iter().find(|n| reserved.contains(&n.as_str())) {
                return Err(InterpError::InvalidPrompt(format!(
                    "example `{}` uses reserved concept {w}",
                    ex.query
                )));
            }
        }
        Ok(())
    }
}

fn concept_names(e: &Expression, out: &mut Vec<String>) {
    match e {
        Expression::Concept { name, args } => {
            out.push(name.clone());
            for a in args {
                if let crate::lang::Arg::Expr(x) = a {
                    concept_names(x, out);
                }
            }
        }
        Expression::Bool { operands, .. } => operands.iter().for_each(|o| concept_names(o, out)),
        Expression::Compare { lhs, rhs, .. } => {
            concept_names(lhs, out);
            concept_names(rhs, out);
        }
        Expression::Quantified { body, .. } => concept_names(body, out),
        Expression::Var(_) | Expression::Number(_) => {}
    }
}

/// Deterministic prompt text. Example programs are shown pretty-printed.
pub fn build_prompt(spec: &PromptSpec, query: &str) -> String {
    let mut p = String::new();
    p.push_str(&spec.syntax_rules);
    p.push_str("\n\n");
    if spec.step_by_step {
        p.push_str("First restate the query in simpler words, then write the program in a fenced code block.\n\n");
    } else {
        p.push_str("Write the program in a fenced code block.\n\n");
    }
    for ex in &spec.examples {
        let program = parse(&ex.program)
            .map(|e| pretty_print(&e))
            .unwrap_or_else(|_| ex.program.clone());
        p.push_str("Query: ");
        p.push_str(&ex.query);
        p.push('\n');
        if spec.step_by_step {
            p.push_str("Simplified: ");
            p.push_str(&ex.simplified);
            p.push('\n');
        }
        p.push_str("```\n");
        p.push_str(&program);
        p.push_str("\n```\n\n");
    }
    p.push_str("Query: ");
    p.push_str(query);
    p.push('\n');
    p
}
