use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::{Arg, Expression, QuantKind, Sort};
use super::LangError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArgSort {
    Object,
    Action,
    TextCategory,
}

/// Name, arity and argument sorts of a concept as used by programs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptSignature {
    pub name: String,
    pub arity: usize,
    pub arg_sorts: Vec<ArgSort>,
    /// Applied to a `describe`-bound category variable; such concepts are
    /// scored through the category's member concepts.
    pub generative: bool,
}

impl ConceptSignature {
    pub fn new(name: &str, arg_sorts: Vec<ArgSort>) -> Self {
        Self {
            name: name.to_string(),
            arity: arg_sorts.len(),
            arg_sorts,
            generative: false,
        }
    }

    pub fn unary(name: &str) -> Self {
        Self::new(name, vec![ArgSort::Object])
    }

    pub fn binary(name: &str) -> Self {
        Self::new(name, vec![ArgSort::Object, ArgSort::Object])
    }

    /// Number of object arguments; this decides which feature tensor the
    /// concept reads.
    pub fn entity_arity(&self) -> usize {
        self.arg_sorts
            .iter()
            .filter(|s| **s == ArgSort::Object)
            .count()
    }
}

/// Every concept application contributes one signature.
pub fn infer_signatures(e: &Expression) -> Result<BTreeSet<ConceptSignature>, LangError> {
    let mut found = Vec::new();
    collect(e, &mut Vec::new(), &mut found);
    merge(found)
}

/// Signatures across many programs, with conflicts detected across the
/// whole corpus.
pub fn infer_corpus_signatures<'a>(
    programs: impl IntoIterator<Item = &'a Expression>,
) -> Result<BTreeSet<ConceptSignature>, LangError> {
    let mut found = Vec::new();
    for p in programs {
        collect(p, &mut Vec::new(), &mut found);
    }
    merge(found)
}

fn merge(found: Vec<ConceptSignature>) -> Result<BTreeSet<ConceptSignature>, LangError> {
    let mut by_name: BTreeMap<String, ConceptSignature> = BTreeMap::new();
    for sig in found {
        match by_name.get(&sig.name) {
            None => {
                by_name.insert(sig.name.clone(), sig);
            }
            Some(prev) if prev.arity != sig.arity => {
                return Err(LangError::ArityConflict {
                    name: sig.name,
                    first: prev.arity,
                    second: sig.arity,
                });
            }
            Some(prev) if prev.arg_sorts != sig.arg_sorts || prev.generative != sig.generative => {
                return Err(LangError::SortConflict {
                    name: sig.name,
                    first: prev.arg_sorts.clone(),
                    second: sig.arg_sorts,
                });
            }
            Some(_) => {}
        }
    }
    Ok(by_name.into_values().collect())
}

fn collect(e: &Expression, env: &mut Vec<(String, ArgSort)>, out: &mut Vec<ConceptSignature>) {
    match e {
        Expression::Var(_) | Expression::Number(_) => {}
        Expression::Quantified {
            kind,
            sort,
            var,
            body,
        } => {
            let bound = match (kind, sort) {
                (QuantKind::Describe, _) | (_, Sort::Category(_)) => ArgSort::TextCategory,
                (_, Sort::Action) => ArgSort::Action,
                (_, Sort::Object) => ArgSort::Object,
            };
            env.push((var.clone(), bound));
            collect(body, env, out);
            env.pop();
        }
        Expression::Bool { operands, .. } => operands.iter().for_each(|o| collect(o, env, out)),
        Expression::Compare { lhs, rhs, .. } => {
            collect(lhs, env, out);
            collect(rhs, env, out);
        }
        Expression::Concept { name, args } => {
            if args.is_empty() {
                return;
            }
            let mut sorts = Vec::with_capacity(args.len());
            let mut generative = false;
            for a in args {
                let sort = match a {
                    Arg::Text(_) => ArgSort::TextCategory,
                    Arg::Expr(Expression::Var(v)) => {
                        let sort = env
                            .iter()
                            .rev()
                            .find(|(n, _)| n == v)
                            .map_or(ArgSort::Object, |(_, s)| *s);
                        generative |= sort == ArgSort::TextCategory;
                        sort
                    }
                    Arg::Expr(Expression::Quantified {
                        sort: Sort::Action, ..
                    }) => ArgSort::Action,
                    Arg::Expr(_) => ArgSort::Object,
                };
                sorts.push(sort);
            }
            out.push(ConceptSignature {
                name: name.clone(),
                arity: args.len(),
                arg_sorts: sorts,
                generative,
            });
            for a in args {
                if let Arg::Expr(inner) = a {
                    collect(inner, env, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn sigs(src: &str) -> Vec<ConceptSignature> {
        infer_signatures(&parse(src).unwrap())
            .unwrap()
            .into_iter()
            .collect()
    }

    #[test]
    fn unary_signature() {
        assert_eq!(
            sigs("exists(Object, lambda x: sphere(x))"),
            vec![ConceptSignature::unary("sphere")]
        );
    }

    #[test]
    fn relation_with_iota() {
        let s = sigs("iota(Object, lambda x: left(x, iota(Object, lambda y: cube(y))))");
        assert_eq!(
            s,
            vec![
                ConceptSignature::unary("cube"),
                ConceptSignature::binary("left")
            ]
        );
    }

    #[test]
    fn action_with_text_modifier() {
        let s = sigs(
            "do(Action, lambda a: put(a, iota(Object, lambda x: cake(x)), iota(Object, lambda z: cat(z)), \"far\"))",
        );
        let put = s.iter().find(|s| s.name == "put").unwrap();
        assert_eq!(put.arity, 4);
        assert_eq!(
            put.arg_sorts,
            vec![
                ArgSort::Action,
                ArgSort::Object,
                ArgSort::Object,
                ArgSort::TextCategory
            ]
        );
        assert!(!put.generative);
        assert_eq!(put.entity_arity(), 2);
        let names: Vec<&str> = s.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["cake", "cat", "put"]);
    }

    #[test]
    fn describe_marks_generative() {
        let s = sigs("describe(Color, lambda c: color(c, iota(Object, lambda y: sphere(y))))");
        let color = s.iter().find(|s| s.name == "color").unwrap();
        assert!(color.generative);
        assert_eq!(
            color.arg_sorts,
            vec![ArgSort::TextCategory, ArgSort::Object]
        );
    }

    #[test]
    fn corpus_conflict() {
        let a = parse("exists(Object, lambda x: exists(Object, lambda y: left(x, y)))").unwrap();
        let b = parse("exists(Object, lambda x: exists(Object, lambda y: exists(Object, lambda z: left(x, y, z))))")
            .unwrap();
        assert!(matches!(
            infer_corpus_signatures([&a, &b]),
            Err(LangError::ArityConflict {
                first: 2,
                second: 3,
                ..
            })
        ));
    }
}
