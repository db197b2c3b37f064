//! Crisp evaluation of programs directly on scene annotations.

use std::collections::HashMap;

use crate::lang::{Arg, BoolKind, CompareKind, Expression, QuantKind, Sort};
use crate::train::Answer;

use super::scene::{relation_holds, view_relation_holds, Attribute, AttributeVocab, Scene};
use super::DatagenError;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleValue {
    Bool(bool),
    Count(u32),
    Number(f64),
    Entity(usize),
    Word(String),
}

impl OracleValue {
    pub fn into_answer(self) -> Option<Answer> {
        match self {
            OracleValue::Bool(b) => Some(Answer::Boolean(b)),
            OracleValue::Count(k) => Some(Answer::Count(k)),
            OracleValue::Entity(i) => Some(Answer::Entity(i)),
            OracleValue::Word(w) => Some(Answer::Word(w)),
            OracleValue::Number(_) => None,
        }
    }
}

/// Evaluates programs on a scene's ground-truth attributes and geometry.
/// `iota`, `point` and `view` require exactly one satisfying entity.
pub struct SymbolicOracle<'a> {
    scene: &'a Scene,
    vocab: &'a AttributeVocab,
    anchor: Option<usize>,
}

impl<'a> SymbolicOracle<'a> {
    pub fn new(scene: &'a Scene, vocab: &'a AttributeVocab) -> Self {
        Self {
            scene,
            vocab,
            anchor: None,
        }
    }

    pub fn answer(
        scene: &Scene,
        vocab: &AttributeVocab,
        e: &Expression,
    ) -> Result<Answer, DatagenError> {
        SymbolicOracle::new(scene, vocab)
            .eval(e, &mut HashMap::new())?
            .into_answer()
            .ok_or_else(|| DatagenError::Oracle("program evaluates to a bare number".into()))
    }

    /// Entities satisfying `body` with `var` bound to each in turn.
    fn satisfying(
        &mut self,
        var: &str,
        body: &Expression,
        env: &mut HashMap<String, usize>,
    ) -> Result<Vec<usize>, DatagenError> {
        let mut out = Vec::new();
        for i in 0..self.scene.len() {
            env.insert(var.to_string(), i);
            if self.truth(body, env)? {
                out.push(i);
            }
        }
        env.remove(var);
        Ok(out)
    }

    fn unique(
        &mut self,
        var: &str,
        body: &Expression,
        env: &mut HashMap<String, usize>,
    ) -> Result<usize, DatagenError> {
        match self.satisfying(var, body, env)?.as_slice() {
            [i] => Ok(*i),
            other => Err(DatagenError::NotUnique(other.len())),
        }
    }

    fn truth(
        &mut self,
        e: &Expression,
        env: &mut HashMap<String, usize>,
    ) -> Result<bool, DatagenError> {
        match self.eval(e, env)? {
            OracleValue::Bool(b) => Ok(b),
            other => Err(DatagenError::Oracle(format!(
                "expected a truth value, got {other:?}"
            ))),
        }
    }

    fn number(
        &mut self,
        e: &Expression,
        env: &mut HashMap<String, usize>,
    ) -> Result<f64, DatagenError> {
        match self.eval(e, env)? {
            OracleValue::Count(k) => Ok(f64::from(k)),
            OracleValue::Number(x) => Ok(x),
            other => Err(DatagenError::Oracle(format!(
                "expected a number, got {other:?}"
            ))),
        }
    }

    fn entity_arg(
        &mut self,
        a: &Arg,
        env: &mut HashMap<String, usize>,
    ) -> Result<usize, DatagenError> {
        match a {
            Arg::Expr(Expression::Var(v)) => env
                .get(v)
                .copied()
                .ok_or_else(|| DatagenError::Oracle(format!("unbound variable {v}"))),
            Arg::Expr(e) => match self.eval(e, env)? {
                OracleValue::Entity(i) => Ok(i),
                other => Err(DatagenError::Oracle(format!(
                    "expected an entity, got {other:?}"
                ))),
            },
            Arg::Text(t) => Err(DatagenError::Oracle(format!(
                "unexpected text argument {t}"
            ))),
        }
    }

    pub fn eval(
        &mut self,
        e: &Expression,
        env: &mut HashMap<String, usize>,
    ) -> Result<OracleValue, DatagenError> {
        Ok(match e {
            Expression::Number(x) => OracleValue::Number(*x),
            Expression::Var(v) => return Err(DatagenError::Oracle(format!("bare variable {v}"))),
            Expression::Bool { kind, operands } => {
                let mut rest = Vec::new();
                let mut viewed = false;
                for o in operands {
                    if *kind == BoolKind::And
                        && matches!(
                            o,
                            Expression::Quantified {
                                kind: QuantKind::View,
                                ..
                            }
                        )
                    {
                        self.eval(o, env)?;
                        viewed = true;
                    } else {
                        rest.push(o);
                    }
                }
                if viewed && rest.len() == 1 {
                    return self.eval(rest[0], env);
                }
                let mut values = Vec::with_capacity(rest.len());
                for o in rest {
                    values.push(self.truth(o, env)?);
                }
                OracleValue::Bool(match kind {
                    BoolKind::And => values.iter().all(|&b| b),
                    BoolKind::Or => values.iter().any(|&b| b),
                    BoolKind::Not => !values[0],
                })
            }
            Expression::Compare { kind, lhs, rhs } => {
                let (a, b) = (self.number(lhs, env)?, self.number(rhs, env)?);
                OracleValue::Bool(match kind {
                    CompareKind::Eq => a == b,
                    CompareKind::Gt => a > b,
                    CompareKind::Lt => a < b,
                })
            }
            Expression::Quantified {
                kind,
                sort,
                var,
                body,
            } => match kind {
                QuantKind::Exists => {
                    OracleValue::Bool(!self.satisfying(var, body, env)?.is_empty())
                }
                QuantKind::Forall => {
                    OracleValue::Bool(self.satisfying(var, body, env)?.len() == self.scene.len())
                }
                QuantKind::Count => {
                    OracleValue::Count(self.satisfying(var, body, env)?.len() as u32)
                }
                QuantKind::Iota | QuantKind::Point => {
                    OracleValue::Entity(self.unique(var, body, env)?)
                }
                QuantKind::View => {
                    let i = self.unique(var, body, env)?;
                    self.anchor = Some(i);
                    OracleValue::Entity(i)
                }
                QuantKind::Describe => {
                    let Sort::Category(cat) = sort else {
                        return Err(DatagenError::Oracle("describe without a category".into()));
                    };
                    let attr = Attribute::from_category(cat)
                        .ok_or_else(|| DatagenError::Oracle(format!("unknown category {cat}")))?;
                    let Expression::Concept { args, .. } = body.as_ref() else {
                        return Err(DatagenError::Oracle(
                            "describe body must be a concept".into(),
                        ));
                    };
                    let target = args
                        .iter()
                        .find(|a| !matches!(a, Arg::Expr(Expression::Var(v)) if v == var))
                        .ok_or_else(|| DatagenError::Oracle("describe without a target".into()))?;
                    let i = self.entity_arg(target, env)?;
                    OracleValue::Word(self.scene.entities[i].get(attr).to_string())
                }
                QuantKind::Do => {
                    return Err(DatagenError::Oracle("actions have no scene answer".into()))
                }
            },
            Expression::Concept { name, args } => {
                let mut ids = Vec::with_capacity(args.len());
                for a in args {
                    ids.push(self.entity_arg(a, env)?);
                }
                OracleValue::Bool(self.concept(name, &ids)?)
            }
        })
    }

    fn concept(&self, name: &str, ids: &[usize]) -> Result<bool, DatagenError> {
        let unknown = || DatagenError::Oracle(format!("no ground truth for {name}/{}", ids.len()));
        match ids {
            [i] if self.vocab.attribute_of(name).is_some() => Ok(self.scene.entities[*i].has(name)),
            [i, j] => {
                if let Some(b) = relation_holds(self.scene, name, *i, *j) {
                    return Ok(b);
                }
                let k = self.anchor.ok_or_else(unknown)?;
                view_relation_holds(self.scene, name, *i, *j, k).ok_or_else(unknown)
            }
            _ => Err(unknown()),
        }
    }
}
