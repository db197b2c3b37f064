//! Random well-formed programs over a concept vocabulary, used for
//! round-trip corpora, soft/hard agreement checks and benchmarks.
//!
//! Generated programs respect the executor's structural limits: bodies of
//! `iota`, `point` and `count` mention only their own variable, and a
//! concept never receives the same variable twice.

use rand::seq::SliceRandom;
use rand::Rng;

use super::ast::{Arg, Categories, CompareKind, Expression, QuantKind, Sort};
use super::canonicalize;

/// Concept names a generator may draw from.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub unary: Vec<String>,
    pub binary: Vec<String>,
    pub ternary: Vec<String>,
    /// Binary concepts that read the current viewpoint; only emitted after
    /// a `view`.
    pub viewpoint: Vec<String>,
    pub categories: Categories,
    /// Action concepts as `(name, object arguments, takes a text modifier)`.
    pub actions: Vec<(String, usize, bool)>,
    pub modifiers: Vec<String>,
}

/// Shape of the value a generated program computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramKind {
    Boolean,
    Count,
    Entity,
    Text,
    Action,
    ViewThenBoolean,
}

#[derive(Debug, Clone)]
pub struct ProgramGenerator {
    pub vocab: Vocabulary,
    pub max_depth: usize,
    /// Largest number literal used in comparisons.
    pub max_number: u32,
}

impl ProgramGenerator {
    pub fn new(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            max_depth: 3,
            max_number: 4,
        }
    }

    /// Kinds this vocabulary can support.
    pub fn kinds(&self) -> Vec<ProgramKind> {
        let mut kinds = vec![
            ProgramKind::Boolean,
            ProgramKind::Count,
            ProgramKind::Entity,
        ];
        if !self.vocab.categories.is_empty() {
            kinds.push(ProgramKind::Text);
        }
        if !self.vocab.actions.is_empty() {
            kinds.push(ProgramKind::Action);
        }
        if !self.vocab.viewpoint.is_empty() {
            kinds.push(ProgramKind::ViewThenBoolean);
        }
        kinds
    }

    pub fn generate<R: Rng>(&self, rng: &mut R) -> Expression {
        let kind = *self.kinds().choose(rng).expect("at least one kind");
        self.generate_kind(kind, rng)
    }

    pub fn generate_kind<R: Rng>(&self, kind: ProgramKind, rng: &mut R) -> Expression {
        let mut st = State {
            fresh: 0,
            view: false,
        };
        let d = self.max_depth;
        let e = match kind {
            ProgramKind::Boolean => self.closed_boolean(&mut st, d, rng),
            ProgramKind::Count => self.count(&mut st, d, rng),
            ProgramKind::Entity => self.entity(&mut st, d, QuantKind::Point, rng),
            ProgramKind::Text => self.describe(&mut st, d, rng),
            ProgramKind::Action => self.action(&mut st, d, rng),
            ProgramKind::ViewThenBoolean => {
                let view = self.entity(&mut st, d.min(2), QuantKind::View, rng);
                st.view = true;
                let rest = self.closed_boolean(&mut st, d, rng);
                Expression::and(vec![view, rest])
            }
        };
        canonicalize(&e)
    }

    fn fresh(st: &mut State) -> String {
        st.fresh += 1;
        format!("v{}", st.fresh)
    }

    /// A boolean with no free variables.
    fn closed_boolean<R: Rng>(&self, st: &mut State, depth: usize, rng: &mut R) -> Expression {
        if depth > 0 && rng.gen_bool(0.25) {
            return self.comparison(st, depth, rng);
        }
        let var = Self::fresh(st);
        let kind = if rng.gen_bool(0.6) {
            QuantKind::Exists
        } else {
            QuantKind::Forall
        };
        let body = self.anchored_boolean(st, &[var.clone()], depth.saturating_sub(1), rng);
        Expression::quant(kind, Sort::Object, &var, body)
    }

    /// A boolean that mentions the innermost variable of `scope`.
    fn anchored_boolean<R: Rng>(
        &self,
        st: &mut State,
        scope: &[String],
        depth: usize,
        rng: &mut R,
    ) -> Expression {
        let own = scope.last().expect("non-empty scope").clone();
        let atom = self.atom(st, scope, Some(&own), depth, rng);
        if depth == 0 || rng.gen_bool(0.3) {
            return atom;
        }
        let other = self.boolean(st, scope, depth - 1, rng);
        match rng.gen_range(0..3) {
            0 => Expression::and(vec![atom, other]),
            1 => Expression::or(vec![atom, other]),
            _ => Expression::and(vec![atom, Expression::not(other)]),
        }
    }

    fn boolean<R: Rng>(
        &self,
        st: &mut State,
        scope: &[String],
        depth: usize,
        rng: &mut R,
    ) -> Expression {
        if depth == 0 {
            return self.atom(st, scope, None, 0, rng);
        }
        match rng.gen_range(0..6) {
            0 => Expression::not(self.boolean(st, scope, depth - 1, rng)),
            1 | 2 => {
                let n = rng.gen_range(2..=3);
                let ops = (0..n)
                    .map(|_| self.boolean(st, scope, depth - 1, rng))
                    .collect();
                if rng.gen_bool(0.5) {
                    Expression::and(ops)
                } else {
                    Expression::or(ops)
                }
            }
            3 => {
                let var = Self::fresh(st);
                let mut inner = scope.to_vec();
                inner.push(var.clone());
                let kind = if rng.gen_bool(0.5) {
                    QuantKind::Exists
                } else {
                    QuantKind::Forall
                };
                let body = self.anchored_boolean(st, &inner, depth - 1, rng);
                Expression::quant(kind, Sort::Object, &var, body)
            }
            _ => self.atom(st, scope, None, depth - 1, rng),
        }
    }

    fn comparison<R: Rng>(&self, st: &mut State, depth: usize, rng: &mut R) -> Expression {
        let kind = *[CompareKind::Eq, CompareKind::Lt, CompareKind::Gt]
            .choose(rng)
            .unwrap();
        let lhs = self.count(st, depth - 1, rng);
        let rhs = if rng.gen_bool(0.5) {
            self.count(st, depth - 1, rng)
        } else {
            Expression::Number(f64::from(rng.gen_range(0..=self.max_number)))
        };
        if rng.gen_bool(0.5) {
            Expression::compare(kind, lhs, rhs)
        } else {
            Expression::compare(kind, rhs, lhs)
        }
    }

    fn count<R: Rng>(&self, st: &mut State, depth: usize, rng: &mut R) -> Expression {
        let var = Self::fresh(st);
        let body = self.anchored_boolean(st, &[var.clone()], depth.saturating_sub(1).min(1), rng);
        Expression::quant(QuantKind::Count, Sort::Object, &var, body)
    }

    fn entity<R: Rng>(
        &self,
        st: &mut State,
        depth: usize,
        kind: QuantKind,
        rng: &mut R,
    ) -> Expression {
        let var = Self::fresh(st);
        let body = self.anchored_boolean(st, &[var.clone()], depth.saturating_sub(1).min(1), rng);
        Expression::quant(kind, Sort::Object, &var, body)
    }

    fn describe<R: Rng>(&self, st: &mut State, depth: usize, rng: &mut R) -> Expression {
        let cats: Vec<&String> = self.vocab.categories.iter().map(|(c, _)| c).collect();
        let cat = (*cats.choose(rng).unwrap()).clone();
        let var = Self::fresh(st);
        let target = self.entity(st, depth.saturating_sub(1), QuantKind::Iota, rng);
        let body = Expression::Concept {
            name: cat.to_lowercase(),
            args: vec![Arg::Expr(Expression::Var(var.clone())), Arg::Expr(target)],
        };
        Expression::quant(QuantKind::Describe, Sort::Category(cat), &var, body)
    }

    fn action<R: Rng>(&self, st: &mut State, depth: usize, rng: &mut R) -> Expression {
        let (name, objects, text) = self.vocab.actions.choose(rng).unwrap().clone();
        let var = Self::fresh(st);
        let mut args = vec![Arg::Expr(Expression::Var(var.clone()))];
        for _ in 0..objects {
            args.push(Arg::Expr(self.entity(
                st,
                depth.saturating_sub(1),
                QuantKind::Iota,
                rng,
            )));
        }
        if text {
            if let Some(m) = self.vocab.modifiers.choose(rng) {
                args.push(Arg::Text(m.clone()));
            }
        }
        Expression::quant(
            QuantKind::Do,
            Sort::Action,
            &var,
            Expression::Concept { name, args },
        )
    }

    /// A concept application. `must` forces one argument to that variable.
    fn atom<R: Rng>(
        &self,
        st: &mut State,
        scope: &[String],
        must: Option<&String>,
        depth: usize,
        rng: &mut R,
    ) -> Expression {
        let mut choices: Vec<(usize, &String)> = self.vocab.unary.iter().map(|n| (1, n)).collect();
        choices.extend(self.vocab.binary.iter().map(|n| (2, n)));
        choices.extend(self.vocab.ternary.iter().map(|n| (3, n)));
        if st.view {
            choices.extend(self.vocab.viewpoint.iter().map(|n| (2, n)));
        }
        if scope.is_empty() {
            // No variable available: quantify one.
            let var = Self::fresh(st);
            let body = self.atom(st, &[var.clone()], None, depth, rng);
            return Expression::quant(QuantKind::Exists, Sort::Object, &var, body);
        }
        let &(arity, name) = choices.choose(rng).expect("non-empty vocabulary");
        let mut vars: Vec<&String> = scope.iter().collect();
        vars.shuffle(rng);
        if let Some(m) = must {
            vars.retain(|v| *v != m);
            vars.insert(0, m);
        }
        let mut args = Vec::with_capacity(arity);
        let mut used = 0;
        for slot in 0..arity {
            let use_var = used < vars.len() && (slot == 0 || rng.gen_bool(0.6));
            if use_var {
                args.push(Expression::Var(vars[used].clone()));
                used += 1;
            } else {
                args.push(self.entity(st, depth.min(1), QuantKind::Iota, rng));
            }
        }
        // keep the forced variable but not always in first position
        if must.is_some() && arity > 1 && rng.gen_bool(0.5) {
            args.rotate_left(1);
        }
        Expression::concept(name, args)
    }
}

struct State {
    fresh: usize,
    view: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse, pretty_print, validate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn vocab() -> Vocabulary {
        Vocabulary {
            unary: ["red", "blue", "cube", "sphere"].map(String::from).to_vec(),
            binary: ["left", "front"].map(String::from).to_vec(),
            ternary: vec!["between".into()],
            viewpoint: vec!["facing_left".into()],
            categories: Categories::new()
                .with("Color", &["red", "blue"])
                .with("Shape", &["cube", "sphere"]),
            actions: vec![("pick_up".into(), 1, false), ("put".into(), 2, true)],
            modifiers: vec!["far".into(), "near".into()],
        }
    }

    #[test]
    fn generated_programs_are_valid_and_round_trip() {
        let g = ProgramGenerator::new(vocab());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let e = g.generate(&mut rng);
            assert_eq!(
                validate(&e, &g.vocab.categories),
                Ok(()),
                "{}",
                pretty_print(&e)
            );
            assert!(e.free_vars().is_empty());
            assert_eq!(parse(&pretty_print(&e)).unwrap(), e);
        }
    }
}
