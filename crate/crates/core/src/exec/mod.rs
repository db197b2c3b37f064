//! Soft execution of programs over a [`GroundingContext`].
//!
//! Truth values stay in logit space throughout: `and`/`or`/`not` are
//! elementwise min/max/negation, `exists`/`forall` are max/min reductions
//! over the bound variable's axis, `iota` is a softmax over entities and
//! `count` sums sigmoids. A sigmoid is applied only where a probability is
//! read out (counts, comparisons, final answers).
//!
//! Every intermediate value lives on a [`Tape`], so a loss on the result can
//! be differentiated back to the concept parameters.

mod context;
mod source;

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::GroundingContext;
pub use source::{Bindings, ConceptCall, ConceptSource, ParamId, TableSource};

use crate::lang::{pretty_print, Arg, BoolKind, CompareKind, Expression, QuantKind, Sort};
use crate::tensor::{sigmoid, NodeId, Reduction, Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("concept `{name}` with {arity} object argument(s) is not registered")]
    UnregisteredConcept { name: String, arity: usize },
    #[error("sort mismatch: {0}")]
    SortMismatch(String),
    #[error("variable `{0}` is not bound here")]
    VarNotBound(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("concept `{0}` depends on the viewpoint but the context has no ternary features")]
    NoTernaryFeatures(String),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("unsupported program structure: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Slopes and margin of the soft comparison operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonParams {
    /// Slope of `eq`.
    pub alpha: f64,
    /// Tolerance margin shared by all comparisons.
    pub gamma: f64,
    /// Slope of `greater_than` / `less_than`.
    pub tau: f64,
}

impl Default for ComparisonParams {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            gamma: 0.25,
            tau: 8.0,
        }
    }
}

impl ComparisonParams {
    pub fn new(alpha: f64, gamma: f64, tau: f64) -> Result<Self, ExecError> {
        if !(alpha > 0.0 && tau > 0.0 && gamma >= 0.0) {
            return Err(ExecError::TypeMismatch(format!(
                "comparison parameters need alpha > 0, tau > 0, gamma >= 0 (got {alpha}, {tau}, {gamma})"
            )));
        }
        Ok(Self { alpha, gamma, tau })
    }

    /// Pre-sigmoid score of `kind(s1, s2)`.
    pub fn score(&self, kind: CompareKind, s1: f64, s2: f64) -> f64 {
        match kind {
            CompareKind::Eq => self.alpha * (self.gamma - (s1 - s2).abs()),
            CompareKind::Gt => self.tau * (s1 - s2 - self.gamma),
            CompareKind::Lt => self.tau * (s2 - s1 - self.gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarKind {
    Logit,
    Count,
    Number,
}

/// Grounded argument of an action.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionArg {
    Entity { dist: NodeId },
    Text(String),
}

/// Result of executing an expression; tensors live on the executor's tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Truth logits with one axis per free variable, in `vars` order.
    Logits {
        node: NodeId,
        vars: Vec<String>,
    },
    Scalar {
        node: NodeId,
        kind: ScalarKind,
    },
    /// Distribution over entities plus the logits it was normalized from.
    Entity {
        probs: NodeId,
        logits: NodeId,
    },
    Text {
        category: String,
        members: Vec<String>,
        probs: NodeId,
        logits: NodeId,
    },
    Action {
        name: String,
        args: Vec<ActionArg>,
        score: NodeId,
    },
}

/// Concrete, tape-free reading of a [`Value`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Readout {
    Boolean {
        logit: f64,
        probability: f64,
    },
    Count {
        expected: f64,
    },
    Number {
        value: f64,
    },
    Logits {
        vars: Vec<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    Entity {
        index: usize,
        probabilities: Vec<f64>,
    },
    Word {
        category: String,
        word: String,
        probabilities: Vec<(String, f64)>,
    },
    Action {
        name: String,
        args: Vec<ReadoutArg>,
        confidence: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReadoutArg {
    Entity {
        index: usize,
        probabilities: Vec<f64>,
    },
    Text {
        value: String,
    },
}

impl Readout {
    /// One-line human summary.
    pub fn summary(&self) -> String {
        match self {
            Readout::Boolean { probability, .. } => {
                format!("{} (p={probability:.6})", *probability > 0.5)
            }
            Readout::Count { expected } => format!("{} (expected {expected:.6})", expected.round()),
            Readout::Number { value } => format!("{value}"),
            Readout::Logits { vars, shape, .. } => format!("logits over {vars:?} {shape:?}"),
            Readout::Entity {
                index,
                probabilities,
            } => {
                format!("entity {index} (p={:.6})", probabilities[*index])
            }
            Readout::Word {
                word,
                probabilities,
                ..
            } => {
                let p = probabilities
                    .iter()
                    .find(|(w, _)| w == word)
                    .map_or(0.0, |(_, p)| *p);
                format!("{word} (p={p:.6})")
            }
            Readout::Action {
                name,
                args,
                confidence,
            } => {
                let args: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        ReadoutArg::Entity { index, .. } => format!("entity {index}"),
                        ReadoutArg::Text { value } => format!("{value:?}"),
                    })
                    .collect();
                format!("{name}({}) (confidence {confidence:.6})", args.join(", "))
            }
        }
    }
}

/// Executes one program against one context, recording onto its own tape.
pub struct Executor<'a> {
    ctx: &'a GroundingContext,
    source: &'a dyn ConceptSource,
    params: ComparisonParams,
    tape: Tape,
    bindings: Bindings,
    anchor: Option<NodeId>,
    uniform: Option<NodeId>,
    memo: HashMap<(String, Vec<String>, usize, Option<NodeId>), NodeId>,
    trace: Option<Vec<String>>,
    depth: usize,
}

impl<'a> Executor<'a> {
    pub fn new(ctx: &'a GroundingContext, source: &'a dyn ConceptSource) -> Self {
        Self {
            ctx,
            source,
            params: ComparisonParams::default(),
            tape: Tape::new(),
            bindings: Bindings::default(),
            anchor: None,
            uniform: None,
            memo: HashMap::new(),
            trace: None,
            depth: 0,
        }
    }

    pub fn with_params(mut self, params: ComparisonParams) -> Self {
        self.params = params;
        self
    }

    /// Records one line per evaluated node; see [`Executor::trace`].
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Current viewpoint distribution, if `view` has run.
    pub fn anchor(&self) -> Option<NodeId> {
        self.anchor
    }

    pub fn execute(&mut self, e: &Expression) -> Result<Value, ExecError> {
        let value = self.eval(e)?;
        Ok(value)
    }

    fn n(&self) -> usize {
        self.ctx.entities()
    }

    fn eval(&mut self, e: &Expression) -> Result<Value, ExecError> {
        self.depth += 1;
        let result = self.eval_inner(e);
        self.depth -= 1;
        if let (Some(_), Ok(v)) = (&self.trace, &result) {
            let line = format!(
                "{}{} => {}",
                "  ".repeat(self.depth),
                node_label(e),
                self.describe_value(v)
            );
            self.trace.as_mut().unwrap().push(line);
        }
        result
    }

    fn eval_inner(&mut self, e: &Expression) -> Result<Value, ExecError> {
        match e {
            Expression::Var(v) => Err(ExecError::TypeMismatch(format!(
                "variable `{v}` used as a value outside a concept argument"
            ))),
            Expression::Number(n) => {
                let node = self.tape.scalar(*n);
                Ok(Value::Scalar {
                    node,
                    kind: ScalarKind::Number,
                })
            }
            Expression::Concept { name, args } => self.exec_concept(name, args),
            Expression::Bool { kind, operands } => self.exec_bool(*kind, operands),
            Expression::Compare { kind, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                self.exec_compare(*kind, &a, &b)
            }
            Expression::Quantified {
                kind,
                sort,
                var,
                body,
            } => match kind {
                QuantKind::Exists | QuantKind::Forall => {
                    expect_object(sort, kind)?;
                    let v = self.eval(body)?;
                    self.exec_quantify(*kind, var, v)
                }
                QuantKind::Iota | QuantKind::Point => {
                    expect_object(sort, kind)?;
                    let v = self.eval(body)?;
                    self.exec_iota(var, v)
                }
                QuantKind::Count => {
                    expect_object(sort, kind)?;
                    let v = self.eval(body)?;
                    self.exec_count(var, v)
                }
                QuantKind::View => {
                    expect_object(sort, kind)?;
                    let v = self.eval(body)?;
                    let target = self.exec_iota(var, v)?;
                    self.exec_view(&target)?;
                    Ok(target)
                }
                QuantKind::Describe => {
                    let Sort::Category(category) = sort else {
                        return Err(ExecError::SortMismatch(format!(
                            "describe ranges over a category, not {}",
                            sort.name()
                        )));
                    };
                    self.exec_describe(category, var, body)
                }
                QuantKind::Do => {
                    if *sort != Sort::Action {
                        return Err(ExecError::SortMismatch(
                            "do binds an Action variable".into(),
                        ));
                    }
                    self.exec_do(var, body)
                }
            },
        }
    }

    /// Logit tensor of a boolean value plus its variable labels.
    fn logits_of(&self, v: &Value) -> Result<(NodeId, Vec<String>), ExecError> {
        match v {
            Value::Logits { node, vars } => Ok((*node, vars.clone())),
            Value::Scalar {
                node,
                kind: ScalarKind::Logit,
            } => Ok((*node, Vec::new())),
            other => Err(ExecError::TypeMismatch(format!(
                "expected a truth value, got {}",
                value_kind(other)
            ))),
        }
    }

    fn make_logits(node: NodeId, vars: Vec<String>) -> Value {
        if vars.is_empty() {
            Value::Scalar {
                node,
                kind: ScalarKind::Logit,
            }
        } else {
            Value::Logits { node, vars }
        }
    }

    /// Broadcasts `node` (axes labeled `vars`) to the axis layout `target`,
    /// inserting unit axes for missing variables.
    fn align(
        &mut self,
        node: NodeId,
        vars: &[String],
        target: &[String],
    ) -> Result<NodeId, ExecError> {
        let perm: Vec<usize> = target
            .iter()
            .filter_map(|t| vars.iter().position(|v| v == t))
            .collect();
        let permuted = self.tape.permute(node, perm)?;
        let shape: Vec<usize> = target
            .iter()
            .map(|t| if vars.contains(t) { self.n() } else { 1 })
            .collect();
        Ok(self.tape.reshape(permuted, shape)?)
    }

    pub fn exec_bool(
        &mut self,
        kind: BoolKind,
        operands: &[Expression],
    ) -> Result<Value, ExecError> {
        let mut values = Vec::with_capacity(operands.len());
        let mut viewed = false;
        for o in operands {
            let is_view = matches!(
                o,
                Expression::Quantified {
                    kind: QuantKind::View,
                    ..
                }
            );
            if is_view && kind == BoolKind::And {
                self.eval(o)?;
                viewed = true;
            } else {
                values.push(self.eval(o)?);
            }
        }
        if viewed && values.len() == 1 {
            return Ok(values.pop().unwrap());
        }
        if kind == BoolKind::Not {
            let [v] = values.as_slice() else {
                return Err(ExecError::TypeMismatch("not takes one operand".into()));
            };
            let (node, vars) = self.logits_of(v)?;
            let neg = self.tape.neg(node)?;
            return Ok(Self::make_logits(neg, vars));
        }
        let mut iter = values.iter();
        let first = iter.next().ok_or_else(|| {
            ExecError::TypeMismatch(format!("`{}` needs operands", kind.keyword()))
        })?;
        let (mut acc, mut acc_vars) = self.logits_of(first)?;
        for v in iter {
            let (node, vars) = self.logits_of(v)?;
            let mut union = acc_vars.clone();
            union.extend(vars.iter().filter(|v| !acc_vars.contains(v)).cloned());
            let a = self.align(acc, &acc_vars, &union)?;
            let b = self.align(node, &vars, &union)?;
            acc = match kind {
                BoolKind::And => self.tape.min(a, b)?,
                _ => self.tape.max(a, b)?,
            };
            // full extent on every axis
            let full = vec![self.n(); union.len()];
            if self.tape.shape(acc) != full.as_slice() {
                acc = self.tape.reshape(acc, full)?;
            }
            acc_vars = union;
        }
        Ok(Self::make_logits(acc, acc_vars))
    }

    /// `exists` (max) or `forall` (min) over `var`'s axis.
    pub fn exec_quantify(
        &mut self,
        kind: QuantKind,
        var: &str,
        body: Value,
    ) -> Result<Value, ExecError> {
        let (node, mut vars) = self.logits_of(&body)?;
        let Some(axis) = vars.iter().position(|v| v == var) else {
            // vacuous quantification over a non-empty domain
            return Ok(Self::make_logits(node, vars));
        };
        let op = match kind {
            QuantKind::Forall => Reduction::Min,
            _ => Reduction::Max,
        };
        let reduced = self.tape.reduce(op, node, axis)?;
        vars.remove(axis);
        Ok(Self::make_logits(reduced, vars))
    }

    /// Logits over `var` alone, broadcasting a constant body across entities.
    fn vector_in(&mut self, var: &str, body: &Value, what: &str) -> Result<NodeId, ExecError> {
        let (node, vars) = self.logits_of(body)?;
        if vars.iter().any(|v| v != var) {
            return Err(ExecError::Unsupported(format!(
                "{what} body mentions variables other than its own: {vars:?}"
            )));
        }
        if vars.is_empty() {
            let ones = self.tape.leaf(Tensor::full(&[self.n()], 1.0));
            return Ok(self.tape.mul(ones, node)?);
        }
        Ok(node)
    }

    pub fn exec_iota(&mut self, var: &str, body: Value) -> Result<Value, ExecError> {
        let logits = self.vector_in(var, &body, "iota")?;
        let probs = self.tape.softmax(logits, 0)?;
        Ok(Value::Entity { probs, logits })
    }

    pub fn exec_count(&mut self, var: &str, body: Value) -> Result<Value, ExecError> {
        let logits = self.vector_in(var, &body, "count")?;
        let p = self.tape.sigmoid(logits)?;
        let node = self.tape.reduce(Reduction::Sum, p, 0)?;
        Ok(Value::Scalar {
            node,
            kind: ScalarKind::Count,
        })
    }

    pub fn exec_compare(
        &mut self,
        kind: CompareKind,
        a: &Value,
        b: &Value,
    ) -> Result<Value, ExecError> {
        let scalar = |v: &Value| match v {
            Value::Scalar {
                node,
                kind: ScalarKind::Count | ScalarKind::Number,
            } => Ok(*node),
            other => Err(ExecError::TypeMismatch(format!(
                "`{}` compares counts or numbers, got {}",
                kind.keyword(),
                value_kind(other)
            ))),
        };
        let (s1, s2) = (scalar(a)?, scalar(b)?);
        let p = self.params;
        let node = match kind {
            CompareKind::Eq => {
                let d = self.tape.sub(s1, s2)?;
                let d = self.tape.abs(d)?;
                let m = self.tape.scale(d, -1.0)?;
                let m = self.tape.shift(m, p.gamma)?;
                self.tape.scale(m, p.alpha)?
            }
            CompareKind::Gt | CompareKind::Lt => {
                let d = if kind == CompareKind::Gt {
                    self.tape.sub(s1, s2)?
                } else {
                    self.tape.sub(s2, s1)?
                };
                let m = self.tape.shift(d, -p.gamma)?;
                self.tape.scale(m, p.tau)?
            }
        };
        Ok(Value::Scalar {
            node,
            kind: ScalarKind::Logit,
        })
    }

    /// The viewpoint distribution: the anchor set by `view`, or uniform.
    fn current_anchor(&mut self) -> NodeId {
        if let Some(a) = self.anchor {
            return a;
        }
        if let Some(u) = self.uniform {
            return u;
        }
        let n = self.n();
        let u = self.tape.leaf(Tensor::full(&[n], 1.0 / n as f64));
        self.uniform = Some(u);
        u
    }

    pub fn exec_view(&mut self, target: &Value) -> Result<(), ExecError> {
        match target {
            Value::Entity { probs, .. } => {
                self.anchor = Some(*probs);
                Ok(())
            }
            other => Err(ExecError::TypeMismatch(format!(
                "view needs an entity, got {}",
                value_kind(other)
            ))),
        }
    }

    /// Raw concept logits, memoized per execution.
    fn concept_tensor(
        &mut self,
        name: &str,
        entity_arity: usize,
        text: &[String],
    ) -> Result<NodeId, ExecError> {
        let anchor_key = if self.source.viewpoint_dependent(name) {
            Some(self.current_anchor())
        } else {
            None
        };
        let key = (name.to_string(), text.to_vec(), entity_arity, anchor_key);
        if let Some(&node) = self.memo.get(&key) {
            return Ok(node);
        }
        let anchor = self.current_anchor();
        let call = ConceptCall {
            name,
            entity_arity,
            text,
            anchor,
        };
        let node =
            self.source
                .concept_logits(call, self.ctx, &mut self.tape, &mut self.bindings)?;
        let expected = vec![self.n(); entity_arity];
        if self.tape.shape(node) != expected.as_slice() {
            return Err(ExecError::ShapeMismatch(format!(
                "concept `{name}` produced shape {:?}, expected {expected:?}",
                self.tape.shape(node)
            )));
        }
        self.memo.insert(key, node);
        Ok(node)
    }

    pub fn exec_concept(&mut self, name: &str, args: &[Arg]) -> Result<Value, ExecError> {
        if args.is_empty() {
            return Err(ExecError::TypeMismatch(format!(
                "bare concept `{name}` used as a value"
            )));
        }
        enum Slot {
            Var(String),
            Dist(NodeId),
        }
        let mut slots = Vec::new();
        let mut text = Vec::new();
        for a in args {
            match a {
                Arg::Text(t) => text.push(t.clone()),
                Arg::Expr(Expression::Var(v)) => {
                    if slots.iter().any(|s| matches!(s, Slot::Var(w) if w == v)) {
                        return Err(ExecError::Unsupported(format!(
                            "variable `{v}` passed twice to `{name}`"
                        )));
                    }
                    slots.push(Slot::Var(v.clone()));
                }
                Arg::Expr(inner) => match self.eval(inner)? {
                    Value::Entity { probs, .. } => slots.push(Slot::Dist(probs)),
                    other => {
                        return Err(ExecError::SortMismatch(format!(
                            "argument of `{name}` must be a variable or an entity, got {}",
                            value_kind(&other)
                        )))
                    }
                },
            }
        }
        let mut node = self.concept_tensor(name, slots.len(), &text)?;
        // contract entity arguments from the last axis backwards so earlier
        // axis indices stay valid
        for (axis, slot) in slots.iter().enumerate().rev() {
            if let Slot::Dist(d) = slot {
                node = contract(&mut self.tape, node, axis, *d)?;
            }
        }
        let vars = slots
            .into_iter()
            .filter_map(|s| match s {
                Slot::Var(v) => Some(v),
                Slot::Dist(_) => None,
            })
            .collect();
        Ok(Self::make_logits(node, vars))
    }

    pub fn exec_describe(
        &mut self,
        category: &str,
        var: &str,
        body: &Expression,
    ) -> Result<Value, ExecError> {
        let members = self
            .ctx
            .categories()
            .members(category)
            .ok_or_else(|| ExecError::UnknownCategory(category.to_string()))?
            .to_vec();
        let Expression::Concept { args, .. } = body else {
            return Err(ExecError::TypeMismatch(
                "describe body must apply a concept to its variable".into(),
            ));
        };
        let mut target = None;
        for a in args {
            match a {
                Arg::Expr(Expression::Var(v)) if v == var => {}
                Arg::Expr(inner) => match self.eval(inner)? {
                    Value::Entity { probs, .. } if target.is_none() => target = Some(probs),
                    other => {
                        return Err(ExecError::TypeMismatch(format!(
                            "describe needs exactly one entity argument, got {}",
                            value_kind(&other)
                        )))
                    }
                },
                Arg::Text(_) => {
                    return Err(ExecError::TypeMismatch(
                        "describe does not take text arguments".into(),
                    ))
                }
            }
        }
        let dist = target
            .ok_or_else(|| ExecError::TypeMismatch("describe needs an entity argument".into()))?;
        let mut scores = Vec::with_capacity(members.len());
        for m in &members {
            let logits = self.concept_tensor(m, 1, &[])?;
            scores.push(contract(&mut self.tape, logits, 0, dist)?);
        }
        if scores.is_empty() {
            return Err(ExecError::UnknownCategory(format!(
                "{category} has no members"
            )));
        }
        let logits = self.tape.stack(&scores)?;
        let probs = self.tape.softmax(logits, 0)?;
        Ok(Value::Text {
            category: category.to_string(),
            members,
            probs,
            logits,
        })
    }

    pub fn exec_do(&mut self, var: &str, body: &Expression) -> Result<Value, ExecError> {
        let Expression::Concept { name, args } = body else {
            return Err(ExecError::SortMismatch(
                "do body must be an action concept".into(),
            ));
        };
        let mut grounded = Vec::new();
        let mut dists = Vec::new();
        let mut text = Vec::new();
        let mut has_slot = false;
        for a in args {
            match a {
                Arg::Expr(Expression::Var(v)) if v == var => has_slot = true,
                Arg::Expr(Expression::Var(v)) => return Err(ExecError::VarNotBound(v.clone())),
                Arg::Expr(inner) => match self.eval(inner)? {
                    Value::Entity { probs, .. } => {
                        dists.push(probs);
                        grounded.push(ActionArg::Entity { dist: probs });
                    }
                    other => {
                        return Err(ExecError::SortMismatch(format!(
                            "action argument must be an entity, got {}",
                            value_kind(&other)
                        )))
                    }
                },
                Arg::Text(t) => {
                    text.push(t.clone());
                    grounded.push(ActionArg::Text(t.clone()));
                }
            }
        }
        if !has_slot {
            return Err(ExecError::SortMismatch(format!(
                "`{name}` is not applied to the action variable"
            )));
        }
        let score = if dists.is_empty() {
            self.tape.scalar(0.0)
        } else {
            let mut node = self.concept_tensor(name, dists.len(), &text)?;
            for (axis, d) in dists.iter().enumerate().rev() {
                node = contract(&mut self.tape, node, axis, *d)?;
            }
            node
        };
        Ok(Value::Action {
            name: name.clone(),
            args: grounded,
            score,
        })
    }

    /// Concrete numbers for a value.
    pub fn readout(&self, v: &Value) -> Readout {
        let data = |id: NodeId| self.tape.value(id).data().to_vec();
        let item = |id: NodeId| self.tape.value(id).data()[0];
        match v {
            Value::Logits { node, vars } => Readout::Logits {
                vars: vars.clone(),
                shape: self.tape.shape(*node).to_vec(),
                values: data(*node),
            },
            Value::Scalar { node, kind } => match kind {
                ScalarKind::Logit => Readout::Boolean {
                    logit: item(*node),
                    probability: sigmoid(item(*node)),
                },
                ScalarKind::Count => Readout::Count {
                    expected: item(*node),
                },
                ScalarKind::Number => Readout::Number { value: item(*node) },
            },
            Value::Entity { probs, .. } => Readout::Entity {
                index: self.tape.value(*probs).argmax(),
                probabilities: data(*probs),
            },
            Value::Text {
                category,
                members,
                probs,
                ..
            } => {
                let p = data(*probs);
                let best = self.tape.value(*probs).argmax();
                Readout::Word {
                    category: category.clone(),
                    word: members[best].clone(),
                    probabilities: members.iter().cloned().zip(p).collect(),
                }
            }
            Value::Action { name, args, score } => Readout::Action {
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| match a {
                        ActionArg::Entity { dist } => ReadoutArg::Entity {
                            index: self.tape.value(*dist).argmax(),
                            probabilities: data(*dist),
                        },
                        ActionArg::Text(t) => ReadoutArg::Text { value: t.clone() },
                    })
                    .collect(),
                confidence: sigmoid(item(*score)),
            },
        }
    }

    fn describe_value(&self, v: &Value) -> String {
        let fmt_vals = |id: NodeId| {
            let t = self.tape.value(id);
            let mut s = String::new();
            for (i, x) in t.data().iter().take(8).enumerate() {
                if i > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "{x:.4}");
            }
            if t.numel() > 8 {
                s.push_str(", ...");
            }
            format!("{:?} [{s}]", t.shape())
        };
        match v {
            Value::Logits { node, vars } => format!("logits{vars:?} {}", fmt_vals(*node)),
            Value::Scalar { node, kind } => format!("{kind:?} {}", fmt_vals(*node)),
            Value::Entity { probs, .. } => format!("entity {}", fmt_vals(*probs)),
            Value::Text { members, probs, .. } => format!("text {members:?} {}", fmt_vals(*probs)),
            Value::Action { name, score, .. } => {
                format!("action {name} score {}", fmt_vals(*score))
            }
        }
    }
}

fn expect_object(sort: &Sort, kind: &QuantKind) -> Result<(), ExecError> {
    if *sort == Sort::Object {
        Ok(())
    } else {
        Err(ExecError::SortMismatch(format!(
            "{} ranges over Object, not {}",
            kind.keyword(),
            sort.name()
        )))
    }
}

fn value_kind(v: &Value) -> &'static str {
    match v {
        Value::Logits { .. } => "open logits",
        Value::Scalar {
            kind: ScalarKind::Logit,
            ..
        } => "truth value",
        Value::Scalar {
            kind: ScalarKind::Count,
            ..
        } => "count",
        Value::Scalar {
            kind: ScalarKind::Number,
            ..
        } => "number",
        Value::Entity { .. } => "entity",
        Value::Text { .. } => "text",
        Value::Action { .. } => "action",
    }
}

fn node_label(e: &Expression) -> String {
    match e {
        Expression::Var(v) => v.clone(),
        Expression::Number(n) => format!("{n}"),
        Expression::Quantified { kind, var, .. } => format!("{}({var})", kind.keyword()),
        Expression::Bool { kind, .. } => kind.keyword().to_string(),
        Expression::Compare { kind, .. } => kind.keyword().to_string(),
        Expression::Concept { name, .. } => {
            let text = pretty_print(e);
            if text.len() > 48 {
                name.clone()
            } else {
                text
            }
        }
    }
}

/// Expectation of `tensor` over `axis` under distribution `dist`
/// (probability-weighted sum of the slices).
pub fn contract(
    tape: &mut Tape,
    tensor: NodeId,
    axis: usize,
    dist: NodeId,
) -> Result<NodeId, ExecError> {
    let rank = tape.shape(tensor).len();
    if axis >= rank {
        return Err(TensorError::BadAxis { axis, rank }.into());
    }
    let n = tape.shape(dist)[0];
    let mut shape = vec![1; rank];
    shape[axis] = n;
    let weights = tape.reshape(dist, shape)?;
    let weighted = tape.mul(tensor, weights)?;
    Ok(tape.reduce(Reduction::Sum, weighted, axis)?)
}

/// Convenience: execute `e` and read the result out.
pub fn execute(
    e: &Expression,
    ctx: &GroundingContext,
    source: &dyn ConceptSource,
) -> Result<Readout, ExecError> {
    let mut exec = Executor::new(ctx, source);
    let v = exec.execute(e)?;
    Ok(exec.readout(&v))
}
