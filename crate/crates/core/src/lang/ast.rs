use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Domain a bound variable ranges over.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sort {
    Object,
    Action,
    /// A text category such as `Color`; only `describe` binds these.
    Category(String),
}

impl Sort {
    pub fn from_name(name: &str) -> Self {
        match name {
            "Object" => Sort::Object,
            "Action" => Sort::Action,
            other => Sort::Category(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Sort::Object => "Object",
            Sort::Action => "Action",
            Sort::Category(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantKind {
    Exists,
    Forall,
    Iota,
    Count,
    Point,
    Describe,
    Do,
    View,
}

impl QuantKind {
    pub const ALL: [QuantKind; 8] = [
        QuantKind::Exists,
        QuantKind::Forall,
        QuantKind::Iota,
        QuantKind::Count,
        QuantKind::Point,
        QuantKind::Describe,
        QuantKind::Do,
        QuantKind::View,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            QuantKind::Exists => "exists",
            QuantKind::Forall => "forall",
            QuantKind::Iota => "iota",
            QuantKind::Count => "count",
            QuantKind::Point => "point",
            QuantKind::Describe => "describe",
            QuantKind::Do => "do",
            QuantKind::View => "view",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        QuantKind::ALL.into_iter().find(|k| k.keyword() == word)
    }

    /// Quantifiers whose result is an entity distribution.
    pub fn selects_entity(self) -> bool {
        matches!(self, QuantKind::Iota | QuantKind::Point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoolKind {
    And,
    Or,
    Not,
}

impl BoolKind {
    pub fn keyword(self) -> &'static str {
        match self {
            BoolKind::And => "and",
            BoolKind::Or => "or",
            BoolKind::Not => "not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareKind {
    Eq,
    Lt,
    Gt,
}

impl CompareKind {
    pub fn keyword(self) -> &'static str {
        match self {
            CompareKind::Eq => "eq",
            CompareKind::Lt => "less_than",
            CompareKind::Gt => "greater_than",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "eq" | "equal" => Some(CompareKind::Eq),
            "less_than" | "lt" => Some(CompareKind::Lt),
            "greater_than" | "gt" => Some(CompareKind::Gt),
            _ => None,
        }
    }
}

/// Argument of a concept application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arg {
    Expr(Expression),
    /// Modifier text such as `"far"`.
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expression {
    Var(String),
    Quantified {
        kind: QuantKind,
        sort: Sort,
        var: String,
        body: Box<Expression>,
    },
    Bool {
        kind: BoolKind,
        operands: Vec<Expression>,
    },
    Compare {
        kind: CompareKind,
        lhs: Box<Expression>,
        rhs: Box<Expression>,
    },
    /// `name(args)`. Zero arguments means a bare concept name, which
    /// parses but never validates.
    Concept {
        name: String,
        args: Vec<Arg>,
    },
    Number(f64),
}

impl Expression {
    pub fn var(name: &str) -> Self {
        Expression::Var(name.to_string())
    }

    pub fn quant(kind: QuantKind, sort: Sort, var: &str, body: Expression) -> Self {
        Expression::Quantified {
            kind,
            sort,
            var: var.to_string(),
            body: Box::new(body),
        }
    }

    pub fn exists(var: &str, body: Expression) -> Self {
        Self::quant(QuantKind::Exists, Sort::Object, var, body)
    }

    pub fn forall(var: &str, body: Expression) -> Self {
        Self::quant(QuantKind::Forall, Sort::Object, var, body)
    }

    pub fn iota(var: &str, body: Expression) -> Self {
        Self::quant(QuantKind::Iota, Sort::Object, var, body)
    }

    pub fn count(var: &str, body: Expression) -> Self {
        Self::quant(QuantKind::Count, Sort::Object, var, body)
    }

    pub fn and(operands: Vec<Expression>) -> Self {
        Expression::Bool {
            kind: BoolKind::And,
            operands,
        }
    }

    pub fn or(operands: Vec<Expression>) -> Self {
        Expression::Bool {
            kind: BoolKind::Or,
            operands,
        }
    }

    pub fn not(operand: Expression) -> Self {
        Expression::Bool {
            kind: BoolKind::Not,
            operands: vec![operand],
        }
    }

    pub fn compare(kind: CompareKind, lhs: Expression, rhs: Expression) -> Self {
        Expression::Compare {
            kind,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn concept(name: &str, args: Vec<Expression>) -> Self {
        Expression::Concept {
            name: name.to_string(),
            args: args.into_iter().map(Arg::Expr).collect(),
        }
    }

    /// Shorthand for a concept applied to variables, e.g. `apply("left", &["x", "y"])`.
    pub fn apply(name: &str, vars: &[&str]) -> Self {
        Self::concept(name, vars.iter().map(|v| Expression::var(v)).collect())
    }

    /// Visits every node in preorder.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expression)) {
        f(self);
        match self {
            Expression::Var(_) | Expression::Number(_) => {}
            Expression::Quantified { body, .. } => body.walk(f),
            Expression::Bool { operands, .. } => operands.iter().for_each(|o| o.walk(f)),
            Expression::Compare { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expression::Concept { args, .. } => {
                for a in args {
                    if let Arg::Expr(e) = a {
                        e.walk(f);
                    }
                }
            }
        }
    }

    /// Number of AST nodes (text arguments excluded).
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Variables that occur free in this expression.
    pub fn free_vars(&self) -> Vec<String> {
        fn go(e: &Expression, bound: &mut Vec<String>, out: &mut Vec<String>) {
            match e {
                Expression::Var(v) => {
                    if !bound.contains(v) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                Expression::Number(_) => {}
                Expression::Quantified { var, body, .. } => {
                    bound.push(var.clone());
                    go(body, bound, out);
                    bound.pop();
                }
                Expression::Bool { operands, .. } => {
                    operands.iter().for_each(|o| go(o, bound, out))
                }
                Expression::Compare { lhs, rhs, .. } => {
                    go(lhs, bound, out);
                    go(rhs, bound, out);
                }
                Expression::Concept { args, .. } => {
                    for a in args {
                        if let Arg::Expr(e) = a {
                            go(e, bound, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::pretty_print(self))
    }
}

/// Category vocabulary: category name to its ordered member concepts,
/// e.g. `Color -> [red, blue, green]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories(BTreeMap<String, Vec<String>>);

impl Categories {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: &str, members: &[&str]) {
        self.0.insert(
            category.to_string(),
            members.iter().map(|m| m.to_string()).collect(),
        );
    }

    pub fn with(mut self, category: &str, members: &[&str]) -> Self {
        self.insert(category, members);
        self
    }

    pub fn members(&self, category: &str) -> Option<&[String]> {
        self.0.get(category).map(Vec::as_slice)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.0.contains_key(category)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.0.iter()
    }

    /// Category a member concept belongs to, if any.
    pub fn category_of(&self, member: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, ms)| ms.iter().any(|m| m == member))
            .map(|(c, _)| c.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, Vec<String>)> for Categories {
    fn from_iter<I: IntoIterator<Item = (String, Vec<String>)>>(iter: I) -> Self {
        Categories(iter.into_iter().collect())
    }
}
