use thiserror::Error;

use super::ast::{Arg, BoolKind, Categories, Expression, QuantKind, Sort};
use super::pretty_print;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Bool,
    Count,
    Number,
    Entity,
    Text,
    Action,
    View,
    Var,
    Bare,
}

fn kind_of(e: &Expression) -> Kind {
    match e {
        Expression::Var(_) => Kind::Var,
        Expression::Number(_) => Kind::Number,
        Expression::Quantified { kind, .. } => match kind {
            QuantKind::Exists | QuantKind::Forall => Kind::Bool,
            QuantKind::Iota | QuantKind::Point => Kind::Entity,
            QuantKind::Count => Kind::Count,
            QuantKind::Describe => Kind::Text,
            QuantKind::Do => Kind::Action,
            QuantKind::View => Kind::View,
        },
        Expression::Bool { .. } | Expression::Compare { .. } => Kind::Bool,
        Expression::Concept { args, .. } if args.is_empty() => Kind::Bare,
        Expression::Concept { .. } => Kind::Bool,
    }
}

/// Static checks against a category vocabulary. Reports every violation.
pub fn validate(e: &Expression, categories: &Categories) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    if matches!(kind_of(e), Kind::Var | Kind::Bare) {
        errors.push(mismatch(e, "a program must compute a value"));
    }
    check(e, categories, &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn mismatch(e: &Expression, what: &str) -> ValidationError {
    ValidationError::TypeMismatch(format!("{what} in `{}`", pretty_print(e)))
}

fn check(e: &Expression, categories: &Categories, errors: &mut Vec<ValidationError>) {
    match e {
        Expression::Var(_) | Expression::Number(_) => {}
        Expression::Quantified {
            kind,
            sort,
            var,
            body,
        } => {
            match kind {
                QuantKind::Describe => {
                    match sort {
                        Sort::Category(c) if categories.contains(c) => {}
                        Sort::Category(c) => {
                            errors.push(ValidationError::UnknownCategory(c.clone()))
                        }
                        _ => errors.push(mismatch(e, "describe needs a category sort")),
                    }
                    check_describe_body(e, var, body, errors);
                }
                QuantKind::Do => {
                    if *sort != Sort::Action {
                        errors.push(mismatch(e, "do binds an Action variable"));
                    }
                    let applies_var = matches!(&**body, Expression::Concept { args, .. }
                        if args.iter().any(|a| matches!(a, Arg::Expr(Expression::Var(v)) if v == var)));
                    if !applies_var {
                        errors.push(mismatch(
                            e,
                            "do body must apply an action concept to its variable",
                        ));
                    }
                }
                _ => {
                    if *sort != Sort::Object {
                        errors.push(mismatch(e, "quantifier must range over Object"));
                    }
                    if kind_of(body) != Kind::Bool {
                        errors.push(mismatch(body, "quantifier body must be boolean"));
                    }
                }
            }
            check(body, categories, errors);
        }
        Expression::Bool { kind, operands } => {
            // `and(view(...), q)` sequences a view change before `q`, which
            // may then be any value when it is the only other operand.
            let views = operands.iter().filter(|o| kind_of(o) == Kind::View).count();
            let sequenced = *kind == BoolKind::And && views > 0 && operands.len() - views == 1;
            for o in operands {
                let ok = match kind_of(o) {
                    Kind::Bool => true,
                    Kind::View => *kind == BoolKind::And,
                    Kind::Entity | Kind::Count | Kind::Text | Kind::Action => sequenced,
                    _ => false,
                };
                if !ok {
                    errors.push(mismatch(
                        o,
                        &format!("`{}` operand must be boolean", kind.keyword()),
                    ));
                }
                check(o, categories, errors);
            }
        }
        Expression::Compare { kind, lhs, rhs } => {
            for side in [lhs, rhs] {
                if !matches!(kind_of(side), Kind::Count | Kind::Number) {
                    errors.push(mismatch(
                        side,
                        &format!("`{}` operand must be a count or number", kind.keyword()),
                    ));
                }
                check(side, categories, errors);
            }
        }
        Expression::Concept { args, .. } => {
            if args.is_empty() {
                errors.push(mismatch(e, "bare concept used as a value"));
            }
            for a in args {
                if let Arg::Expr(inner) = a {
                    if !matches!(kind_of(inner), Kind::Var | Kind::Entity) {
                        errors.push(mismatch(
                            inner,
                            "concept argument must be a variable or an entity",
                        ));
                    }
                    check(inner, categories, errors);
                }
            }
        }
    }
}

fn check_describe_body(
    e: &Expression,
    var: &str,
    body: &Expression,
    errors: &mut Vec<ValidationError>,
) {
    let Expression::Concept { args, .. } = body else {
        errors.push(mismatch(
            e,
            "describe body must be a concept applied to its variable",
        ));
        return;
    };
    let mut uses = 0;
    for a in args {
        match a {
            Arg::Expr(Expression::Var(v)) if v == var => uses += 1,
            Arg::Expr(inner) if kind_of(inner) == Kind::Entity => {}
            _ => errors.push(mismatch(
                e,
                "describe arguments must be its variable and entities",
            )),
        }
    }
    if uses != 1 || args.len() != 2 {
        errors.push(mismatch(
            e,
            "describe body must apply a concept to its variable and one entity",
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn cats() -> Categories {
        Categories::new()
            .with("Color", &["red", "blue"])
            .with("Shape", &["cube", "sphere"])
    }

    #[test]
    fn count_comparison_is_valid() {
        let e = parse("eq(count(Object, lambda x: cube(x)), 3)").unwrap();
        assert_eq!(validate(&e, &cats()), Ok(()));
    }

    #[test]
    fn bare_concept_operand_mismatch() {
        let e = parse("eq(sphere, 3)").unwrap();
        let errs = validate(&e, &cats()).unwrap_err();
        assert!(errs
            .iter()
            .all(|e| matches!(e, ValidationError::TypeMismatch(_))));
        assert!(!errs.is_empty());
    }

    #[test]
    fn unknown_category() {
        let e = parse("describe(Flavor, lambda c: flavor(c, iota(Object, lambda x: cube(x))))")
            .unwrap();
        assert_eq!(
            validate(&e, &cats()),
            Err(vec![ValidationError::UnknownCategory("Flavor".into())])
        );
    }

    #[test]
    fn reports_all_violations() {
        let e = parse(
            "and(eq(red, 2), describe(Taste, lambda c: taste(c, iota(Object, lambda x: cube(x)))))",
        )
        .unwrap();
        let errs = validate(&e, &cats()).unwrap_err();
        assert!(errs.contains(&ValidationError::UnknownCategory("Taste".into())));
        assert!(
            errs.iter()
                .filter(|e| matches!(e, ValidationError::TypeMismatch(_)))
                .count()
                >= 2
        );
    }

    #[test]
    fn view_sequencing_allowed_under_and() {
        let e = parse(
            "and(view(Object, lambda x: cake(x)), exists(Object, lambda y: right(y, iota(Object, lambda z: cake(z)))))",
        )
        .unwrap();
        assert_eq!(validate(&e, &cats()), Ok(()));
        let e =
            parse("view(Object, lambda x: cake(x)) and point(Object, lambda x: apple(x))").unwrap();
        assert_eq!(validate(&e, &cats()), Ok(()));
        let e =
            parse("and(red(iota(Object, lambda x: cake(x))), point(Object, lambda x: apple(x)))")
                .unwrap();
        assert!(validate(&e, &cats()).is_err());
    }
}
