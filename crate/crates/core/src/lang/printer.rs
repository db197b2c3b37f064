use std::fmt::Write;

use super::ast::{Arg, Expression};

/// The `index`-th canonical binder name: `x, y, z, x1, y1, z1, x2, ...`.
pub fn canonical_var_name(index: usize) -> String {
    let base = ["x", "y", "z"][index % 3];
    match index / 3 {
        0 => base.to_string(),
        round => format!("{base}{round}"),
    }
}

/// Renames every binder to its preorder canonical name. Free variables are
/// left untouched.
pub fn canonicalize(e: &Expression) -> Expression {
    fn go(e: &Expression, env: &mut Vec<(String, String)>, next: &mut usize) -> Expression {
        match e {
            Expression::Var(v) => {
                let renamed = env
                    .iter()
                    .rev()
                    .find(|(old, _)| old == v)
                    .map(|(_, new)| new.clone());
                Expression::Var(renamed.unwrap_or_else(|| v.clone()))
            }
            Expression::Number(n) => Expression::Number(*n),
            Expression::Quantified {
                kind,
                sort,
                var,
                body,
            } => {
                let fresh = canonical_var_name(*next);
                *next += 1;
                env.push((var.clone(), fresh.clone()));
                let body = go(body, env, next);
                env.pop();
                Expression::Quantified {
                    kind: *kind,
                    sort: sort.clone(),
                    var: fresh,
                    body: Box::new(body),
                }
            }
            Expression::Bool { kind, operands } => Expression::Bool {
                kind: *kind,
                operands: operands.iter().map(|o| go(o, env, next)).collect(),
            },
            Expression::Compare { kind, lhs, rhs } => {
                let lhs = go(lhs, env, next);
                let rhs = go(rhs, env, next);
                Expression::compare(*kind, lhs, rhs)
            }
            Expression::Concept { name, args } => Expression::Concept {
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| match a {
                        Arg::Expr(e) => Arg::Expr(go(e, env, next)),
                        Arg::Text(t) => Arg::Text(t.clone()),
                    })
                    .collect(),
            },
        }
    }
    go(e, &mut Vec::new(), &mut 0)
}

/// Structural equality up to consistent renaming of bound variables.
pub fn alpha_eq(a: &Expression, b: &Expression) -> bool {
    canonicalize(a) == canonicalize(b)
}

/// Canonical program text. Binders are renamed apart first, so the output
/// parses back to the same tree.
pub fn pretty_print(e: &Expression) -> String {
    let mut out = String::new();
    write_expr(&canonicalize(e), &mut out);
    out
}

fn write_expr(e: &Expression, out: &mut String) {
    match e {
        Expression::Var(v) => out.push_str(v),
        Expression::Number(n) => write_number(*n, out),
        Expression::Quantified {
            kind,
            sort,
            var,
            body,
        } => {
            let _ = write!(out, "{}({}, lambda {}: ", kind.keyword(), sort.name(), var);
            write_expr(body, out);
            out.push(')');
        }
        Expression::Bool { kind, operands } => {
            out.push_str(kind.keyword());
            out.push('(');
            for (i, o) in operands.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(o, out);
            }
            out.push(')');
        }
        Expression::Compare { kind, lhs, rhs } => {
            out.push_str(kind.keyword());
            out.push('(');
            write_expr(lhs, out);
            out.push_str(", ");
            write_expr(rhs, out);
            out.push(')');
        }
        Expression::Concept { name, args } => {
            out.push_str(name);
            if args.is_empty() {
                return;
            }
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                match a {
                    Arg::Expr(e) => write_expr(e, out),
                    Arg::Text(t) => write_text(t, out),
                }
            }
            out.push(')');
        }
    }
}

fn write_number(n: f64, out: &mut String) {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        let _ = write!(out, "{}", n as i64);
    } else {
        let _ = write!(out, "{n}");
    }
}

fn write_text(t: &str, out: &mut String) {
    out.push('"');
    for c in t.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn prints_exists() {
        let e = Expression::exists("x", Expression::apply("blue", &["x"]));
        assert_eq!(pretty_print(&e), "exists(Object, lambda x: blue(x))");
    }

    #[test]
    fn nested_iota_binders_renamed_apart() {
        let e = Expression::iota(
            "x",
            Expression::concept(
                "left",
                vec![
                    Expression::var("x"),
                    Expression::iota(
                        "x",
                        Expression::and(vec![
                            Expression::apply("cube", &["x"]),
                            Expression::concept(
                                "right",
                                vec![
                                    Expression::var("x"),
                                    Expression::iota("x", Expression::apply("red", &["x"])),
                                ],
                            ),
                        ]),
                    ),
                ],
            ),
        );
        let s = pretty_print(&e);
        assert_eq!(
            s,
            "iota(Object, lambda x: left(x, iota(Object, lambda y: and(cube(y), right(y, iota(Object, lambda z: red(z)))))))"
        );
        let mut deep = Expression::apply("red", &["v"]);
        for _ in 0..4 {
            deep = Expression::exists(
                "v",
                Expression::and(vec![Expression::apply("red", &["v"]), deep]),
            );
        }
        assert!(pretty_print(&deep).contains("lambda x1:"));
    }

    #[test]
    fn canonical_names_sequence() {
        let names: Vec<String> = (0..7).map(canonical_var_name).collect();
        assert_eq!(names, ["x", "y", "z", "x1", "y1", "z1", "x2"]);
    }

    #[test]
    fn numbers_and_text_round_trip() {
        for src in [
            "eq(count(Object, lambda x: red(x)), 3)",
            "less_than(count(Object, lambda x: red(x)), 2.5)",
            "do(Action, lambda x: say(x, \"a \\\"quoted\\\" word\"))",
        ] {
            let e = parse(src).unwrap();
            assert_eq!(parse(&pretty_print(&e)).unwrap(), e);
        }
    }

    #[test]
    fn alpha_equivalence() {
        let a = Expression::exists("a", Expression::apply("red", &["a"]));
        let b = Expression::exists("b", Expression::apply("red", &["b"]));
        assert!(alpha_eq(&a, &b));
        assert!(!alpha_eq(
            &a,
            &Expression::exists("b", Expression::apply("blue", &["b"]))
        ));
    }
}
