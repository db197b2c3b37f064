use std::collections::BTreeMap;

use super::ast::{Arg, BoolKind, CompareKind, Expression, QuantKind, Sort};
use super::lexer::{tokenize, Spanned, Token};
use super::{canonicalize, LangError};

/// Parses one program. Binders are renamed apart in preorder
/// (`x, y, z, x1, ...`) so every variable name is unique in the result.
pub fn parse(text: &str) -> Result<Expression, LangError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        scope: Vec::new(),
        fresh: 0,
    };
    let expr = parser.expr()?;
    let tail = parser.peek();
    if tail.token != Token::Eof {
        return Err(parser.error_at(tail, "unexpected trailing input"));
    }
    check_arities(&expr)?;
    Ok(canonicalize(&expr))
}

/// One program per line; `#` starts a comment outside string literals.
/// Blank and comment-only lines are skipped. Returns `(line number, result)`.
pub fn parse_program_file(text: &str) -> Vec<(usize, Result<Expression, LangError>)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let code = strip_comment(line).trim();
            if code.is_empty() {
                None
            } else {
                let result = parse(code).map_err(|e| e.on_line(i + 1));
                Some((i + 1, result))
            }
        })
        .collect()
}

fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c == '#' => return &line[..i],
            None if c == '"' || c == '\'' => quote = Some(c),
            None => {}
        }
    }
    line
}

pub(crate) fn is_var_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

const RESERVED: [&str; 4] = ["and", "or", "not", "lambda"];

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    /// (surface name, internal name); innermost binder last.
    scope: Vec<(String, String)>,
    fresh: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].token
    }

    fn bump(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if t.token != Token::Eof {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, at: &Spanned, message: &str) -> LangError {
        let found = match &at.token {
            Token::Ident(s) => format!("`{s}`"),
            Token::Number(n) => format!("number {n}"),
            Token::Str(s) => format!("string {s:?}"),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::Comma => "`,`".into(),
            Token::Colon => "`:`".into(),
            Token::Eof => "end of input".into(),
        };
        LangError::Syntax {
            line: at.line,
            col: at.col,
            message: format!("{message}, found {found}"),
        }
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), LangError> {
        if self.peek().token == want {
            self.bump();
            Ok(())
        } else {
            Err(self.error_at(self.peek(), &format!("expected {what}")))
        }
    }

    fn peek_keyword(&self, word: &str) -> bool {
        matches!(&self.peek().token, Token::Ident(s) if s == word)
    }

    fn resolve(&self, name: &str) -> Option<&str> {
        self.scope
            .iter()
            .rev()
            .find(|(surface, _)| surface == name)
            .map(|(_, internal)| internal.as_str())
    }

    fn bind(&mut self, surface: &str) -> String {
        let internal = format!("{surface}#{}", self.fresh);
        self.fresh += 1;
        self.scope.push((surface.to_string(), internal.clone()));
        internal
    }

    /// `or` binds looser than `and`; both also exist in prefix form.
    fn expr(&mut self) -> Result<Expression, LangError> {
        let mut operands = vec![self.and_chain()?];
        while self.peek_keyword("or") && self.peek_at(1) != &Token::LParen {
            self.bump();
            operands.push(self.and_chain()?);
        }
        Ok(fold_infix(BoolKind::Or, operands))
    }

    fn and_chain(&mut self) -> Result<Expression, LangError> {
        let mut operands = vec![self.atom()?];
        while self.peek_keyword("and") && self.peek_at(1) != &Token::LParen {
            self.bump();
            operands.push(self.atom()?);
        }
        Ok(fold_infix(BoolKind::And, operands))
    }

    fn atom(&mut self) -> Result<Expression, LangError> {
        let tok = self.bump();
        match tok.token.clone() {
            Token::Number(v) => Ok(Expression::Number(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Token::Ident(name) => {
                if self.peek().token == Token::LParen {
                    self.call(&name, &tok)
                } else {
                    self.bare_name(&name, &tok)
                }
            }
            _ => Err(self.error_at(&tok, "expected an expression")),
        }
    }

    fn bare_name(&self, name: &str, at: &Spanned) -> Result<Expression, LangError> {
        if RESERVED.contains(&name) {
            return Err(self.error_at(at, "expected an expression"));
        }
        if let Some(internal) = self.resolve(name) {
            return Ok(Expression::Var(internal.to_string()));
        }
        if is_var_name(name) {
            return Err(LangError::UnboundVariable {
                name: name.to_string(),
                line: at.line,
                col: at.col,
            });
        }
        Ok(Expression::Concept {
            name: name.to_string(),
            args: Vec::new(),
        })
    }

    fn call(&mut self, name: &str, at: &Spanned) -> Result<Expression, LangError> {
        self.expect(Token::LParen, "`(`")?;
        if let Some(kind) = QuantKind::from_keyword(name) {
            return self.quantified(kind, at);
        }
        if let Some(kind) = CompareKind::from_keyword(name) {
            let lhs = self.expr()?;
            self.expect(Token::Comma, "`,` between comparison operands")?;
            let rhs = self.expr()?;
            self.expect(Token::RParen, "`)` after comparison")?;
            return Ok(Expression::compare(kind, lhs, rhs));
        }
        let bool_kind = match name {
            "and" => Some(BoolKind::And),
            "or" => Some(BoolKind::Or),
            "not" => Some(BoolKind::Not),
            "lambda" => return Err(self.error_at(at, "`lambda` must follow a sort")),
            _ => None,
        };
        if let Some(kind) = bool_kind {
            let mut operands = vec![self.expr()?];
            while self.peek().token == Token::Comma {
                self.bump();
                operands.push(self.expr()?);
            }
            let close = self.peek().clone();
            self.expect(Token::RParen, "`)`")?;
            let ok = match kind {
                BoolKind::Not => operands.len() == 1,
                _ => operands.len() >= 2,
            };
            if !ok {
                return Err(LangError::Syntax {
                    line: close.line,
                    col: close.col,
                    message: format!("`{name}` got {} operand(s)", operands.len()),
                });
            }
            return Ok(Expression::Bool { kind, operands });
        }
        let mut args = vec![self.arg()?];
        while self.peek().token == Token::Comma {
            self.bump();
            args.push(self.arg()?);
        }
        self.expect(Token::RParen, "`,` or `)` in argument list")?;
        Ok(Expression::Concept {
            name: name.to_string(),
            args,
        })
    }

    fn arg(&mut self) -> Result<Arg, LangError> {
        let tok = self.peek().clone();
        match &tok.token {
            Token::Str(s) => {
                self.bump();
                Ok(Arg::Text(s.clone()))
            }
            Token::Ident(name)
                if self.peek_at(1) != &Token::LParen
                    && !RESERVED.contains(&name.as_str())
                    && self.resolve(name).is_none()
                    && !is_var_name(name)
                    && !matches!(self.peek_at(1), Token::Ident(w) if w == "and" || w == "or") =>
            {
                self.bump();
                Ok(Arg::Text(name.clone()))
            }
            _ => Ok(Arg::Expr(self.expr()?)),
        }
    }

    fn quantified(&mut self, kind: QuantKind, at: &Spanned) -> Result<Expression, LangError> {
        // `view(iota(...))` names its target directly.
        if kind == QuantKind::View
            && !matches!(&self.peek().token, Token::Ident(s) if starts_upper(s))
        {
            let target = self.expr()?;
            self.expect(Token::RParen, "`)` after view target")?;
            return match target {
                Expression::Quantified {
                    kind: k,
                    sort,
                    var,
                    body,
                } if k.selects_entity() => Ok(Expression::Quantified {
                    kind: QuantKind::View,
                    sort,
                    var,
                    body,
                }),
                _ => Err(self.error_at(
                    at,
                    "view expects `view(Sort, lambda v: body)` or an entity selection",
                )),
            };
        }
        let sort_tok = self.bump();
        let sort = match &sort_tok.token {
            Token::Ident(s) if starts_upper(s) => Sort::from_name(s),
            _ => return Err(self.error_at(&sort_tok, "expected a sort such as `Object`")),
        };
        self.expect(Token::Comma, "`,` after sort")?;
        if !self.peek_keyword("lambda") {
            // Short form `describe(Color, <entity>)` means
            // `describe(Color, lambda c: color(c, <entity>))`.
            if kind == QuantKind::Describe {
                let internal = format!("c#{}", self.fresh);
                self.fresh += 1;
                let entity = self.expr()?;
                self.expect(Token::RParen, "`)` after describe")?;
                let concept = sort.name().to_lowercase();
                return Ok(Expression::quant(
                    kind,
                    sort,
                    &internal,
                    Expression::Concept {
                        name: concept,
                        args: vec![
                            Arg::Expr(Expression::Var(internal.clone())),
                            Arg::Expr(entity),
                        ],
                    },
                ));
            }
            return Err(self.error_at(self.peek(), "expected `lambda`"));
        }
        self.bump();
        let var_tok = self.bump();
        let surface = match &var_tok.token {
            Token::Ident(v) if !RESERVED.contains(&v.as_str()) => v.clone(),
            _ => return Err(self.error_at(&var_tok, "expected a variable name")),
        };
        self.expect(Token::Colon, "`:` after lambda variable")?;
        let internal = self.bind(&surface);
        let body = self.expr();
        self.scope.pop();
        let body = body?;
        self.expect(Token::RParen, "`)` closing quantifier")?;
        Ok(Expression::quant(kind, sort, &internal, body))
    }
}

fn starts_upper(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

fn fold_infix(kind: BoolKind, mut operands: Vec<Expression>) -> Expression {
    if operands.len() == 1 {
        operands.pop().unwrap()
    } else {
        Expression::Bool { kind, operands }
    }
}

/// Rejects one concept name used with two different arities.
pub(crate) fn check_arities(e: &Expression) -> Result<(), LangError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut conflict = None;
    e.walk(&mut |node| {
        if let Expression::Concept { name, args } = node {
            if args.is_empty() || conflict.is_some() {
                return;
            }
            match seen.get(name.as_str()) {
                Some(&a) if a != args.len() => {
                    conflict = Some(LangError::ArityConflict {
                        name: name.clone(),
                        first: a,
                        second: args.len(),
                    })
                }
                Some(_) => {}
                None => {
                    seen.insert(name, args.len());
                }
            }
        }
    });
    conflict.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exists_with_and() {
        let e = parse("exists(Object, lambda x: and(blue(x), sphere(x)))").unwrap();
        let expect = Expression::exists(
            "x",
            Expression::and(vec![
                Expression::apply("blue", &["x"]),
                Expression::apply("sphere", &["x"]),
            ]),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn describe_nests_iota() {
        let e = parse("describe(Color, lambda c: color(c, iota(Object, lambda y: sphere(y))))")
            .unwrap();
        let expect = Expression::quant(
            QuantKind::Describe,
            Sort::Category("Color".into()),
            "x",
            Expression::concept(
                "color",
                vec![
                    Expression::var("x"),
                    Expression::iota("y", Expression::apply("sphere", &["y"])),
                ],
            ),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn describe_short_form_desugars() {
        let short = parse("describe(Color, iota(Object, lambda y: sphere(y)))").unwrap();
        let long = parse("describe(Color, lambda c: color(c, iota(Object, lambda y: sphere(y))))")
            .unwrap();
        assert_eq!(short, long);
    }

    #[test]
    fn unclosed_paren_is_syntax_error() {
        let err = parse("count(Object, lambda x: red(x)").unwrap_err();
        match err {
            LangError::Syntax { line, col, message } => {
                assert_eq!((line, col), (1, 31));
                assert!(message.contains("`)`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infix_connectives() {
        let e = parse("exists(Object, lambda x: red(x) and cube(x) or sphere(x))").unwrap();
        let body = Expression::or(vec![
            Expression::and(vec![
                Expression::apply("red", &["x"]),
                Expression::apply("cube", &["x"]),
            ]),
            Expression::apply("sphere", &["x"]),
        ]);
        assert_eq!(e, Expression::exists("x", body));
    }

    #[test]
    fn text_literals_and_unbound_variables() {
        let e = parse("do(Action, lambda a: put(a, iota(Object, lambda x: cake(x)), iota(Object, lambda z: cat(z)), far))")
            .unwrap();
        let quoted = parse(
            "do(Action, lambda a: put(a, iota(Object, lambda x: cake(x)), iota(Object, lambda z: cat(z)), \"far\"))",
        )
        .unwrap();
        assert_eq!(e, quoted);
        let err = parse("exists(Object, lambda x: left(x, y))").unwrap_err();
        assert!(matches!(err, LangError::UnboundVariable { ref name, .. } if name == "y"));
    }

    #[test]
    fn shadowed_binders_are_renamed_apart() {
        let e = parse("exists(Object, lambda x: and(red(x), exists(Object, lambda x: cube(x))))")
            .unwrap();
        let expect = Expression::exists(
            "x",
            Expression::and(vec![
                Expression::apply("red", &["x"]),
                Expression::exists("y", Expression::apply("cube", &["y"])),
            ]),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn arity_conflict_is_rejected() {
        let err =
            parse("and(exists(Object, lambda x: left(x, x)), exists(Object, lambda y: left(y)))")
                .unwrap_err();
        assert_eq!(
            err,
            LangError::ArityConflict {
                name: "left".into(),
                first: 2,
                second: 1
            }
        );
    }

    #[test]
    fn operand_counts_are_checked() {
        assert!(matches!(parse("and(red)"), Err(LangError::Syntax { .. })));
        assert!(matches!(
            parse("not(red, blue)"),
            Err(LangError::Syntax { .. })
        ));
    }

    #[test]
    fn bare_concept_parses() {
        let e = parse("eq(sphere, 3)").unwrap();
        assert_eq!(
            e,
            Expression::compare(
                CompareKind::Eq,
                Expression::Concept {
                    name: "sphere".into(),
                    args: vec![]
                },
                Expression::Number(3.0)
            )
        );
    }

    #[test]
    fn view_target_form() {
        let a = parse("view(iota(Object, lambda x: cake(x)))").unwrap();
        let b = parse("view(Object, lambda x: cake(x))").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn program_file_lines() {
        let text = "# header\nexists(Object, lambda x: red(x))  # trailing\n\ncount(Object, lambda x: \"#\"(x)\n";
        let parsed = parse_program_file(text);
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, 2);
        assert!(parsed[0].1.is_ok());
        assert!(matches!(
            parsed[1].1,
            Err(LangError::Syntax { line: 4, .. })
        ));
    }
}
