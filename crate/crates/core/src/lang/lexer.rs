use super::LangError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Spanned {
    pub token: Token,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Spanned>, LangError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, message: String| LangError::Syntax { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col);
            continue;
        }
        let token = match c {
            '(' => {
                advance(&mut i, &mut line, &mut col);
                Token::LParen
            }
            ')' => {
                advance(&mut i, &mut line, &mut col);
                Token::RParen
            }
            ',' => {
                advance(&mut i, &mut line, &mut col);
                Token::Comma
            }
            ':' => {
                advance(&mut i, &mut line, &mut col);
                Token::Colon
            }
            '"' | '\'' => {
                let quote = c;
                advance(&mut i, &mut line, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(err(start_line, start_col, "unterminated string".into()))
                        }
                        Some(&q) if q == quote => {
                            advance(&mut i, &mut line, &mut col);
                            break;
                        }
                        Some('\\') => {
                            advance(&mut i, &mut line, &mut col);
                            match chars.get(i) {
                                Some(&e) => {
                                    s.push(e);
                                    advance(&mut i, &mut line, &mut col);
                                }
                                None => {
                                    return Err(err(
                                        start_line,
                                        start_col,
                                        "unterminated string".into(),
                                    ))
                                }
                            }
                        }
                        Some(&ch) => {
                            s.push(ch);
                            advance(&mut i, &mut line, &mut col);
                        }
                    }
                }
                Token::Str(s)
            }
            c if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let mut s = String::new();
                s.push(c);
                advance(&mut i, &mut line, &mut col);
                while let Some(&d) = chars.get(i) {
                    let exponent_sign = (d == '-' || d == '+') && s.ends_with(['e', 'E']);
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exponent_sign {
                        s.push(d);
                        advance(&mut i, &mut line, &mut col);
                    } else {
                        break;
                    }
                }
                let value: f64 = s
                    .parse()
                    .map_err(|_| err(start_line, start_col, format!("bad number `{s}`")))?;
                Token::Number(value)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.get(i) {
                    if d.is_alphanumeric() || d == '_' || d == '-' {
                        s.push(d);
                        advance(&mut i, &mut line, &mut col);
                    } else {
                        break;
                    }
                }
                Token::Ident(s)
            }
            other => {
                return Err(err(
                    start_line,
                    start_col,
                    format!("unexpected character `{other}`"),
                ));
            }
        };
        out.push(Spanned {
            token,
            line: start_line,
            col: start_col,
        });
    }
    out.push(Spanned {
        token: Token::Eof,
        line,
        col,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let toks = tokenize("count(Object,\n lambda x: red(x), -2.5, \"far\")").unwrap();
        assert_eq!(toks[0].token, Token::Ident("count".into()));
        assert_eq!(toks[4].token, Token::Ident("lambda".into()));
        assert_eq!((toks[4].line, toks[4].col), (2, 2));
        assert!(toks.iter().any(|t| t.token == Token::Number(-2.5)));
        assert!(toks.iter().any(|t| t.token == Token::Str("far".into())));
        assert_eq!(toks.last().unwrap().token, Token::Eof);
    }

    #[test]
    fn bad_character_reports_position() {
        let e = tokenize("red(x) & blue(x)").unwrap_err();
        assert_eq!(
            e,
            LangError::Syntax {
                line: 1,
                col: 8,
                message: "unexpected character `&`".into()
            }
        );
    }
}
