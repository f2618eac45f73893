//! Python expression-statement subset: names, attribute access, calls,
//! string and number literals, keyword arguments.
//!
//! Canonical formatting uses single-quoted strings, `, ` between call
//! arguments, and no spaces around `=` in keyword arguments, e.g.
//! `pandas.read_csv('file.csv', nrows=1000)`.

use crate::asdl::{CtorId, Grammar};
use crate::ast::{AbstractTree, FieldValue, PrimitiveValue, RealizedField};

use super::ConvertError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Dot,
    LParen,
    RParen,
    Comma,
    Eq,
}

fn lex(code: &str) -> Result<Vec<Tok>, ConvertError> {
    let mut toks = Vec::new();
    let mut chars = code.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push(Tok::Ident(ident));
            }
            c if c.is_ascii_digit() => {
                let mut num = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        num.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                // a dot starts a fraction only when a digit follows, so
                // `1000.attr` still lexes as attribute access on a number
                if chars.peek() == Some(&'.') {
                    let mut ahead = chars.clone();
                    ahead.next();
                    if ahead.peek().is_some_and(|c| c.is_ascii_digit()) {
                        num.push('.');
                        chars.next();
                        while let Some(&c) = chars.peek() {
                            if c.is_ascii_digit() {
                                num.push(c);
                                chars.next();
                            } else {
                                break;
                            }
                        }
                    }
                }
                toks.push(Tok::Number(num));
            }
            '\'' | '"' => {
                let quote = c;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => {
                            return Err(ConvertError::UnsupportedConstruct(
                                "unterminated string literal".into(),
                            ))
                        }
                        Some('\\') => match chars.next() {
                            Some('\\') => s.push('\\'),
                            Some(q) if q == quote => s.push(q),
                            Some('n') => s.push('\n'),
                            Some(other) => {
                                return Err(ConvertError::UnsupportedConstruct(format!(
                                    "unsupported escape `\\{other}`"
                                )))
                            }
                            None => {
                                return Err(ConvertError::UnsupportedConstruct(
                                    "unterminated string literal".into(),
                                ))
                            }
                        },
                        Some(c) if c == quote => break,
                        Some(c) => s.push(c),
                    }
                }
                toks.push(Tok::Str(s));
            }
            '.' => {
                chars.next();
                toks.push(Tok::Dot);
            }
            '(' => {
                chars.next();
                toks.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                toks.push(Tok::RParen);
            }
            ',' => {
                chars.next();
                toks.push(Tok::Comma);
            }
            '=' => {
                chars.next();
                toks.push(Tok::Eq);
            }
            other => {
                return Err(ConvertError::UnsupportedConstruct(format!(
                    "unexpected character `{other}`"
                )))
            }
        }
    }
    Ok(toks)
}

struct Parser<'g> {
    toks: Vec<Tok>,
    pos: usize,
    grammar: &'g Grammar,
}

impl<'g> Parser<'g> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn ctor(&self, name: &str) -> Result<CtorId, ConvertError> {
        self.grammar.lookup_ctor(name).ok_or_else(|| {
            ConvertError::UnsupportedConstruct(format!("grammar has no `{name}` constructor"))
        })
    }

    fn parse_expr(&mut self) -> Result<AbstractTree, ConvertError> {
        let mut expr = self.parse_primary()?;
        loop {
            match self.peek() {
                Some(Tok::Dot) => {
                    self.next();
                    let attr = match self.next() {
                        Some(Tok::Ident(name)) => name,
                        _ => {
                            return Err(ConvertError::UnsupportedConstruct(
                                "expected an attribute name after `.`".into(),
                            ))
                        }
                    };
                    expr = AbstractTree::new(
                        self.ctor("Attribute")?,
                        vec![RealizedField::tree(expr), RealizedField::token(attr)],
                    );
                }
                Some(Tok::LParen) => {
                    self.next();
                    let (args, keywords) = self.parse_call_args()?;
                    expr = AbstractTree::new(
                        self.ctor("Call")?,
                        vec![
                            RealizedField::tree(expr),
                            RealizedField::trees(args),
                            RealizedField::trees(keywords),
                        ],
                    );
                }
                _ => break,
            }
        }
        Ok(expr)
    }

    fn parse_call_args(
        &mut self,
    ) -> Result<(Vec<AbstractTree>, Vec<AbstractTree>), ConvertError> {
        let mut args = Vec::new();
        let mut keywords = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.next();
            return Ok((args, keywords));
        }
        loop {
            let is_keyword = matches!(self.peek(), Some(Tok::Ident(_)))
                && self.peek2() == Some(&Tok::Eq);
            if is_keyword {
                let name = match self.next() {
                    Some(Tok::Ident(n)) => n,
                    _ => unreachable!(),
                };
                self.next(); // `=`
                let value = self.parse_expr()?;
                keywords.push(AbstractTree::new(
                    self.ctor("keyword")?,
                    vec![RealizedField::token(name), RealizedField::tree(value)],
                ));
            } else {
                if !keywords.is_empty() {
                    return Err(ConvertError::UnsupportedConstruct(
                        "positional argument after a keyword argument".into(),
                    ));
                }
                args.push(self.parse_expr()?);
            }
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => break,
                _ => {
                    return Err(ConvertError::UnsupportedConstruct(
                        "expected `,` or `)` in a call".into(),
                    ))
                }
            }
        }
        Ok((args, keywords))
    }

    fn parse_primary(&mut self) -> Result<AbstractTree, ConvertError> {
        match self.next() {
            Some(Tok::Ident(name)) => Ok(AbstractTree::new(
                self.ctor("Name")?,
                vec![RealizedField::token(name)],
            )),
            Some(Tok::Number(n)) => Ok(AbstractTree::new(
                self.ctor("Num")?,
                vec![RealizedField::token(n)],
            )),
            Some(Tok::Str(s)) => {
                if s.is_empty() {
                    return Err(ConvertError::UnsupportedConstruct(
                        "empty string literals are not supported".into(),
                    ));
                }
                let tokens: Vec<String> = if s.split_whitespace().next().is_none() {
                    vec![s]
                } else {
                    s.split_whitespace().map(str::to_string).collect()
                };
                Ok(AbstractTree::new(
                    self.ctor("Str")?,
                    vec![RealizedField {
                        values: vec![FieldValue::Primitive(PrimitiveValue::new(tokens))],
                    }],
                ))
            }
            other => Err(ConvertError::UnsupportedConstruct(format!(
                "expected a name, number, or literal, found {other:?}"
            ))),
        }
    }
}

/// Parse mini-Python code into an expression-statement tree.
pub fn pyexpr_to_ast(code: &str, grammar: &Grammar) -> Result<AbstractTree, ConvertError> {
    let toks = lex(code)?;
    if toks.is_empty() {
        return Err(ConvertError::UnsupportedConstruct("empty expression".into()));
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        grammar,
    };
    let expr = parser.parse_expr()?;
    if parser.pos != parser.toks.len() {
        return Err(ConvertError::UnsupportedConstruct(
            "trailing tokens after the expression".into(),
        ));
    }
    let expr_stmt = grammar.lookup_ctor("Expr").ok_or_else(|| {
        ConvertError::UnsupportedConstruct("grammar has no `Expr` constructor".into())
    })?;
    Ok(AbstractTree::new(expr_stmt, vec![RealizedField::tree(expr)]))
}

/// Render an expression-statement tree back to canonical mini-Python.
pub fn ast_to_pyexpr(tree: &AbstractTree, grammar: &Grammar) -> Result<String, ConvertError> {
    if grammar.ctor(tree.ctor).name != "Expr" {
        return Err(ConvertError::InvalidTree("root must be Expr".into()));
    }
    match tree.fields.first().and_then(|f| f.values.first()) {
        Some(FieldValue::Tree(t)) => render_expr(t, grammar),
        _ => Err(ConvertError::InvalidTree("Expr holds no expression".into())),
    }
}

fn render_expr(tree: &AbstractTree, grammar: &Grammar) -> Result<String, ConvertError> {
    let ctor = grammar.ctor(tree.ctor);
    let leaf = |index: usize| -> Result<String, ConvertError> {
        match tree.fields.get(index).and_then(|f| f.values.first()) {
            Some(FieldValue::Primitive(p)) => Ok(p.joined()),
            _ => Err(ConvertError::InvalidTree(format!(
                "`{}` is missing a primitive value",
                ctor.name
            ))),
        }
    };
    Ok(match ctor.name.as_str() {
        "Name" => leaf(0)?,
        "Num" => leaf(0)?,
        "Str" => {
            let escaped: String = leaf(0)?
                .chars()
                .flat_map(|c| match c {
                    '\'' => vec!['\\', '\''],
                    '\\' => vec!['\\', '\\'],
                    '\n' => vec!['\\', 'n'],
                    c => vec![c],
                })
                .collect();
            format!("'{escaped}'")
        }
        "Attribute" => {
            let value = match tree.fields[0].values.first() {
                Some(FieldValue::Tree(t)) => render_expr(t, grammar)?,
                _ => return Err(ConvertError::InvalidTree("Attribute without value".into())),
            };
            format!("{value}.{}", leaf(1)?)
        }
        "Call" => {
            let func = match tree.fields[0].values.first() {
                Some(FieldValue::Tree(t)) => render_expr(t, grammar)?,
                _ => return Err(ConvertError::InvalidTree("Call without callee".into())),
            };
            let mut pieces = Vec::new();
            for v in &tree.fields[1].values {
                match v {
                    FieldValue::Tree(t) => pieces.push(render_expr(t, grammar)?),
                    _ => return Err(ConvertError::InvalidTree("bad positional arg".into())),
                }
            }
            for v in &tree.fields[2].values {
                let kw = match v {
                    FieldValue::Tree(t) => t,
                    _ => return Err(ConvertError::InvalidTree("bad keyword arg".into())),
                };
                let name = match kw.fields[0].values.first() {
                    Some(FieldValue::Primitive(p)) => p.joined(),
                    _ => return Err(ConvertError::InvalidTree("keyword without name".into())),
                };
                let value = match kw.fields[1].values.first() {
                    Some(FieldValue::Tree(t)) => render_expr(t, grammar)?,
                    _ => return Err(ConvertError::InvalidTree("keyword without value".into())),
                };
                pieces.push(format!("{name}={value}"));
            }
            format!("{func}({})", pieces.join(", "))
        }
        other => {
            return Err(ConvertError::InvalidTree(format!(
                "constructor `{other}` is not an expression"
            )))
        }
    })
}
