//! Tokenizer and recursive-descent parser for the operation DSL:
//!
//! ```text
//! op      := filter | groupby | join | union
//! filter  := "FILTER" IDENT CMP LITERAL
//! groupby := "GROUPBY" IDENT ("," IDENT)* "AGG" agg ("," agg)*
//! agg     := FN "(" IDENT ")"
//! join    := "JOIN" "ON" IDENT
//! union   := "UNION"
//! ```
//!
//! Keywords are case-insensitive. Identifiers containing spaces or
//! punctuation can be written in backticks. Error positions are 0-based
//! token indices; running off the end reports the token count.

use super::{AggFn, Aggregate, Comparator, Literal, OpError, OperationSpec};
use crate::frame::parse_number;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Backtick(String),
    Cmp(Comparator),
    Comma,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

const SPECIAL: &[char] = &[',', '(', ')', '<', '>', '=', '!', '\'', '"', '`'];

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !SPECIAL.contains(&c)
}

fn tokenize(text: &str) -> Result<Vec<Token>, OpError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        let err = |message: String| OpError::Syntax {
            token: 0,
            offset,
            message,
        };
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let tok = match c {
            ',' => {
                chars.next();
                Tok::Comma
            }
            '(' => {
                chars.next();
                Tok::LParen
            }
            ')' => {
                chars.next();
                Tok::RParen
            }
            '<' | '>' | '=' | '!' => {
                chars.next();
                let eq = chars.peek().map(|p| p.1) == Some('=');
                if eq {
                    chars.next();
                }
                Tok::Cmp(match (c, eq) {
                    ('<', false) => Comparator::Lt,
                    ('<', true) => Comparator::Le,
                    ('>', false) => Comparator::Gt,
                    ('>', true) => Comparator::Ge,
                    ('=', _) => Comparator::Eq,
                    ('!', true) => Comparator::Ne,
                    _ => return Err(err("expected '!='".into())),
                })
            }
            '\'' | '"' | '`' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(err(format!("unterminated {c}-quoted text"))),
                        Some((_, q)) if q == c => {
                            if chars.peek().map(|p| p.1) == Some(c) {
                                chars.next();
                                s.push(c);
                            } else {
                                break;
                            }
                        }
                        Some((_, other)) => s.push(other),
                    }
                }
                if c == '`' {
                    Tok::Backtick(s)
                } else {
                    Tok::Quoted(s)
                }
            }
            _ => {
                let mut s = String::new();
                while let Some(&(_, w)) = chars.peek() {
                    if !is_word_char(w) {
                        break;
                    }
                    s.push(w);
                    chars.next();
                }
                Tok::Word(s)
            }
        };
        out.push(Token { tok, offset });
    }
    Ok(out)
}

/// Renders an attribute name so that the parser reads it back unchanged.
pub(super) fn quote_ident(name: &str) -> String {
    if !name.is_empty() && name.chars().all(is_word_char) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_offset: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> OpError {
        OpError::Syntax {
            token: self.pos,
            offset: self
                .tokens
                .get(self.pos)
                .map_or(self.end_offset, |t| t.offset),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), OpError> {
        if self.is_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn ident(&mut self) -> Result<String, OpError> {
        match self.peek() {
            Some(Tok::Word(w)) | Some(Tok::Backtick(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.error("expected a column name")),
        }
    }

    fn punct(&mut self, want: Tok, what: &str) -> Result<(), OpError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn end(&self) -> Result<(), OpError> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn operation(&mut self) -> Result<OperationSpec, OpError> {
        if self.is_keyword("FILTER") {
            self.pos += 1;
            let column = self.ident()?;
            let cmp = match self.peek() {
                Some(Tok::Cmp(c)) => *c,
                _ => return Err(self.error("expected a comparator (<, <=, >, >=, ==, !=)")),
            };
            self.pos += 1;
            let value = match self.peek() {
                Some(Tok::Word(w)) => match parse_number(w) {
                    Some(v) => Literal::Number(v),
                    None => Literal::Text(w.clone()),
                },
                Some(Tok::Quoted(s)) => Literal::Text(s.clone()),
                _ => return Err(self.error("expected a literal")),
            };
            self.pos += 1;
            self.end()?;
            Ok(OperationSpec::Filter { column, cmp, value })
        } else if self.is_keyword("GROUPBY") || self.is_keyword("GROUP") {
            if self.is_keyword("GROUP") {
                self.pos += 1;
                self.keyword("BY")?;
            } else {
                self.pos += 1;
            }
            let mut keys = vec![self.ident()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                keys.push(self.ident()?);
            }
            self.keyword("AGG")?;
            let mut aggs = vec![self.aggregate()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                aggs.push(self.aggregate()?);
            }
            self.end()?;
            Ok(OperationSpec::GroupBy { keys, aggs })
        } else if self.is_keyword("JOIN") {
            self.pos += 1;
            self.keyword("ON")?;
            let on = self.ident()?;
            self.end()?;
            Ok(OperationSpec::join(on))
        } else if self.is_keyword("UNION") {
            self.pos += 1;
            self.end()?;
            Ok(OperationSpec::Union)
        } else {
            Err(self.error("expected FILTER, GROUPBY, JOIN or UNION"))
        }
    }

    fn aggregate(&mut self) -> Result<Aggregate, OpError> {
        let func = match self.peek() {
            Some(Tok::Word(w)) => AggFn::from_name(w),
            _ => None,
        }
        .ok_or_else(|| self.error("expected an aggregate function (mean, sum, count, min, max)"))?;
        self.pos += 1;
        self.punct(Tok::LParen, "'('")?;
        let column = self.ident()?;
        self.punct(Tok::RParen, "')'")?;
        Ok(Aggregate { func, column })
    }
}

/// Parses one operation written in the DSL.
pub fn parse_operation(text: &str) -> Result<OperationSpec, OpError> {
    let tokens = tokenize(text).map_err(|e| match e {
        OpError::Syntax {
            offset, message, ..
        } => {
            // report the index of the token that failed to lex
            let token = tokenize(&text[..offset]).map_or(0, |t| t.len());
            OpError::Syntax {
                token,
                offset,
                message,
            }
        }
        other => other,
    })?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end_offset: text.len(),
    };
    let op = p.operation()?;
    op.validate()?;
    Ok(op)
}

/// Accepts either the DSL or the JSON encoding of an operation.
pub fn parse_operation_any(text: &str) -> Result<OperationSpec, OpError> {
    if text.trim_start().starts_with('{') {
        let op: OperationSpec =
            serde_json::from_str(text).map_err(|e| OpError::Json(e.to_string()))?;
        op.validate()?;
        Ok(op)
    } else {
        parse_operation(text)
    }
}
