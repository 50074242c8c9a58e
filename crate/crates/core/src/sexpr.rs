//! Surface syntax: lexing, parsing and printing of s-expressions.
//!
//! Every program text in the system (world models, example translations,
//! generated candidates, REPL input) goes through [`parse`]. Comments are kept
//! in the resulting [`SourceUnit`] because prompt assembly needs them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open byte range into the source text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Clone, Debug)]
pub enum SExprKind {
    Symbol(String),
    Number(f64),
    Bool(bool),
    Str(String),
    List(Vec<SExpr>),
}

/// A parsed expression. Equality is structural and ignores spans.
#[derive(Clone, Debug)]
pub struct SExpr {
    pub kind: SExprKind,
    pub span: Span,
}

impl PartialEq for SExprKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (SExprKind::Symbol(a), SExprKind::Symbol(b)) => a == b,
            (SExprKind::Number(a), SExprKind::Number(b)) => a == b,
            (SExprKind::Bool(a), SExprKind::Bool(b)) => a == b,
            (SExprKind::Str(a), SExprKind::Str(b)) => a == b,
            (SExprKind::List(a), SExprKind::List(b)) => a == b,
            _ => false,
        }
    }
}

impl PartialEq for SExpr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl SExpr {
    pub fn new(kind: SExprKind, span: Span) -> Self {
        SExpr { kind, span }
    }

    pub fn symbol(name: &str) -> Self {
        SExpr::new(SExprKind::Symbol(name.to_string()), Span::default())
    }

    pub fn number(value: f64) -> Self {
        SExpr::new(SExprKind::Number(value), Span::default())
    }

    pub fn list(items: Vec<SExpr>) -> Self {
        SExpr::new(SExprKind::List(items), Span::default())
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match &self.kind {
            SExprKind::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match &self.kind {
            SExprKind::List(items) => Some(items),
            _ => None,
        }
    }

    /// Head symbol of a list form, e.g. `define` for `(define x 1)`.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|items| items.first()).and_then(SExpr::as_symbol)
    }

    pub fn is_form(&self, head: &str) -> bool {
        self.head() == Some(head)
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

/// Canonical single-line rendering.
pub fn print(expr: &SExpr) -> String {
    expr.to_string()
}

fn write_expr(f: &mut fmt::Formatter<'_>, expr: &SExpr) -> fmt::Result {
    match &expr.kind {
        SExprKind::Symbol(s) => f.write_str(s),
        SExprKind::Number(n) => write_number(f, *n),
        SExprKind::Bool(true) => f.write_str("true"),
        SExprKind::Bool(false) => f.write_str("false"),
        SExprKind::Str(s) => write_string(f, s),
        SExprKind::List(items) => {
            if items.len() == 2 && items[0].as_symbol() == Some("quote") {
                f.write_str("'")?;
                return write_expr(f, &items[1]);
            }
            f.write_str("(")?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(" ")?;
                }
                write_expr(f, item)?;
            }
            f.write_str(")")
        }
    }
}

/// Integers print without a decimal point; everything else uses the
/// shortest representation that reads back to the same float.
pub fn write_number(f: &mut dyn fmt::Write, n: f64) -> fmt::Result {
    if n.is_nan() {
        f.write_str("+nan.0")
    } else if n.is_infinite() {
        f.write_str(if n > 0.0 { "+inf.0" } else { "-inf.0" })
    } else {
        write!(f, "{}", n)
    }
}

pub fn format_number(n: f64) -> String {
    let mut s = String::new();
    let _ = write_number(&mut s, n);
    s
}

pub fn write_string(f: &mut dyn fmt::Write, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('"')
}

/// A `;` line comment with its span; `text` has the semicolons and one
/// following space removed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub span: Span,
    pub text: String,
}

/// A parsed source file: its top-level forms, its comments, and the
/// verbatim text they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceUnit {
    pub source: String,
    pub forms: Vec<SExpr>,
    pub comments: Vec<Comment>,
}

impl SourceUnit {
    /// Source text covered by `span`.
    pub fn slice(&self, span: Span) -> &str {
        &self.source[span.start..span.end]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnclosedList,
    UnexpectedClose(char),
    MismatchedClose { expected: char, found: char },
    UnterminatedString,
    BadEscape(char),
    IllegalToken(String),
    DanglingQuote,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnclosedList => f.write_str("unbalanced parentheses: list not closed before end of input"),
            ParseErrorKind::UnexpectedClose(c) => write!(f, "unbalanced parentheses: unexpected '{}'", c),
            ParseErrorKind::MismatchedClose { expected, found } => {
                write!(f, "mismatched delimiter: expected '{}', found '{}'", expected, found)
            }
            ParseErrorKind::UnterminatedString => f.write_str("unterminated string literal"),
            ParseErrorKind::BadEscape(c) => write!(f, "unsupported string escape '\\{}'", c),
            ParseErrorKind::IllegalToken(t) => write!(f, "illegal token '{}'", t),
            ParseErrorKind::DanglingQuote => f.write_str("quote with nothing to quote"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at line {line}, column {column}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
}

/// 1-based (line, column) of a byte offset.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let column = text[line_start..offset].chars().count() + 1;
    (line, column)
}

fn is_symbol_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '-' | '_' | '?' | '!' | '>' | '<' | '=' | '*' | '/' | '+' | '.' | '%' | '&' | ':' | '$' | '^' | '~')
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | '"' | ';' | '\'')
}

fn looks_numeric(token: &str) -> bool {
    let body = token.strip_prefix(['-', '+']).unwrap_or(token);
    let starts_ok = body.starts_with(|c: char| c.is_ascii_digit())
        || (body.starts_with('.') && body[1..].starts_with(|c: char| c.is_ascii_digit()));
    starts_ok && token.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'))
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    comments: Vec<Comment>,
}

impl<'a> Parser<'a> {
    fn error(&self, kind: ParseErrorKind, offset: usize) -> ParseError {
        let (line, column) = line_column(self.text, offset);
        ParseError { kind, offset, line, column }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                let start = self.pos;
                let end = self.text[start..].find('\n').map(|i| start + i).unwrap_or(self.text.len());
                let raw = &self.text[start..end];
                let body = raw.trim_start_matches(';');
                let body = body.strip_prefix(' ').unwrap_or(body);
                self.comments.push(Comment { span: Span::new(start, end), text: body.trim_end().to_string() });
                self.pos = end;
            } else {
                break;
            }
        }
    }

    fn parse_expr(&mut self) -> Result<SExpr, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.error(ParseErrorKind::UnclosedList, self.text.len())),
        };
        match c {
            '(' | '[' => {
                self.bump();
                let close = if c == '(' { ')' } else { ']' };
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.peek() {
                        None => return Err(self.error(ParseErrorKind::UnclosedList, self.text.len())),
                        Some(d @ (')' | ']')) => {
                            if d != close {
                                return Err(self.error(ParseErrorKind::MismatchedClose { expected: close, found: d }, self.pos));
                            }
                            self.bump();
                            return Ok(SExpr::new(SExprKind::List(items), Span::new(start, self.pos)));
                        }
                        Some(_) => items.push(self.parse_expr()?),
                    }
                }
            }
            ')' | ']' => Err(self.error(ParseErrorKind::UnexpectedClose(c), start)),
            '\'' => {
                self.bump();
                self.skip_trivia();
                match self.peek() {
                    None | Some(')') | Some(']') => return Err(self.error(ParseErrorKind::DanglingQuote, start)),
                    _ => {}
                }
                let quoted = self.parse_expr()?;
                let end = quoted.span.end;
                let quote = SExpr::new(SExprKind::Symbol("quote".to_string()), Span::new(start, start + 1));
                Ok(SExpr::new(SExprKind::List(alloc::vec![quote, quoted]), Span::new(start, end)))
            }
            '"' => self.parse_string(),
            _ => self.parse_atom(),
        }
    }

    fn parse_string(&mut self) -> Result<SExpr, ParseError> {
        let start = self.pos;
        self.bump();
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error(ParseErrorKind::UnterminatedString, start)),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some(c @ ('"' | '\\')) => value.push(c),
                    Some(c) => return Err(self.error(ParseErrorKind::BadEscape(c), self.pos - c.len_utf8() - 1)),
                    None => return Err(self.error(ParseErrorKind::UnterminatedString, start)),
                },
                Some(c) => value.push(c),
            }
        }
        Ok(SExpr::new(SExprKind::Str(value), Span::new(start, self.pos)))
    }

    fn parse_atom(&mut self) -> Result<SExpr, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_delimiter(c) {
                break;
            }
            self.bump();
        }
        let token = &self.text[start..self.pos];
        let span = Span::new(start, self.pos);
        let kind = match token {
            "true" | "#t" => SExprKind::Bool(true),
            "false" | "#f" => SExprKind::Bool(false),
            _ if looks_numeric(token) => match token.parse::<f64>() {
                Ok(n) => SExprKind::Number(n),
                Err(_) => return Err(self.error(ParseErrorKind::IllegalToken(token.to_string()), start)),
            },
            _ if token.chars().all(is_symbol_char) => SExprKind::Symbol(token.to_string()),
            _ => return Err(self.error(ParseErrorKind::IllegalToken(token.to_string()), start)),
        };
        Ok(SExpr::new(kind, span))
    }
}

/// Parses every top-level form in `text`.
pub fn parse(text: &str) -> Result<SourceUnit, ParseError> {
    let mut parser = Parser { text, pos: 0, comments: Vec::new() };
    let mut forms = Vec::new();
    loop {
        parser.skip_trivia();
        if parser.peek().is_none() {
            break;
        }
        forms.push(parser.parse_expr()?);
    }
    Ok(SourceUnit { source: text.to_string(), forms, comments: parser.comments })
}

/// Parses text that must contain exactly one form.
pub fn parse_one(text: &str) -> Result<SExpr, ParseError> {
    let unit = parse(text)?;
    let mut forms = unit.forms.into_iter();
    match (forms.next(), forms.next()) {
        (Some(form), None) => Ok(form),
        (None, _) => Err(ParseError { kind: ParseErrorKind::UnclosedList, offset: text.len(), line: 1, column: 1 }),
        (Some(_), Some(extra)) => {
            let (line, column) = line_column(text, extra.span.start);
            Err(ParseError {
                kind: ParseErrorKind::IllegalToken(format!("unexpected extra form {}", extra)),
                offset: extra.span.start,
                line,
                column,
            })
        }
    }
}

/// Utterance kinds, as written in `;; <Tag>: ...` comments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    Condition,
    Query,
    Define,
    ConstructFragment,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::Condition, Tag::Query, Tag::Define, Tag::ConstructFragment];

    /// The label used in comment lines.
    pub fn label(self) -> &'static str {
        match self {
            Tag::Condition => "Condition",
            Tag::Query => "Query",
            Tag::Define => "Define",
            Tag::ConstructFragment => "Construct",
        }
    }

    pub fn from_label(label: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.label().eq_ignore_ascii_case(label.trim()))
    }

    /// Splits `"Condition: Alice won."` into its tag and text.
    pub fn split_tagged(line: &str) -> Option<(Tag, &str)> {
        let (label, rest) = line.split_once(':')?;
        let tag = Tag::from_label(label)?;
        Some((tag, rest.trim()))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A tagged comment paired with the forms that follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedBlock {
    pub tag: Tag,
    pub text: String,
    pub forms: Vec<SExpr>,
    /// From the first form's start to the last form's end.
    pub code_span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("tagged comment `{label}: {text}` at line {line} has no following form")]
pub struct DanglingTagError {
    pub label: String,
    pub text: String,
    pub line: usize,
}

/// Pairs each `;; Condition:` / `;; Query:` / `;; Define:` / `;; Construct:`
/// comment with the top-level forms that follow it, up to the next tagged
/// comment. Untagged comments are skipped.
pub fn strip_prompt_forms(unit: &SourceUnit) -> Result<Vec<TaggedBlock>, DanglingTagError> {
    enum Item<'u> {
        Tagged(Tag, &'u str, Span),
        Form(&'u SExpr),
    }
    let mut items: Vec<(usize, Item<'_>)> = Vec::new();
    for comment in &unit.comments {
        if let Some((tag, text)) = Tag::split_tagged(&comment.text) {
            items.push((comment.span.start, Item::Tagged(tag, text, comment.span)));
        }
    }
    for form in &unit.forms {
        items.push((form.span.start, Item::Form(form)));
    }
    items.sort_by_key(|(pos, _)| *pos);

    let mut blocks: Vec<TaggedBlock> = Vec::new();
    let mut open: Option<(TaggedBlock, Span)> = None;
    let close = |open: Option<(TaggedBlock, Span)>, blocks: &mut Vec<TaggedBlock>| -> Result<(), DanglingTagError> {
        if let Some((block, comment_span)) = open {
            if block.forms.is_empty() {
                return Err(DanglingTagError {
                    label: block.tag.label().to_string(),
                    text: block.text,
                    line: line_column(&unit.source, comment_span.start).0,
                });
            }
            blocks.push(block);
        }
        Ok(())
    };
    for (_, item) in items {
        match item {
            Item::Tagged(tag, text, span) => {
                close(open.take(), &mut blocks)?;
                open = Some((TaggedBlock { tag, text: text.to_string(), forms: Vec::new(), code_span: Span::default() }, span));
            }
            Item::Form(form) => {
                if let Some((block, _)) = open.as_mut() {
                    if block.forms.is_empty() {
                        block.code_span.start = form.span.start;
                    }
                    block.code_span.end = form.span.end;
                    block.forms.push(form.clone());
                }
            }
        }
    }
    close(open, &mut blocks)?;
    Ok(blocks)
}
