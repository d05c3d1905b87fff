//! Path-pattern and constraint queries over XML documents or lines of text.
//!
//! ```text
//! query    := 'MATCH' path ('WHERE' expr)?  |  'LINES' ('WHERE' expr)?
//! path     := ('/' (NAME | '*'))+
//! expr     := and ('OR' and)*
//! and      := unary ('AND' unary)*
//! unary    := 'NOT' unary | '(' expr ')' | 'CONTAINS' '(' operand ',' operand ')'
//!           | operand CMP operand
//! operand  := '.' | '@' NAME | STRING | NUMBER
//! CMP      := '=' | '!=' | '<' | '<=' | '>' | '>='
//! ```
//!
//! Keywords are case-insensitive. A `*` step matches exactly one element.
//! `.` is the element's text content (or the line); `@x` an attribute and
//! only exists in `MATCH` queries. `=` and `!=` compare numerically when both
//! sides are decimal numbers and as strings otherwise; the ordering operators
//! require numbers on both sides. Comparisons against a missing attribute
//! are false. `CONTAINS` is a case-insensitive substring test.

use std::fmt;

use crate::wire::format_real;
use crate::xml;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Xml,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Name(String),
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Context,
    Attr(String),
    Str(String),
    Num(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Compare(Operand, CmpOp, Operand),
    Contains(Operand, Operand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub mode: Mode,
    /// Empty in text mode.
    pub pattern: Vec<Step>,
    pub constraint: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    /// `position` is the element's index in document order; `path` is the
    /// positional path such as `/doc[1]/item[2]`.
    Element { position: usize, path: String },
    /// 1-based line number.
    Line(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub location: Location,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub matches: Vec<Match>,
}

impl MatchResult {
    pub fn contents(&self) -> Vec<&str> {
        self.matches.iter().map(|m| m.content.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("query mode does not match the input")]
    WrongMode,
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Slash,
    Star,
    Dot,
    At,
    LParen,
    RParen,
    Comma,
    Cmp(CmpOp),
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

fn lex(source: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let chars: Vec<(usize, char)> = source.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |position: usize, message: &str| QueryError::Syntax {
        position,
        message: message.to_string(),
    };
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '/' => {
                out.push((pos, Tok::Slash));
                i += 1;
            }
            '*' => {
                out.push((pos, Tok::Star));
                i += 1;
            }
            '@' => {
                out.push((pos, Tok::At));
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((pos, Tok::Comma));
                i += 1;
            }
            '=' => {
                out.push((pos, Tok::Cmp(CmpOp::Eq)));
                i += 1;
            }
            '!' => {
                if chars.get(i + 1).map(|c| c.1) == Some('=') {
                    out.push((pos, Tok::Cmp(CmpOp::Ne)));
                    i += 2;
                } else {
                    return Err(err(pos, "expected != "));
                }
            }
            '<' | '>' => {
                let eq = chars.get(i + 1).map(|c| c.1) == Some('=');
                let op = match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                out.push((pos, Tok::Cmp(op)));
                i += if eq { 2 } else { 1 };
            }
            '"' => {
                let mut text = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(err(pos, "unterminated string")),
                        Some((_, '"')) => break,
                        Some((_, '\\')) => match chars.get(j + 1) {
                            Some((_, e @ ('"' | '\\'))) => {
                                text.push(*e);
                                j += 2;
                            }
                            _ => return Err(err(chars[j].0, "bad escape")),
                        },
                        Some((_, ch)) => {
                            text.push(*ch);
                            j += 1;
                        }
                    }
                }
                out.push((pos, Tok::Str(text)));
                i = j + 1;
            }
            '.' if !chars.get(i + 1).map_or(false, |c| c.1.is_ascii_digit()) => {
                out.push((pos, Tok::Dot));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_ascii_digit() || matches!(chars[j].1, '.' | 'e' | 'E')) {
                    // allow a sign right after an exponent marker
                    j += 1;
                    if matches!(chars[j - 1].1, 'e' | 'E') && matches!(chars.get(j).map(|c| c.1), Some('+' | '-')) {
                        j += 1;
                    }
                }
                let end = chars.get(j).map_or(source.len(), |c| c.0);
                let text = &source[pos..end];
                let value = parse_decimal(text).ok_or_else(|| err(pos, "bad number"))?;
                out.push((pos, Tok::Num(value)));
                i = j;
            }
            c if is_name_start(c) => {
                let mut j = i + 1;
                while j < chars.len() && is_name_char(chars[j].1) {
                    j += 1;
                }
                let end = chars.get(j).map_or(source.len(), |c| c.0);
                out.push((pos, Tok::Ident(source[pos..end].to_string())));
                i = j;
            }
            _ => return Err(err(pos, &format!("unexpected character {c:?}"))),
        }
    }
    Ok(out)
}

/// Decimal number in plain or exponent notation; no `inf`/`NaN`.
pub fn parse_decimal(text: &str) -> Option<f64> {
    let t = text.trim();
    let body = t.strip_prefix(['-', '+']).unwrap_or(t);
    if body.is_empty() || !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    if !body
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
    {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

// ---------------------------------------------------------------- parser

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    mode: Mode,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            position: self.here(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), QueryError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        let mode = if self.keyword("MATCH") {
            Mode::Xml
        } else if self.keyword("LINES") {
            Mode::Text
        } else {
            return self.error("expected MATCH or LINES");
        };
        self.mode = mode;
        self.pos += 1;
        let mut pattern = Vec::new();
        if mode == Mode::Xml {
            while self.peek() == Some(&Tok::Slash) {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Star) => pattern.push(Step::Any),
                    Some(Tok::Ident(name)) => pattern.push(Step::Name(name)),
                    _ => {
                        self.pos -= 1;
                        return self.error("expected element name or *");
                    }
                }
            }
            if pattern.is_empty() {
                return self.error("expected a path pattern");
            }
        }
        let constraint = if self.keyword("WHERE") {
            self.pos += 1;
            Some(self.or_expr()?)
        } else {
            None
        };
        if self.pos < self.toks.len() {
            return self.error("unexpected trailing input");
        }
        Ok(Query {
            mode,
            pattern,
            constraint,
        })
    }

    fn or_expr(&mut self) -> Result<Expr, QueryError> {
        let mut left = self.and_expr()?;
        while self.keyword("OR") {
            self.pos += 1;
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, QueryError> {
        let mut left = self.unary()?;
        while self.keyword("AND") {
            self.pos += 1;
            let right = self.unary()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, QueryError> {
        if self.keyword("NOT") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.or_expr()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(inner);
        }
        if self.keyword("CONTAINS") {
            self.pos += 1;
            self.expect(Tok::LParen, "(")?;
            let a = self.operand()?;
            self.expect(Tok::Comma, ",")?;
            let b = self.operand()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(Expr::Contains(a, b));
        }
        let left = self.operand()?;
        let op = match self.next() {
            Some(Tok::Cmp(op)) => op,
            _ => {
                self.pos -= 1;
                return self.error("expected a comparison operator");
            }
        };
        let right = self.operand()?;
        Ok(Expr::Compare(left, op, right))
    }

    fn operand(&mut self) -> Result<Operand, QueryError> {
        match self.next() {
            Some(Tok::Dot) => Ok(Operand::Context),
            Some(Tok::Str(s)) => Ok(Operand::Str(s)),
            Some(Tok::Num(n)) => Ok(Operand::Num(n)),
            Some(Tok::At) => {
                if self.mode == Mode::Text {
                    self.pos -= 1;
                    return self.error("attributes are not available on lines");
                }
                match self.next() {
                    Some(Tok::Ident(name)) => Ok(Operand::Attr(name)),
                    _ => {
                        self.pos -= 1;
                        self.error("expected attribute name")
                    }
                }
            }
            _ => {
                self.pos -= 1;
                self.error("expected an operand")
            }
        }
    }
}

pub fn parse_query(source: &str) -> Result<Query, QueryError> {
    let toks = lex(source)?;
    Parser {
        toks,
        pos: 0,
        end: source.len(),
        mode: Mode::Xml,
    }
    .query()
}

impl std::str::FromStr for Query {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}

// ---------------------------------------------------------------- printing

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Context => f.write_str("."),
            Operand::Attr(a) => write!(f, "@{a}"),
            Operand::Str(s) => f.write_str(&quote(s)),
            Operand::Num(n) => f.write_str(&format_real(*n)),
        }
    }
}

impl Expr {
    fn write_child(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::And(..) | Expr::Or(..) => write!(f, "({self})"),
            _ => write!(f, "{self}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.write_child(f)?;
                f.write_str(if matches!(self, Expr::And(..)) { " AND " } else { " OR " })?;
                b.write_child(f)
            }
            Expr::Not(inner) => {
                f.write_str("NOT ")?;
                inner.write_child(f)
            }
            Expr::Compare(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Expr::Contains(a, b) => write!(f, "CONTAINS({a}, {b})"),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Mode::Xml => {
                f.write_str("MATCH ")?;
                for step in &self.pattern {
                    match step {
                        Step::Any => f.write_str("/*")?,
                        Step::Name(n) => write!(f, "/{n}")?,
                    }
                }
            }
            Mode::Text => f.write_str("LINES")?,
        }
        if let Some(c) = &self.constraint {
            write!(f, " WHERE {c}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- evaluation

/// What `.` and `@x` resolve to for one candidate.
pub trait Context {
    fn text(&self) -> &str;
    fn attr(&self, name: &str) -> Option<&str>;
}

struct LineContext<'a>(&'a str);

impl Context for LineContext<'_> {
    fn text(&self) -> &str {
        self.0
    }
    fn attr(&self, _: &str) -> Option<&str> {
        None
    }
}

struct ElementContext<'a, 'i> {
    node: roxmltree::Node<'a, 'i>,
    text: String,
}

impl Context for ElementContext<'_, '_> {
    fn text(&self) -> &str {
        &self.text
    }
    fn attr(&self, name: &str) -> Option<&str> {
        self.node.attribute(name)
    }
}

fn resolve<'c>(operand: &'c Operand, ctx: &'c dyn Context) -> Option<std::borrow::Cow<'c, str>> {
    use std::borrow::Cow;
    match operand {
        Operand::Context => Some(Cow::Borrowed(ctx.text())),
        Operand::Attr(a) => ctx.attr(a).map(Cow::Borrowed),
        Operand::Str(s) => Some(Cow::Borrowed(s)),
        Operand::Num(n) => Some(Cow::Owned(format_real(*n))),
    }
}

fn numeric(operand: &Operand, text: &str) -> Option<f64> {
    match operand {
        Operand::Num(n) => Some(*n),
        _ => parse_decimal(text),
    }
}

impl Expr {
    pub fn eval(&self, ctx: &dyn Context) -> Result<bool, QueryError> {
        match self {
            Expr::And(a, b) => Ok(a.eval(ctx)? && b.eval(ctx)?),
            Expr::Or(a, b) => Ok(a.eval(ctx)? || b.eval(ctx)?),
            Expr::Not(a) => Ok(!a.eval(ctx)?),
            Expr::Contains(a, b) => Ok(match (resolve(a, ctx), resolve(b, ctx)) {
                (Some(hay), Some(needle)) => hay.to_lowercase().contains(&needle.to_lowercase()),
                _ => false,
            }),
            Expr::Compare(a, op, b) => {
                let (Some(left), Some(right)) = (resolve(a, ctx), resolve(b, ctx)) else {
                    return Ok(false);
                };
                let nums = (numeric(a, &left), numeric(b, &right));
                if op.is_ordering() {
                    let (Some(x), Some(y)) = nums else {
                        return Err(QueryError::TypeMismatch(format!(
                            "{:?} {} {:?} needs numbers",
                            left,
                            op.symbol(),
                            right
                        )));
                    };
                    return Ok(match op {
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Gt => x > y,
                        _ => x >= y,
                    });
                }
                let equal = match nums {
                    (Some(x), Some(y)) => x == y,
                    _ => left == right,
                };
                Ok(if *op == CmpOp::Eq { equal } else { !equal })
            }
        }
    }
}

fn step_matches(step: &Step, name: &str) -> bool {
    match step {
        Step::Any => true,
        Step::Name(n) => n == name,
    }
}

/// Text content: every descendant text node in document order.
pub fn element_text(node: roxmltree::Node<'_, '_>) -> String {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect()
}

pub fn eval_xml(query: &Query, document: &str) -> Result<MatchResult, QueryError> {
    if query.mode != Mode::Xml {
        return Err(QueryError::WrongMode);
    }
    let doc = xml::parse_document(document).map_err(|e| QueryError::MalformedXml(e.0))?;
    let mut result = MatchResult::default();
    let elements = doc.root_element().descendants().filter(|n| n.is_element());
    for (position, node) in elements.enumerate() {
        // the element itself first, the root last
        let chain: Vec<_> = node.ancestors().filter(|n| n.is_element()).collect();
        if chain.len() != query.pattern.len()
            || !chain
                .iter()
                .rev()
                .zip(&query.pattern)
                .all(|(n, step)| step_matches(step, n.tag_name().name()))
        {
            continue;
        }
        let ctx = ElementContext {
            node,
            text: element_text(node),
        };
        let keep = match &query.constraint {
            None => true,
            Some(c) => c.eval(&ctx)?,
        };
        if keep {
            result.matches.push(Match {
                location: Location::Element {
                    position,
                    path: positional_path(&chain),
                },
                content: ctx.text,
            });
        }
    }
    Ok(result)
}

fn positional_path(chain: &[roxmltree::Node<'_, '_>]) -> String {
    let mut path = String::new();
    for node in chain.iter().rev() {
        let name = node.tag_name().name();
        // prev_siblings() starts at the node itself
        let index = node
            .prev_siblings()
            .filter(|s| s.is_element() && s.tag_name().name() == name)
            .count();
        path.push_str(&format!("/{name}[{index}]"));
    }
    path
}

pub fn eval_text<S: AsRef<str>>(query: &Query, lines: &[S]) -> Result<MatchResult, QueryError> {
    if query.mode != Mode::Text {
        return Err(QueryError::WrongMode);
    }
    let mut result = MatchResult::default();
    for (i, line) in lines.iter().enumerate() {
        let line = line.as_ref();
        let keep = match &query.constraint {
            None => true,
            Some(c) => c.eval(&LineContext(line))?,
        };
        if keep {
            result.matches.push(Match {
                location: Location::Line(i + 1),
                content: line.to_string(),
            });
        }
    }
    Ok(result)
}

/// Runs a query against a blob of text in whichever mode the query uses.
pub fn eval_str(query: &Query, content: &str) -> Result<MatchResult, QueryError> {
    match query.mode {
        Mode::Xml => eval_xml(query, content),
        Mode::Text => {
            let lines: Vec<&str> = content.lines().collect();
            eval_text(query, &lines)
        }
    }
}
