//! Line-oriented protocol description language.
//!
//! ```text
//! #! name=ladder m=4 start=s0        # metadata directive (optional)
//! states s0 s1 s2 s3                 # declares Q in index order
//! input a = s0                       # one line per input symbol (optional)
//! output s0 = 1                      # required for every state
//! s0 s0 -> s1 s0                     # rule for the ordered pair (s0, s0)
//! sym A B -> C D                     # expands to (A,B)->(C,D) and (B,A)->(D,C)
//! ```
//!
//! `#` starts a comment. Lines beginning with `#!` are metadata directives
//! carrying `key=value` tokens; `name` and `start` are interpreted, all other
//! keys land in the parameter record. State names are bare identifiers.
//! Unspecified ordered pairs take the identity transition. Output assignments
//! may be written `output A = 1` or compactly `output A=1 B=0`.

use std::fmt;

use thiserror::Error;

use super::{BuildError, ProtocolBuilder, ProtocolSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownState(String),
    DuplicateState(String),
    DuplicateRule(String, String),
    DuplicateOutput(String),
    DuplicateInput(String),
    MissingOutput(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(msg) => write!(f, "{msg}"),
            ParseErrorKind::UnknownState(s) => write!(f, "unknown state `{s}`"),
            ParseErrorKind::DuplicateState(s) => write!(f, "duplicate state name `{s}`"),
            ParseErrorKind::DuplicateRule(a, b) => {
                write!(f, "duplicate rule for the ordered pair ({a}, {b})")
            }
            ParseErrorKind::DuplicateOutput(s) => {
                write!(f, "duplicate output assignment for state `{s}`")
            }
            ParseErrorKind::DuplicateInput(s) => write!(f, "duplicate input symbol `{s}`"),
            ParseErrorKind::MissingOutput(s) => {
                write!(f, "missing output assignment for state `{s}`")
            }
        }
    }
}

/// Parse failure with 1-based line and column of the offending token.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(line: usize, column: usize, kind: ParseErrorKind) -> Self {
        ParseError { line, column, kind }
    }

    fn syntax(line: usize, column: usize, msg: impl Into<String>) -> Self {
        ParseError::new(line, column, ParseErrorKind::Syntax(msg.into()))
    }
}

/// Atomic piece of a line: a word, `=`, or `->`, with its 1-based column.
#[derive(Debug, Clone, Copy)]
struct Piece<'a> {
    text: &'a str,
    column: usize,
}

const RESERVED: [&str; 4] = ["states", "input", "output", "sym"];

fn is_identifier(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !RESERVED.contains(&token)
}

/// Splits one whitespace-delimited chunk into words and `=` / `->` separators.
fn flush_chunk<'a>(out: &mut Vec<Piece<'a>>, line: &'a str, start: usize, end: usize) {
    let mut cursor = start;
    while cursor < end {
        let rest = &line[cursor..end];
        let arrow = rest.find("->").map(|p| (p, 2));
        let equals = rest.find('=').map(|p| (p, 1));
        match [arrow, equals].into_iter().flatten().min() {
            Some((p, len)) => {
                if p > 0 {
                    out.push(Piece {
                        text: &line[cursor..cursor + p],
                        column: cursor + 1,
                    });
                }
                out.push(Piece {
                    text: &line[cursor + p..cursor + p + len],
                    column: cursor + p + 1,
                });
                cursor += p + len;
            }
            None => {
                out.push(Piece {
                    text: &line[cursor..end],
                    column: cursor + 1,
                });
                break;
            }
        }
    }
}

/// Splits a comment-stripped line into words and the separators `=` / `->`.
fn pieces(line: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = word_start.take() {
                flush_chunk(&mut out, line, start, i);
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(start) = word_start {
        flush_chunk(&mut out, line, start, line.len());
    }
    out
}

#[derive(Debug)]
struct Assignment<'a> {
    key: Piece<'a>,
    value: Piece<'a>,
}

fn parse_assignments<'a>(
    line_no: usize,
    pieces: &[Piece<'a>],
) -> Result<Vec<Assignment<'a>>, ParseError> {
    let mut out = Vec::new();
    let mut iter = pieces.iter();
    while let Some(key) = iter.next() {
        if key.text == "=" || key.text == "->" {
            return Err(ParseError::syntax(line_no, key.column, "expected a name"));
        }
        match iter.next() {
            Some(eq) if eq.text == "=" => {}
            Some(other) => {
                return Err(ParseError::syntax(line_no, other.column, "expected `=`"));
            }
            None => {
                return Err(ParseError::syntax(
                    line_no,
                    key.column + key.text.len(),
                    "expected `=`",
                ));
            }
        }
        match iter.next() {
            Some(value) if value.text != "=" && value.text != "->" => {
                out.push(Assignment { key: *key, value: *value });
            }
            Some(other) => {
                return Err(ParseError::syntax(line_no, other.column, "expected a value"));
            }
            None => {
                return Err(ParseError::syntax(
                    line_no,
                    key.column + key.text.len() + 1,
                    "expected a value",
                ));
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct RawRule {
    line: usize,
    column: usize,
    symmetric: bool,
    names: [(String, usize); 4],
}

#[derive(Debug, Default)]
struct RawProtocol {
    states: Vec<(String, usize, usize)>,
    inputs: Vec<(String, usize, String, usize, usize)>,
    outputs: Vec<(String, usize, bool, usize)>,
    rules: Vec<RawRule>,
    name: Option<String>,
    params: Vec<(String, String)>,
    start: Option<(String, usize, usize)>,
}

fn parse_rule_line(
    line_no: usize,
    pieces: &[Piece<'_>],
    symmetric: bool,
) -> Result<RawRule, ParseError> {
    let tail_column = pieces.last().map(|p| p.column + p.text.len()).unwrap_or(1);
    let name_at = |i: usize| -> Result<(String, usize), ParseError> {
        match pieces.get(i) {
            Some(p) if p.text != "=" && p.text != "->" => Ok((p.text.to_string(), p.column)),
            Some(p) => Err(ParseError::syntax(line_no, p.column, "expected a state name")),
            None => Err(ParseError::syntax(line_no, tail_column, "expected a state name")),
        }
    };
    let a = name_at(0)?;
    let b = name_at(1)?;
    match pieces.get(2) {
        Some(p) if p.text == "->" => {}
        Some(p) => return Err(ParseError::syntax(line_no, p.column, "expected `->`")),
        None => return Err(ParseError::syntax(line_no, tail_column, "expected `->`")),
    }
    let c = name_at(3)?;
    let d = name_at(4)?;
    if let Some(extra) = pieces.get(5) {
        return Err(ParseError::syntax(
            line_no,
            extra.column,
            "unexpected trailing token",
        ));
    }
    Ok(RawRule {
        line: line_no,
        column: pieces[0].column,
        symmetric,
        names: [a, b, c, d],
    })
}

fn parse_lines(text: &str) -> Result<RawProtocol, ParseError> {
    let mut raw = RawProtocol::default();
    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = full_line.trim_start();
        if trimmed.starts_with("#!") {
            let offset = full_line.len() - trimmed.len() + 2;
            let body = &full_line[offset..];
            for piece in body.split_whitespace() {
                let column = full_line.find(piece).map(|p| p + 1).unwrap_or(offset + 1);
                let (key, value) = piece.split_once('=').ok_or_else(|| {
                    ParseError::syntax(line_no, column, "expected key=value in directive")
                })?;
                if key.is_empty() || value.is_empty() {
                    return Err(ParseError::syntax(
                        line_no,
                        column,
                        "expected key=value in directive",
                    ));
                }
                match key {
                    "name" => raw.name = Some(value.to_string()),
                    "start" => {
                        raw.start =
                            Some((value.to_string(), line_no, column + key.len() + 1));
                    }
                    _ => raw.params.push((key.to_string(), value.to_string())),
                }
            }
            continue;
        }
        let content = match full_line.find('#') {
            Some(pos) => &full_line[..pos],
            None => full_line,
        };
        let pieces = pieces(content);
        if pieces.is_empty() {
            continue;
        }
        match pieces[0].text {
            "states" => {
                if pieces.len() == 1 {
                    return Err(ParseError::syntax(
                        line_no,
                        pieces[0].column + pieces[0].text.len(),
                        "expected at least one state name",
                    ));
                }
                for piece in &pieces[1..] {
                    if !is_identifier(piece.text) {
                        return Err(ParseError::syntax(
                            line_no,
                            piece.column,
                            format!("`{}` is not a valid state name", piece.text),
                        ));
                    }
                    raw.states.push((piece.text.to_string(), line_no, piece.column));
                }
            }
            "input" => {
                let assignments = parse_assignments(line_no, &pieces[1..])?;
                match assignments.as_slice() {
                    [a] => raw.inputs.push((
                        a.key.text.to_string(),
                        a.key.column,
                        a.value.text.to_string(),
                        a.value.column,
                        line_no,
                    )),
                    [] => {
                        return Err(ParseError::syntax(
                            line_no,
                            pieces[0].column,
                            "expected `input <symbol> = <state>`",
                        ))
                    }
                    [_, second, ..] => {
                        return Err(ParseError::syntax(
                            line_no,
                            second.key.column,
                            "one input assignment per line",
                        ))
                    }
                }
            }
            "output" => {
                let assignments = parse_assignments(line_no, &pieces[1..])?;
                if assignments.is_empty() {
                    return Err(ParseError::syntax(
                        line_no,
                        pieces[0].column,
                        "expected `output <state> = 0|1`",
                    ));
                }
                for a in assignments {
                    let bit = match a.value.text {
                        "0" => false,
                        "1" => true,
                        _ => {
                            return Err(ParseError::syntax(
                                line_no,
                                a.value.column,
                                "expected output bit 0 or 1",
                            ))
                        }
                    };
                    raw.outputs
                        .push((a.key.text.to_string(), a.key.column, bit, line_no));
                }
            }
            "sym" => raw.rules.push(parse_rule_line(line_no, &pieces[1..], true)?),
            _ => raw.rules.push(parse_rule_line(line_no, &pieces, false)?),
        }
    }
    Ok(raw)
}

/// Parses DSL source into a protocol with a total transition table.
pub fn parse_protocol(text: &str) -> Result<ProtocolSpec, ParseError> {
    let raw = parse_lines(text)?;
    if raw.states.is_empty() {
        let (line, column) = raw
            .rules
            .first()
            .map(|r| (r.line, r.column))
            .unwrap_or((1, 1));
        return Err(ParseError::syntax(line, column, "no states declared"));
    }
    for (i, (name, line, column)) in raw.states.iter().enumerate() {
        if raw.states[..i].iter().any(|(other, _, _)| other == name) {
            return Err(ParseError::new(
                *line,
                *column,
                ParseErrorKind::DuplicateState(name.clone()),
            ));
        }
    }
    let mut builder = ProtocolBuilder::new(raw.states.iter().map(|(n, _, _)| n.clone()))
        .expect("states validated");
    let lookup = |builder: &ProtocolBuilder, name: &str, line: usize, column: usize| {
        builder.state(name).ok_or_else(|| {
            ParseError::new(line, column, ParseErrorKind::UnknownState(name.to_string()))
        })
    };
    for (state, column, bit, line) in &raw.outputs {
        let s = lookup(&builder, state, *line, *column)?;
        builder.output(s, *bit).map_err(|_| {
            ParseError::new(*line, *column, ParseErrorKind::DuplicateOutput(state.clone()))
        })?;
    }
    for (symbol, sym_column, state, state_column, line) in &raw.inputs {
        let s = lookup(&builder, state, *line, *state_column)?;
        builder.input(symbol.clone(), s).map_err(|_| {
            ParseError::new(*line, *sym_column, ParseErrorKind::DuplicateInput(symbol.clone()))
        })?;
    }
    for rule in &raw.rules {
        let [a, b, c, d] = &rule.names;
        let sa = lookup(&builder, &a.0, rule.line, a.1)?;
        let sb = lookup(&builder, &b.0, rule.line, b.1)?;
        let sc = lookup(&builder, &c.0, rule.line, c.1)?;
        let sd = lookup(&builder, &d.0, rule.line, d.1)?;
        let result = if rule.symmetric {
            builder.sym_rule(sa, sb, (sc, sd))
        } else {
            builder.rule(sa, sb, (sc, sd))
        };
        result.map_err(|e| match e {
            BuildError::DuplicateRule(x, y) => ParseError::new(
                rule.line,
                rule.column,
                ParseErrorKind::DuplicateRule(x, y),
            ),
            other => ParseError::syntax(rule.line, rule.column, other.to_string()),
        })?;
    }
    if let Some(name) = raw.name {
        builder.protocol_name(name);
    }
    for (key, value) in raw.params {
        builder.param(key, value);
    }
    if let Some((state, line, column)) = raw.start {
        let s = lookup(&builder, &state, line, column)?;
        builder.start(s);
    }
    builder.build().map_err(|e| match e {
        BuildError::MissingOutput(state) => {
            let (line, column) = raw
                .states
                .iter()
                .find(|(n, _, _)| *n == state)
                .map(|(_, l, c)| (*l, *c))
                .unwrap_or((1, 1));
            ParseError::new(line, column, ParseErrorKind::MissingOutput(state))
        }
        other => ParseError::syntax(1, 1, other.to_string()),
    })
}

/// Renders a protocol to DSL source. `parse_protocol(emit(p))` equals `p`.
pub fn emit(protocol: &ProtocolSpec) -> String {
    let mut out = String::new();
    let meta = protocol.metadata();
    if !meta.name.is_empty() || !meta.params.is_empty() || meta.start.is_some() {
        out.push_str("#!");
        if !meta.name.is_empty() {
            out.push_str(&format!(" name={}", meta.name));
        }
        for (key, value) in &meta.params {
            out.push_str(&format!(" {key}={value}"));
        }
        if let Some(start) = meta.start {
            out.push_str(&format!(" start={}", protocol.name(start)));
        }
        out.push('\n');
    }
    out.push_str("states");
    for s in protocol.states() {
        out.push(' ');
        out.push_str(protocol.name(s));
    }
    out.push('\n');
    for (symbol, s) in protocol.input_alphabet() {
        out.push_str(&format!("input {symbol} = {}\n", protocol.name(s)));
    }
    for s in protocol.states() {
        out.push_str(&format!(
            "output {} = {}\n",
            protocol.name(s),
            u8::from(protocol.output(s))
        ));
    }
    for a in protocol.states() {
        for b in protocol.states() {
            if protocol.is_identity(a, b) {
                continue;
            }
            let (c, d) = protocol.transition(a, b);
            out.push_str(&format!(
                "{} {} -> {} {}\n",
                protocol.name(a),
                protocol.name(b),
                protocol.name(c),
                protocol.name(d)
            ));
        }
    }
    out
}
