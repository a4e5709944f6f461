//! The statement language used by workloads and scripts: a handful of SQL
//! forms plus the placeholder tags that workloads use to vary their rows.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Column, ColumnType, TableSchema};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unsupported statement: {0}")]
    UnsupportedStatement(String),
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invalid placeholder: {0}")]
    InvalidPlaceholder(String),
    #[error("workload is empty")]
    EmptyWorkload,
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<ParseError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    LoopCounter,
    LastLoopCounter,
    GeneratedString,
    GeneratedLong,
}

impl Placeholder {
    const ALL: [Placeholder; 4] = [
        Placeholder::LoopCounter,
        Placeholder::LastLoopCounter,
        Placeholder::GeneratedString,
        Placeholder::GeneratedLong,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Placeholder::LoopCounter => "<loop-counter/>",
            Placeholder::LastLoopCounter => "<last-loop-counter/>",
            Placeholder::GeneratedString => "<generated-string/>",
            Placeholder::GeneratedLong => "<generated-long/>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Integer(i64),
    Text(String),
    Placeholder(Placeholder),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Integer(i) => write!(f, "{i}"),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Placeholder(p) => f.write_str(p.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Greater { column: String, value: Literal },
    Equal { column: String, value: Literal },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Statement {
    CreateTable { if_not_exists: bool, schema: TableSchema },
    DropTable { if_exists: bool, name: String },
    Insert { table: String, values: Vec<Literal> },
    Select { table: String, predicate: Option<Predicate> },
    Delete { table: String, predicate: Option<Predicate> },
    SetAutocommit { on: bool },
    Commit,
    MigrateSystemTable { no_replicate: bool },
    MigrateTableManager { table: String },
    Sleep { millis: u64 },
}

impl Statement {
    /// Table touched by a data statement.
    pub fn table(&self) -> Option<&str> {
        match self {
            Statement::Insert { table, .. } | Statement::Select { table, .. } | Statement::Delete { table, .. } => {
                Some(table)
            }
            _ => None,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, Statement::Insert { .. } | Statement::Delete { .. })
    }

    pub fn has_placeholders(&self) -> bool {
        let lit = |l: &Literal| matches!(l, Literal::Placeholder(_));
        match self {
            Statement::Insert { values, .. } => values.iter().any(lit),
            Statement::Select { predicate: Some(p), .. } | Statement::Delete { predicate: Some(p), .. } => match p {
                Predicate::Greater { value, .. } | Predicate::Equal { value, .. } => lit(value),
            },
            _ => false,
        }
    }

    /// Substitute every placeholder literal.
    pub fn expand(&self, state: &mut LoopState) -> Result<Statement, ParseError> {
        let sub = |l: &Literal, state: &mut LoopState| -> Result<Literal, ParseError> {
            match l {
                Literal::Placeholder(p) => state.draw(*p),
                other => Ok(other.clone()),
            }
        };
        let sub_pred = |p: &Option<Predicate>, state: &mut LoopState| -> Result<Option<Predicate>, ParseError> {
            Ok(match p {
                None => None,
                Some(Predicate::Greater { column, value }) => {
                    Some(Predicate::Greater { column: column.clone(), value: sub(value, state)? })
                }
                Some(Predicate::Equal { column, value }) => {
                    Some(Predicate::Equal { column: column.clone(), value: sub(value, state)? })
                }
            })
        };
        Ok(match self {
            Statement::Insert { table, values } => Statement::Insert {
                table: table.clone(),
                values: values.iter().map(|v| sub(v, state)).collect::<Result<_, _>>()?,
            },
            Statement::Select { table, predicate } => {
                Statement::Select { table: table.clone(), predicate: sub_pred(predicate, state)? }
            }
            Statement::Delete { table, predicate } => {
                Statement::Delete { table: table.clone(), predicate: sub_pred(predicate, state)? }
            }
            other => other.clone(),
        })
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Loop position and random stream used for placeholder expansion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LoopState {
    pub iteration: u64,
    pub rng_seed: u64,
    pub rng_stream_position: u64,
}

impl LoopState {
    pub fn new(rng_seed: u64) -> Self {
        LoopState { iteration: 0, rng_seed, rng_stream_position: 0 }
    }

    // Each random draw gets its own ChaCha stream, so a value depends only
    // on (seed, position).
    fn rng(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.rng_stream_position);
        self.rng_stream_position += 1;
        rng
    }

    pub fn draw(&mut self, p: Placeholder) -> Result<Literal, ParseError> {
        match p {
            Placeholder::LoopCounter => Ok(Literal::Integer(self.iteration as i64)),
            Placeholder::LastLoopCounter => {
                if self.iteration == 0 {
                    return Err(ParseError::InvalidPlaceholder("<last-loop-counter/> at iteration 0".into()));
                }
                Ok(Literal::Integer(self.iteration as i64 - 1))
            }
            Placeholder::GeneratedString => Ok(Literal::Text(random_string(&mut self.rng()))),
            Placeholder::GeneratedLong => Ok(Literal::Integer(self.rng().gen_range(0..=i64::MAX))),
        }
    }
}

pub fn random_string(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(8..=40);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Textual placeholder expansion. Generated strings come out quoted so the
/// result is a valid statement.
pub fn expand_placeholders(template: &str, state: &mut LoopState) -> Result<String, ParseError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(i) = rest.find('<') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        for p in Placeholder::ALL {
            if let Some(after) = rest.strip_prefix(p.tag()) {
                out.push_str(&state.draw(p)?.to_string());
                rest = after;
                continue 'scan;
            }
        }
        out.push('<');
        rest = &rest[1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Int(i64),
    Str(String),
    Sym(char),
    Tag(Placeholder),
    Sleep(u64),
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Token::Word(text[s..i].to_string()));
        } else if c.is_ascii_digit() || (c == b'-' && b.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let s = i;
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let n = text[s..i].parse().map_err(|_| ParseError::Syntax(format!("integer out of range: {}", &text[s..i])))?;
            out.push(Token::Int(n));
        } else if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err(ParseError::Syntax("unterminated string".into())),
                    Some(b'\'') if b.get(i + 1) == Some(&b'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some(b'\'') => {
                        i += 1;
                        break;
                    }
                    Some(_) => {
                        let ch = text[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push(Token::Str(s));
        } else if c == b'<' {
            let rest = &text[i..];
            if let Some(p) = Placeholder::ALL.into_iter().find(|p| rest.starts_with(p.tag())) {
                out.push(Token::Tag(p));
                i += p.tag().len();
            } else if let Some(body) = rest.strip_prefix("<sleep>") {
                let end = body.find("</sleep>").ok_or_else(|| ParseError::Syntax("unterminated <sleep>".into()))?;
                let n = body[..end]
                    .trim()
                    .parse()
                    .map_err(|_| ParseError::Syntax(format!("bad sleep value `{}`", &body[..end])))?;
                out.push(Token::Sleep(n));
                i += "<sleep>".len() + end + "</sleep>".len();
            } else {
                out.push(Token::Sym('<'));
                i += 1;
            }
        } else if b"(),*=>;".contains(&c) {
            out.push(Token::Sym(c as char));
            i += 1;
        } else {
            return Err(ParseError::Syntax(format!("unexpected character `{}`", text[i..].chars().next().unwrap())));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(ParseError::Syntax(format!("expected {kw}, found {:?}", self.peek())))
        }
    }

    fn sym(&mut self, c: char) -> Result<(), ParseError> {
        match self.next() {
            Some(Token::Sym(s)) if s == c => Ok(()),
            other => Err(ParseError::Syntax(format!("expected `{c}`, found {other:?}"))),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Token::Word(w)) => Ok(w),
            other => Err(ParseError::Syntax(format!("expected identifier, found {other:?}"))),
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.next() {
            Some(Token::Int(i)) => Ok(Literal::Integer(i)),
            Some(Token::Str(s)) => Ok(Literal::Text(s)),
            Some(Token::Tag(p)) => Ok(Literal::Placeholder(p)),
            other => Err(ParseError::Syntax(format!("expected literal, found {other:?}"))),
        }
    }

    fn int_literal(&mut self) -> Result<Literal, ParseError> {
        match self.literal()? {
            Literal::Text(s) => Err(ParseError::Syntax(format!("predicate needs an integer, found '{s}'"))),
            other => Ok(other),
        }
    }

    fn column_type(&mut self) -> Result<ColumnType, ParseError> {
        let w = self.ident()?;
        match w.to_ascii_lowercase().as_str() {
            "int" | "integer" => Ok(ColumnType::Int),
            "bigint" => Ok(ColumnType::BigInt),
            "varchar" => {
                self.sym('(')?;
                let n = match self.next() {
                    Some(Token::Int(n)) if n > 0 => n as usize,
                    other => return Err(ParseError::Syntax(format!("bad varchar length {other:?}"))),
                };
                self.sym(')')?;
                Ok(ColumnType::Varchar(n))
            }
            _ => Err(ParseError::Syntax(format!("unknown column type `{w}`"))),
        }
    }

    fn columns(&mut self) -> Result<Vec<Column>, ParseError> {
        let mut cols = Vec::new();
        loop {
            let name = self.ident()?;
            let ty = self.column_type()?;
            if cols.iter().any(|c: &Column| c.name.eq_ignore_ascii_case(&name)) {
                return Err(ParseError::Syntax(format!("duplicate column `{name}`")));
            }
            cols.push(Column { name, ty });
            if !self.eat_sym(',') {
                return Ok(cols);
            }
        }
    }

    fn predicate(&mut self) -> Result<Option<Predicate>, ParseError> {
        if !self.eat_keyword("WHERE") {
            return Ok(None);
        }
        let column = self.ident()?;
        match self.next() {
            Some(Token::Sym('>')) => Ok(Some(Predicate::Greater { column, value: self.int_literal()? })),
            Some(Token::Sym('=')) => Ok(Some(Predicate::Equal { column, value: self.int_literal()? })),
            other => Err(ParseError::UnsupportedStatement(format!("predicate operator {other:?}"))),
        }
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        let head = match self.peek() {
            Some(Token::Sleep(ms)) => {
                let millis = *ms;
                self.pos += 1;
                return Ok(Statement::Sleep { millis });
            }
            Some(Token::Word(w)) => w.to_ascii_uppercase(),
            other => return Err(ParseError::Syntax(format!("expected a statement, found {other:?}"))),
        };
        self.pos += 1;
        match head.as_str() {
            "CREATE" => {
                self.keyword("TABLE")?;
                let if_not_exists = if self.eat_keyword("IF") {
                    self.keyword("NOT")?;
                    self.keyword("EXISTS")?;
                    true
                } else {
                    false
                };
                let name = self.ident()?;
                self.sym('(')?;
                let columns = self.columns()?;
                self.sym(')')?;
                Ok(Statement::CreateTable { if_not_exists, schema: TableSchema { name, columns } })
            }
            "DROP" => {
                self.keyword("TABLE")?;
                let if_exists = if self.eat_keyword("IF") {
                    self.keyword("EXISTS")?;
                    true
                } else {
                    false
                };
                Ok(Statement::DropTable { if_exists, name: self.ident()? })
            }
            "INSERT" => {
                self.keyword("INTO")?;
                let table = self.ident()?;
                self.keyword("VALUES")?;
                self.sym('(')?;
                let mut values = vec![self.literal()?];
                while self.eat_sym(',') {
                    values.push(self.literal()?);
                }
                self.sym(')')?;
                Ok(Statement::Insert { table, values })
            }
            "SELECT" => {
                self.sym('*')?;
                self.keyword("FROM")?;
                let table = self.ident()?;
                Ok(Statement::Select { table, predicate: self.predicate()? })
            }
            "DELETE" => {
                self.keyword("FROM")?;
                let table = self.ident()?;
                Ok(Statement::Delete { table, predicate: self.predicate()? })
            }
            "SET" => {
                self.keyword("AUTOCOMMIT")?;
                if self.eat_keyword("ON") || self.eat_keyword("TRUE") {
                    Ok(Statement::SetAutocommit { on: true })
                } else if self.eat_keyword("OFF") || self.eat_keyword("FALSE") {
                    Ok(Statement::SetAutocommit { on: false })
                } else {
                    Err(ParseError::Syntax("expected ON or OFF".into()))
                }
            }
            "COMMIT" => Ok(Statement::Commit),
            "MIGRATE" => {
                if self.eat_keyword("SYSTEMTABLE") || (self.eat_keyword("SYSTEM") && self.eat_keyword("TABLE")) {
                    Ok(Statement::MigrateSystemTable { no_replicate: self.eat_keyword("NO_REPLICATE") })
                } else if self.eat_keyword("TABLEMANAGER") || (self.eat_keyword("TABLE") && self.eat_keyword("MANAGER")) {
                    Ok(Statement::MigrateTableManager { table: self.ident()? })
                } else {
                    Err(ParseError::UnsupportedStatement(format!("MIGRATE {:?}", self.peek())))
                }
            }
            other => Err(ParseError::UnsupportedStatement(other.to_string())),
        }
    }
}

/// Parse a single statement, optionally terminated by `;`.
pub fn parse_statement(text: &str) -> Result<Statement, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    let stmt = match p.statement() {
        Err(ParseError::Syntax(_)) if !is_known_head(text) => {
            return Err(ParseError::UnsupportedStatement(text.trim().to_string()));
        }
        r => r?,
    };
    p.eat_sym(';');
    if p.pos < p.toks.len() {
        return Err(ParseError::UnsupportedStatement(format!("trailing input: {:?}", &p.toks[p.pos..])));
    }
    Ok(stmt)
}

fn is_known_head(text: &str) -> bool {
    let t = text.trim_start();
    if t.starts_with("<sleep>") {
        return true;
    }
    let head: String = t.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    ["CREATE", "DROP", "INSERT", "SELECT", "DELETE", "SET", "COMMIT", "MIGRATE"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(&head))
}

pub(crate) fn parse_column_list(text: &str) -> Result<Vec<Column>, ParseError> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0 };
    let cols = p.columns()?;
    if p.pos < p.toks.len() {
        return Err(ParseError::Syntax(format!("trailing input in column list: {:?}", &p.toks[p.pos..])));
    }
    Ok(cols)
}

fn render_predicate(p: &Option<Predicate>) -> String {
    match p {
        None => String::new(),
        Some(Predicate::Greater { column, value }) => format!(" WHERE {column} > {value}"),
        Some(Predicate::Equal { column, value }) => format!(" WHERE {column} = {value}"),
    }
}

/// Canonical text for a statement (no trailing semicolon).
pub fn render(stmt: &Statement) -> String {
    match stmt {
        Statement::CreateTable { if_not_exists, schema } => format!(
            "CREATE TABLE {}{} ({})",
            if *if_not_exists { "IF NOT EXISTS " } else { "" },
            schema.name,
            schema.column_list()
        ),
        Statement::DropTable { if_exists, name } => {
            format!("DROP TABLE {}{name}", if *if_exists { "IF EXISTS " } else { "" })
        }
        Statement::Insert { table, values } => format!(
            "INSERT INTO {table} VALUES ({})",
            values.iter().map(Literal::to_string).collect::<Vec<_>>().join(", ")
        ),
        Statement::Select { table, predicate } => format!("SELECT * FROM {table}{}", render_predicate(predicate)),
        Statement::Delete { table, predicate } => format!("DELETE FROM {table}{}", render_predicate(predicate)),
        Statement::SetAutocommit { on } => format!("SET AUTOCOMMIT {}", if *on { "ON" } else { "OFF" }),
        Statement::Commit => "COMMIT".into(),
        Statement::MigrateSystemTable { no_replicate } => {
            format!("MIGRATE SYSTEMTABLE{}", if *no_replicate { " NO_REPLICATE" } else { "" })
        }
        Statement::MigrateTableManager { table } => format!("MIGRATE TABLEMANAGER {table}"),
        Statement::Sleep { millis } => format!("<sleep>{millis}</sleep>"),
    }
}

/// A workload: the loop body, as statement templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub statements: Vec<Statement>,
}

/// Parse a workload file with `<sleep>k</sleep>` read as milliseconds.
pub fn parse_workload(text: &str) -> Result<Workload, ParseError> {
    parse_workload_with_unit(text, 1)
}

/// Parse a workload file; `sleep_unit_ms` scales `<sleep>` values.
///
/// A statement ends at the end of its line unless the line ends with `,`
/// or leaves a parenthesis open, in which case the next line continues it.
pub fn parse_workload_with_unit(text: &str, sleep_unit_ms: u64) -> Result<Workload, ParseError> {
    let mut statements = Vec::new();
    let mut pending = String::new();
    let mut start_line = 0;
    let mut depth: i64 = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if pending.is_empty() && (line.is_empty() || line.starts_with('#') || line.starts_with("--")) {
            continue;
        }
        if pending.is_empty() {
            start_line = i + 1;
        } else {
            pending.push(' ');
        }
        pending.push_str(line);
        depth += paren_delta(line);
        if depth > 0 || line.ends_with(',') {
            continue;
        }
        let stmt = parse_statement(&pending).map_err(|e| ParseError::AtLine { line: start_line, source: Box::new(e) })?;
        statements.push(match stmt {
            Statement::Sleep { millis } => Statement::Sleep { millis: millis * sleep_unit_ms },
            s => s,
        });
        pending.clear();
        depth = 0;
    }
    if !pending.is_empty() {
        return Err(ParseError::AtLine {
            line: start_line,
            source: Box::new(ParseError::Syntax("unterminated statement".into())),
        });
    }
    if statements.is_empty() {
        return Err(ParseError::EmptyWorkload);
    }
    Ok(Workload { statements })
}

fn paren_delta(line: &str) -> i64 {
    let mut d = 0;
    let mut in_str = false;
    for c in line.chars() {
        match c {
            '\'' => in_str = !in_str,
            '(' if !in_str => d += 1,
            ')' if !in_str => d -= 1,
            _ => {}
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SHORT: &str = include_str!("../../../scenarios/short.workload");
    const ST: &str = include_str!("../../../scenarios/st.workload");

    #[test]
    fn insert_form() {
        assert_eq!(
            parse_statement("INSERT INTO workloadTable VALUES (1, 'ab', 42)").unwrap(),
            Statement::Insert {
                table: "workloadTable".into(),
                values: vec![Literal::Integer(1), Literal::Text("ab".into()), Literal::Integer(42)],
            }
        );
    }

    #[test]
    fn migrate_forms() {
        assert_eq!(
            parse_statement("MIGRATE SYSTEMTABLE NO_REPLICATE").unwrap(),
            Statement::MigrateSystemTable { no_replicate: true }
        );
        assert_eq!(
            parse_statement("migrate system table").unwrap(),
            Statement::MigrateSystemTable { no_replicate: false }
        );
        assert_eq!(
            parse_statement("MIGRATE TABLEMANAGER workloadTable;").unwrap(),
            Statement::MigrateTableManager { table: "workloadTable".into() }
        );
    }

    #[test]
    fn unsupported() {
        assert!(matches!(parse_statement("UPDATE t SET x=1"), Err(ParseError::UnsupportedStatement(_))));
        assert!(matches!(parse_statement("SELECT * FROM a JOIN b"), Err(ParseError::UnsupportedStatement(_))));
        assert!(matches!(parse_statement("DELETE FROM t WHERE x < 3"), Err(ParseError::UnsupportedStatement(_))));
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let a = parse_statement("select   *\n from T where  c>3 ;").unwrap();
        let b = parse_statement("SELECT * FROM T WHERE c > 3").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_workload() {
        let w = parse_workload(SHORT).unwrap();
        let kinds: Vec<_> = w.statements.iter().map(std::mem::discriminant).collect();
        let expect = [
            Statement::SetAutocommit { on: false },
            Statement::Insert { table: String::new(), values: vec![] },
            Statement::Select { table: String::new(), predicate: None },
            Statement::Delete { table: String::new(), predicate: None },
            Statement::Commit,
            Statement::SetAutocommit { on: true },
        ];
        assert_eq!(kinds, expect.iter().map(std::mem::discriminant).collect::<Vec<_>>());
        assert!(w.statements[1].has_placeholders());
        assert_eq!(w.statements[0], Statement::SetAutocommit { on: false });
    }

    #[test]
    fn st_workload() {
        let w = parse_workload(ST).unwrap();
        assert!(matches!(w.statements[0], Statement::CreateTable { if_not_exists: true, .. }));
        assert_eq!(w.statements[1], Statement::Sleep { millis: 5 });
        assert!(matches!(w.statements[2], Statement::DropTable { if_exists: true, .. }));
        let w = parse_workload_with_unit(ST, 1000).unwrap();
        assert_eq!(w.statements[1], Statement::Sleep { millis: 5000 });
    }

    #[test]
    fn empty_workload() {
        assert_eq!(parse_workload(""), Err(ParseError::EmptyWorkload));
        assert_eq!(parse_workload("\n# nothing\n"), Err(ParseError::EmptyWorkload));
    }

    #[test]
    fn workload_error_has_line() {
        let err = parse_workload("COMMIT;\nUPDATE t SET x=1;").unwrap_err();
        assert!(matches!(err, ParseError::AtLine { line: 2, .. }));
    }

    #[test]
    fn loop_counter_tags() {
        let mut s = LoopState { iteration: 7, rng_seed: 1, rng_stream_position: 0 };
        assert_eq!(expand_placeholders("VALUES (<loop-counter/>)", &mut s).unwrap(), "VALUES (7)");
        assert_eq!(expand_placeholders("<last-loop-counter/>", &mut s).unwrap(), "6");
        let mut zero = LoopState::new(1);
        assert!(matches!(expand_placeholders("<last-loop-counter/>", &mut zero), Err(ParseError::InvalidPlaceholder(_))));
    }

    #[test]
    fn generated_values_in_range() {
        let mut s = LoopState::new(99);
        for _ in 0..200 {
            match s.draw(Placeholder::GeneratedString).unwrap() {
                Literal::Text(t) => {
                    assert!((8..=40).contains(&t.len()));
                    assert!(t.bytes().all(|b| b.is_ascii_lowercase()));
                }
                other => panic!("{other:?}"),
            }
            match s.draw(Placeholder::GeneratedLong).unwrap() {
                Literal::Integer(i) => assert!(i >= 0),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn text_and_ast_expansion_agree() {
        let w = parse_workload(SHORT).unwrap();
        let template = "INSERT INTO workloadTable VALUES (<loop-counter/>, <generated-string/>, <generated-long/>)";
        let mut a = LoopState { iteration: 3, rng_seed: 5, rng_stream_position: 10 };
        let mut b = a.clone();
        let text = expand_placeholders(template, &mut a).unwrap();
        let ast = w.statements[1].expand(&mut b).unwrap();
        assert_eq!(parse_statement(&text).unwrap(), ast);
        assert_eq!(a, b);
    }

    fn arb_ident() -> impl Strategy<Value = String> {
        "[a-z][a-zA-Z0-9_]{0,10}".prop_filter("keyword", |s| {
            !["where", "values", "from", "into", "if", "table"].contains(&s.to_ascii_lowercase().as_str())
        })
    }

    fn arb_literal() -> impl Strategy<Value = Literal> {
        prop_oneof![
            any::<i64>().prop_map(Literal::Integer),
            "[a-z ',]{0,12}".prop_map(Literal::Text),
            prop::sample::select(Placeholder::ALL.to_vec()).prop_map(Literal::Placeholder),
        ]
    }

    fn arb_predicate() -> impl Strategy<Value = Option<Predicate>> {
        proptest::option::of((arb_ident(), any::<i64>(), any::<bool>()).prop_map(|(column, v, gt)| {
            let value = Literal::Integer(v);
            if gt {
                Predicate::Greater { column, value }
            } else {
                Predicate::Equal { column, value }
            }
        }))
    }

    fn arb_statement() -> impl Strategy<Value = Statement> {
        let col_ty = prop_oneof![
            Just(ColumnType::Int),
            Just(ColumnType::BigInt),
            (1usize..100).prop_map(ColumnType::Varchar)
        ];
        prop_oneof![
            (any::<bool>(), arb_ident(), proptest::collection::btree_map(arb_ident(), col_ty, 1..4)).prop_map(
                |(if_not_exists, name, cols)| Statement::CreateTable {
                    if_not_exists,
                    schema: TableSchema {
                        name,
                        columns: cols.into_iter().map(|(name, ty)| Column { name, ty }).collect(),
                    },
                }
            ),
            (any::<bool>(), arb_ident()).prop_map(|(if_exists, name)| Statement::DropTable { if_exists, name }),
            (arb_ident(), proptest::collection::vec(arb_literal(), 1..5))
                .prop_map(|(table, values)| Statement::Insert { table, values }),
            (arb_ident(), arb_predicate()).prop_map(|(table, predicate)| Statement::Select { table, predicate }),
            (arb_ident(), arb_predicate()).prop_map(|(table, predicate)| Statement::Delete { table, predicate }),
            any::<bool>().prop_map(|on| Statement::SetAutocommit { on }),
            Just(Statement::Commit),
            any::<bool>().prop_map(|no_replicate| Statement::MigrateSystemTable { no_replicate }),
            arb_ident().prop_map(|table| Statement::MigrateTableManager { table }),
            any::<u32>().prop_map(|m| Statement::Sleep { millis: m as u64 }),
        ]
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(stmt in arb_statement()) {
            let text = render(&stmt);
            prop_assert_eq!(parse_statement(&text).unwrap(), stmt);
        }

        #[test]
        fn expansion_is_deterministic(seed: u64, iteration in 1u64..1000, position in 0u64..1000) {
            let template = "INSERT INTO t VALUES (<loop-counter/>, <generated-string/>, <generated-long/>, <last-loop-counter/>)";
            let mut a = LoopState { iteration, rng_seed: seed, rng_stream_position: position };
            let mut b = a.clone();
            prop_assert_eq!(expand_placeholders(template, &mut a).unwrap(), expand_placeholders(template, &mut b).unwrap());
            prop_assert_eq!(a.rng_stream_position, position + 2);
        }
    }
}
