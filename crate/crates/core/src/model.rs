//! Core data types: instance addresses, table schemas, rows and the
//! per-replica table store with its replay log.

use std::fmt;

use thiserror::Error;

use crate::statements::{self, Literal, Predicate, Statement};

const URI_PREFIX: &str = "jdbc:d2o:tcp://";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed instance uri: {0}")]
    MalformedUri(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("statement is not a row write: {0}")]
    NotAWrite(String),
}

/// Address of a database instance.
///
/// `mount` holds an optional path segment that sits between the host and
/// the port (`host/mount:port`); it is carried only so that such URIs
/// render back unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceRef {
    pub instance_name: String,
    pub hostname: String,
    pub mount: Option<String>,
    pub port: u16,
    pub disk_path: String,
}

impl InstanceRef {
    pub fn new(hostname: &str, port: u16, disk_path: &str, instance_name: &str) -> Self {
        InstanceRef {
            instance_name: instance_name.to_string(),
            hostname: hostname.to_string(),
            mount: None,
            port,
            disk_path: disk_path.to_string(),
        }
    }

    /// `host:port`, the key used by the network address directory.
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.hostname, self.port)
    }

    pub fn parse(uri: &str) -> Result<Self, ModelError> {
        parse_uri(uri)
    }

    pub fn render(&self) -> String {
        render_uri(self)
    }
}

impl fmt::Display for InstanceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_uri(uri: &str) -> Result<InstanceRef, ModelError> {
    let bad = |why: &str| ModelError::MalformedUri(format!("{why}: `{uri}`"));
    let rest = uri.strip_prefix(URI_PREFIX).ok_or_else(|| bad("missing prefix"))?;
    let (authority, tail) = rest.split_once(':').ok_or_else(|| bad("missing port"))?;
    let (hostname, mount) = match authority.split_once('/') {
        Some((h, m)) => (h, Some(m)),
        None => (authority, None),
    };
    if hostname.is_empty() {
        return Err(bad("missing host"));
    }
    if mount.is_some_and(|m| m.is_empty() || m.contains('/')) {
        return Err(bad("bad mount segment"));
    }
    let (port, path) = tail.split_once('/').ok_or_else(|| bad("missing path"))?;
    if port.is_empty() || !port.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("missing port"));
    }
    let port: u16 = port.parse().map_err(|_| bad("port out of range"))?;
    let (disk_path, instance_name) = path.rsplit_once('/').ok_or_else(|| bad("missing disk path"))?;
    if disk_path.is_empty() {
        return Err(bad("missing disk path"));
    }
    if instance_name.is_empty() {
        return Err(bad("missing instance name"));
    }
    Ok(InstanceRef {
        instance_name: instance_name.to_string(),
        hostname: hostname.to_string(),
        mount: mount.map(str::to_string),
        port,
        disk_path: disk_path.to_string(),
    })
}

pub fn render_uri(r: &InstanceRef) -> String {
    let mut out = String::from(URI_PREFIX);
    out.push_str(&r.hostname);
    if let Some(m) = &r.mount {
        out.push('/');
        out.push_str(m);
    }
    out.push_str(&format!(":{}/{}/{}", r.port, r.disk_path, r.instance_name));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Int,
    BigInt,
    Varchar(usize),
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => f.write_str("int"),
            ColumnType::BigInt => f.write_str("BIGINT"),
            ColumnType::Varchar(n) => write!(f, "varchar({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Result<usize, ModelError> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| ModelError::UnknownColumn(name.to_string()))
    }

    /// Parse a column list such as `id int, str_a varchar(40), int_a BIGINT`.
    pub fn from_column_list(name: &str, text: &str) -> Result<Self, statements::ParseError> {
        let columns = statements::parse_column_list(text)?;
        Ok(TableSchema { name: name.to_string(), columns })
    }

    pub fn column_list(&self) -> String {
        self.columns
            .iter()
            .map(|c| format!("{} {}", c.name, c.ty))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Coerce a literal row to typed values.
    pub fn conform(&self, values: &[Literal]) -> Result<Row, ModelError> {
        if values.len() != self.columns.len() {
            return Err(ModelError::SchemaViolation(format!(
                "{} has {} columns, got {} values",
                self.name,
                self.columns.len(),
                values.len()
            )));
        }
        self.columns
            .iter()
            .zip(values)
            .map(|(c, v)| Value::conform(c, v))
            .collect::<Result<Vec<_>, _>>()
            .map(Row)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i32),
    BigInt(i64),
    Varchar(String),
}

impl Value {
    fn conform(col: &Column, lit: &Literal) -> Result<Value, ModelError> {
        let violation = || {
            ModelError::SchemaViolation(format!("value {lit} does not fit column {} {}", col.name, col.ty))
        };
        match (col.ty, lit) {
            (ColumnType::Int, Literal::Integer(i)) => i32::try_from(*i).map(Value::Int).map_err(|_| violation()),
            (ColumnType::BigInt, Literal::Integer(i)) => Ok(Value::BigInt(*i)),
            (ColumnType::Varchar(n), Literal::Text(s)) if s.chars().count() <= n => Ok(Value::Varchar(s.clone())),
            _ => Err(violation()),
        }
    }

    fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i as i64),
            Value::BigInt(i) => Some(*i),
            Value::Varchar(_) => None,
        }
    }

    pub fn to_literal(&self) -> Literal {
        match self {
            Value::Int(i) => Literal::Integer(*i as i64),
            Value::BigInt(i) => Literal::Integer(*i),
            Value::Varchar(s) => Literal::Text(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Row(pub Vec<Value>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogEntry {
    pub seq: u64,
    pub text: String,
}

/// Rows plus the append-only log of committed writes for one table
/// replica.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableStore {
    pub schema: TableSchema,
    pub rows: Vec<Row>,
    pub log: Vec<LogEntry>,
}

impl TableStore {
    pub fn new(schema: TableSchema) -> Self {
        TableStore { schema, rows: Vec::new(), log: Vec::new() }
    }

    pub fn next_seq(&self) -> u64 {
        self.log.last().map_or(1, |e| e.seq + 1)
    }

    /// Append a committed write to the log and return its sequence number.
    pub fn record(&mut self, stmt: &Statement) -> u64 {
        let seq = self.next_seq();
        self.log.push(LogEntry { seq, text: statements::render(stmt) });
        seq
    }

    pub fn select(&self, predicate: Option<&Predicate>) -> Result<Vec<Row>, ModelError> {
        let mut out = Vec::new();
        for row in &self.rows {
            if matches(&self.schema, row, predicate)? {
                out.push(row.clone());
            }
        }
        Ok(out)
    }
}

fn matches(schema: &TableSchema, row: &Row, predicate: Option<&Predicate>) -> Result<bool, ModelError> {
    let Some(p) = predicate else { return Ok(true) };
    let (column, value) = match p {
        Predicate::Greater { column, value } | Predicate::Equal { column, value } => (column, value),
    };
    let idx = schema.column_index(column)?;
    let Literal::Integer(rhs) = value else {
        return Err(ModelError::SchemaViolation(format!("predicate on {column} needs an integer")));
    };
    let lhs = row.0[idx]
        .as_i64()
        .ok_or_else(|| ModelError::SchemaViolation(format!("column {column} is not numeric")))?;
    Ok(match p {
        Predicate::Greater { .. } => lhs > *rhs,
        Predicate::Equal { .. } => lhs == *rhs,
    })
}

/// Apply an INSERT or DELETE. Returns the number of rows affected. The log
/// is left untouched; the caller records the statement once it commits.
pub fn apply_write(store: &mut TableStore, stmt: &Statement) -> Result<usize, ModelError> {
    match stmt {
        Statement::Insert { values, .. } => {
            let row = store.schema.conform(values)?;
            store.rows.push(row);
            Ok(1)
        }
        Statement::Delete { predicate, .. } => {
            let schema = &store.schema;
            let mut keep = Vec::with_capacity(store.rows.len());
            let mut removed = 0;
            for row in store.rows.drain(..) {
                if matches(schema, &row, predicate.as_ref())? {
                    removed += 1;
                } else {
                    keep.push(row);
                }
            }
            store.rows = keep;
            Ok(removed)
        }
        other => Err(ModelError::NotAWrite(statements::render(other))),
    }
}

/// Undo information for one applied write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Undo {
    Inserted,
    Deleted(Vec<(usize, Row)>),
}

/// Like [`apply_write`] but returns what is needed to roll the write back.
pub fn apply_write_undoable(store: &mut TableStore, stmt: &Statement) -> Result<(usize, Undo), ModelError> {
    match stmt {
        Statement::Delete { predicate, .. } => {
            let mut removed = Vec::new();
            let mut keep = Vec::with_capacity(store.rows.len());
            for (i, row) in store.rows.drain(..).enumerate() {
                if matches(&store.schema, &row, predicate.as_ref())? {
                    removed.push((i, row));
                } else {
                    keep.push(row);
                }
            }
            store.rows = keep;
            Ok((removed.len(), Undo::Deleted(removed)))
        }
        _ => apply_write(store, stmt).map(|n| (n, Undo::Inserted)),
    }
}

pub fn undo_write(store: &mut TableStore, undo: Undo) {
    match undo {
        Undo::Inserted => {
            store.rows.pop();
        }
        Undo::Deleted(removed) => {
            for (i, row) in removed {
                store.rows.insert(i, row);
            }
        }
    }
}

/// Rebuild a store from its schema and log.
pub fn replay_log(schema: &TableSchema, log: &[LogEntry]) -> Result<TableStore, ModelError> {
    let mut store = TableStore::new(schema.clone());
    for (i, entry) in log.iter().enumerate() {
        if entry.seq != i as u64 + 1 {
            return Err(ModelError::CorruptLog(format!("expected seq {}, found {}", i + 1, entry.seq)));
        }
        let stmt = statements::parse_statement(&entry.text)
            .map_err(|e| ModelError::CorruptLog(format!("seq {}: {e}", entry.seq)))?;
        apply_write(&mut store, &stmt).map_err(|e| ModelError::CorruptLog(format!("seq {}: {e}", entry.seq)))?;
    }
    store.log = log.to_vec();
    Ok(store)
}

/// One `<seq>\t<statement>` line per entry.
pub fn render_log(log: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&format!("{}\t{}\n", e.seq, e.text));
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, ModelError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (seq, stmt) = line
                .split_once('\t')
                .ok_or_else(|| ModelError::CorruptLog(format!("no tab in `{line}`")))?;
            let seq = seq.parse().map_err(|_| ModelError::CorruptLog(format!("bad seq `{seq}`")))?;
            Ok(LogEntry { seq, text: stmt.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ARCHIVE: &str = "jdbc:d2o:tcp://archive.cs.st-andrews.ac.uk/d2o:9090/db_files/24e9bj81ff3";

    fn schema() -> TableSchema {
        TableSchema::from_column_list("workloadTable", "id int, str_a varchar(40), int_a BIGINT").unwrap()
    }

    #[test]
    fn archive_uri_fields() {
        let r = parse_uri(ARCHIVE).unwrap();
        assert_eq!(r.hostname, "archive.cs.st-andrews.ac.uk");
        assert_eq!(r.port, 9090);
        assert_eq!(r.disk_path, "db_files");
        assert_eq!(r.instance_name, "24e9bj81ff3");
        assert_eq!(render_uri(&r), ARCHIVE);
    }

    #[test]
    fn uri_errors() {
        for bad in [
            "jdbc:d2o:tcp://host/path/name",
            "jdbc:d2o:tcp://host:9090/path/",
            "jdbc:h2:tcp://host:9090/path/name",
            "jdbc:d2o:tcp://host:99999/path/name",
            "jdbc:d2o:tcp://host:90x0/path/name",
            "jdbc:d2o:tcp://host:9090/name",
        ] {
            assert!(matches!(parse_uri(bad), Err(ModelError::MalformedUri(_))), "{bad}");
        }
    }

    #[test]
    fn nested_disk_path() {
        let r = parse_uri("jdbc:d2o:tcp://m1:9091/a/b/c/inst").unwrap();
        assert_eq!(r.disk_path, "a/b/c");
        assert_eq!(r.instance_name, "inst");
    }

    #[test]
    fn insert_conforms_to_schema() {
        let mut s = TableStore::new(schema());
        let ok = statements::parse_statement("INSERT INTO workloadTable VALUES (1, 'abc', 5)").unwrap();
        assert_eq!(apply_write(&mut s, &ok).unwrap(), 1);
        let long = format!("INSERT INTO workloadTable VALUES (1, '{}', 5)", "x".repeat(41));
        let long = statements::parse_statement(&long).unwrap();
        assert!(matches!(apply_write(&mut s, &long), Err(ModelError::SchemaViolation(_))));
        let wide = statements::parse_statement("INSERT INTO workloadTable VALUES (4294967296, 'a', 5)").unwrap();
        assert!(matches!(apply_write(&mut s, &wide), Err(ModelError::SchemaViolation(_))));
        assert_eq!(s.rows.len(), 1);
    }

    #[test]
    fn delete_counts_duplicates() {
        let mut s = TableStore::new(schema());
        for _ in 0..3 {
            let ins = statements::parse_statement("INSERT INTO workloadTable VALUES (7, 'a', 1)").unwrap();
            apply_write(&mut s, &ins).unwrap();
        }
        let del = statements::parse_statement("DELETE FROM workloadTable WHERE id=7").unwrap();
        assert_eq!(apply_write(&mut s, &del).unwrap(), 3);
        assert!(s.rows.is_empty());
    }

    #[test]
    fn replay_rejects_gaps() {
        let log = vec![
            LogEntry { seq: 1, text: "INSERT INTO workloadTable VALUES (1, 'a', 1)".into() },
            LogEntry { seq: 3, text: "INSERT INTO workloadTable VALUES (2, 'a', 1)".into() },
        ];
        assert!(matches!(replay_log(&schema(), &log), Err(ModelError::CorruptLog(_))));
    }

    #[test]
    fn log_file_round_trip() {
        let mut s = TableStore::new(schema());
        let ins = statements::parse_statement("INSERT INTO workloadTable VALUES (1, 'a b', 1)").unwrap();
        apply_write(&mut s, &ins).unwrap();
        s.record(&ins);
        let text = render_log(&s.log);
        assert_eq!(parse_log(&text).unwrap(), s.log);
    }

    #[test]
    fn undo_restores_rows() {
        let mut s = TableStore::new(schema());
        for i in 0..5 {
            let ins = statements::parse_statement(&format!("INSERT INTO workloadTable VALUES ({}, 'a', 1)", i % 2)).unwrap();
            apply_write(&mut s, &ins).unwrap();
        }
        let before = s.rows.clone();
        let del = statements::parse_statement("DELETE FROM workloadTable WHERE id=1").unwrap();
        let (n, undo) = apply_write_undoable(&mut s, &del).unwrap();
        assert_eq!(n, 2);
        undo_write(&mut s, undo);
        assert_eq!(s.rows, before);
    }

    fn arb_ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_.-]{0,12}"
    }

    proptest! {
        #[test]
        fn uri_round_trip(
            host in "[a-z][a-z0-9.-]{0,20}",
            mount in proptest::option::of("[a-z0-9]{1,6}"),
            port in 1u16..,
            path in proptest::collection::vec(arb_ident(), 1..4),
            name in arb_ident(),
        ) {
            let r = InstanceRef { instance_name: name, hostname: host, mount, port, disk_path: path.join("/") };
            let text = render_uri(&r);
            prop_assert_eq!(parse_uri(&text).unwrap(), r);
        }

        #[test]
        fn replay_matches_live_store(ops in proptest::collection::vec((any::<bool>(), 0i32..6, any::<i64>()), 0..40)) {
            let mut live = TableStore::new(schema());
            for (insert, id, long) in ops {
                let stmt = if insert {
                    Statement::Insert {
                        table: "workloadTable".into(),
                        values: vec![Literal::Integer(id as i64), Literal::Text("s".into()), Literal::Integer(long)],
                    }
                } else {
                    Statement::Delete {
                        table: "workloadTable".into(),
                        predicate: Some(Predicate::Equal { column: "id".into(), value: Literal::Integer(id as i64) }),
                    }
                };
                apply_write(&mut live, &stmt).unwrap();
                live.record(&stmt);
            }
            let replayed = replay_log(&live.schema, &live.log).unwrap();
            prop_assert_eq!(replayed, live);
        }
    }
}
