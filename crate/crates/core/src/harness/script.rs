//! Coordination-script grammar: a replication-factor header, then `{...}`
//! commands. A `{N}` prefix runs the following SQL statement or workload
//! command on machine N. Quoted values may span lines.

use std::collections::BTreeSet;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub replication: Option<usize>,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    StartMachine { id: u32, block_workloads: bool },
    TerminateMachine { id: u32 },
    Sleep { ms: u64 },
    CreateTable { id: u32, name: String, schema: String, prepopulate_with: usize },
    ExecuteWorkload { id: u32, file: String, duration_ms: u64 },
    SqlOn { id: u32, statement: String },
    CheckReplFactor { name: String, expected: usize },
    CheckMetaReplFactor { name: Option<String>, expected: usize },
}

impl Command {
    pub fn describe(&self) -> String {
        match self {
            Command::StartMachine { id, block_workloads } => {
                format!("start_machine id={id}{}", if *block_workloads { " block-workloads" } else { "" })
            }
            Command::TerminateMachine { id } => format!("terminate_machine id={id}"),
            Command::Sleep { ms } => format!("sleep {ms}"),
            Command::CreateTable { id, name, .. } => format!("create_table {name} on {id}"),
            Command::ExecuteWorkload { id, file, duration_ms } => format!("{{{id}}} execute_workload {file} {duration_ms}"),
            Command::SqlOn { id, statement } => format!("{{{id}}} {statement}"),
            Command::CheckReplFactor { name, expected } => format!("check_repl_factor {name} = {expected}"),
            Command::CheckMetaReplFactor { name: Some(n), expected } => format!("check_meta_repl_factor {n} = {expected}"),
            Command::CheckMetaReplFactor { name: None, expected } => format!("check_meta_repl_factor = {expected}"),
        }
    }
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Lexer {
    fn new(text: &str) -> Self {
        Lexer { chars: text.chars().collect(), pos: 0, line: 1 }
    }

    fn err(&self, message: impl Into<String>) -> HarnessError {
        HarnessError::Parse { line: self.line, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    /// Inside of a `{...}` group, quotes respected, line breaks folded to
    /// single spaces.
    fn group(&mut self) -> Result<String, HarnessError> {
        let start = self.line;
        self.bump();
        let mut out = String::new();
        let mut quoted = false;
        loop {
            let c = self.bump().ok_or(HarnessError::Parse { line: start, message: "unclosed `{`".into() })?;
            match c {
                '"' => {
                    quoted = !quoted;
                    out.push(c);
                }
                '}' if !quoted => return Ok(out),
                '\n' | '\r' => {
                    while self.peek().is_some_and(|c| c == ' ' || c == '\t') {
                        self.bump();
                    }
                    if !out.ends_with(' ') && !out.ends_with('"') && !out.ends_with('=') {
                        out.push(' ');
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn rest_of_line(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            out.push(c);
            self.bump();
        }
        out.trim().to_string()
    }
}

/// `name="value"` pairs. A bare `{sleep="3000"}` is the pair sleep=3000.
fn attributes(body: &str, lx: &Lexer) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let eq = rest.find('=').ok_or_else(|| lx.err(format!("expected name=\"value\" in `{body}`")))?;
        let name = rest[..eq].trim().to_string();
        let after = rest[eq + 1..].trim_start();
        let after = after.strip_prefix('"').ok_or_else(|| lx.err(format!("unquoted value for {name}")))?;
        let end = after.find('"').ok_or_else(|| lx.err(format!("unterminated value for {name}")))?;
        out.push((name, after[..end].trim().to_string()));
        rest = after[end + 1..].trim_start();
    }
    Ok(out)
}

fn get<'v>(attrs: &'v [(String, String)], key: &str) -> Option<&'v str> {
    attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn need<'v>(attrs: &'v [(String, String)], key: &str, lx: &Lexer) -> Result<&'v str, HarnessError> {
    get(attrs, key).ok_or_else(|| lx.err(format!("missing `{key}`")))
}

fn number<T: std::str::FromStr>(v: &str, lx: &Lexer) -> Result<T, HarnessError> {
    v.trim().parse().map_err(|_| lx.err(format!("not a number: `{v}`")))
}

fn header(text: &str, lx: &Lexer) -> Result<Option<usize>, HarnessError> {
    let Some(eq) = text.rfind('=') else { return Ok(None) };
    if !text.to_ascii_lowercase().contains("replication factor") {
        return Ok(None);
    }
    number(&text[eq + 1..], lx).map(Some)
}

pub fn parse_script(text: &str) -> Result<Script, HarnessError> {
    let mut lx = Lexer::new(text);
    let mut replication = None;
    let mut commands = Vec::new();
    let mut started: BTreeSet<u32> = BTreeSet::new();
    loop {
        lx.skip_ws();
        let Some(c) = lx.peek() else { break };
        let line = lx.line;
        match c {
            '[' => {
                let mut h = String::new();
                lx.bump();
                while let Some(c) = lx.bump() {
                    if c == ']' {
                        break;
                    }
                    h.push(c);
                }
                replication = header(&h, &lx)?.or(replication);
            }
            '{' => {
                let body = lx.group()?;
                let cmd = if let Ok(id) = body.trim().parse::<u32>() {
                    // Machine prefix: a workload command or a SQL line.
                    let skip_spaces = |lx: &mut Lexer| {
                        while lx.peek().is_some_and(|c| c == ' ' || c == '\t') {
                            lx.bump();
                        }
                    };
                    skip_spaces(&mut lx);
                    if lx.peek() == Some('{') {
                        let inner = lx.group()?;
                        let attrs = attributes(&inner, &lx)?;
                        let file = need(&attrs, "execute_workload", &lx)?.to_string();
                        let duration_ms = number(need(&attrs, "duration", &lx)?, &lx)?;
                        Command::ExecuteWorkload { id, file, duration_ms }
                    } else {
                        let statement = lx.rest_of_line();
                        if statement.is_empty() {
                            return Err(HarnessError::Parse { line, message: "empty statement".into() });
                        }
                        Command::SqlOn { id, statement }
                    }
                } else {
                    let attrs = attributes(&body, &lx)?;
                    let Some((kind, first)) = attrs.first().cloned() else {
                        return Err(HarnessError::Parse { line, message: "empty command".into() });
                    };
                    let word = body.split_whitespace().next().unwrap_or("");
                    match word {
                        "start_machine" | "terminate_machine" | "create_table" | "check_repl_factor"
                        | "check_meta_repl_factor" => {
                            let attrs = attributes(body.trim()[word.len()..].trim(), &lx)?;
                            match word {
                                "start_machine" => Command::StartMachine {
                                    id: number(need(&attrs, "id", &lx)?, &lx)?,
                                    block_workloads: get(&attrs, "block-workloads")
                                        .or(get(&attrs, "block_workloads"))
                                        .is_some_and(|v| v.eq_ignore_ascii_case("true")),
                                },
                                "terminate_machine" => {
                                    Command::TerminateMachine { id: number(need(&attrs, "id", &lx)?, &lx)? }
                                }
                                "create_table" => Command::CreateTable {
                                    id: number(need(&attrs, "id", &lx)?, &lx)?,
                                    name: need(&attrs, "name", &lx)?.to_string(),
                                    schema: need(&attrs, "schema", &lx)?.to_string(),
                                    prepopulate_with: get(&attrs, "prepopulate_with")
                                        .map(|v| number(v, &lx))
                                        .transpose()?
                                        .unwrap_or(0),
                                },
                                "check_repl_factor" => Command::CheckReplFactor {
                                    name: need(&attrs, "name", &lx)?.to_string(),
                                    expected: number(need(&attrs, "expected", &lx)?, &lx)?,
                                },
                                _ => Command::CheckMetaReplFactor {
                                    name: get(&attrs, "name").map(str::to_string),
                                    expected: number(need(&attrs, "expected", &lx)?, &lx)?,
                                },
                            }
                        }
                        _ if kind == "sleep" => Command::Sleep { ms: number(&first, &lx)? },
                        _ => return Err(HarnessError::Parse { line, message: format!("unknown command `{word}`") }),
                    }
                };
                let referenced = match &cmd {
                    Command::StartMachine { id, .. } => {
                        started.insert(*id);
                        None
                    }
                    Command::TerminateMachine { id }
                    | Command::CreateTable { id, .. }
                    | Command::ExecuteWorkload { id, .. }
                    | Command::SqlOn { id, .. } => Some(*id),
                    _ => None,
                };
                if let Some(id) = referenced.filter(|id| !started.contains(id)) {
                    return Err(HarnessError::UnknownId { line, id });
                }
                commands.push(cmd);
            }
            _ => {
                let junk = lx.rest_of_line();
                return Err(HarnessError::Parse { line, message: format!("unexpected text `{junk}`") });
            }
        }
    }
    Ok(Script { replication, commands })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{start_machine id="0"}
{start_machine id="1"}
{create_table id="1" name="workloadTable"
schema=" id int, str_a varchar(40)" prepopulate_with="300"}
{sleep="20000"}
{1} MIGRATE SYSTEMTABLE
{0} {execute_workload="readWorkload.workload"
duration="60000"}
{sleep="20000"}
{terminate_machine id="1"}
{sleep="20000"}
{start_machine id="1" block-workloads="true"}
{check_meta_repl_factor expected="3"}
{check_repl_factor name="workloadTable" expected="2"}
"#;

    #[test]
    fn example_script() {
        let s = parse_script(EXAMPLE).unwrap();
        assert_eq!(s.commands.len(), 12);
        assert_eq!(
            s.commands[2],
            Command::CreateTable {
                id: 1,
                name: "workloadTable".into(),
                schema: "id int, str_a varchar(40)".into(),
                prepopulate_with: 300
            }
        );
        assert_eq!(s.commands[4], Command::SqlOn { id: 1, statement: "MIGRATE SYSTEMTABLE".into() });
        assert_eq!(
            s.commands[5],
            Command::ExecuteWorkload { id: 0, file: "readWorkload.workload".into(), duration_ms: 60000 }
        );
        assert_eq!(s.commands[9], Command::StartMachine { id: 1, block_workloads: true });
        assert_eq!(s.commands[10], Command::CheckMetaReplFactor { name: None, expected: 3 });
    }

    #[test]
    fn header_and_wrapped_schema() {
        let s = parse_script(
            "[Global Parameters: System-wide replication factor = 2]\n{start_machine id=\"0\"}\n    {create_table id=\"0\" name=\"t\" schema=\"id int, str_a\nvarchar(40), int_a BIGINT\" prepopulate_with=\"3\"}",
        )
        .unwrap();
        assert_eq!(s.replication, Some(2));
        let Command::CreateTable { schema, .. } = &s.commands[1] else { panic!() };
        assert_eq!(schema, "id int, str_a varchar(40), int_a BIGINT");
    }

    #[test]
    fn unknown_id() {
        let e = parse_script("{terminate_machine id=\"9\"}").unwrap_err();
        assert_eq!(e, HarnessError::UnknownId { line: 1, id: 9 });
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_script("{start_machine id=\"0\"}\n\n{frobnicate x=\"1\"}").unwrap_err();
        assert!(matches!(e, HarnessError::Parse { line: 3, .. }), "{e:?}");
    }
}
