//! Scripted process descriptions and the versioned script file format.
//!
//! A script fixes one process's behaviour as an ordered action list, so
//! multi-process topologies can be run deterministically and new demo
//! setups need no recompilation. Format:
//!
//! ```text
//! distea-script v1
//! process <name>
//! listen <addr>            (0+ lines: addresses this process accepts on)
//! <action lines>           (the main task)
//! thread <name>            (0+ blocks: bodies for `spawn`)
//! <action lines>
//! end
//! ```
//!
//! Actions: `enter <method>`, `return <method>`, `into <method>`,
//! `send <conn> <hex|->`, `recv <conn>`, `accept <conn> <addr>`,
//! `connect <conn> <addr>`, `spawn <thread>`.
//!
//! Call actions must be properly nested per task: `return` matches the
//! top of the call stack and, when a caller remains, is immediately
//! followed by its `into`; a bare `into` models control returning from an
//! unmonitored call and also names the top of the stack.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{MethodId, ModelError, ProcessId};

const SCRIPT_MAGIC: &str = "distea-script v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(msg: impl Into<String>) -> ScriptError {
    ScriptError::Invalid(msg.into())
}

fn check_token(what: &str, token: &str) -> Result<(), ScriptError> {
    if token.is_empty() {
        return Err(invalid(format!("{what} must be non-empty")));
    }
    if token.chars().any(|c| c.is_whitespace()) {
        return Err(invalid(format!("{what} {token:?} must not contain whitespace")));
    }
    Ok(())
}

/// One step of a scripted process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    CallEnter(MethodId),
    CallReturn(MethodId),
    ReturnedInto(MethodId),
    Send { conn: String, payload: Vec<u8> },
    Recv { conn: String },
    Accept { conn: String, addr: String },
    Connect { conn: String, addr: String },
    Spawn { thread: String },
}

/// Deterministic description of one process: its listen addresses, main
/// task, and named thread bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedProgram {
    pub process: ProcessId,
    pub listen: Vec<String>,
    pub main: Vec<Action>,
    pub threads: BTreeMap<String, Vec<Action>>,
}

impl ScriptedProgram {
    pub fn new(
        process: ProcessId,
        listen: Vec<String>,
        main: Vec<Action>,
        threads: BTreeMap<String, Vec<Action>>,
    ) -> Result<Self, ScriptError> {
        let program = ScriptedProgram {
            process,
            listen,
            main,
            threads,
        };
        program.validate()?;
        Ok(program)
    }

    fn tasks(&self) -> impl Iterator<Item = (&str, &[Action])> {
        std::iter::once(("main", self.main.as_slice()))
            .chain(self.threads.iter().map(|(n, a)| (n.as_str(), a.as_slice())))
    }

    /// Check the program's internal invariants: identifier shapes, proper
    /// call nesting per task, single binding per connection name, accepts
    /// on declared listen addresses, and an acyclic spawn graph.
    pub fn validate(&self) -> Result<(), ScriptError> {
        for addr in &self.listen {
            check_token("listen address", addr)?;
        }
        let listen_set: BTreeSet<&str> = self.listen.iter().map(|s| s.as_str()).collect();
        if listen_set.len() != self.listen.len() {
            return Err(invalid(format!(
                "{}: duplicate listen address",
                self.process
            )));
        }

        let mut bound: BTreeSet<&str> = BTreeSet::new();
        for (task, actions) in self.tasks() {
            for action in actions {
                match action {
                    Action::Accept { conn, addr } => {
                        check_token("connection name", conn)?;
                        check_token("address", addr)?;
                        if !listen_set.contains(addr.as_str()) {
                            return Err(invalid(format!(
                                "{}/{task}: accept on {addr} which this process does not listen on",
                                self.process
                            )));
                        }
                        if !bound.insert(conn) {
                            return Err(invalid(format!(
                                "{}/{task}: connection {conn} bound twice",
                                self.process
                            )));
                        }
                    }
                    Action::Connect { conn, addr } => {
                        check_token("connection name", conn)?;
                        check_token("address", addr)?;
                        if !bound.insert(conn) {
                            return Err(invalid(format!(
                                "{}/{task}: connection {conn} bound twice",
                                self.process
                            )));
                        }
                    }
                    Action::Spawn { thread } => {
                        check_token("thread name", thread)?;
                        if !self.threads.contains_key(thread) {
                            return Err(invalid(format!(
                                "{}/{task}: spawn of unknown thread {thread}",
                                self.process
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        for (task, actions) in self.tasks() {
            for action in actions {
                if let Action::Send { conn, .. } | Action::Recv { conn } = action {
                    if !bound.contains(conn.as_str()) {
                        return Err(invalid(format!(
                            "{}/{task}: {conn} is never bound by accept or connect",
                            self.process
                        )));
                    }
                }
            }
        }

        for (task, actions) in self.tasks() {
            self.check_nesting(task, actions)?;
        }
        self.check_spawn_acyclic()?;
        Ok(())
    }

    fn check_nesting(&self, task: &str, actions: &[Action]) -> Result<(), ScriptError> {
        let mut stack: Vec<&MethodId> = Vec::new();
        let mut must_return_into: Option<&MethodId> = None;
        for action in actions {
            if let Some(caller) = must_return_into.take() {
                match action {
                    Action::ReturnedInto(m) if m == caller => {}
                    other => {
                        return Err(invalid(format!(
                            "{}/{task}: after a nested return, expected `into {caller}`, got {other:?}",
                            self.process
                        )))
                    }
                }
            }
            match action {
                Action::CallEnter(m) => stack.push(m),
                Action::CallReturn(m) => match stack.pop() {
                    Some(top) if top == m => {
                        must_return_into = stack.last().copied();
                    }
                    Some(top) => {
                        return Err(invalid(format!(
                            "{}/{task}: return of {m} while inside {top}",
                            self.process
                        )))
                    }
                    None => {
                        return Err(invalid(format!(
                            "{}/{task}: return of {m} with an empty call stack",
                            self.process
                        )))
                    }
                },
                Action::ReturnedInto(m) => match stack.last() {
                    Some(top) if *top == m => {}
                    Some(top) => {
                        return Err(invalid(format!(
                            "{}/{task}: returned-into {m} while inside {top}",
                            self.process
                        )))
                    }
                    None => {
                        return Err(invalid(format!(
                            "{}/{task}: returned-into {m} with an empty call stack",
                            self.process
                        )))
                    }
                },
                _ => {}
            }
        }
        if must_return_into.is_some() {
            return Err(invalid(format!(
                "{}/{task}: task ends right after a nested return, before the caller's `into`",
                self.process
            )));
        }
        if let Some(open) = stack.last() {
            return Err(invalid(format!(
                "{}/{task}: {open} is entered but never returns",
                self.process
            )));
        }
        Ok(())
    }

    fn check_spawn_acyclic(&self) -> Result<(), ScriptError> {
        // DFS over the thread-spawn graph rooted at each block
        fn visit<'a>(
            program: &'a ScriptedProgram,
            name: &'a str,
            on_path: &mut Vec<&'a str>,
            done: &mut BTreeSet<&'a str>,
        ) -> Result<(), ScriptError> {
            if done.contains(name) {
                return Ok(());
            }
            if on_path.contains(&name) {
                return Err(invalid(format!(
                    "{}: spawn cycle through thread {name}",
                    program.process
                )));
            }
            on_path.push(name);
            if let Some(actions) = program.threads.get(name) {
                for action in actions {
                    if let Action::Spawn { thread } = action {
                        visit(program, thread, on_path, done)?;
                    }
                }
            }
            on_path.pop();
            done.insert(name);
            Ok(())
        }
        let mut done = BTreeSet::new();
        for action in &self.main {
            if let Action::Spawn { thread } = action {
                visit(self, thread, &mut Vec::new(), &mut done)?;
            }
        }
        Ok(())
    }

    /// Every connect in the program, as `(conn, addr)` pairs.
    pub fn connects(&self) -> Vec<(&str, &str)> {
        self.tasks()
            .flat_map(|(_, actions)| actions.iter())
            .filter_map(|a| match a {
                Action::Connect { conn, addr } => Some((conn.as_str(), addr.as_str())),
                _ => None,
            })
            .collect()
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    if bytes.is_empty() {
        return "-".to_string();
    }
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(text: &str) -> Option<Vec<u8>> {
    if text == "-" {
        return Some(Vec::new());
    }
    if text.len() % 2 != 0 {
        return None;
    }
    (0..text.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&text[i..i + 2], 16).ok())
        .collect()
}

fn serialize_action(out: &mut String, action: &Action) {
    match action {
        Action::CallEnter(m) => out.push_str(&format!("enter {m}\n")),
        Action::CallReturn(m) => out.push_str(&format!("return {m}\n")),
        Action::ReturnedInto(m) => out.push_str(&format!("into {m}\n")),
        Action::Send { conn, payload } => {
            out.push_str(&format!("send {conn} {}\n", hex_encode(payload)))
        }
        Action::Recv { conn } => out.push_str(&format!("recv {conn}\n")),
        Action::Accept { conn, addr } => out.push_str(&format!("accept {conn} {addr}\n")),
        Action::Connect { conn, addr } => out.push_str(&format!("connect {conn} {addr}\n")),
        Action::Spawn { thread } => out.push_str(&format!("spawn {thread}\n")),
    }
}

/// Serialize to the v1 script format. Deterministic.
pub fn serialize_script(program: &ScriptedProgram) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(SCRIPT_MAGIC);
    out.push('\n');
    out.push_str(&format!("process {}\n", program.process));
    for addr in &program.listen {
        out.push_str(&format!("listen {addr}\n"));
    }
    for action in &program.main {
        serialize_action(&mut out, action);
    }
    for (name, actions) in &program.threads {
        out.push_str(&format!("thread {name}\n"));
        for action in actions {
            serialize_action(&mut out, action);
        }
        out.push_str("end\n");
    }
    out.into_bytes()
}

/// Parse the v1 script format. Blank lines and lines starting with `#`
/// are ignored. The parsed program is validated before it is returned.
pub fn parse_script(bytes: &[u8]) -> Result<ScriptedProgram, ScriptError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ScriptError::Parse {
        line: 0,
        message: "script is not valid UTF-8".into(),
    })?;
    let err = |line: usize, message: String| ScriptError::Parse { line, message };

    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (_, magic) = lines
        .next()
        .ok_or_else(|| err(1, "empty script".into()))?;
    if magic.trim() != SCRIPT_MAGIC {
        return Err(err(1, format!("expected `{SCRIPT_MAGIC}`, got {magic:?}")));
    }
    let (lineno, proc_line) = lines
        .next()
        .ok_or_else(|| err(2, "missing `process <name>` line".into()))?;
    let name = proc_line
        .trim()
        .strip_prefix("process ")
        .ok_or_else(|| err(lineno + 1, "missing `process <name>` line".into()))?;
    let process = ProcessId::new(name.trim())?;

    let mut listen = Vec::new();
    let mut main = Vec::new();
    let mut threads: BTreeMap<String, Vec<Action>> = BTreeMap::new();
    let mut current_thread: Option<String> = None;
    let mut seen_action_in_main = false;

    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        let (word, rest) = match line.split_once(' ') {
            Some((w, r)) => (w, r.trim()),
            None => (line, ""),
        };
        match word {
            "listen" => {
                if seen_action_in_main || current_thread.is_some() {
                    return Err(err(lineno, "listen lines must precede actions".into()));
                }
                listen.push(rest.to_string());
                continue;
            }
            "thread" => {
                if current_thread.is_some() {
                    return Err(err(lineno, "thread blocks cannot nest; missing `end`?".into()));
                }
                if rest.is_empty() {
                    return Err(err(lineno, "thread needs a name".into()));
                }
                if threads.contains_key(rest) {
                    return Err(err(lineno, format!("duplicate thread block {rest}")));
                }
                threads.insert(rest.to_string(), Vec::new());
                current_thread = Some(rest.to_string());
                continue;
            }
            "end" => {
                if current_thread.take().is_none() {
                    return Err(err(lineno, "`end` outside a thread block".into()));
                }
                continue;
            }
            _ => {}
        }
        let action = match word {
            "enter" => Action::CallEnter(MethodId::new(rest)?),
            "return" => Action::CallReturn(MethodId::new(rest)?),
            "into" => Action::ReturnedInto(MethodId::new(rest)?),
            "recv" => Action::Recv {
                conn: rest.to_string(),
            },
            "send" => {
                let (conn, hex) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(lineno, "send needs `<conn> <hex|->`".into()))?;
                let payload = hex_decode(hex.trim())
                    .ok_or_else(|| err(lineno, format!("bad hex payload {hex:?}")))?;
                Action::Send {
                    conn: conn.to_string(),
                    payload,
                }
            }
            "accept" => {
                let (conn, addr) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(lineno, "accept needs `<conn> <addr>`".into()))?;
                Action::Accept {
                    conn: conn.to_string(),
                    addr: addr.trim().to_string(),
                }
            }
            "connect" => {
                let (conn, addr) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(lineno, "connect needs `<conn> <addr>`".into()))?;
                Action::Connect {
                    conn: conn.to_string(),
                    addr: addr.trim().to_string(),
                }
            }
            "spawn" => Action::Spawn {
                thread: rest.to_string(),
            },
            other => return Err(err(lineno, format!("unknown action {other:?}"))),
        };
        match &current_thread {
            Some(name) => threads.get_mut(name).unwrap().push(action),
            None => {
                seen_action_in_main = true;
                main.push(action);
            }
        }
    }
    if let Some(open) = current_thread {
        return Err(err(0, format!("thread block {open} not closed with `end`")));
    }
    ScriptedProgram::new(process, listen, main, threads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(name: &str) -> MethodId {
        MethodId::new(name).unwrap()
    }

    fn simple_program() -> ScriptedProgram {
        ScriptedProgram::new(
            ProcessId::new("S").unwrap(),
            vec!["srv".into()],
            vec![
                Action::CallEnter(m("S::main")),
                Action::Accept {
                    conn: "c".into(),
                    addr: "srv".into(),
                },
                Action::Recv { conn: "c".into() },
                Action::Send {
                    conn: "c".into(),
                    payload: b"ok".to_vec(),
                },
                Action::CallReturn(m("S::main")),
            ],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_identity() {
        let program = simple_program();
        let parsed = parse_script(&serialize_script(&program)).unwrap();
        assert_eq!(parsed, program);
    }

    #[test]
    fn round_trip_with_threads_and_empty_payload() {
        let program = ScriptedProgram::new(
            ProcessId::new("P").unwrap(),
            vec![],
            vec![
                Action::CallEnter(m("P::main")),
                Action::Connect {
                    conn: "c".into(),
                    addr: "x".into(),
                },
                Action::Send {
                    conn: "c".into(),
                    payload: vec![],
                },
                Action::Spawn {
                    thread: "w".into(),
                },
                Action::CallReturn(m("P::main")),
            ],
            BTreeMap::from([(
                "w".to_string(),
                vec![
                    Action::CallEnter(m("P::work")),
                    Action::CallReturn(m("P::work")),
                ],
            )]),
        )
        .unwrap();
        let bytes = serialize_script(&program);
        let parsed = parse_script(&bytes).unwrap();
        assert_eq!(parsed, program);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# demo\ndistea-script v1\n\nprocess P\n# body\nenter P::f\nreturn P::f\n";
        let program = parse_script(text.as_bytes()).unwrap();
        assert_eq!(program.main.len(), 2);
    }

    #[test]
    fn unbalanced_stack_is_rejected() {
        let text = "distea-script v1\nprocess P\nenter P::f\n";
        assert!(matches!(
            parse_script(text.as_bytes()),
            Err(ScriptError::Invalid(_))
        ));
        let text = "distea-script v1\nprocess P\nenter P::f\nreturn P::g\nreturn P::f\n";
        assert!(parse_script(text.as_bytes()).is_err());
    }

    #[test]
    fn nested_return_requires_immediate_into() {
        let ok = "distea-script v1\nprocess P\nenter P::a\nenter P::b\nreturn P::b\ninto P::a\nreturn P::a\n";
        assert!(parse_script(ok.as_bytes()).is_ok());
        let missing = "distea-script v1\nprocess P\nenter P::a\nenter P::b\nreturn P::b\nreturn P::a\n";
        assert!(parse_script(missing.as_bytes()).is_err());
    }

    #[test]
    fn into_must_name_current_method() {
        let bad = "distea-script v1\nprocess P\nenter P::a\ninto P::b\nreturn P::a\n";
        assert!(parse_script(bad.as_bytes()).is_err());
    }

    #[test]
    fn accept_requires_listen_declaration() {
        let bad = "distea-script v1\nprocess P\nenter P::a\naccept c srv\nreturn P::a\n";
        assert!(parse_script(bad.as_bytes()).is_err());
    }

    #[test]
    fn unknown_spawn_target_is_rejected() {
        let bad = "distea-script v1\nprocess P\nenter P::a\nspawn w\nreturn P::a\n";
        assert!(parse_script(bad.as_bytes()).is_err());
    }

    #[test]
    fn spawn_cycle_is_rejected() {
        let bad = "distea-script v1\nprocess P\nspawn a\nthread a\nspawn b\nend\nthread b\nspawn a\nend\n";
        assert!(parse_script(bad.as_bytes()).is_err());
    }

    #[test]
    fn unbound_connection_is_rejected() {
        let bad = "distea-script v1\nprocess P\nenter P::a\nrecv c\nreturn P::a\n";
        assert!(parse_script(bad.as_bytes()).is_err());
    }
}
