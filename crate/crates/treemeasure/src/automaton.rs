//! Min-parity tree automata: the `.pta` text format, structural validation
//! and canonical serialization.
//!
//! The format is line oriented, `#` starts a comment:
//!
//! ```text
//! alphabet a b
//! state q 2          # one line per state: name and priority
//! initial q
//! trans q a q q      # source, letter, left child, right child
//! ```
//!
//! Exactly one `alphabet` and one `initial` line must appear; the order of
//! all other lines is free.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// A nondeterministic min-parity tree automaton over the binary tree.
///
/// States and letters are kept as dense indices; the declared names are
/// retained only for diagnostics and serialization. The priority ceiling `d`
/// is always even and at least the maximal priority (odd maxima are padded
/// up during construction; the language is unaffected).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    alphabet: Vec<String>,
    states: Vec<String>,
    priorities: Vec<u32>,
    initial: usize,
    d: u32,
    transitions: Vec<Transition>,
}

/// A single transition `(state, letter, left, right)`, all dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub state: usize,
    pub letter: usize,
    pub left: usize,
    pub right: usize,
}

/// Severity of a [`Diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A validation finding. `line`/`col` are 1-based and present only for
/// findings tied to a source location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub line: Option<usize>,
    pub col: Option<usize>,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
            line: None,
            col: None,
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
            line: None,
            col: None,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match (self.line, self.col) {
            (Some(l), Some(c)) => write!(f, "{tag}: line {l} col {c}: {}", self.message),
            (Some(l), None) => write!(f, "{tag}: line {l}: {}", self.message),
            _ => write!(f, "{tag}: {}", self.message),
        }
    }
}

/// Parse failure with a 1-based source position.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line} col {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One whitespace-separated token with its 1-based column.
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in body.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &body[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &body[s..],
            col: s + 1,
        });
    }
    out
}

/// Parse a `.pta` document into a structurally valid [`Automaton`].
///
/// Returns the first violation encountered, with its source position.
/// The priority ceiling is normalized to the smallest even number covering
/// every declared priority.
pub fn parse_automaton(text: &str) -> Result<Automaton, ParseError> {
    let mut alphabet: Option<(Vec<String>, usize)> = None;
    let mut states: Vec<String> = Vec::new();
    let mut priorities: Vec<u32> = Vec::new();
    let mut initial: Option<(String, usize, usize)> = None;
    // Transitions by name; resolved after all states are known.
    let mut raw_transitions: Vec<([(String, usize); 4], usize)> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        let head = &tokens[0];
        match head.text {
            "alphabet" => {
                if alphabet.is_some() {
                    return Err(ParseError::new(
                        lineno,
                        head.col,
                        "duplicate alphabet directive",
                    ));
                }
                if tokens.len() < 2 {
                    return Err(ParseError::new(lineno, head.col, "empty alphabet"));
                }
                let mut letters = Vec::new();
                for t in &tokens[1..] {
                    if !is_identifier(t.text) {
                        return Err(ParseError::new(
                            lineno,
                            t.col,
                            format!("invalid letter name `{}`", t.text),
                        ));
                    }
                    if letters.iter().any(|l| l == t.text) {
                        return Err(ParseError::new(
                            lineno,
                            t.col,
                            format!("duplicate letter `{}`", t.text),
                        ));
                    }
                    letters.push(t.text.to_string());
                }
                alphabet = Some((letters, lineno));
            }
            "state" => {
                if tokens.len() != 3 {
                    return Err(ParseError::new(
                        lineno,
                        head.col,
                        "expected `state <name> <priority>`",
                    ));
                }
                let name = tokens[1].text;
                if !is_identifier(name) {
                    return Err(ParseError::new(
                        lineno,
                        tokens[1].col,
                        format!("invalid state name `{name}`"),
                    ));
                }
                if states.iter().any(|s| s == name) {
                    return Err(ParseError::new(
                        lineno,
                        tokens[1].col,
                        format!("duplicate state name `{name}`"),
                    ));
                }
                let priority: u32 = tokens[2].text.parse().map_err(|_| {
                    ParseError::new(
                        lineno,
                        tokens[2].col,
                        format!("invalid priority `{}`", tokens[2].text),
                    )
                })?;
                if priority < 1 {
                    return Err(ParseError::new(
                        lineno,
                        tokens[2].col,
                        "priority must be >= 1",
                    ));
                }
                states.push(name.to_string());
                priorities.push(priority);
            }
            "initial" => {
                if initial.is_some() {
                    return Err(ParseError::new(
                        lineno,
                        head.col,
                        "duplicate initial directive",
                    ));
                }
                if tokens.len() != 2 {
                    return Err(ParseError::new(
                        lineno,
                        head.col,
                        "expected `initial <name>`",
                    ));
                }
                initial = Some((tokens[1].text.to_string(), lineno, tokens[1].col));
            }
            "trans" => {
                if tokens.len() != 5 {
                    return Err(ParseError::new(
                        lineno,
                        head.col,
                        "expected `trans <q> <letter> <qL> <qR>`",
                    ));
                }
                let quad: [(String, usize); 4] =
                    [1, 2, 3, 4].map(|i| (tokens[i].text.to_string(), tokens[i].col));
                raw_transitions.push((quad, lineno));
            }
            other => {
                return Err(ParseError::new(
                    lineno,
                    head.col,
                    format!("unknown directive `{other}`"),
                ));
            }
        }
    }

    let (alphabet, _) =
        alphabet.ok_or_else(|| ParseError::new(1, 1, "missing alphabet directive"))?;
    if states.is_empty() {
        return Err(ParseError::new(1, 1, "no states declared"));
    }
    let (initial_name, init_line, init_col) =
        initial.ok_or_else(|| ParseError::new(1, 1, "missing initial directive"))?;
    let initial = states
        .iter()
        .position(|s| *s == initial_name)
        .ok_or_else(|| {
            ParseError::new(
                init_line,
                init_col,
                format!("unknown state `{initial_name}`"),
            )
        })?;

    let state_index = |name: &str| states.iter().position(|s| s == name);
    let letter_index = |name: &str| alphabet.iter().position(|l| l == name);

    let mut transitions = BTreeSet::new();
    for (quad, lineno) in &raw_transitions {
        let resolve = |slot: usize| {
            let (name, col) = &quad[slot];
            let (index, kind) = if slot == 1 {
                (letter_index(name), "letter")
            } else {
                (state_index(name), "state")
            };
            index.ok_or_else(|| ParseError::new(*lineno, *col, format!("unknown {kind} `{name}`")))
        };
        transitions.insert(Transition {
            state: resolve(0)?,
            letter: resolve(1)?,
            left: resolve(2)?,
            right: resolve(3)?,
        });
    }

    let max_priority = priorities.iter().copied().max().unwrap_or(1);
    let d = max_priority + max_priority % 2;

    Ok(Automaton {
        alphabet,
        states,
        priorities,
        initial,
        d,
        transitions: transitions.into_iter().collect(),
    })
}

impl Automaton {
    /// Assemble an automaton from already-resolved parts, enforcing the same
    /// invariants the parser does. `d` is normalized to even.
    pub fn from_parts(
        alphabet: Vec<String>,
        states: Vec<String>,
        priorities: Vec<u32>,
        initial: usize,
        transitions: impl IntoIterator<Item = Transition>,
    ) -> Result<Automaton, Vec<Diagnostic>> {
        let max_priority = priorities.iter().copied().max().unwrap_or(1);
        let d = max_priority + max_priority % 2;
        let transitions: BTreeSet<Transition> = transitions.into_iter().collect();
        let aut = Automaton {
            alphabet,
            states,
            priorities,
            initial,
            d,
            transitions: transitions.into_iter().collect(),
        };
        let errors: Vec<Diagnostic> = validate(&aut)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if errors.is_empty() {
            Ok(aut)
        } else {
            Err(errors)
        }
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_letters(&self) -> usize {
        self.alphabet.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn priority(&self, state: usize) -> u32 {
        self.priorities[state]
    }

    /// The even priority ceiling.
    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Bit width of a state-priority subset: `|Q| * d`.
    pub fn width(&self) -> usize {
        self.num_states() * self.d as usize
    }

    pub fn letter_index(&self, name: &str) -> Option<usize> {
        self.alphabet.iter().position(|l| l == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }
}

/// Check all structural invariants, returning every violation found.
///
/// A state with no outgoing transition for some letter is reported as a
/// warning only: the automaton is nondeterministic and may legitimately
/// reject by blocking.
pub fn validate(aut: &Automaton) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if aut.alphabet.is_empty() {
        out.push(Diagnostic::error("empty alphabet"));
    }
    if aut.states.is_empty() {
        out.push(Diagnostic::error("no states declared"));
    }
    if !aut.d.is_multiple_of(2) {
        out.push(Diagnostic::error(format!(
            "priority ceiling {} is odd",
            aut.d
        )));
    }
    if aut.priorities.len() != aut.states.len() {
        out.push(Diagnostic::error(
            "priority table does not cover all states",
        ));
    }
    for (q, &p) in aut.priorities.iter().enumerate() {
        if p < 1 {
            out.push(Diagnostic::error(format!(
                "state `{}` has priority {p}, minimum is 1",
                aut.states.get(q).map(String::as_str).unwrap_or("?")
            )));
        } else if p > aut.d {
            out.push(Diagnostic::error(format!(
                "state `{}` has priority {p} above ceiling {}",
                aut.states.get(q).map(String::as_str).unwrap_or("?"),
                aut.d
            )));
        }
    }
    if aut.initial >= aut.states.len() {
        out.push(Diagnostic::error(format!(
            "initial state index {} out of range",
            aut.initial
        )));
    }
    let mut seen = BTreeSet::new();
    for t in &aut.transitions {
        if t.state >= aut.states.len() || t.left >= aut.states.len() || t.right >= aut.states.len()
        {
            out.push(Diagnostic::error(format!(
                "transition {t:?} references unknown state"
            )));
        }
        if t.letter >= aut.alphabet.len() {
            out.push(Diagnostic::error(format!(
                "transition {t:?} references unknown letter"
            )));
        }
        if !seen.insert(*t) {
            out.push(Diagnostic::error(format!("duplicate transition {t:?}")));
        }
    }
    // Blocking states: one warning per state, listing the missing letters.
    for q in 0..aut.states.len() {
        let missing: Vec<&str> = (0..aut.alphabet.len())
            .filter(|&a| {
                !aut.transitions
                    .iter()
                    .any(|t| t.state == q && t.letter == a)
            })
            .map(|a| aut.alphabet[a].as_str())
            .collect();
        if !missing.is_empty() {
            out.push(Diagnostic::warning(format!(
                "state `{}` blocks on letter(s) {}",
                aut.states[q],
                missing.join(", ")
            )));
        }
    }
    out
}

/// Deterministic serialization; re-parsing yields a structurally identical
/// automaton, and the function is idempotent under parse/serialize.
pub fn canonical_text(aut: &Automaton) -> String {
    let mut out = String::new();
    out.push_str("alphabet");
    for l in &aut.alphabet {
        out.push(' ');
        out.push_str(l);
    }
    out.push('\n');
    for (name, p) in aut.states.iter().zip(&aut.priorities) {
        out.push_str(&format!("state {name} {p}\n"));
    }
    out.push_str(&format!("initial {}\n", aut.states[aut.initial]));
    for t in &aut.transitions {
        out.push_str(&format!(
            "trans {} {} {} {}\n",
            aut.states[t.state], aut.alphabet[t.letter], aut.states[t.left], aut.states[t.right]
        ));
    }
    out
}
