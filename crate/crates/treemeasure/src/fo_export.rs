//! Exact-mode export: the measure pinned as a constant of nonlinear real
//! arithmetic with quantifiers, written as an SMT-LIB 2 script.
//!
//! Every distribution-valued subterm occurrence becomes a vector of real
//! variables, one per subset atom. Coordinate shuffles turn into linear
//! equations, the transition map into the bilinear pairing over support
//! pairs, and each limit node into "a fixed point above/below the input
//! that every other such fixed point dominates", with the stochastic order
//! spelled out as one inequality per upward-closed family of atoms. The
//! upset enumeration is exponential, so exact mode is for tiny instances
//! only; the numeric pipeline covers the rest.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use num_rational::{BigRational, Ratio};
use num_traits::Signed;
use thiserror::Error;

use crate::automaton::Automaton;
use crate::subset_lattice::{bid_r, big_delta_a_raw, cut_r, RSet};
use crate::unary_mu::{build_phi, Symbol, Term};

/// Hard ceiling on `|Q| * d` for exact mode; the upset family count grows
/// as a Dedekind number of the width.
pub const MAX_EXPORT_WIDTH: usize = 6;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("exact mode needs width |Q|*d <= {MAX_EXPORT_WIDTH}, got {0}")]
    WidthBound(usize),
    #[error("threshold must be a rational in [0,1], got {0}")]
    BadThreshold(String),
    #[error("script syntax: {0}")]
    Syntax(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse `a/b`, an integer, or a plain decimal like `0.25` into an exact
/// rational.
pub fn parse_rational(s: &str) -> Result<Ratio<i64>, ExportError> {
    let bad = || ExportError::BadThreshold(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let int: i64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) || frac.len() > 15 {
            return Err(bad());
        }
        let digits: i64 = frac.parse().map_err(|_| bad())?;
        let scale = 10i64.pow(frac.len() as u32);
        return Ok(Ratio::new(int * scale + digits, scale));
    }
    let n: i64 = s.parse().map_err(|_| bad())?;
    Ok(Ratio::from_integer(n))
}

fn ratio_term(n: &str, d: &str, negative: bool) -> String {
    let core = if d == "1" {
        n.to_string()
    } else {
        format!("(/ {n} {d})")
    };
    if negative {
        format!("(- {core})")
    } else {
        core
    }
}

fn ratio_i64_term(q: Ratio<i64>) -> String {
    ratio_term(
        &q.numer().unsigned_abs().to_string(),
        &q.denom().unsigned_abs().to_string(),
        q.numer().is_negative() != q.denom().is_negative(),
    )
}

/// Exact fraction for a float (every finite float is a dyadic rational).
fn f64_term(x: f64) -> String {
    let r = BigRational::from_float(x).expect("finite float");
    ratio_term(
        &r.numer().abs().to_string(),
        &r.denom().abs().to_string(),
        r.is_negative(),
    )
}

fn sum(terms: &[String]) -> String {
    match terms.len() {
        0 => "0".to_string(),
        1 => terms[0].clone(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

/// All upward-closed families of `width`-bit masks under inclusion, each a
/// sorted list of member masks. Enumerated by deciding atoms in an order
/// where every strict superset comes first, so a set may be included only
/// once all its supersets are in.
fn enumerate_upsets(width: usize) -> Vec<Vec<u64>> {
    let count = 1usize << width;
    let mut atoms: Vec<u64> = (0..count as u64).collect();
    atoms.sort_by_key(|&m| (std::cmp::Reverse(m.count_ones()), m));
    let supersets: Vec<Vec<usize>> = (0..count)
        .map(|i| {
            (0..i)
                .filter(|&j| atoms[i] & !atoms[j] == 0 && atoms[i] != atoms[j])
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut chosen = vec![false; count];
    fn dfs(
        i: usize,
        atoms: &[u64],
        supersets: &[Vec<usize>],
        chosen: &mut Vec<bool>,
        out: &mut Vec<Vec<u64>>,
    ) {
        if i == atoms.len() {
            let mut fam: Vec<u64> = atoms
                .iter()
                .zip(chosen.iter())
                .filter(|&(_, &c)| c)
                .map(|(&m, _)| m)
                .collect();
            fam.sort_unstable();
            out.push(fam);
            return;
        }
        dfs(i + 1, atoms, supersets, chosen, out);
        if supersets[i].iter().all(|&j| chosen[j]) {
            chosen[i] = true;
            dfs(i + 1, atoms, supersets, chosen, out);
            chosen[i] = false;
        }
    }
    dfs(0, &atoms, &supersets, &mut chosen, &mut out);
    out.sort();
    out
}

/// Generation context: the atom list, the upset table and a fresh-vector
/// counter; every emitted vector id is unique across the script.
struct FoBuildContext<'a> {
    aut: &'a Automaton,
    atoms: Vec<u64>,
    upsets: Vec<Vec<u64>>,
    delta_preimages: BTreeMap<u64, Vec<(usize, u64, u64)>>,
    counter: usize,
    vectors_allocated: usize,
}

impl<'a> FoBuildContext<'a> {
    fn new(aut: &'a Automaton) -> Result<Self, ExportError> {
        let width = aut.width();
        if width > MAX_EXPORT_WIDTH {
            return Err(ExportError::WidthBound(width));
        }
        let atoms: Vec<u64> = (0..1u64 << width).collect();
        let mut delta_preimages: BTreeMap<u64, Vec<(usize, u64, u64)>> = BTreeMap::new();
        for letter in 0..aut.num_letters() {
            for &rl in &atoms {
                for &rr in &atoms {
                    let image = big_delta_a_raw(aut, letter, RSet(rl), RSet(rr)).0;
                    delta_preimages
                        .entry(image)
                        .or_default()
                        .push((letter, rl, rr));
                }
            }
        }
        Ok(FoBuildContext {
            aut,
            upsets: enumerate_upsets(width),
            atoms,
            delta_preimages,
            counter: 0,
            vectors_allocated: 0,
        })
    }

    fn fresh(&mut self) -> usize {
        let id = self.counter;
        self.counter += 1;
        self.vectors_allocated += 1;
        id
    }

    fn var(&self, id: usize, mask: u64) -> String {
        format!("p{id}_r{mask}")
    }

    fn binder_list(&self, id: usize) -> String {
        let binders: Vec<String> = self
            .atoms
            .iter()
            .map(|&m| format!("({} Real)", self.var(id, m)))
            .collect();
        format!("({})", binders.join(" "))
    }

    fn simplex(&self, id: usize) -> String {
        let nonneg: Vec<String> = self
            .atoms
            .iter()
            .map(|&m| format!("(<= 0 {})", self.var(id, m)))
            .collect();
        let total: Vec<String> = self.atoms.iter().map(|&m| self.var(id, m)).collect();
        format!("(and {} (= {} 1))", nonneg.join(" "), sum(&total))
    }

    /// The stochastic order: one inequality per upward-closed family.
    fn leq(&self, lo: usize, hi: usize) -> String {
        let ineqs: Vec<String> = self
            .upsets
            .iter()
            .map(|fam| {
                let a: Vec<String> = fam.iter().map(|&m| self.var(lo, m)).collect();
                let b: Vec<String> = fam.iter().map(|&m| self.var(hi, m)).collect();
                format!("(<= {} {})", sum(&a), sum(&b))
            })
            .collect();
        format!("(and {})", ineqs.join(" "))
    }

    fn superficial_rel(&self, map: impl Fn(RSet) -> RSet, x: usize, y: usize) -> String {
        let mut preimages: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for &m in &self.atoms {
            preimages.entry(map(RSet(m)).0).or_default().push(m);
        }
        let eqs: Vec<String> = self
            .atoms
            .iter()
            .map(|&out| {
                let terms: Vec<String> = preimages
                    .get(&out)
                    .map(|pre| pre.iter().map(|&m| self.var(x, m)).collect())
                    .unwrap_or_default();
                format!("(= {} {})", self.var(y, out), sum(&terms))
            })
            .collect();
        format!("(and {})", eqs.join(" "))
    }

    fn delta_rel(&self, x: usize, y: usize) -> String {
        let letters = self.aut.num_letters().to_string();
        let eqs: Vec<String> = self
            .atoms
            .iter()
            .map(|&out| {
                let terms: Vec<String> = self
                    .delta_preimages
                    .get(&out)
                    .map(|pre| {
                        pre.iter()
                            .map(|&(_, rl, rr)| {
                                format!(
                                    "(* (/ 1 {letters}) {} {})",
                                    self.var(x, rl),
                                    self.var(x, rr)
                                )
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                format!("(= {} {})", self.var(y, out), sum(&terms))
            })
            .collect();
        format!("(and {})", eqs.join(" "))
    }

    /// Relation text: holds iff the input vector `x` is in the term's
    /// domain and `y` is its image.
    fn rel(&mut self, t: &Term, x: usize, y: usize) -> String {
        match t {
            Term::Basic(Symbol::Delta) => self.delta_rel(x, y),
            Term::Basic(Symbol::Bid(n)) => {
                self.superficial_rel(|r| bid_r(self.aut, *n, r).expect("index checked"), x, y)
            }
            Term::Basic(Symbol::Cut(n)) => {
                self.superficial_rel(|r| cut_r(self.aut, *n, r).expect("index checked"), x, y)
            }
            Term::Seq(f, g) => {
                let mid = self.fresh();
                let rf = self.rel(f, x, mid);
                let rg = self.rel(g, mid, y);
                format!("(exists {} (and {rf} {rg}))", self.binder_list(mid))
            }
            Term::LimUp(f) => {
                let fix_y = self.rel(f, y, y);
                let w = self.fresh();
                let fix_w = self.rel(f, w, w);
                format!(
                    "(and {simplex_y} {fix_y} {x_le_y} (forall {binders} (=> (and {simplex_w} \
                     {fix_w} {x_le_w}) {y_le_w})))",
                    simplex_y = self.simplex(y),
                    x_le_y = self.leq(x, y),
                    binders = self.binder_list(w),
                    simplex_w = self.simplex(w),
                    x_le_w = self.leq(x, w),
                    y_le_w = self.leq(y, w),
                )
            }
            Term::LimDown(f) => {
                let fix_y = self.rel(f, y, y);
                let w = self.fresh();
                let fix_w = self.rel(f, w, w);
                format!(
                    "(and {simplex_y} {fix_y} {y_le_x} (forall {binders} (=> (and {simplex_w} \
                     {fix_w} {w_le_x}) {w_le_y})))",
                    simplex_y = self.simplex(y),
                    y_le_x = self.leq(y, x),
                    binders = self.binder_list(w),
                    simplex_w = self.simplex(w),
                    w_le_x = self.leq(w, x),
                    w_le_y = self.leq(w, y),
                )
            }
        }
    }
}

fn script_prelude(aut: &Automaton, ctx: &mut FoBuildContext<'_>) -> (String, usize) {
    let mut out = String::new();
    out.push_str("; coin-flipping measure of a parity tree automaton language\n");
    out.push_str(&format!(
        "; states={} letters={} d={} atoms={}\n",
        aut.num_states(),
        aut.num_letters(),
        aut.d(),
        ctx.atoms.len()
    ));
    out.push_str("(set-logic NRA)\n");
    let input = ctx.fresh();
    let output = ctx.fresh();
    for id in [input, output] {
        for &m in &ctx.atoms {
            out.push_str(&format!("(declare-const {} Real)\n", ctx.var(id, m)));
        }
    }
    out.push_str("(declare-const measure Real)\n");
    // The evaluation starts from the point mass on the empty set.
    let init: Vec<String> = ctx
        .atoms
        .iter()
        .map(|&m| format!("(= {} {})", ctx.var(input, m), if m == 0 { 1 } else { 0 }))
        .collect();
    out.push_str(&format!("(assert (and {}))\n", init.join(" ")));
    let phi = build_phi(aut.d()).expect("automaton ceiling is even");
    let rel = ctx.rel(&phi, input, output);
    out.push_str(&format!("(assert {rel})\n"));
    let d = aut.d();
    let goal: Vec<String> = ctx
        .atoms
        .iter()
        .filter(|&&m| RSet(m).contains(aut.initial(), 1, d))
        .map(|&m| ctx.var(output, m))
        .collect();
    out.push_str(&format!("(assert (= measure {}))\n", sum(&goal)));
    (out, output)
}

/// Emit a complete script constraining `measure` to the language measure.
pub fn export_measure(aut: &Automaton) -> Result<String, ExportError> {
    let mut ctx = FoBuildContext::new(aut)?;
    let (mut out, _) = script_prelude(aut, &mut ctx);
    out.push_str("(check-sat)\n");
    Ok(out)
}

/// Emit the measure script plus a strict comparison of `measure` with the
/// rational threshold `q`: the solver's sat/unsat verdict decides whether
/// the measure exceeds `q`.
pub fn export_compare(aut: &Automaton, q: Ratio<i64>) -> Result<String, ExportError> {
    if q < Ratio::from_integer(0) || q > Ratio::from_integer(1) {
        return Err(ExportError::BadThreshold(q.to_string()));
    }
    let mut ctx = FoBuildContext::new(aut)?;
    let (mut out, _) = script_prelude(aut, &mut ctx);
    out.push_str(&format!("(assert (> measure {}))\n", ratio_i64_term(q)));
    out.push_str("(check-sat)\n");
    Ok(out)
}

/// Emit the measure script plus the claim that `measure` deviates from
/// `value` by more than `eps`; unsat certifies numeric/exact agreement.
pub fn export_deviation_check(
    aut: &Automaton,
    value: f64,
    eps: f64,
) -> Result<String, ExportError> {
    let mut ctx = FoBuildContext::new(aut)?;
    let (mut out, _) = script_prelude(aut, &mut ctx);
    let v = f64_term(value);
    let e = f64_term(eps);
    out.push_str(&format!(
        "(assert (or (> (- measure {v}) {e}) (< (- measure {v}) (- {e}))))\n"
    ));
    out.push_str("(check-sat)\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_script(text: &str) -> Result<Vec<Sexp>, ExportError> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ';' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            '(' => stack.push(Vec::new()),
            ')' => {
                let done = stack
                    .pop()
                    .ok_or_else(|| ExportError::Syntax("unbalanced closing parenthesis".into()))?;
                match stack.last_mut() {
                    Some(top) => top.push(Sexp::List(done)),
                    None => {
                        return Err(ExportError::Syntax("unbalanced closing parenthesis".into()))
                    }
                }
            }
            c if c.is_whitespace() => {}
            c => {
                let mut atom = String::from(c);
                while let Some(&next) = chars.peek() {
                    if next.is_whitespace() || next == '(' || next == ')' || next == ';' {
                        break;
                    }
                    atom.push(next);
                    chars.next();
                }
                stack
                    .last_mut()
                    .expect("stack never empty here")
                    .push(Sexp::Atom(atom));
            }
        }
    }
    if stack.len() != 1 {
        return Err(ExportError::Syntax("unbalanced opening parenthesis".into()));
    }
    Ok(stack.pop().unwrap())
}

fn is_numeral(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    !body.is_empty()
        && body.chars().all(|c| c.is_ascii_digit() || c == '.')
        && body.chars().filter(|&c| c == '.').count() <= 1
}

const BUILTIN_OPS: &[&str] = &[
    "+", "-", "*", "/", "=", "<=", ">=", "<", ">", "and", "or", "not", "=>", "ite",
];

fn validate_term(
    term: &Sexp,
    declared: &[String],
    bound: &mut Vec<String>,
) -> Result<(), ExportError> {
    match term {
        Sexp::Atom(a) => {
            if is_numeral(a) || declared.iter().any(|d| d == a) || bound.iter().any(|b| b == a) {
                Ok(())
            } else {
                Err(ExportError::Syntax(format!(
                    "symbol `{a}` used before declaration"
                )))
            }
        }
        Sexp::List(items) => {
            let head = match items.first() {
                Some(Sexp::Atom(h)) => h.as_str(),
                _ => return Err(ExportError::Syntax("expected operator application".into())),
            };
            if head == "forall" || head == "exists" {
                if items.len() != 3 {
                    return Err(ExportError::Syntax(format!(
                        "{head} needs binders and a body"
                    )));
                }
                let binders = match &items[1] {
                    Sexp::List(bs) => bs,
                    _ => return Err(ExportError::Syntax("binder list must be a list".into())),
                };
                let mut added = 0;
                for b in binders {
                    match b {
                        Sexp::List(pair) if pair.len() == 2 => match (&pair[0], &pair[1]) {
                            (Sexp::Atom(name), Sexp::Atom(sort)) if sort == "Real" => {
                                bound.push(name.clone());
                                added += 1;
                            }
                            _ => {
                                return Err(ExportError::Syntax(
                                    "binders must be (name Real)".into(),
                                ))
                            }
                        },
                        _ => return Err(ExportError::Syntax("malformed binder".into())),
                    }
                }
                validate_term(&items[2], declared, bound)?;
                bound.truncate(bound.len() - added);
                Ok(())
            } else if BUILTIN_OPS.contains(&head) {
                if items.len() < 2 {
                    return Err(ExportError::Syntax(format!(
                        "operator `{head}` needs arguments"
                    )));
                }
                for arg in &items[1..] {
                    validate_term(arg, declared, bound)?;
                }
                Ok(())
            } else {
                Err(ExportError::Syntax(format!("unknown operator `{head}`")))
            }
        }
    }
}

/// Check balanced s-expressions, command shape, single declaration per
/// constant and declared-before-use throughout.
pub fn validate_script(text: &str) -> Result<(), ExportError> {
    let commands = parse_script(text)?;
    let mut declared: Vec<String> = Vec::new();
    for cmd in &commands {
        let items = match cmd {
            Sexp::List(items) if !items.is_empty() => items,
            Sexp::List(_) => return Err(ExportError::Syntax("empty command".into())),
            Sexp::Atom(a) => {
                return Err(ExportError::Syntax(format!(
                    "stray atom `{a}` at top level"
                )))
            }
        };
        let head = match &items[0] {
            Sexp::Atom(h) => h.as_str(),
            _ => return Err(ExportError::Syntax("command head must be a symbol".into())),
        };
        match head {
            "set-logic" => {}
            "declare-const" => match (items.get(1), items.get(2)) {
                (Some(Sexp::Atom(name)), Some(Sexp::Atom(sort)))
                    if items.len() == 3 && sort == "Real" =>
                {
                    if declared.iter().any(|d| d == name) {
                        return Err(ExportError::Syntax(format!("`{name}` declared twice")));
                    }
                    declared.push(name.clone());
                }
                _ => return Err(ExportError::Syntax("malformed declare-const".into())),
            },
            "assert" => {
                if items.len() != 2 {
                    return Err(ExportError::Syntax("assert takes one term".into()));
                }
                validate_term(&items[1], &declared, &mut Vec::new())?;
            }
            "check-sat" | "get-value" | "exit" => {}
            other => {
                return Err(ExportError::Syntax(format!(
                    "unsupported command `{other}`"
                )))
            }
        }
    }
    Ok(())
}

/// Script statistics used by the size tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormulaStats {
    /// Declared constants plus quantifier-bound variables (all names are
    /// unique by construction).
    pub variables: usize,
    /// Longest chain of strictly alternating quantifier kinds.
    pub quantifier_alternation_depth: usize,
}

/// Compute statistics of a script produced by this module.
pub fn formula_stats(text: &str) -> Result<FormulaStats, ExportError> {
    let commands = parse_script(text)?;
    let mut variables = 0usize;

    fn quant_kind(items: &[Sexp]) -> Option<&str> {
        match items.first() {
            Some(Sexp::Atom(h)) if h == "forall" || h == "exists" => Some(h.as_str()),
            _ => None,
        }
    }

    fn walk(term: &Sexp, last: Option<&str>, vars: &mut usize) -> usize {
        match term {
            Sexp::Atom(_) => 0,
            Sexp::List(items) => {
                if let Some(kind) = quant_kind(items) {
                    if let Some(Sexp::List(binders)) = items.get(1) {
                        *vars += binders.len();
                    }
                    let step = usize::from(last != Some(kind));
                    let below = items
                        .iter()
                        .skip(2)
                        .map(|t| walk(t, Some(kind), vars))
                        .max()
                        .unwrap_or(0);
                    step + below
                } else {
                    items.iter().map(|t| walk(t, last, vars)).max().unwrap_or(0)
                }
            }
        }
    }

    let mut depth = 0usize;
    for cmd in &commands {
        if let Sexp::List(items) = cmd {
            match items.first() {
                Some(Sexp::Atom(h)) if h == "declare-const" => variables += 1,
                Some(Sexp::Atom(h)) if h == "assert" => {
                    for t in &items[1..] {
                        depth = depth.max(walk(t, None, &mut variables));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(FormulaStats {
        variables,
        quantifier_alternation_depth: depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVerdict {
    Sat,
    Unsat,
    Unknown,
}

/// Feed a script to an external solver executable and read the verdict
/// from its standard output.
pub fn run_solver(solver: &Path, script: &str) -> Result<SolverVerdict, ExportError> {
    let mut file = tempfile::Builder::new().suffix(".smt2").tempfile()?;
    file.write_all(script.as_bytes())?;
    file.flush()?;
    let output = Command::new(solver)
        .arg(file.path())
        .output()
        .map_err(|e| ExportError::Solver(format!("failed to spawn {}: {e}", solver.display())))?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    for line in stdout.lines() {
        match line.trim() {
            "sat" => return Ok(SolverVerdict::Sat),
            "unsat" => return Ok(SolverVerdict::Unsat),
            "unknown" => return Ok(SolverVerdict::Unknown),
            _ => {}
        }
    }
    Err(ExportError::Solver(format!(
        "no verdict in solver output: {}",
        stdout.lines().next().unwrap_or("<empty>")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::Transition;
    use crate::testfix;

    #[test]
    fn upset_counts_match_dedekind_numbers() {
        assert_eq!(enumerate_upsets(0).len(), 2);
        assert_eq!(enumerate_upsets(1).len(), 3);
        assert_eq!(enumerate_upsets(2).len(), 6);
        assert_eq!(enumerate_upsets(3).len(), 20);
        assert_eq!(enumerate_upsets(4).len(), 168);
    }

    #[test]
    fn a1_script_validates_and_is_deterministic() {
        let a1 = testfix::a1();
        let s1 = export_measure(&a1).unwrap();
        let s2 = export_measure(&a1).unwrap();
        assert_eq!(s1, s2);
        validate_script(&s1).unwrap();
        assert!(s1.contains("(check-sat)"));
    }

    #[test]
    fn a2_and_a3_scripts_validate() {
        for aut in [testfix::a2(), testfix::a3()] {
            validate_script(&export_measure(&aut).unwrap()).unwrap();
        }
    }

    #[test]
    fn a3_uses_more_variables_than_a1() {
        let s1 = formula_stats(&export_measure(&testfix::a1()).unwrap()).unwrap();
        let s3 = formula_stats(&export_measure(&testfix::a3()).unwrap()).unwrap();
        assert!(s3.variables > s1.variables, "{s3:?} vs {s1:?}");
        assert!(s1.quantifier_alternation_depth >= 2);
    }

    #[test]
    fn stats_are_deterministic_and_count_vectors() {
        let a1 = testfix::a1();
        let script = export_measure(&a1).unwrap();
        let stats = formula_stats(&script).unwrap();
        assert_eq!(stats, formula_stats(&script).unwrap());
        // Each vector carries one real per subset atom, plus `measure`.
        let atoms = 1usize << a1.width();
        assert_eq!((stats.variables - 1) % atoms, 0);
    }

    #[test]
    fn compare_script_embeds_threshold() {
        let a1 = testfix::a1();
        let script = export_compare(&a1, Ratio::new(1, 2)).unwrap();
        validate_script(&script).unwrap();
        assert!(script.contains("(assert (> measure (/ 1 2)))"));
        assert!(matches!(
            export_compare(&a1, Ratio::new(3, 2)),
            Err(ExportError::BadThreshold(_))
        ));
    }

    #[test]
    fn deviation_script_validates() {
        let a1 = testfix::a1();
        let script = export_deviation_check(&a1, 1.0, 1e-6).unwrap();
        validate_script(&script).unwrap();
    }

    #[test]
    fn d4_single_state_script_validates() {
        // One state of priority 3 pads to d=4: width 4, deeper quantifier
        // nesting through all four stage levels.
        let aut = crate::automaton::Automaton::from_parts(
            vec!["a".into()],
            vec!["q".into()],
            vec![3],
            0,
            [Transition {
                state: 0,
                letter: 0,
                left: 0,
                right: 0,
            }],
        )
        .unwrap();
        assert_eq!(aut.d(), 4);
        let script = export_measure(&aut).unwrap();
        validate_script(&script).unwrap();
        let stats = formula_stats(&script).unwrap();
        assert!(stats.quantifier_alternation_depth >= 4, "{stats:?}");
    }

    #[test]
    fn width_bound_enforced() {
        let wide = crate::automaton::Automaton::from_parts(
            vec!["a".into()],
            (0..4).map(|i| format!("q{i}")).collect(),
            vec![2; 4],
            0,
            [Transition {
                state: 0,
                letter: 0,
                left: 1,
                right: 2,
            }],
        )
        .unwrap();
        assert!(matches!(
            export_measure(&wide),
            Err(ExportError::WidthBound(8))
        ));
    }

    #[test]
    fn validator_rejects_malformed_scripts() {
        assert!(validate_script("(assert (= x 1)").is_err());
        assert!(validate_script("(assert (= x 1))").is_err());
        assert!(validate_script("(declare-const x Real)(declare-const x Real)").is_err());
        assert!(validate_script("(declare-const x Real)(assert (frobnicate x))").is_err());
        validate_script("(declare-const x Real)(assert (= x 1))(check-sat)").unwrap();
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("1/2").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_rational("0.25").unwrap(), Ratio::new(1, 4));
        assert_eq!(parse_rational("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_rational(".5").unwrap(), Ratio::new(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn fractions_never_decimals() {
        let script = export_deviation_check(&testfix::a1(), 0.5, 1e-6).unwrap();
        for line in script.lines().filter(|l| l.starts_with("(assert")) {
            assert!(!line.contains("0.5"), "decimal leaked into {line}");
        }
    }

    /// Minimal arithmetic evaluator for quantifier-free emitted terms,
    /// used to check the relation encodings against the numeric ops.
    mod qf_eval {
        use super::super::Sexp;
        use std::collections::HashMap;

        pub enum Value {
            Real(f64),
            Bool(bool),
        }

        impl Value {
            fn real(&self) -> f64 {
                match self {
                    Value::Real(x) => *x,
                    Value::Bool(_) => panic!("expected a real"),
                }
            }
            pub fn bool(&self) -> bool {
                match self {
                    Value::Bool(b) => *b,
                    Value::Real(_) => panic!("expected a bool"),
                }
            }
        }

        const EPS: f64 = 1e-9;

        pub fn eval(term: &Sexp, env: &HashMap<String, f64>) -> Value {
            match term {
                Sexp::Atom(a) => {
                    if let Ok(x) = a.parse::<f64>() {
                        Value::Real(x)
                    } else {
                        Value::Real(*env.get(a).unwrap_or_else(|| panic!("unbound `{a}`")))
                    }
                }
                Sexp::List(items) => {
                    let head = match &items[0] {
                        Sexp::Atom(h) => h.as_str(),
                        _ => panic!("operator expected"),
                    };
                    let args: Vec<Value> = items[1..].iter().map(|t| eval(t, env)).collect();
                    match head {
                        "+" => Value::Real(args.iter().map(Value::real).sum()),
                        "*" => Value::Real(args.iter().map(Value::real).product()),
                        "-" => Value::Real(if args.len() == 1 {
                            -args[0].real()
                        } else {
                            args[0].real() - args[1].real()
                        }),
                        "/" => Value::Real(args[0].real() / args[1].real()),
                        "=" => Value::Bool((args[0].real() - args[1].real()).abs() <= EPS),
                        "<=" => Value::Bool(args[0].real() <= args[1].real() + EPS),
                        ">=" => Value::Bool(args[0].real() + EPS >= args[1].real()),
                        "<" => Value::Bool(args[0].real() < args[1].real() - EPS),
                        ">" => Value::Bool(args[0].real() > args[1].real() + EPS),
                        "and" => Value::Bool(args.iter().all(Value::bool)),
                        "or" => Value::Bool(args.iter().any(Value::bool)),
                        "not" => Value::Bool(!args[0].bool()),
                        other => panic!("operator `{other}` not supported here"),
                    }
                }
            }
        }
    }

    fn bind_vector(
        env: &mut std::collections::HashMap<String, f64>,
        ctx: &FoBuildContext<'_>,
        id: usize,
        dist: &crate::powerdomain::Dist,
    ) {
        for &m in &ctx.atoms {
            env.insert(ctx.var(id, m), dist.mass(RSet(m)));
        }
    }

    fn parse_single(text: &str) -> Sexp {
        let mut parsed = parse_script(text).unwrap();
        assert_eq!(parsed.len(), 1);
        parsed.pop().unwrap()
    }

    #[test]
    fn basic_relations_agree_with_numeric_ops() {
        use crate::powerdomain::{dist_delta, dist_superficial, Dist, SuperficialMap};
        let a1 = testfix::a1();
        let mut ctx = FoBuildContext::new(&a1).unwrap();
        let x = ctx.fresh();
        let y = ctx.fresh();
        let alpha = Dist::from_map(
            [
                (RSet(0), 0.25),
                (RSet(1), 0.125),
                (RSet(2), 0.25),
                (RSet(3), 0.375),
            ]
            .into(),
        );
        let cases: [(Term, Dist); 4] = [
            (Term::Basic(Symbol::Delta), dist_delta(&a1, &alpha)),
            (
                Term::Basic(Symbol::Bid(1)),
                dist_superficial(&a1, SuperficialMap::Bid(1), &alpha).unwrap(),
            ),
            (
                Term::Basic(Symbol::Bid(2)),
                dist_superficial(&a1, SuperficialMap::Bid(2), &alpha).unwrap(),
            ),
            (
                Term::Basic(Symbol::Cut(1)),
                dist_superficial(&a1, SuperficialMap::Cut(1), &alpha).unwrap(),
            ),
        ];
        for (term, image) in &cases {
            let rel = parse_single(&ctx.rel(term, x, y));
            let mut env = std::collections::HashMap::new();
            bind_vector(&mut env, &ctx, x, &alpha);
            bind_vector(&mut env, &ctx, y, image);
            assert!(
                qf_eval::eval(&rel, &env).bool(),
                "relation rejected the true image"
            );
            // A wrong image must be rejected.
            env.insert(ctx.var(y, 0), image.mass(RSet(0)) + 0.25);
            assert!(
                !qf_eval::eval(&rel, &env).bool(),
                "relation accepted a wrong image"
            );
        }
    }

    #[test]
    fn order_and_simplex_encodings_agree_with_numeric_checks() {
        use crate::powerdomain::{dist_leq_naive, Dist};
        let a1 = testfix::a1();
        let mut ctx = FoBuildContext::new(&a1).unwrap();
        let u = ctx.fresh();
        let v = ctx.fresh();
        let bottom = Dist::point_mass(RSet(0));
        let top = Dist::point_mass(RSet(3));
        let split = Dist::from_map([(RSet(1), 0.5), (RSet(2), 0.5)].into());
        let wide = Dist::from_map([(RSet(0), 0.5), (RSet(3), 0.5)].into());
        let leq = parse_single(&ctx.leq(u, v));
        for (lo, hi) in [
            (&bottom, &top),
            (&top, &bottom),
            (&split, &wide),
            (&wide, &split),
            (&top, &top),
        ] {
            let mut env = std::collections::HashMap::new();
            bind_vector(&mut env, &ctx, u, lo);
            bind_vector(&mut env, &ctx, v, hi);
            assert_eq!(
                qf_eval::eval(&leq, &env).bool(),
                dist_leq_naive(&a1, lo, hi).unwrap(),
                "order encoding disagrees with the enumeration check"
            );
        }
        let simplex = parse_single(&ctx.simplex(u));
        let mut env = std::collections::HashMap::new();
        bind_vector(&mut env, &ctx, u, &split);
        assert!(qf_eval::eval(&simplex, &env).bool());
        env.insert(ctx.var(u, 1), 0.75);
        assert!(!qf_eval::eval(&simplex, &env).bool());
    }

    #[cfg(unix)]
    #[test]
    fn solver_plumbing_reads_verdicts() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let fake = |name: &str, body: &str| {
            let path = dir.path().join(name);
            std::fs::write(&path, body).unwrap();
            std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
            path
        };
        let unsat = fake("unsat.sh", "#!/bin/sh\necho unsat\n");
        let sat = fake("sat.sh", "#!/bin/sh\necho 'checking...'\necho sat\n");
        let silent = fake("silent.sh", "#!/bin/sh\necho no verdict here\n");
        let script = "(set-logic NRA)(check-sat)";
        assert_eq!(run_solver(&unsat, script).unwrap(), SolverVerdict::Unsat);
        assert_eq!(run_solver(&sat, script).unwrap(), SolverVerdict::Sat);
        assert!(matches!(
            run_solver(&silent, script),
            Err(ExportError::Solver(_))
        ));
        assert!(matches!(
            run_solver(std::path::Path::new("/nonexistent/solver"), script),
            Err(ExportError::Solver(_))
        ));
    }

    /// Runs only when an external solver is configured; the threshold
    /// scripts decide the comparison for the trivial fixtures.
    #[test]
    fn solver_decides_threshold_scripts() {
        let Some(solver) = std::env::var_os("TREEMEASURE_SOLVER").map(std::path::PathBuf::from)
        else {
            return;
        };
        // A1 has measure 1, A2 has measure 0.
        let above_half = export_compare(&testfix::a1(), Ratio::new(1, 2)).unwrap();
        assert_eq!(
            run_solver(&solver, &above_half).unwrap(),
            SolverVerdict::Sat
        );
        let a2_above_half = export_compare(&testfix::a2(), Ratio::new(1, 2)).unwrap();
        assert_eq!(
            run_solver(&solver, &a2_above_half).unwrap(),
            SolverVerdict::Unsat
        );
    }
}
