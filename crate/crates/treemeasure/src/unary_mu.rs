//! Terms of the unary fixpoint calculus and a generic evaluator.
//!
//! A term is built from the basic symbols `Delta`, `Bid(n)`, `Cut(n)` by
//! sequential composition and the two limit operators. `up(F)` iterates `F`
//! from its argument until the interpretation domain reports stabilization,
//! returning the least fixed point above the argument (when the argument
//! lies in an ascending region); `down(F)` is the descending dual. The
//! evaluator is agnostic about the domain: elements, basic-function
//! semantics, the stabilization test and any invariant checking are all
//! supplied through the [`Domain`] trait.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Basic function symbols. `Bid(n)` overwrites coordinates `n..=d` with
/// coordinate `n-2` (empty for `n = 1`, full for `n = 2`); `Cut(n)`
/// overwrites them with coordinate `n+1`; `Delta` applies the automaton
/// transition map at every truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Delta,
    Bid(u32),
    Cut(u32),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Delta => write!(f, "Delta"),
            Symbol::Bid(n) => write!(f, "Bid{n}"),
            Symbol::Cut(n) => write!(f, "Cut{n}"),
        }
    }
}

/// A term of the calculus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Basic(Symbol),
    Seq(Box<Term>, Box<Term>),
    LimUp(Box<Term>),
    LimDown(Box<Term>),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("priority ceiling must be even and >= 2, got {0}")]
    BadCeiling(u32),
}

/// Errors surfaced during evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    /// A limit node exhausted its budget of basic-function applications
    /// before the domain reported stabilization.
    #[error("iteration limit {cap} reached in limit node at `{path}`")]
    IterationLimit { path: String, cap: u64 },
    /// Failure raised by the domain's basic-function evaluation.
    #[error("{0}")]
    Domain(String),
}

/// Evaluation stages passed to [`Domain::observe`]. The previous iterate is
/// exposed at limit steps so domains can check ascent or descent.
pub enum Stage<'a, E> {
    /// A basic function was just applied; the observed value is its output.
    Basic(Symbol),
    /// One body evaluation inside a limit node finished; the observed value
    /// is the new iterate.
    LimStep {
        ascending: bool,
        iteration: u64,
        prev: &'a E,
    },
    /// A limit node stabilized at the observed value.
    LimDone { ascending: bool, iterations: u64 },
}

/// An interpretation domain for the calculus.
///
/// `eval_basic` must be monotone on the region where it is exercised; the
/// evaluator cannot check this, each concrete domain carries its own tests.
/// `stabilized` detects a fixed point (exact equality on finite lattices,
/// a metric tolerance on distributions) — the evaluator never compares
/// elements itself.
pub trait Domain {
    type Elem: Clone;

    fn eval_basic(&self, sym: Symbol, x: &Self::Elem) -> Result<Self::Elem, EvalError>;

    fn stabilized(&self, prev: &Self::Elem, next: &Self::Elem) -> bool;

    /// Budget of basic-function applications per limit-node activation.
    fn iteration_cap(&self) -> u64 {
        1_000_000
    }

    /// Invariant hook; the default observes nothing.
    fn observe(&self, _stage: Stage<'_, Self::Elem>, _value: &Self::Elem) {}
}

/// Per-limit-node evaluation statistics, keyed by the node's structural
/// path (child indices from the root, `.`-separated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimTrace {
    pub path: String,
    pub ascending: bool,
    /// Productive iterations: body evaluations that had not yet stabilized,
    /// summed over all activations of the node.
    pub iterations: u64,
    pub activations: u64,
    pub converged: bool,
}

/// Evaluation trace: one record per limit node plus the total number of
/// basic-function applications.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalTrace {
    pub lims: Vec<LimTrace>,
    pub total_basic_applications: u64,
}

/// Build the measure formula for an even priority ceiling `d`:
///
/// ```text
/// Phi_d = Bid_d ; down(Delta)
/// Phi_n = Bid_n ; up(up(Delta) ; Phi_{n+1} ; Cut_n)      n odd
/// Phi_n = Bid_n ; down(down(Delta) ; Phi_{n+1} ; Cut_n)  n even, n < d
/// ```
///
/// and return `Phi_1`.
pub fn build_phi(d: u32) -> Result<Term, TermError> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(TermError::BadCeiling(d));
    }
    let mut phi = Term::Seq(
        Box::new(Term::Basic(Symbol::Bid(d))),
        Box::new(Term::LimDown(Box::new(Term::Basic(Symbol::Delta)))),
    );
    for n in (1..d).rev() {
        let lim_delta = Term::Basic(Symbol::Delta);
        let body = Term::Seq(
            Box::new(Term::Seq(
                Box::new(if n % 2 == 1 {
                    Term::LimUp(Box::new(lim_delta))
                } else {
                    Term::LimDown(Box::new(lim_delta))
                }),
                Box::new(phi),
            )),
            Box::new(Term::Basic(Symbol::Cut(n))),
        );
        let lim_body = if n % 2 == 1 {
            Term::LimUp(Box::new(body))
        } else {
            Term::LimDown(Box::new(body))
        };
        phi = Term::Seq(Box::new(Term::Basic(Symbol::Bid(n))), Box::new(lim_body));
    }
    Ok(phi)
}

/// Number of basic-symbol leaves.
pub fn term_size(t: &Term) -> usize {
    match t {
        Term::Basic(_) => 1,
        Term::Seq(f, g) => term_size(f) + term_size(g),
        Term::LimUp(f) | Term::LimDown(f) => term_size(f),
    }
}

/// Basic symbols in left-to-right order.
pub fn leaf_symbols(t: &Term) -> Vec<Symbol> {
    fn walk(t: &Term, out: &mut Vec<Symbol>) {
        match t {
            Term::Basic(s) => out.push(*s),
            Term::Seq(f, g) => {
                walk(f, out);
                walk(g, out);
            }
            Term::LimUp(f) | Term::LimDown(f) => walk(f, out),
        }
    }
    let mut out = Vec::new();
    walk(t, &mut out);
    out
}

/// Parenthesized rendering, e.g. `Bid1 ; up(up(Delta) ; Bid2 ; down(Delta) ; Cut1)`.
pub fn pretty(t: &Term) -> String {
    match t {
        Term::Basic(s) => s.to_string(),
        Term::Seq(f, g) => format!("{} ; {}", pretty(f), pretty(g)),
        Term::LimUp(f) => format!("up({})", pretty(f)),
        Term::LimDown(f) => format!("down({})", pretty(f)),
    }
}

struct Evaluator<'d, D: Domain> {
    dom: &'d D,
    basics: u64,
    path: Vec<usize>,
    lims: BTreeMap<String, LimTrace>,
}

impl<'d, D: Domain> Evaluator<'d, D> {
    fn path_string(&self) -> String {
        if self.path.is_empty() {
            "root".to_string()
        } else {
            self.path
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(".")
        }
    }

    fn eval(&mut self, t: &Term, x: &D::Elem) -> Result<D::Elem, EvalError> {
        match t {
            Term::Basic(sym) => {
                self.basics += 1;
                let y = self.dom.eval_basic(*sym, x)?;
                self.dom.observe(Stage::Basic(*sym), &y);
                Ok(y)
            }
            Term::Seq(f, g) => {
                self.path.push(0);
                let mid = self.eval(f, x);
                self.path.pop();
                let mid = mid?;
                self.path.push(1);
                let out = self.eval(g, &mid);
                self.path.pop();
                out
            }
            Term::LimUp(f) => self.eval_lim(f, x, true),
            Term::LimDown(f) => self.eval_lim(f, x, false),
        }
    }

    fn eval_lim(
        &mut self,
        body: &Term,
        x: &D::Elem,
        ascending: bool,
    ) -> Result<D::Elem, EvalError> {
        let key = self.path_string();
        let cap = self.dom.iteration_cap();
        let start_basics = self.basics;
        let entry = self.lims.entry(key.clone()).or_insert(LimTrace {
            path: key.clone(),
            ascending,
            iterations: 0,
            activations: 0,
            converged: true,
        });
        entry.activations += 1;

        let mut cur = x.clone();
        let mut iteration = 0u64;
        loop {
            self.path.push(0);
            let next = self.eval(body, &cur);
            self.path.pop();
            let next = next?;
            iteration += 1;
            self.dom.observe(
                Stage::LimStep {
                    ascending,
                    iteration,
                    prev: &cur,
                },
                &next,
            );
            if self.dom.stabilized(&cur, &next) {
                self.dom.observe(
                    Stage::LimDone {
                        ascending,
                        iterations: iteration - 1,
                    },
                    &next,
                );
                let entry = self.lims.get_mut(&key).expect("lim record");
                entry.iterations += iteration - 1;
                return Ok(next);
            }
            if self.basics - start_basics > cap {
                let entry = self.lims.get_mut(&key).expect("lim record");
                entry.iterations += iteration;
                entry.converged = false;
                return Err(EvalError::IterationLimit { path: key, cap });
            }
            cur = next;
        }
    }
}

/// Evaluate `t` on `x0`, discarding the trace.
pub fn evaluate<D: Domain>(t: &Term, dom: &D, x0: &D::Elem) -> Result<D::Elem, EvalError> {
    evaluate_traced(t, dom, x0).map(|(v, _)| v)
}

/// Evaluate `t` on `x0` and report per-limit-node statistics. Composition
/// runs left to right; each limit node iterates its body until the domain's
/// stabilization test fires, erroring out if the cap is hit first. The trace
/// is returned alongside the error's partial information on failure paths
/// only through the error itself.
pub fn evaluate_traced<D: Domain>(
    t: &Term,
    dom: &D,
    x0: &D::Elem,
) -> Result<(D::Elem, EvalTrace), EvalError> {
    let mut ev = Evaluator {
        dom,
        basics: 0,
        path: Vec::new(),
        lims: BTreeMap::new(),
    };
    let value = ev.eval(t, x0)?;
    let trace = EvalTrace {
        lims: ev.lims.into_values().collect(),
        total_basic_applications: ev.basics,
    };
    Ok((value, trace))
}
