//! The probabilistic powerdomain over `R`: sparse distributions, the lifted
//! basic functions, the stochastic dominance order (checked two independent
//! ways), and the end-to-end measure pipeline.
//!
//! A distribution is a sparse map from `RSet` atoms to probabilities. The
//! transition map lifts to distributions by pairing independent left/right
//! samples and a uniform root letter; coordinate shuffles lift by pushing
//! atoms forward. Evaluating the measure formula over this domain from the
//! point mass at the empty set and summing the final distribution over
//! `{R | (q_I, 1) in R}` yields the coin-flipping measure of the automaton's
//! language.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::automaton::Automaton;
use crate::subset_lattice::{self, bid_r, big_delta_a_raw, cut_r, RSet};
use crate::unary_mu::{self, Domain, EvalError, Stage, Symbol};

/// Sparse probability distribution over `RSet`s: canonically sorted
/// support, strictly positive masses, total mass 1 up to accumulated
/// floating-point drift.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist {
    entries: Vec<(RSet, f64)>,
}

impl Dist {
    /// The distribution putting all mass on `r`.
    pub fn point_mass(r: RSet) -> Dist {
        Dist {
            entries: vec![(r, 1.0)],
        }
    }

    /// Collapse an accumulator map, dropping exact zeros.
    pub fn from_map(map: BTreeMap<RSet, f64>) -> Dist {
        Dist {
            entries: map.into_iter().filter(|&(_, p)| p != 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(RSet, f64)] {
        &self.entries
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn mass(&self, r: RSet) -> f64 {
        self.entries
            .binary_search_by_key(&r, |&(k, _)| k)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// Mass of all atoms containing the pair `(q, i)`.
    pub fn slice_mass(&self, q: usize, i: u32, d: u32) -> f64 {
        self.entries
            .iter()
            .filter(|(r, _)| r.contains(q, i, d))
            .map(|&(_, p)| p)
            .sum()
    }
}

/// Total variation distance `max |alpha(A) - beta(A)|` over events, i.e.
/// half the L1 distance of the mass vectors.
pub fn tv_distance(alpha: &Dist, beta: &Dist) -> f64 {
    let (a, b) = (alpha.entries(), beta.entries());
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ra, pa)), Some(&(rb, pb))) => {
                if ra < rb {
                    sum += pa;
                    i += 1;
                } else if rb < ra {
                    sum += pb;
                    j += 1;
                } else {
                    sum += (pa - pb).abs();
                    i += 1;
                    j += 1;
                }
            }
            (Some(&(_, pa)), None) => {
                sum += pa;
                i += 1;
            }
            (None, Some(&(_, pb))) => {
                sum += pb;
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    sum / 2.0
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PowerdomainError {
    #[error("stochastic-order enumeration needs width |Q|*d <= 4, got {0}")]
    NaiveWidthExceeded(usize),
    #[error("{0}")]
    Lattice(#[from] subset_lattice::LatticeError),
}

/// The transition map on distributions: pick a root letter uniformly and
/// independent left/right atoms from `alpha`, push through the truncated
/// transition map. Iterates over support pairs only.
///
/// The raw accumulation has total mass `(sum alpha)^2`, so any rounding
/// drift in the input would double per application; the result is rescaled
/// to unit mass to keep long fixpoint iterations on the simplex.
pub fn dist_delta(aut: &Automaton, alpha: &Dist) -> Dist {
    dist_delta_cached(aut, alpha, &mut HashMap::new())
}

fn dist_delta_cached(
    aut: &Automaton,
    alpha: &Dist,
    cache: &mut HashMap<(usize, RSet, RSet), RSet>,
) -> Dist {
    let letters = aut.num_letters();
    let factor = 1.0 / letters as f64;
    let mut acc: BTreeMap<RSet, f64> = BTreeMap::new();
    for letter in 0..letters {
        for &(rl, pl) in alpha.entries() {
            for &(rr, pr) in alpha.entries() {
                let target = *cache
                    .entry((letter, rl, rr))
                    .or_insert_with(|| big_delta_a_raw(aut, letter, rl, rr));
                *acc.entry(target).or_insert(0.0) += factor * pl * pr;
            }
        }
    }
    let total: f64 = acc.values().sum();
    debug_assert!(
        total > 0.0,
        "transition image of a distribution is non-empty"
    );
    if total != 1.0 {
        for mass in acc.values_mut() {
            *mass /= total;
        }
    }
    Dist::from_map(acc)
}

/// A coordinate shuffle to lift pointwise to distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperficialMap {
    Bid(u32),
    Cut(u32),
}

/// Push every support atom through the shuffle and accumulate mass on the
/// images.
pub fn dist_superficial(
    aut: &Automaton,
    which: SuperficialMap,
    alpha: &Dist,
) -> Result<Dist, PowerdomainError> {
    let mut acc: BTreeMap<RSet, f64> = BTreeMap::new();
    for &(r, p) in alpha.entries() {
        let image = match which {
            SuperficialMap::Bid(n) => bid_r(aut, n, r)?,
            SuperficialMap::Cut(n) => cut_r(aut, n, r)?,
        };
        *acc.entry(image).or_insert(0.0) += p;
    }
    Ok(Dist::from_map(acc))
}

/// Upward-closed subsets of the inclusion order on `width`-bit masks,
/// each family encoded as a bitset over atom indices. Cached per width.
fn upset_families(width: usize) -> &'static [Vec<u16>] {
    static CACHE: OnceLock<Vec<Vec<Vec<u16>>>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        (0..=4usize)
            .map(|w| {
                let atoms = 1u32 << w;
                // Bitset of strict-or-equal supersets for each atom.
                let sup: Vec<u32> = (0..atoms)
                    .map(|m| {
                        (0..atoms)
                            .filter(|&n| m & !n == 0)
                            .fold(0u32, |acc, n| acc | 1 << n)
                    })
                    .collect();
                let mut families = Vec::new();
                for fam in 0..1u32 << atoms {
                    let closed = (0..atoms)
                        .all(|m| fam >> m & 1 == 0 || fam & sup[m as usize] == sup[m as usize]);
                    if closed {
                        families.push((0..atoms as u16).filter(|&m| fam >> m & 1 == 1).collect());
                    }
                }
                families
            })
            .collect()
    });
    &all[width]
}

/// Stochastic dominance by direct enumeration of upward-closed families.
/// Only feasible at tiny widths; the per-family comparison carries a
/// `1e-12` tolerance against floating-point drift.
pub fn dist_leq_naive(
    aut: &Automaton,
    alpha: &Dist,
    beta: &Dist,
) -> Result<bool, PowerdomainError> {
    let width = aut.width();
    if width > 4 {
        return Err(PowerdomainError::NaiveWidthExceeded(width));
    }
    let mut a = vec![0.0; 1 << width];
    let mut b = vec![0.0; 1 << width];
    for &(r, p) in alpha.entries() {
        a[r.0 as usize] += p;
    }
    for &(r, p) in beta.entries() {
        b[r.0 as usize] += p;
    }
    for family in upset_families(width) {
        let sa: f64 = family.iter().map(|&m| a[m as usize]).sum();
        let sb: f64 = family.iter().map(|&m| b[m as usize]).sum();
        if sa > sb + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Simple breadth-first-search max-flow on an explicit edge list.
struct FlowNet {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        FlowNet {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: f64) {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.adj[u].push(id);
        self.to.push(u);
        self.cap.push(0.0);
        self.adj[v].push(id + 1);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        const EPS: f64 = 1e-15;
        let mut total = 0.0;
        loop {
            let mut parent_edge = vec![usize::MAX; self.adj.len()];
            let mut queue = std::collections::VecDeque::from([s]);
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > EPS {
                        seen[v] = true;
                        parent_edge[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.to[e ^ 1];
            }
            total += bottleneck;
        }
    }
}

/// Stochastic dominance via a transport plan: `alpha` dominates below
/// `beta` iff mass can flow from each `alpha`-atom to `beta`-atoms that
/// contain it (Strassen). Works at any width; `slack` bounds the total
/// mass allowed to stay unrouted.
pub fn dist_leq_coupling(aut: &Automaton, alpha: &Dist, beta: &Dist, slack: f64) -> bool {
    let _ = aut;
    let m = alpha.support_size();
    let n = beta.support_size();
    let (source, sink) = (m + n, m + n + 1);
    let mut net = FlowNet::new(m + n + 2);
    for (i, &(_, p)) in alpha.entries().iter().enumerate() {
        net.add_edge(source, i, p);
    }
    for (j, &(_, p)) in beta.entries().iter().enumerate() {
        net.add_edge(m + j, sink, p);
    }
    for (i, &(rl, _)) in alpha.entries().iter().enumerate() {
        for (j, &(rr, _)) in beta.entries().iter().enumerate() {
            if rl.is_subset(rr) {
                net.add_edge(i, m + j, 2.0);
            }
        }
    }
    let need = alpha.total_mass().min(beta.total_mass());
    net.max_flow(source, sink) >= need - slack - 1e-12
}

/// Options for the measure pipeline.
#[derive(Debug, Clone)]
pub struct MeasureOpts {
    /// Total-variation stabilization tolerance shared by all limit nodes.
    pub tol: f64,
    /// Budget of basic-function applications per limit-node activation.
    pub max_iterations: u64,
    /// Hard ceiling on distribution support size.
    pub max_support: usize,
    /// Fire the structural invariant checks at stage boundaries.
    pub check_invariants: bool,
}

impl Default for MeasureOpts {
    fn default() -> Self {
        MeasureOpts {
            tol: 1e-9,
            max_iterations: 1_000_000,
            max_support: 65536,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("automaton width |Q|*d = {0} exceeds the 64-bit subset representation")]
    WidthTooLarge(usize),
    #[error("invalid options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

struct DomainScratch {
    delta_cache: HashMap<(usize, RSet, RSet), RSet>,
    violations: Vec<String>,
    max_support_seen: usize,
}

/// Interpretation of the basic symbols over distributions; stabilization is
/// total-variation within `tol`, structural checks are optional.
pub struct DistDomain<'a> {
    aut: &'a Automaton,
    tol: f64,
    cap: u64,
    max_support: usize,
    check_invariants: bool,
    ascent_slack: f64,
    scratch: RefCell<DomainScratch>,
}

/// Build the distribution-domain interpretation used by the evaluator.
pub fn d_interpretation<'a>(aut: &'a Automaton, opts: &MeasureOpts) -> DistDomain<'a> {
    DistDomain {
        aut,
        tol: opts.tol,
        cap: opts.max_iterations,
        max_support: opts.max_support,
        check_invariants: opts.check_invariants,
        ascent_slack: 1e-9,
        scratch: RefCell::new(DomainScratch {
            delta_cache: HashMap::new(),
            violations: Vec::new(),
            max_support_seen: 1,
        }),
    }
}

impl DistDomain<'_> {
    pub fn take_violations(&self) -> Vec<String> {
        self.scratch.borrow_mut().violations.drain(..).collect()
    }

    pub fn max_support_seen(&self) -> usize {
        self.scratch.borrow().max_support_seen
    }

    fn report(&self, msg: String) {
        self.scratch.borrow_mut().violations.push(msg);
    }

    fn check_atoms(&self, label: &str, value: &Dist, pred: impl Fn(RSet) -> bool) {
        for &(r, _) in value.entries() {
            if !pred(r) {
                self.report(format!(
                    "{label}: support atom {} violates the check",
                    subset_lattice::format_rset(self.aut, r)
                ));
                return;
            }
        }
    }
}

impl Domain for DistDomain<'_> {
    type Elem = Dist;

    fn eval_basic(&self, sym: Symbol, x: &Dist) -> Result<Dist, EvalError> {
        let out = match sym {
            Symbol::Delta => {
                let mut scratch = self.scratch.borrow_mut();
                dist_delta_cached(self.aut, x, &mut scratch.delta_cache)
            }
            Symbol::Bid(n) => dist_superficial(self.aut, SuperficialMap::Bid(n), x)
                .map_err(|e| EvalError::Domain(e.to_string()))?,
            Symbol::Cut(n) => dist_superficial(self.aut, SuperficialMap::Cut(n), x)
                .map_err(|e| EvalError::Domain(e.to_string()))?,
        };
        let mut scratch = self.scratch.borrow_mut();
        scratch.max_support_seen = scratch.max_support_seen.max(out.support_size());
        if out.support_size() > self.max_support {
            return Err(EvalError::Domain(format!(
                "support size {} exceeds cap {}",
                out.support_size(),
                self.max_support
            )));
        }
        Ok(out)
    }

    fn stabilized(&self, prev: &Dist, next: &Dist) -> bool {
        tv_distance(prev, next) < self.tol
    }

    fn iteration_cap(&self) -> u64 {
        self.cap
    }

    fn observe(&self, stage: Stage<'_, Dist>, value: &Dist) {
        if !self.check_invariants {
            return;
        }
        let aut = self.aut;
        let d = aut.d();
        match stage {
            Stage::Basic(sym) => {
                let drift = (value.total_mass() - 1.0).abs();
                if drift > 1e-9 {
                    self.report(format!("simplex drift {drift:.3e} after {sym}"));
                }
                match sym {
                    Symbol::Bid(n) => {
                        self.check_atoms(&format!("after Bid{n}"), value, |r| {
                            subset_lattice::is_n_fixed(aut, n, r)
                        });
                    }
                    Symbol::Cut(n) => {
                        // A completed stage-n round: lifted membership in the
                        // invariant set means every atom is ordered and
                        // n-fixed, and the first n-1 coordinate slices are
                        // already fixed by the transition map.
                        self.check_atoms(&format!("after Cut{n}"), value, |r| {
                            subset_lattice::is_n_fixed(aut, n, r)
                                && subset_lattice::is_ordered(aut, r)
                        });
                        let image = {
                            let mut scratch = self.scratch.borrow_mut();
                            dist_delta_cached(aut, value, &mut scratch.delta_cache)
                        };
                        for q in 0..aut.num_states() {
                            for i in 1..n {
                                let before = value.slice_mass(q, i, d);
                                let after = image.slice_mass(q, i, d);
                                if (before - after).abs() > self.tol.max(1e-9) {
                                    self.report(format!(
                                        "marginal saturation broken at ({}, {i}) after Cut{n}: \
                                         {before} -> {after}",
                                        aut.states()[q]
                                    ));
                                }
                            }
                        }
                    }
                    Symbol::Delta => {}
                }
            }
            Stage::LimStep {
                ascending, prev, ..
            } => {
                let ok = if ascending {
                    dist_leq_coupling(aut, prev, value, self.ascent_slack)
                } else {
                    dist_leq_coupling(aut, value, prev, self.ascent_slack)
                };
                if !ok {
                    self.report(format!(
                        "limit iterate not {} in the stochastic order",
                        if ascending { "ascending" } else { "descending" }
                    ));
                }
            }
            Stage::LimDone { .. } => {}
        }
    }
}

/// Per-limit-node convergence data as serialized in reports.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LimReport {
    pub path: String,
    pub iterations: u64,
    pub converged: bool,
}

/// Outcome of the measure pipeline. `wall_time` is informational and kept
/// out of the serialized form so identical runs serialize identically.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureReport {
    pub measure: f64,
    pub d: u32,
    pub states: usize,
    pub term_size: usize,
    pub lims: Vec<LimReport>,
    pub max_support: usize,
    pub violations: Vec<String>,
    pub tol: f64,
    pub cap: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Compute the coin-flipping measure of the automaton's language: evaluate
/// the measure formula over distributions starting from the point mass on
/// the empty set, then sum the final distribution over the atoms containing
/// `(initial, 1)`.
pub fn measure_of_language(
    aut: &Automaton,
    opts: &MeasureOpts,
) -> Result<MeasureReport, MeasureError> {
    if opts.tol <= 0.0 {
        return Err(MeasureError::BadOptions("tol must be > 0".into()));
    }
    if opts.max_iterations < 1 || opts.max_support < 1 {
        return Err(MeasureError::BadOptions("caps must be >= 1".into()));
    }
    let width = aut.width();
    if width > 64 {
        return Err(MeasureError::WidthTooLarge(width));
    }
    let start = Instant::now();
    let phi = unary_mu::build_phi(aut.d()).expect("automaton ceiling is even");
    let dom = d_interpretation(aut, opts);
    let bottom = Dist::point_mass(RSet::default());
    log::debug!(
        "measuring automaton with {} states, d={}",
        aut.num_states(),
        aut.d()
    );
    let (final_dist, trace) = unary_mu::evaluate_traced(&phi, &dom, &bottom)?;
    let d = aut.d();
    // `+ 0.0` turns the empty sum's negative zero into plain zero.
    let measure = final_dist
        .entries()
        .iter()
        .filter(|(r, _)| r.contains(aut.initial(), 1, d))
        .map(|&(_, p)| p)
        .sum::<f64>()
        + 0.0;
    let report = MeasureReport {
        measure,
        d,
        states: aut.num_states(),
        term_size: unary_mu::term_size(&phi),
        lims: trace
            .lims
            .iter()
            .map(|l| LimReport {
                path: l.path.clone(),
                iterations: l.iterations,
                converged: l.converged,
            })
            .collect(),
        max_support: dom.max_support_seen(),
        violations: dom.take_violations(),
        tol: opts.tol,
        cap: opts.max_iterations,
        wall_time: start.elapsed().as_secs_f64(),
    };
    log::debug!(
        "measure {} with max support {} in {:.3}s",
        report.measure,
        report.max_support,
        report.wall_time
    );
    Ok(report)
}

/// Draw a random distribution over the automaton's subset lattice with the
/// given support bound; deterministic in the caller's generator.
pub fn random_dist(aut: &Automaton, rng: &mut impl rand::Rng, max_support: usize) -> Dist {
    let width = aut.width().min(63);
    let atoms = 1u64 << width;
    let support = rng.gen_range(1..=max_support);
    let mut acc: BTreeMap<RSet, f64> = BTreeMap::new();
    for _ in 0..support {
        *acc.entry(RSet(rng.gen_range(0..atoms))).or_insert(0.0) += rng.gen_range(0.01..1.0);
    }
    let total: f64 = acc.values().sum();
    Dist::from_map(acc.into_iter().map(|(r, p)| (r, p / total)).collect())
}

/// Shift part of each atom's mass onto a random superset, producing a
/// distribution that dominates the input in the stochastic order.
pub fn random_upward_shift(aut: &Automaton, alpha: &Dist, rng: &mut impl rand::Rng) -> Dist {
    let width = aut.width().min(63);
    let full = if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    };
    let mut acc: BTreeMap<RSet, f64> = BTreeMap::new();
    for &(r, p) in alpha.entries() {
        let moved = p * rng.gen_range(0.0..=1.0);
        let target = RSet(r.0 | (rng.gen_range(0..=full) & full));
        *acc.entry(r).or_insert(0.0) += p - moved;
        *acc.entry(target).or_insert(0.0) += moved;
    }
    Dist::from_map(acc)
}
