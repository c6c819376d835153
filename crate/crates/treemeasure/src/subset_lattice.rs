//! The finite lattice `R = P(Q x {1..d})` of state-priority subsets, with
//! the transition maps, the coordinate shuffles underlying `Bid`/`Cut`, the
//! parity order and the structural predicates used by the invariant hooks.
//!
//! Subsets are bitmasks of width `|Q| * d`, bit `q*d + (i-1)` standing for
//! the pair `(q, i)`. All functions here are pure and cheap; the measure
//! pipeline calls them in inner loops.

use thiserror::Error;

use crate::automaton::Automaton;

/// A subset of the automaton's states.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QSet(pub u64);

/// A subset of `Q x {1..d}`. The numeric bitmask order doubles as the
/// canonical total order used to sort distribution supports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RSet(pub u64);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("unknown letter index {0}")]
    UnknownLetter(usize),
    #[error("{op} index {n} out of range 1..={max}")]
    IndexOutOfRange { op: &'static str, n: u32, max: u32 },
}

impl QSet {
    pub fn contains(self, q: usize) -> bool {
        self.0 >> q & 1 != 0
    }

    pub fn insert(&mut self, q: usize) {
        self.0 |= 1 << q;
    }

    pub fn is_subset(self, other: QSet) -> bool {
        self.0 & !other.0 == 0
    }
}

#[inline]
fn bit(q: usize, i: u32, d: u32) -> u32 {
    debug_assert!((1..=d).contains(&i));
    q as u32 * d + (i - 1)
}

impl RSet {
    /// Membership of the pair `(q, i)` with `1 <= i <= d`.
    #[inline]
    pub fn contains(self, q: usize, i: u32, d: u32) -> bool {
        self.0 >> bit(q, i, d) & 1 != 0
    }

    #[inline]
    pub fn insert(&mut self, q: usize, i: u32, d: u32) {
        self.0 |= 1u64 << bit(q, i, d);
    }

    pub fn is_subset(self, other: RSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// The full set `Q x {1..d}`.
pub fn rset_full(aut: &Automaton) -> RSet {
    let width = aut.width();
    debug_assert!(width <= 64);
    if width == 64 {
        RSet(u64::MAX)
    } else {
        RSet((1u64 << width) - 1)
    }
}

/// Render an `RSet` as `{(q,1), ...}` using the automaton's state names.
pub fn format_rset(aut: &Automaton, r: RSet) -> String {
    let d = aut.d();
    let mut parts = Vec::new();
    for q in 0..aut.num_states() {
        for i in 1..=d {
            if r.contains(q, i, d) {
                parts.push(format!("({},{i})", aut.states()[q]));
            }
        }
    }
    format!("{{{}}}", parts.join(","))
}

/// The per-letter transition map: states that can take a transition on
/// `letter` whose children carry the state's own priority in `rl`/`rr`.
/// Monotone in both set arguments.
pub fn delta_a(aut: &Automaton, letter: usize, rl: RSet, rr: RSet) -> Result<QSet, LatticeError> {
    if letter >= aut.num_letters() {
        return Err(LatticeError::UnknownLetter(letter));
    }
    Ok(delta_a_raw(aut, letter, rl, rr))
}

pub(crate) fn delta_a_raw(aut: &Automaton, letter: usize, rl: RSet, rr: RSet) -> QSet {
    let d = aut.d();
    let mut out = QSet::default();
    for t in aut.transitions() {
        if t.letter != letter || out.contains(t.state) {
            continue;
        }
        let p = aut.priority(t.state);
        if rl.contains(t.left, p, d) && rr.contains(t.right, p, d) {
            out.insert(t.state);
        }
    }
    out
}

/// The priority-truncated transition map on `R`: the pair `(q, i)` is
/// produced when some transition on `letter` finds both children at
/// priority level `min(priority(q), i)`. Coordinate `i` of the result is
/// exactly `delta_a` applied to the level-`i` truncations of the inputs.
pub fn big_delta_a(
    aut: &Automaton,
    letter: usize,
    rl: RSet,
    rr: RSet,
) -> Result<RSet, LatticeError> {
    if letter >= aut.num_letters() {
        return Err(LatticeError::UnknownLetter(letter));
    }
    Ok(big_delta_a_raw(aut, letter, rl, rr))
}

pub(crate) fn big_delta_a_raw(aut: &Automaton, letter: usize, rl: RSet, rr: RSet) -> RSet {
    let d = aut.d();
    let mut out = RSet::default();
    for t in aut.transitions() {
        if t.letter != letter {
            continue;
        }
        let p = aut.priority(t.state);
        // Levels below the state's own priority check level i; levels from
        // p upward all check level p, so one test covers the whole tail.
        for i in 1..p.min(d) {
            if rl.contains(t.left, i, d) && rr.contains(t.right, i, d) {
                out.insert(t.state, i, d);
            }
        }
        if rl.contains(t.left, p, d) && rr.contains(t.right, p, d) {
            for i in p..=d {
                out.insert(t.state, i, d);
            }
        }
    }
    out
}

/// Overwrite coordinates `n..=d` with coordinate `n-2`, where coordinate
/// `-1` is empty and coordinate `0` is full.
pub fn bid_r(aut: &Automaton, n: u32, r: RSet) -> Result<RSet, LatticeError> {
    let d = aut.d();
    if !(1..=d).contains(&n) {
        return Err(LatticeError::IndexOutOfRange {
            op: "bid",
            n,
            max: d,
        });
    }
    let mut out = RSet::default();
    for q in 0..aut.num_states() {
        for i in 1..n {
            if r.contains(q, i, d) {
                out.insert(q, i, d);
            }
        }
        let tail = match n {
            1 => false,
            2 => true,
            _ => r.contains(q, n - 2, d),
        };
        if tail {
            for i in n..=d {
                out.insert(q, i, d);
            }
        }
    }
    Ok(out)
}

/// Overwrite coordinates `n..=d` with coordinate `n+1`.
pub fn cut_r(aut: &Automaton, n: u32, r: RSet) -> Result<RSet, LatticeError> {
    let d = aut.d();
    if !(1..=d.saturating_sub(1)).contains(&n) {
        return Err(LatticeError::IndexOutOfRange {
            op: "cut",
            n,
            max: d.saturating_sub(1),
        });
    }
    let mut out = RSet::default();
    for q in 0..aut.num_states() {
        for i in 1..n {
            if r.contains(q, i, d) {
                out.insert(q, i, d);
            }
        }
        if r.contains(q, n + 1, d) {
            for i in n..=d {
                out.insert(q, i, d);
            }
        }
    }
    Ok(out)
}

/// Rank of a priority in the parity order `1 < 3 < 5 < ... < 6 < 4 < 2`:
/// odd priorities ascend, even priorities descend above all odd ones.
fn parity_rank(i: u32) -> (u8, i64) {
    if i % 2 == 1 {
        (0, i as i64)
    } else {
        (1, -(i as i64))
    }
}

/// The parity order (reflexive): every odd priority lies below every even
/// one.
pub fn parity_leq(i: u32, j: u32) -> bool {
    parity_rank(i) <= parity_rank(j)
}

/// Pointwise orderedness: for every state, membership respects the parity
/// order of priorities.
pub fn is_ordered(aut: &Automaton, r: RSet) -> bool {
    let d = aut.d();
    for q in 0..aut.num_states() {
        for i in 1..=d {
            if !r.contains(q, i, d) {
                continue;
            }
            for j in 1..=d {
                if parity_leq(i, j) && !r.contains(q, j, d) {
                    return false;
                }
            }
        }
    }
    true
}

/// Coordinates `n..=d` all agree with coordinate `n`; `n = d+1` is
/// vacuously true.
pub fn is_n_fixed(aut: &Automaton, n: u32, r: RSet) -> bool {
    let d = aut.d();
    debug_assert!((1..=d + 1).contains(&n));
    if n > d {
        return true;
    }
    for q in 0..aut.num_states() {
        let head = r.contains(q, n, d);
        for i in n + 1..=d {
            if r.contains(q, i, d) != head {
                return false;
            }
        }
    }
    true
}
