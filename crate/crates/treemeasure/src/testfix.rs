//! Fixture automata shared by unit tests.

use crate::automaton::{Automaton, Transition};

fn t(state: usize, letter: usize, left: usize, right: usize) -> Transition {
    Transition {
        state,
        letter,
        left,
        right,
    }
}

/// One state of priority 2, all transitions present: accepts every tree.
pub fn a1() -> Automaton {
    Automaton::from_parts(
        vec!["a".into(), "b".into()],
        vec!["q".into()],
        vec![2],
        0,
        [t(0, 0, 0, 0), t(0, 1, 0, 0)],
    )
    .unwrap()
}

/// Like `a1` but with no transitions: the empty language.
pub fn a2() -> Automaton {
    Automaton::from_parts(
        vec!["a".into(), "b".into()],
        vec!["q".into()],
        vec![2],
        0,
        [],
    )
    .unwrap()
}

/// Accepts trees whose root is labeled `a`: a root checker plus an
/// all-accepting sink, priorities all 2.
pub fn a3() -> Automaton {
    Automaton::from_parts(
        vec!["a".into(), "b".into()],
        vec!["q0".into(), "s".into()],
        vec![2, 2],
        0,
        [t(0, 0, 1, 1), t(1, 0, 1, 1), t(1, 1, 1, 1)],
    )
    .unwrap()
}

/// One state of priority 2 with a transition only on `a`: accepts exactly
/// the all-`a` tree, a language of measure zero.
pub fn a4() -> Automaton {
    Automaton::from_parts(
        vec!["a".into(), "b".into()],
        vec!["q".into()],
        vec![2],
        0,
        [t(0, 0, 0, 0)],
    )
    .unwrap()
}

/// "Some node is labeled `a`": a guessing state of priority 1 walks toward
/// a claimed occurrence of `a`, switching to an all-accepting sink once it
/// is found. Almost every tree is accepted.
pub fn a5_some_a() -> Automaton {
    let g = 0;
    let s = 1;
    Automaton::from_parts(
        vec!["a".into(), "b".into()],
        vec!["g".into(), "s".into()],
        vec![1, 2],
        g,
        [
            t(g, 0, s, s),
            t(g, 0, g, s),
            t(g, 0, s, g),
            t(g, 1, g, s),
            t(g, 1, s, g),
            t(s, 0, s, s),
            t(s, 1, s, s),
        ],
    )
    .unwrap()
}

/// A two-state, d=2 automaton used purely as a width-4 carrier for
/// distribution-order tests.
pub fn width4_carrier() -> Automaton {
    Automaton::from_parts(
        vec!["a".into()],
        vec!["p".into(), "q".into()],
        vec![2, 2],
        0,
        [t(0, 0, 0, 0), t(1, 0, 1, 1)],
    )
    .unwrap()
}
