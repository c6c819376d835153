//! Independent ground-truth measures for restricted automaton classes.
//!
//! Two oracles back the acceptance tests: the measure of a clopen language
//! fixed by finitely many node labels is `|alphabet|^-(#constraints)`
//! exactly, and for automata whose priorities are all even the language is
//! the closed event "a run exists", whose measure is sandwiched by a
//! depth-bounded dynamic program. Neither oracle shares code with the
//! measure pipeline.

use std::collections::BTreeMap;

use num_rational::Ratio;
use thiserror::Error;

use crate::automaton::{Automaton, Transition};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("pattern path `{0}` contains characters other than L/R")]
    BadPath(String),
    #[error("pattern letter `{0}` is not in the alphabet")]
    UnknownLetter(String),
    #[error("safety oracle requires all priorities even; state `{0}` is odd")]
    OddPriority(String),
    #[error("automaton construction failed: {0}")]
    Construction(String),
}

/// A finite assignment of letters to tree nodes, nodes written as words
/// over `L`/`R` (empty word = root).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternAssignment {
    nodes: BTreeMap<String, String>,
}

impl PatternAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: &str, letter: &str) -> Result<(), OracleError> {
        if !path.chars().all(|c| c == 'L' || c == 'R') {
            return Err(OracleError::BadPath(path.to_string()));
        }
        self.nodes.insert(path.to_string(), letter.to_string());
        Ok(())
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, OracleError> {
        let mut p = Self::new();
        for (path, letter) in pairs {
            p.insert(path, letter)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Exact measure of the basic set fixed by the pattern:
/// `alphabet_size^-(#constrained nodes)`.
pub fn pattern_measure(pattern: &PatternAssignment, alphabet_size: usize) -> Ratio<u128> {
    assert!(alphabet_size >= 1, "alphabet must be non-empty");
    let denom = (alphabet_size as u128)
        .checked_pow(pattern.len() as u32)
        .expect("pattern too large for an exact rational");
    Ratio::new(1, denom)
}

/// Build an automaton whose language is exactly the trees matching the
/// pattern: one state per prefix of a constrained node walks the pattern
/// (blocking on a wrong letter), everything below falls into an
/// all-accepting sink. All priorities are 2.
pub fn pattern_automaton(
    alphabet: &[String],
    pattern: &PatternAssignment,
) -> Result<Automaton, OracleError> {
    for (path, letter) in pattern.iter() {
        if !path.chars().all(|c| c == 'L' || c == 'R') {
            return Err(OracleError::BadPath(path.to_string()));
        }
        if !alphabet.iter().any(|l| l == letter) {
            return Err(OracleError::UnknownLetter(letter.to_string()));
        }
    }
    // Prefix closure of the constrained nodes, shortest first.
    let mut closure: Vec<String> = Vec::new();
    for (path, _) in pattern.iter() {
        for end in 0..=path.len() {
            let prefix = &path[..end];
            if !closure.iter().any(|p| p == prefix) {
                closure.push(prefix.to_string());
            }
        }
    }
    closure.sort_by(|a, b| (a.len(), a.as_str()).cmp(&(b.len(), b.as_str())));

    let mut states: Vec<String> = closure.iter().map(|p| format!("n{p}")).collect();
    states.push("sink".to_string());
    let sink = states.len() - 1;
    let node_index =
        |path: &str| -> usize { closure.iter().position(|p| p == path).unwrap_or(sink) };

    let mut transitions = Vec::new();
    for (idx, path) in closure.iter().enumerate() {
        let constraint = pattern.nodes.get(path);
        let left = node_index(&format!("{path}L"));
        let right = node_index(&format!("{path}R"));
        for (letter, name) in alphabet.iter().enumerate() {
            if let Some(required) = constraint {
                if required != name {
                    continue;
                }
            }
            transitions.push(Transition {
                state: idx,
                letter,
                left,
                right,
            });
        }
    }
    for letter in 0..alphabet.len() {
        transitions.push(Transition {
            state: sink,
            letter,
            left: sink,
            right: sink,
        });
    }

    let initial = if closure.is_empty() { sink } else { 0 };
    let priorities = vec![2; states.len()];
    Automaton::from_parts(alphabet.to_vec(), states, priorities, initial, transitions)
        .map_err(|diags| OracleError::Construction(format!("{diags:?}")))
}

/// Probability that a run exists on a random labeled prefix of depth `k`
/// (nodes strictly above depth `k` labeled), starting from the initial
/// state. Only meaningful for automata with all priorities even, where any
/// infinite run is accepting and the language measure is the decreasing
/// limit of this sequence.
///
/// The dynamic program works over plain state sets: starting from "every
/// state survives an empty prefix", one step combines a uniformly random
/// root letter with two independent child sets via run-existence expansion.
pub fn safety_prefix_measure(aut: &Automaton, k: usize) -> Result<f64, OracleError> {
    for q in 0..aut.num_states() {
        if !aut.priority(q).is_multiple_of(2) {
            return Err(OracleError::OddPriority(aut.states()[q].clone()));
        }
    }
    let full: u64 = if aut.num_states() == 64 {
        u64::MAX
    } else {
        (1u64 << aut.num_states()) - 1
    };
    let expand = |letter: usize, sl: u64, sr: u64| -> u64 {
        let mut out = 0u64;
        for t in aut.transitions() {
            if t.letter == letter && sl >> t.left & 1 == 1 && sr >> t.right & 1 == 1 {
                out |= 1 << t.state;
            }
        }
        out
    };
    let factor = 1.0 / aut.num_letters() as f64;
    let mut beta: BTreeMap<u64, f64> = BTreeMap::from([(full, 1.0)]);
    for _ in 0..k {
        let mut next: BTreeMap<u64, f64> = BTreeMap::new();
        for letter in 0..aut.num_letters() {
            for (&sl, &pl) in &beta {
                for (&sr, &pr) in &beta {
                    *next.entry(expand(letter, sl, sr)).or_insert(0.0) += factor * pl * pr;
                }
            }
        }
        beta = next;
    }
    Ok(beta
        .iter()
        .filter(|(&s, _)| s >> aut.initial() & 1 == 1)
        .map(|(_, &p)| p)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerdomain::{measure_of_language, MeasureOpts};
    use crate::testfix;

    #[test]
    fn pattern_measure_examples() {
        let empty = PatternAssignment::new();
        assert_eq!(pattern_measure(&empty, 2), Ratio::new(1, 1));
        let root_a = PatternAssignment::from_pairs([("", "a")]).unwrap();
        assert_eq!(pattern_measure(&root_a, 2), Ratio::new(1, 2));
        let three = PatternAssignment::from_pairs([("", "a"), ("L", "b"), ("R", "b")]).unwrap();
        assert_eq!(pattern_measure(&three, 2), Ratio::new(1, 8));
    }

    #[test]
    fn pattern_rejects_bad_input() {
        assert!(PatternAssignment::from_pairs([("LX", "a")]).is_err());
        let p = PatternAssignment::from_pairs([("", "z")]).unwrap();
        let alphabet = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            pattern_automaton(&alphabet, &p),
            Err(OracleError::UnknownLetter(_))
        ));
    }

    #[test]
    fn root_pattern_matches_a3_shape() {
        let alphabet = vec!["a".to_string(), "b".to_string()];
        let p = PatternAssignment::from_pairs([("", "a")]).unwrap();
        let aut = pattern_automaton(&alphabet, &p).unwrap();
        assert_eq!(aut.num_states(), 2);
        let report = measure_of_language(&aut, &MeasureOpts::default()).unwrap();
        assert!((report.measure - 0.5).abs() <= 1e-9);
    }

    #[test]
    fn empty_pattern_is_all_trees() {
        let alphabet = vec!["a".to_string(), "b".to_string()];
        let aut = pattern_automaton(&alphabet, &PatternAssignment::new()).unwrap();
        assert_eq!(aut.num_states(), 1);
        let report = measure_of_language(&aut, &MeasureOpts::default()).unwrap();
        assert!((report.measure - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn depth_one_pattern_has_node_states_plus_sink() {
        let alphabet = vec!["a".to_string(), "b".to_string()];
        let p = PatternAssignment::from_pairs([("L", "b")]).unwrap();
        let aut = pattern_automaton(&alphabet, &p).unwrap();
        // Prefix closure {root, L} plus the sink.
        assert_eq!(aut.num_states(), 3);
        let report = measure_of_language(&aut, &MeasureOpts::default()).unwrap();
        assert!((report.measure - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn deep_pattern_measure_matches() {
        let alphabet = vec!["a".to_string(), "b".to_string()];
        let p = PatternAssignment::from_pairs([("", "a"), ("RL", "b"), ("LLR", "a")]).unwrap();
        let aut = pattern_automaton(&alphabet, &p).unwrap();
        let expect = pattern_measure(&p, 2);
        let got = measure_of_language(&aut, &MeasureOpts::default())
            .unwrap()
            .measure;
        let expect_f = *expect.numer() as f64 / *expect.denom() as f64;
        assert!((got - expect_f).abs() <= 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn measure_invariant_under_alphabet_permutation() {
        let alphabet = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let p = PatternAssignment::from_pairs([("", "a"), ("L", "c")]).unwrap();
        let swapped = PatternAssignment::from_pairs([("", "c"), ("L", "b")]).unwrap();
        let m1 = measure_of_language(
            &pattern_automaton(&alphabet, &p).unwrap(),
            &MeasureOpts::default(),
        )
        .unwrap()
        .measure;
        let m2 = measure_of_language(
            &pattern_automaton(&alphabet, &swapped).unwrap(),
            &MeasureOpts::default(),
        )
        .unwrap()
        .measure;
        assert!((m1 - m2).abs() <= 1e-9);
    }

    #[test]
    fn safety_on_a1_is_one() {
        let a1 = testfix::a1();
        for k in 0..8 {
            assert_eq!(safety_prefix_measure(&a1, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn safety_on_a4_counts_all_a_prefixes() {
        let a4 = testfix::a4();
        assert_eq!(safety_prefix_measure(&a4, 1).unwrap(), 0.5);
        assert_eq!(safety_prefix_measure(&a4, 2).unwrap(), 0.125);
        assert!(safety_prefix_measure(&a4, 12).unwrap() <= 1e-4);
    }

    #[test]
    fn safety_rejects_odd_priorities() {
        let aut = testfix::a5_some_a();
        assert!(matches!(
            safety_prefix_measure(&aut, 1),
            Err(OracleError::OddPriority(_))
        ));
    }

    #[test]
    fn safety_is_non_increasing_in_depth() {
        let a3 = testfix::a3();
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let cur = safety_prefix_measure(&a3, k).unwrap();
            assert!(cur <= prev + 1e-12, "k={k}: {cur} > {prev}");
            prev = cur;
        }
    }
}
