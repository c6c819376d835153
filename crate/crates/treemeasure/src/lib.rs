//! Computes the coin-flipping measure of the tree language of a
//! nondeterministic min-parity tree automaton.
//!
//! The pipeline builds a unary fixpoint formula from the automaton's
//! priority ceiling, interprets its basic symbols over probability
//! distributions on the finite lattice of state-priority subsets, and
//! iterates every limit node to convergence; the measure is the final
//! distribution's mass on the subsets containing the initial state at
//! priority 1. An exact mode exports the same semantics as a real-arithmetic
//! script, and independent oracles (nested fixpoints on random finite
//! lattices, clopen pattern languages, safety prefix bounds) cross-check
//! the construction.

pub mod automaton;
pub mod cli;
pub mod finite_lattice;
pub mod fo_export;
pub mod oracles;
pub mod powerdomain;
pub mod subset_lattice;
pub mod unary_mu;

#[cfg(test)]
pub(crate) mod testfix;
