//! Grammar-guided molecular graph generation.
//!
//! Molecules are [`molgraph::OrderedMolGraph`]s. A [`grammar::Grammar`] of
//! node-replacement production rules is inferred from a corpus
//! ([`infer`]), rule sequences are turned back into molecules by
//! [`derive`], and a graph-convolutional policy ([`gcn`]) is trained with
//! policy gradients ([`rl`]) to steer generation toward a property target.

pub mod corpus;
pub mod derive;
pub mod gcn;
pub mod grammar;
pub mod infer;
pub mod molgraph;
pub mod rl;
