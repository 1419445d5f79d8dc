//! Probing toolkit for comparing form and meaning competence in language
//! models: minimal-pair corpora, activation stores, layer-wise probes, and
//! output-probability paradigms.

pub mod cli;
pub mod corpus;
pub mod layers;
pub mod probe;
pub mod psycholing;
pub mod seed;
pub mod stats;
pub mod store;
