//! Knowledge-graph construction for chemical entities and their roles.
//!
//! The pipeline runs `ingest -> lexicon -> annotate -> candidates ->
//! validate -> build`; each stage lives in its own module and exchanges
//! plain files with the next one (see [`pipeline`]).

pub mod annotate;
pub mod candidates;
pub mod corpus;
pub mod exec;
pub mod kg;
pub mod ner_eval;
pub mod normalize;
pub mod ontology;
pub mod pipeline;
pub mod validate;
