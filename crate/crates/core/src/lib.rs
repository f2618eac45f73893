//! Grammar-driven transition-based semantic parsing.
//!
//! The crate maps natural-language utterances to typed abstract syntax
//! trees through a sequence of tree-construction actions, scores those
//! actions with a compact neural encoder-decoder, and converts finished
//! trees to and from concrete meaning representations (lambda-calculus
//! logical forms, single-table SQL, a small Python expression subset).
//!
//! The pipeline, bottom to top:
//!
//! * [`asdl`] parses and validates ASDL grammar files.
//! * [`ast`] holds realized trees and validates them against a grammar;
//!   [`randgen`] generates random valid trees for property tests.
//! * [`transition`] defines the action set, legality at each frontier
//!   field, oracle extraction from gold trees, and replay.
//! * [`convert`] maps trees to and from concrete meaning representations
//!   and executes SQL trees against in-memory tables.
//! * [`scorer`] is the neural model: a bidirectional LSTM encoder, an
//!   LSTM decoder with attention and parent feeding, and probability
//!   heads for every action type, with exact gradients.
//! * [`search`] runs grammar-constrained beam search and answer pruning.
//! * [`dataset`] and [`eval`] load JSONL datasets and compute exact-match
//!   and execution accuracies.

pub mod asdl;
pub mod ast;
pub mod convert;
pub mod dataset;
pub mod eval;
pub mod grammars;
pub mod randgen;
pub mod scorer;
pub mod search;
pub mod transition;

pub use asdl::{parse_grammar, Cardinality, Constructor, CtorId, Field, Grammar, TypeId};
pub use ast::{
    to_sexpr, trees_equal, validate_ast, AbstractTree, FieldValue, PrimitiveValue, RealizedField,
    Violation,
};
pub use convert::{CellValue, ExecutionResult, MrFormat, TableContext};
pub use dataset::{load_dataset, tokenize, Example};
pub use eval::{EvalReport, ExampleOutcome};
pub use randgen::{random_ast, random_ast_with_pools, TokenPools};
pub use scorer::{Precision, Scalar, Scorer, ScorerConfig};
pub use search::{answer_prune, beam_search, BeamConfig};
pub use transition::{
    extract_actions, extract_actions_with_columns, init_hypothesis, init_hypothesis_with_columns,
    reconstruct, reconstruct_with_columns, render_actions, Action, ActionClass, Hypothesis,
    TOKEN_TERMINATOR,
};
