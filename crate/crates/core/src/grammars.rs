//! Built-in grammar texts for the shipped converters. The same files live
//! under `grammars/` at the repository root for CLI use.

/// Lambda-calculus logical forms. Root type `expr`.
pub const LAMBDA_GRAMMAR: &str = include_str!("../../../grammars/lambda.asdl");

/// Single-table SQL queries. Root type `stmt`.
pub const WIKISQL_GRAMMAR: &str = include_str!("../../../grammars/wikisql.asdl");

/// Python expression-statement subset. Root type `stmt`.
pub const MINI_PYTHON_GRAMMAR: &str = include_str!("../../../grammars/mini_python.asdl");

/// One-production grammar used in tests and docs.
pub const MINIMAL_GRAMMAR: &str = "expr = Name(identifier id)";
