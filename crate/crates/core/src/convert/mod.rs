//! Bidirectional mappings between trees and concrete meaning
//! representations, plus a small in-memory table executor for SQL.
//!
//! Every converter pair is mutually inverse on its declared subset:
//! `parse(render(t)) == t` structurally and `render(parse(s))` is the
//! canonical form of `s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asdl::Grammar;
use crate::ast::AbstractTree;

pub mod lambda;
pub mod pyexpr;
pub mod sql;

pub use lambda::{ast_to_lambda, lambda_to_ast};
pub use pyexpr::{ast_to_pyexpr, pyexpr_to_ast};
pub use sql::{ast_to_sql, execute_sql, sql_to_ast};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("unbalanced parentheses: {0}")]
    UnbalancedParens(String),
    #[error("unknown form: {0}")]
    UnknownForm(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unsupported syntax: {0}")]
    UnsupportedSyntax(String),
    #[error("unsupported construct: {0}")]
    UnsupportedConstruct(String),
    #[error("column index {index} out of range for a {columns}-column table")]
    ColumnIndexOutOfRange { index: usize, columns: usize },
    #[error("tree does not fit the converter grammar: {0}")]
    InvalidTree(String),
    #[error("table is malformed: {0}")]
    BadTable(String),
}

/// A single table: named columns and string-valued rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableContext {
    #[serde(rename = "columns")]
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TableContext {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, ConvertError> {
        let t = TableContext { column_names, rows };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), ConvertError> {
        if self.column_names.iter().any(|c| c.is_empty()) {
            return Err(ConvertError::BadTable("empty column name".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.column_names.len() {
                return Err(ConvertError::BadTable(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    self.column_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    /// Case-insensitive exact column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.column_names
            .iter()
            .position(|c| c.trim().to_lowercase() == needle)
    }
}

/// One cell of an execution result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Number(f64),
    Text(String),
}

impl std::fmt::Display for CellValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellValue::Number(n) => write!(f, "{n}"),
            CellValue::Text(s) => write!(f, "{s}"),
        }
    }
}

/// Result of running a SQL tree against a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub values: Vec<CellValue>,
    pub empty: bool,
}

impl ExecutionResult {
    pub fn new(values: Vec<CellValue>) -> Self {
        let empty = values.is_empty();
        ExecutionResult { values, empty }
    }
}

/// The concrete meaning-representation formats shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MrFormat {
    Lambda,
    Sql,
    PyExpr,
}

impl MrFormat {
    pub fn parse_name(s: &str) -> Option<MrFormat> {
        match s {
            "lambda" => Some(MrFormat::Lambda),
            "sql" => Some(MrFormat::Sql),
            "pyexpr" => Some(MrFormat::PyExpr),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MrFormat::Lambda => "lambda",
            MrFormat::Sql => "sql",
            MrFormat::PyExpr => "pyexpr",
        }
    }

    /// Parse MR text into a tree. SQL needs the example's table to resolve
    /// column names.
    pub fn to_ast(
        self,
        text: &str,
        grammar: &Grammar,
        table: Option<&TableContext>,
    ) -> Result<AbstractTree, ConvertError> {
        match self {
            MrFormat::Lambda => lambda_to_ast(text, grammar),
            MrFormat::PyExpr => pyexpr_to_ast(text, grammar),
            MrFormat::Sql => {
                let table = table.ok_or_else(|| {
                    ConvertError::UnsupportedSyntax("sql conversion requires a table".into())
                })?;
                sql_to_ast(text, table, grammar)
            }
        }
    }

    /// Render a tree back to MR text.
    pub fn to_text(
        self,
        tree: &AbstractTree,
        grammar: &Grammar,
        table: Option<&TableContext>,
    ) -> Result<String, ConvertError> {
        match self {
            MrFormat::Lambda => ast_to_lambda(tree, grammar),
            MrFormat::PyExpr => ast_to_pyexpr(tree, grammar),
            MrFormat::Sql => {
                let table = table.ok_or_else(|| {
                    ConvertError::UnsupportedSyntax("sql rendering requires a table".into())
                })?;
                ast_to_sql(tree, table, grammar)
            }
        }
    }
}
