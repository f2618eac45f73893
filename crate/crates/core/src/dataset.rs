//! JSONL dataset loading. One example per line:
//! `{"utterance": "...", "mr": "...", "table": {"columns": [...], "rows": [[...]]}}`
//! with `table` optional. Meaning representations are converted eagerly so
//! bad lines surface at load time with their line number.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::asdl::Grammar;
use crate::ast::{validate_ast, AbstractTree};
use crate::convert::{MrFormat, TableContext};

/// Lowercase whitespace tokenization, the one tokenizer used everywhere
/// (utterances and column names).
pub fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Example {
    pub utterance: Vec<String>,
    pub mr_text: String,
    pub table: Option<TableContext>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: meaning representation does not convert: {msg}")]
    Conversion { line: usize, msg: String },
}

#[derive(Deserialize)]
struct RawExample {
    utterance: String,
    mr: String,
    #[serde(default)]
    table: Option<TableContext>,
}

/// Load and validate a JSONL dataset, preserving file order.
pub fn load_dataset(
    path: &Path,
    format: MrFormat,
    grammar: &Grammar,
) -> Result<Vec<Example>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample =
            serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        if let Some(t) = &raw.table {
            t.check().map_err(|e| DatasetError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        }
        let utterance = tokenize(&raw.utterance);
        if utterance.is_empty() {
            return Err(DatasetError::Parse {
                line: lineno,
                msg: "utterance is empty".into(),
            });
        }
        convert_checked(format, &raw.mr, grammar, raw.table.as_ref())
            .map_err(|msg| DatasetError::Conversion { line: lineno, msg })?;
        out.push(Example {
            utterance,
            mr_text: raw.mr,
            table: raw.table,
        });
    }
    Ok(out)
}

/// Convert MR text and confirm the tree validates.
pub fn convert_checked(
    format: MrFormat,
    mr: &str,
    grammar: &Grammar,
    table: Option<&TableContext>,
) -> Result<AbstractTree, String> {
    let tree = format
        .to_ast(mr, grammar, table)
        .map_err(|e| e.to_string())?;
    let violations = validate_ast(grammar, &tree).map_err(|e| e.to_string())?;
    if let Some(v) = violations.first() {
        return Err(v.to_string());
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdl::parse_grammar;
    use crate::grammars;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_in_order() {
        let g = parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap();
        let f = write_lines(&[
            r#"{"utterance": "Which states border texas", "mr": "lambda $0 e (and (state $0) (next_to $0 texas:s))"}"#,
            r#"{"utterance": "name the rivers", "mr": "(river $0)"}"#,
            r#"{"utterance": "population of utah", "mr": "(population utah:s)"}"#,
        ]);
        let examples = load_dataset(f.path(), MrFormat::Lambda, &g).unwrap();
        assert_eq!(examples.len(), 3);
        assert_eq!(examples[0].utterance[0], "which");
        assert_eq!(examples[1].mr_text, "(river $0)");
    }

    #[test]
    fn conversion_errors_carry_line_numbers() {
        let g = parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap();
        let f = write_lines(&[
            r#"{"utterance": "fine", "mr": "(state $0)"}"#,
            r#"{"utterance": "broken", "mr": "(and (state $0)"}"#,
        ]);
        let err = load_dataset(f.path(), MrFormat::Lambda, &g).unwrap_err();
        assert!(matches!(err, DatasetError::Conversion { line: 2, .. }));
    }

    #[test]
    fn table_examples_parse() {
        let g = parse_grammar(grammars::WIKISQL_GRAMMAR, "stmt").unwrap();
        let f = write_lines(&[
            r#"{"utterance": "what position does calvin mccarty play", "mr": "SELECT Position FROM Table WHERE Player = Calvin Mccarty", "table": {"columns": ["Player", "No.", "Position"], "rows": [["Calvin Mccarty", "32", "Running back"]]}}"#,
        ]);
        let examples = load_dataset(f.path(), MrFormat::Sql, &g).unwrap();
        assert_eq!(examples[0].table.as_ref().unwrap().width(), 3);
    }
}
