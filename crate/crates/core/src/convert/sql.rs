//! Single-table SQL (WikiSQL subset): one SELECT with an optional
//! aggregate and AND-joined conditions, e.g.
//! `SELECT Position FROM Table WHERE Player = Calvin Mccarty`.
//!
//! Column names in queries resolve to 0-based indices into the table's
//! column list (case-insensitive exact match); trees store only those
//! indices. Canonical rendering uses uppercase keywords, column names as
//! stored in the table, and unquoted condition values. Conditions split on
//! the `AND` keyword, so values containing a bare ` and ` are out of
//! scope.

use crate::asdl::{CtorId, Grammar};
use crate::ast::{AbstractTree, FieldValue, PrimitiveValue, RealizedField};

use super::{CellValue, ConvertError, ExecutionResult, TableContext};

const AGGREGATES: &[(&str, &str)] = &[
    ("MAX", "Max"),
    ("MIN", "Min"),
    ("COUNT", "Count"),
    ("SUM", "Sum"),
    ("AVG", "Avg"),
];

const OPERATORS: &[(&str, &str)] = &[
    ("=", "Equal"),
    (">", "GreaterThan"),
    ("<", "LessThan"),
    ("OP", "Other"),
];

fn ctor(grammar: &Grammar, name: &str) -> Result<CtorId, ConvertError> {
    grammar.lookup_ctor(name).ok_or_else(|| {
        ConvertError::UnsupportedSyntax(format!("grammar has no `{name}` constructor"))
    })
}

/// Find ` <op> ` in `cond`, preferring the earliest occurrence. Operators
/// must be surrounded by whitespace so column text like `Win/Loss=` is not
/// split.
fn find_operator(cond: &str) -> Option<(usize, &'static str, &'static str)> {
    let upper = cond.to_ascii_uppercase();
    OPERATORS
        .iter()
        .filter_map(|(sym, ctor_name)| {
            upper
                .find(&format!(" {sym} "))
                .map(|at| (at, *sym, *ctor_name))
        })
        .min_by_key(|(at, _, _)| *at)
}

fn resolve_column(table: &TableContext, name: &str) -> Result<usize, ConvertError> {
    table
        .column_index(name)
        .ok_or_else(|| ConvertError::UnknownColumn(name.trim().to_string()))
}

fn strip_quotes(value: &str) -> &str {
    let v = value.trim();
    for q in ['\'', '"'] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

fn idx_field(index: usize) -> RealizedField {
    RealizedField::token(index.to_string())
}

/// Parse a query of the supported subset into a tree, resolving column
/// names against `table`.
pub fn sql_to_ast(
    query: &str,
    table: &TableContext,
    grammar: &Grammar,
) -> Result<AbstractTree, ConvertError> {
    let q = query.trim();
    let upper = q.to_ascii_uppercase();
    if !upper.starts_with("SELECT ") {
        return Err(ConvertError::UnsupportedSyntax(
            "query must start with SELECT".into(),
        ));
    }
    let from_at = upper
        .find(" FROM ")
        .filter(|&at| at >= "SELECT ".len())
        .ok_or_else(|| ConvertError::UnsupportedSyntax("missing FROM clause".into()))?;
    let select_part = q["SELECT ".len()..from_at].trim();
    let after_from = &q[from_at + " FROM ".len()..];
    let upper_after = after_from.to_ascii_uppercase();
    let (_, where_part) = match upper_after.find(" WHERE ") {
        Some(at) => (
            after_from[..at].trim(),
            Some(after_from[at + " WHERE ".len()..].trim()),
        ),
        None => (after_from.trim(), None),
    };

    // optional aggregate wrapping the selected column
    let upper_select = select_part.to_ascii_uppercase();
    let (agg_ctor, column_text) = AGGREGATES
        .iter()
        .find_map(|(kw, ctor_name)| {
            let rest = upper_select.strip_prefix(kw)?;
            let rest_src = select_part[kw.len()..].trim_start();
            if rest.trim_start().starts_with('(') && rest_src.ends_with(')') {
                Some((Some(*ctor_name), rest_src[1..rest_src.len() - 1].trim()))
            } else {
                None
            }
        })
        .unwrap_or((None, select_part));

    let select_idx = resolve_column(table, column_text)?;

    let mut conditions = Vec::new();
    if let Some(clause) = where_part {
        for cond in split_on_and(clause) {
            let (at, sym, op_name) = find_operator(&cond).ok_or_else(|| {
                ConvertError::UnsupportedSyntax(format!("no comparison operator in `{cond}`"))
            })?;
            let column = resolve_column(table, &cond[..at])?;
            let value = strip_quotes(&cond[at + sym.len() + 2..]);
            if value.is_empty() {
                return Err(ConvertError::UnsupportedSyntax(format!(
                    "empty condition value in `{cond}`"
                )));
            }
            let tokens: Vec<String> = value.split_whitespace().map(str::to_string).collect();
            let op = AbstractTree::new(ctor(grammar, op_name)?, vec![]);
            conditions.push(AbstractTree::new(
                ctor(grammar, "Condition")?,
                vec![
                    RealizedField::tree(op),
                    idx_field(column),
                    RealizedField {
                        values: vec![FieldValue::Primitive(PrimitiveValue::new(tokens))],
                    },
                ],
            ));
        }
    }

    let agg_field = match agg_ctor {
        Some(name) => RealizedField::tree(AbstractTree::new(ctor(grammar, name)?, vec![])),
        None => RealizedField::empty(),
    };
    Ok(AbstractTree::new(
        ctor(grammar, "Select")?,
        vec![agg_field, idx_field(select_idx), RealizedField::trees(conditions)],
    ))
}

fn split_on_and(clause: &str) -> Vec<String> {
    let upper = clause.to_ascii_uppercase();
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut search = 0usize;
    while let Some(found) = upper[search..].find(" AND ") {
        let at = search + found;
        parts.push(clause[start..at].trim().to_string());
        start = at + " AND ".len();
        search = start;
    }
    parts.push(clause[start..].trim().to_string());
    parts
}

struct SelectParts<'t> {
    agg: Option<&'t str>,
    column: usize,
    conditions: Vec<(&'t str, usize, String)>,
}

fn take_parts<'g>(
    tree: &AbstractTree,
    table: &TableContext,
    grammar: &'g Grammar,
) -> Result<SelectParts<'g>, ConvertError> {
    if grammar.ctor(tree.ctor).name != "Select" {
        return Err(ConvertError::InvalidTree("root must be Select".into()));
    }
    let idx_of = |field: usize, of: &AbstractTree| -> Result<usize, ConvertError> {
        match of.fields.get(field).and_then(|f| f.values.first()) {
            Some(FieldValue::Primitive(p)) => {
                let index: usize = p.tokens[0]
                    .parse()
                    .map_err(|_| ConvertError::InvalidTree("bad column index".into()))?;
                if index >= table.width() {
                    return Err(ConvertError::ColumnIndexOutOfRange {
                        index,
                        columns: table.width(),
                    });
                }
                Ok(index)
            }
            _ => Err(ConvertError::InvalidTree("missing column index".into())),
        }
    };

    let agg = match tree.fields[0].values.first() {
        Some(FieldValue::Tree(t)) => Some(grammar.ctor(t.ctor).name.as_str()),
        _ => None,
    };
    let column = idx_of(1, tree)?;
    let mut conditions = Vec::new();
    for value in &tree.fields[2].values {
        let cond = match value {
            FieldValue::Tree(t) => t,
            _ => return Err(ConvertError::InvalidTree("condition must be a tree".into())),
        };
        let op = match cond.fields[0].values.first() {
            Some(FieldValue::Tree(t)) => grammar.ctor(t.ctor).name.as_str(),
            _ => return Err(ConvertError::InvalidTree("missing operator".into())),
        };
        let col = idx_of(1, cond)?;
        let val = match cond.fields[2].values.first() {
            Some(FieldValue::Primitive(p)) => p.joined(),
            _ => return Err(ConvertError::InvalidTree("missing condition value".into())),
        };
        conditions.push((op, col, val));
    }
    Ok(SelectParts {
        agg,
        column,
        conditions,
    })
}

/// Canonical rendering of a SQL tree against `table`.
pub fn ast_to_sql(
    tree: &AbstractTree,
    table: &TableContext,
    grammar: &Grammar,
) -> Result<String, ConvertError> {
    let parts = take_parts(tree, table, grammar)?;
    let col = &table.column_names[parts.column];
    let select = match parts.agg {
        Some(name) => {
            let kw = AGGREGATES
                .iter()
                .find(|(_, c)| *c == name)
                .map(|(kw, _)| *kw)
                .ok_or_else(|| {
                    ConvertError::InvalidTree(format!("unknown aggregate `{name}`"))
                })?;
            format!("{kw}({col})")
        }
        None => col.clone(),
    };
    let mut out = format!("SELECT {select} FROM Table");
    if !parts.conditions.is_empty() {
        let conds: Vec<String> = parts
            .conditions
            .iter()
            .map(|(op, col, val)| {
                let sym = OPERATORS
                    .iter()
                    .find(|(_, c)| c == op)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| {
                        ConvertError::InvalidTree(format!("unknown operator `{op}`"))
                    })?;
                Ok(format!("{} {} {}", table.column_names[*col], sym, val))
            })
            .collect::<Result<Vec<_>, ConvertError>>()?;
        out.push_str(" WHERE ");
        out.push_str(&conds.join(" AND "));
    }
    Ok(out)
}

fn as_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|n| n.is_finite())
}

/// Run a SQL tree against the table. Conditions are conjunctive: `Equal`
/// compares strings exactly, `GreaterThan`/`LessThan` compare numerically
/// and fail when either side is not a number, and `Other` never matches.
/// Numeric aggregates skip non-numeric cells.
pub fn execute_sql(
    tree: &AbstractTree,
    table: &TableContext,
    grammar: &Grammar,
) -> Result<ExecutionResult, ConvertError> {
    let parts = take_parts(tree, table, grammar)?;
    let matched: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|row| {
            parts.conditions.iter().all(|(op, col, val)| {
                let cell = &row[*col];
                match *op {
                    "Equal" => cell == val,
                    "GreaterThan" => match (as_number(cell), as_number(val)) {
                        (Some(a), Some(b)) => a > b,
                        _ => false,
                    },
                    "LessThan" => match (as_number(cell), as_number(val)) {
                        (Some(a), Some(b)) => a < b,
                        _ => false,
                    },
                    _ => false,
                }
            })
        })
        .collect();

    let cells: Vec<&str> = matched.iter().map(|r| r[parts.column].as_str()).collect();
    let numbers: Vec<f64> = cells.iter().filter_map(|c| as_number(c)).collect();
    let values = match parts.agg {
        None => cells
            .iter()
            .map(|c| CellValue::Text(c.to_string()))
            .collect(),
        Some("Count") => vec![CellValue::Number(cells.len() as f64)],
        Some(agg) => {
            if numbers.is_empty() {
                Vec::new()
            } else {
                let n = match agg {
                    "Max" => numbers.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    "Min" => numbers.iter().cloned().fold(f64::INFINITY, f64::min),
                    "Sum" => numbers.iter().sum(),
                    "Avg" => numbers.iter().sum::<f64>() / numbers.len() as f64,
                    other => {
                        return Err(ConvertError::InvalidTree(format!(
                            "unknown aggregate `{other}`"
                        )))
                    }
                };
                vec![CellValue::Number(n)]
            }
        }
    };
    Ok(ExecutionResult::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdl::parse_grammar;
    use crate::ast::{trees_equal, validate_ast};
    use crate::grammars;
    use crate::randgen::{random_ast_with_pools, TokenPools};

    fn grammar() -> Grammar {
        parse_grammar(grammars::WIKISQL_GRAMMAR, "stmt").unwrap()
    }

    pub(crate) fn players_table() -> TableContext {
        TableContext::new(
            vec![
                "Player".into(),
                "No.".into(),
                "Position".into(),
                "Years".into(),
            ],
            vec![
                vec![
                    "Calvin Mccarty".into(),
                    "32".into(),
                    "Running back".into(),
                    "4".into(),
                ],
                vec!["Joe Smith".into(), "12".into(), "Quarterback".into(), "9".into()],
                vec!["Sam Reed".into(), "7".into(), "Running back".into(), "2".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn position_query_parses() {
        let g = grammar();
        let table = players_table();
        let q = "SELECT Position FROM Table WHERE Player = Calvin Mccarty";
        let t = sql_to_ast(q, &table, &g).unwrap();
        assert!(validate_ast(&g, &t).unwrap().is_empty());
        // no aggregate, Position is column 2, one Equal condition on column 0
        assert!(t.fields[0].values.is_empty());
        assert_eq!(ast_to_sql(&t, &table, &g).unwrap(), q);
    }

    #[test]
    fn count_without_where() {
        let g = grammar();
        let table = players_table();
        let t = sql_to_ast("SELECT COUNT(Player) FROM Table", &table, &g).unwrap();
        let agg = match t.fields[0].values.first().unwrap() {
            FieldValue::Tree(t) => g.ctor(t.ctor).name.clone(),
            _ => panic!(),
        };
        assert_eq!(agg, "Count");
        assert_eq!(
            ast_to_sql(&t, &table, &g).unwrap(),
            "SELECT COUNT(Player) FROM Table"
        );
    }

    #[test]
    fn unknown_column_rejected() {
        let g = grammar();
        let table = players_table();
        assert!(matches!(
            sql_to_ast("SELECT Salary FROM Table", &table, &g),
            Err(ConvertError::UnknownColumn(c)) if c == "Salary"
        ));
    }

    #[test]
    fn execution_matches_hand_result() {
        let g = grammar();
        let table = players_table();
        let q = "SELECT Position FROM Table WHERE Player = Calvin Mccarty";
        let t = sql_to_ast(q, &table, &g).unwrap();
        let r = execute_sql(&t, &table, &g).unwrap();
        assert_eq!(r.values, vec![CellValue::Text("Running back".into())]);
        assert!(!r.empty);
    }

    #[test]
    fn count_of_zero_rows_is_zero_not_empty() {
        let g = grammar();
        let table = players_table();
        let t = sql_to_ast(
            "SELECT COUNT(Player) FROM Table WHERE Player = Nobody",
            &table,
            &g,
        )
        .unwrap();
        let r = execute_sql(&t, &table, &g).unwrap();
        assert_eq!(r.values, vec![CellValue::Number(0.0)]);
        assert!(!r.empty);
    }

    #[test]
    fn no_match_without_aggregate_is_empty() {
        let g = grammar();
        let table = players_table();
        let t = sql_to_ast(
            "SELECT Position FROM Table WHERE Player = Nobody",
            &table,
            &g,
        )
        .unwrap();
        let r = execute_sql(&t, &table, &g).unwrap();
        assert!(r.empty);
        assert!(r.values.is_empty());
    }

    #[test]
    fn numeric_comparisons() {
        let g = grammar();
        let table = players_table();
        let t = sql_to_ast("SELECT Player FROM Table WHERE No. > 10", &table, &g).unwrap();
        let r = execute_sql(&t, &table, &g).unwrap();
        assert_eq!(
            r.values,
            vec![
                CellValue::Text("Calvin Mccarty".into()),
                CellValue::Text("Joe Smith".into())
            ]
        );
        // `Other` never matches
        let t = sql_to_ast("SELECT Player FROM Table WHERE No. OP 10", &table, &g).unwrap();
        assert!(execute_sql(&t, &table, &g).unwrap().empty);
    }

    #[test]
    fn aggregate_over_numeric_column() {
        let g = grammar();
        let table = players_table();
        for (q, expected) in [
            ("SELECT MAX(No.) FROM Table", 32.0),
            ("SELECT MIN(No.) FROM Table", 7.0),
            ("SELECT SUM(No.) FROM Table", 51.0),
            ("SELECT AVG(No.) FROM Table", 17.0),
        ] {
            let t = sql_to_ast(q, &table, &g).unwrap();
            let r = execute_sql(&t, &table, &g).unwrap();
            assert_eq!(r.values, vec![CellValue::Number(expected)], "{q}");
        }
    }

    #[test]
    fn quoted_values_are_stripped() {
        let g = grammar();
        let table = players_table();
        let t = sql_to_ast(
            "select position from table where player = 'Calvin Mccarty'",
            &table,
            &g,
        )
        .unwrap();
        assert_eq!(
            ast_to_sql(&t, &table, &g).unwrap(),
            "SELECT Position FROM Table WHERE Player = Calvin Mccarty"
        );
    }

    #[test]
    fn random_tree_round_trip() {
        let g = grammar();
        let table = players_table();
        let pools = TokenPools::uniform(Vec::<String>::new())
            .with_type("idx", ["0", "1", "2", "3"])
            .with_type("string", ["alice", "bob", "7", "42", "red"]);
        for seed in 0..300 {
            let t = random_ast_with_pools(&g, 5, seed, &pools).unwrap();
            let rendered = ast_to_sql(&t, &table, &g).unwrap();
            let back = sql_to_ast(&rendered, &table, &g)
                .unwrap_or_else(|e| panic!("seed {seed}: `{rendered}`: {e}"));
            assert!(trees_equal(&t, &back), "seed {seed}: `{rendered}`");
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let g = grammar();
        let table = players_table();
        let t = AbstractTree::new(
            g.lookup_ctor("Select").unwrap(),
            vec![
                RealizedField::empty(),
                RealizedField::token("9"),
                RealizedField::trees(vec![]),
            ],
        );
        assert!(matches!(
            ast_to_sql(&t, &table, &g),
            Err(ConvertError::ColumnIndexOutOfRange { index: 9, .. })
        ));
    }
}
