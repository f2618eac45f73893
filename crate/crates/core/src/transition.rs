//! The tree-construction transition system: actions, hypothesis state with
//! frontier tracking, legality, oracle extraction, and replay.
//!
//! A derivation starts from a virtual root field and grows the tree with
//! one action per step, always expanding the frontier field: the leftmost
//! open field under a top-down, left-to-right traversal of the partial
//! tree.
//!
//! * `ApplyConstr[c]` attaches a constructor node to a composite frontier
//!   field of matching type.
//! * `Reduce` closes an optional or sequential frontier field.
//! * `GenToken[v]` fills a primitive frontier field. Identifier-like
//!   fields take exactly one token; `string` fields take a token sequence
//!   ended by the reserved terminator `</f>`.
//! * `SelColumn[k]` replaces `GenToken` at `idx` fields when the
//!   hypothesis carries a table width, selecting the k-th column.
//!
//! The derivation is complete when no open field remains.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::asdl::{Cardinality, CtorId, Field, Grammar, TypeId};
use crate::ast::{
    join_path, validate_ast, value_path, AbstractTree, FieldValue, PrimitiveValue, RealizedField,
};

/// Reserved token ending the fill of a string-typed field.
pub const TOKEN_TERMINATOR: &str = "</f>";

/// One tree-construction action.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    ApplyConstr(CtorId),
    Reduce,
    GenToken(String),
    SelColumn(usize),
}

impl Action {
    pub fn describe(&self, grammar: &Grammar) -> String {
        match self {
            Action::ApplyConstr(c) => format!("ApplyConstr[{}]", grammar.ctor(*c).name),
            Action::Reduce => "Reduce".to_string(),
            Action::GenToken(t) => format!("GenToken[{t}]"),
            Action::SelColumn(k) => format!("SelColumn[{k}]"),
        }
    }
}

/// Descriptor of the legal actions at a frontier. `GenToken` is an open
/// token class, so legality is described rather than enumerated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionClass {
    ApplyConstr(CtorId),
    Reduce,
    GenToken {
        /// Frontier type is `string`: values may span several tokens.
        string_field: bool,
        /// `</f>` is currently legal (a string fill is in progress).
        terminator_ok: bool,
    },
    SelColumn {
        /// Legal indices are `0..columns`.
        columns: usize,
    },
}

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error("hypothesis is already complete")]
    CompleteHypothesis,
    #[error("illegal action {action} at frontier `{frontier}`: {rule}")]
    IllegalAction {
        action: String,
        frontier: String,
        rule: String,
    },
    #[error("illegal action at step {index}: {source}")]
    IllegalAt {
        index: usize,
        #[source]
        source: Box<TransitionError>,
    },
    #[error("action sequence ends before the derivation completes")]
    IncompleteSequence,
    #[error("actions continue after the derivation completed")]
    TrailingActions,
    #[error("tree does not validate against the grammar: {0}")]
    InvalidTree(String),
}

/// The frontier: the open field the next action must expand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frontier {
    /// Arena index of the owning node; `None` for the virtual root field.
    node: Option<usize>,
    /// Field position within the owning constructor; 0 for the root.
    field_index: usize,
    /// Dotted path from the root, e.g. `value.args[0].s`.
    pub path: String,
    /// Step at which the owning constructor was created; 0 for the root.
    pub parent_step: usize,
}

impl Frontier {
    /// The field definition at this frontier. The virtual root field is
    /// reported as a single-cardinality field named `root`.
    pub fn field<'g>(&self, grammar: &'g Grammar, hyp: &Hypothesis) -> FieldRef<'g> {
        match self.node {
            None => FieldRef {
                name: "root",
                ty: grammar.root_type(),
                cardinality: Cardinality::Single,
                slot: Grammar::ROOT_FIELD_SLOT,
            },
            Some(n) => {
                let ctor_id = hyp.nodes[n].ctor;
                let field = &grammar.ctor(ctor_id).fields[self.field_index];
                FieldRef {
                    name: &field.name,
                    ty: field.ty,
                    cardinality: field.cardinality,
                    slot: grammar.field_slot(ctor_id, self.field_index),
                }
            }
        }
    }
}

/// Resolved view of a frontier field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldRef<'g> {
    pub name: &'g str,
    pub ty: TypeId,
    pub cardinality: Cardinality,
    /// Global embedding slot (0 for the virtual root field).
    pub slot: usize,
}

#[derive(Debug, Clone)]
struct BuildField {
    closed: bool,
    children: Vec<usize>,
    values: Vec<PrimitiveValue>,
}

impl BuildField {
    fn new() -> Self {
        BuildField {
            closed: false,
            children: Vec::new(),
            values: Vec::new(),
        }
    }

    fn count(&self) -> usize {
        self.children.len() + self.values.len()
    }
}

#[derive(Debug, Clone)]
struct BuildNode {
    ctor: CtorId,
    created_at: usize,
    fields: Vec<BuildField>,
}

/// A partial derivation. `apply_action` never mutates its receiver; it
/// returns a new hypothesis, so hypotheses can fan out across beam slots
/// or threads freely.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    grammar: Arc<Grammar>,
    nodes: Vec<BuildNode>,
    root: Option<usize>,
    frontier: Option<Frontier>,
    history: Vec<(Action, Frontier)>,
    score: f64,
    pending: Vec<String>,
    columns: Option<usize>,
}

/// Fresh hypothesis: empty tree, frontier at the virtual root field.
pub fn init_hypothesis(grammar: &Arc<Grammar>) -> Hypothesis {
    Hypothesis {
        grammar: Arc::clone(grammar),
        nodes: Vec::new(),
        root: None,
        frontier: Some(Frontier {
            node: None,
            field_index: 0,
            path: "root".to_string(),
            parent_step: 0,
        }),
        history: Vec::new(),
        score: 0.0,
        pending: Vec::new(),
        columns: None,
    }
}

/// Fresh hypothesis with a table of `columns` columns attached, enabling
/// `SelColumn` at `idx` frontiers.
pub fn init_hypothesis_with_columns(grammar: &Arc<Grammar>, columns: usize) -> Hypothesis {
    let mut h = init_hypothesis(grammar);
    h.columns = Some(columns);
    h
}

impl Hypothesis {
    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn frontier(&self) -> Option<&Frontier> {
        self.frontier.as_ref()
    }

    pub fn history(&self) -> &[(Action, Frontier)] {
        &self.history
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn pending_tokens(&self) -> &[String] {
        &self.pending
    }

    pub fn table_columns(&self) -> Option<usize> {
        self.columns
    }

    pub fn step_count(&self) -> usize {
        self.history.len()
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_none()
    }

    pub fn with_score_added(mut self, log_prob: f64) -> Hypothesis {
        self.score += log_prob;
        self
    }

    /// Legal action descriptors at the current frontier, in a fixed order:
    /// constructor alternatives (declaration order) or the token class,
    /// then `Reduce` when the field may close.
    pub fn valid_actions(&self) -> Result<Vec<ActionClass>, TransitionError> {
        let frontier = self
            .frontier
            .as_ref()
            .ok_or(TransitionError::CompleteHypothesis)?;
        let field = frontier.field(&self.grammar, self);
        let mut classes = Vec::new();
        if self.grammar.is_composite(field.ty) {
            for &c in self.grammar.constructors_of(field.ty).expect("composite") {
                classes.push(ActionClass::ApplyConstr(c));
            }
        } else if self.grammar.is_column_idx_type(field.ty) && self.columns.is_some() {
            classes.push(ActionClass::SelColumn {
                columns: self.columns.unwrap(),
            });
        } else {
            let string_field = self.grammar.is_string_type(field.ty);
            classes.push(ActionClass::GenToken {
                string_field,
                terminator_ok: string_field && !self.pending.is_empty(),
            });
        }
        let may_reduce = matches!(
            field.cardinality,
            Cardinality::Optional | Cardinality::Sequential
        ) && self.pending.is_empty();
        if may_reduce {
            classes.push(ActionClass::Reduce);
        }
        Ok(classes)
    }

    fn illegal(
        &self,
        action: &Action,
        frontier: &Frontier,
        rule: impl Into<String>,
    ) -> TransitionError {
        TransitionError::IllegalAction {
            action: action.describe(&self.grammar),
            frontier: frontier.path.clone(),
            rule: rule.into(),
        }
    }

    /// Apply one action, returning the successor hypothesis. The receiver
    /// is left untouched.
    pub fn apply_action(&self, action: &Action) -> Result<Hypothesis, TransitionError> {
        let frontier = self
            .frontier
            .as_ref()
            .ok_or(TransitionError::CompleteHypothesis)?
            .clone();
        let field = frontier.field(&self.grammar, self);
        let mut next = self.clone();
        let step = self.history.len() + 1;

        match action {
            Action::ApplyConstr(c) => {
                if !self.grammar.is_composite(field.ty) {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        "ApplyConstr requires a composite frontier field",
                    ));
                }
                if c.0 >= self.grammar.ctor_count() {
                    return Err(self.illegal(action, &frontier, "unknown constructor"));
                }
                let ctor = self.grammar.ctor(*c);
                if ctor.result_type != field.ty {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        format!(
                            "constructor produces `{}` but the frontier field has type `{}`",
                            self.grammar.type_name(ctor.result_type),
                            self.grammar.type_name(field.ty)
                        ),
                    ));
                }
                let node_idx = next.nodes.len();
                next.nodes.push(BuildNode {
                    ctor: *c,
                    created_at: step,
                    fields: vec![BuildField::new(); ctor.fields.len()],
                });
                match frontier.node {
                    None => next.root = Some(node_idx),
                    Some(n) => next.nodes[n].fields[frontier.field_index]
                        .children
                        .push(node_idx),
                }
            }
            Action::GenToken(tok) => {
                if tok.is_empty() {
                    return Err(self.illegal(action, &frontier, "GenToken tokens are non-empty"));
                }
                if !self.grammar.is_primitive(field.ty) {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        "GenToken requires a primitive frontier field",
                    ));
                }
                if self.grammar.is_column_idx_type(field.ty) && self.columns.is_some() {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        "idx fields take SelColumn when a table is attached",
                    ));
                }
                let string_field = self.grammar.is_string_type(field.ty);
                if tok == TOKEN_TERMINATOR {
                    if !string_field || self.pending.is_empty() {
                        return Err(self.illegal(
                            action,
                            &frontier,
                            "the terminator requires a string field with pending tokens",
                        ));
                    }
                    let value = PrimitiveValue::new(std::mem::take(&mut next.pending));
                    next.field_mut(&frontier).values.push(value);
                } else if string_field {
                    next.pending.push(tok.clone());
                } else {
                    next.field_mut(&frontier)
                        .values
                        .push(PrimitiveValue::single(tok.clone()));
                }
            }
            Action::Reduce => {
                if !matches!(
                    field.cardinality,
                    Cardinality::Optional | Cardinality::Sequential
                ) {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        "Reduce requires an optional or sequential frontier field",
                    ));
                }
                if !self.pending.is_empty() {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        "Reduce cannot close a field with a half-built string value",
                    ));
                }
                match frontier.node {
                    None => unreachable!("virtual root field has single cardinality"),
                    Some(_) => next.field_mut(&frontier).closed = true,
                }
            }
            Action::SelColumn(k) => {
                let columns = match self.columns {
                    Some(c) if self.grammar.is_column_idx_type(field.ty) => c,
                    _ => {
                        return Err(self.illegal(
                            action,
                            &frontier,
                            "SelColumn requires an idx frontier field with an attached table",
                        ))
                    }
                };
                if *k >= columns {
                    return Err(self.illegal(
                        action,
                        &frontier,
                        format!("column index {k} out of range for a {columns}-column table"),
                    ));
                }
                next.field_mut(&frontier)
                    .values
                    .push(PrimitiveValue::single(k.to_string()));
            }
        }

        next.history.push((action.clone(), frontier));
        next.frontier = next.compute_frontier();
        Ok(next)
    }

    fn field_mut(&mut self, frontier: &Frontier) -> &mut BuildField {
        match frontier.node {
            None => unreachable!("virtual root field holds no values directly"),
            Some(n) => &mut self.nodes[n].fields[frontier.field_index],
        }
    }

    /// Leftmost open field in a top-down, left-to-right walk.
    fn compute_frontier(&self) -> Option<Frontier> {
        match self.root {
            None => Some(Frontier {
                node: None,
                field_index: 0,
                path: "root".to_string(),
                parent_step: 0,
            }),
            Some(root) => self.walk(root, ""),
        }
    }

    fn walk(&self, node_idx: usize, prefix: &str) -> Option<Frontier> {
        let node = &self.nodes[node_idx];
        let ctor = self.grammar.ctor(node.ctor);
        for (i, (field, bf)) in ctor.fields.iter().zip(&node.fields).enumerate() {
            let fpath = join_path(prefix, &field.name);
            for (k, &child) in bf.children.iter().enumerate() {
                let vpath = value_path(&fpath, field, k);
                if let Some(f) = self.walk(child, &vpath) {
                    return Some(f);
                }
            }
            if self.field_needs_action(field, bf) {
                return Some(Frontier {
                    node: Some(node_idx),
                    field_index: i,
                    path: fpath,
                    parent_step: node.created_at,
                });
            }
        }
        None
    }

    fn field_needs_action(&self, field: &Field, bf: &BuildField) -> bool {
        match field.cardinality {
            Cardinality::Single => bf.count() == 0,
            Cardinality::Optional => !bf.closed && bf.count() == 0,
            Cardinality::Sequential => !bf.closed,
        }
    }

    /// The finished tree, present once the derivation is complete.
    pub fn tree(&self) -> Option<AbstractTree> {
        if !self.is_complete() {
            return None;
        }
        self.root.map(|r| self.build_tree(r))
    }

    fn build_tree(&self, node_idx: usize) -> AbstractTree {
        let node = &self.nodes[node_idx];
        let ctor = self.grammar.ctor(node.ctor);
        let fields = ctor
            .fields
            .iter()
            .zip(&node.fields)
            .map(|(field, bf)| {
                let values = if self.grammar.is_composite(field.ty) {
                    bf.children
                        .iter()
                        .map(|&c| FieldValue::Tree(self.build_tree(c)))
                        .collect()
                } else {
                    bf.values
                        .iter()
                        .cloned()
                        .map(FieldValue::Primitive)
                        .collect()
                };
                RealizedField { values }
            })
            .collect();
        AbstractTree::new(node.ctor, fields)
    }
}

/// The training-time oracle: the deterministic action sequence that builds
/// `tree` under a top-down, left-to-right traversal. Replaying the result
/// through [`Hypothesis::apply_action`] reproduces the tree exactly.
pub fn extract_actions(
    grammar: &Grammar,
    tree: &AbstractTree,
) -> Result<Vec<Action>, TransitionError> {
    extract_actions_opt(grammar, tree, None)
}

/// Oracle for table-backed derivations: `idx` fields emit `SelColumn`
/// instead of `GenToken`, with indices checked against `columns`.
pub fn extract_actions_with_columns(
    grammar: &Grammar,
    tree: &AbstractTree,
    columns: usize,
) -> Result<Vec<Action>, TransitionError> {
    extract_actions_opt(grammar, tree, Some(columns))
}

fn extract_actions_opt(
    grammar: &Grammar,
    tree: &AbstractTree,
    columns: Option<usize>,
) -> Result<Vec<Action>, TransitionError> {
    let violations = validate_ast(grammar, tree)
        .map_err(|e| TransitionError::InvalidTree(e.to_string()))?;
    if !violations.is_empty() {
        return Err(TransitionError::InvalidTree(violations[0].to_string()));
    }
    let mut actions = Vec::new();
    emit_node(grammar, tree, columns, &mut actions)?;
    Ok(actions)
}

fn emit_node(
    grammar: &Grammar,
    tree: &AbstractTree,
    columns: Option<usize>,
    out: &mut Vec<Action>,
) -> Result<(), TransitionError> {
    out.push(Action::ApplyConstr(tree.ctor));
    let ctor = grammar.ctor(tree.ctor);
    for (field, realized) in ctor.fields.iter().zip(&tree.fields) {
        for value in &realized.values {
            match value {
                FieldValue::Tree(child) => emit_node(grammar, child, columns, out)?,
                FieldValue::Primitive(p) => {
                    if grammar.is_column_idx_type(field.ty) && columns.is_some() {
                        let k: usize = p.tokens[0].parse().map_err(|_| {
                            TransitionError::InvalidTree(format!(
                                "idx value `{}` is not a column index",
                                p.tokens[0]
                            ))
                        })?;
                        if k >= columns.unwrap() {
                            return Err(TransitionError::InvalidTree(format!(
                                "column index {k} out of range"
                            )));
                        }
                        out.push(Action::SelColumn(k));
                    } else if grammar.is_string_type(field.ty) {
                        for tok in &p.tokens {
                            out.push(Action::GenToken(tok.clone()));
                        }
                        out.push(Action::GenToken(TOKEN_TERMINATOR.to_string()));
                    } else {
                        out.push(Action::GenToken(p.tokens[0].clone()));
                    }
                }
            }
        }
        // an optional field holding its value closes by itself
        let needs_reduce = match field.cardinality {
            Cardinality::Single => false,
            Cardinality::Optional => realized.values.is_empty(),
            Cardinality::Sequential => true,
        };
        if needs_reduce {
            out.push(Action::Reduce);
        }
    }
    Ok(())
}

/// Replay an action sequence from a fresh hypothesis and return the
/// finished tree.
pub fn reconstruct(
    grammar: &Arc<Grammar>,
    actions: &[Action],
) -> Result<AbstractTree, TransitionError> {
    reconstruct_from(init_hypothesis(grammar), actions)
}

/// [`reconstruct`] with a table width attached, for sequences containing
/// `SelColumn`.
pub fn reconstruct_with_columns(
    grammar: &Arc<Grammar>,
    actions: &[Action],
    columns: usize,
) -> Result<AbstractTree, TransitionError> {
    reconstruct_from(init_hypothesis_with_columns(grammar, columns), actions)
}

fn reconstruct_from(
    mut hyp: Hypothesis,
    actions: &[Action],
) -> Result<AbstractTree, TransitionError> {
    if actions.is_empty() {
        return Err(TransitionError::IncompleteSequence);
    }
    for (index, action) in actions.iter().enumerate() {
        if hyp.is_complete() {
            return Err(TransitionError::TrailingActions);
        }
        hyp = hyp.apply_action(action).map_err(|e| match e {
            e @ TransitionError::IllegalAction { .. } => TransitionError::IllegalAt {
                index,
                source: Box::new(e),
            },
            other => other,
        })?;
    }
    hyp.tree().ok_or(TransitionError::IncompleteSequence)
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionClass::ApplyConstr(c) => write!(f, "ApplyConstr[#{}]", c.0),
            ActionClass::Reduce => write!(f, "Reduce"),
            ActionClass::GenToken { .. } => write!(f, "GenToken[*]"),
            ActionClass::SelColumn { columns } => write!(f, "SelColumn[0..{columns}]"),
        }
    }
}

mod textfmt {
    //! Line-oriented action text format for golden files:
    //! `APPLY <Constructor>` | `REDUCE` | `GENTOKEN <token>` | `SELCOL <k>`.
    //! Tokens containing whitespace or quotes are double-quoted with
    //! backslash escapes.

    use super::*;

    fn quote_token(tok: &str) -> String {
        if !tok.is_empty() && !tok.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\') {
            return tok.to_string();
        }
        let mut out = String::from("\"");
        for c in tok.chars() {
            match c {
                '"' => out.push_str("\\\""),
                '\\' => out.push_str("\\\\"),
                '\n' => out.push_str("\\n"),
                _ => out.push(c),
            }
        }
        out.push('"');
        out
    }

    fn unquote_token(s: &str) -> Option<String> {
        if !s.starts_with('"') {
            return Some(s.to_string());
        }
        let inner = s.strip_prefix('"')?.strip_suffix('"')?;
        let mut out = String::new();
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next()? {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    _ => return None,
                }
            } else {
                out.push(c);
            }
        }
        Some(out)
    }

    /// Render a single action as one line of the text format.
    pub fn render_action(grammar: &Grammar, action: &Action) -> String {
        match action {
            Action::ApplyConstr(c) => format!("APPLY {}", grammar.ctor(*c).name),
            Action::Reduce => "REDUCE".to_string(),
            Action::GenToken(t) => format!("GENTOKEN {}", quote_token(t)),
            Action::SelColumn(k) => format!("SELCOL {k}"),
        }
    }

    /// Render an action sequence, one action per line, trailing newline.
    pub fn render_actions(grammar: &Grammar, actions: &[Action]) -> String {
        let mut out = String::new();
        for a in actions {
            out.push_str(&render_action(grammar, a));
            out.push('\n');
        }
        out
    }

    /// Parse one line of the text format.
    pub fn parse_action(grammar: &Grammar, line: &str) -> Result<Action, TransitionError> {
        let line = line.trim_end();
        let bad = |msg: &str| TransitionError::InvalidTree(format!("{msg}: `{line}`"));
        if line == "REDUCE" {
            return Ok(Action::Reduce);
        }
        if let Some(name) = line.strip_prefix("APPLY ") {
            return grammar
                .lookup_ctor(name.trim())
                .map(Action::ApplyConstr)
                .ok_or_else(|| bad("unknown constructor"));
        }
        if let Some(tok) = line.strip_prefix("GENTOKEN ") {
            return unquote_token(tok)
                .map(Action::GenToken)
                .ok_or_else(|| bad("malformed token"));
        }
        if let Some(k) = line.strip_prefix("SELCOL ") {
            return k
                .trim()
                .parse()
                .map(Action::SelColumn)
                .map_err(|_| bad("malformed column index"));
        }
        Err(bad("unrecognized action line"))
    }

    /// Parse a newline-separated action listing (blank lines skipped).
    pub fn parse_actions(grammar: &Grammar, text: &str) -> Result<Vec<Action>, TransitionError> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_action(grammar, l))
            .collect()
    }
}

pub use textfmt::{parse_action, parse_actions, render_action, render_actions};
