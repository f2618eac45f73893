//! Realized abstract syntax trees and validation against a grammar.
//!
//! Trees reference their grammar by constructor index and are immutable
//! once built. Validation reports every cardinality and typing violation
//! together with a dotted tree path such as `value.args[0].s`.

use std::fmt;

use thiserror::Error;

use crate::asdl::{Cardinality, CtorId, Field, Grammar};

/// A constructor application: one realized field per declared field, in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractTree {
    pub ctor: CtorId,
    pub fields: Vec<RealizedField>,
}

impl AbstractTree {
    pub fn new(ctor: CtorId, fields: Vec<RealizedField>) -> Self {
        AbstractTree { ctor, fields }
    }

    /// Number of constructor nodes in the tree.
    pub fn node_count(&self) -> usize {
        1 + self
            .fields
            .iter()
            .flat_map(|f| f.values.iter())
            .map(|v| match v {
                FieldValue::Tree(t) => t.node_count(),
                FieldValue::Primitive(_) => 0,
            })
            .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizedField {
    pub values: Vec<FieldValue>,
}

impl RealizedField {
    pub fn empty() -> Self {
        RealizedField { values: Vec::new() }
    }

    pub fn tree(t: AbstractTree) -> Self {
        RealizedField {
            values: vec![FieldValue::Tree(t)],
        }
    }

    pub fn trees(ts: Vec<AbstractTree>) -> Self {
        RealizedField {
            values: ts.into_iter().map(FieldValue::Tree).collect(),
        }
    }

    pub fn token(tok: impl Into<String>) -> Self {
        RealizedField {
            values: vec![FieldValue::Primitive(PrimitiveValue::single(tok))],
        }
    }

    pub fn tokens(toks: Vec<String>) -> Self {
        RealizedField {
            values: vec![FieldValue::Primitive(PrimitiveValue::new(toks))],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Tree(AbstractTree),
    Primitive(PrimitiveValue),
}

/// Value of a primitive field: one token for identifier-like types, one or
/// more tokens for string-typed fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimitiveValue {
    pub tokens: Vec<String>,
}

impl PrimitiveValue {
    pub fn single(tok: impl Into<String>) -> Self {
        PrimitiveValue {
            tokens: vec![tok.into()],
        }
    }

    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(!tokens.is_empty(), "primitive values hold at least one token");
        PrimitiveValue { tokens }
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Structural equality of two trees: same constructors, same field value
/// lists, same primitive tokens.
pub fn trees_equal(a: &AbstractTree, b: &AbstractTree) -> bool {
    a == b
}

#[derive(Debug, Error)]
pub enum AstError {
    #[error("constructor id {0} is not part of this grammar")]
    ForeignConstructor(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// Realized field count differs from the constructor declaration.
    FieldArity { expected: usize, found: usize },
    /// Value count breaks the field cardinality.
    Cardinality {
        cardinality: Cardinality,
        count: usize,
    },
    /// Composite field holding a token, or primitive field holding a tree.
    ValueShape { expected_primitive: bool },
    /// Child tree's constructor does not produce the field type.
    ChildType { expected: String, found: String },
    /// Primitive value with zero tokens.
    EmptyPrimitive,
    /// Identifier-like primitive holding more than one token.
    TokenCount { count: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        match &self.kind {
            ViolationKind::FieldArity { expected, found } => {
                write!(f, "{path}: expected {expected} fields, found {found}")
            }
            ViolationKind::Cardinality { cardinality, count } => {
                write!(f, "{path}: {count} values break {cardinality:?} cardinality")
            }
            ViolationKind::ValueShape { expected_primitive } => {
                if *expected_primitive {
                    write!(f, "{path}: primitive field holds a subtree")
                } else {
                    write!(f, "{path}: composite field holds a token")
                }
            }
            ViolationKind::ChildType { expected, found } => {
                write!(f, "{path}: expected child of type {expected}, found {found}")
            }
            ViolationKind::EmptyPrimitive => write!(f, "{path}: primitive value has no tokens"),
            ViolationKind::TokenCount { count } => {
                write!(f, "{path}: identifier field holds {count} tokens")
            }
        }
    }
}

/// Check every realized field recursively. Returns all violations with
/// their tree paths; an empty list means the tree is valid.
pub fn validate_ast(grammar: &Grammar, tree: &AbstractTree) -> Result<Vec<Violation>, AstError> {
    let mut out = Vec::new();
    validate_node(grammar, tree, "", &mut out)?;
    Ok(out)
}

fn validate_node(
    grammar: &Grammar,
    tree: &AbstractTree,
    path: &str,
    out: &mut Vec<Violation>,
) -> Result<(), AstError> {
    if tree.ctor.0 >= grammar.ctor_count() {
        return Err(AstError::ForeignConstructor(tree.ctor.0));
    }
    let ctor = grammar.ctor(tree.ctor);
    if tree.fields.len() != ctor.fields.len() {
        out.push(Violation {
            path: path.to_string(),
            kind: ViolationKind::FieldArity {
                expected: ctor.fields.len(),
                found: tree.fields.len(),
            },
        });
        return Ok(());
    }
    for (field, realized) in ctor.fields.iter().zip(&tree.fields) {
        let fpath = join_path(path, &field.name);
        let count = realized.values.len();
        let count_ok = match field.cardinality {
            Cardinality::Single => count == 1,
            Cardinality::Optional => count <= 1,
            Cardinality::Sequential => true,
        };
        if !count_ok {
            out.push(Violation {
                path: fpath.clone(),
                kind: ViolationKind::Cardinality {
                    cardinality: field.cardinality,
                    count,
                },
            });
        }
        for (i, value) in realized.values.iter().enumerate() {
            let vpath = value_path(&fpath, field, i);
            match value {
                FieldValue::Tree(child) => {
                    if grammar.is_primitive(field.ty) {
                        out.push(Violation {
                            path: vpath,
                            kind: ViolationKind::ValueShape {
                                expected_primitive: true,
                            },
                        });
                        continue;
                    }
                    if child.ctor.0 >= grammar.ctor_count() {
                        return Err(AstError::ForeignConstructor(child.ctor.0));
                    }
                    let child_ty = grammar.ctor(child.ctor).result_type;
                    if child_ty != field.ty {
                        out.push(Violation {
                            path: vpath.clone(),
                            kind: ViolationKind::ChildType {
                                expected: grammar.type_name(field.ty).to_string(),
                                found: grammar.type_name(child_ty).to_string(),
                            },
                        });
                    }
                    validate_node(grammar, child, &vpath, out)?;
                }
                FieldValue::Primitive(p) => {
                    if grammar.is_composite(field.ty) {
                        out.push(Violation {
                            path: vpath,
                            kind: ViolationKind::ValueShape {
                                expected_primitive: false,
                            },
                        });
                        continue;
                    }
                    if p.tokens.is_empty() {
                        out.push(Violation {
                            path: vpath,
                            kind: ViolationKind::EmptyPrimitive,
                        });
                    } else if !grammar.is_string_type(field.ty) && p.tokens.len() != 1 {
                        out.push(Violation {
                            path: vpath,
                            kind: ViolationKind::TokenCount {
                                count: p.tokens.len(),
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn value_path(field_path: &str, field: &Field, index: usize) -> String {
    match field.cardinality {
        Cardinality::Single => field_path.to_string(),
        _ => format!("{field_path}[{index}]"),
    }
}

/// Deterministic s-expression rendering for golden tests:
/// `(Constr field:(...) list:[ (...) (...) ] prim:"tok1 tok2")`.
pub fn to_sexpr(grammar: &Grammar, tree: &AbstractTree) -> String {
    let ctor = grammar.ctor(tree.ctor);
    if ctor.fields.is_empty() {
        return format!("({})", ctor.name);
    }
    let mut parts = vec![ctor.name.clone()];
    for (field, realized) in ctor.fields.iter().zip(&tree.fields) {
        let rendered: Vec<String> = realized
            .values
            .iter()
            .map(|v| match v {
                FieldValue::Tree(t) => to_sexpr(grammar, t),
                FieldValue::Primitive(p) => format!("{:?}", p.joined()),
            })
            .collect();
        let body = match field.cardinality {
            Cardinality::Single => rendered.concat(),
            _ => format!("[ {} ]", rendered.join(" ")),
        };
        parts.push(format!("{}:{}", field.name, body));
    }
    format!("({})", parts.join(" "))
}
