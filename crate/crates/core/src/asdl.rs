//! ASDL grammar support: parsing grammar text files, validation, canonical
//! rendering, and content fingerprints.
//!
//! A grammar file declares composite types as alternatives of constructors:
//!
//! ```text
//! expr = Call(expr func, expr* args, keyword* keywords)
//!      | Name(identifier id)
//! ```
//!
//! Field suffixes give cardinality: `*` sequential, `?` optional, none
//! single. Any type name that appears in a field but is never defined by a
//! production is registered as a primitive type. Lines starting with `#` or
//! `--` are comments; `attributes (...)` clauses are accepted and discarded.

use std::collections::{HashMap, HashSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Index of a type within its [`Grammar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub usize);

/// Index of a constructor within its [`Grammar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtorId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeKind {
    Composite,
    Primitive,
}

#[derive(Debug, Clone)]
pub struct TypeDecl {
    pub name: String,
    pub kind: TypeKind,
}

/// Field multiplicity: exactly one, zero or one, or zero or more.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cardinality {
    Single,
    Optional,
    Sequential,
}

impl Cardinality {
    fn suffix(self) -> &'static str {
        match self {
            Cardinality::Single => "",
            Cardinality::Optional => "?",
            Cardinality::Sequential => "*",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    pub name: String,
    pub ty: TypeId,
    pub cardinality: Cardinality,
}

#[derive(Debug, Clone)]
pub struct Constructor {
    pub name: String,
    pub result_type: TypeId,
    pub fields: Vec<Field>,
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate constructor `{0}`")]
    DuplicateConstructor(String),
    #[error("unknown root type `{0}`")]
    UnknownRootType(String),
    #[error("type `{0}` is primitive and has no constructors")]
    PrimitiveTypeQuery(String),
}

/// A validated ASDL grammar. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Grammar {
    types: Vec<TypeDecl>,
    ctors: Vec<Constructor>,
    root: TypeId,
    type_index: HashMap<String, TypeId>,
    ctor_index: HashMap<String, CtorId>,
    ctors_by_type: Vec<Vec<CtorId>>,
    /// Base offset of each constructor's fields in the global field
    /// numbering (slot 0 is the virtual root field).
    field_base: Vec<usize>,
    field_slots: usize,
}

impl Grammar {
    pub fn root_type(&self) -> TypeId {
        self.root
    }

    pub fn type_decl(&self, id: TypeId) -> &TypeDecl {
        &self.types[id.0]
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types[id.0].name
    }

    pub fn is_primitive(&self, id: TypeId) -> bool {
        self.types[id.0].kind == TypeKind::Primitive
    }

    pub fn is_composite(&self, id: TypeId) -> bool {
        self.types[id.0].kind == TypeKind::Composite
    }

    /// True for primitive types whose values are token sequences rather
    /// than single tokens. Only the `string` type qualifies.
    pub fn is_string_type(&self, id: TypeId) -> bool {
        self.is_primitive(id) && self.types[id.0].name == "string"
    }

    /// True for the primitive column-index type used by table-backed
    /// grammars.
    pub fn is_column_idx_type(&self, id: TypeId) -> bool {
        self.is_primitive(id) && self.types[id.0].name == "idx"
    }

    pub fn types(&self) -> &[TypeDecl] {
        &self.types
    }

    pub fn ctor(&self, id: CtorId) -> &Constructor {
        &self.ctors[id.0]
    }

    pub fn ctor_count(&self) -> usize {
        self.ctors.len()
    }

    pub fn ctors(&self) -> impl Iterator<Item = (CtorId, &Constructor)> {
        self.ctors.iter().enumerate().map(|(i, c)| (CtorId(i), c))
    }

    pub fn lookup_type(&self, name: &str) -> Option<TypeId> {
        self.type_index.get(name).copied()
    }

    pub fn lookup_ctor(&self, name: &str) -> Option<CtorId> {
        self.ctor_index.get(name).copied()
    }

    /// Constructors producing `ty`, in declaration order.
    pub fn constructors_of(&self, ty: TypeId) -> Result<&[CtorId], GrammarError> {
        if self.is_primitive(ty) {
            return Err(GrammarError::PrimitiveTypeQuery(
                self.type_name(ty).to_string(),
            ));
        }
        Ok(&self.ctors_by_type[ty.0])
    }

    /// Global slot for a field, used to key learned field embeddings.
    /// Slot 0 is reserved for the virtual root field.
    pub fn field_slot(&self, ctor: CtorId, field_index: usize) -> usize {
        debug_assert!(field_index < self.ctors[ctor.0].fields.len());
        1 + self.field_base[ctor.0] + field_index
    }

    pub const ROOT_FIELD_SLOT: usize = 0;

    /// Total number of field slots including the virtual root.
    pub fn field_slot_count(&self) -> usize {
        self.field_slots
    }

    /// Canonical single-line-per-production rendering. Parsing the output
    /// reproduces the grammar exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (ti, decl) in self.types.iter().enumerate() {
            if decl.kind != TypeKind::Composite {
                continue;
            }
            let alts: Vec<String> = self.ctors_by_type[ti]
                .iter()
                .map(|cid| self.render_ctor(&self.ctors[cid.0]))
                .collect();
            out.push_str(&format!("{} = {}\n", decl.name, alts.join(" | ")));
        }
        out
    }

    fn render_ctor(&self, c: &Constructor) -> String {
        if c.fields.is_empty() {
            return c.name.clone();
        }
        let fields: Vec<String> = c
            .fields
            .iter()
            .map(|f| {
                format!(
                    "{}{} {}",
                    self.type_name(f.ty),
                    f.cardinality.suffix(),
                    f.name
                )
            })
            .collect();
        format!("{}({})", c.name, fields.join(", "))
    }

    /// Stable digest of the canonicalized grammar plus its root type.
    /// Whitespace and comments in the source text do not affect it.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.render().as_bytes());
        hasher.update(b"\x00root=");
        hasher.update(self.type_name(self.root).as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Eq,
    Pipe,
    LParen,
    RParen,
    Comma,
    Star,
    Quest,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, GrammarError> {
    let mut toks = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut line = raw;
        if let Some(pos) = line.find('#') {
            line = &line[..pos];
        }
        if let Some(pos) = line.find("--") {
            line = &line[..pos];
        }
        let mut chars = line.chars().peekable();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c.is_alphanumeric() || c == '_' {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(ident), line_no));
            } else {
                let tok = match c {
                    '=' => Tok::Eq,
                    '|' => Tok::Pipe,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '*' => Tok::Star,
                    '?' => Tok::Quest,
                    other => {
                        return Err(GrammarError::Syntax {
                            line: line_no,
                            msg: format!("unexpected character `{other}`"),
                        })
                    }
                };
                chars.next();
                toks.push((tok, line_no));
            }
        }
    }
    Ok(toks)
}

struct RawField {
    ty: String,
    cardinality: Cardinality,
    name: String,
}

struct RawCtor {
    name: String,
    fields: Vec<RawField>,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|(_, l)| *l)
            .unwrap_or(0)
    }

    fn err(&self, msg: impl Into<String>) -> GrammarError {
        GrammarError::Syntax {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, GrammarError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(GrammarError::Syntax {
                line: self.line(),
                msg: format!("expected {what}, found {other:?}"),
            }),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), GrammarError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => Err(GrammarError::Syntax {
                line: self.line(),
                msg: format!("expected {what}, found {other:?}"),
            }),
        }
    }

    fn parse_productions(&mut self) -> Result<Vec<(String, Vec<RawCtor>)>, GrammarError> {
        let mut prods = Vec::new();
        while self.peek().is_some() {
            let lhs = self.expect_ident("type name")?;
            self.expect(Tok::Eq, "`=`")?;
            let mut ctors = vec![self.parse_ctor()?];
            while self.peek() == Some(&Tok::Pipe) {
                self.next();
                ctors.push(self.parse_ctor()?);
            }
            if let Some(Tok::Ident(id)) = self.peek() {
                if id == "attributes" && self.peek2() == Some(&Tok::LParen) {
                    self.next();
                    self.skip_parens()?;
                }
            }
            prods.push((lhs, ctors));
            match self.peek() {
                None => break,
                Some(Tok::Ident(_)) if self.peek2() == Some(&Tok::Eq) => continue,
                _ => return Err(self.err("expected `|` or a new production")),
            }
        }
        Ok(prods)
    }

    fn parse_ctor(&mut self) -> Result<RawCtor, GrammarError> {
        let name = self.expect_ident("constructor name")?;
        let mut fields = Vec::new();
        if self.peek() == Some(&Tok::LParen) {
            self.next();
            if self.peek() == Some(&Tok::RParen) {
                self.next();
            } else {
                loop {
                    fields.push(self.parse_field()?);
                    match self.next() {
                        Some(Tok::Comma) => continue,
                        Some(Tok::RParen) => break,
                        _ => return Err(self.err("expected `,` or `)` in field list")),
                    }
                }
            }
        }
        Ok(RawCtor { name, fields })
    }

    fn parse_field(&mut self) -> Result<RawField, GrammarError> {
        let ty = self.expect_ident("field type")?;
        let cardinality = match self.peek() {
            Some(Tok::Star) => {
                self.next();
                Cardinality::Sequential
            }
            Some(Tok::Quest) => {
                self.next();
                Cardinality::Optional
            }
            _ => Cardinality::Single,
        };
        let name = self.expect_ident("field name")?;
        Ok(RawField {
            ty,
            cardinality,
            name,
        })
    }

    fn skip_parens(&mut self) -> Result<(), GrammarError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut depth = 1usize;
        while depth > 0 {
            match self.next() {
                Some(Tok::LParen) => depth += 1,
                Some(Tok::RParen) => depth -= 1,
                Some(_) => {}
                None => return Err(self.err("unterminated attributes clause")),
            }
        }
        Ok(())
    }
}

/// Parse ASDL grammar text and validate it against `root_type`.
///
/// Types used in fields but never defined become primitives. Constructor
/// names must be unique across the whole grammar so that actions naming a
/// constructor are unambiguous.
pub fn parse_grammar(text: &str, root_type: &str) -> Result<Grammar, GrammarError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let prods = parser.parse_productions()?;
    if prods.is_empty() {
        return Err(GrammarError::Syntax {
            line: 1,
            msg: "grammar has no productions".into(),
        });
    }

    let mut types: Vec<TypeDecl> = Vec::new();
    let mut type_index: HashMap<String, TypeId> = HashMap::new();
    for (lhs, _) in &prods {
        if type_index.contains_key(lhs) {
            return Err(GrammarError::Syntax {
                line: 1,
                msg: format!("type `{lhs}` defined more than once"),
            });
        }
        let id = TypeId(types.len());
        type_index.insert(lhs.clone(), id);
        types.push(TypeDecl {
            name: lhs.clone(),
            kind: TypeKind::Composite,
        });
    }

    let mut ctors: Vec<Constructor> = Vec::new();
    let mut ctor_index: HashMap<String, CtorId> = HashMap::new();
    let mut ctors_by_type: Vec<Vec<CtorId>> = vec![Vec::new(); types.len()];
    for (lhs, raw_ctors) in &prods {
        let result_type = type_index[lhs];
        for raw in raw_ctors {
            if ctor_index.contains_key(&raw.name) {
                return Err(GrammarError::DuplicateConstructor(raw.name.clone()));
            }
            let mut seen_fields = HashSet::new();
            let mut fields = Vec::with_capacity(raw.fields.len());
            for rf in &raw.fields {
                if !seen_fields.insert(rf.name.clone()) {
                    return Err(GrammarError::Syntax {
                        line: 1,
                        msg: format!(
                            "duplicate field name `{}` in constructor `{}`",
                            rf.name, raw.name
                        ),
                    });
                }
                let ty = *type_index.entry(rf.ty.clone()).or_insert_with(|| {
                    let id = TypeId(types.len());
                    types.push(TypeDecl {
                        name: rf.ty.clone(),
                        kind: TypeKind::Primitive,
                    });
                    ctors_by_type.push(Vec::new());
                    id
                });
                fields.push(Field {
                    name: rf.name.clone(),
                    ty,
                    cardinality: rf.cardinality,
                });
            }
            let id = CtorId(ctors.len());
            ctor_index.insert(raw.name.clone(), id);
            ctors_by_type[result_type.0].push(id);
            ctors.push(Constructor {
                name: raw.name.clone(),
                result_type,
                fields,
            });
        }
    }

    let root = match type_index.get(root_type) {
        Some(&id) if types[id.0].kind == TypeKind::Composite => id,
        _ => return Err(GrammarError::UnknownRootType(root_type.to_string())),
    };

    let mut field_base = Vec::with_capacity(ctors.len());
    let mut offset = 0usize;
    for c in &ctors {
        field_base.push(offset);
        offset += c.fields.len();
    }

    Ok(Grammar {
        types,
        ctors,
        root,
        type_index,
        ctor_index,
        ctors_by_type,
        field_base,
        field_slots: 1 + offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammars as fixtures;

    #[test]
    fn wikisql_grammar_shape() {
        let g = parse_grammar(fixtures::WIKISQL_GRAMMAR, "stmt").unwrap();
        let composite: Vec<&str> = g
            .types()
            .iter()
            .filter(|t| t.kind == TypeKind::Composite)
            .map(|t| t.name.as_str())
            .collect();
        assert_eq!(composite, ["stmt", "cond_expr", "agg_op", "cmp_op"]);
        let primitive: Vec<&str> = g
            .types()
            .iter()
            .filter(|t| t.kind == TypeKind::Primitive)
            .map(|t| t.name.as_str())
            .collect();
        assert_eq!(primitive, ["idx", "string"]);
        assert_eq!(g.ctor_count(), 11);
        let names: Vec<&str> = g.ctors().map(|(_, c)| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "Select",
                "Condition",
                "Max",
                "Min",
                "Count",
                "Sum",
                "Avg",
                "Equal",
                "GreaterThan",
                "LessThan",
                "Other"
            ]
        );
    }

    #[test]
    fn lambda_grammar_shape() {
        let g = parse_grammar(fixtures::LAMBDA_GRAMMAR, "expr").unwrap();
        assert_eq!(g.ctor_count(), 20);
        let cmp = g.lookup_type("cmp_op").unwrap();
        let names: Vec<&str> = g
            .constructors_of(cmp)
            .unwrap()
            .iter()
            .map(|c| g.ctor(*c).name.as_str())
            .collect();
        assert_eq!(names, ["Equal", "LessThan", "GreaterThan"]);
    }

    #[test]
    fn minimal_grammar() {
        let g = parse_grammar("expr = Name(identifier id)", "expr").unwrap();
        assert_eq!(g.ctor_count(), 1);
        let name = g.ctor(CtorId(0));
        assert_eq!(name.fields.len(), 1);
        assert_eq!(name.fields[0].cardinality, Cardinality::Single);
        assert!(g.is_primitive(name.fields[0].ty));
    }

    #[test]
    fn agg_op_order_preserved() {
        let g = parse_grammar(fixtures::WIKISQL_GRAMMAR, "stmt").unwrap();
        let agg = g.lookup_type("agg_op").unwrap();
        let names: Vec<&str> = g
            .constructors_of(agg)
            .unwrap()
            .iter()
            .map(|c| g.ctor(*c).name.as_str())
            .collect();
        assert_eq!(names, ["Max", "Min", "Count", "Sum", "Avg"]);
    }

    #[test]
    fn duplicate_constructor_rejected() {
        let err = parse_grammar("a = X | X", "a").unwrap_err();
        assert!(matches!(err, GrammarError::DuplicateConstructor(n) if n == "X"));
    }

    #[test]
    fn unknown_root_rejected() {
        let err = parse_grammar("a = X(b c)", "missing").unwrap_err();
        assert!(matches!(err, GrammarError::UnknownRootType(_)));
        // a primitive cannot be the root either
        let err = parse_grammar("a = X(b c)", "b").unwrap_err();
        assert!(matches!(err, GrammarError::UnknownRootType(_)));
    }

    #[test]
    fn primitive_type_query_rejected() {
        let g = parse_grammar("a = X(b c)", "a").unwrap();
        let b = g.lookup_type("b").unwrap();
        assert!(matches!(
            g.constructors_of(b),
            Err(GrammarError::PrimitiveTypeQuery(_))
        ));
    }

    #[test]
    fn render_round_trips() {
        for (text, root) in [
            (fixtures::LAMBDA_GRAMMAR, "expr"),
            (fixtures::WIKISQL_GRAMMAR, "stmt"),
            (fixtures::MINI_PYTHON_GRAMMAR, "stmt"),
        ] {
            let g = parse_grammar(text, root).unwrap();
            let rendered = g.render();
            let g2 = parse_grammar(&rendered, root).unwrap();
            assert_eq!(rendered, g2.render());
            assert_eq!(g.fingerprint(), g2.fingerprint());
        }
    }

    #[test]
    fn fingerprint_ignores_whitespace_and_comments() {
        let base = "expr = Name(identifier id)";
        let noisy = "# header\nexpr = Name(identifier id)  -- trailing\n\n";
        let a = parse_grammar(base, "expr").unwrap().fingerprint();
        let b = parse_grammar(noisy, "expr").unwrap().fingerprint();
        assert_eq!(a, b);
    }

    #[test]
    fn fingerprint_distinguishes_grammars() {
        let a = parse_grammar(fixtures::LAMBDA_GRAMMAR, "expr")
            .unwrap()
            .fingerprint();
        let b = parse_grammar(fixtures::WIKISQL_GRAMMAR, "stmt")
            .unwrap()
            .fingerprint();
        assert_ne!(a, b);
    }

    #[test]
    fn attributes_clause_discarded() {
        let g = parse_grammar(
            "stmt = Pass | Break attributes (int lineno, int col)",
            "stmt",
        )
        .unwrap();
        assert_eq!(g.ctor_count(), 2);
        assert_eq!(g.render(), "stmt = Pass | Break\n");
    }
}
