//! Lambda-calculus logical forms (GeoQuery / ATIS style).
//!
//! Surface syntax is s-expressions. A top-level `lambda VAR TYPE BODY`
//! appears without outer parentheses, matching the released preprocessed
//! data; nested lambdas are parenthesized. Leaf atoms are classified by
//! lexical shape: `$<digits>` is a variable, numeric literals are numbers,
//! anything else in argument position is an entity, and any non-special
//! head is a predicate applied to its arguments.

use crate::asdl::{CtorId, Grammar};
use crate::ast::{AbstractTree, FieldValue, RealizedField};

use super::ConvertError;

#[derive(Debug, Clone, PartialEq)]
enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    toks
}

fn parse_sexpr(text: &str) -> Result<SExpr, ConvertError> {
    let mut toks = tokenize(text);
    if toks.is_empty() {
        return Err(ConvertError::UnknownForm("empty logical form".into()));
    }
    // top-level lambda without outer parentheses
    if toks[0] == "lambda" {
        toks.insert(0, "(".into());
        toks.push(")".into());
    }
    let mut pos = 0usize;
    let expr = parse_datum(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(ConvertError::UnbalancedParens(format!(
            "trailing tokens after the form: `{}`",
            toks[pos..].join(" ")
        )));
    }
    Ok(expr)
}

fn parse_datum(toks: &[String], pos: &mut usize) -> Result<SExpr, ConvertError> {
    match toks.get(*pos) {
        None => Err(ConvertError::UnbalancedParens("unexpected end".into())),
        Some(t) if t == "(" => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => {
                        return Err(ConvertError::UnbalancedParens(
                            "missing closing parenthesis".into(),
                        ))
                    }
                    Some(t) if t == ")" => {
                        *pos += 1;
                        return Ok(SExpr::List(items));
                    }
                    _ => items.push(parse_datum(toks, pos)?),
                }
            }
        }
        Some(t) if t == ")" => Err(ConvertError::UnbalancedParens(
            "unexpected closing parenthesis".into(),
        )),
        Some(t) => {
            *pos += 1;
            Ok(SExpr::Atom(t.clone()))
        }
    }
}

fn is_variable(tok: &str) -> bool {
    tok.strip_prefix('$')
        .map(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        .unwrap_or(false)
}

fn is_number(tok: &str) -> bool {
    let body = tok.strip_prefix('-').unwrap_or(tok);
    if body.is_empty() {
        return false;
    }
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.chars().all(|c| c.is_ascii_digit())
        && frac.map_or(true, |f| {
            !f.is_empty() && f.chars().all(|c| c.is_ascii_digit())
        })
}

/// Special head forms: name, constructor, and argument shape.
/// `VB` = variable then body, `VDB` = variable, domain, body.
#[derive(Clone, Copy)]
enum Shape {
    VarBody,
    VarDomainBody,
    LambdaForm,
    Args,    // expr* arguments
    OneArg,  // single expr
    Compare, // two exprs
}

const SPECIAL_FORMS: &[(&str, &str, Shape)] = &[
    ("argmax", "Argmax", Shape::VarDomainBody),
    ("argmin", "Argmin", Shape::VarDomainBody),
    ("sum", "Sum", Shape::VarDomainBody),
    ("count", "Count", Shape::VarBody),
    ("exists", "Exists", Shape::VarBody),
    ("max", "Max", Shape::VarBody),
    ("min", "Min", Shape::VarBody),
    ("the", "The", Shape::VarBody),
    ("lambda", "Lambda", Shape::LambdaForm),
    ("and", "And", Shape::Args),
    ("or", "Or", Shape::Args),
    ("not", "Not", Shape::OneArg),
    ("=", "Equal", Shape::Compare),
    ("<", "LessThan", Shape::Compare),
    (">", "GreaterThan", Shape::Compare),
];

fn ctor(grammar: &Grammar, name: &str) -> Result<CtorId, ConvertError> {
    grammar.lookup_ctor(name).ok_or_else(|| {
        ConvertError::UnknownForm(format!("grammar has no `{name}` constructor"))
    })
}

/// Parse a logical form into a tree under the lambda-calculus grammar.
pub fn lambda_to_ast(text: &str, grammar: &Grammar) -> Result<AbstractTree, ConvertError> {
    let sexpr = parse_sexpr(text)?;
    build_expr(&sexpr, grammar)
}

fn atom_expr(tok: &str, grammar: &Grammar) -> Result<AbstractTree, ConvertError> {
    let name = if is_variable(tok) {
        "Variable"
    } else if is_number(tok) {
        "Number"
    } else {
        "Entity"
    };
    Ok(AbstractTree::new(
        ctor(grammar, name)?,
        vec![RealizedField::token(tok)],
    ))
}

fn expect_atom<'a>(e: &'a SExpr, what: &str) -> Result<&'a str, ConvertError> {
    match e {
        SExpr::Atom(a) => Ok(a),
        SExpr::List(_) => Err(ConvertError::UnknownForm(format!(
            "expected {what}, found a list"
        ))),
    }
}

fn build_expr(sexpr: &SExpr, grammar: &Grammar) -> Result<AbstractTree, ConvertError> {
    let items = match sexpr {
        SExpr::Atom(tok) => return atom_expr(tok, grammar),
        SExpr::List(items) => items,
    };
    if items.is_empty() {
        return Err(ConvertError::UnknownForm("empty application `()`".into()));
    }
    let head = expect_atom(&items[0], "a head symbol")?;
    let args = &items[1..];

    if let Some((_, ctor_name, shape)) = SPECIAL_FORMS.iter().find(|(h, _, _)| *h == head) {
        let id = ctor(grammar, ctor_name)?;
        let arity_err = || {
            ConvertError::UnknownForm(format!(
                "`{head}` takes a fixed argument count, found {}",
                args.len()
            ))
        };
        return match shape {
            Shape::VarBody => {
                if args.len() != 2 {
                    return Err(arity_err());
                }
                let var = expect_atom(&args[0], "a bound variable")?;
                Ok(AbstractTree::new(
                    id,
                    vec![
                        RealizedField::token(var),
                        RealizedField::tree(build_expr(&args[1], grammar)?),
                    ],
                ))
            }
            Shape::VarDomainBody => {
                if args.len() != 3 {
                    return Err(arity_err());
                }
                let var = expect_atom(&args[0], "a bound variable")?;
                Ok(AbstractTree::new(
                    id,
                    vec![
                        RealizedField::token(var),
                        RealizedField::tree(build_expr(&args[1], grammar)?),
                        RealizedField::tree(build_expr(&args[2], grammar)?),
                    ],
                ))
            }
            Shape::LambdaForm => {
                if args.len() != 3 {
                    return Err(arity_err());
                }
                let var = expect_atom(&args[0], "a bound variable")?;
                let ty = expect_atom(&args[1], "a variable type")?;
                Ok(AbstractTree::new(
                    id,
                    vec![
                        RealizedField::token(var),
                        RealizedField::token(ty),
                        RealizedField::tree(build_expr(&args[2], grammar)?),
                    ],
                ))
            }
            Shape::Args => {
                let children = args
                    .iter()
                    .map(|a| build_expr(a, grammar))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(AbstractTree::new(id, vec![RealizedField::trees(children)]))
            }
            Shape::OneArg => {
                if args.len() != 1 {
                    return Err(arity_err());
                }
                Ok(AbstractTree::new(
                    id,
                    vec![RealizedField::tree(build_expr(&args[0], grammar)?)],
                ))
            }
            Shape::Compare => {
                if args.len() != 2 {
                    return Err(arity_err());
                }
                let op = AbstractTree::new(id, vec![]);
                Ok(AbstractTree::new(
                    ctor(grammar, "Compare")?,
                    vec![
                        RealizedField::tree(op),
                        RealizedField::tree(build_expr(&args[0], grammar)?),
                        RealizedField::tree(build_expr(&args[1], grammar)?),
                    ],
                ))
            }
        };
    }

    // everything else is a predicate application
    let children = args
        .iter()
        .map(|a| build_expr(a, grammar))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AbstractTree::new(
        ctor(grammar, "Apply")?,
        vec![RealizedField::token(head), RealizedField::trees(children)],
    ))
}

/// Render a lambda-calculus tree back to its canonical logical form.
pub fn ast_to_lambda(tree: &AbstractTree, grammar: &Grammar) -> Result<String, ConvertError> {
    render_expr(tree, grammar, true)
}

fn single_token<'t>(
    tree: &'t AbstractTree,
    index: usize,
    what: &str,
) -> Result<&'t str, ConvertError> {
    match tree.fields.get(index).and_then(|f| f.values.first()) {
        Some(FieldValue::Primitive(p)) if p.tokens.len() == 1 => Ok(&p.tokens[0]),
        _ => Err(ConvertError::InvalidTree(format!(
            "expected a single {what} token"
        ))),
    }
}

fn child_tree<'t>(
    tree: &'t AbstractTree,
    index: usize,
    what: &str,
) -> Result<&'t AbstractTree, ConvertError> {
    match tree.fields.get(index).and_then(|f| f.values.first()) {
        Some(FieldValue::Tree(t)) => Ok(t),
        _ => Err(ConvertError::InvalidTree(format!("expected a {what} subtree"))),
    }
}

fn child_trees<'t>(
    tree: &'t AbstractTree,
    index: usize,
) -> Result<Vec<&'t AbstractTree>, ConvertError> {
    tree.fields
        .get(index)
        .ok_or_else(|| ConvertError::InvalidTree("missing field".into()))?
        .values
        .iter()
        .map(|v| match v {
            FieldValue::Tree(t) => Ok(t),
            FieldValue::Primitive(_) => {
                Err(ConvertError::InvalidTree("expected subtrees".into()))
            }
        })
        .collect()
}

fn render_expr(
    tree: &AbstractTree,
    grammar: &Grammar,
    top_level: bool,
) -> Result<String, ConvertError> {
    let name = grammar.ctor(tree.ctor).name.as_str();
    let form = |head: &str, rest: Vec<String>| {
        if rest.is_empty() {
            format!("({head})")
        } else {
            format!("({} {})", head, rest.join(" "))
        }
    };
    Ok(match name {
        "Variable" | "Entity" | "Number" => single_token(tree, 0, "leaf")?.to_string(),
        "Apply" => {
            let pred = single_token(tree, 0, "predicate")?;
            let args = child_trees(tree, 1)?
                .iter()
                .map(|t| render_expr(t, grammar, false))
                .collect::<Result<Vec<_>, _>>()?;
            form(pred, args)
        }
        "And" | "Or" => {
            let head = if name == "And" { "and" } else { "or" };
            let args = child_trees(tree, 0)?
                .iter()
                .map(|t| render_expr(t, grammar, false))
                .collect::<Result<Vec<_>, _>>()?;
            form(head, args)
        }
        "Not" => form(
            "not",
            vec![render_expr(child_tree(tree, 0, "argument")?, grammar, false)?],
        ),
        "Count" | "Exists" | "Max" | "Min" | "The" => {
            let head = name.to_lowercase();
            form(
                &head,
                vec![
                    single_token(tree, 0, "variable")?.to_string(),
                    render_expr(child_tree(tree, 1, "body")?, grammar, false)?,
                ],
            )
        }
        "Argmax" | "Argmin" | "Sum" => {
            let head = name.to_lowercase();
            form(
                &head,
                vec![
                    single_token(tree, 0, "variable")?.to_string(),
                    render_expr(child_tree(tree, 1, "domain")?, grammar, false)?,
                    render_expr(child_tree(tree, 2, "body")?, grammar, false)?,
                ],
            )
        }
        "Lambda" => {
            let var = single_token(tree, 0, "variable")?;
            let ty = single_token(tree, 1, "variable type")?;
            let body = render_expr(child_tree(tree, 2, "body")?, grammar, false)?;
            if top_level {
                format!("lambda {var} {ty} {body}")
            } else {
                format!("(lambda {var} {ty} {body})")
            }
        }
        "Compare" => {
            let op = child_tree(tree, 0, "operator")?;
            let sym = match grammar.ctor(op.ctor).name.as_str() {
                "Equal" => "=",
                "LessThan" => "<",
                "GreaterThan" => ">",
                other => {
                    return Err(ConvertError::InvalidTree(format!(
                        "unknown comparison operator `{other}`"
                    )))
                }
            };
            form(
                sym,
                vec![
                    render_expr(child_tree(tree, 1, "left")?, grammar, false)?,
                    render_expr(child_tree(tree, 2, "right")?, grammar, false)?,
                ],
            )
        }
        other => {
            return Err(ConvertError::InvalidTree(format!(
                "constructor `{other}` is not part of the lambda-calculus grammar"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdl::parse_grammar;
    use crate::ast::{trees_equal, validate_ast};
    use crate::grammars;
    use crate::randgen::{random_ast_with_pools, TokenPools};

    fn grammar() -> Grammar {
        parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap()
    }

    #[test]
    fn border_states_form() {
        let g = grammar();
        let s = "lambda $0 e (and (state $0) (next_to $0 texas:s))";
        let t = lambda_to_ast(s, &g).unwrap();
        assert!(validate_ast(&g, &t).unwrap().is_empty());
        assert_eq!(g.ctor(t.ctor).name, "Lambda");
        assert_eq!(ast_to_lambda(&t, &g).unwrap(), s);
    }

    #[test]
    fn compare_form() {
        let g = grammar();
        let t = lambda_to_ast("(= $0 $1)", &g).unwrap();
        assert_eq!(g.ctor(t.ctor).name, "Compare");
        assert_eq!(ast_to_lambda(&t, &g).unwrap(), "(= $0 $1)");
    }

    #[test]
    fn leaf_classification() {
        let g = grammar();
        for (tok, ctor_name) in [("$3", "Variable"), ("2", "Number"), ("texas:s", "Entity"), ("utah", "Entity")] {
            let t = lambda_to_ast(tok, &g).unwrap();
            assert_eq!(g.ctor(t.ctor).name, ctor_name, "token {tok}");
        }
    }

    #[test]
    fn number_leaf_renders_bare() {
        let g = grammar();
        let t = lambda_to_ast("2", &g).unwrap();
        assert_eq!(ast_to_lambda(&t, &g).unwrap(), "2");
    }

    #[test]
    fn unbalanced_parens_rejected() {
        let g = grammar();
        assert!(matches!(
            lambda_to_ast("(and (state $0)", &g),
            Err(ConvertError::UnbalancedParens(_))
        ));
        assert!(matches!(
            lambda_to_ast("(state $0))", &g),
            Err(ConvertError::UnbalancedParens(_))
        ));
    }

    #[test]
    fn special_form_arity_mismatch_rejected() {
        let g = grammar();
        assert!(matches!(
            lambda_to_ast("(count $0)", &g),
            Err(ConvertError::UnknownForm(_))
        ));
        assert!(matches!(
            lambda_to_ast("(lambda $0 (state $0))", &g),
            Err(ConvertError::UnknownForm(_))
        ));
    }

    /// Pools chosen so every leaf keeps its lexical class through a
    /// render / re-parse cycle.
    pub(crate) fn stable_pools() -> TokenPools {
        TokenPools::uniform(Vec::<String>::new())
            .with_type("var", ["$0", "$1", "$2"])
            .with_type("ent", ["texas:s", "dallas:ci", "utah", "colorado:r", "usa:co"])
            .with_type("num", ["2", "9", "150", "1000"])
            .with_type(
                "pred",
                ["state", "river", "city", "next_to", "loc", "size", "flight", "from", "to"],
            )
            .with_type("var_type", ["e", "i"])
    }

    #[test]
    fn random_tree_round_trip() {
        let g = grammar();
        let pools = stable_pools();
        for seed in 0..300 {
            let t = random_ast_with_pools(&g, 6, seed, &pools).unwrap();
            let rendered = ast_to_lambda(&t, &g).unwrap();
            let back = lambda_to_ast(&rendered, &g)
                .unwrap_or_else(|e| panic!("seed {seed}: `{rendered}`: {e}"));
            assert!(trees_equal(&t, &back), "seed {seed}: `{rendered}`");
        }
    }
}
