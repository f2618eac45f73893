//! Seeded random generation of valid trees, used heavily by the
//! round-trip and decoding property suites.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::asdl::{Cardinality, CtorId, Grammar, TypeId};
use crate::ast::{AbstractTree, FieldValue, PrimitiveValue, RealizedField};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("grammar has no finite derivation from the root type")]
    NonTerminatingGrammar,
    #[error("token pool for type `{0}` is empty")]
    EmptyPool(String),
}

/// Token pools keyed by primitive type name, with a shared fallback.
/// Converter round-trip tests use per-type pools so that generated leaves
/// keep their lexical class through render and re-parse.
#[derive(Debug, Clone, Default)]
pub struct TokenPools {
    default_pool: Vec<String>,
    per_type: HashMap<String, Vec<String>>,
}

impl TokenPools {
    pub fn uniform<S: Into<String>>(pool: impl IntoIterator<Item = S>) -> Self {
        TokenPools {
            default_pool: pool.into_iter().map(Into::into).collect(),
            per_type: HashMap::new(),
        }
    }

    pub fn with_type<S: Into<String>>(
        mut self,
        ty: &str,
        pool: impl IntoIterator<Item = S>,
    ) -> Self {
        self.per_type
            .insert(ty.to_string(), pool.into_iter().map(Into::into).collect());
        self
    }

    fn pool_for(&self, ty: &str) -> &[String] {
        self.per_type
            .get(ty)
            .map(|p| p.as_slice())
            .unwrap_or(&self.default_pool)
    }
}

/// Generate a valid tree rooted at the grammar's root type, deterministic
/// for a given `(grammar, seed, pool)`. Once the depth budget is spent,
/// only constructors with minimal finishing depth are chosen.
pub fn random_ast(
    grammar: &Grammar,
    max_depth: usize,
    seed: u64,
    token_pool: &[String],
) -> Result<AbstractTree, GenError> {
    let pools = TokenPools::uniform(token_pool.iter().cloned());
    random_ast_with_pools(grammar, max_depth, seed, &pools)
}

/// [`random_ast`] with per-primitive-type token pools.
pub fn random_ast_with_pools(
    grammar: &Grammar,
    max_depth: usize,
    seed: u64,
    pools: &TokenPools,
) -> Result<AbstractTree, GenError> {
    let depths = min_depths(grammar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = max_depth.max(1);
    gen_type(grammar, grammar.root_type(), budget, &depths, pools, &mut rng)
}

struct MinDepths {
    by_type: Vec<usize>,
    by_ctor: Vec<usize>,
}

/// Least-fixpoint of the minimal number of constructor levels needed to
/// finish a tree of each type. Optional and sequential fields cost nothing
/// because they may stay empty.
fn min_depths(grammar: &Grammar) -> Result<MinDepths, GenError> {
    const UNKNOWN: usize = usize::MAX;
    let mut by_type = vec![UNKNOWN; grammar.types().len()];
    for (i, decl) in grammar.types().iter().enumerate() {
        if decl.kind == crate::asdl::TypeKind::Primitive {
            by_type[i] = 0;
        }
    }
    let mut by_ctor = vec![UNKNOWN; grammar.ctor_count()];
    loop {
        let mut changed = false;
        for (cid, ctor) in grammar.ctors() {
            let mut depth = 1usize;
            let mut ready = true;
            for field in &ctor.fields {
                if field.cardinality != Cardinality::Single || grammar.is_primitive(field.ty) {
                    continue;
                }
                match by_type[field.ty.0] {
                    UNKNOWN => {
                        ready = false;
                        break;
                    }
                    d => depth = depth.max(1 + d),
                }
            }
            if ready && depth < by_ctor[cid.0] {
                by_ctor[cid.0] = depth;
                if depth < by_type[ctor.result_type.0] {
                    by_type[ctor.result_type.0] = depth;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if by_type[grammar.root_type().0] == UNKNOWN {
        return Err(GenError::NonTerminatingGrammar);
    }
    Ok(MinDepths { by_type, by_ctor })
}

fn gen_type(
    grammar: &Grammar,
    ty: TypeId,
    budget: usize,
    depths: &MinDepths,
    pools: &TokenPools,
    rng: &mut ChaCha8Rng,
) -> Result<AbstractTree, GenError> {
    let all = grammar
        .constructors_of(ty)
        .expect("gen_type is only called for composite types");
    let candidates: Vec<CtorId> = all
        .iter()
        .copied()
        .filter(|c| depths.by_ctor[c.0] != usize::MAX && depths.by_ctor[c.0] <= budget)
        .collect();
    let ctor_id = if candidates.is_empty() {
        // budget under the type's minimum; take the fastest way out
        *all.iter()
            .filter(|c| depths.by_ctor[c.0] != usize::MAX)
            .min_by_key(|c| depths.by_ctor[c.0])
            .expect("type reachable from root must terminate")
    } else {
        candidates[rng.gen_range(0..candidates.len())]
    };
    let ctor = grammar.ctor(ctor_id);

    let mut fields = Vec::with_capacity(ctor.fields.len());
    for field in &ctor.fields {
        let count = match field.cardinality {
            Cardinality::Single => 1,
            Cardinality::Optional => {
                if can_fill(grammar, field.ty, budget, depths) && rng.gen_bool(0.5) {
                    1
                } else {
                    0
                }
            }
            Cardinality::Sequential => {
                if can_fill(grammar, field.ty, budget, depths) {
                    rng.gen_range(0..=3)
                } else {
                    0
                }
            }
        };
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            if grammar.is_primitive(field.ty) {
                values.push(FieldValue::Primitive(gen_primitive(
                    grammar, field.ty, pools, rng,
                )?));
            } else {
                values.push(FieldValue::Tree(gen_type(
                    grammar,
                    field.ty,
                    budget.saturating_sub(1).max(1),
                    depths,
                    pools,
                    rng,
                )?));
            }
        }
        fields.push(RealizedField { values });
    }
    Ok(AbstractTree::new(ctor_id, fields))
}

fn can_fill(grammar: &Grammar, ty: TypeId, budget: usize, depths: &MinDepths) -> bool {
    grammar.is_primitive(ty)
        || (depths.by_type[ty.0] != usize::MAX && depths.by_type[ty.0] < budget.max(1))
}

fn gen_primitive(
    grammar: &Grammar,
    ty: TypeId,
    pools: &TokenPools,
    rng: &mut ChaCha8Rng,
) -> Result<PrimitiveValue, GenError> {
    let name = grammar.type_name(ty);
    let pool = pools.pool_for(name);
    if pool.is_empty() {
        return Err(GenError::EmptyPool(name.to_string()));
    }
    let n = if grammar.is_string_type(ty) {
        rng.gen_range(1..=3)
    } else {
        1
    };
    let tokens = (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
        .collect();
    Ok(PrimitiveValue::new(tokens))
}
