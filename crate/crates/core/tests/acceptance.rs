//! Acceptance suite. Each test is one release criterion and prints a
//! PASS line with its measured runtime; run with `--nocapture` to see
//! them. Criteria:
//!
//! 1. Oracle golden trace: the read_csv expression yields exactly the
//!    checked-in 15-action file, byte for byte.
//! 2. Round trips: 1000 random trees per grammar survive oracle
//!    extraction and replay unchanged and validate cleanly.
//! 3. Decoding grammaticality: beams under random parameters only ever
//!    produce valid trees and never hit an illegal action.
//! 4. Distributions sum to one at every step, and analytic gradients
//!    match central finite differences at double precision.
//! 5. Overfit: 50 synthetic lambda-calculus pairs reach 95% train exact
//!    match within 300 epochs and five minutes; greedy and beam-5 agree.
//! 6. Copy mechanism: out-of-vocabulary tokens are reproduced by
//!    pointing into the utterance.
//! 7. Parent-feeding ablation truly severs the parent-state input.
//! 8. Table-backed end-to-end: SQL round trips, column legality matches
//!    table width, answer pruning rescues the planted example.
//! 9. Converter inverses on random trees and the hand-written corpus.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semparse_core::asdl::Grammar;
use semparse_core::convert::{
    ast_to_lambda, ast_to_sql, execute_sql, lambda_to_ast, pyexpr_to_ast, sql_to_ast, MrFormat,
    TableContext,
};
use semparse_core::dataset::load_dataset;
use semparse_core::scorer::train::{build_vocabs, prepare, train, TrainOptions};
use semparse_core::scorer::{Precision, Scorer, ScorerConfig, Vocab};
use semparse_core::search::{answer_prune, beam_search, BeamConfig};
use semparse_core::transition::{
    extract_actions, extract_actions_with_columns, init_hypothesis,
    init_hypothesis_with_columns, render_actions, Action, ActionClass,
};
use semparse_core::{grammars, parse_grammar, random_ast, random_ast_with_pools, TokenPools};
use semparse_core::{trees_equal, validate_ast};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn lambda_grammar() -> Arc<Grammar> {
    Arc::new(parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap())
}

fn wikisql_grammar() -> Arc<Grammar> {
    Arc::new(parse_grammar(grammars::WIKISQL_GRAMMAR, "stmt").unwrap())
}

fn mini_python_grammar() -> Arc<Grammar> {
    Arc::new(parse_grammar(grammars::MINI_PYTHON_GRAMMAR, "stmt").unwrap())
}

fn minimal_grammar() -> Arc<Grammar> {
    Arc::new(parse_grammar(grammars::MINIMAL_GRAMMAR, "expr").unwrap())
}

fn pass(criterion: usize, what: &str, elapsed: Duration) {
    println!("PASS criterion {criterion}: {what} ({elapsed:?})");
}

fn strings(toks: &[&str]) -> Vec<String> {
    toks.iter().map(|s| s.to_string()).collect()
}

fn small_vocab(tokens: &[&str], gen: bool) -> Vocab {
    let doubled: Vec<&str> = tokens.iter().chain(tokens.iter()).copied().collect();
    Vocab::build(doubled, 2, gen)
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_oracle_golden_trace() {
    let start = Instant::now();
    let g = mini_python_grammar();
    let tree = pyexpr_to_ast("pandas.read_csv('file.csv', nrows=1000)", &g).unwrap();
    let actions = extract_actions(&g, &tree).unwrap();
    assert_eq!(actions.len(), 15);
    assert!(matches!(actions[8], Action::GenToken(ref t) if t == "</f>"));
    assert!(matches!(actions[9], Action::Reduce));
    assert!(matches!(actions[14], Action::Reduce));
    let rendered = render_actions(&g, &actions);
    let golden = std::fs::read_to_string(fixture("read_csv_oracle.golden")).unwrap();
    assert_eq!(rendered.as_bytes(), golden.as_bytes());
    assert!(start.elapsed() < Duration::from_secs(1));
    pass(1, "15-action oracle trace matches the golden file", start.elapsed());
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_round_trip_property_suite() {
    let start = Instant::now();
    let pool = strings(&["alpha", "beta", "gamma", "delta"]);
    for (grammar, name) in [
        (minimal_grammar(), "minimal"),
        (lambda_grammar(), "lambda"),
        (wikisql_grammar(), "wikisql"),
        (mini_python_grammar(), "mini-python"),
    ] {
        for seed in 0..1000u64 {
            let tree = random_ast(&grammar, 6, seed, &pool).unwrap();
            assert!(
                validate_ast(&grammar, &tree).unwrap().is_empty(),
                "{name} seed {seed} generated an invalid tree"
            );
            let actions = extract_actions(&grammar, &tree).unwrap();
            let rebuilt = semparse_core::reconstruct(&grammar, &actions).unwrap();
            assert!(
                trees_equal(&tree, &rebuilt),
                "{name} seed {seed} failed the oracle round trip"
            );
        }
    }
    assert!(start.elapsed() < Duration::from_secs(30));
    pass(2, "4000 oracle round trips, zero failures", start.elapsed());
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_decoding_grammaticality() {
    let start = Instant::now();
    let config = ScorerConfig {
        embed_dim: 12,
        hidden_dim: 12,
        field_embed_dim: 6,
        action_embed_dim: 8,
        dropout_rate: 0.0,
        vocab_cutoff: 1,
        scalar_precision: Precision::Single,
        parent_feeding: true,
    };
    let beam = BeamConfig {
        beam_size: 5,
        max_actions: 150,
        length_normalize: false,
    };
    let pool = ["alpha", "beta", "gamma", "delta", "eps"];
    let mut completions = 0usize;
    for (grammar, name) in [
        (minimal_grammar(), "minimal"),
        (lambda_grammar(), "lambda"),
        (wikisql_grammar(), "wikisql"),
        (mini_python_grammar(), "mini-python"),
    ] {
        let table = TableContext::new(
            strings(&["City", "State", "Population"]),
            vec![strings(&["Denver", "Colorado", "715000"])],
        )
        .unwrap();
        let table = (name == "wikisql").then_some(&table);
        let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
        for model_seed in 0..10u64 {
            let scorer: Scorer<f32> = Scorer::new(
                config.clone(),
                Arc::clone(&grammar),
                small_vocab(&pool, false),
                small_vocab(&["state", "next_to", "x", "7"], true),
                model_seed,
            )
            .unwrap();
            for _ in 0..10 {
                let len = rng.gen_range(3..=6);
                let utterance: Vec<String> = (0..len)
                    .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
                    .collect();
                let results = beam_search(&scorer, &utterance, &beam, table)
                    .unwrap_or_else(|e| panic!("{name}: beam search failed: {e}"));
                for (tree, _) in &results {
                    completions += 1;
                    assert!(
                        validate_ast(&grammar, tree).unwrap().is_empty(),
                        "{name}: beam produced an invalid tree"
                    );
                }
            }
        }
    }
    assert!(completions > 0, "no beam completed anywhere");
    assert!(start.elapsed() < Duration::from_secs(120));
    pass(
        3,
        &format!("400 random-parameter beams, {completions} completions, all grammatical"),
        start.elapsed(),
    );
}

// ---------------------------------------------------------------- 4

fn players_table() -> TableContext {
    TableContext::new(
        strings(&["Player", "No.", "Position"]),
        vec![
            strings(&["Calvin Mccarty", "32", "Running back"]),
            strings(&["Joe Smith", "12", "Quarterback"]),
        ],
    )
    .unwrap()
}

#[test]
fn criterion_4_distribution_and_gradient_checks() {
    let start = Instant::now();
    let tiny = ScorerConfig {
        embed_dim: 6,
        hidden_dim: 6,
        field_embed_dim: 3,
        action_embed_dim: 4,
        dropout_rate: 0.0,
        vocab_cutoff: 1,
        scalar_precision: Precision::Double,
        parent_feeding: true,
    };
    assert!(tiny.embed_dim <= 8 && tiny.hidden_dim <= 8);

    // (a) the legal set carries probability one at every step of 50
    // random derivations
    let pool = strings(&["state", "x", "7"]);
    let mut checked_steps = 0usize;
    for (round, (grammar, with_table)) in [
        (lambda_grammar(), false),
        (mini_python_grammar(), false),
        (wikisql_grammar(), true),
    ]
    .iter()
    .cycle()
    .take(50)
    .enumerate()
    {
        let table = players_table();
        let table = with_table.then_some(&table);
        let scorer: Scorer<f64> = Scorer::new(
            tiny.clone(),
            Arc::clone(grammar),
            small_vocab(&["which", "state", "borders", "texas"], false),
            small_vocab(&["state", "x", "7"], true),
            round as u64,
        )
        .unwrap();
        let pools = TokenPools::uniform(pool.iter().cloned())
            .with_type("idx", ["0", "1", "2"]);
        let tree = random_ast_with_pools(grammar, 5, round as u64, &pools).unwrap();
        let oracle = match table {
            Some(t) => extract_actions_with_columns(grammar, &tree, t.width()).unwrap(),
            None => extract_actions(grammar, &tree).unwrap(),
        };
        let utterance = strings(&["which", "state", "borders", "texas"]);
        let session = scorer.session(&utterance, table).unwrap();
        let mut hyp = match table {
            Some(t) => init_hypothesis_with_columns(grammar, t.width()),
            None => init_hypothesis(grammar),
        };
        let mut cursor = session.start();
        for action in &oracle {
            let (next, scored) = session.advance(&cursor, &hyp).unwrap();
            let total: f64 = scored.iter().map(|(_, lp)| lp.exp()).sum();
            assert!(
                (total - 1.0).abs() <= 1e-5,
                "probability mass {total} at derivation {round}"
            );
            checked_steps += 1;
            cursor = next;
            hyp = hyp.apply_action(action).unwrap();
        }
    }

    // (b) analytic gradients vs central differences over every parameter
    let mut worst = 0.0f64;
    let mut params_checked = 0usize;

    // copy + identifier path on the minimal grammar
    {
        let g = minimal_grammar();
        let mut scorer: Scorer<f64> = Scorer::new(
            tiny.clone(),
            Arc::clone(&g),
            small_vocab(&["give", "me", "x"], false),
            small_vocab(&["y"], true),
            11,
        )
        .unwrap();
        let name = g.lookup_ctor("Name").unwrap();
        let oracle = vec![Action::ApplyConstr(name), Action::GenToken("x".into())];
        let (w, n) = grad_check(&mut scorer, &strings(&["give", "me", "x"]), &oracle, None);
        worst = worst.max(w);
        params_checked += n;
    }

    // string terminator + parent feeding on the mini-python grammar
    {
        let g = mini_python_grammar();
        let mut scorer: Scorer<f64> = Scorer::new(
            tiny.clone(),
            Arc::clone(&g),
            small_vocab(&["print", "hello", "world"], false),
            small_vocab(&["print", "hello", "world"], true),
            12,
        )
        .unwrap();
        let tree = pyexpr_to_ast("print('hello world')", &g).unwrap();
        let oracle = extract_actions(&g, &tree).unwrap();
        let (w, n) = grad_check(
            &mut scorer,
            &strings(&["print", "hello", "world"]),
            &oracle,
            None,
        );
        worst = worst.max(w);
        params_checked += n;
    }

    // column pointer + condition copy on the table grammar
    {
        let g = wikisql_grammar();
        let table = players_table();
        let mut scorer: Scorer<f64> = Scorer::new(
            tiny.clone(),
            Arc::clone(&g),
            small_vocab(&["what", "position", "does", "calvin", "mccarty", "play"], false),
            small_vocab(&["position"], true),
            13,
        )
        .unwrap();
        let tree = sql_to_ast(
            "SELECT Position FROM Table WHERE Player = calvin mccarty",
            &table,
            &g,
        )
        .unwrap();
        let oracle = extract_actions_with_columns(&g, &tree, table.width()).unwrap();
        let (w, n) = grad_check(
            &mut scorer,
            &strings(&["what", "position", "does", "calvin", "mccarty", "play"]),
            &oracle,
            Some(&table),
        );
        worst = worst.max(w);
        params_checked += n;
    }

    assert!(
        worst < 1e-4,
        "max relative gradient error {worst} over {params_checked} parameters"
    );
    assert!(start.elapsed() < Duration::from_secs(120));
    pass(
        4,
        &format!(
            "{checked_steps} distribution checks; gradient error {worst:.2e} over {params_checked} parameters"
        ),
        start.elapsed(),
    );
}

/// Central-difference check of every parameter scalar; the relative-error
/// denominator floors at 1e-4 so near-zero gradients compare absolutely.
fn grad_check(
    scorer: &mut Scorer<f64>,
    utterance: &[String],
    oracle: &[Action],
    table: Option<&TableContext>,
) -> (f64, usize) {
    let (_, grads) = scorer
        .sequence_nll_grad(utterance, oracle, table, None)
        .unwrap();
    let eps = 1e-5;
    let count = scorer.params().scalar_count();
    let mut worst = 0.0f64;
    for at in 0..count {
        let orig = scorer.params().get_flat(at);
        scorer.params_mut().set_flat(at, orig + eps);
        let up = scorer.sequence_nll(utterance, oracle, table).unwrap();
        scorer.params_mut().set_flat(at, orig - eps);
        let down = scorer.sequence_nll(utterance, oracle, table).unwrap();
        scorer.params_mut().set_flat(at, orig);
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get_flat(at);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
    }
    (worst, count)
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_overfit_fixture() {
    let start = Instant::now();
    let grammar = lambda_grammar();
    let examples =
        load_dataset(&fixture("lambda_overfit.jsonl"), MrFormat::Lambda, &grammar).unwrap();
    assert_eq!(examples.len(), 50);
    let pairs = prepare(&grammar, MrFormat::Lambda, &examples).unwrap();
    let (src, gen) = build_vocabs(&pairs, 2);
    let config = ScorerConfig {
        embed_dim: 24,
        hidden_dim: 32,
        field_embed_dim: 16,
        action_embed_dim: 16,
        dropout_rate: 0.0,
        vocab_cutoff: 2,
        scalar_precision: Precision::Single,
        parent_feeding: true,
    };
    let mut scorer: Scorer<f32> = Scorer::new(config, Arc::clone(&grammar), src, gen, 1).unwrap();
    let opts = TrainOptions {
        epochs: 300,
        batch_size: 10,
        learning_rate: 5e-3,
        grad_clip: 5.0,
        seed: 1,
        stop_at_em: Some(0.96),
    };
    let metrics = train(&mut scorer, &pairs, &opts).unwrap();
    let last = metrics.last().unwrap();
    assert!(last.epoch <= 300);
    assert!(
        last.train_em >= 0.95,
        "train exact match {:.2} after {} epochs",
        last.train_em,
        last.epoch
    );
    assert!(
        start.elapsed() < Duration::from_secs(300),
        "training exceeded the five-minute budget"
    );

    let greedy = BeamConfig {
        beam_size: 1,
        max_actions: 120,
        length_normalize: false,
    };
    let wide = BeamConfig {
        beam_size: 5,
        max_actions: 120,
        length_normalize: false,
    };
    let mut agree = 0usize;
    for pair in &pairs {
        let a = beam_search(&scorer, &pair.utterance, &greedy, None).unwrap();
        let b = beam_search(&scorer, &pair.utterance, &wide, None).unwrap();
        if let (Some((ta, _)), Some((tb, _))) = (a.first(), b.first()) {
            if trees_equal(ta, tb) {
                agree += 1;
            }
        }
    }
    assert!(
        agree as f64 / pairs.len() as f64 >= 0.9,
        "greedy/beam-5 agreement {agree}/50"
    );
    pass(
        5,
        &format!(
            "train EM {:.2} at epoch {}, greedy/beam-5 agreement {agree}/50",
            last.train_em, last.epoch
        ),
        start.elapsed(),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_copy_mechanism_fixture() {
    let start = Instant::now();
    let grammar = lambda_grammar();
    let examples =
        load_dataset(&fixture("lambda_copy.jsonl"), MrFormat::Lambda, &grammar).unwrap();
    assert_eq!(examples.len(), 30);
    let pairs = prepare(&grammar, MrFormat::Lambda, &examples).unwrap();
    let (src, gen) = build_vocabs(&pairs, 2);
    // every place name is below the cutoff, so it can only be produced by
    // the copy head
    for pair in &pairs {
        let place = pair
            .oracle
            .iter()
            .filter_map(|a| match a {
                Action::GenToken(t) => Some(t),
                _ => None,
            })
            .last()
            .unwrap();
        assert!(
            !gen.contains(place),
            "fixture token `{place}` leaked into the generation vocabulary"
        );
        assert!(pair.utterance.contains(place));
    }
    let config = ScorerConfig {
        embed_dim: 24,
        hidden_dim: 32,
        field_embed_dim: 16,
        action_embed_dim: 16,
        dropout_rate: 0.0,
        vocab_cutoff: 2,
        scalar_precision: Precision::Single,
        parent_feeding: true,
    };
    let mut scorer: Scorer<f32> = Scorer::new(config, Arc::clone(&grammar), src, gen, 1).unwrap();
    let opts = TrainOptions {
        epochs: 300,
        batch_size: 6,
        learning_rate: 5e-3,
        grad_clip: 5.0,
        seed: 1,
        stop_at_em: Some(0.97),
    };
    train(&mut scorer, &pairs, &opts).unwrap();

    let cfg = BeamConfig {
        beam_size: 1,
        max_actions: 60,
        length_normalize: false,
    };
    let reproduced = pairs
        .iter()
        .filter(|p| {
            beam_search(&scorer, &p.utterance, &cfg, None)
                .unwrap()
                .first()
                .is_some_and(|(t, _)| trees_equal(t, &p.gold_tree))
        })
        .count();
    assert!(
        reproduced as f64 / pairs.len() as f64 >= 0.9,
        "copy reproduction {reproduced}/30"
    );
    pass(
        6,
        &format!("out-of-vocabulary tokens reproduced on {reproduced}/30 examples"),
        start.elapsed(),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_parent_feeding_ablation() {
    let start = Instant::now();
    let grammar = mini_python_grammar();
    let mut config = ScorerConfig::tiny();
    config.parent_feeding = false;
    let scorer: Scorer<f64> = Scorer::new(
        config,
        Arc::clone(&grammar),
        small_vocab(&["read", "the", "file"], false),
        small_vocab(&["pandas"], true),
        21,
    )
    .unwrap();
    let enc = scorer.encode(&strings(&["read", "the", "file"])).unwrap();
    let h = scorer.config().hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut prev = None;
    for trial in 0..25 {
        let p1 = Array1::from_shape_fn(h, |_| rng.gen_range(-100.0..100.0));
        let p2 = Array1::from_shape_fn(h, |_| rng.gen_range(-100.0..100.0));
        let slot = trial % grammar.field_slot_count();
        let a = scorer.decode_step(prev.as_ref(), None, slot, Some(&p1), &enc).unwrap();
        let b = scorer.decode_step(prev.as_ref(), None, slot, Some(&p2), &enc).unwrap();
        let c = scorer.decode_step(prev.as_ref(), None, slot, None, &enc).unwrap();
        // bit-identical across arbitrary parent perturbations
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.cell, b.cell);
        assert_eq!(a.s_tilde, b.s_tilde);
        assert_eq!(a.attention, b.attention);
        assert_eq!(a.hidden, c.hidden);
        assert_eq!(a.s_tilde, c.s_tilde);
        prev = Some(a);
    }
    assert!(start.elapsed() < Duration::from_secs(10));
    pass(7, "decoder output invariant to parent-state perturbations", start.elapsed());
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_table_backed_end_to_end() {
    let start = Instant::now();
    let grammar = wikisql_grammar();
    let examples =
        load_dataset(&fixture("wikisql_20.jsonl"), MrFormat::Sql, &grammar).unwrap();
    assert_eq!(examples.len(), 20);

    // exact SQL round trip on every fixture query
    for ex in &examples {
        let table = ex.table.as_ref().unwrap();
        let tree = sql_to_ast(&ex.mr_text, table, &grammar).unwrap();
        assert!(validate_ast(&grammar, &tree).unwrap().is_empty());
        assert_eq!(ast_to_sql(&tree, table, &grammar).unwrap(), ex.mr_text);
        let back = sql_to_ast(&ast_to_sql(&tree, table, &grammar).unwrap(), table, &grammar)
            .unwrap();
        assert!(trees_equal(&tree, &back));
    }

    // idx frontiers expose exactly table-width column actions
    for ex in &examples {
        let table = ex.table.as_ref().unwrap();
        let select = grammar.lookup_ctor("Select").unwrap();
        let hyp = init_hypothesis_with_columns(&grammar, table.width())
            .apply_action(&Action::ApplyConstr(select))
            .unwrap()
            .apply_action(&Action::Reduce)
            .unwrap();
        let classes = hyp.valid_actions().unwrap();
        assert_eq!(
            classes,
            vec![ActionClass::SelColumn {
                columns: table.width()
            }]
        );
        let legal: Vec<usize> = (0..table.width())
            .filter(|&k| hyp.apply_action(&Action::SelColumn(k)).is_ok())
            .collect();
        assert_eq!(legal.len(), table.width());
        assert!(hyp.apply_action(&Action::SelColumn(table.width())).is_err());
    }

    // answer pruning: a planted empty-result candidate outranks the gold
    // query on one example; pruning lifts execution accuracy 19/20 -> 20/20
    let planted_index = 6;
    let planted = {
        let ex = &examples[planted_index];
        let table = ex.table.as_ref().unwrap();
        sql_to_ast(
            "SELECT City FROM Table WHERE Population > 5000000",
            table,
            &grammar,
        )
        .unwrap()
    };
    let mut ex_hits_raw = 0usize;
    let mut ex_hits_pruned = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let table = ex.table.as_ref().unwrap();
        let gold = sql_to_ast(&ex.mr_text, table, &grammar).unwrap();
        let gold_result = execute_sql(&gold, table, &grammar).unwrap();
        assert!(!gold_result.empty, "fixture gold query {i} executes empty");
        let beam: Vec<(semparse_core::AbstractTree, f64)> = if i == planted_index {
            vec![(planted.clone(), -0.1), (gold.clone(), -0.9)]
        } else {
            vec![(gold.clone(), -0.5)]
        };
        let top_raw = &beam[0].0;
        if execute_sql(top_raw, table, &grammar).unwrap() == gold_result {
            ex_hits_raw += 1;
        }
        let pruned = answer_prune(&beam, table, &grammar);
        let top_pruned = &pruned[0].0;
        if execute_sql(top_pruned, table, &grammar).unwrap() == gold_result {
            ex_hits_pruned += 1;
        }
    }
    assert_eq!(ex_hits_raw, 19);
    assert_eq!(ex_hits_pruned, 20);
    assert!(start.elapsed() < Duration::from_secs(60));
    pass(
        8,
        "round trips exact, column legality matches width, pruning lifts 19/20 to 20/20",
        start.elapsed(),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_converter_inverses() {
    let start = Instant::now();

    // random-tree structural inverses
    let lambda = lambda_grammar();
    let lambda_pools = TokenPools::uniform(Vec::<String>::new())
        .with_type("var", ["$0", "$1", "$2"])
        .with_type("ent", ["texas:s", "dallas:ci", "utah", "colorado:r", "usa:co"])
        .with_type("num", ["2", "9", "150", "1000"])
        .with_type(
            "pred",
            ["state", "river", "city", "next_to", "loc", "size", "flight", "from", "to"],
        )
        .with_type("var_type", ["e", "i"]);
    for seed in 0..1000u64 {
        let tree = random_ast_with_pools(&lambda, 6, seed, &lambda_pools).unwrap();
        let rendered = ast_to_lambda(&tree, &lambda).unwrap();
        let back = lambda_to_ast(&rendered, &lambda)
            .unwrap_or_else(|e| panic!("seed {seed}: `{rendered}`: {e}"));
        assert!(trees_equal(&tree, &back), "seed {seed}: `{rendered}`");
    }

    let sql = wikisql_grammar();
    let table = TableContext::new(
        strings(&["Player", "No.", "Position", "Years"]),
        vec![strings(&["Calvin Mccarty", "32", "Running back", "4"])],
    )
    .unwrap();
    let sql_pools = TokenPools::uniform(Vec::<String>::new())
        .with_type("idx", ["0", "1", "2", "3"])
        .with_type("string", ["alice", "bob", "7", "42", "red"]);
    for seed in 0..1000u64 {
        let tree = random_ast_with_pools(&sql, 5, seed, &sql_pools).unwrap();
        let rendered = ast_to_sql(&tree, &table, &sql).unwrap();
        let back = sql_to_ast(&rendered, &table, &sql)
            .unwrap_or_else(|e| panic!("seed {seed}: `{rendered}`: {e}"));
        assert!(trees_equal(&tree, &back), "seed {seed}: `{rendered}`");
    }

    // hand-written corpus: render(parse(s)) equals the recorded canonical
    let mut forms = 0usize;
    let corpus = std::fs::read_to_string(fixture("lambda_corpus.tsv")).unwrap();
    for (i, line) in corpus.lines().enumerate() {
        let (input, canonical) = line.split_once('\t').unwrap();
        let tree = lambda_to_ast(input, &lambda)
            .unwrap_or_else(|e| panic!("corpus line {}: {e}", i + 1));
        assert!(validate_ast(&lambda, &tree).unwrap().is_empty());
        let rendered = ast_to_lambda(&tree, &lambda).unwrap();
        assert_eq!(rendered, canonical, "corpus line {}", i + 1);
        let again = lambda_to_ast(&rendered, &lambda).unwrap();
        assert!(trees_equal(&tree, &again));
        forms += 1;
    }

    #[derive(serde::Deserialize)]
    struct SqlCorpus {
        table: TableContext,
        forms: Vec<SqlForm>,
    }
    #[derive(serde::Deserialize)]
    struct SqlForm {
        input: String,
        canonical: String,
    }
    let corpus: SqlCorpus =
        serde_json::from_str(&std::fs::read_to_string(fixture("sql_corpus.json")).unwrap())
            .unwrap();
    for (i, form) in corpus.forms.iter().enumerate() {
        let tree = sql_to_ast(&form.input, &corpus.table, &sql)
            .unwrap_or_else(|e| panic!("sql corpus form {}: {e}", i + 1));
        let rendered = ast_to_sql(&tree, &corpus.table, &sql).unwrap();
        assert_eq!(rendered, form.canonical, "sql corpus form {}", i + 1);
        let again = sql_to_ast(&rendered, &corpus.table, &sql).unwrap();
        assert!(trees_equal(&tree, &again));
        forms += 1;
    }
    assert!(forms >= 50, "hand corpus holds {forms} forms, need 50");
    assert!(start.elapsed() < Duration::from_secs(30));
    pass(
        9,
        &format!("2000 random-tree inverses and {forms} hand-written forms"),
        start.elapsed(),
    );
}
