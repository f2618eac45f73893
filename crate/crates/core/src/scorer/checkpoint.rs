//! Versioned JSON checkpoints: configuration, grammar fingerprint,
//! vocabularies, and every parameter tensor at full precision. Loading
//! verifies the fingerprint against the supplied grammar and refuses
//! mismatches.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::asdl::Grammar;
use crate::convert::MrFormat;

use super::scalar::{Precision, Scalar};
use super::vocab::Vocab;
use super::{Scorer, ScorerConfig, ScorerError};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    format: MrFormat,
    config: ScorerConfig,
    grammar_fingerprint: String,
    src_vocab: Vec<String>,
    gen_vocab: Vec<String>,
    tensors: Vec<TensorBlob>,
}

/// A loaded model in whichever precision the checkpoint recorded.
pub enum LoadedScorer {
    Single(Scorer<f32>),
    Double(Scorer<f64>),
}

pub struct LoadedCheckpoint {
    pub format: MrFormat,
    pub scorer: LoadedScorer,
}

pub fn save<F: Scalar>(
    scorer: &Scorer<F>,
    format: MrFormat,
    path: &Path,
) -> Result<(), ScorerError> {
    let tensors = scorer
        .params()
        .export()
        .into_iter()
        .map(|(name, (rows, cols), data)| TensorBlob {
            name,
            rows,
            cols,
            data,
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        format,
        config: scorer.config().clone(),
        grammar_fingerprint: scorer.grammar().fingerprint(),
        src_vocab: scorer.src_vocab().tokens().to_vec(),
        gen_vocab: scorer.gen_vocab().tokens().to_vec(),
        tensors,
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path, grammar: &Arc<Grammar>) -> Result<LoadedCheckpoint, ScorerError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(ScorerError::CheckpointMismatch(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    if file.grammar_fingerprint != grammar.fingerprint() {
        return Err(ScorerError::CheckpointMismatch(
            "grammar fingerprint differs from the supplied grammar".into(),
        ));
    }
    let scorer = match file.config.scalar_precision {
        Precision::Single => LoadedScorer::Single(restore::<f32>(&file, grammar)?),
        Precision::Double => LoadedScorer::Double(restore::<f64>(&file, grammar)?),
    };
    Ok(LoadedCheckpoint {
        format: file.format,
        scorer,
    })
}

fn restore<F: Scalar>(
    file: &CheckpointFile,
    grammar: &Arc<Grammar>,
) -> Result<Scorer<F>, ScorerError> {
    let src_vocab = Vocab::from_tokens(file.src_vocab.clone());
    let gen_vocab = Vocab::from_tokens(file.gen_vocab.clone());
    let mut scorer = Scorer::<F>::new(
        file.config.clone(),
        Arc::clone(grammar),
        src_vocab,
        gen_vocab,
        0,
    )?;
    let blobs: Vec<(String, (usize, usize), Vec<f64>)> = file
        .tensors
        .iter()
        .map(|t| (t.name.clone(), (t.rows, t.cols), t.data.clone()))
        .collect();
    scorer
        .params_mut()
        .import(&blobs)
        .map_err(ScorerError::CheckpointMismatch)?;
    Ok(scorer)
}
