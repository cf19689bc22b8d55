//! Scoring: BLEU, paired significance tests and the results table.

pub mod bleu;
pub mod report;
pub mod significance;

use std::sync::Arc;

pub use bleu::{bleu, tokenize_13a, BleuScore, BleuStats};
pub use report::{render_report, render_table, Report, ReportColumn, ScoreCell};
pub use significance::{paired_significance, SignificanceConfig, SignificanceResult};

use crate::corpus::{Sentence, Vocabulary};
use crate::subword::{undo_bpe, MergeTable};

/// Turns model-side sentences back into the detokenized text that BLEU reads.
#[derive(Clone, Debug)]
pub enum TextRenderer {
    Words(Arc<Vocabulary>),
    Subwords {
        vocab: Arc<Vocabulary>,
        merges: Arc<MergeTable>,
    },
}

impl TextRenderer {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        match self {
            TextRenderer::Words(v) => v,
            TextRenderer::Subwords { vocab, .. } => vocab,
        }
    }

    pub fn render(&self, s: &Sentence) -> String {
        match self {
            TextRenderer::Words(v) => v.decode(s),
            TextRenderer::Subwords { vocab, merges } => undo_bpe(s, vocab, merges).join(" "),
        }
    }

    pub fn render_all(&self, sentences: &[Sentence]) -> Vec<String> {
        sentences.iter().map(|s| self.render(s)).collect()
    }
}
