//! Corpus-level text generation metrics over whitespace tokens, all with a
//! single reference per hypothesis.

pub mod bleu;
pub mod meteor;
pub mod nemenyi;
pub mod rouge;
pub mod ter;

pub use bleu::{bleu, BleuScores, Smoothing};
pub use meteor::{crude_stem, meteor, meteor_sentence};
pub use nemenyi::{average_ranks, nemenyi_cd, q_alpha, significantly_different};
pub use rouge::rouge_n;
pub use ter::{corpus_ter, levenshtein, ter, ter_edits, TerEdits};

use crate::error::Result;

pub const DEFAULT_ROUGE_ORDER: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub rouge_order: usize,
    pub rouge_n: f64,
    pub meteor: f64,
    pub ter: f64,
    pub sentences: usize,
    pub smoothing: Smoothing,
}

impl MetricReport {
    /// Name/value pairs in a fixed order, shared by the TSV and JSON writers.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = (0..4)
            .map(|k| (format!("bleu{}", k + 1), self.bleu[k]))
            .collect();
        out.push((format!("rouge{}", self.rouge_order), self.rouge_n));
        out.push(("meteor".into(), self.meteor));
        out.push(("ter".into(), self.ter));
        out
    }

    pub fn to_tsv(&self) -> String {
        let fields = self.fields();
        let header: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
        let values: Vec<String> = fields.iter().map(|(_, v)| format!("{v:.6}")).collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }
}

pub fn corpus_report<S: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    rouge_order: usize,
    smoothing: Smoothing,
) -> Result<MetricReport> {
    let h: Vec<Vec<&str>> = hyps
        .iter()
        .map(|s| s.iter().map(AsRef::as_ref).collect())
        .collect();
    let r: Vec<Vec<&str>> = refs
        .iter()
        .map(|s| s.iter().map(AsRef::as_ref).collect())
        .collect();
    let b = bleu(&h, &r, 4, smoothing)?;
    Ok(MetricReport {
        bleu: [b.scores[0], b.scores[1], b.scores[2], b.scores[3]],
        rouge_order,
        rouge_n: rouge_n(&h, &r, rouge_order)?,
        meteor: meteor(&h, &r)?,
        ter: corpus_ter(&h, &r)?,
        sentences: h.len(),
        smoothing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn identity_report() {
        let c = corpus(&["how can i lose weight fast", "what is the meaning of life"]);
        let r = corpus_report(&c, &c, DEFAULT_ROUGE_ORDER, Smoothing::None).unwrap();
        assert_eq!(r.bleu, [1.0; 4]);
        assert_eq!(r.rouge_n, 1.0);
        assert_eq!(r.ter, 0.0);
        let expected_meteor = 1.0 - 0.5 / 216.0;
        assert!((r.meteor - expected_meteor).abs() < 1e-15);
    }

    #[test]
    fn rouge_bigram_recall() {
        let r = corpus_report(&corpus(&["a b"]), &corpus(&["a b c"]), 2, Smoothing::None).unwrap();
        assert_eq!(r.rouge_n, 0.5);
    }

    #[test]
    fn disjoint_corpus() {
        let r =
            corpus_report(&corpus(&["x y z"]), &corpus(&["a b c"]), 2, Smoothing::None).unwrap();
        assert_eq!(r.bleu, [0.0; 4]);
        assert_eq!(r.rouge_n, 0.0);
        assert_eq!(r.meteor, 0.0);
        assert_eq!(r.ter, 1.0);
    }

    #[test]
    fn tsv_layout() {
        let c = corpus(&["a b"]);
        let tsv = corpus_report(&c, &c, 2, Smoothing::None).unwrap().to_tsv();
        let mut lines = tsv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "bleu1\tbleu2\tbleu3\tbleu4\trouge2\tmeteor\tter"
        );
        assert_eq!(lines.next().unwrap().split('\t').count(), 7);
    }
}
