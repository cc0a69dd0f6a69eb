//! Generation metrics over pre-tokenized sequences: corpus BLEU, ROUGE-1/2/L,
//! exact match and DISTINCT-n. All scores are fractions in `[0, 1]`.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use super::MetricsError;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> impl Iterator<Item = Vec<&str>> {
    tokens
        .windows(n.max(1))
        .filter(move |_| n > 0 && tokens.len() >= n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn check_lengths<A, B>(references: &[A], hypotheses: &[B]) -> Result<(), MetricsError> {
    if references.len() != hypotheses.len() {
        return Err(MetricsError::LengthMismatch {
            references: references.len(),
            hypotheses: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Replaces a zero matched-n-gram count by this value when set.
    pub smoothing: Option<f64>,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: None,
        }
    }
}

/// Corpus BLEU-k for every `k` in `1..=max_n`: clipped n-gram precisions,
/// uniform weights over orders `1..=k`, and a corpus brevity penalty.
pub fn bleu<S: AsRef<str>>(
    references: &[Vec<S>],
    hypotheses: &[Vec<S>],
    options: &BleuOptions,
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    check_lengths(references, hypotheses)?;
    let max_n = options.max_n.max(1);
    let mut matched = vec![0.0f64; max_n + 1];
    let mut total = vec![0.0f64; max_n + 1];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            let hc = ngram_counts(h, n);
            for (g, c) in &hc {
                matched[n] += (*c).min(rc.get(g).copied().unwrap_or(0)) as f64;
                total[n] += *c as f64;
            }
        }
    }
    let brevity = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut out = BTreeMap::new();
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 1..=max_n {
        let m = match options.smoothing {
            Some(eps) if matched[n] == 0.0 => eps,
            _ => matched[n],
        };
        if m == 0.0 || total[n] == 0.0 {
            zero = true;
        } else {
            log_sum += (m / total[n]).ln();
        }
        let score = if zero || brevity == 0.0 {
            0.0
        } else {
            (brevity * (log_sum / n as f64).exp()).min(1.0)
        };
        out.insert(n, score);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

fn f_measure(overlap: f64, hyp_total: f64, ref_total: f64) -> f64 {
    if overlap == 0.0 || hyp_total == 0.0 || ref_total == 0.0 {
        return 0.0;
    }
    let p = overlap / hyp_total;
    let r = overlap / ref_total;
    2.0 * p * r / (p + r)
}

fn rouge_n<S: AsRef<str>>(reference: &[S], hypothesis: &[S], n: usize) -> f64 {
    let rc = ngram_counts(reference, n);
    let hc = ngram_counts(hypothesis, n);
    let overlap: usize = hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
    f_measure(
        overlap as f64,
        hc.values().sum::<usize>() as f64,
        rc.values().sum::<usize>() as f64,
    )
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over pairs of the per-pair F-measures.
pub fn rouge<S: AsRef<str>>(
    references: &[Vec<S>],
    hypotheses: &[Vec<S>],
) -> Result<RougeScores, MetricsError> {
    check_lengths(references, hypotheses)?;
    let mut sums = (0.0, 0.0, 0.0);
    for (r, h) in references.iter().zip(hypotheses) {
        sums.0 += rouge_n(r, h, 1);
        sums.1 += rouge_n(r, h, 2);
        sums.2 += f_measure(lcs_len(r, h) as f64, h.len() as f64, r.len() as f64);
    }
    let n = references.len() as f64;
    Ok(RougeScores {
        rouge1: sums.0 / n,
        rouge2: sums.1 / n,
        rouge_l: sums.2 / n,
    })
}

/// Fraction of pairs that are identical once whitespace inside and between
/// tokens is normalized.
pub fn exact_match<S: AsRef<str>>(
    references: &[Vec<S>],
    hypotheses: &[Vec<S>],
) -> Result<f64, MetricsError> {
    check_lengths(references, hypotheses)?;
    let norm = |toks: &[S]| -> Vec<String> {
        toks.iter()
            .flat_map(|t| t.as_ref().split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect()
    };
    let hits = references
        .iter()
        .zip(hypotheses)
        .filter(|(r, h)| norm(r) == norm(h))
        .count();
    Ok(hits as f64 / references.len() as f64)
}

/// Unique n-grams over all hypotheses divided by the total n-gram count.
pub fn distinct_n<S: AsRef<str>>(hypotheses: &[Vec<S>], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        for g in ngrams(h, n) {
            total += 1;
            unique.insert(g);
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenEvalReport {
    pub bleu: BTreeMap<usize, f64>,
    pub rouge: RougeScores,
    pub exact_match: f64,
    pub distinct: BTreeMap<usize, f64>,
}

impl GenEvalReport {
    /// Fractions alongside percentage renderings.
    pub fn to_json(&self) -> serde_json::Value {
        let both = |v: f64| serde_json::json!({ "fraction": v, "percent": 100.0 * v });
        let map = |m: &BTreeMap<usize, f64>| -> serde_json::Map<String, serde_json::Value> {
            m.iter().map(|(k, v)| (k.to_string(), both(*v))).collect()
        };
        serde_json::json!({
            "bleu": map(&self.bleu),
            "rouge1": both(self.rouge.rouge1),
            "rouge2": both(self.rouge.rouge2),
            "rougeL": both(self.rouge.rouge_l),
            "exact_match": both(self.exact_match),
            "distinct": map(&self.distinct),
        })
    }
}

/// BLEU-1..4, ROUGE, EM and DISTINCT-1/2 in one pass.
pub fn evaluate_generation<S: AsRef<str>>(
    references: &[Vec<S>],
    hypotheses: &[Vec<S>],
) -> Result<GenEvalReport, MetricsError> {
    Ok(GenEvalReport {
        bleu: bleu(references, hypotheses, &BleuOptions::default())?,
        rouge: rouge(references, hypotheses)?,
        exact_match: exact_match(references, hypotheses)?,
        distinct: [1, 2].into_iter().map(|n| (n, distinct_n(hypotheses, n))).collect(),
    })
}
