//! Response-level evaluation: corpus BLEU-4, distinct-n, length and
//! stopword share. Responses are whitespace-tokenised strings.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stopword list shipped with the crate.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngrams<'a, 'b>(t: &'b [&'a str], n: usize) -> Vec<&'b [&'a str]> {
    if t.len() < n {
        Vec::new()
    } else {
        t.windows(n).collect()
    }
}

fn require_nonempty<S>(xs: &[S], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Contract(format!("{what}: empty corpus")));
    }
    Ok(())
}

/// Corpus-level BLEU-4 with one reference per hypothesis.
///
/// Unigram precision is unsmoothed; higher orders use add-one smoothing.
/// The brevity penalty compares total hypothesis and reference lengths.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R]) -> Result<f64> {
    require_nonempty(hypotheses, "bleu")?;
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        let h = tokens(h.as_ref());
        let rf = tokens(rf.as_ref());
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let mut counts: HashMap<&[&str], usize> = HashMap::new();
            for g in ngrams(&rf, n) {
                *counts.entry(g).or_default() += 1;
            }
            let hg = ngrams(&h, n);
            totals[n - 1] += hg.len();
            for g in hg {
                if let Some(k) = counts.get_mut(g) {
                    if *k > 0 {
                        *k -= 1;
                        matches[n - 1] += 1;
                    }
                }
            }
        }
    }
    if c == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if c > r { 0.0 } else { 1.0 - r as f64 / c as f64 };
    Ok((bp + log_p / 4.0).exp().min(1.0))
}

/// Unique n-grams over total n-grams across the whole response set.
pub fn distinct_n<S: AsRef<str>>(responses: &[S], n: usize) -> Result<f64> {
    require_nonempty(responses, "distinct_n")?;
    if !(1..=2).contains(&n) {
        return Err(Error::Contract(format!("distinct-n supports n in 1..=2, got {n}")));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for resp in responses {
        let t = tokens(resp.as_ref());
        for g in ngrams(&t, n) {
            total += 1;
            unique.insert(g.join(" "));
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Mean number of tokens per response.
pub fn avg_length<S: AsRef<str>>(responses: &[S]) -> Result<f64> {
    require_nonempty(responses, "avg_length")?;
    let total: usize = responses.iter().map(|r| tokens(r.as_ref()).len()).sum();
    Ok(total as f64 / responses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    words: HashSet<String>,
}

impl StopwordList {
    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Listed words and tokens made only of punctuation.
    pub fn matches(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase()) || (!token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation()))
    }
}

/// Share of stopword or punctuation tokens, as a percentage.
pub fn stopword_pct<S: AsRef<str>>(responses: &[S], list: &StopwordList) -> Result<f64> {
    require_nonempty(responses, "stopword_pct")?;
    let (mut hit, mut total) = (0usize, 0usize);
    for r in responses {
        for t in tokens(r.as_ref()) {
            total += 1;
            hit += list.matches(t) as usize;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// Fraction of `samples` paired resamples in which `a` has the higher mean.
pub fn paired_bootstrap(a: &[f64], b: &[f64], samples: usize, seed: u64) -> Result<f64> {
    require_nonempty(a, "paired_bootstrap")?;
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if samples == 0 {
        return Err(Error::Contract("bootstrap needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..samples {
        let mut diff = 0.0;
        for _ in 0..a.len() {
            let i = rng.gen_range(0..a.len());
            diff += a[i] - b[i];
        }
        wins += (diff > 0.0) as usize;
    }
    Ok(wins as f64 / samples as f64)
}

/// The fixed evaluation report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub bleu: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub avg_len: f64,
    pub stopword_pct: f64,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 5] = ["bleu", "distinct1", "distinct2", "avg_len", "stopword_pct"];

    pub fn compute<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R], stopwords: &StopwordList) -> Result<Self> {
        Ok(Self {
            bleu: bleu(hypotheses, references)?,
            distinct1: distinct_n(hypotheses, 1)?,
            distinct2: distinct_n(hypotheses, 2)?,
            avg_len: avg_length(hypotheses)?,
            stopword_pct: stopword_pct(hypotheses, stopwords)?,
        })
    }

    fn values(&self) -> [f64; 5] {
        [self.bleu, self.distinct1, self.distinct2, self.avg_len, self.stopword_pct]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |message: String| Error::Parse {
                path: "<report>".into(),
                line: i + 1,
                message,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let v: f64 = v.trim().parse().map_err(|e| err(format!("{e}")))?;
            map.insert(k.trim().to_owned(), v);
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Contract(format!("report lacks {k}")))
        };
        Ok(Self {
            bleu: get("bleu")?,
            distinct1: get("distinct1")?,
            distinct2: get("distinct2")?,
            avg_len: get("avg_len")?,
            stopword_pct: get("stopword_pct")?,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            writeln!(f, "{k}={v:.4}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&["a a a a"], 1).unwrap(), 0.25);
        assert_eq!(distinct_n(&["x", "x", "x", "x", "x"], 1).unwrap(), 0.2);
        assert!(distinct_n::<&str>(&[], 1).is_err());
        assert!(distinct_n(&["a"], 3).is_err());
    }

    #[test]
    fn avg_length_examples() {
        assert_eq!(avg_length(&["a b", "c d e f"]).unwrap(), 3.0);
        assert_eq!(avg_length(&["a b c d e f g"; 4]).unwrap(), 7.0);
    }

    #[test]
    fn stopword_counts() {
        let list = StopwordList::parse("the\na\nis\n");
        assert_eq!(stopword_pct(&["the a is"], &list).unwrap(), 100.0);
        assert_eq!(stopword_pct(&["cat dog"], &list).unwrap(), 0.0);
        let mixed = ["the cat is a dog", "the . ! is x"];
        assert!((stopword_pct(&mixed, &list).unwrap() - 70.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_bounds() {
        let s = ["the cat sat", "a dog ran home"];
        assert_eq!(bleu(&s, &s).unwrap(), 1.0);
        let z = bleu(&["p q r s"], &["w x y z"]).unwrap();
        assert!(z < 1e-6);
        assert!(bleu(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn report_round_trip() {
        let r = MetricsReport {
            bleu: 0.5,
            distinct1: 0.25,
            distinct2: 0.125,
            avg_len: 3.0,
            stopword_pct: 42.5,
        };
        let text = r.to_string();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, MetricsReport::KEYS);
        assert_eq!(MetricsReport::parse(&text).unwrap(), r);
    }

    #[test]
    fn bootstrap_prefers_better_system() {
        let a = vec![1.0; 20];
        let b = vec![0.0; 20];
        assert_eq!(paired_bootstrap(&a, &b, 50, 1).unwrap(), 1.0);
        assert_eq!(paired_bootstrap(&b, &a, 50, 1).unwrap(), 0.0);
    }
}
