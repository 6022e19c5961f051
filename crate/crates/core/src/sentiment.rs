//! Post scoring, daily aggregation with sparsity fallback, multi-scale
//! sentiment features, sentiment-guided key scaling and the sentiment branch.

use std::collections::HashSet;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use graphsent_autograd::{Graph, Var};
use regex::Regex;

use crate::{Error, Result};

/// Posts needed on a day for its mean score to be used directly.
pub const MIN_POSTS: u32 = 5;
/// EMA spans of the three sentiment scales.
pub const SCALES: [usize; 3] = [1, 5, 20];

/// Class probabilities `(p_neg, p_neu, p_pos)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassProbs {
    pub neg: f64,
    pub neu: f64,
    pub pos: f64,
}

impl ClassProbs {
    pub fn new(neg: f64, neu: f64, pos: f64) -> Result<Self> {
        let p = Self { neg, neu, pos };
        if [neg, neu, pos].iter().any(|&v| !(v >= 0.0)) || ((neg + neu + pos) - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("invalid class probabilities {p:?}")));
        }
        Ok(p)
    }

    /// `s = p_pos - p_neg`.
    pub fn score(&self) -> f64 {
        self.pos - self.neg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPost {
    pub ticker: String,
    pub date: chrono::NaiveDate,
    pub probs: ClassProbs,
}

impl ScoredPost {
    pub fn score(&self) -> f64 {
        self.probs.score()
    }
}

/// Text to class probabilities; must be deterministic.
pub trait Scorer {
    fn score(&self, text: &str) -> Result<ClassProbs>;
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

/// Cleans a social-media post: decodes HTML entities, drops retweet markers,
/// replaces URLs with `<URL>` and handles with `@USER`, strips stray symbols,
/// collapses letter runs of three or more to two, rejoins split cashtags,
/// normalizes ordinals and whitespace.
pub fn preprocess_text(raw: &str) -> String {
    static ENTITY: OnceLock<Regex> = OnceLock::new();
    static RT: OnceLock<Regex> = OnceLock::new();
    static URL: OnceLock<Regex> = OnceLock::new();
    static HANDLE: OnceLock<Regex> = OnceLock::new();
    static CASHTAG: OnceLock<Regex> = OnceLock::new();
    static ORDINAL: OnceLock<Regex> = OnceLock::new();
    static SPACE: OnceLock<Regex> = OnceLock::new();

    let mut s = raw
        .replace("&amp;", "&")
        .replace("&lt;", " ")
        .replace("&gt;", " ")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'");
    s = re(&ENTITY, r"&#?[A-Za-z0-9]+;").replace_all(&s, " ").into_owned();
    s = re(&RT, r"\bRT\b:?").replace_all(&s, " ").into_owned();
    s = re(&URL, r"(?i)\b(?:https?://|www\.)\S+").replace_all(&s, "<URL>").into_owned();
    s = re(&HANDLE, r"@[A-Za-z0-9_]+").replace_all(&s, "@USER").into_owned();
    s = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() || "$@<>.,!?'%-#:/&+\"".contains(c) {
                c
            } else {
                ' '
            }
        })
        .collect();
    s = collapse_elongation(&s);
    s = re(&CASHTAG, r"\$\s+([A-Za-z]{1,5})\b").replace_all(&s, "$$$1").into_owned();
    s = re(&ORDINAL, r"(?i)\b(\d+)\s*(st|nd|rd|th)\b")
        .replace_all(&s, |c: &regex::Captures| format!("{}{}", &c[1], c[2].to_lowercase()))
        .into_owned();
    s = re(&SPACE, r"\s+").replace_all(&s, " ").into_owned();
    s.trim().to_string()
}

/// Collapses runs of three or more identical letters to exactly two.
fn collapse_elongation(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev && c.is_alphabetic() {
            run += 1;
        } else {
            run = 1;
        }
        prev = Some(c);
        if run <= 2 {
            out.push(c);
        }
    }
    out
}

/// Deterministic stand-in for a fine-tuned classifier: counts lexicon hits
/// and maps them to `softmax([neg_hits, 1, pos_hits])`.
#[derive(Clone, Debug)]
pub struct LexiconScorer {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl LexiconScorer {
    /// Parses lines of `+term` / `-term`; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut positive = HashSet::new();
        let mut negative = HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (sign, term) = line.split_at(1);
            let term = term.trim().to_lowercase();
            match sign {
                "+" => positive.insert(term),
                "-" => negative.insert(term),
                _ => return Err(Error::Input(format!("lexicon line {}: expected +term or -term", no + 1))),
            };
        }
        Ok(Self { positive, negative })
    }

    /// The lexicon shipped with the crate.
    pub fn stub() -> Self {
        Self::from_text(include_str!("../assets/lexicon.txt")).expect("bundled lexicon parses")
    }

    pub fn hits(&self, text: &str) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for tok in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let t = tok.to_lowercase();
            if self.positive.contains(&t) {
                pos += 1;
            }
            if self.negative.contains(&t) {
                neg += 1;
            }
        }
        (pos, neg)
    }
}

impl Scorer for LexiconScorer {
    fn score(&self, text: &str) -> Result<ClassProbs> {
        let (pos, neg) = self.hits(text);
        let logits = [neg as f64, 1.0, pos as f64];
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(ClassProbs {
            neg: e[0] / z,
            neu: e[1] / z,
            pos: e[2] / z,
        })
    }
}

/// Scores by running an external program once per post: the text goes to
/// stdin and the program prints `p_neg p_neu p_pos`.
#[derive(Clone, Debug)]
pub struct CommandScorer {
    pub program: String,
    pub args: Vec<String>,
}

impl Scorer for CommandScorer {
    fn score(&self, text: &str) -> Result<ClassProbs> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Input(format!("cannot run scorer {}: {e}", self.program)))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .map_err(|e| Error::Input(format!("scorer stdin: {e}")))?;
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Input(format!("scorer failed: {e}")))?;
        if !out.status.success() {
            return Err(Error::Input(format!("scorer exited with {}", out.status)));
        }
        let vals: Vec<f64> = String::from_utf8_lossy(&out.stdout)
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Input(format!("scorer output: {e}")))?;
        match vals[..] {
            [n, u, p] => ClassProbs::new(n, u, p),
            _ => Err(Error::Input(format!("scorer printed {} values, expected 3", vals.len()))),
        }
    }
}

/// Sentiment state of one stock on one day.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SentimentFeature {
    pub s1: f64,
    pub s5: f64,
    pub s20: f64,
    pub post_count: u32,
    pub fallback: bool,
}

impl SentimentFeature {
    pub fn scales(&self) -> [f64; 3] {
        [self.s1, self.s5, self.s20]
    }
}

/// One day's input to the aggregator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DayPosts {
    /// Day precedes the sentiment stream.
    NoStream,
    /// Mean post score and the number of posts.
    Posts { mean: f64, count: u32 },
}

/// Running daily aggregation and exponential averaging for one stock.
#[derive(Clone, Debug, Default)]
pub struct DailyAggregator {
    ema: Option<[f64; 3]>,
    last_sufficient: Option<[f64; 3]>,
}

fn alpha(k: usize) -> f64 {
    2.0 / (k as f64 + 1.0)
}

impl DailyAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    fn update(&mut self, raw: f64) -> [f64; 3] {
        let next = match self.ema {
            None => [raw; 3],
            Some(prev) => {
                let mut out = [0.0; 3];
                for (k, &span) in SCALES.iter().enumerate() {
                    let a = alpha(span);
                    out[k] = a * raw + (1.0 - a) * prev[k];
                }
                out
            }
        };
        self.ema = Some(next);
        next
    }

    pub fn step(&mut self, day: DayPosts) -> SentimentFeature {
        match day {
            DayPosts::NoStream => SentimentFeature {
                fallback: true,
                ..Default::default()
            },
            DayPosts::Posts { mean, count } if count >= MIN_POSTS => {
                let v = self.update(mean.clamp(-1.0, 1.0));
                self.last_sufficient = Some(v);
                SentimentFeature {
                    s1: v[0],
                    s5: v[1],
                    s20: v[2],
                    post_count: count,
                    fallback: false,
                }
            }
            DayPosts::Posts { count: 0, .. } => {
                let v = self.last_sufficient.or(self.ema).unwrap_or([0.0; 3]);
                if self.ema.is_some() {
                    self.ema = Some(v);
                }
                SentimentFeature {
                    s1: v[0],
                    s5: v[1],
                    s20: v[2],
                    post_count: 0,
                    fallback: true,
                }
            }
            DayPosts::Posts { count, .. } => {
                let raw = self.ema.map(|e| e[1]).unwrap_or(0.0);
                let v = self.update(raw);
                SentimentFeature {
                    s1: v[0],
                    s5: v[1],
                    s20: v[2],
                    post_count: count,
                    fallback: true,
                }
            }
        }
    }
}

/// Aggregates one day's scored posts against the running history.
pub fn aggregate_daily(post_scores: &[f64], history: &mut DailyAggregator) -> SentimentFeature {
    let count = post_scores.len() as u32;
    let mean = if count == 0 {
        0.0
    } else {
        post_scores.iter().sum::<f64>() / count as f64
    };
    history.step(DayPosts::Posts { mean, count })
}

/// EMA of a daily score series at each of the three scales, seeded at the
/// first value.
pub fn multiscale_features(daily: &[f64]) -> Vec<[f64; 3]> {
    let mut agg = DailyAggregator::new();
    daily.iter().map(|&v| agg.update(v)).collect()
}

/// `K * (1 + beta * S)`; `s` broadcasts against `k`, `beta` has shape `[1]`.
pub fn scale_keys(g: &mut Graph, k: Var, s: Var, beta: Var) -> Result<Var> {
    let bs = g.mul(s, beta)?;
    let f = g.add_scalar(bs, 1.0);
    Ok(g.mul(k, f)?)
}

/// Two-layer regressor over `[S1, S5, S20, close]` (last axis of size 4),
/// producing one normalized-return prediction per horizon.
pub fn sentiment_branch(g: &mut Graph, input: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = g.matmul(input, w1)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h);
    let y = g.matmul(h, w2)?;
    Ok(g.add(y, b2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elongation_counts_only_letters() {
        assert_eq!(collapse_elongation("sooo 1111"), "soo 1111");
    }
}
