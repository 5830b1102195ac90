//! Caption evaluation: corpus BLEU-1..4, METEOR-lite, CIDEr-D and ROUGE-L.
//!
//! Every metric tokenizes with [`normalize_tokenize`]. METEOR-lite aligns
//! with exact and Porter-stem matches only; CIDEr-D also compares stems.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featio::DatasetManifest;
use crate::textkit::normalize_tokenize;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot evaluate an empty hypothesis set")]
    EmptyCorpus,
    #[error("video '{0}' has no reference captions")]
    NoReferences(String),
    #[error("video '{0}' appears more than once")]
    DuplicateId(String),
    #[error("hypothesis ids missing from the manifest: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub video_id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
}

/// Hypotheses with their references; ids unique, every item has a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCorpus {
    items: Vec<EvalItem>,
}

impl EvalCorpus {
    pub fn new(items: Vec<EvalItem>) -> Result<Self, MetricsError> {
        if items.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for it in &items {
            if it.references.is_empty() {
                return Err(MetricsError::NoReferences(it.video_id.clone()));
            }
            if !seen.insert(it.video_id.as_str()) {
                return Err(MetricsError::DuplicateId(it.video_id.clone()));
            }
        }
        Ok(Self { items })
    }

    /// Builds a corpus from `(hypothesis, references)` pairs with generated ids.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, Vec<S>)]) -> Result<Self, MetricsError> {
        let items = pairs
            .iter()
            .enumerate()
            .map(|(i, (h, refs))| EvalItem {
                video_id: format!("v{i}"),
                hypothesis: h.as_ref().to_owned(),
                references: refs.iter().map(|r| r.as_ref().to_owned()).collect(),
            })
            .collect();
        Self::new(items)
    }

    /// Pairs each hypothesis with the manifest captions of the same video.
    pub fn from_manifest(hyps: Vec<(String, String)>, manifest: &DatasetManifest) -> Result<Self, MetricsError> {
        let lookup: HashMap<&str, &Vec<String>> =
            manifest.entries.iter().map(|e| (e.video_id.as_str(), &e.captions)).collect();
        let missing: Vec<String> = hyps.iter().filter(|(id, _)| !lookup.contains_key(id.as_str())).map(|(id, _)| id.clone()).collect();
        if !missing.is_empty() {
            return Err(MetricsError::MissingIds(missing));
        }
        let items = hyps
            .into_iter()
            .map(|(video_id, hypothesis)| {
                let references = lookup[video_id.as_str()].clone();
                EvalItem { video_id, hypothesis, references }
            })
            .collect();
        Self::new(items)
    }

    pub fn items(&self) -> &[EvalItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub cider_d: f64,
    pub rouge_l: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: header row then values, BLEU1..4, METEOR, CIDEr, ROUGE-L.
    pub fn table(&self) -> String {
        let heads = ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "METEOR", "CIDEr", "ROUGE-L"];
        let vals = [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.meteor, self.cider_d, self.rouge_l];
        let mut head = String::new();
        let mut row = String::new();
        for (h, v) in heads.iter().zip(vals) {
            head.push_str(&format!("{h:>9}"));
            row.push_str(&format!("{v:>9.5}"));
        }
        format!("{head}\n{row}\n")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

fn stem_all(words: &[String]) -> Vec<String> {
    words.iter().map(|w| porter_stemmer::stem(w)).collect()
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-1..4 without smoothing.
pub fn bleu(corpus: &EvalCorpus) -> [f64; 4] {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for item in corpus.items() {
        let h = normalize_tokenize(&item.hypothesis);
        let refs: Vec<Vec<String>> = item.references.iter().map(|r| normalize_tokenize(r)).collect();
        for n in 1..=4 {
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (g, c) in ngram_counts(&h, n) {
                let max_ref = ref_counts.iter().filter_map(|rc| rc.get(g)).copied().max().unwrap_or(0);
                matched[n - 1] += c.min(max_ref);
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
        hyp_len += h.len();
        // closest reference length, ties to the shorter one
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap_or(0);
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..4 {
        if matched[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        out[n] = if zero { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() };
    }
    out
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure of one hypothesis/reference pair.
pub fn rouge_l_pair(hyp: &[String], reference: &[String], beta: f64) -> f64 {
    let l = lcs(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over videos of the best ROUGE-L F against any reference.
pub fn rouge_l(corpus: &EvalCorpus, beta: f64) -> f64 {
    let total: f64 = corpus
        .items()
        .iter()
        .map(|item| {
            let h = normalize_tokenize(&item.hypothesis);
            item.references.iter().map(|r| rouge_l_pair(&h, &normalize_tokenize(r), beta)).fold(0.0, f64::max)
        })
        .sum();
    total / corpus.len() as f64
}

/// (hyp position, previous ref position, used-ref bitset, remaining exact and stem budgets).
type SearchKey = (usize, Option<usize>, Vec<u64>, Vec<usize>, Vec<usize>);

/// Search for the fewest chunks over all alignments that use the maximum
/// number of exact matches and then the maximum number of stem matches.
struct ChunkSearch<'a> {
    hyp: &'a [String],
    reference: &'a [String],
    hyp_stems: Vec<String>,
    ref_stems: Vec<String>,
    /// Per hyp token: index of its surface form / stem class.
    hyp_word: Vec<usize>,
    hyp_class: Vec<usize>,
    memo: HashMap<SearchKey, Option<usize>>,
}

impl ChunkSearch<'_> {
    fn run(
        &mut self,
        i: usize,
        prev: Option<usize>,
        used: &mut Vec<u64>,
        need_exact: &mut Vec<usize>,
        need_stem: &mut Vec<usize>,
    ) -> Option<usize> {
        let outstanding: usize = need_exact.iter().sum::<usize>() + need_stem.iter().sum::<usize>();
        if outstanding > self.hyp.len() - i {
            return None;
        }
        if i == self.hyp.len() {
            return Some(0);
        }
        let key = (i, prev, used.clone(), need_exact.clone(), need_stem.clone());
        if let Some(&hit) = self.memo.get(&key) {
            return hit;
        }
        let mut best = self.run(i + 1, None, used, need_exact, need_stem);
        for j in 0..self.reference.len() {
            if used[j / 64] & (1 << (j % 64)) != 0 {
                continue;
            }
            let exact = self.hyp[i] == self.reference[j];
            let budget = if exact {
                &mut need_exact[self.hyp_word[i]]
            } else if self.hyp_stems[i] == self.ref_stems[j] {
                &mut need_stem[self.hyp_class[i]]
            } else {
                continue;
            };
            if *budget == 0 {
                continue;
            }
            *budget -= 1;
            used[j / 64] |= 1 << (j % 64);
            let opens = usize::from(!(j > 0 && prev == Some(j - 1)));
            let sub = self.run(i + 1, Some(j), used, need_exact, need_stem);
            used[j / 64] &= !(1 << (j % 64));
            if exact {
                need_exact[self.hyp_word[i]] += 1;
            } else {
                need_stem[self.hyp_class[i]] += 1;
            }
            if let Some(s) = sub {
                best = Some(best.map_or(s + opens, |b| b.min(s + opens)));
            }
        }
        self.memo.insert(key, best);
        best
    }
}

/// `(matches, chunks)` of the best two-stage alignment.
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> (usize, usize) {
    let hyp_stems = stem_all(hyp);
    let ref_stems = stem_all(reference);
    let mut word_ids: HashMap<&str, usize> = HashMap::new();
    let mut class_ids: HashMap<&str, usize> = HashMap::new();
    for w in hyp.iter().chain(reference) {
        let n = word_ids.len();
        word_ids.entry(w).or_insert(n);
    }
    for s in hyp_stems.iter().chain(&ref_stems) {
        let n = class_ids.len();
        class_ids.entry(s).or_insert(n);
    }
    let count = |words: &[String]| {
        let mut c = vec![0usize; word_ids.len()];
        for w in words {
            c[word_ids[w.as_str()]] += 1;
        }
        c
    };
    let (hc, rc) = (count(hyp), count(reference));
    let need_exact: Vec<usize> = hc.iter().zip(&rc).map(|(a, b)| *a.min(b)).collect();

    // leftover tokens per stem class after the exact stage
    let mut left_h = vec![0usize; class_ids.len()];
    let mut left_r = vec![0usize; class_ids.len()];
    for (w, &id) in &word_ids {
        let class = class_ids[porter_stemmer::stem(w).as_str()];
        left_h[class] += hc[id] - need_exact[id];
        left_r[class] += rc[id] - need_exact[id];
    }
    let need_stem: Vec<usize> = left_h.iter().zip(&left_r).map(|(a, b)| *a.min(b)).collect();
    let matches = need_exact.iter().sum::<usize>() + need_stem.iter().sum::<usize>();
    if matches == 0 {
        return (0, 0);
    }
    let mut search = ChunkSearch {
        hyp,
        reference,
        hyp_word: hyp.iter().map(|w| word_ids[w.as_str()]).collect(),
        hyp_class: hyp_stems.iter().map(|s| class_ids[s.as_str()]).collect(),
        hyp_stems,
        ref_stems,
        memo: HashMap::new(),
    };
    let mut used = vec![0u64; reference.len().div_ceil(64)];
    let chunks = search
        .run(0, None, &mut used, &mut need_exact.clone(), &mut need_stem.clone())
        .expect("a maximal alignment always exists");
    (matches, chunks)
}

pub fn meteor_pair(hyp: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = meteor_alignment(hyp, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

pub fn meteor_lite(corpus: &EvalCorpus) -> f64 {
    let total: f64 = corpus
        .items()
        .iter()
        .map(|item| {
            let h = normalize_tokenize(&item.hypothesis);
            item.references.iter().map(|r| meteor_pair(&h, &normalize_tokenize(r))).fold(0.0, f64::max)
        })
        .sum();
    total / corpus.len() as f64
}

pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_N: usize = 4;

type Counts = HashMap<String, usize>;

fn stem_ngrams(sentence: &str) -> (usize, Vec<Counts>) {
    let stems = stem_all(&normalize_tokenize(sentence));
    let orders = (1..=CIDER_N)
        .map(|n| ngram_counts(&stems, n).into_iter().map(|(g, c)| (g.join(" "), c)).collect())
        .collect();
    (stems.len(), orders)
}

fn norm(v: &Counts, weight: &dyn Fn(&str) -> f64) -> f64 {
    v.iter().map(|(g, &c)| (c as f64 * weight(g)).powi(2)).sum::<f64>().sqrt()
}

/// COCO-style clipped cosine: Σ min(h, r)·r over the weighted vectors.
fn clipped_cosine(h: &Counts, r: &Counts, weight: &dyn Fn(&str) -> f64) -> f64 {
    let (hn, rn) = (norm(h, weight), norm(r, weight));
    if hn == 0.0 || rn == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for (g, &hc) in h {
        if let Some(&rc) = r.get(g) {
            let w = weight(g);
            let (a, b) = (hc as f64 * w, rc as f64 * w);
            dot += a.min(b) * b;
        }
    }
    dot / (hn * rn)
}

/// CIDEr-D with document frequencies taken from this corpus's references.
///
/// When every n-gram of both vectors has zero IDF (e.g. a single-video
/// corpus), the cosine falls back to unweighted counts.
pub fn cider_d(corpus: &EvalCorpus, sigma: f64) -> f64 {
    let refs: Vec<Vec<(usize, Vec<Counts>)>> =
        corpus.items().iter().map(|it| it.references.iter().map(|r| stem_ngrams(r)).collect()).collect();
    let mut df: Vec<HashMap<&str, usize>> = vec![HashMap::new(); CIDER_N];
    for video in &refs {
        for (n, table) in df.iter_mut().enumerate() {
            let present: HashSet<&str> = video.iter().flat_map(|(_, orders)| orders[n].keys().map(String::as_str)).collect();
            for g in present {
                *table.entry(g).or_insert(0) += 1;
            }
        }
    }
    let videos = (corpus.len() as f64).max(1.0);
    let unit = |_: &str| 1.0;

    let mut total = 0.0;
    for (item, video_refs) in corpus.items().iter().zip(&refs) {
        let (hyp_len, hyp) = stem_ngrams(&item.hypothesis);
        let mut score = 0.0;
        for (ref_len, reference) in video_refs {
            let diff = hyp_len as f64 - *ref_len as f64;
            let penalty = (-(diff * diff) / (2.0 * sigma * sigma)).exp();
            let mut orders = 0.0;
            for n in 0..CIDER_N {
                let idf = |g: &str| (videos / df[n].get(g).copied().unwrap_or(0).max(1) as f64).ln();
                let cos = if norm(&hyp[n], &idf) == 0.0 && norm(&reference[n], &idf) == 0.0 {
                    clipped_cosine(&hyp[n], &reference[n], &unit)
                } else {
                    clipped_cosine(&hyp[n], &reference[n], &idf)
                };
                orders += cos * penalty;
            }
            score += orders / CIDER_N as f64;
        }
        total += 10.0 * score / video_refs.len() as f64;
    }
    total / corpus.len() as f64
}

pub fn evaluate(corpus: &EvalCorpus) -> MetricReport {
    let [bleu1, bleu2, bleu3, bleu4] = bleu(corpus);
    MetricReport {
        bleu1,
        bleu2,
        bleu3,
        bleu4,
        meteor: meteor_lite(corpus),
        cider_d: cider_d(corpus, CIDER_SIGMA),
        rouge_l: rouge_l(corpus, ROUGE_BETA),
        count: corpus.len(),
    }
}

#[derive(Deserialize)]
struct HypLine {
    video_id: String,
    caption: String,
}

/// Reads `(video_id, caption)` pairs from caption JSON-lines.
pub fn load_hypotheses(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, MetricsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let h: HypLine = serde_json::from_str(line)
            .map_err(|e| MetricsError::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        out.push((h.video_id, h.caption));
    }
    Ok(out)
}

/// Scores a caption file against the references in `manifest`.
pub fn evaluate_files(hyp_path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<MetricReport, MetricsError> {
    let hyps = load_hypotheses(hyp_path)?;
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(evaluate(&EvalCorpus::from_manifest(hyps, manifest)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(h: &str, r: &[&str]) -> EvalCorpus {
        EvalCorpus::from_pairs(&[(h, r.to_vec())]).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        normalize_tokenize(s)
    }

    #[test]
    fn bleu_hand_examples() {
        assert_eq!(bleu(&one("a man is cooking", &["a man is cooking"])), [1.0; 4]);
        let b = bleu(&one("the cat sat", &["the cat sat down"]));
        assert!((b[1] - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        assert!((b[1] - 0.716531).abs() < 1e-6);
        // no trigram overlap beyond the 3-word hypothesis: BLEU-4 has zero 4-grams
        assert_eq!(b[3], 0.0);
        assert_eq!(bleu(&one("", &["a b"])), [0.0; 4]);
    }

    #[test]
    fn bleu_closest_reference_prefers_shorter_on_ties() {
        // hyp length 3; refs 2 and 4 are equally close, 2 wins → no brevity penalty
        let b = bleu(&one("a b c", &["a b", "a b c d"]));
        assert!((b[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_hand_examples() {
        assert_eq!(rouge_l(&one("a b c", &["a b c"]), ROUGE_BETA), 1.0);
        assert!((rouge_l(&one("a b c d", &["a c b d"]), ROUGE_BETA) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&one("x y", &["a b"]), ROUGE_BETA), 0.0);
    }

    #[test]
    fn meteor_hand_examples() {
        assert!((meteor_lite(&one("a b c d", &["a b c d"])) - 0.9921875).abs() < 1e-12);
        assert_eq!(meteor_lite(&one("x y", &["a b"])), 0.0);
        assert!((meteor_lite(&one("cats running", &["cat runs"])) - 0.9375).abs() < 1e-12);
    }

    #[test]
    fn meteor_prefers_fewest_chunks() {
        // "a" can align to either occurrence; the one next to "b" yields one chunk
        assert_eq!(meteor_alignment(&toks("a b"), &toks("a x a b")), (2, 1));
        assert_eq!(meteor_alignment(&toks("b a"), &toks("a b")), (2, 2));
        // exact stage is exhausted before stems: "run" takes the exact "run"
        assert_eq!(meteor_alignment(&toks("run"), &toks("running run")), (1, 1));
    }

    #[test]
    fn cider_hand_examples() {
        assert!((cider_d(&one("a man is cooking food", &["a man is cooking food"]), CIDER_SIGMA) - 10.0).abs() < 1e-12);
        assert_eq!(cider_d(&one("x y z", &["a b c"]), CIDER_SIGMA), 0.0);
    }

    #[test]
    fn corpus_validation() {
        assert!(matches!(EvalCorpus::new(vec![]), Err(MetricsError::EmptyCorpus)));
        let item = |id: &str, refs: Vec<String>| EvalItem { video_id: id.into(), hypothesis: "a".into(), references: refs };
        assert!(matches!(EvalCorpus::new(vec![item("v", vec![])]), Err(MetricsError::NoReferences(_))));
        let dup = vec![item("v", vec!["a".into()]), item("v", vec!["a".into()])];
        assert!(matches!(EvalCorpus::new(dup), Err(MetricsError::DuplicateId(_))));
    }

    #[test]
    fn report_json_round_trip_and_table() {
        let r = evaluate(&one("the cat sat", &["the cat sat down", "a cat sat"]));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let t = r.table();
        let header: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "METEOR", "CIDEr", "ROUGE-L"]);
    }
}
