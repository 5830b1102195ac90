//! Brute-force caption scorers written directly from the metric formulas.
//! Deliberately slow: enumeration instead of dynamic programming or search.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use s2vt_core::numkit::seeded_rng;
use s2vt_core::textkit::normalize_tokenize;

pub type Corpus = Vec<(String, Vec<String>)>;

pub const WORDS: [&str; 14] = [
    "a", "the", "man", "men", "cat", "cats", "is", "run", "runs", "running", "cooking", "cooks", "food", "outside",
];

fn sentence<R: Rng>(rng: &mut R, max_len: usize) -> Vec<&'static str> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect()
}

/// Hypotheses are noisy copies of a reference so higher-order n-grams overlap.
pub fn synthetic_corpus(seed: u64, videos: usize) -> Corpus {
    let mut rng = seeded_rng(seed);
    (0..videos)
        .map(|_| {
            let nrefs = rng.random_range(1..=3);
            let refs: Vec<Vec<&str>> = (0..nrefs).map(|_| sentence(&mut rng, 7)).collect();
            let mut hyp = refs[0].clone();
            for w in hyp.iter_mut() {
                if rng.random_bool(0.3) {
                    *w = WORDS.choose(&mut rng).unwrap();
                }
            }
            if hyp.len() > 1 && rng.random_bool(0.3) {
                hyp.pop();
            }
            if rng.random_bool(0.1) {
                hyp.clear();
            }
            (hyp.join(" "), refs.iter().map(|r| r.join(" ")).collect())
        })
        .collect()
}

fn toks(s: &str) -> Vec<String> {
    normalize_tokenize(s)
}

fn stems(s: &str) -> Vec<String> {
    toks(s).iter().map(|w| porter_stemmer::stem(w)).collect()
}

fn ngrams(words: &[String], n: usize) -> Vec<Vec<String>> {
    if words.len() < n {
        return vec![];
    }
    (0..=words.len() - n).map(|i| words[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu(corpus: &Corpus) -> [f64; 4] {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (hyp, refs) in corpus {
        let h = toks(hyp);
        let rs: Vec<Vec<String>> = refs.iter().map(|x| toks(x)).collect();
        for n in 1..=4 {
            let hg = ngrams(&h, n);
            let distinct: BTreeSet<Vec<String>> = hg.iter().cloned().collect();
            for g in distinct {
                let in_hyp = count(&hg, &g);
                let best_ref = rs.iter().map(|rr| count(&ngrams(rr, n), &g)).max().unwrap_or(0);
                matched[n - 1] += in_hyp.min(best_ref);
            }
            total[n - 1] += hg.len();
        }
        c += h.len();
        let mut best: Option<usize> = None;
        for rr in &rs {
            let better = match best {
                None => true,
                Some(b) => {
                    let (d_new, d_old) = ((rr.len() as i64 - h.len() as i64).abs(), (b as i64 - h.len() as i64).abs());
                    d_new < d_old || (d_new == d_old && rr.len() < b)
                }
            };
            if better {
                best = Some(rr.len());
            }
        }
        r += best.unwrap();
    }
    let bp = if c == 0 { 0.0 } else if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    let mut out = [0.0; 4];
    for k in 1..=4 {
        let mut prod = 1.0;
        for n in 0..k {
            prod *= if total[n] == 0 { 0.0 } else { matched[n] as f64 / total[n] as f64 };
        }
        out[k - 1] = bp * prod.powf(1.0 / k as f64);
    }
    out
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == *w))
}

/// LCS length by enumerating every subset of the hypothesis.
fn lcs_brute(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(corpus: &Corpus) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut sum = 0.0;
    for (hyp, refs) in corpus {
        let h = toks(hyp);
        let mut best: f64 = 0.0;
        for r in refs {
            let r = toks(r);
            let l = lcs_brute(&h, &r) as f64;
            let p = if h.is_empty() { 0.0 } else { l / h.len() as f64 };
            let rc = if r.is_empty() { 0.0 } else { l / r.len() as f64 };
            let f = if p == 0.0 && rc == 0.0 { 0.0 } else { (1.0 + beta2) * p * rc / (rc + beta2 * p) };
            best = best.max(f);
        }
        sum += best;
    }
    sum / corpus.len() as f64
}

fn enumerate_alignments(
    i: usize,
    h: &[String],
    r: &[String],
    used: &mut Vec<bool>,
    cur: &mut Vec<(usize, usize)>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    if i == h.len() {
        out.push(cur.clone());
        return;
    }
    enumerate_alignments(i + 1, h, r, used, cur, out);
    for j in 0..r.len() {
        if !used[j] && (h[i] == r[j] || porter_stemmer::stem(&h[i]) == porter_stemmer::stem(&r[j])) {
            used[j] = true;
            cur.push((i, j));
            enumerate_alignments(i + 1, h, r, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
}

fn chunks(al: &[(usize, usize)]) -> usize {
    let mut c = 0;
    for (k, &(i, j)) in al.iter().enumerate() {
        if k == 0 || !(al[k - 1].0 + 1 == i && al[k - 1].1 + 1 == j) {
            c += 1;
        }
    }
    c
}

pub fn meteor_pair(h: &[String], r: &[String]) -> f64 {
    let mut all = Vec::new();
    enumerate_alignments(0, h, r, &mut vec![false; r.len()], &mut Vec::new(), &mut all);
    let exact = |al: &Vec<(usize, usize)>| al.iter().filter(|&&(i, j)| h[i] == r[j]).count();
    // stage 1: the most exact pairs achievable using exact pairs only
    let max_exact = all.iter().filter(|al| exact(al) == al.len()).map(|al| al.len()).max().unwrap_or(0);
    // stage 2: the most pairs overall among alignments keeping a maximum exact stage
    let max_total = all.iter().filter(|al| exact(al) == max_exact).map(|al| al.len()).max().unwrap_or(0);
    let m = max_total;
    if m == 0 {
        return 0.0;
    }
    let ch = all.iter().filter(|al| exact(al) == max_exact && al.len() == m).map(|al| chunks(al)).min().unwrap();
    let p = m as f64 / h.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    fmean * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

pub fn meteor(corpus: &Corpus) -> f64 {
    let mut sum = 0.0;
    for (hyp, refs) in corpus {
        let h = toks(hyp);
        sum += refs.iter().map(|r| meteor_pair(&h, &toks(r))).fold(0.0, f64::max);
    }
    sum / corpus.len() as f64
}

pub fn cider_d(corpus: &Corpus) -> f64 {
    let sigma = 6.0f64;
    let n_videos = corpus.len() as f64;
    let ref_grams: Vec<Vec<Vec<Vec<Vec<String>>>>> = corpus
        .iter()
        .map(|(_, refs)| refs.iter().map(|r| (1..=4).map(|n| ngrams(&stems(r), n)).collect()).collect())
        .collect();
    let df = |g: &Vec<String>, n: usize| -> f64 {
        let d = ref_grams.iter().filter(|video| video.iter().any(|r| r[n - 1].contains(g))).count();
        d.max(1) as f64
    };
    let mut total = 0.0;
    for (v, (hyp, refs)) in corpus.iter().enumerate() {
        let hs = stems(hyp);
        let mut video_score = 0.0;
        for (ri, r) in refs.iter().enumerate() {
            let rlen = stems(r).len() as f64;
            let penalty = (-((hs.len() as f64 - rlen).powi(2)) / (2.0 * sigma * sigma)).exp();
            let mut per_order = 0.0;
            for n in 1..=4 {
                let hg = ngrams(&hs, n);
                let rg = &ref_grams[v][ri][n - 1];
                let cos = |weighted: bool| -> f64 {
                    let w = |g: &Vec<String>| if weighted { (n_videos.max(1.0) / df(g, n)).ln() } else { 1.0 };
                    let hd: BTreeSet<Vec<String>> = hg.iter().cloned().collect();
                    let rd: BTreeSet<Vec<String>> = rg.iter().cloned().collect();
                    let hn: f64 = hd.iter().map(|g| (count(&hg, g) as f64 * w(g)).powi(2)).sum::<f64>().sqrt();
                    let rn: f64 = rd.iter().map(|g| (count(rg, g) as f64 * w(g)).powi(2)).sum::<f64>().sqrt();
                    let mut dot = 0.0;
                    for g in &hd {
                        let a = count(&hg, g) as f64 * w(g);
                        let b = count(rg, g) as f64 * w(g);
                        dot += a.min(b) * b;
                    }
                    (dot, hn, rn).0 / if hn == 0.0 || rn == 0.0 { f64::INFINITY } else { hn * rn }
                };
                let weighted_zero = {
                    let hz = hg.iter().all(|g| (n_videos.max(1.0) / df(g, n)).ln() == 0.0);
                    let rz = rg.iter().all(|g| (n_videos.max(1.0) / df(g, n)).ln() == 0.0);
                    hz && rz
                };
                let c = if weighted_zero { cos(false) } else { cos(true) };
                per_order += c * penalty;
            }
            video_score += per_order / 4.0;
        }
        total += 10.0 * video_score / refs.len() as f64;
    }
    total / n_videos
}
