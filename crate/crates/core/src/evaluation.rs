//! Translation and alignment metrics: corpus BLEU, AER/SAER, the sign test,
//! Pearson correlation, and length-bucket reports.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and totals for orders 1..=4 plus lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut st = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            if reference.len() >= n {
                for g in reference.windows(n) {
                    *ref_counts.entry(g).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            st.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            st.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        st
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        self.brevity_penalty() * log_p.exp()
    }
}

/// Corpus BLEU over arbitrary token types, no case folding.
pub fn bleu_tokens<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses against {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h, r));
    }
    Ok(total.score())
}

/// Case-insensitive corpus BLEU, one reference per sentence.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    let lower = |c: &[Vec<S>]| -> Vec<Vec<String>> {
        c.iter()
            .map(|s| s.iter().map(|w| w.as_ref().to_lowercase()).collect())
            .collect()
    };
    bleu_tokens(&lower(hyps), &lower(refs))
}

/// `(target_pos, source_pos)`, both 1-based.
pub type Link = (usize, usize);

/// Reference alignment of one sentence. `possible` always contains `sure`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentSets {
    pub sure: BTreeSet<Link>,
    pub possible: BTreeSet<Link>,
}

impl AlignmentSets {
    /// Parses `i-j` (sure) and `i?j` (possible) tokens, `i` the target
    /// position.
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut sets = AlignmentSets::default();
        for tok in line.split_whitespace() {
            let (sep, sure) = if tok.contains('-') { ('-', true) } else { ('?', false) };
            let parsed = tok.split_once(sep).and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)));
            let link: Link = match parsed {
                Some((i, j)) if i >= 1 && j >= 1 => (i, j),
                _ => return Err(Error::format("alignment", format!("bad link `{tok}`"))),
            };
            if sure {
                sets.sure.insert(link);
            }
            sets.possible.insert(link);
        }
        Ok(sets)
    }

    pub fn from_links(sure: &[Link], possible: &[Link]) -> Self {
        let sure: BTreeSet<Link> = sure.iter().copied().collect();
        let mut possible: BTreeSet<Link> = possible.iter().copied().collect();
        possible.extend(sure.iter().copied());
        AlignmentSets { sure, possible }
    }
}

pub fn read_alignments(path: &Path) -> Result<Vec<AlignmentSets>> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .map(|(k, l)| {
            AlignmentSets::parse_line(l).map_err(|e| Error::format(format!("alignment line {}", k + 1), e.to_string()))
        })
        .collect()
}

/// Writes hard links as `i-j` tokens, one sentence per line.
pub fn format_links(links: &[Link]) -> String {
    links.iter().map(|(i, j)| format!("{i}-{j}")).collect::<Vec<_>>().join(" ")
}

fn check_subset(s: &BTreeSet<Link>, p: &BTreeSet<Link>) -> Result<()> {
    if !s.is_subset(p) {
        return Err(Error::Input("sure links must be a subset of possible links".into()));
    }
    Ok(())
}

fn aer_terms(a: &BTreeSet<Link>, s: &BTreeSet<Link>, p: &BTreeSet<Link>) -> Result<(f64, f64)> {
    check_subset(s, p)?;
    let num = a.intersection(s).count() + a.intersection(p).count();
    Ok((num as f64, (a.len() + s.len()) as f64))
}

fn saer_terms(m_a: &Matrix, s: &BTreeSet<Link>, p: &BTreeSet<Link>) -> Result<(f64, f64)> {
    check_subset(s, p)?;
    let (rows, cols) = m_a.shape();
    if let Some(&(i, j)) = p.iter().find(|&&(i, j)| i > rows || j > cols) {
        return Err(Error::Input(format!(
            "link {i}-{j} outside a {rows}x{cols} alignment matrix"
        )));
    }
    let at = |&(i, j): &Link| m_a.get(i - 1, j - 1);
    let mass_s: f64 = s.iter().map(at).sum();
    let mass_p: f64 = p.iter().map(at).sum();
    Ok((mass_s + mass_p, m_a.data().iter().sum::<f64>() + s.len() as f64))
}

fn error_rate((num, denom): (f64, f64)) -> f64 {
    if denom == 0.0 {
        0.0
    } else {
        1.0 - num / denom
    }
}

/// `1 − (|A∩S| + |A∩P|) / (|A| + |S|)`; 0 when `A` and `S` are both empty.
pub fn aer(a: &BTreeSet<Link>, s: &BTreeSet<Link>, p: &BTreeSet<Link>) -> Result<f64> {
    Ok(error_rate(aer_terms(a, s, p)?))
}

/// Soft AER of an alignment matrix (rows target, columns source) against
/// 0/1 matrices built from `s` and `p`.
pub fn saer(m_a: &Matrix, s: &BTreeSet<Link>, p: &BTreeSet<Link>) -> Result<f64> {
    Ok(error_rate(saer_terms(m_a, s, p)?))
}

fn check_counts(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("{a} alignments against {b} references")));
    }
    Ok(())
}

/// AER over a corpus, summing numerator and denominator over sentences.
pub fn corpus_aer(hard: &[BTreeSet<Link>], gold: &[AlignmentSets]) -> Result<f64> {
    check_counts(hard.len(), gold.len())?;
    let mut total = (0.0, 0.0);
    for (a, g) in hard.iter().zip(gold) {
        let (n, d) = aer_terms(a, &g.sure, &g.possible)?;
        total = (total.0 + n, total.1 + d);
    }
    Ok(error_rate(total))
}

/// SAER over a corpus, summing numerator and denominator over sentences.
pub fn corpus_saer(soft: &[Matrix], gold: &[AlignmentSets]) -> Result<f64> {
    check_counts(soft.len(), gold.len())?;
    let mut total = (0.0, 0.0);
    for (m, g) in soft.iter().zip(gold) {
        let (n, d) = saer_terms(m, &g.sure, &g.possible)?;
        total = (total.0 + n, total.1 + d);
    }
    Ok(error_rate(total))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Exact two-sided sign test; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("sign test on {} vs {} scores", a.len(), b.len())));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count() as u64;
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count() as u64;
    let n = wins + losses;
    if n == 0 {
        return Ok(1.0);
    }
    let k = wins.min(losses);
    let ln_half_n = n as f64 * 0.5f64.ln();
    let terms: Vec<f64> = (0..=k).map(|i| ln_choose(n, i) + ln_half_n).collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>();
    Ok((2.0 * tail).min(1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!(
            "pearson needs two equal-length samples of size >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a zero-variance sample".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    /// Source lengths in `[lo, hi)`.
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub bleu: f64,
    pub mean_output_len: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
}

impl BucketReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count,bleu,mean_output_len\n");
        for b in &self.buckets {
            writeln!(out, "{},{},{},{:.6},{:.4}", b.lo, b.hi, b.count, b.bleu, b.mean_output_len).unwrap();
        }
        out
    }
}

/// Groups sentences by source length into buckets of `width`; empty
/// buckets are left out.
pub fn bucket_report<S: AsRef<str>>(
    source_lens: &[usize],
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    width: usize,
) -> Result<BucketReport> {
    if width == 0 {
        return Err(Error::Config("bucket width must be >= 1".into()));
    }
    if source_lens.len() != hyps.len() || hyps.len() != refs.len() {
        return Err(Error::Input("bucket report over lists of different lengths".into()));
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (k, &len) in source_lens.iter().enumerate() {
        groups.entry(len / width).or_default().push(k);
    }
    let mut buckets = Vec::new();
    for (b, idx) in groups {
        let h: Vec<Vec<&str>> = idx.iter().map(|&k| hyps[k].iter().map(|w| w.as_ref()).collect()).collect();
        let r: Vec<Vec<&str>> = idx.iter().map(|&k| refs[k].iter().map(|w| w.as_ref()).collect()).collect();
        buckets.push(Bucket {
            lo: b * width,
            hi: (b + 1) * width,
            count: idx.len(),
            bleu: bleu(&h, &r)?,
            mean_output_len: h.iter().map(Vec::len).sum::<usize>() as f64 / idx.len() as f64,
        });
    }
    Ok(BucketReport { buckets })
}
