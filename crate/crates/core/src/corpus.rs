//! Vocabularies, numberization, and synthetic parallel corpora.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;

pub type TokenId = usize;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const RESERVED: [&str; 3] = ["<unk>", "<s>", "</s>"];

/// Number of distinct function words the lexicon task can insert.
pub const FUNCTION_WORDS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved entries followed by `tokens` in order. Duplicates and
    /// reserved spellings in `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            vocab.push(r.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) {
                vocab.push(t);
            }
        }
        vocab
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the reserved entries are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..3] != RESERVED {
            return Err(Error::Input(format!(
                "{}: vocabulary must start with {:?}",
                path.display(),
                RESERVED
            )));
        }
        let vocab = Vocabulary::from_tokens(lines[3..].iter().copied());
        if vocab.len() != lines.len() {
            return Err(Error::Input(format!(
                "{}: duplicate tokens in vocabulary",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

/// Keeps the `max_size - 3` most frequent tokens; ties go to the token seen
/// first.
pub fn build_vocabulary<S: AsRef<str>>(sentences: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if max_size < RESERVED.len() + 1 {
        return Err(Error::Config(format!("vocabulary max_size must be >= 4, got {max_size}")));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for sent in sentences {
        for tok in sent {
            let tok = tok.as_ref();
            if RESERVED.contains(&tok) {
                continue;
            }
            let entry = counts.entry(tok).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            entry.0 += 1;
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - RESERVED.len());
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _, _)| t)))
}

pub fn numberize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<TokenId> {
    tokens.iter().map(|t| vocab.id(t.as_ref())).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePair {
    pub source: Vec<TokenId>,
    /// Ends with exactly one [`EOS`].
    pub target: Vec<TokenId>,
}

impl SequencePair {
    /// Builds a pair from a bare target, appending EOS.
    pub fn new(source: Vec<TokenId>, mut target: Vec<TokenId>) -> Self {
        target.push(EOS);
        SequencePair { source, target }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(Error::Input("empty source sentence".into()));
        }
        match self.target.iter().position(|&t| t == EOS) {
            Some(p) if p + 1 == self.target.len() => Ok(()),
            Some(_) => Err(Error::Input("EOS inside target sentence".into())),
            None => Err(Error::Input("target sentence lacks EOS".into())),
        }
    }

    /// Target without the trailing EOS.
    pub fn target_words(&self) -> &[TokenId] {
        match self.target.last() {
            Some(&EOS) => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Reverse,
    Lexicon,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "lexicon" => Ok(TaskKind::Lexicon),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub kind: TaskKind,
    /// Number of source content words.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of inserting a function word after each lexicon output.
    pub function_rate: f64,
    pub seed: u64,
}

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("toy task vocab_size must be >= 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "toy task length range [{}, {}] is invalid",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.function_rate) {
            return Err(Error::Config(format!(
                "function_rate {} outside [0, 1]",
                self.function_rate
            )));
        }
        Ok(())
    }

    pub fn source_vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens((0..self.vocab_size).map(|k| format!("s{k}")))
    }

    pub fn target_vocabulary(&self) -> Vocabulary {
        match self.kind {
            TaskKind::Copy | TaskKind::Reverse => self.source_vocabulary(),
            TaskKind::Lexicon => Vocabulary::from_tokens(
                (0..self.vocab_size)
                    .map(|k| format!("t{k}"))
                    .chain((0..FUNCTION_WORDS).map(|r| format!("f{r}"))),
            ),
        }
    }

    /// The fixed lexicon bijection from source content ids to target content
    /// ids. It depends only on the vocabulary size, so every split shares it.
    pub fn lexicon(&self) -> Vec<TokenId> {
        let mut perm: Vec<TokenId> = (0..self.vocab_size).collect();
        XorShift64Star::new(0x1e71_c0de ^ self.vocab_size as u64).shuffle(&mut perm);
        let offset = RESERVED.len();
        let mut map = vec![UNK; offset + self.vocab_size];
        for (k, p) in perm.into_iter().enumerate() {
            map[offset + k] = offset + p;
        }
        map
    }

    /// Function word following target token `prev`.
    pub fn function_word(&self, prev: TokenId) -> TokenId {
        RESERVED.len() + self.vocab_size + prev % FUNCTION_WORDS
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ToyTaskSpec { seed, ..self.clone() }
    }
}

pub fn synthesize_corpus(spec: &ToyTaskSpec, count: usize) -> Result<Vec<SequencePair>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("corpus size must be >= 1".into()));
    }
    let lexicon = spec.lexicon();
    let mut rng = XorShift64Star::new(spec.seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.range_inclusive(spec.min_len, spec.max_len);
        let source: Vec<TokenId> = (0..len)
            .map(|_| RESERVED.len() + rng.below(spec.vocab_size as u64) as usize)
            .collect();
        let target = match spec.kind {
            TaskKind::Copy => source.clone(),
            TaskKind::Reverse => source.iter().rev().copied().collect(),
            TaskKind::Lexicon => {
                let mut t = Vec::with_capacity(2 * len);
                for &k in &source {
                    let mapped = lexicon[k];
                    t.push(mapped);
                    if rng.bernoulli(spec.function_rate) {
                        t.push(spec.function_word(mapped));
                    }
                }
                t
            }
        };
        pairs.push(SequencePair::new(source, target));
    }
    Ok(pairs)
}

/// Train, dev, and test corpora from seeds `seed`, `seed + 1`, `seed + 2`.
pub fn synthesize_splits(
    spec: &ToyTaskSpec,
    sizes: [usize; 3],
) -> Result<[Vec<SequencePair>; 3]> {
    Ok([
        synthesize_corpus(&spec.with_seed(spec.seed), sizes[0])?,
        synthesize_corpus(&spec.with_seed(spec.seed.wrapping_add(1)), sizes[1])?,
        synthesize_corpus(&spec.with_seed(spec.seed.wrapping_add(2)), sizes[2])?,
    ])
}

/// One sentence per line, whitespace-separated tokens.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn write_sentences<S: AsRef<str>>(path: &Path, sentences: &[Vec<S>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in sentences {
        let line: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a parallel corpus and numberizes it, appending EOS to targets.
pub fn read_parallel(
    source: &Path,
    target: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<SequencePair>> {
    let src = read_sentences(source)?;
    let tgt = read_sentences(target)?;
    if src.len() != tgt.len() {
        return Err(Error::Input(format!(
            "parallel corpus line counts differ: {} has {}, {} has {}",
            source.display(),
            src.len(),
            target.display(),
            tgt.len()
        )));
    }
    let pairs: Vec<SequencePair> = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| SequencePair::new(numberize(s, src_vocab), numberize(t, tgt_vocab)))
        .collect();
    for (i, p) in pairs.iter().enumerate() {
        p.validate()
            .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
    }
    Ok(pairs)
}

pub fn write_parallel(
    source: &Path,
    target: &Path,
    pairs: &[SequencePair],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<()> {
    let src: Vec<Vec<String>> = pairs.iter().map(|p| src_vocab.decode(&p.source)).collect();
    let tgt: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| tgt_vocab.decode(p.target_words()))
        .collect();
    write_sentences(source, &src)?;
    write_sentences(target, &tgt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn frequency_cut() {
        let v = build_vocabulary(&[toks("a a b")], 4).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn unique_tokens_all_kept() {
        let v = build_vocabulary(&[toks("p q r s t")], 100).unwrap();
        for t in ["p", "q", "r", "s", "t"] {
            assert!(v.contains(t));
        }
    }

    #[test]
    fn ties_follow_first_occurrence() {
        let v = build_vocabulary(&[toks("x y"), toks("y x")], 4).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
        let v = build_vocabulary(&[toks("x y y x")], 5).unwrap();
        assert_eq!(v.id("x"), 3);
        assert_eq!(v.id("y"), 4);
    }

    #[test]
    fn empty_input_and_bad_size() {
        let v = build_vocabulary::<String>(&[], 10).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.is_empty());
        assert!(build_vocabulary(&[toks("a")], 3).is_err());
    }

    #[test]
    fn numberize_examples() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]);
        assert!(numberize::<String>(&[], &v).is_empty());
        let ids = numberize(&toks("a c b"), &v);
        assert_eq!(v.decode(&ids), toks("a c b"));
        let ids = numberize(&toks("a zz b"), &v);
        assert_eq!(ids, vec![3, UNK, 4]);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = Vocabulary::from_tokens(["hello", "world"]);
        v.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<unk>\n<s>\n</s>\nhello\n"));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        fs::write(&path, "a\nb\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    fn spec(kind: TaskKind, p: f64) -> ToyTaskSpec {
        ToyTaskSpec {
            kind,
            vocab_size: 10,
            min_len: 1,
            max_len: 6,
            function_rate: p,
            seed: 3,
        }
    }

    #[test]
    fn copy_and_reverse_targets() {
        let p = synthesize_corpus(&spec(TaskKind::Copy, 0.0), 50).unwrap();
        for pair in &p {
            assert_eq!(pair.target_words(), &pair.source[..]);
            pair.validate().unwrap();
        }
        let p = synthesize_corpus(&spec(TaskKind::Reverse, 0.0), 50).unwrap();
        for pair in &p {
            let rev: Vec<_> = pair.source.iter().rev().copied().collect();
            assert_eq!(pair.target_words(), &rev[..]);
        }
    }

    #[test]
    fn lexicon_single_token_trace() {
        let s = ToyTaskSpec {
            min_len: 1,
            max_len: 1,
            ..spec(TaskKind::Lexicon, 1.0)
        };
        let lex = s.lexicon();
        for pair in synthesize_corpus(&s, 20).unwrap() {
            let k = pair.source[0];
            let mapped = lex[k];
            let f = RESERVED.len() + s.vocab_size + mapped % 4;
            assert_eq!(pair.target, vec![mapped, f, EOS]);
        }
    }

    #[test]
    fn lexicon_lengths_at_extreme_rates() {
        for pair in synthesize_corpus(&spec(TaskKind::Lexicon, 0.0), 100).unwrap() {
            assert_eq!(pair.target.len(), pair.source.len() + 1);
        }
        for pair in synthesize_corpus(&spec(TaskKind::Lexicon, 1.0), 100).unwrap() {
            assert_eq!(pair.target.len(), 2 * pair.source.len() + 1);
        }
    }

    #[test]
    fn lexicon_is_a_bijection_onto_content_ids() {
        let s = spec(TaskKind::Lexicon, 0.5);
        let lex = s.lexicon();
        let mut image: Vec<_> = lex[3..].to_vec();
        image.sort();
        assert_eq!(image, (3..13).collect::<Vec<_>>());
        let tv = s.target_vocabulary();
        assert_eq!(tv.len(), 3 + 10 + 4);
        assert_eq!(tv.token(s.function_word(3)), "f3");
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let s = spec(TaskKind::Lexicon, 0.5);
        assert_eq!(synthesize_corpus(&s, 30).unwrap(), synthesize_corpus(&s, 30).unwrap());
        let [a, b, c] = synthesize_splits(&s, [30, 30, 30]).unwrap();
        assert_eq!(a, synthesize_corpus(&s, 30).unwrap());
        assert_ne!(a, b);
        assert_ne!(b, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(TaskKind::Copy, 0.0);
        s.min_len = 0;
        assert!(synthesize_corpus(&s, 1).is_err());
        let mut s = spec(TaskKind::Copy, 0.0);
        s.min_len = 7;
        assert!(synthesize_corpus(&s, 1).is_err());
        let s = spec(TaskKind::Copy, 1.5);
        assert!(synthesize_corpus(&s, 1).is_err());
        assert!(synthesize_corpus(&spec(TaskKind::Copy, 0.0), 0).is_err());
    }

    #[test]
    fn generated_ids_never_reserved_and_in_range() {
        let s = spec(TaskKind::Lexicon, 0.7);
        let sv = s.source_vocabulary();
        let tv = s.target_vocabulary();
        for p in synthesize_corpus(&s, 200).unwrap() {
            assert!(p.source.iter().all(|&t| t >= 3 && t < sv.len()));
            assert!(p.target_words().iter().all(|&t| t >= 3 && t < tv.len()));
        }
    }

    #[test]
    fn parallel_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(TaskKind::Lexicon, 0.5);
        let pairs = synthesize_corpus(&s, 20).unwrap();
        let (sv, tv) = (s.source_vocabulary(), s.target_vocabulary());
        let (a, b) = (dir.path().join("x.src"), dir.path().join("x.tgt"));
        write_parallel(&a, &b, &pairs, &sv, &tv).unwrap();
        assert_eq!(read_parallel(&a, &b, &sv, &tv).unwrap(), pairs);
        fs::write(&b, "t1\n").unwrap();
        assert!(read_parallel(&a, &b, &sv, &tv).is_err());
    }

    #[test]
    fn pair_validation() {
        assert!(SequencePair { source: vec![3], target: vec![4] }.validate().is_err());
        assert!(SequencePair { source: vec![], target: vec![EOS] }.validate().is_err());
        assert!(SequencePair { source: vec![3], target: vec![EOS, 4, EOS] }.validate().is_err());
        assert!(SequencePair { source: vec![3], target: vec![EOS] }.validate().is_ok());
    }
}
