//! WordPiece-style vocabulary, greedy longest-match tokenization and input
//! packing.
//!
//! Packed inputs start with `[CLS]`. A single sentence is closed by one
//! `[SEP]`; a pair is `[CLS] a [SEP] b [SEP]` with segment id 0 on the first
//! part (through its `[SEP]`) and 1 on the second. Padding is always trailing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Continuation-piece marker.
pub const CONTINUATION: &str = "##";

/// Default packed length when none is configured.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target vocabulary size {target} cannot hold the {needed} required tokens")]
    TargetSizeTooSmall { needed: usize, target: usize },
    #[error("candidate of {len} tokens does not fit in max length {max_len}")]
    CandidateTooLong { len: usize, max_len: usize },
    #[error("max length {0} is too small")]
    MaxLenTooSmall(usize),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from tokens listed in id order. The five special
    /// tokens must occupy ids 0 through 4.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id_to_token: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token.get(id).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::InvalidVocab(format!("expected {special} at id {id}")));
            }
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, token) in id_to_token.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(TokenizerError::InvalidVocab(format!("malformed token {token:?} at id {id}")));
            }
            if token_to_id.insert(token.clone(), id as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("duplicate token {token:?}")));
            }
        }
        Ok(Self { token_to_id, id_to_token })
    }

    /// Parses the one-token-per-line vocabulary file format.
    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }

    /// Serializes to the one-token-per-line format; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Tokens of a text alongside their ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends another sequence.
    pub fn extend(&mut self, other: &TokenSequence) {
        self.tokens.extend(other.tokens.iter().cloned());
        self.ids.extend(&other.ids);
    }

    pub fn push_special(&mut self, token: &str, id: u32) {
        self.tokens.push(token.to_string());
        self.ids.push(id);
    }

    /// Joins pieces back into words: continuation pieces attach to the
    /// previous token.
    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            if let Some(rest) = t.strip_prefix(CONTINUATION) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
        out
    }
}

/// Model input: ids, segment ids and attention mask of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m == 1).count()
    }

    fn pad_to(&mut self, max_len: usize) {
        while self.ids.len() < max_len {
            self.ids.push(PAD_ID);
            self.segment_ids.push(0);
            self.attention_mask.push(0);
        }
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
        )
}

/// Lowercases, splits on whitespace and isolates punctuation characters.
pub fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars().flat_map(char::to_lowercase) {
            if c.is_control() {
                continue;
            }
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Frequency-ranked vocabulary over `corpus`.
///
/// Layout: the five specials, every corpus character, a `##` continuation
/// form for every character seen inside a word, then whole words by
/// descending frequency, then `##` suffix pieces of the remaining words by
/// descending frequency, until `target_size` is reached. Ties go to the
/// lexicographically smaller string.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocab, TokenizerError> {
    if corpus.iter().all(|s| s.as_ref().trim().is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in basic_split(line.as_ref()) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    let mut chars = BTreeSet::new();
    let mut inner_chars = BTreeSet::new();
    for w in word_counts.keys() {
        for (i, c) in w.chars().enumerate() {
            chars.insert(c);
            if i > 0 {
                inner_chars.insert(c);
            }
        }
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(inner_chars.iter().map(|c| format!("{CONTINUATION}{c}")));
    if tokens.len() > target_size {
        return Err(TokenizerError::TargetSizeTooSmall {
            needed: tokens.len(),
            target: target_size,
        });
    }
    let mut present: BTreeSet<String> = tokens.iter().cloned().collect();

    let mut words: Vec<(&String, u64)> = word_counts
        .iter()
        .filter(|(w, _)| w.chars().count() > 1)
        .map(|(w, &c)| (w, c))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    for (w, _) in words {
        if tokens.len() >= target_size {
            break;
        }
        if present.insert(w.clone()) {
            tokens.push(w.clone());
        }
    }

    if tokens.len() < target_size {
        let mut pieces: BTreeMap<String, u64> = BTreeMap::new();
        for (w, &count) in &word_counts {
            if present.contains(w) {
                continue;
            }
            let starts: Vec<usize> = w.char_indices().map(|(i, _)| i).skip(1).collect();
            for &s in &starts {
                let suffix = &w[s..];
                if suffix.chars().count() > 1 {
                    *pieces.entry(format!("{CONTINUATION}{suffix}")).or_default() += count;
                }
            }
        }
        let mut pieces: Vec<(String, u64)> = pieces.into_iter().collect();
        pieces.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (p, _) in pieces {
            if tokens.len() >= target_size {
                break;
            }
            if present.insert(p.clone()) {
                tokens.push(p);
            }
        }
    }
    Vocab::from_tokens(tokens)
}

/// Greedy longest-match split of one word. Characters with no matching
/// piece become `[UNK]` individually.
fn wordpiece(word: &str, vocab: &Vocab, out: &mut TokenSequence) {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut start = 0;
    while start < chars.len() {
        let begin = chars[start].0;
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let stop = chars.get(end).map_or(word.len(), |c| c.0);
            let piece = &word[begin..stop];
            let candidate = if start == 0 {
                piece.to_string()
            } else {
                format!("{CONTINUATION}{piece}")
            };
            if let Some(id) = vocab.id(&candidate) {
                found = Some((end, candidate, id));
                break;
            }
        }
        match found {
            Some((end, token, id)) => {
                out.tokens.push(token);
                out.ids.push(id);
                start = end;
            }
            None => {
                out.tokens.push(UNK.to_string());
                out.ids.push(UNK_ID);
                start += 1;
            }
        }
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSequence {
    let mut out = TokenSequence::default();
    for word in basic_split(text) {
        wordpiece(&word, vocab, &mut out);
    }
    out
}

/// `[CLS] context [SEP] candidate [SEP]`, padded to `max_len`. The candidate
/// is never truncated; the context loses its oldest tokens first.
pub fn pack_pair(context: &TokenSequence, candidate: &TokenSequence, max_len: usize) -> Result<PackedInput, TokenizerError> {
    if candidate.len() + 3 > max_len {
        return Err(TokenizerError::CandidateTooLong {
            len: candidate.len(),
            max_len,
        });
    }
    let room = max_len - 3 - candidate.len();
    let ctx = &context.ids[context.len().saturating_sub(room)..];
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(ctx);
    ids.push(SEP_ID);
    let first = ids.len();
    ids.extend_from_slice(&candidate.ids);
    ids.push(SEP_ID);
    let real = ids.len();
    let mut packed = PackedInput {
        segment_ids: (0..real).map(|i| (i >= first) as u8).collect(),
        attention_mask: vec![1; real],
        ids,
    };
    packed.pad_to(max_len);
    Ok(packed)
}

/// `[CLS] sentence [SEP]`, keeping the first `max_len - 2` sentence tokens.
pub fn pack_single(sentence: &TokenSequence, max_len: usize) -> Result<PackedInput, TokenizerError> {
    if max_len < 2 {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    let keep = sentence.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(&sentence.ids[..keep]);
    ids.push(SEP_ID);
    let real = ids.len();
    let mut packed = PackedInput {
        ids,
        segment_ids: vec![0; real],
        attention_mask: vec![1; real],
    };
    packed.pad_to(max_len);
    Ok(packed)
}

/// Tokenizes and packs every sentence with [`pack_single`].
pub fn pack_corpus<S: AsRef<str>>(sentences: &[S], vocab: &Vocab, max_len: usize) -> Result<Vec<PackedInput>, TokenizerError> {
    sentences
        .iter()
        .map(|s| pack_single(&tokenize(s.as_ref(), vocab), max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(extra: &[&str]) -> Vocab {
        Vocab::from_tokens(SPECIAL_TOKENS.iter().chain(extra.iter()).copied()).unwrap()
    }

    #[test]
    fn minimal_corpus() {
        let v = build_vocab(&["a b", "a"], 10).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"]);
    }

    #[test]
    fn frequent_word_is_whole() {
        let corpus = vec!["chinese chinese"; 5];
        let v = build_vocab(&corpus, 20).unwrap();
        assert!(v.contains("chinese"));
        assert_eq!(tokenize("Chinese", &v).tokens, vec!["chinese"]);
    }

    #[test]
    fn vocab_errors() {
        let empty: Vec<&str> = vec![];
        assert_eq!(build_vocab(&empty, 10), Err(TokenizerError::EmptyCorpus));
        assert_eq!(build_vocab(&["  "], 10), Err(TokenizerError::EmptyCorpus));
        assert!(matches!(
            build_vocab(&["abc"], 6),
            Err(TokenizerError::TargetSizeTooSmall { needed: 10, target: 6 })
        ));
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab_of(&["c", "h", "e", "a", "p", "l", "y", "cheap", "##ly", "##l", "##y"]);
        assert_eq!(tokenize("cheaply", &v).tokens, vec!["cheap", "##ly"]);
        assert_eq!(tokenize("", &v), TokenSequence::default());
    }

    #[test]
    fn unknown_characters_fall_back_per_character() {
        let v = vocab_of(&["a", "##a"]);
        let t = tokenize("aza", &v);
        assert_eq!(t.tokens, vec!["a", "[UNK]", "##a"]);
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(
            basic_split("Food=Chinese, please!"),
            vec!["food", "=", "chinese", ",", "please", "!"]
        );
    }

    #[test]
    fn vocab_text_roundtrip_and_validation() {
        let v = build_vocab(&["the cat sat on the mat"], 40).unwrap();
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocab::from_text("[PAD]\n[CLS]\n").is_err());
        assert!(Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"]).is_err());
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            tokens: ids.iter().map(|i| i.to_string()).collect(),
            ids: ids.to_vec(),
        }
    }

    #[test]
    fn pack_pair_example() {
        let p = pack_pair(&seq(&[10]), &seq(&[11, 12, 13]), 10).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 10, SEP_ID, 11, 12, 13, SEP_ID, 0, 0, 0]);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 1, 1, 1, 1, 0, 0, 0]);
        assert_eq!(p.attention_mask, vec![1, 1, 1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn pack_pair_truncates_front() {
        let ctx: Vec<u32> = (100..120).collect();
        let p = pack_pair(&seq(&ctx), &seq(&[7, 8, 9]), 16).unwrap();
        assert_eq!(&p.ids[1..11], &ctx[10..]);
        assert_eq!(p.ids.len(), 16);
        assert_eq!(p.real_len(), 16);
    }

    #[test]
    fn pack_pair_degenerate_and_error() {
        let p = pack_pair(&seq(&[]), &seq(&[7]), 4).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, SEP_ID, 7, SEP_ID]);
        assert_eq!(p.segment_ids, vec![0, 0, 1, 1]);
        assert_eq!(
            pack_pair(&seq(&[]), &seq(&[7, 8]), 4),
            Err(TokenizerError::CandidateTooLong { len: 2, max_len: 4 })
        );
    }

    #[test]
    fn pack_single_examples() {
        let p = pack_single(&seq(&[9]), 4).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 9, SEP_ID, PAD_ID]);
        assert_eq!(p.attention_mask, vec![1, 1, 1, 0]);
        let long: Vec<u32> = (10..40).collect();
        let p = pack_single(&seq(&long), 16).unwrap();
        assert_eq!(&p.ids[1..15], &long[..14]);
        assert_eq!(p.ids[15], SEP_ID);
        let p = pack_single(&seq(&[]), 2).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, SEP_ID]);
        assert!(pack_single(&seq(&[]), 1).is_err());
    }
}
