//! Subword vocabulary training and deterministic text encoding.
//!
//! A [`Vocabulary`] is learned from raw text by greedy pair merging: the
//! corpus is lowercased, split into whitespace words, each word is prefixed
//! with a boundary marker and decomposed into characters, and the most
//! frequent adjacent token pair is merged until the vocabulary reaches its
//! target size. Encoding replays the merge rules in training order, so the
//! same text always maps to the same token ids.

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Id of the padding token, always present.
pub const PAD_ID: u32 = 0;
/// Id of the unknown token, always present.
pub const UNK_ID: u32 = 1;
/// Surface form of the padding token.
pub const PAD_TOKEN: &str = "<pad>";
/// Surface form of the unknown token.
pub const UNK_TOKEN: &str = "<unk>";
/// Reserved character prefixed to word-initial pieces. Occurrences of this
/// character inside input words are treated as unknown.
pub const WORD_BOUNDARY: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus is empty after normalization")]
    EmptyCorpus,
    #[error("target size {requested} is below the minimum feasible vocabulary of {minimum} (distinct characters plus specials)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Lowercases, trims, and collapses internal whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A learned subword inventory: token strings, their ids, and the ordered
/// merge rules that produced them.
///
/// Ids are dense in `0..size()`, with `<pad>` at 0 and `<unk>` at 1. A
/// trained vocabulary is immutable; [`encode`](Vocabulary::encode) and
/// [`decode`](Vocabulary::decode) are pure and safe to call from many
/// threads at once.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    // (left id, right id) -> (application rank, merged id)
    merge_ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl Vocabulary {
    /// Number of tokens, specials included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Surface string of a token id.
    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of a token string.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Merge rules in application order.
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Builds a vocabulary from explicit parts, validating that specials sit
    /// at ids 0 and 1, that token strings are unique, and that every merge
    /// rule references existing tokens whose concatenation is itself a token.
    pub fn from_parts(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(TokenizerError::Format(format!(
                "tokens must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Format(format!(
                    "token {id} is empty or contains whitespace"
                )));
            }
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(TokenizerError::Format(format!("duplicate token {tok:?}")));
            }
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let l = *token_to_id
                .get(left)
                .ok_or_else(|| TokenizerError::Format(format!("merge references unknown token {left:?}")))?;
            let r = *token_to_id
                .get(right)
                .ok_or_else(|| TokenizerError::Format(format!("merge references unknown token {right:?}")))?;
            let concat = format!("{left}{right}");
            let merged = *token_to_id.get(&concat).ok_or_else(|| {
                TokenizerError::Format(format!("merge result {concat:?} is not in the vocabulary"))
            })?;
            if merge_ranks.insert((l, r), (rank as u32, merged)).is_some() {
                return Err(TokenizerError::Format(format!(
                    "duplicate merge rule {left:?}+{right:?}"
                )));
            }
        }
        Ok(Self {
            tokens,
            token_to_id,
            merges,
            merge_ranks,
        })
    }

    /// Encodes text into token ids: normalize, split on whitespace, prefix
    /// each word with the boundary marker, decompose into characters, and
    /// apply the merge rules in training order. Characters outside the
    /// vocabulary map to [`UNK_ID`]. Empty text encodes to an empty sequence.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let normalized = normalize(text);
        let mut ids = Vec::new();
        for word in normalized.split_whitespace() {
            self.encode_word(word, &mut ids);
        }
        ids
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = Vec::with_capacity(word.chars().count() + 1);
        syms.push(self.char_id(WORD_BOUNDARY));
        for ch in word.chars() {
            if ch == WORD_BOUNDARY {
                // reserved marker occurring literally in input
                syms.push(UNK_ID);
            } else {
                syms.push(self.char_id(ch));
            }
        }
        // Repeatedly apply the lowest-rank applicable rule at its leftmost
        // position; equivalent to replaying the rules in training order.
        loop {
            let mut best: Option<(u32, usize, u32)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                if let Some(&(rank, merged)) = self.merge_ranks.get(&(syms[i], syms[i + 1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, i, merged));
                    }
                }
            }
            match best {
                Some((_, i, merged)) => {
                    syms[i] = merged;
                    syms.remove(i + 1);
                }
                None => break,
            }
        }
        out.extend_from_slice(&syms);
    }

    fn char_id(&self, ch: char) -> u32 {
        let mut buf = [0u8; 4];
        self.token_to_id
            .get(ch.encode_utf8(&mut buf) as &str)
            .copied()
            .unwrap_or(UNK_ID)
    }

    /// Decodes token ids back to text, turning boundary markers into spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut raw = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.size(),
            })?;
            raw.push_str(tok);
        }
        let spaced: String = raw
            .chars()
            .map(|c| if c == WORD_BOUNDARY { ' ' } else { c })
            .collect();
        Ok(spaced.trim_start_matches(' ').to_string())
    }

    /// Serializes to the text vocabulary format.
    ///
    /// Line 1 is `SPVOC 1 <V>`, followed by one token per line in id order,
    /// a `#MERGES` line, and one `left<TAB>right` rule per line in
    /// application order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "SPVOC 1 {}", self.tokens.len());
        for tok in &self.tokens {
            let _ = writeln!(out, "{tok}");
        }
        let _ = writeln!(out, "#MERGES");
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l}\t{r}");
        }
        out
    }

    /// Parses the text vocabulary format produced by [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TokenizerError::Format("empty file".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("SPVOC") {
            return Err(TokenizerError::Format("missing SPVOC magic".into()));
        }
        if parts.next() != Some("1") {
            return Err(TokenizerError::Format("unsupported version".into()));
        }
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TokenizerError::Format("bad token count in header".into()))?;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| TokenizerError::Format("truncated token list".into()))?;
            tokens.push(line.to_string());
        }
        match lines.next() {
            Some("#MERGES") => {}
            _ => return Err(TokenizerError::Format("missing #MERGES section".into())),
        }
        let mut merges = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| TokenizerError::Format(format!("merge line without tab: {line:?}")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        Self::from_parts(tokens, merges)
    }

    /// Writes the vocabulary file to disk.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a vocabulary file from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

// Heap entry for the trainer: ordered by count, then lexicographically
// smallest concatenated surface, then smallest pair ids.
#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    concat: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.concat.cmp(&self.concat))
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct TrainWord {
    syms: Vec<u32>,
    count: u64,
}

/// Trains a subword vocabulary by greedy pair merging.
///
/// Merging stops once the vocabulary reaches `target_size` or no adjacent
/// pair occurs at least twice. Training is single-threaded and fully
/// deterministic for a fixed corpus: pair-frequency ties are broken by the
/// lexicographically smallest concatenated surface string.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<Vocabulary, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    // Count whole words across the normalized corpus, keeping first-seen order.
    let mut word_index: HashMap<String, usize> = HashMap::new();
    let mut word_strings: Vec<String> = Vec::new();
    let mut word_counts: Vec<u64> = Vec::new();
    for sentence in corpus {
        for word in normalize(sentence.as_ref()).split_whitespace() {
            match word_index.get(word) {
                Some(&i) => word_counts[i] += 1,
                None => {
                    word_index.insert(word.to_string(), word_strings.len());
                    word_strings.push(word.to_string());
                    word_counts.push(1);
                }
            }
        }
    }
    if word_strings.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    // Character inventory in sorted order; literal boundary markers inside
    // words stay out of the inventory and map to unk.
    let mut chars: BTreeSet<char> = BTreeSet::new();
    chars.insert(WORD_BOUNDARY);
    for word in &word_strings {
        chars.extend(word.chars().filter(|&c| c != WORD_BOUNDARY));
    }

    let minimum = chars.len() + 2;
    if target_size < minimum {
        return Err(TokenizerError::VocabTooSmall {
            requested: target_size,
            minimum,
        });
    }

    let mut tokens: Vec<String> = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut token_to_id: HashMap<String, u32> = HashMap::new();
    token_to_id.insert(PAD_TOKEN.to_string(), PAD_ID);
    token_to_id.insert(UNK_TOKEN.to_string(), UNK_ID);
    for ch in &chars {
        let id = tokens.len() as u32;
        tokens.push(ch.to_string());
        token_to_id.insert(ch.to_string(), id);
    }

    // Decompose words into symbol sequences.
    let mut words: Vec<TrainWord> = Vec::with_capacity(word_strings.len());
    for (w, &count) in word_strings.iter().zip(&word_counts) {
        let mut syms = Vec::with_capacity(w.chars().count() + 1);
        syms.push(token_to_id[&WORD_BOUNDARY.to_string()]);
        for ch in w.chars() {
            if ch == WORD_BOUNDARY {
                syms.push(UNK_ID);
            } else {
                syms.push(token_to_id[&ch.to_string()]);
            }
        }
        words.push(TrainWord { syms, count });
    }

    // Initial pair statistics. Pairs touching a special token never merge.
    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (idx, word) in words.iter().enumerate() {
        for win in word.syms.windows(2) {
            let pair = (win[0], win[1]);
            if pair.0 <= UNK_ID || pair.1 <= UNK_ID {
                continue;
            }
            *pair_counts.entry(pair).or_insert(0) += word.count;
            pair_words.entry(pair).or_default().insert(idx);
        }
    }

    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| Candidate {
            count,
            concat: concat_pair(&tokens, pair),
            pair,
        })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merge_ranks: HashMap<(u32, u32), (u32, u32)> = HashMap::new();

    while tokens.len() < target_size {
        // Pop candidates until one matches its live count.
        let pair = loop {
            let Some(cand) = heap.pop() else {
                break None;
            };
            if merge_ranks.contains_key(&cand.pair) {
                continue;
            }
            let live = pair_counts.get(&cand.pair).copied().unwrap_or(0);
            if live < 2 {
                continue;
            }
            if live != cand.count {
                heap.push(Candidate {
                    count: live,
                    concat: cand.concat,
                    pair: cand.pair,
                });
                continue;
            }
            break Some(cand.pair);
        };
        let Some(pair) = pair else { break };

        let left_str = tokens[pair.0 as usize].clone();
        let right_str = tokens[pair.1 as usize].clone();
        let merged_str = format!("{left_str}{right_str}");
        let merged_id = match token_to_id.get(&merged_str) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged_str.clone());
                token_to_id.insert(merged_str, id);
                id
            }
        };
        merge_ranks.insert(pair, (merges.len() as u32, merged_id));
        merges.push((left_str, right_str));

        // Rewrite every word containing the pair and adjust pair statistics.
        let mut affected: Vec<usize> = pair_words
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for idx in affected {
            let word = &mut words[idx];
            if !word.syms.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let count = word.count;
            for win in word.syms.windows(2) {
                let p = (win[0], win[1]);
                if p.0 <= UNK_ID || p.1 <= UNK_ID {
                    continue;
                }
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c = c.saturating_sub(count);
                }
                touched.insert(p);
            }
            let mut rewritten = Vec::with_capacity(word.syms.len());
            let mut i = 0;
            while i < word.syms.len() {
                if i + 1 < word.syms.len() && (word.syms[i], word.syms[i + 1]) == pair {
                    rewritten.push(merged_id);
                    i += 2;
                } else {
                    rewritten.push(word.syms[i]);
                    i += 1;
                }
            }
            word.syms = rewritten;
            for win in word.syms.windows(2) {
                let p = (win[0], win[1]);
                if p.0 <= UNK_ID || p.1 <= UNK_ID {
                    continue;
                }
                *pair_counts.entry(p).or_insert(0) += count;
                pair_words.entry(p).or_default().insert(idx);
                touched.insert(p);
            }
        }
        pair_counts.remove(&pair);
        for p in touched {
            if p == pair {
                continue;
            }
            let live = pair_counts.get(&p).copied().unwrap_or(0);
            if live >= 2 {
                heap.push(Candidate {
                    count: live,
                    concat: concat_pair(&tokens, p),
                    pair: p,
                });
            }
        }
    }

    Ok(Vocabulary {
        tokens,
        token_to_id,
        merges,
        merge_ranks,
    })
}

fn concat_pair(tokens: &[String], pair: (u32, u32)) -> String {
    format!("{}{}", tokens[pair.0 as usize], tokens[pair.1 as usize])
}
