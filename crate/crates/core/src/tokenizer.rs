//! Word tokenization and a greedy longest-match subword scheme.
//!
//! Human highlights live at word granularity while the model consumes
//! subwords. Every [`TokenSequence`] therefore carries the word → subword
//! alignment that lets attention move between the two.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CLS_TOKEN: &str = "[CLS]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const DEFAULT_MARKER: &str = "##";

/// Word-level tokenizer: whitespace split, with leading and trailing
/// punctuation peeled off into one token per character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordTokenizer {
    pub lowercase: bool,
}

impl Default for WordTokenizer {
    fn default() -> Self {
        WordTokenizer { lowercase: true }
    }
}

impl WordTokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut words = Vec::new();
        for chunk in text.split_whitespace() {
            let chars: Vec<char> = chunk.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            while start < end && is_punct(chars[start]) {
                start += 1;
            }
            while end > start && is_punct(chars[end - 1]) {
                end -= 1;
            }
            for &c in &chars[..start] {
                words.push(self.normalize(&c.to_string()));
            }
            if start < end {
                let core: String = chars[start..end].iter().collect();
                words.push(self.normalize(&core));
            }
            for &c in &chars[end..] {
                words.push(self.normalize(&c.to_string()));
            }
        }
        words
    }

    fn normalize(&self, s: &str) -> String {
        if self.lowercase {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Lowercased word tokenization; the granularity highlight indices refer to.
pub fn word_tokenize(text: &str) -> Vec<String> {
    WordTokenizer::default().tokenize(text)
}

/// Ids of the reserved tokens. They always occupy the first three slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: u32,
    pub pad: u32,
    pub unk: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    marker: String,
    special: SpecialIds,
}

impl SubwordVocab {
    /// Build a vocabulary from an ordered entry list. The first three entries
    /// must be the classifier, padding and unknown tokens.
    pub fn from_entries(entries: Vec<String>, marker: &str) -> Result<Self> {
        if entries.len() < 3
            || entries[0] != CLS_TOKEN
            || entries[1] != PAD_TOKEN
            || entries[2] != UNK_TOKEN
        {
            return Err(Error::Vocab(format!(
                "first entries must be {CLS_TOKEN}, {PAD_TOKEN}, {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (id, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), id as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate entry {e:?}")));
            }
        }
        Ok(SubwordVocab {
            entries,
            index,
            marker: marker.to_string(),
            special: SpecialIds {
                cls: 0,
                pad: 1,
                unk: 2,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Characters with a word-initial single-character entry.
    pub fn charset(&self) -> BTreeSet<char> {
        self.entries[3..]
            .iter()
            .filter_map(|e| {
                let mut it = e.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect()
    }

    /// Header line followed by one entry per line; the entry on line `k + 2`
    /// (1-based) has id `k`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "#humal-vocab v1 marker={} cls={} pad={} unk={}",
            self.marker, self.special.cls, self.special.pad, self.special.unk
        )?;
        for e in &self.entries {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Vocab("empty vocab file".into()))??;
        let mut marker = None;
        let mut ids = [None; 3];
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#humal-vocab") || fields.next() != Some("v1") {
            return Err(Error::Vocab(format!("bad vocab header: {header:?}")));
        }
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Vocab(format!("bad header field {field:?}")))?;
            let parse = |v: &str| {
                v.parse::<u32>()
                    .map_err(|_| Error::Vocab(format!("bad id in header field {field:?}")))
            };
            match k {
                "marker" => marker = Some(v.to_string()),
                "cls" => ids[0] = Some(parse(v)?),
                "pad" => ids[1] = Some(parse(v)?),
                "unk" => ids[2] = Some(parse(v)?),
                _ => return Err(Error::Vocab(format!("unknown header field {k:?}"))),
            }
        }
        if ids != [Some(0), Some(1), Some(2)] {
            return Err(Error::Vocab("special ids must be cls=0 pad=1 unk=2".into()));
        }
        let marker = marker.ok_or_else(|| Error::Vocab("header lacks marker".into()))?;
        let entries = lines.collect::<std::io::Result<Vec<_>>>()?;
        Self::from_entries(entries, &marker)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Learn a subword vocabulary by repeatedly merging the most frequent
/// adjacent piece pair.
///
/// `target_size` counts base symbols: the number of distinct characters plus
/// the number of merged pieces. `target_size` equal to the charset size gives
/// a pure character vocabulary. Frequency ties are broken by first occurrence
/// in a seed-dependent shuffle of the distinct words.
pub fn train_vocab<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    seed: u64,
) -> Result<SubwordVocab> {
    train_vocab_with_marker(corpus, target_size, seed, DEFAULT_MARKER)
}

pub fn train_vocab_with_marker<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    seed: u64,
    marker: &str,
) -> Result<SubwordVocab> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for w in corpus {
        *freq.entry(w.as_ref()).or_insert(0) += 1;
    }
    let mut words: Vec<(&str, u64)> = freq.into_iter().collect();
    words.sort_unstable();
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let charset: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    if target_size < charset.len() {
        return Err(Error::Vocab(format!(
            "target size {target_size} is smaller than the charset size {}",
            charset.len()
        )));
    }

    // Pieces per word; continuation pieces carry the marker.
    let mut pieces: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|(w, f)| {
            let p = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{marker}{c}")
                    }
                })
                .collect();
            (p, *f)
        })
        .collect();

    let mut merged: Vec<String> = Vec::new();
    let mut known: BTreeSet<String> = BTreeSet::new();
    while charset.len() + merged.len() < target_size {
        // (count, first-seen rank) per pair
        let mut counts: HashMap<(&str, &str), (u64, usize)> = HashMap::new();
        let mut rank = 0usize;
        for (p, f) in &pieces {
            for pair in p.windows(2) {
                let e = counts
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert((0, rank));
                e.0 += f;
                rank += 1;
            }
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(&(a, b), _)| (a.to_string(), b.to_string()));
        let Some((left, right)) = best else { break };
        let joined = format!("{left}{}", right.strip_prefix(marker).unwrap_or(&right));
        for (p, _) in pieces.iter_mut() {
            let mut i = 0;
            let mut out = Vec::with_capacity(p.len());
            while i < p.len() {
                if i + 1 < p.len() && p[i] == left && p[i + 1] == right {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut p[i]));
                    i += 1;
                }
            }
            *p = out;
        }
        if known.insert(joined.clone()) {
            merged.push(joined);
        }
    }

    let mut entries = vec![
        CLS_TOKEN.to_string(),
        PAD_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    for c in &charset {
        entries.push(c.to_string());
    }
    for c in &charset {
        entries.push(format!("{marker}{c}"));
    }
    for m in merged {
        if !entries.contains(&m) {
            entries.push(m);
        }
    }
    SubwordVocab::from_entries(entries, marker)
}

/// Subword tokens of one document, with the classifier token at position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    /// `word_alignment[w]` is the token range of word `w`.
    pub word_alignment: Vec<Range<usize>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_alignment.len()
    }

    /// Drop whole trailing words until the sequence fits in `max_len` tokens.
    pub fn truncate(&mut self, max_len: usize) {
        while self.len() > max_len {
            match self.word_alignment.pop() {
                Some(r) => {
                    self.tokens.truncate(r.start);
                    self.ids.truncate(r.start);
                }
                None => {
                    self.tokens.truncate(max_len);
                    self.ids.truncate(max_len);
                }
            }
        }
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tokens.join(" "))
    }
}

/// Greedy longest-match, left to right within each word. Characters outside
/// the vocabulary become the unknown token.
pub fn subword_tokenize<S: AsRef<str>>(words: &[S], vocab: &SubwordVocab) -> TokenSequence {
    let special = vocab.special();
    let mut tokens = vec![CLS_TOKEN.to_string()];
    let mut ids = vec![special.cls];
    let mut word_alignment = Vec::with_capacity(words.len());
    let marker = vocab.marker();
    let mut buf = String::new();
    for word in words {
        let word = word.as_ref();
        let start_tok = tokens.len();
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let lo = chars[start].0;
                let hi = chars.get(end).map_or(word.len(), |c| c.0);
                buf.clear();
                if start > 0 {
                    buf.push_str(marker);
                }
                buf.push_str(&word[lo..hi]);
                if let Some(id) = vocab.id(&buf) {
                    found = Some((end, id));
                    break;
                }
            }
            match found {
                Some((end, id)) => {
                    tokens.push(buf.clone());
                    ids.push(id);
                    start = end;
                }
                None => {
                    log::warn!(
                        "character {:?} in {word:?} is outside the vocabulary",
                        chars[start].1
                    );
                    tokens.push(UNK_TOKEN.to_string());
                    ids.push(special.unk);
                    start += 1;
                }
            }
        }
        if tokens.len() == start_tok {
            // empty word; keep the partition property with an unknown token
            tokens.push(UNK_TOKEN.to_string());
            ids.push(special.unk);
        }
        word_alignment.push(start_tok..tokens.len());
    }
    TokenSequence {
        tokens,
        ids,
        word_alignment,
    }
}
