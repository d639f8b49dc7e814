//! Word-level tokenizer and vocabulary.
//!
//! Text is lowercased and split into runs of alphanumeric characters; every
//! other non-whitespace character is a token of its own. Character offsets
//! are counted in `char`s, not bytes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;
pub const ENTITY: u32 = 5;
pub const HEAD: u32 = 6;
pub const TAIL: u32 = 7;

pub const RESERVED: [&str; 8] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]", "[MASK]", "[ENTITY]", "[HEAD]", "[TAIL]"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Entity typing: multi-label over a marked target mention.
    Typing,
    /// Relation classification between a head and a tail mention.
    Relation,
    /// Single-label sentence classification.
    Sentence,
}

/// Half-open character span `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: CharSpan,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(current),
                span: CharSpan::new(start, end),
            });
        }
    };
    let mut len = 0;
    for (i, ch) in text.chars().enumerate() {
        len = i + 1;
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, start, i, &mut tokens);
            if !ch.is_whitespace() {
                tokens.push(Token {
                    text: ch.to_lowercase().collect(),
                    span: CharSpan::new(i, i + 1),
                });
            }
        }
    }
    flush(&mut current, start, len, &mut tokens);
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Ranks corpus tokens by frequency (ties lexicographic) after the
    /// reserved tokens; keeps at most `max_size` entries in total.
    pub fn build<'a, I>(corpus: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size <= RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary size must exceed {} reserved tokens, got {max_size}",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines = 0;
        for line in corpus {
            lines += 1;
            for tok in tokenize(line) {
                *counts.entry(tok.text).or_default() += 1;
            }
        }
        if lines == 0 || counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(t, _)| !RESERVED.contains(&t.as_str())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Parses the one-token-per-line format; the reserved tokens must open the file.
    pub fn parse(contents: &str) -> Result<Self> {
        let tokens: Vec<String> = contents.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Format("vocab file must start with the 8 reserved tokens".into()));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Format("vocab file contains duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or("[UNK]").to_string()).collect()
    }

    /// `[CLS] tokens [SEP]` truncated and zero-padded to exactly `len` ids.
    pub fn encode_plain(&self, text: &str, len: usize) -> Vec<u32> {
        let mut ids = vec![CLS];
        ids.extend(tokenize(text).iter().map(|t| self.id(&t.text)).take(len.saturating_sub(2)));
        ids.push(SEP);
        ids.truncate(len);
        ids.resize(len, PAD);
        ids
    }

    /// Encodes `text` for a task, inserting the marker tokens around the
    /// target mention(s).
    ///
    /// Typing uses `mentions[0]` as the target; relation uses `mentions[0]`
    /// as head and `mentions[1]` as tail; sentence tasks ignore mentions.
    pub fn encode(&self, text: &str, mentions: &[CharSpan], kind: TaskKind, max_len: usize) -> Result<TokenizedExample> {
        if max_len < 3 {
            return Err(Error::Config(format!("maximum text length {max_len} is too small")));
        }
        let text_len = text.chars().count();
        for (i, m) in mentions.iter().enumerate() {
            if m.start >= m.end || m.end > text_len {
                return Err(Error::InvalidSpan {
                    start: m.start,
                    end: m.end,
                    len: text_len,
                });
            }
            if mentions[..i].iter().any(|o| o.overlaps(m)) {
                return Err(Error::InvalidSpan {
                    start: m.start,
                    end: m.end,
                    len: text_len,
                });
            }
        }
        let needed = match kind {
            TaskKind::Typing => 1,
            TaskKind::Relation => 2,
            TaskKind::Sentence => 0,
        };
        if mentions.len() < needed {
            return Err(Error::InvalidArgument {
                op: "encode",
                msg: format!("{kind:?} task needs {needed} mention(s), got {}", mentions.len()),
            });
        }
        let tokens = tokenize(text);
        let markers: Vec<(CharSpan, u32)> = match kind {
            TaskKind::Typing => vec![(mentions[0], ENTITY)],
            TaskKind::Relation => vec![(mentions[0], HEAD), (mentions[1], TAIL)],
            TaskKind::Sentence => vec![],
        };
        // token range [first, last] covered by each marked span
        let mut bounds = Vec::with_capacity(markers.len());
        for &(span, marker) in &markers {
            let covered: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.span.overlaps(&span))
                .map(|(i, _)| i)
                .collect();
            let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
                return Err(Error::InvalidSpan {
                    start: span.start,
                    end: span.end,
                    len: text_len,
                });
            };
            bounds.push((first, last, marker, span));
        }

        let mut ids = vec![CLS];
        let mut token_pos = vec![None; tokens.len()];
        let mut marker_pos: Vec<(u32, usize)> = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            for &(first, _, marker, _) in &bounds {
                if first == i {
                    marker_pos.push((marker, ids.len()));
                    ids.push(marker);
                }
            }
            token_pos[i] = Some(ids.len());
            ids.push(self.id(&tok.text));
            for &(_, last, marker, _) in &bounds {
                if last == i {
                    marker_pos.push((marker, ids.len()));
                    ids.push(marker);
                }
            }
        }

        // leftmost window: [CLS] + content truncated to max_len - 1, then [SEP]
        let content_limit = max_len - 1;
        if ids.len() > content_limit {
            ids.truncate(content_limit);
        }
        let last_marker = marker_pos.iter().map(|&(_, p)| p).max();
        if let Some(p) = last_marker {
            if p >= ids.len() {
                let span = bounds.iter().map(|b| b.3).max_by_key(|s| s.end).expect("markers imply spans");
                return Err(Error::Truncation {
                    start: span.start,
                    end: span.end,
                    max_len,
                });
            }
        }
        ids.push(SEP);
        let length = ids.len();
        ids.resize(max_len, PAD);

        let mut char_to_token = vec![None; text_len];
        for (tok, pos) in tokens.iter().zip(&token_pos) {
            if let Some(p) = pos.filter(|&p| p < length - 1) {
                char_to_token[tok.span.start..tok.span.end].fill(Some(p));
            }
        }
        let first_of = |m: u32| marker_pos.iter().find(|&&(k, _)| k == m).map(|&(_, p)| p);
        Ok(TokenizedExample {
            token_ids: ids,
            length,
            char_to_token,
            special: SpecialPositions {
                cls: 0,
                entity: first_of(ENTITY),
                head: first_of(HEAD),
                tail: first_of(TAIL),
            },
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpecialPositions {
    pub cls: usize,
    pub entity: Option<usize>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    /// Exactly `max_len` ids, zero-padded.
    pub token_ids: Vec<u32>,
    /// Number of non-padding ids.
    pub length: usize,
    /// Sequence position of the token covering each character, if kept.
    pub char_to_token: Vec<Option<usize>>,
    pub special: SpecialPositions,
}

impl TokenizedExample {
    pub fn padding_mask(&self) -> Vec<bool> {
        (0..self.token_ids.len()).map(|i| i >= self.length).collect()
    }
}
