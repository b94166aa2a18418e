//! Token vocabularies, greedy longest-match tokenization and the byte-prefix
//! index used to look up alternative tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub type TokenId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary has no entries")]
    Empty,
    #[error("empty token at entry {index}")]
    EmptyToken { index: usize },
    #[error("duplicate token {token:?}")]
    Duplicate { token: String },
    #[error("cannot tokenize: no token covers byte {byte:#04x} at offset {offset}")]
    Uncoverable { offset: usize, byte: u8 },
    #[error("token id {0} out of range")]
    InvalidToken(TokenId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("matched length {matched} exceeds byte length of token {token}")]
    MatchedPastEnd { token: TokenId, matched: usize },
}

/// A token id together with the number of its leading bytes already matched
/// against the committed byte string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alternative {
    pub token: TokenId,
    pub matched_len: usize,
}

pub type NodeId = usize;

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<u8, NodeId>,
    /// Token whose bytes end exactly at this node.
    terminal: Option<TokenId>,
    /// Every token whose bytes pass through or end at this node, ascending.
    tokens: Vec<TokenId>,
}

/// Byte trie over the non-EOS tokens of a vocabulary.
#[derive(Debug, Clone)]
pub struct PrefixIndex {
    nodes: Vec<TrieNode>,
}

impl PrefixIndex {
    const ROOT: NodeId = 0;

    fn build(entries: &[Vec<u8>], eos: Option<TokenId>) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (id, bytes) in entries.iter().enumerate() {
            if Some(id) == eos {
                continue;
            }
            let mut cur = Self::ROOT;
            nodes[cur].tokens.push(id);
            for &b in bytes {
                let next = match nodes[cur].children.get(&b) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[cur].children.insert(b, n);
                        n
                    }
                };
                cur = next;
                nodes[cur].tokens.push(id);
            }
            nodes[cur].terminal = Some(id);
        }
        PrefixIndex { nodes }
    }

    pub fn root(&self) -> NodeId {
        Self::ROOT
    }

    /// Node reached by walking `bytes` from the root, if any token passes through it.
    pub fn find(&self, bytes: &[u8]) -> Option<NodeId> {
        let mut cur = Self::ROOT;
        for b in bytes {
            cur = *self.nodes[cur].children.get(b)?;
        }
        Some(cur)
    }

    /// Tokens whose bytes start with the path to `node`, in ascending id order.
    pub fn tokens_at(&self, node: NodeId) -> &[TokenId] {
        &self.nodes[node].tokens
    }

    /// Length and id of the longest token that is a prefix of `bytes`.
    pub fn longest_match(&self, bytes: &[u8]) -> Option<(TokenId, usize)> {
        let mut cur = Self::ROOT;
        let mut best = None;
        for (i, b) in bytes.iter().enumerate() {
            match self.nodes[cur].children.get(b) {
                Some(&n) => cur = n,
                None => break,
            }
            if let Some(t) = self.nodes[cur].terminal {
                best = Some((t, i + 1));
            }
        }
        best
    }

    /// Every token whose bytes start with `suffix`, each tagged with
    /// `matched_len = suffix.len()`. The empty suffix yields all non-EOS tokens.
    pub fn alternatives_for_suffix(&self, suffix: &[u8]) -> Vec<Alternative> {
        match self.find(suffix) {
            Some(node) => self
                .tokens_at(node)
                .iter()
                .map(|&token| Alternative {
                    token,
                    matched_len: suffix.len(),
                })
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Immutable token table: dense ids, unique non-empty byte strings and an
/// optional out-of-band end-of-sequence token.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<Vec<u8>>,
    eos: Option<TokenId>,
    index: PrefixIndex,
    max_token_len: usize,
}

impl Vocabulary {
    /// Builds a vocabulary with ids assigned in input order. When `eos` is set
    /// the EOS token is appended with id `entries.len()`.
    pub fn new<I, B>(entries: I, eos: bool) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = B>,
        B: AsRef<[u8]>,
    {
        let mut table: Vec<Vec<u8>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (index, e) in entries.into_iter().enumerate() {
            let bytes = e.as_ref().to_vec();
            if bytes.is_empty() {
                return Err(VocabError::EmptyToken { index });
            }
            if !seen.insert(bytes.clone()) {
                return Err(VocabError::Duplicate {
                    token: escape_bytes(&bytes, false),
                });
            }
            table.push(bytes);
        }
        if table.is_empty() {
            return Err(VocabError::Empty);
        }
        let eos = if eos {
            table.push(Vec::new());
            Some(table.len() - 1)
        } else {
            None
        };
        let index = PrefixIndex::build(&table, eos);
        let max_token_len = table.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Vocabulary {
            entries: table,
            eos,
            index,
            max_token_len,
        })
    }

    /// Total number of ids, EOS included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    pub fn is_eos(&self, id: TokenId) -> bool {
        self.eos == Some(id)
    }

    pub fn max_token_len(&self) -> usize {
        self.max_token_len
    }

    /// Byte expansion of a token; EOS expands to the empty string.
    pub fn bytes(&self, id: TokenId) -> &[u8] {
        &self.entries[id]
    }

    pub fn try_bytes(&self, id: TokenId) -> Result<&[u8], VocabError> {
        self.entries
            .get(id)
            .map(Vec::as_slice)
            .ok_or(VocabError::InvalidToken(id))
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        if bytes.is_empty() {
            return None;
        }
        let node = self.index.find(bytes)?;
        self.index.nodes[node].terminal
    }

    pub fn index(&self) -> &PrefixIndex {
        &self.index
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.entries.iter().enumerate().map(|(i, b)| (i, b.as_slice()))
    }

    /// Greedy longest-match, left to right.
    pub fn tokenize(&self, bytes: &[u8]) -> Result<MainSequence, VocabError> {
        let mut token_ids = Vec::new();
        let mut boundary_offsets = Vec::new();
        let mut offset = 0;
        while offset < bytes.len() {
            match self.index.longest_match(&bytes[offset..]) {
                Some((id, len)) => {
                    token_ids.push(id);
                    boundary_offsets.push(offset);
                    offset += len;
                }
                None => {
                    return Err(VocabError::Uncoverable {
                        offset,
                        byte: bytes[offset],
                    })
                }
            }
        }
        Ok(MainSequence {
            token_ids,
            boundary_offsets,
            source_bytes: bytes.to_vec(),
        })
    }

    pub fn alternatives_for_suffix(&self, suffix: &[u8]) -> Vec<Alternative> {
        self.index.alternatives_for_suffix(suffix)
    }

    /// Concatenated bytes of a token sequence (EOS contributes nothing).
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.try_bytes(id)?);
        }
        Ok(out)
    }

    /// Reads the line-oriented vocabulary format: one escaped token per line,
    /// `#eos` declares the EOS token, other lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut entries = Vec::new();
        let mut eos = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            if line == "#eos" {
                eos = true;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let bytes = unescape_bytes(line).map_err(|message| VocabError::Parse { line: n + 1, message })?;
            entries.push(bytes);
        }
        Vocabulary::new(entries, eos)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Vocabulary::parse(&text)
    }

    /// Inverse of [`Vocabulary::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, bytes) in self.iter() {
            if self.is_eos(id) {
                continue;
            }
            out.push_str(&escape_bytes(bytes, false));
            out.push('\n');
        }
        if self.eos.is_some() {
            out.push_str("#eos\n");
        }
        out
    }

    /// Human-readable token label: escaped bytes, or `#eos`.
    pub fn label(&self, id: TokenId) -> String {
        if self.is_eos(id) {
            "#eos".to_string()
        } else {
            escape_bytes(self.bytes(id), true)
        }
    }
}

/// Deterministic tokenization of a byte string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainSequence {
    pub token_ids: Vec<TokenId>,
    /// Byte offset where each token starts.
    pub boundary_offsets: Vec<usize>,
    pub source_bytes: Vec<u8>,
}

impl MainSequence {
    pub fn empty() -> Self {
        MainSequence {
            token_ids: Vec::new(),
            boundary_offsets: Vec::new(),
            source_bytes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Byte offset of depth `s`: the start of token `s`, or the end of the
    /// source for `s == len()`.
    pub fn offset(&self, depth: usize) -> usize {
        if depth < self.boundary_offsets.len() {
            self.boundary_offsets[depth]
        } else {
            self.source_bytes.len()
        }
    }

    /// Remaining bytes after the first `depth` tokens.
    pub fn suffix(&self, depth: usize) -> &[u8] {
        &self.source_bytes[self.offset(depth)..]
    }

    /// Byte length of the final token, zero for an empty sequence.
    pub fn last_token_len(&self) -> usize {
        match self.boundary_offsets.last() {
            Some(&start) => self.source_bytes.len() - start,
            None => 0,
        }
    }
}

/// Result of routing token mass to the byte that follows the matched prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NextByteMass {
    pub buckets: BTreeMap<u8, f64>,
    /// Mass of tokens that end exactly at the matched length.
    pub exact_mass: f64,
}

impl NextByteMass {
    pub fn total(&self) -> f64 {
        self.buckets.values().sum::<f64>() + self.exact_mass
    }
}

/// Groups weighted alternatives by the byte each one proposes next.
///
/// A member whose bytes extend past `matched_len` adds its weight to the bucket
/// of `bytes[matched_len]`; a member ending exactly there adds to `exact_mass`.
pub fn group_by_next_byte(
    vocab: &Vocabulary,
    members: &[Alternative],
    weights: &[f64],
) -> Result<NextByteMass, VocabError> {
    assert_eq!(members.len(), weights.len(), "one weight per member");
    let mut out = NextByteMass::default();
    for (alt, &w) in members.iter().zip(weights) {
        let bytes = vocab.try_bytes(alt.token)?;
        match bytes.len().cmp(&alt.matched_len) {
            std::cmp::Ordering::Greater => {
                *out.buckets.entry(bytes[alt.matched_len]).or_insert(0.0) += w;
            }
            std::cmp::Ordering::Equal => out.exact_mass += w,
            std::cmp::Ordering::Less => {
                return Err(VocabError::MatchedPastEnd {
                    token: alt.token,
                    matched: alt.matched_len,
                })
            }
        }
    }
    Ok(out)
}

/// Escapes bytes for the line formats: `\\`, `\xNN` for anything outside
/// printable ASCII and for `#`. Spaces are escaped only when `escape_space`.
pub fn escape_bytes(bytes: &[u8], escape_space: bool) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'#' => out.push_str("\\x23"),
            b' ' if !escape_space => out.push(' '),
            0x21..=0x7e => out.push(b as char),
            _ => {
                use fmt::Write;
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

pub fn unescape_bytes(text: &str) -> Result<Vec<u8>, String> {
    let raw = text.as_bytes();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        if raw[i] != b'\\' {
            out.push(raw[i]);
            i += 1;
            continue;
        }
        match raw.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b'n') => {
                out.push(b'\n');
                i += 2;
            }
            Some(b't') => {
                out.push(b'\t');
                i += 2;
            }
            Some(b'x') => {
                let hex = raw
                    .get(i + 2..i + 4)
                    .and_then(|h| std::str::from_utf8(h).ok())
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                    .ok_or_else(|| format!("bad \\x escape in {text:?}"))?;
                out.push(hex);
                i += 4;
            }
            _ => return Err(format!("bad escape in {text:?}")),
        }
    }
    Ok(out)
}
