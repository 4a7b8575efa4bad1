//! Referring-phrase tokenization and spatial descriptor extraction.
//!
//! A phrase like "cup at the bottom right of the table" is split into
//! lowercase tokens and scanned against a directional vocabulary. Adjacent
//! orthogonal directions ("bottom right") merge greedily into a composite
//! term before single directions are considered.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Cardinal or central image direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Top,
    Bottom,
    Center,
}

impl Direction {
    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::Left | Direction::Right)
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Top | Direction::Bottom)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Top => "top",
            Direction::Bottom => "bottom",
            Direction::Center => "center",
        }
    }

    fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "left" => Some(Direction::Left),
            "right" => Some(Direction::Right),
            "top" => Some(Direction::Top),
            "bottom" => Some(Direction::Bottom),
            "center" => Some(Direction::Center),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Spatial descriptor extracted from a phrase: a single direction, or a
/// composite of one vertical and one horizontal direction. Composites are
/// stored vertical-first regardless of the order spoken ("left top" and
/// "top left" are the same term).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpatialTerm {
    Single(Direction),
    Composite { vertical: Direction, horizontal: Direction },
}

impl SpatialTerm {
    /// Build a composite from two orthogonal directions in either order.
    pub fn composite(a: Direction, b: Direction) -> Option<Self> {
        match (a, b) {
            (v, h) if v.is_vertical() && h.is_horizontal() => {
                Some(SpatialTerm::Composite { vertical: v, horizontal: h })
            }
            (h, v) if h.is_horizontal() && v.is_vertical() => {
                Some(SpatialTerm::Composite { vertical: v, horizontal: h })
            }
            _ => None,
        }
    }

    /// The base directions this term contributes to a prior field.
    pub fn directions(&self) -> Vec<Direction> {
        match self {
            SpatialTerm::Single(d) => vec![*d],
            SpatialTerm::Composite { vertical, horizontal } => vec![*vertical, *horizontal],
        }
    }
}

impl fmt::Display for SpatialTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialTerm::Single(d) => write!(f, "{d}"),
            SpatialTerm::Composite { vertical, horizontal } => {
                write!(f, "{vertical} {horizontal}")
            }
        }
    }
}

/// Tokenized referring phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    pub raw: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhraseError {
    /// No tokens survive normalization.
    EmptyPhrase,
    /// Malformed vocabulary configuration line.
    BadConfig { line: usize, message: String },
}

impl fmt::Display for PhraseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyPhrase => f.write_str("phrase contains no tokens"),
            Self::BadConfig { line, message } => {
                write!(f, "vocabulary config line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for PhraseError {}

/// Lowercase and split on any non-alphanumeric character, so hyphens and
/// punctuation act as separators.
pub fn tokenize(raw: &str) -> Result<Phrase, PhraseError> {
    let tokens: Vec<String> = raw
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    if tokens.is_empty() {
        return Err(PhraseError::EmptyPhrase);
    }
    Ok(Phrase { raw: raw.to_owned(), tokens })
}

/// Directional vocabulary: base keywords plus a synonym table mapping extra
/// surface forms onto base directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialVocab {
    synonyms: BTreeMap<String, Direction>,
}

impl Default for SpatialVocab {
    fn default() -> Self {
        let mut synonyms = BTreeMap::new();
        for d in [
            Direction::Left,
            Direction::Right,
            Direction::Top,
            Direction::Bottom,
            Direction::Center,
        ] {
            synonyms.insert(d.keyword().to_owned(), d);
        }
        for (word, dir) in [
            ("leftmost", Direction::Left),
            ("rightmost", Direction::Right),
            ("upper", Direction::Top),
            ("uppermost", Direction::Top),
            ("lower", Direction::Bottom),
            ("lowest", Direction::Bottom),
            ("middle", Direction::Center),
        ] {
            synonyms.insert(word.to_owned(), dir);
        }
        Self { synonyms }
    }
}

impl SpatialVocab {
    /// Parse a plain key-value config. Lines are `word = direction`; blank
    /// lines and `#` comments are ignored. Entries replace the defaults for
    /// that word; the five base keywords stay resolvable unless remapped.
    pub fn from_config_str(config: &str) -> Result<Self, PhraseError> {
        let mut vocab = SpatialVocab::default();
        for (idx, raw_line) in config.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, dir) = line.split_once('=').ok_or_else(|| PhraseError::BadConfig {
                line: idx + 1,
                message: format!("expected `word = direction`, got `{line}`"),
            })?;
            let word = word.trim().to_lowercase();
            let dir = dir.trim().to_lowercase();
            if word.is_empty() {
                return Err(PhraseError::BadConfig {
                    line: idx + 1,
                    message: "empty word".to_owned(),
                });
            }
            let direction =
                Direction::from_keyword(&dir).ok_or_else(|| PhraseError::BadConfig {
                    line: idx + 1,
                    message: format!("unknown direction `{dir}`"),
                })?;
            vocab.synonyms.insert(word, direction);
        }
        Ok(vocab)
    }

    pub fn resolve(&self, token: &str) -> Option<Direction> {
        self.synonyms.get(token).copied()
    }
}

/// Extract spatial descriptors from a phrase using the default vocabulary.
pub fn extract_spatial_terms(phrase: &Phrase) -> Vec<SpatialTerm> {
    extract_spatial_terms_with(phrase, &SpatialVocab::default())
}

/// Extract spatial descriptors in document order, de-duplicated. Adjacent
/// orthogonal directions merge into a composite before either is considered
/// as a single term.
pub fn extract_spatial_terms_with(phrase: &Phrase, vocab: &SpatialVocab) -> Vec<SpatialTerm> {
    let dirs: Vec<Option<Direction>> =
        phrase.tokens.iter().map(|t| vocab.resolve(t)).collect();
    let mut terms = Vec::new();
    let mut i = 0;
    while i < dirs.len() {
        match dirs[i] {
            Some(d1) => {
                if let Some(d2) = dirs.get(i + 1).copied().flatten() {
                    if let Some(comp) = SpatialTerm::composite(d1, d2) {
                        push_unique(&mut terms, comp);
                        i += 2;
                        continue;
                    }
                }
                push_unique(&mut terms, SpatialTerm::Single(d1));
                i += 1;
            }
            None => i += 1,
        }
    }
    terms
}

fn push_unique(terms: &mut Vec<SpatialTerm>, term: SpatialTerm) {
    if !terms.contains(&term) {
        terms.push(term);
    }
}

/// Parse a free-form term string like "bottom left" or "top" into terms,
/// using the default vocabulary. Convenience for CLI flags.
pub fn parse_terms(text: &str) -> Result<Vec<SpatialTerm>, PhraseError> {
    let phrase = tokenize(text)?;
    Ok(extract_spatial_terms(&phrase))
}
