//! Closed template vocabulary shared by prompts and the generation head.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const SOS: &str = "[SOS]";
pub const EOS: &str = "[EOS]";
pub const OBJECT: &str = "[object]";

/// Object classes that instances are drawn from.
pub const CLASSES: [&str; 12] = [
    "chair", "table", "lamp", "sofa", "bed", "cabinet", "shelf", "desk", "vase", "plant", "box",
    "monitor",
];

/// Background class carried by floor points.
pub const FLOOR: &str = "floor";

/// Index of the floor in the class-embedding list (after [`CLASSES`]).
pub const FLOOR_CLASS: usize = CLASSES.len();

pub const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "white", "black", "orange", "purple",
];

pub const COLOR_RGB: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.70, 0.20],
    [0.15, 0.25, 0.85],
    [0.90, 0.85, 0.15],
    [0.95, 0.95, 0.95],
    [0.08, 0.08, 0.08],
    [0.95, 0.55, 0.10],
    [0.55, 0.20, 0.70],
];

pub const FLOOR_RGB: [f64; 3] = [0.50, 0.45, 0.40];

const WORDS: [&str; 7] = ["the", "all", "how", "many", "a", "near", "nearest"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut tokens: Vec<String> = [SOS, EOS, OBJECT].iter().map(|s| s.to_string()).collect();
        tokens.extend(CLASSES.iter().map(|s| s.to_string()));
        tokens.push(FLOOR.to_string());
        tokens.extend(COLORS.iter().map(|s| s.to_string()));
        tokens.extend(WORDS.iter().map(|s| s.to_string()));
        tokens.extend((0..10).map(|d| d.to_string()));
        Self::from_tokens(tokens).expect("built-in vocabulary has unique tokens")
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate or empty token {t:?}")));
            }
        }
        for required in [SOS, EOS, OBJECT] {
            if !index.contains_key(required) {
                return Err(Error::Vocab(format!("missing {required}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Parses the one-token-per-line vocabulary file format.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownToken(format!("#{id}")))
    }

    pub fn sos(&self) -> usize {
        self.index[SOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn object_slot(&self) -> usize {
        self.index[OBJECT]
    }

    /// Token id of object class `class_id`, or the floor for [`FLOOR_CLASS`].
    pub fn class_token(&self, class_id: usize) -> usize {
        let name = CLASSES.get(class_id).copied().unwrap_or(FLOOR);
        self.index[name]
    }

    pub fn color_token(&self, color: usize) -> usize {
        self.index[COLORS[color]]
    }

    pub fn digit(&self, d: usize) -> Result<usize> {
        self.id(&d.to_string())
    }

    pub fn encode(&self, words: &str) -> Result<Vec<usize>> {
        words.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(bad) => Err(Error::UnknownToken(format!("#{bad}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_is_small_and_closed() {
        let v = Vocab::default();
        assert_eq!(v.len(), 41);
        assert_eq!(v.token(v.sos()).unwrap(), SOS);
        assert_eq!(v.token(v.class_token(FLOOR_CLASS)).unwrap(), FLOOR);
        assert_eq!(v.decode(&v.encode("how many chair").unwrap()), "how many chair");
        assert!(matches!(v.encode("the giraffe"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::default();
        assert_eq!(Vocab::parse(&v.to_file_string()).unwrap(), v);
        assert!(Vocab::parse("a\na\n").is_err());
    }
}
