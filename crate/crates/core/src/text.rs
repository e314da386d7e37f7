//! Character sets with diacritics, transcript normalization, and the
//! transcript <-> label-id mapping.
//!
//! Tokenization is by extended grapheme cluster, so a base letter carrying
//! combining marks (`ɔ́`, `ɛ̃`) is a single output class.
//!
//! Charset files are UTF-8 with one symbol per line. The first symbol line
//! must be the literal `<blank>`; lines starting with `#` are comments. A
//! line holding a single space is the space symbol.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, IoContext, Result};

pub const BLANK_TOKEN: &str = "<blank>";

/// Canonical composition, lowercase, single-space separated, trimmed.
pub fn normalize_text(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let lowered: String = composed.to_lowercase().nfc().collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn graphemes(text: &str) -> Vec<&str> {
    text.graphemes(true).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSet {
    symbols: Vec<String>,
    index_of: HashMap<String, usize>,
}

impl CharSet {
    /// Index of the blank symbol.
    pub const BLANK: usize = 0;

    /// Builds a charset from non-blank symbols; blank is prepended at index 0.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all = vec![BLANK_TOKEN.to_string()];
        all.extend(symbols.into_iter().map(|s| s.as_ref().nfc().collect::<String>()));
        let mut index_of = HashMap::with_capacity(all.len());
        for (i, sym) in all.iter().enumerate() {
            if sym.is_empty() {
                return Err(Error::Charset(format!("empty symbol at index {i}")));
            }
            if i > 0 && sym == BLANK_TOKEN {
                return Err(Error::Charset("blank declared more than once".into()));
            }
            if i > 0 && sym.graphemes(true).count() != 1 {
                return Err(Error::Charset(format!(
                    "symbol {sym:?} is not a single grapheme cluster"
                )));
            }
            if index_of.insert(sym.clone(), i).is_some() {
                return Err(Error::Charset(format!("duplicate symbol {sym:?}")));
            }
        }
        Ok(Self {
            symbols: all,
            index_of,
        })
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut lines = content
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .filter(|l| !l.starts_with('#') && !l.is_empty());
        match lines.next() {
            Some(BLANK_TOKEN) => {}
            Some(other) => {
                return Err(Error::Charset(format!(
                    "first symbol line must be {BLANK_TOKEN}, found {other:?}"
                )))
            }
            None => return Err(Error::Charset("charset is empty".into())),
        }
        Self::from_symbols(lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_path(path)?;
        let content = String::from_utf8(bytes).map_err(|e| {
            Error::Charset(format!("{} is not valid UTF-8: {e}", path.display()))
        })?;
        Self::parse(&content)
    }

    /// The file form of this charset; `parse(to_file_string())` is the identity.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for sym in &self.symbols {
            s.push_str(sym);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index_of.get(symbol).copied()
    }

    /// Hex SHA-256 over the symbols in index order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for sym in &self.symbols {
            h.update(sym.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// Maps each grapheme of already-normalized text to its index.
    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        text.graphemes(true)
            .enumerate()
            .map(|(position, g)| match self.index_of(g) {
                Some(i) if i != Self::BLANK => Ok(i),
                _ => Err(Error::UnknownGrapheme {
                    grapheme: g.to_string(),
                    position,
                }),
            })
            .collect::<Result<_>>()
            .map(LabelSequence)
    }

    /// Wraps ids, checking they are in range and not blank.
    pub fn labels(&self, ids: Vec<usize>) -> Result<LabelSequence> {
        for &id in &ids {
            if id == Self::BLANK || id >= self.len() {
                return Err(Error::LabelOutOfRange {
                    id,
                    size: self.len(),
                });
            }
        }
        Ok(LabelSequence(ids))
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let sym = self.symbols.get(id).ok_or(Error::LabelOutOfRange {
                id,
                size: self.len(),
            })?;
            out.push_str(sym);
        }
        Ok(out)
    }
}

pub fn encode(text: &str, cs: &CharSet) -> Result<LabelSequence> {
    cs.encode(text)
}

pub fn decode_text(ids: &LabelSequence, cs: &CharSet) -> Result<String> {
    cs.decode(ids.ids())
}

pub fn load_charset(path: &Path) -> Result<CharSet> {
    CharSet::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FON: &str = include_str!("../charsets/fon.txt");
    const IGBO: &str = include_str!("../charsets/igbo.txt");

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  A  B "), "a b");
        assert_eq!(normalize_text("e\u{301}"), "\u{e9}");
        assert_eq!(normalize_text("\tÉ\n\nkpɛ "), "é kpɛ");
    }

    #[test]
    fn fon_charset_contents() {
        let cs = CharSet::parse(FON).unwrap();
        for c in 'a'..='z' {
            assert!(cs.index_of(&c.to_string()).is_some(), "{c}");
        }
        for sym in [
            "à", "á", "ā", "ă", "è", "é", "ē", "ĕ", "ì", "í", "î", "ï", "ĭ", "ó", "ŏ", "ò",
            "ū", "ŭ", "ù", "ú", "ɔ", "ɔ́", "ɔ̀", "ɔ̆", "ɖ", "ɛ", "ɛ̀", "ɛ́", "ɛ̆", "ɛ̃", ".",
            "'", ",", " ",
        ] {
            let n: String = sym.nfc().collect();
            assert!(cs.index_of(&n).is_some(), "{sym:?}");
        }
        assert_eq!(cs.symbol(0), Some(BLANK_TOKEN));
        assert_eq!(cs.len(), 61);
    }

    #[test]
    fn igbo_charset_contents() {
        let cs = CharSet::parse(IGBO).unwrap();
        assert_eq!(cs.len(), 31);
        for sym in [".", "'", ",", " ", "a", "z"] {
            assert!(cs.index_of(sym).is_some());
        }
    }

    #[test]
    fn fon_target_encoding() {
        let cs = CharSet::parse(FON).unwrap();
        let ids = cs.encode(&normalize_text("e kpo kpɛɖe")).unwrap();
        assert_eq!(ids.ids(), &[9, 1, 15, 20, 19, 1, 15, 20, 56, 55, 9]);
        assert_eq!(cs.decode(ids.ids()).unwrap(), "e kpo kpɛɖe");
    }

    #[test]
    fn combining_marks_are_one_class() {
        let cs = CharSet::parse(FON).unwrap();
        let ids = cs.encode("ɔ́ɛ̃").unwrap();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn empty_text() {
        let cs = CharSet::parse(IGBO).unwrap();
        assert!(cs.encode("").unwrap().is_empty());
        assert_eq!(cs.decode(&[]).unwrap(), "");
    }

    #[test]
    fn unknown_grapheme_reports_position() {
        let cs = CharSet::parse(IGBO).unwrap();
        match cs.encode("ab\u{e9}c") {
            Err(Error::UnknownGrapheme { grapheme, position }) => {
                assert_eq!(grapheme, "\u{e9}");
                assert_eq!(position, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cs.encode(BLANK_TOKEN).is_err());
    }

    #[test]
    fn decode_out_of_range() {
        let cs = CharSet::parse(IGBO).unwrap();
        assert!(matches!(
            cs.decode(&[cs.len()]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn duplicate_and_malformed_files() {
        assert!(CharSet::parse("<blank>\na\nb\na\n").is_err());
        assert!(CharSet::parse("a\nb\n").is_err());
        assert!(CharSet::parse("<blank>\nab\n").is_err());
        assert!(CharSet::parse("<blank>\na\n<blank>\n").is_err());
        let cs = CharSet::parse("# comment\n<blank>\n \na\n#x\n").unwrap();
        assert_eq!(cs.symbols(), &["<blank>", " ", "a"]);
    }

    #[test]
    fn invalid_utf8_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cs.txt");
        std::fs::write(&path, b"<blank>\n\xff\xfe\n").unwrap();
        assert!(matches!(CharSet::load(&path), Err(Error::Charset(_))));
    }

    #[test]
    fn file_order_is_stable() {
        let cs = CharSet::parse(FON).unwrap();
        let again = CharSet::parse(&cs.to_file_string()).unwrap();
        assert_eq!(cs, again);
        assert_eq!(cs.hash(), again.hash());
        assert_ne!(cs.hash(), CharSet::parse(IGBO).unwrap().hash());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(idx in proptest::collection::vec(1usize..61, 0..30)) {
            let cs = CharSet::parse(FON).unwrap();
            let text = cs.decode(&idx).unwrap();
            let ids = cs.encode(&text).unwrap();
            prop_assert_eq!(ids.ids(), &idx[..]);
            prop_assert_eq!(cs.decode(ids.ids()).unwrap(), text);
        }

        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}
