use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::CanonicalRequest;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: usize = 4;

pub const VOCAB_FILE_VERSION: u32 = 1;

/// Character vocabulary. Ids `0..4` are PAD, SOS, EOS, UNK; characters
/// follow densely.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    ids: HashMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    chars: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary over exactly `chars`, in id order.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if ids.insert(c, (i + RESERVED) as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {c:?}")));
            }
        }
        Ok(Vocabulary { chars, ids })
    }

    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED
    }

    /// The characters in id order (excluding reserved ids).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id_of(&self, c: char) -> u32 {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize)
            .checked_sub(RESERVED)
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: VOCAB_FILE_VERSION,
            chars: self.chars.iter().map(|c| c.to_string()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::invalid(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        let chars = file
            .chars
            .iter()
            .map(|s| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::invalid(format!("vocabulary entry {s:?} is not one char"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Vocabulary::from_chars(chars)
    }
}

/// Admits every character seen at least `min_count` times. Ids go by
/// descending frequency, ties by ascending code point.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a CanonicalRequest>,
{
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut docs = 0usize;
    for req in corpus {
        docs += 1;
        for c in req.text().chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut entries: Vec<(char, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_count.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Vocabulary::from_chars(entries.into_iter().map(|(c, _)| c).collect())
}

/// Fixed-length id sequence ending in EOS, right-padded with PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl EncodedSequence {
    /// The ids up to and including EOS.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Same content with extra PAD slots.
    pub fn padded_to(&self, max_len: usize) -> EncodedSequence {
        let mut ids = self.ids.clone();
        ids.resize(max_len.max(ids.len()), PAD);
        EncodedSequence {
            ids,
            true_length: self.true_length,
        }
    }
}

pub fn encode(v: &Vocabulary, c: &CanonicalRequest, max_len: usize) -> Result<EncodedSequence> {
    encode_text(v, c.text(), max_len)
}

pub fn encode_text(v: &Vocabulary, text: &str, max_len: usize) -> Result<EncodedSequence> {
    if max_len < 2 {
        return Err(Error::invalid(format!("max_len must be at least 2, got {max_len}")));
    }
    let mut ids: Vec<u32> = text.chars().take(max_len - 1).map(|c| v.id_of(c)).collect();
    ids.push(EOS);
    let true_length = ids.len();
    ids.resize(max_len, PAD);
    Ok(EncodedSequence { ids, true_length })
}

/// Inverse of [`encode`]: stops at EOS, renders UNK as U+FFFD.
pub fn decode(v: &Vocabulary, seq: &EncodedSequence) -> String {
    decode_ids(v, &seq.ids)
}

pub fn decode_ids(v: &Vocabulary, ids: &[u32]) -> String {
    let mut out = String::new();
    for &id in ids {
        match id {
            EOS => break,
            PAD | SOS => {}
            UNK => out.push('\u{FFFD}'),
            _ => out.push(v.char_of(id).unwrap_or('\u{FFFD}')),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Vec<CanonicalRequest> {
        texts.iter().map(|t| CanonicalRequest::from_text(*t)).collect()
    }

    #[test]
    fn counts_and_orders() {
        let v = build_vocab(&corpus(&["aab"]), 1).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(v.id_of('a'), 4);
        assert_eq!(v.id_of('b'), 5);
    }

    #[test]
    fn min_count_filters() {
        let v = build_vocab(&corpus(&["aab"]), 2).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id_of('b'), UNK);
    }

    #[test]
    fn ties_by_code_point_and_deterministic() {
        let c = corpus(&["zyx", "xyz"]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.chars(), &['x', 'y', 'z']);
        assert_eq!(v, build_vocab(&c, 1).unwrap());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_vocab(&[], 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn encode_empty() {
        let v = build_vocab(&corpus(&["a"]), 1).unwrap();
        let s = encode_text(&v, "", 5).unwrap();
        assert_eq!(s.ids, vec![EOS, PAD, PAD, PAD, PAD]);
        assert_eq!(s.true_length, 1);
    }

    #[test]
    fn truncation_keeps_eos() {
        let v = build_vocab(&corpus(&["a"]), 1).unwrap();
        let s = encode_text(&v, &"a".repeat(2000), 1000).unwrap();
        assert_eq!(s.true_length, 1000);
        assert_eq!(*s.ids.last().unwrap(), EOS);
        assert!(encode_text(&v, "a", 1).is_err());
    }

    #[test]
    fn unknown_chars_render_replacement() {
        let v = build_vocab(&corpus(&["ab"]), 1).unwrap();
        let s = encode_text(&v, "a?b", 10).unwrap();
        assert_eq!(decode(&v, &s), "a\u{FFFD}b");
    }

    #[test]
    fn json_file_roundtrip() {
        let v = build_vocab(&corpus(&["hello\nworld\"é"]), 1).unwrap();
        let json = v.to_json().unwrap();
        assert!(json.starts_with("{\"version\":1,\"chars\":["));
        assert_eq!(Vocabulary::from_json(&json).unwrap(), v);
        assert!(Vocabulary::from_json("{\"version\":2,\"chars\":[]}").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_over_alphabet(s in "[a-f<>%=\n ]{0,40}", extra in 0usize..8) {
            let v = build_vocab(&corpus(&["abcdef<>%=\n "]), 1).unwrap();
            let max_len = (s.chars().count() + 1 + extra).max(2);
            let enc = encode_text(&v, &s, max_len).unwrap();
            prop_assert_eq!(decode(&v, &enc), s);
            prop_assert!(enc.true_length <= max_len);
            prop_assert_eq!(enc.ids[enc.true_length - 1], EOS);
            prop_assert!(enc.ids[enc.true_length..].iter().all(|&i| i == PAD));
        }
    }
}
