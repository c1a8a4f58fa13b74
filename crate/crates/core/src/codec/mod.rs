//! From raw request bytes to id sequences.

pub mod canonical;
pub mod http;
pub mod vocab;

pub use canonical::{canonicalize, canonicalize_with, percent_decode, CanonicalOptions, CanonicalRequest};
pub use http::{parse_http, ParsedRequest};
pub use vocab::{build_vocab, decode, decode_ids, encode, encode_text, EncodedSequence, Vocabulary, EOS, PAD, SOS, UNK};

use crate::error::Result;

/// Parse and canonicalize in one step.
pub fn canonicalize_raw(raw: &[u8]) -> Result<CanonicalRequest> {
    Ok(canonicalize(&parse_http(raw)?))
}
