use serde::{Deserialize, Serialize};

use super::ParsedRequest;

pub const DEFAULT_MAX_CHARS: usize = 1000;

/// Headers whose values are kept, in output order.
pub const KEPT_HEADERS: [&str; 3] = ["Cookie", "Referer", "User-Agent"];

/// A request reduced to the single string the models see.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalRequest {
    text: String,
}

impl CanonicalRequest {
    /// Wraps already-canonical text (for example a retraining store record).
    /// Carriage returns are removed.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text: String = text.into();
        CanonicalRequest {
            text: text.replace('\r', ""),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn into_text(self) -> String {
        self.text
    }

    /// First `n` characters.
    pub fn digest(&self, n: usize) -> String {
        self.text.chars().take(n).collect()
    }
}

/// Canonicalization knobs. The defaults are what the models are trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalOptions {
    pub max_chars: usize,
    pub headers: Vec<String>,
    pub plus_as_space: bool,
}

impl Default for CanonicalOptions {
    fn default() -> Self {
        CanonicalOptions {
            max_chars: DEFAULT_MAX_CHARS,
            headers: KEPT_HEADERS.iter().map(|h| h.to_string()).collect(),
            plus_as_space: true,
        }
    }
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// One pass of `%XX` decoding. Malformed escapes are copied through.
pub fn percent_decode(input: &[u8], plus_as_space: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        match input[i] {
            b'%' if i + 2 < input.len() => {
                match (hex_val(input[i + 1]), hex_val(input[i + 2])) {
                    (Some(h), Some(l)) => {
                        out.push(h << 4 | l);
                        i += 3;
                    }
                    _ => {
                        out.push(b'%');
                        i += 1;
                    }
                }
            }
            b'+' if plus_as_space => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    out
}

/// UTF-8 when valid, otherwise every byte becomes the code point of the
/// same value.
pub fn bytes_to_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

fn decoded(input: &[u8], plus_as_space: bool) -> String {
    bytes_to_text(&percent_decode(input, plus_as_space))
}

pub fn canonicalize(req: &ParsedRequest) -> CanonicalRequest {
    canonicalize_with(req, &CanonicalOptions::default())
}

/// Joins method, decoded path, query, body and the kept header values with
/// `\n`, then truncates to `max_chars` characters.
pub fn canonicalize_with(req: &ParsedRequest, opts: &CanonicalOptions) -> CanonicalRequest {
    let mut fields = vec![
        req.method.clone(),
        decoded(req.target.as_bytes(), false),
        decoded(req.query.as_bytes(), opts.plus_as_space),
        decoded(&req.body, opts.plus_as_space),
    ];
    for name in &opts.headers {
        for value in req.header_values(name) {
            fields.push(decoded(value.as_bytes(), false));
        }
    }
    let joined = fields.join("\n").replace('\r', "");
    let text = match joined.char_indices().nth(opts.max_chars) {
        Some((cut, _)) => joined[..cut].to_owned(),
        None => joined,
    };
    CanonicalRequest { text }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::parse_http;

    fn canon(raw: &str) -> String {
        canonicalize(&parse_http(raw.as_bytes()).unwrap()).into_text()
    }

    #[test]
    fn host_only_get() {
        assert_eq!(canon("GET /a?x=1 HTTP/1.1\r\nHost: h\r\n\r\n"), "GET\n/a\nx=1\n");
    }

    #[test]
    fn decodes_query_once() {
        assert!(canon("GET /s?q=%3Cscript%3E HTTP/1.1\r\n\r\n").contains("q=<script>"));
        assert_eq!(canon("GET /s?a=%2525 HTTP/1.1\r\n\r\n"), "GET\n/s\na=%25\n");
    }

    #[test]
    fn malformed_escapes_are_verbatim() {
        assert_eq!(percent_decode(b"%zz%4", false), b"%zz%4");
        assert_eq!(percent_decode(b"100%", false), b"100%");
        assert_eq!(percent_decode(b"%41%", false), b"A%");
    }

    #[test]
    fn plus_only_in_query_and_body() {
        let t = canon("POST /a+b?x=1+2 HTTP/1.1\r\nCookie: c=3+4\r\n\r\ny=5+6");
        assert_eq!(t, "POST\n/a+b\nx=1 2\ny=5 6\nc=3+4");
    }

    #[test]
    fn kept_headers_in_fixed_order() {
        let t = canon(
            "GET / HTTP/1.1\r\nUser-Agent: ua\r\nHost: h\r\nReferer: http://r/%41\r\nCookie: s=1\r\nAccept: */*\r\n\r\n",
        );
        assert_eq!(t, "GET\n/\n\n\ns=1\nhttp://r/A\nua");
    }

    #[test]
    fn no_carriage_returns_and_truncation() {
        let t = canon("GET /?a=%0D%0A HTTP/1.1\r\n\r\n");
        assert!(!t.contains('\r'));
        let long = format!("GET /?q={} HTTP/1.1\r\n\r\n", "é".repeat(3000));
        assert_eq!(canon(&long).chars().count(), DEFAULT_MAX_CHARS);
    }

    #[test]
    fn non_utf8_body_maps_bytes() {
        let mut raw = b"POST / HTTP/1.1\r\n\r\n".to_vec();
        raw.extend_from_slice(&[0xff, 0x41]);
        let t = canonicalize(&parse_http(&raw).unwrap()).into_text();
        assert_eq!(t, "POST\n/\n\n\u{ff}A");
    }
}
