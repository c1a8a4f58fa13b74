use crate::error::{Error, Result};

/// An HTTP/1.x request split into the parts the canonicalizer needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedRequest {
    pub method: String,
    pub target: String,
    pub query: String,
    pub version: Option<String>,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl ParsedRequest {
    /// Values of every header named `name` (case-insensitive), in order.
    pub fn header_values<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.headers
            .iter()
            .filter(move |(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Splits `raw` at the next line terminator (`\r\n` or `\n`).
fn next_line(raw: &[u8]) -> (&[u8], &[u8], bool) {
    match raw.iter().position(|&b| b == b'\n') {
        Some(i) => {
            let line = &raw[..i];
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            (line, &raw[i + 1..], true)
        }
        None => (raw, &[], false),
    }
}

fn is_token_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
}

/// Parses a raw request: request line, headers up to the first blank line,
/// and everything after that as the body.
pub fn parse_http(raw: &[u8]) -> Result<ParsedRequest> {
    let mut rest = raw;
    // leading empty lines are tolerated (RFC 9112 section 2.2)
    loop {
        if rest.is_empty() {
            return Err(Error::Parse("missing request line".into()));
        }
        let (line, after, _) = next_line(rest);
        if !line.is_empty() {
            break;
        }
        rest = after;
    }
    let (line, after, _) = next_line(rest);
    rest = after;

    let line = std::str::from_utf8(line)
        .map_err(|_| Error::Parse("request line is not valid UTF-8".into()))?;
    if line.chars().any(|c| c.is_control()) {
        return Err(Error::Parse("control character in request line".into()));
    }
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    let method = parts
        .next()
        .ok_or_else(|| Error::Parse("missing method".into()))?;
    if !method.bytes().all(|b| b.is_ascii_uppercase() || b == b'-' || b == b'_') {
        return Err(Error::Parse(format!("invalid method {method:?}")));
    }
    let full_target = parts
        .next()
        .ok_or_else(|| Error::Parse("missing request target".into()))?;
    let version = parts.next().map(str::to_owned);
    if let Some(v) = &version {
        if !v.starts_with("HTTP/") {
            return Err(Error::Parse(format!("invalid version {v:?}")));
        }
    }
    if parts.next().is_some() {
        return Err(Error::Parse("too many fields in request line".into()));
    }
    let (target, query) = match full_target.split_once('?') {
        Some((t, q)) => (t.to_owned(), q.to_owned()),
        None => (full_target.to_owned(), String::new()),
    };

    let mut headers = Vec::new();
    loop {
        if rest.is_empty() {
            break;
        }
        let (line, after, _) = next_line(rest);
        rest = after;
        if line.is_empty() {
            break;
        }
        let line = String::from_utf8_lossy(line);
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("header without colon: {line:?}")))?;
        if name.is_empty() || !name.bytes().all(is_token_char) {
            return Err(Error::Parse(format!("invalid header name {name:?}")));
        }
        headers.push((name.to_owned(), value.trim().to_owned()));
    }

    Ok(ParsedRequest {
        method: method.to_owned(),
        target,
        query,
        version,
        headers,
        body: rest.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn get_with_query() {
        let r = parse_http(b"GET /a?x=1 HTTP/1.1\r\nHost: h\r\n\r\n").unwrap();
        assert_eq!(r.method, "GET");
        assert_eq!(r.target, "/a");
        assert_eq!(r.query, "x=1");
        assert_eq!(r.version.as_deref(), Some("HTTP/1.1"));
        assert_eq!(r.headers, vec![("Host".to_owned(), "h".to_owned())]);
        assert!(r.body.is_empty());
    }

    #[test]
    fn post_with_body() {
        let r = parse_http(b"POST /login HTTP/1.1\r\nHost: h\r\n\r\nu=admin").unwrap();
        assert_eq!(r.method, "POST");
        assert_eq!(r.body, b"u=admin");
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(parse_http(b""), Err(Error::Parse(_))));
        assert!(matches!(parse_http(b"\r\n\r\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn tolerates_missing_headers_and_bare_newlines() {
        let r = parse_http(b"GET /\n").unwrap();
        assert_eq!(r.target, "/");
        assert!(r.headers.is_empty());
        let r = parse_http(b"PUT /x HTTP/1.0\nA: 1\n\nbody\nmore").unwrap();
        assert_eq!(r.headers.len(), 1);
        assert_eq!(r.body, b"body\nmore");
    }

    #[test]
    fn query_splits_at_first_question_mark() {
        let r = parse_http(b"GET /p?a=1?b=2 HTTP/1.1\r\n\r\n").unwrap();
        assert_eq!(r.target, "/p");
        assert_eq!(r.query, "a=1?b=2");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_http(b"\x00\xff\xfe garbage").is_err());
        assert!(parse_http(b"get / HTTP/1.1\r\n\r\n").is_err());
        assert!(parse_http(b"GET / FTP/1\r\n\r\n").is_err());
        assert!(parse_http(b"GET\r\n\r\n").is_err());
        assert!(parse_http(b"GET / HTTP/1.1\r\nno colon here\r\n\r\n").is_err());
        assert!(parse_http(b"GET / HTTP/1.1\r\nBad Name: v\r\n\r\n").is_err());
    }

    #[test]
    fn header_lookup_is_case_insensitive() {
        let r = parse_http(b"GET / HTTP/1.1\r\ncookie: a=1\r\nCOOKIE: b=2\r\n\r\n").unwrap();
        assert_eq!(r.header_values("Cookie").collect::<Vec<_>>(), vec!["a=1", "b=2"]);
    }
}
