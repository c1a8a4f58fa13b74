//! Parse a raw request, canonicalize it and map it to vocabulary ids.

use reqsentry::codec::{build_vocab, canonicalize_raw, decode_ids, encode, parse_http};

fn main() -> reqsentry::Result<()> {
    let raw = b"POST /login?next=%2Faccount HTTP/1.1\r\n\
Host: bank.local\r\n\
Cookie: sid=4f2a9c\r\n\
User-Agent: Mozilla/5.0\r\n\
Content-Length: 25\r\n\
\r\n\
user=alice&pass=s3cr%21t+x";

    let parsed = parse_http(raw)?;
    println!("method {} target {} query {:?}", parsed.method, parsed.target, parsed.query);
    for (k, v) in &parsed.headers {
        println!("  {k}: {v}");
    }

    let canon = canonicalize_raw(raw)?;
    println!("canonical text:\n{}", canon.text());

    let vocab = build_vocab([&canon], 1)?;
    let seq = encode(&vocab, &canon, 128)?;
    println!("vocabulary size {}, sequence length {}", vocab.size(), seq.true_length);
    println!("first ids {:?}", &seq.ids[..12.min(seq.ids.len())]);
    assert_eq!(decode_ids(&vocab, &seq.ids), canon.text());
    Ok(())
}
