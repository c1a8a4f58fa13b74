//! Deterministic synthetic traffic: benign requests from parameterized
//! templates and attacks made by injecting per-class payloads into them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::AttackClass;
use crate::error::{Error, Result};
use crate::neural::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub benign: usize,
    pub attacks: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyntheticCorpus {
    /// Raw HTTP requests.
    pub benign: Vec<String>,
    pub attacks: Vec<(AttackClass, String)>,
}

/// Substring present in every generated payload of the class.
pub fn signature(class: AttackClass) -> &'static str {
    match class {
        AttackClass::OsCommanding => "/bin/",
        AttackClass::PathTraversal => "../",
        AttackClass::SqlInjection => "OR",
        AttackClass::XPathInjection => "(//",
        AttackClass::LdapInjection => "*)(",
        AttackClass::Ssi => "<!--#",
        AttackClass::Xss => "alert(",
    }
}

const GET_PATHS: [&str; 6] = ["/", "/index.php", "/account", "/products", "/search", "/news"];
const POST_PATHS: [&str; 3] = ["/login", "/transfer", "/profile"];
const WORDS: [&str; 8] = ["shoes", "book", "phone", "card", "loan", "bank", "map", "tea"];
const AGENTS: [&str; 3] = ["Mozilla/5.0", "curl/7.68", "Mozilla/5.0 (X11)"];
const USERS: [&str; 5] = ["alice", "bob", "carol", "dave", "erin"];

/// Random lowercase hex, which keeps the values alphanumeric.
fn alnum(rng: &mut ChaCha8Rng, n: usize) -> String {
    const SET: &[u8] = b"0123456789abcdef";
    (0..n).map(|_| SET[rng.gen_range(0..SET.len())] as char).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty list")
}

/// One request template: the parameters are kept apart so attacks can
/// replace a value.
struct Template {
    method: &'static str,
    path: &'static str,
    params: Vec<(&'static str, String)>,
    cookie: String,
    agent: &'static str,
    referer: bool,
}

fn template(rng: &mut ChaCha8Rng) -> Template {
    let post = rng.gen_bool(0.3);
    let (method, path) = if post {
        ("POST", pick(rng, &POST_PATHS))
    } else {
        ("GET", pick(rng, &GET_PATHS))
    };
    let mut params = Vec::new();
    match path {
        "/login" => {
            params.push(("user", pick(rng, &USERS).to_owned()));
            params.push(("pass", alnum(rng, 4)));
        }
        "/transfer" => {
            params.push(("to", rng.gen_range(100..1000).to_string()));
            params.push(("amount", rng.gen_range(1..500).to_string()));
        }
        "/profile" => params.push(("name", pick(rng, &USERS).to_owned())),
        "/search" => params.push(("q", pick(rng, &WORDS).to_owned())),
        "/products" => {
            params.push(("id", rng.gen_range(1..100).to_string()));
            if rng.gen_bool(0.5) {
                params.push(("sort", pick(rng, &["asc", "desc"]).to_owned()));
            }
        }
        "/news" | "/index.php" => params.push(("page", rng.gen_range(1..10).to_string())),
        _ => {
            if rng.gen_bool(0.5) {
                params.push(("lang", pick(rng, &["en", "es"]).to_owned()));
            }
        }
    }
    Template {
        method,
        path,
        params,
        cookie: format!("sid={}", alnum(rng, 6)),
        agent: pick(rng, &AGENTS),
        referer: rng.gen_bool(0.2),
    }
}

fn render(t: &Template) -> String {
    let query: Vec<String> = t
        .params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let query = query.join("&");
    let (target, body) = if t.method == "POST" || query.is_empty() {
        (t.path.to_owned(), if t.method == "POST" { query } else { String::new() })
    } else {
        (format!("{}?{}", t.path, query.replace(' ', "+")), String::new())
    };
    let mut out = format!("{} {} HTTP/1.1\r\nHost: bank.local\r\n", t.method, target);
    out.push_str(&format!("Cookie: {}\r\n", t.cookie));
    out.push_str(&format!("User-Agent: {}\r\n", t.agent));
    if t.referer {
        out.push_str("Referer: http://bank.local/\r\n");
    }
    if !body.is_empty() {
        out.push_str(&format!("Content-Length: {}\r\n", body.len()));
    }
    out.push_str("\r\n");
    out.push_str(&body);
    out
}

fn payload(class: AttackClass, rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..10);
    let file = pick(rng, &["etc/passwd", "etc/hosts", "boot.ini", "etc/shadow"]);
    match class {
        AttackClass::OsCommanding => {
            let sep = pick(rng, &[";", "|", "&&", "`"]);
            let cmd = pick(rng, &["cat /etc/passwd", "ls -la", "id", "uname -a", "nc -e sh"]);
            format!("{n}{sep}/bin/{cmd}")
        }
        AttackClass::PathTraversal => {
            let depth = rng.gen_range(2..6);
            format!("{}{file}", "../".repeat(depth))
        }
        AttackClass::SqlInjection => match rng.gen_range(0..5) {
            0 => format!("{n}' OR 1=1 UNION SELECT user,pass FROM users--"),
            1 => format!("{n}' OR {n}=(SELECT COUNT(*) FROM admin)--"),
            2 => format!("{n}' OR '{n}'='{n}' UNION SELECT null--"),
            3 => format!("{n}' OR '{n}'='{n}"),
            _ => format!("' OR {n}={n}; SELECT * FROM accounts--"),
        },
        AttackClass::XPathInjection => match rng.gen_range(0..3) {
            0 => format!("' or count(//user)>{n} or 'a'='b"),
            1 => format!("x' or name(//*[{n}])='user"),
            _ => "'] | count(//password) | a['".to_owned(),
        },
        AttackClass::LdapInjection => match rng.gen_range(0..3) {
            0 => "*)(uid=*))(|(uid=*".to_owned(),
            1 => format!("{}*)(|(objectClass=*)", pick(rng, &USERS)),
            _ => format!("*)(cn={n}*)"),
        },
        AttackClass::Ssi => {
            let cmd = pick(rng, &["ls", "id", "cat /etc/passwd"]);
            match rng.gen_range(0..2) {
                0 => format!("<!--#exec cmd=\"{cmd}\"-->"),
                _ => format!("<!--#include virtual=\"/{file}\"-->"),
            }
        }
        AttackClass::Xss => match rng.gen_range(0..3) {
            0 => format!("<script>alert({n})</script>"),
            1 => format!("<img src=x onerror=alert({n})>"),
            _ => format!("\"><svg onload=alert('{n}')>"),
        },
    }
}

/// Injects a payload into one parameter value, adding a parameter when the
/// template has none.
fn attack(class: AttackClass, rng: &mut ChaCha8Rng) -> String {
    let mut t = template(rng);
    let p = payload(class, rng);
    if t.params.is_empty() {
        t.params.push(("q", p));
    } else {
        let i = rng.gen_range(0..t.params.len());
        t.params[i].1 = p;
    }
    render(&t)
}

/// Benign and attack requests; attack classes cycle so counts stay balanced
/// (within one) across the seven classes. Output depends only on `spec`.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    if spec.benign == 0 && spec.attacks == 0 {
        return Err(Error::invalid("synthetic corpus needs at least one request"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[0xb0]));
    let benign = (0..spec.benign).map(|_| render(&template(&mut rng))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[0xa7]));
    let attacks = (0..spec.attacks)
        .map(|i| {
            let class = AttackClass::ALL[i % AttackClass::ALL.len()];
            (class, attack(class, &mut rng))
        })
        .collect();
    Ok(SyntheticCorpus { benign, attacks })
}
