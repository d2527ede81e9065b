//! Exclusive-gateway conditions.
//!
//! ```text
//! expr  := cmp ( ("and" | "or") cmp )*      left to right, "and" binds tighter
//! cmp   := path op literal | path
//! op    := == | != | < | <= | > | >=
//! literal := number | 'text' | "text" | true | false
//! ```
//!
//! A bare path is true when the value exists and is truthy. Comparisons
//! against missing values are false.

use serde_json::Value;

use crate::reconcile::{lookup, VariableStore};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64),
    Op(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
enum Cmp {
    Truthy(String),
    Compare { path: String, op: &'static str, value: Value },
}

/// A parsed condition in disjunctive form.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    any: Vec<Vec<Cmp>>,
}

fn lex(s: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' || c == '"' {
            let end = chars[i + 1..].iter().position(|&d| d == c).ok_or("unterminated string")? + i + 1;
            out.push(Tok::Str(chars[i + 1..end].iter().collect()));
            i = end + 1;
        } else if "=!<>".contains(c) {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = ["==", "!=", "<=", ">="].into_iter().find(|o| *o == two);
            match (op, c) {
                (Some(o), _) => {
                    out.push(Tok::Op(o));
                    i += 2;
                }
                (None, '<') => {
                    out.push(Tok::Op("<"));
                    i += 1;
                }
                (None, '>') => {
                    out.push(Tok::Op(">"));
                    i += 1;
                }
                _ => return Err(format!("unexpected `{c}`")),
            }
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number `{text}`"))?));
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || "_.-".contains(chars[i])) {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            return Err(format!("unexpected `{c}`"));
        }
    }
    Ok(out)
}

impl Condition {
    pub fn parse(s: &str) -> Result<Self, String> {
        let toks = lex(s)?;
        let mut any = vec![vec![]];
        let mut i = 0;
        loop {
            let Some(Tok::Word(path)) = toks.get(i) else {
                return Err(format!("expected a field path in `{s}`"));
            };
            i += 1;
            let cmp = match toks.get(i) {
                Some(Tok::Op(op)) => {
                    let value = match toks.get(i + 1) {
                        Some(Tok::Num(n)) => serde_json::json!(n),
                        Some(Tok::Str(t)) => Value::String(t.clone()),
                        Some(Tok::Word(w)) if w == "true" || w == "false" => Value::Bool(w == "true"),
                        _ => return Err(format!("expected a literal after `{op}` in `{s}`")),
                    };
                    i += 2;
                    Cmp::Compare { path: path.clone(), op, value }
                }
                _ => Cmp::Truthy(path.clone()),
            };
            any.last_mut().expect("non-empty").push(cmp);
            match toks.get(i) {
                None => break,
                Some(Tok::Word(w)) if w == "and" => {}
                Some(Tok::Word(w)) if w == "or" => any.push(vec![]),
                Some(t) => return Err(format!("unexpected {t:?} in `{s}`")),
            }
            i += 1;
        }
        Ok(Self { any })
    }

    pub fn eval(&self, store: &VariableStore) -> bool {
        self.any.iter().any(|all| all.iter().all(|c| eval_cmp(c, store)))
    }
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64() != Some(0.0),
        Value::String(s) => !s.is_empty(),
        _ => true,
    }
}

fn eval_cmp(c: &Cmp, store: &VariableStore) -> bool {
    match c {
        Cmp::Truthy(p) => lookup(store, p).is_some_and(truthy),
        Cmp::Compare { path, op, value } => {
            let Some(v) = lookup(store, path) else { return false };
            let ord = match (v, value) {
                (Value::Number(a), Value::Number(b)) => a.as_f64().zip(b.as_f64()).and_then(|(a, b)| a.partial_cmp(&b)),
                (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
                (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
                _ => None,
            };
            match (*op, ord) {
                ("==", Some(o)) => o.is_eq(),
                ("!=", Some(o)) => o.is_ne(),
                ("!=", None) => true,
                ("<", Some(o)) => o.is_lt(),
                ("<=", Some(o)) => o.is_le(),
                (">", Some(o)) => o.is_gt(),
                (">=", Some(o)) => o.is_ge(),
                _ => false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn store() -> VariableStore {
        VariableStore::from([
            ("start.qty".to_string(), json!(12)),
            ("check.status".to_string(), json!("ok")),
            ("check.flag".to_string(), json!(false)),
        ])
    }

    #[test]
    fn comparisons() {
        let s = store();
        for (expr, want) in [
            ("start.qty > 10", true),
            ("start.qty <= 10", false),
            ("check.status == 'ok'", true),
            ("check.status != \"ok\"", false),
            ("check.flag", false),
            ("check.flag == false", true),
            ("missing.x == 1", false),
            ("start.qty < 5 or check.status == 'ok'", true),
            ("start.qty > 5 and check.flag", false),
            ("start.qty > -1", true),
        ] {
            assert_eq!(Condition::parse(expr).unwrap().eval(&s), want, "{expr}");
        }
    }

    #[test]
    fn malformed() {
        for bad in ["", "== 3", "a.b ==", "a.b == 'x", "a.b && c.d"] {
            assert!(Condition::parse(bad).is_err(), "{bad}");
        }
    }
}
