//! Name tokenization and token-set similarity.

use std::collections::BTreeSet;

/// Splits on non-alphanumerics and camel-case boundaries, lowercases.
///
/// `"DeliverProduct"` and `"deliver product"` both give `["deliver", "product"]`.
pub fn tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for c in s.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            let boundary = (p.is_lowercase() && c.is_uppercase())
                || (p.is_alphabetic() && c.is_numeric())
                || (p.is_numeric() && c.is_alphabetic());
            if boundary && !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(c.to_lowercase());
        prev = Some(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn normalize(s: &str) -> String {
    tokens(s).join(" ")
}

pub fn token_set(s: &str) -> BTreeSet<String> {
    tokens(s).into_iter().collect()
}

/// Jaccard index of the two token sets; 1.0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

pub fn name_similarity(a: &str, b: &str) -> f64 {
    jaccard(&token_set(a), &token_set(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camel_and_spaces_agree() {
        assert_eq!(tokens("DeliverProduct"), vec!["deliver", "product"]);
        assert_eq!(tokens("deliver  product"), vec!["deliver", "product"]);
        assert_eq!(tokens("ship_goods-v2"), vec!["ship", "goods", "v", "2"]);
        assert_eq!(normalize("Full Name"), "full name");
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(name_similarity("ship goods", "ship goods"), 1.0);
        assert_eq!(name_similarity("ship goods", "deliver product"), 0.0);
        assert!((name_similarity("ship goods", "ship parcel") - 1.0 / 3.0).abs() < 1e-12);
    }
}
