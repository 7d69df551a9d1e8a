//! Question tokenization and hashed bag-of-n-gram features.

use crate::kg::Fnv64;

/// Size of the hashed question feature space.
pub const FEATURE_BITS: u32 = 14;
pub const NUM_FEATURES: usize = 1 << FEATURE_BITS;

/// Placeholder replacing bracketed entity mentions such as `[George Lucas]`.
pub const ENTITY_TOKEN: &str = "<ent>";

/// Lowercases, replaces `[...]` mentions with [`ENTITY_TOKEN`] and splits on
/// anything that is not alphanumeric or `_`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_mention = false;
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for ch in text.chars() {
        if in_mention {
            if ch == ']' {
                in_mention = false;
                tokens.push(ENTITY_TOKEN.to_owned());
            }
            continue;
        }
        if ch == '[' {
            flush(&mut cur, &mut tokens);
            in_mention = true;
        } else if ch.is_alphanumeric() || ch == '_' {
            cur.extend(ch.to_lowercase());
        } else {
            flush(&mut cur, &mut tokens);
        }
    }
    if in_mention {
        tokens.push(ENTITY_TOKEN.to_owned());
    }
    flush(&mut cur, &mut tokens);
    tokens
}

/// Tokens of a relation's surface name, e.g. `film.directed_by` ->
/// `[film, directed, by]`. The inverse suffix is kept as its own token.
pub fn relation_tokens(name: &str) -> Vec<String> {
    let (base, inverse) = match name.strip_suffix(crate::kg::INVERSE_SUFFIX) {
        Some(b) => (b, true),
        None => (name, false),
    };
    let mut toks: Vec<String> = base
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if inverse {
        toks.push("inverse".to_owned());
    }
    toks
}

fn bucket(kind: u8, parts: &[&str]) -> u32 {
    let mut h = Fnv64::default();
    h.write(&[kind]);
    for p in parts {
        h.write(p.as_bytes());
        h.write(&[0xff]);
    }
    (h.finish() & (NUM_FEATURES as u64 - 1)) as u32
}

/// Sparse question feature vector: unigram and bigram counts hashed into
/// [`NUM_FEATURES`] buckets, L2-normalized. Sorted by bucket.
pub fn question_features(tokens: &[String]) -> Vec<(u32, f64)> {
    let mut raw: Vec<u32> = Vec::with_capacity(tokens.len() * 2 + 1);
    for t in tokens {
        raw.push(bucket(b'u', &[t]));
    }
    let mut prev = "<s>";
    for t in tokens {
        raw.push(bucket(b'b', &[prev, t]));
        prev = t;
    }
    raw.push(bucket(b'b', &[prev, "</s>"]));
    raw.sort_unstable();
    let mut feats: Vec<(u32, f64)> = Vec::new();
    for idx in raw {
        match feats.last_mut() {
            Some((last, count)) if *last == idx => *count += 1.0,
            _ => feats.push((idx, 1.0)),
        }
    }
    let norm = feats.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, c) in &mut feats {
            *c /= norm;
        }
    }
    feats
}

/// Number of distinct relation-name tokens that also occur in the question.
pub fn token_overlap(question: &[String], relation: &[String]) -> f64 {
    let mut seen: Vec<&str> = Vec::new();
    for t in relation {
        if !seen.contains(&t.as_str()) && question.iter().any(|q| q == t) {
            seen.push(t);
        }
    }
    seen.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_mentions_and_case() {
        assert_eq!(
            tokenize("Who starred in films directed by [George Lucas]?"),
            vec!["who", "starred", "in", "films", "directed", "by", "<ent>"]
        );
        assert_eq!(tokenize("what is r3 of r5 of [e12]"), vec!["what", "is", "r3", "of", "r5", "of", "<ent>"]);
    }

    #[test]
    fn relation_surface_tokens() {
        assert_eq!(relation_tokens("film.directed_by"), vec!["film", "directed", "by"]);
        assert_eq!(relation_tokens("starred^-1"), vec!["starred", "inverse"]);
    }

    #[test]
    fn word_order_changes_features() {
        let a = question_features(&tokenize("what is r3 of r5 of [e]"));
        let b = question_features(&tokenize("what is r5 of r3 of [e]"));
        assert_ne!(a, b);
        let norm: f64 = a.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn overlap_counts_distinct_tokens() {
        let q = tokenize("who directed the film directed by x");
        assert_eq!(token_overlap(&q, &relation_tokens("film.directed_by")), 3.0);
        assert_eq!(token_overlap(&q, &relation_tokens("starred")), 0.0);
    }
}
