//! Tokenization and hashing shared by the indexes and the agents.

/// Lowercases and splits on anything that is not alphanumeric. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Small closed-class word list used when pulling phrases out of free text.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "best", "but", "by", "can", "do", "does", "for", "from", "has", "have", "how", "i", "if", "in",
    "into", "is", "it", "its", "just", "more", "most", "my", "no", "not", "of", "on", "one", "or",
    "our", "out", "over", "so", "some", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "to", "too", "up", "very", "was", "we", "well", "were", "what",
    "when", "which", "while", "who", "will", "with", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Whether a text (given as its token set) mentions an item title: at least
/// 60% of the title's distinct non-stopword tokens occur in it.
pub fn mentions_title(text_tokens: &std::collections::HashSet<String>, title: &str) -> bool {
    let mut title_tokens: Vec<String> = tokenize(title)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect();
    title_tokens.sort();
    title_tokens.dedup();
    if title_tokens.is_empty() {
        return false;
    }
    let hits = title_tokens
        .iter()
        .filter(|t| text_tokens.contains(*t))
        .count();
    hits * 5 >= title_tokens.len() * 3
}

/// Formats a number without trailing zeros (`200`, `8.5`, `0.25`).
pub fn format_number(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        return format!("{}", value as i64);
    }
    let s = format!("{value:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
