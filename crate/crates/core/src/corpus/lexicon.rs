//! Closed-class English word lists.

/// Personal, possessive, reflexive and demonstrative pronouns.
pub const PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself", "yourselves", "he",
    "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "we", "us",
    "our", "ours", "ourselves", "they", "them", "their", "theirs", "themselves", "this", "that",
    "these", "those", "one", "who", "whom", "whose",
];

/// Function words skipped when picking a span's head token.
pub const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "of", "in", "on", "at", "to", "for",
    "with", "and", "or", "but", ",", ".", ";", ":", "'s",
];

pub fn is_pronoun(token: &str) -> bool {
    let lower = token.to_lowercase();
    PRONOUNS.contains(&lower.as_str())
}

pub fn is_function_word(token: &str) -> bool {
    let lower = token.to_lowercase();
    FUNCTION_WORDS.contains(&lower.as_str())
}
