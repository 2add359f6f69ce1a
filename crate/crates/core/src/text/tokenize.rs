use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// A lowercased token and its `[start, end)` character offsets in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and punctuation; alphanumeric runs stay whole, and
/// digit groups like `1,850` or `3.5` are kept as one token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                if d.is_alphanumeric() {
                    i += 1;
                } else if (d == ',' || d == '.')
                    && chars[i - 1].is_ascii_digit()
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        let text: String = chars[start..i]
            .iter()
            .flat_map(|c| c.to_lowercase())
            .collect();
        out.push(Token {
            text,
            start,
            end: i,
        });
    }
    out
}

/// Original (not lowercased) text of each token.
pub fn surface_forms<'a>(text: &'a str, tokens: &[Token]) -> Vec<&'a str> {
    let byte_at: Vec<usize> = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(core::iter::once(text.len()))
        .collect();
    tokens
        .iter()
        .map(|t| &text[byte_at[t.start]..byte_at[t.end]])
        .collect()
}

pub fn token_texts(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.text.clone()).collect()
}
