//! Frozen tokenizers shared by the metrics, parsers and prompt truncation.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercased alphanumeric runs.
pub fn alnum_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// First `max` whitespace tokens, re-joined with single spaces.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    let mut out = String::new();
    for (i, tok) in text.split_whitespace().take(max).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
