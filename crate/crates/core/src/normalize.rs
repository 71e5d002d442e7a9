//! Surface-form normalization shared by lexicon keys, gazetteer matching,
//! pair deduplication and knowledge-graph grouping.
//!
//! Case folding is done one Unicode scalar at a time: a character whose
//! lowercase form is a single scalar is replaced by it, anything else (for
//! example `İ`, whose lowercase expands to two scalars) is kept verbatim.
//! This keeps folded text aligned 1:1 with the original so character
//! offsets computed on folded text are valid on the original.

/// Folds a single character. Always yields exactly one character.
#[inline]
pub fn fold_char(c: char) -> char {
    if c.is_ascii() {
        return c.to_ascii_lowercase();
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Folds every character of `s` and maps any whitespace character to a
/// plain space. The result has the same number of scalars as `s`.
pub fn fold_text(s: &str) -> String {
    s.chars().map(|c| if c.is_whitespace() { ' ' } else { fold_char(c) }).collect()
}

/// Normalizes a surface form: trim, collapse internal whitespace runs to a
/// single space, case-fold. Greek letters and hyphens are kept as they are.
pub fn normalize_surface(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().map(fold_char));
    }
    out
}

/// Length in Unicode scalar values.
#[inline]
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Returns the substring of `s` covering scalar positions `start..end`, or
/// `None` when the range is out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start { begin } else { indices.nth(end - start - 1)? };
    Some(&s[begin..finish])
}

/// Token characters are letters and digits; everything else (including
/// hyphens and parentheses) is a boundary.
#[inline]
pub fn is_token_char(c: char) -> bool {
    c.is_alphanumeric()
}
