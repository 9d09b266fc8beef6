//! Word tokenization shared by salience and transcript statistics.

use std::ops::Range;

/// Splits text into words, reported as byte ranges.
pub trait Tokenizer: Send + Sync {
    fn word_ranges(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.word_ranges(text).len()
    }
}

/// Unicode-whitespace runs with leading and trailing non-alphanumerics
/// stripped; runs left empty (pure punctuation, emoji) are not words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn word_ranges(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut run_start = None;
        let bytes_end = text.len();
        for (i, c) in text.char_indices().chain(std::iter::once((bytes_end, ' '))) {
            match (c.is_whitespace(), run_start) {
                (false, None) => run_start = Some(i),
                (true, Some(start)) => {
                    if let Some(r) = trim_run(text, start, i) {
                        out.push(r);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        out
    }
}

fn trim_run(text: &str, start: usize, end: usize) -> Option<Range<usize>> {
    let run = &text[start..end];
    let first = run.char_indices().find(|(_, c)| c.is_alphanumeric())?.0;
    let (last, ch) = run
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())?;
    Some(start + first..start + last + ch.len_utf8())
}

pub fn word_ranges(text: &str) -> Vec<Range<usize>> {
    WhitespaceTokenizer.word_ranges(text)
}

pub fn word_count(text: &str) -> usize {
    word_ranges(text).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("Yesterday I went out."), 4);
        assert_eq!(word_count("  -- hi!  \"there\" 🙂 "), 2);
        assert_eq!(word_count("don't stop"), 2);
        assert_eq!(word_count("naïve café\u{3000}日本"), 3);
    }

    #[test]
    fn ranges_strip_edges() {
        let t = "(hello), world!";
        let r = word_ranges(t);
        assert_eq!(&t[r[0].clone()], "hello");
        assert_eq!(&t[r[1].clone()], "world");
    }
}
