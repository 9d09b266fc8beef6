//! `<Type>…</Type>` span tags.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::IMType;

/// A tagged region; `start..end` are byte offsets and `text` is that slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IMSpan {
    pub im_type: IMType,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl IMSpan {
    pub fn new(im_type: IMType, start: usize, end: usize, text: impl Into<String>) -> Self {
        Self {
            im_type,
            start,
            end,
            text: text.into(),
        }
    }

    pub fn overlaps(&self, range: &std::ops::Range<usize>) -> bool {
        self.start < range.end && range.start < self.end
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpanError {
    #[error("unbalanced tag {tag:?} at byte {at}")]
    UnbalancedTag { tag: String, at: usize },
    #[error("tag {tag:?} opened at byte {at} inside another span")]
    NestedTag { tag: String, at: usize },
    #[error("unknown tag name {name:?} at byte {at}")]
    UnknownTagName { name: String, at: usize },
    #[error("empty {tag:?} span at byte {at}")]
    EmptySpan { tag: String, at: usize },
}

struct Tag<'a> {
    closing: bool,
    name: &'a str,
    len: usize,
}

/// Recognizes `<Name>` or `</Name>` at the start of `s`, where the name is a
/// letter followed by letters, digits or spaces. Anything else is plain text.
fn tag_at(s: &str) -> Option<Tag<'_>> {
    let body = s.strip_prefix('<')?;
    let (closing, body) = match body.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, body),
    };
    let close = body.find('>')?;
    let name = &body[..close];
    let mut chars = name.chars();
    if !chars.next()?.is_ascii_alphabetic() || name.len() > 40 {
        return None;
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == ' ') {
        return None;
    }
    Some(Tag {
        closing,
        name,
        len: 1 + usize::from(closing) + close + 1,
    })
}

/// Strips IM tags, returning the clean text and spans into it.
pub fn parse_im_spans(annotated: &str) -> Result<(String, Vec<IMSpan>), SpanError> {
    let mut clean = String::with_capacity(annotated.len());
    let mut spans = Vec::new();
    let mut open: Option<(IMType, usize, usize)> = None;
    let mut i = 0;
    while i < annotated.len() {
        let rest = &annotated[i..];
        let Some(tag) = rest.starts_with('<').then(|| tag_at(rest)).flatten() else {
            let ch = rest.chars().next().expect("non-empty");
            clean.push(ch);
            i += ch.len_utf8();
            continue;
        };
        let im_type = IMType::from_label(tag.name).ok_or_else(|| SpanError::UnknownTagName {
            name: tag.name.to_string(),
            at: i,
        })?;
        match (tag.closing, open) {
            (false, None) => open = Some((im_type, clean.len(), i)),
            (false, Some(_)) => {
                return Err(SpanError::NestedTag {
                    tag: tag.name.to_string(),
                    at: i,
                })
            }
            (true, Some((t, start, at))) if t == im_type => {
                if start == clean.len() {
                    return Err(SpanError::EmptySpan {
                        tag: tag.name.to_string(),
                        at,
                    });
                }
                spans.push(IMSpan::new(t, start, clean.len(), &clean[start..]));
                open = None;
            }
            (true, _) => {
                return Err(SpanError::UnbalancedTag {
                    tag: tag.name.to_string(),
                    at: i,
                })
            }
        }
        i += tag.len;
    }
    if let Some((t, _, at)) = open {
        return Err(SpanError::UnbalancedTag {
            tag: t.label().to_string(),
            at,
        });
    }
    Ok((clean, spans))
}

/// Reinserts tags into `clean`. Spans must be sorted and non-overlapping,
/// as returned by [`parse_im_spans`].
pub fn render_im_spans(clean: &str, spans: &[IMSpan]) -> String {
    let mut out = String::with_capacity(clean.len() + spans.len() * 32);
    let mut at = 0;
    for s in spans {
        out.push_str(&clean[at..s.start]);
        out.push('<');
        out.push_str(s.im_type.label());
        out.push('>');
        out.push_str(&clean[s.start..s.end]);
        out.push_str("</");
        out.push_str(s.im_type.label());
        out.push('>');
        at = s.end;
    }
    out.push_str(&clean[at..]);
    out
}
