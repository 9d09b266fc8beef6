//! Extraction of flat `key: value` blocks from ```` ```YAML ```` fences.
//!
//! Only the subset the prompt contracts use is understood: top-level keys,
//! single-line values (optionally quoted), multi-line values that run until
//! the next key line, and `|`/`>` block scalars. Anchors, nesting and flow
//! collections are not supported; values stay opaque strings.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FencedYamlError {
    #[error("no ```YAML fenced block in output")]
    NoFencedBlock,
    #[error("required key `{0}` missing from YAML block")]
    MissingKey(String),
    #[error("malformed YAML block: {0}")]
    MalformedBlock(String),
}

/// Ordered key/value pairs from a fenced block. Lookups ignore ASCII case.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FencedFields {
    entries: Vec<(String, String)>,
}

impl FencedFields {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pair; the key must look like an identifier (`[A-Za-z_][A-Za-z0-9_-]*`).
    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<(), FencedYamlError> {
        let key = key.into();
        if !is_key(&key) {
            return Err(FencedYamlError::MalformedBlock(format!(
                "invalid key `{key}`"
            )));
        }
        if self.get(&key).is_some() {
            return Err(FencedYamlError::MalformedBlock(format!(
                "duplicate key `{key}`"
            )));
        }
        self.entries.push((key, value.into()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, FencedYamlError> {
        self.get(key)
            .ok_or_else(|| FencedYamlError::MissingKey(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Splits a column-0 `key: rest` line.
fn split_key_line(line: &str) -> Option<(&str, &str)> {
    let colon = line.find(':')?;
    let key = line[..colon].trim_end_matches(' ');
    if !is_key(key) || line.starts_with(' ') {
        return None;
    }
    let rest = &line[colon + 1..];
    // "http://x" style text is not a key line
    if !(rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t')) {
        return None;
    }
    Some((key, rest.trim()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Chomp {
    Clip,
    Strip,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockScalar {
    folded: bool,
    chomp: Chomp,
    indent: Option<usize>,
}

fn block_indicator(value: &str) -> Option<BlockScalar> {
    let mut chars = value.chars();
    let folded = match chars.next()? {
        '|' => false,
        '>' => true,
        _ => return None,
    };
    let mut scalar = BlockScalar {
        folded,
        chomp: Chomp::Clip,
        indent: None,
    };
    for c in chars {
        match c {
            '-' if scalar.chomp == Chomp::Clip => scalar.chomp = Chomp::Strip,
            '+' if scalar.chomp == Chomp::Clip => scalar.chomp = Chomp::Keep,
            '1'..='9' if scalar.indent.is_none() => {
                scalar.indent = c.to_digit(10).map(|d| d as usize)
            }
            _ => return None,
        }
    }
    Some(scalar)
}

fn is_fence_open(line: &str) -> bool {
    line.trim()
        .strip_prefix("```")
        .is_some_and(|label| label.trim().eq_ignore_ascii_case("yaml"))
}

fn is_fence_close(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("```") || t.starts_with("'''")
}

fn strip_quotes(value: &str) -> &str {
    let bytes = value.as_bytes();
    if bytes.len() >= 2
        && (bytes[0] == b'"' || bytes[0] == b'\'')
        && bytes[bytes.len() - 1] == bytes[0]
    {
        &value[1..value.len() - 1]
    } else {
        value
    }
}

fn finish_value(inline: &str, block: Option<BlockScalar>, lines: &[&str]) -> String {
    match block {
        None => {
            let mut parts = Vec::with_capacity(lines.len() + 1);
            if !inline.is_empty() {
                parts.push(inline);
            }
            parts.extend(lines.iter().map(|l| l.trim_end()));
            let joined = parts.join("\n");
            strip_quotes(joined.trim()).to_string()
        }
        Some(scalar) => {
            let indent = scalar.indent.unwrap_or_else(|| {
                lines
                    .iter()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| l.len() - l.trim_start_matches(' ').len())
                    .min()
                    .unwrap_or(0)
            });
            let mut body: Vec<&str> = lines
                .iter()
                .map(|l| {
                    let lead = l.len() - l.trim_start_matches(' ').len();
                    &l[lead.min(indent)..]
                })
                .collect();
            let mut trailing: usize = 0;
            while body.last().is_some_and(|l| l.is_empty()) {
                body.pop();
                trailing += 1;
            }
            let sep = if scalar.folded { " " } else { "\n" };
            match scalar.chomp {
                Chomp::Strip | Chomp::Clip => body.join(sep),
                // every dropped blank line stood for one newline after the body
                Chomp::Keep if body.is_empty() => "\n".repeat(trailing.saturating_sub(1)),
                Chomp::Keep => body.join(sep) + &"\n".repeat(trailing),
            }
        }
    }
}

/// Parses the first ```` ```YAML ```` block in `raw` and checks `required_keys`.
///
/// Multi-line plain values continue until the next column-0 `key:` line or
/// the closing fence. Extra keys are kept. When a key repeats, the first
/// occurrence wins.
pub fn parse_fenced_yaml(
    raw: &str,
    required_keys: &[&str],
) -> Result<FencedFields, FencedYamlError> {
    let mut lines = raw.lines();
    lines
        .by_ref()
        .find(|l| is_fence_open(l))
        .ok_or(FencedYamlError::NoFencedBlock)?;

    let mut body = Vec::new();
    let mut closed = false;
    for line in lines {
        if is_fence_close(line) {
            closed = true;
            break;
        }
        body.push(line);
    }
    if !closed {
        return Err(FencedYamlError::MalformedBlock("unterminated fence".into()));
    }

    let mut fields = FencedFields::new();
    let mut current: Option<(&str, &str, Option<BlockScalar>)> = None;
    let mut pending: Vec<&str> = Vec::new();

    let mut flush = |current: Option<(&str, &str, Option<BlockScalar>)>,
                     pending: &mut Vec<&str>| {
        if let Some((key, inline, block)) = current {
            let value = finish_value(inline, block, pending);
            if fields.get(key).is_none() {
                fields.entries.push((key.to_string(), value));
            }
        }
        pending.clear();
    };

    for line in body {
        if let Some((key, rest)) = split_key_line(line) {
            flush(current.take(), &mut pending);
            let block = block_indicator(rest);
            current = Some((key, if block.is_some() { "" } else { rest }, block));
        } else if current.is_some() {
            pending.push(line);
        } else if !line.trim().is_empty() {
            return Err(FencedYamlError::MalformedBlock(format!(
                "text before first key: `{}`",
                line.trim()
            )));
        }
    }
    flush(current.take(), &mut pending);

    if fields.is_empty() {
        return Err(FencedYamlError::MalformedBlock("block has no keys".into()));
    }
    for key in required_keys {
        fields.require(key)?;
    }
    Ok(fields)
}

fn inline_safe(value: &str) -> bool {
    !value.contains(['\n', '\r'])
        && value.trim() == value
        && !value.starts_with(['"', '\''])
        && block_indicator(value).is_none()
}

/// Renders fields as a fenced block that [`parse_fenced_yaml`] reads back
/// unchanged, provided no value line begins with a fence marker.
pub fn render_fenced_yaml(fields: &FencedFields) -> String {
    let mut out = String::from("```YAML\n");
    for (key, value) in fields.iter() {
        if inline_safe(value) {
            if value.is_empty() {
                out.push_str(&format!("{key}:\n"));
            } else {
                out.push_str(&format!("{key}: {value}\n"));
            }
        } else {
            let chomp = if value.ends_with('\n') { '+' } else { '-' };
            out.push_str(&format!("{key}: |2{chomp}\n"));
            for line in value.split('\n') {
                if !line.is_empty() {
                    out.push_str("  ");
                    out.push_str(line);
                }
                out.push('\n');
            }
        }
    }
    out.push_str("```\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_output() {
        let f = parse_fenced_yaml(
            "```YAML\nStage: trust building\nResponse: ok\n```",
            &["Stage", "Response"],
        )
        .unwrap();
        assert_eq!(f.get("Stage"), Some("trust building"));
        assert_eq!(f.get("response"), Some("ok"));
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn missing_fence_and_keys() {
        assert_eq!(
            parse_fenced_yaml("Stage: x", &[]),
            Err(FencedYamlError::NoFencedBlock)
        );
        assert_eq!(
            parse_fenced_yaml("```yaml\nStage: x\n```", &["Stage", "Response"]),
            Err(FencedYamlError::MissingKey("Response".into()))
        );
        assert!(matches!(
            parse_fenced_yaml("```yaml\nStage: x\n", &[]),
            Err(FencedYamlError::MalformedBlock(_))
        ));
        assert!(matches!(
            parse_fenced_yaml("```yaml\n\n```", &[]),
            Err(FencedYamlError::MalformedBlock(_))
        ));
        assert!(matches!(
            parse_fenced_yaml("```yaml\njust prose\nStage: x\n```", &[]),
            Err(FencedYamlError::MalformedBlock(_))
        ));
        // unlabeled fences are not accepted
        assert_eq!(
            parse_fenced_yaml("```\nStage: x\n```", &[]),
            Err(FencedYamlError::NoFencedBlock)
        );
    }

    #[test]
    fn first_block_wins_and_surrounding_text_ignored() {
        let raw = "Sure! Here it is:\n```YAML\nuser: first\n```\nand\n```yaml\nuser: second\n```\n";
        assert_eq!(
            parse_fenced_yaml(raw, &["user"]).unwrap().get("user"),
            Some("first")
        );
    }

    #[test]
    fn annotation_shape_with_extra_keys_and_multiline_analysis() {
        let raw = "```YAML\nannotation: <Reflection I>I see it now.</Reflection I>,\nresource: therapist-prompted, client-elaborated\"\nconfidence: 0.90\nlatent_narrative_dynamics_analysis: Client reframes the problem\nand starts acting on it\n\n  with new resolve\n```";
        let f = parse_fenced_yaml(raw, &["annotation", "resource"]).unwrap();
        assert_eq!(f.get("confidence"), Some("0.90"));
        assert_eq!(
            f.get("resource"),
            Some("therapist-prompted, client-elaborated\"")
        );
        assert_eq!(
            f.get("latent_narrative_dynamics_analysis"),
            Some("Client reframes the problem\nand starts acting on it\n\n  with new resolve")
        );
    }

    #[test]
    fn value_on_following_lines() {
        let f = parse_fenced_yaml(
            "```YAML\nexplanation:\n  warm and steady\nReassuring: 3.5\n```",
            &[],
        )
        .unwrap();
        assert_eq!(f.get("explanation"), Some("warm and steady"));
        assert_eq!(f.get("reassuring"), Some("3.5"));
    }

    #[test]
    fn quotes_stripped() {
        let f = parse_fenced_yaml(
            "```YAML\nuser: \"I feel tired.\"\nx: 'a'\ny: \"unbalanced\n```",
            &[],
        )
        .unwrap();
        assert_eq!(f.get("user"), Some("I feel tired."));
        assert_eq!(f.get("x"), Some("a"));
        assert_eq!(f.get("y"), Some("\"unbalanced"));
    }

    #[test]
    fn block_scalars() {
        let f = parse_fenced_yaml(
            "```YAML\na: |\n    one\n      two\nb: >-\n  x\n  y\nc: ok\n```",
            &[],
        )
        .unwrap();
        assert_eq!(f.get("a"), Some("one\n  two"));
        assert_eq!(f.get("b"), Some("x y"));
        assert_eq!(f.get("c"), Some("ok"));
    }

    #[test]
    fn supervisor_close_marker_and_indented_fence() {
        let raw = "    ```YAML\n    Empowering: 4.0\n    explanation: good\n    '''";
        // indented key lines are continuation text, so this block has no keys
        assert!(parse_fenced_yaml(raw, &[]).is_err());
        let raw = "```YAML\nEmpowering: 4.0\nexplanation: good\n'''";
        let f = parse_fenced_yaml(raw, &["Empowering", "explanation"]).unwrap();
        assert_eq!(f.get("Empowering"), Some("4.0"));
    }

    #[test]
    fn urls_are_not_keys() {
        let f = parse_fenced_yaml("```YAML\nnote: see\nhttp://example.org\n```", &[]).unwrap();
        assert_eq!(f.get("note"), Some("see\nhttp://example.org"));
    }

    #[test]
    fn render_round_trip_examples() {
        let mut f = FencedFields::new();
        f.insert("Stage", "trust building").unwrap();
        f.insert("Response", "").unwrap();
        f.insert("analysis", "line one\n\nline: three\n").unwrap();
        f.insert("quoted", "\"kept\"").unwrap();
        f.insert("pad", "  padded").unwrap();
        f.insert("pipe", "|").unwrap();
        let rendered = render_fenced_yaml(&f);
        assert_eq!(parse_fenced_yaml(&rendered, &[]).unwrap(), f);
        assert!(f.insert("bad key", "x").is_err());
        assert!(f.insert("stage", "dup").is_err());
    }
}
