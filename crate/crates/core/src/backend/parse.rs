use thiserror::Error;

use crate::environment::{Action, ActionLabeling};
use crate::prompt::ACTION_PREFIX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("response has no ACTION line")]
    NoActionLine,
    #[error("unrecognized action {0:?}")]
    UnrecognizedAction(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction {
    pub action: Action,
    /// Text before the ACTION line, trimmed.
    pub rationale: String,
    pub warnings: Vec<String>,
}

fn strip_markup(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c == '*' || c == '`' || c == '#' || c == '_' || c.is_whitespace())
}

/// Locates the ACTION payload in a line, tolerating markdown emphasis.
fn action_payload(line: &str) -> Option<&str> {
    let l = line.trim_start().trim_start_matches(['*', '`', '#', '>', ' ', '-']);
    if l.len() >= ACTION_PREFIX.len() && l[..ACTION_PREFIX.len()].eq_ignore_ascii_case(ACTION_PREFIX) {
        Some(&l[ACTION_PREFIX.len()..])
    } else if let Some(rest) = l.strip_prefix("ACTION**:").or_else(|| l.strip_prefix("Action**:")) {
        Some(rest)
    } else {
        None
    }
}

fn clean_label(s: &str) -> &str {
    let s = strip_markup(s);
    let s = s.trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace());
    let s = s.strip_suffix('.').unwrap_or(s);
    strip_markup(s)
}

/// Extracts the action from a response under `labeling`. The last ACTION
/// line wins; earlier ones produce a warning.
pub fn parse_action(text: &str, labeling: &ActionLabeling) -> Result<ParsedAction, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let hits: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| action_payload(l).is_some())
        .map(|(i, _)| i)
        .collect();
    let &last = hits.last().ok_or(ParseError::NoActionLine)?;
    let mut warnings = Vec::new();
    if hits.len() > 1 {
        warnings.push(format!("{} ACTION lines; using the last", hits.len()));
    }
    let label = clean_label(action_payload(lines[last]).expect("matched"));
    if label.is_empty() {
        return Err(ParseError::UnrecognizedAction(String::new()));
    }
    let action = labeling
        .parse_surface(label)
        .map_err(|_| ParseError::UnrecognizedAction(label.to_string()))?;
    Ok(ParsedAction {
        action,
        rationale: lines[..last].join("\n").trim().to_string(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{builtin_labelings, canonical_actions, labeling_a, labeling_c, KeyPoint};

    #[test]
    fn examples() {
        let p = parse_action("...thinking...\nACTION: EXIT", &labeling_a()).unwrap();
        assert_eq!(p.action, Action::Exit);
        assert_eq!(p.rationale, "...thinking...");
        assert_eq!(
            parse_action("ACTION: CALC(f1, o)", &labeling_c()).unwrap().action,
            Action::measure(KeyPoint::F1, KeyPoint::X)
        );
        assert_eq!(parse_action("I give up", &labeling_a()), Err(ParseError::NoActionLine));
        assert_eq!(
            parse_action("ACTION: FLY", &labeling_a()),
            Err(ParseError::UnrecognizedAction("FLY".into()))
        );
    }

    #[test]
    fn tolerates_markup_and_takes_last() {
        let p = parse_action("ACTION: EXIT\nhmm, no\n**ACTION:** `MEASURE-F1-X`.", &labeling_a()).unwrap();
        assert_eq!(p.action, Action::measure(KeyPoint::F1, KeyPoint::X));
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.rationale, "ACTION: EXIT\nhmm, no");
    }

    #[test]
    fn every_label_round_trips() {
        for l in builtin_labelings() {
            for cat in canonical_actions() {
                let action = match cat {
                    crate::environment::ActionCategory::Submit => Action::Submit {
                        expressions: ["a + b".into(), "f(c, d)".into(), "e".into()],
                    },
                    other => Action::from_category(other),
                };
                let text = format!("because\nACTION: {}", l.surface_label(&action));
                assert_eq!(parse_action(&text, &l).unwrap().action, action);
            }
        }
    }
}
