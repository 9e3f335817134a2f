use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no valid JSON found in model output ({preview:?})")]
pub struct JsonRecoveryError {
    pub preview: String,
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string ("json", "JSON ", ...) up to the end of the line.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

fn between(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Recovers a JSON value from model output. Tried in order: the whole text,
/// the contents of each fenced code block, the span from the first `{` to
/// the last `}`, and the span from the first `[` to the last `]`.
pub fn extract_json_block(text: &str) -> Result<Value, JsonRecoveryError> {
    let parse = |s: &str| serde_json::from_str::<Value>(s.trim()).ok();
    if let Some(v) = parse(text) {
        return Ok(v);
    }
    for block in fenced_blocks(text) {
        if let Some(v) = parse(block) {
            return Ok(v);
        }
    }
    let candidates = [between(text, '{', '}'), between(text, '[', ']')];
    if let Some(v) = candidates.into_iter().flatten().find_map(parse) {
        return Ok(v);
    }
    Err(JsonRecoveryError {
        preview: text.chars().take(80).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn fenced_block() {
        assert_eq!(extract_json_block("```json\n{\"nodes\": []}\n```").unwrap(), json!({"nodes": []}));
    }

    #[test]
    fn prose_around_braces() {
        assert_eq!(
            extract_json_block("Here is the graph: {\"a\":1} Hope this helps").unwrap(),
            json!({"a": 1})
        );
    }

    #[test]
    fn list_of_lists_with_prose() {
        assert_eq!(
            extract_json_block("Sure!\n[[\"US\", \"USA\"]]\nDone.").unwrap(),
            json!([["US", "USA"]])
        );
    }

    #[test]
    fn unterminated_fence() {
        assert_eq!(extract_json_block("```json\n{\"ids\": [0]}\n").unwrap(), json!({"ids": [0]}));
    }

    #[test]
    fn no_json() {
        assert!(extract_json_block("no braces at all").is_err());
    }

    fn json_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|n| json!(n)),
            "[a-zA-Z0-9 {}\\[\\]`\"]{0,12}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::btree_map("[a-z]{1,5}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn clean_input_round_trips(v in json_value()) {
            prop_assert_eq!(extract_json_block(&v.to_string()).unwrap(), v.clone());
            prop_assert_eq!(extract_json_block(&serde_json::to_string_pretty(&v).unwrap()).unwrap(), v);
        }
    }
}
