//! Plain-text settings files of `key = value` lines.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// values may be wrapped in double quotes.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "empty key".into(),
            });
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        map.insert(key.replace('-', "_"), value.to_string());
    }
    Ok(map)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    parse_key_values(&std::fs::read_to_string(path)?)
}
