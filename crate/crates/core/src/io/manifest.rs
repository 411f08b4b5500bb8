use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{CoreError, Result};

pub fn render_manifest(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CoreError::Format {
                    kind: "manifest",
                    message: format!("line without '=': {l}"),
                })
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    write_bytes(path, render_manifest(entries).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CoreError::Format {
        kind: "manifest",
        message: "not valid UTF-8".into(),
    })?;
    parse_manifest(&text)
}
