//! Experiment files: TOML with one table per component.
//!
//! ```toml
//! [controller]
//! k = [7.5, 7.5, 7.5, 7.5]
//! [madam]
//! eta = 0.0005
//! ```
//!
//! Every key is optional and unknown keys are rejected. Diagonal gain
//! matrices are written as four-element arrays.

use std::path::Path;

use deepmso::SimConfig;

use crate::error::{CliError, CliResult};

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses experiment text; the result is validated.
pub fn parse_experiment_str(text: &str) -> CliResult<SimConfig> {
    let cfg: SimConfig = toml::from_str(text).map_err(|e| CliError {
        line: e.span().map(|s| line_of(text, s.start)),
        ..CliError::config(e.message().trim().to_string())
    })?;
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_experiment(path: &Path) -> CliResult<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_experiment_str(&text).map_err(|e| CliError {
        path: Some(path.display().to_string()),
        ..e
    })
}

/// Serializes a configuration so that parsing it back yields the same value.
pub fn emit(cfg: &SimConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable")
}

/// Returns a copy of `cfg` with `key` set to the TOML literal `value`.
/// `key` is either `section.field` or a bare field name that occurs in
/// exactly one section.
pub fn override_key(cfg: &SimConfig, key: &str, value: &str) -> CliResult<SimConfig> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| CliError::config(e.to_string()))?;
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s.to_string(), f.to_string()),
        None => {
            let owners: Vec<&String> = table
                .iter()
                .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
                .map(|(k, _)| k)
                .collect();
            match owners.as_slice() {
                [one] => ((*one).clone(), key.to_string()),
                [] => return Err(CliError::config(format!("unknown key `{key}`"))),
                _ => {
                    return Err(CliError::config(format!(
                        "key `{key}` is ambiguous, qualify it as one of {}",
                        owners.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")
                    )))
                }
            }
        }
    };
    let parsed: toml::Table = format!("v = {value}")
        .parse()
        .or_else(|_| format!("v = {:?}", value).parse())
        .map_err(|e: toml::de::Error| CliError::config(format!("bad value for `{key}`: {}", e.message())))?;
    let section_table = table
        .get_mut(&section)
        .and_then(|v| v.as_table_mut())
        .ok_or_else(|| CliError::config(format!("unknown section `{section}`")))?;
    section_table.insert(field, parsed["v"].clone());
    let text = toml::to_string(&table).map_err(|e| CliError::config(e.to_string()))?;
    parse_experiment_str(&text).map_err(|e| CliError::config(format!("{key} = {value}: {}", e.message)))
}
