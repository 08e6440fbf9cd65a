use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;

use super::config::ExperimentConfig;
use crate::diagnostics::DiagnosticsReport;
use crate::error::{BsviError, Result};

/// Sets the dotted `key` of a parsed configuration to `value`, read as a
/// TOML literal when possible and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| BsviError::invalid(format!("empty sweep key `{key}`")))?;
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| BsviError::invalid(format!("sweep key `{key}`: `{part}` is not a table")))?;
    }
    cursor.insert(last.to_string(), parsed);
    Ok(())
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&path, v, out);
            }
        }
        Value::Null => {}
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

fn flattened(config: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(config).expect("config serializes"), &mut out);
    out
}

/// Merges per-run metrics into one CSV keyed by the swept value. Columns
/// follow the metric order of the first run. Configurations may differ only
/// in `key`; any other divergence is rejected and named.
pub fn convergence_table(runs: &[(ExperimentConfig, DiagnosticsReport)], key: &str) -> Result<String> {
    let Some((first, first_report)) = runs.first() else {
        return Err(BsviError::invalid("no runs to merge"));
    };
    let base = flattened(first);
    let mut keys = Vec::new();
    for (config, _) in runs {
        let flat = flattened(config);
        let all: std::collections::BTreeSet<&String> = base.keys().chain(flat.keys()).collect();
        if let Some(diverging) = all
            .into_iter()
            .find(|k| k.as_str() != key && !k.starts_with(&format!("{key}.")) && base.get(*k) != flat.get(*k))
        {
            return Err(BsviError::invalid(format!(
                "heterogeneous configurations: `{diverging}` differs between runs"
            )));
        }
        let swept: Vec<String> = flat
            .iter()
            .filter(|(k, _)| k.as_str() == key || k.starts_with(&format!("{key}.")))
            .map(|(_, v)| v.clone())
            .collect();
        keys.push(swept.join(";"));
    }
    let names: Vec<&str> = first_report.metrics.iter().map(|m| m.name.as_str()).collect();
    let mut csv = String::new();
    let _ = write!(csv, "{}", csv_field(key));
    for n in &names {
        let _ = write!(csv, ",{}", csv_field(n));
    }
    csv.push_str(",passed\n");
    for ((_, report), k) in runs.iter().zip(&keys) {
        let _ = write!(csv, "{}", csv_field(k));
        for n in &names {
            match report.value(n) {
                Some(v) => {
                    let _ = write!(csv, ",{v}");
                }
                None => csv.push(','),
            }
        }
        let _ = writeln!(csv, ",{}", report.all_passed());
    }
    Ok(csv)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
