use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

/// Failure classes that map onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage; exit code 2.
    Config(String),
    /// A run or I/O failure; exit code 1.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl From<memlab::Error> for CliError {
    fn from(e: memlab::Error) -> Self {
        match e {
            memlab::Error::Config(m) => CliError::Config(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies one `dotted.key=value` override to a TOML tree.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let (last, path) = parts.split_last().unwrap();
    let mut table = root;
    for p in path {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}` descends into the non-table `{p}`")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads an optional TOML file, applies overrides and deserializes it.
/// Unknown keys and type mismatches are errors naming the offending path.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, CliError> {
    let mut table = match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    serde_path_to_error::deserialize(Value::Table(table))
        .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

/// Resolved configuration as TOML, preceded by a comment with the command.
pub fn snapshot<T: Serialize>(config: &T, command: &str) -> Result<String, CliError> {
    let body = toml::to_string_pretty(config).map_err(|e| CliError::Run(format!("cannot serialize config: {e}")))?;
    Ok(format!("# {command}\n{body}"))
}

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use memlab::experiments::RunConfig;

    #[test]
    fn overrides_build_nested_tables_and_typed_values() {
        let mut t = Table::new();
        apply_override(&mut t, "optimizer.learning_rate=0.01").unwrap();
        apply_override(&mut t, "labels.classes=per_sample").unwrap();
        apply_override(&mut t, "probe.k_neighbors = 20").unwrap();
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(t)).unwrap();
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.probe.k_neighbors, 20);
        assert_eq!(cfg.labels.classes, memlab::experiments::LabelClasses::PER_SAMPLE);
        assert!(apply_override(&mut Table::new(), "novalue").is_err());
    }

    #[test]
    fn errors_name_the_offending_key() {
        let err = load::<RunConfig>(None, &["optimizer.learnig_rate=0.1".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        let err = load::<RunConfig>(None, &["optimizer.batch_size=\"big\"".into()]).unwrap_err();
        assert!(err.to_string().contains("optimizer.batch_size"), "{err}");
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::default();
        let text = snapshot(&cfg, "memlab train --seed 0").unwrap();
        assert!(text.starts_with("# memlab train"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
