//! Loading the TOML run configuration and applying `--set` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use leadlag_fuse::config::RunConfig;
use toml::{Table, Value};

use crate::error::CliError;

/// Parsed configuration plus the directory its relative paths resolve
/// against.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "config file {} not found",
            path.display()
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let mut table: Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    let known = Value::try_from(RunConfig::default())
        .map_err(|e| CliError::Config(format!("default config: {e}")))?;
    for o in overrides {
        apply_override(&mut table, &known, o)?;
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| {
            CliError::Config(format!("{}: {}", path.display(), e.message()))
        })?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, base_dir })
}

/// Parse an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// `a.b.c=value`: every segment must name a key of the default
/// configuration.
pub fn apply_override(table: &mut Table, known: &Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let mut schema = known;
    for seg in &path {
        schema = schema
            .get(seg)
            .ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
    }
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut node = table;
    for seg in parents {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{seg}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known() -> Value {
        Value::try_from(RunConfig::default()).unwrap()
    }

    fn load_str(text: &str, overrides: &[&str]) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        load(&path, &o).map(|l| l.config)
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(load_str("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply_typed_values() {
        let c = load_str(
            "[graphs]\nstates = 4\n",
            &[
                "graphs.p_value=0.05",
                "model.max_epochs=3",
                "data.prices_dir=some/dir",
                "graphs.window_ends=[1,2]",
            ],
        )
        .unwrap();
        assert_eq!(c.graphs.p_value, 0.05);
        assert_eq!(c.model.max_epochs, 3);
        assert_eq!(c.data.prices_dir, "some/dir");
        assert_eq!(c.graphs.window_ends, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut t = Table::new();
        assert!(apply_override(&mut t, &known(), "graphs.nope=1").is_err());
        assert!(apply_override(&mut t, &known(), "graphs.states").is_err());
        assert!(matches!(
            load_str("[bogus]\nx = 1\n", &[]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn missing_file_is_a_missing_input() {
        let r = load(Path::new("/nonexistent/run.toml"), &[]);
        assert!(matches!(r, Err(CliError::MissingInput(_))));
    }
}
