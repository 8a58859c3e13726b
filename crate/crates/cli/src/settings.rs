//! Config file parsing and command-line overrides.

use std::fs;
use std::path::Path;

use fedhist::ExperimentConfig;
use toml::{Table, Value};

use crate::{io_err, CliError, Result};

/// Splits `key=value`. The value is read as a TOML literal when it parses as
/// one and as a bare string otherwise, so `strategy=fedavg` needs no quotes.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let bad = |message: &str| CliError::Override { spec: spec.to_string(), message: message.to_string() };
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad("empty key segment"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Override {
            spec: key.to_string(),
            message: format!("`{part}` is not a table"),
        })?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

/// Parses config text, applies overrides in order, fills defaults and
/// validates. `origin` is used in error messages and to resolve a relative
/// `data.csv` path.
pub fn parse_config(text: &str, origin: &Path, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let file_err = |message: String| CliError::ConfigFile { path: origin.to_path_buf(), message };
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| file_err(e.message().to_string()))?;
    for (key, value) in overrides {
        apply_override(&mut table, key, value.clone())?;
    }
    let mut cfg: ExperimentConfig =
        Value::Table(table).try_into().map_err(|e: toml::de::Error| file_err(e.message().to_string()))?;
    if let (Some(csv), Some(dir)) = (&cfg.data.csv, origin.parent()) {
        if csv.is_relative() {
            cfg.data.csv = Some(dir.join(csv));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading config {}", path.display())))?;
    parse_config(&text, path, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedhist::{data::Heterogeneity, Strategy};

    fn parse(text: &str, sets: &[&str]) -> Result<ExperimentConfig> {
        let overrides: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
        parse_config(text, Path::new("test.toml"), &overrides)
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse("n = 8\nk = 2\nrounds = 12\n", &[]).unwrap();
        let d = ExperimentConfig::default();
        assert_eq!((cfg.n, cfg.k, cfg.rounds), (8, 2, 12));
        assert_eq!(cfg.history, d.history);
        assert_eq!(cfg.alpha, d.alpha);
        assert_eq!(cfg.speed, d.speed);
    }

    #[test]
    fn override_beats_file() {
        let sets = ["seed=7", "strategy=fedavg", "speed={ model = \"uniform\", min = 1, max = 5 }", "beta=iid"];
        let cfg = parse("seed = 3\n", &sets).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.strategy, Strategy::FedAvg);
        assert_eq!(cfg.beta, Heterogeneity::Iid);
        assert!(matches!(cfg.speed, fedhist::config::SpeedModel::Uniform { max, .. } if max == 5.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let msg = parse("histroy = 3\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("histroy"), "{msg}");
        let msg = parse("[data]\ndims = 3\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("dims"), "{msg}");
    }

    #[test]
    fn k_above_n_names_both_keys() {
        let msg = parse("n = 3\nk = 5\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("k") && msg.contains("n = 3"), "{msg}");
    }

    #[test]
    fn malformed_override() {
        assert!(parse_override("seed").is_err());
        assert!(parse_override("a..b=1").is_err());
        let err = parse("n = 4\n", &["n.x=1"]).unwrap_err();
        assert!(err.to_string().contains("not a table"), "{err}");
    }

    #[test]
    fn relative_csv_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "f1,label\n0.5,0\n1.5,1\n").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[data]\ncsv = \"d.csv\"\n").unwrap();
        let cfg = load_config(&path, &[]).unwrap();
        assert_eq!(cfg.data.csv.unwrap(), dir.path().join("d.csv"));
    }
}
