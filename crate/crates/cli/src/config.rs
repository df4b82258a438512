//! Config files mirroring the CLI flags: either a flat JSON object or
//! `key=value` lines, keyed by the long flag names. Flags given on the
//! command line win over file values.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    values: HashMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let mut values = HashMap::new();
        if trimmed.starts_with('{') {
            let json: serde_json::Value = serde_json::from_str(text)
                .map_err(|e| CliError::Usage(format!("invalid JSON config: {e}")))?;
            let obj = json
                .as_object()
                .ok_or_else(|| CliError::Usage("config JSON must be an object".into()))?;
            for (k, v) in obj {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                values.insert(k.clone(), s);
            }
        } else {
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("line {}: expected key=value", idx + 1))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    pub fn get_string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }
}

/// CLI value if present, else config value, else default.
pub fn resolve<T: FromStr + Clone>(
    flag: Option<T>,
    config: &ConfigMap,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(config.get::<T>(key)?.unwrap_or(default))
}

/// As [`resolve`] but without a default.
pub fn resolve_opt<T: FromStr>(
    flag: Option<T>,
    config: &ConfigMap,
    key: &str,
) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    config.get::<T>(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_value_lines() {
        let cfg = ConfigMap::parse("seed = 7\n# comment\nk-bound=12\n").unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get::<usize>("k-bound").unwrap(), Some(12));
        assert_eq!(cfg.get::<u64>("missing").unwrap(), None);
    }

    #[test]
    fn parses_json_object() {
        let cfg = ConfigMap::parse(r#"{"seed": 7, "penalty": "mcp"}"#).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get_string("penalty"), Some("mcp".into()));
    }

    #[test]
    fn flags_win_over_config() {
        let cfg = ConfigMap::parse("seed=7").unwrap();
        assert_eq!(resolve(Some(9u64), &cfg, "seed", 0).unwrap(), 9);
        assert_eq!(resolve(None, &cfg, "seed", 0).unwrap(), 7);
        assert_eq!(resolve::<u64>(None, &cfg, "other", 5).unwrap(), 5);
    }

    #[test]
    fn bad_value_is_usage_error() {
        let cfg = ConfigMap::parse("seed=abc").unwrap();
        assert!(matches!(
            cfg.get::<u64>("seed"),
            Err(CliError::Usage(_))
        ));
    }
}
