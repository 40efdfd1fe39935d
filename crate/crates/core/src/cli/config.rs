//! Flat `key=value` run configuration with strict unknown-key rejection.
//! Sources are layered: config file, then repeatable `--set` flags, then
//! dedicated command-line flags; later sources win.

use crate::{Error, Result};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Default)]
pub struct ConfigMap {
    map: BTreeMap<String, String>,
    consumed: RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    pub fn from_sources(
        file: Option<&Path>,
        sets: &[String],
        overrides: &[(&str, Option<String>)],
    ) -> Result<ConfigMap> {
        let mut map = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key=value, got '{raw}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        Ok(ConfigMap {
            map,
            consumed: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.consumed.borrow_mut().insert(key.to_string());
        self.map.get(key).cloned().unwrap_or_else(|| default.to_string())
    }

    pub fn get_opt(&self, key: &str) -> Option<String> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.map.get(key).cloned()
    }

    pub fn require(&self, key: &str) -> Result<String> {
        self.get_opt(key)
            .ok_or_else(|| Error::Config(format!("missing required config key '{key}'")))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        self.consumed.borrow_mut().insert(key.to_string());
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<T>().map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{v}'"))
            }),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        self.consumed.borrow_mut().insert(key.to_string());
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "config key '{key}': expected true/false, got '{v}'"
            ))),
        }
    }

    /// Comma-separated list of values.
    pub fn get_list<T: std::str::FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        self.consumed.borrow_mut().insert(key.to_string());
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse::<T>().map_err(|_| {
                        Error::Config(format!("config key '{key}': cannot parse '{p}'"))
                    })
                })
                .collect(),
        }
    }

    /// Every provided key must have been consumed by the command.
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .map
            .keys()
            .filter(|k| !consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_rejection() {
        let dir = std::env::temp_dir().join(format!("cfg_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\nsteps=100\nk = 7\n").unwrap();

        let cfg = ConfigMap::from_sources(
            Some(&path),
            &["steps=200".to_string()],
            &[("seed", Some("5".to_string()))],
        )
        .unwrap();
        assert_eq!(cfg.get::<usize>("steps", 1).unwrap(), 200);
        assert_eq!(cfg.get::<usize>("k", 1).unwrap(), 7);
        assert_eq!(cfg.get::<u64>("seed", 0).unwrap(), 5);
        cfg.reject_unknown().unwrap();

        let cfg = ConfigMap::from_sources(Some(&path), &["bogus=1".to_string()], &[]).unwrap();
        let _ = cfg.get::<usize>("steps", 1);
        let _ = cfg.get::<usize>("k", 1);
        assert!(cfg.reject_unknown().is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn parse_errors_are_config_errors() {
        let cfg = ConfigMap::from_sources(None, &["steps=abc".to_string()], &[]).unwrap();
        assert!(matches!(
            cfg.get::<usize>("steps", 1),
            Err(Error::Config(_))
        ));
    }
}
