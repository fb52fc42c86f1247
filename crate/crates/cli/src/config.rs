//! Layered settings: command-line flags override a flat TOML file, which
//! overrides built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

/// File keys accepted as another spelling of a canonical key.
const ALIASES: [(&str, &str); 1] = [("L", "box_radius")];

pub struct Settings {
    file: toml::Table,
    used: BTreeMap<String, serde_json::Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let mut file = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        for (alias, key) in ALIASES {
            if let Some(v) = file.remove(alias) {
                if file.contains_key(key) {
                    return Err(Failure::Usage(format!("config sets both `{alias}` and `{key}`")));
                }
                file.insert(key.to_string(), v);
            }
        }
        for (key, value) in &file {
            if value.is_table() || value.as_array().is_some_and(|a| a.iter().any(|v| v.is_table() || v.is_array())) {
                return Err(Failure::Usage(format!("config key `{key}`: nested tables are not supported")));
            }
        }
        Ok(Settings {
            file,
            used: BTreeMap::new(),
        })
    }

    /// The flag if given, else the file value, recorded for hashing.
    pub fn opt<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        let from_file = match self.file.remove(key) {
            None => None,
            Some(v) => Some(v.try_into::<T>().map_err(|e| {
                Failure::Usage(format!("config key `{key}`: expected {}: {}", short_type::<T>(), e.message()))
            })?),
        };
        let value = flag.or(from_file);
        if let Some(v) = &value {
            let json = serde_json::to_value(v).map_err(|e| Failure::Usage(format!("{key}: {e}")))?;
            self.used.insert(key.to_string(), json);
        }
        Ok(value)
    }

    pub fn or<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure> {
        let v = self.opt(key, flag)?.unwrap_or(default);
        let json = serde_json::to_value(&v).map_err(|e| Failure::Usage(format!("{key}: {e}")))?;
        self.used.insert(key.to_string(), json);
        Ok(v)
    }

    pub fn required<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure> {
        self.opt(key, flag)?.ok_or_else(|| {
            Failure::MissingSetting(format!("missing required setting `{key}` (flag --{} or config key)", key.replace('_', "-")))
        })
    }

    /// Fails on file keys that no setting consumed.
    pub fn finish(self, command: &str) -> Result<Resolved, Failure> {
        if !self.file.is_empty() {
            let keys: Vec<&str> = self.file.keys().map(String::as_str).collect();
            return Err(Failure::Usage(format!("unknown config keys for `{command}`: {}", keys.join(", "))));
        }
        Ok(Resolved {
            command: command.to_string(),
            values: self.used,
        })
    }
}

fn short_type<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "f64" => "a number",
        "u64" | "i64" | "usize" => "an integer",
        "bool" => "a boolean",
        "alloc::string::String" => "a string",
        _ if full.starts_with("alloc::vec::Vec") => "an array",
        _ => full,
    }
}

/// Effective settings of one run, in key order.
pub struct Resolved {
    pub command: String,
    pub values: BTreeMap<String, serde_json::Value>,
}

impl Resolved {
    /// SHA-256 of the command and its settings; `seed` is part of it, while
    /// `jobs` and `out` never enter.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let body = serde_json::json!({ "command": self.command, "settings": self.values });
        let digest = Sha256::digest(body.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
