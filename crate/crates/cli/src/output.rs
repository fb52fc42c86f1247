//! Output files: a provenance header on every artifact and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::Resolved;

pub struct Output {
    dir: PathBuf,
    hash: String,
    seed: Option<u64>,
    settings: Value,
    pub written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path, resolved: &Resolved) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            hash: resolved.hash(),
            seed: resolved.values.get("seed").and_then(Value::as_u64),
            settings: serde_json::to_value(&resolved.values).expect("settings are JSON"),
            written: Vec::new(),
        })
    }

    pub fn header(&self) -> String {
        let mut h = format!("# epishape {} config_hash={}", env!("CARGO_PKG_VERSION"), self.hash);
        if let Some(s) = self.seed {
            h.push_str(&format!(" seed={s}"));
        }
        h
    }

    pub fn csv(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        let text = format!("{}\n{body}", self.header());
        self.write(name, text.as_bytes())
    }

    /// Writes `value` with a `_meta` record; non-object values are wrapped
    /// under `result`.
    pub fn json(&mut self, name: &str, value: Value) -> std::io::Result<()> {
        let meta = serde_json::json!({
            "tool": "epishape",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.hash,
            "seed": self.seed,
            "settings": self.settings,
        });
        let mut obj = match value {
            Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("result".into(), other);
                m
            }
        };
        obj.insert("_meta".into(), meta);
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Settings;

    fn resolved(seed: u64) -> Resolved {
        let mut s = Settings::load(None).unwrap();
        s.or("seed", None::<u64>, seed).unwrap();
        s.finish("test").unwrap()
    }

    #[test]
    fn csv_carries_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path(), &resolved(5)).unwrap();
        out.csv("a.csv", "x,y\n1,2\n").unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# epishape ") && first.ends_with(" seed=5"), "{first}");
        assert!(first.contains("config_hash="));
        assert!(text.ends_with("x,y\n1,2\n"));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn json_gains_meta() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path(), &resolved(9)).unwrap();
        out.json("r.json", serde_json::json!({"rate": 0.5})).unwrap();
        out.json("s.json", serde_json::json!([1, 2])).unwrap();
        let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(r["rate"], 0.5);
        assert_eq!(r["_meta"]["seed"], 9);
        let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
        assert_eq!(s["result"][1], 2);
    }
}
