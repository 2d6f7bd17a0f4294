use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DataError, FrameSequence, Result};

/// Ordered `key = value` text document.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DataError::Manifest {
                line: i + 1,
                detail: "expected `key = value`".into(),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::harness::io::write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// SHA-256 over extents and raw little-endian values of the given events.
pub fn content_hash<'a>(events: impl IntoIterator<Item = &'a FrameSequence>) -> String {
    let mut h = Sha256::new();
    for ev in events {
        for &d in ev.frames.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in ev.frames.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = Manifest::new();
        m.set("format", "EVST1").set("n_events", 3);
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("# comment\nbroken").is_err());
    }
}
