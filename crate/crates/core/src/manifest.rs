//! Run manifests: plain `key = value` lines recording everything needed to
//! repeat a command.

use std::fs;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        for (i, a) in argv.iter().enumerate() {
            m.set(&format!("arg.{i}"), a);
        }
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_owned(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Records the SHA-256 of an input file.
    pub fn digest_input(&mut self, key: &str, path: &Path) -> Result<()> {
        self.set(&format!("input.{key}.path"), path.display());
        self.set(&format!("input.{key}.sha256"), sha256_file(path)?);
        Ok(())
    }

    /// `(key, sha256)` for every input recorded by [`Self::digest_input`].
    pub fn input_digests(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix("input.")?.strip_suffix(".sha256")?;
                Some((key.to_owned(), v.clone()))
            })
            .collect()
    }

    /// The recorded command-line arguments, program name excluded.
    pub fn argv(&self) -> Vec<String> {
        (0..)
            .map_while(|i| self.get(&format!("arg.{i}")).map(str::to_owned))
            .collect()
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Parse {
                file: FILE_NAME.into(),
                line: n + 1,
                reason: "expected `key = value`".into(),
            })?;
            m.entries.push((k.to_owned(), v.to_owned()));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        fs::write(&path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = RunManifest::new("fit", &["fit".into(), "--input".into(), "a b.tsv".into()]);
        m.set("seed", 7);
        m.set("seed", 8);
        let back = RunManifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("seed"), Some("8"));
        assert_eq!(back.argv(), vec!["fit", "--input", "a b.tsv"]);
    }

    #[test]
    fn digests_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
