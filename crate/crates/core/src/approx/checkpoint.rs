use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "OTAGCRL-CKPT v1";

/// Architecture line of a checkpoint: space-separated `key=value` pairs in
/// insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Descriptor {
    entries: Vec<(String, String)>,
}

impl Descriptor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn extend(&mut self, other: Descriptor) {
        for (k, v) in other.entries {
            self.set(&k, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint descriptor lacks `{key}`")))
    }

    pub fn expect(&self, key: &str, value: &str) -> Result<()> {
        let found = self.require(key)?;
        if found != value {
            return Err(Error::Config(format!(
                "checkpoint has {key}={found}, expected {value}"
            )));
        }
        Ok(())
    }

    /// Parses the comma-separated `sizes` entry.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        self.require("sizes")?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad layer size {s:?}")))
            })
            .collect()
    }

    fn parse(line: &str) -> Result<Self> {
        let mut d = Descriptor::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad descriptor token {tok:?}")))?;
            d.set(k, v);
        }
        Ok(d)
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Writes the magic line, the descriptor line and the parameters as
/// little-endian f64.
pub fn write_checkpoint(path: &Path, desc: &Descriptor, params: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(params.len() * 8 + 128);
    writeln!(buf, "{MAGIC}").unwrap();
    writeln!(buf, "{desc} params={}", params.len()).unwrap();
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Descriptor, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = bytes.splitn(3, |b| *b == b'\n');
    let magic = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    if magic != MAGIC.as_bytes() {
        return Err(bad(1, "not an OTAGCRL-CKPT v1 file"));
    }
    let desc = lines.next().ok_or_else(|| bad(2, "missing descriptor"))?;
    let desc = std::str::from_utf8(desc).map_err(|_| bad(2, "descriptor is not UTF-8"))?;
    let mut desc = Descriptor::parse(desc).map_err(|e| bad(2, &e.to_string()))?;
    let body = lines.next().unwrap_or(&[]);
    if body.len() % 8 != 0 {
        return Err(bad(3, "parameter block is not a whole number of f64"));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let declared: usize = desc
        .require("params")?
        .parse()
        .map_err(|_| bad(2, "bad params count"))?;
    if declared != params.len() {
        return Err(bad(3, "parameter count does not match the descriptor"));
    }
    desc.entries.retain(|(k, _)| k != "params");
    Ok((desc, params))
}
