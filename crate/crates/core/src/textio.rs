//! Shared helpers for the line-oriented artifact formats.
//!
//! Floating-point values are always written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite `f64` exactly through
//! `str::parse`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Write `contents` to a new file, failing if the path already exists.
pub fn write_new(path: &Path, contents: &[u8]) -> Result<()> {
    let mut file = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            Error::AlreadyExists(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    file.write_all(contents)?;
    Ok(())
}

/// Line cursor that remembers 1-based line numbers for error messages.
pub struct Lines<'a> {
    format: &'static str,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    pub fn new(format: &'static str, text: &'a str) -> Self {
        Lines {
            format,
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    pub fn line(&self) -> usize {
        self.line
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.format, self.line, msg)
    }

    pub fn next_line(&mut self) -> Option<&'a str> {
        let (i, l) = self.inner.next()?;
        self.line = i + 1;
        Some(l)
    }

    pub fn expect_line(&mut self) -> Result<&'a str> {
        match self.next_line() {
            Some(l) => Ok(l),
            None => Err(Error::parse(self.format, self.line + 1, "unexpected end of input")),
        }
    }

    /// Read a `key value` line and return the value text.
    pub fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let l = self.expect_line()?;
        let (k, v) = l.split_once(' ').ok_or_else(|| self.err(format!("expected `{key} <value>`")))?;
        if k != key {
            return Err(self.err(format!("expected key `{key}`, found `{k}`")));
        }
        Ok(v.trim())
    }

    pub fn key_f64(&mut self, key: &str) -> Result<f64> {
        let v = self.expect_key(key)?;
        parse_f64(v).ok_or_else(|| self.err(format!("`{key}`: invalid number `{v}`")))
    }

    pub fn key_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.expect_key(key)?;
        v.parse().map_err(|_| self.err(format!("`{key}`: invalid integer `{v}`")))
    }

    pub fn key_u64(&mut self, key: &str) -> Result<u64> {
        let v = self.expect_key(key)?;
        v.parse().map_err(|_| self.err(format!("`{key}`: invalid integer `{v}`")))
    }
}

/// Parse a finite `f64`; rejects `inf`/`nan` spellings.
pub fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_text_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse_f64(&fmt_f64(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn write_new_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_new(&p, b"one").unwrap();
        assert!(matches!(write_new(&p, b"two"), Err(Error::AlreadyExists(_))));
        assert_eq!(std::fs::read(&p).unwrap(), b"one");
    }
}
