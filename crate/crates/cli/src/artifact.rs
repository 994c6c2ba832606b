//! Output files, input vectors and exit statuses.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ozone_core::microsim::MicroarchConfig;

/// Why a command did not succeed. The exit status is part of the interface.
#[derive(Debug)]
pub enum Failure {
    Verdict(String),
    Input(String),
    Watchdog(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verdict(_) => 1,
            Failure::Input(_) => 2,
            Failure::Watchdog(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verdict(m) | Failure::Input(m) | Failure::Watchdog(m) => f.write_str(m),
        }
    }
}

pub fn input_err(e: impl fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

pub fn load_config(path: Option<&Path>) -> Result<MicroarchConfig, Failure> {
    match path {
        None => Ok(MicroarchConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            MicroarchConfig::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))
        }
    }
}

/// Comment lines that open every artifact.
pub fn header(command: &str, seed: u64, cfg: &MicroarchConfig, extra: &[(&str, String)]) -> String {
    let mut h = format!("# ozone {command}\n# seed={seed}\n# config={}\n", cfg.hash_hex());
    for (k, v) in extra {
        h.push_str(&format!("# {k}={v}\n"));
    }
    h
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| Failure::Input(format!("{}: {e}", path.display()));
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn hex_row(words: &[u64]) -> String {
    words.iter().map(|w| format!("{w:016x}")).collect::<Vec<_>>().join(",")
}

/// One input vector per non-comment line, words as hex with optional `0x`.
pub fn parse_hex_csv(text: &str) -> Result<Vec<Vec<u64>>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                let f = f.strip_prefix("0x").unwrap_or(f);
                u64::from_str_radix(f, 16).map_err(|e| format!("line {}: `{f}`: {e}", i + 1))
            })
            .collect::<Result<Vec<u64>, String>>()?;
        out.push(row);
    }
    Ok(out)
}
