//! CSV formatting and atomic file writes.

use std::io::Write;
use std::path::Path;

use impfrac::{CVector, Complex64};

use crate::error::{CliError, Result};

/// Fixed-format number: shortest round-trip scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(dir))?;
    tmp.write_all(bytes).map_err(CliError::io(path))?;
    tmp.as_file().sync_all().map_err(CliError::io(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

/// Accumulates CSV rows; vector-valued rows expand to one line per
/// component when the state has more than one.
pub struct Csv {
    dim: usize,
    out: String,
}

impl Csv {
    /// `columns` is the header without the trailing component column.
    pub fn new(columns: &[&str], dim: usize) -> Self {
        let mut out = columns.join(",");
        if dim > 1 {
            out.push_str(",component");
        }
        out.push('\n');
        Csv { dim, out }
    }

    /// One line per component; `cells(k)` renders the fields of component k.
    pub fn rows(&mut self, mut cells: impl FnMut(usize) -> Vec<String>) {
        for k in 0..self.dim {
            self.out.push_str(&cells(k).join(","));
            if self.dim > 1 {
                self.out.push_str(&format!(",{k}"));
            }
            self.out.push('\n');
        }
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub fn re_im(z: Complex64) -> [String; 2] {
    [num(z.re), num(z.im)]
}

pub fn comp(v: &CVector, k: usize) -> [String; 2] {
    re_im(v[k])
}

/// Lowercase hexadecimal.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_column_only_for_vectors() {
        let mut c = Csv::new(&["t", "re_x"], 1);
        c.rows(|_| vec![num(0.5), num(1.0)]);
        assert_eq!(c.finish(), "t,re_x\n5e-1,1e0\n");
        let mut c = Csv::new(&["t"], 2);
        c.rows(|k| vec![num(k as f64)]);
        assert_eq!(c.finish(), "t,component\n0e0,0\n1e0,1\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}
