//! Report serialization: CSV ('.' decimal, comma delimiter, LF endings) and
//! JSON, all floating point printed with 17 significant digits so files
//! round-trip bitwise.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// 17 significant digits; parses back to the identical double
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter {
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        CsvWriter { buf, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width mismatch");
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn row_f64(&mut self, cells: &[f64]) {
        let strs: Vec<String> = cells.iter().map(|v| fmt_f64(*v)).collect();
        self.row(&strs);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf.as_bytes())?;
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}

/// FNV-1a over the canonical domain JSON; identifies the geometry in reports
pub fn domain_hash(domain: &crate::geometry::DomainSpec) -> String {
    let text = domain.to_json().to_string();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut out = String::new();
    let _ = write!(out, "{h:016x}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trips() {
        for v in [1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -0.0, 6.02e23] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
            assert!(!s.contains(','));
        }
    }

    #[test]
    fn csv_shape_and_line_endings() {
        let mut w = CsvWriter::new(&["a", "b"]);
        w.row_f64(&[1.5, 2.5]);
        let text = w.as_str();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn domain_hash_stable_and_discriminating() {
        let d1 = crate::geometry::flat_bottom_rect(1.0, 1.0, 0.4).unwrap();
        let d2 = crate::geometry::flat_bottom_rect(1.0, 1.0, 0.4).unwrap();
        let d3 = crate::geometry::flat_bottom_rect(2.0, 1.0, 0.4).unwrap();
        assert_eq!(domain_hash(&d1), domain_hash(&d2));
        assert_ne!(domain_hash(&d1), domain_hash(&d3));
    }
}
