//! CSV and JSON artifact writers.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;

/// Round-trip formatting used for every floating-point CSV field (17 significant digits).
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV file with a fixed header; every row must match its width.
pub struct CsvArtifact {
    path: PathBuf,
    width: usize,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvArtifact {
    pub fn create(dir: &Path, name: &str, header: &[&str]) -> anyhow::Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(header)?;
        Ok(Self { path, width: header.len(), writer })
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        anyhow::ensure!(
            fields.len() == self.width,
            "row of width {} written to {} with {} columns",
            fields.len(),
            self.path.display(),
            self.width
        );
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Pretty-printed JSON file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::f64::consts::PI] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn row_width_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = CsvArtifact::create(dir.path(), "t.csv", &["a", "b"]).unwrap();
        assert!(csv.row(&["1".into()]).is_err());
        csv.row(&["1".into(), "2".into()]).unwrap();
        let path = csv.finish().unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "a,b\n1,2\n");
    }
}
