//! Run manifests and small CSV writers shared by the harness and the CLI.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::grid::Field;

/// Hex SHA-256 of a canonical configuration string.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Provenance written next to every field dump.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub problem: String,
    pub eps: Option<f64>,
    pub grid_points: usize,
    pub period: f64,
    pub dimension: usize,
    /// Every resolved setting, echoed verbatim.
    pub settings: Vec<(String, String)>,
}

impl Manifest {
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "problem = \"{}\"\neps = {}\ngrid_points = {}\nperiod = {:.16e}\ndimension = {}\n",
            self.problem,
            self.eps.map_or("\"none\"".to_string(), |e| format!("{e:.16e}")),
            self.grid_points,
            self.period,
            self.dimension
        );
        let mut settings = self.settings.clone();
        settings.sort();
        for (k, v) in settings {
            s.push_str(&format!("{k} = \"{v}\"\n"));
        }
        s
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = String::from("[run]\n");
        body.push_str(&self.canonical());
        body.push_str(&format!("cfg_hash = \"{}\"\n", self.hash()));
        fs::write(path, body)?;
        Ok(())
    }
}

/// Writes `field` to `<dir>/<stem>.csv` with its manifest at `<dir>/<stem>.manifest.toml`.
pub fn write_field(dir: &Path, stem: &str, field: &Field, manifest: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    field.write_csv(&csv)?;
    manifest.write(&dir.join(format!("{stem}.manifest.toml")))?;
    Ok(csv)
}

/// Writes a header line and rows of already-formatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Formats a float with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_order_independent() {
        let mut a = Manifest {
            problem: "eikonal-1d".into(),
            eps: Some(0.1),
            grid_points: 640,
            period: 1.0,
            dimension: 1,
            settings: vec![("cfl".into(), "0.45".into()), ("t_end".into(), "1".into())],
        };
        let h = a.hash();
        a.settings.reverse();
        assert_eq!(a.hash(), h);
        a.eps = Some(0.05);
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }
}
