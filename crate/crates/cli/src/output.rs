//! Artifact writers. Every file is written to a temporary sibling and renamed
//! into place, so it is either complete or absent.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use hpinn_core::GridField;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// CSV with an `x` column followed by named columns of equal length.
pub fn profile_csv(x: &[f64], columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("x");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (j, xj) in x.iter().enumerate() {
        let _ = write!(out, "{xj}");
        for (_, col) in columns {
            let _ = write!(out, ",{}", col[j]);
        }
        out.push('\n');
    }
    out
}

/// `field` resampled at the points of `grid` by cubic interpolation.
pub fn resample(field: &GridField, grid: &GridField) -> Vec<f64> {
    grid.coordinates()
        .into_iter()
        .map(|x| hpinn_core::refsolver::interpolate_cubic(field, x))
        .collect()
}

/// Accumulates JSON lines; written once at the end of a command.
#[derive(Debug, Default)]
pub struct JsonLines {
    text: String,
}

impl JsonLines {
    pub fn push<T: Serialize>(&mut self, record: &T) {
        self.text
            .push_str(&serde_json::to_string(record).expect("records serialize"));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.text)
    }
}

/// File-name fragment for a time, e.g. `0.200`.
pub fn time_tag(t: f64) -> String {
    format!("{t:.3}")
}
