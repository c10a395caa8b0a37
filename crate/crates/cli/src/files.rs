use std::io::Write;
use std::path::{Path, PathBuf};

use choroid_core::{io, BScan, BoundaryTrace};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::ScaleArgs;
use crate::error::{CliError, CliResult};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    tracing::info!(path = %path.display(), bytes = bytes.len(), "wrote");
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, &io::to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scan(path: &Path, scales: &ScaleArgs) -> CliResult<BScan> {
    let pixels = io::decode_gray_png(&read_bytes(path)?)?;
    Ok(BScan::new(pixels, scales.axial, scales.lateral)?)
}

pub fn read_mask(path: &Path) -> CliResult<ndarray::Array2<bool>> {
    Ok(io::decode_mask_png(&read_bytes(path)?)?)
}

pub fn read_trace(path: &Path) -> CliResult<BoundaryTrace> {
    Ok(io::trace_from_json(&read_bytes(path)?)?)
}

/// One number per line from the first CSV column; a non-numeric first row is a header.
pub fn read_column(path: &Path) -> CliResult<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let Some(field) = record.get(0).filter(|f| !f.is_empty()) else { continue };
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(CliError::Usage(format!(
                    "{}: line {} is not a number: '{field}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_with_optional_header() {
        let dir = tempfile::tempdir().unwrap();
        let with = dir.path().join("a.csv");
        std::fs::write(&with, "sfct\n250.5\n301\n\n").unwrap();
        assert_eq!(read_column(&with).unwrap(), vec![250.5, 301.0]);
        let without = dir.path().join("b.csv");
        std::fs::write(&without, "1,ignored\n2\n").unwrap();
        assert_eq!(read_column(&without).unwrap(), vec![1.0, 2.0]);
        std::fs::write(&without, "1\nx\n").unwrap();
        assert!(read_column(&without).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
