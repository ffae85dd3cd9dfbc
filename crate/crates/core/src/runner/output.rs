use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Version tag of `manifest.json`; bumped whenever its layout changes.
pub const MANIFEST_SCHEMA: &str = "rydsim-manifest/1";

/// Files written during one run, relative to the output directory.
pub(crate) struct Bundle {
    root: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    pub(crate) fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Bundle {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub(crate) fn files(&self) -> &[String] {
        &self.files
    }

    /// Open `relative` for writing, creating parent directories.
    pub(crate) fn open(&mut self, relative: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == relative) {
            self.files.push(relative.to_string());
        }
        Ok(BufWriter::new(file))
    }

    /// Write a file through `fill` and flush it.
    pub(crate) fn write_with<F>(&mut self, relative: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(relative);
        let mut w = self.open(relative)?;
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub(crate) fn json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        self.write_with(relative, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w).map_err(|e| Error::io(relative, e))
        })
    }

    /// CSV from a header and rows of already formatted cells.
    pub(crate) fn table(&mut self, relative: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.write_with(relative, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(r)?;
            }
            c.flush().map_err(|e| Error::io(relative, e))
        })
    }
}

/// Cell text of an optional number; missing values are empty cells.
pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
pub(crate) struct Manifest<'a, C: Serialize> {
    pub schema: &'static str,
    pub package: PackageInfo,
    pub preset: Option<&'a str>,
    pub config: &'a C,
    pub seeds: Seeds,
    pub status: &'a str,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
pub(crate) struct PackageInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl PackageInfo {
    pub(crate) fn current() -> Self {
        PackageInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// Every seed a run consumed, after defaults were applied.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Seeds {
    pub base: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_sampling: Option<u64>,
}
