//! Output directory bookkeeping: every file written through [`Bundle`] is
//! listed with its hash in `manifest.json`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use hexfem::io::vtk::{write_vtk, Field};
use hexfem::mesh::Mesh;
use hexfem::FemError;

/// Why a run stopped; maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
    /// The run completed but its own check (Taylor orders) failed.
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Config(e) => format!("config error: {}", chain(e)),
            Failure::Solver(e) => format!("solver failure: {}", chain(e)),
            Failure::Io(e) => format!("io error: {}", chain(e)),
            Failure::Check(m) => format!("check failed: {m}"),
        }
    }
}

/// Error chain joined by ": ", skipping causes already spelled out by an outer message.
fn chain(e: &anyhow::Error) -> String {
    let mut s = String::new();
    for cause in e.chain() {
        let t = cause.to_string();
        if !s.contains(&t) {
            if !s.is_empty() {
                s.push_str(": ");
            }
            s.push_str(&t);
        }
    }
    s
}

impl From<FemError> for Failure {
    fn from(e: FemError) -> Self {
        if e.is_convergence_failure() {
            return Failure::Solver(e.into());
        }
        match e {
            FemError::Io(_) => Failure::Io(e.into()),
            FemError::StepFailed { ref source, .. } if matches!(**source, FemError::Io(_)) => {
                Failure::Io(e.into())
            }
            _ => Failure::Config(e.into()),
        }
    }
}

pub type RunResult<T> = std::result::Result<T, Failure>;

pub fn io_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Io(e.into())
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    status: &'a str,
    error: Option<String>,
    seed: u64,
    threads: usize,
    config_sha256: String,
    wall_time_seconds: f64,
    summary: &'a serde_json::Value,
    files: Vec<FileEntry>,
}

pub struct Bundle {
    root: PathBuf,
    files: Vec<PathBuf>,
    started: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest representation that parses back to the same f64.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

impl Bundle {
    pub fn create(root: &Path) -> RunResult<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("creating {}", root.display()))
            .map_err(io_err)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn register(&mut self, name: &str) -> PathBuf {
        let rel = PathBuf::from(name);
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        self.root.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> RunResult<()> {
        let path = self.register(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(io_err)
    }

    /// Write a CSV with a header row; each row is already formatted.
    pub fn csv<I, R, S>(&mut self, name: &str, header: &[&str], rows: I) -> RunResult<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = S>,
        S: Display,
    {
        let path = self.register(name);
        let write = || -> anyhow::Result<()> {
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.into_iter().map(|c| c.to_string()))?;
            }
            w.flush()?;
            Ok(())
        };
        write()
            .with_context(|| format!("writing {}", path.display()))
            .map_err(io_err)
    }

    pub fn vtk(
        &mut self,
        name: &str,
        mesh: &Mesh,
        point_data: &[Field],
        cell_data: &[Field],
    ) -> RunResult<()> {
        let path = self.register(name);
        write_vtk(&path, mesh, point_data, cell_data).map_err(Failure::from)
    }

    /// Write `manifest.json` listing every file emitted so far.
    pub fn finish(
        self,
        command: &str,
        resolved_config: &str,
        seed: u64,
        threads: usize,
        summary: &serde_json::Value,
        failure: Option<&Failure>,
    ) -> RunResult<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let path = self.root.join(rel);
            // a failed run may have registered a file it never wrote
            let Ok(bytes) = std::fs::read(&path) else {
                continue;
            };
            files.push(FileEntry {
                path: rel.to_string_lossy().into_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            tool: "hexfem",
            version: env!("CARGO_PKG_VERSION"),
            command,
            status: if failure.is_none() { "ok" } else { "failed" },
            error: failure.map(Failure::message),
            seed,
            threads,
            config_sha256: sha256_hex(resolved_config.as_bytes()),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            summary,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(io_err)?;
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(io_err)
    }
}
