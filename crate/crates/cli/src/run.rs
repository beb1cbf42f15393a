//! Run directory, artifact writing and the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use sfpca::data::{read_csv, Dataset};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
struct FileEntry {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: Option<u64>,
    threads: usize,
    versions: Versions,
    inputs: &'a [FileEntry],
    outputs: &'a [FileEntry],
    elapsed_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Versions {
    sfpca: &'static str,
}

pub struct Context {
    pub config: RunConfig,
    pub dir: PathBuf,
    command: &'static str,
    started: Instant,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

impl Context {
    pub fn open(config: RunConfig, command: &'static str) -> Result<Self, CliError> {
        let dir = config.run_dir();
        std::fs::create_dir_all(&dir).map_err(|e| output_err(&dir, e))?;
        let mut ctx = Context {
            config,
            dir,
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        let toml = ctx.config.to_run_toml();
        ctx.write("config.toml", toml.into_bytes())?;
        Ok(ctx)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, &bytes).map_err(|e| output_err(&path, e))?;
        self.outputs.retain(|f| f.file != name);
        self.outputs.push(FileEntry {
            file: name.to_string(),
            sha256: sha(&bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Output(format!("{name}: {e}")))?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Writes rows through a CSV writer.
    pub fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            f(&mut w).map_err(|e| CliError::Output(format!("{name}: {e}")))?;
            w.flush().map_err(|e| CliError::Output(format!("{name}: {e}")))?;
        }
        self.write(name, buf)
    }

    /// Reads a file and records it as an input of this command.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileEntry {
            file: path.display().to_string(),
            sha256: sha(&bytes),
            bytes: bytes.len(),
        });
        Ok(bytes)
    }

    /// Reads a JSON artifact of an earlier command, if present.
    pub fn read_artifact<T: serde::de::DeserializeOwned>(&mut self, name: &str) -> Result<Option<T>, CliError> {
        let path = self.path(name);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = self.read_input(&path)?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn load_csv(&mut self, path: &Path) -> Result<Dataset, CliError> {
        let bytes = self.read_input(path)?;
        let mut ds = read_csv(bytes.as_slice(), &self.config.columns)
            .map_err(|e| CliError::data(e).context(&path.display().to_string()))?;
        ds.horizon = self.config.cleaning.horizon;
        Ok(ds)
    }

    /// Raw data for `clean`: the configured input, else this run's
    /// simulated file.
    pub fn raw_dataset(&mut self) -> Result<Dataset, CliError> {
        let candidates = [self.config.input.clone(), Some(self.path("simulated.csv"))];
        self.first_existing(&candidates)
    }

    /// Data for the analysis commands: this run's cleaned file, else its
    /// simulated file, else the configured input.
    pub fn analysis_dataset(&mut self) -> Result<Dataset, CliError> {
        let candidates = [
            Some(self.path("cleaned.csv")),
            Some(self.path("simulated.csv")),
            self.config.input.clone(),
        ];
        self.first_existing(&candidates)
    }

    fn first_existing(&mut self, candidates: &[Option<PathBuf>]) -> Result<Dataset, CliError> {
        if let Some(input) = &self.config.input {
            if !input.exists() {
                return Err(CliError::Data(format!("input file {} does not exist", input.display())));
            }
        }
        match candidates.iter().flatten().find(|p| p.exists()) {
            Some(p) => self.load_csv(&p.clone()),
            None => Err(CliError::Data(format!(
                "no input data: set `input` or run `simulate` into {}",
                self.dir.display()
            ))),
        }
    }

    /// Writes `manifest-<command>.json` and returns the run directory.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.outputs.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            command: self.command,
            config_hash: self.config.hash(),
            seed: self.config.seed,
            threads: rayon::current_num_threads(),
            versions: Versions {
                sfpca: env!("CARGO_PKG_VERSION"),
            },
            inputs: &self.inputs,
            outputs: &self.outputs,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Output(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.path(&format!("manifest-{}.json", self.command));
        std::fs::write(&path, bytes).map_err(|e| output_err(&path, e))?;
        Ok(self.dir)
    }
}
