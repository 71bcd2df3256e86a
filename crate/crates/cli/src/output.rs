use std::fs;
use std::path::{Path, PathBuf};

use crate::config::digest64;
use crate::error::{CliError, CliResult};
use crate::manifest::{FileEntry, RunManifest, CONFIG_FILE, MANIFEST_FILE};
use crate::plot::{render_plot, PlotSpec};

/// Collects the files and warnings of one run inside its output directory.
#[derive(Debug)]
pub struct RunContext {
    pub dir: PathBuf,
    files: Vec<FileEntry>,
    pub warnings: Vec<String>,
    pub dropped_points: usize,
}

impl RunContext {
    /// Prepares `dir` for a run.
    ///
    /// Files listed by a previous manifest are removed; any other file makes
    /// the directory unusable, so stale output never mixes with fresh output.
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        if dir.join(MANIFEST_FILE).exists() {
            let path = dir.join(MANIFEST_FILE);
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let previous: RunManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("malformed manifest {}: {e}", path.display())))?;
            for f in &previous.files {
                let path = dir.join(&f.path);
                if path.exists() {
                    fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
                }
            }
            let path = dir.join(MANIFEST_FILE);
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
        let mut leftovers = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if let Some(entry) = leftovers.next() {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            return Err(CliError::config(format!(
                "output directory {} contains {} which no manifest accounts for",
                dir.display(),
                entry.file_name().to_string_lossy()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            warnings: Vec::new(),
            dropped_points: 0,
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileEntry {
            path: name.to_owned(),
            digest: digest64(bytes),
        });
        Ok(path)
    }

    pub fn write_config(&mut self, effective: &str) -> CliResult<()> {
        self.write_bytes(CONFIG_FILE, effective.as_bytes()).map(|_| ())
    }

    /// Writes numeric columns as CSV.
    pub fn write_columns(&mut self, name: &str, header: &[&str], columns: &[&[f64]]) -> CliResult<PathBuf> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.len() != header.len() || columns.iter().any(|c| c.len() != rows) {
            return Err(CliError::config(format!("{name}: ragged columns")));
        }
        let records = (0..rows).map(|r| columns.iter().map(|c| c[r].to_string()).collect());
        self.write_records(name, header, records)
    }

    pub fn write_records(
        &mut self,
        name: &str,
        header: &[&str],
        records: impl IntoIterator<Item = Vec<String>>,
    ) -> CliResult<PathBuf> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let to_err = |e: csv::Error| CliError::config(format!("{name}: {e}"));
        w.write_record(header).map_err(to_err)?;
        for record in records {
            w.write_record(&record).map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::config(format!("{name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    /// Two-column `metric,value` table.
    pub fn write_summary(&mut self, metrics: &[(&str, f64)]) -> CliResult<PathBuf> {
        let records = metrics.iter().map(|(k, v)| vec![(*k).to_owned(), v.to_string()]);
        self.write_records("summary.csv", &["metric", "value"], records)
    }

    pub fn plot(&mut self, csv_name: &str, spec: PlotSpec) -> CliResult<PathBuf> {
        let outcome = render_plot(&self.dir.join(csv_name), &spec)?;
        let bytes = fs::read(&outcome.svg_path).map_err(|e| CliError::io(&outcome.svg_path, e))?;
        let name = outcome
            .svg_path
            .file_name()
            .expect("plot path has a file name")
            .to_string_lossy()
            .into_owned();
        self.files.push(FileEntry {
            path: name.clone(),
            digest: digest64(&bytes),
        });
        if outcome.dropped > 0 {
            self.warnings
                .push(format!("{name}: dropped {} non-finite or non-positive points", outcome.dropped));
            self.dropped_points += outcome.dropped;
        }
        Ok(outcome.svg_path)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}
