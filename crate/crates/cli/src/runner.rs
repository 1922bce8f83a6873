//! The `run` command: one CSV per (algorithm, seed) cell plus a manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dop::experiment::{build_trainer, run_id, run_seed_with};
use dop::metrics::MetricRecord;
use dop::{DopError, RunConfig};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    /// Parse failure with a 1-based position.
    Syntax { line: usize, column: usize, message: String },
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Syntax { line, column, message } => write!(f, "config error at line {line}, column {column}: {message}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg = RunConfig::from_json(text).map_err(|e| ConfigError::Syntax { line: e.line(), column: e.column(), message: e.to_string() })?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    // Catches algorithm/environment mismatches before any cell starts.
    if let Err(e @ DopError::Config(_)) = build_trainer(&cfg, cfg.seeds[0]) {
        return Err(ConfigError::Invalid(e.to_string()));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Writes rows as CSV with the fixed column order.
pub fn write_csv<W: Write>(out: W, rows: &[MetricRecord]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    if rows.is_empty() {
        w.write_record(dop::metrics::COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub run_id: String,
    pub seed: u64,
    pub csv: String,
    pub rows: usize,
    pub status: CellStatus,
    /// Environment step of a divergence.
    pub step: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a RunConfig,
    cells: &'a [CellReport],
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub parallel: usize,
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out: None, parallel: 1, seed_offset: 0 }
    }
}

fn run_cell(cfg: &RunConfig, seed: u64, dir: &Path) -> CellReport {
    let id = run_id(cfg, seed);
    let file = format!("{id}.csv");
    let mut rows = Vec::new();
    let result = build_trainer(cfg, seed).and_then(|mut t| {
        run_seed_with(cfg, seed, t.as_mut(), |r| {
            rows.push(r);
            Ok(())
        })
    });
    let write = fs::File::create(dir.join(&file))
        .map_err(|e| e.to_string())
        .and_then(|f| write_csv(std::io::BufWriter::new(f), &rows).map_err(|e| e.to_string()));
    let (status, step, error) = match (result, write) {
        (Ok(()), Ok(())) => (CellStatus::Completed, None, None),
        (Err(DopError::Divergence { step, detail }), _) => (CellStatus::Diverged, Some(step), Some(detail)),
        (Err(e), _) => (CellStatus::Failed, None, Some(e.to_string())),
        (Ok(()), Err(e)) => (CellStatus::Failed, None, Some(e)),
    };
    CellReport { run_id: id, seed, csv: file, rows: rows.len(), status, step, error }
}

/// Runs every seed of `cfg`; returns the cell reports in seed order.
pub fn run_config(cfg: &RunConfig, opts: &RunOptions) -> std::io::Result<Vec<CellReport>> {
    let mut cfg = cfg.clone();
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    cfg.seeds = cfg.seeds.iter().map(|s| s + opts.seed_offset).collect();
    fs::create_dir_all(&cfg.output_dir)?;
    let reports: Mutex<Vec<Option<CellReport>>> = Mutex::new(vec![None; cfg.seeds.len()]);
    let next = AtomicUsize::new(0);
    let workers = opts.parallel.clamp(1, cfg.seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(idx) else { break };
                let report = run_cell(&cfg, seed, &cfg.output_dir);
                reports.lock().expect("no worker panics while holding the lock")[idx] = Some(report);
            });
        }
    });
    let cells: Vec<CellReport> = reports.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every cell ran")).collect();
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION"), config: &cfg, cells: &cells };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(cfg.output_dir.join("manifest.json"), text + "\n")?;
    Ok(cells)
}

/// Full `run` command; prints diagnostics and returns the process exit code.
pub fn run_command(path: &Path, opts: &RunOptions) -> i32 {
    let cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let cells = match run_config(&cfg, opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot write results: {e}");
            return EXIT_FAILURE;
        }
    };
    let mut code = EXIT_OK;
    for c in &cells {
        match c.status {
            CellStatus::Completed => println!("{}: {} rows -> {}", c.run_id, c.rows, c.csv),
            CellStatus::Diverged => {
                eprintln!("{}: diverged at step {}: {}", c.run_id, c.step.unwrap_or(0), c.error.as_deref().unwrap_or(""));
                code = EXIT_DIVERGED;
            }
            CellStatus::Failed => {
                let msg = c.error.as_deref().unwrap_or("");
                eprintln!("{}: {msg}", c.run_id);
                let is_config = msg.starts_with("configuration error");
                if code == EXIT_OK {
                    code = if is_config { EXIT_CONFIG } else { EXIT_FAILURE };
                }
            }
        }
    }
    code
}
