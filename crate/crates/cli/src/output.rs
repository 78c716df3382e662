//! CSV and plot-script emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::settings::CliResult;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FRAMELESS_OUT_DIR";

/// Output directory used when neither a flag nor the config names one.
pub const DEFAULT_OUT_DIR: &str = "results";

/// One CSV cell: integers print as-is, reals with 12 significant digits.
#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(usize),
    Real(f64),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

pub fn fmt_real(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() {
        format!("{v:.11e}")
    } else {
        v.to_string()
    }
}

/// Rows of a CSV file with its provenance comment and header.
#[derive(Debug, Clone)]
pub struct Table {
    comment: String,
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(comment: impl Into<String>, header: &[&str]) -> Self {
        Self {
            comment: comment.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(comment: impl Into<String>, header: Vec<String>) -> Self {
        Self {
            comment: comment.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in self.comment.lines() {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Real(v) => fmt_real(*v),
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Collects the files written by one command.
#[derive(Debug)]
pub struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> CliResult<()> {
        self.text(name, &table.render())
    }

    pub fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// One curve of a gnuplot script: file, x column, y column, title, and
/// an optional error-bar column.
pub struct Series<'a> {
    pub file: &'a str,
    pub x: usize,
    pub y: usize,
    pub title: &'a str,
    pub err: Option<usize>,
}

/// Gnuplot commands drawing `series` against each other.
pub fn gnuplot(title: &str, xlabel: &str, ylabel: &str, logy: bool, series: &[Series]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let _ = writeln!(s, "set grid");
    if logy {
        let _ = writeln!(s, "set logscale y");
    }
    let plots: Vec<String> = series
        .iter()
        .map(|c| match c.err {
            Some(e) => format!(
                "'{}' using {}:{}:{} skip 1 with yerrorbars title '{}'",
                c.file, c.x, c.y, e, c.title
            ),
            None => format!(
                "'{}' using {}:{} skip 1 with linespoints title '{}'",
                c.file, c.x, c.y, c.title
            ),
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
