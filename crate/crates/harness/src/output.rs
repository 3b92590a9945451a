//! Metrics CSVs, sidecar metadata and summary tables.
//!
//! Every artifact carries the code version and the resolved config: CSVs as
//! leading `#` lines, binary files through a `<file>.meta` sidecar.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;

pub const VERSION: &str = concat!("rrpo ", env!("CARGO_PKG_VERSION"));

/// Name of the wall-clock column; determinism checks ignore it.
pub const TIMING_COLUMN: &str = "elapsed_ms";

fn header_lines(command: &str, cfg: &RunConfig) -> String {
    let mut s = format!("# {VERSION}\n# command = {command}\n");
    for (k, v) in cfg.entries() {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s
}

/// Refuse to clobber `path` unless `force` is set; create its parent.
pub fn prepare(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists (use --force to overwrite)",
            path.display()
        );
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Write the sidecar for a binary artifact. `extra` lines come first.
pub fn write_meta(
    path: &Path,
    command: &str,
    cfg: &RunConfig,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut s = String::new();
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str(&header_lines(command, cfg));
    fs::write(meta_path(path), s).with_context(|| format!("writing {}", meta_path(path).display()))
}

/// Look up `key` among the non-comment lines of a sidecar.
pub fn read_meta_value(path: &Path, key: &str) -> Result<Option<String>> {
    let mp = meta_path(path);
    let text = match fs::read_to_string(&mp) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e).with_context(|| format!("reading {}", mp.display())),
    };
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string()))
}

/// A CSV file whose first lines echo the version and config.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl MetricsWriter {
    pub fn create(
        path: &Path,
        force: bool,
        command: &str,
        cfg: &RunConfig,
        columns: &[&str],
    ) -> Result<Self> {
        prepare(path, force)?;
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        buf.write_all(header_lines(command, cfg).as_bytes())?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(columns)?;
        Ok(MetricsWriter {
            inner,
            width: columns.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.width {
            bail!(
                "metrics row has {} fields, header has {}",
                fields.len(),
                self.width
            );
        }
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Format a float for metrics files: full round-trip precision.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Drop `#` lines and the timing column: what determinism checks compare.
pub fn strip_timing(csv_text: &str) -> Result<String> {
    let body: String = csv_text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut skip = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i == 0 {
            skip = rec.iter().position(|c| c == TIMING_COLUMN);
        }
        let kept: Vec<&str> = rec
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, c)| c)
            .collect();
        out.write_record(&kept)?;
    }
    Ok(String::from_utf8(out.into_inner()?)?)
}

/// Plain-text table with a title and the config echo, for human reading.
pub fn write_summary(
    path: &Path,
    force: bool,
    command: &str,
    cfg: &RunConfig,
    title: &str,
    table: &[Vec<String>],
) -> Result<()> {
    prepare(path, force)?;
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            table
                .iter()
                .filter_map(|r| r.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = header_lines(command, cfg);
    s.push_str(&format!("\n{title}\n\n"));
    for row in table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
