//! Counts CSV in and out, plus the error type shared by every command.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use pgsynth::CountDataset;
use thiserror::Error;

pub const COUNTS_HEADER: [&str; 4] = ["group_id", "state_id", "population", "count"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: u64,
        msg: String,
    },
    #[error("invalid arguments: {0}")]
    Args(String),
    #[error(transparent)]
    Core(#[from] pgsynth::Error),
}

impl CliError {
    /// 2 for an infeasible privacy budget, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(pgsynth::Error::InfeasibleBudget { .. }) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Read a counts file with header `group_id,state_id,population,count`.
/// Columns may appear in any order; extra columns are ignored.
pub fn ingest_counts(path: &Path) -> CliResult<CountDataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_counts_from(file, &path.display().to_string())
}

/// As [`ingest_counts`] from any reader; `source_name` labels error messages.
pub fn ingest_counts_from<R: Read>(reader: R, source_name: &str) -> CliResult<CountDataset> {
    let parse_err = |line: u64, msg: String| CliError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(COUNTS_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))?;
    }
    let mut counts = Vec::new();
    let mut pops = Vec::new();
    let mut groups = Vec::new();
    let mut states = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let group = field(0).to_string();
        if group.is_empty() {
            return Err(parse_err(line, "empty group_id".into()));
        }
        if !seen.insert(group.clone()) {
            return Err(parse_err(line, format!("duplicate group_id {group:?}")));
        }
        let pop: f64 = field(2)
            .parse()
            .map_err(|_| parse_err(line, format!("population {:?} is not a number", field(2))))?;
        if !(pop > 0.0) || !pop.is_finite() {
            return Err(parse_err(line, format!("population must be positive, got {}", field(2))));
        }
        let count: u64 = field(3).parse().map_err(|_| {
            parse_err(
                line,
                format!("count must be a non-negative integer, got {:?}", field(3)),
            )
        })?;
        groups.push(group);
        states.push(field(1).to_string());
        pops.push(pop);
        counts.push(count);
    }
    Ok(CountDataset::new(counts, pops, groups, states)?)
}

/// Write a dataset in the format [`ingest_counts`] reads.
pub fn emit_counts<W: Write>(data: &CountDataset, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| CliError::Parse {
        source_name: "<output>".into(),
        line: 0,
        msg: e.to_string(),
    };
    w.write_record(COUNTS_HEADER).map_err(to_err)?;
    for i in 0..data.len() {
        w.write_record([
            data.group_ids()[i].as_str(),
            data.state_ids()[i].as_str(),
            &data.populations()[i].to_string(),
            &data.counts()[i].to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(Path::new("<output>"), e))
}

/// Write `bytes` to `path`, or to stdout when no path is given.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// `out.csv` → `out.csv.<suffix>`
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
