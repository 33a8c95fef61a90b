//! Versioned per-iteration metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::orchestrator::MetricsRow;

pub const VERSION_LINE: &str = "# stgrid metrics v1";
pub const COLUMNS: [&str; 8] = ["n", "reward", "sys_loss", "dqn_loss", "action", "eps_sys", "eps_dqn", "wall_ms"];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("metrics csv: {e}"))
}

/// Floats print in shortest round-trip form so a parse gives back the same bits.
fn float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{VERSION_LINE}")?;
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(COLUMNS).map_err(csv_err)?;
        Ok(MetricsWriter { inner })
    }

    pub fn write_row(&mut self, r: &MetricsRow) -> Result<()> {
        self.inner
            .write_record([
                r.n.to_string(),
                r.reward.to_string(),
                float(r.sys_loss),
                float(r.dqn_loss),
                r.action.map(|a| a.to_string()).unwrap_or_default(),
                float(r.eps_sys),
                float(r.eps_dqn),
                r.wall_ms.to_string(),
            ])
            .map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn to_string(rows: &[MetricsRow]) -> Result<String> {
    let mut w = MetricsWriter::new(Vec::new())?;
    for r in rows {
        w.write_row(r)?;
    }
    String::from_utf8(w.into_inner()?).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>> {
    if text.lines().next() != Some(VERSION_LINE) {
        return Err(Error::Parse(format!("metrics file must start with '{VERSION_LINE}'")));
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(COLUMNS) {
        return Err(Error::Parse(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|e| Error::Parse(format!("column {}: {e}", COLUMNS[i])))
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse::<u64>().map_err(|e| Error::Parse(format!("column {}: {e}", COLUMNS[i])))
        };
        rows.push(MetricsRow {
            n: int(0)?,
            reward: int(1)? as u32,
            sys_loss: num(2)?,
            dqn_loss: num(3)?,
            action: match field(4) {
                "" => None,
                a => Some(a.parse().map_err(|e| Error::Parse(format!("column action: {e}")))?),
            },
            eps_sys: num(5)?,
            eps_dqn: num(6)?,
            wall_ms: int(7)?,
        });
    }
    Ok(rows)
}

pub fn read(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse(&text)
}
