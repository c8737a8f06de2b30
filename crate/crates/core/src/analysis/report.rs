//! CSV and JSON emission shared by every report.
//!
//! CSV: header row always present, `,` separators, `\n` record ends, floats
//! in shortest round-trip form with `.` decimals. JSON summaries carry a
//! `schema` name and a `version` so downstream readers can dispatch.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `rows` under `header` to `out`.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), header, rows)
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    schema: &'a str,
    version: u32,
    result: &'a R,
}

/// `{"schema": …, "version": …, "result": …}` as pretty JSON.
pub fn summary_json<R: Serialize>(schema: &str, result: &R) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope {
        schema,
        version: SCHEMA_VERSION,
        result,
    })? + "\n")
}

pub fn write_summary(path: &Path, schema: &str, result: &impl Serialize) -> Result<()> {
    std::fs::write(path, summary_json(schema, result)?)?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}
