//! Historian archive files: one CSV per batch plus a JSON manifest.
//!
//! Batch CSV header is `k,r1,u1,u2,y1,y2`; values are written with 17
//! significant digits so a write/read round trip is exact.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HistorianBatch;

pub const BATCH_HEADER: [&str; 6] = ["k", "r1", "u1", "u2", "y1", "y2"];
pub const MANIFEST_FILE: &str = "manifest.json";

/// Archive index: sampling period and batch files in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub t_s: f64,
    pub batches: Vec<String>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_batch_csv<W: io::Write>(w: W, batch: &HistorianBatch) -> io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(BATCH_HEADER)?;
    for k in 0..batch.len() {
        let row = [batch.r1[k], batch.u1[k], batch.u2[k], batch.y1[k], batch.y2[k]];
        let mut rec = vec![k.to_string()];
        rec.extend(row.iter().map(|v| format_float(*v)));
        wr.write_record(&rec)?;
    }
    wr.flush()
}

pub fn read_batch_csv<R: io::Read>(r: R, id: &str, t_s: f64) -> io::Result<HistorianBatch> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| invalid(e.to_string()))?.clone();
    if header.iter().ne(BATCH_HEADER) {
        return Err(invalid(format!("batch `{id}`: expected header {}", BATCH_HEADER.join(","))));
    }
    let mut b = HistorianBatch { id: id.into(), t_s, r1: vec![], u1: vec![], u2: vec![], y1: vec![], y2: vec![] };
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| invalid(e.to_string()))?;
        let k: usize = rec[0].parse().map_err(|_| invalid(format!("batch `{id}` row {row}: bad index")))?;
        if k != row {
            return Err(invalid(format!("batch `{id}` row {row}: index {k} out of sequence")));
        }
        let mut vals = [0.0; 5];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = rec[j + 1].parse().map_err(|_| invalid(format!("batch `{id}` row {row}: bad value in `{}`", BATCH_HEADER[j + 1])))?;
        }
        b.r1.push(vals[0]);
        b.u1.push(vals[1]);
        b.u2.push(vals[2]);
        b.y1.push(vals[3]);
        b.y2.push(vals[4]);
    }
    b.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(b)
}

/// Writes every batch as `<id>.csv` and the manifest into `dir`.
pub fn write_archive(dir: &Path, batches: &[HistorianBatch]) -> io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    let t_s = batches.first().map_or(0.0, |b| b.t_s);
    let mut names = Vec::with_capacity(batches.len());
    for b in batches {
        let name = format!("{}.csv", b.id);
        write_batch_csv(io::BufWriter::new(fs::File::create(dir.join(&name))?), b)?;
        names.push(name);
    }
    let manifest = Manifest { t_s, batches: names };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

pub fn read_archive(dir: &Path) -> io::Result<Vec<HistorianBatch>> {
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?).map_err(|e| invalid(e.to_string()))?;
    manifest
        .batches
        .iter()
        .map(|name| {
            let id = name.strip_suffix(".csv").unwrap_or(name);
            read_batch_csv(io::BufReader::new(fs::File::open(dir.join(name))?), id, manifest.t_s)
        })
        .collect()
}
