//! CSV form of a [`PfsSeries`]: one row per checkpoint.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::measures::PfsSeries;

pub const CSV_HEADER: [&str; 8] = ["n", "pfs_e", "pfs_m", "pfs_a", "se_e", "se_m", "se_a", "macro_reps"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    n: u64,
    pfs_e: f64,
    pfs_m: f64,
    pfs_a: f64,
    se_e: f64,
    se_m: f64,
    se_a: f64,
    macro_reps: usize,
}

pub fn write_pfs_csv<W: Write>(series: &PfsSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in 0..series.len() {
        w.serialize(Row {
            n: series.checkpoints[c],
            pfs_e: series.pfs_e[c],
            pfs_m: series.pfs_m[c],
            pfs_a: series.pfs_a[c],
            se_e: series.se_e[c],
            se_m: series.se_m[c],
            se_a: series.se_a[c],
            macro_reps: series.macro_reps,
        })?;
    }
    if series.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfs_csv<R: Read>(input: R) -> Result<PfsSeries> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(CrsError::Aggregation(format!("unexpected CSV header {header:?}")));
    }
    let mut s = PfsSeries {
        checkpoints: Vec::new(),
        pfs_e: Vec::new(),
        pfs_m: Vec::new(),
        pfs_a: Vec::new(),
        se_e: Vec::new(),
        se_m: Vec::new(),
        se_a: Vec::new(),
        macro_reps: 0,
    };
    for row in r.deserialize() {
        let row: Row = row?;
        s.checkpoints.push(row.n);
        s.pfs_e.push(row.pfs_e);
        s.pfs_m.push(row.pfs_m);
        s.pfs_a.push(row.pfs_a);
        s.se_e.push(row.se_e);
        s.se_m.push(row.se_m);
        s.se_a.push(row.se_a);
        s.macro_reps = row.macro_reps;
    }
    Ok(s)
}

pub fn save_pfs_csv(series: &PfsSeries, path: &Path) -> Result<()> {
    write_pfs_csv(series, std::fs::File::create(path)?)
}

pub fn load_pfs_csv(path: &Path) -> Result<PfsSeries> {
    read_pfs_csv(std::fs::File::open(path)?)
}
