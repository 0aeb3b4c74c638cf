//! Per-pair metric rows, their means and CSV / JSON-lines serialization.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{fmi_detailed, ms_ssim_fused, qabf, scd_detailed, vif_detailed, Flags};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column names, in report order.
pub const METRIC_NAMES: [&str; 5] = ["vif", "scd", "qabf", "msssim", "fmi"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionRow {
    pub pair: String,
    pub vif: f64,
    pub scd: f64,
    pub qabf: f64,
    pub msssim: f64,
    pub fmi: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Flags,
}

impl FusionRow {
    pub fn values(&self) -> [f64; 5] {
        [self.vif, self.scd, self.qabf, self.msssim, self.fmi]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionReport {
    pub rows: Vec<FusionRow>,
}

impl FusionReport {
    /// Column means over all rows, in [`METRIC_NAMES`] order.
    pub fn mean(&self) -> [f64; 5] {
        let mut m = [0.0; 5];
        for row in &self.rows {
            for (acc, v) in m.iter_mut().zip(row.values()) {
                *acc += v;
            }
        }
        m.map(|v| v / self.rows.len() as f64)
    }

    fn mean_row(&self) -> FusionRow {
        let [vif, scd, qabf, msssim, fmi] = self.mean();
        FusionRow {
            pair: "mean".into(),
            vif,
            scd,
            qabf,
            msssim,
            fmi,
            flags: Flags::new(),
        }
    }

    /// Header `pair,vif,scd,qabf,msssim,fmi`, one row per pair, then `mean`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["pair"];
        header.extend(METRIC_NAMES);
        w.write_record(&header)?;
        for row in self.rows.iter().chain(std::iter::once(&self.mean_row())) {
            let mut rec = vec![row.pair.clone()];
            rec.extend(row.values().iter().map(|v| format!("{v:.10}")));
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// One JSON object per pair followed by the mean row.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.rows.iter().chain(std::iter::once(&self.mean_row())) {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flags(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rows
            .iter()
            .flat_map(|r| r.flags.iter().map(move |f| (r.pair.as_str(), f.as_str())))
    }
}

impl fmt::Display for FusionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16}", "pair")?;
        for name in METRIC_NAMES {
            write!(f, "{name:>10}")?;
        }
        writeln!(f)?;
        for row in self.rows.iter().chain(std::iter::once(&self.mean_row())) {
            write!(f, "{:<16}", row.pair)?;
            for v in row.values() {
                write!(f, "{v:>10.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// All five metrics of one triple.
pub fn evaluate_pair(pair: &str, i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<FusionRow> {
    let run = || -> Result<FusionRow> {
        let (vif, mut flags) = vif_detailed(i1, i2, fused)?;
        let (scd, f) = scd_detailed(i1, i2, fused)?;
        flags.extend(f);
        let qabf = qabf(i1, i2, fused)?;
        let msssim = ms_ssim_fused(i1, i2, fused)?;
        let (fmi, f) = fmi_detailed(i1, i2, fused)?;
        flags.extend(f);
        Ok(FusionRow {
            pair: pair.to_string(),
            vif,
            scd,
            qabf,
            msssim,
            fmi,
            flags,
        })
    };
    run().map_err(|e| Error::Pair {
        pair: pair.to_string(),
        source: Box::new(e),
    })
}

/// Evaluates triples `(id, I1, I2, If)` in parallel, rows in input order.
pub fn evaluate_all(pairs: &[(String, Tensor, Tensor, Tensor)]) -> Result<FusionReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluate_all"));
    }
    let rows = pairs
        .par_iter()
        .map(|(id, a, b, f)| evaluate_pair(id, a, b, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(FusionReport { rows })
}
