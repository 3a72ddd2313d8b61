//! Plot-ready CSV output. Numbers are rounded to 12 significant digits and
//! printed in the shortest form that reads back to the rounded value.

use std::io::{Read, Write};

use serde::Serialize;

use crate::calibrate::ObjectivePoint;
use crate::dataset::{Sector, SectorClassifier, Snapshot};
use crate::error::{Error, Result};
use crate::kernelreg::RegressionCurve;
use crate::sbindex::RankGap;
use crate::tailfit::CcdfPoint;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Formats `v` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .expect("scientific notation parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

pub fn write_ccdf<W: Write>(out: W, points: &[CcdfPoint]) -> Result<()> {
    let mut w = writer(out, &["size", "ccdf", "rank"])?;
    for p in points {
        w.write_record([fmt_num(p.size), fmt_num(p.ccdf), p.rank.to_string()])?;
    }
    finish(w)
}

pub fn write_rank_gaps<W: Write>(out: W, gaps: &[RankGap]) -> Result<()> {
    let mut w = writer(out, &["rank", "observed", "theoretical", "gap"])?;
    for g in gaps {
        w.write_record([
            g.rank.to_string(),
            fmt_num(g.observed),
            fmt_num(g.theoretical),
            fmt_num(g.gap()),
        ])?;
    }
    finish(w)
}

/// `rank,size` for a descending size list.
pub fn write_size_rank<W: Write>(out: W, sizes_desc: &[f64]) -> Result<()> {
    let mut w = writer(out, &["rank", "size"])?;
    for (i, s) in sizes_desc.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_num(*s)])?;
    }
    finish(w)
}

/// Reads a `rank,size` file back, returning sizes in rank order.
pub fn read_size_rank<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let size_col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case("size"))
        .ok_or_else(|| Error::MalformedHeader("expected a `size` column".into()))?;
    let mut sizes = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let v: f64 = row
            .get(size_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidRecord(format!("bad size in {row:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveSize(v));
        }
        sizes.push(v);
    }
    sizes.sort_by(|a, b| b.total_cmp(a));
    Ok(sizes)
}

pub fn write_objective<W: Write>(out: W, curve: &[ObjectivePoint]) -> Result<()> {
    let mut w = writer(out, &["lambda", "mse"])?;
    for p in curve {
        w.write_record([fmt_num(p.lambda), fmt_num(p.mse)])?;
    }
    finish(w)
}

pub fn write_curve<W: Write>(out: W, c: &RegressionCurve) -> Result<()> {
    let mut w = writer(out, &["x", "estimate", "low", "high"])?;
    for i in 0..c.grid.len() {
        w.write_record([
            fmt_num(c.grid[i]),
            fmt_num(c.estimate[i]),
            fmt_num(c.band_low[i]),
            fmt_num(c.band_high[i]),
        ])?;
    }
    finish(w)
}

/// `rank,size,sector,name,industry` in rank order.
pub fn write_rank_table<W: Write>(out: W, snapshot: &Snapshot, classifier: &SectorClassifier) -> Result<()> {
    let mut w = writer(out, &["rank", "size", "sector", "name", "industry"])?;
    for (i, f) in snapshot.ranked().enumerate() {
        let sector = match classifier.classify(&f.industry) {
            Sector::Financial => "financial",
            Sector::NonFinancial => "non_financial",
        };
        w.write_record([&(i + 1).to_string(), &fmt_num(f.assets), sector, &f.name, &f.industry])?;
    }
    finish(w)
}

/// One year of the exponent and index series. Index values are in
/// trillions when the snapshot sizes are in billions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub list_year: i32,
    pub data_year: i32,
    pub gamma_hat: f64,
    pub se_gamma: f64,
    pub s_minus: f64,
    pub s_plus: f64,
    pub i_sb_trillions: f64,
    pub band_low_trillions: f64,
    pub band_high_trillions: f64,
    pub compare_trillions: Option<f64>,
}

/// Writes the series; the comparison column appears when any row has one.
pub fn write_series<W: Write>(out: W, rows: &[SeriesRow]) -> Result<()> {
    let compare = rows.iter().any(|r| r.compare_trillions.is_some());
    let mut header = vec![
        "list_year",
        "data_year",
        "gamma_hat",
        "se_gamma",
        "s_minus",
        "s_plus",
        "i_sb_trillions",
        "band_low_trillions",
        "band_high_trillions",
    ];
    if compare {
        header.push("compare_trillions");
    }
    let mut w = writer(out, &header)?;
    for r in rows {
        let mut rec = vec![
            r.list_year.to_string(),
            r.data_year.to_string(),
            fmt_num(r.gamma_hat),
            fmt_num(r.se_gamma),
            fmt_num(r.s_minus),
            fmt_num(r.s_plus),
            fmt_num(r.i_sb_trillions),
            fmt_num(r.band_low_trillions),
            fmt_num(r.band_high_trillions),
        ];
        if compare {
            rec.push(r.compare_trillions.map(fmt_num).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// One row of an external comparison series, e.g. another agency's
/// estimate of the same quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonPoint {
    pub year: i32,
    pub value_trillions: f64,
}

/// Reads a `year,value_trillions` file.
pub fn read_comparison<R: Read>(input: R) -> Result<Vec<ComparisonPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    if header != ["year", "value_trillions"] {
        return Err(Error::MalformedHeader(format!(
            "expected `year,value_trillions`, got `{}`",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let year = row.get(0).and_then(|s| s.parse().ok());
        let value = row.get(1).and_then(|s| s.parse().ok());
        match (year, value) {
            (Some(year), Some(value_trillions)) => out.push(ComparisonPoint { year, value_trillions }),
            _ => return Err(Error::InvalidRecord(format!("bad comparison row {row:?}"))),
        }
    }
    Ok(out)
}
