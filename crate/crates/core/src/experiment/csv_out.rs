use std::io::Write;
use std::path::Path;

use crate::creative::{Branch, IterationRow, TrialRecord, Validity};
use crate::error::{Error, Result};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub const TRAJECTORY_HEADER: [&str; 8] =
    ["iteration", "seed", "branch", "creative_loss", "anchor_loss", "neg_loss", "grad_norm", "validity"];

pub fn branch_str(b: Branch) -> &'static str {
    match b {
        Branch::Creative => "creative",
        Branch::Anchor => "anchor",
    }
}

pub fn validity_str(v: Validity) -> &'static str {
    match v {
        Validity::Pass => "pass",
        Validity::Fail => "fail",
        Validity::Skipped => "skipped",
    }
}

fn row_fields(r: &IterationRow) -> [String; 8] {
    [
        r.iteration.to_string(),
        r.seed.to_string(),
        branch_str(r.branch).to_string(),
        r.creative_loss.to_string(),
        r.anchor_loss.to_string(),
        r.neg_loss.to_string(),
        r.grad_norm.map(|g| g.to_string()).unwrap_or_default(),
        validity_str(r.validity).to_string(),
    ]
}

/// Per-iteration rows; `grad_norm` is empty when no update was applied.
pub fn write_trajectory<W: Write>(w: W, rows: &[IterationRow]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(row_fields(r)).map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_loss_curve<W: Write>(w: W, losses: &[f64]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["step", "loss"]).map_err(csv_err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(csv_err)?;
    }
    finish(w)
}

pub const PERCENTILE_HEADER: [&str; 5] =
    ["series", "iteration", "median_percentile", "mean_mahalanobis", "fraction_beyond_3sigma"];
pub const LOSS_HEADER: [&str; 7] = ["series", "iteration", "branch", "creative_loss", "anchor_loss", "neg_loss", "total_loss"];
pub const SCATTER_HEADER: [&str; 4] = ["iteration", "x", "y", "cluster_tag"];

/// Series label of a record in a report: its trial seed, plus the hash
/// suffix of a resumed record.
pub fn series_name(record: &TrialRecord) -> String {
    super::artifacts::record_stem(record).replacen("trial", "seed", 1)
}

/// Writes `percentile.csv`, `loss.csv` and one `scatter-<series>.csv` per
/// record into `dir`. Scatter coordinates are the first two reduced
/// coordinates; samples of the iteration-0 snapshot are tagged `baseline`,
/// later ones `trial`.
pub fn write_report(dir: &Path, records: &[TrialRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut pct = writer(std::fs::File::create(dir.join("percentile.csv"))?);
    let mut loss = writer(std::fs::File::create(dir.join("loss.csv"))?);
    pct.write_record(PERCENTILE_HEADER).map_err(csv_err)?;
    loss.write_record(LOSS_HEADER).map_err(csv_err)?;
    for rec in records {
        let series = series_name(rec);
        for s in &rec.snapshots {
            pct.write_record([
                series.clone(),
                s.iteration.to_string(),
                s.stats.median_percentile.to_string(),
                s.stats.mean_mahalanobis.to_string(),
                s.stats.fraction_beyond_3sigma.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for r in &rec.rows {
            let total = crate::creative::total_loss(r.creative_loss, r.neg_loss, r.anchor_loss, r.branch);
            loss.write_record([
                series.clone(),
                r.iteration.to_string(),
                branch_str(r.branch).to_string(),
                r.creative_loss.to_string(),
                r.anchor_loss.to_string(),
                r.neg_loss.to_string(),
                total.to_string(),
            ])
            .map_err(csv_err)?;
        }
        write_scatter(std::fs::File::create(dir.join(format!("scatter-{series}.csv")))?, rec)?;
    }
    finish(pct)?;
    finish(loss)
}

pub fn write_scatter<W: Write>(w: W, rec: &TrialRecord) -> Result<()> {
    let mut w = writer(w);
    w.write_record(SCATTER_HEADER).map_err(csv_err)?;
    for s in &rec.snapshots {
        let tag = if s.iteration == 0 { "baseline" } else { "trial" };
        for row in s.reduced_rows() {
            let x = row.first().copied().unwrap_or(0.0);
            let y = row.get(1).copied().unwrap_or(0.0);
            w.write_record([s.iteration.to_string(), x.to_string(), y.to_string(), tag.to_string()])
                .map_err(csv_err)?;
        }
    }
    finish(w)
}
