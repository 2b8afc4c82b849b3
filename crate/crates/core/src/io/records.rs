use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{read_jsonl, write_jsonl};
use crate::body::BodyParams;
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::fpp::FppPrediction;
use crate::metrics::{MetricsReport, PlotSeries};
use crate::pipelines::{FitResult, FrameDiagnostics};
use crate::pressure::DenseContact;

const CONTACT: &str = "contactcap-contact";
const PREDICTIONS: &str = "contactcap-predictions";
const GROUND_TRUTH: &str = "contactcap-ground-truth";
const FIT: &str = "contactcap-fit";
const REPORT: &str = "contactcap-report";

pub fn write_contact<W: Write>(contact: &[DenseContact], out: W) -> Result<()> {
    write_jsonl(out, CONTACT, contact)
}

pub fn read_contact<R: BufRead>(input: R) -> Result<Vec<DenseContact>> {
    let c: Vec<DenseContact> = read_jsonl(input, CONTACT)?;
    for x in &c {
        x.validate()?;
    }
    Ok(c)
}

pub fn write_predictions<W: Write>(pred: &[FppPrediction], out: W) -> Result<()> {
    write_jsonl(out, PREDICTIONS, pred)
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<FppPrediction>> {
    let p: Vec<FppPrediction> = read_jsonl(input, PREDICTIONS)?;
    for x in &p {
        x.validate()?;
    }
    Ok(p)
}

/// Ground-truth body state and dense contact of one synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub params: BodyParams,
    pub contact: Vec<bool>,
    /// Monocular-style estimate handed to the monocular pipeline.
    pub initial: BodyParams,
}

pub fn write_ground_truth<W: Write>(records: &[GroundTruthRecord], out: W) -> Result<()> {
    write_jsonl(out, GROUND_TRUTH, records)
}

pub fn read_ground_truth<R: BufRead>(input: R) -> Result<Vec<GroundTruthRecord>> {
    let r: Vec<GroundTruthRecord> = read_jsonl(input, GROUND_TRUTH)?;
    for x in &r {
        x.params.validate()?;
        x.initial.validate()?;
    }
    Ok(r)
}

/// One frame of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub frame: usize,
    pub params: BodyParams,
    pub energy: EnergyBreakdown,
    pub diagnostics: FrameDiagnostics,
}

pub fn write_fit<W: Write>(fit: &FitResult, out: W) -> Result<()> {
    let records: Vec<FitRecord> = (0..fit.len())
        .map(|i| FitRecord {
            frame: i,
            params: fit.params[i].clone(),
            energy: fit.energies[i],
            diagnostics: fit.diagnostics[i].clone(),
        })
        .collect();
    write_jsonl(out, FIT, &records)
}

pub fn read_fit<R: BufRead>(input: R) -> Result<FitResult> {
    let records: Vec<FitRecord> = read_jsonl(input, FIT)?;
    let mut fit = FitResult {
        params: Vec::with_capacity(records.len()),
        energies: Vec::with_capacity(records.len()),
        diagnostics: Vec::with_capacity(records.len()),
    };
    for (i, r) in records.into_iter().enumerate() {
        if r.frame != i {
            return Err(Error::format(FIT, format!("record {i} is labelled frame {}", r.frame)));
        }
        r.params.validate()?;
        fit.params.push(r.params);
        fit.energies.push(r.energy);
        fit.diagnostics.push(r.diagnostics);
    }
    Ok(fit)
}

/// Per-frame unweighted energy terms, one row per frame.
pub fn write_energy_csv<W: Write>(fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frame"];
    header.extend(EnergyBreakdown::COLUMNS);
    w.write_record(&header)?;
    for (i, e) in fit.energies.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(e.values().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report<W: Write>(reports: &[(String, MetricsReport)], out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        sequence: &'a str,
        #[serde(flatten)]
        metrics: &'a MetricsReport,
    }
    let rows: Vec<Row> = reports
        .iter()
        .map(|(s, m)| Row {
            sequence: s,
            metrics: m,
        })
        .collect();
    write_jsonl(out, REPORT, &rows)
}

pub fn read_report<R: BufRead>(input: R) -> Result<Vec<(String, MetricsReport)>> {
    #[derive(Deserialize)]
    struct Row {
        sequence: String,
        #[serde(flatten)]
        metrics: MetricsReport,
    }
    let rows: Vec<Row> = read_jsonl(input, REPORT)?;
    Ok(rows.into_iter().map(|r| (r.sequence, r.metrics)).collect())
}

/// Table with one row per sequence and one column per metric.
pub fn write_report_csv<W: Write>(reports: &[(String, MetricsReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sequence"];
    header.extend(MetricsReport::COLUMNS);
    w.write_record(&header)?;
    for (s, m) in reports {
        let mut row = vec![s.clone()];
        row.extend(m.values().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the trajectory and foot-acceleration series as two CSV tables.
pub fn write_plot_csv<W: Write, V: Write>(series: &PlotSeries, trajectory: W, acceleration: V) -> Result<()> {
    let mut w = csv::Writer::from_writer(trajectory);
    w.write_record([
        "time", "pred_x", "pred_y", "pred_z", "gt_x", "gt_y", "gt_z", "error_mm",
    ])?;
    for (t, p, g, e) in &series.trajectory {
        w.write_record(
            [*t, p.x, p.y, p.z, g.x, g.y, g.z, *e]
                .iter()
                .map(f64::to_string),
        )?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(acceleration);
    w.write_record(["time", "pred_acceleration", "gt_acceleration"])?;
    for (t, p, g) in &series.foot_acceleration {
        w.write_record([t, p, g].iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
