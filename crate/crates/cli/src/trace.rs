//! Trace CSV: header `t,x1..xn,xi1..xin,y,u1..um`, floats in shortest round-trip form.

use std::path::Path;

use nalgebra::DVector;
use nonholo_es::analysis::fit_decay_trace;
use nonholo_es::plot::{trace_svg, PlotStyle};
use nonholo_es::PiEpsTrajectory;
use serde_json::json;

use crate::{write_file, CliError, Outcome};

pub fn header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xi{i}")));
    h.push("y".into());
    h.extend((1..=m).map(|i| format!("u{i}")));
    h
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn to_csv(traj: &PiEpsTrajectory) -> Result<String, CliError> {
    let n = traj.x.first().map_or(0, |x| x.len());
    let m = traj.u.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(n, m)).map_err(CliError::internal)?;
    for k in 0..traj.len() {
        let mut row = Vec::with_capacity(2 * n + m + 2);
        row.push(num(traj.times[k]));
        row.extend(traj.x[k].iter().map(|v| num(*v)));
        row.extend(traj.xi[k].iter().map(|v| num(*v)));
        row.push(num(traj.y[k]));
        row.extend(traj.u[k].iter().map(|v| num(*v)));
        w.write_record(&row).map_err(CliError::internal)?;
    }
    let bytes = w.into_inner().map_err(CliError::internal)?;
    String::from_utf8(bytes).map_err(CliError::internal)
}

/// Columns read back from a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub y: Vec<f64>,
}

pub fn read_csv(path: &Path) -> Result<Trace, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let head: Vec<String> = r
        .headers()
        .map_err(|e| CliError::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let n = head.iter().filter(|h| h.starts_with('x') && !h.starts_with("xi")).count();
    let m = head.len().saturating_sub(2 * n + 2);
    if n == 0 || head != header(n, m) {
        return Err(CliError::parse(path, format!("unexpected header {}", head.join(","))));
    }
    let mut t = Trace {
        times: Vec::new(),
        x: Vec::new(),
        xi: Vec::new(),
        y: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        let vals = rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::parse(path, format!("row {}: {e}", line + 2)))?;
        if vals.len() != head.len() {
            return Err(CliError::parse(path, format!("row {} has {} fields", line + 2, vals.len())));
        }
        t.times.push(vals[0]);
        t.x.push(DVector::from_column_slice(&vals[1..=n]));
        t.xi.push(DVector::from_column_slice(&vals[n + 1..=2 * n]));
        t.y.push(vals[2 * n + 1]);
    }
    Ok(t)
}

pub fn plot_command(trace: &Path, style: &str, x_star: Option<Vec<f64>>, out: &Path) -> Result<Outcome, CliError> {
    let style = PlotStyle::parse(style)?;
    let t = read_csv(trace)?;
    let n = t.x.first().map_or(0, |x| x.len());
    let x_star = match x_star {
        Some(v) if v.len() != n => {
            return Err(CliError::validation(vec![format!(
                "--x-star has {} entries but the trace has n = {n}",
                v.len()
            )]))
        }
        Some(v) => DVector::from_vec(v),
        None => DVector::zeros(n),
    };
    let fit = match style {
        PlotStyle::Envelope => {
            let dist: Vec<f64> = t.x.iter().map(|x| (x - &x_star).norm()).collect();
            Some(fit_decay_trace(&t.times, &dist)?)
        }
        PlotStyle::Plain => None,
    };
    let svg = trace_svg(&t.times, &t.x, &t.xi, &t.y, style, fit.as_ref().map(|f| (&x_star, f)))?;
    write_file(out, &svg)?;
    Ok(Outcome {
        summary: json!({ "status": "ok", "plot_svg": out, "samples": t.times.len(), "fit": fit }),
        code: 0,
    })
}
