//! CSV serialization of datasets, traces and summary tables.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses
//! back to the same `f64`.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;
use viking_core::datagen::{Dataset, GeneratorMeta, Truth};
use viking_core::StepRecord;

use crate::error::{HarnessError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Write a header and rows, creating parent directories.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Header and rows of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))?;
    Ok((header, rows))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |j| format!("{prefix}{j}"))
}

pub fn dataset_header(d: usize, truth: bool, mixture: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(numbered("x", d));
    h.push("y".into());
    if truth {
        h.push("sigma2".into());
        h.extend(numbered("q", d));
        if mixture {
            h.push("i".into());
        }
    }
    h
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let d = data.dim();
    let mixture = data.has_mixture();
    let header = dataset_header(d, data.truth.is_some(), mixture);
    let rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(data.x[i].iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(data.y[i]));
            if let Some(truth) = &data.truth {
                let rec = &truth[i];
                row.push(fmt_f64(rec.sigma2));
                row.extend(rec.q_diag.iter().map(|&v| fmt_f64(v)));
                if mixture {
                    row.push(rec.branch.map_or(String::new(), |b| b.to_string()));
                }
            }
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| format_err(path, format!("row {row}: cannot parse '{s}' as a number")))
}

/// Read a dataset CSV. The state trajectory is not serialized, so
/// `truth[t].theta` is empty in the result.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_table(path)?;
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| format_err(path, "missing 'y' column"))?;
    let d = y_col.saturating_sub(1);
    if header.first().map(String::as_str) != Some("t")
        || header[1..y_col] != numbered("x", d).collect::<Vec<_>>()[..]
    {
        return Err(format_err(
            path,
            "expected header t,x1..xd,y[,sigma2,q1..qd,i]",
        ));
    }
    let truth_cols = header.len() - y_col - 1;
    let (has_truth, has_mixture) = match truth_cols {
        0 => (false, false),
        c if c == d + 1 => (true, false),
        c if c == d + 2 => (true, true),
        _ => return Err(format_err(path, "truth columns must be sigma2,q1..qd[,i]")),
    };
    if has_truth && header[y_col + 1..y_col + 2 + d] != dataset_header(d, true, false)[y_col + 1..]
    {
        return Err(format_err(path, "expected truth columns sigma2,q1..qd"));
    }

    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut truth = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let line = r + 2;
        if row.len() != header.len() {
            return Err(format_err(
                path,
                format!("row {line}: expected {} fields", header.len()),
            ));
        }
        let vals = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
            row[range]
                .iter()
                .map(|s| parse_f64(path, line, s))
                .collect()
        };
        x.push(DVector::from_vec(vals(1..y_col)?));
        y.push(parse_f64(path, line, &row[y_col])?);
        if has_truth {
            let sigma2 = parse_f64(path, line, &row[y_col + 1])?;
            let q_diag = DVector::from_vec(vals(y_col + 2..y_col + 2 + d)?);
            let branch =
                if has_mixture {
                    let s = row[y_col + 2 + d].trim();
                    if s.is_empty() {
                        None
                    } else {
                        Some(s.parse().map_err(|_| {
                            format_err(path, format!("row {line}: bad mixture index"))
                        })?)
                    }
                } else {
                    None
                };
            truth.push(Truth {
                sigma2,
                q_diag,
                theta: DVector::zeros(0),
                branch,
            });
        }
    }
    let data = Dataset {
        x,
        y,
        truth: has_truth.then_some(truth),
        seed: 0,
        meta: GeneratorMeta {
            name: path.display().to_string(),
            params: Vec::new(),
        },
    };
    data.validate()?;
    Ok(data)
}

pub fn trace_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "y",
        "forecast",
        "pred_var",
        "residual",
        "a_hat",
        "s",
        "sigma2_eff",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    h.extend(numbered("b", m));
    h.extend(numbered("sigma", m));
    h.push("cum_sq_err".into());
    h
}

pub fn write_trace(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let m = trace.first().map_or(0, |r| r.b_hat.len());
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            let mut row = vec![r.t.to_string()];
            row.extend(
                [
                    r.y,
                    r.forecast,
                    r.pred_var,
                    r.residual,
                    r.a_hat,
                    r.s,
                    r.sigma2_eff,
                ]
                .into_iter()
                .map(fmt_f64),
            );
            row.extend(r.b_hat.iter().chain(&r.sigma_diag).map(|&v| fmt_f64(v)));
            row.push(fmt_f64(r.cum_sq_err));
            row
        })
        .collect();
    write_table(path, &trace_header(m), &rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    let (header, rows) = read_table(path)?;
    let m = header
        .len()
        .checked_sub(9)
        .filter(|extra| extra % 2 == 0)
        .ok_or_else(|| format_err(path, "not a trace file"))?
        / 2;
    if header != trace_header(m) {
        return Err(format_err(path, "unexpected trace header"));
    }
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            let line = r + 2;
            if row.len() != header.len() {
                return Err(format_err(
                    path,
                    format!("row {line}: expected {} fields", header.len()),
                ));
            }
            let t = row[0]
                .parse()
                .map_err(|_| format_err(path, format!("row {line}: bad step index")))?;
            let v: Vec<f64> = row[1..]
                .iter()
                .map(|s| parse_f64(path, line, s))
                .collect::<Result<_>>()?;
            Ok(StepRecord {
                t,
                y: v[0],
                forecast: v[1],
                pred_var: v[2],
                residual: v[3],
                a_hat: v[4],
                s: v[5],
                sigma2_eff: v[6],
                b_hat: v[7..7 + m].to_vec(),
                sigma_diag: v[7 + m..7 + 2 * m].to_vec(),
                cum_sq_err: v[7 + 2 * m],
            })
        })
        .collect()
}
