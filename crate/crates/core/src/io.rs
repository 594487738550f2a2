//! File formats. States are 1-based in every file; floats in CSV files are
//! written with 17 significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::model::{validate, ModelParams, RawParams};
use crate::simulator::Path;
use crate::stats::PathStats;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_params(text: &str) -> Result<ModelParams> {
    let raw: RawParams = serde_json::from_str(text)?;
    let violations = validate(&raw);
    if !violations.is_empty() {
        return Err(Error::InvalidParams(violations));
    }
    ModelParams::from_raw(&raw)
}

pub fn read_params(path: impl AsRef<FsPath>) -> Result<ModelParams> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    parse_params(&s)
}

pub fn write_params<W: Write>(theta: &ModelParams, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &theta.to_raw())?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    regime: usize,
    events: Vec<(usize, f64)>,
    horizon: f64,
}

/// One JSON object per line.
pub fn write_paths_jsonl<W: Write>(paths: &[Path], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for p in paths {
        let rec = PathRecord {
            regime: p.regime + 1,
            events: p.events.iter().map(|&(s, t)| (s + 1, t)).collect(),
            horizon: p.horizon,
        };
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_paths_jsonl<R: Read>(input: R) -> Result<Vec<Path>> {
    let mut paths = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PathRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        if rec.regime == 0 || rec.events.iter().any(|&(s, _)| s == 0) {
            return Err(Error::Parse(format!("line {}: states and regimes are 1-based", i + 1)));
        }
        paths.push(Path {
            regime: rec.regime - 1,
            events: rec.events.into_iter().map(|(s, t)| (s - 1, t)).collect(),
            horizon: rec.horizon,
        });
    }
    Ok(paths)
}

fn pair_tag(x: usize, y: usize, p: usize) -> String {
    if p < 10 {
        format!("{}{}", x + 1, y + 1)
    } else {
        format!("{}-{}", x + 1, y + 1)
    }
}

fn stats_header(p: usize) -> Vec<String> {
    let mut h = vec!["path_id".to_string()];
    h.extend((1..=p).map(|x| format!("B_{x}")));
    for x in 0..p {
        for y in 0..p {
            h.push(format!("N_{}", pair_tag(x, y, p)));
        }
    }
    h.extend((1..=p).map(|x| format!("T_{x}")));
    h
}

/// Columns `path_id, B_1..B_p, N_11..N_pp, T_1..T_p`.
pub fn write_stats_csv<W: Write>(stats: &[PathStats], out: W) -> Result<()> {
    let p = stats.first().ok_or(Error::EmptySample)?.n_states();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(stats_header(p))?;
    for (k, s) in stats.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend((0..p).map(|x| (s.b(x) as u8).to_string()));
        for x in 0..p {
            for y in 0..p {
                rec.push(s.count(x, y).to_string());
            }
        }
        rec.extend(s.occupancy().iter().map(|&t| fmt_f64(t)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a statistics file. The horizon of each path is taken as the sum of
/// its occupation times.
pub fn read_stats_csv<R: Read>(input: R) -> Result<Vec<PathStats>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let p = header.iter().filter(|h| h.starts_with("T_")).count();
    if p < 2 || header.len() != 1 + 2 * p + p * p || header != csv::StringRecord::from(stats_header(p)) {
        return Err(Error::Parse("unexpected statistics header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("").trim();
        let bad = |j: usize| Error::Parse(format!("row {row}, column {}: '{}'", &header[j], field(j)));
        let b: Vec<u8> = (1..=p).map(|j| field(j).parse().map_err(|_| bad(j))).collect::<Result<_>>()?;
        let ones: Vec<usize> = b.iter().enumerate().filter(|(_, v)| **v == 1).map(|(x, _)| x).collect();
        if ones.len() != 1 || b.iter().any(|v| *v > 1) {
            return Err(Error::Parse(format!("row {row}: B columns must be one-hot")));
        }
        let counts: Vec<u32> = (1 + p..1 + p + p * p)
            .map(|j| field(j).parse().map_err(|_| bad(j)))
            .collect::<Result<_>>()?;
        let occ: Vec<f64> = (1 + p + p * p..1 + 2 * p + p * p)
            .map(|j| field(j).parse().map_err(|_| bad(j)))
            .collect::<Result<_>>()?;
        let horizon = occ.iter().sum();
        out.push(
            PathStats::new(ones[0], counts, occ, horizon)
                .map_err(|e| Error::Parse(format!("row {row}: {e}")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

/// Row-major matrix with a header of parameter labels.
pub fn write_matrix_csv<W: Write>(labels: &[String], m: &DMatrix<f64>, out: W) -> Result<()> {
    if labels.len() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} columns",
            labels.len(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(labels)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let labels: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter() {
            data.push(v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{v}': {e}")))?);
        }
        rows += 1;
    }
    let cols = labels.len();
    if data.len() != rows * cols {
        return Err(Error::Parse("ragged matrix file".into()));
    }
    Ok((labels, DMatrix::from_row_slice(rows, cols, &data)))
}

/// Columns `iter, loglik, step_error`; row 0 is the starting point and has
/// an empty step error.
pub fn write_trace_csv<W: Write>(fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "loglik", "step_error"])?;
    for (i, ll) in fit.loglik_trace.iter().enumerate() {
        let err = if i == 0 { String::new() } else { fmt_f64(fit.error_trace[i - 1]) };
        w.write_record([i.to_string(), fmt_f64(*ll), err])?;
    }
    w.flush()?;
    Ok(())
}

pub fn create(path: impl AsRef<FsPath>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_model;
    use crate::simulator::{simulate_sample, simulate_stats, SimConfig};

    #[test]
    fn params_round_trip() {
        let theta = reference_model();
        let mut buf = Vec::new();
        write_params(&theta, &mut buf).unwrap();
        assert_eq!(parse_params(std::str::from_utf8(&buf).unwrap()).unwrap(), theta);
    }

    #[test]
    fn params_without_diagonal() {
        let text = r#"{"p":2,"M":1,"alpha":[0.5,0.5],"phi":[[1.0],[1.0]],
            "Q":[[[null,2.0],[3.0,null]]]}"#;
        let theta = parse_params(text).unwrap();
        assert_eq!(theta.exit_rate(0, 0), 2.0);
    }

    #[test]
    fn invalid_params_reported() {
        let text = r#"{"p":2,"M":2,"alpha":[0.5,0.5],"phi":[[0.5,0.4],[0.5,0.5]],
            "Q":[[[null,2.0],[3.0,null]],[[null,2.0],[3.0,null]]]}"#;
        let err = parse_params(text).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn paths_round_trip() {
        let paths = simulate_sample(&reference_model(), &SimConfig::new(20, 10.0, 1).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_paths_jsonl(&paths, &mut buf).unwrap();
        assert_eq!(std::str::from_utf8(&buf).unwrap().lines().count(), 20);
        assert_eq!(read_paths_jsonl(&buf[..]).unwrap(), paths);
    }

    #[test]
    fn stats_round_trip() {
        let stats = simulate_stats(&reference_model(), &SimConfig::new(30, 10.0, 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&stats, &mut buf).unwrap();
        let back = read_stats_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), stats.len());
        for (a, b) in back.iter().zip(&stats) {
            assert_eq!(a.initial_state(), b.initial_state());
            assert_eq!(a.occupancy(), b.occupancy());
            assert_eq!(a.n_jumps(), b.n_jumps());
        }
        let head = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert!(head.starts_with("path_id,B_1,B_2,B_3,N_11,N_12"));
        assert!(head.ends_with("T_1,T_2,T_3"));
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0 / 3.0]);
        let labels = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_matrix_csv(&labels, &m, &mut buf).unwrap();
        let (l, back) = read_matrix_csv(&buf[..]).unwrap();
        assert_eq!(l, labels);
        assert_eq!(back, m);
    }
}
