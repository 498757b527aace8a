//! Exponential-rate fits plus CSV and gnuplot output.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::odeflow::MatrixPath;

/// Values at or below this are dropped from log fits.
pub const DEFAULT_FLOOR: f64 = 1e-12;
pub const MIN_FIT_POINTS: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct ExponentialFit {
    /// Decay rate, 1/time.
    pub rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points_used: usize,
}

impl ExponentialFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp()
    }
}

/// Least-squares fit of `ln v = ln a − r·t` over points with `t` in the window
/// and `v > floor`.
pub fn fit_exponential(series: &[(f64, f64)], floor: f64, window: (f64, f64)) -> Result<ExponentialFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *t >= window.0 && *t <= window.1 && *v > floor && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy <= f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(ExponentialFit {
        rate: -slope,
        amplitude: intercept.exp(),
        r_squared,
        window,
        points_used: pts.len(),
    })
}

/// One named diagnostic with its tolerance.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            pass: value.is_finite() && value <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: threshold,
            pass: value.is_finite() && value >= threshold,
        }
    }

    /// `|value − target| ≤ rel·|target|`; `tolerance` records the relative bound.
    pub fn relative(name: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: rel,
            pass: value.is_finite() && (value - target).abs() <= rel * target.abs(),
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header `t,X_11,X_12,…` for an `r×c` matrix, row-major.
pub fn path_header(rows: usize, cols: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=rows {
        for j in 1..=cols {
            h.push(format!("X_{i}{j}"));
        }
    }
    h
}

/// Writes matrix rows in the path CSV layout; an empty input yields a header-only file.
pub fn write_matrix_rows<W: Write>(
    mut w: W,
    shape: (usize, usize),
    times: &[f64],
    samples: &[DMatrix<f64>],
) -> Result<()> {
    writeln!(w, "{}", path_header(shape.0, shape.1).join(","))?;
    if samples.is_empty() {
        log::warn!("writing empty path: header only");
    }
    for (t, x) in times.iter().zip(samples) {
        let mut line = fmt17(*t);
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                line.push(',');
                line.push_str(&fmt17(x[(i, j)]));
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn emit_path_csv<W: Write>(path: &MatrixPath, w: W) -> Result<()> {
    let times: Vec<f64> = path.times().collect();
    write_matrix_rows(w, path.shape(), &times, path.samples())
}

pub fn write_path_file(path: &MatrixPath, file: &Path) -> Result<()> {
    let f = std::fs::File::create(file)?;
    emit_path_csv(path, std::io::BufWriter::new(f))
}

/// Reads a path CSV back; derivatives are rebuilt by finite differences.
pub fn read_path_csv<R: Read>(r: R) -> Result<MatrixPath> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let last = cols
        .last()
        .and_then(|c| c.strip_prefix("X_"))
        .ok_or_else(|| Error::Config(format!("unexpected CSV header '{header}'")))?;
    let entries = cols.len() - 1;
    // X_rc with single-digit indices, otherwise fall back to a column vector
    let (rows, ncols) = if last.len() == 2 {
        let r = last[..1].parse::<usize>().unwrap_or(entries);
        let c = last[1..].parse::<usize>().unwrap_or(1);
        if r * c == entries { (r, c) } else { (entries, 1) }
    } else {
        (entries, 1)
    };
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad CSV value: {e}")))?;
        if vals.len() != entries + 1 {
            return Err(Error::Config("CSV row length mismatch".into()));
        }
        times.push(vals[0]);
        samples.push(DMatrix::from_row_slice(rows, ncols, &vals[1..]));
    }
    if times.len() < 2 {
        return Err(Error::Config("CSV path needs at least two rows".into()));
    }
    let dt = times[1] - times[0];
    MatrixPath::from_samples(times[0], dt, samples)
}

/// Writes a plain numeric table with the given header.
pub fn write_table_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Trajectory,
    ErrorDecay,
}

fn relative_to(file: &Path, base: Option<&Path>) -> PathBuf {
    match base {
        Some(dir) => file.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| file.to_path_buf()),
        None => file.to_path_buf(),
    }
}

/// Writes a gnuplot script plotting every data column of each CSV; CSVs are
/// referenced relative to the script's directory.
pub fn emit_gnuplot_script(csv_files: &[PathBuf], kind: PlotKind, out: &Path) -> Result<()> {
    let base = out.parent().filter(|p| !p.as_os_str().is_empty());
    let mut script = String::new();
    script.push_str("set datafile separator \",\"\n");
    script.push_str("set xlabel \"t\"\n");
    script.push_str("set grid\n");
    if kind == PlotKind::ErrorDecay {
        script.push_str("set logscale y\n");
        script.push_str("set format y \"%.0e\"\n");
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into());
    script.push_str("set terminal pngcairo size 1000,600\n");
    script.push_str(&format!("set output \"{stem}.png\"\n"));
    let mut entries = Vec::new();
    for file in csv_files {
        let header = std::fs::read_to_string(file)?
            .lines()
            .next()
            .unwrap_or_default()
            .to_string();
        let rel = relative_to(file, base);
        let label = rel
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for (j, name) in header.split(',').enumerate().skip(1) {
            let style = if kind == PlotKind::ErrorDecay { "lines lw 2" } else { "lines" };
            entries.push(format!(
                "\"{}\" using 1:{} with {} title \"{} {}\"",
                rel.display(),
                j + 1,
                style,
                label,
                name.trim()
            ));
        }
    }
    if entries.is_empty() {
        return Err(Error::Config("no data columns to plot".into()));
    }
    script.push_str("plot ");
    script.push_str(&entries.join(", \\\n     "));
    script.push('\n');
    std::fs::write(out, script)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / n as f64;
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn recovers_exact_exponential() {
        let s = synthetic(|t| 5.0 * (-2.0 * t).exp(), 0.0, 3.0, 300);
        let fit = fit_exponential(&s, DEFAULT_FLOOR, (0.0, 3.0)).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!((fit.amplitude - 5.0).abs() < 1e-5);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let s = synthetic(|_| 0.3, 0.0, 1.0, 20);
        let fit = fit_exponential(&s, DEFAULT_FLOOR, (0.0, 1.0)).unwrap();
        assert!(fit.rate.abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn two_exponential_model_after_subtraction() {
        let horizon = 10.0;
        let s = synthetic(
            |t| (-2.0 * t).exp() + (-2.0 * (horizon - t)).exp(),
            0.0,
            horizon,
            1000,
        );
        let leading: Vec<_> = s
            .iter()
            .map(|&(t, v)| (t, v - (-2.0 * (horizon - t)).exp()))
            .collect();
        let fit = fit_exponential(&leading, DEFAULT_FLOOR, (1.0, 5.0)).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-3);
    }

    #[test]
    fn too_few_points() {
        let s = synthetic(|t| (-t).exp(), 0.0, 1.0, 5);
        assert!(matches!(
            fit_exponential(&s, DEFAULT_FLOOR, (0.0, 1.0)),
            Err(Error::InsufficientData { got: 6, .. })
        ));
    }

    #[test]
    fn identity_path_csv() {
        let path = MatrixPath::new(
            0.0,
            1.0,
            vec![DMatrix::identity(2, 2); 2],
            vec![DMatrix::zeros(2, 2); 2],
        )
        .unwrap();
        let mut buf = Vec::new();
        emit_path_csv(&path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,X_11,X_12,X_21,X_22");
    }

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_matrix_rows(&mut buf, (1, 1), &[], &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,X_11\n");
    }
}
