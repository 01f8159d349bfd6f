//! Data ingestion (sparse LIBSVM text), seeded synthetic generators,
//! and trace persistence as CSV with a JSON mirror.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsRecord;
use crate::linalg::norm;
use crate::problems::{LogisticDataset, ProblemError};

use self::rng::Rng;

/// Portable seeded pseudo-random generator, fully specified so seeds
/// reproduce across implementations and languages.
///
/// State setup: four 64-bit words produced by successive outputs of
/// splitmix64 seeded with the user seed, where one splitmix64 step is
/// `z = (s += 0x9E3779B97F4A7C15); z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
/// z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31`.
///
/// Output: xoshiro256** — `result = rotl(s1 * 5, 7) * 9`, then the state
/// transition `t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3;
/// s2 ^= t; s3 = rotl(s3, 45)`.
///
/// Uniform doubles take the top 53 bits: `(u >> 11) * 2^-53` in [0, 1).
/// Gaussians use Marsaglia polar sampling with a cached spare.
pub mod rng {
    #[derive(Debug, Clone)]
    pub struct Rng {
        s: [u64; 4],
        spare_gaussian: Option<f64>,
    }

    fn splitmix64(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    impl Rng {
        pub fn from_seed(seed: u64) -> Self {
            let mut sm = seed;
            let s = [
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
            ];
            Rng {
                s,
                spare_gaussian: None,
            }
        }

        pub fn next_u64(&mut self) -> u64 {
            let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
            let t = self.s[1] << 17;
            self.s[2] ^= self.s[0];
            self.s[3] ^= self.s[1];
            self.s[1] ^= self.s[2];
            self.s[0] ^= self.s[3];
            self.s[2] ^= t;
            self.s[3] = self.s[3].rotate_left(45);
            result
        }

        /// Uniform on [0, 1).
        pub fn next_f64(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
        }

        /// Standard normal.
        pub fn next_gaussian(&mut self) -> f64 {
            if let Some(g) = self.spare_gaussian.take() {
                return g;
            }
            loop {
                let u = 2.0 * self.next_f64() - 1.0;
                let v = 2.0 * self.next_f64() - 1.0;
                let r = u * u + v * v;
                if r > 0.0 && r < 1.0 {
                    let scale = (-2.0 * r.ln() / r).sqrt();
                    self.spare_gaussian = Some(v * scale);
                    return u * scale;
                }
            }
        }

        #[cfg(test)]
        pub(crate) fn splitmix64_reference(state: &mut u64) -> u64 {
            splitmix64(state)
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

/// Options for [`parse_libsvm`]. With `binary_positive = Some(p)`, a raw
/// label equal to `p` maps to +1 and everything else to -1 (the covtype
/// classes-1/2 convention); otherwise labels map by sign, with 0
/// negative. `d_override` widens the feature dimension beyond the
/// largest index seen.
#[derive(Debug, Clone, Default)]
pub struct LibsvmOptions {
    pub binary_positive: Option<f64>,
    pub d_override: Option<usize>,
}

/// Parses LIBSVM sparse text: nonempty lines of
/// `<label> <idx>:<val> ...` with 1-based strictly increasing indices.
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    options: &LibsvmOptions,
) -> Result<LogisticDataset, IngestError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let label_tok = match tokens.next() {
            Some(t) => t,
            None => continue,
        };
        let raw: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("malformed label '{label_tok}'")))?;
        let label = match options.binary_positive {
            Some(p) => {
                if raw == p {
                    1.0
                } else {
                    -1.0
                }
            }
            None => {
                if raw > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let mut row = Vec::new();
        let mut last_index = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("malformed feature '{tok}'")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed index '{idx_s}'")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "feature indices are 1-based"));
            }
            if idx <= last_index {
                return Err(parse_err(
                    lineno,
                    format!("indices must be strictly increasing, got {idx} after {last_index}"),
                ));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed value '{val_s}'")))?;
            row.push((idx - 1, val));
            last_index = idx;
        }
        max_index = max_index.max(last_index);
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no data rows"));
    }
    let d = match options.d_override {
        Some(d) if d >= max_index => d,
        Some(d) => {
            return Err(parse_err(
                0,
                format!("dimension override {d} below largest index {max_index}"),
            ))
        }
        None => max_index.max(1),
    };
    Ok(LogisticDataset::new(rows, labels, d)?)
}

/// Renders a dataset back to LIBSVM text; [`parse_libsvm`] of the output
/// reproduces the dataset exactly.
pub fn serialize_libsvm(data: &LogisticDataset) -> String {
    let mut out = String::new();
    for (row, &label) in data.rows().iter().zip(data.labels()) {
        out.push_str(if label > 0.0 { "+1" } else { "-1" });
        for &(c, v) in row {
            out.push_str(&format!(" {}:{}", c + 1, format_real(v)));
        }
        out.push('\n');
    }
    out
}

/// One trace record: a solver's state after some number of g-evaluations.
/// `picard_substep` is the index inside the current sweep for sweep-based
/// solvers and -1 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub solver: String,
    pub t: usize,
    pub picard_substep: i64,
    pub g_evals: usize,
    pub residual_norm: f64,
    pub theta: Option<f64>,
    pub diagnostics: Option<DiagnosticsRecord>,
}

const CSV_HEADER: &str = "solver,t,picard_substep,g_evals,residual_norm,theta,\
jac_gmres_gain,et_norm,et_bound,cond_s,cond_y,cond_g,s_minus_g_norm,\
y_minus_jg_norm,spd_gain_upper,vandermonde_upper,sigma_min_y_ratio,s_rank_deficient";

/// Reals are written with 17 significant digits, enough to round-trip
/// any finite f64 bit-exactly.
fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>, IngestError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| parse_err(line, format!("malformed real '{s}'")))
    }
}

fn csv_line(row: &TraceRow) -> String {
    let d = row.diagnostics.as_ref();
    let opt = |f: fn(&DiagnosticsRecord) -> f64| format_opt(d.map(f));
    let optopt =
        |f: fn(&DiagnosticsRecord) -> Option<f64>| format_opt(d.and_then(f));
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.solver,
        row.t,
        row.picard_substep,
        row.g_evals,
        format_real(row.residual_norm),
        format_opt(row.theta),
        opt(|d| d.jac_gmres_gain),
        opt(|d| d.et_norm),
        optopt(|d| d.et_bound),
        opt(|d| d.cond_s),
        opt(|d| d.cond_y),
        opt(|d| d.cond_g),
        opt(|d| d.s_minus_g_norm),
        opt(|d| d.y_minus_jg_norm),
        optopt(|d| d.spd_gain_upper),
        optopt(|d| d.vandermonde_upper),
        opt(|d| d.sigma_min_y_ratio),
        d.map(|d| if d.s_rank_deficient { "1" } else { "0" })
            .unwrap_or(""),
    )
}

/// Writes a UTF-8, LF-terminated CSV trace (header plus one line per row).
pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CSV_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for row in rows {
        w.write_all(csv_line(row).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, IngestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != CSV_HEADER {
                return Err(parse_err(1, "unrecognized trace header"));
            }
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 18 {
            return Err(parse_err(lineno, format!("expected 18 fields, got {}", fields.len())));
        }
        let req = |s: &str| -> Result<f64, IngestError> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("malformed real '{s}'")))
        };
        let int = |s: &str| -> Result<usize, IngestError> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("malformed integer '{s}'")))
        };
        let t = int(fields[1])?;
        let diagnostics = if fields[6].is_empty() {
            None
        } else {
            Some(DiagnosticsRecord {
                t,
                theta: parse_opt(fields[5], lineno)?.unwrap_or(f64::NAN),
                jac_gmres_gain: req(fields[6])?,
                et_norm: req(fields[7])?,
                et_bound: parse_opt(fields[8], lineno)?,
                cond_s: req(fields[9])?,
                cond_y: req(fields[10])?,
                cond_g: req(fields[11])?,
                s_minus_g_norm: req(fields[12])?,
                y_minus_jg_norm: req(fields[13])?,
                spd_gain_upper: parse_opt(fields[14], lineno)?,
                vandermonde_upper: parse_opt(fields[15], lineno)?,
                sigma_min_y_ratio: req(fields[16])?,
                s_rank_deficient: fields[17] == "1",
            })
        };
        rows.push(TraceRow {
            solver: fields[0].to_string(),
            t,
            picard_substep: fields[2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed integer '{}'", fields[2])))?,
            g_evals: int(fields[3])?,
            residual_norm: req(fields[4])?,
            theta: parse_opt(fields[5], lineno)?,
            diagnostics,
        });
    }
    Ok(rows)
}

/// JSON mirror of the CSV trace: an array of rows with identical fields.
pub fn write_trace_json(rows: &[TraceRow], path: &Path) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, rows)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Random orthogonal matrix: modified Gram-Schmidt applied to a square
/// standard-normal matrix (re-drawn in the measure-zero rank-deficient
/// case).
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> Array2<f64> {
    loop {
        let mut q = Array2::zeros((d, d));
        for v in q.iter_mut() {
            *v = rng.next_gaussian();
        }
        let mut ok = true;
        for j in 0..d {
            for k in 0..j {
                let dot: f64 = (0..d).map(|i| q[[i, j]] * q[[i, k]]).sum();
                for i in 0..d {
                    q[[i, j]] -= dot * q[[i, k]];
                }
            }
            let nj = norm(&q.column(j).to_owned());
            if nj < 1e-8 {
                ok = false;
                break;
            }
            for i in 0..d {
                q[[i, j]] /= nj;
            }
        }
        if ok {
            return q;
        }
    }
}

/// Seeded affine test instance `(A, b)`: `A = Q1 diag(u) Q2` with `u`
/// uniform on [0.1, 1] rescaled so the spectral norm equals
/// `target_norm` exactly, and `b` standard normal.
pub fn generate_gaussian_affine(
    d: usize,
    target_norm: f64,
    seed: u64,
) -> (Array2<f64>, Array1<f64>) {
    let mut rng = Rng::from_seed(seed);
    let q1 = random_orthogonal(d, &mut rng);
    let q2 = random_orthogonal(d, &mut rng);
    let mut u: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * rng.next_f64()).collect();
    let umax = u.iter().cloned().fold(0.0f64, f64::max);
    for v in &mut u {
        // After rescaling max(u) = 1, so ||A|| = target_norm exactly.
        *v *= target_norm / umax;
    }
    let mut middle = q2;
    for (i, &ui) in u.iter().enumerate() {
        for j in 0..d {
            middle[[i, j]] *= ui;
        }
    }
    let a = q1.dot(&middle);
    let b = Array1::from_iter((0..d).map(|_| rng.next_gaussian()));
    (a, b)
}
