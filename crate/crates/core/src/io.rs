//! CSV/JSON result files and the small text parsers behind the CLI.
//!
//! Every parser here takes untrusted text and must return an error rather
//! than panic; the fuzz targets under `fuzz/` exercise them directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::SweepRecord;

pub const SWEEP_HEADER: &str = "T,fh_cost,transfer_cost,expected_regulation_cost,actual_regulation_cost,total_composite_cost,terminal_error,hit_omega,solver_iterations";

/// 17 significant digits in scientific notation; non-finite values as
/// `inf`, `-inf`, `NaN`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: not a number: {field:?}")))
}

fn parse_usize(field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("{what}: not a count: {field:?}")))
}

fn parse_bool(field: &str, what: &str) -> Result<bool> {
    match field.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse(format!("{what}: not a bool: {other:?}"))),
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.horizon,
            fmt_f64(r.fh_cost),
            fmt_f64(r.transfer_cost),
            fmt_f64(r.expected_regulation_cost),
            fmt_f64(r.actual_regulation_cost),
            fmt_f64(r.total_composite_cost),
            fmt_f64(r.terminal_error),
            r.hit_omega,
            r.solver_iterations
        );
    }
    out
}

pub fn emit_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    write_atomic(path, sweep_csv(records).as_bytes())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != SWEEP_HEADER {
        return Err(Error::Parse(format!("unexpected sweep header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| &row[i];
        out.push(SweepRecord {
            horizon: parse_usize(f(0), "T")?,
            fh_cost: parse_f64(f(1), "fh_cost")?,
            transfer_cost: parse_f64(f(2), "transfer_cost")?,
            expected_regulation_cost: parse_f64(f(3), "expected_regulation_cost")?,
            actual_regulation_cost: parse_f64(f(4), "actual_regulation_cost")?,
            total_composite_cost: parse_f64(f(5), "total_composite_cost")?,
            terminal_error: parse_f64(f(6), "terminal_error")?,
            hit_omega: parse_bool(f(7), "hit_omega")?,
            solver_iterations: parse_usize(f(8), "solver_iterations")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Transfer,
    Regulate,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Transfer => "transfer",
            Phase::Regulate => "regulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub phase: Phase,
    pub state: Vec<f64>,
    /// Empty on the final row, which carries only the terminal state.
    pub control: Vec<f64>,
}

/// Raw-coordinate composite trajectory with its phase labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub state_dim: usize,
    pub control_dim: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    /// Rows `t < transfer_steps` are labelled `transfer`, the rest `regulate`.
    pub fn from_trajectory(traj: &crate::trajectory::Trajectory, transfer_steps: usize) -> Self {
        let state_dim = traj.states.first().map_or(0, Vec::len);
        let control_dim = traj.controls.first().map_or(0, Vec::len);
        let rows = traj
            .states
            .iter()
            .enumerate()
            .map(|(t, x)| TrajectoryRow {
                t,
                phase: if t < transfer_steps {
                    Phase::Transfer
                } else {
                    Phase::Regulate
                },
                state: x.clone(),
                control: traj.controls.get(t).cloned().unwrap_or_default(),
            })
            .collect();
        Self {
            state_dim,
            control_dim,
            rows,
        }
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["t".to_string(), "phase".to_string()];
        cols.extend((0..self.state_dim).map(|i| format!("x{i}")));
        cols.extend((0..self.control_dim).map(|i| format!("u{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.t.to_string());
            out.push(',');
            out.push_str(row.phase.as_str());
            for v in &row.state {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            for i in 0..self.control_dim {
                out.push(',');
                if let Some(v) = row.control.get(i) {
                    out.push_str(&fmt_f64(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv_reader(text);
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "t" || header[1] != "phase" {
            return Err(Error::Parse("trajectory header must start with t,phase".into()));
        }
        let state_dim = header[2..].iter().take_while(|h| h.starts_with('x')).count();
        let control_dim = header.len() - 2 - state_dim;
        for (i, h) in header[2..2 + state_dim].iter().enumerate() {
            if *h != format!("x{i}") {
                return Err(Error::Parse(format!("expected column x{i}, got {h:?}")));
            }
        }
        for (i, h) in header[2 + state_dim..].iter().enumerate() {
            if *h != format!("u{i}") {
                return Err(Error::Parse(format!("expected column u{i}, got {h:?}")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let phase = match &rec[1] {
                "transfer" => Phase::Transfer,
                "regulate" => Phase::Regulate,
                other => return Err(Error::Parse(format!("unknown phase {other:?}"))),
            };
            let state = (0..state_dim)
                .map(|i| parse_f64(&rec[2 + i], "state"))
                .collect::<Result<Vec<_>>>()?;
            let raw_u: Vec<&str> = (0..control_dim).map(|i| &rec[2 + state_dim + i]).collect();
            let control = if raw_u.iter().all(|s| s.trim().is_empty()) {
                Vec::new()
            } else {
                raw_u
                    .iter()
                    .map(|s| parse_f64(s, "control"))
                    .collect::<Result<Vec<_>>>()?
            };
            rows.push(TrajectoryRow {
                t: parse_usize(&rec[0], "t")?,
                phase,
                state,
                control,
            });
        }
        Ok(Self {
            state_dim,
            control_dim,
            rows,
        })
    }
}

/// Parses a comma-separated real vector. Entries may be plain numbers or
/// multiples of π such as `pi`, `-pi/2`, `3pi/4`, `5*pi/12`.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let text = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .unwrap_or(text);
    text.split(',').map(parse_scalar).collect()
}

fn parse_scalar(token: &str) -> Result<f64> {
    let token = token.trim();
    let bad = || Error::Parse(format!("not a number or multiple of pi: {token:?}"));
    let Some(pi_at) = token.find("pi") else {
        return token.parse::<f64>().map_err(|_| bad()).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad())
            }
        });
    };
    let (coef, rest) = token.split_at(pi_at);
    let rest = &rest[2..];
    let coef = coef.trim().trim_end_matches('*').trim();
    let coef = match coef {
        "" | "+" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().map_err(|_| bad())?,
    };
    let rest = rest.trim();
    let denom = if rest.is_empty() {
        1.0
    } else {
        let d = rest.strip_prefix('/').ok_or_else(bad)?;
        d.trim().parse::<f64>().map_err(|_| bad())?
    };
    let v = coef * std::f64::consts::PI / denom;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// (De)serializes `f64` as a JSON number when finite and as a string
/// (`"inf"`, `"-inf"`, `"NaN"`) otherwise.
pub mod json_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "NaN" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn record(h: usize) -> SweepRecord {
        SweepRecord {
            horizon: h,
            fh_cost: 176.95865752947640 + h as f64,
            transfer_cost: 1.0 / 3.0,
            expected_regulation_cost: 2.0f64.sqrt(),
            actual_regulation_cost: f64::INFINITY,
            total_composite_cost: f64::INFINITY,
            terminal_error: 1e-300,
            hit_omega: h % 2 == 0,
            solver_iterations: 7,
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let text = sweep_csv(&[]);
        assert_eq!(text, format!("{SWEEP_HEADER}\n"));
        assert!(parse_sweep_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn single_record_two_lines() {
        let text = sweep_csv(&[record(4)]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_sweep_csv(&text).unwrap(), vec![record(4)]);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn sweep_header_mismatch() {
        let text = "T,fh_cost\n1,2\n";
        assert!(parse_sweep_csv(text).is_err());
        let text = format!("{SWEEP_HEADER}\n1,2,3\n");
        assert!(parse_sweep_csv(&text).is_err());
        let text = format!("{SWEEP_HEADER}\n1,a,1,1,1,1,1,true,1\n");
        assert!(parse_sweep_csv(&text).is_err());
    }

    #[test]
    fn vector_parsing() {
        assert_eq!(parse_vector("0, 0,0 ,0").unwrap(), vec![0.0; 4]);
        assert_eq!(parse_vector("[1.5,-2]").unwrap(), vec![1.5, -2.0]);
        let v = parse_vector("0,3pi/4,-pi,5*pi/12").unwrap();
        assert_eq!(v, vec![0.0, 3.0 * PI / 4.0, -PI, 5.0 * PI / 12.0]);
        assert!(parse_vector("1,,2").is_err());
        assert!(parse_vector("pie").is_err());
        assert!(parse_vector("inf").is_err());
        assert!(parse_vector("pi/0").is_err());
        assert!(parse_vector("").unwrap().is_empty());
    }

    #[test]
    fn trajectory_table_round_trip() {
        let traj = crate::trajectory::Trajectory::from_parts(
            vec![
                nalgebra::DVector::from_vec(vec![0.0, 0.1]),
                nalgebra::DVector::from_vec(vec![0.2, 0.3]),
                nalgebra::DVector::from_vec(vec![0.4, 0.5]),
            ],
            vec![
                nalgebra::DVector::from_vec(vec![1.0]),
                nalgebra::DVector::from_vec(vec![-1.0]),
            ],
            vec![1.0, 2.0],
            0.0,
        );
        let table = TrajectoryTable::from_trajectory(&traj, 1);
        let text = table.to_csv();
        assert!(text.starts_with("t,phase,x0,x1,u0\n0,transfer,"));
        assert!(text.contains("\n1,regulate,"));
        assert!(text.trim_end().ends_with(','));
        assert_eq!(TrajectoryTable::parse(&text).unwrap(), table);
    }

    #[test]
    fn trajectory_header_validation() {
        assert!(TrajectoryTable::parse("t,phase,x1\n").is_err());
        assert!(TrajectoryTable::parse("phase,t\n").is_err());
        assert!(TrajectoryTable::parse("t,phase,x0,u0\n0,coast,1,2\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    fn any_f64() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>(),
            Just(f64::INFINITY),
            Just(f64::NEG_INFINITY),
            -1e6..1e6f64,
        ]
    }

    proptest! {
        #[test]
        fn sweep_round_trip_is_bit_exact(
            rows in proptest::collection::vec(
                (0usize..1000, any_f64(), any_f64(), any_f64(), any::<bool>(), 0usize..600),
                0..8,
            )
        ) {
            let records: Vec<SweepRecord> = rows
                .iter()
                .map(|&(h, a, b, c, hit, it)| SweepRecord {
                    horizon: h,
                    fh_cost: a,
                    transfer_cost: b,
                    expected_regulation_cost: c,
                    actual_regulation_cost: a,
                    total_composite_cost: b,
                    terminal_error: c,
                    hit_omega: hit,
                    solver_iterations: it,
                })
                .collect();
            let parsed = parse_sweep_csv(&sweep_csv(&records)).unwrap();
            prop_assert_eq!(parsed.len(), records.len());
            for (p, r) in parsed.iter().zip(&records) {
                let bits = |s: &SweepRecord| [
                    s.fh_cost.to_bits(), s.transfer_cost.to_bits(),
                    s.expected_regulation_cost.to_bits(), s.actual_regulation_cost.to_bits(),
                    s.total_composite_cost.to_bits(), s.terminal_error.to_bits(),
                ];
                // NaN payloads are not preserved, only NaN-ness
                if r.fh_cost.is_nan() || r.transfer_cost.is_nan() || r.expected_regulation_cost.is_nan() {
                    continue;
                }
                prop_assert_eq!(bits(p), bits(r));
                prop_assert_eq!((p.horizon, p.hit_omega, p.solver_iterations), (r.horizon, r.hit_omega, r.solver_iterations));
            }
        }

        #[test]
        fn parsers_never_panic(s in ".{0,200}") {
            let _ = parse_sweep_csv(&s);
            let _ = TrajectoryTable::parse(&s);
            let _ = parse_vector(&s);
        }
    }
}
