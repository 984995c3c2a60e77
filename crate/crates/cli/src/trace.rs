//! Trace CSV.
//!
//! Header `t,mode,omega_1..omega_n,c_1..c_n,beta_1..beta_m`, one row per
//! sample, numbers as `{:.16e}` (17 significant digits, dot decimal).
//! Metadata follows the rows as `#` lines:
//!
//! ```text
//! # beta_off,<m values>
//! # reframe,<t>                      (if a reframe happened)
//! # faults,<count>                   (discrete mode)
//! # fault,<edge>,<t>,<direction>,<occupancy>
//! ```

use std::fmt::Write as _;

use reframe_core::framesim::{Fault, FaultDirection};
use reframe_core::{SimTrace, TraceMode};

use crate::CliError;

fn num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

pub fn header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string(), "mode".to_string()];
    cols.extend((1..=n).map(|i| format!("omega_{i}")));
    cols.extend((1..=n).map(|i| format!("c_{i}")));
    cols.extend((1..=m).map(|e| format!("beta_{e}")));
    cols.join(",")
}

/// Renders a trace. `faults` is `Some` in discrete mode (possibly empty).
pub fn write_trace(trace: &SimTrace, faults: Option<&[Fault]>) -> String {
    let n = trace.final_q.len();
    let m = trace.beta_off.len();
    let mut out = header(n, m);
    out.push('\n');
    for s in &trace.samples {
        num(&mut out, s.t);
        out.push(',');
        out.push_str(s.mode.as_str());
        for x in s.omega.iter().chain(s.c.iter()).chain(s.beta.iter()) {
            out.push(',');
            num(&mut out, *x);
        }
        out.push('\n');
    }
    out.push_str("# beta_off");
    for x in trace.beta_off.iter() {
        out.push(',');
        num(&mut out, *x);
    }
    out.push('\n');
    if let Some(t) = trace.reframe_time() {
        out.push_str("# reframe,");
        num(&mut out, t);
        out.push('\n');
    }
    if let Some(faults) = faults {
        writeln!(out, "# faults,{}", faults.len()).unwrap();
        for f in faults {
            out.push_str("# fault,");
            write!(out, "{},", f.edge + 1).unwrap();
            num(&mut out, f.t);
            let dir = match f.direction {
                FaultDirection::Overflow => "overflow",
                FaultDirection::Underflow => "underflow",
            };
            writeln!(out, ",{dir},{}", f.occupancy).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    pub mode: TraceMode,
    pub omega: Vec<f64>,
    pub c: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedTrace {
    pub n: usize,
    pub m: usize,
    pub rows: Vec<Row>,
    pub beta_off: Option<Vec<f64>>,
    pub reframe: Option<f64>,
    pub fault_count: Option<usize>,
}

fn parse_mode(s: &str) -> Option<TraceMode> {
    match s {
        "pre" => Some(TraceMode::PreReframe),
        "post" => Some(TraceMode::PostReframe),
        "partial" => Some(TraceMode::Partial),
        _ => None,
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Input(format!("trace line {line}: bad number {s:?}")))
}

/// Parses a trace written by [`write_trace`]. Empty input gives an empty
/// trace.
pub fn read_trace(text: &str) -> Result<ParsedTrace, CliError> {
    let mut parsed = ParsedTrace::default();
    for (i, line) in text.lines().enumerate() {
        let Some(meta) = line.strip_prefix('#') else { continue };
        let fields: Vec<&str> = meta.trim().split(',').collect();
        match fields[0] {
            "beta_off" => {
                let v = fields[1..].iter().map(|f| parse_f64(f, i + 1)).collect::<Result<_, _>>()?;
                parsed.beta_off = Some(v);
            }
            "reframe" if fields.len() == 2 => parsed.reframe = Some(parse_f64(fields[1], i + 1)?),
            "faults" if fields.len() == 2 => {
                parsed.fault_count = fields[1].trim().parse().ok();
            }
            _ => {}
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let Some(head) = records.next() else {
        return Ok(parsed);
    };
    let head = head.map_err(|e| CliError::Input(format!("trace header: {e}")))?;
    let n = head.iter().filter(|h| h.starts_with("omega_")).count();
    let m = head.iter().filter(|h| h.starts_with("beta_")).count();
    if head.get(0) != Some("t") || head.get(1) != Some("mode") || head.len() != 2 + 2 * n + m {
        return Err(CliError::Input("trace header does not match t,mode,omega_*,c_*,beta_*".into()));
    }
    if head.iter().collect::<Vec<_>>().join(",") != header(n, m) {
        return Err(CliError::Input("trace header columns out of order".into()));
    }
    parsed.n = n;
    parsed.m = m;
    for rec in records {
        let rec = rec.map_err(|e| CliError::Input(format!("trace: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != head.len() {
            return Err(CliError::Input(format!("trace line {line}: expected {} fields", head.len())));
        }
        let mode = parse_mode(&rec[1])
            .ok_or_else(|| CliError::Input(format!("trace line {line}: bad mode {:?}", &rec[1])))?;
        let vals = rec.iter().skip(2).map(|f| parse_f64(f, line)).collect::<Result<Vec<_>, _>>()?;
        parsed.rows.push(Row {
            t: parse_f64(&rec[0], line)?,
            mode,
            omega: vals[..n].to_vec(),
            c: vals[n..2 * n].to_vec(),
            beta: vals[2 * n..].to_vec(),
        });
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use reframe_core::DVector;
    use reframe_core::TraceSample;

    fn sample(t: f64, mode: TraceMode, w: f64) -> TraceSample {
        TraceSample {
            t,
            mode,
            theta: DVector::zeros(2),
            omega: DVector::from_vec(vec![w, 0.1 + 0.2]),
            c: DVector::from_vec(vec![-0.0, 1e-300]),
            beta: DVector::from_vec(vec![9.9, 10.1]),
        }
    }

    fn trace() -> SimTrace {
        SimTrace {
            samples: vec![
                sample(0.0, TraceMode::PreReframe, 1.0),
                sample(2.5, TraceMode::PreReframe, 1.0 / 3.0),
                sample(2.5, TraceMode::PostReframe, 2.0 / 3.0),
            ],
            beta_off: DVector::from_vec(vec![10.0, 10.0]),
            reframes: vec![reframe_core::dynamics::ReframeEvent { node: 0, t: 2.5, q: 0.01 }],
            final_q: DVector::from_vec(vec![0.01, -0.01]),
        }
    }

    #[test]
    fn layout() {
        let text = write_trace(&trace(), None);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mode,omega_1,omega_2,c_1,c_2,beta_1,beta_2"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e0,pre,1.0000000000000000e0,3.0000000000000004e-1,-0.0000000000000000e0,1.0000000000000000e-300,9.9000000000000004e0,1.0100000000000000e1")
        );
        assert!(text.contains("# reframe,2.5000000000000000e0\n"));
        assert!(!text.contains("# faults"));
    }

    #[test]
    fn round_trips_exactly() {
        let tr = trace();
        let parsed = read_trace(&write_trace(&tr, Some(&[]))).unwrap();
        assert_eq!((parsed.n, parsed.m), (2, 2));
        assert_eq!(parsed.rows.len(), 3);
        for (row, s) in parsed.rows.iter().zip(&tr.samples) {
            assert_eq!(row.t.to_bits(), s.t.to_bits());
            assert_eq!(row.mode, s.mode);
            for (a, b) in row.omega.iter().zip(s.omega.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in row.c.iter().zip(s.c.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(parsed.beta_off, Some(vec![10.0, 10.0]));
        assert_eq!(parsed.reframe, Some(2.5));
        assert_eq!(parsed.fault_count, Some(0));
    }

    #[test]
    fn fault_lines() {
        let f = Fault { edge: 1, t: 3.0, direction: FaultDirection::Overflow, occupancy: 21 };
        let text = write_trace(&trace(), Some(&[f]));
        assert!(text.ends_with("# faults,1\n# fault,2,3.0000000000000000e0,overflow,21\n"), "{text}");
    }

    #[test]
    fn empty_and_bad_input() {
        assert!(read_trace("").unwrap().rows.is_empty());
        assert!(read_trace("t,mode\n").unwrap().rows.is_empty());
        assert!(read_trace("t,mode,omega_1,c_1\n0,pre,1,x\n").is_err());
        assert!(read_trace("t,mode,omega_1,c_1\n0,sideways,1,0\n").is_err());
        assert!(read_trace("x,y\n").is_err());
    }
}
