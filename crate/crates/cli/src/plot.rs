//! Plot-ready series from a trace.
//!
//! One block per node (or edge): a `# label` line, then `t value` lines.
//! Blocks are separated by a blank line. If the trace has a reframe, a final
//! `# reframe` block holds two points at the reframe time spanning the
//! plotted range, so it draws as a vertical marker.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::trace::ParsedTrace;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Omega,
    /// `β − β_off`
    BetaRel,
}

impl FromStr for Quantity {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "omega" => Ok(Quantity::Omega),
            "beta-rel" => Ok(Quantity::BetaRel),
            other => Err(CliError::Usage(format!("unknown quantity {other:?} (omega | beta-rel)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn series(trace: &ParsedTrace, quantity: Quantity) -> Result<Vec<Series>, CliError> {
    if trace.rows.is_empty() {
        return Ok(Vec::new());
    }
    let out = match quantity {
        Quantity::Omega => (0..trace.n)
            .map(|i| Series {
                label: format!("omega_{}", i + 1),
                points: trace.rows.iter().map(|r| (r.t, r.omega[i])).collect(),
            })
            .collect(),
        Quantity::BetaRel => {
            let off = trace
                .beta_off
                .as_ref()
                .ok_or_else(|| CliError::Input("trace has no `# beta_off` line".into()))?;
            if off.len() != trace.m {
                return Err(CliError::Input(format!(
                    "trace `# beta_off` has {} values for {} edges",
                    off.len(),
                    trace.m
                )));
            }
            (0..trace.m)
                .map(|e| Series {
                    label: format!("beta_rel_{}", e + 1),
                    points: trace.rows.iter().map(|r| (r.t, r.beta[e] - off[e])).collect(),
                })
                .collect()
        }
    };
    Ok(out)
}

pub fn render(series: &[Series], reframe: Option<f64>) -> String {
    let mut out = String::new();
    for (i, s) in series.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "# {}", s.label).unwrap();
        for (t, v) in &s.points {
            writeln!(out, "{t:.16e} {v:.16e}").unwrap();
        }
    }
    if let (Some(t), false) = (reframe, series.is_empty()) {
        let values = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        write!(out, "\n# reframe\n{t:.16e} {lo:.16e}\n{t:.16e} {hi:.16e}\n").unwrap();
    }
    out
}

pub fn plotdata(trace: &ParsedTrace, quantity: Quantity) -> Result<String, CliError> {
    Ok(render(&series(trace, quantity)?, trace.reframe))
}

/// Reads a file produced by [`render`] back into series. The reframe
/// marker comes back as a series labeled `reframe`.
pub fn parse_plotdata(text: &str) -> Result<Vec<Series>, CliError> {
    let mut out: Vec<Series> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(label) = line.strip_prefix("# ") {
            out.push(Series { label: label.to_string(), points: Vec::new() });
        } else if !line.trim().is_empty() {
            let bad = || CliError::Input(format!("plot data line {}: {line:?}", i + 1));
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            let (Some(Ok(t)), Some(Ok(v)), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad());
            };
            out.last_mut().ok_or_else(bad)?.points.push((t, v));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Row;
    use reframe_core::TraceMode;

    fn parsed() -> ParsedTrace {
        let row = |t, mode, w: f64, b: f64| Row { t, mode, omega: vec![w, 2.0 * w], c: vec![0.0, 0.0], beta: vec![b] };
        ParsedTrace {
            n: 2,
            m: 1,
            rows: vec![
                row(0.0, TraceMode::PreReframe, 1.0, 10.0),
                row(1.0, TraceMode::PreReframe, 1.0, 10.5),
                row(1.0, TraceMode::PostReframe, 1.5, 10.5),
            ],
            beta_off: Some(vec![10.0]),
            reframe: Some(1.0),
            fault_count: None,
        }
    }

    #[test]
    fn omega_blocks_and_marker() {
        let text = plotdata(&parsed(), Quantity::Omega).unwrap();
        let s = parse_plotdata(&text).unwrap();
        let labels: Vec<&str> = s.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["omega_1", "omega_2", "reframe"]);
        assert_eq!(s[1].points, vec![(0.0, 2.0), (1.0, 2.0), (1.0, 3.0)]);
        assert_eq!(s[2].points, vec![(1.0, 1.0), (1.0, 3.0)]);
        assert_eq!(text.matches("\n\n").count(), 2);
    }

    #[test]
    fn beta_rel_subtracts_offsets() {
        let s = series(&parsed(), Quantity::BetaRel).unwrap();
        assert_eq!(s[0].label, "beta_rel_1");
        assert_eq!(s[0].points, vec![(0.0, 0.0), (1.0, 0.5), (1.0, 0.5)]);
        let mut p = parsed();
        p.beta_off = None;
        assert!(series(&p, Quantity::BetaRel).is_err());
    }

    #[test]
    fn empty_trace_is_empty_output() {
        assert_eq!(plotdata(&ParsedTrace::default(), Quantity::Omega).unwrap(), "");
        assert_eq!(plotdata(&ParsedTrace::default(), Quantity::BetaRel).unwrap(), "");
    }

    #[test]
    fn quantity_names() {
        assert_eq!("beta-rel".parse::<Quantity>().unwrap(), Quantity::BetaRel);
        assert!("beta".parse::<Quantity>().is_err());
    }
}
