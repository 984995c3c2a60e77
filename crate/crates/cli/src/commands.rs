//! Subcommand bodies. They return data; `main` decides where it goes.

use reframe_core::DVector;
use reframe_core::controller::default_window;
use reframe_core::dynamics::analyze;
use reframe_core::framesim::{run_discrete, DiscreteSettings, Fault, FaultDirection};
use reframe_core::graph::generate_topology;
use reframe_core::spectral::{predict_beta_ss, predict_omega_ss};
use reframe_core::verify::{run_battery, BatteryReport, BatterySettings};
use reframe_core::{run, ControllerKind, ReframeMode, RunSettings, SimTrace, TopologyKind, TraceMode};
use serde::Serialize;

use crate::config::{Scenario, ScenarioConfig, SimMode, TopologySpec};
use crate::trace::write_trace;
use crate::CliError;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub discrete: bool,
    pub continue_on_fault: bool,
    /// Treat parameter warnings as errors.
    pub strict: bool,
    /// Overrides the topology and stagger seeds.
    pub seed: Option<u64>,
}

/// Applies a command-line seed to the parts of a config that consume one.
pub fn apply_seed(cfg: &mut ScenarioConfig, seed: Option<u64>) {
    let Some(seed) = seed else { return };
    if cfg.topology == TopologySpec::RandomStrong {
        cfg.topology_seed = Some(seed);
    }
    if let Some(s) = cfg.reframe.stagger.as_mut() {
        s.seed = seed;
    }
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn inf_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

struct Prepared {
    scenario: Scenario,
    warnings: Vec<String>,
    predictions: Option<Predictions>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Predictions {
    /// `1zᵀ(ω_u + q)`; also the post-reframe limit.
    pub omega_ss: Vec<f64>,
    /// Occupancy limit under the initial controller offsets.
    pub beta_ss_pre: Vec<f64>,
    pub beta_off: Vec<f64>,
    pub slowest_rate: f64,
    pub convergence_horizon: f64,
}

/// Loop gain above which discrete runs stop tracking the continuous model.
pub const QUANTIZED_GAIN_LIMIT: f64 = 0.4;

fn prepare(cfg: &ScenarioConfig, strict: bool) -> Result<Prepared, CliError> {
    let scenario = cfg.resolve()?;
    let warnings = scenario
        .params
        .validate_allowing_zero_gain(&scenario.topology)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if strict && !warnings.is_empty() {
        return Err(CliError::Config(format!("strict mode: {}", warnings.join("; "))));
    }
    let predictions = if scenario.params.k > 0.0 {
        let (inc, params, clm, sd) = analyze(&scenario.topology, &scenario.params, &scenario.theta0)?;
        Some(Predictions {
            omega_ss: vec(&predict_omega_ss(&sd, &params)),
            beta_ss_pre: vec(&predict_beta_ss(&sd, &inc, &clm, &params, &params.q)),
            beta_off: vec(params.beta_off.explicit()?),
            slowest_rate: sd.slowest_rate(),
            convergence_horizon: sd.convergence_horizon(),
        })
    } else {
        None
    };
    Ok(Prepared { scenario, warnings, predictions })
}

/// Horizon when the config leaves it out: one convergence horizon per phase,
/// plus the quiet window for auto reframing or the last staggered delay.
fn default_horizon(s: &Scenario, p: Option<&Predictions>) -> Result<f64, CliError> {
    let Some(p) = p else {
        return Err(CliError::Config("horizon: required when k = 0".into()));
    };
    let base = p.convergence_horizon;
    let stagger = s.schedule.stagger.map_or(0.0, |st| st.max_delay);
    Ok(match (s.controller, s.schedule.mode) {
        (ControllerKind::Proportional, _) => base,
        (ControllerKind::Reframing, ReframeMode::Fixed { t1 }) => t1 + stagger + base,
        (ControllerKind::Reframing, ReframeMode::Auto { window, .. }) => {
            let w = window.unwrap_or_else(|| default_window(s.params.k, s.topology.max_in_degree()));
            2.0 * base + w + stagger
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulated {
    pub terminal_omega: Vec<f64>,
    pub terminal_beta: Vec<f64>,
    /// Last sample before the controller offsets changed.
    pub pre_reframe_omega: Vec<f64>,
    pub pre_reframe_beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Gaps {
    pub terminal_omega_vs_predicted: Option<f64>,
    pub pre_reframe_beta_vs_predicted: Option<f64>,
    pub terminal_beta_vs_offsets: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteSummary {
    pub settings: DiscreteSettings,
    /// Control period, quantization and capacity defaults are this
    /// tool's own choices, not measured from any hardware.
    pub note: &'static str,
    pub faults: Vec<FaultRecord>,
    pub aborted: bool,
}

/// A fault with a 1-based edge number, matching the trace columns.
#[derive(Debug, Clone, Serialize)]
pub struct FaultRecord {
    pub edge: usize,
    pub t: f64,
    pub direction: FaultDirection,
    pub occupancy: i64,
}

impl From<&Fault> for FaultRecord {
    fn from(f: &Fault) -> Self {
        FaultRecord { edge: f.edge + 1, t: f.t, direction: f.direction, occupancy: f.occupancy }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: SimMode,
    pub n: usize,
    pub m: usize,
    pub horizon: f64,
    pub sample_interval: f64,
    pub samples: usize,
    pub reframe_time: Option<f64>,
    pub final_q: Vec<f64>,
    pub predicted: Option<Predictions>,
    pub simulated: Simulated,
    pub gaps: Gaps,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: String,
    pub summary: RunSummary,
    pub trace: SimTrace,
    /// The config with command-line overrides applied; rerunning it
    /// reproduces the trace.
    pub config: ScenarioConfig,
}

impl RunOutput {
    /// A discrete run stopped on a buffer fault.
    pub fn failed(&self) -> bool {
        self.summary.discrete.as_ref().is_some_and(|d| d.aborted)
    }
}

pub fn cmd_run(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput, CliError> {
    let mut cfg = cfg.clone();
    apply_seed(&mut cfg, opts.seed);
    if opts.discrete {
        cfg.mode = SimMode::Discrete;
    }
    if opts.continue_on_fault {
        cfg.discrete.continue_on_fault = true;
    }
    let Prepared { scenario: s, mut warnings, predictions } = prepare(&cfg, opts.strict)?;
    if s.mode == SimMode::Continuous && s.params.k == 0.0 {
        return Err(CliError::Config("k: must be positive in continuous mode".into()));
    }
    if s.mode == SimMode::Discrete {
        // one measurement quantum moving a node by more than ~0.4 frames per
        // control period makes the floor-quantized loop limit-cycle
        let d = &s.discrete;
        let gain = s.params.k * s.topology.max_in_degree() as f64 * d.quantization * d.control_period;
        if gain > QUANTIZED_GAIN_LIMIT {
            let w = format!(
                "k * max in-degree * quantization * control period = {gain:.3} exceeds {QUANTIZED_GAIN_LIMIT}; the quantized loop may oscillate"
            );
            if opts.strict {
                return Err(CliError::Config(format!("strict mode: {w}")));
            }
            warnings.push(w);
        }
    }
    let horizon = match s.horizon {
        Some(h) => h,
        None => default_horizon(&s, predictions.as_ref())?,
    };
    let sample_interval = s.sample_interval.unwrap_or(horizon / 1000.0);
    let settings = RunSettings {
        horizon,
        sample_interval,
        integrator: s.integrator,
        controller: s.controller,
        schedule: s.schedule,
    };

    let (trace, discrete) = match s.mode {
        SimMode::Continuous => (run(&s.topology, &s.params, &s.theta0, &settings)?, None),
        SimMode::Discrete => {
            let out = run_discrete(&s.topology, &s.params, &s.theta0, &settings, s.discrete)?;
            let summary = DiscreteSummary {
                settings: s.discrete,
                note: "discrete-mode defaults (control period 1 cycle, quantization 1 frame, capacity 20) are own choices",
                faults: out.faults.iter().map(FaultRecord::from).collect(),
                aborted: out.aborted,
            };
            (out.trace, Some((summary, out.faults)))
        }
    };
    let csv = write_trace(&trace, discrete.as_ref().map(|d| d.1.as_slice()));
    let discrete = discrete.map(|d| d.0);

    let last = trace.last();
    let pre = trace
        .samples
        .iter()
        .rev()
        .find(|x| x.mode == TraceMode::PreReframe)
        .unwrap_or(last);
    let gaps = Gaps {
        terminal_omega_vs_predicted: predictions
            .as_ref()
            .map(|p| inf_gap(&last.omega, &DVector::from_column_slice(&p.omega_ss))),
        pre_reframe_beta_vs_predicted: predictions
            .as_ref()
            .map(|p| inf_gap(&pre.beta, &DVector::from_column_slice(&p.beta_ss_pre))),
        terminal_beta_vs_offsets: inf_gap(&last.beta, &trace.beta_off),
    };
    let summary = RunSummary {
        mode: s.mode,
        n: s.topology.n(),
        m: s.topology.m(),
        horizon,
        sample_interval,
        samples: trace.samples.len(),
        reframe_time: trace.reframe_time(),
        final_q: vec(&trace.final_q),
        predicted: predictions,
        simulated: Simulated {
            terminal_omega: vec(&last.omega),
            terminal_beta: vec(&last.beta),
            pre_reframe_omega: vec(&pre.omega),
            pre_reframe_beta: vec(&pre.beta),
        },
        gaps,
        discrete,
        warnings,
    };
    Ok(RunOutput { csv, summary, trace, config: cfg })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub m: usize,
    pub edges: Vec<(usize, usize)>,
    pub k: f64,
    pub z: Vec<f64>,
    /// Zero first, then decreasing real part.
    pub spectrum: Vec<ComplexValue>,
    pub slowest_rate: f64,
    /// `50 / |Re λ₂|`
    pub convergence_horizon: f64,
    /// One convergence horizon before and after a reframe.
    pub recommended_reframe_time: f64,
    pub recommended_horizon: f64,
    pub omega_ss: Vec<f64>,
    pub beta_ss_pre: Vec<f64>,
    pub beta_off: Vec<f64>,
    pub defective: bool,
    pub warnings: Vec<String>,
}

pub fn cmd_analyze(cfg: &ScenarioConfig, strict: bool, seed: Option<u64>) -> Result<AnalysisReport, CliError> {
    let mut cfg = cfg.clone();
    apply_seed(&mut cfg, seed);
    let s = cfg.resolve()?;
    let warnings = s
        .params
        .validate(&s.topology)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if strict && !warnings.is_empty() {
        return Err(CliError::Config(format!("strict mode: {}", warnings.join("; "))));
    }
    let (inc, params, clm, sd) = analyze(&s.topology, &s.params, &s.theta0)?;
    let horizon = sd.convergence_horizon();
    Ok(AnalysisReport {
        n: s.topology.n(),
        m: s.topology.m(),
        edges: s.topology.to_one_based(),
        k: params.k,
        z: vec(&sd.z),
        spectrum: sd.spectrum().iter().map(|c| ComplexValue { re: c.re, im: c.im }).collect(),
        slowest_rate: sd.slowest_rate(),
        convergence_horizon: horizon,
        recommended_reframe_time: horizon,
        recommended_horizon: 2.0 * horizon,
        omega_ss: vec(&predict_omega_ss(&sd, &params)),
        beta_ss_pre: vec(&predict_beta_ss(&sd, &inc, &clm, &params, &params.q)),
        beta_off: vec(params.beta_off.explicit()?),
        defective: reframe_core::spectral::is_defective(&clm.a),
        warnings,
    })
}

pub fn cmd_verify(settings: &BatterySettings) -> Result<BatteryReport, CliError> {
    if settings.n_min < 2 || settings.n_max < settings.n_min {
        return Err(CliError::Config(format!(
            "n_min/n_max: need 2 <= n_min <= n_max, got {}..{}",
            settings.n_min, settings.n_max
        )));
    }
    if !(settings.k_min > 0.0 && settings.k_max >= settings.k_min) {
        return Err(CliError::Config("k_min/k_max: need 0 < k_min <= k_max".into()));
    }
    if !(settings.omega_min > 0.0 && settings.omega_max >= settings.omega_min) {
        return Err(CliError::Config("omega_min/omega_max: need 0 < omega_min <= omega_max".into()));
    }
    Ok(run_battery(settings)?)
}

/// Human-readable battery summary, one line per check.
pub fn battery_table(report: &BatteryReport) -> String {
    let mut out = format!(
        "{:<20} {:>5} {:>5} {:>5} {:>12} {:>9}\n",
        "check", "pass", "fail", "n/a", "worst", "tol"
    );
    for s in &report.summary {
        let name = serde_json::to_value(s.check).expect("check serializes");
        out.push_str(&format!(
            "{:<20} {:>5} {:>5} {:>5} {:>12.3e} {:>9.1e}\n",
            name.as_str().unwrap_or("?"),
            s.pass,
            s.fail,
            s.not_applicable,
            s.worst_residual,
            s.tolerance
        ));
    }
    if let Some(nc) = &report.negative_control {
        out.push_str(&format!(
            "negative control: {}/{} infeasible scenarios did not center (need {:.0}%) {}\n",
            nc.not_centered,
            nc.scenarios,
            100.0 * nc.required_rate,
            if nc.pass { "ok" } else { "FAILED" }
        ));
    }
    out.push_str(&format!("defective matrix: {}\n", report.defective_matrix));
    out.push_str(if report.all_pass { "all checks passed\n" } else { "CHECKS FAILED\n" });
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyFragment {
    pub topology: TopologySpec,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

/// A generated topology as an explicit-edge config fragment.
pub fn cmd_gen_topology(kind: TopologyKind, n: usize, seed: u64, extra: f64) -> Result<TopologyFragment, CliError> {
    let topo = generate_topology(kind, n, seed, extra).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(TopologyFragment {
        topology: TopologySpec::Explicit,
        n: topo.n(),
        edges: topo.to_one_based().into_iter().map(|(a, b)| [a, b]).collect(),
    })
}
