//! Continuous-time closed-loop dynamics
//!
//! ```text
//! θ' = Aθ + ω_u + q + r
//! β  = Bᵀθ + λ
//! c  = Aθ + q + r
//! ```
//!
//! The system is linear time-invariant between reframe events, so the
//! default integrator advances it exactly with the exponential of the
//! augmented matrix `[[A, v], [0, 0]]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{
    auto_reframe_trigger, default_epsilon, default_window, proportional_correction,
    ControllerKind, NodeState, NodeView, ReframeMode, ReframeSchedule,
};
use crate::error::{Error, Result};
use crate::graph::{build_incidence, IncidenceSet, Topology};
use crate::spectral::{build_closed_loop, metzler_eigenvector, ClosedLoopMatrix};

/// Buffer offsets: explicit, or taken from the occupancies at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Offsets {
    FeasibleAtStart,
    Explicit(DVector<f64>),
}

impl Offsets {
    pub fn explicit(&self) -> Result<&DVector<f64>> {
        match self {
            Offsets::Explicit(v) => Ok(v),
            Offsets::FeasibleAtStart => Err(Error::OffsetsNotMaterialized),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Proportional gain, shared by every node.
    pub k: f64,
    /// Free-running oscillator frequencies, length `n`.
    pub omega_u: DVector<f64>,
    /// Link constants, length `m`.
    pub lambda: DVector<f64>,
    pub beta_off: Offsets,
    /// Controller frequency offsets, length `n`.
    pub q: DVector<f64>,
}

impl SystemParams {
    /// Feasible offsets, `q = 0`, and the same `λ` on every link.
    pub fn uniform(topology: &Topology, k: f64, omega_u: DVector<f64>, lambda: f64) -> Self {
        SystemParams {
            k,
            omega_u,
            lambda: DVector::from_element(topology.m(), lambda),
            beta_off: Offsets::FeasibleAtStart,
            q: DVector::zeros(topology.n()),
        }
    }

    /// Hard errors for unusable parameters; the returned strings are
    /// warnings for physically suspect ones.
    pub fn validate(&self, topology: &Topology) -> Result<Vec<String>> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::param("k", format!("gain must be positive, got {}", self.k)));
        }
        self.validate_allowing_zero_gain(topology)
    }

    /// As [`SystemParams::validate`] but accepts `k = 0` (controller
    /// disabled), which only the discrete mode can simulate.
    pub fn validate_allowing_zero_gain(&self, topology: &Topology) -> Result<Vec<String>> {
        let (n, m) = (topology.n(), topology.m());
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::param("k", format!("gain must be nonnegative, got {}", self.k)));
        }
        Error::check_len("omega_u", self.omega_u.len(), n)?;
        Error::check_len("lambda", self.lambda.len(), m)?;
        Error::check_len("q", self.q.len(), n)?;
        if let Some(i) = self.omega_u.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::param(
                "omega_u",
                format!("node {} has non-positive frequency {}", i + 1, self.omega_u[i]),
            ));
        }
        let mut warnings = Vec::new();
        if let Offsets::Explicit(off) = &self.beta_off {
            Error::check_len("beta_off", off.len(), m)?;
            for (e, &v) in off.iter().enumerate() {
                if v < 0.0 {
                    warnings.push(format!("beta_off for edge {} is negative ({v})", e + 1));
                }
            }
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    PreReframe,
    PostReframe,
    /// Only some nodes have reframed (staggered schedules).
    Partial,
}

impl TraceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceMode::PreReframe => "pre",
            TraceMode::PostReframe => "post",
            TraceMode::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub theta: DVector<f64>,
    pub mode: TraceMode,
}

/// Output of [`init_state`]: the state at `t = 0`, parameters with offsets
/// made explicit, and validation warnings.
#[derive(Debug, Clone)]
pub struct Initialized {
    pub state: SimState,
    pub params: SystemParams,
    pub warnings: Vec<String>,
}

/// Materializes feasible offsets as `β_off = Bᵀθ₀ + λ`, which makes
/// `r = −Aθ₀`.
pub fn init_state(
    topology: &Topology,
    inc: &IncidenceSet,
    params: &SystemParams,
    theta0: &DVector<f64>,
) -> Result<Initialized> {
    let warnings = params.validate_allowing_zero_gain(topology)?;
    Error::check_len("theta0", theta0.len(), topology.n())?;
    let mut params = params.clone();
    if params.beta_off == Offsets::FeasibleAtStart {
        params.beta_off = Offsets::Explicit(inc.incidence.transpose() * theta0 + &params.lambda);
    }
    Ok(Initialized {
        state: SimState {
            t: 0.0,
            theta: theta0.clone(),
            mode: TraceMode::PreReframe,
        },
        params,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Exact,
    Rk4,
    Euler,
}

/// `1 / (k · max in-degree)`, read off the diagonal of `A`.
pub fn explicit_step_bound(clm: &ClosedLoopMatrix) -> f64 {
    let worst = clm.a.diagonal().iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if worst > 0.0 {
        1.0 / worst
    } else {
        f64::INFINITY
    }
}

/// Advances `θ` over intervals of a fixed affine vector field `Aθ + v`.
#[derive(Debug, Clone)]
pub struct Propagator {
    a: DMatrix<f64>,
    v: DVector<f64>,
    method: Method,
    max_step: f64,
    cached: Option<(f64, DMatrix<f64>, DVector<f64>)>,
}

impl Propagator {
    pub fn new(clm: &ClosedLoopMatrix, q: &DVector<f64>, omega_u: &DVector<f64>, method: Method, max_step: f64) -> Self {
        Propagator {
            a: clm.a.clone(),
            v: omega_u + q + &clm.r,
            method,
            max_step,
            cached: None,
        }
    }

    pub fn set_drive(&mut self, clm: &ClosedLoopMatrix, q: &DVector<f64>, omega_u: &DVector<f64>) {
        self.v = omega_u + q + &clm.r;
        self.cached = None;
    }

    /// `(e^{A dt}, ∫₀^dt e^{As} ds · v)` from one exponential of the
    /// augmented matrix.
    fn flow(&mut self, dt: f64) -> (&DMatrix<f64>, &DVector<f64>) {
        let fresh = !matches!(&self.cached, Some((h, _, _)) if *h == dt);
        if fresh {
            let n = self.a.nrows();
            let mut aug = DMatrix::zeros(n + 1, n + 1);
            aug.view_mut((0, 0), (n, n)).copy_from(&self.a);
            aug.view_mut((0, n), (n, 1)).copy_from(&self.v);
            let e = (aug * dt).exp();
            let phi = e.view((0, 0), (n, n)).into_owned();
            let forced = e.view((0, n), (n, 1)).column(0).into_owned();
            self.cached = Some((dt, phi, forced));
        }
        let (_, phi, forced) = self.cached.as_ref().expect("flow cached above");
        (phi, forced)
    }

    fn field(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a * theta + &self.v
    }

    pub fn advance(&mut self, theta: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        if dt == 0.0 {
            return Ok(theta.clone());
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        match self.method {
            Method::Exact => {
                let (phi, forced) = self.flow(dt);
                Ok(phi * theta + forced)
            }
            Method::Rk4 | Method::Euler => {
                let steps = (dt / self.max_step).ceil().max(1.0) as usize;
                let h = dt / steps as f64;
                let mut th = theta.clone();
                for _ in 0..steps {
                    th = match self.method {
                        Method::Euler => {
                            let k1 = self.field(&th);
                            th + k1 * h
                        }
                        _ => {
                            let k1 = self.field(&th);
                            let k2 = self.field(&(&th + &k1 * (h / 2.0)));
                            let k3 = self.field(&(&th + &k2 * (h / 2.0)));
                            let k4 = self.field(&(&th + &k3 * h));
                            th + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
                        }
                    };
                }
                Ok(th)
            }
        }
    }
}

/// One step of length `dt`. Explicit methods take a single step and reject
/// `dt` above [`explicit_step_bound`].
pub fn step(
    state: &SimState,
    params: &SystemParams,
    clm: &ClosedLoopMatrix,
    dt: f64,
    method: Method,
) -> Result<SimState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if method != Method::Exact {
        let bound = explicit_step_bound(clm);
        if dt > bound {
            return Err(Error::StepTooLarge { dt, bound });
        }
    }
    let mut prop = Propagator::new(clm, &params.q, &params.omega_u, method, dt);
    Ok(SimState {
        t: state.t + dt,
        theta: prop.advance(&state.theta, dt)?,
        mode: state.mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub omega: DVector<f64>,
    pub c: DVector<f64>,
    pub beta: DVector<f64>,
}

/// `β = Bᵀθ + λ`, `c = Aθ + q + r`, `ω = ω_u + c`.
pub fn observe(
    state: &SimState,
    params: &SystemParams,
    clm: &ClosedLoopMatrix,
    inc: &IncidenceSet,
) -> Observation {
    let beta = inc.incidence.transpose() * &state.theta + &params.lambda;
    let c = &clm.a * &state.theta + &params.q + &clm.r;
    let omega = &params.omega_u + &c;
    Observation { omega, c, beta }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSettings {
    pub method: Method,
    /// Largest substep for `rk4`/`euler`. Defaults to a tenth of the
    /// stability bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            method: Method::Exact,
            max_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub horizon: f64,
    pub sample_interval: f64,
    pub integrator: IntegratorSettings,
    pub controller: ControllerKind,
    pub schedule: ReframeSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub mode: TraceMode,
    pub theta: DVector<f64>,
    pub omega: DVector<f64>,
    pub c: DVector<f64>,
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReframeEvent {
    pub node: usize,
    pub t: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub samples: Vec<TraceSample>,
    /// Offsets actually used (materialized if feasible-at-start).
    pub beta_off: DVector<f64>,
    pub reframes: Vec<ReframeEvent>,
    /// Controller offsets at the end of the run.
    pub final_q: DVector<f64>,
}

impl SimTrace {
    /// Time of the first reframe event, if any.
    pub fn reframe_time(&self) -> Option<f64> {
        self.reframes.iter().map(|e| e.t).reduce(f64::min)
    }

    pub fn last(&self) -> &TraceSample {
        self.samples.last().expect("a trace always holds the t = 0 sample")
    }
}

fn trace_mode(nodes: &[NodeState]) -> TraceMode {
    use crate::controller::NodeMode;
    let post = nodes.iter().filter(|s| s.mode == NodeMode::PostReframe).count();
    if post == 0 {
        TraceMode::PreReframe
    } else if post == nodes.len() {
        TraceMode::PostReframe
    } else {
        TraceMode::Partial
    }
}

/// Simulates the closed loop from `θ₀` and samples it on a uniform grid
/// (plus the horizon and every reframe instant).
///
/// A reframe instant is sampled twice, before and after the controller
/// offsets change, so the jump in `c` shows up in the trace.
pub fn run(
    topology: &Topology,
    params: &SystemParams,
    theta0: &DVector<f64>,
    settings: &RunSettings,
) -> Result<SimTrace> {
    if let Some(node) = topology.unreachable_node() {
        return Err(Error::NotStronglyConnected { node: node + 1 });
    }
    if !(settings.horizon >= 0.0 && settings.horizon.is_finite()) {
        return Err(Error::param("horizon", format!("must be nonnegative, got {}", settings.horizon)));
    }
    if !(settings.sample_interval > 0.0) {
        return Err(Error::param(
            "sample_interval",
            format!("must be positive, got {}", settings.sample_interval),
        ));
    }
    let inc = build_incidence(topology);
    let init = init_state(topology, &inc, params, theta0)?;
    let mut params = init.params;
    let mut state = init.state;
    let clm = build_closed_loop(&inc, &params)?;
    let beta_off = params.beta_off.explicit()?.clone();

    let bound = explicit_step_bound(&clm);
    let max_step = settings.integrator.max_step.unwrap_or(0.1 * bound);
    if settings.integrator.method != Method::Exact && max_step > bound {
        return Err(Error::StepTooLarge { dt: max_step, bound });
    }
    let mut prop = Propagator::new(&clm, &params.q, &params.omega_u, settings.integrator.method, max_step);

    let n = topology.n();
    let mut nodes: Vec<NodeState> = (0..n).map(|i| NodeState::new(i, params.q[i])).collect();
    let reframing = settings.controller == ControllerKind::Reframing;
    let delays = settings.schedule.stagger_delays(n);

    // (time, node) pairs still to fire, in firing order
    let mut pending: Vec<(f64, usize)> = Vec::new();
    let mut auto = None;
    if reframing {
        match settings.schedule.mode {
            ReframeMode::Fixed { t1 } => {
                if !(t1 >= 0.0) {
                    return Err(Error::param("reframe.t1", format!("must be nonnegative, got {t1}")));
                }
                pending = delays.iter().enumerate().map(|(i, d)| (t1 + d, i)).collect();
            }
            ReframeMode::Auto { epsilon, window } => {
                let eps = epsilon.unwrap_or_else(|| default_epsilon(&params.omega_u));
                let win = window.unwrap_or_else(|| default_window(params.k, topology.max_in_degree()));
                auto = Some((eps, win));
            }
        }
        pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let mut samples = Vec::new();
    let mut history: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut reframes = Vec::new();

    let record = |state: &SimState, params: &SystemParams, samples: &mut Vec<TraceSample>| {
        let obs = observe(state, params, &clm, &inc);
        samples.push(TraceSample {
            t: state.t,
            mode: state.mode,
            theta: state.theta.clone(),
            omega: obs.omega,
            c: obs.c,
            beta: obs.beta,
        });
    };

    let apply_reframes = |firing: &[usize],
                              state: &mut SimState,
                              params: &mut SystemParams,
                              nodes: &mut [NodeState],
                              reframes: &mut Vec<ReframeEvent>|
     -> Result<()> {
        let beta = inc.incidence.transpose() * &state.theta + &params.lambda;
        // every firing node measures before any offset changes
        let payloads: Vec<(usize, f64)> = firing
            .iter()
            .map(|&i| {
                let view = NodeView::gather(topology, i, &beta, &beta_off, nodes[i].q);
                (i, proportional_correction(&view, params.k))
            })
            .collect();
        for (i, c) in payloads {
            nodes[i].reframe(c)?;
            params.q[i] = nodes[i].q;
            reframes.push(ReframeEvent { node: i, t: state.t, q: c });
        }
        state.mode = trace_mode(nodes);
        Ok(())
    };

    record(&state, &params, &mut samples);
    if auto.is_some() {
        history.push((0.0, samples[0].c.clone()));
    }

    let dt = settings.sample_interval;
    let steps = (settings.horizon / dt).ceil() as usize;
    for step_idx in 1..=steps {
        let t_next = (step_idx as f64 * dt).min(settings.horizon);

        while let Some(&(t_ev, _)) = pending.first() {
            if t_ev > t_next {
                break;
            }
            if t_ev > state.t {
                state.theta = prop.advance(&state.theta, t_ev - state.t)?;
                state.t = t_ev;
            }
            let firing: Vec<usize> = pending
                .iter()
                .take_while(|(t, _)| *t == t_ev)
                .map(|&(_, i)| i)
                .collect();
            pending.drain(..firing.len());
            if samples.last().map(|s| s.t) != Some(state.t) {
                record(&state, &params, &mut samples);
            }
            apply_reframes(&firing, &mut state, &mut params, &mut nodes, &mut reframes)?;
            prop.set_drive(&clm, &params.q, &params.omega_u);
            record(&state, &params, &mut samples);
        }

        if t_next > state.t {
            state.theta = prop.advance(&state.theta, t_next - state.t)?;
            state.t = t_next;
            record(&state, &params, &mut samples);
        }

        if let Some((eps, win)) = auto {
            let latest = samples.last().expect("recorded above");
            history.push((latest.t, latest.c.clone()));
            let cutoff = latest.t - win;
            let keep_from = history.iter().rposition(|(t, _)| *t <= cutoff).unwrap_or(0);
            history.drain(..keep_from);
            if auto_reframe_trigger(&history, win, eps) {
                auto = None;
                history.clear();
                let t1 = state.t;
                pending = delays.iter().enumerate().map(|(i, d)| (t1 + d, i)).collect();
                pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let firing: Vec<usize> = pending
                    .iter()
                    .take_while(|(t, _)| *t == t1)
                    .map(|&(_, i)| i)
                    .collect();
                if !firing.is_empty() {
                    pending.drain(..firing.len());
                    apply_reframes(&firing, &mut state, &mut params, &mut nodes, &mut reframes)?;
                    prop.set_drive(&clm, &params.q, &params.omega_u);
                    record(&state, &params, &mut samples);
                }
            }
        }
    }

    Ok(SimTrace {
        samples,
        beta_off,
        reframes,
        final_q: params.q,
    })
}

/// Builds the closed loop and its spectral data for a scenario with
/// materialized offsets. Shared by the runners and the checks.
pub fn analyze(
    topology: &Topology,
    params: &SystemParams,
    theta0: &DVector<f64>,
) -> Result<(IncidenceSet, SystemParams, ClosedLoopMatrix, crate::spectral::SpectralData)> {
    let inc = build_incidence(topology);
    let init = init_state(topology, &inc, params, theta0)?;
    let clm = build_closed_loop(&inc, &init.params)?;
    let sd = metzler_eigenvector(&clm)?;
    Ok((inc, init.params, clm, sd))
}
