//! Frame-accurate discrete mode.
//!
//! Clock phases still evolve continuously, but every link carries integer
//! frame counters: the source writes a frame each time `θ_src + λ_e` crosses
//! an integer, and the destination reads one each time `θ_dst` does. Nodes
//! measure the integer occupancy `write − read`, quantized to a multiple of
//! the quantization unit, and re-evaluate their correction only at their own
//! control-period boundaries (counted in local cycles).
//!
//! Before reframing the buffers are virtual: the counters may go anywhere.
//! After reframing they are physical and must stay within `[0, capacity]`;
//! leaving that range is a fault.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{
    auto_reframe_trigger, default_window, proportional_correction, ControllerKind, NodeMode,
    NodeState, NodeView, ReframeMode,
};
use crate::dynamics::{init_state, RunSettings, SimTrace, SystemParams, ReframeEvent, TraceMode, TraceSample};
use crate::error::{Error, Result};
use crate::graph::{build_incidence, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSettings {
    /// Local cycles between controller updates (at least 1).
    #[serde(default = "default_control_period")]
    pub control_period: f64,
    /// Measurement granularity in frames.
    #[serde(default = "default_quantization")]
    pub quantization: f64,
    /// Physical buffer size in frames.
    #[serde(default = "default_capacity")]
    pub capacity: i64,
    /// Integration step; defaults to `1 / (20 · max ω_u)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub continue_on_fault: bool,
    /// Span over which a node averages its own correction to form the
    /// reframe payload. Defaults to the auto-trigger window; `0` freezes the
    /// single correction in force at the reframe instant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_window: Option<f64>,
}

fn default_control_period() -> f64 {
    1.0
}

fn default_quantization() -> f64 {
    1.0
}

fn default_capacity() -> i64 {
    20
}

impl Default for DiscreteSettings {
    fn default() -> Self {
        DiscreteSettings {
            control_period: default_control_period(),
            quantization: default_quantization(),
            capacity: default_capacity(),
            dt: None,
            continue_on_fault: false,
            payload_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticBuffer {
    pub edge: usize,
    pub write_count: i64,
    pub read_count: i64,
    pub capacity: i64,
    /// Counters only (pre-reframe); bounds are not enforced.
    pub virtual_mode: bool,
    /// Total frames the source has put on this link since `t = 0`.
    pub frames_sent: i64,
    initial_write: i64,
}

impl ElasticBuffer {
    pub fn occupancy(&self) -> i64 {
        self.write_count - self.read_count
    }

    fn violation(&self) -> Option<FaultDirection> {
        if self.virtual_mode {
            return None;
        }
        let occ = self.occupancy();
        if occ < 0 {
            Some(FaultDirection::Underflow)
        } else if occ > self.capacity {
            Some(FaultDirection::Overflow)
        } else {
            None
        }
    }

    /// Frame conservation: every frame counted as written was sent by the
    /// source on this link.
    pub fn conserves_frames(&self) -> bool {
        self.write_count == self.initial_write + self.frames_sent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultDirection {
    Overflow,
    Underflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    /// 0-based edge index.
    pub edge: usize,
    pub t: f64,
    pub direction: FaultDirection,
    pub occupancy: i64,
}

#[derive(Debug, Clone)]
pub struct DiscreteOutcome {
    /// `beta` columns hold integer occupancies.
    pub trace: SimTrace,
    /// First fault per edge, in detection order.
    pub faults: Vec<Fault>,
    /// The run stopped at the first fault.
    pub aborted: bool,
    pub buffers: Vec<ElasticBuffer>,
}

/// Faults recorded by a run; empty iff physical-mode bounds always held.
pub fn fault_report(outcome: &DiscreteOutcome) -> &[Fault] {
    &outcome.faults
}

/// Global state of a discrete run. Node laws read only their own
/// [`NodeView`].
#[derive(Debug, Clone)]
pub struct DiscreteSim {
    topology: Topology,
    params: SystemParams,
    beta_off: DVector<f64>,
    settings: DiscreteSettings,
    pub t: f64,
    pub theta: DVector<f64>,
    pub correction: DVector<f64>,
    pub nodes: Vec<NodeState>,
    pub buffers: Vec<ElasticBuffer>,
    reads: Vec<i64>,
    period_index: Vec<i64>,
    faulted: Vec<bool>,
    pub faults: Vec<Fault>,
    /// `∫ c dt` per node, with a trailing history for payload averaging.
    correction_integral: DVector<f64>,
    integral_history: VecDeque<(f64, DVector<f64>)>,
    payload_window: f64,
}

fn floor_i64(x: f64) -> i64 {
    x.floor() as i64
}

impl DiscreteSim {
    pub fn new(
        topology: &Topology,
        params: &SystemParams,
        theta0: &DVector<f64>,
        settings: DiscreteSettings,
    ) -> Result<Self> {
        if !(settings.control_period >= 1.0) {
            return Err(Error::param("discrete.control_period", "must be at least 1 cycle"));
        }
        if !(settings.quantization > 0.0) {
            return Err(Error::param("discrete.quantization", "must be positive"));
        }
        if settings.capacity < 1 {
            return Err(Error::param("discrete.capacity", "must be a positive number of frames"));
        }
        let inc = build_incidence(topology);
        let init = init_state(topology, &inc, params, theta0)?;
        let beta_off = init.params.beta_off.explicit()?.clone();
        let theta = theta0.clone();
        let buffers = topology
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let write = floor_i64(theta[edge.src] + init.params.lambda[e]);
                ElasticBuffer {
                    edge: e,
                    write_count: write,
                    read_count: floor_i64(theta[edge.dst]),
                    capacity: settings.capacity,
                    virtual_mode: true,
                    frames_sent: 0,
                    initial_write: write,
                }
            })
            .collect();
        let n = topology.n();
        let mut sim = DiscreteSim {
            topology: topology.clone(),
            nodes: (0..n).map(|i| NodeState::new(i, init.params.q[i])).collect(),
            params: init.params,
            beta_off,
            settings,
            t: 0.0,
            reads: theta.iter().map(|&x| floor_i64(x)).collect(),
            period_index: theta
                .iter()
                .map(|&x| floor_i64(x / settings.control_period))
                .collect(),
            theta,
            correction: DVector::zeros(n),
            buffers,
            faulted: vec![false; topology.m()],
            faults: Vec::new(),
            correction_integral: DVector::zeros(n),
            integral_history: VecDeque::from([(0.0, DVector::zeros(n))]),
            payload_window: settings.payload_window.unwrap_or(0.0),
        };
        for i in 0..n {
            sim.correction[i] = sim.node_correction(i);
        }
        Ok(sim)
    }

    /// Quantized occupancies as a node would measure them.
    pub fn measured(&self) -> DVector<f64> {
        let u = self.settings.quantization;
        DVector::from_iterator(
            self.buffers.len(),
            self.buffers
                .iter()
                .map(|b| (b.occupancy() as f64 / u).floor() * u),
        )
    }

    pub fn occupancies(&self) -> DVector<f64> {
        DVector::from_iterator(self.buffers.len(), self.buffers.iter().map(|b| b.occupancy() as f64))
    }

    fn node_view(&self, node: usize, measured: &DVector<f64>) -> NodeView {
        NodeView::gather(&self.topology, node, measured, &self.beta_off, self.nodes[node].q)
    }

    fn node_correction(&self, node: usize) -> f64 {
        let measured = self.measured();
        proportional_correction(&self.node_view(node, &measured), self.params.k)
    }

    pub fn omega(&self) -> DVector<f64> {
        &self.params.omega_u + &self.correction
    }

    /// Advances phases by `ω dt`, moves frames, checks bounds, then lets
    /// every node whose local cycle count crossed a control-period boundary
    /// re-evaluate its correction.
    pub fn discrete_step(&mut self, dt: f64) -> std::result::Result<(), Fault> {
        let omega = self.omega();
        self.theta += omega * dt;
        self.correction_integral += &self.correction * dt;
        self.t += dt;
        self.record_integral();

        for (i, read) in self.reads.iter_mut().enumerate() {
            *read = floor_i64(self.theta[i]);
        }
        let mut first_fault = None;
        for (e, edge) in self.topology.edges().iter().enumerate() {
            let buf = &mut self.buffers[e];
            let target = floor_i64(self.theta[edge.src] + self.params.lambda[e]);
            let sent = target - buf.write_count;
            buf.frames_sent += sent;
            buf.write_count += sent;
            buf.read_count = self.reads[edge.dst];
            debug_assert!(buf.conserves_frames());
            if self.faulted[e] {
                continue;
            }
            if let Some(direction) = buf.violation() {
                let fault = Fault {
                    edge: e,
                    t: self.t,
                    direction,
                    occupancy: buf.occupancy(),
                };
                self.faulted[e] = true;
                self.faults.push(fault);
                first_fault.get_or_insert(fault);
            }
        }

        let measured = self.measured();
        for i in 0..self.nodes.len() {
            let p = floor_i64(self.theta[i] / self.settings.control_period);
            if p != self.period_index[i] {
                self.period_index[i] = p;
                self.correction[i] =
                    proportional_correction(&self.node_view(i, &measured), self.params.k);
            }
        }
        match first_fault {
            Some(f) if !self.settings.continue_on_fault => Err(f),
            _ => Ok(()),
        }
    }

    fn record_integral(&mut self) {
        let cutoff = self.t - self.payload_window;
        // keep one record at or before the cutoff so the window is covered
        while self.integral_history.len() > 1 && self.integral_history[1].0 <= cutoff {
            self.integral_history.pop_front();
        }
        if self.payload_window > 0.0 {
            self.integral_history.push_back((self.t, self.correction_integral.clone()));
        }
    }

    /// Mean of node `i`'s own correction over the trailing payload window,
    /// or `None` when there is no history to average.
    fn averaged_correction(&self, i: usize) -> Option<f64> {
        let (t0, i0) = self.integral_history.front()?;
        let span = self.t - t0;
        (self.payload_window > 0.0 && span > 0.0).then(|| (self.correction_integral[i] - i0[i]) / span)
    }

    /// Reframes `nodes`, then switches every buffer to physical mode once
    /// all nodes are done. A node's payload is its own correction averaged
    /// over the payload window, which undoes the dither of quantized
    /// measurements; with no window it is the current correction.
    pub fn reframe(&mut self, nodes: &[usize]) -> Result<Vec<ReframeEvent>> {
        let measured = self.measured();
        let payloads: Vec<(usize, f64)> = nodes
            .iter()
            .map(|&i| {
                let c = self
                    .averaged_correction(i)
                    .unwrap_or_else(|| proportional_correction(&self.node_view(i, &measured), self.params.k));
                (i, c)
            })
            .collect();
        let mut events = Vec::new();
        for (i, c) in payloads {
            self.nodes[i].reframe(c)?;
            self.params.q[i] = c;
            events.push(ReframeEvent { node: i, t: self.t, q: c });
        }
        for &i in nodes {
            self.correction[i] = proportional_correction(&self.node_view(i, &measured), self.params.k);
        }
        if self.nodes.iter().all(|s| s.mode == NodeMode::PostReframe) {
            for b in &mut self.buffers {
                b.virtual_mode = false;
            }
        }
        Ok(events)
    }

    /// Records physical-mode violations present right now (used at the
    /// instant buffers become physical).
    fn check_bounds(&mut self) -> Option<Fault> {
        let mut first = None;
        for (e, buf) in self.buffers.iter().enumerate() {
            if self.faulted[e] {
                continue;
            }
            if let Some(direction) = buf.violation() {
                let fault = Fault { edge: e, t: self.t, direction, occupancy: buf.occupancy() };
                self.faulted[e] = true;
                self.faults.push(fault);
                first.get_or_insert(fault);
            }
        }
        first
    }

    fn mode(&self) -> TraceMode {
        let post = self.nodes.iter().filter(|s| s.mode == NodeMode::PostReframe).count();
        match post {
            0 => TraceMode::PreReframe,
            p if p == self.nodes.len() => TraceMode::PostReframe,
            _ => TraceMode::Partial,
        }
    }

    fn sample(&self) -> TraceSample {
        TraceSample {
            t: self.t,
            mode: self.mode(),
            theta: self.theta.clone(),
            omega: self.omega(),
            c: self.correction.clone(),
            beta: self.occupancies(),
        }
    }
}

/// Default auto-trigger threshold in discrete mode: one measurement quantum
/// of correction, `k · max in-degree · quantization`. The `1e-9` continuous
/// default can never fire on dithering integer measurements.
pub fn default_discrete_epsilon(k: f64, max_in_degree: usize, quantization: f64) -> f64 {
    k * max_in_degree.max(1) as f64 * quantization
}

/// Runs the discrete model on the same sample grid and schedule semantics as
/// [`crate::dynamics::run`].
pub fn run_discrete(
    topology: &Topology,
    params: &SystemParams,
    theta0: &DVector<f64>,
    settings: &RunSettings,
    discrete: DiscreteSettings,
) -> Result<DiscreteOutcome> {
    if let Some(node) = topology.unreachable_node() {
        return Err(Error::NotStronglyConnected { node: node + 1 });
    }
    if !(settings.sample_interval > 0.0) {
        return Err(Error::param("sample_interval", "must be positive"));
    }
    if discrete.payload_window.is_some_and(|w| !(w >= 0.0)) {
        return Err(Error::param("discrete.payload_window", "must be >= 0"));
    }
    let mut sim = DiscreteSim::new(topology, params, theta0, discrete)?;
    let max_omega = sim.params.omega_u.amax();
    let dt_max = discrete.dt.unwrap_or(1.0 / (20.0 * max_omega));
    if !(dt_max > 0.0 && dt_max <= 1.0 / (4.0 * max_omega)) {
        return Err(Error::param(
            "discrete.dt",
            format!("must be in (0, 1/(4·max ω_u)] = (0, {}]", 1.0 / (4.0 * max_omega)),
        ));
    }

    let n = topology.n();
    let delays = settings.schedule.stagger_delays(n);
    let reframing = settings.controller == ControllerKind::Reframing;
    let mut pending: Vec<(f64, usize)> = Vec::new();
    let mut auto = None;
    if reframing {
        match settings.schedule.mode {
            ReframeMode::Fixed { t1 } => {
                pending = delays.iter().enumerate().map(|(i, d)| (t1 + d, i)).collect();
            }
            ReframeMode::Auto { epsilon, window } => {
                let eps = epsilon.unwrap_or_else(|| {
                    default_discrete_epsilon(sim.params.k, topology.max_in_degree(), discrete.quantization)
                });
                let win = window.unwrap_or_else(|| default_window(sim.params.k, topology.max_in_degree()));
                auto = Some((eps, win));
            }
        }
        if discrete.payload_window.is_none() {
            sim.payload_window = match auto {
                Some((_, win)) => win,
                None => default_window(sim.params.k, topology.max_in_degree()),
            };
        }
        pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let mut samples = vec![sim.sample()];
    let mut history = vec![(0.0, sim.correction.clone())];
    let mut reframes = Vec::new();
    let mut aborted = false;

    let advance = |sim: &mut DiscreteSim, to: f64| -> bool {
        let span = to - sim.t;
        if span <= 0.0 {
            return true;
        }
        let steps = (span / dt_max).ceil() as usize;
        let h = span / steps as f64;
        for s in 0..steps {
            let res = sim.discrete_step(h);
            if s + 1 == steps {
                sim.t = to;
            }
            if res.is_err() {
                return false;
            }
        }
        true
    };

    let interval = settings.sample_interval;
    let steps = (settings.horizon / interval).ceil() as usize;
    'outer: for step_idx in 1..=steps {
        let t_next = (step_idx as f64 * interval).min(settings.horizon);
        while let Some(&(t_ev, _)) = pending.first() {
            if t_ev > t_next {
                break;
            }
            if !advance(&mut sim, t_ev) {
                aborted = true;
                break 'outer;
            }
            let firing: Vec<usize> = pending.iter().take_while(|(t, _)| *t == t_ev).map(|&(_, i)| i).collect();
            pending.drain(..firing.len());
            if samples.last().map(|s: &TraceSample| s.t) != Some(sim.t) {
                samples.push(sim.sample());
            }
            reframes.extend(sim.reframe(&firing)?);
            samples.push(sim.sample());
            if sim.check_bounds().is_some() && !discrete.continue_on_fault {
                aborted = true;
                break 'outer;
            }
        }
        if !advance(&mut sim, t_next) {
            samples.push(sim.sample());
            aborted = true;
            break;
        }
        if samples.last().map(|s| s.t) != Some(sim.t) {
            samples.push(sim.sample());
        }

        if let Some((eps, win)) = auto {
            history.push((sim.t, sim.correction.clone()));
            let cutoff = sim.t - win;
            let keep_from = history.iter().rposition(|(t, _)| *t <= cutoff).unwrap_or(0);
            history.drain(..keep_from);
            if auto_reframe_trigger(&history, win, eps) {
                auto = None;
                let t1 = sim.t;
                pending = delays.iter().enumerate().map(|(i, d)| (t1 + d, i)).collect();
                pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let firing: Vec<usize> = pending.iter().take_while(|(t, _)| *t == t1).map(|&(_, i)| i).collect();
                if !firing.is_empty() {
                    pending.drain(..firing.len());
                    reframes.extend(sim.reframe(&firing)?);
                    samples.push(sim.sample());
                    if sim.check_bounds().is_some() && !discrete.continue_on_fault {
                        aborted = true;
                        break;
                    }
                }
            }
        }
    }

    Ok(DiscreteOutcome {
        trace: SimTrace {
            samples,
            beta_off: sim.beta_off.clone(),
            reframes,
            final_q: sim.params.q.clone(),
        },
        faults: sim.faults.clone(),
        aborted,
        buffers: sim.buffers.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ReframeSchedule;
    use crate::dynamics::{IntegratorSettings, Offsets};

    fn e1(omega_u: [f64; 2], k: f64) -> (Topology, SystemParams) {
        let topo = Topology::from_one_based(2, &[(1, 2), (2, 1)]).unwrap();
        let params = SystemParams::uniform(&topo, k, DVector::from_vec(omega_u.to_vec()), 10.0);
        (topo, params)
    }

    fn settings(horizon: f64, t1: f64) -> RunSettings {
        RunSettings {
            horizon,
            sample_interval: 1.0,
            integrator: IntegratorSettings::default(),
            controller: ControllerKind::Reframing,
            schedule: ReframeSchedule::fixed(t1),
        }
    }

    #[test]
    fn identical_clocks_hold_offsets() {
        let (topo, params) = e1([1.0, 1.0], 0.1);
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &settings(300.0, 100.0), DiscreteSettings::default()).unwrap();
        for s in &out.trace.samples {
            assert_eq!(s.beta, DVector::from_element(2, 10.0));
        }
        assert!(out.faults.is_empty());
        assert!(!out.aborted);
    }

    #[test]
    fn virtual_buffers_never_fault() {
        let (topo, params) = e1([1.0, 1.05], 0.0001);
        let mut s = settings(400.0, 1e9);
        s.controller = ControllerKind::Proportional;
        let cfg = DiscreteSettings { capacity: 1, ..Default::default() };
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &s, cfg).unwrap();
        assert!(fault_report(&out).is_empty());
        assert!(out.buffers.iter().all(|b| b.virtual_mode));
        assert!(out.trace.last().beta.amax() > 11.0);
    }

    #[test]
    fn frame_conservation() {
        let (topo, params) = e1([1.0, 1.02], 0.1);
        let mut sim = DiscreteSim::new(&topo, &params, &DVector::from_vec(vec![0.3, 0.9]), DiscreteSettings::default()).unwrap();
        for _ in 0..5000 {
            sim.discrete_step(0.05).unwrap();
            for (e, b) in sim.buffers.iter().enumerate() {
                assert!(b.conserves_frames());
                let edge = topo.edges()[e];
                assert_eq!(b.write_count, (sim.theta[edge.src] + 10.0).floor() as i64);
                assert_eq!(b.read_count, sim.theta[edge.dst].floor() as i64);
            }
        }
    }

    #[test]
    fn drift_without_control_faults_each_edge_once() {
        let (topo, mut params) = e1([1.0, 1.02], 0.1);
        params.k = 0.0;
        params.lambda = DVector::from_element(2, 1.0);
        params.beta_off = Offsets::FeasibleAtStart;
        let cfg = DiscreteSettings { capacity: 1, continue_on_fault: true, ..Default::default() };
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &settings(150.0, 1.0), cfg).unwrap();
        let faults = fault_report(&out);
        assert_eq!(faults.len(), 2);
        let mut edges: Vec<usize> = faults.iter().map(|f| f.edge).collect();
        edges.sort();
        assert_eq!(edges, vec![0, 1]);
        for f in faults {
            assert!(f.t <= 100.0, "{f:?}");
            // edge 1→2 drains because node 2 reads faster
            let expected = if f.edge == 0 { FaultDirection::Underflow } else { FaultDirection::Overflow };
            assert_eq!(f.direction, expected);
        }
        assert!(!out.aborted);
    }

    #[test]
    fn fault_aborts_by_default() {
        let (topo, mut params) = e1([1.0, 1.02], 0.1);
        params.k = 0.0;
        params.lambda = DVector::from_element(2, 1.0);
        let cfg = DiscreteSettings { capacity: 1, ..Default::default() };
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &settings(150.0, 1.0), cfg).unwrap();
        assert!(out.aborted);
        assert_eq!(out.faults.len(), 1);
        assert!(out.trace.last().t < 150.0);
    }

    #[test]
    fn e1_discrete_recenters() {
        let (topo, params) = e1([1.0, 1.02], 0.1);
        let s = settings(500.0, 250.0);
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &s, DiscreteSettings::default()).unwrap();
        let cont = crate::dynamics::run(&topo, &params, &DVector::zeros(2), &s).unwrap();
        assert!(out.faults.is_empty());
        assert_eq!(out.trace.samples.len(), cont.samples.len());
        for (d, c) in out.trace.samples.iter().zip(&cont.samples) {
            assert_eq!(d.t, c.t);
            assert!((&d.beta - &c.beta).amax() <= 2.0, "t = {}", d.t);
        }
        // Counter samples read floor(β) or floor(β) + 1, so compare the
        // plateau average with the continuous limit.
        let pre: Vec<&TraceSample> = out.trace.samples.iter().filter(|s| s.t > 100.0 && s.t < 250.0).collect();
        let mean = pre.iter().fold(DVector::zeros(2), |acc, s| acc + &s.beta) / pre.len() as f64;
        assert!((mean[0] - 9.9).abs() <= 1.0 && (mean[1] - 10.1).abs() <= 1.0, "{mean:?}");
        let last = out.trace.last();
        assert!((last.beta.add_scalar(-10.0)).amax() <= 2.0);
    }

    #[test]
    fn rejects_bad_settings() {
        let (topo, params) = e1([1.0, 1.02], 0.1);
        let bad = DiscreteSettings { control_period: 0.5, ..Default::default() };
        assert!(DiscreteSim::new(&topo, &params, &DVector::zeros(2), bad).is_err());
        let bad = DiscreteSettings { dt: Some(0.5), ..Default::default() };
        assert!(run_discrete(&topo, &params, &DVector::zeros(2), &settings(10.0, 5.0), bad).is_err());
        let bad = DiscreteSettings { payload_window: Some(-1.0), ..Default::default() };
        assert!(run_discrete(&topo, &params, &DVector::zeros(2), &settings(10.0, 5.0), bad).is_err());
    }

    fn auto_run(payload_window: Option<f64>) -> DiscreteOutcome {
        let (topo, params) = e1([1.0, 1.02], 0.1);
        let mut s = settings(600.0, 0.0);
        s.schedule = ReframeSchedule::default();
        let cfg = DiscreteSettings { payload_window, ..Default::default() };
        run_discrete(&topo, &params, &DVector::zeros(2), &s, cfg).unwrap()
    }

    #[test]
    fn averaged_payload_tracks_continuous_difference() {
        let out = auto_run(None);
        assert_eq!(out.trace.reframes.len(), 2);
        let q = &out.trace.final_q;
        // continuous payload is (0.01, -0.01); floor bias shifts both alike
        assert!(((q[0] - q[1]) - 0.02).abs() < 0.005, "{q:?}");
        assert!(out.faults.is_empty());
    }

    #[test]
    fn zero_window_freezes_a_quantized_sample() {
        let out = auto_run(Some(0.0));
        for &q in out.trace.final_q.iter() {
            let quanta = q / 0.1;
            assert!((quanta - quanta.round()).abs() < 1e-9, "{q}");
        }
    }

    #[test]
    fn payload_average_of_constant_correction() {
        let (topo, mut params) = e1([1.0, 1.0], 0.1);
        params.q = DVector::from_vec(vec![0.25, -0.25]);
        params.omega_u = DVector::from_vec(vec![0.75, 1.25]);
        let out = run_discrete(&topo, &params, &DVector::zeros(2), &settings(50.0, 20.0), DiscreteSettings::default()).unwrap();
        assert!((&out.trace.final_q - DVector::from_vec(vec![0.25, -0.25])).amax() < 1e-12);
    }
}
