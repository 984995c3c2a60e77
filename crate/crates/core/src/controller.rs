//! Per-node proportional and reframing controllers.
//!
//! A node sees only the buffers on its incoming links. The control laws here
//! take a [`NodeView`] and nothing else, so they cannot read another node's
//! occupancy or the global time.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;

/// One incoming buffer as seen by its destination node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomingBuffer {
    pub edge: usize,
    /// Measured occupancy in frames.
    pub occupancy: f64,
    /// Target occupancy for this buffer.
    pub offset: f64,
}

/// Everything node `node` is allowed to observe.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeView {
    pub node: usize,
    pub incoming: Vec<IncomingBuffer>,
    pub q: f64,
}

impl NodeView {
    /// Copies out the incoming buffers of `node` from network-wide vectors.
    /// This is the only place global occupancy vectors are read.
    pub fn gather(
        topology: &Topology,
        node: usize,
        beta: &DVector<f64>,
        beta_off: &DVector<f64>,
        q: f64,
    ) -> Self {
        let incoming = topology
            .in_edges(node)
            .map(|edge| IncomingBuffer {
                edge,
                occupancy: beta[edge],
                offset: beta_off[edge],
            })
            .collect();
        NodeView { node, incoming, q }
    }
}

/// `c_i = k Σ_{j→i} (β_{j→i} − β_off) + q_i`
pub fn proportional_correction(view: &NodeView, k: f64) -> f64 {
    let relative: f64 = view.incoming.iter().map(|b| b.occupancy - b.offset).sum();
    k * relative + view.q
}

/// Stacks the per-node law over all nodes. Equal to `kD(β − β_off) + q`.
pub fn stacked_corrections(
    topology: &Topology,
    k: f64,
    beta: &DVector<f64>,
    beta_off: &DVector<f64>,
    q: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_iterator(
        topology.n(),
        (0..topology.n())
            .map(|i| proportional_correction(&NodeView::gather(topology, i, beta, beta_off, q[i]), k)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeMode {
    PreReframe,
    PostReframe,
}

/// Controller state local to one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub node: usize,
    pub q: f64,
    pub mode: NodeMode,
}

impl NodeState {
    pub fn new(node: usize, q: f64) -> Self {
        NodeState {
            node,
            q,
            mode: NodeMode::PreReframe,
        }
    }

    /// Freezes the correction measured at the reframe instant into `q`.
    /// Happens at most once per node.
    pub fn reframe(&mut self, c_at_t1: f64) -> Result<()> {
        if self.mode == NodeMode::PostReframe {
            return Err(Error::AlreadyReframed {
                node: self.node + 1,
            });
        }
        self.q = c_at_t1;
        self.mode = NodeMode::PostReframe;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Proportional,
    #[default]
    Reframing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReframeMode {
    Fixed {
        t1: f64,
    },
    /// Fires when the correction has been flat to within `epsilon` for
    /// `window` time units. `None` picks the defaults from the scenario.
    Auto {
        epsilon: Option<f64>,
        window: Option<f64>,
    },
}

/// Experimental: node `i` reframes `u_i · max_delay` after the common
/// instant, with `u_i` uniform in `[0, 1)` from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stagger {
    pub max_delay: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReframeSchedule {
    pub mode: ReframeMode,
    pub stagger: Option<Stagger>,
}

impl Default for ReframeSchedule {
    fn default() -> Self {
        ReframeSchedule {
            mode: ReframeMode::Auto {
                epsilon: None,
                window: None,
            },
            stagger: None,
        }
    }
}

impl ReframeSchedule {
    pub fn fixed(t1: f64) -> Self {
        ReframeSchedule {
            mode: ReframeMode::Fixed { t1 },
            stagger: None,
        }
    }

    pub fn stagger_delays(&self, n: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        match self.stagger {
            None => vec![0.0; n],
            Some(s) => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s.seed);
                (0..n).map(|_| s.max_delay * rng.random::<f64>()).collect()
            }
        }
    }
}

/// Default auto-trigger threshold: `1e-9 · ‖ω_u‖∞`.
pub fn default_epsilon(omega_u: &DVector<f64>) -> f64 {
    1e-9 * omega_u.amax()
}

/// Default auto-trigger window: `10 / (k · max in-degree)`.
pub fn default_window(k: f64, max_in_degree: usize) -> f64 {
    10.0 / (k * max_in_degree.max(1) as f64)
}

/// True when every correction sample in the trailing `window` lies within
/// `epsilon` (sup norm) of the latest one. `history` is time-ordered.
/// Returns false while less than `window` time has elapsed.
pub fn auto_reframe_trigger(history: &[(f64, DVector<f64>)], window: f64, epsilon: f64) -> bool {
    let Some((t_end, c_end)) = history.last() else {
        return false;
    };
    let t_start = t_end - window;
    if history[0].0 > t_start {
        return false;
    }
    history
        .iter()
        .rev()
        .take_while(|(t, _)| *t >= t_start)
        .all(|(_, c)| (c - c_end).amax() <= epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(pairs: &[(f64, f64)], q: f64) -> NodeView {
        NodeView {
            node: 0,
            incoming: pairs
                .iter()
                .enumerate()
                .map(|(edge, &(occupancy, offset))| IncomingBuffer {
                    edge,
                    occupancy,
                    offset,
                })
                .collect(),
            q,
        }
    }

    #[test]
    fn proportional_law() {
        assert_eq!(proportional_correction(&view(&[(10.0, 10.0), (7.0, 7.0)], 0.0), 0.3), 0.0);
        let c = proportional_correction(&view(&[(10.1, 10.0)], 0.0), 0.1);
        assert!((c - 0.01).abs() < 1e-15);
        for k in [0.05, 1.0, 17.0] {
            assert_eq!(proportional_correction(&view(&[(12.0, 10.0), (8.0, 10.0)], 0.0), k), 0.0);
        }
        assert_eq!(proportional_correction(&view(&[], 0.25), 1.0), 0.25);
    }

    #[test]
    fn view_is_local() {
        let topo = Topology::from_one_based(3, &[(1, 2), (2, 3), (3, 1), (1, 3)]).unwrap();
        let beta = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let off = DVector::zeros(4);
        let v = NodeView::gather(&topo, 2, &beta, &off, 0.0);
        let edges: Vec<usize> = v.incoming.iter().map(|b| b.edge).collect();
        assert_eq!(edges, vec![1, 3]);
        assert!(v.incoming.iter().all(|b| topo.edges()[b.edge].dst == 2));
    }

    #[test]
    fn reframe_once() {
        let mut s = NodeState::new(1, 0.0);
        s.reframe(0.01).unwrap();
        assert_eq!(s.q, 0.01);
        assert_eq!(s.mode, NodeMode::PostReframe);
        assert_eq!(s.reframe(0.02), Err(Error::AlreadyReframed { node: 2 }));
        assert_eq!(s.q, 0.01);
    }

    #[test]
    fn reframe_at_offset_keeps_q() {
        let mut s = NodeState::new(0, 0.0);
        let c = proportional_correction(&view(&[(10.0, 10.0)], s.q), 0.1);
        s.reframe(c).unwrap();
        assert_eq!(s.q, 0.0);
    }

    #[test]
    fn trigger_rules() {
        let flat: Vec<_> = (0..=10).map(|i| (i as f64, DVector::from_element(2, 0.5))).collect();
        assert!(auto_reframe_trigger(&flat, 5.0, 1e-300));
        assert!(!auto_reframe_trigger(&flat, 20.0, 1.0));
        assert!(!auto_reframe_trigger(&[], 1.0, 1.0));

        let wobble: Vec<_> = (0..=100)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, DVector::from_element(1, 1e-3 * (3.0 * t).sin()))
            })
            .collect();
        assert!(!auto_reframe_trigger(&wobble, 5.0, 1e-4));
    }

    #[test]
    fn stagger_is_seeded() {
        let mut s = ReframeSchedule::fixed(10.0);
        assert_eq!(s.stagger_delays(3), vec![0.0; 3]);
        s.stagger = Some(Stagger { max_delay: 2.0, seed: 5 });
        let a = s.stagger_delays(4);
        assert_eq!(a, s.stagger_delays(4));
        assert!(a.iter().all(|&d| (0.0..2.0).contains(&d)));
    }
}
