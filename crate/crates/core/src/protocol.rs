//! Per-node state machines for robust asynchronous push-sum learning and
//! push-sum averaging (RAPS).
//!
//! Nodes exchange cumulative sums. A sender adds its outgoing share to `phi`
//! on every wake and broadcasts the running total; a receiver keeps a mirror
//! `rho` of the last total it applied per in-neighbour and consumes only the
//! difference. A lost message therefore costs nothing: the next delivery
//! carries the missed mass.
//!
//! Beliefs and the multiplicative belief masses are stored as logarithms.

use std::fmt;

use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::scalar::{log_sum_exp, Real};
use crate::stats::HypothesisModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("node {node}: tick {tick} is not after its last wake {last}")]
    StaleTick {
        node: usize,
        tick: usize,
        last: usize,
    },
    #[error("node {node}: weight {weight} is not positive")]
    NonpositiveWeight { node: usize, weight: f64 },
    #[error("node {node}: message from {sender}, which is not an in-neighbour")]
    UnknownSender { node: usize, sender: usize },
    #[error("node {node}: expected {expected} hypothesis entries, got {got}")]
    DimensionMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

/// What a wake step does with the staged mirrors. `Skip` exists only to
/// inject faults in tests of the recursion audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MirrorCommit {
    #[default]
    Apply,
    Skip,
}

/// Result of one wake step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<M> {
    pub broadcast: M,
    /// Inbox messages dropped for carrying an old timestamp.
    pub stale: usize,
}

/// Read access used by the global mass audit.
pub trait PushSumNode<T: Real> {
    type Message: Clone + fmt::Debug;

    fn id(&self) -> usize;
    fn weight(&self) -> T;
    /// Total weight mass pushed to each out-neighbour so far.
    fn cumulative_weight(&self) -> T;
    /// `(sender, rho_y)` per in-neighbour.
    fn mirror_weights(&self) -> Vec<(usize, T)>;
    fn message_sender(msg: &Self::Message) -> usize;
}

/// Splits `value` into `d + 1` shares so that the cumulative total advances
/// by a representable amount. Returns `(new_total, sent, keep)` with
/// `keep + d * sent == value` up to one rounding.
fn split_share<T: Real>(value: T, total: T, out_degree: usize) -> (T, T, T) {
    let share = value / T::from_count(out_degree + 1);
    let new_total = total + share;
    let sent = new_total - total;
    let keep = value - T::from_count(out_degree) * sent;
    (new_total, sent, keep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningMirror<T> {
    pub from: usize,
    pub rho_y: T,
    pub log_rho_mu: Vec<T>,
    pub kappa: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningMessage<T> {
    pub sender: usize,
    pub phi_y: T,
    pub log_phi_mu: Vec<T>,
    pub kappa: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningNodeState<T> {
    pub id: usize,
    pub out_degree: usize,
    pub y: T,
    pub phi_y: T,
    pub log_phi_mu: Vec<T>,
    pub log_mu: Vec<T>,
    /// One per in-neighbour, in ascending sender order.
    pub mirrors: Vec<LearningMirror<T>>,
    pub kappa: usize,
}

impl<T: Real> LearningNodeState<T> {
    /// Fresh node with uniform beliefs over `m` hypotheses.
    pub fn new(id: usize, out_degree: usize, in_neighbors: &[usize], m: usize) -> Self {
        let uniform = -T::from_count(m).ln();
        Self {
            id,
            out_degree,
            y: T::one(),
            phi_y: T::zero(),
            log_phi_mu: vec![T::zero(); m],
            log_mu: vec![uniform; m],
            mirrors: in_neighbors
                .iter()
                .map(|&from| LearningMirror {
                    from,
                    rho_y: T::zero(),
                    log_rho_mu: vec![T::zero(); m],
                    kappa: 0,
                })
                .collect(),
            kappa: 0,
        }
    }

    pub fn hypothesis_count(&self) -> usize {
        self.log_mu.len()
    }

    /// Beliefs in linear space.
    pub fn beliefs(&self) -> Vec<T> {
        self.log_mu.iter().map(|l| l.exp()).collect()
    }

    /// One wake: accumulate and broadcast, stage fresh inbox messages, then
    /// mix and apply the local likelihood.
    pub fn wake(
        &mut self,
        inbox: &[LearningMessage<T>],
        log_likelihood: &[T],
        tick: usize,
    ) -> Result<StepOutcome<LearningMessage<T>>, ProtocolError> {
        self.wake_with(inbox, log_likelihood, tick, MirrorCommit::Apply)
    }

    pub fn wake_with(
        &mut self,
        inbox: &[LearningMessage<T>],
        log_likelihood: &[T],
        tick: usize,
        commit: MirrorCommit,
    ) -> Result<StepOutcome<LearningMessage<T>>, ProtocolError> {
        let m = self.hypothesis_count();
        if tick <= self.kappa {
            return Err(ProtocolError::StaleTick {
                node: self.id,
                tick,
                last: self.kappa,
            });
        }
        if log_likelihood.len() != m {
            return Err(ProtocolError::DimensionMismatch {
                node: self.id,
                expected: m,
                got: log_likelihood.len(),
            });
        }

        // phase 1
        let (phi_y, sent, keep) = split_share(self.y, self.phi_y, self.out_degree);
        let log_phi_mu: Vec<T> = self
            .log_phi_mu
            .iter()
            .zip(&self.log_mu)
            .map(|(&acc, &lm)| acc + sent * lm)
            .collect();

        // phase 2: stage (mirror index, message index)
        let mut staged: Vec<Option<usize>> = vec![None; self.mirrors.len()];
        let mut staged_kappa: Vec<usize> = self.mirrors.iter().map(|r| r.kappa).collect();
        let mut stale = 0;
        for (idx, msg) in inbox.iter().enumerate() {
            let slot = self
                .mirrors
                .iter()
                .position(|r| r.from == msg.sender)
                .ok_or(ProtocolError::UnknownSender {
                    node: self.id,
                    sender: msg.sender,
                })?;
            if msg.log_phi_mu.len() != m {
                return Err(ProtocolError::DimensionMismatch {
                    node: self.id,
                    expected: m,
                    got: msg.log_phi_mu.len(),
                });
            }
            if msg.kappa > staged_kappa[slot] {
                staged[slot] = Some(idx);
                staged_kappa[slot] = msg.kappa;
            } else {
                stale += 1;
            }
        }

        // phase 3
        let mut y_hat = keep;
        let mut mixed: Vec<T> = self.log_mu.iter().map(|&lm| keep * lm).collect();
        for (mirror, pick) in self.mirrors.iter().zip(&staged) {
            if let Some(idx) = *pick {
                let msg = &inbox[idx];
                y_hat += msg.phi_y - mirror.rho_y;
                for (acc, (&fresh, &old)) in mixed
                    .iter_mut()
                    .zip(msg.log_phi_mu.iter().zip(&mirror.log_rho_mu))
                {
                    *acc += fresh - old;
                }
            }
        }
        if !(y_hat > T::zero()) {
            return Err(ProtocolError::NonpositiveWeight {
                node: self.id,
                weight: y_hat.as_f64(),
            });
        }
        for (acc, &ll) in mixed.iter_mut().zip(log_likelihood) {
            *acc = (*acc + ll) / y_hat;
        }
        let z = log_sum_exp(&mixed);
        for v in mixed.iter_mut() {
            *v -= z;
        }

        self.kappa = tick;
        self.phi_y = phi_y;
        self.log_phi_mu = log_phi_mu;
        self.log_mu = mixed;
        self.y = y_hat;
        for (mirror, (pick, kappa)) in self.mirrors.iter_mut().zip(staged.iter().zip(staged_kappa))
        {
            if let Some(idx) = *pick {
                mirror.kappa = kappa;
                if commit == MirrorCommit::Apply {
                    mirror.rho_y = inbox[idx].phi_y;
                    mirror.log_rho_mu.clone_from(&inbox[idx].log_phi_mu);
                }
            }
        }

        Ok(StepOutcome {
            broadcast: LearningMessage {
                sender: self.id,
                phi_y: self.phi_y,
                log_phi_mu: self.log_phi_mu.clone(),
                kappa: tick,
            },
            stale,
        })
    }
}

impl<T: Real> PushSumNode<T> for LearningNodeState<T> {
    type Message = LearningMessage<T>;

    fn id(&self) -> usize {
        self.id
    }

    fn weight(&self) -> T {
        self.y
    }

    fn cumulative_weight(&self) -> T {
        self.phi_y
    }

    fn mirror_weights(&self) -> Vec<(usize, T)> {
        self.mirrors.iter().map(|r| (r.from, r.rho_y)).collect()
    }

    fn message_sender(msg: &Self::Message) -> usize {
        msg.sender
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RapsMirror<T> {
    pub from: usize,
    pub rho_x: T,
    pub rho_y: T,
    pub kappa: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RapsMessage<T> {
    pub sender: usize,
    pub phi_x: T,
    pub phi_y: T,
    pub kappa: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RapsNodeState<T> {
    pub id: usize,
    pub out_degree: usize,
    pub x: T,
    pub y: T,
    pub phi_x: T,
    pub phi_y: T,
    pub mirrors: Vec<RapsMirror<T>>,
    pub kappa: usize,
    pub z: T,
}

impl<T: Real> RapsNodeState<T> {
    pub fn new(id: usize, out_degree: usize, in_neighbors: &[usize], x0: T) -> Self {
        Self {
            id,
            out_degree,
            x: x0,
            y: T::one(),
            phi_x: T::zero(),
            phi_y: T::zero(),
            mirrors: in_neighbors
                .iter()
                .map(|&from| RapsMirror {
                    from,
                    rho_x: T::zero(),
                    rho_y: T::zero(),
                    kappa: 0,
                })
                .collect(),
            kappa: 0,
            z: x0,
        }
    }

    pub fn wake(
        &mut self,
        inbox: &[RapsMessage<T>],
        tick: usize,
    ) -> Result<StepOutcome<RapsMessage<T>>, ProtocolError> {
        self.wake_with(inbox, tick, MirrorCommit::Apply)
    }

    pub fn wake_with(
        &mut self,
        inbox: &[RapsMessage<T>],
        tick: usize,
        commit: MirrorCommit,
    ) -> Result<StepOutcome<RapsMessage<T>>, ProtocolError> {
        if tick <= self.kappa {
            return Err(ProtocolError::StaleTick {
                node: self.id,
                tick,
                last: self.kappa,
            });
        }
        let (phi_y, _, keep_y) = split_share(self.y, self.phi_y, self.out_degree);
        let (phi_x, _, keep_x) = split_share(self.x, self.phi_x, self.out_degree);

        let mut staged: Vec<Option<RapsMessage<T>>> = vec![None; self.mirrors.len()];
        let mut stale = 0;
        for msg in inbox {
            let slot = self
                .mirrors
                .iter()
                .position(|r| r.from == msg.sender)
                .ok_or(ProtocolError::UnknownSender {
                    node: self.id,
                    sender: msg.sender,
                })?;
            let current = staged[slot].map_or(self.mirrors[slot].kappa, |s| s.kappa);
            if msg.kappa > current {
                staged[slot] = Some(*msg);
            } else {
                stale += 1;
            }
        }

        let mut y = keep_y;
        let mut x = keep_x;
        for (mirror, pick) in self.mirrors.iter().zip(&staged) {
            if let Some(msg) = pick {
                y += msg.phi_y - mirror.rho_y;
                x += msg.phi_x - mirror.rho_x;
            }
        }
        if !(y > T::zero()) {
            return Err(ProtocolError::NonpositiveWeight {
                node: self.id,
                weight: y.as_f64(),
            });
        }

        self.kappa = tick;
        self.phi_x = phi_x;
        self.phi_y = phi_y;
        self.x = x;
        self.y = y;
        self.z = x / y;
        for (mirror, pick) in self.mirrors.iter_mut().zip(&staged) {
            if let Some(msg) = pick {
                mirror.kappa = msg.kappa;
                if commit == MirrorCommit::Apply {
                    mirror.rho_x = msg.phi_x;
                    mirror.rho_y = msg.phi_y;
                }
            }
        }
        Ok(StepOutcome {
            broadcast: RapsMessage {
                sender: self.id,
                phi_x: self.phi_x,
                phi_y: self.phi_y,
                kappa: tick,
            },
            stale,
        })
    }
}

impl<T: Real> PushSumNode<T> for RapsNodeState<T> {
    type Message = RapsMessage<T>;

    fn id(&self) -> usize {
        self.id
    }

    fn weight(&self) -> T {
        self.y
    }

    fn cumulative_weight(&self) -> T {
        self.phi_y
    }

    fn mirror_weights(&self) -> Vec<(usize, T)> {
        self.mirrors.iter().map(|r| (r.from, r.rho_y)).collect()
    }

    fn message_sender(msg: &Self::Message) -> usize {
        msg.sender
    }
}

fn in_neighbor_list(graph: &DirectedGraph, node: usize) -> Vec<usize> {
    let mut v: Vec<usize> = graph.in_neighbors(node).collect();
    v.sort_unstable();
    v
}

pub fn init_learning_network<T: Real>(
    graph: &DirectedGraph,
    model: &HypothesisModel<T>,
) -> Result<Vec<LearningNodeState<T>>, ProtocolError> {
    if model.agent_count() != graph.node_count() {
        return Err(ProtocolError::SizeMismatch(format!(
            "model has {} agents, graph {} nodes",
            model.agent_count(),
            graph.node_count()
        )));
    }
    Ok(init_learning_nodes(graph, model.hypothesis_count()))
}

/// Network initialization from the hypothesis count alone.
pub fn init_learning_nodes<T: Real>(graph: &DirectedGraph, m: usize) -> Vec<LearningNodeState<T>> {
    (0..graph.node_count())
        .map(|i| LearningNodeState::new(i, graph.out_degree(i), &in_neighbor_list(graph, i), m))
        .collect()
}

pub fn init_raps_network<T: Real>(
    graph: &DirectedGraph,
    x0: &[T],
) -> Result<Vec<RapsNodeState<T>>, ProtocolError> {
    if x0.len() != graph.node_count() {
        return Err(ProtocolError::SizeMismatch(format!(
            "{} initial values for {} nodes",
            x0.len(),
            graph.node_count()
        )));
    }
    Ok((0..graph.node_count())
        .map(|i| RapsNodeState::new(i, graph.out_degree(i), &in_neighbor_list(graph, i), x0[i]))
        .collect())
}
