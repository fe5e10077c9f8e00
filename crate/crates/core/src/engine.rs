//! Deterministic discrete-event simulation of a push-sum network.
//!
//! At each tick, messages whose arrival tick has come are moved into the
//! receivers' inboxes, then awake nodes step in ascending index order. A
//! node's inbox keeps accumulating while it sleeps. Broadcasts are queued on
//! each out-link according to the schedule's outcome for that tick.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::protocol::{
    init_learning_network, init_raps_network, LearningNodeState, MirrorCommit, ProtocolError,
    PushSumNode, RapsNodeState, StepOutcome,
};
use crate::rng::{stream, Stream};
use crate::scalar::Real;
use crate::schedule::{NetworkParams, Outcome, ScheduleError, ScheduleTrace};
use crate::stats::{HypothesisModel, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("tick {tick}, node {node}: {source}")]
    Protocol {
        tick: usize,
        node: usize,
        source: ProtocolError,
    },
    #[error("tick {tick}, node {node}: {source}")]
    Observation {
        tick: usize,
        node: usize,
        source: StatsError,
    },
    #[error("observation tape of agent {agent} ran out after {len} wakes")]
    TapeExhausted { agent: usize, len: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

/// Where wake-time observations come from.
#[derive(Debug, Clone, Copy)]
pub enum ObservationSource<'a, T> {
    /// Draw from the model's true distributions with per-agent streams of `seed`.
    Sampled { seed: u64 },
    /// Fixed per-agent sequences, consumed one value per wake.
    Tape(&'a [Vec<T>]),
}

/// Skips the mirror commit at the first wake of `node` at or after `tick`
/// whose inbox is not empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub tick: usize,
    pub node: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep full per-tick node states and observations.
    pub record_history: bool,
    pub fault: Option<Fault>,
}

/// Per-tick, per-agent record of a learning run. Tick 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrace<T> {
    n: usize,
    m: usize,
    horizon: usize,
    log_beliefs: Vec<T>,
    weights: Vec<T>,
    wake: Vec<bool>,
    residuals: Vec<f64>,
    stale_drops: usize,
}

impl<T: Real> BeliefTrace<T> {
    fn new(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            n,
            m,
            horizon,
            log_beliefs: Vec::with_capacity((horizon + 1) * n * m),
            weights: Vec::with_capacity((horizon + 1) * n),
            wake: Vec::with_capacity((horizon + 1) * n),
            residuals: Vec::with_capacity(horizon + 1),
            stale_drops: 0,
        }
    }

    fn record(&mut self, nodes: &[LearningNodeState<T>], awake: &[bool], residual: f64) {
        for (node, &w) in nodes.iter().zip(awake) {
            self.log_beliefs.extend_from_slice(&node.log_mu);
            self.weights.push(node.y);
            self.wake.push(w);
        }
        self.residuals.push(residual);
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn hypothesis_count(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn log_beliefs(&self, k: usize, agent: usize) -> &[T] {
        let start = (k * self.n + agent) * self.m;
        &self.log_beliefs[start..start + self.m]
    }

    pub fn belief(&self, k: usize, agent: usize, theta: usize) -> T {
        self.log_beliefs(k, agent)[theta].exp()
    }

    pub fn weight(&self, k: usize, agent: usize) -> T {
        self.weights[k * self.n + agent]
    }

    pub fn woke(&self, k: usize, agent: usize) -> bool {
        self.wake[k * self.n + agent]
    }

    /// Mass-audit residual after tick `k`.
    pub fn residual(&self, k: usize) -> f64 {
        self.residuals[k]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn stale_drops(&self) -> usize {
        self.stale_drops
    }

    /// `tick,agent,wake,y,belief_0,...`; agents are labelled from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,agent,wake,y");
        for t in 0..self.m {
            write!(out, ",belief_{t}").unwrap();
        }
        out.push('\n');
        for k in 0..=self.horizon {
            for i in 0..self.n {
                write!(
                    out,
                    "{},{},{},{}",
                    k,
                    i + 1,
                    self.woke(k, i) as u8,
                    self.weight(k, i)
                )
                .unwrap();
                for &lb in self.log_beliefs(k, i) {
                    write!(out, ",{}", lb.exp()).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Full state history kept in audit mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory<T> {
    /// `states[k]` is the network after tick `k`.
    pub states: Vec<Vec<LearningNodeState<T>>>,
    /// `observations[k - 1][i]` is agent `i`'s draw at tick `k`, if awake.
    pub observations: Vec<Vec<Option<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRun<T> {
    pub beliefs: BeliefTrace<T>,
    pub history: Option<RunHistory<T>>,
}

/// Per-tick record of a RAPS run.
#[derive(Debug, Clone, PartialEq)]
pub struct RapsTrace<T> {
    n: usize,
    horizon: usize,
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    wake: Vec<bool>,
    residuals: Vec<f64>,
    stale_drops: usize,
}

impl<T: Real> RapsTrace<T> {
    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, k: usize, agent: usize) -> T {
        self.x[k * self.n + agent]
    }

    pub fn weight(&self, k: usize, agent: usize) -> T {
        self.y[k * self.n + agent]
    }

    pub fn ratio(&self, k: usize, agent: usize) -> T {
        self.z[k * self.n + agent]
    }

    pub fn woke(&self, k: usize, agent: usize) -> bool {
        self.wake[k * self.n + agent]
    }

    pub fn initial_values(&self) -> &[T] {
        &self.x[..self.n]
    }

    pub fn residual(&self, k: usize) -> f64 {
        self.residuals[k]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn stale_drops(&self) -> usize {
        self.stale_drops
    }

    /// `tick,agent,wake,x,y,z`; agents are labelled from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,agent,wake,x,y,z\n");
        for k in 0..=self.horizon {
            for i in 0..self.n {
                let at = k * self.n + i;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    k,
                    i + 1,
                    self.wake[at] as u8,
                    self.x[at],
                    self.y[at],
                    self.z[at]
                )
                .unwrap();
            }
        }
        out
    }
}

/// `|sum_i y_i + sum_(i,j) (phi_i - rho_ij) - n|`.
pub fn mass_audit<T: Real, N: PushSumNode<T>>(nodes: &[N]) -> f64 {
    let mut total = T::zero();
    for node in nodes {
        total += node.weight();
    }
    let mut pending = T::zero();
    for node in nodes {
        for (from, rho) in node.mirror_weights() {
            pending += nodes[from].cumulative_weight() - rho;
        }
    }
    (total + pending - T::from_count(nodes.len()))
        .abs()
        .as_f64()
}

struct Links<M> {
    in_flight: Vec<VecDeque<(usize, M)>>,
    inbox: Vec<Vec<M>>,
}

impl<M: Clone> Links<M> {
    fn new(graph: &DirectedGraph) -> Self {
        Self {
            in_flight: vec![VecDeque::new(); graph.edge_count()],
            inbox: vec![Vec::new(); graph.node_count()],
        }
    }

    fn deliver(&mut self, graph: &DirectedGraph, k: usize) {
        for (e, queue) in self.in_flight.iter_mut().enumerate() {
            let to = graph.edge(e).1;
            while queue.front().is_some_and(|(arrival, _)| *arrival <= k) {
                let (_, msg) = queue.pop_front().expect("front exists");
                self.inbox[to].push(msg);
            }
        }
    }

    fn send(
        &mut self,
        graph: &DirectedGraph,
        trace: &ScheduleTrace,
        k: usize,
        from: usize,
        msg: &M,
    ) {
        for &e in graph.out_edges(from) {
            if let Some(Outcome::Delivered { delay }) = trace.outcome(k, e) {
                self.in_flight[e].push_back((k + delay, msg.clone()));
            }
        }
    }
}

fn check_dimensions(graph: &DirectedGraph, trace: &ScheduleTrace) -> Result<(), EngineError> {
    if trace.node_count() != graph.node_count() {
        return Err(ScheduleError::DimensionMismatch(format!(
            "trace has {} nodes, graph {}",
            trace.node_count(),
            graph.node_count()
        ))
        .into());
    }
    Ok(())
}

fn commit_for<M>(fault: &mut Option<Fault>, k: usize, node: usize, inbox: &[M]) -> MirrorCommit {
    match fault {
        Some(f) if f.node == node && k >= f.tick && !inbox.is_empty() => {
            *fault = None;
            MirrorCommit::Skip
        }
        _ => MirrorCommit::Apply,
    }
}

/// Runs the learning protocol over a materialized schedule.
pub fn run_learning<T: Real>(
    graph: &DirectedGraph,
    model: &HypothesisModel<T>,
    trace: &ScheduleTrace,
    observations: ObservationSource<'_, T>,
    options: &RunOptions,
) -> Result<LearningRun<T>, EngineError> {
    check_dimensions(graph, trace)?;
    let n = graph.node_count();
    let horizon = trace.horizon();
    let mut nodes = init_learning_network(graph, model)
        .map_err(|e| EngineError::SizeMismatch(e.to_string()))?;
    let mut rngs: Vec<_> = (0..n)
        .map(|i| match observations {
            ObservationSource::Sampled { seed } => Some(stream(seed, Stream::Observations(i))),
            ObservationSource::Tape(_) => None,
        })
        .collect();
    if let ObservationSource::Tape(tape) = observations {
        if tape.len() != n {
            return Err(EngineError::SizeMismatch(format!(
                "{} observation tapes for {n} agents",
                tape.len()
            )));
        }
    }
    let mut cursor = vec![0usize; n];
    let mut fault = options.fault;

    let mut out = BeliefTrace::new(n, model.hypothesis_count(), horizon);
    out.record(&nodes, &vec![false; n], mass_audit(&nodes));
    let mut history = options.record_history.then(|| RunHistory {
        states: vec![nodes.clone()],
        observations: Vec::with_capacity(horizon),
    });
    let mut links = Links::new(graph);
    let mut awake = vec![false; n];
    for k in 1..=horizon {
        links.deliver(graph, k);
        let mut drawn = vec![None; n];
        for i in 0..n {
            awake[i] = trace.wakes(k, i);
            if !awake[i] {
                continue;
            }
            let x = match observations {
                ObservationSource::Sampled { .. } => {
                    model.sample(i, rngs[i].as_mut().expect("sampled stream"))
                }
                ObservationSource::Tape(tape) => {
                    *tape[i].get(cursor[i]).ok_or(EngineError::TapeExhausted {
                        agent: i,
                        len: tape[i].len(),
                    })?
                }
            };
            cursor[i] += 1;
            drawn[i] = Some(x);
            let ll = model
                .log_likelihoods(i, x)
                .map_err(|source| EngineError::Observation {
                    tick: k,
                    node: i,
                    source,
                })?;
            let inbox = std::mem::take(&mut links.inbox[i]);
            let StepOutcome { broadcast, stale } = nodes[i]
                .wake_with(&inbox, &ll, k, commit_for(&mut fault, k, i, &inbox))
                .map_err(|source| EngineError::Protocol {
                    tick: k,
                    node: i,
                    source,
                })?;
            out.stale_drops += stale;
            links.send(graph, trace, k, i, &broadcast);
        }
        out.record(&nodes, &awake, mass_audit(&nodes));
        if let Some(h) = history.as_mut() {
            h.states.push(nodes.clone());
            h.observations.push(drawn);
        }
    }
    Ok(LearningRun {
        beliefs: out,
        history,
    })
}

/// Runs RAPS averaging of `x0` over a materialized schedule.
pub fn run_raps<T: Real>(
    graph: &DirectedGraph,
    trace: &ScheduleTrace,
    x0: &[T],
    options: &RunOptions,
) -> Result<RapsTrace<T>, EngineError> {
    check_dimensions(graph, trace)?;
    let n = graph.node_count();
    let horizon = trace.horizon();
    let mut nodes =
        init_raps_network(graph, x0).map_err(|e| EngineError::SizeMismatch(e.to_string()))?;
    let mut fault = options.fault;
    let mut out = RapsTrace {
        n,
        horizon,
        x: Vec::with_capacity((horizon + 1) * n),
        y: Vec::with_capacity((horizon + 1) * n),
        z: Vec::with_capacity((horizon + 1) * n),
        wake: Vec::with_capacity((horizon + 1) * n),
        residuals: Vec::with_capacity(horizon + 1),
        stale_drops: 0,
    };
    let record = |out: &mut RapsTrace<T>, nodes: &[RapsNodeState<T>], awake: &[bool]| {
        for (node, &w) in nodes.iter().zip(awake) {
            out.x.push(node.x);
            out.y.push(node.y);
            out.z.push(node.z);
            out.wake.push(w);
        }
        out.residuals.push(mass_audit(nodes));
    };
    record(&mut out, &nodes, &vec![false; n]);
    let mut links = Links::new(graph);
    let mut awake = vec![false; n];
    for k in 1..=horizon {
        links.deliver(graph, k);
        for i in 0..n {
            awake[i] = trace.wakes(k, i);
            if !awake[i] {
                continue;
            }
            let inbox = std::mem::take(&mut links.inbox[i]);
            let StepOutcome { broadcast, stale } = nodes[i]
                .wake_with(&inbox, k, commit_for(&mut fault, k, i, &inbox))
                .map_err(|source| EngineError::Protocol {
                    tick: k,
                    node: i,
                    source,
                })?;
            out.stale_drops += stale;
            links.send(graph, trace, k, i, &broadcast);
        }
        record(&mut out, &nodes, &awake);
    }
    Ok(out)
}

/// Generates a schedule from `seed` and runs learning with sampled observations.
pub fn simulate_learning<T: Real>(
    graph: &DirectedGraph,
    model: &HypothesisModel<T>,
    params: &NetworkParams,
    horizon: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<(ScheduleTrace, LearningRun<T>), EngineError> {
    let trace =
        ScheduleTrace::generate(params, graph, horizon, &mut stream(seed, Stream::Schedule))?;
    let run = run_learning(
        graph,
        model,
        &trace,
        ObservationSource::Sampled { seed },
        options,
    )?;
    Ok((trace, run))
}

/// Generates a schedule from `seed` and runs RAPS.
pub fn simulate_raps<T: Real>(
    graph: &DirectedGraph,
    params: &NetworkParams,
    horizon: usize,
    seed: u64,
    x0: &[T],
    options: &RunOptions,
) -> Result<(ScheduleTrace, RapsTrace<T>), EngineError> {
    let trace =
        ScheduleTrace::generate(params, graph, horizon, &mut stream(seed, Stream::Schedule))?;
    let run = run_raps(graph, &trace, x0, options)?;
    Ok((trace, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{standard_topology, Topology};
    use crate::stats::Distribution;

    fn coin_model(n: usize) -> HypothesisModel<f64> {
        let b = |p| Distribution::bernoulli(p).unwrap();
        HypothesisModel::new(
            (0..n).map(|_| b(0.7)).collect(),
            (0..n).map(|_| vec![b(0.7), b(0.4)]).collect(),
            1e-8,
        )
        .unwrap()
    }

    fn lossy() -> NetworkParams {
        NetworkParams {
            l_del: 3,
            l_u: 4,
            l_f: 3,
            p_w: 0.6,
            p_l: 0.3,
        }
    }

    #[test]
    fn initial_residual_is_exactly_zero() {
        let g = standard_topology(Topology::Star, 4).unwrap();
        let (_, run) =
            simulate_learning(&g, &coin_model(4), &lossy(), 20, 1, &RunOptions::default()).unwrap();
        assert_eq!(run.beliefs.residual(0), 0.0);
    }

    #[test]
    fn mass_is_conserved_under_loss_and_delay() {
        let g = standard_topology(Topology::Cycle, 5).unwrap();
        let (_, run) = simulate_learning(
            &g,
            &coin_model(5),
            &lossy(),
            2000,
            4,
            &RunOptions::default(),
        )
        .unwrap();
        assert!(
            run.beliefs.max_residual() <= 5e-12,
            "{}",
            run.beliefs.max_residual()
        );
        for k in 0..=2000 {
            for i in 0..5 {
                let s: f64 = (0..2).map(|t| run.beliefs.belief(k, i, t)).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn skipped_commit_breaks_mass() {
        let g = standard_topology(Topology::Path, 3).unwrap();
        let opts = RunOptions {
            fault: Some(Fault { tick: 50, node: 1 }),
            ..RunOptions::default()
        };
        let (_, run) = simulate_learning(&g, &coin_model(3), &lossy(), 200, 2, &opts).unwrap();
        assert!(run.beliefs.max_residual() > 1e-3);
    }

    #[test]
    fn raps_two_nodes_average() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let (_, out) = simulate_raps(
            &g,
            &NetworkParams::synchronous(),
            80,
            0,
            &[0.0f64, 2.0],
            &RunOptions::default(),
        )
        .unwrap();
        for i in 0..2 {
            assert!((out.ratio(80, i) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let g = standard_topology(Topology::Star, 4).unwrap();
        let a = simulate_learning(
            &g,
            &coin_model(4),
            &lossy(),
            300,
            11,
            &RunOptions::default(),
        )
        .unwrap();
        let b = simulate_learning(
            &g,
            &coin_model(4),
            &lossy(),
            300,
            11,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(a.1.beliefs.to_csv(), b.1.beliefs.to_csv());
    }

    #[test]
    fn tape_exhaustion_is_reported() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let trace = ScheduleTrace::generate(
            &NetworkParams::synchronous(),
            &g,
            5,
            &mut stream(0, Stream::Schedule),
        )
        .unwrap();
        let tape = vec![vec![1.0; 5], vec![1.0; 3]];
        let err = run_learning(
            &g,
            &coin_model(2),
            &trace,
            ObservationSource::Tape(&tape),
            &RunOptions::default(),
        );
        assert!(matches!(
            err,
            Err(EngineError::TapeExhausted { agent: 1, len: 3 })
        ));
    }

    #[test]
    fn csv_layout() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let (_, run) = simulate_learning(
            &g,
            &coin_model(2),
            &NetworkParams::synchronous(),
            2,
            0,
            &RunOptions::default(),
        )
        .unwrap();
        let csv = run.beliefs.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "tick,agent,wake,y,belief_0,belief_1");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert_eq!(lines[1], "0,1,0,1,0.5,0.5");
    }
}
