//! Network event schedules: wake-ups, link losses and delays.
//!
//! A [`ScheduleTrace`] is materialized before a simulation runs. It records,
//! for every tick, which agents wake, and for every awake sender and each of
//! its out-edges whether the transmission is lost or delivered after some
//! delay. Traces generated here always satisfy the network assumptions:
//!
//! * (a) the graph is strongly connected without self-loops,
//! * (b) delivered delays lie in `1..=l_del`,
//! * (c) no agent sleeps `l_u` consecutive ticks,
//! * (d) no link loses more than `l_f` consecutive transmissions,
//! * (e) on each link, arrivals keep send order.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DirectedGraph, GraphError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Maximum link delay in ticks.
    pub l_del: usize,
    /// Every agent wakes at least once every `l_u` ticks.
    pub l_u: usize,
    /// Maximum consecutive losses per link.
    pub l_f: usize,
    /// Wake probability per tick.
    pub p_w: f64,
    /// Loss probability per transmission.
    pub p_l: f64,
}

impl NetworkParams {
    /// Every agent wakes every tick and every message arrives one tick later.
    pub fn synchronous() -> Self {
        Self {
            l_del: 1,
            l_u: 1,
            l_f: 1,
            p_w: 1.0,
            p_l: 0.0,
        }
    }

    /// Validates ranges; the error names the offending field.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad =
            |field: &'static str, msg: String| Err(ScheduleError::InvalidParams { field, msg });
        if self.l_del < 1 {
            return bad("l_del", "must be at least 1".into());
        }
        if self.l_u < 1 {
            return bad("l_u", "must be at least 1".into());
        }
        if self.l_f < 1 {
            return bad("l_f", "must be at least 1".into());
        }
        if !(self.p_w > 0.0 && self.p_w <= 1.0) {
            return bad("p_w", format!("must lie in (0, 1], got {}", self.p_w));
        }
        if !(self.p_l >= 0.0 && self.p_l < 1.0) {
            return bad("p_l", format!("must lie in [0, 1), got {}", self.p_l));
        }
        Ok(())
    }

    /// Bound on send-to-processing lag: `l_del + l_u - 1`.
    pub fn effective_delay_bound(&self) -> usize {
        self.l_del + self.l_u - 1
    }

    /// Every link delivers at least once in any window of this many ticks.
    pub fn success_interval(&self) -> usize {
        self.l_u * (self.l_f + 1) + self.effective_delay_bound()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Lost,
    Delivered { delay: usize },
}

/// Network assumption clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Clause {
    /// strongly connected, no self-loops
    A,
    /// delays bounded by `l_del`
    B,
    /// wake at least every `l_u` ticks
    C,
    /// at most `l_f` consecutive losses
    D,
    /// in-order arrival
    E,
}

impl Clause {
    pub fn label(self) -> &'static str {
        match self {
            Clause::A => "a",
            Clause::B => "b",
            Clause::C => "c",
            Clause::D => "d",
            Clause::E => "e",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub clause: Clause,
    pub tick: Option<usize>,
    pub node: Option<usize>,
    pub edge: Option<(usize, usize)>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "clause ({})", self.clause.label())?;
        if let Some(t) = self.tick {
            write!(f, " at tick {t}")?;
        }
        if let Some(n) = self.node {
            write!(f, " node {n}")?;
        }
        if let Some((i, j)) = self.edge {
            write!(f, " edge ({i}, {j})")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid network parameter `{field}`: {msg}")]
    InvalidParams { field: &'static str, msg: String },
    #[error("trace dimensions do not match: {0}")]
    DimensionMismatch(String),
    #[error("schedule violates {0}")]
    Violation(Violation),
    #[error("trace file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Checks a raw edge list against clause (a).
pub fn check_topology(n: usize, edges: &[(usize, usize)]) -> Result<DirectedGraph, ScheduleError> {
    DirectedGraph::new(n, edges).map_err(|e| {
        let (node, edge) = match &e {
            GraphError::SelfLoop(i) => (Some(*i), Some((*i, *i))),
            GraphError::NotStronglyConnected { unreached } => (Some(*unreached), None),
            GraphError::DuplicateEdge(i, j) => (None, Some((*i, *j))),
            _ => (None, None),
        };
        ScheduleError::Violation(Violation {
            clause: Clause::A,
            tick: None,
            node,
            edge,
            detail: e.to_string(),
        })
    })
}

/// Materialized network schedule over ticks `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTrace {
    horizon: usize,
    n: usize,
    l_del: usize,
    l_u: usize,
    l_f: usize,
    /// `wake[k-1][i]`
    wake: Vec<Vec<bool>>,
    /// `outcomes[k-1][edge]`, `Some` exactly when the sender is awake at `k`
    outcomes: Vec<Vec<Option<Outcome>>>,
}

/// Fate of one delivered transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub send: usize,
    pub arrival: usize,
    /// First receiver wake at or after arrival, if within the horizon.
    pub processed_at: Option<usize>,
    /// A newer message on the same link was consumed in the same wake.
    pub superseded: bool,
}

impl Delivery {
    /// Send-to-processing lag for a message that is actually applied.
    pub fn applied_delay(&self) -> Option<usize> {
        match self.processed_at {
            Some(p) if !self.superseded => Some(p - self.send),
            _ => None,
        }
    }
}

impl ScheduleTrace {
    /// Assembles a trace from explicit tables. `outcomes[k-1]` must have one
    /// entry per graph edge.
    pub fn from_parts(
        params: &NetworkParams,
        wake: Vec<Vec<bool>>,
        outcomes: Vec<Vec<Option<Outcome>>>,
    ) -> Result<Self, ScheduleError> {
        let horizon = wake.len();
        if horizon == 0 || outcomes.len() != horizon {
            return Err(ScheduleError::DimensionMismatch(format!(
                "wake table has {} ticks, outcome table {}",
                horizon,
                outcomes.len()
            )));
        }
        let n = wake[0].len();
        let edges = outcomes[0].len();
        if wake.iter().any(|r| r.len() != n) || outcomes.iter().any(|r| r.len() != edges) {
            return Err(ScheduleError::DimensionMismatch("ragged tables".into()));
        }
        Ok(Self {
            horizon,
            n,
            l_del: params.l_del,
            l_u: params.l_u,
            l_f: params.l_f,
            wake,
            outcomes,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Bounds declared when the trace was produced: `(l_del, l_u, l_f)`.
    pub fn declared_bounds(&self) -> (usize, usize, usize) {
        (self.l_del, self.l_u, self.l_f)
    }

    /// Whether `node` wakes at tick `k` (1-based).
    pub fn wakes(&self, k: usize, node: usize) -> bool {
        self.wake[k - 1][node]
    }

    pub fn outcome(&self, k: usize, edge: usize) -> Option<Outcome> {
        self.outcomes[k - 1][edge]
    }

    pub fn set_outcome(&mut self, k: usize, edge: usize, outcome: Option<Outcome>) {
        self.outcomes[k - 1][edge] = outcome;
    }

    pub fn set_wake(&mut self, k: usize, node: usize, awake: bool) {
        self.wake[k - 1][node] = awake;
    }

    /// Generates a schedule with independent wake and loss draws, forcing a
    /// wake after `l_u - 1` consecutive sleeps and a delivery after `l_f`
    /// consecutive losses. Delays are uniform on `1..=l_del`, raised minimally
    /// where needed to keep arrivals in send order.
    pub fn generate<R: Rng + ?Sized>(
        params: &NetworkParams,
        graph: &DirectedGraph,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Self, ScheduleError> {
        params.validate()?;
        if horizon == 0 {
            return Err(ScheduleError::DimensionMismatch(
                "horizon must be at least 1".into(),
            ));
        }
        let n = graph.node_count();
        let m = graph.edge_count();
        let mut sleep_run = vec![0usize; n];
        let mut loss_run = vec![0usize; m];
        let mut last_arrival = vec![0usize; m];
        let mut wake = Vec::with_capacity(horizon);
        let mut outcomes = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            let row: Vec<bool> = (0..n)
                .map(|i| {
                    let awake = sleep_run[i] + 1 >= params.l_u || rng.gen::<f64>() < params.p_w;
                    sleep_run[i] = if awake { 0 } else { sleep_run[i] + 1 };
                    awake
                })
                .collect();
            let mut tick_outcomes = vec![None; m];
            for (e, slot) in tick_outcomes.iter_mut().enumerate() {
                let (from, _) = graph.edge(e);
                if !row[from] {
                    continue;
                }
                let lost = loss_run[e] < params.l_f && rng.gen::<f64>() < params.p_l;
                if lost {
                    loss_run[e] += 1;
                    *slot = Some(Outcome::Lost);
                    continue;
                }
                loss_run[e] = 0;
                let drawn = rng.gen_range(1..=params.l_del);
                // previous arrival is at most k - 1 + l_del, so this never exceeds l_del
                let delay = drawn.max((last_arrival[e] + 1).saturating_sub(k));
                debug_assert!(delay <= params.l_del);
                last_arrival[e] = k + delay;
                *slot = Some(Outcome::Delivered { delay });
            }
            wake.push(row);
            outcomes.push(tick_outcomes);
        }
        Self::from_parts(params, wake, outcomes)
    }

    fn check_dimensions(&self, graph: &DirectedGraph) -> Result<(), ScheduleError> {
        if self.n != graph.node_count() {
            return Err(ScheduleError::DimensionMismatch(format!(
                "trace has {} nodes, graph {}",
                self.n,
                graph.node_count()
            )));
        }
        if self.outcomes[0].len() != graph.edge_count() {
            return Err(ScheduleError::DimensionMismatch(format!(
                "trace has {} links, graph {}",
                self.outcomes[0].len(),
                graph.edge_count()
            )));
        }
        for k in 1..=self.horizon {
            for e in 0..graph.edge_count() {
                let (from, to) = graph.edge(e);
                if self.wakes(k, from) != self.outcome(k, e).is_some() {
                    return Err(ScheduleError::DimensionMismatch(format!(
                        "tick {k} edge ({from}, {to}): transmission record does not match sender wake state"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks every network clause, reporting the earliest violation.
    pub fn validate(
        &self,
        params: &NetworkParams,
        graph: &DirectedGraph,
    ) -> Result<(), ScheduleError> {
        params.validate()?;
        self.check_dimensions(graph)?;
        check_topology(graph.node_count(), graph.edges())?;
        let violation = |clause, tick, node, edge, detail: String| {
            Err(ScheduleError::Violation(Violation {
                clause,
                tick: Some(tick),
                node,
                edge,
                detail,
            }))
        };
        let mut sleep_run = vec![0usize; self.n];
        let mut loss_run = vec![0usize; graph.edge_count()];
        let mut last_arrival: Vec<Option<usize>> = vec![None; graph.edge_count()];
        for k in 1..=self.horizon {
            for (i, run) in sleep_run.iter_mut().enumerate() {
                *run = if self.wakes(k, i) { 0 } else { *run + 1 };
                if *run >= params.l_u {
                    return violation(
                        Clause::C,
                        k,
                        Some(i),
                        None,
                        format!(
                            "agent slept {} consecutive ticks (l_u = {})",
                            run, params.l_u
                        ),
                    );
                }
            }
            for e in 0..graph.edge_count() {
                let edge = Some(graph.edge(e));
                match self.outcome(k, e) {
                    None => {}
                    Some(Outcome::Lost) => {
                        loss_run[e] += 1;
                        if loss_run[e] > params.l_f {
                            return violation(
                                Clause::D,
                                k,
                                None,
                                edge,
                                format!(
                                    "{} consecutive losses (l_f = {})",
                                    loss_run[e], params.l_f
                                ),
                            );
                        }
                    }
                    Some(Outcome::Delivered { delay }) => {
                        loss_run[e] = 0;
                        if delay < 1 || delay > params.l_del {
                            return violation(
                                Clause::B,
                                k,
                                None,
                                edge,
                                format!("delay {delay} outside 1..={}", params.l_del),
                            );
                        }
                        let arrival = k + delay;
                        if let Some(prev) = last_arrival[e] {
                            if arrival <= prev {
                                return violation(
                                    Clause::E,
                                    k,
                                    None,
                                    edge,
                                    format!(
                                        "arrival {arrival} does not follow earlier arrival {prev}"
                                    ),
                                );
                            }
                        }
                        last_arrival[e] = Some(arrival);
                    }
                }
            }
        }
        Ok(())
    }

    /// Wake and arrival-delay indicator tables.
    pub fn tau_indicators(&self) -> TauTable {
        let delays = self
            .outcomes
            .iter()
            .map(|row| {
                row.iter()
                    .map(|o| match o {
                        Some(Outcome::Delivered { delay }) => Some(*delay),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        TauTable {
            wake: self.wake.clone(),
            delays,
        }
    }

    /// Fate of every delivered transmission, indexed `[k-1][edge]`.
    pub fn deliveries(&self, graph: &DirectedGraph) -> Vec<Vec<Option<Delivery>>> {
        let m = graph.edge_count();
        let mut table: Vec<Vec<Option<Delivery>>> = vec![vec![None; m]; self.horizon];
        for e in 0..m {
            let (_, to) = graph.edge(e);
            let mut by_processing: Vec<(usize, usize)> = Vec::new();
            for k in 1..=self.horizon {
                if let Some(Outcome::Delivered { delay }) = self.outcome(k, e) {
                    let arrival = k + delay;
                    let processed_at = (arrival..=self.horizon).find(|&t| self.wakes(t, to));
                    table[k - 1][e] = Some(Delivery {
                        send: k,
                        arrival,
                        processed_at,
                        superseded: false,
                    });
                    if let Some(p) = processed_at {
                        by_processing.push((p, k));
                    }
                }
            }
            // within one processing wake only the newest send counts
            for w in by_processing.windows(2) {
                if w[0].0 == w[1].0 {
                    if let Some(d) = table[w[0].1 - 1][e].as_mut() {
                        d.superseded = true;
                    }
                }
            }
        }
        table
    }

    /// Returns the first `(edge, window_start)` whose window of `window`
    /// ticks contains no delivered send, if any.
    pub fn find_delivery_gap(
        &self,
        graph: &DirectedGraph,
        window: usize,
    ) -> Option<(usize, usize)> {
        if window == 0 || window > self.horizon {
            return None;
        }
        for e in 0..graph.edge_count() {
            let delivered: Vec<bool> = (1..=self.horizon)
                .map(|k| matches!(self.outcome(k, e), Some(Outcome::Delivered { .. })))
                .collect();
            let mut count = delivered[..window].iter().filter(|d| **d).count();
            if count == 0 {
                return Some((e, 1));
            }
            for start in 1..=(self.horizon - window) {
                count -= delivered[start - 1] as usize;
                count += delivered[start + window - 1] as usize;
                if count == 0 {
                    return Some((e, start + 1));
                }
            }
        }
        None
    }

    /// Serializes to the plain-text trace format.
    pub fn to_text(&self, graph: &DirectedGraph) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.horizon, self.n, self.l_del, self.l_u, self.l_f
        );
        for row in &self.wake {
            let line: Vec<&str> = row.iter().map(|&w| if w { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        for (k, row) in self.outcomes.iter().enumerate() {
            for (e, o) in row.iter().enumerate() {
                let (i, j) = graph.edge(e);
                match o {
                    None => {}
                    Some(Outcome::Lost) => out.push_str(&format!("{} {i} {j} L\n", k + 1)),
                    Some(Outcome::Delivered { delay }) => {
                        out.push_str(&format!("{} {i} {j} D {delay}\n", k + 1))
                    }
                }
            }
        }
        out
    }

    /// Parses the plain-text trace format against `graph`.
    pub fn parse(text: &str, graph: &DirectedGraph) -> Result<Self, ScheduleError> {
        let perr = |line: usize, msg: String| ScheduleError::Parse { line, msg };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "empty trace".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| perr(hl, format!("header: {e}")))?;
        let [horizon, n, l_del, l_u, l_f] = nums[..] else {
            return Err(perr(hl, "header must be `K n L_del L_u L_f`".into()));
        };
        if horizon == 0 {
            return Err(perr(hl, "horizon must be at least 1".into()));
        }
        if n != graph.node_count() {
            return Err(ScheduleError::DimensionMismatch(format!(
                "trace has {n} nodes, graph {}",
                graph.node_count()
            )));
        }
        let mut wake = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let (ln, row) = lines
                .next()
                .ok_or_else(|| perr(0, "wake table truncated".into()))?;
            let parsed: Vec<bool> = row
                .split_whitespace()
                .map(|t| match t {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(perr(ln, format!("wake flag `{other}`"))),
                })
                .collect::<Result<_, _>>()?;
            if parsed.len() != n {
                return Err(perr(
                    ln,
                    format!("expected {n} wake flags, got {}", parsed.len()),
                ));
            }
            wake.push(parsed);
        }
        let mut outcomes = vec![vec![None; graph.edge_count()]; horizon];
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |t: &str| {
                t.parse::<usize>()
                    .map_err(|e| perr(ln, format!("`{t}`: {e}")))
            };
            let (k, i, j) = match toks.as_slice() {
                [k, i, j, ..] => (num(k)?, num(i)?, num(j)?),
                _ => return Err(perr(ln, format!("malformed transmission `{line}`"))),
            };
            let outcome = match &toks[3..] {
                ["L"] => Outcome::Lost,
                ["D", d] => Outcome::Delivered { delay: num(d)? },
                _ => return Err(perr(ln, format!("malformed outcome in `{line}`"))),
            };
            if k == 0 || k > horizon {
                return Err(perr(ln, format!("tick {k} outside 1..={horizon}")));
            }
            let e = graph
                .edge_id(i, j)
                .ok_or_else(|| perr(ln, format!("({i}, {j}) is not a graph edge")))?;
            outcomes[k - 1][e] = Some(outcome);
        }
        Ok(Self {
            horizon,
            n,
            l_del,
            l_u,
            l_f,
            wake,
            outcomes,
        })
    }
}

/// Indicator tables: node wake flags and per-link arrival delays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TauTable {
    wake: Vec<Vec<bool>>,
    delays: Vec<Vec<Option<usize>>>,
}

impl TauTable {
    /// 1 when `node` wakes at tick `k`.
    pub fn node(&self, k: usize, node: usize) -> u8 {
        self.wake[k - 1][node] as u8
    }

    /// 1 when the message sent on `edge` at tick `k` arrives after exactly `l` ticks.
    pub fn edge(&self, k: usize, edge: usize, l: usize) -> u8 {
        (self.delays[k - 1][edge] == Some(l)) as u8
    }

    pub fn delay(&self, k: usize, edge: usize) -> Option<usize> {
        self.delays[k - 1][edge]
    }
}
