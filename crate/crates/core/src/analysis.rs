//! Checks of the convergence theory against recorded runs.
//!
//! * [`Theorem2Constants`]: the geometric bound on RAPS consensus error.
//! * [`check_raps_decay`]: tick-wise check of that bound plus a fitted rate.
//! * [`estimate_rate`]: asymptotic belief-ratio decay rate of a learning run.
//! * [`audit_lemma1_recursions`]: rebuilds the virtual-buffer variables of
//!   the linear-process representation from their definitions and checks
//!   every recursion against the recorded protocol states.
//! * [`synchronous_reference`]: plain synchronous push-sum learning, used as
//!   an oracle for the cumulative-sum protocol.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{BeliefTrace, RapsTrace, RunHistory};
use crate::graph::DirectedGraph;
use crate::protocol::LearningNodeState;
use crate::scalar::{log_sum_exp, Real};
use crate::schedule::ScheduleTrace;
use crate::stats::{kl_divergence, HypothesisModel, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("n * alpha^6 >= 1: the consensus bound is vacuous")]
    DegenerateBound,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("window of {span} ticks is too short (horizon {horizon}, fraction {fraction})")]
    WindowTooShort {
        span: usize,
        horizon: usize,
        fraction: f64,
    },
    #[error("run was not recorded in audit mode")]
    HistoryMissing,
    #[error("every hypothesis is optimal; no decaying pair exists")]
    NoSuboptimalHypothesis,
    #[error("tick {tick}, link ({from}, {to}): effective delay {delay} exceeds {bound}")]
    DelayExceedsBound {
        tick: usize,
        from: usize,
        to: usize,
        delay: usize,
        bound: usize,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Constants of the geometric consensus bound, kept in log space because
/// `alpha = n^(-n L_s)` underflows for modest `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Constants {
    pub n: usize,
    pub l_s: usize,
    pub log_alpha: f64,
    /// `ln(n alpha^6)`
    pub log_n_alpha6: f64,
    /// `ln(ln delta)`; finite exactly when `delta > 1`.
    pub log_log_delta: f64,
    /// `ln(-ln lambda)`; finite exactly when `lambda < 1`.
    pub log_neg_log_lambda: f64,
}

impl Theorem2Constants {
    pub fn new(n: usize, l_del: usize, l_u: usize, l_f: usize) -> Result<Self, AnalysisError> {
        if n < 2 || l_del < 1 || l_u < 1 || l_f < 1 {
            return Err(AnalysisError::InvalidInput(format!(
                "need n >= 2 and all bounds >= 1, got n={n}, l_del={l_del}, l_u={l_u}, l_f={l_f}"
            )));
        }
        let l_s = l_u * (l_f + 1) + (l_del + l_u - 1);
        let ln_n = (n as f64).ln();
        let log_alpha = -((n * l_s) as f64) * ln_n;
        let log_x = ln_n + 6.0 * log_alpha;
        if log_x >= 0.0 {
            return Err(AnalysisError::DegenerateBound);
        }
        let x = log_x.exp();
        // ln(-ln(1 - x)) = ln x + x/2 + O(x^2)
        let log_log_delta = if log_x < -30.0 {
            log_x + 0.5 * x
        } else {
            (-(-x).ln_1p()).ln()
        };
        let log_neg_log_lambda = log_log_delta - ((2 * n * l_s) as f64).ln();
        Ok(Self {
            n,
            l_s,
            log_alpha,
            log_n_alpha6: log_x,
            log_log_delta,
            log_neg_log_lambda,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_delta(&self) -> f64 {
        self.log_log_delta.exp()
    }

    pub fn delta(&self) -> f64 {
        self.log_delta().exp()
    }

    pub fn log_lambda(&self) -> f64 {
        -self.log_neg_log_lambda.exp()
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda().exp()
    }

    /// `ln(delta lambda^k ||x0||_1)`.
    pub fn log_bound(&self, k: usize, x0_l1: f64) -> f64 {
        self.log_delta() + k as f64 * self.log_lambda() + x0_l1.ln()
    }
}

pub fn theorem2_constants(
    n: usize,
    l_del: usize,
    l_u: usize,
    l_f: usize,
) -> Result<Theorem2Constants, AnalysisError> {
    Theorem2Constants::new(n, l_del, l_u, l_f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RapsDecayReport {
    pub mean: f64,
    pub max_error: f64,
    pub final_error: f64,
    pub bound_satisfied: bool,
    /// First `(tick, agent)` where the bound fails.
    pub first_violation: Option<(usize, usize)>,
    /// Per-tick contraction factor from a least-squares fit of `ln e`.
    pub empirical_rate: Option<f64>,
    pub fitted_points: usize,
}

/// Checks `|z_i(k) - mean| <= delta lambda^k ||x(0)||_1` at every tick and agent.
pub fn check_raps_decay<T: Real>(
    trace: &RapsTrace<T>,
    constants: &Theorem2Constants,
) -> RapsDecayReport {
    let n = trace.agent_count();
    let x0: Vec<f64> = trace.initial_values().iter().map(|v| v.as_f64()).collect();
    let mean = x0.iter().sum::<f64>() / n as f64;
    let l1: f64 = x0.iter().map(|v| v.abs()).sum();
    let mut max_error: f64 = 0.0;
    let mut first_violation = None;
    let (mut sx, mut sy, mut sxx, mut sxy, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for k in 0..=trace.horizon() {
        for i in 0..n {
            let e = (trace.ratio(k, i).as_f64() - mean).abs();
            max_error = max_error.max(e);
            if e > 0.0 && first_violation.is_none() && e.ln() > constants.log_bound(k, l1) {
                first_violation = Some((k, i));
            }
            if e > 1e-13 {
                let (t, l) = (k as f64, e.ln());
                sx += t;
                sy += l;
                sxx += t * t;
                sxy += t * l;
                count += 1;
            }
        }
    }
    let denom = count as f64 * sxx - sx * sx;
    let empirical_rate =
        (count >= 2 && denom > 0.0).then(|| ((count as f64 * sxy - sx * sy) / denom).exp());
    let final_error = (0..n)
        .map(|i| (trace.ratio(trace.horizon(), i).as_f64() - mean).abs())
        .fold(0.0, f64::max);
    RapsDecayReport {
        mean,
        max_error,
        final_error,
        bound_satisfied: first_violation.is_none(),
        first_violation,
        empirical_rate,
        fitted_points: count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRate {
    pub agent: usize,
    /// Non-optimal hypothesis.
    pub theta_v: usize,
    /// Optimal hypothesis.
    pub theta_w: usize,
    /// `[LR(K) - LR(start)] / (K - start)` with `LR = log(mu_v / mu_w)`.
    pub slope: f64,
    /// `-(1/n) sum_i D_KL(P^i_w || P^i_v)`.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub window_start: usize,
    pub window_end: usize,
    pub rates: Vec<PairRate>,
    /// `-(1/n) * gap`.
    pub bound: f64,
    /// Whether every non-optimal belief stayed below 0.5 inside the window.
    pub settled: bool,
}

impl RateEstimate {
    /// Largest relative deviation of a slope from its predicted rate.
    pub fn max_relative_error(&self) -> f64 {
        self.rates
            .iter()
            .map(|r| ((r.slope - r.predicted) / r.predicted).abs())
            .fold(0.0, f64::max)
    }
}

/// Endpoint estimate of the belief log-ratio decay rate over the trailing
/// `window` fraction of the run.
pub fn estimate_rate<T: Real>(
    trace: &BeliefTrace<T>,
    model: &HypothesisModel<T>,
    window: f64,
) -> Result<RateEstimate, AnalysisError> {
    let horizon = trace.horizon();
    if !(window > 0.0 && window <= 1.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "window fraction {window} outside (0, 1]"
        )));
    }
    let start = ((1.0 - window) * horizon as f64).round() as usize;
    let span = horizon.saturating_sub(start);
    if span < 2 {
        return Err(AnalysisError::WindowTooShort {
            span,
            horizon,
            fraction: window,
        });
    }
    if model.agent_count() != trace.agent_count()
        || model.hypothesis_count() != trace.hypothesis_count()
    {
        return Err(AnalysisError::InvalidInput(
            "model and trace dimensions differ".into(),
        ));
    }
    let objective = model.objective()?;
    let gap = objective.gap.ok_or(AnalysisError::NoSuboptimalHypothesis)?;
    let n = model.agent_count();
    let m = model.hypothesis_count();
    let mut rates = Vec::new();
    for v in (0..m).filter(|&t| !objective.is_optimal(t)) {
        for &w in &objective.optimal {
            let mut kl_sum = 0.0;
            for i in 0..n {
                kl_sum += kl_divergence(model.likelihood(i, w), model.likelihood(i, v))?.as_f64();
            }
            let predicted = -kl_sum / n as f64;
            for i in 0..n {
                let lr = |k: usize| {
                    let lb = trace.log_beliefs(k, i);
                    (lb[v] - lb[w]).as_f64()
                };
                rates.push(PairRate {
                    agent: i,
                    theta_v: v,
                    theta_w: w,
                    slope: (lr(horizon) - lr(start)) / span as f64,
                    predicted,
                });
            }
        }
    }
    let settled = (start..=horizon).all(|k| {
        (0..n).all(|i| {
            (0..m)
                .filter(|&t| !objective.is_optimal(t))
                .all(|t| trace.belief(k, i, t).as_f64() < 0.5)
        })
    });
    Ok(RateEstimate {
        window_start: start,
        window_end: horizon,
        rates,
        bound: -gap.as_f64() / n as f64,
        settled,
    })
}

/// Largest residual of each audited identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AuditReport {
    /// Cumulative log-ratio mass increments.
    pub phi_increment: f64,
    /// Belief log-ratio update, including the observation term.
    pub belief_update: f64,
    /// Undispatched-mass recursion against its closed form.
    pub upsilon: f64,
    /// Buffer outflow against the receiver's mirror increment.
    pub buffer: f64,
    /// Buffers plus undispatched mass against sender-minus-mirror totals.
    pub pending: f64,
    /// The same identities for the push-sum weights.
    pub weight: f64,
    pub ticks: usize,
    pub max_residual: f64,
}

impl AuditReport {
    fn finish(mut self) -> Self {
        self.max_residual = [
            self.phi_increment,
            self.belief_update,
            self.upsilon,
            self.buffer,
            self.pending,
            self.weight,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        self
    }
}

/// Per-link reconstruction of the virtual buffers for one scalar quantity.
#[derive(Debug, Clone)]
struct LinkBuffers {
    /// `levels[l - 1]` is processed `l` ticks from now.
    levels: Vec<f64>,
    /// Mass dispatched by the sender but not yet put on the link.
    undispatched: f64,
    /// Sender cumulative total at the last dispatch.
    last_dispatched: f64,
}

impl LinkBuffers {
    fn new(depth: usize) -> Self {
        Self {
            levels: vec![0.0; depth],
            undispatched: 0.0,
            last_dispatched: 0.0,
        }
    }

    /// Advances one tick; returns the mass processed by the receiver now.
    fn shift(&mut self) -> f64 {
        let out = self.levels[0];
        self.levels.rotate_left(1);
        *self.levels.last_mut().expect("depth >= 1") = 0.0;
        out
    }

    fn push(&mut self, share: f64, delay: Option<usize>, sender_total: f64) {
        let pending = self.undispatched + share;
        match delay {
            Some(l) => {
                self.levels[l - 1] += pending;
                self.undispatched = 0.0;
                self.last_dispatched = sender_total;
            }
            None => self.undispatched = pending,
        }
    }

    fn in_transit(&self) -> f64 {
        self.levels.iter().sum::<f64>() + self.undispatched
    }
}

struct NodeView {
    y: f64,
    log_ratio: f64,
    phi_y: f64,
    phi_ratio: f64,
}

fn view<T: Real>(s: &LearningNodeState<T>, v: usize, w: usize) -> NodeView {
    NodeView {
        y: s.y.as_f64(),
        log_ratio: (s.log_mu[v] - s.log_mu[w]).as_f64(),
        phi_y: s.phi_y.as_f64(),
        phi_ratio: (s.log_phi_mu[v] - s.log_phi_mu[w]).as_f64(),
    }
}

fn mirror_view<T: Real>(s: &LearningNodeState<T>, from: usize, v: usize, w: usize) -> (f64, f64) {
    let r = s
        .mirrors
        .iter()
        .find(|r| r.from == from)
        .expect("mirror per in-edge");
    (
        r.rho_y.as_f64(),
        (r.log_rho_mu[v] - r.log_rho_mu[w]).as_f64(),
    )
}

/// Audits the linear-process identities for the hypothesis pair
/// `(theta_v, theta_w)` along a recorded run.
///
/// Effective delays are measured from send to the receiver's processing
/// wake, with the link bound `l_del + l_u - 1` taken from the trace header.
/// Observation terms only enter on wake ticks.
pub fn audit_lemma1_recursions<T: Real>(
    graph: &DirectedGraph,
    model: &HypothesisModel<T>,
    trace: &ScheduleTrace,
    history: Option<&RunHistory<T>>,
    theta_v: usize,
    theta_w: usize,
) -> Result<AuditReport, AnalysisError> {
    let history = history.ok_or(AnalysisError::HistoryMissing)?;
    let horizon = trace.horizon();
    if history.states.len() != horizon + 1 || history.observations.len() != horizon {
        return Err(AnalysisError::HistoryMissing);
    }
    let m = model.hypothesis_count();
    if theta_v >= m || theta_w >= m || theta_v == theta_w {
        return Err(AnalysisError::InvalidInput(format!(
            "bad hypothesis pair ({theta_v}, {theta_w})"
        )));
    }
    let n = graph.node_count();
    let (l_del, l_u, _) = trace.declared_bounds();
    let depth = l_del + l_u - 1;
    let deliveries = trace.deliveries(graph);
    let mut mu_links = vec![LinkBuffers::new(depth); graph.edge_count()];
    let mut y_links = vec![LinkBuffers::new(depth); graph.edge_count()];
    let mut report = AuditReport {
        ticks: horizon,
        ..AuditReport::default()
    };
    let bump =
        |slot: &mut f64, r: f64| *slot = slot.max(if r.is_nan() { f64::INFINITY } else { r });

    for k in 1..=horizon {
        let before = &history.states[k - 1];
        let after = &history.states[k];
        let prev: Vec<NodeView> = before.iter().map(|s| view(s, theta_v, theta_w)).collect();
        let next: Vec<NodeView> = after.iter().map(|s| view(s, theta_v, theta_w)).collect();

        let mut share_mu = vec![0.0; n];
        let mut share_y = vec![0.0; n];
        for i in 0..n {
            if trace.wakes(k, i) {
                let d1 = (graph.out_degree(i) + 1) as f64;
                share_mu[i] = prev[i].y * prev[i].log_ratio / d1;
                share_y[i] = prev[i].y / d1;
            }
            bump(
                &mut report.phi_increment,
                (next[i].phi_ratio - prev[i].phi_ratio - share_mu[i]).abs(),
            );
            bump(
                &mut report.weight,
                (next[i].phi_y - prev[i].phi_y - share_y[i]).abs(),
            );
        }

        let mut inflow_mu = vec![0.0; n];
        let mut inflow_y = vec![0.0; n];
        for e in 0..graph.edge_count() {
            let (i, j) = graph.edge(e);
            let (rho_y0, rho_mu0) = mirror_view(&before[j], i, theta_v, theta_w);
            let (rho_y1, rho_mu1) = mirror_view(&after[j], i, theta_v, theta_w);

            let out_mu = mu_links[e].shift();
            let out_y = y_links[e].shift();
            inflow_mu[j] += out_mu;
            inflow_y[j] += out_y;
            bump(&mut report.buffer, (rho_mu1 - rho_mu0 - out_mu).abs());
            bump(&mut report.weight, (rho_y1 - rho_y0 - out_y).abs());

            let delay = if trace.wakes(k, i) {
                deliveries[k - 1][e].and_then(|d| d.applied_delay())
            } else {
                None
            };
            if let Some(l) = delay {
                if l > depth {
                    return Err(AnalysisError::DelayExceedsBound {
                        tick: k,
                        from: i,
                        to: j,
                        delay: l,
                        bound: depth,
                    });
                }
            }
            mu_links[e].push(share_mu[i], delay, next[i].phi_ratio);
            y_links[e].push(share_y[i], delay, next[i].phi_y);

            bump(
                &mut report.upsilon,
                (mu_links[e].undispatched - (next[i].phi_ratio - mu_links[e].last_dispatched))
                    .abs(),
            );
            bump(
                &mut report.weight,
                (y_links[e].undispatched - (next[i].phi_y - y_links[e].last_dispatched)).abs(),
            );
            bump(
                &mut report.pending,
                (mu_links[e].in_transit() - (next[i].phi_ratio - rho_mu1)).abs(),
            );
            bump(
                &mut report.weight,
                (y_links[e].in_transit() - (next[i].phi_y - rho_y1)).abs(),
            );
        }

        for j in 0..n {
            let psi_prev = prev[j].y * prev[j].log_ratio;
            let psi_next = next[j].y * next[j].log_ratio;
            let (expected_psi, expected_y) = if trace.wakes(k, j) {
                let x = history.observations[k - 1][j].ok_or(AnalysisError::HistoryMissing)?;
                let llr = (model.log_likelihood(j, theta_v, x)?
                    - model.log_likelihood(j, theta_w, x)?)
                .as_f64();
                (share_mu[j] + inflow_mu[j] + llr, share_y[j] + inflow_y[j])
            } else {
                (psi_prev + inflow_mu[j], prev[j].y + inflow_y[j])
            };
            bump(&mut report.belief_update, (psi_next - expected_psi).abs());
            bump(&mut report.weight, (next[j].y - expected_y).abs());
        }
    }
    Ok(report.finish())
}

/// Trajectories of the synchronous reference recursion; index `[k][agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRun<T> {
    pub log_beliefs: Vec<Vec<Vec<T>>>,
    pub weights: Vec<Vec<T>>,
}

/// Synchronous push-sum learning with one-tick links, coded directly:
///
/// `y_i(k) = y_i(k-1)/(d_i+1) + sum_{j in N_i^-} y_j(k-2)/(d_j+1)`
///
/// and the same mixing applied to the mass-weighted log-beliefs, followed by
/// the local likelihood and normalization. Every agent observes
/// `observations[i][k-1]` at tick `k`.
pub fn synchronous_reference<T: Real>(
    graph: &DirectedGraph,
    model: &HypothesisModel<T>,
    observations: &[Vec<T>],
    horizon: usize,
) -> Result<ReferenceRun<T>, AnalysisError> {
    let n = graph.node_count();
    let m = model.hypothesis_count();
    if model.agent_count() != n || observations.len() != n {
        return Err(AnalysisError::InvalidInput("agent counts differ".into()));
    }
    if let Some(i) = observations.iter().position(|o| o.len() < horizon) {
        return Err(AnalysisError::InvalidInput(format!(
            "observation tape {i} shorter than horizon"
        )));
    }
    let mut y = vec![T::one(); n];
    let mut log_mu = vec![vec![-T::from_count(m).ln(); m]; n];
    let mut out = ReferenceRun {
        log_beliefs: vec![log_mu.clone()],
        weights: vec![y.clone()],
    };
    // shares sent on the previous tick, in flight for one tick
    let mut sent_y = vec![T::zero(); n];
    let mut sent_mass = vec![vec![T::zero(); m]; n];
    for k in 1..=horizon {
        let own_y: Vec<T> = (0..n)
            .map(|i| y[i] / T::from_count(graph.out_degree(i) + 1))
            .collect();
        let own_mass: Vec<Vec<T>> = (0..n)
            .map(|i| log_mu[i].iter().map(|&l| own_y[i] * l).collect())
            .collect();
        for i in 0..n {
            let mut y_new = own_y[i];
            let mut mass = own_mass[i].clone();
            for j in graph.in_neighbors(i) {
                y_new += sent_y[j];
                for t in 0..m {
                    mass[t] += sent_mass[j][t];
                }
            }
            let x = observations[i][k - 1];
            for (t, acc) in mass.iter_mut().enumerate() {
                *acc = (*acc + model.log_likelihood(i, t, x)?) / y_new;
            }
            let z = log_sum_exp(&mass);
            log_mu[i] = mass.into_iter().map(|l| l - z).collect();
            y[i] = y_new;
        }
        sent_y = own_y;
        sent_mass = own_mass;
        out.log_beliefs.push(log_mu.clone());
        out.weights.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        run_learning, simulate_learning, simulate_raps, Fault, ObservationSource, RunOptions,
    };
    use crate::graph::{standard_topology, Topology};
    use crate::rng::{stream, Stream};
    use crate::schedule::NetworkParams;
    use crate::stats::Distribution;

    #[test]
    fn constants_smallest_case() {
        let c = theorem2_constants(2, 1, 1, 1).unwrap();
        assert_eq!(c.l_s, 3);
        assert!((c.alpha() / 0.015625 - 1.0).abs() < 1e-14);
        let x = 2.0 * 2f64.powi(-36);
        assert!((c.log_n_alpha6.exp() - x).abs() < 1e-24);
        assert!(((c.delta() - 1.0) - x).abs() < 1e-15);
        let one_minus_lambda = x / 12.0;
        assert!(((1.0 - c.lambda()) - one_minus_lambda).abs() / one_minus_lambda < 1e-3);
        assert!((-c.log_lambda() - one_minus_lambda).abs() / one_minus_lambda < 1e-9);
    }

    #[test]
    fn constants_stay_strict_when_underflowing() {
        for n in 2..=10 {
            for l in 1..=10 {
                let c = theorem2_constants(n, l, l, l).unwrap();
                assert!(c.log_log_delta.is_finite());
                assert!(c.log_neg_log_lambda.is_finite());
                assert!(c.log_lambda() < 0.0 || c.log_neg_log_lambda < -700.0);
            }
        }
        assert!(theorem2_constants(1, 1, 1, 1).is_err());
    }

    #[test]
    fn lambda_grows_with_harsher_networks() {
        let base = theorem2_constants(3, 2, 2, 2).unwrap().log_neg_log_lambda;
        for c in [(4, 2, 2, 2), (3, 3, 2, 2), (3, 2, 3, 2), (3, 2, 2, 3)] {
            assert!(
                theorem2_constants(c.0, c.1, c.2, c.3)
                    .unwrap()
                    .log_neg_log_lambda
                    < base
            );
        }
    }

    #[test]
    fn raps_cycle_meets_bound_and_converges() {
        let g = standard_topology(Topology::Cycle, 4).unwrap();
        let params = NetworkParams::synchronous();
        let (_, out) = simulate_raps(
            &g,
            &params,
            250,
            0,
            &[1.0f64, 2.0, 3.0, 4.0],
            &RunOptions::default(),
        )
        .unwrap();
        let c = theorem2_constants(4, 1, 1, 1).unwrap();
        let r = check_raps_decay(&out, &c);
        assert!(r.bound_satisfied);
        assert!(r.final_error < 1e-9, "{}", r.final_error);
        assert!(r.empirical_rate.unwrap() < 1.0);
    }

    #[test]
    fn raps_constant_start_has_no_error() {
        // a power of two scales x = c * y exactly through every rounding
        let g = standard_topology(Topology::Star, 3).unwrap();
        let (_, out) = simulate_raps(
            &g,
            &NetworkParams::synchronous(),
            30,
            0,
            &[2.0f64; 3],
            &RunOptions::default(),
        )
        .unwrap();
        let r = check_raps_decay(&out, &theorem2_constants(3, 1, 1, 1).unwrap());
        assert_eq!(r.max_error, 0.0);
        assert!(r.bound_satisfied);
        assert_eq!(r.empirical_rate, None);
    }

    fn coin_model() -> HypothesisModel<f64> {
        let b = |p| Distribution::bernoulli(p).unwrap();
        HypothesisModel::new(
            vec![b(0.3), b(0.6)],
            vec![vec![b(0.3), b(0.5)], vec![b(0.6), b(0.5)]],
            1e-8,
        )
        .unwrap()
    }

    #[test]
    fn window_too_short() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let (_, run) = simulate_learning(
            &g,
            &coin_model(),
            &NetworkParams::synchronous(),
            10,
            0,
            &RunOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            estimate_rate(&run.beliefs, &coin_model(), 0.1),
            Err(AnalysisError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn audit_requires_history() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let (trace, run) = simulate_learning(
            &g,
            &coin_model(),
            &NetworkParams::synchronous(),
            10,
            0,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(
            audit_lemma1_recursions(&g, &coin_model(), &trace, run.history.as_ref(), 1, 0),
            Err(AnalysisError::HistoryMissing)
        );
    }

    #[test]
    fn audit_clean_and_faulty() {
        let g = standard_topology(Topology::Star, 2).unwrap();
        let params = NetworkParams {
            l_del: 2,
            l_u: 3,
            l_f: 2,
            p_w: 0.7,
            p_l: 0.3,
        };
        let audit = RunOptions {
            record_history: true,
            ..RunOptions::default()
        };
        let (trace, run) = simulate_learning(&g, &coin_model(), &params, 300, 5, &audit).unwrap();
        let clean =
            audit_lemma1_recursions(&g, &coin_model(), &trace, run.history.as_ref(), 1, 0).unwrap();
        assert!(clean.max_residual < 1e-10, "{clean:?}");

        let faulty = RunOptions {
            fault: Some(Fault { tick: 100, node: 1 }),
            ..audit
        };
        let run = run_learning(
            &g,
            &coin_model(),
            &trace,
            ObservationSource::Sampled { seed: 5 },
            &faulty,
        )
        .unwrap();
        let bad =
            audit_lemma1_recursions(&g, &coin_model(), &trace, run.history.as_ref(), 1, 0).unwrap();
        assert!(bad.max_residual > 1e-3, "{bad:?}");
    }

    #[test]
    fn reference_single_hypothesis() {
        let g = standard_topology(Topology::Path, 2).unwrap();
        let b = |p| Distribution::bernoulli(p).unwrap();
        let model =
            HypothesisModel::new(vec![b(0.5), b(0.5)], vec![vec![b(0.4)], vec![b(0.6)]], 1e-8)
                .unwrap();
        let tapes = vec![vec![1.0; 20], vec![0.0; 20]];
        let r = synchronous_reference(&g, &model, &tapes, 20).unwrap();
        assert!(r.log_beliefs.iter().flatten().flatten().all(|&l| l == 0.0));
    }

    #[test]
    fn reference_matches_protocol_on_a_path() {
        let g = standard_topology(Topology::Path, 3).unwrap();
        let b = |p| Distribution::bernoulli(p).unwrap();
        let model = HypothesisModel::new(
            vec![b(0.3), b(0.6), b(0.5)],
            vec![
                vec![b(0.3), b(0.5)],
                vec![b(0.6), b(0.5)],
                vec![b(0.4), b(0.5)],
            ],
            1e-8,
        )
        .unwrap();
        let mut rng = stream(3, Stream::Aux(0));
        let tapes: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..100).map(|_| model.sample(i, &mut rng)).collect())
            .collect();
        let trace = ScheduleTrace::generate(
            &NetworkParams::synchronous(),
            &g,
            100,
            &mut stream(0, Stream::Schedule),
        )
        .unwrap();
        let run = run_learning(
            &g,
            &model,
            &trace,
            ObservationSource::Tape(&tapes),
            &RunOptions::default(),
        )
        .unwrap();
        let reference = synchronous_reference(&g, &model, &tapes, 100).unwrap();
        for k in 0..=100 {
            for i in 0..3 {
                for t in 0..2 {
                    let a = run.beliefs.belief(k, i, t);
                    let b = reference.log_beliefs[k][i][t].exp();
                    assert!((a - b).abs() < 1e-12, "k={k} i={i} t={t}: {a} vs {b}");
                }
            }
        }
    }
}
