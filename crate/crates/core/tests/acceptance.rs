//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use robust_pushsum::analysis::{
    audit_lemma1_recursions, check_raps_decay, estimate_rate, synchronous_reference,
    theorem2_constants,
};
use robust_pushsum::cli::{self, Experiment, Mode, PRESET_NAMES};
use robust_pushsum::engine::{
    run_learning, simulate_learning, simulate_raps, Fault, ObservationSource, RunOptions,
};
use robust_pushsum::graph::{
    random_strongly_connected, standard_topology, DirectedGraph, Topology,
};
use robust_pushsum::protocol::LearningNodeState;
use robust_pushsum::rng::{stream, Stream};
use robust_pushsum::schedule::{
    check_topology, Clause, NetworkParams, Outcome, ScheduleError, ScheduleTrace,
};
use robust_pushsum::stats::{Distribution, HypothesisModel};

struct Verdict {
    passed: bool,
    detail: String,
}

type Criterion = fn() -> Verdict;

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn presets() -> Vec<Experiment> {
    PRESET_NAMES
        .iter()
        .map(|n| cli::preset(n).unwrap().validate().unwrap())
        .collect()
}

const TOPOLOGIES: [Topology; 3] = [Topology::Star, Topology::Path, Topology::Cycle];

fn bernoulli_model(truths: &[f64], alternative: f64) -> HypothesisModel<f64> {
    let b = |p| Distribution::bernoulli(p).unwrap();
    HypothesisModel::new(
        truths.iter().map(|&p| b(p)).collect(),
        truths.iter().map(|&p| vec![b(p), b(alternative)]).collect(),
        1e-8,
    )
    .unwrap()
}

/// Closed-form Bernoulli KL divergence.
fn kl_bernoulli(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn random_params<R: Rng>(rng: &mut R) -> NetworkParams {
    let l_u = rng.gen_range(1..=5);
    NetworkParams {
        l_del: rng.gen_range(1..=4),
        l_u,
        l_f: rng.gen_range(1..=4),
        p_w: if l_u == 1 {
            1.0
        } else {
            rng.gen_range(0.2..=1.0)
        },
        p_l: rng.gen_range(0.0..0.5),
    }
}

fn mass_conservation() -> Verdict {
    let mut worst_ratio: f64 = 0.0;
    let mut runs = 0;
    for exp in presets() {
        let n = exp.graph.node_count() as f64;
        let cfg = &exp.config;
        let model = exp.model.as_ref().unwrap();
        let (_, run) = simulate_learning(
            &exp.graph,
            model,
            &cfg.params,
            cfg.horizon,
            cfg.seed,
            &RunOptions::default(),
        )
        .unwrap();
        let (_, raps) = simulate_raps(
            &exp.graph,
            &cfg.params,
            cfg.horizon,
            cfg.seed,
            exp.x0.as_ref().unwrap(),
            &RunOptions::default(),
        )
        .unwrap();
        worst_ratio = worst_ratio
            .max(run.beliefs.max_residual() / n)
            .max(raps.max_residual() / n);
        runs += 2;
    }
    let mut rng = stream(2024, Stream::Aux(1));
    for case in 0..20 {
        let n = rng.gen_range(2..=8);
        let g = random_strongly_connected(n, rng.gen_range(0.0..0.5), &mut rng).unwrap();
        let params = random_params(&mut rng);
        let truths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
        let model = bernoulli_model(&truths, rng.gen_range(0.1..0.9));
        let (_, run) = simulate_learning(
            &g,
            &model,
            &params,
            2000,
            100 + case,
            &RunOptions::default(),
        )
        .unwrap();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (_, raps) =
            simulate_raps(&g, &params, 2000, 100 + case, &x0, &RunOptions::default()).unwrap();
        worst_ratio = worst_ratio
            .max(run.beliefs.max_residual() / n as f64)
            .max(raps.max_residual() / n as f64);
        runs += 2;
    }
    verdict(
        worst_ratio <= 1e-12,
        format!("{runs} runs, max residual / n = {worst_ratio:.3e} (tol 1e-12)"),
    )
}

fn synchronous_oracle() -> Verdict {
    let exp = cli::preset("star-hi").unwrap().validate().unwrap();
    let model = exp.model.unwrap();
    let horizon = 200;
    let params = NetworkParams::synchronous();
    let mut worst: f64 = 0.0;
    for (t, kind) in TOPOLOGIES.into_iter().enumerate() {
        let g = standard_topology(kind, 4).unwrap();
        let tape: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut rng = stream(77 + t as u64, Stream::Observations(i));
                (0..horizon).map(|_| model.sample(i, &mut rng)).collect()
            })
            .collect();
        let trace = ScheduleTrace::generate(&params, &g, horizon, &mut stream(0, Stream::Schedule))
            .unwrap();
        let run = run_learning(
            &g,
            &model,
            &trace,
            ObservationSource::Tape(&tape),
            &RunOptions::default(),
        )
        .unwrap();
        let reference = synchronous_reference(&g, &model, &tape, horizon).unwrap();
        for k in 0..=horizon {
            for i in 0..4 {
                for th in 0..model.hypothesis_count() {
                    let a = run.beliefs.belief(k, i, th);
                    let b = reference.log_beliefs[k][i][th].exp();
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    verdict(
        worst <= 1e-10,
        format!("star/path/cycle, K=200, max |belief diff| = {worst:.3e} (tol 1e-10)"),
    )
}

fn bayesian_reduction() -> Verdict {
    let mut rng = stream(5, Stream::Aux(2));
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=5);
        let s = rng.gen_range(2..=4);
        let table: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let w: Vec<f64> = (0..s).map(|_| rng.gen_range(0.05..1.0)).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|v| v / z).collect()
            })
            .collect();
        let len = rng.gen_range(1..=100);
        let mut node = LearningNodeState::<f64>::new(0, 0, &[], m);
        let mut posterior = vec![1.0 / m as f64; m];
        for tick in 1..=len {
            let x = rng.gen_range(0..s);
            let ll: Vec<f64> = table.iter().map(|row| row[x].ln()).collect();
            node.wake(&[], &ll, tick).unwrap();
            for (p, row) in posterior.iter_mut().zip(&table) {
                *p *= row[x];
            }
            let z: f64 = posterior.iter().sum();
            posterior.iter_mut().for_each(|p| *p /= z);
            for (a, b) in node.beliefs().iter().zip(&posterior) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(
        worst <= 1e-12,
        format!("1000 tapes, max |belief - posterior| = {worst:.3e} (tol 1e-12)"),
    )
}

fn recursion_audit() -> Verdict {
    let mut worst_clean: f64 = 0.0;
    let mut worst_fault = f64::INFINITY;
    for name in ["star-hi", "path-lo"] {
        let exp = cli::preset(name).unwrap().validate().unwrap();
        let model = exp.model.as_ref().unwrap();
        let objective = model.objective().unwrap();
        let pairs: Vec<(usize, usize)> = (0..model.hypothesis_count())
            .filter(|&v| !objective.is_optimal(v))
            .flat_map(|v| objective.optimal.iter().map(move |&w| (v, w)))
            .collect();
        for fault in [None, Some(Fault { tick: 100, node: 0 })] {
            let opts = RunOptions {
                record_history: true,
                fault,
            };
            let (trace, run) = simulate_learning(
                &exp.graph,
                model,
                &exp.config.params,
                500,
                exp.config.seed,
                &opts,
            )
            .unwrap();
            let residual = pairs
                .iter()
                .map(|&(v, w)| {
                    audit_lemma1_recursions(&exp.graph, model, &trace, run.history.as_ref(), v, w)
                        .unwrap()
                        .max_residual
                })
                .fold(0.0, f64::max);
            match fault {
                None => worst_clean = worst_clean.max(residual),
                Some(_) => worst_fault = worst_fault.min(residual),
            }
        }
    }
    verdict(
        worst_clean <= 1e-9 && worst_fault > 1e-3,
        format!("star-hi, path-lo at K=500: clean {worst_clean:.3e} (tol 1e-9), faulted {worst_fault:.3e} (> 1e-3)"),
    )
}

fn raps_bound() -> Verdict {
    let mut all_hold = true;
    let mut runs = 0;
    let mut star_lo_err: f64 = 0.0;
    for exp in presets() {
        let cfg = &exp.config;
        let x0 = exp.x0.as_ref().unwrap();
        let consts =
            theorem2_constants(4, cfg.params.l_del, cfg.params.l_u, cfg.params.l_f).unwrap();
        for seed in 0..5 {
            let (_, trace) = simulate_raps(
                &exp.graph,
                &cfg.params,
                2000,
                seed,
                x0,
                &RunOptions::default(),
            )
            .unwrap();
            all_hold &= check_raps_decay(&trace, &consts).bound_satisfied;
            runs += 1;
            if cfg.name.as_deref() == Some("star-lo") {
                for i in 0..4 {
                    star_lo_err = star_lo_err.max((trace.ratio(2000, i) - 2.5).abs());
                }
            }
        }
    }
    verdict(
        all_hold && star_lo_err <= 1e-8,
        format!("bound held on {runs} runs: {all_hold}; star-lo max |z(2000) - 2.5| = {star_lo_err:.3e} (tol 1e-8)"),
    )
}

fn concentration() -> Verdict {
    let horizon = 5000;
    let mut hits = 0;
    let mut total = 0;
    let mut misses = Vec::new();
    for exp in presets() {
        let model = exp.model.as_ref().unwrap();
        for seed in 0..5 {
            let (_, run) = simulate_learning(
                &exp.graph,
                model,
                &exp.config.params,
                horizon,
                seed,
                &RunOptions::default(),
            )
            .unwrap();
            let min = (0..4)
                .map(|i| run.beliefs.belief(horizon, i, 2))
                .fold(1.0, f64::min);
            total += 1;
            if min > 0.95 {
                hits += 1;
            } else {
                misses.push(format!("{}#{seed}:{min:.3}", exp.config.display_name()));
            }
        }
    }
    let mut detail =
        format!("{hits}/{total} runs with every agent's theta_3 belief > 0.95 at K=5000 (need 28)");
    if !misses.is_empty() {
        detail += &format!("; misses {}", misses.join(", "));
    }
    verdict(hits >= 28, detail)
}

/// Average slope across agents of the single (v, w) pair.
fn mean_slope(
    g: &DirectedGraph,
    model: &HypothesisModel<f64>,
    horizon: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let (_, run) = simulate_learning(
        g,
        model,
        &NetworkParams::synchronous(),
        horizon,
        seed,
        &RunOptions::default(),
    )
    .unwrap();
    let est = estimate_rate(&run.beliefs, model, 0.5).unwrap();
    let slopes: Vec<f64> = est.rates.iter().map(|r| r.slope).collect();
    (
        slopes.iter().sum::<f64>() / slopes.len() as f64,
        est.rates.iter().map(|r| r.predicted).collect(),
    )
}

fn rate() -> Verdict {
    let truths = [0.3, 0.6];
    let alt = 0.5;
    let model = bernoulli_model(&truths, alt);
    let target = -truths.iter().map(|&p| kl_bernoulli(p, alt)).sum::<f64>() / 2.0;
    let g = standard_topology(Topology::Path, 2).unwrap();
    let mut good = 0;
    let mut errs = Vec::new();
    let mut predicted_ok = true;
    for seed in 0..5 {
        let (_, run) = simulate_learning(
            &g,
            &model,
            &NetworkParams::synchronous(),
            50_000,
            seed,
            &RunOptions::default(),
        )
        .unwrap();
        let est = estimate_rate(&run.beliefs, &model, 0.5).unwrap();
        let worst = est
            .rates
            .iter()
            .map(|r| ((r.slope - target) / target).abs())
            .fold(0.0, f64::max);
        predicted_ok &= est
            .rates
            .iter()
            .all(|r| (r.predicted - target).abs() <= 1e-12 * target.abs());
        if worst <= 0.15 && est.rates.iter().all(|r| r.slope < 0.0) {
            good += 1;
        }
        errs.push(format!("{worst:.3}"));
    }
    verdict(
        good >= 4 && predicted_ok,
        format!(
            "target {target:.5}, per-seed worst relative error [{}], {good}/5 within 0.15 (need 4); library prediction agrees: {predicted_ok}",
            errs.join(", ")
        ),
    )
}

fn network_independence() -> Verdict {
    let model = bernoulli_model(&[0.3, 0.6, 0.4, 0.7], 0.5);
    let horizon = 50_000;
    let seeds = 0..5u64;
    // slopes[t][s]
    let slopes: Vec<Vec<f64>> = TOPOLOGIES
        .iter()
        .map(|&kind| {
            let g = standard_topology(kind, 4).unwrap();
            seeds
                .clone()
                .map(|s| mean_slope(&g, &model, horizon, s).0)
                .collect()
        })
        .collect();
    let across_topologies = seeds
        .clone()
        .map(|s| {
            let col: Vec<f64> = slopes.iter().map(|row| row[s as usize]).collect();
            col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - col.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let within_topology = slopes
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    verdict(
        across_topologies < within_topology,
        format!(
            "max across-topology range {across_topologies:.3e} < min across-seed std {within_topology:.3e}"
        ),
    )
}

fn violation_clause(r: Result<(), ScheduleError>) -> Option<Clause> {
    match r {
        Err(ScheduleError::Violation(v)) => Some(v.clause),
        _ => None,
    }
}

fn clause_fixtures() -> Vec<(Clause, Option<Clause>)> {
    let path = standard_topology(Topology::Path, 2).unwrap();
    let all_awake = |k: usize| vec![vec![true, true]; k];
    let delivered = |d| Some(Outcome::Delivered { delay: d });
    let mut found = Vec::new();

    let a = match check_topology(3, &[(0, 1), (1, 0), (1, 2)]) {
        Err(ScheduleError::Violation(v)) => Some(v.clause),
        _ => None,
    };
    found.push((Clause::A, a));

    let p = NetworkParams {
        l_del: 2,
        l_u: 1,
        l_f: 1,
        p_w: 1.0,
        p_l: 0.0,
    };
    let t = ScheduleTrace::from_parts(
        &p,
        all_awake(2),
        vec![vec![delivered(3), delivered(1)], vec![delivered(1); 2]],
    )
    .unwrap();
    found.push((Clause::B, violation_clause(t.validate(&p, &path))));

    let p = NetworkParams {
        l_del: 1,
        l_u: 2,
        l_f: 1,
        p_w: 0.5,
        p_l: 0.0,
    };
    let wake = vec![vec![true, true], vec![false, true], vec![false, true]];
    let outcomes = wake
        .iter()
        .map(|r| {
            (0..2)
                .map(|e| {
                    if r[path.edge(e).0] {
                        delivered(1)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    let t = ScheduleTrace::from_parts(&p, wake, outcomes).unwrap();
    found.push((Clause::C, violation_clause(t.validate(&p, &path))));

    let p = NetworkParams {
        l_del: 1,
        l_u: 1,
        l_f: 2,
        p_w: 1.0,
        p_l: 0.5,
    };
    let lost = Some(Outcome::Lost);
    let t = ScheduleTrace::from_parts(&p, all_awake(3), vec![vec![lost, delivered(1)]; 3]).unwrap();
    found.push((Clause::D, violation_clause(t.validate(&p, &path))));

    let p = NetworkParams {
        l_del: 3,
        l_u: 1,
        l_f: 1,
        p_w: 1.0,
        p_l: 0.0,
    };
    let t = ScheduleTrace::from_parts(
        &p,
        all_awake(2),
        vec![vec![delivered(3), delivered(1)], vec![delivered(1); 2]],
    )
    .unwrap();
    found.push((Clause::E, violation_clause(t.validate(&p, &path))));
    found
}

fn schedule_validity() -> Verdict {
    let mut rng = stream(11, Stream::Aux(3));
    let mut failures = 0;
    let mut count = 0;
    for l_del in 1..=4 {
        for l_u in 1..=5 {
            for l_f in 1..=5 {
                for _ in 0..100 {
                    let n = rng.gen_range(2..=6);
                    let g = match rng.gen_range(0..4) {
                        0 => standard_topology(Topology::Star, n).unwrap(),
                        1 => standard_topology(Topology::Path, n).unwrap(),
                        2 => standard_topology(Topology::Cycle, n).unwrap(),
                        _ => random_strongly_connected(n, 0.3, &mut rng).unwrap(),
                    };
                    let params = NetworkParams {
                        l_del,
                        l_u,
                        l_f,
                        p_w: if l_u == 1 {
                            1.0
                        } else {
                            rng.gen_range(0.05..=1.0)
                        },
                        p_l: rng.gen_range(0.0..0.9),
                    };
                    let trace = ScheduleTrace::generate(&params, &g, 200, &mut rng).unwrap();
                    if trace.validate(&params, &g).is_err() {
                        failures += 1;
                    }
                    count += 1;
                }
            }
        }
    }
    let fixtures = clause_fixtures();
    let fixtures_ok = fixtures.iter().all(|(want, got)| Some(*want) == *got);
    let labels: Vec<String> = fixtures
        .iter()
        .map(|(w, g)| format!("{}->{}", w.label(), g.map_or("none", |c| c.label())))
        .collect();
    verdict(
        failures == 0 && count >= 10_000 && fixtures_ok,
        format!(
            "{count} generated traces, {failures} rejected; clause fixtures [{}]",
            labels.join(" ")
        ),
    )
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for name in PRESET_NAMES {
        for mode in [Mode::Learning, Mode::Raps, Mode::Audit] {
            let mut cfg = cli::preset(name).unwrap();
            cfg.mode = mode;
            cfg.seed = 3;
            if mode == Mode::Audit {
                cfg.horizon = 300;
            }
            cfg.output.dir = root.path().join(format!("{name}-{mode:?}"));
            cli::run_experiment(&cfg, None).unwrap();
            let first = read_outputs(&cfg.output.dir);
            cli::run_experiment(&cfg, None).unwrap();
            let second = read_outputs(&cfg.output.dir);
            compared += first.len();
            if first != second || first.len() != 3 {
                mismatches.push(format!("{name}/{mode:?}"));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{compared} files compared across 6 presets x 3 modes; mismatches: {mismatches:?}"),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("mass conservation", mass_conservation),
        ("synchronous oracle equivalence", synchronous_oracle),
        ("bayesian reduction", bayesian_reduction),
        ("recursion audit", recursion_audit),
        ("raps consensus bound", raps_bound),
        ("belief concentration", concentration),
        ("concentration rate", rate),
        ("network independence", network_independence),
        ("schedule validity", schedule_validity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let r = check();
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {name}: {} [{:.1}s]",
            r.detail,
            start.elapsed().as_secs_f64()
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
