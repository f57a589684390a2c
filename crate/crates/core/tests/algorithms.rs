mod common;

use ndarray::Array2;

use pmgt_core::algorithms::{run, Algorithm, Decentralized, EstimatorState, Params, RunConfig};
use pmgt_core::estimators::{LsvrgState, SagaState};
use pmgt_core::metrics::lyapunov;
use pmgt_core::{AgentField, GossipMatrix, Reference, Regularizer};

fn consensual_grads(problem: &pmgt_core::Problem, x: &AgentField) -> AgentField {
    let mut g = Array2::zeros((problem.m(), problem.d()));
    for i in 0..problem.m() {
        g.row_mut(i).assign(&problem.local_grad(i, x.row(i)));
    }
    AgentField::new(g).unwrap()
}

#[test]
fn optimum_is_a_fixed_point() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let r = Reference::solve(&problem, 1e-15).unwrap();
    let x_star = AgentField::consensual(4, r.x_star().view());
    let local = consensual_grads(&problem, &x_star);
    let global = AgentField::consensual(4, problem.grad(r.x_star().view()).view());
    for algorithm in [Algorithm::PmgtSaga, Algorithm::PmgtLsvrg] {
        let solver = Decentralized::new(&problem, &gossip, &RunConfig::new(algorithm, 1)).unwrap();
        let mut state = solver.init_state(3);
        state.x = x_star.clone();
        state.s = global.clone();
        state.v_prev = local.clone();
        state.estimator = match algorithm {
            Algorithm::PmgtSaga => EstimatorState::Saga(SagaState::new(&problem, &x_star)),
            _ => EstimatorState::Lsvrg(LsvrgState::new(&x_star, &local, 0.5)),
        };
        for _ in 0..5 {
            solver.step(&mut state).unwrap();
            for row in state.x.values().rows() {
                for (a, b) in row.iter().zip(r.x_star().iter()) {
                    assert!((a - b).abs() <= 1e-12, "{algorithm}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn communication_accounting() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let t = 13;
    for algorithm in [
        Algorithm::PmgtSaga,
        Algorithm::PmgtLsvrg,
        Algorithm::DecentralizedProxFullgrad,
        Algorithm::Dsgd,
        Algorithm::GtDsgd,
    ] {
        let record = run(&problem, &gossip, &RunConfig::new(algorithm, t), None).unwrap();
        let expected = match algorithm {
            Algorithm::Dsgd => t,
            Algorithm::GtDsgd => 2 * t,
            _ => 2 * record.summary.k * t,
        };
        assert_eq!(
            record.last().unwrap().comm_rounds,
            expected as u64,
            "{algorithm}"
        );
    }
}

#[test]
fn gradient_evaluation_accounting() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let (m, n, t, b) = (4u64, 20u64, 30u64, 3usize);
    let init = m * n;
    let evals = |algorithm| {
        let mut config = RunConfig::new(algorithm, t as usize);
        config.batch = b;
        run(&problem, &gossip, &config, None)
            .unwrap()
            .last()
            .unwrap()
            .grad_evals
    };
    assert_eq!(evals(Algorithm::PmgtSaga), init + t * m * b as u64);
    assert_eq!(evals(Algorithm::Dsgd), init + t * m * b as u64);
    assert_eq!(evals(Algorithm::GtDsgd), init + t * m * b as u64);
    assert_eq!(
        evals(Algorithm::DecentralizedProxFullgrad),
        init + t * m * n
    );
    let lsvrg = evals(Algorithm::PmgtLsvrg);
    let base = init + 2 * t * m * b as u64;
    assert!(lsvrg >= base && (lsvrg - base).is_multiple_of(n));
}

#[test]
fn counters_are_monotone_and_rows_sorted() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let r = Reference::solve(&problem, 1e-12).unwrap();
    let mut config = RunConfig::new(Algorithm::PmgtLsvrg, 50);
    config.record_every = 7;
    let record = run(&problem, &gossip, &config, Some(&r)).unwrap();
    let ts: Vec<usize> = record.rows.iter().map(|row| row.t).collect();
    assert_eq!(ts, vec![0, 7, 14, 21, 28, 35, 42, 49, 50]);
    for pair in record.rows.windows(2) {
        assert!(pair[1].grad_evals >= pair[0].grad_evals);
        assert!(pair[1].comm_rounds >= pair[0].comm_rounds);
    }
    for row in &record.rows {
        assert!(row.consensus_x >= 0.0 && row.consensus_s.unwrap() >= 0.0);
        assert!(row.delta.unwrap() >= 0.0 && row.dist_sq.unwrap() >= 0.0);
    }
}

#[test]
fn identical_seeds_identical_runs() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    for algorithm in [
        Algorithm::PmgtSaga,
        Algorithm::PmgtLsvrg,
        Algorithm::Dsgd,
        Algorithm::GtDsgd,
    ] {
        let mut config = RunConfig::new(algorithm, 40);
        config.seed = 11;
        config.batch = 2;
        let a = run(&problem, &gossip, &config, None).unwrap();
        let b = run(&problem, &gossip, &config, None).unwrap();
        assert_eq!(a.final_x, b.final_x);
        assert_eq!(a.rows, b.rows);
        config.seed = 12;
        let c = run(&problem, &gossip, &config, None).unwrap();
        assert_ne!(a.final_x, c.final_x, "{algorithm}");
    }
}

#[test]
fn full_gradient_tracking_error_bound() {
    // s_bar = mean_i grad f_i(x_i), so |s_bar - grad f(x_bar)| <= (L / sqrt m) |x - 1 x_bar|
    let (problem, gossip) = common::ring_testbed(6, 20, 10.0);
    let mut config = RunConfig::new(Algorithm::DecentralizedProxFullgrad, 60);
    config.k = Some(1);
    let record = run(&problem, &gossip, &config, None).unwrap();
    let scale = problem.lipschitz() / (problem.m() as f64).sqrt();
    let mut saw_disagreement = false;
    for row in &record.rows {
        let dev = (row.consensus_x * problem.m() as f64).sqrt();
        saw_disagreement |= dev > 1e-6;
        assert!(
            row.tracking_err.unwrap() <= scale * dev + 1e-9,
            "t = {}",
            row.t
        );
    }
    assert!(saw_disagreement);
}

#[test]
fn logged_lyapunov_matches_components() {
    let (problem, gossip) = common::testbed();
    let r = Reference::solve(&problem, 1e-13).unwrap();
    let config = RunConfig::new(Algorithm::PmgtSaga, 100);
    let record = run(&problem, &gossip, &config, Some(&r)).unwrap();
    let eta = record.summary.eta;
    for row in &record.rows {
        let recomputed =
            row.dist_sq.unwrap() + 4.0 * problem.n() as f64 * eta * eta * row.delta.unwrap();
        assert!((recomputed - row.lyapunov.unwrap()).abs() <= 1e-12 * (1.0 + recomputed));
    }
    let z = ndarray::Array1::zeros(2);
    assert_eq!(lyapunov(z.view(), z.view(), 0.0, eta, 50), 0.0);
}

#[test]
fn delta_vanishes_along_converging_runs() {
    let (problem, gossip) = common::testbed();
    let r = Reference::solve(&problem, 1e-13).unwrap();
    for algorithm in [Algorithm::PmgtSaga, Algorithm::PmgtLsvrg] {
        let record = run(&problem, &gossip, &RunConfig::new(algorithm, 800), Some(&r)).unwrap();
        let first = record.rows[0].delta.unwrap();
        let last = record.last().unwrap().delta.unwrap();
        assert!(last <= 1e-2 * first, "{algorithm}: {first} -> {last}");
    }
}

#[test]
fn zero_iterations_records_initial_row() {
    let (problem, gossip) = common::testbed();
    let record = run(
        &problem,
        &gossip,
        &RunConfig::new(Algorithm::PmgtSaga, 0),
        None,
    )
    .unwrap();
    assert_eq!(record.rows.len(), 1);
    assert_eq!(record.rows[0].t, 0);
    assert_eq!(record.rows[0].comm_rounds, 0);
    assert_eq!(
        record.rows[0].grad_evals,
        (problem.m() * problem.n()) as u64
    );
}

#[test]
fn dsgd_without_regularizer_is_plain_update() {
    // x^{t+1} = W x^t - eta v^t, checked against a replay of the sampled gradients
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let problem = problem.with_regularizer(Regularizer::None);
    let params = Params {
        eta: 0.01,
        k: 1,
        p: 0.5,
        batch: 1,
    };
    let solver = Decentralized::with_params(&problem, &gossip, Algorithm::Dsgd, params).unwrap();
    let mut state = solver.init_state(4);
    for _ in 0..5 {
        let before = state.x.clone();
        let mut rngs = state.rngs.clone();
        solver.step(&mut state).unwrap();
        let mixed = gossip.weights().dot(before.values());
        for i in 0..problem.m() {
            let j = pmgt_core::estimators::sample_indices(rngs.agent(i), problem.n(), 1);
            let g = problem.component_grad(i, j[0], before.row(i));
            for k in 0..problem.d() {
                let expected = mixed[[i, k]] - 0.01 * g[k];
                assert!((state.x.values()[[i, k]] - expected).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn zero_step_keeps_iterates() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let params = Params {
        eta: 0.0,
        k: 3,
        p: 0.5,
        batch: 1,
    };
    let solver =
        Decentralized::with_params(&problem, &gossip, Algorithm::PmgtSaga, params).unwrap();
    let mut state = solver.init_state(0);
    for _ in 0..4 {
        solver.step(&mut state).unwrap();
    }
    assert!(state.x.values().iter().all(|v| *v == 0.0));
    assert_eq!(state.budget.rounds(), 24);
}

#[test]
fn stochastic_baselines_plateau_while_pmgt_converges() {
    let (problem, gossip) = common::ring_testbed(4, 20, 10.0);
    let r = Reference::solve(&problem, 1e-13).unwrap();
    let final_subopt = |algorithm| {
        run(
            &problem,
            &gossip,
            &RunConfig::new(algorithm, 1500),
            Some(&r),
        )
        .unwrap()
        .last()
        .unwrap()
        .subopt
    };
    let pmgt = final_subopt(Algorithm::PmgtSaga);
    let gt = final_subopt(Algorithm::GtDsgd);
    assert!(pmgt < 1e-9, "{pmgt}");
    assert!(gt > 10.0 * pmgt, "{gt} vs {pmgt}");
}

#[test]
fn centralized_runs_report_single_agent() {
    let (problem, gossip) = common::testbed();
    let r = Reference::solve(&problem, 1e-13).unwrap();
    let record = run(
        &problem,
        &gossip,
        &RunConfig::new(Algorithm::CentralizedSaga, 3000),
        Some(&r),
    )
    .unwrap();
    assert_eq!(record.summary.m, 1);
    assert_eq!(record.summary.n, 200);
    let last = record.last().unwrap();
    assert_eq!(last.comm_rounds, 0);
    assert_eq!(last.grad_evals, 200 + 3000);
    assert!(last.subopt < 1e-6, "{}", last.subopt);
}

#[test]
fn invalid_configs_rejected() {
    let (problem, gossip) = common::testbed();
    let mut config = RunConfig::new(Algorithm::PmgtSaga, 5);
    config.batch = 51;
    assert!(Decentralized::new(&problem, &gossip, &config).is_err());
    config.batch = 1;
    config.eta = Some(-1.0);
    assert!(Decentralized::new(&problem, &gossip, &config).is_err());
    let other = GossipMatrix::averaging(3);
    assert!(Decentralized::new(&problem, &other, &RunConfig::new(Algorithm::PmgtSaga, 5)).is_err());
    let failure = run(&problem, &other, &RunConfig::new(Algorithm::Dsgd, 5), None).unwrap_err();
    assert!(failure.partial.rows.is_empty());
}

#[test]
fn divergence_reports_iteration() {
    let (problem, gossip) = common::testbed();
    let mut config = RunConfig::new(Algorithm::PmgtSaga, 5000);
    config.eta = Some(1e3);
    let failure = run(&problem, &gossip, &config, None).unwrap_err();
    let message = failure.error.to_string();
    assert!(
        message.contains("pmgt_saga failed at iteration"),
        "{message}"
    );
    assert!(!failure.partial.rows.is_empty());
}
