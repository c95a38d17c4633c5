//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! (run with `--nocapture` to see them on success).

use std::collections::BTreeMap;
use std::process::Command;

use serde_json::Value;

use cfx_core::attribution::{
    conditional_variance, r_sse_icc, shapley_exact, shapley_sampled, AseCharacteristic,
    CondBoundary, IccParams, TableCharacteristic,
};
use cfx_core::effects::{self, EffectQuery};
use cfx_core::env::gridworld::{build_gridworld, GridworldConfig, GridworldEnv};
use cfx_core::env::replay::{audit, parse_fixture};
use cfx_core::env::sepsis::{build_sepsis, SepsisConfig, SepsisEnv, CLINICIAN};
use cfx_core::inference::{abduct, sample_posterior};
use cfx_core::model_io::transport_trajectory;
use cfx_core::oracle::{oracle_conditional_variance, oracle_effects, DEFAULT_CAP};
use cfx_core::scm::{InterventionSet, VarId};
use cfx_core::stats::chi_square_p;
use cfx_core::synthetic::{random_model, random_query};

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

fn grid_env() -> GridworldEnv {
    build_gridworld(GridworldConfig::paper_preset()).unwrap()
}

fn sepsis_env(trust: f64, rounds: usize) -> SepsisEnv {
    build_sepsis(SepsisConfig::compact(trust, rounds)).unwrap()
}

/// |TCFE - (tot-ASE - r-SSE)| <= 1e-9 under shared noise, on 200 random
/// model/query pairs plus both reference environments.
#[test]
fn criterion_explanation_identity() {
    for seed in 0..200u64 {
        let model = random_model(seed);
        let (_, query) = random_query(&model, seed);
        let report = effects::explanation_formula(&model, &query, 50, seed, false).unwrap();
        assert!(
            report.identity_residual <= 1e-9 && report.max_sample_residual <= 1e-9,
            "seed {seed}: residual {}",
            report.identity_residual
        );
    }
    let env = grid_env();
    let (_, query) = env.pickup_query(0.99).unwrap();
    let report = effects::explanation_formula(&env.model, &query, 100, 1, false).unwrap();
    assert!(report.identity_residual <= 1e-9 && report.max_sample_residual <= 1e-9);

    let sep = sepsis_env(0.5, 10);
    let (_, query) = sep
        .find_preset_query_filtered(CLINICIAN, 11, 400, 0.3, 2, 0.0)
        .unwrap();
    let report = effects::explanation_formula(&sep.model, &query, 100, 1, false).unwrap();
    assert!(report.identity_residual <= 1e-9 && report.max_sample_residual <= 1e-9);
    pass("explanation identity (200 random + both environments)");
}

/// Shapley efficiency at 1e-9 everywhere; invariance and symmetry on
/// constructed games; sampled mode within 3 bootstrap sigma of exact on
/// 5-agent games.
#[test]
fn criterion_shapley_axioms() {
    // Efficiency on environment-backed runs.
    let env = grid_env();
    let (_, query) = env.pickup_query(1.0).unwrap();
    let mut chi = AseCharacteristic::new(&env.model, &query, 100, 3);
    let report = shapley_exact(&mut chi).unwrap();
    assert!((report.total() - report.grand_coalition()).abs() <= 1e-9);

    let sep = sepsis_env(0.25, 8);
    let (_, query) = sep
        .find_preset_query_filtered(CLINICIAN, 11, 400, 0.3, 2, 0.0)
        .unwrap();
    let mut chi = AseCharacteristic::new(&sep.model, &query, 200, 3);
    let report = shapley_exact(&mut chi).unwrap();
    assert!((report.total() - report.grand_coalition()).abs() <= 1e-9);

    // Invariance (dummy) and symmetry on a constructed game: agents 1 and 2
    // contribute identically, agent 3 contributes nothing.
    let mut game = TableCharacteristic {
        n: 3,
        table: (0..8u32)
            .map(|s| {
                let a = (s & 1 != 0) as i32;
                let b = (s & 2 != 0) as i32;
                (s, (a + b) as f64 * 2.5 + (a * b) as f64)
            })
            .collect(),
    };
    let rep = shapley_exact(&mut game).unwrap();
    assert!((rep.phi[0] - rep.phi[1]).abs() <= 1e-9, "symmetry");
    assert!(rep.phi[2].abs() <= 1e-9, "invariance");
    assert!((rep.total() - rep.grand_coalition()).abs() <= 1e-9);

    // Sampled Shapley vs exact on random 5-agent games.
    for seed in 0..5u64 {
        let mut rng = cfx_core::rng::aux_rng(seed, 77);
        let table: BTreeMap<u32, f64> = (0..32u32)
            .map(|s| {
                (
                    s,
                    if s == 0 {
                        0.0
                    } else {
                        rand::Rng::random_range(&mut rng, -8.0..8.0)
                    },
                )
            })
            .collect();
        let mut g1 = TableCharacteristic { n: 5, table: table.clone() };
        let exact = shapley_exact(&mut g1).unwrap();
        let mut g2 = TableCharacteristic { n: 5, table };
        let sampled = shapley_sampled(&mut g2, 200, seed).unwrap();
        assert!((sampled.total() - sampled.grand_coalition()).abs() <= 1e-9);
        let se = sampled.phi_std_error.as_ref().unwrap();
        for a in 0..5 {
            assert!(
                (sampled.phi[a] - exact.phi[a]).abs() <= 3.0 * se[a] + 1e-9,
                "seed {seed} agent {a}"
            );
        }
    }
    pass("shapley axioms (efficiency, invariance, symmetry, sampled vs exact)");
}

/// Sum of state scores equals the estimated reverse state effect at 1e-9 on
/// the gridworld, the sepsis environment and 50 random models, with the
/// shared-variance scheme at H1 = 100, H2 = 20.
#[test]
fn criterion_state_attribution_efficiency() {
    let params = IccParams {
        h1: 100,
        h2: 20,
        grouping: 1,
        seed: 5,
    };

    let env = grid_env();
    let (_, query) = env.pickup_query(0.99).unwrap();
    let rep = r_sse_icc(&env.model, &query, &params).unwrap();
    assert!(!rep.degenerate);
    assert!((rep.psi_total() - rep.r_sse).abs() <= 1e-9, "gridworld");

    let sep = sepsis_env(0.5, 10);
    let (_, query) = sep
        .find_preset_query_filtered(CLINICIAN, 11, 400, 0.3, 2, 0.3)
        .unwrap();
    let rep = r_sse_icc(&sep.model, &query, &params).unwrap();
    if !rep.degenerate {
        assert!((rep.psi_total() - rep.r_sse).abs() <= 1e-9, "sepsis");
    }

    let mut nondegenerate = 0;
    for seed in 0..50u64 {
        let model = random_model(seed);
        let (_, query) = random_query(&model, seed);
        let rep = r_sse_icc(&model, &query, &params).unwrap();
        if rep.degenerate {
            continue;
        }
        nondegenerate += 1;
        assert!(
            (rep.psi_total() - rep.r_sse).abs() <= 1e-9,
            "seed {seed}: {} vs {}",
            rep.psi_total(),
            rep.r_sse
        );
    }
    assert!(nondegenerate >= 10, "only {nondegenerate} usable models");
    pass("state attribution efficiency (gridworld, sepsis, 50 random models)");
}

/// The three recorded trajectories audit to their exact decimal totals.
#[test]
fn criterion_gridworld_replay() {
    use cfx_core::env::gridworld::{FIXTURE_CF_PICKUP, FIXTURE_CF_PLANNER, FIXTURE_FACTUAL};
    use cfx_core::env::replay::to_model_trajectory;
    let env = grid_env();
    for (text, expected) in [
        (FIXTURE_FACTUAL, 1832i64),
        (FIXTURE_CF_PICKUP, 1990),
        (FIXTURE_CF_PLANNER, 2090),
    ] {
        let parsed = parse_fixture(text).unwrap();
        let report = audit(&parsed).unwrap();
        assert_eq!(report.total_deci, expected);
        let tau = to_model_trajectory(&env, &parsed).unwrap();
        assert_eq!(env.rollout_total_deci(&tau).unwrap(), expected);
    }
    pass("gridworld replay totals 183.2 / 199.0 / 209.0 (exact decimal)");
}

/// The four qualitative gridworld decomposition claims.
#[test]
fn criterion_gridworld_decomposition() {
    let env = grid_env();
    let n = 100;
    let seed = 3;

    // (a) The additive split fails beyond five standard errors.
    let (_, query) = env.pickup_query(0.99).unwrap();
    let report = effects::explanation_formula(&env.model, &query, n, seed, false).unwrap();
    let sse = effects::sse(&env.model, &query, n, seed).unwrap();
    let gap = (report.tcfe.mean - (report.tot_ase.mean + sse.mean)).abs();
    let noise = report.tcfe.std_error + report.tot_ase.std_error + sse.std_error;
    assert!(gap > 5.0 * noise, "(a): gap {gap} vs noise {noise}");

    // (b) Attribution concentrates on the acting agent.
    let mut chi = AseCharacteristic::new(&env.model, &query, n, seed);
    let shapley = shapley_exact(&mut chi).unwrap();
    let tot = shapley.grand_coalition();
    let se = report.tot_ase.std_error;
    assert!(shapley.phi[0].abs() <= 2.0 * se, "(b): first actor");
    assert!(shapley.phi[2].abs() <= 2.0 * se, "(b): planner");
    assert!((shapley.phi[1] - tot).abs() <= 2.0 * se, "(b): second actor");

    // (c) Exactly four scored states, at the counterfactual corridor
    // crossings, strictly decreasing like the cell variances 15 > 12.5 >
    // 10 > 7.5. The adjacent variances differ by only 2.5, so this check
    // runs with a larger outer budget than the default to separate them.
    let params = IccParams {
        h1: 400,
        h2: 20,
        grouping: 1,
        seed,
    };
    let icc = r_sse_icc(&env.model, &query, &params).unwrap();
    assert_eq!(icc.support(1e-6), vec![9, 10, 11, 12], "(c): support");
    let psi: Vec<f64> = (9..=12).map(|k| icc.psi_at(k).abs()).collect();
    for w in psi.windows(2) {
        assert!(w[0] > w[1], "(c): not strictly decreasing: {psi:?}");
    }
    let variances = env.green_corridor_variances().unwrap();
    assert_eq!(variances, vec![15.0, 12.5, 10.0, 7.5], "(c): derived variances");

    // (d) The planner cannot touch the state path: zero per sample, exactly.
    let (_, planner_query) = env.planner_query(0.99).unwrap();
    let rep = effects::explanation_formula(&env.model, &planner_query, n, seed, true).unwrap();
    for d in rep.r_sse.per_sample.as_ref().unwrap() {
        assert_eq!(*d, 0.0, "(d)");
    }
    pass("gridworld decomposition claims (a)-(d)");
}

/// Clinician share of the agent-path effect falls to exactly zero as trust
/// rises; the AI share rises to one.
#[test]
fn criterion_sepsis_trend() {
    let rounds = 5;
    let reference = sepsis_env(1.0, rounds);
    let (tau, query) = reference
        .find_preset_query_filtered(CLINICIAN, 11, 600, 0.6, 2, 0.3)
        .unwrap();
    let mut cl_shares = Vec::new();
    let mut ai_shares = Vec::new();
    for &mu in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let env = sepsis_env(mu, rounds);
        let local = transport_trajectory(&reference.model, &tau, &env.model).unwrap();
        let q = EffectQuery::new(
            &env.model,
            &local,
            query.agent,
            query.time,
            query.action,
            query.response.clone(),
        )
        .unwrap();
        let mut chi = AseCharacteristic::new(&env.model, &q, 400, 17);
        let rep = shapley_exact(&mut chi).unwrap();
        let tot = rep.grand_coalition();
        assert!(tot > 0.0, "mu={mu}: degenerate total {tot}");
        assert!((rep.total() - tot).abs() <= 1e-9, "efficiency at mu={mu}");
        cl_shares.push(rep.phi[1] / tot);
        ai_shares.push(rep.phi[0] / tot);
    }
    for w in cl_shares.windows(2) {
        assert!(w[0] >= w[1] - 1e-9, "clinician share: {cl_shares:?}");
    }
    for w in ai_shares.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "ai share: {ai_shares:?}");
    }
    assert_eq!(*cl_shares.last().unwrap(), 0.0, "exact zero at full trust");
    assert!((ai_shares.last().unwrap() - 1.0).abs() <= 1e-9);
    assert!(cl_shares[0] > 0.01, "clinician never mattered: {cl_shares:?}");
    pass("sepsis trust trend (clinician share falls to exact zero)");
}

/// Monte Carlo estimates agree with the exact oracle: all four effects
/// within three standard errors on at least 95 of 100 random models, and
/// nested variance estimates within three (repetition) standard errors of
/// exact conditional variances on 50 cases.
#[test]
fn criterion_oracle_agreement() {
    let mut within = 0usize;
    let mut total = 0usize;
    for seed in 0..100u64 {
        let model = random_model(seed);
        let (_, query) = random_query(&model, seed);
        let exact = oracle_effects(&model, &query, DEFAULT_CAP).unwrap();
        let n = 400;
        let estimates = [
            (effects::tcfe(&model, &query, n, seed).unwrap(), exact.tcfe),
            (effects::tot_ase(&model, &query, n, seed).unwrap(), exact.tot_ase),
            (effects::sse(&model, &query, n, seed).unwrap(), exact.sse),
            (effects::r_sse(&model, &query, n, seed).unwrap(), exact.r_sse),
        ];
        let all_in = estimates
            .iter()
            .all(|(e, t)| (e.mean - t).abs() <= 3.0 * e.std_error + 1e-9);
        total += 1;
        if all_in {
            within += 1;
        }
    }
    assert!(
        within * 100 >= total * 95,
        "effects: only {within}/{total} models fully within 3 sigma"
    );

    let mut var_within = 0usize;
    let mut var_total = 0usize;
    'outer: for seed in 0..200u64 {
        if var_total >= 50 {
            break 'outer;
        }
        let model = random_model(seed);
        let (_, query) = random_query(&model, seed);
        let t_y = query.response.last_time();
        let Some(k) = (query.time + 1..=t_y).next() else {
            continue;
        };
        let exact = oracle_conditional_variance(&model, &query, k, false, DEFAULT_CAP).unwrap();
        let reps = 20;
        let estimates: Vec<f64> = (0..reps)
            .map(|r| {
                let params = IccParams {
                    h1: 50,
                    h2: 10,
                    grouping: 1,
                    seed: seed * 100 + r,
                };
                conditional_variance(&model, &query, CondBoundary::Before(k), &params).unwrap()
            })
            .collect();
        let (mean, se) = cfx_core::stats::mean_and_se(&estimates);
        var_total += 1;
        if (mean - exact).abs() <= 3.0 * se + 1e-9 {
            var_within += 1;
        }
    }
    assert!(var_total >= 50, "only {var_total} variance cases");
    assert!(
        var_within * 100 >= var_total * 95,
        "variances: only {var_within}/{var_total} within 3 sigma"
    );
    pass("oracle agreement (effects 3-sigma >= 95/100, variances on 50 cases)");
}

/// One thousand random compiled models pass noise monotonicity, measure
/// correctness, abduction consistency and an observational chi-square
/// check (suite-level alpha 0.01, Bonferroni-corrected per model).
#[test]
fn criterion_abduction_consistency_suite() {
    let per_model_alpha = 0.01 / 1000.0;
    for seed in 0..1000u64 {
        let model = random_model(seed);
        assert!(
            model.check_noise_monotonicity(8).passed(),
            "seed {seed}: monotonicity"
        );
        assert!(
            model.max_measure_deviation() <= 1e-12,
            "seed {seed}: measure"
        );
        let (_, tau) = model.sample_prior_indexed(seed ^ 0xFACE, 0).unwrap();
        let posterior = abduct(&model, &tau).unwrap();
        for draw in 0..3 {
            let u = sample_posterior(&posterior, seed, draw);
            let re = model.solve(&u, &InterventionSet::empty()).unwrap();
            assert_eq!(re, tau, "seed {seed}: abduction consistency");
        }
        // Aggregate observational check over all materialized rows.
        let chi = cfx_core::mmdp::empirical_consistency(&model, 2000, seed).unwrap();
        if chi.rows_tested > 0 {
            let p = chi_square_p(chi.aggregate_stat, chi.aggregate_df);
            assert!(
                p >= per_model_alpha,
                "seed {seed}: chi-square rejects (p = {p})"
            );
        }
    }
    pass("abduction/consistency suite (1000 random compiled models)");
}

/// Reports are byte-identical across worker counts (timestamps excluded).
#[test]
fn criterion_worker_determinism() {
    let run = |cmd: &[&str], workers: &str| -> String {
        let output = Command::new(env!("CARGO_BIN_EXE_cfx"))
            .args(cmd)
            .args(["--workers", workers])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        let text = String::from_utf8(output.stdout).unwrap();
        match serde_json::from_str::<Value>(&text) {
            Ok(mut doc) => {
                if let Some(obj) = doc.as_object_mut() {
                    obj.remove("generated_unix_ms");
                }
                serde_json::to_string(&doc).unwrap()
            }
            Err(_) => text, // CSV output compares verbatim
        }
    };
    let decompose = [
        "decompose", "--env", "gridworld", "--query", "pickup", "--seed", "7", "--samples",
        "80", "--h1", "40", "--h2", "10",
    ];
    assert_eq!(run(&decompose, "1"), run(&decompose, "4"));
    let sweep = [
        "sweep", "--env", "sepsis", "--rounds", "4", "--query", "clinician", "--grid",
        "mu=0.25,0.75", "--seed", "7", "--samples", "60",
    ];
    assert_eq!(run(&sweep, "1"), run(&sweep, "3"));
    let oracle = [
        "oracle", "--env", "gridworld", "--query", "pickup", "--seed", "2", "--samples", "50",
    ];
    assert_eq!(run(&oracle, "1"), run(&oracle, "2"));
    pass("worker-count determinism (decompose, sweep, oracle)");
}
