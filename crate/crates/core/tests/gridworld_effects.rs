//! Gridworld decomposition behavior: counterfactual replay, the failure of
//! the naive additive split, Shapley attribution over the three agents, and
//! the variance attribution over the corridor states.

use cfx_core::attribution::{r_sse_icc, shapley_exact, AseCharacteristic, IccParams};
use cfx_core::effects::{self, EffectQuery};
use cfx_core::env::gridworld::{
    build_gridworld, GridworldConfig, GridworldEnv, FIXTURE_CF_PICKUP, FIXTURE_CF_PLANNER,
};
use cfx_core::env::replay::{parse_fixture, to_model_trajectory};
use cfx_core::inference::{counterfactual_sample, BranchSpec};
use cfx_core::oracle;
use cfx_core::scm::{InterventionSet, Trajectory, VarId};

fn env() -> GridworldEnv {
    build_gridworld(GridworldConfig::paper_preset()).unwrap()
}

fn action_sequence(env: &GridworldEnv, tau: &Trajectory) -> Vec<(usize, usize, u32)> {
    let model = &env.model;
    let mut out = Vec::new();
    for t in 0..model.horizon() {
        for agent in 1..=3 {
            let idx = model.index_of(VarId::action(agent, t)).unwrap();
            out.push((agent, t, tau.cat(idx)));
        }
    }
    out
}

#[test]
fn counterfactual_pickup_reproduces_the_recorded_action_sequence() {
    let env = env();
    let tau = env.factual_trajectory().unwrap();
    let t2 = to_model_trajectory(&env, &parse_fixture(FIXTURE_CF_PICKUP).unwrap()).unwrap();
    let mut iv = InterventionSet::empty();
    iv.fix_label(&env.model, VarId::action(2, 3), "pickup green")
        .unwrap();
    let branches = vec![BranchSpec::plain("do", iv)];
    let expected = action_sequence(&env, &t2);
    for index in 0..10 {
        let out = counterfactual_sample(&env.model, &tau, &branches, 21, index).unwrap();
        assert_eq!(
            action_sequence(&env, &out["do"]),
            expected,
            "draw {index} diverged from the recorded counterfactual actions"
        );
    }
}

#[test]
fn counterfactual_planner_instruction_reproduces_the_recorded_sequence() {
    let env = env();
    let tau = env.factual_trajectory().unwrap();
    let t3 = to_model_trajectory(&env, &parse_fixture(FIXTURE_CF_PLANNER).unwrap()).unwrap();
    let mut iv = InterventionSet::empty();
    iv.fix_label(
        &env.model,
        VarId::action(GridworldEnv::PLANNER, 2),
        "pickup pink|pickup green",
    )
    .unwrap();
    let branches = vec![BranchSpec::plain("do", iv)];
    let expected = action_sequence(&env, &t3);
    for index in 0..10 {
        let out = counterfactual_sample(&env.model, &tau, &branches, 22, index).unwrap();
        assert_eq!(action_sequence(&env, &out["do"]), expected);
    }
}

#[test]
fn recorded_counterfactual_totals_are_exact() {
    let env = env();
    let t2 = to_model_trajectory(&env, &parse_fixture(FIXTURE_CF_PICKUP).unwrap()).unwrap();
    assert_eq!(env.rollout_total_deci(&t2).unwrap(), 1990);
    let t3 = to_model_trajectory(&env, &parse_fixture(FIXTURE_CF_PLANNER).unwrap()).unwrap();
    assert_eq!(env.rollout_total_deci(&t3).unwrap(), 2090);
}

#[test]
fn naive_additive_split_fails_but_the_identity_holds() {
    let env = env();
    let (_, query) = env.pickup_query(1.0).unwrap();
    let n = 100;
    let seed = 3;
    let report = effects::explanation_formula(&env.model, &query, n, seed, false).unwrap();
    let sse = effects::sse(&env.model, &query, n, seed).unwrap();

    // The decomposition identity holds to accumulation error.
    assert!(report.identity_residual <= 1e-9);
    assert!(report.max_sample_residual <= 1e-9);

    // The naive split tcfe = tot_ase + sse is off by far more than the
    // Monte Carlo noise.
    let gap = (report.tcfe.mean - (report.tot_ase.mean + sse.mean)).abs();
    let noise =
        report.tcfe.std_error + report.tot_ase.std_error + sse.std_error;
    assert!(
        gap > 5.0 * noise,
        "gap {gap} not decisive against noise {noise}"
    );
}

#[test]
fn shapley_assigns_everything_to_the_acting_agent() {
    let env = env();
    let (_, query) = env.pickup_query(1.0).unwrap();
    let mut chi = AseCharacteristic::new(&env.model, &query, 100, 7);
    let report = shapley_exact(&mut chi).unwrap();
    // The first actor never responds to the intervention and the planner
    // cannot touch rewards, so both get exactly zero.
    assert_eq!(report.phi[0], 0.0, "first actor");
    assert_eq!(report.phi[2], 0.0, "planner");
    let tot = report.grand_coalition();
    assert!(
        (report.phi[1] - tot).abs() <= 1e-9,
        "second actor {} vs total {tot}",
        report.phi[1]
    );
    assert!((report.total() - tot).abs() <= 1e-9, "efficiency");
}

#[test]
fn corridor_states_carry_all_the_variance_in_decreasing_order() {
    let env = env();
    let (_, query) = env.pickup_query(0.99).unwrap();
    let params = IccParams {
        h1: 100,
        h2: 20,
        grouping: 1,
        seed: 5,
    };
    let report = r_sse_icc(&env.model, &query, &params).unwrap();
    assert!(!report.degenerate);
    // Exactly the four counterfactual corridor-crossing states score.
    assert_eq!(report.support(1e-6), vec![9, 10, 11, 12]);
    let psi: Vec<f64> = (9..=12).map(|k| report.psi_at(k)).collect();
    // The effect is negative (penalties are costs), so compare magnitudes:
    // scores shrink in crossing order like the cell variances 15 > 12.5 >
    // 10 > 7.5.
    for w in psi.windows(2) {
        assert!(
            w[0].abs() > w[1].abs(),
            "scores not strictly decreasing: {psi:?}"
        );
    }
    // Scores telescope to the effect.
    assert!((report.psi_total() - report.r_sse).abs() <= 1e-9);
    // Everything at or before the intervention is zero.
    for k in 0..=3 {
        assert_eq!(report.psi_at(k), 0.0);
    }
}

#[test]
fn planner_intervention_moves_nothing_through_the_state_path() {
    let env = env();
    let (_, query) = env.planner_query(1.0).unwrap();
    let n = 80;
    let report = effects::explanation_formula(&env.model, &query, n, 9, true).unwrap();
    // Per sample: the natural world equals the do world bit for bit, so the
    // reverse state effect is exactly zero and the agent path carries the
    // whole effect.
    for d in report.r_sse.per_sample.as_ref().unwrap() {
        assert_eq!(*d, 0.0);
    }
    let tcfe = report.tcfe.per_sample.as_ref().unwrap();
    let ase = report.tot_ase.per_sample.as_ref().unwrap();
    for (a, b) in tcfe.iter().zip(ase) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let sse = effects::sse(&env.model, &query, n, 9).unwrap();
    assert_eq!(sse.mean, 0.0);
    assert_eq!(sse.std_error, 0.0);
}

#[test]
fn oracle_and_monte_carlo_agree_on_the_pickup_query() {
    let env = env();
    let (_, query) = env.pickup_query(1.0).unwrap();
    let exact = oracle::oracle_effects(&env.model, &query, oracle::DEFAULT_CAP).unwrap();
    let n = 100;
    let est = [
        effects::tcfe(&env.model, &query, n, 31).unwrap(),
        effects::tot_ase(&env.model, &query, n, 31).unwrap(),
        effects::sse(&env.model, &query, n, 31).unwrap(),
        effects::r_sse(&env.model, &query, n, 31).unwrap(),
    ];
    let truth = [exact.tcfe, exact.tot_ase, exact.sse, exact.r_sse];
    for (e, t) in est.iter().zip(truth) {
        assert!(
            (e.mean - t).abs() <= 3.0 * e.std_error + 1e-9,
            "estimate {} vs exact {t} (se {})",
            e.mean,
            e.std_error
        );
    }
    // Sanity on the oracle itself: the identity holds exactly.
    assert!((exact.tcfe - (exact.tot_ase - exact.r_sse)).abs() <= 1e-9);
}

#[test]
fn null_query_drops_everything_to_zero() {
    let env = env();
    let tau = env.factual_trajectory().unwrap();
    let query = EffectQuery::new_by_label(
        &env.model,
        &tau,
        2,
        3,
        "pickup pink", // the factual action
        env.response(1.0),
    )
    .unwrap();
    let report = effects::explanation_formula(&env.model, &query, 50, 1, false).unwrap();
    assert_eq!(report.tcfe.mean, 0.0);
    assert_eq!(report.tot_ase.mean, 0.0);
    assert_eq!(report.r_sse.mean, 0.0);
    assert_eq!(report.identity_residual, 0.0);
}
