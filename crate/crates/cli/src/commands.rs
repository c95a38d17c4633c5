//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use cfx_core::attribution::{
    find_icc_spike, r_sse_icc, shapley_exact, shapley_sampled, AseCharacteristic, IccParams,
};
use cfx_core::effects::{self, EffectQuery, ResponseSpec};
use cfx_core::env::gridworld::{build_gridworld_ordered, GridworldConfig, GridworldEnv};
use cfx_core::env::replay as replay_mod;
use cfx_core::env::sepsis::{build_sepsis_ordered, SepsisConfig, SepsisEnv, AI, CLINICIAN};
use cfx_core::error::{CfxError, Result};
use cfx_core::mmdp::{consistency_check, empirical_consistency, OrderingSpec};
use cfx_core::model_io::{self, transport_trajectory};
use cfx_core::oracle;
use cfx_core::scm::{ScmModel, Trajectory, VarId};

use crate::report::{
    config_hash, csv_series, now_unix_ms, DecompositionReport, EffectsBlock, IccBlock,
    OracleBlock, Provenance,
};
use crate::{ModelArgs, QueryArgs, RunArgs, ShapleyArg, SweepArgs, ValidateArgs};

/// A loaded model plus whatever environment scaffolding came with it.
pub enum Ctx {
    Grid(Box<GridworldEnv>),
    Sepsis {
        env: Box<SepsisEnv>,
        /// Full-trust twin used to locate trust-invariant factuals.
        reference: Box<SepsisEnv>,
    },
    File {
        model: ScmModel,
        spec: Option<(cfx_core::mmdp::MmdpSpec, cfx_core::mmdp::PolicySet)>,
    },
}

impl Ctx {
    pub fn model(&self) -> &ScmModel {
        match self {
            Ctx::Grid(env) => &env.model,
            Ctx::Sepsis { env, .. } => &env.model,
            Ctx::File { model, .. } => model,
        }
    }

    fn default_response(&self) -> ResponseSpec {
        match self {
            Ctx::Grid(env) => env.response(0.99),
            Ctx::Sepsis { env, .. } => env.response(),
            Ctx::File { model, .. } => {
                ResponseSpec::state(VarId::state(model.horizon()))
            }
        }
    }
}

fn orderings_for(args: &ModelArgs) -> OrderingSpec {
    match args.ordering_seed {
        None => OrderingSpec::none(),
        Some(_) => OrderingSpec::none(), // resolved against the spec below
    }
}

pub fn load_ctx(args: &ModelArgs) -> Result<Ctx> {
    match (&args.env, &args.model) {
        (Some(name), None) => match name.as_str() {
            "gridworld" => {
                let config = match &args.layout {
                    Some(path) => GridworldConfig::from_json(&read(path)?)?,
                    None => GridworldConfig::paper_preset(),
                };
                let mut orderings = orderings_for(args);
                let env = if let Some(seed) = args.ordering_seed {
                    // Orderings permute state domains; derive from the
                    // assembled spec of a default build.
                    let plain = cfx_core::env::gridworld::build_gridworld(config.clone())?;
                    orderings = OrderingSpec::random_states(&plain.mmdp, seed);
                    build_gridworld_ordered(config, &orderings)?
                } else {
                    build_gridworld_ordered(config, &orderings)?
                };
                Ok(Ctx::Grid(Box::new(env)))
            }
            "sepsis" => {
                let build = |trust: f64| -> Result<SepsisEnv> {
                    let config = SepsisConfig::compact(trust, args.rounds);
                    if let Some(seed) = args.ordering_seed {
                        let plain = cfx_core::env::sepsis::build_sepsis(config.clone())?;
                        let orderings = OrderingSpec::random_states(&plain.mmdp, seed);
                        build_sepsis_ordered(config, &orderings)
                    } else {
                        build_sepsis_ordered(config, &OrderingSpec::none())
                    }
                };
                Ok(Ctx::Sepsis {
                    env: Box::new(build(args.mu)?),
                    reference: Box::new(build(1.0)?),
                })
            }
            other => Err(CfxError::Config(format!("unknown environment '{other}'"))),
        },
        (None, Some(path)) => {
            let (model, spec) = model_io::load_model(&read(path)?)?;
            Ok(Ctx::File { model, spec })
        }
        _ => Err(CfxError::Config(
            "exactly one of --env or --model is required".into(),
        )),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CfxError::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_response(text: &str, model: &ScmModel) -> Result<ResponseSpec> {
    if let Some(var) = text.strip_prefix("state:") {
        return Ok(ResponseSpec::state(VarId::parse(var)?));
    }
    if let Some(rest) = text.strip_prefix("return:") {
        let mut gamma = 1.0;
        let mut from = 0;
        let mut to = model.horizon();
        for part in rest.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| CfxError::Config(format!("bad response part '{part}'")))?;
            match key.trim() {
                "g" | "gamma" => {
                    gamma = value
                        .parse()
                        .map_err(|_| CfxError::Config(format!("bad discount '{value}'")))?
                }
                "from" => {
                    from = value
                        .parse()
                        .map_err(|_| CfxError::Config(format!("bad from '{value}'")))?
                }
                "to" => {
                    to = value
                        .parse()
                        .map_err(|_| CfxError::Config(format!("bad to '{value}'")))?
                }
                other => {
                    return Err(CfxError::Config(format!("unknown response key '{other}'")))
                }
            }
        }
        return Ok(ResponseSpec::ret(gamma, from, to));
    }
    Err(CfxError::Config(format!(
        "response must be 'state:<var>' or 'return:g=<gamma>[,from=A,to=B]', got '{text}'"
    )))
}

/// Resolve (tau, query) against a context.
pub fn resolve_query(ctx: &Ctx, args: &QueryArgs, seed: u64) -> Result<(Trajectory, EffectQuery)> {
    let model = ctx.model();
    if let Some(name) = &args.query {
        if args.agent.is_some() || args.time.is_some() || args.action.is_some() {
            return Err(CfxError::Config(
                "--query conflicts with --agent/--time/--action".into(),
            ));
        }
        let gamma = 0.99;
        return match (ctx, name.as_str()) {
            (Ctx::Grid(env), "pickup") => env.pickup_query(gamma),
            (Ctx::Grid(env), "planner") => env.planner_query(gamma),
            (Ctx::Sepsis { env, reference }, "ai") => {
                let (tau, q) = reference.find_preset_query(AI, 11, 600, 0.5, 1)?;
                transport_query(&reference.model, &env.model, &tau, &q)
            }
            (Ctx::Sepsis { env, reference }, "clinician") => {
                let (tau, q) =
                    reference.find_preset_query_filtered(CLINICIAN, 11, 600, 0.6, 2, 0.3)?;
                transport_query(&reference.model, &env.model, &tau, &q)
            }
            _ => Err(CfxError::Config(format!(
                "unknown preset query '{name}' for this model source"
            ))),
        };
    }

    let (agent, time, action) = match (args.agent, args.time, &args.action) {
        (Some(a), Some(t), Some(act)) => (a, t, act.clone()),
        _ => {
            return Err(CfxError::Config(
                "need --query or all of --agent, --time, --action".into(),
            ))
        }
    };
    let tau = match (&args.tau, args.tau_seed) {
        (Some(path), None) => {
            let doc: cfx_core::model_io::TrajectoryFile = serde_json::from_str(&read(path)?)
                .map_err(|e| CfxError::Parse(e.to_string()))?;
            model_io::trajectory_from_file(&doc, model)?
        }
        (None, Some(ts)) => model.sample_prior_indexed(ts, 0)?.1,
        (None, None) => match ctx {
            Ctx::Grid(env) => env.factual_trajectory()?,
            _ => {
                return Err(CfxError::Config(
                    "need --tau or --tau-seed for this model source".into(),
                ))
            }
        },
        _ => return Err(CfxError::Config("--tau conflicts with --tau-seed".into())),
    };
    let response = match &args.response {
        Some(text) => parse_response(text, model)?,
        None => ctx.default_response(),
    };
    let query = EffectQuery::new_by_label(model, &tau, agent, time, &action, response)?;
    let _ = seed;
    Ok((tau, query))
}

fn transport_query(
    from: &ScmModel,
    to: &ScmModel,
    tau: &Trajectory,
    query: &EffectQuery,
) -> Result<(Trajectory, EffectQuery)> {
    let local = transport_trajectory(from, tau, to)?;
    let q = EffectQuery::new(
        to,
        &local,
        query.agent,
        query.time,
        query.action,
        query.response.clone(),
    )?;
    Ok((local, q))
}

fn config_value(args: &RunArgs, seed: u64) -> Value {
    json!({
        "env": args.model.env,
        "model": args.model.model.as_ref().map(|p| p.display().to_string()),
        "mu": args.model.mu,
        "rounds": args.model.rounds,
        "ordering_seed": args.model.ordering_seed,
        "query": args.query.query,
        "agent": args.query.agent,
        "time": args.query.time,
        "action": args.query.action,
        "response": args.query.response,
        "seed": seed,
        "samples": args.samples,
        "h1": args.h1,
        "h2": args.h2,
        "shapley": match args.shapley { ShapleyArg::Exact => "exact", ShapleyArg::Sampled => "sampled" },
        "permutations": args.permutations,
        "icc_group": args.icc_group,
        "icc_sparse": args.icc_sparse,
        "oracle": args.oracle,
    })
}

pub fn decompose(args: RunArgs, full: bool) -> Result<()> {
    let seed = crate::resolve_seed(args.seed);
    let ctx = load_ctx(&args.model)?;
    let model = ctx.model();
    let (_tau, query) = resolve_query(&ctx, &args.query, seed)?;

    let explanation = effects::explanation_formula(model, &query, args.samples, seed, false)?;
    let sse = effects::sse(model, &query, args.samples, seed)?;

    let shapley = if full {
        let mut chi = AseCharacteristic::new(model, &query, args.samples, seed);
        Some(match args.shapley {
            ShapleyArg::Exact => shapley_exact(&mut chi)?,
            ShapleyArg::Sampled => shapley_sampled(&mut chi, args.permutations, seed)?,
        })
    } else {
        None
    };

    let icc = if full {
        let params = IccParams {
            h1: args.h1,
            h2: args.h2,
            grouping: args.icc_group,
            seed,
        };
        if args.icc_sparse {
            // Localize the spike, then report the full sweep restricted to
            // the standard output shape.
            let spike = find_icc_spike(model, &query, &params)?;
            let mut rep = r_sse_icc(model, &query, &params)?;
            if let Some(k) = spike {
                rep.entries.retain(|e| e.k_start == k);
            }
            Some(IccBlock::from(&rep))
        } else {
            Some(IccBlock::from(&r_sse_icc(model, &query, &params)?))
        }
    } else {
        None
    };

    let oracle_block = if args.oracle {
        Some(OracleBlock::from(&oracle::oracle_effects(
            model,
            &query,
            args.oracle_cap,
        )?))
    } else {
        None
    };

    let config = config_value(&args, seed);
    let report = DecompositionReport {
        seed,
        config_hash: config_hash(&config),
        config,
        generated_unix_ms: now_unix_ms(),
        effects: EffectsBlock::new(&explanation, sse),
        shapley,
        icc,
        oracle: oracle_block,
        provenance: Provenance {
            tool: "cfx".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    };

    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CfxError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let series = csv_series(&report);
        write_file(&dir.join("effects.csv"), &series.effects)?;
        if let Some(phi) = &series.phi {
            write_file(&dir.join("phi.csv"), phi)?;
        }
        if let Some(psi) = &series.psi {
            write_file(&dir.join("psi.csv"), psi)?;
        }
    }

    emit(&report.to_json(), args.out.as_deref())
}

pub fn oracle(args: RunArgs) -> Result<()> {
    let seed = crate::resolve_seed(args.seed);
    let ctx = load_ctx(&args.model)?;
    let model = ctx.model();
    let (_tau, query) = resolve_query(&ctx, &args.query, seed)?;
    let exact = oracle::oracle_effects(model, &query, args.oracle_cap)?;
    let n = args.samples;
    let mc = [
        ("tcfe", effects::tcfe(model, &query, n, seed)?, exact.tcfe),
        ("tot_ase", effects::tot_ase(model, &query, n, seed)?, exact.tot_ase),
        ("sse", effects::sse(model, &query, n, seed)?, exact.sse),
        ("r_sse", effects::r_sse(model, &query, n, seed)?, exact.r_sse),
    ];
    let comparison: BTreeMap<&str, Value> = mc
        .iter()
        .map(|(name, est, truth)| {
            (
                *name,
                json!({
                    "exact": truth,
                    "mc_mean": est.mean,
                    "mc_std_error": est.std_error,
                    "within_3_sigma": (est.mean - truth).abs() <= 3.0 * est.std_error + 1e-9,
                }),
            )
        })
        .collect();
    let doc = json!({
        "seed": seed,
        "oracle": { "tcfe": exact.tcfe, "tot_ase": exact.tot_ase, "sse": exact.sse, "r_sse": exact.r_sse },
        "comparison": comparison,
    });
    emit(
        &serde_json::to_string_pretty(&doc).expect("serializes"),
        args.out.as_deref(),
    )
}

fn parse_grid(specs: &[String]) -> Result<Vec<Vec<(String, f64)>>> {
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for spec in specs {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| CfxError::Config(format!("bad grid spec '{spec}'")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| CfxError::Config(format!("bad grid value '{v}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(CfxError::Config("empty grid".into()));
        }
        axes.push((name.trim().to_string(), values));
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![vec![]];
    for (name, values) in axes {
        let mut next = Vec::new();
        for point in &points {
            for &v in &values {
                let mut p = point.clone();
                p.push((name.clone(), v));
                next.push(p);
            }
        }
        points = next;
    }
    Ok(points)
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let seed = crate::resolve_seed(args.seed);
    let points = parse_grid(&args.grid)?;
    if points.is_empty() || points[0].is_empty() {
        return Err(CfxError::Config("grid is empty".into()));
    }

    // Resolve the query once against the base context; each grid point
    // transports the factual trajectory into its own model.
    let base_ctx = load_ctx(&args.model)?;
    let (base_tau, base_query) = resolve_query(&base_ctx, &args.query, seed)?;
    let n_agents = base_ctx.model().n_agents();

    let mut csv = String::new();
    let param_names: Vec<String> = points[0].iter().map(|(n, _)| n.clone()).collect();
    csv.push_str(&param_names.join(","));
    csv.push_str(",tcfe,tcfe_se,tot_ase,tot_ase_se,sse,sse_se,r_sse,r_sse_se");
    for agent in 1..=n_agents {
        csv.push_str(&format!(",phi_{agent}"));
    }
    for agent in 1..=n_agents {
        csv.push_str(&format!(",phi_share_{agent}"));
    }
    csv.push('\n');

    for point in &points {
        let mut model_args = args.model.clone();
        for (name, value) in point {
            match name.as_str() {
                "mu" => model_args.mu = *value,
                "ordering_seed" => model_args.ordering_seed = Some(*value as u64),
                other => {
                    return Err(CfxError::Config(format!("unknown grid parameter '{other}'")))
                }
            }
        }
        let ctx = load_ctx(&model_args)?;
        let (_, query) = transport_query(
            base_ctx.model(),
            ctx.model(),
            &base_tau,
            &base_query,
        )?;
        let model = ctx.model();
        let explanation = effects::explanation_formula(model, &query, args.samples, seed, false)?;
        let sse = effects::sse(model, &query, args.samples, seed)?;
        let mut chi = AseCharacteristic::new(model, &query, args.samples, seed);
        let shapley = shapley_exact(&mut chi)?;
        let tot = shapley.grand_coalition();

        for (_, value) in point {
            csv.push_str(&format!("{value},"));
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            explanation.tcfe.mean,
            explanation.tcfe.std_error,
            explanation.tot_ase.mean,
            explanation.tot_ase.std_error,
            sse.mean,
            sse.std_error,
            explanation.r_sse.mean,
            explanation.r_sse.std_error,
        ));
        for agent in 1..=n_agents {
            csv.push_str(&format!(",{}", shapley.phi[agent - 1]));
        }
        for agent in 1..=n_agents {
            let share = if tot != 0.0 {
                shapley.phi[agent - 1] / tot
            } else {
                f64::NAN
            };
            csv.push_str(&format!(",{share}"));
        }
        csv.push('\n');
    }
    emit(&csv, args.out.as_deref())
}

pub fn replay(fixture: &Path, through_model: bool) -> Result<()> {
    let text = read(fixture)?;
    let parsed = replay_mod::parse_fixture(&text)?;
    let audit = replay_mod::audit(&parsed)?;
    let mut doc = json!({
        "steps_checked": audit.steps_checked,
        "total_deci": audit.total_deci,
        "total": replay_mod::format_deci(audit.total_deci),
        "goal": replay_mod::format_deci(parsed.goal_deci),
        "boxes": [parsed.boxes.0, parsed.boxes.1],
    });
    if through_model {
        let env = cfx_core::env::gridworld::build_gridworld(GridworldConfig::paper_preset())?;
        let tau = replay_mod::to_model_trajectory(&env, &parsed)?;
        let rollout = env.rollout_total_deci(&tau)?;
        doc["model_total_deci"] = json!(rollout);
        doc["model_matches_fixture"] = json!(rollout == audit.total_deci);
        if rollout != audit.total_deci {
            return Err(CfxError::Audit {
                step: parsed.goal_step,
                reason: format!(
                    "model rollout total {} != fixture total {}",
                    replay_mod::format_deci(rollout),
                    replay_mod::format_deci(audit.total_deci)
                ),
            });
        }
    }
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let seed = crate::resolve_seed(args.seed);
    let ctx = load_ctx(&args.model)?;
    let model = ctx.model();

    let monotone = model.check_noise_monotonicity(64);
    let measure = model.max_measure_deviation();
    let chi = empirical_consistency(model, args.samples, seed)?;

    let consistency = match &ctx {
        Ctx::Grid(env) => Some(consistency_check(model, &env.mmdp, &env.policies)?),
        Ctx::Sepsis { env, .. } => Some(consistency_check(model, &env.mmdp, &env.policies)?),
        Ctx::File {
            spec: Some((spec, pi)),
            ..
        } => Some(consistency_check(model, spec, pi)?),
        Ctx::File { spec: None, .. } => None,
    };

    let doc = json!({
        "variables": model.n_vars(),
        "noise_monotone": monotone.passed(),
        "monotonicity_rows_checked": monotone.checked,
        "max_measure_deviation": measure,
        "consistency": consistency.as_ref().map(|r| json!({
            "passed": r.passed(),
            "max_deviation": r.max_deviation,
            "checked": r.checked,
            "worst": r.worst.as_ref().map(|w| format!("{} expected {} got {}", w.what, w.expected, w.actual)),
        })),
        "chi_square": {
            "rows_tested": chi.rows_tested,
            "min_row_p": chi.min_row_p,
            "aggregate_p": chi.aggregate_p(),
        },
        "samples": args.samples,
        "seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));

    if !monotone.passed() || measure > 1e-12 {
        return Err(CfxError::Inconsistent("structural checks failed".into()));
    }
    if let Some(report) = &consistency {
        if !report.passed() {
            return Err(CfxError::Inconsistent(format!(
                "observational consistency deviates by {}",
                report.max_deviation
            )));
        }
    }
    if chi.aggregate_p() < 0.01 {
        return Err(CfxError::Inconsistent(format!(
            "empirical frequencies reject the model (p = {})",
            chi.aggregate_p()
        )));
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| CfxError::Config(format!("cannot write {}: {e}", path.display())))
}
