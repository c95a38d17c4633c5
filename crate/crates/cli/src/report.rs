//! Report assembly and serialization: one JSON document per decomposition
//! run plus plot-ready CSV series.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use cfx_core::attribution::{IccReport, ShapleyReport};
use cfx_core::effects::{EffectEstimate, ExplanationReport};
use cfx_core::oracle::OracleEffects;

/// FNV-1a over the canonical bytes of the run configuration. Stable across
/// runs and platforms; the timestamp is not part of the hash.
pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Serialize)]
pub struct EffectsBlock {
    pub tcfe: EffectEstimate,
    pub tot_ase: EffectEstimate,
    pub sse: EffectEstimate,
    pub r_sse: EffectEstimate,
    pub identity_residual: f64,
    pub max_sample_residual: f64,
    /// tot_ase and -r_sse as percentage shares of tcfe, when tcfe != 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentages: Option<Percentages>,
}

#[derive(Debug, Serialize)]
pub struct Percentages {
    pub tot_ase: f64,
    pub neg_r_sse: f64,
}

impl EffectsBlock {
    pub fn new(explanation: &ExplanationReport, sse: EffectEstimate) -> EffectsBlock {
        EffectsBlock {
            tcfe: strip(&explanation.tcfe),
            tot_ase: strip(&explanation.tot_ase),
            sse,
            r_sse: strip(&explanation.r_sse),
            identity_residual: explanation.identity_residual,
            max_sample_residual: explanation.max_sample_residual,
            percentages: explanation.shares.map(|(a, b)| Percentages {
                tot_ase: a,
                neg_r_sse: b,
            }),
        }
    }
}

fn strip(est: &EffectEstimate) -> EffectEstimate {
    EffectEstimate {
        mean: est.mean,
        std_error: est.std_error,
        n_samples: est.n_samples,
        per_sample: None,
    }
}

#[derive(Debug, Serialize)]
pub struct OracleBlock {
    pub tcfe: f64,
    pub tot_ase: f64,
    pub sse: f64,
    pub r_sse: f64,
}

impl From<&OracleEffects> for OracleBlock {
    fn from(o: &OracleEffects) -> OracleBlock {
        OracleBlock {
            tcfe: o.tcfe,
            tot_ase: o.tot_ase,
            sse: o.sse,
            r_sse: o.r_sse,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IccBlock {
    /// psi keyed by state timestep (group start when grouped).
    pub psi: BTreeMap<String, f64>,
    pub unc: BTreeMap<String, f64>,
    pub icc_raw: BTreeMap<String, f64>,
    pub icc_clamped: BTreeMap<String, f64>,
    pub var_delta: f64,
    pub unc_final: f64,
    pub r_sse: f64,
    pub r_sse_std_error: f64,
    pub grouping: usize,
    pub h1: usize,
    pub h2: usize,
    pub degenerate: bool,
    pub gini: f64,
    pub psi_total: f64,
}

impl From<&IccReport> for IccBlock {
    fn from(r: &IccReport) -> IccBlock {
        let key = |k: usize| format!("{k}");
        IccBlock {
            psi: r.entries.iter().map(|e| (key(e.k_start), e.psi)).collect(),
            unc: r
                .entries
                .iter()
                .map(|e| (key(e.k_start), e.unc_before))
                .collect(),
            icc_raw: r.entries.iter().map(|e| (key(e.k_start), e.icc_raw)).collect(),
            icc_clamped: r
                .entries
                .iter()
                .map(|e| (key(e.k_start), e.icc_clamped))
                .collect(),
            var_delta: r.var_delta,
            unc_final: r.unc_final,
            r_sse: r.r_sse,
            r_sse_std_error: r.r_sse_std_error,
            grouping: r.grouping,
            h1: r.h1,
            h2: r.h2,
            degenerate: r.degenerate,
            gini: r.gini,
            psi_total: r.psi_total(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DecompositionReport {
    pub seed: u64,
    pub config: Value,
    pub config_hash: String,
    pub generated_unix_ms: u128,
    pub effects: EffectsBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapley: Option<ShapleyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icc: Option<IccBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
}

impl DecompositionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn now_unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// CSV series for plotting: one file per decomposition facet.
pub struct CsvSeries {
    pub effects: String,
    pub phi: Option<String>,
    pub psi: Option<String>,
}

pub fn csv_series(report: &DecompositionReport) -> CsvSeries {
    let mut effects = String::from("effect,mean,std_error\n");
    for (name, est) in [
        ("tcfe", &report.effects.tcfe),
        ("tot_ase", &report.effects.tot_ase),
        ("sse", &report.effects.sse),
        ("r_sse", &report.effects.r_sse),
    ] {
        effects.push_str(&format!("{name},{},{}\n", est.mean, est.std_error));
    }
    let phi = report.shapley.as_ref().map(|s| {
        let mut out = String::from("agent,phi\n");
        for (i, phi) in s.phi.iter().enumerate() {
            out.push_str(&format!("{},{phi}\n", i + 1));
        }
        out
    });
    let psi = report.icc.as_ref().map(|icc| {
        let mut out = String::from("k,psi\n");
        for (k, psi) in &icc.psi {
            out.push_str(&format!("{k},{psi}\n"));
        }
        out
    });
    CsvSeries {
        effects,
        phi,
        psi,
    }
}
