//! Report models shared by the text and structured renderers. Text output
//! prints numbers to three decimals; structured output is JSON with full
//! precision and a field order fixed by these struct definitions, so
//! identical inputs produce byte-identical reports.

use serde::Serialize;

use lmrr::estimation::{BicValue, FitResult, ModelComparison, StepwiseStep};
use lmrr::{BlockDesign, BlockId, Design, ParamKey};

#[derive(Debug, Serialize)]
pub struct ParamReport {
    pub name: String,
    /// Absent when the coefficient is constrained to zero.
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub constrained: bool,
}

#[derive(Debug, Serialize)]
pub struct BlockReport {
    pub block: &'static str,
    pub free_params: usize,
    pub params: Vec<ParamReport>,
}

#[derive(Debug, Serialize)]
pub struct BicReport {
    pub convention: String,
    pub k: usize,
    pub value: f64,
}

impl From<BicValue> for BicReport {
    fn from(b: BicValue) -> Self {
        BicReport {
            convention: b.convention.name().to_string(),
            k: b.k,
            value: b.value,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub command: &'static str,
    pub n: u64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loglik: f64,
    pub background_loglik: f64,
    pub bic: BicReport,
    pub blocks: Vec<BlockReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub command: &'static str,
    pub n: u64,
    pub deviance: f64,
    pub df: usize,
    pub p_value: f64,
    pub delta_bic: f64,
    pub bic_reduced: BicReport,
    pub bic_full: BicReport,
}

#[derive(Debug, Serialize)]
pub struct EffectReport {
    pub name: String,
    pub rr: f64,
    pub log_rr: f64,
}

#[derive(Debug, Serialize)]
pub struct DecompositionRow {
    pub response: String,
    pub rr_conditional: f64,
    pub deviation: f64,
    pub rr_marginal: f64,
    pub weighted_rr_treated: f64,
    pub weighted_rr_control: f64,
    /// Marginal relative risk recomputed by exhaustive marginalization.
    pub oracle_rr_marginal: f64,
    pub log_conditional: f64,
    pub log_deviation: f64,
    pub log_marginal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_log_conditional: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_log_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_log_marginal: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    pub command: &'static str,
    pub over: Vec<String>,
    pub rows: Vec<DecompositionRow>,
    /// Relative risks of each intermediate pattern event for the background.
    pub intermediate_rrs: Vec<EffectReport>,
    /// Response relative risks of each single intermediate, other
    /// intermediates at zero.
    pub intermediate_effects: Vec<EffectReport>,
    /// Largest |log marginal − oracle| across rows.
    pub oracle_max_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub dropped: String,
    pub deviance: f64,
    pub delta_bic: f64,
}

#[derive(Debug, Serialize)]
pub struct StepwiseReport {
    pub command: &'static str,
    pub candidates: usize,
    pub steps: Vec<StepReport>,
    pub selected: FitReport,
}

/// Builds the per-block estimate tables for a fit, with constrained
/// coefficients kept as explicit `-` rows.
pub fn block_reports(
    design: &Design,
    fit: &FitResult,
    inference: Option<&lmrr::estimation::FitInference>,
) -> Vec<BlockReport> {
    let mut out = Vec::new();
    let blocks: [(&'static str, BlockId, Option<&BlockDesign>); 2] = [
        ("responses", BlockId::Response, Some(&design.response_block)),
        (
            "intermediates",
            BlockId::Intermediate,
            design.intermediate_block.as_ref(),
        ),
    ];
    for (label, id, bd) in blocks {
        let Some(bd) = bd else { continue };
        let Some(block_fit) = fit.block(id) else { continue };
        let inf = inference.and_then(|i| i.block(id));
        let mut params = Vec::new();
        for key in ordered_keys(bd) {
            let constrained = block_fit.constraints.contains(&key);
            params.push(ParamReport {
                name: bd.param_name(key),
                estimate: (!constrained).then(|| block_fit.params.value(key)),
                se: if constrained {
                    None
                } else {
                    inf.and_then(|i| i.se(key))
                },
                constrained,
            });
        }
        out.push(BlockReport {
            block: label,
            free_params: block_fit.free_params,
            params,
        });
    }
    out
}

/// Keys ordered for display: response subsets by size then position, each
/// with intercept first and terms by size then position.
pub fn ordered_keys(design: &BlockDesign) -> Vec<ParamKey> {
    let mut subsets: Vec<_> = design.responses().nonempty_subsets().collect();
    subsets.sort_by_key(|s| (s.len(), s.index()));
    let mut terms: Vec<_> = design.terms().to_vec();
    terms.sort_by_key(|t| (t.len(), t.index()));
    let mut keys = Vec::new();
    for d in subsets {
        for &t in &terms {
            keys.push(ParamKey {
                response: d,
                term: t,
            });
        }
    }
    keys
}

pub fn steps_report(design: &Design, steps: &[StepwiseStep]) -> Vec<StepReport> {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepReport {
            step: i + 1,
            dropped: design
                .block(s.block)
                .expect("step names an existing block")
                .param_name(s.key),
            deviance: s.deviance,
            delta_bic: s.delta_bic,
        })
        .collect()
}

pub fn comparison_report(
    cmp: &ModelComparison,
    n: u64,
    bic_reduced: BicValue,
    bic_full: BicValue,
) -> CompareReport {
    CompareReport {
        command: "compare",
        n,
        deviance: cmp.deviance,
        df: cmp.df,
        p_value: cmp.p_value,
        delta_bic: cmp.delta_bic,
        bic_reduced: bic_reduced.into(),
        bic_full: bic_full.into(),
    }
}

// ---------------------------------------------------------------------------
// text rendering
// ---------------------------------------------------------------------------

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn opt3(v: Option<f64>) -> String {
    v.map(fmt3).unwrap_or_else(|| "-".to_string())
}

pub fn render_fit_text(r: &FitReport) -> String {
    let mut out = String::new();
    for block in &r.blocks {
        out.push_str(&format!(
            "block: {} (free parameters: {})\n",
            block.block, block.free_params
        ));
        let width = block
            .params
            .iter()
            .map(|p| p.name.len())
            .max()
            .unwrap_or(10)
            .max(10);
        out.push_str(&format!(
            "  {:<width$} {:>10} {:>10}\n",
            "parameter", "estimate", "s.e."
        ));
        for p in &block.params {
            out.push_str(&format!(
                "  {:<width$} {:>10} {:>10}\n",
                p.name,
                opt3(p.estimate),
                opt3(p.se)
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "n = {}   loglik(blocks) = {}   loglik(joint) = {}\n",
        r.n,
        fmt3(r.loglik),
        fmt3(r.loglik + r.background_loglik)
    ));
    out.push_str(&format!(
        "BIC = {} (convention: {}, k = {})\n",
        fmt3(r.bic.value),
        r.bic.convention,
        r.bic.k
    ));
    out.push_str(&format!(
        "converged: {} after {} iterations (gradient norm {:.2e})\n",
        r.converged, r.iterations, r.gradient_norm
    ));
    if let Some(note) = &r.note {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

pub fn render_compare_text(r: &CompareReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "deviance = {}   df = {}   p-value = {}\n",
        fmt3(r.deviance),
        r.df,
        fmt3(r.p_value)
    ));
    out.push_str(&format!(
        "BIC reduced = {}   BIC full = {}   (convention: {})\n",
        fmt3(r.bic_reduced.value),
        fmt3(r.bic_full.value),
        r.bic_reduced.convention
    ));
    out.push_str(&format!(
        "delta BIC = {} ({})\n",
        fmt3(r.delta_bic),
        if r.delta_bic < 0.0 {
            "favors the reduced model"
        } else {
            "favors the full model"
        }
    ));
    out
}

pub fn render_decompose_text(r: &DecomposeReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("deviation over: {}\n\n", r.over.join(",")));
    let width = r
        .rows
        .iter()
        .map(|row| row.response.len())
        .max()
        .unwrap_or(8)
        .max(8);
    out.push_str(&format!(
        "  {:<width$} {:>12} {:>10} {:>12} {:>12} {:>12} {:>12}\n",
        "response", "conditional", "deviation", "marginal", "avg-treated", "avg-control", "oracle"
    ));
    for row in &r.rows {
        out.push_str(&format!(
            "  {:<width$} {:>12} {:>10} {:>12} {:>12} {:>12} {:>12}\n",
            row.response,
            fmt3(row.rr_conditional),
            fmt3(row.deviation),
            fmt3(row.rr_marginal),
            fmt3(row.weighted_rr_treated),
            fmt3(row.weighted_rr_control),
            fmt3(row.oracle_rr_marginal),
        ));
    }
    if r.rows.iter().any(|row| row.se_log_marginal.is_some()) {
        out.push_str("\n  log-scale standard errors (delta method)\n");
        out.push_str(&format!(
            "  {:<width$} {:>12} {:>10} {:>12}\n",
            "response", "conditional", "deviation", "marginal"
        ));
        for row in &r.rows {
            out.push_str(&format!(
                "  {:<width$} {:>12} {:>10} {:>12}\n",
                row.response,
                opt3(row.se_log_conditional),
                opt3(row.se_log_deviation),
                opt3(row.se_log_marginal),
            ));
        }
    }
    if !r.intermediate_rrs.is_empty() {
        out.push_str("\nintermediate relative risks (background effect)\n");
        for e in &r.intermediate_rrs {
            out.push_str(&format!("  {:<24} {:>8}\n", e.name, fmt3(e.rr)));
        }
    }
    if !r.intermediate_effects.is_empty() {
        out.push_str("\nresponse effects of single intermediates\n");
        for e in &r.intermediate_effects {
            out.push_str(&format!("  {:<24} {:>8}\n", e.name, fmt3(e.rr)));
        }
    }
    out.push_str(&format!(
        "\nmarginalization cross-check: max |log marginal - oracle| = {:.2e}\n",
        r.oracle_max_gap
    ));
    if let Some(note) = &r.note {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

pub fn render_stepwise_text(r: &StepwiseReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("candidates: {}\n", r.candidates));
    if r.steps.is_empty() {
        out.push_str("no constraint lowered the BIC; model kept as declared\n\n");
    } else {
        for s in &r.steps {
            out.push_str(&format!(
                "step {}: drop {} (deviance {}, delta BIC {})\n",
                s.step,
                s.dropped,
                fmt3(s.deviance),
                fmt3(s.delta_bic)
            ));
        }
        out.push('\n');
    }
    out.push_str("selected model\n");
    out.push_str(&render_fit_text(&r.selected));
    out
}
