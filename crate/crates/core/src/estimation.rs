//! Constrained maximum-likelihood fitting of the block models, with
//! log-likelihood, deviance, BIC, standard errors and backward stepwise
//! selection.
//!
//! The joint likelihood factorizes over blocks, so each block is maximized
//! independently. Saturated blocks are solved in closed form from empirical
//! proportions; constrained blocks run a feasibility-guarded Newton ascent
//! with analytic gradient and Hessian.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::{
    cells_to_params, BlockDesign, BlockId, BlockStructure, Design, LogMeanParams, ModelParams,
    ParamKey, ZeroConstraints,
};
use crate::subsets::Subset;
use crate::tables::ContingencyTable;

/// Observed counts of one block: response-cell counts within each covariate
/// stratum. Strata are indexed by the covariate assignment mask.
#[derive(Debug, Clone)]
pub struct BlockData {
    /// `counts[config][response_cell]`
    counts: Vec<Vec<f64>>,
    bases: Vec<f64>,
}

impl BlockData {
    /// Slices the contingency table along a block's responses and covariates.
    /// Variables outside the block are summed over.
    pub fn from_table(table: &ContingencyTable, design: &BlockDesign) -> Result<Self> {
        let resp_cols: Vec<usize> = design
            .responses()
            .names()
            .iter()
            .map(|n| {
                table
                    .vars()
                    .index_of(n)
                    .ok_or_else(|| Error::UnknownVariable(n.clone()))
            })
            .collect::<Result<_>>()?;
        let cov_cols: Vec<usize> = design
            .covariates()
            .names()
            .iter()
            .map(|n| {
                table
                    .vars()
                    .index_of(n)
                    .ok_or_else(|| Error::UnknownVariable(n.clone()))
            })
            .collect::<Result<_>>()?;

        let n_configs = design.covariates().n_cells();
        let n_cells = design.responses().n_cells();
        let mut counts = vec![vec![0.0; n_cells]; n_configs];
        for cell in table.vars().subsets() {
            let c = table.count(cell);
            if c == 0 {
                continue;
            }
            let mut resp = 0usize;
            for (bit, &col) in resp_cols.iter().enumerate() {
                if cell.contains(col) {
                    resp |= 1 << bit;
                }
            }
            let mut config = 0usize;
            for (bit, &col) in cov_cols.iter().enumerate() {
                if cell.contains(col) {
                    config |= 1 << bit;
                }
            }
            counts[config][resp] += c as f64;
        }
        let bases = counts.iter().map(|row| row.iter().sum()).collect();
        Ok(BlockData { counts, bases })
    }

    pub fn n_configs(&self) -> usize {
        self.counts.len()
    }

    pub fn base(&self, config: usize) -> f64 {
        self.bases[config]
    }

    /// Empirical conditional proportions per stratum. Zero cells get a mass
    /// of `0.5/base` before renormalizing; empty strata fall back to uniform.
    pub fn smoothed_proportions(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .zip(&self.bases)
            .map(|(row, &base)| {
                let k = row.len() as f64;
                if base == 0.0 {
                    return vec![1.0 / k; row.len()];
                }
                let mut props: Vec<f64> = row
                    .iter()
                    .map(|&c| if c == 0.0 { 0.5 / base } else { c / base })
                    .collect();
                let sum: f64 = props.iter().sum();
                for p in &mut props {
                    *p /= sum;
                }
                props
            })
            .collect()
    }

    /// Exact empirical proportions; errors on an empty stratum.
    pub fn exact_proportions(&self) -> Result<Vec<Vec<f64>>> {
        self.counts
            .iter()
            .zip(&self.bases)
            .enumerate()
            .map(|(config, (row, &base))| {
                if base == 0.0 {
                    return Err(Error::LogDomain(format!(
                        "covariate stratum #{config} is empty; a saturated block cannot be \
                         solved there — merge strata or smooth the counts"
                    )));
                }
                Ok(row.iter().map(|&c| c / base).collect())
            })
            .collect()
    }
}

/// Log-likelihood of one block: count-weighted log conditional cell
/// probabilities, summed over strata. Parameter points outside the valid
/// region, or putting mass zero on an observed cell, come back as `-inf`.
pub fn block_loglik(params: &LogMeanParams, data: &BlockData) -> f64 {
    let mut total = 0.0;
    for (config, row) in data.counts.iter().enumerate() {
        if data.bases[config] == 0.0 {
            continue;
        }
        let cells = match params.conditional_cells(Subset(config as u16)) {
            Ok(c) => c,
            Err(_) => return f64::NEG_INFINITY,
        };
        for (cell, &n) in row.iter().enumerate() {
            if n == 0.0 {
                continue;
            }
            if cells[cell] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += n * cells[cell].ln();
        }
    }
    total
}

/// Joint log-likelihood of the modeled blocks (response block plus, when
/// present, the intermediate block). The background margin is not included.
pub fn loglik(
    params: &ModelParams,
    table: &ContingencyTable,
    _structure: &BlockStructure,
) -> Result<f64> {
    let rd = BlockData::from_table(table, params.response.design())?;
    let mut total = block_loglik(&params.response, &rd);
    if let Some(ip) = &params.intermediate {
        let id = BlockData::from_table(table, ip.design())?;
        total += block_loglik(ip, &id);
    }
    Ok(total)
}

/// Per-block piece of a fit.
#[derive(Debug, Clone)]
pub struct BlockFit {
    pub params: LogMeanParams,
    pub constraints: BTreeSet<ParamKey>,
    pub loglik: f64,
    pub free_params: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Result of fitting both blocks to a table.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub response: BlockFit,
    pub intermediate: Option<BlockFit>,
    /// Sum of the modeled blocks' log-likelihoods.
    pub loglik: f64,
    /// Multinomial term of the background margin at its empirical maximum;
    /// identical across nested models, needed only for absolute BIC values.
    pub background_loglik: f64,
    pub n: u64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            response: self.response.params.clone(),
            intermediate: self.intermediate.as_ref().map(|b| b.params.clone()),
        }
    }

    pub fn free_param_count(&self) -> usize {
        self.response.free_params
            + self
                .intermediate
                .as_ref()
                .map_or(0, |b| b.free_params)
    }

    pub fn block(&self, id: BlockId) -> Option<&BlockFit> {
        match id {
            BlockId::Response => Some(&self.response),
            BlockId::Intermediate => self.intermediate.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// A block counts as converged when the free-coordinate gradient norm
    /// drops below this.
    pub gradient_tol: f64,
    /// Relative objective changes below this are treated as resolution
    /// noise by the step acceptance.
    pub loglik_rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            gradient_tol: 1e-8,
            loglik_rel_tol: 1e-12,
        }
    }
}

/// Dense-parameter objective for one block, restricted to free coordinates.
struct BlockObjective<'a> {
    design: &'a BlockDesign,
    data: &'a BlockData,
    /// dense indices of unconstrained parameters
    free: Vec<usize>,
}

impl<'a> BlockObjective<'a> {
    fn new(design: &'a BlockDesign, data: &'a BlockData, constraints: &BTreeSet<ParamKey>) -> Self {
        let constrained: Vec<usize> = constraints
            .iter()
            .filter_map(|&k| design.index_of(k))
            .collect();
        let free = (0..design.n_params())
            .filter(|i| !constrained.contains(i))
            .collect();
        BlockObjective { design, data, free }
    }

    fn loglik(&self, params: &LogMeanParams) -> f64 {
        block_loglik(params, self.data)
    }

    fn with_free(&self, base: &LogMeanParams, free_values: &DVector<f64>) -> LogMeanParams {
        let mut p = base.clone();
        for (pos, &dense) in self.free.iter().enumerate() {
            p.values_mut()[dense] = free_values[pos];
        }
        p
    }

    fn free_values(&self, params: &LogMeanParams) -> DVector<f64> {
        DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|&i| params.values()[i]),
        )
    }

    /// Analytic gradient and Hessian of the block log-likelihood in the free
    /// coordinates. `None` when the point is infeasible.
    #[allow(clippy::needless_range_loop)] // masks double as indices throughout
    fn grad_hess(&self, params: &LogMeanParams) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n_free = self.free.len();
        let n_terms = self.design.terms().len();
        let n_resp_subsets = self.design.responses().n_cells(); // includes empty
        let mut grad = vec![0.0; self.design.n_params()];
        let mut hess = DMatrix::<f64>::zeros(self.design.n_params(), self.design.n_params());

        for (config, row) in self.data.counts.iter().enumerate() {
            if self.data.bases[config] == 0.0 {
                continue;
            }
            let config_mask = Subset(config as u16);
            let margins = params.margins_given(config_mask).ok()?;
            let cells = crate::subsets::moebius_invert(&margins).ok()?;

            // A_D = Σ_y n_y (−1)^{|D∖y|} π_D / q_y over observed y ⊆ D
            // B_{D,D'} = π_D π_{D'} Σ_y n_y s_y(D) s_y(D') / q_y²
            let mut a = vec![0.0; n_resp_subsets];
            let mut b = DMatrix::<f64>::zeros(n_resp_subsets, n_resp_subsets);
            let mut s = vec![0.0; n_resp_subsets];
            for (y, &n) in row.iter().enumerate() {
                if n == 0.0 {
                    continue;
                }
                let q = cells[y];
                if q <= 0.0 {
                    return None;
                }
                let y_mask = Subset(y as u16);
                for d in 1..n_resp_subsets {
                    let d_mask = Subset(d as u16);
                    s[d] = if y_mask.is_subset_of(d_mask) {
                        let parity = d_mask.minus(y_mask).len() % 2;
                        let sign = if parity == 0 { 1.0 } else { -1.0 };
                        sign * margins.value(d_mask)
                    } else {
                        0.0
                    };
                }
                for d1 in 1..n_resp_subsets {
                    if s[d1] == 0.0 {
                        continue;
                    }
                    a[d1] += n * s[d1] / q;
                    for d2 in 1..n_resp_subsets {
                        if s[d2] != 0.0 {
                            b[(d1, d2)] += n * s[d1] * s[d2] / (q * q);
                        }
                    }
                }
            }

            // active terms: with 0/1 covariates, x_t(config) = 1[t ⊆ config]
            let active: Vec<usize> = self
                .design
                .terms()
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_subset_of(config_mask))
                .map(|(i, _)| i)
                .collect();

            for d1 in 1..n_resp_subsets {
                for &t1 in &active {
                    let p1 = (d1 - 1) * n_terms + t1;
                    grad[p1] += a[d1];
                    for d2 in 1..n_resp_subsets {
                        for &t2 in &active {
                            let p2 = (d2 - 1) * n_terms + t2;
                            let mut h = -b[(d1, d2)];
                            if d1 == d2 {
                                h += a[d1];
                            }
                            hess[(p1, p2)] += h;
                        }
                    }
                }
            }
        }

        let g = DVector::from_iterator(n_free, self.free.iter().map(|&i| grad[i]));
        let mut h = DMatrix::<f64>::zeros(n_free, n_free);
        for (r, &i) in self.free.iter().enumerate() {
            for (c, &j) in self.free.iter().enumerate() {
                h[(r, c)] = hess[(i, j)];
            }
        }
        Some((g, h))
    }
}

/// Central finite differences, used to cross-validate the analytic
/// derivatives and for delta-method error propagation.
pub mod numdiff {
    use nalgebra::DMatrix;

    pub const DEFAULT_STEP: f64 = 1e-5;

    pub fn gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(x.len());
        let mut xs = x.to_vec();
        for i in 0..x.len() {
            xs[i] = x[i] + h;
            let up = f(&xs);
            xs[i] = x[i] - h;
            let down = f(&xs);
            xs[i] = x[i];
            g.push((up - down) / (2.0 * h));
        }
        g
    }

    pub fn hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
        let k = x.len();
        let mut out = DMatrix::zeros(k, k);
        let mut xs = x.to_vec();
        let eval = |xs: &mut Vec<f64>, i: usize, j: usize, si: f64, sj: f64| {
            xs[i] += si * h;
            xs[j] += sj * h;
            let v = f(xs);
            xs[i] = x[i];
            xs[j] = x[j];
            v
        };
        for i in 0..k {
            for j in 0..k {
                let v = eval(&mut xs, i, j, 1.0, 1.0) - eval(&mut xs, i, j, 1.0, -1.0)
                    - eval(&mut xs, i, j, -1.0, 1.0)
                    + eval(&mut xs, i, j, -1.0, -1.0);
                out[(i, j)] = v / (4.0 * h * h);
            }
        }
        out
    }
}

fn fit_block(
    design: &BlockDesign,
    data: &BlockData,
    constraints: &BTreeSet<ParamKey>,
    opts: &FitOptions,
) -> Result<BlockFit> {
    for key in constraints {
        if key.term.is_empty() {
            return Err(Error::Domain(format!(
                "intercept {} cannot be constrained",
                design.param_name(*key)
            )));
        }
        if design.index_of(*key).is_none() {
            return Err(Error::Domain(format!(
                "constraint on {} which the design does not carry",
                design.param_name(*key)
            )));
        }
    }

    let objective = BlockObjective::new(design, data, constraints);
    let free_params = objective.free.len();

    if constraints.is_empty() && design.is_saturated() {
        // closed form: the saturated MLE reproduces the empirical proportions
        let params = cells_to_params(design, &data.exact_proportions()?).map_err(|e| match e {
            Error::LogDomain(msg) => Error::LogDomain(format!(
                "{msg}; smooth the counts (e.g. add 0.5 to empty cells) or merge strata"
            )),
            other => other,
        })?;
        let ll = objective.loglik(&params);
        let gradient_norm = objective
            .grad_hess(&params)
            .map(|(g, _)| g.norm())
            .unwrap_or(f64::NAN);
        return Ok(BlockFit {
            params,
            constraints: constraints.clone(),
            loglik: ll,
            free_params,
            iterations: 0,
            gradient_norm,
            converged: true,
        });
    }

    let mut params = starting_point(design, data, constraints, &objective)?;
    let mut ll = objective.loglik(&params);
    debug_assert!(ll.is_finite());

    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let (g, h) = objective
            .grad_hess(&params)
            .expect("current iterate is feasible");
        gradient_norm = g.norm();
        if gradient_norm < opts.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let x = objective.free_values(&params);
        // Newton direction when the Hessian solve yields an ascent
        // direction; a ridge-regularized solve covers flat (unidentified)
        // directions, where the gradient component is zero anyway; plain
        // gradient as the last resort.
        let solve_dir = |m: DMatrix<f64>| -> Option<DVector<f64>> {
            let step = m.lu().solve(&g)?;
            (step.dot(&g) > 0.0 && step.iter().all(|v| v.is_finite())).then_some(step)
        };
        let mut newton = solve_dir(-&h);
        if newton.is_none() {
            let scale = h.diagonal().amax().max(1.0);
            let mut ridge = 1e-10 * scale;
            for _ in 0..8 {
                let n_free = h.nrows();
                if let Some(step) =
                    solve_dir(-&h + DMatrix::identity(n_free, n_free) * ridge)
                {
                    newton = Some(step);
                    break;
                }
                ridge *= 100.0;
            }
        }
        let mut directions: Vec<DVector<f64>> = Vec::new();
        directions.extend(newton.iter().cloned());
        directions.push(g.clone());

        let mut accepted = None;
        'outer: for dir in &directions {
            let mut scale = 1.0;
            for _ in 0..60 {
                let candidate = objective.with_free(&params, &(&x + dir * scale));
                let ll_new = objective.loglik(&candidate);
                if ll_new.is_finite() && ll_new > ll {
                    accepted = Some((candidate, ll_new));
                    break 'outer;
                }
                scale *= 0.5;
            }
        }

        match accepted {
            Some((candidate, ll_new)) => {
                params = candidate;
                ll = ll_new;
            }
            None => {
                // Near the optimum the Newton step's improvement can fall
                // below the objective's floating-point resolution, so the
                // line search sees nothing to accept. Take the full step
                // anyway when it does not lose more than resolution noise
                // and it shrinks the gradient.
                let slack = opts.loglik_rel_tol * (1.0 + ll.abs());
                let polished = newton.and_then(|step| {
                    let candidate = objective.with_free(&params, &(&x + step));
                    let ll_new = objective.loglik(&candidate);
                    if !ll_new.is_finite() || ll_new < ll - slack {
                        return None;
                    }
                    let (g_new, _) = objective.grad_hess(&candidate)?;
                    (g_new.norm() < gradient_norm).then_some((candidate, ll_new))
                });
                match polished {
                    Some((candidate, ll_new)) => {
                        params = candidate;
                        ll = ll_new;
                    }
                    None => break, // genuinely stuck
                }
            }
        }
    }

    if !converged {
        // a stalled line search may still sit at the optimum
        if let Some((g, _)) = objective.grad_hess(&params) {
            gradient_norm = g.norm();
            converged = gradient_norm < opts.gradient_tol;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            gradient_norm,
            loglik: ll,
            last_values: params.values().to_vec(),
        });
    }

    Ok(BlockFit {
        params,
        constraints: constraints.clone(),
        loglik: ll,
        free_params,
        iterations,
        gradient_norm,
        converged,
    })
}

/// Warm start: solve the saturated companion design on smoothed empirical
/// proportions, keep the coefficients the design carries, zero the rest.
/// If that point is infeasible, shrink the slopes toward zero; the zero-slope
/// point implied by pooled proportions is always feasible.
fn starting_point(
    design: &BlockDesign,
    data: &BlockData,
    constraints: &BTreeSet<ParamKey>,
    objective: &BlockObjective,
) -> Result<LogMeanParams> {
    let saturated = BlockDesign::new_saturated(design.responses().clone(), design.covariates().clone());
    let smoothed = data.smoothed_proportions();
    let sat_params = cells_to_params(&saturated, &smoothed)?;

    let mut params = LogMeanParams::zeroed(design.clone());
    for key in design.keys() {
        if !constraints.contains(&key) {
            params.set(key, sat_params.value(key))?;
        }
    }

    for _ in 0..64 {
        if objective.loglik(&params).is_finite() {
            return Ok(params);
        }
        for key in design.keys() {
            if !key.term.is_empty() {
                let v = params.value(key);
                params.set(key, v * 0.5)?;
            }
        }
    }

    // pooled fallback: intercepts from the pooled distribution, slopes zero
    let n_cells = design.responses().n_cells();
    let mut pooled = vec![0.0; n_cells];
    let mut total = 0.0;
    for (row, &base) in smoothed.iter().zip(&data.bases) {
        let w = if base > 0.0 { base } else { 1.0 };
        for (c, p) in row.iter().enumerate() {
            pooled[c] += w * p;
        }
        total += w;
    }
    for p in &mut pooled {
        *p /= total;
    }
    let margins = crate::subsets::zeta_transform(&pooled)?;
    let mut params = LogMeanParams::zeroed(design.clone());
    for d in design.responses().nonempty_subsets() {
        let v = margins.value(d);
        if v <= 0.0 {
            return Err(Error::LogDomain(format!(
                "pooled margin of {} is zero even after smoothing",
                design.responses().label(d)
            )));
        }
        params.set(
            ParamKey {
                response: d,
                term: Subset::EMPTY,
            },
            v.ln(),
        )?;
    }
    Ok(params)
}

/// Multinomial term of the background margin at its empirical maximum.
fn background_loglik(table: &ContingencyTable, structure: &BlockStructure) -> Result<f64> {
    let x = table
        .vars()
        .subset_of(&[structure.background()])
        .map_err(|_| Error::UnknownVariable(structure.background().to_string()))?;
    let m = table.marginal(x)?;
    let n = m.n() as f64;
    Ok(m.counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * ((c as f64 / n).ln()))
        .sum())
}

/// Maximizes the joint likelihood block by block.
pub fn fit(
    table: &ContingencyTable,
    structure: &BlockStructure,
    design: &Design,
    constraints: &ZeroConstraints,
    opts: &FitOptions,
) -> Result<FitResult> {
    for name in structure.all_variables().names() {
        if table.vars().index_of(name).is_none() {
            return Err(Error::UnknownVariable(name.clone()));
        }
    }

    let rdata = BlockData::from_table(table, &design.response_block)?;
    let response = fit_block(
        &design.response_block,
        &rdata,
        &constraints.response_block,
        opts,
    )?;

    let intermediate = match &design.intermediate_block {
        Some(ib) => {
            let idata = BlockData::from_table(table, ib)?;
            Some(fit_block(ib, &idata, &constraints.intermediate_block, opts)?)
        }
        None => None,
    };

    let loglik = response.loglik + intermediate.as_ref().map_or(0.0, |b| b.loglik);
    let background = background_loglik(table, structure)?;
    let converged = response.converged && intermediate.as_ref().is_none_or(|b| b.converged);
    let iterations = response.iterations + intermediate.as_ref().map_or(0, |b| b.iterations);
    let gradient_norm = response
        .gradient_norm
        .max(intermediate.as_ref().map_or(0.0, |b| b.gradient_norm));

    Ok(FitResult {
        response,
        intermediate,
        loglik,
        background_loglik: background,
        n: table.n(),
        converged,
        iterations,
        gradient_norm,
    })
}

/// Free-parameter covariance of one block at the optimum.
#[derive(Debug, Clone)]
pub struct BlockInference {
    pub keys: Vec<ParamKey>,
    pub covariance: DMatrix<f64>,
}

impl BlockInference {
    pub fn se(&self, key: ParamKey) -> Option<f64> {
        let i = self.keys.iter().position(|&k| k == key)?;
        Some(self.covariance[(i, i)].sqrt())
    }

    pub fn standard_errors(&self) -> Vec<(ParamKey, f64)> {
        self.keys
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, self.covariance[(i, i)].sqrt()))
            .collect()
    }
}

/// Covariance matrices for both blocks (block-diagonal overall, since the
/// likelihood separates).
#[derive(Debug, Clone)]
pub struct FitInference {
    pub response: BlockInference,
    pub intermediate: Option<BlockInference>,
}

impl FitInference {
    pub fn block(&self, id: BlockId) -> Option<&BlockInference> {
        match id {
            BlockId::Response => Some(&self.response),
            BlockId::Intermediate => self.intermediate.as_ref(),
        }
    }
}

fn block_inference(fit: &BlockFit, data: &BlockData) -> Result<BlockInference> {
    let objective = BlockObjective::new(fit.params.design(), data, &fit.constraints);
    let (_, h) = objective.grad_hess(&fit.params).ok_or_else(|| {
        Error::InvalidParams("fitted parameters are infeasible".into())
    })?;
    let info = -h;
    let keys: Vec<ParamKey> = fit
        .params
        .design()
        .keys()
        .filter(|k| !fit.constraints.contains(k))
        .collect();

    let eig = info.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if let Some(pos) = eig
        .eigenvalues
        .iter()
        .position(|&ev| ev <= 1e-12 * max_ev.max(1.0))
    {
        let null = eig.eigenvectors.column(pos);
        let worst = null
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        return Err(Error::SingularInformation {
            direction: fit.params.design().param_name(keys[worst]),
        });
    }

    let mut inv_ev = eig.eigenvalues.clone();
    for v in inv_ev.iter_mut() {
        *v = 1.0 / *v;
    }
    let covariance =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_ev) * eig.eigenvectors.transpose();
    Ok(BlockInference { keys, covariance })
}

/// Standard errors from the inverse observed information at the optimum.
pub fn standard_errors(
    fit: &FitResult,
    table: &ContingencyTable,
) -> Result<FitInference> {
    let rdata = BlockData::from_table(table, fit.response.params.design())?;
    let response = block_inference(&fit.response, &rdata)?;
    let intermediate = match &fit.intermediate {
        Some(b) => {
            let idata = BlockData::from_table(table, b.params.design())?;
            Some(block_inference(b, &idata)?)
        }
        None => None,
    };
    Ok(FitInference {
        response,
        intermediate,
    })
}

/// Upper-tail probability of a chi-square distribution.
pub fn chi_square_upper_tail(df: usize, x: f64) -> f64 {
    if df == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Likelihood-ratio comparison of two nested fits.
#[derive(Debug, Clone, Copy)]
pub struct ModelComparison {
    pub deviance: f64,
    pub df: usize,
    pub p_value: f64,
    /// BIC(reduced) − BIC(full); negative favors the reduced model. This
    /// difference does not depend on the parameter-count convention.
    pub delta_bic: f64,
}

fn free_keys(fit: &BlockFit) -> BTreeSet<ParamKey> {
    fit.params
        .design()
        .keys()
        .filter(|k| !fit.constraints.contains(k))
        .collect()
}

/// Checks nesting (the reduced model's free coefficients are a subset of the
/// full model's) and compares likelihoods.
pub fn compare(reduced: &FitResult, full: &FitResult) -> Result<ModelComparison> {
    if reduced.n != full.n {
        return Err(Error::Domain(
            "models were fitted to different sample sizes".into(),
        ));
    }
    let pairs: Vec<(Option<&BlockFit>, Option<&BlockFit>)> = vec![
        (Some(&reduced.response), Some(&full.response)),
        (reduced.intermediate.as_ref(), full.intermediate.as_ref()),
    ];
    for (r, f) in pairs {
        match (r, f) {
            (Some(r), Some(f)) => {
                if r.params.design().responses() != f.params.design().responses()
                    || r.params.design().covariates() != f.params.design().covariates()
                {
                    return Err(Error::Domain(
                        "block layouts differ; models are not nested".into(),
                    ));
                }
                if !free_keys(r).is_subset(&free_keys(f)) {
                    return Err(Error::Domain(
                        "reduced model frees a coefficient the full model lacks".into(),
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Domain(
                    "one model carries an intermediate block the other lacks".into(),
                ))
            }
        }
    }

    let df = full.free_param_count() - reduced.free_param_count();
    let mut deviance = 2.0 * (full.loglik - reduced.loglik);
    if deviance < -1e-9 {
        return Err(Error::Domain(format!(
            "reduced model exceeds the full model's likelihood by {:.3e}; \
             check convergence",
            -deviance / 2.0
        )));
    }
    deviance = deviance.max(0.0);
    let p_value = chi_square_upper_tail(df, deviance);
    let delta_bic = deviance - df as f64 * (reduced.n as f64).ln();
    Ok(ModelComparison {
        deviance,
        df,
        p_value,
        delta_bic,
    })
}

/// Which parameters enter the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicConvention {
    /// Every free coefficient of every modeled block.
    Full,
    /// Only the response block's free non-intercept coefficients; matches the
    /// counts behind the published tables shipped as fixtures.
    PaperCompat,
}

impl BicConvention {
    pub fn name(self) -> &'static str {
        match self {
            BicConvention::Full => "full",
            BicConvention::PaperCompat => "paper-compat",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BicValue {
    pub value: f64,
    pub k: usize,
    pub convention: BicConvention,
}

/// `−2·loglik + k·ln n`.
pub fn bic_from(loglik: f64, k: usize, n: u64) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

/// BIC of a fit against the joint likelihood (modeled blocks plus the
/// background margin), with the parameter count set by the convention.
pub fn bic(fit: &FitResult, convention: BicConvention) -> BicValue {
    let k = match convention {
        BicConvention::Full => fit.free_param_count(),
        BicConvention::PaperCompat => fit
            .response
            .params
            .design()
            .keys()
            .filter(|k| !k.term.is_empty() && !fit.response.constraints.contains(k))
            .count(),
    };
    BicValue {
        value: bic_from(fit.loglik + fit.background_loglik, k, fit.n),
        k,
        convention,
    }
}

/// One applied elimination step.
#[derive(Debug, Clone)]
pub struct StepwiseStep {
    pub block: BlockId,
    pub key: ParamKey,
    pub deviance: f64,
    pub delta_bic: f64,
}

/// Backward elimination over candidate zero-constraints: at every step the
/// single candidate lowering BIC the most is applied; stops when none does.
/// Ties go to the earliest candidate in design-index order.
pub fn stepwise_select(
    table: &ContingencyTable,
    structure: &BlockStructure,
    design: &Design,
    base_constraints: &ZeroConstraints,
    candidates: &[(BlockId, ParamKey)],
    opts: &FitOptions,
) -> Result<(FitResult, Vec<StepwiseStep>)> {
    for (block, key) in candidates {
        let bd = design
            .block(*block)
            .ok_or_else(|| Error::Domain("candidate names a block the design lacks".into()))?;
        if key.term.is_empty() {
            return Err(Error::Domain(format!(
                "candidate {} is an intercept",
                bd.param_name(*key)
            )));
        }
        if bd.index_of(*key).is_none() {
            return Err(Error::Domain(format!(
                "candidate {} is outside the design",
                bd.param_name(*key)
            )));
        }
    }

    // deterministic evaluation order: response block first, then dense index
    let mut ordered: Vec<(BlockId, ParamKey)> = candidates.to_vec();
    ordered.sort_by_key(|(block, key)| {
        let bd = design.block(*block).expect("validated above");
        (
            matches!(block, BlockId::Intermediate) as usize,
            bd.index_of(*key).expect("validated above"),
        )
    });
    ordered.dedup();

    let mut constraints = base_constraints.clone();
    let mut current = fit(table, structure, design, &constraints, opts)?;
    let mut steps = Vec::new();
    let ln_n = (table.n() as f64).ln();

    loop {
        let mut best: Option<(usize, FitResult, f64, f64)> = None;
        for (i, (block, key)) in ordered.iter().enumerate() {
            if constraints.block(*block).contains(key) {
                continue;
            }
            let mut trial = constraints.clone();
            trial.insert(*block, *key);
            let candidate_fit = fit(table, structure, design, &trial, opts)?;
            let deviance = (2.0 * (current.loglik - candidate_fit.loglik)).max(0.0);
            let delta_bic = deviance - ln_n;
            if delta_bic < 0.0 && best.as_ref().is_none_or(|b| delta_bic < b.3) {
                best = Some((i, candidate_fit, deviance, delta_bic));
            }
        }
        match best {
            Some((i, fit_result, deviance, delta_bic)) => {
                let (block, key) = ordered[i];
                constraints.insert(block, key);
                steps.push(StepwiseStep {
                    block,
                    key,
                    deviance,
                    delta_bic,
                });
                current = fit_result;
            }
            None => break,
        }
    }

    Ok((current, steps))
}
