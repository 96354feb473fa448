//! Relative risks, deviation terms, and the decomposition of marginal
//! effects into conditional effects times a deviation factor, together with
//! an exhaustive marginalization oracle.
//!
//! For a response subset `D`, the marginal log relative risk of the
//! background variable equals the conditional log relative risk (at the
//! all-zero intermediate level) plus a deviation term `λ_D`. The deviation
//! factor `exp(λ_D)` is also the ratio of two weighted-average relative
//! risks, weighted by the intermediate-pattern probabilities given each
//! background level. Both routes are implemented and cross-checked against
//! a brute-force marginalization of the joint distribution.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimation::FitInference;
use crate::model::{LogMeanParams, ModelParams, ParamKey};
use crate::subsets::{moebius_invert, zeta_transform, MarginVector, Subset};

/// Decomposition of the marginal relative risk of one response subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RRDecomposition {
    pub response: Subset,
    /// Relative risk of the background variable with every intermediate at 0.
    pub rr_conditional: f64,
    /// `exp(λ_D)`.
    pub deviation: f64,
    pub rr_marginal: f64,
    /// Weighted-average relative risk over intermediate patterns, treated arm.
    pub weighted_rr_treated: f64,
    /// Same average under the control arm's pattern probabilities.
    pub weighted_rr_control: f64,
    pub log_conditional: f64,
    pub log_deviation: f64,
    pub log_marginal: f64,
}

/// How the response block's covariates relate to the intermediate block.
struct BlockMap {
    /// response-block covariate index of each intermediate variable,
    /// in intermediate-block response order
    y_cov_of_z: Vec<usize>,
    /// response-block covariate index of the background variable
    x_cov: usize,
}

fn resolve(y: &LogMeanParams, z: &LogMeanParams) -> Result<BlockMap> {
    let ycov = y.design().covariates();
    let zcov = z.design().covariates();
    if zcov.arity() != 1 {
        return Err(Error::Domain(
            "intermediate block must regress on the background variable alone".into(),
        ));
    }
    let xname = zcov.name(0);
    let x_cov = ycov
        .index_of(xname)
        .ok_or_else(|| Error::UnknownVariable(xname.to_string()))?;
    let y_cov_of_z = z
        .design()
        .responses()
        .names()
        .iter()
        .map(|n| {
            ycov.index_of(n)
                .ok_or_else(|| Error::UnknownVariable(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if y_cov_of_z.len() + 1 != ycov.arity() {
        return Err(Error::Domain(
            "response-block covariates must be the intermediates plus the background variable"
                .into(),
        ));
    }
    Ok(BlockMap { y_cov_of_z, x_cov })
}

impl BlockMap {
    /// Response-block covariate assignment for an intermediate pattern
    /// (compact mask over `members`) and a background level.
    fn y_config(&self, compact: usize, members: &[usize], x: bool) -> Subset {
        let mut config = Subset::EMPTY;
        for (bit, &z_idx) in members.iter().enumerate() {
            if compact & (1 << bit) != 0 {
                config = config.with(self.y_cov_of_z[z_idx]);
            }
        }
        if x {
            config = config.with(self.x_cov);
        }
        config
    }
}

/// Conditional relative risk of covariate `w` for the event that every
/// response in `d` equals 1, holding the other covariates at `others`:
/// the exponentiated jump of the linear predictor when `w` flips to 1.
///
/// With interaction terms this depends on the conditioning level; moving a
/// conditioning covariate to 1 multiplies the risk by the exponentiated
/// interaction coefficient. Without them it is level-independent.
pub fn conditional_rr(params: &LogMeanParams, d: Subset, w: usize, others: Subset) -> f64 {
    log_conditional_rr(params, d, w, others).exp()
}

/// Log-scale version of [`conditional_rr`]: flipping `w` to 1 activates
/// exactly the `w`-bearing terms inside the assignment, so summing those
/// directly keeps the intercept out of the arithmetic.
pub fn log_conditional_rr(params: &LogMeanParams, d: Subset, w: usize, others: Subset) -> f64 {
    let config = others.minus(Subset::singleton(w)).with(w);
    params
        .design()
        .terms()
        .iter()
        .filter(|t| t.contains(w) && t.is_subset_of(config))
        .map(|&t| params.value(ParamKey { response: d, term: t }))
        .sum()
}

/// Probabilities of every 0/1 pattern of the intermediates in `over`, given
/// the background level: the intermediate block's product margins restricted
/// to `over` and Möbius-inverted. Indexed compactly by `members` bit order.
fn pattern_weights(z: &LogMeanParams, members: &[usize], x: bool) -> Result<Vec<f64>> {
    let xcfg = if x {
        z.design().covariates().full()
    } else {
        Subset::EMPTY
    };
    let full = z
        .margins_given(xcfg)
        .map_err(|e| Error::InvalidParams(format!("intermediate-block margins: {e}")))?;
    let mut vals = Vec::with_capacity(1 << members.len());
    for compact in 0..(1usize << members.len()) {
        let mut zmask = Subset::EMPTY;
        for (bit, &z_idx) in members.iter().enumerate() {
            if compact & (1 << bit) != 0 {
                zmask = zmask.with(z_idx);
            }
        }
        vals.push(full.value(zmask));
    }
    let margins = MarginVector::from_values(vals)
        .map_err(|e| Error::InvalidParams(format!("intermediate-block margins: {e}")))?;
    moebius_invert(&margins)
        .map_err(|e| Error::InvalidParams(format!("intermediate-block margins: {e}")))
}

/// Deviation term for a single intermediate variable `Z`:
///
/// `λ_D = log[(exp(θ_{D|Z.X}+θ_{D|ZX})·π_{Z|X=1} + 1−π_{Z|X=1}) /
///            (exp(θ_{D|Z.X})·π_{Z|X=0} + 1−π_{Z|X=0})]`
///
/// with `π_{Z|X=x} = exp(α_{Z|X} + θ_{Z|X}·x)`.
pub fn deviation_univariate(y: &LogMeanParams, z: &LogMeanParams, d: Subset) -> Result<f64> {
    let map = resolve(y, z)?;
    if map.y_cov_of_z.len() != 1 {
        return Err(Error::Domain(
            "univariate deviation requires exactly one intermediate variable".into(),
        ));
    }
    let zfull = z.design().responses().full();
    let alpha = z.value(ParamKey {
        response: zfull,
        term: Subset::EMPTY,
    });
    let theta = z.value(ParamKey {
        response: zfull,
        term: Subset::singleton(0),
    });
    let pi0 = alpha.exp();
    let pi1 = (alpha + theta).exp();
    for (x, pi) in [(0, pi0), (1, pi1)] {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidParams(format!(
                "intermediate probability at background level {x} is {pi}, outside (0,1)"
            )));
        }
    }

    let zcov = Subset::singleton(map.y_cov_of_z[0]);
    let xcov = Subset::singleton(map.x_cov);
    let theta_z = y.value(ParamKey {
        response: d,
        term: zcov,
    });
    let theta_zx = y.value(ParamKey {
        response: d,
        term: zcov.union(xcov),
    });

    let num = (theta_z + theta_zx).exp() * pi1 + (1.0 - pi1);
    let den = theta_z.exp() * pi0 + (1.0 - pi0);
    Ok((num / den).ln())
}

fn require_no_interactions(y: &LogMeanParams, d: Subset) -> Result<()> {
    for &t in y.design().terms() {
        if t.len() >= 2 && y.value(ParamKey { response: d, term: t }) != 0.0 {
            return Err(Error::InvalidParams(format!(
                "deviation over several intermediates requires a design without \
                 interaction terms, but {} is nonzero",
                y.design().param_name(ParamKey { response: d, term: t })
            )));
        }
    }
    Ok(())
}

/// Deviation term over the intermediates in `over` (a subset of the
/// intermediate variables, by intermediate-block index):
///
/// `λ_D = log[ Σ_E exp(Σ_{u∈E} θ_{D|u.X}) P(Z_E=1,Z_rest=0|X=1) /
///             Σ_E exp(Σ_{u∈E} θ_{D|u.X}) P(Z_E=1,Z_rest=0|X=0) ]`
///
/// Pattern probabilities come from the corresponding marginal of the
/// intermediate block, so restricting `over` is an explicit caller decision.
/// Requires the no-interaction response design.
pub fn deviation_multi(
    y: &LogMeanParams,
    z: &LogMeanParams,
    d: Subset,
    over: Subset,
) -> Result<f64> {
    let map = resolve(y, z)?;
    if !over.is_subset_of(z.design().responses().full()) {
        return Err(Error::Domain(
            "deviation subset names variables outside the intermediate block".into(),
        ));
    }
    require_no_interactions(y, d)?;
    let members: Vec<usize> = over.members().collect();

    let mut arms = [0.0f64; 2];
    for (i, x) in [(0usize, false), (1usize, true)] {
        let weights = pattern_weights(z, &members, x)?;
        let mut total = 0.0;
        for (compact, &w) in weights.iter().enumerate() {
            let mut exponent = 0.0;
            for (bit, &z_idx) in members.iter().enumerate() {
                if compact & (1 << bit) != 0 {
                    exponent += y.value(ParamKey {
                        response: d,
                        term: Subset::singleton(map.y_cov_of_z[z_idx]),
                    });
                }
            }
            total += exponent.exp() * w;
        }
        arms[i] = total;
    }
    Ok((arms[1] / arms[0]).ln())
}

/// Weighted-average relative risk over intermediate patterns at one
/// background level:
///
/// `Σ_E RR_{D|E.X=x} · P(Z_E=1, Z_rest=0 | X=x)`
///
/// where `RR_{D|E.X=x}` is the relative risk of the pattern `Z_E=1, Z_rest=0`
/// against the all-zero pattern, read off the linear predictor. Under a
/// no-interaction design this is the product of the per-variable relative
/// risks; with a single intermediate and interactions it picks up the
/// interaction coefficient in the treated arm.
pub fn weighted_avg_rr(
    y: &LogMeanParams,
    z: &LogMeanParams,
    d: Subset,
    x_level: bool,
    over: Subset,
) -> Result<f64> {
    let map = resolve(y, z)?;
    if !over.is_subset_of(z.design().responses().full()) {
        return Err(Error::Domain(
            "averaging subset names variables outside the intermediate block".into(),
        ));
    }
    let members: Vec<usize> = over.members().collect();
    let weights = pattern_weights(z, &members, x_level)?;
    let base = map.y_config(0, &members, x_level);
    let eta0 = y.linear_predictor(d, base);
    let mut total = 0.0;
    for (compact, &w) in weights.iter().enumerate() {
        let eta = y.linear_predictor(d, map.y_config(compact, &members, x_level));
        total += (eta - eta0).exp() * w;
    }
    Ok(total)
}

/// Deviation term dispatch: the single-intermediate closed form (which
/// admits interaction terms) when there is exactly one intermediate and it
/// is the averaging set, the multi-intermediate form otherwise.
pub fn deviation(y: &LogMeanParams, z: &LogMeanParams, d: Subset, over: Subset) -> Result<f64> {
    if z.design().responses().arity() == 1 && over == z.design().responses().full() {
        deviation_univariate(y, z, d)
    } else {
        deviation_multi(y, z, d, over)
    }
}

/// Assembles the full decomposition for one response subset: conditional
/// relative risk at the all-zero intermediate level, deviation factor, their
/// product as the marginal relative risk, and the weighted-average
/// representation of the deviation.
pub fn marginal_rr(
    y: &LogMeanParams,
    z: &LogMeanParams,
    d: Subset,
    over: Subset,
) -> Result<RRDecomposition> {
    let map = resolve(y, z)?;
    let log_conditional = log_conditional_rr(y, d, map.x_cov, Subset::EMPTY);
    let log_deviation = deviation(y, z, d, over)?;
    let weighted_rr_treated = weighted_avg_rr(y, z, d, true, over)?;
    let weighted_rr_control = weighted_avg_rr(y, z, d, false, over)?;
    let log_marginal = log_conditional + log_deviation;
    Ok(RRDecomposition {
        response: d,
        rr_conditional: log_conditional.exp(),
        deviation: log_deviation.exp(),
        rr_marginal: log_marginal.exp(),
        weighted_rr_treated,
        weighted_rr_control,
        log_conditional,
        log_deviation,
        log_marginal,
    })
}

/// Brute-force marginal log relative risk: builds the joint conditional
/// distribution of responses and intermediates at each background level via
/// the chain factorization, sums out the intermediates cell by cell, and
/// returns `log π_{D|X=1} − log π_{D|X=0}`. Serves as the independent oracle
/// for the deviation identities.
pub fn brute_force_marginal(y: &LogMeanParams, z: &LogMeanParams, d: Subset) -> Result<f64> {
    let map = resolve(y, z)?;
    let n_z = z.design().responses().n_cells();
    let members: Vec<usize> = z.design().responses().full().members().collect();
    let mut log_margin = [0.0f64; 2];
    for (i, x) in [(0usize, false), (1usize, true)] {
        let xcfg = if x {
            z.design().covariates().full()
        } else {
            Subset::EMPTY
        };
        let z_cells = moebius_invert(&z.margins_given(xcfg)?)?;
        debug_assert_eq!(z_cells.len(), n_z);
        let mut y_marginal = vec![0.0; y.design().responses().n_cells()];
        for (z_cell, &wz) in z_cells.iter().enumerate() {
            let config = map.y_config(z_cell, &members, x);
            let y_cells = y.conditional_cells(config)?;
            for (c, q) in y_cells.iter().enumerate() {
                y_marginal[c] += wz * q;
            }
        }
        let margins = zeta_transform(&y_marginal)?;
        let v = margins.value(d);
        if v <= 0.0 {
            return Err(Error::LogDomain(format!(
                "marginal probability of {} vanishes at background level {}",
                y.design().responses().label(d),
                i
            )));
        }
        log_margin[i] = v.ln();
    }
    Ok(log_margin[1] - log_margin[0])
}

/// Delta-method standard errors on the log scale for one decomposition.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionSe {
    pub log_conditional: f64,
    pub log_deviation: f64,
    pub log_marginal: f64,
}

fn quad_form(grad: &[f64], cov: &nalgebra::DMatrix<f64>) -> f64 {
    let g = DVector::from_column_slice(grad);
    (g.transpose() * cov * g)[(0, 0)]
}

fn grad_over_free(
    params: &LogMeanParams,
    keys: &[ParamKey],
    f: impl Fn(&LogMeanParams) -> Result<f64>,
) -> Result<Vec<f64>> {
    const H: f64 = 1e-6;
    let mut grad = Vec::with_capacity(keys.len());
    for &k in keys {
        let v = params.value(k);
        let mut up = params.clone();
        up.set(k, v + H)?;
        let mut down = params.clone();
        down.set(k, v - H)?;
        grad.push((f(&up)? - f(&down)?) / (2.0 * H));
    }
    Ok(grad)
}

/// Propagates the fitted covariance through the decomposition. Only
/// meaningful when `inference` comes from the same fit as `params`.
pub fn decomposition_se(
    params: &ModelParams,
    inference: &FitInference,
    d: Subset,
    over: Subset,
) -> Result<DecompositionSe> {
    let y = &params.response;
    let z = params
        .intermediate
        .as_ref()
        .ok_or_else(|| Error::Domain("decomposition requires an intermediate block".into()))?;
    let zinf = inference
        .intermediate
        .as_ref()
        .ok_or_else(|| Error::Domain("missing intermediate-block covariance".into()))?;
    let map = resolve(y, z)?;

    let log_cond =
        |yp: &LogMeanParams| -> Result<f64> { Ok(log_conditional_rr(yp, d, map.x_cov, Subset::EMPTY)) };
    let g_cond_y = grad_over_free(y, &inference.response.keys, log_cond)?;
    let g_dev_y = grad_over_free(y, &inference.response.keys, |yp| deviation(yp, z, d, over))?;
    let g_dev_z = grad_over_free(z, &zinf.keys, |zp| deviation(y, zp, d, over))?;

    let var_cond = quad_form(&g_cond_y, &inference.response.covariance);
    let var_dev = quad_form(&g_dev_y, &inference.response.covariance)
        + quad_form(&g_dev_z, &zinf.covariance);
    let g_marg_y: Vec<f64> = g_cond_y
        .iter()
        .zip(&g_dev_y)
        .map(|(a, b)| a + b)
        .collect();
    let var_marg =
        quad_form(&g_marg_y, &inference.response.covariance) + quad_form(&g_dev_z, &zinf.covariance);

    Ok(DecompositionSe {
        log_conditional: var_cond.sqrt(),
        log_deviation: var_dev.sqrt(),
        log_marginal: var_marg.sqrt(),
    })
}
