//! Block structure and the log-mean linear regression parameterization.
//!
//! A model has two blocks: the response block (responses given the
//! intermediates and the background variable) and, when intermediate
//! variables exist, the intermediate block (intermediates given the
//! background variable). In each block, for every nonempty subset `D` of
//! the block's responses the log of the all-ones margin is linear in 0/1
//! covariate indicator products:
//!
//! `log π_{D|i} = α_D + Σ_t θ_{D,t} · Π_{w∈t} i_w`
//!
//! so each coefficient is the log of a relative risk. Cell probabilities
//! follow by Möbius inversion of the margins, which makes the parameter
//! space variation-dependent: not every coefficient vector yields a valid
//! distribution, and such points are reported as incoherent.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::subsets::{moebius_invert, MarginVector, Subset, VarSet};

/// Partition of the observed variables into final responses, intermediate
/// responses and a single binary background variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    responses: VarSet,
    intermediates: VarSet,
    background: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    Response,
    Intermediate,
}

impl BlockStructure {
    pub fn new(
        responses: VarSet,
        intermediates: VarSet,
        background: impl Into<String>,
    ) -> Result<Self> {
        let background = background.into();
        if responses.is_empty() {
            return Err(Error::Domain("at least one response variable required".into()));
        }
        if background.is_empty() {
            return Err(Error::Domain("a background variable is required".into()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for name in responses
            .names()
            .iter()
            .chain(intermediates.names())
            .map(String::as_str)
            .chain(std::iter::once(background.as_str()))
        {
            if seen.contains(&name) {
                return Err(Error::Domain(format!(
                    "variable `{name}` appears in more than one block"
                )));
            }
            seen.push(name);
        }
        Ok(BlockStructure {
            responses,
            intermediates,
            background,
        })
    }

    pub fn responses(&self) -> &VarSet {
        &self.responses
    }

    pub fn intermediates(&self) -> &VarSet {
        &self.intermediates
    }

    pub fn background(&self) -> &str {
        &self.background
    }

    /// Covariates of the response block: intermediates first, then the
    /// background variable.
    pub fn response_covariates(&self) -> VarSet {
        let names: Vec<String> = self
            .intermediates
            .names()
            .iter()
            .cloned()
            .chain(std::iter::once(self.background.clone()))
            .collect();
        VarSet::new(names).expect("validated at construction")
    }

    /// Every modeled variable: responses, intermediates, background.
    pub fn all_variables(&self) -> VarSet {
        let names: Vec<String> = self
            .responses
            .names()
            .iter()
            .chain(self.intermediates.names())
            .cloned()
            .chain(std::iter::once(self.background.clone()))
            .collect();
        VarSet::new(names).expect("validated at construction")
    }
}

/// Identifies one regression coefficient: the response subset it belongs to
/// and the covariate term multiplying it. The empty term is the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey {
    pub response: Subset,
    pub term: Subset,
}

/// The coefficient layout of one block: which covariate terms each response
/// subset carries. The term list is shared across response subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDesign {
    responses: VarSet,
    covariates: VarSet,
    /// Covariate terms in ascending mask order; always starts with the
    /// intercept (empty term).
    terms: Vec<Subset>,
}

impl BlockDesign {
    /// Companion design carrying every covariate term.
    pub(crate) fn new_saturated(responses: VarSet, covariates: VarSet) -> Self {
        BlockDesign::new(responses, covariates, true)
    }

    fn new(responses: VarSet, covariates: VarSet, interactions: bool) -> Self {
        let terms: Vec<Subset> = if interactions {
            covariates.subsets().collect()
        } else {
            std::iter::once(Subset::EMPTY)
                .chain((0..covariates.arity()).map(Subset::singleton))
                .collect()
        };
        BlockDesign {
            responses,
            covariates,
            terms,
        }
    }

    pub fn responses(&self) -> &VarSet {
        &self.responses
    }

    pub fn covariates(&self) -> &VarSet {
        &self.covariates
    }

    pub fn terms(&self) -> &[Subset] {
        &self.terms
    }

    pub fn has_term(&self, term: Subset) -> bool {
        self.terms.contains(&term)
    }

    /// A design is saturated when it carries every covariate term.
    pub fn is_saturated(&self) -> bool {
        self.terms.len() == self.covariates.n_cells()
    }

    /// Number of coefficients including intercepts.
    pub fn n_params(&self) -> usize {
        (self.responses.n_cells() - 1) * self.terms.len()
    }

    /// Dense coefficient index, ordered by response subset then term.
    pub fn index_of(&self, key: ParamKey) -> Option<usize> {
        if key.response.is_empty() || !key.response.is_subset_of(self.responses.full()) {
            return None;
        }
        let t = self.terms.iter().position(|&t| t == key.term)?;
        Some((key.response.index() - 1) * self.terms.len() + t)
    }

    /// Keys in dense index order.
    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.responses.nonempty_subsets().flat_map(move |d| {
            self.terms.iter().map(move |&t| ParamKey {
                response: d,
                term: t,
            })
        })
    }

    /// `alpha[D]` / `theta[D|t]` spelling used in files and reports.
    pub fn param_name(&self, key: ParamKey) -> String {
        let resp: Vec<&str> = key
            .response
            .members()
            .map(|i| self.responses.name(i))
            .collect();
        if key.term.is_empty() {
            format!("alpha[{}]", resp.join(","))
        } else {
            let term: Vec<&str> = key
                .term
                .members()
                .map(|i| self.covariates.name(i))
                .collect();
            format!("theta[{}|{}]", resp.join(","), term.join(","))
        }
    }
}

/// Designs of both blocks of the recursive model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    pub response_block: BlockDesign,
    pub intermediate_block: Option<BlockDesign>,
}

/// Builds the block designs. `interactions` governs the response block: when
/// on, every nonempty covariate term enters; when off, only the single-
/// covariate main effects do. The intermediate block always regresses every
/// product of intermediates on the background variable alone, which for one
/// covariate is already saturated.
pub fn build_design(structure: &BlockStructure, interactions: bool) -> Design {
    let response_block = BlockDesign::new(
        structure.responses().clone(),
        structure.response_covariates(),
        interactions,
    );
    let intermediate_block = if structure.intermediates().is_empty() {
        None
    } else {
        Some(BlockDesign::new(
            structure.intermediates().clone(),
            VarSet::new([structure.background().to_string()]).expect("single name"),
            true,
        ))
    };
    Design {
        response_block,
        intermediate_block,
    }
}

impl Design {
    pub fn block(&self, id: BlockId) -> Option<&BlockDesign> {
        match id {
            BlockId::Response => Some(&self.response_block),
            BlockId::Intermediate => self.intermediate_block.as_ref(),
        }
    }
}

/// A conditional-independence statement `targets ⟂ separated | rest` about
/// one block's responses and covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndepStatement {
    pub targets: Vec<String>,
    pub separated: String,
    pub rest: Vec<String>,
}

/// Coefficients forced to zero, per block. Intercepts are never constrained.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZeroConstraints {
    pub response_block: BTreeSet<ParamKey>,
    pub intermediate_block: BTreeSet<ParamKey>,
}

impl ZeroConstraints {
    pub fn is_empty(&self) -> bool {
        self.response_block.is_empty() && self.intermediate_block.is_empty()
    }

    pub fn block(&self, id: BlockId) -> &BTreeSet<ParamKey> {
        match id {
            BlockId::Response => &self.response_block,
            BlockId::Intermediate => &self.intermediate_block,
        }
    }

    pub fn insert(&mut self, id: BlockId, key: ParamKey) {
        match id {
            BlockId::Response => self.response_block.insert(key),
            BlockId::Intermediate => self.intermediate_block.insert(key),
        };
    }

    pub fn merge(&mut self, other: ZeroConstraints) {
        self.response_block.extend(other.response_block);
        self.intermediate_block.extend(other.intermediate_block);
    }
}

/// Translates an independence statement into the zero constraints it implies:
/// every coefficient whose response subset lies inside the statement's target
/// set and whose term contains the separated covariate vanishes.
pub fn constraints_from_independence(
    statement: &IndepStatement,
    design: &Design,
) -> Result<(BlockId, ZeroConstraints)> {
    // the target set decides which block the statement speaks about
    let (block_id, block) = if statement
        .targets
        .iter()
        .all(|t| design.response_block.responses().index_of(t).is_some())
    {
        (BlockId::Response, &design.response_block)
    } else if let Some(ib) = design.intermediate_block.as_ref() {
        if statement
            .targets
            .iter()
            .all(|t| ib.responses().index_of(t).is_some())
        {
            (BlockId::Intermediate, ib)
        } else {
            return Err(Error::UnknownVariable(
                statement
                    .targets
                    .iter()
                    .find(|t| {
                        design.response_block.responses().index_of(t).is_none()
                            && ib.responses().index_of(t).is_none()
                    })
                    .cloned()
                    .unwrap_or_default(),
            ));
        }
    } else {
        return Err(Error::UnknownVariable(statement.targets.join(",")));
    };

    if statement.targets.is_empty() {
        return Err(Error::Domain("independence statement has no targets".into()));
    }
    let targets: Vec<&str> = statement.targets.iter().map(String::as_str).collect();
    let target_mask = block.responses().subset_of(&targets)?;

    let sep = block
        .covariates()
        .index_of(&statement.separated)
        .ok_or_else(|| Error::UnknownVariable(statement.separated.clone()))?;

    // the remaining covariates must all be conditioned on
    let mut expected: Vec<&str> = block
        .covariates()
        .names()
        .iter()
        .map(String::as_str)
        .filter(|n| *n != statement.separated)
        .collect();
    let mut got: Vec<&str> = statement.rest.iter().map(String::as_str).collect();
    expected.sort_unstable();
    got.sort_unstable();
    if expected != got {
        return Err(Error::Domain(format!(
            "conditioning set {{{}}} must be the block's remaining covariates {{{}}}",
            statement.rest.join(","),
            expected.join(",")
        )));
    }

    let mut constraints = ZeroConstraints::default();
    for d in block.responses().nonempty_subsets() {
        if !d.is_subset_of(target_mask) {
            continue;
        }
        for &t in block.terms() {
            if t.contains(sep) {
                constraints.insert(block_id, ParamKey { response: d, term: t });
            }
        }
    }
    Ok((block_id, constraints))
}

/// One block's coefficient values laid out per its design.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeanParams {
    design: BlockDesign,
    values: Vec<f64>,
}

impl LogMeanParams {
    pub fn zeroed(design: BlockDesign) -> Self {
        let n = design.n_params();
        LogMeanParams {
            design,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(design: BlockDesign, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.n_params() {
            return Err(Error::Domain(format!(
                "expected {} coefficients, got {}",
                design.n_params(),
                values.len()
            )));
        }
        Ok(LogMeanParams { design, values })
    }

    pub fn design(&self) -> &BlockDesign {
        &self.design
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, key: ParamKey) -> f64 {
        match self.design.index_of(key) {
            Some(i) => self.values[i],
            None => 0.0,
        }
    }

    pub fn set(&mut self, key: ParamKey, v: f64) -> Result<()> {
        let i = self
            .design
            .index_of(key)
            .ok_or_else(|| Error::Domain("no such coefficient in design".into()))?;
        self.values[i] = v;
        Ok(())
    }

    /// Linear predictor for response subset `d` at covariate assignment
    /// `config` (mask of covariates equal to 1): with 0/1 indicators, a term
    /// contributes exactly when it is contained in the assignment.
    pub fn linear_predictor(&self, d: Subset, config: Subset) -> f64 {
        let base = (d.index() - 1) * self.design.terms.len();
        self.design
            .terms
            .iter()
            .enumerate()
            .filter(|(_, &t)| t.is_subset_of(config))
            .map(|(i, _)| self.values[base + i])
            .sum()
    }

    /// All-ones margins `π_{D|config} = exp(η_D(config))` for every `D`.
    pub fn margins_given(&self, config: Subset) -> Result<MarginVector> {
        let n = self.design.responses.n_cells();
        let mut values = Vec::with_capacity(n);
        values.push(1.0);
        for d in self.design.responses.nonempty_subsets() {
            let eta = self.linear_predictor(d, config);
            if !(-700.0..=700.0).contains(&eta) {
                return Err(Error::InvalidParams(format!(
                    "linear predictor {eta:.3} overflows for {}",
                    self.design.responses.label(d)
                )));
            }
            values.push(eta.exp());
        }
        MarginVector::from_values(values)
    }

    /// Conditional cell probabilities of the block responses at a covariate
    /// assignment, by Möbius inversion of the implied margins. A negative
    /// inverted cell signals a parameter point outside the model family.
    pub fn conditional_cells(&self, config: Subset) -> Result<Vec<f64>> {
        moebius_invert(&self.margins_given(config)?)
    }

    /// Checks that every covariate assignment implies a valid distribution.
    pub fn check_valid(&self) -> Result<()> {
        for config in self.design.covariates.subsets() {
            self.conditional_cells(config)?;
        }
        Ok(())
    }

    pub fn apply_constraints(&mut self, constraints: &BTreeSet<ParamKey>) -> Result<()> {
        for &key in constraints {
            if key.term.is_empty() {
                return Err(Error::Domain(format!(
                    "intercept {} cannot be constrained",
                    self.design.param_name(key)
                )));
            }
            self.set(key, 0.0).map_err(|_| {
                Error::Domain(format!(
                    "constraint targets a coefficient outside the design: {}",
                    self.design.param_name(key)
                ))
            })?;
        }
        Ok(())
    }
}

/// Coefficient values of both blocks of the recursive model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub response: LogMeanParams,
    pub intermediate: Option<LogMeanParams>,
}

impl ModelParams {
    pub fn check_valid(&self) -> Result<()> {
        self.response.check_valid()?;
        if let Some(i) = &self.intermediate {
            i.check_valid()?;
        }
        Ok(())
    }
}

/// Recovers coefficients of a saturated design from conditional cell
/// distributions, one per covariate assignment (indexed by assignment mask).
/// Exact inverse of [`LogMeanParams::conditional_cells`].
pub fn cells_to_params(design: &BlockDesign, cells_per_config: &[Vec<f64>]) -> Result<LogMeanParams> {
    if !design.is_saturated() {
        return Err(Error::Domain(
            "coefficient recovery requires a saturated design".into(),
        ));
    }
    let n_configs = design.covariates.n_cells();
    if cells_per_config.len() != n_configs {
        return Err(Error::Domain(format!(
            "expected {} covariate assignments, got {}",
            n_configs,
            cells_per_config.len()
        )));
    }

    // log margins per response subset, over the covariate-assignment lattice
    let mut log_margins: Vec<Vec<f64>> = Vec::with_capacity(n_configs);
    for (config, cells) in cells_per_config.iter().enumerate() {
        let margins = crate::subsets::zeta_transform(cells)?;
        let mut row = Vec::with_capacity(design.responses.n_cells());
        for d in design.responses.subsets() {
            let v = margins.value(d);
            if d.is_empty() {
                row.push(0.0);
            } else if v <= 0.0 {
                return Err(Error::LogDomain(format!(
                    "margin of {} is zero at covariate assignment {}",
                    design.responses.label(d),
                    design.covariates.label(Subset(config as u16)),
                )));
            } else {
                row.push(v.ln());
            }
        }
        log_margins.push(row);
    }

    // log π_{D|config} = Σ_{t ⊆ config} coef_{D,t}, so coefficients are the
    // subset-lattice Möbius inversion of the log margins over configs.
    let mut params = LogMeanParams::zeroed(design.clone());
    for d in design.responses.nonempty_subsets() {
        let mut g: Vec<f64> = (0..n_configs)
            .map(|cfg| log_margins[cfg][d.index()])
            .collect();
        let k = n_configs.trailing_zeros();
        for bit in 0..k {
            let step = 1usize << bit;
            for mask in 0..n_configs {
                if mask & step != 0 {
                    g[mask] -= g[mask ^ step];
                }
            }
        }
        for (t_idx, &t) in design.terms.iter().enumerate() {
            params.values[(d.index() - 1) * design.terms.len() + t_idx] = g[t.index()];
        }
    }
    Ok(params)
}
