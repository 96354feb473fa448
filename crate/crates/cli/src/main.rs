//! Command-line front end: fit recursive log-mean linear models to binary
//! contingency tables, compare nested fits, decompose marginal relative
//! risks, and run backward stepwise selection.

mod report;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lmrr::decomposition::{
    brute_force_marginal, conditional_rr, decomposition_se, marginal_rr,
};
use lmrr::estimation::{
    bic, compare, fit, standard_errors, stepwise_select, BicConvention, FitInference, FitOptions,
    FitResult,
};
use lmrr::modelfile::{parse_candidates, ModelSpec};
use lmrr::{BlockId, ContingencyTable, Design, Error as LmError, ModelParams, ParamKey, Subset};

use report::{
    block_reports, comparison_report, render_compare_text, render_decompose_text,
    render_fit_text, render_stepwise_text, steps_report, DecomposeReport, DecompositionRow,
    EffectReport, FitReport, StepwiseReport,
};

#[derive(Parser)]
#[command(name = "lmrr", version, about = "Relative-risk decomposition for recursive log-mean linear models on binary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Human-readable tables, three decimals.
    Text,
    /// JSON with full precision; stable byte-for-byte across runs.
    #[value(alias = "json")]
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BicArg {
    /// Count every free coefficient of every modeled block.
    Full,
    /// Count only the response block's free non-intercept coefficients.
    #[value(name = "paper-compat")]
    PaperCompat,
}

impl From<BicArg> for BicConvention {
    fn from(b: BicArg) -> Self {
        match b {
            BicArg::Full => BicConvention::Full,
            BicArg::PaperCompat => BicConvention::PaperCompat,
        }
    }
}

#[derive(Debug, Parser)]
struct CommonOpts {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Which parameters the BIC penalty counts.
    #[arg(long = "bic-convention", value_enum, default_value_t = BicArg::Full)]
    bic_convention: BicArg,
    /// Optimizer iteration cap.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Gradient-norm convergence tolerance.
    #[arg(long = "grad-tol")]
    grad_tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a data table and print estimates with standard errors.
    Fit {
        /// Comma-separated data file with a header row and optional `count` column.
        #[arg(long)]
        data: PathBuf,
        /// Model file declaring blocks, term set and constraints.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Likelihood-ratio comparison of a reduced model against a full one.
    Compare {
        #[arg(long)]
        data: PathBuf,
        /// The reduced model.
        #[arg(long)]
        model: PathBuf,
        /// The full model it nests in.
        #[arg(long)]
        full: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Decompose marginal relative risks into conditional × deviation.
    Decompose {
        /// Data to fit first; omit when the model file carries coefficients.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Intermediates to marginalize over (default: all of them).
        #[arg(long, value_delimiter = ',')]
        over: Option<Vec<String>>,
        /// Keep only response subsets up to this size.
        #[arg(long = "max-order")]
        max_order: Option<usize>,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Backward elimination over candidate zero-constraints, by BIC.
    Stepwise {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Candidate file, one theta[D|term] per line. Default: every
        /// interaction term of the response block.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

#[derive(Debug)]
enum CliError {
    /// Unreadable or malformed inputs; exit status 2.
    Input(String),
    /// Model or optimization failure on valid inputs; exit status 1.
    Model(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Model(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::NonConvergence { .. }
            | LmError::LogDomain(_)
            | LmError::IncoherentMargins { .. }
            | LmError::InvalidParams(_)
            | LmError::InvalidDistribution(_)
            | LmError::SingularInformation { .. } => CliError::Model(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_table(path: &Path) -> CliResult<ContingencyTable> {
    Ok(ContingencyTable::from_csv(open(path)?)?)
}

fn load_spec(path: &Path) -> CliResult<ModelSpec> {
    Ok(ModelSpec::parse(open(path)?)?)
}

fn fit_options(opts: &CommonOpts) -> FitOptions {
    let mut fo = FitOptions::default();
    if let Some(m) = opts.max_iter {
        fo.max_iterations = m;
    }
    if let Some(t) = opts.grad_tol {
        fo.gradient_tol = t;
    }
    fo
}

fn emit<T: serde::Serialize>(format: FormatArg, value: &T, text: String) -> CliResult<()> {
    match format {
        FormatArg::Text => print!("{text}"),
        FormatArg::Structured => println!(
            "{}",
            serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Model(format!("serialization failed: {e}")))?
        ),
    }
    Ok(())
}

fn fit_spec(
    table: &ContingencyTable,
    spec: &ModelSpec,
    opts: &CommonOpts,
) -> CliResult<(Design, FitResult, FitInference)> {
    if spec.params.is_some() {
        return Err(CliError::Input(
            "the model file already carries coefficient values; pass a specification without \
             alpha/theta assignments to fit"
                .into(),
        ));
    }
    let design = spec.design();
    let constraints = spec.constraints()?;
    let result = fit(table, &spec.structure, &design, &constraints, &fit_options(opts))?;
    let inference = standard_errors(&result, table)?;
    Ok((design, result, inference))
}

fn fit_report(
    design: &Design,
    result: &FitResult,
    inference: &FitInference,
    convention: BicConvention,
    note: Option<String>,
) -> FitReport {
    FitReport {
        command: "fit",
        n: result.n,
        converged: result.converged,
        iterations: result.iterations,
        gradient_norm: result.gradient_norm,
        loglik: result.loglik,
        background_loglik: result.background_loglik,
        bic: bic(result, convention).into(),
        blocks: block_reports(design, result, Some(inference)),
        note,
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit { data, model, opts } => {
            let table = load_table(&data)?;
            let spec = load_spec(&model)?;
            let (design, result, inference) = fit_spec(&table, &spec, &opts)?;
            let report = fit_report(
                &design,
                &result,
                &inference,
                opts.bic_convention.into(),
                spec.note.clone(),
            );
            emit(opts.format, &report, render_fit_text(&report))
        }
        Command::Compare {
            data,
            model,
            full,
            opts,
        } => {
            let table = load_table(&data)?;
            let reduced_spec = load_spec(&model)?;
            let full_spec = load_spec(&full)?;
            let (_, reduced, _) = fit_spec(&table, &reduced_spec, &opts)?;
            let (_, full, _) = fit_spec(&table, &full_spec, &opts)?;
            let cmp = compare(&reduced, &full)?;
            let convention: BicConvention = opts.bic_convention.into();
            let report = comparison_report(
                &cmp,
                table.n(),
                bic(&reduced, convention),
                bic(&full, convention),
            );
            emit(opts.format, &report, render_compare_text(&report))
        }
        Command::Decompose {
            data,
            model,
            over,
            max_order,
            opts,
        } => {
            let spec = load_spec(&model)?;
            let (params, inference) = match (&spec.params, &data) {
                (Some(p), None) => (p.clone(), None),
                (Some(_), Some(_)) => {
                    return Err(CliError::Input(
                        "the model file already carries coefficient values; --data is not \
                         allowed with a params fixture"
                            .into(),
                    ))
                }
                (None, Some(path)) => {
                    let table = load_table(path)?;
                    let (_, result, inference) = fit_spec(&table, &spec, &opts)?;
                    (result.params(), Some(inference))
                }
                (None, None) => {
                    return Err(CliError::Input(
                        "decompose needs either --data to fit or a params fixture as --model"
                            .into(),
                    ))
                }
            };
            let report = decompose_report(&spec, &params, inference.as_ref(), over, max_order)?;
            emit(opts.format, &report, render_decompose_text(&report))
        }
        Command::Stepwise {
            data,
            model,
            candidates,
            opts,
        } => {
            let table = load_table(&data)?;
            let spec = load_spec(&model)?;
            if spec.params.is_some() {
                return Err(CliError::Input(
                    "the model file already carries coefficient values; stepwise expects a \
                     specification"
                        .into(),
                ));
            }
            let design = spec.design();
            let base_constraints = spec.constraints()?;
            let cands: Vec<(BlockId, ParamKey)> = match candidates {
                Some(path) => parse_candidates(open(&path)?, &design)?,
                None => design
                    .response_block
                    .keys()
                    .filter(|k| k.term.len() >= 2 && !base_constraints.response_block.contains(k))
                    .map(|k| (BlockId::Response, k))
                    .collect(),
            };
            let n_candidates = cands.len();
            let (best, steps) = stepwise_select(
                &table,
                &spec.structure,
                &design,
                &base_constraints,
                &cands,
                &fit_options(&opts),
            )?;
            let inference = standard_errors(&best, &table)?;
            let mut selected = fit_report(
                &design,
                &best,
                &inference,
                opts.bic_convention.into(),
                spec.note.clone(),
            );
            selected.command = "stepwise";
            let report = StepwiseReport {
                command: "stepwise",
                candidates: n_candidates,
                steps: steps_report(&design, &steps),
                selected,
            };
            emit(opts.format, &report, render_stepwise_text(&report))
        }
    }
}

fn decompose_report(
    spec: &ModelSpec,
    params: &ModelParams,
    inference: Option<&FitInference>,
    over: Option<Vec<String>>,
    max_order: Option<usize>,
) -> CliResult<DecomposeReport> {
    let y = &params.response;
    let z = params.intermediate.as_ref().ok_or_else(|| {
        CliError::Input("decompose needs at least one intermediate variable".into())
    })?;

    let zvars = z.design().responses().clone();
    let over_mask = match &over {
        None => zvars.full(),
        Some(names) => {
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            zvars.subset_of(&refs)?
        }
    };
    let over_names: Vec<String> = over_mask
        .members()
        .map(|i| zvars.name(i).to_string())
        .collect();

    let mut subsets: Vec<Subset> = y.design().responses().nonempty_subsets().collect();
    subsets.sort_by_key(|s| (s.len(), s.index()));
    if let Some(k) = max_order {
        subsets.retain(|s| s.len() <= k);
    }

    let mut rows = Vec::new();
    let mut oracle_max_gap = 0.0f64;
    for d in subsets {
        let dec = marginal_rr(y, z, d, over_mask)?;
        let oracle_log = brute_force_marginal(y, z, d)?;
        oracle_max_gap = oracle_max_gap.max((dec.log_marginal - oracle_log).abs());
        let se = match inference {
            Some(inf) => Some(decomposition_se(params, inf, d, over_mask)?),
            None => None,
        };
        rows.push(DecompositionRow {
            response: y.design().responses().label(d),
            rr_conditional: dec.rr_conditional,
            deviation: dec.deviation,
            rr_marginal: dec.rr_marginal,
            weighted_rr_treated: dec.weighted_rr_treated,
            weighted_rr_control: dec.weighted_rr_control,
            oracle_rr_marginal: oracle_log.exp(),
            log_conditional: dec.log_conditional,
            log_deviation: dec.log_deviation,
            log_marginal: dec.log_marginal,
            se_log_conditional: se.map(|s| s.log_conditional),
            se_log_deviation: se.map(|s| s.log_deviation),
            se_log_marginal: se.map(|s| s.log_marginal),
        });
    }

    // background effect on every intermediate pattern event
    let mut intermediate_rrs = Vec::new();
    let mut esubsets: Vec<Subset> = zvars.nonempty_subsets().collect();
    esubsets.sort_by_key(|s| (s.len(), s.index()));
    for e in esubsets {
        let rr = conditional_rr(z, e, 0, Subset::EMPTY);
        intermediate_rrs.push(EffectReport {
            name: format!("{}|background", zvars.label(e)),
            rr,
            log_rr: rr.ln(),
        });
    }

    // response effect of each single intermediate, others at zero
    let mut intermediate_effects = Vec::new();
    let mut dsubsets: Vec<Subset> = y.design().responses().nonempty_subsets().collect();
    dsubsets.sort_by_key(|s| (s.len(), s.index()));
    for d in dsubsets {
        for u in over_mask.members() {
            let cov_idx = y
                .design()
                .covariates()
                .index_of(zvars.name(u))
                .expect("intermediate is a response-block covariate");
            let rr = conditional_rr(y, d, cov_idx, Subset::EMPTY);
            intermediate_effects.push(EffectReport {
                name: format!(
                    "{}|{}",
                    y.design().responses().label(d),
                    zvars.name(u)
                ),
                rr,
                log_rr: rr.ln(),
            });
        }
    }

    Ok(DecomposeReport {
        command: "decompose",
        over: over_names,
        rows,
        intermediate_rrs,
        intermediate_effects,
        oracle_max_gap,
        note: spec.note.clone(),
    })
}

