//! Plain-text model files.
//!
//! A model file declares the block structure, the response-block term set,
//! independence statements, and optionally coefficient values (a "params
//! fixture"), one item per line:
//!
//! ```text
//! # comment
//! responses     = R24, M24
//! intermediates = R4, M4
//! background    = X
//! interactions  = off
//! indep: {R24,M24} _||_ M4 | {R4,X}
//! note = shown verbatim in reports
//! alpha[R24]    = -1.040
//! theta[R24|R4] = 0.630
//! ```
//!
//! Sets are comma-separated, braces optional. A `zero: theta[D|term]` line
//! constrains a single coefficient to zero without an independence reading.
//! When any `alpha`/`theta` assignment is present the file carries fitted
//! values: every intercept must then be given, omitted coefficients are
//! zero, and keys outside the declared design are rejected. A candidates
//! file for stepwise selection lists bare `theta[D|term]` keys, one per
//! line.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::model::{
    build_design, constraints_from_independence, BlockId, BlockStructure, Design,
    IndepStatement, LogMeanParams, ModelParams, ParamKey, ZeroConstraints,
};
use crate::subsets::VarSet;

/// A parsed model file.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub structure: BlockStructure,
    pub interactions: bool,
    pub independencies: Vec<IndepStatement>,
    /// Coefficients pinned to zero by `zero:` lines.
    pub zeros: Vec<(BlockId, ParamKey)>,
    /// Coefficient values, when the file is a params fixture.
    pub params: Option<ModelParams>,
    /// Free-text note echoed into reports.
    pub note: Option<String>,
}

impl ModelSpec {
    pub fn design(&self) -> Design {
        build_design(&self.structure, self.interactions)
    }

    /// Zero constraints: independence-implied plus directly pinned ones.
    pub fn constraints(&self) -> Result<ZeroConstraints> {
        let design = self.design();
        let mut all = ZeroConstraints::default();
        for stmt in &self.independencies {
            let (_, c) = constraints_from_independence(stmt, &design)?;
            all.merge(c);
        }
        for (block, key) in &self.zeros {
            all.insert(*block, *key);
        }
        Ok(all)
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut responses: Option<Vec<String>> = None;
        let mut intermediates: Vec<String> = Vec::new();
        let mut background: Option<String> = None;
        let mut interactions = true;
        let mut independencies = Vec::new();
        let mut note = None;
        let mut param_lines: Vec<(usize, String, f64)> = Vec::new();
        let mut zero_lines: Vec<(usize, String)> = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let text = match line.find('#') {
                Some(pos) => &line[..pos],
                None => &line[..],
            };
            let text = text.trim();
            if text.is_empty() {
                continue;
            }

            if let Some(rest) = text.strip_prefix("indep:") {
                independencies.push(parse_indep(rest, lineno)?);
                continue;
            }
            if let Some(rest) = text.strip_prefix("zero:") {
                zero_lines.push((lineno, rest.trim().to_string()));
                continue;
            }

            let (key, value) = text.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "expected `key = value` or `indep: ...`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "responses" => assign_once(&mut responses, parse_set(value), key, lineno)?,
                "intermediates" => intermediates = parse_set(value),
                "background" => {
                    assign_once(&mut background, value.to_string(), key, lineno)?
                }
                "interactions" => {
                    interactions = match value {
                        "on" => true,
                        "off" => false,
                        other => {
                            return Err(Error::Parse {
                                line: lineno,
                                msg: format!("interactions must be on or off, got `{other}`"),
                            })
                        }
                    }
                }
                "note" => note = Some(value.to_string()),
                k if k.starts_with("alpha[") || k.starts_with("theta[") => {
                    let v: f64 = value.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("`{value}` is not a number"),
                    })?;
                    param_lines.push((lineno, k.to_string(), v));
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }

        let responses = responses.ok_or_else(|| Error::Schema("missing `responses`".into()))?;
        let background = background.ok_or_else(|| Error::Schema("missing `background`".into()))?;
        let structure = BlockStructure::new(
            VarSet::new(responses)?,
            VarSet::new(intermediates)?,
            background,
        )?;

        let mut spec = ModelSpec {
            structure,
            interactions,
            independencies,
            zeros: Vec::new(),
            params: None,
            note,
        };

        let design = spec.design();
        for (lineno, key) in &zero_lines {
            let (block, pk) = parse_param_key(key, &design, *lineno)?;
            if pk.term.is_empty() {
                return Err(Error::Parse {
                    line: *lineno,
                    msg: "intercepts cannot be pinned to zero".into(),
                });
            }
            if design.block(block).expect("resolved").index_of(pk).is_none() {
                return Err(Error::Parse {
                    line: *lineno,
                    msg: format!("`{key}` is outside the declared design"),
                });
            }
            spec.zeros.push((block, pk));
        }

        if !param_lines.is_empty() {
            let design = spec.design();
            let mut response = LogMeanParams::zeroed(design.response_block.clone());
            let mut intermediate = design
                .intermediate_block
                .clone()
                .map(LogMeanParams::zeroed);
            let mut seen: Vec<(BlockId, ParamKey)> = Vec::new();
            for (lineno, key, value) in &param_lines {
                let (block, pk) = parse_param_key(key, &design, *lineno)?;
                let target = match block {
                    BlockId::Response => &mut response,
                    BlockId::Intermediate => intermediate.as_mut().expect("resolved to it"),
                };
                target.set(pk, *value).map_err(|_| Error::Parse {
                    line: *lineno,
                    msg: format!("`{key}` is outside the declared design"),
                })?;
                seen.push((block, pk));
            }
            // margins need every intercept; a missing one silently means
            // probability 1, so insist on it
            for (block, params, label) in
                std::iter::once((BlockId::Response, &response, "response")).chain(
                    intermediate
                        .iter()
                        .map(|p| (BlockId::Intermediate, p, "intermediate")),
                )
            {
                for d in params.design().responses().nonempty_subsets() {
                    let k = ParamKey {
                        response: d,
                        term: crate::subsets::Subset::EMPTY,
                    };
                    if !seen.contains(&(block, k)) {
                        return Err(Error::Schema(format!(
                            "params fixture misses {} in the {label} block",
                            params.design().param_name(k)
                        )));
                    }
                }
            }
            spec.params = Some(ModelParams {
                response,
                intermediate,
            });
        }

        Ok(spec)
    }
}

fn assign_once<T>(slot: &mut Option<T>, value: T, key: &str, lineno: usize) -> Result<()> {
    if slot.is_some() {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("`{key}` given twice"),
        });
    }
    *slot = Some(value);
    Ok(())
}

fn parse_set(text: &str) -> Vec<String> {
    let inner = text.trim().trim_start_matches('{').trim_end_matches('}');
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_indep(rest: &str, lineno: usize) -> Result<IndepStatement> {
    let (lhs, rhs) = rest.split_once("_||_").ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "independence statement needs `_||_`".into(),
    })?;
    let targets = parse_set(lhs);
    if targets.is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "independence statement has no target variables".into(),
        });
    }
    let (sep, given) = rhs.split_once('|').ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "independence statement needs `| {conditioning set}`".into(),
    })?;
    let separated = sep.trim().to_string();
    if separated.is_empty() || separated.contains(',') {
        return Err(Error::Parse {
            line: lineno,
            msg: "exactly one variable may be separated".into(),
        });
    }
    Ok(IndepStatement {
        targets,
        separated,
        rest: parse_set(given),
    })
}

/// Parses `alpha[D]` / `theta[D|term]` against a design; the response set
/// decides which block the key addresses.
pub fn parse_param_key(key: &str, design: &Design, lineno: usize) -> Result<(BlockId, ParamKey)> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let (kind, body) = if let Some(b) = key.strip_prefix("alpha[") {
        ("alpha", b)
    } else if let Some(b) = key.strip_prefix("theta[") {
        ("theta", b)
    } else {
        return Err(err(format!("expected alpha[...] or theta[...], got `{key}`")));
    };
    let body = body
        .strip_suffix(']')
        .ok_or_else(|| err(format!("`{key}` misses the closing bracket")))?;

    let (resp_text, term_text) = match kind {
        "alpha" => (body, None),
        _ => {
            let (r, t) = body
                .split_once('|')
                .ok_or_else(|| err(format!("`{key}` needs the form theta[D|term]")))?;
            (r, Some(t))
        }
    };
    let resp_names = parse_set(resp_text);
    let resp_refs: Vec<&str> = resp_names.iter().map(String::as_str).collect();

    let block_of = |names: &[&str]| -> Option<BlockId> {
        if names
            .iter()
            .all(|n| design.response_block.responses().index_of(n).is_some())
        {
            Some(BlockId::Response)
        } else if design.intermediate_block.as_ref().is_some_and(|ib| {
            names.iter().all(|n| ib.responses().index_of(n).is_some())
        }) {
            Some(BlockId::Intermediate)
        } else {
            None
        }
    };
    let block = block_of(&resp_refs).ok_or_else(|| {
        err(format!(
            "`{}` does not name a response subset of either block",
            resp_text.trim()
        ))
    })?;
    let bd = design.block(block).expect("block resolved above");
    let response = bd.responses().subset_of(&resp_refs)?;
    let term = match term_text {
        None => crate::subsets::Subset::EMPTY,
        Some(t) => {
            let names = parse_set(t);
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let mask = bd.covariates().subset_of(&refs)?;
            if mask.is_empty() {
                return Err(err(format!("`{key}` has an empty term")));
            }
            mask
        }
    };
    Ok((block, ParamKey { response, term }))
}

/// Reads a stepwise candidates file: one `theta[D|term]` key per line.
pub fn parse_candidates<R: BufRead>(
    reader: R,
    design: &Design,
) -> Result<Vec<(BlockId, ParamKey)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let text = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let (block, key) = parse_param_key(text, design, lineno)?;
        if key.term.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "intercepts cannot be elimination candidates".into(),
            });
        }
        let bd = design.block(block).expect("resolved");
        if bd.index_of(key).is_none() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("`{text}` is outside the design"),
            });
        }
        out.push((block, key));
    }
    Ok(out)
}
