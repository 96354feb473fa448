//! Shared generators for the property suites: random valid parameter points
//! drawn by sampling cell distributions, converting to coefficients, and
//! shrinking slopes back into the valid region when constraints cut it.
#![allow(dead_code)] // each test binary uses its own subset

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lmrr::model::ModelParams;
use lmrr::{
    build_design, cells_to_params, BlockStructure, ContingencyTable, LogMeanParams, ParamKey,
    Subset, VarSet, ZeroConstraints,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat Dirichlet draw via normalized exponentials.
pub fn dirichlet_cells(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| -(rng.gen::<f64>().max(1e-12)).ln())
        .collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

fn shrink_until_valid(params: &mut LogMeanParams) {
    for _ in 0..400 {
        if params.check_valid().is_ok() {
            return;
        }
        let design = params.design().clone();
        for key in design.keys() {
            if !key.term.is_empty() {
                let v = params.value(key);
                params.set(key, v * 0.7).unwrap();
            }
        }
    }
    panic!("shrinking slopes never reached the valid region");
}

/// Random valid parameters for both blocks of a structure. Saturated cell
/// distributions are drawn per covariate assignment; coefficients outside
/// the (possibly restricted) design or under a zero constraint are dropped,
/// then slopes shrink toward the always-valid zero-slope point until the
/// implied cells are coherent everywhere.
pub fn random_model(
    rng: &mut impl Rng,
    structure: &BlockStructure,
    interactions: bool,
    constraints: &ZeroConstraints,
) -> ModelParams {
    let saturated = build_design(structure, true);
    let design = build_design(structure, interactions);

    let sat_rb = &saturated.response_block;
    let cells: Vec<Vec<f64>> = (0..sat_rb.covariates().n_cells())
        .map(|_| dirichlet_cells(rng, sat_rb.responses().n_cells()))
        .collect();
    let y_sat = cells_to_params(sat_rb, &cells).unwrap();
    let mut response = LogMeanParams::zeroed(design.response_block.clone());
    for key in design.response_block.keys() {
        if !constraints.response_block.contains(&key) {
            response.set(key, y_sat.value(key)).unwrap();
        }
    }
    shrink_until_valid(&mut response);

    let intermediate = design.intermediate_block.as_ref().map(|ib| {
        let cells: Vec<Vec<f64>> = (0..ib.covariates().n_cells())
            .map(|_| dirichlet_cells(rng, ib.responses().n_cells()))
            .collect();
        let z_sat = cells_to_params(ib, &cells).unwrap();
        let mut z = LogMeanParams::zeroed(ib.clone());
        for key in ib.keys() {
            if !constraints.intermediate_block.contains(&key) {
                z.set(key, z_sat.value(key)).unwrap();
            }
        }
        shrink_until_valid(&mut z);
        z
    });

    ModelParams {
        response,
        intermediate,
    }
}

pub fn structure(responses: &[&str], intermediates: &[&str], background: &str) -> BlockStructure {
    BlockStructure::new(
        VarSet::new(responses.iter().map(|s| s.to_string())).unwrap(),
        VarSet::new(intermediates.iter().map(|s| s.to_string())).unwrap(),
        background,
    )
    .unwrap()
}

/// Joint cell probabilities of (responses, intermediates, background) under
/// a model, with the background split `p_x1`. Cell order follows
/// `structure.all_variables()`.
pub fn joint_distribution(params: &ModelParams, p_x1: f64) -> Vec<f64> {
    let y = &params.response;
    let z = params.intermediate.as_ref().expect("two-block model");
    let n_y = y.design().responses().arity();
    let n_z = z.design().responses().arity();
    let mut joint = vec![0.0; 1 << (n_y + n_z + 1)];
    for x in [0usize, 1usize] {
        let zcfg = if x == 1 {
            z.design().covariates().full()
        } else {
            Subset::EMPTY
        };
        let z_cells = lmrr::moebius_invert(&z.margins_given(zcfg).unwrap()).unwrap();
        for (z_cell, &wz) in z_cells.iter().enumerate() {
            // response-block covariates are the intermediates then x
            let mut config = Subset::EMPTY;
            for bit in 0..n_z {
                if z_cell & (1 << bit) != 0 {
                    config = config.with(bit);
                }
            }
            if x == 1 {
                config = config.with(n_z);
            }
            let y_cells = y.conditional_cells(config).unwrap();
            let px = if x == 1 { p_x1 } else { 1.0 - p_x1 };
            for (y_cell, &q) in y_cells.iter().enumerate() {
                let idx = y_cell | (z_cell << n_y) | (x << (n_y + n_z));
                joint[idx] = wz * q * px;
            }
        }
    }
    joint
}

/// Multinomial sample of size `n` from a joint distribution, as a table over
/// the structure's variables.
pub fn sample_table(
    rng: &mut impl Rng,
    structure: &BlockStructure,
    joint: &[f64],
    n: u64,
) -> ContingencyTable {
    let mut cumulative = Vec::with_capacity(joint.len());
    let mut acc = 0.0;
    for &p in joint {
        acc += p;
        cumulative.push(acc);
    }
    let mut counts = vec![0u64; joint.len()];
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * acc;
        let idx = cumulative.partition_point(|&c| c < u);
        counts[idx.min(joint.len() - 1)] += 1;
    }
    ContingencyTable::new(structure.all_variables(), counts).unwrap()
}

/// Convenience: a zero constraint on the response block by names.
pub fn response_zero(structure: &BlockStructure, resp: &[&str], term: &[&str]) -> ParamKey {
    let design = build_design(structure, true);
    ParamKey {
        response: design.response_block.responses().subset_of(resp).unwrap(),
        term: design.response_block.covariates().subset_of(term).unwrap(),
    }
}
