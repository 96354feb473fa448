//! Property suites for the marginal/conditional decomposition identities,
//! all checked against the brute-force marginalization oracle.

mod common;

use common::{dirichlet_cells, random_model, response_zero, rng, structure};
use lmrr::decomposition::{
    brute_force_marginal, conditional_rr, deviation_multi, deviation_univariate, marginal_rr,
    weighted_avg_rr,
};
use lmrr::{moebius_invert, zeta_transform, ParamKey, Subset, ZeroConstraints};
use rand::Rng;

const DRAWS: usize = 100;

#[test]
fn zeta_moebius_round_trip_on_random_distributions() {
    let mut rng = rng(11);
    for _ in 0..DRAWS {
        let cells = dirichlet_cells(&mut rng, 16);
        let margins = zeta_transform(&cells).unwrap();
        let back = moebius_invert(&margins).unwrap();
        for (a, b) in cells.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14, "round trip drifted: {a} vs {b}");
        }
    }
}

#[test]
fn transforms_are_linear() {
    let mut rng = rng(12);
    for _ in 0..40 {
        let p = dirichlet_cells(&mut rng, 8);
        let q = dirichlet_cells(&mut rng, 8);
        let w: f64 = rng.gen();
        let mix: Vec<f64> = p
            .iter()
            .zip(&q)
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        let zp = zeta_transform(&p).unwrap();
        let zq = zeta_transform(&q).unwrap();
        let zm = zeta_transform(&mix).unwrap();
        for s in 0..8u16 {
            let expect = w * zp.value(Subset(s)) + (1.0 - w) * zq.value(Subset(s));
            assert!((zm.value(Subset(s)) - expect).abs() < 1e-14);
        }
        let ip = moebius_invert(&zp).unwrap();
        let iq = moebius_invert(&zq).unwrap();
        let im = moebius_invert(&zm).unwrap();
        for c in 0..8 {
            let expect = w * ip[c] + (1.0 - w) * iq[c];
            assert!((im[c] - expect).abs() < 1e-14);
        }
    }
}


/// Single response, single intermediate, full interactions: the marginal
/// log relative risk splits into the conditional coefficient plus the
/// univariate deviation term.
#[test]
fn univariate_identity_with_interactions() {
    let s = structure(&["Y"], &["Z"], "X");
    let mut rng = rng(21);
    let d = Subset(1);
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, true, &ZeroConstraints::default());
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();

        let lambda = deviation_univariate(y, z, d).unwrap();
        let cond = y.value(ParamKey {
            response: d,
            term: Subset(0b10), // X
        });
        let oracle = brute_force_marginal(y, z, d).unwrap();
        assert!(
            (oracle - (cond + lambda)).abs() < 1e-10,
            "oracle {oracle} vs conditional {cond} + deviation {lambda}"
        );

        // the deviation factor is the ratio of weighted-average relative risks
        let over = z.design().responses().full();
        let treated = weighted_avg_rr(y, z, d, true, over).unwrap();
        let control = weighted_avg_rr(y, z, d, false, over).unwrap();
        let ratio = treated / control;
        assert!(
            (ratio - lambda.exp()).abs() <= 1e-12 * ratio.abs(),
            "weighted ratio {ratio} vs exp(deviation) {}",
            lambda.exp()
        );
    }
}

/// Two responses, one intermediate: the same identity holds for every
/// product outcome, i.e. every nonempty response subset.
#[test]
fn bivariate_outcomes_identity() {
    let s = structure(&["Y1", "Y2"], &["Z"], "X");
    let mut rng = rng(22);
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, true, &ZeroConstraints::default());
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();
        for d in y.design().responses().nonempty_subsets() {
            let lambda = deviation_univariate(y, z, d).unwrap();
            let cond = y.value(ParamKey {
                response: d,
                term: Subset(0b10),
            });
            let oracle = brute_force_marginal(y, z, d).unwrap();
            assert!((oracle - (cond + lambda)).abs() < 1e-10);

            let over = z.design().responses().full();
            let ratio = weighted_avg_rr(y, z, d, true, over).unwrap()
                / weighted_avg_rr(y, z, d, false, over).unwrap();
            assert!((ratio - lambda.exp()).abs() <= 1e-12 * ratio.abs());
        }
    }
}

/// Two responses, two intermediates, no interaction terms: the weighted-sum
/// deviation over the full intermediate set matches the oracle.
#[test]
fn multi_intermediate_identity_without_interactions() {
    let s = structure(&["Y1", "Y2"], &["Z1", "Z2"], "X");
    let mut rng = rng(23);
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, false, &ZeroConstraints::default());
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();
        let over = z.design().responses().full();
        for d in y.design().responses().nonempty_subsets() {
            let lambda = deviation_multi(y, z, d, over).unwrap();
            let x_term = y.design().covariates().subset_of(&["X"]).unwrap();
            let cond = y.value(ParamKey {
                response: d,
                term: x_term,
            });
            let oracle = brute_force_marginal(y, z, d).unwrap();
            assert!(
                (oracle - (cond + lambda)).abs() < 1e-10,
                "oracle {oracle} vs {cond} + {lambda}"
            );

            let ratio = weighted_avg_rr(y, z, d, true, over).unwrap()
                / weighted_avg_rr(y, z, d, false, over).unwrap();
            assert!((ratio - lambda.exp()).abs() <= 1e-12 * ratio.abs());
        }
    }
}

/// Deeper layouts: |V| up to 3 responses and |U| up to 3 intermediates.
#[test]
fn identity_holds_on_larger_layouts() {
    let cases = [
        (vec!["A", "B", "C"], vec!["Z"], true),
        (vec!["A"], vec!["Z1", "Z2", "Z3"], false),
        (vec!["A", "B", "C"], vec!["Z1", "Z2", "Z3"], false),
    ];
    let mut rng = rng(24);
    for (resp, inter, interactions) in cases {
        let s = structure(&resp, &inter, "X");
        for _ in 0..20 {
            let m = random_model(&mut rng, &s, interactions, &ZeroConstraints::default());
            let y = &m.response;
            let z = m.intermediate.as_ref().unwrap();
            let over = z.design().responses().full();
            let x_term = y.design().covariates().subset_of(&["X"]).unwrap();
            for d in y.design().responses().nonempty_subsets() {
                let lambda = if inter.len() == 1 {
                    deviation_univariate(y, z, d).unwrap()
                } else {
                    deviation_multi(y, z, d, over).unwrap()
                };
                let cond = y.value(ParamKey {
                    response: d,
                    term: x_term,
                });
                let oracle = brute_force_marginal(y, z, d).unwrap();
                assert!((oracle - (cond + lambda)).abs() < 1e-10);
            }
        }
    }
}

/// Zeroing every intermediate-bearing coefficient of a response subset makes
/// its deviation vanish identically.
#[test]
fn deviation_zero_under_conditional_independence_of_the_intermediate() {
    let s = structure(&["Y"], &["Z"], "X");
    let mut constraints = ZeroConstraints::default();
    constraints
        .response_block
        .insert(response_zero(&s, &["Y"], &["Z"]));
    constraints
        .response_block
        .insert(response_zero(&s, &["Y"], &["Z", "X"]));
    let mut rng = rng(25);
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, true, &constraints);
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();
        let lambda = deviation_univariate(y, z, Subset(1)).unwrap();
        assert_eq!(lambda, 0.0);
        let oracle = brute_force_marginal(y, z, Subset(1)).unwrap();
        let cond = y.value(ParamKey {
            response: Subset(1),
            term: Subset(0b10),
        });
        assert!((oracle - cond).abs() < 1e-10);
    }
}

/// Asymmetric independence pattern on two outcomes: the first outcome is
/// independent of the intermediate given the background (its deviation
/// vanishes), the second is independent of the background given the
/// intermediate (its deviation generally does not vanish).
#[test]
fn asymmetric_independence_keeps_one_deviation_alive() {
    let s = structure(&["Y1", "Y2"], &["Z"], "X");
    let mut constraints = ZeroConstraints::default();
    constraints
        .response_block
        .insert(response_zero(&s, &["Y1"], &["Z"]));
    constraints
        .response_block
        .insert(response_zero(&s, &["Y1"], &["Z", "X"]));
    constraints
        .response_block
        .insert(response_zero(&s, &["Y2"], &["X"]));
    constraints
        .response_block
        .insert(response_zero(&s, &["Y2"], &["Z", "X"]));

    let mut rng = rng(26);
    let mut saw_live_second = false;
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, true, &constraints);
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();
        let lambda1 = deviation_univariate(y, z, Subset(0b01)).unwrap();
        assert_eq!(lambda1, 0.0, "first outcome's deviation must vanish");
        let lambda2 = deviation_univariate(y, z, Subset(0b10)).unwrap();
        if lambda2.abs() > 1e-6 {
            saw_live_second = true;
        }
        // and the marginal effect of the second outcome is pure deviation
        let oracle = brute_force_marginal(y, z, Subset(0b10)).unwrap();
        assert!((oracle - lambda2).abs() < 1e-10);
    }
    assert!(
        saw_live_second,
        "every draw had a vanishing second deviation, the asymmetry never showed"
    );
}

/// The slope coefficients are exactly log relative risks of the implied
/// conditional distribution, and flipping a conditioning covariate to 1
/// multiplies the risk by the exponentiated interaction coefficient.
#[test]
fn coefficients_are_log_relative_risks_of_implied_cells() {
    let s = structure(&["Y1", "Y2"], &["Z"], "X");
    let mut rng = rng(27);
    for _ in 0..DRAWS {
        let m = random_model(&mut rng, &s, true, &ZeroConstraints::default());
        let y = &m.response;
        let cov = y.design().covariates();
        let z_idx = cov.index_of("Z").unwrap();
        let x_idx = cov.index_of("X").unwrap();
        for d in y.design().responses().nonempty_subsets() {
            // ratio of all-ones margins across Z at X=0, from the cells
            let at = |config: Subset| {
                let cells = y.conditional_cells(config).unwrap();
                zeta_transform(&cells).unwrap().value(d)
            };
            let ratio = at(Subset::singleton(z_idx)) / at(Subset::EMPTY);
            let theta = y.value(ParamKey {
                response: d,
                term: Subset::singleton(z_idx),
            });
            assert!(
                (ratio - theta.exp()).abs() <= 1e-10 * ratio.abs(),
                "slope is not the log relative risk: {ratio} vs {}",
                theta.exp()
            );

            // conditioning level 1 scales the risk by the interaction factor
            let interaction = y.value(ParamKey {
                response: d,
                term: Subset::singleton(z_idx).with(x_idx),
            });
            let rr_x0 = conditional_rr(y, d, z_idx, Subset::EMPTY);
            let rr_x1 = conditional_rr(y, d, z_idx, Subset::singleton(x_idx));
            let rhs = rr_x0 * interaction.exp();
            assert!(
                (rr_x1 - rhs).abs() <= 1e-14 * rhs.abs(),
                "level-1 risk {rr_x1} vs level-0 × interaction {rhs}"
            );
        }
    }
}

/// On a saturated fit the decomposition must land exactly on the empirical
/// marginal relative risk, because the fitted cells are the observed
/// proportions: three independent routes (deviation formula, brute-force
/// marginalization, direct table proportions) meet in one number.
#[test]
fn saturated_fit_decomposition_equals_empirical_marginal() {
    use lmrr::decomposition::marginal_rr;
    use lmrr::estimation::{fit, FitOptions};
    use lmrr::ContingencyTable;
    use std::io::Cursor;

    let csv = "Y,Z,X,count\n0,0,0,221\n1,0,0,109\n0,1,0,152\n1,1,0,186\n\
               0,0,1,202\n1,0,1,158\n0,1,1,196\n1,1,1,455\n";
    let table = ContingencyTable::from_csv(Cursor::new(csv)).unwrap();
    let s = structure(&["Y"], &["Z"], "X");
    let design = lmrr::build_design(&s, true);
    let fitted = fit(&table, &s, &design, &ZeroConstraints::default(), &FitOptions::default())
        .unwrap();
    let params = fitted.params();
    let y_params = &params.response;
    let z_params = params.intermediate.as_ref().unwrap();

    let d = y_params.design().responses().full();
    let dec = marginal_rr(y_params, z_params, d, z_params.design().responses().full()).unwrap();

    let y_var = table.vars().subset_of(&["Y"]).unwrap();
    let x_var = table.vars().subset_of(&["X"]).unwrap();
    let treated = table.conditional_proportion(y_var, x_var, x_var).unwrap();
    let control = table
        .conditional_proportion(y_var, x_var, Subset::EMPTY)
        .unwrap();
    let empirical = treated.rate / control.rate;

    assert!(
        (dec.rr_marginal - empirical).abs() < 1e-12,
        "decomposition {} vs empirical {empirical}",
        dec.rr_marginal
    );
    let oracle = brute_force_marginal(y_params, z_params, d).unwrap();
    assert!((oracle.exp() - empirical).abs() < 1e-12);
}

/// The assembled decomposition keeps its internal identities: marginal =
/// conditional × deviation, and deviation = ratio of weighted averages.
#[test]
fn assembled_decomposition_is_internally_consistent() {
    let s = structure(&["Y1", "Y2"], &["Z1", "Z2"], "X");
    let mut rng = rng(28);
    for _ in 0..40 {
        let m = random_model(&mut rng, &s, false, &ZeroConstraints::default());
        let y = &m.response;
        let z = m.intermediate.as_ref().unwrap();
        let over = z.design().responses().full();
        for d in y.design().responses().nonempty_subsets() {
            let dec = marginal_rr(y, z, d, over).unwrap();
            assert!(
                (dec.rr_marginal - dec.rr_conditional * dec.deviation).abs()
                    <= 1e-12 * dec.rr_marginal
            );
            let ratio = dec.weighted_rr_treated / dec.weighted_rr_control;
            assert!((dec.deviation - ratio).abs() <= 1e-12 * dec.deviation);
        }
    }
}
