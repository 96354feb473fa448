//! Criterion benchmarks for the hot paths: subset transforms, block fits,
//! and the relative-risk decomposition with its marginalization oracle.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use std::io::Cursor;

use lmrr::decomposition::{brute_force_marginal, marginal_rr};
use lmrr::estimation::{fit, standard_errors, FitOptions};
use lmrr::modelfile::ModelSpec;
use lmrr::{moebius_invert, zeta_transform, ContingencyTable, ZeroConstraints};

const SMOKING_CSV: &str = "\
Y,Z,X,count
0,0,0,221
1,0,0,109
0,1,0,152
1,1,0,186
0,0,1,202
1,0,1,158
0,1,1,196
1,1,1,455
";

const SMOKING_MODEL: &str = "\
responses = Y
intermediates = Z
background = X
interactions = on
";

const SMOKING_REDUCED: &str = "\
responses = Y
intermediates = Z
background = X
interactions = on
zero: theta[Y|Z,X]
";

const MORPHINE_MODEL: &str = "\
responses = R24, M24
intermediates = R4, M4
background = X
interactions = off
alpha[R24] = -1.040
theta[R24|R4] = 0.630
theta[R24|X] = 0.329
alpha[M24] = -2.055
theta[M24|R4] = 0.514
theta[M24|X] = 1.096
alpha[R24,M24] = -2.332
theta[R24,M24|R4] = 0.692
theta[R24,M24|X] = 1.187
alpha[R4] = -1.366
theta[R4|X] = 1.060
alpha[M4] = -2.024
theta[M4|X] = 1.285
alpha[R4,M4] = -2.511
theta[R4,M4|X] = 1.731
";

fn transforms(c: &mut Criterion) {
    let k = 12usize;
    let n = 1usize << k;
    let cells: Vec<f64> = (0..n).map(|i| (i % 7 + 1) as f64).collect();
    let total: f64 = cells.iter().sum();
    let cells: Vec<f64> = cells.into_iter().map(|v| v / total).collect();

    c.bench_function("zeta_transform_4096_cells", |b| {
        b.iter(|| zeta_transform(black_box(&cells)).unwrap())
    });
    let margins = zeta_transform(&cells).unwrap();
    c.bench_function("moebius_invert_4096_cells", |b| {
        b.iter(|| moebius_invert(black_box(&margins)).unwrap())
    });
}

fn fits(c: &mut Criterion) {
    let table = ContingencyTable::from_csv(Cursor::new(SMOKING_CSV)).unwrap();
    let saturated = ModelSpec::parse(Cursor::new(SMOKING_MODEL)).unwrap();
    let reduced = ModelSpec::parse(Cursor::new(SMOKING_REDUCED)).unwrap();
    let opts = FitOptions::default();

    c.bench_function("fit_saturated_closed_form", |b| {
        b.iter(|| {
            fit(
                black_box(&table),
                &saturated.structure,
                &saturated.design(),
                &ZeroConstraints::default(),
                &opts,
            )
            .unwrap()
        })
    });

    let design = reduced.design();
    let constraints = reduced.constraints().unwrap();
    c.bench_function("fit_reduced_newton", |b| {
        b.iter(|| fit(black_box(&table), &reduced.structure, &design, &constraints, &opts).unwrap())
    });

    let fitted = fit(&table, &reduced.structure, &design, &constraints, &opts).unwrap();
    c.bench_function("standard_errors_reduced", |b| {
        b.iter(|| standard_errors(black_box(&fitted), &table).unwrap())
    });
}

fn decomposition(c: &mut Criterion) {
    let spec = ModelSpec::parse(Cursor::new(MORPHINE_MODEL)).unwrap();
    let params = spec.params.clone().unwrap();
    let y = &params.response;
    let z = params.intermediate.as_ref().unwrap();
    let over = z.design().responses().full();
    let subsets: Vec<_> = y.design().responses().nonempty_subsets().collect();

    c.bench_function("decompose_three_outcomes", |b| {
        b.iter(|| {
            for &d in &subsets {
                black_box(marginal_rr(y, z, d, over).unwrap());
            }
        })
    });
    c.bench_function("brute_force_oracle_three_outcomes", |b| {
        b.iter(|| {
            for &d in &subsets {
                black_box(brute_force_marginal(y, z, d).unwrap());
            }
        })
    });
}

criterion_group!(benches, transforms, fits, decomposition);
criterion_main!(benches);
