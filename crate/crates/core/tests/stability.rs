use rca_core::datagen::{gen_confounded, SimSpec};
use rca_core::em::EmRcaConfig;
use rca_core::eval::{edges_from_precision, EdgeMode};
use rca_core::glasso::{glasso_fit, lambda_max, GlassoConfig};
use rca_core::kernels::center_columns;
use rca_core::linalg::SymMatrix;
use rca_core::stability::{
    stability_select, subsample_rows, threshold_edges, Fitter, LambdaGrid, StabilityConfig,
};

fn data(seed: u64) -> nalgebra::DMatrix<f64> {
    let inst = gen_confounded(&SimSpec {
        n: 60,
        p: 12,
        q: 1,
        sparsity: 0.1,
        seed,
        ..Default::default()
    })
    .unwrap();
    center_columns(&inst.data).0
}

fn glasso() -> Fitter {
    Fitter::Glasso(GlassoConfig::default())
}

#[test]
fn one_full_subsample_matches_a_single_fit() {
    let y = data(1);
    let grid = LambdaGrid::new(6, -3.0, 0.0).unwrap();
    let cfg = StabilityConfig {
        repeats: 1,
        fraction: 1.0,
        ..Default::default()
    };
    let path = stability_select(&y, &glasso(), &grid, &cfg).unwrap();
    let s = SymMatrix::gram(&y, 1.0 / y.nrows() as f64);
    for (k, &lambda) in grid.lambdas().iter().enumerate() {
        let fit = glasso_fit(&s, lambda, &GlassoConfig::default()).unwrap();
        let single: Vec<_> = edges_from_precision(&fit.precision, EdgeMode::Support)
            .into_keys()
            .collect();
        let stable: Vec<_> = threshold_edges(&path, k, 0.5)
            .unwrap()
            .into_iter()
            .collect();
        assert_eq!(stable, single, "lambda {lambda}");
        assert!(path.frequencies[k].iter().all(|&f| f == 0.0 || f == 1.0));
    }
}

#[test]
fn lambda_above_every_correlation_selects_nothing() {
    let y = data(2);
    let s = SymMatrix::gram(&y, 1.0 / y.nrows() as f64);
    let top = (lambda_max(&s) * 4.0).log(5.0);
    let grid = LambdaGrid::new(2, top, top + 1.0).unwrap();
    let path = stability_select(
        &y,
        &glasso(),
        &grid,
        &StabilityConfig {
            repeats: 10,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(path.frequencies.iter().flatten().all(|&f| f == 0.0));
}

#[test]
fn parallel_and_sequential_agree_bit_for_bit() {
    let y = data(3);
    let grid = LambdaGrid::new(8, -4.0, 1.0).unwrap();
    let par = StabilityConfig {
        repeats: 12,
        ..Default::default()
    };
    let seq = StabilityConfig {
        parallel: false,
        ..par
    };
    let a = stability_select(&y, &glasso(), &grid, &par).unwrap();
    let b = stability_select(&y, &glasso(), &grid, &seq).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());

    let em = Fitter::EmRca(EmRcaConfig {
        max_iter: 15,
        ..Default::default()
    });
    let grid = LambdaGrid::new(3, -3.0, 0.0).unwrap();
    let small = StabilityConfig {
        repeats: 3,
        ..Default::default()
    };
    let a = stability_select(&y, &em, &grid, &small).unwrap();
    let b = stability_select(
        &y,
        &em,
        &grid,
        &StabilityConfig {
            parallel: false,
            ..small
        },
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn frequencies_are_counts_over_successes() {
    let y = data(4);
    let grid = LambdaGrid::new(5, -3.0, 0.0).unwrap();
    let path = stability_select(
        &y,
        &glasso(),
        &grid,
        &StabilityConfig {
            repeats: 7,
            ..Default::default()
        },
    )
    .unwrap();
    for (row, &n) in path.frequencies.iter().zip(&path.successes) {
        assert_eq!(n, 7);
        for &f in row {
            let k = f * n as f64;
            assert!((k - k.round()).abs() < 1e-12 && (0.0..=1.0).contains(&f));
        }
    }
    let again = stability_select(
        &y,
        &glasso(),
        &grid,
        &StabilityConfig {
            repeats: 7,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(path, again);
    let other = stability_select(
        &y,
        &glasso(),
        &grid,
        &StabilityConfig {
            repeats: 7,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(path.frequencies, other.frequencies);
}

#[test]
fn subsamples_differ_across_repeats_and_are_reproducible() {
    let a = subsample_rows(100, 0.9, 1, 0);
    assert_eq!(a.len(), 90);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a, subsample_rows(100, 0.9, 1, 0));
    assert_ne!(a, subsample_rows(100, 0.9, 1, 1));
    assert_ne!(a, subsample_rows(100, 0.9, 2, 0));
}

#[test]
fn bad_configurations_rejected() {
    let y = data(5);
    let grid = LambdaGrid::reference();
    for cfg in [
        StabilityConfig {
            fraction: 1.5,
            ..Default::default()
        },
        StabilityConfig {
            fraction: 0.0,
            ..Default::default()
        },
        StabilityConfig {
            repeats: 0,
            ..Default::default()
        },
    ] {
        assert!(stability_select(&y, &glasso(), &grid, &cfg).is_err());
    }
    assert!(stability_select(
        &y.columns(0, 1).into_owned(),
        &glasso(),
        &grid,
        &StabilityConfig::default()
    )
    .is_err());
}
