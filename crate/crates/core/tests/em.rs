mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rca_core::em::{
    e_step, em_rca_fit, lower_bound, m_step, penalized_marginal_loglik, rca_step, EmRcaConfig,
};
use rca_core::glasso::{GlassoConfig, SparsePrecision};
use rca_core::rca::RankChoice;

struct Problem {
    data: DMatrix<f64>,
    w: DMatrix<f64>,
    noise_var: f64,
    precision: SparsePrecision,
}

fn problem(n: usize, p: usize, q: usize, seed: u64) -> Problem {
    let mut r = rng(seed);
    let precision = SparsePrecision::new(random_pd(p, 1.0, &mut r)).unwrap();
    let w = gaussian(p, q, &mut r) * 0.7;
    let data = gaussian(n, p, &mut r) * gaussian(p, p, &mut r) * 0.6;
    Problem {
        data,
        w,
        noise_var: 0.3,
        precision,
    }
}

#[test]
fn posterior_of_z_matches_joint_conditioning() {
    for seed in 0..10u64 {
        let pr = problem(4, 5, 2, seed);
        let p = 5;
        let cov_z = inverse(pr.precision.entries().as_matrix());
        let cov_y =
            &pr.w * pr.w.transpose() + &cov_z + DMatrix::<f64>::identity(p, p) * pr.noise_var;
        let mut joint = DMatrix::zeros(2 * p, 2 * p);
        joint.view_mut((0, 0), (p, p)).copy_from(&cov_z);
        joint.view_mut((0, p), (p, p)).copy_from(&cov_z);
        joint.view_mut((p, 0), (p, p)).copy_from(&cov_z);
        joint.view_mut((p, p), (p, p)).copy_from(&cov_y);

        let m = e_step(&pr.data, &pr.w, pr.noise_var, &pr.precision).unwrap();
        for row in 0..pr.data.nrows() {
            let y = DVector::from_iterator(p, pr.data.row(row).iter().copied());
            let (mean, cov) = condition(&joint, p, &y);
            assert!(
                max_abs_diff(m.cov_z.as_matrix(), &cov) < 1e-10,
                "seed {seed}"
            );
            let got = m.means.row(row).transpose();
            assert!((got - mean).amax() < 1e-10, "seed {seed} row {row}");
        }
    }
}

#[test]
fn bound_is_tight_after_an_e_step() {
    for seed in 0..10u64 {
        let pr = problem(30, 6, 2, 100 + seed);
        for lambda in [0.0, 0.05, 0.5] {
            let m = e_step(&pr.data, &pr.w, pr.noise_var, &pr.precision).unwrap();
            let bound =
                lower_bound(&pr.data, &pr.w, pr.noise_var, &pr.precision, &m, lambda).unwrap();
            let marginal =
                penalized_marginal_loglik(&pr.data, &pr.w, pr.noise_var, &pr.precision, lambda)
                    .unwrap();
            assert!(
                (bound - marginal).abs() < 1e-8 * marginal.abs(),
                "seed {seed}: {bound} vs {marginal}"
            );
        }
    }
}

#[test]
fn bound_stays_below_the_marginal_elsewhere() {
    let pr = problem(30, 6, 2, 7);
    let stale = e_step(&pr.data, &pr.w, pr.noise_var, &SparsePrecision::identity(6)).unwrap();
    let bound = lower_bound(&pr.data, &pr.w, pr.noise_var, &pr.precision, &stale, 0.1).unwrap();
    let marginal =
        penalized_marginal_loglik(&pr.data, &pr.w, pr.noise_var, &pr.precision, 0.1).unwrap();
    assert!(bound < marginal);
}

#[test]
fn e_then_m_never_lowers_the_marginal_with_w_frozen() {
    let cfg = GlassoConfig::default();
    for seed in 0..10u64 {
        let mut pr = problem(40, 7, 2, 200 + seed);
        let lambda = 0.05;
        let mut prev =
            penalized_marginal_loglik(&pr.data, &pr.w, pr.noise_var, &pr.precision, lambda)
                .unwrap();
        for _ in 0..15 {
            let m = e_step(&pr.data, &pr.w, pr.noise_var, &pr.precision).unwrap();
            pr.precision = m_step(&m, lambda, &cfg, Some(&pr.precision))
                .unwrap()
                .precision;
            let bound =
                lower_bound(&pr.data, &pr.w, pr.noise_var, &pr.precision, &m, lambda).unwrap();
            let next =
                penalized_marginal_loglik(&pr.data, &pr.w, pr.noise_var, &pr.precision, lambda)
                    .unwrap();
            let slack = 1e-9 * prev.abs();
            assert!(bound >= prev - slack, "seed {seed}: bound {bound} < {prev}");
            assert!(
                next >= bound - slack,
                "seed {seed}: marginal {next} < bound {bound}"
            );
            prev = next;
        }
    }
}

#[test]
fn rca_step_maximizes_over_loadings() {
    let mut r = rng(9);
    for seed in 0..5u64 {
        let pr = problem(200, 6, 2, 300 + seed);
        let sol = rca_step(&pr.data, &pr.precision, 0.05, RankChoice::AtMost(2)).unwrap();
        let best =
            penalized_marginal_loglik(&pr.data, &sol.loadings, 0.05, &pr.precision, 0.0).unwrap();
        let q = sol.loadings.ncols();
        for _ in 0..20 {
            let other = &sol.loadings + gaussian(6, q, &mut r) * 0.05;
            let v = penalized_marginal_loglik(&pr.data, &other, 0.05, &pr.precision, 0.0).unwrap();
            assert!(v <= best + 1e-9 * best.abs());
            let v = penalized_marginal_loglik(
                &pr.data,
                &gaussian(6, q, &mut r),
                0.05,
                &pr.precision,
                0.0,
            )
            .unwrap();
            assert!(v <= best + 1e-9 * best.abs());
        }
    }
}

#[test]
fn rca_step_finds_nothing_when_sigma_explains_the_data() {
    // data drawn from Σ itself leaves only sampling excess above one
    let mut r = rng(11);
    let p = 5;
    let precision = SparsePrecision::new(random_pd(p, 1.0, &mut r)).unwrap();
    let sigma = precision.covariance().unwrap().add_diagonal(0.2);
    let chol = rca_core::linalg::cholesky(&sigma).unwrap();
    let data = gaussian(20000, p, &mut r) * chol.l().transpose();
    let sol = rca_step(&data, &precision, 0.2, RankChoice::Auto).unwrap();
    assert!(sol.all_values.iter().all(|&d| (d - 1.0).abs() < 0.1));
    assert!(sol.loadings.norm() < 0.5 * sigma.trace().sqrt());
}

#[test]
fn full_fit_never_decreases_and_is_deterministic() {
    let pr = problem(60, 8, 2, 400);
    let cfg = EmRcaConfig {
        max_iter: 40,
        ..Default::default()
    };
    let a = em_rca_fit(&pr.data, 0.05, &cfg).unwrap();
    assert!(a.decreases.is_empty());
    let mut prev = a.initial_objective;
    for rec in &a.trace {
        assert!(rec.objective >= prev - 1e-6 * prev.abs());
        assert!(rec.glasso_converged);
        prev = rec.objective;
    }
    let b = em_rca_fit(&pr.data, 0.05, &cfg).unwrap();
    assert_eq!(a.objective().to_bits(), b.objective().to_bits());
    assert_eq!(a.state.loadings_w, b.state.loadings_w);
}

#[test]
fn rank_cap_is_respected() {
    let pr = problem(60, 8, 2, 500);
    let cfg = EmRcaConfig {
        max_iter: 10,
        rank_cap: Some(1),
        ..Default::default()
    };
    let fit = em_rca_fit(&pr.data, 0.05, &cfg).unwrap();
    assert!(fit.trace.iter().all(|r| r.rank <= 1));
    assert!(fit.state.loadings_w.ncols() <= 1);
}
