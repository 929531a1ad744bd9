use epm_core::{
    apply_g, assemble_backward, assemble_forward, assemble_forward_log, eval_lagrangian, Error,
    ModelParams, PotentialSpec, ScalarField, SolveOptions, SolvedModel, TorusGrid,
};
use proptest::prelude::*;

/// `G[phi]_i` by brute force over a wide image box, with every exponent
/// shifted by the row maximum before exponentiating.
fn apply_g_brute(params: &ModelParams, grid: &TorusGrid, phi: &[f64]) -> Vec<f64> {
    let (eps, h) = (params.epsilon(), params.h());
    let n = grid.size();
    (0..n)
        .map(|i| {
            let x = grid.point(i);
            let mut exps = Vec::new();
            for j in 0..n {
                let y = grid.point(j);
                for k in -40..=40 {
                    let v = [(y[0] + k as f64 - x[0]) / h];
                    let l = eval_lagrangian(params, &x, &v).unwrap();
                    exps.push(-l / eps - phi[j] / (eps * h));
                }
            }
            let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = exps.iter().map(|e| (e - m).exp()).sum();
            let log_int = m + s.ln() - (n as f64 * h).ln();
            -eps * h * log_int
        })
        .collect()
}

#[test]
fn log_domain_g_where_linear_overflows() {
    let params = ModelParams::new(0.01, 0.5, vec![4.0], PotentialSpec::cosine(1, 0, 1.0)).unwrap();
    let grid = TorusGrid::new(1, 4).unwrap();
    assert!(matches!(
        assemble_forward(&params, &grid, 12.0),
        Err(Error::LinearOverflow { .. })
    ));
    let a = assemble_forward_log(&params, &grid, 12.0).unwrap();
    let phi = vec![0.0, 0.013, -0.02, 0.007];
    let got = apply_g(&params, &a, &ScalarField::new(grid, phi.clone()).unwrap()).unwrap();
    let want = apply_g_brute(&params, &grid, &phi);
    for (g, w) in got.values().iter().zip(&want) {
        assert!(g.is_finite());
        assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
    }
}

#[test]
fn free_two_dimensional_value() {
    let params = ModelParams::free(1.0, 1.0, vec![0.0, 0.0]).unwrap();
    let grid = TorusGrid::new(2, 16).unwrap();
    let s = SolvedModel::solve(&params, &grid, &SolveOptions::default()).unwrap();
    let want = -(2.0 * std::f64::consts::PI).ln();
    assert!((s.lambda() - want).abs() <= 1e-8, "{}", s.lambda());
}

#[test]
fn gaussian_row_sum_law() {
    for (eps, h, p) in [(0.7, 0.4, 0.5), (0.3, 0.9, -1.2), (1.0, 0.2, 0.0)] {
        let params = ModelParams::free(eps, h, vec![p]).unwrap();
        let grid = TorusGrid::new(1, 64).unwrap();
        let a = assemble_forward(&params, &grid, 10.0).unwrap();
        let want = (2.0 * std::f64::consts::PI * eps).sqrt() * (p * p / (2.0 * eps)).exp();
        for s in a.row_sums() {
            assert!((s - want).abs() <= 1e-9 * want, "{s} vs {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transposes_share_value(
        eps in 0.2f64..1.0,
        h in 0.2f64..1.0,
        p in -1.0f64..1.0,
        amp in 0.0f64..1.5,
    ) {
        let params = ModelParams::new(eps, h, vec![p], PotentialSpec::cosine(1, 0, amp)).unwrap();
        let grid = TorusGrid::new(1, 48).unwrap();
        let a = assemble_forward(&params, &grid, 12.0).unwrap();
        let b = assemble_backward(&params, &grid, 12.0).unwrap();
        for i in 0..48 {
            for j in 0..48 {
                let (x, y) = (b.entry(i, j), a.entry(j, i));
                prop_assert!((x - y).abs() <= 1e-13 * x.abs().max(y.abs()));
            }
        }
        let s = SolvedModel::solve(&params, &grid, &SolveOptions::default()).unwrap();
        prop_assert!((s.forward.lambda - s.backward.lambda).abs() <= 1e-10);
    }
}
