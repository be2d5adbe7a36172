use contourlab::chebyshev::{fit_linear_ode, ChebGrid};
use contourlab::exec::{self, Execution};
use contourlab::ham_time::LoopQuadrature;
use contourlab::monodromy::{CycleOptions, EllipticCycles};
use contourlab::poly::{BivariatePoly, C64};

/// `∮ dx/y = 2T` on γ, δ and γ·δ at every grid node.
fn periods(grid: &ChebGrid) -> [Vec<C64>; 3] {
    let opts = CycleOptions::default();
    let rows = exec::map(Execution::Parallel, &grid.nodes, |&h| {
        let cy = EllipticCycles::new(h, &opts).unwrap();
        let t = |lp| {
            let q = LoopQuadrature::new(&cy.fib, lp, Execution::Sequential).unwrap();
            2.0 * q.time_profile(&BivariatePoly::zero()).period()
        };
        let gd = cy.compose(&cy.gamma, &cy.delta).unwrap();
        [t(&cy.gamma), t(&cy.delta), t(&gd)]
    });
    [0, 1, 2].map(|i| rows.iter().map(|r| r[i]).collect())
}

#[test]
fn periods_satisfy_second_order_equation() {
    let grid = ChebGrid::new(-1.0, 1.0, 24).unwrap();
    let [g, d, gd] = periods(&grid);
    let ode = fit_linear_ode(&grid, &[g.clone(), d.clone()], 2, 2).unwrap();
    assert!(ode.residual < 1e-6, "{:e}", ode.residual);
    // the loop γ·δ was integrated on its own
    let r = ode.annihilation_residual(&grid, &gd);
    assert!(r <= 1e-5, "{r:e}");

    // closed form: (4 − h²)T″ − 2hT′ − (5/36)T = 0, up to scale
    for h in [-0.8, 0.0, 0.6] {
        let a = ode.coefficients_at(h);
        let k = a[2] / (4.0 - h * h);
        assert!((a[1] / k + 2.0 * h).norm() < 1e-6);
        assert!((a[0] / k + 5.0 / 36.0).norm() < 1e-6);
    }

    // an unrelated function is not annihilated
    let other: Vec<C64> = grid.nodes.iter().map(|&h| C64::new(h.exp(), 0.0)).collect();
    assert!(ode.annihilation_residual(&grid, &other) > 1e-3);
}

#[test]
fn lower_coefficient_degree_is_insufficient() {
    let grid = ChebGrid::new(-1.0, 1.0, 24).unwrap();
    let [g, d, _] = periods(&grid);
    let r: Vec<f64> = (0..=2).map(|m| fit_linear_ode(&grid, &[g.clone(), d.clone()], 2, m).unwrap().residual).collect();
    assert!(r[0] > 1e-4 && r[1] > 1e-4);
    assert!(r[2] < 1e-8);
}
