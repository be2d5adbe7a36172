use contourlab::error::Error;
use contourlab::fiber::{trace_real_oval, LoopControls};
use contourlab::ham_time::abelian_integral;
use contourlab::melnikov::*;
use contourlab::poly::{elliptic_hamiltonian, BivariatePoly, Fibration};

fn poly(terms: &[(u32, u32, f64)]) -> BivariatePoly {
    BivariatePoly::from_real(terms)
}

/// `∮_γ Q dx − P dy` on the real oval at level `h`, oriented by the flow.
fn oracle(h: f64, q: &BivariatePoly, p: &BivariatePoly) -> f64 {
    let fib = Fibration::elliptic();
    let g = trace_real_oval(&fib, h, (-1.0, (h + 2.0).sqrt()), 800, &LoopControls::default()).unwrap();
    let v = abelian_integral(&fib, &g, q, p).unwrap();
    assert!(v.im.abs() < 1e-10);
    v.re
}

/// `ω = dy + x dH`, exact modulo `dH`: `Q = x·H_x`, `P = −(1 + x·H_y)`.
fn relatively_exact() -> PlanarSystem {
    let h = elliptic_hamiltonian();
    let (hx, hy) = h.partials();
    let x = poly(&[(1, 0, 1.0)]);
    let q = &x * &hx;
    let p = -&(&poly(&[(0, 0, 1.0)]) + &(&x * &hy));
    PlanarSystem::new(h, p, q).unwrap()
}

fn y_dx() -> PlanarSystem {
    PlanarSystem::new(elliptic_hamiltonian(), BivariatePoly::zero(), poly(&[(0, 1, 1.0)])).unwrap()
}

#[test]
fn first_order_matches_abelian_integral() {
    let r = poincare_return(&y_dx(), 0.0, 1e-4, &SectionSpec::elliptic(), 1, &ReturnOptions::default()).unwrap();
    let i = oracle(0.0, &poly(&[(0, 1, 1.0)]), &BivariatePoly::zero());
    assert!((r.delta_h / r.eps - i).abs() <= 1e-4 * i.abs());
}

#[test]
fn expansion_detects_order_one() {
    let grid = [-1.5, -0.5, 0.0, 0.5, 1.5];
    let e = melnikov_expansion(&y_dx(), &grid, &DEFAULT_EPS_GRID, &ExpansionOptions::default()).unwrap();
    assert_eq!(e.k, 1);
    for (h, m) in grid.iter().zip(&e.mk) {
        let i = oracle(*h, &poly(&[(0, 1, 1.0)]), &BivariatePoly::zero());
        assert!((m - i).abs() <= 1e-3 * i.abs(), "h={h}: {m} vs {i}");
    }
}

#[test]
fn exact_form_vanishes() {
    // ω = dy
    let sys = PlanarSystem::new(elliptic_hamiltonian(), poly(&[(0, 0, -1.0)]), BivariatePoly::zero()).unwrap();
    let e = melnikov_expansion(&sys, &[0.0, 1.0], &DEFAULT_EPS_GRID, &ExpansionOptions::default());
    assert!(matches!(e, Err(Error::AllOrdersVanish)));
}

fn x_dy(h: f64) -> f64 {
    oracle(h, &BivariatePoly::zero(), &poly(&[(1, 0, -1.0)]))
}

#[test]
fn relatively_exact_form_is_second_order() {
    // for ω = dF + g dH the second coefficient is ∮ g dF = ∮ x dy
    let grid = [-1.0, 0.0, 1.0];
    let e = melnikov_expansion(&relatively_exact(), &grid, &DEFAULT_EPS_GRID, &ExpansionOptions::default()).unwrap();
    assert_eq!(e.k, 2);
    for c in &e.coefficients {
        assert!(c[0].abs() < e.noise_floor[0]);
    }
    for (h, m) in grid.iter().zip(&e.mk) {
        let i = x_dy(*h);
        assert!((m - i).abs() <= 1e-3 * i.abs(), "h={h}: {m} vs {i}");
    }
}

#[test]
fn displacement_scales_quadratically() {
    let s = melnikov_expansion(&relatively_exact(), &[0.0], &DEFAULT_EPS_GRID, &ExpansionOptions::default())
        .unwrap()
        .samples;
    for w in s.windows(2) {
        let slope = observed_slope(&w[0], &w[1]);
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
    }
    let last = &s[s.len() - 2..];
    let ratio = last[0].delta_h / last[1].delta_h;
    assert!((ratio / 4.0 - 1.0).abs() < 0.05);
}

#[test]
fn linear_scaling_at_first_order() {
    let s = melnikov_expansion(&y_dx(), &[0.5], &DEFAULT_EPS_GRID, &ExpansionOptions::default()).unwrap().samples;
    let last = &s[s.len() - 2..];
    assert!((last[0].delta_h / last[1].delta_h / 2.0 - 1.0).abs() < 0.05);
}

#[test]
fn composition_with_itself_is_additive() {
    // two returns realize γ·γ, whose coefficient is twice that of γ
    for sys in [y_dx(), relatively_exact()] {
        let grid = [0.0, 1.0];
        let one = melnikov_expansion(&sys, &grid, &DEFAULT_EPS_GRID, &ExpansionOptions::default()).unwrap();
        let opts = ExpansionOptions { crossings: 2, ..Default::default() };
        let two = melnikov_expansion(&sys, &grid, &DEFAULT_EPS_GRID, &opts).unwrap();
        assert_eq!(one.k, two.k);
        for (a, b) in one.mk.iter().zip(&two.mk) {
            assert!((b - 2.0 * a).abs() <= 1e-3 * a.abs(), "{a} {b}");
        }
    }
}

#[test]
fn short_eps_grid_is_rejected() {
    assert!(melnikov_expansion(&y_dx(), &[0.0], &[1e-3, 5e-4], &ExpansionOptions::default()).is_err());
}
