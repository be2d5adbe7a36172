//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contourlab::chebyshev::{fit_linear_ode, ChebGrid};
use contourlab::critical::{critical_data, CriticalOptions};
use contourlab::exec::{self, Execution};
use contourlab::fiber::{trace_real_oval, FiberLoop, LoopControls};
use contourlab::ham_time::{abelian_integral, is_resonant, psi_direct, Coefficients, LoopQuadrature, TOL_RESONANCE};
use contourlab::melnikov::{observed_slope, poincare_return, PlanarSystem, ReturnOptions, SectionSpec, DEFAULT_EPS_GRID};
use contourlab::monodromy::*;
use contourlab::normal_var::{pontryagin_melnikov, simulate_3d_return, SimulationOptions, System3D};
use contourlab::poly::{elliptic_hamiltonian, BivariatePoly, C64};
use contourlab::tri_group::{mid_identity_terms, rho, TriMatrix};

const SEED: u64 = 42;

type Outcome = Result<(bool, String), String>;

fn poly(terms: &[(u32, u32, f64)]) -> BivariatePoly {
    BivariatePoly::from_real(terms)
}

fn one() -> BivariatePoly {
    poly(&[(0, 0, 1.0)])
}

fn x() -> BivariatePoly {
    poly(&[(1, 0, 1.0)])
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_word(rng: &mut ChaCha8Rng) -> Vec<Letter> {
    let pick = |rng: &mut ChaCha8Rng| Letter::ALL[rng.gen_range(0..4)];
    match rng.gen_range(0..3) {
        0 => vec![pick(rng)],
        1 => {
            let (a, b) = (pick(rng), pick(rng));
            vec![a, b]
        }
        _ => {
            // conjugate of a letter
            let (v, w) = (pick(rng), pick(rng));
            vec![v, w, v.inverse()]
        }
    }
}

struct LoopSet {
    cycles: EllipticCycles,
    pairs: Vec<(Vec<Letter>, Vec<Letter>)>,
}

fn loop_set() -> Result<LoopSet, String> {
    let cycles = EllipticCycles::new(1.5, &CycleOptions::default()).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pairs = (0..24).map(|_| (random_word(&mut rng), random_word(&mut rng))).collect();
    Ok(LoopSet { cycles, pairs })
}

fn c1_critical_values() -> Outcome {
    let data = critical_data(&elliptic_hamiltonian(), &CriticalOptions::default(), Execution::Parallel).map_err(err)?;
    let mut vals: Vec<C64> = data.values.clone();
    vals.sort_by(|a, b| a.re.total_cmp(&b.re));
    let ok = vals.len() == 2 && (vals[0] - C64::new(-2.0, 0.0)).norm() <= 1e-10 && (vals[1] - C64::new(2.0, 0.0)).norm() <= 1e-10;
    let dev = vals.iter().map(|v| (v.norm() - 2.0).abs().max(v.im.abs())).fold(0.0, f64::max);
    Ok((ok, format!("values {:?}, max deviation {dev:.2e}", vals.iter().map(|v| v.re).collect::<Vec<_>>())))
}

fn c2_homomorphism(set: &LoopSet) -> Outcome {
    let cy = &set.cycles;
    let co = Coefficients::new(one(), one(), x());
    let worst = exec::try_map(Execution::Parallel, &set.pairs, |(w1, w2)| {
        let (l1, l2) = (cy.word(w1)?, cy.word(w2)?);
        let l12 = cy.compose(&l1, &l2)?;
        let r = rho(&cy.fib, &l12, &co)?;
        let prod = rho(&cy.fib, &l1, &co)?.multiply(&rho(&cy.fib, &l2, &co)?);
        Ok::<_, contourlab::Error>(r.distance(&prod))
    })
    .map_err(err)?
    .into_iter()
    .fold(0.0, f64::max);
    Ok((worst <= 1e-7 && set.pairs.len() >= 20, format!("{} pairs, max ‖ρ(uv) − ρ(u)ρ(v)‖ = {worst:.2e}", set.pairs.len())))
}

fn c3_psi_consistency(set: &LoopSet) -> Outcome {
    let cy = &set.cycles;
    let co = Coefficients::new(one(), one(), x());
    let mut words: Vec<Vec<Letter>> = Vec::new();
    for (a, b) in &set.pairs {
        words.push(a.clone());
        words.push([a.clone(), b.clone()].concat());
    }
    let rows = exec::try_map(Execution::Parallel, &words, |w| {
        let lp = cy.word(w)?;
        let r = rho(&cy.fib, &lp, &co)?;
        if is_resonant(r.exponent, TOL_RESONANCE) {
            return Ok(None);
        }
        let direct = psi_direct(&cy.fib, &lp, &co)?;
        let via = r.psi()?;
        Ok::<_, contourlab::Error>(Some((direct - via).norm() / via.norm().max(direct.norm())))
    })
    .map_err(err)?;
    let checked: Vec<f64> = rows.into_iter().flatten().collect();
    let worst = checked.iter().cloned().fold(0.0, f64::max);
    Ok((
        worst <= 1e-6 && checked.len() >= 20,
        format!("{} non-resonant loops, max relative |Ψ_direct − ψ(ρ)| = {worst:.2e}", checked.len()),
    ))
}

fn random_in_s(rng: &mut ChaCha8Rng) -> TriMatrix {
    let mut c = || C64::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    loop {
        let w = TriMatrix::new(c(), c(), c(), c());
        if w.in_s() && (w.exponent.exp() - 1.0).norm() > 0.05 {
            return w;
        }
    }
}

fn c4_mid_identity(set: &LoopSet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_exact = 0.0f64;
    let mut n_exact = 0;
    while n_exact < 100 {
        let (w1, w2) = (random_in_s(&mut rng), random_in_s(&mut rng));
        if !w1.multiply(&w2).in_s() || (w1.multiply(&w2).exponent.exp() - 1.0).norm() < 0.05 {
            continue;
        }
        let (res, scale) = mid_identity_terms(&w1, &w2).map_err(err)?;
        worst_exact = worst_exact.max(res.norm() / scale);
        n_exact += 1;
    }
    let cy = &set.cycles;
    let co = Coefficients::new(one(), one(), x());
    let rows = exec::try_map(Execution::Parallel, &set.pairs, |(a, b)| {
        let r1 = rho(&cy.fib, &cy.word(a)?, &co)?;
        let r2 = rho(&cy.fib, &cy.word(b)?, &co)?;
        let r12 = rho(&cy.fib, &cy.compose(&cy.word(a)?, &cy.word(b)?)?, &co)?;
        if [r1, r2, r12].iter().any(|r| !r.in_s()) {
            return Ok(None);
        }
        // Ψ of the composed loop from quadrature, the rest from ρ
        let (_, scale) = mid_identity_terms(&r1, &r2)?;
        let k = contourlab::tri_group::mid_coefficient(r1.exponent, r2.exponent);
        let res = r12.psi()? - r1.psi()? - r2.psi()? - k * r1.commutator(&r2).psi_tilde();
        Ok::<_, contourlab::Error>(Some(res.norm() / scale))
    })
    .map_err(err)?;
    let rho_rows: Vec<f64> = rows.into_iter().flatten().collect();
    let worst_rho = rho_rows.iter().cloned().fold(0.0, f64::max);
    Ok((
        worst_exact <= 1e-11 && worst_rho <= 1e-6 && !rho_rows.is_empty(),
        format!("exact algebra: 100 pairs, max {worst_exact:.2e}; ρ-valued: {} pairs, max {worst_rho:.2e}", rho_rows.len()),
    ))
}

fn c5_picard_lefschetz(set: &LoopSet) -> Outcome {
    let cy = &set.cycles;
    let co = Coefficients::new(one(), one(), x());
    let ctl = CycleOptions::default().transport;
    let saddle = C64::new(SADDLE_VALUE, 0.0);
    let comm = cy.commutator().map_err(err)?;
    let loops = [cy.gamma.clone(), cy.delta.clone(), comm.clone()];
    let moved = exec::try_map(Execution::Parallel, &loops, |lp| monodromy_loop(&cy.fib, lp, saddle, 0.5, 1, &ctl)).map_err(err)?;
    let r = |lp: &FiberLoop| rho(&cy.fib, lp, &co).map_err(err);
    let (rg, rd, rc) = (r(&cy.gamma)?, r(&cy.delta)?, r(&comm)?);
    let e1 = r(&moved[0])?.distance(&rg.multiply(&rd));
    let e2 = r(&moved[1])?.distance(&rd);
    let e3 = r(&moved[2])?.distance(&rc);
    Ok((
        e1 <= 1e-6 && e2 <= 1e-6 && e3 <= 1e-6,
        format!("Mon γ vs γδ {e1:.2e}, Mon δ vs δ {e2:.2e}, Mon [γ,δ] vs [γ,δ] {e3:.2e}"),
    ))
}

fn c6_monell_xi(set: &LoopSet) -> Outcome {
    let cy = &set.cycles;
    let opts = CycleOptions::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, co) in [("b=1", Coefficients::new(one(), one(), x())), ("b=x", Coefficients::new(one(), x(), x()))] {
        for radius in [0.5, 0.25] {
            let m = monell_residual(cy, &co, radius, &opts.transport).map_err(err)?;
            let xi = xi_invariance(&[1.5], &co, radius, &opts).map_err(err)?;
            let dx = xi[0].difference;
            ok &= m.residual <= 1e-5 && dx <= 1e-5;
            parts.push(format!("{name} r={radius}: formula {:.2e}, ξ {dx:.2e}", m.residual));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn c7_rank_growth() -> Outcome {
    let hs: Vec<f64> = (0..12).map(|k| -1.8 + 3.6 * k as f64 / 11.0).collect();
    let co = Coefficients::new(one(), x(), x());
    let rep = rank_growth(&hs, 8, &co, &CycleOptions::default()).map_err(err)?;
    let ok = RankReport::strictly_increasing(&rep.ranks) && rep.ranks.len() == 9;
    Ok((ok, format!("A=1, b=x, p=x: ranks {:?} at {:e}; other thresholds {:?}", rep.ranks, rep.threshold, rep.sensitivity)))
}

fn c8_melnikov() -> Outcome {
    let h = elliptic_hamiltonian();
    let y = poly(&[(0, 1, 1.0)]);
    let sec = SectionSpec::elliptic();
    let ro = ReturnOptions::default();
    let sys = PlanarSystem::new(h.clone(), BivariatePoly::zero(), y.clone()).map_err(err)?;
    let r = poincare_return(&sys, 0.0, 1e-4, &sec, 1, &ro).map_err(err)?;
    let fib = contourlab::Fibration::elliptic();
    let oval = trace_real_oval(&fib, 0.0, (-1.0, 2f64.sqrt()), 800, &LoopControls::default()).map_err(err)?;
    let i = abelian_integral(&fib, &oval, &y, &BivariatePoly::zero()).map_err(err)?.re;
    let rel = (r.delta_h / r.eps - i).abs() / i.abs();

    // ω = dy + x dH
    let (hx, hy) = h.partials();
    let sys2 = PlanarSystem::new(h.clone(), -&(&one() + &(&x() * &hy)), &x() * &hx).map_err(err)?;
    let samples = exec::try_map(Execution::Parallel, &DEFAULT_EPS_GRID, |&e| poincare_return(&sys2, 0.0, e, &sec, 1, &ro))
        .map_err(err)?;
    let slopes: Vec<f64> = samples.windows(2).map(|w| observed_slope(&w[0], &w[1])).collect();
    let slope_ok = slopes.iter().all(|s| (s / 2.0 - 1.0).abs() <= 0.1);
    Ok((
        rel <= 1e-3 && slope_ok,
        format!(
            "y dx, h=0, ε=1e-4: ΔH/ε = {:.10}, ∮ y dx = {i:.10}, rel {rel:.2e}; dy + x dH slopes {:?}",
            r.delta_h / r.eps,
            slopes.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
        ),
    ))
}

fn c9_picard_fuchs() -> Outcome {
    let grid = ChebGrid::new(-1.0, 1.0, 24).map_err(err)?;
    let opts = CycleOptions::default();
    let rows = exec::try_map(Execution::Parallel, &grid.nodes, |&h| {
        let cy = EllipticCycles::new(h, &opts)?;
        let period = |lp: &FiberLoop| -> contourlab::Result<C64> {
            let q = LoopQuadrature::new(&cy.fib, lp, Execution::Sequential)?;
            Ok(2.0 * q.time_profile(&BivariatePoly::zero()).period())
        };
        let gd = cy.compose(&cy.gamma, &cy.delta)?;
        Ok::<_, contourlab::Error>([period(&cy.gamma)?, period(&cy.delta)?, period(&gd)?])
    })
    .map_err(err)?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
    let ode = fit_linear_ode(&grid, &[col(0), col(1)], 2, 2).map_err(err)?;
    let res = ode.annihilation_residual(&grid, &col(2));
    Ok((res <= 1e-5, format!("fit residual {:.2e}, residual on ∮_{{γ·δ}} dx/y {res:.2e}", ode.residual)))
}

fn c10_three_d() -> Outcome {
    let h = elliptic_hamiltonian();
    let sec = SectionSpec::elliptic();
    let so = SimulationOptions::default();
    let fib = contourlab::Fibration::elliptic();
    let oval = trace_real_oval(&fib, 0.0, (-1.0, 2f64.sqrt()), 800, &LoopControls::default()).map_err(err)?;
    let eps = [1e-3, 5e-4, 2.5e-4];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, b) in [("b=1", one()), ("b=x", x())] {
        let sys = System3D::new(h.clone(), one(), b).with_rs(BivariatePoly::zero(), one());
        let j = pontryagin_melnikov(&sys, &oval).map_err(err)?;
        let sims = exec::try_map(Execution::Parallel, &eps, |&e| simulate_3d_return(&sys, 0.0, e, &sec, &so)).map_err(err)?;
        let errs: Vec<f64> = sims.iter().map(|s| (s.delta_h / s.eps - j.direct.re).abs()).collect();
        let c_fit = errs.iter().zip(&eps).map(|(e, s)| e / s).fold(0.0, f64::max);
        let degenerate = j.direct.norm() < 1e-12;
        if degenerate {
            // g ≡ −1 and J = 0; ΔH must vanish to integration accuracy
            let dh = sims.iter().map(|s| s.delta_h.abs()).fold(0.0, f64::max);
            ok &= c_fit.is_finite() && dh <= 1e-10;
            parts.push(format!("{name}: J = {:.1e} (g constant), max |ΔH| {dh:.1e}, C {c_fit:.2e}", j.direct.re));
        } else {
            let slopes: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            ok &= c_fit.is_finite() && slopes.iter().all(|s| *s >= 0.8) && j.relative_difference <= 1e-6;
            parts.push(format!(
                "{name}: J {:.8}, routes {:.1e}, |ΔH/ε − J| {:?}, C {c_fit:.3}, slopes {:?}, z-tracking C {:.2}",
                j.direct.re,
                j.relative_difference,
                errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
                slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>(),
                sims.iter().map(|s| s.tracking_constant).fold(0.0, f64::max)
            ));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn c11_convergence(set: &LoopSet) -> Outcome {
    let cy = &set.cycles;
    let lc = CycleOptions::default().transport.loop_controls;
    let mut worst = 0.0f64;
    for co in [Coefficients::new(one(), one(), x()), Coefficients::new(one(), x(), x())] {
        for lp in [&cy.gamma, &cy.delta] {
            let fine = lp.subdivided(&cy.fib, 2, &lc).map_err(err)?;
            let f = |l: &FiberLoop| LoopQuadrature::new(&cy.fib, l, Execution::Parallel).map(|q| q.functionals(&co));
            let (a, b) = (f(lp).map_err(err)?, f(&fine).map_err(err)?);
            for (u, v) in a.as_array().iter().zip(b.as_array().iter()) {
                worst = worst.max((u - v).norm());
            }
            worst = worst.max((a.psi().map_err(err)? - b.psi().map_err(err)?).norm());
        }
    }
    Ok((worst < 1e-7, format!("max change of T, I, θ±, φ, Ψ on γ, δ under halving: {worst:.2e}")))
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let set = match loop_set() {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL setup: {e}");
            return ExitCode::FAILURE;
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 critical values", Box::new(c1_critical_values)),
        ("2 homomorphism", Box::new(|| c2_homomorphism(&set))),
        ("3 Ψ consistency", Box::new(|| c3_psi_consistency(&set))),
        ("4 product identity", Box::new(|| c4_mid_identity(&set))),
        ("5 Picard-Lefschetz", Box::new(|| c5_picard_lefschetz(&set))),
        ("6 monodromy formula and ξ", Box::new(|| c6_monell_xi(&set))),
        ("7 rank growth", Box::new(c7_rank_growth)),
        ("8 Melnikov order 1", Box::new(c8_melnikov)),
        ("9 Picard-Fuchs", Box::new(c9_picard_fuchs)),
        ("10 3D cross-check", Box::new(c10_three_d)),
        ("11 convergence", Box::new(|| c11_convergence(&set))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t = Instant::now();
        let (ok, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!("{} [{name}] {detail} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
