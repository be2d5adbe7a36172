//! Verification suites: each identity is reported with its residual and the
//! tolerance it is held to.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use contourlab::exec::{self, Execution};
use contourlab::fiber::{compose_loops, trace_real_oval, FiberLoop};
use contourlab::ham_time::{abelian_integral, is_resonant, psi_direct};
use contourlab::melnikov::{observed_slope, poincare_return, PlanarSystem, DEFAULT_EPS_GRID};
use contourlab::monodromy::{
    monell_residual, monodromy_loop, xi_invariance, EllipticCycles, Letter, SADDLE_VALUE,
};
use contourlab::normal_var::{pontryagin_melnikov, simulate_3d_return, SimulationOptions};
use contourlab::poly::{BivariatePoly, C64};
use contourlab::tri_group::{mid_identity_terms, rho, TriMatrix};

use crate::commands::system_3d;
use crate::spec::{ProblemSpec, Tolerances};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Group,
    Psi,
    Monodromy,
    Melnikov,
    Normalvar,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Group, Suite::Psi, Suite::Monodromy, Suite::Melnikov, Suite::Normalvar];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Group => "group",
            Suite::Psi => "psi",
            Suite::Monodromy => "monodromy",
            Suite::Melnikov => "melnikov",
            Suite::Normalvar => "normalvar",
        }
    }
}

/// `all` expands to every suite.
pub fn parse_suites(name: &str) -> Result<Vec<Suite>, CliError> {
    if name == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    Suite::from_str(name).map(|s| vec![s])
}

impl FromStr for Suite {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            CliError::Usage(format!("unknown suite \"{s}\"; expected one of group, psi, monodromy, melnikov, normalvar, all"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Check {
    fn new(suite: Suite, identity: &str, residual: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            suite,
            identity: identity.to_string(),
            residual,
            tolerance,
            samples,
            pass: residual.is_finite() && residual <= tolerance && samples > 0,
            error: None,
        }
    }

    fn failed(suite: Suite, identity: &str, error: String) -> Self {
        Self { suite, identity: identity.to_string(), residual: f64::NAN, tolerance: 0.0, samples: 0, pass: false, error: Some(error) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn cmd_verify(spec: &ProblemSpec, tol: &Tolerances, suites: &[Suite], seed: u64) -> Result<VerifyReport, CliError> {
    let mut checks = Vec::new();
    for &s in suites {
        log::info!("running suite {}", s.name());
        let res = match s {
            Suite::Group => Ok(group_suite(spec.verify.group_pairs, seed)),
            Suite::Psi => psi_suite(spec, tol, seed),
            Suite::Monodromy => monodromy_suite(spec, tol),
            Suite::Melnikov => melnikov_suite(spec, tol),
            Suite::Normalvar => normalvar_suite(spec, tol),
        };
        match res {
            Ok(c) => checks.extend(c),
            Err(CliError::Numerical(e)) => checks.push(Check::failed(s, "suite", e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    Ok(VerifyReport { seed, suites: suites.to_vec(), checks, pass })
}

fn one() -> BivariatePoly {
    BivariatePoly::from_real(&[(0, 0, 1.0)])
}

fn x() -> BivariatePoly {
    BivariatePoly::from_real(&[(1, 0, 1.0)])
}

type Dense = [[C64; 3]; 3];

fn dmul(a: &Dense, b: &Dense) -> Dense {
    let mut out = [[C64::new(0.0, 0.0); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn dmax(a: &Dense, b: &Dense) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max)
}

fn dnorm(a: &Dense) -> f64 {
    a.iter().flatten().map(|z| z.norm()).fold(1.0, f64::max)
}

fn dense_identity() -> Dense {
    TriMatrix::identity().to_dense()
}

fn random_tri(rng: &mut ChaCha8Rng) -> TriMatrix {
    let mut c = || C64::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    TriMatrix::new(c(), c(), c(), c())
}

/// A random element of 𝕊 kept away from the resonant set.
fn random_in_s(rng: &mut ChaCha8Rng) -> TriMatrix {
    loop {
        let w = random_tri(rng);
        if (w.exponent.exp() - 1.0).norm() > 0.05 {
            return w;
        }
    }
}

/// Group law, inverse and commutator against dense 3×3 products, and the
/// ψ identities, on `n` random pairs.
pub fn group_suite(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 6];
    let mut mid_samples = 0;
    for _ in 0..n {
        let (w1, w2, w3) = (random_in_s(&mut rng), random_in_s(&mut rng), random_tri(&mut rng));
        let (d1, d2, d3) = (w1.to_dense(), w2.to_dense(), w3.to_dense());
        let (i1, i2) = (w1.inverse().to_dense(), w2.inverse().to_dense());
        let s = dnorm(&d1) * dnorm(&d2);
        worst[0] = worst[0].max(dmax(&w1.multiply(&w2).to_dense(), &dmul(&d1, &d2)) / s);
        worst[1] = worst[1].max(dmax(&dmul(&d1, &i1), &dense_identity()) / (dnorm(&d1) * dnorm(&i1)));
        let k = dmul(&dmul(&d1, &d2), &dmul(&i1, &i2));
        worst[2] = worst[2].max(dmax(&w1.commutator(&w2).to_dense(), &k) / (s * dnorm(&i1) * dnorm(&i2)));
        let l = w1.multiply(&w2).multiply(&w3);
        let r = w1.multiply(&w2.multiply(&w3));
        worst[3] = worst[3].max(l.distance(&r) / (s * dnorm(&d3)));
        if let (Ok(a), Ok(b)) = (w1.psi(), w1.conjugate_by(&w2).psi()) {
            let scale = w1.conjugate_by(&w2).scale() * (1.0 + a.norm());
            worst[4] = worst[4].max((a - b).norm() / scale);
        }
        if w1.multiply(&w2).in_s() {
            if let Ok((res, scale)) = mid_identity_terms(&w1, &w2) {
                worst[5] = worst[5].max(res.norm() / scale.max(1.0));
                mid_samples += 1;
            }
        }
    }
    let g = Suite::Group;
    vec![
        Check::new(g, "product_vs_dense", worst[0], 1e-12, n),
        Check::new(g, "inverse_vs_dense", worst[1], 1e-12, n),
        Check::new(g, "commutator_vs_dense", worst[2], 1e-12, n),
        Check::new(g, "associativity", worst[3], 1e-12, n),
        Check::new(g, "psi_conjugation_invariance", worst[4], 1e-11, n),
        Check::new(g, "product_identity", worst[5], 1e-11, mid_samples),
    ]
}

fn random_word(rng: &mut ChaCha8Rng) -> Vec<Letter> {
    let mut pick = || Letter::ALL[rng.gen_range(0..4)];
    let (a, b, kind) = (pick(), pick(), rng.gen_range(0..3));
    match kind {
        0 => vec![a],
        1 => vec![a, b],
        _ => vec![a, b, a.inverse()],
    }
}

/// Loop pairs for the ψ suite: composable pairs of the spec's named loops, or
/// random words in the elliptic cycles.
fn psi_pairs(spec: &ProblemSpec, tol: &Tolerances, seed: u64) -> Result<Vec<(FiberLoop, FiberLoop, FiberLoop)>, CliError> {
    let tol_base = tol.loop_controls().tol_base;
    if !spec.loops.is_empty() {
        let loops: Vec<FiberLoop> = spec.build_loops(tol)?.into_values().collect();
        let mut out = Vec::new();
        for a in &loops {
            for b in &loops {
                if let Ok(ab) = compose_loops(a, b, tol_base) {
                    out.push((a.clone(), b.clone(), ab));
                }
            }
        }
        return Ok(out);
    }
    if !spec.is_elliptic() {
        return Err(CliError::Usage("suite psi needs named loops or H = y^2 - x^3 + 3x".into()));
    }
    let cy = EllipticCycles::new(spec.verify.h0, &tol.cycle_options())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..spec.verify.loop_pairs {
        let (a, b) = (cy.word(&random_word(&mut rng))?, cy.word(&random_word(&mut rng))?);
        let ab = cy.compose(&a, &b)?;
        out.push((a, b, ab));
    }
    Ok(out)
}

pub fn psi_suite(spec: &ProblemSpec, tol: &Tolerances, seed: u64) -> Result<Vec<Check>, CliError> {
    let fib = spec.fibration();
    let co = spec.coefficients();
    let pairs = psi_pairs(spec, tol, seed)?;
    let tol_res = tol.resonance();
    let rows = exec::try_map(Execution::default(), &pairs, |(a, b, ab)| {
        let (ra, rb, rab) = (rho(&fib, a, &co)?, rho(&fib, b, &co)?, rho(&fib, ab, &co)?);
        let hom = rab.distance(&ra.multiply(&rb));
        let psi = if is_resonant(rab.exponent, tol_res) {
            None
        } else {
            let direct = psi_direct(&fib, ab, &co)?;
            let via = rab.psi()?;
            Some((direct - via).norm() / via.norm().max(direct.norm()).max(f64::MIN_POSITIVE))
        };
        Ok::<_, contourlab::Error>((hom, psi))
    })?;
    let hom = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let psi: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    Ok(vec![
        Check::new(Suite::Psi, "homomorphism", hom, 1e-7, rows.len()),
        Check::new(Suite::Psi, "psi_direct_vs_rho", psi.iter().cloned().fold(0.0, f64::max), 1e-6, psi.len()),
    ])
}

pub fn monodromy_suite(spec: &ProblemSpec, tol: &Tolerances) -> Result<Vec<Check>, CliError> {
    if !spec.is_elliptic() {
        return Err(CliError::Usage("suite monodromy needs H = y^2 - x^3 + 3x".into()));
    }
    let opts = tol.cycle_options();
    let ctl = opts.transport;
    let co = spec.coefficients();
    let cy = EllipticCycles::new(spec.verify.h0, &opts)?;
    let fib = &cy.fib;
    let saddle = C64::new(SADDLE_VALUE, 0.0);
    let comm = cy.commutator()?;
    let r = |lp: &FiberLoop| rho(fib, lp, &co);
    let (rg, rd, rc) = (r(&cy.gamma)?, r(&cy.delta)?, r(&comm)?);
    let m = Suite::Monodromy;
    let mut checks = Vec::new();
    for &radius in &spec.verify.radii {
        let loops = [cy.gamma.clone(), cy.delta.clone(), comm.clone()];
        let moved = exec::try_map(Execution::default(), &loops, |lp| monodromy_loop(fib, lp, saddle, radius, 1, &ctl))?;
        let tag = |s: &str| format!("{s}@r={radius}");
        checks.push(Check::new(m, &tag("picard_lefschetz_gamma"), r(&moved[0])?.distance(&rg.multiply(&rd)), 1e-6, 1));
        checks.push(Check::new(m, &tag("picard_lefschetz_delta"), r(&moved[1])?.distance(&rd), 1e-6, 1));
        checks.push(Check::new(m, &tag("picard_lefschetz_commutator"), r(&moved[2])?.distance(&rc), 1e-6, 1));
        let mr = monell_residual(&cy, &co, radius, &ctl)?;
        checks.push(Check::new(m, &tag("monodromy_formula"), mr.residual, 1e-5, 1));
        let xi = xi_invariance(&[spec.verify.h0], &co, radius, &opts)?;
        checks.push(Check::new(m, &tag("xi_single_valued"), xi[0].difference, 1e-5, xi.len()));
    }
    Ok(checks)
}

/// First-order return against `∮ Q dx − P dy`, and the order-two scaling of a
/// relatively exact perturbation `dy + x dH`.
pub fn melnikov_suite(spec: &ProblemSpec, tol: &Tolerances) -> Result<Vec<Check>, CliError> {
    let v = &spec.verify;
    let ro = tol.returns();
    let fib = spec.fibration();
    let (p, q) = match (&spec.big_p, &spec.big_q) {
        (None, None) => (BivariatePoly::zero(), BivariatePoly::from_real(&[(0, 1, 1.0)])),
        (p, q) => (p.clone().unwrap_or_default(), q.clone().unwrap_or_default()),
    };
    let sys = PlanarSystem::new(spec.h.clone(), p.clone(), q.clone())?;
    let eps = 1e-4;
    let ret = poincare_return(&sys, v.melnikov_h, eps, &v.section, 1, &ro)?;
    let p0 = v.section.start_point(&spec.h, v.melnikov_h)?;
    let oval = trace_real_oval(&fib, v.melnikov_h, (p0[0], p0[1]), 800, &tol.loop_controls())?;
    let m1 = abelian_integral(&fib, &oval, &q, &p)?.re;
    let first = (ret.delta_h / eps - m1).abs() / m1.abs().max(1.0);

    let (hx, hy) = spec.h.partials();
    let exact = PlanarSystem::new(spec.h.clone(), -&(&one() + &(&x() * &hy)), &x() * &hx)?;
    let samples = exec::try_map(Execution::default(), &DEFAULT_EPS_GRID, |&e| {
        poincare_return(&exact, v.melnikov_h, e, &v.section, 1, &ro)
    })?;
    let slope_dev = samples.windows(2).map(|w| (observed_slope(&w[0], &w[1]) / 2.0 - 1.0).abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::new(Suite::Melnikov, "first_order_vs_abelian", first, 1e-3, 1),
        Check::new(Suite::Melnikov, "relatively_exact_order_two", slope_dev, 0.1, samples.len() - 1),
    ])
}

/// Agreement of the two routes to `J` and first-order convergence of the
/// simulated `ΔH/ε` towards it.
pub fn normalvar_suite(spec: &ProblemSpec, tol: &Tolerances) -> Result<Vec<Check>, CliError> {
    let sim = spec.simulate3d.clone().unwrap_or_default();
    let mut with_defaults = spec.clone();
    with_defaults.a.get_or_insert_with(one);
    with_defaults.b.get_or_insert_with(x);
    if with_defaults.big_r.is_none() && with_defaults.big_s.is_none() {
        with_defaults.big_s = Some(one());
    }
    let sys = system_3d(&with_defaults, &sim)?;
    let opts = SimulationOptions { returns: tol.returns(), oval_points: sim.oval_points, loop_controls: tol.loop_controls() };
    let p0 = sim.section.start_point(&sys.h, sim.h)?;
    let oval = trace_real_oval(&sys.fibration(), sim.h, (p0[0], p0[1]), sim.oval_points, &opts.loop_controls)?;
    let j = pontryagin_melnikov(&sys, &oval)?;
    let sims = exec::try_map(Execution::default(), &sim.eps, |&e| simulate_3d_return(&sys, sim.h, e, &sim.section, &opts))?;
    let errs: Vec<f64> = sims.iter().map(|s| (s.delta_h / s.eps - j.direct.re).abs()).collect();
    let n = Suite::Normalvar;
    let mut checks = vec![Check::new(n, "abelian_plus_psi_vs_direct", j.relative_difference, 1e-6, 1)];
    if j.direct.norm() < 1e-12 {
        let dh = sims.iter().map(|s| s.delta_h.abs()).fold(0.0, f64::max);
        checks.push(Check::new(n, "vanishing_return", dh, 1e-10, sims.len()));
    } else {
        // observed order in ε of |ΔH/ε − J|; the check passes when it is at least 0.8
        let worst = errs.windows(2).map(|w| (0.8 - (w[0] / w[1]).log2()).max(0.0)).fold(0.0, f64::max);
        let rel = errs.iter().cloned().fold(0.0, f64::max) / j.direct.norm();
        checks.push(Check::new(n, "convergence_order_deficit", worst, 0.0, errs.len().saturating_sub(1)));
        checks.push(Check::new(n, "simulated_vs_J_relative", rel, 0.1, errs.len()));
    }
    Ok(checks)
}
