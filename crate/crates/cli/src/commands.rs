//! The `critical`, `sweep`, `monodromy`, `melnikov` and `simulate3d` commands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use contourlab::critical::{critical_data, CriticalData};
use contourlab::exec::{self, Execution};
use contourlab::fiber::{trace_real_oval, transport_loop, BasePath, FiberLoop};
use contourlab::ham_time::{is_resonant, LoopQuadrature};
use contourlab::melnikov::{melnikov_expansion, ExpansionOptions, PlanarSystem};
use contourlab::monodromy::{
    monell_residual, monodromy_transport, rank_growth, xi_invariance, EllipticCycles, MonellReport, MonodromyReport,
    RankReport, XiSample,
};
use contourlab::normal_var::{pontryagin_melnikov, simulate_3d_return, PontryaginMelnikov, SimulationOptions, System3D};
use contourlab::poly::C64;

use crate::output::{num, write_csv, write_json};
use crate::spec::{ProblemSpec, SimulateSpec, Tolerances};
use crate::CliError;

pub fn cmd_critical(spec: &ProblemSpec, tol: &Tolerances) -> Result<CriticalData, CliError> {
    let grid = spec.critical.unwrap_or_default().seed_grid();
    Ok(critical_data(&spec.h, &tol.critical(grid), Execution::default())?)
}

pub fn run_critical(spec: &ProblemSpec, tol: &Tolerances, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = cmd_critical(spec, tol)?;
    Ok(vec![write_json(out, "critical.json", &data)?])
}

/// One grid point of a sweep; `error` is set when the row could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h: f64,
    pub values: Option<SweepValues>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepValues {
    pub functionals: contourlab::ham_time::LoopFunctionals,
    pub resonance_distance: f64,
    pub resonant: bool,
}

pub const SWEEP_HEADER: [&str; 17] = [
    "h",
    "T_re",
    "T_im",
    "I_re",
    "I_im",
    "theta_plus_re",
    "theta_plus_im",
    "theta_minus_re",
    "theta_minus_im",
    "phi_re",
    "phi_im",
    "psi_re",
    "psi_im",
    "resonance_distance",
    "resonant",
    "base_h",
    "error",
];

/// Carries `lp` along the real segment from its level to each grid value and
/// evaluates the loop functionals there.
pub fn cmd_sweep(spec: &ProblemSpec, tol: &Tolerances, lp: &FiberLoop, grid: &[f64]) -> Vec<SweepRow> {
    let fib = spec.fibration();
    let coeffs = spec.coefficients();
    let ctl = tol.transport();
    let tol_res = tol.resonance();
    exec::map(Execution::default(), grid, |&h| {
        let target = C64::new(h, 0.0);
        let row = || -> contourlab::Result<SweepValues> {
            let moved = if (target - lp.h).norm() == 0.0 {
                lp.clone()
            } else {
                let inner = contourlab::fiber::TransportControls { execution: Execution::Sequential, ..ctl };
                transport_loop(&fib, lp, &BasePath::segment(lp.h, target), &inner)?
            };
            let q = LoopQuadrature::new(&fib, &moved, Execution::Sequential)?;
            let functionals = q.functionals(&coeffs);
            let e = functionals.exponent;
            Ok(SweepValues {
                functionals,
                resonance_distance: (e.exp() - 1.0).norm(),
                resonant: is_resonant(e, tol_res),
            })
        };
        match row() {
            Ok(v) => SweepRow { h, values: Some(v), error: None },
            Err(e) => SweepRow { h, values: None, error: Some(e.to_string()) },
        }
    })
}

fn sweep_record(r: &SweepRow, base_h: C64) -> Vec<String> {
    let mut rec = vec![num(r.h)];
    match &r.values {
        Some(v) => {
            let f = &v.functionals;
            // Ψ is blank on resonant rows
            for z in [f.period, f.exponent, f.theta_plus, f.theta_minus, f.phi] {
                rec.push(num(z.re));
                rec.push(num(z.im));
            }
            match f.psi.filter(|_| !v.resonant) {
                Some(z) => {
                    rec.push(num(z.re));
                    rec.push(num(z.im));
                }
                None => rec.extend([String::new(), String::new()]),
            }
            rec.push(num(v.resonance_distance));
            rec.push(if v.resonant { "1" } else { "0" }.to_string());
        }
        None => rec.extend(std::iter::repeat_n(String::new(), 14)),
    }
    rec.push(num(base_h.re));
    rec.push(r.error.clone().unwrap_or_default());
    rec
}

pub fn run_sweep(
    spec: &ProblemSpec,
    tol: &Tolerances,
    loop_override: Option<&str>,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let sw = spec.sweep.as_ref().ok_or_else(|| CliError::Usage("spec has no \"sweep\" section".into()))?;
    let name = loop_override.unwrap_or(&sw.loop_name);
    let grid = sw.h.values()?;
    let loops = spec.build_loops(tol)?;
    let lp = loops.get(name).ok_or_else(|| CliError::Usage(format!("unknown loop \"{name}\"")))?;
    let rows = cmd_sweep(spec, tol, lp, &grid);
    let records: Vec<Vec<String>> = rows.iter().map(|r| sweep_record(r, lp.h)).collect();
    let path = write_csv(out, "sweep.csv", &SWEEP_HEADER, &records)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} sweep rows failed", rows.len());
    }
    if failed == rows.len() {
        return Err(CliError::Failed(format!("all {failed} sweep rows failed; see {}", path.display())));
    }
    Ok(vec![path])
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticMonodromy {
    pub h0: f64,
    pub monell: Vec<MonellReport>,
    pub xi: Vec<XiSample>,
    pub ranks: Option<RankReport>,
}

pub fn cmd_monodromy(
    spec: &ProblemSpec,
    tol: &Tolerances,
) -> Result<(Option<MonodromyReport>, Option<EllipticMonodromy>), CliError> {
    let ms = spec.monodromy.as_ref().ok_or_else(|| CliError::Usage("spec has no \"monodromy\" section".into()))?;
    let coeffs = spec.coefficients();
    let ctl = tol.transport();
    let report = match &ms.loop_name {
        Some(name) => {
            let loops = spec.build_loops(tol)?;
            let get = |n: &str| loops.get(n).ok_or_else(|| CliError::Usage(format!("unknown loop \"{n}\"")));
            let lp = get(name)?;
            let delta = ms.delta.as_deref().map(get).transpose()?;
            Some(monodromy_transport(&spec.fibration(), lp, ms.center, ms.radius, &coeffs, delta, &ctl)?)
        }
        None => None,
    };
    let elliptic = match &ms.elliptic {
        Some(es) => {
            if !spec.is_elliptic() {
                return Err(CliError::Usage("\"monodromy.elliptic\" needs H = y^2 - x^3 + 3x".into()));
            }
            let opts = tol.cycle_options();
            let cycles = EllipticCycles::new(es.h0, &opts)?;
            let monell = es
                .radii
                .iter()
                .map(|&r| monell_residual(&cycles, &coeffs, r, &ctl))
                .collect::<contourlab::Result<Vec<_>>>()?;
            let xi_h = match &es.xi_h {
                Some(g) => g.values()?,
                None => vec![es.h0],
            };
            let mut xi = Vec::new();
            for &r in &es.radii {
                xi.extend(xi_invariance(&xi_h, &coeffs, r, &opts)?);
            }
            let ranks = match &es.rank_h {
                Some(g) => Some(rank_growth(&g.values()?, es.rank_iterations, &coeffs, &opts)?),
                None => None,
            };
            Some(EllipticMonodromy { h0: es.h0, monell, xi, ranks })
        }
        None => None,
    };
    if report.is_none() && elliptic.is_none() {
        return Err(CliError::Usage("\"monodromy\" needs \"loop\" or \"elliptic\"".into()));
    }
    Ok((report, elliptic))
}

pub fn run_monodromy(spec: &ProblemSpec, tol: &Tolerances, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (report, elliptic) = cmd_monodromy(spec, tol)?;
    let mut files = Vec::new();
    if let Some(r) = &report {
        files.push(write_json(out, "monodromy.json", r)?);
    }
    if let Some(e) = &elliptic {
        files.push(write_json(out, "monodromy_elliptic.json", e)?);
        if let Some(rk) = &e.ranks {
            let rows: Vec<Vec<String>> = rk
                .ranks
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let reduced = rk.reduced_ranks.get(i).map(|v| v.to_string()).unwrap_or_default();
                    vec![i.to_string(), r.to_string(), reduced]
                })
                .collect();
            files.push(write_csv(out, "ranks.csv", &["iteration", "rank", "reduced_rank"], &rows)?);
        }
    }
    Ok(files)
}

pub fn planar_system(spec: &ProblemSpec) -> Result<PlanarSystem, CliError> {
    let (p, q) = match (&spec.big_p, &spec.big_q) {
        (None, None) => return Err(CliError::Usage("the perturbation needs \"P\" or \"Q\"".into())),
        (p, q) => (p.clone().unwrap_or_default(), q.clone().unwrap_or_default()),
    };
    Ok(PlanarSystem::new(spec.h.clone(), p, q)?)
}

pub fn run_melnikov(spec: &ProblemSpec, tol: &Tolerances, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ms = spec.melnikov.as_ref().ok_or_else(|| CliError::Usage("spec has no \"melnikov\" section".into()))?;
    let sys = planar_system(spec)?;
    let opts = ExpansionOptions {
        section: ms.section,
        returns: tol.returns(),
        max_order: ms.max_order,
        crossings: ms.crossings,
        execution: Execution::default(),
    };
    let exp = melnikov_expansion(&sys, &ms.h.values()?, &ms.eps, &opts)?;
    let rows: Vec<Vec<String>> = exp
        .samples
        .iter()
        .map(|s| vec![num(s.h), num(s.eps), num(s.delta_h), s.crossings.to_string(), num(s.time)])
        .collect();
    let csv = write_csv(out, "melnikov_sweep.csv", &["h", "eps", "delta_h", "crossings", "time"], &rows)?;
    let json = write_json(out, "melnikov_expansion.json", &exp)?;
    Ok(vec![csv, json])
}

pub fn system_3d(spec: &ProblemSpec, sim: &SimulateSpec) -> Result<System3D, CliError> {
    let a = spec.a.clone().ok_or_else(|| CliError::Usage("simulate3d needs \"A\"".into()))?;
    let mut sys = System3D::new(spec.h.clone(), a, spec.b.clone().unwrap_or_default())
        .with_rs(spec.big_r.clone().unwrap_or_default(), spec.big_s.clone().unwrap_or_default())
        .with_pq(spec.big_p.clone().unwrap_or_default(), spec.big_q.clone().unwrap_or_default());
    sys.hyp_margin = sim.hyp_margin;
    sys.validate()?;
    Ok(sys)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub h: f64,
    #[serde(rename = "J")]
    pub j: PontryaginMelnikov,
    pub runs: Vec<SimulationRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationRun {
    pub eps: f64,
    pub delta_h: f64,
    pub delta_h_over_eps: f64,
    /// `|ΔH/ε − J|`.
    pub error: f64,
    pub return_time: f64,
    pub tracking: f64,
    pub tracking_constant: f64,
    pub csv: String,
}

pub fn run_simulate3d(spec: &ProblemSpec, tol: &Tolerances, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sim = spec.simulate3d.clone().unwrap_or_default();
    if sim.eps.is_empty() {
        return Err(CliError::Usage("simulate3d needs at least one ε".into()));
    }
    let sys = system_3d(spec, &sim)?;
    let opts = SimulationOptions {
        returns: tol.returns(),
        oval_points: sim.oval_points,
        loop_controls: tol.loop_controls(),
    };
    let p0 = sim.section.start_point(&sys.h, sim.h)?;
    let oval = trace_real_oval(&sys.fibration(), sim.h, (p0[0], p0[1]), sim.oval_points, &opts.loop_controls)?;
    let j = pontryagin_melnikov(&sys, &oval)?;
    let sims = exec::try_map(Execution::default(), &sim.eps, |&e| simulate_3d_return(&sys, sim.h, e, &sim.section, &opts))?;
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (k, s) in sims.iter().enumerate() {
        let name = format!("simulate3d_{k}.csv");
        let rows: Vec<Vec<String>> =
            s.z_profile.iter().map(|o| vec![num(o.t), num(o.x), num(o.y), num(o.z), num(o.h)]).collect();
        files.push(write_csv(out, &name, &["t", "x", "y", "z", "H"], &rows)?);
        runs.push(SimulationRun {
            eps: s.eps,
            delta_h: s.delta_h,
            delta_h_over_eps: s.delta_h / s.eps,
            error: (s.delta_h / s.eps - j.direct.re).abs(),
            return_time: s.return_time,
            tracking: s.tracking,
            tracking_constant: s.tracking_constant,
            csv: name,
        });
    }
    files.push(write_json(out, "simulate3d.json", &SimulationSummary { h: sim.h, j, runs })?);
    Ok(files)
}
