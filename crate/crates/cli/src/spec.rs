//! Problem description read from the `--spec` JSON file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use contourlab::critical::{CriticalOptions, SeedGrid};
use contourlab::fiber::{
    compose_loops, invert_loop, trace_real_oval, transport_loop, vanishing_cycle, BasePath, FiberLoop, LoopControls,
    TransportControls,
};
use contourlab::ham_time::{Coefficients, TOL_RESONANCE};
use contourlab::melnikov::{ReturnOptions, SectionSpec, DEFAULT_EPS_GRID};
use contourlab::monodromy::{parse_word, CycleOptions, EllipticCycles};
use contourlab::normal_var::DEFAULT_HYP_MARGIN;
use contourlab::poly::{elliptic_hamiltonian, BivariatePoly, Fibration, Point, C64};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(rename = "H")]
    pub h: BivariatePoly,
    #[serde(rename = "A", default)]
    pub a: Option<BivariatePoly>,
    #[serde(default)]
    pub b: Option<BivariatePoly>,
    #[serde(default)]
    pub p: Option<BivariatePoly>,
    #[serde(rename = "P", default)]
    pub big_p: Option<BivariatePoly>,
    #[serde(rename = "Q", default)]
    pub big_q: Option<BivariatePoly>,
    #[serde(rename = "R", default)]
    pub big_r: Option<BivariatePoly>,
    #[serde(rename = "S", default)]
    pub big_s: Option<BivariatePoly>,
    /// Loop recipes, built in order; a recipe may only reference earlier names.
    #[serde(default)]
    pub loops: Vec<NamedLoop>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub critical: Option<CriticalSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub monodromy: Option<MonodromySpec>,
    #[serde(default)]
    pub melnikov: Option<MelnikovSpec>,
    #[serde(default)]
    pub simulate3d: Option<SimulateSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedLoop {
    pub name: String,
    pub recipe: Recipe,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// Real oval of a real `H` through the point nearest `start`.
    RealOval {
        h: f64,
        start: [f64; 2],
        #[serde(default = "default_oval_points")]
        points: usize,
    },
    /// Cycle vanishing at a Morse point; `value` defaults to `H(point)`.
    VanishingCycle {
        point: Point,
        #[serde(default)]
        value: Option<C64>,
        h: C64,
        #[serde(default = "default_morse_radius")]
        radius: f64,
        #[serde(default = "default_morse_points")]
        points: usize,
    },
    Transport {
        #[serde(rename = "loop")]
        source: String,
        path: BasePath,
    },
    /// Concatenation, left to right.
    Compose { loops: Vec<String> },
    Invert {
        #[serde(rename = "loop")]
        source: String,
    },
    /// Word in the elliptic cycles: `g`, `d` and inverses `G`, `D`.
    EllipticWord { h: f64, word: String },
}

fn default_oval_points() -> usize {
    400
}

fn default_morse_radius() -> f64 {
    1e-2
}

fn default_morse_points() -> usize {
    64
}

/// Numerical tolerances; every field left out keeps the library default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub fiber: Option<f64>,
    pub base: Option<f64>,
    pub proj: Option<f64>,
    pub newton: Option<f64>,
    pub dedup: Option<f64>,
    pub ode_rel: Option<f64>,
    pub ode_abs: Option<f64>,
    pub resonance: Option<f64>,
    pub max_step: Option<f64>,
}

impl Tolerances {
    /// Fields set in `over` win.
    pub fn overridden_by(self, over: &Tolerances) -> Tolerances {
        Tolerances {
            fiber: over.fiber.or(self.fiber),
            base: over.base.or(self.base),
            proj: over.proj.or(self.proj),
            newton: over.newton.or(self.newton),
            dedup: over.dedup.or(self.dedup),
            ode_rel: over.ode_rel.or(self.ode_rel),
            ode_abs: over.ode_abs.or(self.ode_abs),
            resonance: over.resonance.or(self.resonance),
            max_step: over.max_step.or(self.max_step),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fields = [
            ("fiber", self.fiber),
            ("base", self.base),
            ("proj", self.proj),
            ("newton", self.newton),
            ("dedup", self.dedup),
            ("ode_rel", self.ode_rel),
            ("ode_abs", self.ode_abs),
            ("resonance", self.resonance),
            ("max_step", self.max_step),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(CliError::Usage(format!("tolerance {name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn loop_controls(&self) -> LoopControls {
        let d = LoopControls::default();
        LoopControls {
            max_step: self.max_step.unwrap_or(d.max_step),
            min_grad: d.min_grad,
            tol_fiber: self.fiber.unwrap_or(d.tol_fiber),
            proj_tol: self.proj.unwrap_or(d.proj_tol),
            tol_base: self.base.unwrap_or(d.tol_base),
        }
    }

    pub fn transport(&self) -> TransportControls {
        TransportControls { loop_controls: self.loop_controls(), ..TransportControls::default() }
    }

    pub fn cycle_options(&self) -> CycleOptions {
        CycleOptions { transport: self.transport(), ..CycleOptions::default() }
    }

    pub fn returns(&self) -> ReturnOptions {
        let mut r = ReturnOptions::default();
        r.ode.rtol = self.ode_rel.unwrap_or(r.ode.rtol);
        r.ode.atol = self.ode_abs.unwrap_or(r.ode.atol);
        r
    }

    pub fn resonance(&self) -> f64 {
        self.resonance.unwrap_or(TOL_RESONANCE)
    }

    pub fn critical(&self, grid: SeedGrid) -> CriticalOptions {
        let d = CriticalOptions::default();
        CriticalOptions {
            grid,
            tol_newton: self.newton.unwrap_or(d.tol_newton),
            tol_dedup: self.dedup.unwrap_or(d.tol_dedup),
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSpec {
    pub half_width: Option<f64>,
    pub resolution: Option<usize>,
    pub phases: Option<usize>,
}

impl CriticalSpec {
    pub fn seed_grid(&self) -> SeedGrid {
        let d = SeedGrid::default();
        SeedGrid {
            half_width: self.half_width.unwrap_or(d.half_width),
            resolution: self.resolution.unwrap_or(d.resolution),
            phases: self.phases.unwrap_or(d.phases),
        }
    }
}

/// Either an explicit list or `n` equispaced values from `start` to `end`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, end: f64, n: usize },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, end, n } => match n {
                0 => Vec::new(),
                1 => vec![*start],
                _ => (0..*n).map(|k| start + (end - start) * k as f64 / (*n - 1) as f64).collect(),
            },
        };
        if v.is_empty() {
            return Err(CliError::Usage("grid is empty".into()));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(CliError::Usage(format!("grid value {bad} is not finite")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "loop")]
    pub loop_name: String,
    pub h: Grid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonodromySpec {
    #[serde(rename = "loop")]
    pub loop_name: Option<String>,
    #[serde(default = "default_center")]
    pub center: C64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Vanishing cycle at `center`, enabling the Picard–Lefschetz residual.
    #[serde(default)]
    pub delta: Option<String>,
    #[serde(default)]
    pub elliptic: Option<EllipticMonodromySpec>,
}

fn default_center() -> C64 {
    C64::new(2.0, 0.0)
}

fn default_radius() -> f64 {
    0.5
}

/// Elliptic-only outputs: the monodromy formula, ξ and the rank sequence.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticMonodromySpec {
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub xi_h: Option<Grid>,
    #[serde(default)]
    pub rank_h: Option<Grid>,
    #[serde(default = "default_rank_iterations")]
    pub rank_iterations: usize,
}

fn default_h0() -> f64 {
    1.5
}

fn default_radii() -> Vec<f64> {
    vec![0.5, 0.25]
}

fn default_rank_iterations() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelnikovSpec {
    pub h: Grid,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "SectionSpec::elliptic")]
    pub section: SectionSpec,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_crossings")]
    pub crossings: usize,
}

fn default_eps() -> Vec<f64> {
    DEFAULT_EPS_GRID.to_vec()
}

fn default_max_order() -> usize {
    3
}

fn default_crossings() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default)]
    pub h: f64,
    #[serde(default = "default_sim_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "SectionSpec::elliptic")]
    pub section: SectionSpec,
    #[serde(default = "default_margin")]
    pub hyp_margin: f64,
    #[serde(default = "default_sim_oval_points")]
    pub oval_points: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            h: 0.0,
            eps: default_sim_eps(),
            section: SectionSpec::elliptic(),
            hyp_margin: DEFAULT_HYP_MARGIN,
            oval_points: default_sim_oval_points(),
        }
    }
}

fn default_sim_eps() -> Vec<f64> {
    vec![1e-3, 5e-4, 2.5e-4]
}

fn default_margin() -> f64 {
    DEFAULT_HYP_MARGIN
}

fn default_sim_oval_points() -> usize {
    800
}

/// Sizes and sample points of the verification suites.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_group_pairs")]
    pub group_pairs: usize,
    #[serde(default = "default_loop_pairs")]
    pub loop_pairs: usize,
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    /// Level and section for the return-map checks.
    #[serde(default)]
    pub melnikov_h: f64,
    #[serde(default = "SectionSpec::elliptic")]
    pub section: SectionSpec,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            group_pairs: default_group_pairs(),
            loop_pairs: default_loop_pairs(),
            h0: default_h0(),
            radii: default_radii(),
            melnikov_h: 0.0,
            section: SectionSpec::elliptic(),
        }
    }
}

fn default_group_pairs() -> usize {
    100
}

fn default_loop_pairs() -> usize {
    24
}

impl ProblemSpec {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Usage("spec is empty; it must be a JSON object with at least \"H\"".into()));
        }
        let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.h.is_zero() {
            return Err(CliError::Usage("H is zero".into()));
        }
        self.tolerances.validate()?;
        let mut seen: Vec<&str> = Vec::new();
        for l in &self.loops {
            if seen.contains(&l.name.as_str()) {
                return Err(CliError::Usage(format!("loop \"{}\" is defined twice", l.name)));
            }
            for r in l.recipe.references() {
                if !seen.contains(&r) {
                    return Err(CliError::Usage(format!("loop \"{}\" uses \"{r}\" before it is defined", l.name)));
                }
            }
            seen.push(&l.name);
        }
        Ok(())
    }

    pub fn fibration(&self) -> Fibration {
        Fibration::new(self.h.clone())
    }

    pub fn is_elliptic(&self) -> bool {
        self.h == elliptic_hamiltonian()
    }

    /// `A`, `b`, `p` with defaults `1`, `1`, `x`.
    pub fn coefficients(&self) -> Coefficients {
        Coefficients::new(
            self.a.clone().unwrap_or_else(|| BivariatePoly::from_real(&[(0, 0, 1.0)])),
            self.b.clone().unwrap_or_else(|| BivariatePoly::from_real(&[(0, 0, 1.0)])),
            self.p.clone().unwrap_or_else(|| BivariatePoly::from_real(&[(1, 0, 1.0)])),
        )
    }

    /// Builds every named loop in order.
    pub fn build_loops(&self, tol: &Tolerances) -> Result<BTreeMap<String, FiberLoop>, CliError> {
        let fib = self.fibration();
        let ctl = tol.transport();
        let mut out: BTreeMap<String, FiberLoop> = BTreeMap::new();
        for l in &self.loops {
            log::info!("building loop {}", l.name);
            let get = |n: &str| out.get(n).cloned().ok_or_else(|| CliError::Usage(format!("unknown loop \"{n}\"")));
            let built = match &l.recipe {
                Recipe::RealOval { h, start, points } => {
                    trace_real_oval(&fib, *h, (start[0], start[1]), *points, &ctl.loop_controls)?
                }
                Recipe::VanishingCycle { point, value, h, radius, points } => {
                    let v = value.unwrap_or_else(|| fib.value(*point));
                    vanishing_cycle(&fib, *point, v, *h, *radius, *points, &ctl)?
                }
                Recipe::Transport { source, path } => transport_loop(&fib, &get(source)?, path, &ctl)?,
                Recipe::Compose { loops } => {
                    let mut it = loops.iter();
                    let first = it.next().ok_or_else(|| CliError::Usage(format!("compose \"{}\" is empty", l.name)))?;
                    let mut acc = get(first)?;
                    for n in it {
                        acc = compose_loops(&acc, &get(n)?, ctl.loop_controls.tol_base)?;
                    }
                    acc
                }
                Recipe::Invert { source } => invert_loop(&get(source)?),
                Recipe::EllipticWord { h, word } => {
                    if !self.is_elliptic() {
                        return Err(CliError::Usage("elliptic_word needs H = y^2 - x^3 + 3x".into()));
                    }
                    let letters = parse_word(word)?;
                    EllipticCycles::new(*h, &tol.cycle_options())?.word(&letters)?
                }
            };
            out.insert(l.name.clone(), built);
        }
        Ok(out)
    }
}

impl Recipe {
    fn references(&self) -> Vec<&str> {
        match self {
            Recipe::Transport { source, .. } | Recipe::Invert { source } => vec![source.as_str()],
            Recipe::Compose { loops } => loops.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }
}
