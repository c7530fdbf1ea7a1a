//! Scenario files: schema, validation and materialisation of measures and
//! families.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weightlab_core::{Atom, Ball, Cube, CubeFamily, Density, Grid, Measure, Point};

pub const SCHEMA: u32 = 1;
pub const MAX_LEVEL: u32 = 16;
const MAX_CELLS: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ap,
    ApMeasures,
    Pap,
    AvgNorm,
    WeakNorm,
    Necessity,
    PapPipeline,
    Strong11,
    Gallery,
    Converge,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ap => "ap",
            Mode::ApMeasures => "ap-measures",
            Mode::Pap => "pap",
            Mode::AvgNorm => "avg-norm",
            Mode::WeakNorm => "weak-norm",
            Mode::Necessity => "necessity",
            Mode::PapPipeline => "pap-pipeline",
            Mode::Strong11 => "strong11",
            Mode::Gallery => "gallery",
            Mode::Converge => "converge",
        }
    }
}

/// `[lo, hi)` along every axis.
pub type Window = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
    Zero,
    /// Lebesgue measure; restricted to `window` when one is given.
    Lebesgue {
        #[serde(default)]
        window: Option<Window>,
    },
    /// `|x − center|^alpha dx` on `window`.
    Power {
        alpha: f64,
        window: Window,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `e^{−|x|} dx` on `window`, or `e^{−|x_axis|}` when `axis` is set.
    Exponential {
        window: Window,
        #[serde(default)]
        axis: Option<usize>,
    },
    /// `value · χ_[lo,hi) dx` sampled on `window`.
    Indicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
        window: Window,
        #[serde(default = "one")]
        value: f64,
    },
    Atoms { atoms: Vec<Atom> },
    /// A measure file, relative to the scenario's directory.
    File { path: PathBuf },
    Inline { measure: Measure },
    Sum { parts: Vec<MeasureSpec> },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Dyadic subcubes of `window`; `max_level` defaults to the scenario level.
    Dyadic {
        window: Window,
        #[serde(default)]
        min_level: u32,
        #[serde(default)]
        max_level: Option<u32>,
    },
    Lattice { window: Window, divisions: u32 },
    /// `seed` defaults to the scenario seed.
    Random {
        window: Window,
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit { cubes: Vec<Cube> },
}

/// Checks asserted on the primary constant of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub min: Option<f64>,
}

fn default_rel_tol() -> f64 {
    1e-9
}

impl Expect {
    pub fn holds(&self, value: f64) -> bool {
        let near = self.constant.map_or(true, |c| {
            if c.is_infinite() || value.is_infinite() {
                c == value
            } else {
                (value - c).abs() <= self.rel_tol * c.abs().max(f64::MIN_POSITIVE)
            }
        });
        near && self.max.map_or(true, |m| value <= m) && self.min.map_or(true, |m| value >= m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub mode: Mode,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_level")]
    pub level: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub kernel: Option<String>,
    /// `u` or `μ`: the target side.
    #[serde(default, alias = "mu")]
    pub u: Option<MeasureSpec>,
    /// `v`, `ν` or `σ`: the source side.
    #[serde(default, alias = "nu", alias = "sigma")]
    pub v: Option<MeasureSpec>,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    /// Output directory, relative to the scenario's directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub expect: Option<Expect>,

    /// Hypothesised operator constant `K`.
    #[serde(default)]
    pub k: Option<f64>,
    /// `weights` or `measures`.
    #[serde(default)]
    pub pairing: Option<String>,
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    #[serde(default)]
    pub placements: Option<Vec<Point>>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub y0: Option<Point>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub s_ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub k_max: Option<u32>,
    #[serde(default)]
    pub balls: Option<Vec<Ball>>,
    /// Averaging cube for `weak-norm`; a kernel is used otherwise.
    #[serde(default)]
    pub cube: Option<Cube>,
    #[serde(default)]
    pub lambdas: Option<usize>,
    /// Case 1, 2 or 3 for `strong11`.
    #[serde(default)]
    pub case: Option<u8>,
    #[serde(default)]
    pub annuli: Option<usize>,
    /// Gallery item name.
    #[serde(default)]
    pub item: Option<String>,
    /// Mode studied by `converge`.
    #[serde(default)]
    pub base: Option<Mode>,
    /// Inclusive level range for `converge`.
    #[serde(default)]
    pub levels: Option<[u32; 2]>,
}

fn default_p() -> f64 {
    2.0
}

fn default_level() -> u32 {
    8
}

fn default_dim() -> usize {
    1
}

/// A scenario problem located in its source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.file, self.line, self.column, self.message)
    }
}

impl std::error::Error for Diagnostic {}

/// Position of the first `"key":` in `text`, 1-based; `(1, 1)` when absent.
fn locate_key(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    let mut from = 0;
    while let Some(off) = text[from..].find(&needle) {
        let at = from + off;
        let rest = text[at + needle.len()..].trim_start();
        if rest.starts_with(':') {
            let line = text[..at].matches('\n').count() + 1;
            let column = at - text[..at].rfind('\n').map_or(0, |i| i + 1) + 1;
            return (line, column);
        }
        from = at + needle.len();
    }
    (1, 1)
}

/// A parsed scenario with the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
    pub file: String,
}

impl Loaded {
    pub fn from_text(text: &str, file: &str, base_dir: &Path) -> Result<Self, Diagnostic> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Diagnostic {
            file: file.into(),
            line: e.line().max(1),
            column: e.column().max(1),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        })?;
        let loaded = Self { scenario, base_dir: base_dir.to_path_buf(), file: file.into() };
        loaded.validate(text)?;
        Ok(loaded)
    }

    pub fn from_path(path: &Path) -> Result<Self, Diagnostic> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
            file: file.clone(),
            line: 1,
            column: 1,
            message: format!("cannot read scenario: {e}"),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &file, &base)
    }

    fn validate(&self, text: &str) -> Result<(), Diagnostic> {
        let s = &self.scenario;
        let fail = |key: &str, message: String| {
            let (line, column) = locate_key(text, key);
            Err(Diagnostic { file: self.file.clone(), line, column, message })
        };
        if s.schema != SCHEMA {
            return fail("schema", format!("unsupported schema {}, expected {SCHEMA}", s.schema));
        }
        if s.name.is_empty() || s.name.contains(['/', '\\']) {
            return fail("name", format!("name must be a nonempty file stem, got {:?}", s.name));
        }
        if !(1.0..=16.0).contains(&s.p) {
            return fail("p", format!("p must lie in [1, 16], got {}", s.p));
        }
        if s.level > MAX_LEVEL {
            return fail("level", format!("level must be at most {MAX_LEVEL}, got {}", s.level));
        }
        if !(1..=3).contains(&s.dim) {
            return fail("dim", format!("dim must be 1, 2 or 3, got {}", s.dim));
        }
        if let Some(k) = &s.kernel {
            if let Err(e) = crate::builtins::kernel_by_name(k) {
                return fail("kernel", e.to_string());
            }
        }
        for (key, spec) in [("u", &s.u), ("v", &s.v)] {
            if let Some(spec) = spec {
                let key = if text.contains(&format!("\"{key}\"")) {
                    key
                } else if key == "u" {
                    "mu"
                } else if text.contains("\"sigma\"") {
                    "sigma"
                } else {
                    "nu"
                };
                if let Err(msg) = self.check_spec(spec) {
                    return fail(key, msg);
                }
            }
        }
        if let Some([a, b]) = s.levels {
            if a > b || b > MAX_LEVEL {
                return fail("levels", format!("levels must be an increasing range within 0..={MAX_LEVEL}, got [{a}, {b}]"));
            }
        }
        if let Some(b) = s.base {
            if !matches!(b, Mode::Ap | Mode::ApMeasures | Mode::Pap) {
                return fail("base", format!("converge studies ap, ap-measures or pap, got {}", b.as_str()));
            }
        }
        let needs = |key: &str, present: bool| if present { Ok(()) } else { fail(key, format!("mode {} needs \"{key}\"", s.mode.as_str())) };
        match s.mode {
            Mode::Ap | Mode::ApMeasures | Mode::Pap | Mode::AvgNorm => {
                needs("u", s.u.is_some())?;
                needs("v", s.v.is_some())?;
            }
            Mode::WeakNorm => {
                needs("u", s.u.is_some())?;
                needs("v", s.v.is_some())?;
                needs("kernel", s.cube.is_some() || s.kernel.is_some())?;
            }
            Mode::Necessity | Mode::PapPipeline => {
                needs("u", s.u.is_some())?;
                needs("v", s.v.is_some())?;
                needs("kernel", s.kernel.is_some())?;
            }
            Mode::Strong11 => {
                needs("kernel", s.kernel.is_some())?;
                needs("case", s.case.is_some())?;
                needs("u", s.u.is_some())?;
                if let Some(c) = s.case {
                    if !(1..=3).contains(&c) {
                        return fail("case", format!("case must be 1, 2 or 3, got {c}"));
                    }
                    if c != 3 {
                        needs("v", s.v.is_some())?;
                    }
                }
            }
            Mode::Gallery => {
                needs("item", s.item.is_some())?;
                let item = s.item.as_deref().unwrap_or_default();
                if !crate::gallery::ITEMS.iter().any(|(n, _)| *n == item) {
                    return fail("item", format!("unknown gallery item {item:?}; see `weightlab list-builtins`"));
                }
            }
            Mode::Converge => {
                needs("base", s.base.is_some())?;
                needs("levels", s.levels.is_some())?;
                needs("u", s.u.is_some())?;
                needs("v", s.v.is_some())?;
            }
        }
        if let Some(pairing) = &s.pairing {
            if pairing != "weights" && pairing != "measures" {
                return fail("pairing", format!("pairing must be \"weights\" or \"measures\", got {pairing:?}"));
            }
        }
        Ok(())
    }

    fn check_spec(&self, spec: &MeasureSpec) -> Result<(), String> {
        match spec {
            MeasureSpec::File { path } => {
                let full = self.base_dir.join(path);
                if !full.is_file() {
                    return Err(format!("measure file {} does not exist", full.display()));
                }
            }
            MeasureSpec::Sum { parts } => {
                for p in parts {
                    self.check_spec(p)?;
                }
            }
            MeasureSpec::Power { window, .. }
            | MeasureSpec::Exponential { window, .. }
            | MeasureSpec::Indicator { window, .. }
            | MeasureSpec::Lebesgue { window: Some(window) } => check_window(window)?,
            _ => {}
        }
        Ok(())
    }

    /// The measure of a spec with cells of side `(hi − lo)/2^level`.
    pub fn measure(&self, spec: &MeasureSpec, level: u32) -> anyhow::Result<Measure> {
        let dim = self.scenario.dim;
        let m = match spec {
            MeasureSpec::Zero => Measure::zero(dim),
            MeasureSpec::Lebesgue { window: None } => Measure::lebesgue(dim),
            MeasureSpec::Lebesgue { window: Some(w) } => Measure::lebesgue_on(grid(w, dim, level)?)?,
            MeasureSpec::Power { alpha, window, center } => {
                let c = match center {
                    Some(c) => Point::new(c)?,
                    None => Point::zero(dim),
                };
                anyhow::ensure!(c.dim() == dim, "power centre has dimension {}, expected {dim}", c.dim());
                let a = *alpha;
                Measure::sampled(grid(window, dim, level)?, move |x| x.dist(&c).powf(a))?
            }
            MeasureSpec::Exponential { window, axis } => {
                let axis = *axis;
                if let Some(i) = axis {
                    anyhow::ensure!(i < dim, "axis {i} out of range for dimension {dim}");
                }
                Measure::sampled(grid(window, dim, level)?, move |x| match axis {
                    Some(i) => (-x[i].abs()).exp(),
                    None => (-x.norm()).exp(),
                })?
            }
            MeasureSpec::Indicator { lo, hi, window, value } => {
                anyhow::ensure!(lo.len() == dim && hi.len() == dim, "indicator corners need {dim} coordinates");
                let (lo, hi, value) = (lo.clone(), hi.clone(), *value);
                Measure::sampled(grid(window, dim, level)?, move |x| {
                    if (0..dim).all(|i| lo[i] <= x[i] && x[i] < hi[i]) {
                        value
                    } else {
                        0.0
                    }
                })?
            }
            MeasureSpec::Atoms { atoms } => Measure::from_atoms(dim, atoms.clone())?,
            MeasureSpec::File { path } => {
                let full = self.base_dir.join(path);
                let text = std::fs::read_to_string(&full)?;
                serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}:{}:{}: {e}", full.display(), e.line(), e.column()))?
            }
            MeasureSpec::Inline { measure } => measure.clone(),
            MeasureSpec::Sum { parts } => {
                let mut acc = Measure::zero(dim);
                for p in parts {
                    acc = acc.add(&self.measure(p, level)?)?;
                }
                acc
            }
        };
        anyhow::ensure!(m.dim() == dim, "measure has dimension {}, scenario has {dim}", m.dim());
        Ok(m)
    }

    pub fn family(&self, level: u32) -> anyhow::Result<CubeFamily> {
        let dim = self.scenario.dim;
        Ok(match &self.scenario.family {
            None => CubeFamily::dyadic(window_cube(&[-1.0, 1.0], dim)?, level),
            Some(FamilySpec::Dyadic { window, min_level, max_level }) => CubeFamily::Dyadic {
                window: window_cube(window, dim)?,
                min_level: *min_level,
                max_level: max_level.unwrap_or(level),
            },
            Some(FamilySpec::Lattice { window, divisions }) => {
                CubeFamily::Lattice { window: window_cube(window, dim)?, divisions: *divisions }
            }
            Some(FamilySpec::Random { window, count, seed }) => CubeFamily::Random {
                window: window_cube(window, dim)?,
                count: *count,
                seed: seed.unwrap_or(self.scenario.seed),
            },
            Some(FamilySpec::Explicit { cubes }) => CubeFamily::Explicit { cubes: cubes.clone() },
        })
    }
}

fn check_window(w: &Window) -> Result<(), String> {
    if !(w[0] < w[1] && w[0].is_finite() && w[1].is_finite()) {
        return Err(format!("window must be [lo, hi] with lo < hi, got [{}, {}]", w[0], w[1]));
    }
    Ok(())
}

pub fn window_cube(w: &Window, dim: usize) -> anyhow::Result<Cube> {
    check_window(w).map_err(anyhow::Error::msg)?;
    let c = 0.5 * (w[0] + w[1]);
    Ok(Cube::new(Point::new(&vec![c; dim])?, 0.5 * (w[1] - w[0]))?)
}

pub fn grid(w: &Window, dim: usize, level: u32) -> anyhow::Result<Grid> {
    check_window(w).map_err(anyhow::Error::msg)?;
    let k = 1usize << level;
    anyhow::ensure!(k.checked_pow(dim as u32).is_some_and(|c| c <= MAX_CELLS), "{dim}-D grid at level {level} exceeds {MAX_CELLS} cells");
    Ok(Grid::new(Point::new(&vec![w[0]; dim])?, (w[1] - w[0]) / k as f64, vec![k; dim])?)
}

/// Density from explicit cell values, kept here for scenario builders.
pub fn density(grid: Grid, values: Vec<f64>) -> anyhow::Result<Density> {
    Ok(Density::new(grid, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Loaded, Diagnostic> {
        Loaded::from_text(text, "s.json", Path::new("."))
    }

    #[test]
    fn minimal_scenario_parses() {
        let l = load(r#"{"schema": 1, "name": "one", "mode": "ap", "u": {"kind": "lebesgue", "window": [-1, 1]}, "v": {"kind": "lebesgue", "window": [-1, 1]}}"#).unwrap();
        assert_eq!(l.scenario.p, 2.0);
        assert_eq!(l.family(3).unwrap().cubes().len(), 15);
        let m = l.measure(l.scenario.u.as_ref().unwrap(), 3).unwrap();
        assert_eq!(m.density().unwrap().grid().len(), 8);
    }

    #[test]
    fn diagnostics_point_at_the_offending_line() {
        let text = "{\n  \"schema\": 1,\n  \"name\": \"x\",\n  \"mode\": \"ap\",\n  \"p\": 20,\n  \"u\": {\"kind\": \"zero\"},\n  \"v\": {\"kind\": \"zero\"}\n}";
        let d = load(text).unwrap_err();
        assert_eq!((d.line, d.column), (5, 3), "{d}");
        assert!(d.message.contains("[1, 16]"));

        let d = load("{\n  \"schema\": 1,\n  \"name\": \"x\",\n  \"mode\": \"apx\"\n}").unwrap_err();
        assert_eq!(d.line, 4, "{d}");
        let d = load("{\n  \"schema\": 1,\n  \"nam\": \"x\"\n}").unwrap_err();
        assert_eq!(d.line, 3, "{d}");
        let d = load("{\"schema\": 2, \"name\": \"x\", \"mode\": \"ap\"}").unwrap_err();
        assert!(d.message.contains("schema"));
    }

    #[test]
    fn missing_files_and_fields_are_reported() {
        let d = load(r#"{"schema": 1, "name": "x", "mode": "ap", "u": {"kind": "file", "path": "nope.json"}, "v": {"kind": "zero"}}"#).unwrap_err();
        assert!(d.message.contains("does not exist"), "{d}");
        let d = load(r#"{"schema": 1, "name": "x", "mode": "necessity", "u": {"kind": "zero"}, "v": {"kind": "zero"}}"#).unwrap_err();
        assert!(d.message.contains("kernel"), "{d}");
        let d = load(r#"{"schema": 1, "name": "x", "mode": "ap", "level": 17, "u": {"kind": "zero"}, "v": {"kind": "zero"}}"#).unwrap_err();
        assert!(d.message.contains("level"), "{d}");
    }

    #[test]
    fn expectations() {
        let e = Expect { constant: Some(1.0), rel_tol: 1e-9, ..Default::default() };
        assert!(e.holds(1.0 + 1e-12) && !e.holds(1.1));
        let e = Expect { constant: Some(f64::INFINITY), ..Default::default() };
        assert!(e.holds(f64::INFINITY) && !e.holds(1e300));
        assert!(Expect { max: Some(2.0), ..Default::default() }.holds(1.5));
    }
}
