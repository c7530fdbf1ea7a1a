//! Scenario execution: every mode yields table rows and a JSON report.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::ser::{Serialize, SerializeStruct, Serializer};
use serde_json::{json, Value};
use weightlab_core::exact::{ap_measures_exact, ap_weights_exact, avg_norm_sup_exact, avg_sigma_norm_sup_exact};
use weightlab_core::{
    ap_measures, ap_measures_balls, ap_weights, averaging_necessity, necessity_pipeline, pap, pap_pipeline,
    strong11_density_case, strong11_singular_source, strong11_singular_target, weak_norm_lower, ConditionReport, Cube,
    CubeFamily, CzOptions, Grid, Measure, NecessityConfig, Pairing, PapConfig, Point, Step, TestFunction, WeakOperator,
    WeakProblem, Witness,
};

use crate::builtins::kernel_by_name;
use crate::gallery;
use crate::scenario::{Loaded, Mode};

/// One line of the CSV table.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub check: String,
    pub level: u32,
    pub family: String,
    pub constant: f64,
    pub witness: String,
    pub pass: bool,
    /// The row the scenario's `expect` block applies to.
    pub primary: bool,
}

/// Floats with `inf`/`nan` spelled out, as in the measure file format.
pub fn format_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&format_num(self.0))
        }
    }
}

impl Serialize for Row {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Row", 6)?;
        st.serialize_field("check", &self.check)?;
        st.serialize_field("level", &self.level)?;
        st.serialize_field("family", &self.family)?;
        st.serialize_field("constant", &Num(self.constant))?;
        st.serialize_field("witness", &self.witness)?;
        st.serialize_field("pass", &self.pass)?;
        st.end()
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub report: Value,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub level: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn witness_text(w: &Option<Witness>) -> String {
    match w {
        None => String::new(),
        Some(Witness::Cube { cube }) => cube.to_string(),
        Some(Witness::Ball { ball }) => format!("B({}, {})", ball.center, ball.radius),
        Some(Witness::SharedAtom { point }) => format!("shared atom at {point}"),
    }
}

struct Ctx<'a> {
    l: &'a Loaded,
    level: u32,
    rows: Vec<Row>,
}

impl Ctx<'_> {
    fn p(&self) -> f64 {
        self.l.scenario.p
    }

    fn u(&self) -> anyhow::Result<Measure> {
        self.measure_at(self.l.scenario.u.as_ref(), "u", self.level)
    }

    fn v(&self) -> anyhow::Result<Measure> {
        self.measure_at(self.l.scenario.v.as_ref(), "v", self.level)
    }

    fn measure_at(&self, spec: Option<&crate::scenario::MeasureSpec>, key: &str, level: u32) -> anyhow::Result<Measure> {
        let spec = spec.with_context(|| format!("missing \"{key}\""))?;
        self.l.measure(spec, level).with_context(|| format!("building \"{key}\""))
    }

    fn family(&self) -> anyhow::Result<CubeFamily> {
        self.l.family(self.level)
    }

    fn row(&mut self, check: &str, family: &str, constant: f64, witness: String, pass: bool) {
        self.rows.push(Row { check: check.into(), level: self.level, family: family.into(), constant, witness, pass, primary: false });
    }

    fn primary(&mut self, check: &str, family: &str, constant: f64, witness: String, pass: bool) {
        self.row(check, family, constant, witness, pass);
        self.rows.last_mut().expect("pushed").primary = true;
    }

    fn condition(&mut self, check: &str, rep: &ConditionReport) {
        self.primary(check, &rep.family, rep.constant, witness_text(&rep.witness), !rep.constant.is_nan());
    }

    fn steps(&mut self, family: &str, steps: &[Step]) {
        for s in steps {
            self.row(&s.name, family, s.worst_ratio, s.detail.clone(), s.pass);
        }
    }

    fn kernel(&self) -> anyhow::Result<weightlab_core::Kernel> {
        kernel_by_name(self.l.scenario.kernel.as_deref().context("missing \"kernel\"")?)
    }

    fn pairing(&self) -> Pairing {
        match self.l.scenario.pairing.as_deref() {
            Some("measures") => Pairing::Measures,
            _ => Pairing::Weights,
        }
    }
}

fn mode_ap(c: &mut Ctx) -> anyhow::Result<Value> {
    let rep = ap_weights(&c.u()?, &c.v()?, c.p(), &c.family()?)?;
    c.condition("ap", &rep);
    Ok(serde_json::to_value(&rep)?)
}

fn mode_ap_measures(c: &mut Ctx) -> anyhow::Result<Value> {
    let (mu, sigma) = (c.u()?, c.v()?);
    let rep = ap_measures(&mu, &sigma, c.p(), &c.family()?)?;
    c.condition("ap_measures", &rep);
    let mut out = json!({ "cubes": rep });
    if let Some(balls) = &c.l.scenario.balls {
        let b = ap_measures_balls(&mu, &sigma, c.p(), balls)?;
        c.row("ap_measures_balls", &b.family, b.constant, witness_text(&b.witness), !b.constant.is_nan());
        out["balls"] = serde_json::to_value(&b)?;
    }
    Ok(out)
}

fn mode_pap(c: &mut Ctx) -> anyhow::Result<Value> {
    let rep = pap(&c.u()?, &c.v()?, c.p(), &c.family()?)?;
    c.condition("pap", &rep);
    Ok(serde_json::to_value(&rep)?)
}

fn mode_avg_norm(c: &mut Ctx) -> anyhow::Result<Value> {
    let (u, v, fam) = (c.u()?, c.v()?, c.family()?);
    let p = c.p();
    let desc = fam.describe();
    let measures = c.pairing() == Pairing::Measures;
    let mut out = json!({});
    if measures {
        // ‖A_{Q,σ}‖ on the χ_Q witness against [μ,σ]_{A_p}
        let k = avg_sigma_norm_sup_exact(&u, &v, p, &fam);
        let a = ap_measures_exact(&u, &v, p, &fam);
        let measured = ap_measures(&u, &v, p, &fam)?;
        match (k, a) {
            (Ok(k), Ok(a)) => {
                let eq = k == a;
                c.primary("avg_sigma_norm_pow_p", &desc, k.to_f64(), String::new(), true);
                c.row("exact_equality", &desc, a.to_f64(), witness_text(&measured.witness), eq);
                out["exact_equal"] = json!(eq);
            }
            (k, a) => {
                let why = k.err().or(a.err()).map(|e| e.to_string()).unwrap_or_default();
                c.primary("ap_measures", &desc, measured.constant, witness_text(&measured.witness), true);
                out["exact_unavailable"] = json!(why);
            }
        }
        out["measured"] = serde_json::to_value(&measured)?;
        return Ok(out);
    }
    let rep = averaging_necessity(&u, &v, p, &fam)?;
    c.primary("avg_norm_sup", &desc, rep.k, String::new(), true);
    c.row("ap_le_k_pow_p", &desc, rep.measured.constant, witness_text(&rep.measured.witness), rep.pass);
    match (avg_norm_sup_exact(&u, &v, p, &fam), ap_weights_exact(&u, &v, p, &fam)) {
        (Ok(k), Ok(a)) => {
            let eq = k == a;
            c.row("exact_equality", &desc, a.to_f64(), String::new(), eq);
            out["exact_equal"] = json!(eq);
        }
        (k, a) => {
            let why = k.err().or(a.err()).map(|e| e.to_string()).unwrap_or_default();
            out["exact_unavailable"] = json!(why);
        }
    }
    out["k"] = json!(rep.k);
    out["k_pow_p"] = json!(rep.k_pow_p);
    out["relative_gap"] = json!(rep.relative_gap);
    out["measured"] = serde_json::to_value(&rep.measured)?;
    Ok(out)
}

fn eval_grid(m: &Measure, fam: &CubeFamily, level: u32) -> anyhow::Result<Grid> {
    if let Some(d) = m.density() {
        return Ok(d.grid().clone());
    }
    let w = fam.window().context("weak-norm needs a density on \"u\" or a family with a window")?;
    Ok(Grid::over_cube(&w, 1usize << level.min(10))?)
}

fn mode_weak_norm(c: &mut Ctx) -> anyhow::Result<Value> {
    let (mu, nu, fam) = (c.u()?, c.v()?, c.family()?);
    let kernel = match &c.l.scenario.cube {
        Some(_) => None,
        None => Some(c.kernel()?),
    };
    let op = match (&c.l.scenario.cube, &kernel) {
        (Some(q), _) => WeakOperator::Averaging(*q),
        (None, Some(k)) => WeakOperator::Cz { kernel: k, opts: CzOptions::default() },
        (None, None) => unreachable!(),
    };
    let integrate = (c.pairing() == Pairing::Measures).then_some(&nu);
    let problem = WeakProblem {
        op,
        target: &mu,
        norm: &nu,
        integrate,
        p: c.p(),
        eval_grid: eval_grid(&mu, &fam, c.level)?,
        lambdas: c.l.scenario.lambdas.unwrap_or(64),
    };
    let funcs: Vec<TestFunction> = fam.cubes().iter().map(TestFunction::cube_indicator).collect();
    let est = weak_norm_lower(&problem, &funcs)?;
    c.primary("weak_norm_lower", &fam.describe(), est.value, est.best_function.clone().unwrap_or_default(), true);
    Ok(serde_json::to_value(&est)?)
}

fn mode_necessity(c: &mut Ctx) -> anyhow::Result<Value> {
    let (mu, nu, fam, kernel) = (c.u()?, c.v()?, c.family()?, c.kernel()?);
    let s = &c.l.scenario;
    let desc = fam.describe();
    let mut cfg = NecessityConfig::new(c.pairing(), s.p, s.k.unwrap_or(1.0), fam);
    cfg.seed = s.seed;
    if let Some(x) = &s.scales {
        cfg.scales = x.clone();
    }
    if let Some(x) = &s.placements {
        cfg.placements = x.clone();
    }
    if let Some(x) = s.samples {
        cfg.perturbation_samples = x;
    }
    let rep = necessity_pipeline(&mu, &nu, &kernel, &cfg)?;
    c.steps(&desc, &rep.steps);
    c.row("concluded_bound", &desc, rep.concluded_bound, format!("C_mu^(N-1) = {}", rep.chain_constant), rep.pass);
    let ok = rep.measured.constant <= rep.concluded_bound;
    c.primary("measured", &desc, rep.measured.constant, witness_text(&rep.measured.witness), ok);
    Ok(serde_json::to_value(&rep)?)
}

fn mode_pap_pipeline(c: &mut Ctx) -> anyhow::Result<Value> {
    let (mu, sigma, fam, kernel) = (c.u()?, c.v()?, c.family()?, c.kernel()?);
    let s = &c.l.scenario;
    let desc = fam.describe();
    let r = s.r.unwrap_or(0.5);
    let cfg = PapConfig {
        p: s.p,
        k: s.k.unwrap_or(1.0),
        y0: s.y0.unwrap_or_else(|| Point::zero(s.dim)),
        r,
        s_ladder: s.s_ladder.clone().unwrap_or_else(|| vec![40.0 * r, 80.0 * r, 160.0 * r, 320.0 * r]),
        k_max: s.k_max.unwrap_or(6),
        annulus_samples: s.samples.unwrap_or(10_000),
        cells_per_unit: if s.dim == 1 { 4 } else { 1 },
        points: 3,
        doubling_family: fam,
        seed: s.seed,
        quadrature: CzOptions { max_level: Some(if s.dim == 1 { 8 } else { 3 }), ..Default::default() },
    };
    let rep = pap_pipeline(&mu, &sigma, &kernel, &cfg)?;
    c.steps(&desc, &rep.steps);
    c.row("concluded_bound", &desc, rep.concluded_bound, format!("C_far = {}", rep.c_far), rep.pass);
    let cube = Cube::new(cfg.y0, r)?;
    c.primary("measured", &desc, rep.measured, cube.to_string(), rep.measured <= rep.concluded_bound);
    Ok(serde_json::to_value(&rep)?)
}

fn mode_strong11(c: &mut Ctx) -> anyhow::Result<Value> {
    let kernel = c.kernel()?;
    let mu = c.u()?;
    let s = &c.l.scenario;
    let fam = c.family()?;
    let desc = fam.describe();
    match s.case.unwrap_or(1) {
        1 => {
            let nu = c.v()?;
            let q = Cube::new(s.y0.unwrap_or_else(|| Point::zero(s.dim)), s.r.unwrap_or(0.05))?;
            let rep = strong11_singular_source(&mu, &nu, &kernel, &q, 4)?;
            c.primary("contradiction_ratio", &q.to_string(), rep.contradiction_ratio, format!("∫|Tf|dμ = {}", rep.t_integral), rep.contradiction_ratio.is_infinite());
            Ok(serde_json::to_value(&rep)?)
        }
        2 => {
            let nu = c.v()?;
            let rep = strong11_density_case(&mu, &nu, &kernel, s.y0, s.annuli.unwrap_or(20))?;
            let at = rep.y0.to_string();
            c.primary("linear_growth", &at, rep.floor, format!("{} annuli from j0 = {}", rep.cone.terms.len(), rep.j0), rep.linear_growth);
            c.row("required_constant", &at, rep.required_constant, format!("v(y0) = {}", rep.v_y0), true);
            Ok(serde_json::to_value(&rep)?)
        }
        _ => {
            let rep = strong11_singular_target(&mu, &kernel, &fam)?;
            c.primary("directional_doubling", &desc, rep.directional_doubling, rep.diagnosis.clone(), true);
            Ok(serde_json::to_value(&rep)?)
        }
    }
}

fn mode_gallery(c: &mut Ctx) -> anyhow::Result<Value> {
    let seed = c.l.scenario.seed;
    match c.l.scenario.item.as_deref().unwrap_or_default() {
        "remark-1" => {
            let rep = gallery::remark1(20, seed)?;
            c.primary("max_ratio", "20 step functions on |x|>2", rep.max_ratio, format!("bound {}", rep.bound), rep.max_ratio <= rep.bound);
            let ok = (rep.chi23_quadrature - rep.chi23_closed_form).abs() < 1e-4;
            c.row("chi_2_3", "χ[2,3]", rep.chi23_quadrature, format!("6ln2 − 3ln3 = {}", rep.chi23_closed_form), ok);
            Ok(serde_json::to_value(&rep)?)
        }
        "remark-2" => {
            let rep = gallery::remark2()?;
            c.primary("hf_at_zero", "χ[1,2]", rep.hf_at_zero, format!("∫|f|dν = {}", rep.nu_integral), rep.pass);
            Ok(serde_json::to_value(&rep)?)
        }
        _ => {
            let rep = gallery::exp_directional(&[2.0, 4.0, 8.0], 0.125)?;
            for w in &rep.windows {
                let fam = format!("lattice{{[−{0},{0})²,m=6}}", w.half_width);
                c.row("directional_e2", &fam, w.directional, String::new(), true);
                let wit = w.full_witness.map(|(q, big)| format!("{q} in {big}")).unwrap_or_default();
                c.row("full_doubling", &fam, w.full, wit, true);
            }
            let worst = rep.full_ratios.iter().copied().fold(f64::INFINITY, f64::min);
            c.primary("separation", "windows 2, 4, 8", worst, format!("directional ratios {:?}", rep.directional_ratios), rep.pass);
            Ok(serde_json::to_value(&rep)?)
        }
    }
}

fn mode_converge(c: &mut Ctx) -> anyhow::Result<Value> {
    let s = &c.l.scenario;
    let [a, b] = s.levels.context("missing \"levels\"")?;
    let base = s.base.context("missing \"base\"")?;
    let mut seq = Vec::new();
    for level in a..=b {
        let u = c.measure_at(s.u.as_ref(), "u", level)?;
        let v = c.measure_at(s.v.as_ref(), "v", level)?;
        let fam = c.l.family(level)?;
        let rep = match base {
            Mode::Ap => ap_weights(&u, &v, s.p, &fam)?,
            Mode::ApMeasures => ap_measures(&u, &v, s.p, &fam)?,
            _ => pap(&u, &v, s.p, &fam)?,
        };
        c.rows.push(Row {
            check: base.as_str().into(),
            level,
            family: rep.family.clone(),
            constant: rep.constant,
            witness: witness_text(&rep.witness),
            pass: true,
            primary: false,
        });
        seq.push(rep);
    }
    let values: Vec<f64> = seq.iter().map(|r| r.constant).collect();
    let monotone = values.windows(2).all(|w| w[0] <= w[1]);
    if let Some(last) = c.rows.last_mut() {
        last.primary = true;
    }
    c.level = b;
    let fam = seq.last().map(|r| r.family.clone()).unwrap_or_default();
    c.row("monotone", &fam, values.last().copied().unwrap_or(f64::NAN), format!("levels {a}..={b}"), monotone);
    Ok(json!({ "levels": [a, b], "values": values.iter().map(|v| Num(*v)).collect::<Vec<_>>(), "monotone": monotone, "reports": seq }))
}

/// Runs a loaded scenario without touching the filesystem.
pub fn execute(loaded: &Loaded, opts: &RunOptions) -> anyhow::Result<Outcome> {
    let mut l = loaded.clone();
    if let Some(seed) = opts.seed {
        l.scenario.seed = seed;
    }
    if let Some(level) = opts.level {
        anyhow::ensure!(level <= crate::scenario::MAX_LEVEL, "level must be at most {}, got {level}", crate::scenario::MAX_LEVEL);
        l.scenario.level = level;
    }
    let mut c = Ctx { l: &l, level: l.scenario.level, rows: Vec::new() };
    let report = match l.scenario.mode {
        Mode::Ap => mode_ap(&mut c),
        Mode::ApMeasures => mode_ap_measures(&mut c),
        Mode::Pap => mode_pap(&mut c),
        Mode::AvgNorm => mode_avg_norm(&mut c),
        Mode::WeakNorm => mode_weak_norm(&mut c),
        Mode::Necessity => mode_necessity(&mut c),
        Mode::PapPipeline => mode_pap_pipeline(&mut c),
        Mode::Strong11 => mode_strong11(&mut c),
        Mode::Gallery => mode_gallery(&mut c),
        Mode::Converge => mode_converge(&mut c),
    }
    .with_context(|| format!("{}: mode {}", l.file, l.scenario.mode.as_str()))?;
    let mut rows = c.rows;
    if let Some(e) = &l.scenario.expect {
        for r in rows.iter_mut().filter(|r| r.primary) {
            r.pass &= e.holds(r.constant);
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    let s = &l.scenario;
    let report = json!({
        "schema": crate::scenario::SCHEMA,
        "scenario": s.name,
        "mode": s.mode.as_str(),
        "p": s.p,
        "level": s.level,
        "seed": s.seed,
        "pass": pass,
        "rows": rows,
        "report": report,
    });
    Ok(Outcome { rows, report, pass })
}

pub const CSV_HEADER: [&str; 10] = ["scenario", "mode", "p", "level", "family", "constant", "witness", "pass", "seed", "check"];

pub fn render_csv(loaded: &Loaded, outcome: &Outcome, seed: u64) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let s = &loaded.scenario;
    for r in &outcome.rows {
        w.write_record([
            s.name.clone(),
            s.mode.as_str().into(),
            format_num(s.p),
            r.level.to_string(),
            r.family.clone(),
            format_num(r.constant),
            r.witness.clone(),
            r.pass.to_string(),
            seed.to_string(),
            r.check.clone(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub struct Written {
    pub outcome: Outcome,
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Runs a scenario and writes `<name>.json` and `<name>.csv`.
pub fn run_and_write(loaded: &Loaded, opts: &RunOptions) -> anyhow::Result<Written> {
    let outcome = execute(loaded, opts)?;
    let dir = match (&opts.out, &loaded.scenario.output) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => loaded.base_dir.join(d),
        (None, None) => PathBuf::from("out"),
    };
    let name = &loaded.scenario.name;
    let json_path = dir.join(format!("{name}.json"));
    let csv_path = dir.join(format!("{name}.csv"));
    let mut text = serde_json::to_string_pretty(&outcome.report)?;
    text.push('\n');
    write_atomic(&json_path, text.as_bytes())?;
    let seed = opts.seed.unwrap_or(loaded.scenario.seed);
    write_atomic(&csv_path, &render_csv(loaded, &outcome, seed)?)?;
    Ok(Written { outcome, json: json_path, csv: csv_path })
}
