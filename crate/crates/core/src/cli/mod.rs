//! Experiment driver behind the `mccpde` binary.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::certificates::{self, embedding_bounds, Coercivity, Constants, StateBounds};
use crate::convex::{write_dump, SolverSettings};
use crate::error::{Error, Result};
use crate::fem1d::{solve_state, PdeProblem};
use crate::functions::Function1d;
use crate::grid::{CellFunction, NodalFunction, Partition};
use crate::obbt::{self, ObbtOutcome};
use crate::oracle;
use crate::relaxation::{self, lower_bound_solve_with, Envelope, LowerBound, RelaxationKind, RelaxationSpec, Target};
use crate::upper_bounds::{self, PrimalResult};

pub use config::{ExperimentConfig, Mode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver(_) | Error::InfeasibleEnvelope(_) | Error::SingularSystem(_) => EXIT_SOLVER,
        _ => EXIT_VALIDATION,
    }
}

/// `(upper − lower)/lower`.
pub fn table_gap(upper: f64, lower: f64) -> Result<f64> {
    if !(lower > 0.0) {
        return Err(Error::NonpositiveLower(lower));
    }
    Ok((upper - lower) / lower)
}

fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PointwiseVariant {
    Conservative,
    Alpha0,
    Tightest,
}

#[derive(Debug, Clone, Default)]
struct LevelResult {
    n_h: usize,
    mcch_pre: Option<f64>,
    mcchh_pre: Option<f64>,
    post: Option<ObbtOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub instance: usize,
    pub alpha: f64,
    pub obj_star: f64,
    pub m_obbt: f64,
    pub c_quad: f64,
    pub validated: f64,
    pub heuristic: f64,
    pub holds: bool,
}

/// Everything a run produced, for the caller and for tests.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub lower_bounds: BTreeMap<String, f64>,
    pub upper_bounds: BTreeMap<String, f64>,
    pub gaps: BTreeMap<String, f64>,
    pub c_quad: BTreeMap<String, f64>,
    pub oracle: Vec<OracleRow>,
    pub bounds_consistent: bool,
    pub timings: BTreeMap<String, f64>,
}

impl RunSummary {
    pub fn oracle_passed(&self) -> Option<bool> {
        (!self.oracle.is_empty()).then(|| self.oracle.iter().all(|r| r.holds))
    }
}

struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    prob: PdeProblem,
    u_d: Target,
    solver: SolverSettings,
    b: f64,
    u_min: NodalFunction,
    u_max: NodalFunction,
    pointwise: BTreeMap<PointwiseVariant, LowerBound>,
    ub_cont: Option<PrimalResult>,
    ub_int: Option<PrimalResult>,
    timings: BTreeMap<String, f64>,
}

/// Pointwise bounds `S(w_u) ≤ S(w) ≤ S(w_ℓ)`; these hold whenever `f ≥ 0`.
fn monotone_state_bounds(prob: &PdeProblem) -> Result<(NodalFunction, NodalFunction)> {
    let fem = prob.fem_grid;
    let lo = solve_state(prob, &CellFunction::constant(fem, prob.w_hi))?;
    let hi = solve_state(prob, &CellFunction::constant(fem, prob.w_lo))?;
    Ok((lo, hi))
}

fn nonnegative_source(f: &Function1d, fem: Partition) -> bool {
    let mut xs: Vec<f64> = (0..=2 * fem.n_cells()).map(|k| k as f64 / (2 * fem.n_cells()) as f64).collect();
    xs.extend(f.breakpoints());
    xs.iter().all(|&x| f.eval(x) >= 0.0)
}

impl<'a> Pipeline<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let fem = Partition::new(cfg.fem_n)?;
        let prob = PdeProblem::new(cfg.f.clone(), cfg.w_lo, cfg.w_hi, fem, fem)?;
        let b = embedding_bounds(cfg.w_lo, cfg.w_hi, prob.f_l2_norm(), Coercivity::Averaged)?.linf;
        let (u_min, u_max) = monotone_state_bounds(&prob)?;
        Ok(Self {
            cfg,
            u_d: Target::Function(cfg.u_d.clone()),
            solver: cfg.solver_settings(),
            b,
            u_min,
            u_max,
            prob,
            pointwise: BTreeMap::new(),
            ub_cont: None,
            ub_int: None,
            timings: BTreeMap::new(),
        })
    }

    fn tight_available(&self) -> bool {
        nonnegative_source(&self.cfg.f, self.prob.fem_grid)
    }

    fn conservative_env(&self, coarse: Partition) -> Result<Envelope> {
        Envelope::uniform(coarse, -self.b, self.b, self.cfg.w_lo, self.cfg.w_hi)
    }

    fn spec(&self, kind: RelaxationKind, env: Envelope, alpha: f64) -> RelaxationSpec {
        RelaxationSpec { kind, prob: self.prob.clone(), env, alpha, u_d: self.u_d.clone() }
    }

    fn timed<T>(&mut self, key: String, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let clock = Instant::now();
        let out = f(self)?;
        self.timings.insert(key, clock.elapsed().as_secs_f64());
        Ok(out)
    }

    fn pointwise(&mut self, v: PointwiseVariant) -> Result<&LowerBound> {
        if !self.pointwise.contains_key(&v) {
            let fem = self.prob.fem_grid;
            let (env, alpha) = match v {
                PointwiseVariant::Conservative => (self.conservative_env(fem)?, self.cfg.alpha),
                PointwiseVariant::Alpha0 => (self.conservative_env(fem)?, 0.0),
                PointwiseVariant::Tightest => (
                    Envelope::from_state_bounds(fem, &self.u_min, &self.u_max, self.cfg.w_lo, self.cfg.w_hi)?,
                    self.cfg.alpha,
                ),
            };
            let spec = self.spec(RelaxationKind::PointwiseMcC, env, alpha);
            let lb = self.timed(format!("mcc_{v:?}").to_lowercase(), |p| lower_bound_solve_with(&spec, &p.solver))?;
            self.pointwise.insert(v, lb);
        }
        Ok(&self.pointwise[&v])
    }

    fn ub_continuous(&mut self) -> Result<&PrimalResult> {
        if self.ub_cont.is_none() {
            let grid = Partition::new(self.cfg.ub_grid())?;
            let st = self.cfg.continuous_settings();
            let r = self.timed("ub_continuous".into(), |p| {
                upper_bounds::solve_continuous(&p.prob, &p.u_d, p.cfg.alpha, grid, &st)
            })?;
            self.ub_cont = Some(r);
        }
        Ok(self.ub_cont.as_ref().expect("set above"))
    }

    fn ub_integer(&mut self) -> Result<&PrimalResult> {
        if self.ub_int.is_none() {
            let start = self.ub_continuous()?.w.clone();
            let r = self
                .timed("ub_integer".into(), |p| upper_bounds::integer_search(&p.prob, &p.u_d, p.cfg.alpha, &start))?;
            self.ub_int = Some(r);
        }
        Ok(self.ub_int.as_ref().expect("set above"))
    }

    fn level(&mut self, n_h: usize, sweep: bool, tighten: bool) -> Result<LevelResult> {
        let coarse = Partition::new(n_h)?;
        let env = self.conservative_env(coarse)?;
        let mut out = LevelResult { n_h, ..Default::default() };
        if sweep {
            let spec = self.spec(RelaxationKind::AveragedMcCh, env.clone(), self.cfg.alpha);
            out.mcch_pre = Some(self.timed(format!("mcch_{n_h}"), |p| lower_bound_solve_with(&spec, &p.solver))?.m);
        }
        let spec = self.spec(RelaxationKind::FullyAveragedMcChh, env, self.cfg.alpha);
        if tighten {
            let settings = self.cfg.obbt_settings();
            let o = self.timed(format!("obbt_{n_h}"), |_| obbt::lower_bound_after_obbt(&spec, &settings))?;
            out.mcchh_pre = Some(o.m_before);
            out.post = Some(o);
        } else {
            out.mcchh_pre = Some(self.timed(format!("mcchh_{n_h}"), |p| lower_bound_solve_with(&spec, &p.solver))?.m);
        }
        Ok(out)
    }

    fn tight_bounds(&self) -> StateBounds {
        StateBounds::Nodal { lo: self.u_min.clone(), hi: self.u_max.clone() }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn envelope_svg(pipe: &Pipeline, level: &LevelResult, relaxed_u: &NodalFunction, env: &Envelope) -> String {
    let edges = env.coarse.cell_edges();
    let band = svg::Band {
        label: "tightened state bounds".into(),
        color: "steelblue",
        lower: svg::steps(&edges, env.u_lo.values()),
        upper: svg::steps(&edges, env.u_hi.values()),
    };
    let nodal = |u: &NodalFunction| -> Vec<(f64, f64)> {
        let p = u.partition();
        u.values().iter().enumerate().map(|(i, &v)| (p.edge(i), v)).collect()
    };
    let target_grid = Partition::new(512).expect("fixed grid");
    let u_d: Vec<(f64, f64)> = (0..=512).map(|i| (target_grid.edge(i), pipe.u_d.eval(target_grid.edge(i)))).collect();
    let mut series = vec![
        svg::Series { label: "relaxation state".into(), color: "black", dashed: false, points: nodal(relaxed_u) },
        svg::Series { label: "u_d".into(), color: "darkorange", dashed: false, points: u_d },
    ];
    if pipe.tight_available() {
        series.push(svg::Series { label: "u_min".into(), color: "seagreen", dashed: true, points: nodal(&pipe.u_min) });
        series.push(svg::Series {
            label: "u_max".into(),
            color: "firebrick",
            dashed: true,
            points: nodal(&pipe.u_max),
        });
    }
    svg::chart(&format!("State envelope after bound tightening, N_h = {}", level.n_h), &[band], &series)
}

/// Random toy instances checked against exhaustive enumeration.
pub fn oracle_rows(
    cfg: &ExperimentConfig,
    solver: &SolverSettings,
) -> Result<(Vec<OracleRow>, Option<oracle::Enumeration>)> {
    let oc = &cfg.oracle;
    let spec = cfg.enumeration();
    let fem = Partition::new(oc.fem_n)?;
    let coarse = Partition::new(oc.n_cells)?;
    let prob = PdeProblem::new(cfg.f.clone(), cfg.w_lo, cfg.w_hi, fem, coarse)?;
    let b = embedding_bounds(cfg.w_lo, cfg.w_hi, prob.f_l2_norm(), Coercivity::Averaged)?.linf;
    let (u_min, u_max) = monotone_state_bounds(&prob)?;
    let mut rng = ChaCha8Rng::seed_from_u64(oc.seed);
    let mut rows = Vec::new();
    let mut first = None;
    for instance in 0..oc.instances {
        let knots: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.5)).collect();
        let alpha = 10f64.powf(rng.gen_range(-4.0..-2.0));
        let u_d = Target::Nodal(NodalFunction::interpolate(fem, |x| {
            let s = (4.0 * x).min(3.999_999);
            let k = s.floor() as usize;
            knots[k] + (s - k as f64) * (knots[k + 1] - knots[k])
        }));
        let e = oracle::enumerate_optimum(&spec, &prob, &u_d, alpha)?;
        let hh = RelaxationSpec {
            kind: RelaxationKind::FullyAveragedMcChh,
            prob: prob.clone(),
            env: Envelope::uniform(coarse, -b, b, cfg.w_lo, cfg.w_hi)?,
            alpha,
            u_d: u_d.clone(),
        };
        let post = obbt::lower_bound_after_obbt(&hh, &cfg.obbt_settings())?;
        let a0 = RelaxationSpec {
            kind: RelaxationKind::PointwiseMcC,
            prob: prob.with_control_grid(fem)?,
            env: Envelope::uniform(fem, -b, b, cfg.w_lo, cfg.w_hi)?,
            alpha: 0.0,
            u_d: u_d.clone(),
        };
        let j0 = lower_bound_solve_with(&a0, solver)?.m.max(0.0);
        let bounds = StateBounds::Nodal { lo: u_min.clone(), hi: u_max.clone() };
        let cq = certificates::c_quad(&prob, &e.w_star, alpha, j0, &bounds, &u_d)?;
        let v = certificates::validated_lower_bound(post.m, cq.c_quad, coarse.h());
        let heuristic =
            upper_bounds::solve_integer(&prob, &u_d, alpha, coarse, &cfg.continuous_settings())?.obj_nonsmooth;
        rows.push(OracleRow {
            instance,
            alpha,
            obj_star: e.obj_star,
            m_obbt: post.m,
            c_quad: cq.c_quad,
            validated: v.value,
            heuristic,
            holds: v.value <= e.obj_star,
        });
        if first.is_none() {
            first = Some(e);
        }
    }
    Ok((rows, first))
}

/// Runs every configured mode and writes the artifacts to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut pipe = Pipeline::new(cfg)?;
    let modes = &cfg.modes;
    let has = |m: Mode| modes.contains(&m);
    let mut summary = RunSummary { output_dir: out_dir.to_path_buf(), ..Default::default() };

    if has(Mode::Mcc) {
        for v in [PointwiseVariant::Conservative, PointwiseVariant::Alpha0] {
            pipe.pointwise(v)?;
        }
        if pipe.tight_available() {
            pipe.pointwise(PointwiseVariant::Tightest)?;
        }
    }
    if has(Mode::UbContinuous) || has(Mode::Certificates) {
        pipe.ub_continuous()?;
    }
    if has(Mode::UbInteger) {
        pipe.ub_integer()?;
    }

    let mut levels = Vec::new();
    if has(Mode::McchSweep) || has(Mode::Obbt) {
        for &n_h in &cfg.coarse_levels {
            levels.push(pipe.level(n_h, has(Mode::McchSweep), has(Mode::Obbt))?);
        }
    }

    // Bounds on the fine problem and their gaps.
    let pw = |p: &Pipeline, v| p.pointwise.get(&v).map(|lb| lb.m);
    let ub_int = pipe.ub_int.as_ref().map(|r| r.obj_nonsmooth);
    let ub_cont = pipe.ub_cont.as_ref().map(|r| r.obj_nonsmooth);
    if has(Mode::Mcc) || has(Mode::UbContinuous) || has(Mode::UbInteger) {
        let mut t = String::from("column,value,rel_gap_minlp,rel_gap_nlp\n");
        let ub_rows = [("ub_integer_heuristic", ub_int), ("ub_continuous", ub_cont)];
        for (name, v) in ub_rows {
            if let Some(v) = v {
                let _ = writeln!(t, "{name},{},,", fmt(v));
            }
        }
        let lb_rows = [
            ("mcc_tightest", pw(&pipe, PointwiseVariant::Tightest)),
            ("mcc_conservative", pw(&pipe, PointwiseVariant::Conservative)),
            ("mcc_alpha0", pw(&pipe, PointwiseVariant::Alpha0)),
        ];
        for (name, v) in lb_rows {
            let Some(v) = v else { continue };
            let minlp = ub_int.map(|u| table_gap(u, v)).transpose().ok().flatten();
            let nlp = ub_cont.map(|u| table_gap(u, v)).transpose().ok().flatten();
            let _ = writeln!(t, "{name},{},{},{}", fmt(v), opt(minlp), opt(nlp));
            summary.lower_bounds.insert(name.into(), v);
            if let Some(g) = minlp {
                summary.gaps.insert(format!("minlp_{name}"), g);
            }
            if let Some(g) = nlp {
                summary.gaps.insert(format!("nlp_{name}"), g);
            }
        }
        write(out_dir, "table1_bounds.csv", &t)?;
    }
    if let Some(v) = ub_int {
        summary.upper_bounds.insert("ub_integer_heuristic".into(), v);
    }
    if let Some(v) = ub_cont {
        summary.upper_bounds.insert("ub_continuous".into(), v);
    }
    if let Some(cont) = pipe.ub_cont.as_ref() {
        let int = pipe.ub_int.as_ref();
        let grid = cont.w.partition();
        let mut t = String::from("cell,x_left,x_right,w_continuous,w_integer\n");
        for i in 0..grid.n_cells() {
            let (a, b) = grid.cell(i);
            let wi = int.map(|r| format!("{}", r.w.values()[i])).unwrap_or_default();
            let _ = writeln!(t, "{i},{a},{b},{},{wi}", fmt(cont.w.values()[i]));
        }
        write(out_dir, "ub_controls.csv", &t)?;
    }

    // Averaged relaxations before and after tightening.
    if !levels.is_empty() {
        let mut t = String::from("n_h,h,m_mcch,m_mcchh,m_mcchh_obbt,sweeps,bound_updates\n");
        for l in &levels {
            let h = 1.0 / l.n_h as f64;
            let post = l.post.as_ref();
            let _ = writeln!(
                t,
                "{},{h},{},{},{},{},{}",
                l.n_h,
                opt(l.mcch_pre),
                opt(l.mcchh_pre),
                opt(post.map(|o| o.m)),
                post.map(|o| o.trace.sweeps.len().to_string()).unwrap_or_default(),
                post.map(|o| o.trace.updates.len().to_string()).unwrap_or_default(),
            );
            for (key, v) in [("mcch", l.mcch_pre), ("mcchh", l.mcchh_pre), ("mcchh_obbt", post.map(|o| o.m))] {
                if let Some(v) = v {
                    summary.lower_bounds.insert(format!("{key}_{}", l.n_h), v);
                }
            }
        }
        write(out_dir, "table4_mcch.csv", &t)?;
    }
    for l in &levels {
        let Some(o) = &l.post else { continue };
        let mut buf = Vec::new();
        o.trace.write_csv(&mut buf)?;
        fs::write(out_dir.join(format!("obbt_trace_nh{}.csv", l.n_h)), buf)?;
        let mut buf = Vec::new();
        o.trace.write_sweeps_csv(&mut buf)?;
        fs::write(out_dir.join(format!("obbt_sweeps_nh{}.csv", l.n_h)), buf)?;
        let spec = pipe.spec(RelaxationKind::FullyAveragedMcChh, o.env.clone(), cfg.alpha);
        let relaxed = lower_bound_solve_with(&spec, &pipe.solver)?;
        write(out_dir, &format!("envelope_nh{}.svg", l.n_h), &envelope_svg(&pipe, l, &relaxed.u, &o.env))?;
        let mut t = String::from("cell,x_left,x_right,u_lo,u_hi\n");
        for i in 0..o.env.coarse.n_cells() {
            let (a, b) = o.env.coarse.cell(i);
            let _ = writeln!(t, "{i},{a},{b},{},{}", fmt(o.env.u_lo.values()[i]), fmt(o.env.u_hi.values()[i]));
        }
        write(out_dir, &format!("envelope_nh{}.csv", l.n_h), &t)?;
    }

    // Distance of the tightened averaged value to the tightest pointwise value.
    if let Some(tight) = pw(&pipe, PointwiseVariant::Tightest) {
        let rows: Vec<_> = levels.iter().filter_map(|l| l.post.as_ref().map(|o| (l.n_h, o.m))).collect();
        if !rows.is_empty() {
            let mut t = String::from("n_h,h,abs_diff,rel_diff\n");
            for (n_h, m) in rows {
                let d = (m - tight).abs();
                let _ = writeln!(t, "{n_h},{},{},{}", 1.0 / n_h as f64, fmt(d), fmt(d / tight));
            }
            write(out_dir, "table5_difference.csv", &t)?;
        }
    }

    // Tables 2 and 3: error constants and validated bounds.
    if has(Mode::Certificates) {
        let w_hat = pipe.ub_continuous()?.w.clone();
        let fem = pipe.prob.fem_grid;
        let cons_bounds = StateBounds::Cells(pipe.conservative_env(fem)?);
        let cons = pipe.timed("c_quad_conservative".into(), |p| {
            certificates::c_quad(&p.prob, &w_hat, p.cfg.alpha, 0.0, &cons_bounds, &p.u_d)
        })?;
        let tight: Option<Constants> = if pipe.tight_available() {
            let j0 = pipe.pointwise(PointwiseVariant::Alpha0)?.m.max(0.0);
            let bounds = pipe.tight_bounds();
            Some(pipe.timed("c_quad_tight".into(), |p| {
                certificates::c_quad(&p.prob, &w_hat, p.cfg.alpha, j0, &bounds, &p.u_d)
            })?)
        } else {
            None
        };
        let mut t = String::from("variant,j0,j_hat,tv_bound,l_u,d_f_l1,c2,c_quad\n");
        let mut json = serde_json::Map::new();
        for (name, c) in [("conservative", Some(&cons)), ("tight", tight.as_ref())] {
            let Some(c) = c else { continue };
            let _ = writeln!(
                t,
                "{name},{},{},{},{},{},{},{}",
                fmt(c.j0),
                fmt(c.j_hat),
                fmt(c.tv_bound),
                fmt(c.l_u),
                fmt(c.d_f_l1),
                fmt(c.c2),
                fmt(c.c_quad)
            );
            summary.c_quad.insert(name.into(), c.c_quad);
            json.insert(name.into(), serde_json::to_value(c).expect("constants serialize"));
        }
        write(out_dir, "table2_cquad.csv", &t)?;
        write(out_dir, "constants.json", &(serde_json::to_string_pretty(&json).expect("json") + "\n"))?;

        let mut all_levels: Vec<usize> = cfg.coarse_levels.iter().chain(&cfg.validated_levels).copied().collect();
        all_levels.sort_unstable();
        all_levels.dedup();
        let computed: BTreeMap<usize, &LevelResult> = levels.iter().map(|l| (l.n_h, l)).collect();
        let mut t = String::from("n_h,h,obbt,m,m_source,lb_conservative,lb_tight\n");
        for (obbt_flag, limit) in
            [("no", pw(&pipe, PointwiseVariant::Conservative)), ("yes", pw(&pipe, PointwiseVariant::Tightest))]
        {
            for &n_h in &all_levels {
                let h = 1.0 / n_h as f64;
                let m_comp = computed.get(&n_h).and_then(|l| match obbt_flag {
                    "no" => l.mcchh_pre,
                    _ => l.post.as_ref().map(|o| o.m),
                });
                let (m, source) = match (m_comp, limit) {
                    (Some(m), _) => (m, "computed"),
                    (None, Some(m)) => (m, "extrapolated"),
                    (None, None) => continue,
                };
                let lc = certificates::validated_lower_bound(m, cons.c_quad, h).value;
                let lt = tight.as_ref().map(|c| certificates::validated_lower_bound(m, c.c_quad, h).value);
                let _ = writeln!(t, "{n_h},{h},{obbt_flag},{},{source},{},{}", fmt(m), fmt(lc), opt(lt));
                summary.lower_bounds.insert(format!("validated_c_{obbt_flag}_{n_h}"), lc);
                if let Some(lt) = lt {
                    summary.lower_bounds.insert(format!("validated_t_{obbt_flag}_{n_h}"), lt);
                }
            }
        }
        write(out_dir, "table3_validated.csv", &t)?;
    }

    if has(Mode::Oracle) {
        let (rows, first) = pipe.timed("oracle".into(), |p| oracle_rows(p.cfg, &p.solver))?;
        let mut t = String::from("instance,alpha,obj_star,m_obbt,c_quad,validated,heuristic,holds\n");
        for r in &rows {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{},{}",
                r.instance,
                fmt(r.alpha),
                fmt(r.obj_star),
                fmt(r.m_obbt),
                fmt(r.c_quad),
                fmt(r.validated),
                fmt(r.heuristic),
                r.holds
            );
        }
        write(out_dir, "oracle.csv", &t)?;
        if let Some(e) = first {
            let mut buf = Vec::new();
            e.write_csv(&mut buf)?;
            fs::write(out_dir.join("oracle_table_instance0.csv"), buf)?;
        }
        summary.oracle = rows;
    }

    let max_lower = summary.lower_bounds.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_upper = summary.upper_bounds.values().copied().fold(f64::INFINITY, f64::min);
    summary.bounds_consistent = max_lower <= min_upper;
    summary.timings = pipe.timings.clone();

    write(out_dir, "summary.txt", &summary_text(&summary))?;
    write(out_dir, "timings.json", &(serde_json::to_string_pretty(&summary.timings).expect("json") + "\n"))?;
    Ok(summary)
}

fn summary_text(s: &RunSummary) -> String {
    let mut t = String::new();
    let section = |t: &mut String, title: &str, map: &BTreeMap<String, f64>| {
        if !map.is_empty() {
            let _ = writeln!(t, "[{title}]");
            for (k, v) in map {
                let _ = writeln!(t, "{k} = {}", fmt(*v));
            }
            t.push('\n');
        }
    };
    section(&mut t, "upper bounds", &s.upper_bounds);
    section(&mut t, "lower bounds", &s.lower_bounds);
    section(&mut t, "relative gaps", &s.gaps);
    section(&mut t, "c_quad", &s.c_quad);
    if let Some(ok) = s.oracle_passed() {
        let n_ok = s.oracle.iter().filter(|r| r.holds).count();
        let heur = s.oracle.iter().filter(|r| r.heuristic == r.obj_star).count();
        let _ = writeln!(t, "[oracle]");
        let _ =
            writeln!(t, "bound validity: {} ({n_ok}/{} instances)", if ok { "PASS" } else { "FAIL" }, s.oracle.len());
        let _ = writeln!(t, "heuristic matches optimum: {heur}/{}\n", s.oracle.len());
    }
    if !s.upper_bounds.is_empty() && !s.lower_bounds.is_empty() {
        let _ = writeln!(t, "lower <= upper: {}", if s.bounds_consistent { "PASS" } else { "FAIL" });
    }
    t
}

/// `mccpde run`: parse, run, report. Returns the process exit code.
pub fn run(config_path: &Path, out_override: Option<&Path>) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return EXIT_VALIDATION;
        }
    };
    let out = out_override.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve_output_dir(config_path));
    match crate::with_thread_pool(|| run_experiment(&cfg, &out)) {
        Ok(s) => {
            print!("{}", summary_text(&s));
            println!("wrote {}", out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// `mccpde check`: the invariant suites on fixed seeds.
pub fn check(seed: u64) -> i32 {
    match crate::with_thread_pool(|| crate::invariants::run_all(seed)) {
        Ok(results) => {
            let mut ok = true;
            for r in &results {
                println!(
                    "{} {:<40} worst {:.3e} tol {:.0e} ({} samples)",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst,
                    r.tol,
                    r.samples
                );
                ok &= r.passed;
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_FAILED_CHECK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Relaxation that `dump-qp` writes: the averaged relaxation on the first
/// coarse level with conservative bounds, or the pointwise one without levels.
pub fn dump_spec(cfg: &ExperimentConfig) -> Result<RelaxationSpec> {
    cfg.validate()?;
    let pipe = Pipeline::new(cfg)?;
    Ok(match cfg.coarse_levels.first() {
        Some(&n_h) => {
            let env = pipe.conservative_env(Partition::new(n_h)?)?;
            pipe.spec(RelaxationKind::FullyAveragedMcChh, env, cfg.alpha)
        }
        None => pipe.spec(RelaxationKind::PointwiseMcC, pipe.conservative_env(pipe.prob.fem_grid)?, cfg.alpha),
    })
}

/// `mccpde dump-qp`: writes the QP and its variable layout next to it.
pub fn dump_qp(config_path: &Path, out: &Path) -> i32 {
    let result = (|| -> Result<PathBuf> {
        let cfg = ExperimentConfig::load(config_path)?;
        let relax = relaxation::build(&dump_spec(&cfg)?)?;
        write_dump(&relax.qp, fs::File::create(out)?)?;
        let layout = out.with_extension("layout.json");
        fs::write(&layout, relax.index.to_json() + "\n")?;
        Ok(layout)
    })();
    match result {
        Ok(layout) => {
            println!("wrote {} and {}", out.display(), layout.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps() {
        assert!((table_gap(8.5551e-2, 8.3679e-2).unwrap() - 2.237e-2).abs() < 5e-6);
        assert!((table_gap(8.3808e-2, 6.8649e-2).unwrap() - 2.208e-1).abs() < 5e-5);
        assert_eq!(table_gap(0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(table_gap(1.0, 0.0), Err(Error::NonpositiveLower(_))));
        assert!(matches!(table_gap(1.0, -1.0), Err(Error::NonpositiveLower(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Solver("x".into())), EXIT_SOLVER);
        assert_eq!(exit_code(&Error::InfeasibleEnvelope("x".into())), EXIT_SOLVER);
    }
}
