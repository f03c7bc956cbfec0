//! Experiment configuration, refinement studies and output files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::ParamFn;
use crate::lcp_solver::{SolveReport, SolverConfig};
use crate::mc_baseline::{mc_run, McConfig, McReport};
use crate::mesh::{build_uniform_mesh, Mesh};
use crate::param_space::{build_param_grid, ParamGrid};
use crate::problems::{builtin, CustomSpec, Problem};
use crate::sg_system::{assemble_sg, BoundaryData, ExplicitPolicy, SgOptions, SgSystem};
use crate::statistics::{
    moment_errors, sg_mean, sg_second_moment, variance, write_nodal_csv, MomentErrors, ReferenceMoments,
    StatField, REFERENCE_ORDER,
};

pub const TABLE_HEADER: &str = "h,s,eL2m1,ordL2m1,eH1m1,ordH1m1,eL2m2,ordL2m2,eH1m2,ordH1m2,iters,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Sg,
    Mc,
    Both,
}

/// One refinement level: mesh cells per side and parameter cells per
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub nx: usize,
    #[serde(default)]
    pub ny: Option<usize>,
    pub cells: usize,
}

/// Explicit levels, or the coupling `h = c · s` with `s` the parameter
/// spacing for each listed cell count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Levels(Vec<Level>),
    Coupled { c: f64, cells: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub n_samples: u64,
    pub warm_start: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        let d = McConfig::default();
        McSettings { n_samples: d.n_samples, warm_start: d.warm_start }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    #[serde(default)]
    pub custom: Option<CustomSpec>,
    pub schedule: Schedule,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default = "default_reference_order")]
    pub reference_order: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub write_vtk: bool,
    #[serde(default)]
    pub boundary_data: BoundaryData,
    /// Notes about defaults applied while loading.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

fn default_seed() -> u64 {
    1
}

fn default_reference_order() -> usize {
    REFERENCE_ORDER
}

fn default_true() -> bool {
    true
}

const DEFAULTED_BLOCKS: [&str; 4] = ["solver", "output", "seed", "mc"];

/// Parses, defaults and cross-checks a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    let raw: serde_json::Value = serde_json::from_str(text)?;
    for block in DEFAULTED_BLOCKS {
        if raw.get(block).is_none() {
            let w = format!("no \"{block}\" block; using defaults");
            log::warn!("{w}");
            cfg.warnings.push(w);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// A resolved level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub nx: usize,
    pub ny: usize,
    pub cells: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        self.solver.validate().map_err(|e| Error::Config(format!("solver: {e}")))?;
        if self.reference_order == 0 {
            return Err(Error::Config("reference_order must be positive".into()));
        }
        if self.mode != RunMode::Sg && self.mc.n_samples < 2 {
            return Err(Error::Config("mc.n_samples must be at least 2".into()));
        }
        self.levels(&problem)?;
        Ok(())
    }

    /// The selected problem. With homogeneous boundary data the exact
    /// solution no longer applies and is dropped.
    pub fn problem(&self) -> Result<Problem> {
        let mut p = builtin(&self.problem, self.custom.as_ref())?;
        if self.boundary_data == BoundaryData::Zero {
            p.dirichlet = ParamFn::zero();
            p.exact = None;
        }
        Ok(p)
    }

    /// Resolves the schedule against the problem domain.
    pub fn levels(&self, problem: &Problem) -> Result<Vec<LevelSpec>> {
        let out: Vec<LevelSpec> = match &self.schedule {
            Schedule::Levels(levels) => levels
                .iter()
                .map(|l| LevelSpec { nx: l.nx, ny: l.ny.unwrap_or(l.nx), cells: l.cells })
                .collect(),
            Schedule::Coupled { c, cells } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::Config(format!("coupling coefficient must be positive, got {c}")));
                }
                let widths: Vec<f64> = problem
                    .densities
                    .iter()
                    .map(|d| {
                        let (lo, hi) = d.support();
                        hi - lo
                    })
                    .collect();
                let wmax = widths.iter().copied().fold(0.0, f64::max);
                if wmax == 0.0 {
                    return Err(Error::Config("coupled schedule needs a random parameter".into()));
                }
                let mut levels = Vec::with_capacity(cells.len());
                for &k in cells {
                    if k == 0 {
                        return Err(Error::Config("parameter cell counts must be positive".into()));
                    }
                    let h = c * wmax / k as f64;
                    let side = |len: f64| -> Result<usize> {
                        let n = len / h;
                        let r = n.round();
                        if r < 1.0 || (n - r).abs() > 1e-8 * n.max(1.0) {
                            return Err(Error::Config(format!(
                                "h = {h} does not divide the domain side {len} evenly"
                            )));
                        }
                        Ok(r as usize)
                    };
                    levels.push(LevelSpec { nx: side(problem.rect.width())?, ny: side(problem.rect.height())?, cells: k });
                }
                levels
            }
        };
        if out.is_empty() {
            return Err(Error::Config("schedule has no levels".into()));
        }
        if out.iter().any(|l| l.nx == 0 || l.ny == 0 || l.cells == 0) {
            return Err(Error::Config("level sizes must be positive".into()));
        }
        Ok(out)
    }

    fn mc_config(&self, problem: &Problem) -> McConfig {
        McConfig {
            n_samples: self.mc.n_samples,
            seed: self.seed,
            transform: problem.transform,
            warm_start: self.mc.warm_start,
        }
    }
}

/// One level of an assembled and solved SG problem.
#[derive(Debug, Clone)]
pub struct SolvedLevel {
    pub spec: LevelSpec,
    pub mesh: Mesh,
    pub grid: ParamGrid,
    pub system: SgSystem,
    pub u: Vec<f64>,
    pub report: SolveReport,
    pub mean: StatField,
    pub second: StatField,
    pub variance: StatField,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
    pub statistics_seconds: f64,
}

impl SolvedLevel {
    pub fn seconds(&self) -> f64 {
        self.assemble_seconds + self.solve_seconds + self.statistics_seconds
    }
}

/// Builds the mesh and grid of a level for `problem`.
pub fn discretize(problem: &Problem, spec: LevelSpec) -> Result<(Mesh, ParamGrid)> {
    let mesh = build_uniform_mesh(problem.rect, spec.nx, spec.ny)?;
    let grid = build_param_grid(&problem.densities, &vec![spec.cells; problem.dims()])?;
    Ok((mesh, grid))
}

/// Interpolates a coarse SG solution onto the interior unknowns of a finer
/// level: P1 in space and multilinear in the parameters.
pub fn prolongate(coarse: &SolvedLevel, mesh: &Mesh, grid: &ParamGrid) -> Vec<f64> {
    let blocks = coarse.system.full_blocks(&coarse.mesh, &coarse.u);
    let ni = mesh.n_interior();
    let spatial: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| mesh.interior_nodes.iter().map(|&n| coarse.mesh.eval_p1(b, mesh.nodes[n])).collect())
        .collect();
    let mut out = vec![0.0; ni * grid.n_basis()];
    for j in 0..grid.n_basis() {
        let y = grid.node(j);
        for (t, w) in coarse.grid.basis_at(&y) {
            for (o, v) in out[j * ni..(j + 1) * ni].iter_mut().zip(&spatial[t]) {
                *o += w * v;
            }
        }
    }
    out
}

/// Assembles, solves and post-processes one level.
pub fn solve_level(
    problem: &Problem,
    spec: LevelSpec,
    solver: &SolverConfig,
    boundary: BoundaryData,
    previous: Option<&SolvedLevel>,
) -> Result<SolvedLevel> {
    let clock = Instant::now();
    let (mesh, grid) = discretize(problem, spec)?;
    let system = assemble_sg(
        &mesh,
        &grid,
        &problem.coefficient,
        &problem.source,
        &problem.obstacle,
        &problem.dirichlet,
        SgOptions { explicit: ExplicitPolicy::Auto, boundary },
    )?;
    let assemble_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let start = previous.map(|p| prolongate(p, &mesh, &grid));
    let sol = system.solve(solver, start.as_deref())?;
    let solve_seconds = clock.elapsed().as_secs_f64();
    log::info!(
        "level nx={} cells={}: {} unknowns, {} iterations, residual {:.2e}",
        spec.nx,
        spec.cells,
        system.len(),
        sol.report.iterations,
        sol.report.residual
    );
    let clock = Instant::now();
    let mean = sg_mean(&system, &mesh, &sol.u);
    let second = sg_second_moment(&system, &mesh, &sol.u);
    let var = variance(&mean, &second);
    let statistics_seconds = clock.elapsed().as_secs_f64();
    Ok(SolvedLevel {
        spec,
        mesh,
        grid,
        system,
        u: sol.u,
        report: sol.report,
        mean,
        second,
        variance: var,
        assemble_seconds,
        solve_seconds,
        statistics_seconds,
    })
}

/// One line of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub h: f64,
    pub s: f64,
    pub errors: MomentErrors,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ErrorTable {
    pub rows: Vec<TableRow>,
    pub complete: bool,
}

fn order(prev: f64, cur: f64) -> f64 {
    (prev / cur).log2()
}

impl ErrorTable {
    /// Observed orders `log2(e_{l−1} / e_l)` of the four error columns; the
    /// first row has none.
    pub fn orders(&self) -> Vec<Option<[f64; 4]>> {
        let cols = |e: &MomentErrors| [e.l2_mean, e.h1_mean, e.l2_second, e.h1_second];
        let mut out = vec![None];
        for w in self.rows.windows(2) {
            let (a, b) = (cols(&w[0].errors), cols(&w[1].errors));
            out.push(Some([order(a[0], b[0]), order(a[1], b[1]), order(a[2], b[2]), order(a[3], b[3])]));
        }
        out.truncate(self.rows.len());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TABLE_HEADER);
        s.push('\n');
        for (row, ord) in self.rows.iter().zip(self.orders()) {
            let e = &row.errors;
            let errs = [e.l2_mean, e.h1_mean, e.l2_second, e.h1_second];
            s += &format!("{},{}", row.h, row.s);
            for (k, err) in errs.iter().enumerate() {
                s += &format!(",{err:.6e},");
                if let Some(o) = ord {
                    s += &format!("{:.4}", o[k]);
                }
            }
            s += &format!(",{},{:.3}\n", row.iterations, row.seconds);
        }
        s
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Serialize)]
struct LevelReport {
    nx: usize,
    ny: usize,
    cells: usize,
    unknowns: usize,
    h: f64,
    s: f64,
    solver: SolveReport,
    errors: Option<MomentErrors>,
    assemble_seconds: f64,
    solve_seconds: f64,
    statistics_seconds: f64,
    variance_clipped: usize,
}

fn level_report(level: &SolvedLevel, errors: Option<MomentErrors>) -> LevelReport {
    LevelReport {
        nx: level.spec.nx,
        ny: level.spec.ny,
        cells: level.spec.cells,
        unknowns: level.system.len(),
        h: level.mesh.cell_size(),
        s: level.grid.spacing(),
        solver: level.report.clone(),
        errors,
        assemble_seconds: level.assemble_seconds,
        solve_seconds: level.solve_seconds,
        statistics_seconds: level.statistics_seconds,
        variance_clipped: level.variance.clipped,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Runs every level in order, compares against the exact statistics and
/// writes `table.csv` and `report.json`. A level that fails to converge
/// stops the study; the partial table is written and flagged incomplete.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ErrorTable> {
    let problem = config.problem()?;
    let exact = problem
        .exact
        .clone()
        .ok_or_else(|| Error::Config(format!("problem \"{}\" has no exact solution", problem.id)))?;
    let levels = config.levels(&problem)?;
    fs::create_dir_all(&config.output)?;
    let mut table = ErrorTable::default();
    let mut reports = Vec::new();
    let mut previous: Option<SolvedLevel> = None;
    let mut failure = None;
    for spec in levels {
        let warm = if config.warm_start { previous.as_ref() } else { None };
        let level = match solve_level(&problem, spec, &config.solver, config.boundary_data, warm) {
            Ok(l) if l.report.converged => l,
            Ok(l) => {
                failure = Some(Error::NotConverged { iterations: l.report.iterations, residual: l.report.residual });
                reports.push(level_report(&l, None));
                break;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let reference = ReferenceMoments::compute(&level.mesh, &exact, &problem.densities, config.reference_order)?;
        let errors = moment_errors(&level.mesh, &reference, &level.mean, &level.second)?;
        table.rows.push(TableRow {
            h: level.mesh.cell_size(),
            s: level.grid.spacing(),
            errors,
            iterations: level.report.iterations,
            seconds: level.seconds(),
        });
        reports.push(level_report(&level, Some(errors)));
        previous = Some(level);
    }
    table.complete = failure.is_none();
    fs::write(config.output.join("table.csv"), table.to_csv())?;
    write_json(
        &config.output.join("report.json"),
        &serde_json::json!({ "problem": problem.id, "complete": table.complete, "levels": reports }),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(table),
    }
}

/// Summary of a single-level run.
#[derive(Debug, Clone, Serialize)]
pub struct SingleReport {
    pub problem: String,
    pub level: usize,
    pub nx: usize,
    pub cells: usize,
    pub unknowns: usize,
    pub sg_seconds: f64,
    pub solver: SolveReport,
    pub errors: Option<MomentErrors>,
    pub mc: Option<McReport>,
    /// MC wall time over SG wall time.
    pub speedup: Option<f64>,
    /// L² norm of MC mean minus SG mean.
    pub mc_discrepancy_l2: Option<f64>,
    pub files: Vec<String>,
}

fn level_at(config: &ExperimentConfig, problem: &Problem, index: usize) -> Result<LevelSpec> {
    let levels = config.levels(problem)?;
    levels.get(index).copied().ok_or_else(|| {
        Error::Config(format!("level {index} out of range; the schedule has {} levels", levels.len()))
    })
}

fn l2_norm_p1(mesh: &Mesh, v: &[f64]) -> f64 {
    let m = crate::fem_spatial::assemble_mass_full(mesh);
    crate::par::dot(v, &m.matvec(v)).max(0.0).sqrt()
}

/// Solves one level and writes its statistics. With mode `both` it also
/// runs Monte Carlo on the same mesh and writes the discrepancy.
pub fn run_single(config: &ExperimentConfig, index: usize) -> Result<SingleReport> {
    let problem = config.problem()?;
    let spec = level_at(config, &problem, index)?;
    let dir = config.output.join(format!("level_{index}"));
    fs::create_dir_all(&dir)?;
    let clock = Instant::now();
    let level = solve_level(&problem, spec, &config.solver, config.boundary_data, None)?;
    let sg_seconds = clock.elapsed().as_secs_f64();
    let mut files = Vec::new();
    let mut put = |name: &str, f: &StatField| -> Result<()> {
        f.write_csv(&level.mesh, create(&dir.join(name))?)?;
        files.push(name.to_string());
        Ok(())
    };
    put("mean.csv", &level.mean)?;
    put("second_moment.csv", &level.second)?;
    put("variance.csv", &level.variance)?;
    if config.write_vtk {
        level.mesh.write_vtk(
            create(&dir.join("statistics.vtk"))?,
            &[("mean", &level.mean.values), ("variance", &level.variance.values)],
        )?;
        files.push("statistics.vtk".into());
    }
    let errors = match &problem.exact {
        Some(exact) => {
            let r = ReferenceMoments::compute(&level.mesh, exact, &problem.densities, config.reference_order)?;
            Some(moment_errors(&level.mesh, &r, &level.mean, &level.second)?)
        }
        None => None,
    };
    let mut timing = format!(
        "phase,seconds\nassemble,{}\nsolve,{}\nstatistics,{}\nsg_total,{}\n",
        level.assemble_seconds, level.solve_seconds, level.statistics_seconds, sg_seconds
    );
    let (mut mc, mut speedup, mut disc) = (None, None, None);
    if config.mode == RunMode::Both {
        let (acc, rep) = mc_run(
            &level.mesh,
            problem.dims(),
            &problem.coefficient,
            &problem.source,
            &problem.obstacle,
            &problem.dirichlet,
            &config.mc_config(&problem),
            &config.solver,
        )?;
        let diff: Vec<f64> = acc.mean.iter().zip(&level.mean.values).map(|(a, b)| a - b).collect();
        write_nodal_csv(
            &level.mesh,
            &[("mc_mean", &acc.mean), ("mc_variance", &acc.variance())],
            create(&dir.join("mc_statistics.csv"))?,
        )?;
        write_nodal_csv(&level.mesh, &[("mc_minus_sg_mean", &diff)], create(&dir.join("discrepancy.csv"))?)?;
        files.push("mc_statistics.csv".into());
        files.push("discrepancy.csv".into());
        timing += &format!("mc_setup,{}\nmc_sampling,{}\nmc_total,{}\n", rep.setup_seconds, rep.sampling_seconds, rep.seconds);
        disc = Some(l2_norm_p1(&level.mesh, &diff));
        speedup = Some(rep.seconds / sg_seconds);
        mc = Some(rep);
    }
    fs::write(dir.join("timing.csv"), timing)?;
    files.push("timing.csv".into());
    files.push("report.json".into());
    let report = SingleReport {
        problem: problem.id.clone(),
        level: index,
        nx: spec.nx,
        cells: spec.cells,
        unknowns: level.system.len(),
        sg_seconds,
        solver: level.report.clone(),
        errors,
        mc,
        speedup,
        mc_discrepancy_l2: disc,
        files,
    };
    write_json(&dir.join("report.json"), &report)?;
    if !level.report.converged {
        return Err(Error::NotConverged { iterations: level.report.iterations, residual: level.report.residual });
    }
    Ok(report)
}

/// Monte Carlo on the mesh of one level.
pub fn run_mc(config: &ExperimentConfig, index: usize) -> Result<McReport> {
    let problem = config.problem()?;
    let spec = level_at(config, &problem, index)?;
    let mesh = build_uniform_mesh(problem.rect, spec.nx, spec.ny)?;
    let dir = config.output.join(format!("level_{index}"));
    fs::create_dir_all(&dir)?;
    let (acc, rep) = mc_run(
        &mesh,
        problem.dims(),
        &problem.coefficient,
        &problem.source,
        &problem.obstacle,
        &problem.dirichlet,
        &config.mc_config(&problem),
        &config.solver,
    )?;
    acc.mean_field().write_csv(&mesh, create(&dir.join("mc_mean.csv"))?)?;
    acc.variance_field().write_csv(&mesh, create(&dir.join("mc_variance.csv"))?)?;
    fs::write(dir.join("mc_timing.csv"), rep.timing_csv())?;
    write_json(&dir.join("mc_report.json"), &rep)?;
    Ok(rep)
}

/// Human-readable summary of the problem and its levels.
pub fn describe(config: &ExperimentConfig) -> Result<String> {
    let problem = config.problem()?;
    let mut s = format!(
        "problem {}: domain [{}, {}] x [{}, {}], {} random dimensions, exact solution: {}\n",
        problem.id,
        problem.rect.x_min,
        problem.rect.x_max,
        problem.rect.y_min,
        problem.rect.y_max,
        problem.dims(),
        if problem.exact.is_some() { "yes" } else { "no" }
    );
    s += &format!("solver: {:?}, tol {:e}, mode {:?}\n", config.solver.method, config.solver.tol, config.mode);
    s += "level      nx      ny   cells          h          s        I        J       I*J\n";
    for (k, l) in config.levels(&problem)?.iter().enumerate() {
        let (mesh, grid) = discretize(&problem, *l)?;
        s += &format!(
            "{k:5} {:7} {:7} {:7} {:10.4e} {:10.4e} {:8} {:8} {:9}\n",
            l.nx,
            l.ny,
            l.cells,
            mesh.cell_size(),
            grid.spacing(),
            mesh.n_interior(),
            grid.n_basis(),
            mesh.n_interior() * grid.n_basis()
        );
    }
    Ok(s)
}
