//! Subcommand implementations. Each writes its artifacts plus a snapshot of
//! the effective configuration into the output directory.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use heston_hjb::evaluator::{compare_policies, estimate_cost, estimate_policy_cost, CostEstimate};
use heston_hjb::hjb::{refinement_study, solve_backward, Grid2D, HjbError, SolutionField, StepDiagnostics};
use heston_hjb::model::{validate, Check, ValidationReport};
use heston_hjb::policy::{Policy, PolicySpec};
use heston_hjb::sde::{simulate, summarize, BatchSummary, SdeError};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Effective configuration plus the locations it refers to.
pub struct Context {
    pub config: RunConfig,
    /// Directory that relative field paths in feedback policies resolve against.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_with(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let path = self.out(name);
        let io_err = |source| CliError::Output {
            path: path.clone(),
            source,
        };
        let file = File::create(&path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn prepare_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Output {
            path: self.out_dir.clone(),
            source,
        })?;
        let mut snapshot = self.config.clone();
        snapshot.output.dir = self.out_dir.clone();
        self.write_json("config.json", &snapshot)?;
        Ok(())
    }
}

/// Outcome of a command: files written and lines for the run log.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

fn hjb_error(e: HjbError) -> CliError {
    match e {
        HjbError::DegenerateGrid(_)
        | HjbError::InvalidScheme(_)
        | HjbError::FieldFormat(_)
        | HjbError::BoundaryModeMismatch(_) => CliError::config(e),
        HjbError::PicardDivergence { .. } | HjbError::SingularLinearSystem(_) => CliError::numerical(e),
    }
}

fn sde_error(e: SdeError) -> CliError {
    match e {
        SdeError::InvalidConfig(_) | SdeError::ConfigMismatch(_) | SdeError::Model(_) => CliError::config(e),
        SdeError::Policy(_) => CliError::numerical(e),
    }
}

/// Model checks, failing with a config error on any hypothesis violation.
fn checked_model(cfg: &RunConfig) -> Result<ValidationReport, CliError> {
    let report = validate(&cfg.model, &cfg.bounds, &cfg.cost);
    report.ensure_ok().map_err(CliError::config)?;
    Ok(report)
}

fn warnings(report: &ValidationReport) -> Vec<String> {
    report
        .warnings()
        .map(|c: &Check| format!("warning: {}: {}", c.name, c.detail))
        .collect()
}

#[derive(Serialize)]
struct SectionCheck {
    section: &'static str,
    ok: bool,
    detail: String,
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    ok: bool,
    model: &'a ValidationReport,
    sections: Vec<SectionCheck>,
}

pub fn validate_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let report = validate(&cfg.model, &cfg.bounds, &cfg.cost);
    let mut sections = Vec::new();
    let mut push = |section, r: Result<(), String>| {
        sections.push(SectionCheck {
            section,
            ok: r.is_ok(),
            detail: r.err().unwrap_or_default(),
        })
    };
    if let Some(init) = &cfg.init {
        push("init", init.check().map_err(|e| e.to_string()));
    }
    if let Some(grid) = &cfg.grid {
        push("grid", Grid2D::new(grid).map(|_| ()).map_err(|e| e.to_string()));
    }
    push("scheme", cfg.scheme.check().map_err(|e| e.to_string()));
    if let Some(sim) = &cfg.sim {
        push("sim", sim.check().map_err(|e| e.to_string()));
    }
    for spec in &cfg.policies {
        let r = match spec.resolve(None, &cfg.cost, &cfg.bounds, cfg.scheme.tie_rule) {
            Ok(p) => p.check(&cfg.bounds, cfg.model.horizon).map_err(|e| e.to_string()),
            Err(_) if spec.is_feedback() => Ok(()),
            Err(e) => Err(e.to_string()),
        };
        push("policies", r);
    }
    let ok = report.is_ok() && sections.iter().all(|s| s.ok);
    let path = ctx.write_json(
        "validation.json",
        &ValidateOutput {
            ok,
            model: &report,
            sections,
        },
    )?;
    for c in &report.checks {
        println!("{:<20} {:?} {}", c.name, c.status, c.detail);
    }
    if !ok {
        return Err(CliError::Config("validation failed; see validation.json".into()));
    }
    Ok(Outcome {
        files: vec![path],
        notes: warnings(&report),
    })
}

#[derive(Serialize)]
struct SolveDiagnostics<'a> {
    grid: &'a Grid2D,
    n_levels: usize,
    total_picard_iterations: usize,
    max_residual: f64,
    all_converged: bool,
    steps: &'a [StepDiagnostics],
}

fn solve(cfg: &RunConfig) -> Result<SolutionField, CliError> {
    let grid = Grid2D::new(cfg.grid()?).map_err(hjb_error)?;
    solve_backward(&cfg.model, &cfg.cost, &cfg.bounds, &grid, &cfg.scheme).map_err(hjb_error)
}

pub fn solve_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let report = checked_model(cfg)?;
    let sol = solve(cfg)?;
    if !sol.is_finite() {
        return Err(CliError::Numerical("solution contains non-finite values".into()));
    }
    let field = ctx.write_with("field.csv", |w| sol.write_csv(w))?;
    let diag = ctx.write_json(
        "diagnostics.json",
        &SolveDiagnostics {
            grid: &sol.grid,
            n_levels: sol.n_levels(),
            total_picard_iterations: sol.diagnostics.iter().map(|d| d.picard_iterations).sum(),
            max_residual: sol.diagnostics.iter().map(|d| d.residual).fold(0.0, f64::max),
            all_converged: sol.diagnostics.iter().all(|d| d.converged),
            steps: &sol.diagnostics,
        },
    )?;
    Ok(Outcome {
        files: vec![field, diag],
        notes: warnings(&report),
    })
}

/// Resolves policy descriptors, loading each referenced field once and
/// solving in-process at most once.
fn resolve_policies(ctx: &Context, specs: &[PolicySpec]) -> Result<(Vec<Policy>, Vec<String>), CliError> {
    let cfg = &ctx.config;
    let mut loaded: HashMap<PathBuf, Arc<SolutionField>> = HashMap::new();
    let mut in_process: Option<Arc<SolutionField>> = None;
    let mut notes = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let solution = match spec {
            PolicySpec::Feedback { field: Some(file) } => {
                let path = ctx.base_dir.join(file);
                if !loaded.contains_key(&path) {
                    let f = File::open(&path)
                        .map_err(|e| CliError::Config(format!("cannot open field {}: {e}", path.display())))?;
                    let sol = SolutionField::read_csv(BufReader::new(f)).map_err(hjb_error)?;
                    notes.push(format!("loaded field {}", path.display()));
                    loaded.insert(path.clone(), Arc::new(sol));
                }
                Some(loaded[&path].clone())
            }
            PolicySpec::Feedback { field: None } => {
                if in_process.is_none() {
                    in_process = Some(Arc::new(solve(cfg)?));
                    notes.push("solved field in-process".into());
                }
                in_process.clone()
            }
            _ => None,
        };
        let policy = spec
            .resolve(solution, &cfg.cost, &cfg.bounds, cfg.scheme.tie_rule)
            .map_err(CliError::config)?;
        policy.check(&cfg.bounds, cfg.model.horizon).map_err(CliError::config)?;
        out.push(policy);
    }
    Ok((out, notes))
}

#[derive(Serialize)]
struct SimulateOutput {
    summary: BatchSummary,
    cost: CostEstimate,
}

pub fn simulate_cmd(ctx: &Context, write_paths: bool) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let report = checked_model(cfg)?;
    let spec = cfg
        .policies
        .first()
        .ok_or_else(|| CliError::Config("`policies` is empty; simulate uses its first entry".into()))?;
    let (policies, mut notes) = resolve_policies(ctx, std::slice::from_ref(spec))?;
    let policy = &policies[0];
    let (init, sim) = (cfg.init()?, cfg.sim()?);
    let mut files = Vec::new();
    let output = if write_paths {
        let batch = simulate(&cfg.model, &cfg.bounds, policy, init, sim).map_err(sde_error)?;
        files.push(ctx.write_with("paths.csv", |w| batch.write_csv(w))?);
        SimulateOutput {
            summary: BatchSummary::of_batch(&batch),
            cost: estimate_cost(&batch, &cfg.cost),
        }
    } else {
        SimulateOutput {
            summary: summarize(&cfg.model, &cfg.bounds, policy, init, sim).map_err(sde_error)?,
            cost: estimate_policy_cost(&cfg.model, &cfg.cost, &cfg.bounds, init, policy, sim)
                .map_err(CliError::numerical)?,
        }
    };
    files.insert(0, ctx.write_json("summary.json", &output)?);
    println!(
        "{}: J = {:.6} (se {:.2e}), E X1(T) = {:.6}",
        output.summary.policy, output.cost.mean, output.cost.std_error, output.summary.x1_terminal.mean
    );
    notes.extend(warnings(&report));
    Ok(Outcome { files, notes })
}

pub fn compare_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let report = checked_model(cfg)?;
    let (policies, mut notes) = resolve_policies(ctx, &cfg.policies)?;
    let table = compare_policies(&cfg.model, &cfg.cost, &cfg.bounds, cfg.init()?, &policies, cfg.sim()?).map_err(
        |e| match e {
            heston_hjb::evaluator::EvalError::TooFewPolicies => CliError::config(e),
            heston_hjb::evaluator::EvalError::Simulation(s) => sde_error(s),
            other => CliError::numerical(other),
        },
    )?;
    let path = ctx.write_with("comparison.csv", |w| table.write_csv(w))?;
    println!("{table}");
    notes.extend(warnings(&report));
    Ok(Outcome {
        files: vec![path],
        notes,
    })
}

pub fn convergence_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let report = checked_model(cfg)?;
    let base = Grid2D::new(cfg.grid()?).map_err(hjb_error)?;
    let rows = refinement_study(
        &cfg.model,
        &cfg.cost,
        &cfg.bounds,
        &base,
        &cfg.scheme,
        cfg.convergence.levels,
        &cfg.convergence.window,
    )
    .map_err(hjb_error)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let path = ctx.write_with("convergence.csv", |w| {
        writeln!(w, "nx,ny,n_time_steps,dx,dy,h,diff_to_next,order")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{:.16e},{:.16e},{:.16e},{},{}",
                r.nx,
                r.ny,
                r.n_time_steps,
                r.dx,
                r.dy,
                r.h,
                opt(r.diff_to_next),
                opt(r.order)
            )?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!(
            "nx {:>4} ny {:>4} N {:>5}  diff {:>10}  order {}",
            r.nx,
            r.ny,
            r.n_time_steps,
            r.diff_to_next.map(|d| format!("{d:.3e}")).unwrap_or_else(|| "-".into()),
            r.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(Outcome {
        files: vec![path],
        notes: warnings(&report),
    })
}

/// Plain-text log holding everything that is allowed to vary between runs.
pub fn write_run_log(
    ctx: &Context,
    command: &str,
    started: std::time::SystemTime,
    outcome: &Result<Outcome, CliError>,
) -> io::Result<()> {
    let elapsed = started.elapsed().unwrap_or_default();
    let stamp = started.duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
    let mut w = BufWriter::new(File::create(ctx.out("run.log"))?);
    writeln!(w, "command: {command}")?;
    writeln!(w, "started_unix: {}.{:03}", stamp.as_secs(), stamp.subsec_millis())?;
    writeln!(w, "elapsed_s: {:.3}", elapsed.as_secs_f64())?;
    match outcome {
        Ok(o) => {
            writeln!(w, "status: ok")?;
            for f in &o.files {
                writeln!(w, "wrote: {}", f.display())?;
            }
            for n in &o.notes {
                writeln!(w, "{n}")?;
            }
        }
        Err(e) => writeln!(w, "status: error (exit {}): {e}", e.exit_code())?,
    }
    w.flush()
}

pub fn resolve_base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}
