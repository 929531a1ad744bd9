use std::fs;
use std::path::{Path, PathBuf};

use epm_core::chain::{displacement_stats, simulate, Trajectory, MAX_DISPLACEMENT_SIGMA};
use epm_core::correlation::{
    empirical_correlation, exact_correlation, fit_decay, write_correlation_csv, FitReport,
};
use epm_core::kernel::{assemble_forward_log, Direction};
use epm_core::mather::{
    competitor, objective_report, sweep, write_sweep_csv, CompetitorSpec, DiscreteMeasure,
};
use epm_core::{Error, ModelParams, SolvedModel, TorusGrid};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, TrajectoryFormat};
use crate::{exit_code, Command};

type Result<T> = std::result::Result<T, Error>;

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Files written by one command, with their hashes for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| {
            Error::Usage(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::Internal(format!("serializing {name}: {e}")))?;
        bytes.push(b'\n');
        self.put(name, bytes)
    }

    fn manifest(&mut self, cmd: &Command, cfg: &RunConfig, status: u8) -> Result<()> {
        let config = serde_json::to_value(cfg).map_err(|e| Error::Internal(e.to_string()))?;
        let canonical = serde_json::to_vec(&config).map_err(|e| Error::Internal(e.to_string()))?;
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(name, hash)| json!({ "file": name, "sha256": hash }))
            .collect();
        let manifest = json!({
            "tool": "epm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": cmd.name(),
            "seed": cfg.seed,
            "exit_code": status,
            "config_sha256": sha256_hex(&canonical),
            "config": config,
            "outputs": files,
        });
        self.json("manifest.json", &manifest)
    }
}

pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<u8> {
    let (params, grid) = cfg.validate()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let status = match dispatch(cmd, cfg, &params, &grid, &mut out) {
        Ok(s) => s,
        Err(e) if exit_code(&e) == 2 => {
            // numerical failure: leave a flagged record next to the manifest
            out.json(
                "failure.json",
                &json!({ "converged": false, "command": cmd.name(), "error": e.to_string() }),
            )?;
            out.manifest(cmd, cfg, 2)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    out.manifest(cmd, cfg, status)?;
    Ok(status)
}

fn dispatch(
    cmd: &Command,
    cfg: &RunConfig,
    params: &ModelParams,
    grid: &TorusGrid,
    out: &mut Outputs,
) -> Result<u8> {
    match cmd {
        Command::Solve => solve(cfg, params, grid, out),
        Command::Gap => gap(cfg, params, grid, out),
        Command::Simulate => simulate_cmd(cfg, params, grid, out),
        Command::Correlate { trajectory } => correlate(cfg, params, grid, trajectory.as_deref(), out),
        Command::Objective => objective(cfg, params, grid, out),
        Command::Sweep => sweep_cmd(cfg, params, out),
        Command::KernelDump => kernel_dump(cfg, params, grid, out),
    }
}

fn solve_model(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid) -> Result<SolvedModel> {
    SolvedModel::solve(params, grid, &cfg.solve_options())
}

fn solve(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid, out: &mut Outputs) -> Result<u8> {
    let model = solve_model(cfg, params, grid)?;
    let gap = model.estimate_gap()?;
    let mut summary = serde_json::to_value(model.summary(&gap)).map_err(|e| Error::Internal(e.to_string()))?;
    summary["converged"] = Value::Bool(gap.converged);
    out.json("summary.json", &summary)?;
    let mut fields = Vec::new();
    model.write_fields_csv(&mut fields)?;
    out.put("fields.csv", fields)?;
    Ok(if gap.converged { 0 } else { 2 })
}

fn gap(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid, out: &mut Outputs) -> Result<u8> {
    let model = solve_model(cfg, params, grid)?;
    let gap = model.estimate_gap()?;
    out.json("gap.json", &gap)?;
    Ok(if gap.converged { 0 } else { 2 })
}

fn trajectory_for(cfg: &RunConfig, model: &SolvedModel) -> Result<Trajectory> {
    let kernel = match cfg.kernel {
        Direction::Forward => &model.kernel,
        Direction::Backward => &model.backward_kernel,
    };
    simulate(kernel, model.stationary(), cfg.trajectory_length, cfg.seed)
}

fn simulate_cmd(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid, out: &mut Outputs) -> Result<u8> {
    let model = solve_model(cfg, params, grid)?;
    let traj = trajectory_for(cfg, &model)?;
    let mut bytes = Vec::new();
    let name = match cfg.trajectory_format {
        TrajectoryFormat::Binary => {
            traj.write_binary(&mut bytes)?;
            "trajectory.bin"
        }
        TrajectoryFormat::Csv => {
            traj.write_csv(&mut bytes)?;
            "trajectory.csv"
        }
    };
    out.put(name, bytes)?;
    let sigma = params.sigma();
    let reliable = sigma < MAX_DISPLACEMENT_SIGMA;
    if !reliable {
        eprintln!(
            "warning: kernel width h*sqrt(epsilon) = {sigma} >= {MAX_DISPLACEMENT_SIGMA}; \
             minimal-image displacement statistics are biased by wrapping"
        );
    }
    let stats = match displacement_stats(&traj) {
        Ok(s) => serde_json::to_value(s).map_err(|e| Error::Internal(e.to_string()))?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    out.json(
        "displacement.json",
        &json!({
            "kernel": cfg.kernel,
            "seed": cfg.seed,
            "steps": traj.steps(),
            "sigma": sigma,
            "reliable": reliable,
            "expected_mean": params.momentum().iter().map(|p| -params.h() * p).collect::<Vec<_>>(),
            "stats": stats,
        }),
    )?;
    Ok(0)
}

fn correlate(
    cfg: &RunConfig,
    params: &ModelParams,
    grid: &TorusGrid,
    trajectory: Option<&Path>,
    out: &mut Outputs,
) -> Result<u8> {
    let model = solve_model(cfg, params, grid)?;
    let traj = match trajectory {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| {
                Error::Usage(format!("missing trajectory file {}: {e}", path.display()))
            })?;
            let states = Trajectory::read_binary(std::io::BufReader::new(file), *grid)?;
            Trajectory {
                grid: *grid,
                direction: cfg.kernel,
                seed: cfg.seed,
                states,
            }
        }
        None => trajectory_for(cfg, &model)?,
    };
    let kernel = match cfg.kernel {
        Direction::Forward => &model.kernel,
        Direction::Backward => &model.backward_kernel,
    };
    let (f, g) = cfg.observables(grid)?;
    let exact = exact_correlation(kernel, model.stationary(), &f, &g, cfg.n_max)?;
    let empirical = empirical_correlation(&traj, &f, &g, cfg.n_max)?;
    let mut csv = Vec::new();
    write_correlation_csv(&mut csv, Some(&exact), Some(&empirical))?;
    out.put("correlation.csv", csv)?;

    let gap = epm_core::estimate_gap(kernel, model.stationary(), cfg.gap_tol, cfg.solve_options().gap_max_iter)?;
    let fit = match fit_decay(&exact.values, cfg.fit_options()) {
        Ok(fit) => serde_json::to_value(FitReport::new(&fit, gap.lambda2_modulus))
            .map_err(|e| Error::Internal(e.to_string()))?,
        Err(e) => {
            eprintln!("warning: no decay fit: {e}");
            json!({ "error": e.to_string(), "lambda2_modulus_reference": gap.lambda2_modulus })
        }
    };
    out.json("fit.json", &fit)?;
    Ok(if gap.converged { 0 } else { 2 })
}

fn objective(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid, out: &mut Outputs) -> Result<u8> {
    let model = solve_model(cfg, params, grid)?;
    let report = objective_report(&model)?;
    let mut value = serde_json::to_value(&report).map_err(|e| Error::Internal(e.to_string()))?;
    if cfg.competitors > 0 {
        let mut best = f64::INFINITY;
        for r in 0..cfg.competitors {
            let spec = CompetitorSpec::Dirichlet {
                seed: cfg.seed.wrapping_add(r as u64),
            };
            let k = competitor(&spec, &model)?;
            let obj = DiscreteMeasure::new(&k, Some(&model.forward_operator))?.objective(params)?;
            best = best.min(obj);
        }
        value["competitors"] = json!(cfg.competitors);
        value["competitor_min_objective"] = json!(best);
        value["minimality_margin"] = json!(best - report.objective);
    }
    out.json("objective.json", &value)?;
    Ok(0)
}

fn sweep_cmd(cfg: &RunConfig, params: &ModelParams, out: &mut Outputs) -> Result<u8> {
    if cfg.sweep.is_empty() {
        return Err(Error::Config {
            field: "sweep".into(),
            message: "needs at least one [epsilon, h] pair".into(),
        });
    }
    let rows = sweep(params, &cfg.sweep, cfg.grid_points, &cfg.solve_options());
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows)?;
    out.put("sweep.csv", csv)?;
    out.json("sweep.json", &rows)?;
    let mut status = 0;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("warning: row eps={} h={} failed: {e}", r.epsilon, r.h);
            status = 2;
        } else if !r.gap_converged {
            status = 2;
        }
    }
    Ok(status)
}

fn kernel_dump(cfg: &RunConfig, params: &ModelParams, grid: &TorusGrid, out: &mut Outputs) -> Result<u8> {
    let a = assemble_forward_log(params, grid, cfg.cutoff_sigmas)?;
    let mut csv = Vec::new();
    a.write_csv(&mut csv)?;
    out.put("operator.csv", csv)?;
    let sums = a.row_sums();
    out.json(
        "operator_summary.json",
        &json!({
            "domain": format!("{:?}", a.domain()).to_lowercase(),
            "max_log_entry": a.max_log_entry(),
            "max_row_spread": a.max_row_spread(),
            "row_sum_min": sums.iter().copied().fold(f64::INFINITY, f64::min),
            "row_sum_max": sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }),
    )?;
    Ok(0)
}
