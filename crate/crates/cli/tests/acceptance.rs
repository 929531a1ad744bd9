//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use epm_core::chain::{displacement_stats, simulate};
use epm_core::correlation::{empirical_correlation, exact_correlation, fit_decay, FitOptions};
use epm_core::mather::{
    competitor, max_trig_holonomy, objective_report, sweep, CompetitorSpec, DiscreteMeasure,
};
use epm_core::torus::weighted_mean;
use epm_core::{
    apply_f, apply_f_star, assemble_backward, assemble_forward, weighted_inner, ModelParams,
    PotentialSpec, ScalarField, SolveOptions, SolvedModel, TorusGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn cosine(eps: f64, h: f64, p: f64) -> ModelParams {
    ModelParams::new(eps, h, vec![p], PotentialSpec::cosine(1, 0, 1.0)).unwrap()
}

fn free(eps: f64, h: f64, p: Vec<f64>) -> ModelParams {
    ModelParams::free(eps, h, p).unwrap()
}

fn solve(params: &ModelParams, m: usize) -> Result<SolvedModel, String> {
    let grid = TorusGrid::new(params.dim(), m).map_err(err)?;
    SolvedModel::solve(params, &grid, &SolveOptions::default()).map_err(err)
}

fn c1_free_values() -> Check {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let cases = [
        (free(1.0, 1.0, vec![0.0]), 64, -half_ln_2pi, 1e-9),
        (free(1.0, 1.0, vec![1.0]), 64, -0.5 - half_ln_2pi, 1e-9),
        (free(1.0, 1.0, vec![0.0, 0.0]), 16, -2.0 * half_ln_2pi, 1e-8),
    ];
    let mut worst: f64 = 0.0;
    for (p, m, want, tol) in cases {
        let got = solve(&p, m)?.lambda();
        ensure!((got - want).abs() <= tol, "n={} P={:?}: lambda {got} vs {want}", p.dim(), p.momentum());
        worst = worst.max((got - want).abs());
    }
    Ok(format!("max |lambda - closed form| = {worst:.1e}"))
}

fn c2_transpose() -> Check {
    let sets = [
        (free(1.0, 1.0, vec![0.0]), 64),
        (free(0.5, 0.7, vec![1.0]), 64),
        (cosine(0.5, 0.5, 0.0), 128),
        (cosine(0.5, 0.5, 0.5), 128),
        (cosine(0.2, 0.3, -0.8), 128),
    ];
    let (mut rel, mut dl): (f64, f64) = (0.0, 0.0);
    for (p, m) in &sets {
        let grid = TorusGrid::new(1, *m).unwrap();
        let a = assemble_forward(p, &grid, 12.0).map_err(err)?;
        let b = assemble_backward(p, &grid, 12.0).map_err(err)?;
        for i in 0..*m {
            for j in 0..*m {
                let (x, y) = (b.entry(i, j), a.entry(j, i));
                let scale = x.abs().max(y.abs());
                if scale > 0.0 {
                    rel = rel.max((x - y).abs() / scale);
                }
            }
        }
        let s = solve(p, *m)?;
        dl = dl.max((s.forward.lambda - s.backward.lambda).abs());
    }
    ensure!(rel <= 1e-13, "transpose relative defect {rel:e}");
    ensure!(dl <= 1e-10, "forward/backward lambda gap {dl:e}");
    Ok(format!("transpose defect {rel:.1e}, |lambda - lambda_bar| {dl:.1e}"))
}

fn random_field(g: TorusGrid, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::new(g, (0..g.size()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

fn c3_structural() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut w = [0.0f64; 6];
    for (p, m) in [(cosine(0.5, 0.5, 0.5), 96), (cosine(0.2, 0.4, 0.0), 96), (free(0.3, 0.6, vec![0.7]), 64)] {
        let s = solve(&p, m)?;
        let th = s.stationary();
        w[0] = w[0].max(s.kernel.row_sum_defect());
        w[1] = w[1].max(s.kernel.stationarity_defect());
        w[2] = w[2].max(s.backward_kernel.row_sum_defect());
        for _ in 0..100 {
            let f = random_field(s.grid, &mut rng);
            let g = random_field(s.grid, &mut rng);
            let lhs = weighted_inner(&f, &apply_f(&s.kernel, &g).map_err(err)?, th).map_err(err)?;
            let rhs = weighted_inner(&g, &apply_f_star(&s.backward_kernel, &f).map_err(err)?, th).map_err(err)?;
            w[3] = w[3].max((lhs - rhs).abs() / (f.max_abs() * g.max_abs()));
            let m0 = weighted_mean(&g, th).map_err(err)?;
            let m1 = weighted_mean(&apply_f_star(&s.backward_kernel, &g).map_err(err)?, th).map_err(err)?;
            w[4] = w[4].max((m0 - m1).abs());
        }
        let mu = DiscreteMeasure::of_solution(&s);
        w[5] = w[5].max(max_trig_holonomy(&mu, p.h()).map_err(err)? * p.h());
    }
    let limits = [1e-12, 1e-10, 1e-10, 1e-12, 1e-12, 1e-10];
    let names = ["K row sums", "theta K = theta", "Q row sums", "adjointness", "mean preservation", "holonomy*h"];
    for k in 0..6 {
        ensure!(w[k] <= limits[k], "{}: {:e} > {:e}", names[k], w[k], limits[k]);
    }
    Ok(format!(
        "worst: K {:.0e}, stat {:.0e}, Q {:.0e}, adj {:.0e}, mean {:.0e}, hol {:.0e}",
        w[0], w[1], w[2], w[3], w[4], w[5]
    ))
}

fn resolved_m(p: &ModelParams) -> usize {
    let need = (3.0 / p.sigma()).ceil() as usize;
    need.max(64).div_ceil(32) * 32
}

fn c4_gap() -> Check {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for eps in [0.05, 0.3, 1.0] {
        for h in [0.05, 0.3, 1.0] {
            for (amp, p) in [(1.0, 0.0), (0.5, 0.5)] {
                let params = ModelParams::new(eps, h, vec![p], PotentialSpec::cosine(1, 0, amp)).unwrap();
                let s = solve(&params, resolved_m(&params))?;
                let g = s.estimate_gap().map_err(err)?;
                ensure!(g.converged, "eps={eps} h={h} P={p}: gap estimate did not converge ({g:?})");
                ensure!(g.lambda2_modulus <= 1.0 - 1e-3, "eps={eps} h={h}: |lambda2| = {}", g.lambda2_modulus);
                worst = worst.max(g.lambda2_modulus);
                count += 1;
            }
        }
    }
    let mut dev: f64 = 0.0;
    for (eps, h) in [(1.0, 1.0), (0.25, 0.5), (0.05, 0.25), (0.5, 0.2)] {
        let p = free(eps, h, vec![0.0]);
        let s = solve(&p, resolved_m(&p))?;
        let g = s.estimate_gap().map_err(err)?;
        let want = (-2.0 * PI * PI * p.sigma().powi(2)).exp();
        ensure!(g.converged && (g.lambda2_modulus - want).abs() <= 1e-6, "free eps={eps} h={h}: {} vs {want}", g.lambda2_modulus);
        dev = dev.max((g.lambda2_modulus - want).abs());
    }
    Ok(format!("{count} configs, max |lambda2| {worst:.4}; free-case deviation {dev:.1e}"))
}

fn c5_decay() -> Check {
    let s = solve(&cosine(0.05, 0.05, 0.0), 320)?;
    let gap = s.estimate_gap().map_err(err)?;
    ensure!(gap.converged, "gap estimate did not converge");
    let l2 = gap.lambda2_modulus;
    let f = ScalarField::from_fn(s.grid, |x| (2.0 * PI * x[0]).sin());
    let c = exact_correlation(&s.kernel, s.stationary(), &f, &f, 60).map_err(err)?;
    let norm = c.values[0];
    for n in 5..=60 {
        let r = c.values[n].abs() / norm;
        ensure!(r <= 1.05 * l2.powi(n as i32), "lag {n}: {r:e} > 1.05 * {l2}^{n}");
    }
    let fit = fit_decay(&c.values, FitOptions::default()).map_err(err)?;
    let rel = (fit.rate / l2 - 1.0).abs();
    ensure!(rel < 0.01, "fitted rate {} vs |lambda2| {l2}", fit.rate);

    let t = solve(&cosine(0.4, 0.5, 0.5), 64)?;
    let f = ScalarField::from_fn(t.grid, |x| (2.0 * PI * x[0]).sin() + 0.3 * (6.0 * PI * x[0]).cos());
    let g = ScalarField::from_fn(t.grid, |x| (x[0] - 0.3).powi(2));
    let a = exact_correlation(&t.kernel, t.stationary(), &f, &g, 60).map_err(err)?;
    let b = exact_correlation(&t.backward_kernel, t.stationary(), &g, &f, 60).map_err(err)?;
    let sym = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure!(sym <= 1e-12, "forward/backward asymmetry {sym:e}");
    Ok(format!("rate {:.5} vs |lambda2| {l2:.5} (rel {rel:.1e}); symmetry {sym:.1e}", fit.rate))
}

fn c6_monte_carlo() -> Check {
    let start = Instant::now();
    let t = 1_000_000;
    let s = solve(&cosine(0.5, 0.5, 0.0), 64)?;
    let traj = simulate(&s.kernel, s.stationary(), t, 1).map_err(err)?;
    let occ = traj.occupation();
    let tv = 0.5
        * occ.values().iter().zip(s.stationary().values()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let bound = 3.0 * (64.0 / t as f64).sqrt();
    ensure!(tv <= bound, "occupation TV {tv} > {bound}");

    let s = solve(&cosine(0.2, 0.2, 0.0), 128)?;
    let f = ScalarField::from_fn(s.grid, |x| (2.0 * PI * x[0]).sin() + 0.5 * (2.0 * PI * x[0]).cos());
    let exact = exact_correlation(&s.kernel, s.stationary(), &f, &f, 50).map_err(err)?;
    let traj = simulate(&s.kernel, s.stationary(), t, 2).map_err(err)?;
    let emp = empirical_correlation(&traj, &f, &f, 50).map_err(err)?;
    let se = emp.stderr.as_ref().unwrap();
    let hits = (0..=50).filter(|&n| (emp.values[n] - exact.values[n]).abs() <= 3.0 * se[n]).count();
    ensure!(hits as f64 >= 0.95 * 51.0, "only {hits}/51 lags within 3 stderr");

    let mut drifts = Vec::new();
    for (eps, h, p) in [(0.05, 0.25, 1.0), (0.05, 0.2, -0.5)] {
        let params = free(eps, h, vec![p]);
        // minimal-image displacements are unbiased only if the step law fits in (-1/2, 1/2)
        ensure!(params.sigma() < 0.15 && (h * p).abs() + 4.0 * params.sigma() < 0.5, "step law too wide");
        let s = solve(&params, 128)?;
        let st = displacement_stats(&simulate(&s.kernel, s.stationary(), t, 3).map_err(err)?).map_err(err)?;
        let z = (st.mean[0] + h * p) / st.stderr[0];
        ensure!(z.abs() <= 3.0, "drift {} vs {} ({z:.2} stderr)", st.mean[0], -h * p);
        drifts.push(z);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs <= 60.0, "took {secs:.1}s");
    Ok(format!(
        "TV {tv:.2e} <= {bound:.2e}; {hits}/51 lags covered; drift z = {:.2}, {:.2}; {secs:.1}s",
        drifts[0], drifts[1]
    ))
}

fn c7_objective() -> Check {
    let mut worst: f64 = 0.0;
    for (p, m) in [
        (free(1.0, 1.0, vec![0.0]), 64),
        (free(0.4, 0.5, vec![1.0]), 64),
        (cosine(0.5, 0.5, 0.0), 128),
        (cosine(0.5, 0.5, 0.5), 128),
    ] {
        let rep = objective_report(&solve(&p, m)?).map_err(err)?;
        ensure!(rep.identity_defect.abs() <= 2e-4, "objective {} vs lambda/h {}", rep.objective, rep.lambda_over_h);
        worst = worst.max(rep.identity_defect.abs());
    }
    let start = Instant::now();
    let s = solve(&cosine(0.5, 0.5, 0.0), 128)?;
    let base = DiscreteMeasure::of_solution(&s).objective(&s.params).map_err(err)?;
    let mut margin = f64::INFINITY;
    for seed in 0..200 {
        let k = competitor(&CompetitorSpec::Dirichlet { seed }, &s).map_err(err)?;
        let obj = DiscreteMeasure::new(&k, Some(&s.forward_operator))
            .map_err(err)?
            .objective(&s.params)
            .map_err(err)?;
        ensure!(obj >= base - 1e-6, "competitor {seed}: {obj} < {base}");
        margin = margin.min(obj - base);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs <= 300.0, "competitors took {secs:.1}s");
    Ok(format!("identity defect {worst:.1e}; 200 competitors, min margin {margin:.3}"))
}

fn c8_mather_limit() -> Check {
    let start = Instant::now();
    let pairs = [(0.4, 0.4), (0.2, 0.2), (0.1, 0.1), (0.05, 0.05)];
    let rows = sweep(&cosine(0.4, 0.4, 0.0), &pairs, 384, &SolveOptions::default());
    for r in &rows {
        ensure!(r.error.is_none(), "row eps={} failed: {:?}", r.epsilon, r.error);
        ensure!(r.theta_argmax_x == vec![0.0], "eps={}: theta argmax at {:?}", r.epsilon, r.theta_argmax_x);
    }
    let l: Vec<f64> = rows.iter().map(|r| r.lambda_over_h).collect();
    ensure!(l.windows(2).all(|w| w[1] < w[0]), "lambda/h not decreasing: {l:?}");
    ensure!((l[3] + 1.0).abs() <= 0.15, "last lambda/h {}", l[3]);
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs <= 300.0, "sweep took {secs:.1}s");
    Ok(format!(
        "lambda/h = {:.4}, {:.4}, {:.4}, {:.4} (m=384, {secs:.1}s)",
        l[0], l[1], l[2], l[3]
    ))
}

fn run_cli(cmd: &str, config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_epm"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", &threads.to_string(), "--seed", "17"])
        .output()
        .map_err(err)?;
    ensure!(status.status.success(), "{cmd} --threads {threads} failed: {}", String::from_utf8_lossy(&status.stderr));
    Ok(())
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(err)?
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    Ok(files)
}

fn c9_determinism() -> Check {
    let tmp = tempfile::TempDir::new().map_err(err)?;
    let cfg = json!({
        "dimension": 1, "grid_points": 128, "epsilon": 0.3, "h": 0.3, "P": [0.4],
        "potential": {"kind": "trig", "terms": [{"freq": [1], "cos": 1.0}, {"freq": [2], "sin": 0.3}]},
        "trajectory_length": 200000, "n_max": 40, "competitors": 5,
        "sweep": [[0.4, 0.4], [0.3, 0.3], [0.2, 0.2]]
    });
    let path = tmp.path().join("config.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).map_err(err)?;
    let cmds = ["solve", "gap", "simulate", "correlate", "objective", "sweep", "kernel-dump"];
    let mut files = 0;
    for cmd in cmds {
        let a = tmp.path().join(format!("{cmd}_t1"));
        let b = tmp.path().join(format!("{cmd}_t4"));
        run_cli(cmd, &path, &a, 1)?;
        run_cli(cmd, &path, &b, 4)?;
        let (fa, fb) = (dir_bytes(&a)?, dir_bytes(&b)?);
        ensure!(fa.len() == fb.len() && !fa.is_empty(), "{cmd}: different file sets");
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            ensure!(na == nb && ba == bb, "{cmd}: {na} differs between 1 and 4 threads");
        }
        files += fa.len();
    }
    Ok(format!("{} commands, {files} files byte-identical across --threads 1/4", cmds.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("1 free-case effective value", c1_free_values),
        ("2 transpose/backward consistency", c2_transpose),
        ("3 structural identities", c3_structural),
        ("4 spectral gap", c4_gap),
        ("5 exponential decay of correlations", c5_decay),
        ("6 Monte Carlo consistency", c6_monte_carlo),
        ("7 objective identity and minimality", c7_objective),
        ("8 Mather limit trend", c8_mather_limit),
        ("9 determinism across thread counts", c9_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
