//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any of them fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bcdcert::certificate::{default_check_tol, fit_rate, IterationRecord};
use bcdcert::cli::{cmd_report, cmd_run, RunConfigFile, EXIT_OK, EXIT_VIOLATION};
use bcdcert::numerics::{fd_check_gradients, probe_lipschitz_x, Region, DEFAULT_FD_STEP};
use bcdcert::problem::value_at;
use bcdcert::problems::{joint_solve_oracle, CoupledQuadratic, TightQuadratic};
use bcdcert::strategies::{backtracking_gradient_x, exact_min_x, fixed_step_gradient_x};
use bcdcert::trace::{render_trace_csv, trace_rows, verify_trace, Summary};
use bcdcert::{
    check_step, make_problem, solve, BacktrackParams, BlockPoint, Objective, Problem, ProblemSpec,
    RunResult, SolverConfig, XStrategy,
};

type Outcome = Result<String, String>;

fn family_spec(family: &str, seed: u64) -> ProblemSpec {
    let mut table = toml::Table::new();
    table.insert("family".into(), toml::Value::String(family.into()));
    ProblemSpec::from_table(&table).unwrap().with_seed(seed)
}

fn bundled(seed: u64) -> Vec<Problem> {
    bcdcert::problems::FAMILIES
        .iter()
        .map(|f| make_problem(&family_spec(f, seed)).unwrap())
        .collect()
}

fn criterion_1() -> Outcome {
    let q = TightQuadratic::new(4.0, 2.0, vec![1.0], vec![4.0]).map_err(|e| e.to_string())?;
    let start = BlockPoint::from_slices(&[1.0], &[]).unwrap();
    let cfg = SolverConfig {
        max_iters: 1,
        ..SolverConfig::with_strategy(XStrategy::FixedStep)
    };
    let run = solve(&q, &start, &cfg).map_err(|e| e.to_string())?;
    let rec = &run.history[0];
    let decrease = rec.f_before - rec.f_after_x;
    let rel = (decrease - 2.0).abs() / 2.0;
    if rel <= 1e-12 {
        Ok(format!("decrease {decrease}, rel err {rel:e}"))
    } else {
        Err(format!("decrease {decrease}, rel err {rel:e} > 1e-12"))
    }
}

/// Independent prefix checks of the telescoping sum and the rate bound.
fn prefix_inequalities(h: &[IterationRecord], f0: f64) -> Result<(), String> {
    let tol = default_check_tol(f0);
    let mut sum = 0.0;
    let mut min_g = f64::INFINITY;
    let mut e_max: f64 = 0.0;
    for (k, r) in h.iter().enumerate() {
        sum += r.gx_norm_sq / (2.0 * r.e_t);
        min_g = min_g.min(r.gx_norm_sq);
        e_max = e_max.max(r.e_t);
        let drop = f0 - r.f_after_y;
        if sum > drop + tol {
            return Err(format!(
                "telescope fails at T={}: {sum:e} > {drop:e}",
                k + 1
            ));
        }
        let bound = 2.0 * e_max * drop / (k + 1) as f64;
        if min_g > bound + 2.0 * e_max * tol {
            return Err(format!("rate fails at T={}: {min_g:e} > {bound:e}", k + 1));
        }
    }
    Ok(())
}

struct Cert2Stats {
    runs: usize,
    steps: usize,
    step_failures: Vec<String>,
    telescope_failures: Vec<String>,
    rate_failures: Vec<String>,
}

fn one_run(family: &str, strategy: XStrategy, seed: u64) -> Result<RunResult, String> {
    let problem = make_problem(&family_spec(family, seed)).map_err(|e| e.to_string())?;
    let start = problem.random_start(seed + 1000);
    let cfg = SolverConfig {
        max_iters: 1000,
        seed,
        ..SolverConfig::with_strategy(strategy)
    };
    solve(&problem, &start, &cfg)
        .map_err(|f| format!("{family}/{} seed {seed}: {f}", strategy.as_str()))
}

fn certification_sweep() -> Cert2Stats {
    let mut jobs = Vec::new();
    for family in bcdcert::problems::FAMILIES {
        let probe = make_problem(&family_spec(family, 0)).unwrap();
        let y0 = probe.random_start(0).y().clone();
        for strategy in XStrategy::ALL {
            if strategy.applicable(&probe, &y0) {
                jobs.push((family, strategy));
            }
        }
    }
    let per_job: Vec<Vec<Result<RunResult, String>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(family, strategy)| {
                s.spawn(move || {
                    (0..50)
                        .map(|seed| one_run(family, strategy, seed))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut stats = Cert2Stats {
        runs: 0,
        steps: 0,
        step_failures: Vec::new(),
        telescope_failures: Vec::new(),
        rate_failures: Vec::new(),
    };
    for ((family, strategy), runs) in jobs.iter().zip(per_job) {
        for (seed, run) in runs.into_iter().enumerate() {
            stats.runs += 1;
            let run = match run {
                Ok(r) => r,
                Err(e) => {
                    stats.step_failures.push(e);
                    continue;
                }
            };
            let label = format!("{family}/{} seed {seed}", strategy.as_str());
            let f0 = run.certificate.f0;
            let tol = default_check_tol(f0);
            for rec in &run.history {
                stats.steps += 1;
                if !check_step(rec, tol) {
                    stats.step_failures.push(format!("{label} t={}", rec.t));
                }
            }
            let csv = render_trace_csv(&trace_rows(&run));
            let summary = Summary::from_run(family, &run, None, &csv);
            if let Err(e) = verify_trace(&csv, Some(&summary)) {
                stats
                    .telescope_failures
                    .push(format!("{label}: report: {e}"));
            }
            if let Err(e) = prefix_inequalities(&run.history, f0) {
                if e.starts_with("telescope") {
                    stats.telescope_failures.push(format!("{label}: {e}"));
                } else {
                    stats.rate_failures.push(format!("{label}: {e}"));
                }
            }
        }
    }
    stats
}

fn first_failures(v: &[String]) -> String {
    let shown: Vec<&str> = v.iter().take(3).map(String::as_str).collect();
    format!("{} failures, e.g. {}", v.len(), shown.join("; "))
}

fn criterion_4_fit() -> Result<f64, String> {
    let history: Vec<IterationRecord> = (0..200)
        .map(|t| {
            let g = 1.0 / ((t + 1) as f64);
            IterationRecord {
                t,
                f_before: 1.0,
                f_after_x: 1.0,
                f_after_y: 1.0,
                gx_norm_sq: g,
                gy_residual: 0.0,
                e_t: 1.0,
                suff_ok: true,
            }
        })
        .collect();
    let slope = fit_rate(&history).map_err(|e| e.to_string())?;
    if (slope + 0.5).abs() <= 1e-6 {
        Ok(slope)
    } else {
        Err(format!("fitted slope {slope}"))
    }
}

fn criterion_5() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut probes = 0;
    for seed in 0..10 {
        for problem in bundled(seed) {
            let p = problem.random_start(seed + 77);
            let Some(l) = problem.lipschitz_x(p.y()) else {
                continue;
            };
            let region = Region::around(p.x(), 2.0);
            let est = probe_lipschitz_x(&problem, p.y(), &region, 100, seed)
                .map_err(|e| e.to_string())?;
            probes += 1;
            worst_ratio = worst_ratio.max(est / l);
            if est > l * (1.0 + 1e-6) {
                return Err(format!(
                    "{}: probe {est} exceeds declared {l}",
                    problem.name()
                ));
            }
        }
    }
    for problem in bundled(0) {
        for k in 0..20 {
            let p = problem.random_start(500 + k);
            let fd =
                fd_check_gradients(&problem, &p, DEFAULT_FD_STEP).map_err(|e| e.to_string())?;
            worst_fd = worst_fd.max(fd.max_rel_err);
            if !fd.passes(1e-6) {
                return Err(format!(
                    "{}: fd rel err {:e} at point {k} ({:?})",
                    problem.name(),
                    fd.max_rel_err,
                    fd.worst_index
                ));
            }
        }
    }
    Ok(format!(
        "{probes} probes, max probe/L {worst_ratio:.6}; max fd rel err {worst_fd:e}"
    ))
}

fn criterion_6() -> Outcome {
    let mut min_margin = f64::INFINITY;
    for seed in 0..20 {
        let q = CoupledQuadratic::random(1 + (seed as usize % 6), 1 + (seed as usize % 4), seed)
            .map_err(|e| e.to_string())?;
        let p = Problem::CoupledQuadratic(q.clone()).random_start(seed);
        let f = value_at(&q, &p).map_err(|e| e.to_string())?;
        let fixed = fixed_step_gradient_x(&q, &p).map_err(|e| e.to_string())?;
        let exact = exact_min_x(&q, &p).map_err(|e| e.to_string())?;
        let d_fixed = f - value_at(&q, &p.with_x(fixed.x_next).unwrap()).unwrap();
        let d_exact = f - value_at(&q, &p.with_x(exact.x_next).unwrap()).unwrap();
        min_margin = min_margin.min(d_exact - d_fixed);
        if d_exact < d_fixed - 1e-12 {
            return Err(format!(
                "seed {seed}: exact {d_exact:e} < fixed {d_fixed:e}"
            ));
        }
    }
    Ok(format!("20 states, min(exact - fixed) = {min_margin:e}"))
}

fn criterion_7() -> Outcome {
    let q = TightQuadratic::new(4.0, 2.0, vec![1.0], vec![4.0]).map_err(|e| e.to_string())?;
    let p = BlockPoint::from_slices(&[1.0], &[]).unwrap();
    let params = BacktrackParams {
        l_init: 1.0,
        growth: 2.0,
        max_rejects: 60,
    };
    let step = backtracking_gradient_x(&q, &p, &params).map_err(|e| e.to_string())?;
    if step.e_t != 4.0 {
        return Err(format!("doubling chain accepted e_t = {}", step.e_t));
    }
    let mut worst: f64 = 0.0;
    let mut iterations = 0;
    for seed in 0..10 {
        let problems = [
            Problem::CoupledQuadratic(
                CoupledQuadratic::random(4, 3, seed).map_err(|e| e.to_string())?,
            ),
            Problem::TightQuadratic(TightQuadratic::random(3, seed).map_err(|e| e.to_string())?),
        ];
        for problem in problems {
            let start = problem.random_start(seed);
            let cfg = SolverConfig {
                max_iters: 200,
                backtrack: BacktrackParams {
                    l_init: 1e-3,
                    ..params
                },
                ..SolverConfig::with_strategy(XStrategy::Backtracking)
            };
            let run = solve(&problem, &start, &cfg).map_err(|f| f.to_string())?;
            let l = problem.lipschitz_x(start.y()).unwrap();
            for rec in &run.history {
                iterations += 1;
                worst = worst.max(rec.e_t / l);
                if rec.e_t >= 2.0 * l {
                    return Err(format!(
                        "{} seed {seed}: e_t {} >= 2L = {}",
                        problem.name(),
                        rec.e_t,
                        2.0 * l
                    ));
                }
            }
        }
    }
    Ok(format!(
        "chain e_t = 4; {iterations} iterations, max e_t/L = {worst:.4}"
    ))
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let n_x = 1 + (seed as usize * 3) % 8;
        let n_y = 1 + (seed as usize * 5) % 8;
        let q = CoupledQuadratic::random(n_x, n_y, seed).map_err(|e| e.to_string())?;
        let truth = joint_solve_oracle(&q).map_err(|e| e.to_string())?;
        let start = Problem::CoupledQuadratic(q.clone()).random_start(seed);
        let cfg = SolverConfig {
            grad_tol: 1e-9,
            max_iters: 100_000,
            ..SolverConfig::with_strategy(XStrategy::ExactMin)
        };
        let run = solve(&q, &start, &cfg).map_err(|f| f.to_string())?;
        let dx = run.final_point.x() - truth.x();
        let dy = run.final_point.y() - truth.y();
        let dist = (dx.norm_squared() + dy.norm_squared()).sqrt();
        worst = worst.max(dist);
        if dist > 1e-8 {
            return Err(format!(
                "seed {seed} ({n_x}+{n_y}): distance {dist:e} after {} iterations",
                run.iterations()
            ));
        }
    }
    Ok(format!("10 instances, max distance {worst:e}"))
}

fn run_config(dir: &Path, name: &str, text: &str) -> Result<(u8, String), String> {
    let prefix = dir.join(name).to_string_lossy().into_owned();
    let text = format!("output = {prefix:?}\n{text}");
    let cfg = RunConfigFile::parse(&text, name).map_err(|e| e.to_string())?;
    let mut log = Vec::new();
    let code = cmd_run(&cfg, true, &mut log);
    Ok((code, prefix))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sink = Vec::new();

    let (code, prefix) = run_config(
        dir.path(),
        "fresh",
        "[problem]\nfamily = \"coupled_quadratic\"\nseed = 3\n[solver]\nx_strategy = \"fixed_step\"\nmax_iters = 200\n",
    )?;
    if code != EXIT_OK {
        return Err(format!("fresh run exited {code}"));
    }
    let trace = format!("{prefix}.trace.csv");
    let code = cmd_report(Path::new(&trace), &mut sink);
    if code != EXIT_OK {
        return Err(format!("report on fresh trace exited {code}"));
    }

    let text = std::fs::read_to_string(&trace).map_err(|e| e.to_string())?;
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    let v: f64 = cells[2].parse().map_err(|e| format!("{e}"))?;
    cells[2] = (v * (1.0 + 1e-9)).to_string();
    lines[3] = cells.join(",");
    std::fs::write(&trace, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    let code = cmd_report(Path::new(&trace), &mut sink);
    if code != EXIT_VIOLATION {
        return Err(format!("report on mutated trace exited {code}"));
    }

    let (code, prefix) = run_config(
        dir.path(),
        "wrong_l",
        "[problem]\nfamily = \"tight_quadratic\"\nl = 4.0\nanchor = [1.0]\ng = [4.0]\n\
         [solver]\nx_strategy = \"fixed_step\"\nlipschitz = 1.0\n[start]\nx = [1.0]\ny = []\n",
    )?;
    if code != EXIT_VIOLATION {
        return Err(format!("wrong-L run exited {code}"));
    }
    let summary: Summary = serde_json::from_str(
        &std::fs::read_to_string(format!("{prefix}.summary.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    if summary.error_kind.as_deref() != Some("SufficientDecreaseViolated") {
        return Err(format!("wrong-L summary error: {:?}", summary.error));
    }
    Ok("fresh 0, mutated 2, wrong-L 2 (SufficientDecreaseViolated)".into())
}

fn report(ok: &mut bool, id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
    let started = Instant::now();
    let outcome = f();
    let elapsed = started.elapsed();
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d.clone()),
        Err(d) => ("FAIL", d.clone()),
    };
    *ok &= outcome.is_ok();
    let over = if elapsed > budget {
        " (over runtime budget)"
    } else {
        ""
    };
    println!(
        "criterion {id} {name}: {status} [{:.2}s]{over} {detail}",
        elapsed.as_secs_f64()
    );
}

fn main() -> ExitCode {
    let mut ok = true;
    let secs = Duration::from_secs;

    report(&mut ok, "1", "tightness equality", secs(1), criterion_1);

    let mut swept = None;
    report(
        &mut ok,
        "2",
        "per-step sufficient decrease",
        secs(60),
        || {
            let stats = swept.insert(certification_sweep());
            if stats.step_failures.is_empty() {
                Ok(format!(
                    "{} runs, {} steps certified",
                    stats.runs, stats.steps
                ))
            } else {
                Err(first_failures(&stats.step_failures))
            }
        },
    );
    let stats = swept.expect("sweep ran");
    report(
        &mut ok,
        "3",
        "telescoping at every prefix",
        secs(60),
        || {
            if stats.telescope_failures.is_empty() {
                Ok(format!("{} traces re-verified", stats.runs))
            } else {
                Err(first_failures(&stats.telescope_failures))
            }
        },
    );
    report(
        &mut ok,
        "4",
        "rate bound and power-law fit",
        secs(10),
        || {
            if !stats.rate_failures.is_empty() {
                return Err(first_failures(&stats.rate_failures));
            }
            criterion_4_fit().map(|s| format!("prefix bounds hold; fitted slope {s:.9}"))
        },
    );
    report(
        &mut ok,
        "5",
        "Lipschitz probe and gradient checks",
        secs(30),
        criterion_5,
    );
    report(&mut ok, "6", "exact-min dominance", secs(5), criterion_6);
    report(&mut ok, "7", "backtracking bound", secs(5), criterion_7);
    report(&mut ok, "8", "oracle equivalence", secs(10), criterion_8);
    report(&mut ok, "9", "CLI round trip", secs(5), criterion_9);

    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
