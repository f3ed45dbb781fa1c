//! Command-line runner: simulate scenarios, export delivery paths, and
//! report run statistics.
//!
//! Exit codes: 0 success, 1 configuration error (unreadable or invalid
//! scenario, missing run artifacts), 2 runtime error.

use clap::{Parser, Subcommand};
use dronecov::analysis::{uniformity_report, Heatmap};
use dronecov::coverage::feasibility_thresholds;
use dronecov::scenario::ScenarioFile;
use dronecov::sim::{run, MetricsDoc, RunMetrics};
use dronecov::trajectory::{ensure_cell_coverage, straight_paths, PathSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dronecov",
    version,
    about = "Multi-purpose drone delivery and coverage simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics, coverage series, and heatmaps.
    Simulate {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Independent replicas to run and merge (seeds base, base+1, ...).
        #[arg(long, default_value_t = 1)]
        replicas: u32,
    },
    /// Build the coverage-complete path set and export it for inspection.
    Paths {
        #[arg(long)]
        config: PathBuf,
        /// Output text file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a finished run directory.
    Report {
        /// Directory written by `simulate`.
        #[arg(long)]
        run: PathBuf,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

/// Write to stdout, ignoring a closed pipe (e.g. piping into `head`).
fn emit(text: std::fmt::Arguments) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            replicas,
        } => cmd_simulate(&config, &out, seed, replicas),
        Command::Paths { config, out } => cmd_paths(&config, &out),
        Command::Report { run } => cmd_report(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    ScenarioFile::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    replicas: u32,
) -> Result<(), CliError> {
    if replicas < 1 {
        return Err(CliError::Config("--replicas: need at least 1".into()));
    }
    let mut scenario = load_scenario(config)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let base_seed = scenario.seed;

    // resolve once for early validation and warnings
    let first = scenario
        .resolve(Some(base_seed))
        .map_err(|e| CliError::Config(e.to_string()))?;
    for w in &first.warnings {
        eprintln!("warning: {w}");
    }

    let merged = run_replicas(&scenario, base_seed, replicas)?;

    std::fs::create_dir_all(out.join("coverage"))
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        std::fs::write(out.join(name), bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))
    };

    let doc = merged.to_doc();
    let json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
    write("metrics.json", format!("{json}\n").as_bytes())?;
    write(
        "resolved_config.json",
        format!("{}\n", scenario.to_json()).as_bytes(),
    )?;

    let means: Vec<f64> = merged.cells.iter().map(|c| c.mean_occupancy).collect();
    let heatmap = Heatmap::from_grid(&first.sim.grid, &means);
    let mut pgm = Vec::new();
    heatmap
        .write_pgm(&mut pgm)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write("heatmap.p5.pgm", &pgm)?;
    let mut tsv = String::from("cell\tmean_occupancy\n");
    for c in &merged.cells {
        writeln!(tsv, "{}\t{}", c.index, c.mean_occupancy).unwrap();
    }
    write("heatmap.tsv", tsv.as_bytes())?;

    if let Some(series) = &merged.series {
        for (i, cell_series) in series.iter().enumerate() {
            let mut body = String::from("t_s\tp_l\n");
            for (t, p) in cell_series {
                writeln!(body, "{t}\t{p}").unwrap();
            }
            write(&format!("coverage/cell_{:03}.tsv", i + 1), body.as_bytes())?;
        }
    }

    outln!(
        "simulate: {} replica(s), t_m = {:.1} s, eta = {:.4}, late fraction = {:.4}",
        replicas,
        merged.t_m_s,
        merged.eta,
        merged.late_fraction
    );
    outln!("wrote {}", out.display());
    Ok(())
}

fn run_replicas(
    scenario: &ScenarioFile,
    base_seed: u64,
    replicas: u32,
) -> Result<RunMetrics, CliError> {
    let n_par = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let mut results: Vec<Option<RunMetrics>> = (0..replicas).map(|_| None).collect();
    for chunk_start in (0..replicas).step_by(n_par) {
        let chunk_end = (chunk_start + n_par as u32).min(replicas);
        let outputs: Vec<Result<RunMetrics, CliError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (chunk_start..chunk_end)
                .map(|i| {
                    scope.spawn(move || {
                        let resolved = scenario
                            .resolve(Some(base_seed.wrapping_add(i as u64)))
                            .map_err(|e| CliError::Config(e.to_string()))?;
                        run(&resolved.sim).map_err(|e| CliError::Runtime(e.to_string()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replica thread panicked"))
                .collect()
        });
        for (offset, result) in outputs.into_iter().enumerate() {
            results[chunk_start as usize + offset] = Some(result?);
        }
    }
    // merge in replica order: deterministic regardless of thread timing
    let mut merged: Option<RunMetrics> = None;
    for m in results.into_iter().map(|m| m.expect("all replicas ran")) {
        merged = Some(match merged {
            None => m,
            Some(acc) => acc.merge(m),
        });
    }
    Ok(merged.expect("at least one replica"))
}

fn build_paths(scenario: &ScenarioFile) -> Result<(PathSet, dronecov::SimConfig), CliError> {
    let resolved = scenario
        .resolve(None)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sim = resolved.sim;
    let depot = sim.grid.region.depot();
    let straight = straight_paths(depot, &sim.houses, sim.grid.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let covered = ensure_cell_coverage(straight).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((covered, sim))
}

fn cmd_paths(config: &Path, out: &Path) -> Result<(), CliError> {
    let scenario = load_scenario(config)?;
    let (set, _sim) = build_paths(&scenario)?;
    if !set.uncovered_cells().is_empty() {
        return Err(CliError::Runtime(format!(
            "coverage predicate failed for cells {:?}",
            set.uncovered_cells()
        )));
    }
    let mut doc = String::new();
    writeln!(
        doc,
        "# dronecov paths: {} houses, {} cells",
        set.paths.len(),
        set.grid.cell_count()
    )
    .unwrap();
    for p in &set.paths {
        writeln!(
            doc,
            "path house {} length_m {} waypoints {}",
            p.house_index,
            p.total_length_m,
            p.waypoints.len()
        )
        .unwrap();
        for w in &p.waypoints {
            writeln!(doc, "  waypoint {} {}", w.x, w.y).unwrap();
        }
        for c in &p.crossings {
            writeln!(
                doc,
                "  crossing cell {} s_in {} s_out {}",
                c.cell_index, c.s_in_m, c.s_out_m
            )
            .unwrap();
        }
    }
    writeln!(doc, "# per-cell crossing lengths").unwrap();
    for cell in &set.grid.cells {
        writeln!(
            doc,
            "cell {} length_m {}",
            cell.index,
            set.cell_crossing_length(cell.index)
        )
        .unwrap();
    }
    std::fs::write(out, doc)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    outln!("wrote {}", out.display());
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<(), CliError> {
    let metrics_path = run_dir.join("metrics.json");
    let config_path = run_dir.join("resolved_config.json");
    let metrics_text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", metrics_path.display())))?;
    let doc: MetricsDoc = serde_json::from_str(&metrics_text)
        .map_err(|e| CliError::Config(format!("{}: {e}", metrics_path.display())))?;
    let scenario = load_scenario(&config_path)?;
    let resolved = scenario
        .resolve(None)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sim = resolved.sim;

    let m = sim.packages;
    let replicas = (doc.delivery_times_s.len() / m.max(1)).max(1);
    outln!("run: {}", run_dir.display());
    outln!(
        "packages per replica: {m}   replicas: {replicas}   drones: {}   policy: {:?}",
        sim.drones,
        sim.policy
    );
    outln!("t_m: {:.1} s", doc.t_m_s);
    outln!(
        "lower bound: {:.1} s   upper bound: {:.1} s",
        doc.lower_bound_s,
        doc.upper_bound_s
    );
    outln!(
        "eta: {:.4}   (guaranteed floor 1/(1 + D/2m) = {:.4})",
        doc.eta,
        dronecov::efficiency_bound(m, sim.drones)
    );
    outln!(
        "late fraction (threshold {} s): {:.4}",
        scenario.late_threshold_s,
        doc.late_fraction
    );

    let means: Vec<f64> = doc.cells.iter().map(|c| c.mean_occupancy).collect();
    let areas: Vec<f64> = sim.grid.cells.iter().map(|c| c.area_m2).collect();
    match uniformity_report(&means, &areas) {
        Ok(rep) => outln!(
            "uniformity: max relative deviation {:.4}, chi-square {:.4}, density CoV {:.4}",
            rep.max_rel_deviation,
            rep.chi_square,
            rep.coefficient_of_variation
        ),
        Err(e) => outln!("uniformity: unavailable ({e})"),
    }

    // Speed-range feasibility from the observed per-cell gap intervals: do the
    // configured speed limits leave enough range to steer p_l to p*?
    let restricted = dronecov::sim::restricted_lengths_for(&sim);
    let mut checked = 0usize;
    let mut infeasible = Vec::new();
    for cell in &doc.cells {
        let l = restricted.get(cell.index - 1).copied().unwrap_or(0.0);
        if let (Some(dmin), Some(dmax)) = (cell.delta_min_s, cell.delta_max_s) {
            if l > 0.0 {
                checked += 1;
                let th = feasibility_thresholds(l, sim.target.p_star, dmin, dmax);
                if !th.satisfied_by(&sim.bounds) {
                    infeasible.push(cell.index);
                }
            }
        }
    }
    if checked == 0 {
        outln!("speed-range feasibility: no cells with observed gap intervals");
    } else if infeasible.is_empty() {
        outln!("speed-range feasibility: TRUE for all {checked} cells with observed gaps");
    } else {
        outln!(
            "speed-range feasibility: FALSE for {} of {} cells (cells {:?})",
            infeasible.len(),
            checked,
            infeasible
        );
    }
    Ok(())
}
