use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use satmimo::channel::ScenarioInstance;
use satmimo::equinet::{CenDims, DecDims, Dims, EquiWeights};
use satmimo::eval::{
    export_results, export_scenario, generate_scenario, import_scenario, overhead_counts, run_scheme, run_sweep,
    write_results, DropRecord, EvalReport, ScenarioConfig, Scheme, SchemeContext, SweepConfig,
};
use satmimo::exec::with_jobs;
use satmimo::wmmse::{sum_rate, WmmseOptions};
use satmimo::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "satmimo", version, about = "Multi-satellite MIMO precoding under statistical CSI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Cen,
    Dec,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(clap::Args)]
struct RateArgs {
    /// Monte Carlo channel samples per link.
    #[arg(long, default_value_t = 1000)]
    n_mc: usize,
    /// Seed of the rate evaluation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result row as CSV.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a geometry and synthesize a scenario file.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario settings (TOML); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short = 'S', long = "sats")]
        num_sats: Option<usize>,
        #[arg(short = 'K', long = "uts")]
        num_uts: Option<usize>,
        /// Transmit array as MXxMY, e.g. 4x4.
        #[arg(long)]
        tx_array: Option<String>,
        /// Receive array as NXxNY, e.g. 2x2.
        #[arg(long)]
        rx_array: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        power_dbw: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run one scheme on a scenario file.
    Solve {
        scheme: String,
        scenario: PathBuf,
        /// Weight container, needed by the learned schemes.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_outer: usize,
        #[command(flatten)]
        rate: RateArgs,
    },
    /// Network inference and closed-form recovery on a scenario file.
    Infer {
        #[arg(value_enum)]
        arch: ArchArg,
        weights: PathBuf,
        scenario: PathBuf,
        #[command(flatten)]
        rate: RateArgs,
    },
    /// Grid evaluation over power, satellite and terminal counts.
    Sweep {
        /// Sweep settings (TOML); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        sats: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        uts: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long)]
        drops: Option<usize>,
        #[arg(long)]
        n_mc: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cen_weights: Option<PathBuf>,
        #[arg(long)]
        dec_weights: Option<PathBuf>,
        /// Worker threads; 0 uses all cores, 1 runs sequentially.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Inter-satellite exchange counts per precoder update.
    Overhead {
        #[arg(short = 'S', long = "sats")]
        num_sats: usize,
        #[arg(short = 'K', long = "uts")]
        num_uts: usize,
        #[arg(short = 'M', long = "tx")]
        m: usize,
        #[arg(short = 'N', long = "rx")]
        n: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Check a weight container and print its manifest.
    ValidateWeights { path: PathBuf },
    /// Write a randomly initialized weight container and its manifest.
    InitWeights {
        #[arg(value_enum)]
        arch: ArchArg,
        #[arg(short = 'M', long = "tx")]
        m: usize,
        #[arg(short = 'N', long = "rx")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 2 } else { 1 })
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn parse_array(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("array size {text:?} must look like 4x4"));
    let (a, b) = text.split_once('x').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { seed, config, num_sats, num_uts, tx_array, rx_array, power_dbw, out } => {
            let mut cfg = match config {
                Some(p) => toml::from_str(&read_text(&p)?)
                    .map_err(|e| Error::Format { path: p.display().to_string(), message: e.to_string() })?,
                None => ScenarioConfig::default(),
            };
            cfg.num_sats = num_sats.unwrap_or(cfg.num_sats);
            cfg.num_uts = num_uts.unwrap_or(cfg.num_uts);
            cfg.budget_dbw = power_dbw.unwrap_or(cfg.budget_dbw);
            if let Some(t) = tx_array {
                (cfg.array.m_x, cfg.array.m_y) = parse_array(&t)?;
            }
            if let Some(r) = rx_array {
                (cfg.array.n_x, cfg.array.n_y) = parse_array(&r)?;
            }
            let scn = generate_scenario(&cfg, seed)?;
            export_scenario(&scn, &out)?;
            println!("wrote {} (S={}, K={}, M={}, N={})", out.display(), scn.num_sats, scn.num_uts, scn.m(), scn.n());
            Ok(())
        }
        Command::Solve { scheme, scenario, weights, tol, max_outer, rate } => {
            let scheme: Scheme = scheme.parse()?;
            let scn = import_scenario(&scenario)?;
            let mut ctx = SchemeContext { wmmse: WmmseOptions { tol, max_outer, ..Default::default() }, ..Default::default() };
            if scheme.needs_weights() {
                let path = weights.ok_or_else(|| Error::InvalidConfig(format!("scheme {scheme} needs --weights")))?;
                let w = EquiWeights::load(&path)?;
                match scheme {
                    Scheme::CenTfcWm => ctx.cen_weights = Some(w),
                    _ => ctx.dec_weights = Some(w),
                }
            }
            report_single(&scn, scheme, &ctx, &rate)
        }
        Command::Infer { arch, weights, scenario, rate } => {
            let w = EquiWeights::load(&weights)?;
            let scn = import_scenario(&scenario)?;
            let (scheme, ctx) = match arch {
                ArchArg::Cen => (Scheme::CenTfcWm, SchemeContext { cen_weights: Some(w), ..Default::default() }),
                ArchArg::Dec => (Scheme::DecTfcWm, SchemeContext { dec_weights: Some(w), ..Default::default() }),
            };
            report_single(&scn, scheme, &ctx, &rate)
        }
        Command::Sweep { config, power_grid, sats, uts, schemes, drops, n_mc, seed, cen_weights, dec_weights, jobs, out } => {
            let mut cfg = match config {
                Some(p) => SweepConfig::from_toml(&read_text(&p)?, &p.display().to_string())?,
                None => SweepConfig::default(),
            };
            cfg.power_grid_dbw = power_grid.unwrap_or(cfg.power_grid_dbw);
            cfg.sats_grid = sats.unwrap_or(cfg.sats_grid);
            cfg.uts_grid = uts.unwrap_or(cfg.uts_grid);
            if let Some(list) = schemes {
                cfg.schemes = list.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            cfg.n_drops = drops.unwrap_or(cfg.n_drops);
            cfg.n_mc = n_mc.unwrap_or(cfg.n_mc);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let ctx = SchemeContext {
                wmmse: cfg.wmmse_options(),
                cen_weights: cen_weights.map(|p| EquiWeights::load(&p)).transpose()?,
                dec_weights: dec_weights.map(|p| EquiWeights::load(&p)).transpose()?,
            };
            let exec = if jobs == 1 { Execution::Sequential } else { Execution::Parallel };
            let reports = with_jobs(jobs, || run_sweep(&cfg, &ctx, exec))?;
            export_results(&reports, &out)?;
            print_summary(&reports);
            let failed: usize = reports.iter().map(EvalReport::failures).sum();
            if failed > 0 {
                eprintln!("warning: {failed} scheme evaluations failed; their rows have an empty sum rate");
                for r in &reports {
                    for d in r.records.iter().filter(|d| d.error.is_some()) {
                        eprintln!("  {} S={} K={} P={} drop {}: {}", r.scheme, r.num_sats, r.num_uts, r.power_dbw, d.drop, d.error.as_deref().unwrap_or(""));
                    }
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Overhead { num_sats, num_uts, m, n, format } => {
            if format == Format::Csv {
                println!("scheme,S,K,M,N,real_scalars");
            }
            for s in Scheme::ALL {
                let c = overhead_counts(s, num_sats, num_uts, m, n);
                match format {
                    Format::Csv => println!("{s},{num_sats},{num_uts},{m},{n},{c}"),
                    Format::Text => println!("{:<12} {c}", s.name()),
                }
            }
            Ok(())
        }
        Command::ValidateWeights { path } => {
            let w = EquiWeights::load(&path)?;
            print!("{}", w.manifest());
            println!("ok: {} tensors", w.tensors().len());
            Ok(())
        }
        Command::InitWeights { arch, m, n, seed, out } => {
            let dims = match arch {
                ArchArg::Cen => Dims::Centralized(CenDims::for_arrays(m, n)),
                ArchArg::Dec => Dims::Decentralized(DecDims::for_arrays(m, n)),
            };
            let w = EquiWeights::random(dims, seed)?;
            w.save_with_manifest(&out)?;
            println!("wrote {} ({} tensors)", out.display(), w.tensors().len());
            Ok(())
        }
    }
}

fn report_single(scn: &ScenarioInstance, scheme: Scheme, ctx: &SchemeContext, rate: &RateArgs) -> Result<()> {
    let sol = run_scheme(scn, scheme, ctx)?;
    let est = sum_rate(scn, &sol, rate.n_mc, rate.seed, Execution::Sequential);
    let feasible = sol.is_feasible(scn);
    let report = EvalReport {
        scheme,
        num_sats: scn.num_sats,
        num_uts: scn.num_uts,
        power_dbw: scn.budgets_dbw.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        records: vec![DropRecord { drop: 0, seed: rate.seed, sum_rate: Some(est.mean), feasible, error: None }],
        overhead: overhead_counts(scheme, scn.num_sats, scn.num_uts, scn.m(), scn.n()),
    };
    if let Some(path) = &rate.out {
        export_results(std::slice::from_ref(&report), path)?;
    }
    match rate.format {
        Format::Csv => write_results(std::slice::from_ref(&report), std::io::stdout())?,
        Format::Text => {
            println!("scheme      {scheme}");
            println!("sum rate    {:.6} bit/s/Hz (std err {:.2e}, {} samples/link)", est.mean, est.std_err, rate.n_mc);
            println!("max excess  {:.3e} of budget", sol.max_power_excess(scn));
            println!("feasible    {feasible}");
            println!("overhead    {} real scalars per update", report.overhead);
        }
    }
    Ok(())
}

fn print_summary(reports: &[EvalReport]) {
    println!("{:<12} {:>3} {:>3} {:>7} {:>11} {:>9} {:>5} {:>5} {:>9}", "scheme", "S", "K", "P_dBW", "mean", "ci95", "viol", "fail", "overhead");
    for r in reports {
        println!(
            "{:<12} {:>3} {:>3} {:>7.1} {:>11.5} {:>9.5} {:>5} {:>5} {:>9}",
            r.scheme.name(),
            r.num_sats,
            r.num_uts,
            r.power_dbw,
            r.mean(),
            r.ci95(),
            r.violations(),
            r.failures(),
            r.overhead
        );
    }
}
