use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use letc::calibrate::{
    calibrate_all, read_sales_csv, synthetic_dataset, write_sales_csv, CalibrationConfig, CalibrationReport,
    ProductStatus,
};
use letc::harness::{
    aggregate, doubling_segment_means, emit, run_doubling, run_grid, write_doubling, ExperimentConfig, PlannerMode,
    PolicySpec,
};
use letc::spectrum::{check_regular, solve_critical_eta, verify_null_space, SpectrumSummary, DEFAULT_ZETA};
use letc::{Error, Result};

#[derive(Parser)]
#[command(name = "letc", version, about = "Contextual dynamic pricing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// simple | general | experiment | timevarying
    #[arg(long)]
    mode: Option<PlannerMode>,
    /// Use the full grid instead of the desk-scale one.
    #[arg(long)]
    full_grid: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated regret runs over the (d, T) grid.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Doubling-trick runs over the d grid.
    Doubling {
        #[command(flatten)]
        common: Common,
        /// Total horizon.
        #[arg(long, default_value_t = 1 << 15)]
        total: usize,
        #[arg(long)]
        t0: Option<usize>,
    },
    /// Print the plan for a horizon and dimension.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long)]
        d: usize,
    },
    /// Estimate the limiting second-moment spectrum and the critical radius.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: usize,
        #[arg(long = "T", default_value_t = 1 << 15)]
        horizon: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Fit per-product ground truth and compare LetC with the offline policy.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Historical sales CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 365)]
        horizon: usize,
    },
    /// Generate synthetic history and run the calibration comparison on it.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        products: usize,
        #[arg(long, default_value_t = 1000)]
        days: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 365)]
        horizon: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if common.full_grid => ExperimentConfig::full(),
        None => ExperimentConfig::desk(),
    };
    if common.full_grid && common.config.is_some() {
        let full = ExperimentConfig::full();
        config.d_grid = full.d_grid;
        config.t_grid = full.t_grid;
        config.trials = full.trials;
    }
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    if let Some(mode) = common.mode {
        config.planner.mode = mode;
        if mode == PlannerMode::Timevarying && !config.policies.contains(&PolicySpec::Timevarying) {
            config.policies.push(PolicySpec::Timevarying);
        }
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_reports(reports: &[CalibrationReport]) {
    println!("product,status,letc,offline,oracle,improvement_pct");
    for r in reports {
        let get = |name: &str| r.revenue.iter().find(|x| x.policy == name);
        match (&r.status, get("letc"), get("offline"), get("oracle")) {
            (ProductStatus::Accepted, Some(l), Some(o), Some(b)) => println!(
                "{},accepted,{:.2},{:.2},{:.2},{:.3}",
                r.product_id, l.mean_revenue, o.mean_revenue, b.mean_revenue, l.improvement_pct
            ),
            (status, ..) => println!("{},{:?},,,,", r.product_id, status),
        }
    }
}

fn calibration_config(common: &Common, trials: usize, horizon: usize) -> CalibrationConfig {
    let mut c = CalibrationConfig {
        trials,
        horizon,
        ..Default::default()
    };
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    c
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let config = load_config(&common)?;
            let raw = run_grid(&config)?;
            let agg = aggregate(&raw, config.slope_window);
            let files = emit(&config, &raw, &agg)?;
            for s in &agg.slopes {
                match s.slope {
                    Some(v) => println!("{} d={} slope={v:.4}", s.policy.name(), s.d),
                    None => println!("{} d={} slope=n/a", s.policy.name(), s.d),
                }
            }
            println!("wrote {}", files.aggregates.display());
        }
        Command::Doubling { common, total, t0 } => {
            let mut config = load_config(&common)?;
            if let Some(t0) = t0 {
                config.t0 = t0;
            }
            let results = run_doubling(&config, total)?;
            let dir = &config.output.dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            write_doubling(&dir.join("doubling.csv"), &results, config.output.trace_stride)?;
            for (d, means) in doubling_segment_means(&results) {
                let cells: Vec<String> = means.iter().map(|(t, m)| format!("{t}:{m:.3}")).collect();
                println!("d={d} {}", cells.join(" "));
            }
        }
        Command::Plan { common, horizon, d } => {
            let config = load_config(&common)?;
            let instance = config.instance.build(d)?;
            let plan = config.planner.plan(&instance, horizon, config.base_seed)?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
        }
        Command::Spectrum {
            common,
            d,
            horizon,
            samples,
        } => {
            let config = load_config(&common)?;
            let instance = config.instance.build(d)?;
            let sigma = letc::spectrum::estimate_sigma_star(&instance, samples, config.base_seed)?;
            let summary = SpectrumSummary::from_matrix(&sigma, samples, Some(&instance.theta.null_direction()))?;
            let null_space = verify_null_space(&sigma, &instance.theta.null_direction())?;
            let eta_max = config
                .planner
                .eta_max
                .unwrap_or_else(|| letc::policy::default_eta_max(&instance.bounds));
            let mut sol = solve_critical_eta(&summary, horizon as f64, config.planner.kappa, eta_max)?;
            sol.regular = check_regular(&summary, &sol, DEFAULT_ZETA);
            let out = serde_json::json!({
                "spectrum": summary,
                "null_space": null_space,
                "critical": sol,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Calibrate {
            common,
            data,
            trials,
            horizon,
        } => {
            let records = read_sales_csv(&data)?;
            let config = calibration_config(&common, trials, horizon);
            let reports = calibrate_all(&records, &config);
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            write_json(&out.join("calibration.json"), &serde_json::to_value(&reports)?)?;
            print_reports(&reports);
        }
        Command::Evaluate {
            common,
            products,
            days,
            trials,
            horizon,
        } => {
            let config = calibration_config(&common, trials, horizon);
            let (_, records) = synthetic_dataset(products, days, config.seed)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_sales_csv(&out.join("synthetic_sales.csv"), &records)?;
            let reports = calibrate_all(&records, &config);
            write_json(&out.join("calibration.json"), &serde_json::to_value(&reports)?)?;
            print_reports(&reports);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
