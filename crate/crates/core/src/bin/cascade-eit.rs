use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cascade_eit::check::oracle_check;
use cascade_eit::config::{load_config, load_spectrum, LoadOptions, RunConfig};
use cascade_eit::error::Error;
use cascade_eit::fitting::{fit, resolve_init, FitProblem};
use cascade_eit::parallel::with_threads;
use cascade_eit::spectrum::{extract_features, per_m_components, predict_dip_position, simulate, Engine, Signal};
use cascade_eit::units::constants_table;

#[derive(Parser)]
#[command(name = "cascade-eit", version, about = "Cascade EIT and dark-fluorescence lineshape engine")]
struct Cli {
    /// Worker threads for the spectrum engine.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file, or `preset:NAME` for a bundled preset.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    engine: Option<Engine>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scan and write CSV and JSON.
    Simulate(Common),
    /// Fit the configured free parameters to a measured trace.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Measured spectrum (CSV).
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the probe detuning of the two-photon dip.
    Dip {
        #[arg(long)]
        config: PathBuf,
        /// Coupling detuning in MHz (overrides the configuration).
        #[arg(long, allow_hyphen_values = true)]
        delta2: Option<f64>,
        /// Also simulate ρ22 and report the dip found in it.
        #[arg(long)]
        measure: bool,
    },
    /// Compare the closed form against the full steady-state solve.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write one spectrum per |M| channel.
    Components(Common),
    /// Print the physical constants table.
    Constants,
}

enum Failure {
    Engine(Error),
    FitNotConverged,
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Engine(e) => match e {
                Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Unit { .. }
                | Error::IncompatibleDimensions { .. }
                | Error::NonPositiveWaist(_)
                | Error::InvalidInput(_)
                | Error::Domain { .. }
                | Error::UnsupportedBranch(_)
                | Error::Csv(_) => 2,
                Error::SingularSystem
                | Error::QuadratureNotConverged { .. }
                | Error::NoDipFound
                | Error::FewerThanTwoPeaks(_) => 3,
                Error::Io(_) | Error::Json(_) => 1,
            },
            Failure::FitNotConverged => 4,
            Failure::CheckFailed => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Engine(e) => e.kind(),
            Failure::FitNotConverged => "FitNotConverged",
            Failure::CheckFailed => "OracleCheckFailed",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Engine(e) => e.to_string(),
            Failure::FitNotConverged => "fit stopped at the evaluation cap before converging".into(),
            Failure::CheckFailed => "closed form and full solve disagree beyond tolerance".into(),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = load_config(&common.config)?;
    if let Some(e) = common.engine {
        cfg.scan.engine = e;
    }
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn report_written(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let cs = cfg.scenario.channels()?;
            let spec = simulate(&cfg.scenario, &cs, &cfg.scan)?;
            let (csv, json) = spec.write(&cfg.output.dir, &cfg.output.stem)?;
            report_written(&[&csv, &json]);
        }
        Command::Components(common) => {
            let cfg = load(&common)?;
            let cs = cfg.scenario.channels()?;
            for comp in per_m_components(&cfg.scenario, &cs, &cfg.scan)? {
                let m = comp.metadata.abs_m.unwrap_or(0);
                let (csv, json) = comp.write(&cfg.output.dir, &format!("{}_m{m:02}", cfg.output.stem))?;
                report_written(&[&csv, &json]);
            }
        }
        Command::Fit { common, data } => {
            let cfg = load(&common)?;
            let fc = cfg
                .fit
                .clone()
                .ok_or_else(|| Error::Validation {
                    key: "fit".into(),
                    message: "configuration has no [fit] section".into(),
                })?;
            let measured = load_spectrum(
                &data,
                LoadOptions {
                    resonance_cm: Some(cfg.scenario.system.omega21),
                    channel: Some(fc.channel),
                },
            )?;
            let mut fp = FitProblem::new(
                cfg.scenario.clone(),
                cfg.scan.clone(),
                &measured,
                fc.channel,
                fc.free.clone(),
                fc.bounds.clone(),
            )?;
            fp.max_evaluations = fc.max_evaluations;
            let init = resolve_init(&fp, &fc.init)?;
            let result = fit(&fp, &init)?;

            std::fs::create_dir_all(&cfg.output.dir).map_err(Error::from)?;
            let report = cfg.output.dir.join(format!("{}_fit.json", cfg.output.stem));
            std::fs::write(&report, result.to_json()? + "\n").map_err(Error::from)?;

            // forward-simulate both channels at the best point
            let best = fp.scenario_at(&result.best());
            let mut scan = cfg.scan.clone();
            scan.rho22 = true;
            scan.rho33 = true;
            let spec = simulate(&best, &best.channels()?, &scan)?;
            let (csv, json) = spec.write(&cfg.output.dir, &format!("{}_bestfit", cfg.output.stem))?;
            report_written(&[&report, &csv, &json]);
            for p in &result.params {
                match p.sensitivity {
                    Some(s) => println!("{} = {:.6} ± {:.2e} {}", p.name, p.value, s, p.unit),
                    None => println!("{} = {:.6} {}", p.name, p.value, p.unit),
                }
            }
            println!(
                "residual norm {:.6e} after {} evaluations",
                result.residual_norm, result.evaluations
            );
            if !result.converged {
                return Err(Failure::FitNotConverged);
            }
        }
        Command::Dip { config, delta2, measure } => {
            let cfg = load_config(&config)?;
            let sys = &cfg.scenario.system;
            let d2 = delta2.unwrap_or(cfg.scan.delta2);
            let predicted = predict_dip_position(d2, sys.omega21, sys.omega32, cfg.scan.doppler);
            println!("{predicted:.1} MHz");
            if measure {
                let mut scan = cfg.scan.clone();
                scan.delta2 = d2;
                scan.rho22 = true;
                let spec = simulate(&cfg.scenario, &cfg.scenario.channels()?, &scan)?;
                let f = extract_features(&spec, Signal::Rho22)?;
                println!("simulated rho22 dip: {:.1} MHz", f.dip_position);
            }
        }
        Command::OracleCheck { config } => {
            let cfg = load_config(&config)?;
            let g2_max = cfg.scenario.channels()?.channels.iter().map(|c| c.g2).fold(0.0, f64::max);
            let report = oracle_check(&cfg.scenario.system, g2_max)?;
            print!("{}", report.render());
            if !report.pass {
                return Err(Failure::CheckFailed);
            }
        }
        Command::Constants => print!("{}", constants_table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    let outcome = match cli.threads {
        Some(n) => with_threads(n, move || run(cli.command)),
        None => run(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            if json_errors {
                let obj = serde_json::json!({
                    "error": f.kind(),
                    "message": f.message(),
                    "exit_code": code,
                });
                eprintln!("{obj}");
            } else {
                eprintln!("error: {}", f.message());
            }
            ExitCode::from(code)
        }
    }
}
