use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qtime::scenario::{
    run_scenario, spectrum_report, sweep_residual, verify_report, QuerySpec, RunOptions, Scenario,
};
use qtime::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_VERIFICATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "qtime", version, about = "Clock-conditioned history-state simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every query of a scenario and write CSV tables plus a manifest.
    Run(Common),
    /// Check the two-event probability identities against the oracle.
    Verify(Common),
    /// Constraint residuals for a family of Gaussian clock envelopes.
    SweepResidual {
        #[command(flatten)]
        common: Common,
        /// Envelope widths; defaults to the scenario's residual_sweep query or 1,4,16.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<f64>>,
    },
    /// Eigenvalues of the constraint operator.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    scenario: PathBuf,
    #[arg(long, default_value = "qtime-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long, hide = true)]
    inject_fault: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            tolerance_scale: self.tolerance_scale,
            substeps: self.substeps,
            inject_fault: self.inject_fault,
        }
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_numerical_guard() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    })
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run(c) => {
            let scenario = Scenario::load(&c.scenario)?;
            let out = run_scenario(&scenario, &c.options())?;
            out.write(&c.out_dir)?;
            for a in &out.artifacts {
                println!("{}", c.out_dir.join(&a.name).display());
            }
            println!("{}", c.out_dir.join("manifest.json").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(c) => {
            let scenario = Scenario::load(&c.scenario)?;
            let report = verify_report(&scenario, &c.options())?;
            print!("{}", report.render());
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
            write(&c.out_dir.join("verify.json"), &(json + "\n"))?;
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFICATION)
            })
        }
        Command::SweepResidual { common: c, widths } => {
            let scenario = Scenario::load(&c.scenario)?;
            let widths = widths
                .or_else(|| {
                    scenario.file.queries.iter().find_map(|q| match q {
                        QuerySpec::ResidualSweep { widths } => Some(widths.clone()),
                        _ => None,
                    })
                })
                .unwrap_or_else(|| vec![1.0, 4.0, 16.0]);
            let art = sweep_residual(&scenario, &widths, &c.options())?;
            write(&c.out_dir.join(&art.name), &art.contents)?;
            print!("{}", art.contents);
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectrum(c) => {
            let scenario = Scenario::load(&c.scenario)?;
            let report = spectrum_report(&scenario)?;
            write(&c.out_dir.join("spectrum.csv"), &report.to_csv())?;
            println!("{} eigenvalues", report.eigenvalues.len());
            match report.max_deviation() {
                Some(dev) => {
                    let tol = 1e-9 * c.tolerance_scale;
                    println!("max |eigenvalue - (omega_j + E_m)| = {dev:.3e} (tolerance {tol:.1e})");
                    Ok(if dev <= tol {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_VERIFICATION)
                    })
                }
                None => Ok(ExitCode::SUCCESS),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which is reserved for failed verification
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}
