mod analyze;
mod campaign;
mod checks;
mod config;
mod report;
mod writer;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use campaign::{Campaign, HaltPolicy, Outcome};
use config::{
    output_root, AnalysisConfig, CampaignConfig, Mode, Overrides, UsageError, OUTPUT_ROOT_ENV,
};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "tmc", version = campaign::CODE_VERSION, about = "Tensor-assisted Monte Carlo for decohered toric-code entanglement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Budget {
    /// Stop cleanly after this many seconds, leaving checkpoints to resume.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long, hide = true)]
    halt_after_checkpoints: Option<usize>,
}

impl Budget {
    fn policy(&self) -> HaltPolicy {
        HaltPolicy::new(
            self.time_budget.map(Duration::from_secs_f64),
            self.halt_after_checkpoints,
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign from a JSON config plus flag overrides.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory holding campaign directories.
        #[arg(long, env = OUTPUT_ROOT_ENV)]
        output_root: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Continue a campaign directory from its checkpoints.
    Resume {
        dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Crossing points and data collapse of one observable from a results table.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "T_l")]
        observable: String,
        #[arg(long)]
        eta: Option<f64>,
        /// Bootstrap range for eta as lo,hi.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        eta_range: Option<Vec<f64>>,
        #[arg(long)]
        degree: Option<usize>,
        /// Bootstrap repeats; 0 fits once.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Fixed critical temperature for the gamma collapse.
        #[arg(long)]
        t_c: Option<f64>,
        #[arg(long, value_delimiter = ',', num_args = 2)]
        nu_range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the engine against exact enumeration on tiny lattices.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = tmc_core::DEFAULT_CHI)]
        chi: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write oracle_check.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a campaign directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILED)
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            overrides,
            output_root: root_flag,
            budget,
        } => {
            let mut cfg = match &config {
                Some(path) => CampaignConfig::load(path)?,
                None => CampaignConfig::default(),
            };
            overrides.apply(&mut cfg);
            let dir = output_root(root_flag.as_deref(), &cfg).join(cfg.name());
            run_config(cfg, &dir, &budget.policy())
        }
        Command::Resume {
            dir,
            threads,
            budget,
        } => {
            let path = dir.join("config.json");
            let mut cfg = CampaignConfig::load(&path).map_err(|e| {
                UsageError(format!(
                    "{} is not a campaign directory: {e}",
                    dir.display()
                ))
            })?;
            if let Some(t) = threads {
                cfg.threads = t;
            }
            run_config(cfg, &dir, &budget.policy())
        }
        Command::Analyze {
            input,
            observable,
            eta,
            eta_range,
            degree,
            bootstrap,
            restarts,
            t_c,
            nu_range,
            seed,
            out,
        } => {
            let mut a = AnalysisConfig {
                observable,
                ..Default::default()
            };
            if let Some(e) = eta {
                a.eta = e;
                a.eta_range = None;
            }
            if let Some(r) = eta_range {
                a.eta_range = Some((r[0], r[1]));
            }
            if let Some(d) = degree {
                a.degree = d;
            }
            if let Some(b) = bootstrap {
                a.bootstrap_repeats = b;
            }
            if let Some(r) = restarts {
                a.n_restarts = r;
            }
            if let Some(r) = nu_range {
                a.nu_range = (r[0], r[1]);
            }
            a.t_c = t_c;
            let out_dir =
                out.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            let result = analyze::analyze(&input, &a, seed, &out_dir)?;
            print!("{}", analyze::summarize(&result.report));
            println!(
                "wrote {} and {}",
                result.report_path.display(),
                result.rescaled_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck {
            sizes,
            chi,
            seed,
            out,
        } => oracle_check(&sizes, chi, seed, out.as_deref()),
        Command::Report { dir } => {
            print!("{}", report::report(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_config(cfg: CampaignConfig, dir: &Path, halt: &HaltPolicy) -> anyhow::Result<ExitCode> {
    match cfg.mode {
        Mode::Collapse => {
            cfg.validate()?;
            let input = cfg.analysis.input.clone().ok_or_else(|| {
                UsageError("config.analysis.input: collapse mode needs a results table".into())
            })?;
            std::fs::create_dir_all(dir)?;
            writer::atomic_write(&dir.join("config.json"), &serde_json::to_vec_pretty(&cfg)?)?;
            let result = analyze::analyze(&input, &cfg.analysis, cfg.seed, dir)?;
            print!("{}", analyze::summarize(&result.report));
            Ok(ExitCode::SUCCESS)
        }
        Mode::OracleCheck => {
            cfg.validate()?;
            oracle_check(&cfg.sizes, cfg.chi, cfg.seed, Some(dir))
        }
        _ => {
            let outcome = Campaign {
                config: cfg,
                dir: dir.to_path_buf(),
                halt,
            }
            .run()?;
            match outcome {
                Outcome::Complete => {
                    println!("campaign complete: {}", dir.display());
                    Ok(ExitCode::SUCCESS)
                }
                Outcome::Incomplete => {
                    println!(
                        "campaign stopped early; continue with `tmc resume {}`",
                        dir.display()
                    );
                    Ok(ExitCode::from(EXIT_INCOMPLETE))
                }
            }
        }
    }
}

fn oracle_check(
    sizes: &[usize],
    chi: usize,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    if let Some(&l) = sizes.iter().find(|&&l| l == 0 || l > 2) {
        return Err(UsageError(format!("oracle checks support L in 1..=2, got {l}")).into());
    }
    let results = checks::oracle_checks(sizes, chi, seed)?;
    for c in &results {
        println!(
            "[{}] L={} {:<28} {:.3e} (tolerance {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.size,
            c.name,
            c.measured,
            c.tolerance
        );
    }
    if let Some(dir) = out {
        writer::atomic_write(
            &dir.join("oracle_check.json"),
            &serde_json::to_vec_pretty(&results)?,
        )?;
    }
    Ok(if results.iter().all(|c| c.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    })
}
