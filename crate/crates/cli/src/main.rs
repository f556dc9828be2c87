use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gauss_bubbles_cli::regression::run_corpus;
use gauss_bubbles_cli::spec::parse_count;
use gauss_bubbles_cli::{run, CliError, ExperimentSpec};

#[derive(Parser)]
#[command(name = "gauss-bubbles", version, about = "Gaussian multi-bubble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// JSON experiment spec; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_count)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    antithetic: bool,
    /// Directory for report files.
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Stem of the report file names.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Record wall-clock time in the summary.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Interface perimeter of a partition.
    Perimeter {
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        /// facet, minkowski or noise.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Noise stability of a partition at correlation rho.
    NoiseStability {
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Cell moments and the moment penalty.
    Penalty {
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Maximize the moment functional at fixed volumes.
    OptimizePropeller {
        #[command(flatten)]
        opt: OptArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Minimize perimeter plus the weighted moment penalty at fixed volumes.
    MinimizePenalized {
        #[arg(long)]
        epsilon: Option<f64>,
        #[command(flatten)]
        opt: OptArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Functions on {1..m}^n: `stability` or `influences`.
    Discrete {
        action: String,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<f64>,
        /// plurality, dictator or a CSV table.
        #[arg(long)]
        function: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Round-cylinder candidates of a given Gaussian volume.
    SymmetricScan {
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        kmax: Option<usize>,
        /// inside, outside or both.
        #[arg(long)]
        orientation: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Penalized-perimeter margin of a candidate against a reference.
    StabilityCheck {
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        candidate: Option<String>,
        /// Perturb the reference by this magnitude and recalibrate.
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Also evaluate the noise-stability inequality at this rho.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        allow_any_rho: bool,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Majority on {0,1}^n against its Gaussian limit.
    CltCrosscheck {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every case of a regression corpus directory.
    Regression { corpus: PathBuf },
}

#[derive(Args, Default)]
struct OptArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Target volumes, comma separated.
    #[arg(long, value_delimiter = ',')]
    a: Option<Vec<f64>>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<u64>,
}

fn with_common(mut spec: ExperimentSpec, c: &Common) -> ExperimentSpec {
    spec.samples = c.samples;
    spec.seed = c.seed;
    spec.antithetic = c.antithetic.then_some(true);
    spec.out_dir = c.out_dir.clone();
    spec.name = c.name.clone();
    spec
}

fn flags(command: Command) -> Result<(ExperimentSpec, Common), PathBuf> {
    let mut s = ExperimentSpec::default();
    let common = match command {
        Command::Perimeter { partition, threshold, method, schedule, common } => {
            s.command = "perimeter".into();
            (s.partition, s.threshold, s.method, s.schedule) = (partition, threshold, method, schedule);
            common
        }
        Command::NoiseStability { partition, threshold, rho, common } => {
            s.command = "noise-stability".into();
            (s.partition, s.threshold, s.rho) = (partition, threshold, rho);
            common
        }
        Command::Penalty { partition, threshold, w, common } => {
            s.command = "penalty".into();
            (s.partition, s.threshold, s.w) = (partition, threshold, w);
            common
        }
        Command::OptimizePropeller { opt, common } => {
            s.command = "optimize-propeller".into();
            (s.m, s.d, s.a, s.restarts, s.max_iters) = (opt.m, opt.d, opt.a, opt.restarts, opt.max_iters);
            common
        }
        Command::MinimizePenalized { epsilon, opt, common } => {
            s.command = "minimize-penalized".into();
            s.epsilon = epsilon;
            (s.m, s.d, s.a, s.restarts, s.max_iters) = (opt.m, opt.d, opt.a, opt.restarts, opt.max_iters);
            common
        }
        Command::Discrete { action, m, n, rho, function, common } => {
            s.command = "discrete".into();
            (s.action, s.m, s.n, s.rho, s.function) = (Some(action), m, n, rho, function);
            common
        }
        Command::SymmetricScan { a, kmax, orientation, common } => {
            s.command = "symmetric-scan".into();
            (s.a, s.k_max, s.orientation) = (a.map(|v| vec![v]), kmax, orientation);
            common
        }
        Command::StabilityCheck { partition, candidate, perturb, epsilon, rho, allow_any_rho, w, common } => {
            s.command = "stability-check".into();
            (s.partition, s.candidate, s.perturb, s.epsilon, s.rho, s.w) = (partition, candidate, perturb, epsilon, rho, w);
            s.allow_any_rho = allow_any_rho.then_some(true);
            common
        }
        Command::CltCrosscheck { n, rho, common } => {
            s.command = "clt-crosscheck".into();
            (s.n, s.rho) = (n, rho);
            common
        }
        Command::Regression { corpus } => return Err(corpus),
    };
    Ok((with_common(s, &common), common))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("GAUSS_BUBBLES_THREADS") else {
        return Ok(());
    };
    let threads: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Usage(format!("GAUSS_BUBBLES_THREADS must be a positive integer, got {text:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    let (flag_spec, common) = match flags(cli.command) {
        Ok(v) => v,
        Err(corpus) => {
            let summary = run_corpus(&corpus)?;
            print!("{}", summary.table());
            return Ok(if summary.passed() { 0 } else { 4 });
        }
    };
    let spec = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let file = ExperimentSpec::from_json(&text)?;
            if file.seed.is_none() {
                return Err(CliError::Usage(format!("{} has no seed; archived specs must set one", path.display())));
            }
            if !file.command.is_empty() && file.command != flag_spec.command {
                return Err(CliError::Usage(format!(
                    "{} is a {:?} spec, not {:?}",
                    path.display(),
                    file.command,
                    flag_spec.command
                )));
            }
            file.overridden_by(flag_spec)
        }
        None => {
            let mut s = flag_spec;
            if s.seed.is_none() {
                eprintln!("warning: no --seed given, using 0");
                s.seed = Some(0);
            }
            s
        }
    };
    let start = Instant::now();
    let mut outcome = run(&spec)?;
    if common.timing {
        outcome.summary.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    let dir = PathBuf::from(spec.out_dir.clone().unwrap_or_else(|| ".".into()));
    outcome.write(&dir)?;
    print!("{}", outcome.summary_json());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
