//! Command-line driver for the relay beamforming toolkit.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afrelay::analysis::verify_scenario;
use afrelay::experiment::{run_sweep, write_rows, SweepSpec};
use afrelay::forms::BeamformerPair;
use afrelay::linksim::{simulate_bf, simulate_bfa, weights_from_vector};
use afrelay::network::{ChannelFile, ScenarioFile};
use afrelay::randomization::{randomize, DEFAULT_TRIALS};
use afrelay::sdr::{DEFAULT_TOL_ABS, DEFAULT_TOL_REL};
use afrelay::{bisect_sdr, build_forms, sample_channels, ChannelSet, Exec, SdrSolution, ValidatedConfig, Variant};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "afrelay", version, about = "AF relay beamformer design: SDR, randomization, verification, link simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    /// Rank-one beamformed AF
    Bf,
    /// Beamformed Alamouti AF
    Bfa,
}

impl Scheme {
    fn variant(self) -> Variant {
        match self {
            Scheme::Bf => Variant::R1,
            Scheme::Bfa => Variant::R2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Json,
    Binary,
}

#[derive(clap::Args)]
struct Instance {
    /// Scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// Channel JSON file from `gen-channels`; sampled from --seed when absent
    #[arg(long)]
    channels: Option<PathBuf>,
    /// Channel seed used when --channels is absent
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one channel realization for a scenario
    GenChannels {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the quadratic-form matrices of an instance
    Forms {
        #[command(flatten)]
        instance: Instance,
        #[arg(long, value_enum, default_value = "json")]
        format: DumpFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the BF or BFA relaxation by bisection
    Solve {
        #[command(flatten)]
        instance: Instance,
        #[arg(long, value_enum, default_value = "bfa")]
        variant: Scheme,
        /// Relative bisection tolerance
        #[arg(long, default_value_t = DEFAULT_TOL_REL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Round a relaxation solution to a feasible beamformer pair
    Randomize {
        #[command(flatten)]
        instance: Instance,
        /// Solution JSON from `solve`; `-` or absent reads stdin
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Randomization seed
        #[arg(long = "rand-seed", default_value_t = 0)]
        rand_seed: u64,
        /// Per-trial `trial,theta,scale` CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write one CSV row per cell and scheme
    Sweep {
        /// Sweep JSON file
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the master seed of the sweep file
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the randomization count of the sweep file
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides the relative bisection tolerance of the sweep file
        #[arg(long)]
        tol: Option<f64>,
        /// CSV output (the sweep file's `output`, else stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-point summary JSON
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the tightness, bound, tail and multicast checks on one instance
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo trials per check
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_TOL_REL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the link for given beamformers and write per-user CSV rows
    Simulate {
        #[command(flatten)]
        instance: Instance,
        /// Beamformer pair JSON, or a `randomize` report
        #[arg(long)]
        beamformers: PathBuf,
        #[arg(long, value_enum, default_value = "bfa")]
        variant: Scheme,
        /// Symbols (BF) or symbol pairs (BFA)
        #[arg(long = "symbols", visible_alias = "n-sym", default_value_t = 100_000)]
        symbols: usize,
        /// Simulation seed
        #[arg(long = "sim-seed", default_value_t = 0)]
        sim_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// How a command failed; decides the exit code.
enum Failure {
    /// Malformed or invalid input.
    Input(anyhow::Error),
    Runtime(anyhow::Error),
    /// The command ran but at least one check failed.
    Checks(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn input<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Input(e.into()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        input(io::stdin().read_to_string(&mut s))?;
        return Ok(s);
    }
    input(fs::read_to_string(path).with_context(|| format!("reading {}", path.display())))
}

fn load_scenario(path: &Path) -> Result<ValidatedConfig, Failure> {
    let text = read_text(path)?;
    let file = input(ScenarioFile::from_json(&text))?;
    input(file.to_config().with_context(|| format!("scenario {}", path.display())))
}

fn load_instance(inst: &Instance) -> Result<(ValidatedConfig, ChannelSet), Failure> {
    let cfg = load_scenario(&inst.scenario)?;
    let ch = match &inst.channels {
        Some(p) => {
            let file: ChannelFile = input(serde_json::from_str(&read_text(p)?).with_context(|| format!("channels {}", p.display())))?;
            let ch = file.to_channels();
            input(ch.check(&cfg))?;
            ch
        }
        None => sample_channels(&cfg, inst.seed),
    };
    Ok((cfg, ch))
}

fn write_output(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(bytes).context("writing stdout")?,
    }
    Ok(())
}

fn write_json(out: &Option<PathBuf>, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).context("serializing")?;
    text.push('\n');
    write_output(out, text.as_bytes())
}

fn load_pair(path: &Path) -> Result<BeamformerPair, Failure> {
    let v: Value = input(serde_json::from_str(&read_text(path)?).context("beamformer JSON"))?;
    let pair = v.get("best").cloned().unwrap_or(v);
    input(serde_json::from_value(pair).context("beamformer pair"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenChannels { scenario, seed, out } => {
            let cfg = load_scenario(&scenario)?;
            let ch = sample_channels(&cfg, seed);
            write_json(&out, &serde_json::to_value(ChannelFile::from_channels(&ch, Some(seed))).context("serializing")?)
        }
        Command::Forms { instance, format, out } => {
            let (cfg, ch) = load_instance(&instance)?;
            let forms = build_forms(&cfg, &ch).context("building forms")?;
            match format {
                DumpFormat::Json => write_json(&out, &forms.to_json()),
                DumpFormat::Binary => {
                    let mut buf = Vec::new();
                    forms.write_binary(&mut buf).context("encoding forms")?;
                    write_output(&out, &buf)
                }
            }
        }
        Command::Solve { instance, variant, tol, out } => {
            if !(tol > 0.0) {
                return Err(Failure::Input(anyhow!("--tol must be positive")));
            }
            let (cfg, ch) = load_instance(&instance)?;
            let forms = build_forms(&cfg, &ch).context("building forms")?;
            let sol = bisect_sdr(&forms, variant.variant(), tol, DEFAULT_TOL_ABS).context("solving relaxation")?;
            write_json(&out, &sol.to_json())
        }
        Command::Randomize { instance, solution, trials, rand_seed, csv, out } => {
            let (cfg, ch) = load_instance(&instance)?;
            let forms = build_forms(&cfg, &ch).context("building forms")?;
            let text = read_text(solution.as_deref().unwrap_or(Path::new("-")))?;
            let v: Value = input(serde_json::from_str(&text).context("solution JSON"))?;
            let sol = input(SdrSolution::from_json(&v))?;
            let rep = input(randomize(&forms, &sol, trials, rand_seed, Exec::default()))?;
            if let Some(p) = csv {
                let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                rep.write_csv(f).context("writing trial CSV")?;
            }
            let mut v = rep.to_json();
            v["sdr_value"] = sol.value.into();
            write_json(&out, &v)
        }
        Command::Sweep { spec, seed, trials, tol, out, summary } => {
            let mut s = input(SweepSpec::from_json(&read_text(&spec)?))?;
            if let Some(x) = seed {
                s.seed = x;
            }
            if let Some(x) = trials {
                s.trials = x;
            }
            if let Some(x) = tol {
                s.tol_rel = x;
            }
            input(s.validate())?;
            let res = run_sweep(&s).context("running sweep")?;
            let mut buf = Vec::new();
            write_rows(&res.rows, &mut buf).context("writing CSV")?;
            write_output(&out.or_else(|| s.output.clone().map(PathBuf::from)), &buf)?;
            if let Some(p) = summary {
                let v = serde_json::json!({ "points": res.summary, "paired_gaps": res.gaps });
                write_json(&Some(p), &v)?;
            }
            let failed = res.rows.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed (marked in the status column)", res.rows.len());
            }
            Ok(())
        }
        Command::Verify { scenario, seed, trials, tol, out } => {
            if trials == 0 || !(tol > 0.0) {
                return Err(Failure::Input(anyhow!("--trials and --tol must be positive")));
            }
            let cfg = load_scenario(&scenario)?;
            let rep = verify_scenario(&cfg, seed, trials, tol).context("running checks")?;
            write_json(&out, &rep.to_json())?;
            if rep.passed {
                Ok(())
            } else {
                let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(Failure::Checks(format!("failed checks: {}", failed.join(", "))))
            }
        }
        Command::Simulate { instance, beamformers, variant, symbols, sim_seed, out } => {
            let (cfg, ch) = load_instance(&instance)?;
            let pair = load_pair(&beamformers)?;
            let v1 = input(weights_from_vector(cfg.kind, cfg.relays, &pair.w1))?;
            let run = match variant {
                Scheme::Bf => simulate_bf(&cfg, &ch, &v1, symbols, sim_seed),
                Scheme::Bfa => {
                    let v2 = input(weights_from_vector(cfg.kind, cfg.relays, &pair.w2))?;
                    simulate_bfa(&cfg, &ch, &v1, &v2, symbols, sim_seed)
                }
            }
            .context("simulating")?;
            let mut buf = Vec::new();
            run.write_csv(&mut buf).context("writing CSV")?;
            write_output(&out, &buf)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `afrelay --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
