use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use errt::config::{self, Config, ConfigError};
use errt::cost::Preset;
use errt::dynamics::UavState;
use errt::output::{self, OutputError};
use errt::pipeline;
use errt::sim::{self, Outcome};
use errt::{Point, VoxelWorld};

const EXIT_CONFIG: u8 = 2;
const EXIT_STALLED: u8 = 3;
const EXIT_IO: u8 = 4;

/// Exploration planning and closed-loop simulation.
///
/// Any config key can also be given as a flag, e.g. `--cost.preset greedy` or
/// `--planner.iterations=3000`; such flags override the config file.
#[derive(Parser, Debug)]
#[command(name = "errt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run missions on generated worlds and write metrics.
    Run {
        /// `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inclusive range `a..b` or a comma list.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        /// greedy, conservative, custom, a comma list, or `both`.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing results.
        #[arg(long)]
        force: bool,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write a generated ground-truth world.
    GenWorld {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run one planning call on a world file and write the result.
    PlanOnce {
        #[arg(long)]
        world: PathBuf,
        /// Start position `x,y,z` in meters; the vehicle hovers there.
        #[arg(long)]
        state: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Stalled(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::Io(e.to_string())
    }
}

type Overrides = Vec<(String, String)>;

/// Pull `--section.key value` and `--section.key=value` flags out of `args`.
fn split_key_flags(args: Vec<String>) -> Result<(Vec<String>, Overrides), Failure> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(a);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| Failure::Config(format!("flag --{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("invalid seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if seeds.is_empty() { Err(bad()) } else { Ok(seeds) }
}

fn parse_presets(s: &str) -> Result<Vec<Preset>, Failure> {
    if s == "both" {
        return Ok(vec![Preset::Greedy, Preset::Conservative]);
    }
    s.split(',')
        .map(|p| p.trim().parse::<Preset>().map_err(|_| Failure::Config(format!("unknown preset `{p}`"))))
        .collect()
}

fn overrides(mut from_flags: Vec<(String, String)>, set: &[String]) -> Result<Vec<(String, String)>, Failure> {
    for s in set {
        from_flags.push(config::parse_override(s)?);
    }
    Ok(from_flags)
}

fn refuse_existing(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::Io(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli, flags: Vec<(String, String)>) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seeds, preset, out, force, set } => {
            let seeds = parse_seeds(&seeds)?;
            let base = overrides(flags, &set)?;
            // An explicit --preset replaces any cost.preset override.
            let configs: Vec<Config> = match preset {
                None => vec![config::load_config(config.as_deref(), &base)?],
                Some(p) => parse_presets(&p)?
                    .into_iter()
                    .map(|p| {
                        let mut ov = base.clone();
                        ov.retain(|(k, _)| k != "cost.preset");
                        ov.insert(0, ("cost.preset".into(), p.name().into()));
                        config::load_config(config.as_deref(), &ov)
                    })
                    .collect::<Result<_, _>>()?,
            };
            if out.join("metrics.csv").exists() && !force {
                return Err(OutputError::Exists(out).into());
            }
            let jobs: Vec<sim::MissionConfig> = configs.iter().flat_map(|c| seeds.iter().map(|&s| c.mission(s))).collect();
            log::info!("running {} missions", jobs.len());
            let missions = sim::run_batch(&jobs).map_err(|e| Failure::Config(e.to_string()))?;
            output::write_results(&out, &configs, &missions, force)?;
            let mut stalled = Vec::new();
            for m in &missions {
                println!(
                    "seed {:>3} {:<12} {:<10} coverage {:.4} replans {:>3} t_100 {}",
                    m.seed,
                    m.preset.name(),
                    output::outcome_name(m.outcome),
                    m.final_coverage(),
                    m.replans.len(),
                    m.t_100.map(|t| format!("{t:.1} s")).unwrap_or_else(|| "-".into())
                );
                if m.outcome != Outcome::Complete {
                    stalled.push(format!("seed {} ({})", m.seed, m.preset.name()));
                }
            }
            println!("results in {}", out.display());
            if stalled.is_empty() { Ok(()) } else { Err(Failure::Stalled(format!("incomplete: {}", stalled.join(", ")))) }
        }
        Command::GenWorld { seed, out, config, force, set } => {
            let cfg = config::load_config(config.as_deref(), &overrides(flags, &set)?)?;
            refuse_existing(&out, force)?;
            let world = sim::generate_world(&cfg.mission(seed).world, seed).map_err(|e| Failure::Config(e.to_string()))?;
            let mut text = Vec::new();
            world.truth.write(&mut text).map_err(|e| Failure::Io(e.to_string()))?;
            let s = world.start;
            let header = format!("# seed {seed}\n# start {} {} {}\n", s.x, s.y, s.z);
            write_file(&out, &(header + &String::from_utf8_lossy(&text)))?;
            println!("wrote {} (start {} {} {})", out.display(), s.x, s.y, s.z);
            Ok(())
        }
        Command::PlanOnce { world, state, seed, out, config, force, set } => {
            let cfg = config::load_config(config.as_deref(), &overrides(flags, &set)?)?;
            refuse_existing(&out, force)?;
            let file = std::fs::File::open(&world).map_err(|e| Failure::Io(format!("{}: {e}", world.display())))?;
            let w = VoxelWorld::read(std::io::BufReader::new(file)).map_err(|e| Failure::Config(format!("{}: {e}", world.display())))?;
            let xyz: Vec<f64> = state
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::Config(format!("invalid state `{state}`")))?;
            let [x, y, z] = xyz[..] else { return Err(Failure::Config(format!("state `{state}` needs x,y,z"))) };
            let inputs = cfg.planner_inputs(UavState::hover_at(Point::new(x, y, z)), seed);
            match pipeline::plan_with_retry(&w, &inputs) {
                Ok(plan) => {
                    write_file(&out, &output::plan_result_text(&plan))?;
                    println!("chosen candidate {} of {}, {} points", plan.chosen, plan.candidates.len(), plan.x_min.len());
                    Ok(())
                }
                Err(e) => Err(Failure::Stalled(format!("planning failed: {e}"))),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let (args, flags) = match split_key_flags(args) {
        Ok(v) => v,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Failure) -> ExitCode {
    let (code, msg) = match e {
        Failure::Config(m) => (EXIT_CONFIG, m),
        Failure::Io(m) => (EXIT_IO, m),
        Failure::Stalled(m) => (EXIT_STALLED, m),
    };
    eprintln!("errt: {msg}");
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn key_flags_are_extracted() {
        let (rest, ov) = split_key_flags(strings(&["errt", "run", "--cost.k_d", "3", "--out", "x", "--nmpc.horizon=12"])).unwrap();
        assert_eq!(rest, strings(&["errt", "run", "--out", "x"]));
        assert_eq!(ov, vec![("cost.k_d".into(), "3".into()), ("nmpc.horizon".into(), "12".into())]);
        assert!(split_key_flags(strings(&["errt", "--cost.k_d"])).is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3..=4").unwrap(), vec![3, 4]);
        assert_eq!(parse_seeds("5, 2,9").unwrap(), vec![5, 2, 9]);
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn preset_lists() {
        assert_eq!(parse_presets("both").unwrap(), vec![Preset::Greedy, Preset::Conservative]);
        assert_eq!(parse_presets("conservative").unwrap(), vec![Preset::Conservative]);
        assert!(parse_presets("fast").is_err());
    }
}
