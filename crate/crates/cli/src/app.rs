//! Argument handling for the `hcsim` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hcsim::simengine::Scheme;

use crate::checks::run_checks;
use crate::commands::{cmd_learn, cmd_sim, resolve_out};
use crate::config::{parse_config, parse_config_unchecked, parse_seed_list, ScenarioConfig};

#[derive(Parser)]
#[command(name = "hcsim", version, about = "Hyper-cellular sleeping simulator and RRH selection study")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day per scheme and seed.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes (HETNET, HCA_NO_SLEEP, HCA_SLEEP).
        #[arg(long, default_value = "HETNET,HCA_NO_SLEEP,HCA_SLEEP")]
        schemes: String,
        /// Also write per-run events.log files.
        #[arg(long)]
        events: bool,
    },
    /// Run the sleeping-RRH selection study.
    Learn {
        #[command(flatten)]
        common: Common,
    },
    /// Run the fast invariant suite.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1,2,3` or `1-10`.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (overrides `out.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn read_config(path: Option<&PathBuf>, checked: bool) -> Result<ScenarioConfig, Failure> {
    let Some(path) = path else {
        return Ok(ScenarioConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if checked { parse_config(&text) } else { parse_config_unchecked(&text) };
    parsed.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn seeds(flag: Option<&str>, default: &[u64]) -> Result<Vec<u64>, Failure> {
    match flag {
        None => Ok(default.to_vec()),
        Some(s) => match parse_seed_list(s) {
            Ok(v) if !v.is_empty() => Ok(v),
            Ok(_) => Err(Failure::Usage("--seeds needs at least one seed".into())),
            Err(e) => Err(Failure::Usage(format!("--seeds: {e}"))),
        },
    }
}

fn with_pool<T>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sim { common, schemes, events } => {
            let schemes: Vec<Scheme> = schemes
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<Scheme>().map_err(|e| Failure::Usage(e.to_string())))
                .collect::<Result<_, _>>()?;
            if schemes.is_empty() {
                return Err(Failure::Usage("--schemes needs at least one scheme".into()));
            }
            let mut cfg = read_config(common.config.as_ref(), true)?;
            cfg.sim_seeds = seeds(common.seeds.as_deref(), &cfg.sim_seeds)?;
            let out = resolve_out(&cfg, common.out.as_deref());
            cfg.out_dir = out.display().to_string();
            let seeds = cfg.sim_seeds.clone();
            let res = with_pool(common.jobs, || cmd_sim(&cfg, &schemes, &seeds, &out, events))?
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{} runs written to {}", res.reports.len(), out.display());
            Ok(())
        }
        Command::Learn { common } => {
            let mut cfg = read_config(common.config.as_ref(), true)?;
            cfg.learn_seeds = seeds(common.seeds.as_deref(), &cfg.learn_seeds)?;
            let out = resolve_out(&cfg, common.out.as_deref());
            cfg.out_dir = out.display().to_string();
            let seeds = cfg.learn_seeds.clone();
            let res = with_pool(common.jobs, || cmd_learn(&cfg, &seeds, &out))?
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{} rows written to {}", res.rows.len(), out.join("table3.csv").display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = read_config(config.as_ref(), false)?;
            let results = run_checks(&cfg);
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                Err(Failure::Runtime(format!("{failed} check(s) failed")))
            } else {
                Ok(())
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 runtime or validation failure, 2 usage.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code().clamp(0, 255) as u8;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `hcsim --help` for usage.");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use sha2::{Digest, Sha256};

    use super::run_from;
    use crate::commands::{RunManifest, CONFIG_FILE, MANIFEST_FILE};

    const SMALL: &str = "topology.rings = 1\ntopology.tbs_expected = 6\ntraffic.base_rate = 0.3\nseeds.sim = 2\n\
        learn.scatterer_counts = 10\nlearn.n_samples = 400\nlearn.hidden = 8\nlearn.epochs = 2\nseeds.learn = 1,2\n";

    fn run(args: &[&str]) -> u8 {
        run_from(std::iter::once("hcsim").chain(args.iter().copied()))
    }

    fn conf(dir: &Path, text: &str) -> String {
        let p = dir.join("c.conf");
        fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(&["sim", "--schemes", "GREEN"]), 2);
        assert_eq!(run(&["sim", "--seeds", "x"]), 2);
        assert_eq!(run(&["validate"]), 0);
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(run(&["validate", "--config", &conf(tmp.path(), "power.macro.p_sleep = 1000\n")]), 1);
        assert_eq!(run(&["sim", "--config", &conf(tmp.path(), "nope = 1\n")]), 1);
    }

    #[test]
    fn sim_manifest_matches_config_and_reruns_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let c = conf(tmp.path(), SMALL);
        let out = tmp.path().join("o");
        let o = out.to_str().unwrap();
        assert_eq!(run(&["sim", "--config", &c, "--schemes", "HCA_SLEEP", "--events", "--out", o]), 0);
        let text = fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
        let m = RunManifest::parse(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.config_sha256, hex::encode(Sha256::digest(text.as_bytes())));
        let first: Vec<Vec<u8>> = m.outputs.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        fs::remove_dir_all(&out).unwrap();
        assert_eq!(run(&["sim", "--config", &c, "--schemes", "HCA_SLEEP", "--events", "--out", o]), 0);
        let second: Vec<Vec<u8>> = m.outputs.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn learn_rows_per_seed() {
        let tmp = tempfile::tempdir().unwrap();
        let c = conf(tmp.path(), SMALL);
        let out = tmp.path().join("l");
        assert_eq!(run(&["learn", "--config", &c, "--out", out.to_str().unwrap()]), 0);
        let rows = hcsim::rrhlearn::parse_table3_csv(&fs::read_to_string(out.join("table3.csv")).unwrap()).unwrap();
        assert_eq!(rows.len(), 8);
    }
}
