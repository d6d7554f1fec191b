//! `sim` and `learn` orchestration plus the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use hcsim::fmt::sig9;
use hcsim::rrhlearn::{self, run_single, Table3Row};
use hcsim::simengine::{self, calibrate_base_rate, run_scenario, RunOptions, Scheme, SimReport};
use hcsim::{Error, Result};

use crate::config::ScenarioConfig;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// Provenance record written next to every set of outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub schemes: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ScenarioConfig, seeds: &[u64]) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: config_checksum(cfg),
            seeds: seeds.to_vec(),
            schemes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "version = {}\ncommand = {}\nconfig_sha256 = {}\nseeds = {}\n",
            self.version,
            self.command,
            self.config_sha256,
            join(&self.seeds)
        );
        if !self.schemes.is_empty() {
            out.push_str(&format!("schemes = {}\n", self.schemes.join(",")));
        }
        for o in &self.outputs {
            out.push_str(&format!("output = {o}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            version: String::new(),
            command: String::new(),
            config_sha256: String::new(),
            seeds: Vec::new(),
            schemes: Vec::new(),
            outputs: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| err(format!("malformed manifest line `{line}`")))?;
            match k {
                "version" => m.version = v.into(),
                "command" => m.command = v.into(),
                "config_sha256" => m.config_sha256 = v.into(),
                "seeds" => m.seeds = crate::config::parse_seed_list(v).map_err(err)?,
                "schemes" => m.schemes = v.split(',').map(String::from).collect(),
                "output" => m.outputs.push(v.into()),
                _ => return Err(err(format!("unknown manifest key `{k}`"))),
            }
        }
        Ok(m)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// SHA-256 of the canonical config text.
pub fn config_checksum(cfg: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_text().as_bytes()))
}

fn write(dir: &Path, rel: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text)?;
    manifest.outputs.push(rel.to_string());
    Ok(())
}

fn finish(dir: &Path, cfg: &ScenarioConfig, manifest: &mut RunManifest) -> Result<()> {
    write(dir, CONFIG_FILE, &cfg.to_text(), manifest)?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(())
}

pub fn run_dir_name(scheme: Scheme, seed: u64) -> String {
    format!("runs/{scheme}_seed{seed}")
}

#[derive(Debug)]
pub struct SimOutput {
    pub reports: Vec<SimReport>,
    pub manifest: RunManifest,
}

pub const RUNS_HEADER: &str = "scheme,seed,base_rate,daily_energy_j,mean_flow_s,blocked,arrivals,completed";

/// Every (scheme, seed) day; the base rate is calibrated once per seed and
/// shared by all schemes.
pub fn simulate_all(cfg: &ScenarioConfig, schemes: &[Scheme], seeds: &[u64], events: bool) -> Result<Vec<SimReport>> {
    if schemes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("need at least one scheme and one seed".into()));
    }
    let rates: Vec<(u64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let rate = match cfg.sim.traffic.base_rate {
                Some(r) => r,
                None => calibrate_base_rate(&cfg.sim, &cfg.sim.layout(seed)?, seed)?,
            };
            Ok((seed, rate))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(Scheme, u64, f64)> = schemes
        .iter()
        .flat_map(|&s| rates.iter().map(move |&(seed, r)| (s, seed, r)))
        .collect();
    let opts = RunOptions { record_events: events, record_traces: false };
    jobs.par_iter()
        .map(|&(scheme, seed, rate)| {
            let mut params = cfg.sim.clone();
            params.traffic.base_rate = Some(rate);
            run_scenario(&params, scheme, seed, opts)
                .map_err(|e| Error::Scenario(format!("{scheme} seed {seed}: {e}")))
        })
        .collect()
}

pub fn cmd_sim(cfg: &ScenarioConfig, schemes: &[Scheme], seeds: &[u64], out: &Path, events: bool) -> Result<SimOutput> {
    let reports = simulate_all(cfg, schemes, seeds, events)?;
    let mut manifest = RunManifest::new("sim", cfg, seeds);
    manifest.schemes = schemes.iter().map(|s| s.to_string()).collect();
    fs::create_dir_all(out)?;

    let mut runs = format!("{RUNS_HEADER}\n");
    for r in &reports {
        let dir = run_dir_name(r.scheme, r.seed);
        write(out, &format!("{dir}/hourly.csv"), &simengine::hourly_csv(std::slice::from_ref(r)), &mut manifest)?;
        write(out, &format!("{dir}/bs_energy.csv"), &simengine::bs_energy_csv(r), &mut manifest)?;
        write(
            out,
            &format!("{dir}/summary.csv"),
            &simengine::summary_csv(&[simengine::SummaryRow::from(r)]),
            &mut manifest,
        )?;
        if events {
            write(out, &format!("{dir}/events.log"), &simengine::events_log(r), &mut manifest)?;
        }
        runs.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scheme,
            r.seed,
            sig9(r.base_rate),
            sig9(r.daily_energy_j),
            sig9(r.mean_flow_s),
            r.blocked,
            r.arrivals,
            r.completed
        ));
    }
    let (merged, summary) = simengine::merge_over_seeds(&reports);
    write(out, "hourly.csv", &simengine::hourly_csv(&merged), &mut manifest)?;
    write(out, "summary.csv", &simengine::summary_csv(&summary), &mut manifest)?;
    write(out, "runs.csv", &runs, &mut manifest)?;
    finish(out, cfg, &mut manifest)?;
    Ok(SimOutput { reports, manifest })
}

#[derive(Debug)]
pub struct LearnOutput {
    pub rows: Vec<Table3Row>,
    pub manifest: RunManifest,
}

/// Rows ordered by seed, then scatterer count as configured, then method.
pub fn learn_all(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<Table3Row>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("need at least one seed".into()));
    }
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&seed| cfg.learn.scatterer_counts.iter().map(move |&s| (seed, s)))
        .collect();
    let parts: Vec<Vec<Table3Row>> = jobs
        .par_iter()
        .map(|&(seed, s)| run_single(s, &cfg.learn, seed))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub fn cmd_learn(cfg: &ScenarioConfig, seeds: &[u64], out: &Path) -> Result<LearnOutput> {
    let rows = learn_all(cfg, seeds)?;
    let summary = rrhlearn::summarize(&rows);
    let mut manifest = RunManifest::new("learn", cfg, seeds);
    fs::create_dir_all(out)?;
    let table = format!("{}\n{}", rrhlearn::table3_csv(&rows), rrhlearn::summary_csv(&summary));
    write(out, "table3.csv", &table, &mut manifest)?;
    write(out, "table3_summary.csv", &rrhlearn::summary_csv(&summary), &mut manifest)?;
    write(out, "table3_grid.csv", &rrhlearn::grid_csv(&summary), &mut manifest)?;
    finish(out, cfg, &mut manifest)?;
    Ok(LearnOutput { rows, manifest })
}

/// Output directory: the flag wins over the config's `out.dir`.
pub fn resolve_out(cfg: &ScenarioConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let cfg = ScenarioConfig::default();
        let mut m = RunManifest::new("sim", &cfg, &[1, 2, 3]);
        m.schemes = vec!["HETNET".into()];
        m.outputs = vec!["hourly.csv".into(), "runs/HETNET_seed1/hourly.csv".into()];
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn checksum_tracks_config() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(config_checksum(&a), config_checksum(&b));
        b.sim.policy.set_up_delay_s = 2.0;
        assert_ne!(config_checksum(&a), config_checksum(&b));
        assert_eq!(config_checksum(&a).len(), 64);
    }
}
