//! Line-oriented scenario configuration: `section.key = value`, `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use hcsim::powermodel::PowerParams;
use hcsim::radio::LinkParams;
use hcsim::rrhlearn::LearnConfig;
use hcsim::simengine::SimParams;
use hcsim::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub sim: SimParams,
    pub learn: LearnConfig,
    pub sim_seeds: Vec<u64>,
    pub learn_seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sim: SimParams::default(),
            learn: LearnConfig::default(),
            sim_seeds: (1..=10).collect(),
            learn_seeds: (1..=5).collect(),
            out_dir: "results".into(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect()
}

/// Comma-separated seeds; `a-b` expands to the inclusive range.
pub fn parse_seed_list(v: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (num(a.trim())?, num(b.trim())?);
                if b < a {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn link_entry(link: &mut LinkParams, key: &str, v: &str) -> Option<std::result::Result<(), String>> {
    let slot = match key {
        "pathloss_intercept" => &mut link.pathloss_intercept_db,
        "pathloss_slope" => &mut link.pathloss_slope_db,
        "shadowing_sigma" => &mut link.shadowing_sigma_db,
        "tx_power" => &mut link.tx_power_dbm,
        "noise_density" => &mut link.noise_density_dbm_hz,
        "carrier_freq" => &mut link.carrier_freq_hz,
        _ => return None,
    };
    Some(num(v).map(|x| *slot = x))
}

fn power_entry(p: &mut PowerParams, key: &str, v: &str) -> Option<std::result::Result<(), String>> {
    let slot = match key {
        "p0" => &mut p.p0_w,
        "delta_p" => &mut p.delta_p,
        "p_max_tx" => &mut p.p_max_tx_w,
        "p_sleep" => &mut p.p_sleep_w,
        "n_trx" => return Some(num(v).map(|x| p.n_trx = x)),
        _ => return None,
    };
    Some(num(v).map(|x| *slot = x))
}

impl ScenarioConfig {
    /// Assigns one key; `None` when the key is unknown.
    fn set(&mut self, key: &str, v: &str) -> Option<std::result::Result<(), String>> {
        let s = &mut self.sim;
        let l = &mut self.learn;
        let r = match key {
            "topology.rings" => num(v).map(|x| s.rings = x),
            "topology.isd" => num(v).map(|x| s.isd_m = x),
            "topology.tbs_expected" => num(v).map(|x| s.tbs_expected = x),
            "topology.wrap" => boolean(v).map(|x| s.wrap = x),
            "radio.total_rbs" => num(v).map(|x| s.rb.total_rbs = x),
            "radio.rb_bandwidth" => num(v).map(|x| s.rb.rb_bandwidth_hz = x),
            "radio.control_rb_fraction" => num(v).map(|x| s.rb.control_rb_fraction = x),
            "traffic.profile" => list(v).map(|x| s.traffic.multipliers = x),
            "traffic.base_rate" if v == "auto" => {
                s.traffic.base_rate = None;
                Ok(())
            }
            "traffic.base_rate" => num(v).map(|x| s.traffic.base_rate = Some(x)),
            "traffic.peak_users" => num(v).map(|x| s.traffic.peak_users = x),
            "traffic.flow_size" => num(v).map(|x| s.traffic.flow_size_bits = x),
            "policy.load_threshold_off" => num(v).map(|x| s.policy.load_threshold_off = x),
            "policy.rate_floor" => num(v).map(|x| s.policy.rate_floor_bps = x),
            "policy.check_period" => num(v).map(|x| s.policy.check_period_s = x),
            "policy.close_down_delay" => num(v).map(|x| s.policy.close_down_delay_s = x),
            "policy.set_up_delay" => num(v).map(|x| s.policy.set_up_delay_s = x),
            "zoom.enabled" => boolean(v).map(|x| s.zoom.enabled = x),
            "zoom.max_db" => num(v).map(|x| s.zoom.max_db = x),
            "zoom.step_db" => num(v).map(|x| s.zoom.step_db = x),
            "zoom.overload" => num(v).map(|x| s.zoom.overload = x),
            "zoom.underload" => num(v).map(|x| s.zoom.underload = x),
            "zoom.neighbor_radius" => num(v).map(|x| s.zoom.neighbor_radius_m = x),
            "learn.scatterer_counts" => list(v).map(|x| l.scatterer_counts = x),
            "learn.rrhs" => num(v).map(|x| l.rrhs = x),
            "learn.antennas" => num(v).map(|x| l.antennas = x),
            "learn.radius" => num(v).map(|x| l.radius_m = x),
            "learn.scatter_ref" => num(v).map(|x| l.scatter_ref_m = x),
            "learn.carrier_freq" => num(v).map(|x| l.carrier_freq_hz = x),
            "learn.pathloss_exponent" => num(v).map(|x| l.pathloss_exponent = x),
            "learn.n_samples" => num(v).map(|x| l.n_samples = x),
            "learn.train_fraction" => num(v).map(|x| l.train_fraction = x),
            "learn.log_floor" => num(v).map(|x| l.log_floor = x),
            "learn.lloyd_levels" => num(v).map(|x| l.lloyd_levels = x),
            "learn.lloyd_max_iters" => num(v).map(|x| l.lloyd_max_iters = x),
            "learn.lloyd_tol" => num(v).map(|x| l.lloyd_tol = x),
            "learn.knn_k" => num(v).map(|x| l.knn_k = x),
            "learn.hidden" => list(v).map(|x| l.hidden = x),
            "learn.lr" => num(v).map(|x| l.lr = x),
            "learn.batch" => num(v).map(|x| l.batch = x),
            "learn.epochs" => num(v).map(|x| l.epochs = x),
            "learn.rs_trials" => num(v).map(|x| l.rs_trials = x),
            "seeds.sim" => parse_seed_list(v).map(|x| self.sim_seeds = x),
            "seeds.learn" => parse_seed_list(v).map(|x| self.learn_seeds = x),
            "out.dir" => {
                self.out_dir = v.to_string();
                Ok(())
            }
            _ => {
                let (class, field) = key
                    .strip_prefix("radio.")
                    .map(|k| ("radio", k))
                    .or_else(|| key.strip_prefix("power.").map(|k| ("power", k)))?;
                let (which, field) = field.split_once('.')?;
                return match (class, which) {
                    ("radio", "macro") => link_entry(&mut s.macro_link, field, v),
                    ("radio", "micro") => link_entry(&mut s.micro_link, field, v),
                    ("power", "macro") => power_entry(&mut s.macro_power, field, v),
                    ("power", "micro") => power_entry(&mut s.micro_power, field, v),
                    _ => None,
                };
            }
        };
        Some(r)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.sim;
        let l = &self.learn;
        let mut e: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        put("topology.rings", s.rings.to_string());
        put("topology.isd", s.isd_m.to_string());
        put("topology.tbs_expected", s.tbs_expected.to_string());
        put("topology.wrap", s.wrap.to_string());
        put("radio.total_rbs", s.rb.total_rbs.to_string());
        put("radio.rb_bandwidth", s.rb.rb_bandwidth_hz.to_string());
        put("radio.control_rb_fraction", s.rb.control_rb_fraction.to_string());
        for (name, link) in [("macro", &s.macro_link), ("micro", &s.micro_link)] {
            put(&format!("radio.{name}.pathloss_intercept"), link.pathloss_intercept_db.to_string());
            put(&format!("radio.{name}.pathloss_slope"), link.pathloss_slope_db.to_string());
            put(&format!("radio.{name}.shadowing_sigma"), link.shadowing_sigma_db.to_string());
            put(&format!("radio.{name}.tx_power"), link.tx_power_dbm.to_string());
            put(&format!("radio.{name}.noise_density"), link.noise_density_dbm_hz.to_string());
            put(&format!("radio.{name}.carrier_freq"), link.carrier_freq_hz.to_string());
        }
        for (name, p) in [("macro", &s.macro_power), ("micro", &s.micro_power)] {
            put(&format!("power.{name}.p0"), p.p0_w.to_string());
            put(&format!("power.{name}.delta_p"), p.delta_p.to_string());
            put(&format!("power.{name}.p_max_tx"), p.p_max_tx_w.to_string());
            put(&format!("power.{name}.p_sleep"), p.p_sleep_w.to_string());
            put(&format!("power.{name}.n_trx"), p.n_trx.to_string());
        }
        put("traffic.profile", join(&s.traffic.multipliers));
        put(
            "traffic.base_rate",
            s.traffic.base_rate.map_or("auto".into(), |r| r.to_string()),
        );
        put("traffic.peak_users", s.traffic.peak_users.to_string());
        put("traffic.flow_size", s.traffic.flow_size_bits.to_string());
        put("policy.load_threshold_off", s.policy.load_threshold_off.to_string());
        put("policy.rate_floor", s.policy.rate_floor_bps.to_string());
        put("policy.check_period", s.policy.check_period_s.to_string());
        put("policy.close_down_delay", s.policy.close_down_delay_s.to_string());
        put("policy.set_up_delay", s.policy.set_up_delay_s.to_string());
        put("zoom.enabled", s.zoom.enabled.to_string());
        put("zoom.max_db", s.zoom.max_db.to_string());
        put("zoom.step_db", s.zoom.step_db.to_string());
        put("zoom.overload", s.zoom.overload.to_string());
        put("zoom.underload", s.zoom.underload.to_string());
        put("zoom.neighbor_radius", s.zoom.neighbor_radius_m.to_string());
        put("learn.scatterer_counts", join(&l.scatterer_counts));
        put("learn.rrhs", l.rrhs.to_string());
        put("learn.antennas", l.antennas.to_string());
        put("learn.radius", l.radius_m.to_string());
        put("learn.scatter_ref", l.scatter_ref_m.to_string());
        put("learn.carrier_freq", l.carrier_freq_hz.to_string());
        put("learn.pathloss_exponent", l.pathloss_exponent.to_string());
        put("learn.n_samples", l.n_samples.to_string());
        put("learn.train_fraction", l.train_fraction.to_string());
        put("learn.log_floor", l.log_floor.to_string());
        put("learn.lloyd_levels", l.lloyd_levels.to_string());
        put("learn.lloyd_max_iters", l.lloyd_max_iters.to_string());
        put("learn.lloyd_tol", l.lloyd_tol.to_string());
        put("learn.knn_k", l.knn_k.to_string());
        put("learn.hidden", join(&l.hidden));
        put("learn.lr", l.lr.to_string());
        put("learn.batch", l.batch.to_string());
        put("learn.epochs", l.epochs.to_string());
        put("learn.rs_trials", l.rs_trials.to_string());
        put("seeds.sim", join(&self.sim_seeds));
        put("seeds.learn", join(&self.learn_seeds));
        put("out.dir", self.out_dir.clone());
        e
    }

    /// Canonical text: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.learn.validate()?;
        if self.sim_seeds.is_empty() {
            return Err(Error::Range { key: "seeds.sim".into(), msg: "needs at least one seed".into() });
        }
        if self.learn_seeds.is_empty() {
            return Err(Error::Range { key: "seeds.learn".into(), msg: "needs at least one seed".into() });
        }
        Ok(())
    }
}

/// Parses and validates a config; omitted keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg = parse_config_unchecked(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Syntax-only parse: every key known and every value well-formed, ranges unchecked.
pub fn parse_config_unchecked(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `section.key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') {
            return Err(parse_err(format!("key `{key}` lacks a section prefix")));
        }
        if !seen.insert(key.to_string()) {
            return Err(parse_err(format!("duplicate key `{key}`")));
        }
        match cfg.set(key, value) {
            None => return Err(parse_err(format!("unknown key `{key}`"))),
            Some(Err(msg)) => return Err(parse_err(format!("{key}: {msg}"))),
            Some(Ok(())) => {}
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ScenarioConfig::default());
        assert_eq!(parse_config("# nothing\n\n  \n").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn negative_macro_p0_names_the_key() {
        let err = parse_config("power.macro.p0 = -5\n").unwrap_err();
        match err {
            Error::Range { key, .. } => assert_eq!(key, "power.macro.p0"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "topology.rings = 2\n# c\ntopology.isd = abc\n";
        match parse_config(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("bogus.key = 1").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(parse_config("\nno equals sign").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(matches!(
            parse_config("zoom.max_db = 1\nzoom.max_db = 2").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_text();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "traffic.base_rate = 12.5\nlearn.hidden = 16,8\nseeds.sim = 3-5,9\n\
                    radio.micro.tx_power = 27.25\ntopology.wrap = false\nout.dir = /tmp/x y\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.sim.traffic.base_rate, Some(12.5));
        assert_eq!(cfg.learn.hidden, vec![16, 8]);
        assert_eq!(cfg.sim_seeds, vec![3, 4, 5, 9]);
        assert_eq!(cfg.sim.micro_link.tx_power_dbm, 27.25);
        assert!(!cfg.sim.wrap);
        assert_eq!(cfg.out_dir, "/tmp/x y");
        let again = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn every_serialized_key_is_accepted() {
        let mut cfg = ScenarioConfig::default();
        for (k, v) in ScenarioConfig::default().entries() {
            assert!(matches!(cfg.set(&k, &v), Some(Ok(()))), "key {k}");
        }
    }

    #[test]
    fn auto_base_rate() {
        let cfg = parse_config("traffic.base_rate = auto").unwrap();
        assert_eq!(cfg.sim.traffic.base_rate, None);
    }

    #[test]
    fn profile_needs_24_entries() {
        let err = parse_config("traffic.profile = 1,0.5").unwrap_err();
        assert!(matches!(err, Error::Range { ref key, .. } if key == "traffic.profile"), "{err}");
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_list("1-3, 7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seed_list("5-2").is_err());
        assert!(parse_seed_list("x").is_err());
    }
}
