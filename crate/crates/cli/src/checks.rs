//! Fast invariant suite behind `hcsim validate`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hcsim::powermodel::{bs_power_w, BsState, PowerParams};
use hcsim::radio;
use hcsim::rrhlearn::features::{dft_magnitude, lloyd_train};
use hcsim::rrhlearn::mlp::{softmax_in_place, Mlp};
use hcsim::topology::{build_hex_sites, hex_site_count};

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

fn config_ranges(cfg: &ScenarioConfig) -> CheckResult {
    match cfg.validate() {
        Ok(()) => CheckResult::new("config.ranges", true, "all keys within range".into()),
        Err(e) => CheckResult::new("config.ranges", false, e.to_string()),
    }
}

fn power_invariant(class: &str, p: &PowerParams) -> CheckResult {
    let name = format!("power.{class}.p0_above_p_sleep");
    let ok = p.p0_w > p.p_sleep_w && p.p_sleep_w >= 0.0;
    CheckResult::new(&name, ok, format!("p0 = {} W, p_sleep = {} W", p.p0_w, p.p_sleep_w))
}

fn power_arithmetic(cfg: &ScenarioConfig) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for p in [&cfg.sim.macro_power, &cfg.sim.micro_power] {
        let n = p.n_trx as f64;
        for load in [0.0, 0.25, 0.5, 1.0] {
            let want = n * (p.p0_w + p.delta_p * load * p.p_max_tx_w);
            match bs_power_w(p, load, BsState::Active) {
                Ok(got) => worst = worst.max((got - want).abs() / want.abs().max(1e-300)),
                Err(_) => ok = false,
            }
        }
        let idle = bs_power_w(p, 0.0, BsState::Active).unwrap_or(f64::NAN);
        ok &= bs_power_w(p, 0.0, BsState::Transition).is_ok_and(|t| t == idle);
        ok &= bs_power_w(p, 0.0, BsState::Sleeping).is_ok_and(|s| s == n * p.p_sleep_w);
        ok &= bs_power_w(p, 1.5, BsState::Active).is_err();
    }
    ok &= worst <= 1e-12;
    CheckResult::new("power.linear_model", ok, format!("max relative deviation {worst:.1e}"))
}

fn parseval() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for m in [1usize, 7, 64, 80] {
        let h: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let time: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        let freq: f64 = match dft_magnitude(&h) {
            Ok(v) => v.iter().map(|x| x * x).sum(),
            Err(_) => f64::NAN,
        };
        worst = worst.max((time - freq).abs() / time);
    }
    CheckResult::new("dft.parseval", worst <= 1e-9, format!("max relative energy gap {worst:.1e}"))
}

fn gradient_check() -> CheckResult {
    let (net, x, label) = match Mlp::new(&[3, 4, 2], 11) {
        Ok(n) => (n, [0.3, -0.7, 1.1], 1),
        Err(e) => return CheckResult::new("mlp.gradient_check", false, e.to_string()),
    };
    let Ok((_, grad)) = net.loss_and_gradient(&x, label) else {
        return CheckResult::new("mlp.gradient_check", false, "gradient failed".into());
    };
    let analytic: Vec<f64> = grad.params().copied().collect();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        let mut minus = net.clone();
        *plus.params_mut().nth(i).expect("index in range") += eps;
        *minus.params_mut().nth(i).expect("index in range") -= eps;
        let lp = plus.loss(&x, label).unwrap_or(f64::NAN);
        let lm = minus.loss(&x, label).unwrap_or(f64::NAN);
        let numeric = (lp - lm) / (2.0 * eps);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    CheckResult::new(
        "mlp.gradient_check",
        worst <= 1e-4,
        format!("{} parameters, max relative error {worst:.1e}", analytic.len()),
    )
}

fn softmax_rows() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut z: Vec<f64> = (0..5).map(|_| 200.0 * (rng.random::<f64>() - 0.5)).collect();
        softmax_in_place(&mut z);
        worst = worst.max((z.iter().sum::<f64>() - 1.0).abs());
    }
    CheckResult::new("mlp.softmax_rows", worst <= 1e-12, format!("max |row sum - 1| {worst:.1e}"))
}

fn lloyd_checks() -> [CheckResult; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
    match lloyd_train(&xs, 2, 200, 1e-12) {
        Ok(out) => {
            let monotone = out.distortion.windows(2).all(|w| w[1] <= w[0] + 1e-15);
            let c = out.codebook.centroids();
            let near = (c[0] - 0.25).abs() < 0.01 && (c[1] - 0.75).abs() < 0.01;
            [
                CheckResult::new(
                    "lloyd.distortion_monotone",
                    monotone,
                    format!("{} iterations", out.distortion.len().saturating_sub(1)),
                ),
                CheckResult::new(
                    "lloyd.uniform_two_levels",
                    near,
                    format!("centroids {:.4}, {:.4}", c[0], c[1]),
                ),
            ]
        }
        Err(e) => [
            CheckResult::new("lloyd.distortion_monotone", false, e.to_string()),
            CheckResult::new("lloyd.uniform_two_levels", false, e.to_string()),
        ],
    }
}

fn rate_cap(cfg: &ScenarioConfig) -> CheckResult {
    let bw = cfg.sim.rb.rb_bandwidth_hz;
    let capped = radio::rate_bps(1e9, 1.0, bw);
    let want = bw * (1.0 + radio::db_to_linear(radio::SINR_CAP_DB)).log2();
    let ok = (capped - want).abs() <= 1e-9 * want && radio::rate_bps(0.0, 1.0, bw) == 0.0;
    CheckResult::new("radio.rate_cap", ok, format!("rate per RB at cap {capped:.1} bit/s"))
}

fn hex_count(cfg: &ScenarioConfig) -> CheckResult {
    let r = cfg.sim.rings;
    let ok = build_hex_sites(r, cfg.sim.isd_m).is_ok_and(|s| s.len() == hex_site_count(r))
        && hex_site_count(r) == 1 + 3 * r as usize * (r as usize + 1);
    CheckResult::new("topology.hex_count", ok, format!("{} sites for {r} rings", hex_site_count(r)))
}

/// Runs every check against `cfg`; power invariants use its parameters.
pub fn run_checks(cfg: &ScenarioConfig) -> Vec<CheckResult> {
    let mut out = vec![
        config_ranges(cfg),
        power_invariant("macro", &cfg.sim.macro_power),
        power_invariant("micro", &cfg.sim.micro_power),
        power_arithmetic(cfg),
        parseval(),
        gradient_check(),
        softmax_rows(),
    ];
    out.extend(lloyd_checks());
    out.push(rate_cap(cfg));
    out.push(hex_count(cfg));
    out
}
