use hcsim::powermodel::PowerParams;
use hcsim::rrhlearn::{run_single, LearnConfig, Method};
use hcsim::simengine::{run_scenario, RunOptions, Scheme, SimParams};
use hcsim::topology::Role;

fn small() -> SimParams {
    let mut p = SimParams { rings: 1, tbs_expected: 6.0, ..SimParams::default() };
    p.traffic.base_rate = Some(0.0);
    p
}

fn active(p: &PowerParams, load: f64) -> f64 {
    p.n_trx as f64 * (p.p0_w + p.delta_p * load * p.p_max_tx_w)
}

#[test]
fn idle_network_power_per_scheme() {
    let params = small();
    let layout = params.layout(8).unwrap();
    let f = params.rb.control_rb_fraction;
    let n = |role| layout.sites.iter().filter(|s| s.role == role).count() as f64;
    let (cbs, tbs) = (n(Role::Cbs), n(Role::Tbs));
    let want_hetnet = cbs * active(&params.macro_power, f) + tbs * active(&params.micro_power, f);
    let want_awake = cbs * active(&params.macro_power, f) + tbs * active(&params.micro_power, 0.0);
    for (scheme, want) in [(Scheme::Hetnet, want_hetnet), (Scheme::HcaNoSleep, want_awake)] {
        let r = run_scenario(&params, scheme, 8, RunOptions::default()).unwrap();
        for h in &r.hours {
            assert!((h.avg_power_w - want).abs() <= 1e-9 * want, "{scheme}: {} vs {want}", h.avg_power_w);
        }
        assert_eq!(r.arrivals, 0);
    }
}

#[test]
fn scenario_is_deterministic_and_conserves_bits() {
    let mut params = small();
    params.traffic.base_rate = Some(0.5);
    let opts = RunOptions { record_events: true, record_traces: false };
    let a = run_scenario(&params, Scheme::HcaSleep, 2, opts).unwrap();
    let b = run_scenario(&params, Scheme::HcaSleep, 2, opts).unwrap();
    assert_eq!(a, b);
    assert!(a.arrivals > 0);
    assert!((a.bits_served - a.bits_delivered).abs() <= 1e-6 * a.bits_delivered);
    let c = run_scenario(&params, Scheme::HcaSleep, 3, opts).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn learning_pipeline_small_run() {
    let cfg = LearnConfig { n_samples: 3000, hidden: vec![32], epochs: 15, ..LearnConfig::default() };
    let rows = run_single(10, &cfg, 3).unwrap();
    let acc = |m| rows.iter().find(|r| r.method == m).unwrap().accuracy;
    assert!((acc(Method::Rs) - 0.2).abs() < 0.03);
    for m in [Method::Knn, Method::NnCr, Method::NnLo] {
        assert!(acc(m) > acc(Method::Rs) + 0.1, "{m:?} {}", acc(m));
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.relative_error));
    }
}
