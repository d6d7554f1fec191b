//! Linear load-dependent base-station power model and energy integration.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BsState {
    Active,
    Sleeping,
    /// Switching on or off; powered but not serving.
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    pub p0_w: f64,
    pub delta_p: f64,
    pub p_max_tx_w: f64,
    pub p_sleep_w: f64,
    pub n_trx: u32,
}

impl PowerParams {
    /// Macro-class defaults (used for CBSs).
    pub fn macro_default() -> Self {
        Self {
            p0_w: 130.0,
            delta_p: 4.7,
            p_max_tx_w: 20.0,
            p_sleep_w: 75.0,
            n_trx: 1,
        }
    }

    /// Micro-class defaults (used for TBSs).
    pub fn micro_default() -> Self {
        Self {
            p0_w: 56.0,
            delta_p: 2.6,
            p_max_tx_w: 6.3,
            p_sleep_w: 39.0,
            n_trx: 1,
        }
    }

    /// Checks `p0 > p_sleep >= 0`, `delta_p > 0`, `p_max_tx > 0`, `n_trx >= 1`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let fail = |key: &str, msg: &str| {
            Err(Error::Range {
                key: format!("{prefix}.{key}"),
                msg: msg.into(),
            })
        };
        if !(self.p_sleep_w >= 0.0) {
            return fail("p_sleep", "must be >= 0");
        }
        if !(self.p0_w > self.p_sleep_w) {
            return fail("p0", "invariant p0 > p_sleep violated");
        }
        if !(self.delta_p > 0.0) {
            return fail("delta_p", "must be > 0");
        }
        if !(self.p_max_tx_w > 0.0) {
            return fail("p_max_tx", "must be > 0");
        }
        if self.n_trx < 1 {
            return fail("n_trx", "must be >= 1");
        }
        Ok(())
    }
}

pub fn bs_power_w(params: &PowerParams, load: f64, state: BsState) -> Result<f64> {
    if !(0.0..=1.0).contains(&load) {
        return Err(Error::InvalidParameter(format!("load {load} outside [0, 1]")));
    }
    let n = params.n_trx as f64;
    Ok(match state {
        BsState::Active => n * (params.p0_w + params.delta_p * load * params.p_max_tx_w),
        BsState::Transition => n * params.p0_w,
        BsState::Sleeping => n * params.p_sleep_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub power_w: f64,
}

/// Contiguous piecewise-constant power over time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerTrace {
    pub segments: Vec<PowerSegment>,
}

impl PowerTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment, merging when the power is unchanged.
    pub fn push(&mut self, t_start: f64, t_end: f64, power_w: f64) {
        if let Some(last) = self.segments.last_mut() {
            if last.power_w == power_w && last.t_end == t_start {
                last.t_end = t_end;
                return;
            }
        }
        self.segments.push(PowerSegment {
            t_start,
            t_end,
            power_w,
        });
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.t_end > s.t_start) {
                return Err(Error::MalformedTrace(format!(
                    "segment {i} has t_end {} <= t_start {}",
                    s.t_end, s.t_start
                )));
            }
            if i > 0 {
                let prev = self.segments[i - 1].t_end;
                if s.t_start != prev {
                    let kind = if s.t_start > prev { "gap" } else { "overlap" };
                    return Err(Error::MalformedTrace(format!(
                        "{kind} between segments {} and {i} ({prev} vs {})",
                        i - 1,
                        s.t_start
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergySummary {
    pub energy_j: f64,
    /// Average power per wall-clock hour touched by the trace, keyed by hour index.
    pub hourly_avg_power_w: Vec<(usize, f64)>,
}

pub fn integrate_energy(trace: &PowerTrace) -> Result<EnergySummary> {
    trace.validate()?;
    let mut energy = 0.0;
    let mut hourly: Vec<(usize, f64)> = Vec::new();
    for s in &trace.segments {
        energy += s.power_w * (s.t_end - s.t_start);
        let mut t = s.t_start;
        while t < s.t_end {
            let hour = (t / 3600.0).floor();
            let end = s.t_end.min((hour + 1.0) * 3600.0);
            let e = s.power_w * (end - t);
            let h = hour as usize;
            match hourly.last_mut() {
                Some((last, acc)) if *last == h => *acc += e,
                _ => hourly.push((h, e)),
            }
            t = end;
        }
    }
    for (_, e) in hourly.iter_mut() {
        *e /= 3600.0;
    }
    Ok(EnergySummary {
        energy_j: energy,
        hourly_avg_power_w: hourly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn power_examples() {
        let p = PowerParams::macro_default();
        assert_eq!(bs_power_w(&p, 0.0, BsState::Active).unwrap(), 130.0);
        assert!((bs_power_w(&p, 0.5, BsState::Active).unwrap() - 177.0).abs() < 1e-12);
        assert_eq!(bs_power_w(&p, 0.0, BsState::Sleeping).unwrap(), 75.0);
        assert_eq!(
            bs_power_w(&p, 0.7, BsState::Transition).unwrap(),
            bs_power_w(&p, 0.0, BsState::Active).unwrap()
        );
        assert!(bs_power_w(&p, 1.5, BsState::Active).is_err());
        assert!(bs_power_w(&p, -0.1, BsState::Active).is_err());
    }

    #[test]
    fn n_trx_scales() {
        let p = PowerParams {
            n_trx: 3,
            ..PowerParams::micro_default()
        };
        assert_eq!(bs_power_w(&p, 0.0, BsState::Sleeping).unwrap(), 117.0);
    }

    #[test]
    fn validation() {
        assert!(PowerParams::macro_default().validate("power.macro").is_ok());
        let bad = PowerParams {
            p_sleep_w: 200.0,
            ..PowerParams::macro_default()
        };
        let err = bad.validate("power.macro").unwrap_err().to_string();
        assert!(err.contains("power.macro.p0"), "{err}");
    }

    #[test]
    fn energy_examples() {
        let mut t = PowerTrace::new();
        assert_eq!(integrate_energy(&t).unwrap().energy_j, 0.0);
        t.push(0.0, 10.0, 100.0);
        assert_eq!(integrate_energy(&t).unwrap().energy_j, 1000.0);
        t.push(10.0, 20.0, 50.0);
        assert_eq!(integrate_energy(&t).unwrap().energy_j, 1500.0);
    }

    #[test]
    fn hourly_split() {
        let mut t = PowerTrace::new();
        t.push(0.0, 5400.0, 100.0);
        t.push(5400.0, 7200.0, 40.0);
        let s = integrate_energy(&t).unwrap();
        assert_eq!(s.hourly_avg_power_w, vec![(0, 100.0), (1, 70.0)]);
    }

    #[test]
    fn malformed_rejected() {
        let gap = PowerTrace {
            segments: vec![
                PowerSegment { t_start: 0.0, t_end: 1.0, power_w: 1.0 },
                PowerSegment { t_start: 2.0, t_end: 3.0, power_w: 1.0 },
            ],
        };
        assert!(matches!(integrate_energy(&gap), Err(Error::MalformedTrace(_))));
        let overlap = PowerTrace {
            segments: vec![
                PowerSegment { t_start: 0.0, t_end: 2.0, power_w: 1.0 },
                PowerSegment { t_start: 1.0, t_end: 3.0, power_w: 1.0 },
            ],
        };
        assert!(integrate_energy(&overlap).is_err());
        let empty_seg = PowerTrace {
            segments: vec![PowerSegment { t_start: 1.0, t_end: 1.0, power_w: 1.0 }],
        };
        assert!(integrate_energy(&empty_seg).is_err());
    }

    proptest! {
        #[test]
        fn active_power_increasing_and_above_sleep(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = PowerParams::micro_default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi > lo);
            let plo = bs_power_w(&p, lo, BsState::Active).unwrap();
            let phi = bs_power_w(&p, hi, BsState::Active).unwrap();
            prop_assert!(phi > plo);
            prop_assert!(bs_power_w(&p, lo, BsState::Sleeping).unwrap() < plo);
        }

        #[test]
        fn energy_additive(
            xs in proptest::collection::vec((0.1f64..100.0, 0.0f64..500.0), 1..8),
            ys in proptest::collection::vec((0.1f64..100.0, 0.0f64..500.0), 1..8),
        ) {
            let build = |segs: &[(f64, f64)], start: f64| {
                let mut t = PowerTrace::new();
                let mut now = start;
                for &(dur, p) in segs {
                    t.push(now, now + dur, p);
                    now += dur;
                }
                (t, now)
            };
            let (a, end_a) = build(&xs, 0.0);
            let (b, _) = build(&ys, end_a);
            let mut joined = a.clone();
            for s in &b.segments {
                joined.push(s.t_start, s.t_end, s.power_w);
            }
            let ea = integrate_energy(&a).unwrap().energy_j;
            let eb = integrate_energy(&b).unwrap().energy_j;
            let ej = integrate_energy(&joined).unwrap().energy_j;
            prop_assert!((ea + eb - ej).abs() <= 1e-9 * ej.max(1.0));
        }
    }
}
