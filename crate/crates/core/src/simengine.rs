//! Event-driven flow-level simulation of one day of FTP-style downloads under
//! a conventional heterogeneous network and the control/traffic-decoupled
//! architecture with and without traffic base-station sleeping.
//!
//! Time is kept in integer nanoseconds. Each base station splits its data
//! resource blocks equally among its flows; a station with at least one flow
//! occupies all of its data blocks, and that occupancy is what neighbours see
//! as interference.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::powermodel::{bs_power_w, BsState, PowerParams, PowerTrace};
use crate::radio::{self, LinkParams, RbConfig};
use crate::rng::derive_seed;
use crate::topology::{distance, NetworkLayout, Position, Role};

pub const NS_PER_S: u64 = 1_000_000_000;
pub const HOUR_NS: u64 = 3600 * NS_PER_S;
pub const DAY_NS: u64 = 24 * HOUR_NS;
pub const HOURS: usize = 24;

const STREAM_LAYOUT: u64 = 11;
const STREAM_ARRIVALS: u64 = 12;
const STREAM_PILOT: u64 = 13;

/// Remaining bits below this fraction of the flow size count as delivered.
const DONE_FRACTION: f64 = 1e-12;

pub fn secs(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

pub fn to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

/// Seconds with nine decimals, exact for nanosecond timestamps.
pub fn fmt_time(ns: u64) -> String {
    format!("{}.{:09}", ns / NS_PER_S, ns % NS_PER_S)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Hetnet,
    HcaNoSleep,
    HcaSleep,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Hetnet, Scheme::HcaNoSleep, Scheme::HcaSleep];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hetnet => "HETNET",
            Scheme::HcaNoSleep => "HCA_NO_SLEEP",
            Scheme::HcaSleep => "HCA_SLEEP",
        }
    }

    /// Control and traffic layers separated (CBSs carry control only).
    pub fn is_hca(self) -> bool {
        !matches!(self, Scheme::Hetnet)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == up)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown scheme `{s}` (expected HETNET, HCA_NO_SLEEP or HCA_SLEEP)"
                ))
            })
    }
}

/// Smooth synthetic day: 0.1 at 05:00 rising to 1.0 at 21:00 along a
/// half-cosine, then falling back over the night.
pub fn synthetic_profile() -> Vec<f64> {
    use std::f64::consts::PI;
    (0..HOURS)
        .map(|h| {
            let h = h as f64;
            let (lo, hi) = (0.1, 1.0);
            let rise = (h - 5.0).rem_euclid(24.0);
            if rise <= 16.0 {
                lo + (hi - lo) * (1.0 - (PI * rise / 16.0).cos()) / 2.0
            } else {
                lo + (hi - lo) * (1.0 + (PI * (rise - 16.0) / 8.0).cos()) / 2.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    /// Hourly arrival-rate multipliers, peak equal to 1.
    pub multipliers: Vec<f64>,
    /// Flows per second at multiplier 1; `None` calibrates it from `peak_users`.
    pub base_rate: Option<f64>,
    /// Target mean number of concurrent flows in the peak hour.
    pub peak_users: f64,
    pub flow_size_bits: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self {
            multipliers: synthetic_profile(),
            base_rate: None,
            peak_users: 10.0,
            flow_size_bits: 4e6,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, msg: String| Err(Error::Range { key: format!("traffic.{key}"), msg });
        if self.multipliers.len() != HOURS {
            return range("profile", format!("needs exactly 24 values, got {}", self.multipliers.len()));
        }
        if let Some(v) = self.multipliers.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return range("profile", format!("multiplier {v} outside (0, 1]"));
        }
        let peak = self.multipliers.iter().copied().fold(0.0, f64::max);
        if (peak - 1.0).abs() > 1e-12 {
            return range("profile", format!("peak multiplier must be 1, got {peak}"));
        }
        if let Some(r) = self.base_rate {
            if !(r >= 0.0 && r.is_finite()) {
                return range("base_rate", format!("must be >= 0, got {r}"));
            }
        }
        if !(self.peak_users > 0.0 && self.peak_users.is_finite()) {
            return range("peak_users", "must be > 0".into());
        }
        if !(self.flow_size_bits > 0.0 && self.flow_size_bits.is_finite()) {
            return range("flow_size", "must be > 0".into());
        }
        Ok(())
    }

    /// Index of the first hour with the smallest multiplier.
    pub fn trough_hour(&self) -> usize {
        (0..self.multipliers.len())
            .min_by(|a, b| self.multipliers[*a].total_cmp(&self.multipliers[*b]))
            .unwrap_or(0)
    }

    /// Index of the first hour with the largest multiplier.
    pub fn peak_hour(&self) -> usize {
        radio::argmax_first(&self.multipliers)
    }
}

/// Arrival rate in flows/s during `hour`.
pub fn hourly_rate(profile: &TrafficProfile, base_rate: f64, hour: usize) -> Result<f64> {
    profile
        .multipliers
        .get(hour)
        .map(|m| base_rate * m)
        .ok_or_else(|| Error::InvalidParameter(format!("hour {hour} outside 0..23")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SleepPolicy {
    pub load_threshold_off: f64,
    pub rate_floor_bps: f64,
    pub check_period_s: f64,
    pub close_down_delay_s: f64,
    pub set_up_delay_s: f64,
}

impl Default for SleepPolicy {
    fn default() -> Self {
        Self {
            load_threshold_off: 0.1,
            rate_floor_bps: 500e3,
            check_period_s: 60.0,
            close_down_delay_s: 0.052,
            set_up_delay_s: 3.0,
        }
    }
}

impl SleepPolicy {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, msg: &str| Err(Error::Range { key: format!("policy.{key}"), msg: msg.into() });
        if !(0.0..=1.0).contains(&self.load_threshold_off) {
            return range("load_threshold_off", "must lie in [0, 1]");
        }
        if !(self.rate_floor_bps >= 0.0 && self.rate_floor_bps.is_finite()) {
            return range("rate_floor", "must be >= 0");
        }
        if !(self.check_period_s > 0.0 && self.check_period_s.is_finite()) {
            return range("check_period", "must be > 0");
        }
        if !(self.close_down_delay_s >= 0.0 && self.close_down_delay_s.is_finite()) {
            return range("close_down_delay", "must be >= 0");
        }
        if !(self.set_up_delay_s >= 0.0 && self.set_up_delay_s.is_finite()) {
            return range("set_up_delay", "must be >= 0");
        }
        Ok(())
    }
}

/// Load-balancing offsets on the transmit power of active TBSs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomPolicy {
    pub enabled: bool,
    pub max_db: f64,
    pub step_db: f64,
    /// Data-block occupancy above which a TBS shrinks.
    pub overload: f64,
    /// Occupancy below which a neighbour of an overloaded TBS expands.
    pub underload: f64,
    pub neighbor_radius_m: f64,
}

impl Default for ZoomPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            max_db: 3.0,
            step_db: 1.0,
            overload: 0.9,
            underload: 0.5,
            neighbor_radius_m: 500.0,
        }
    }
}

impl ZoomPolicy {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, msg: &str| Err(Error::Range { key: format!("zoom.{key}"), msg: msg.into() });
        if !(self.max_db >= 0.0 && self.max_db.is_finite()) {
            return range("max_db", "must be >= 0");
        }
        if !(self.step_db > 0.0 && self.step_db.is_finite()) {
            return range("step_db", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.overload) {
            return range("overload", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.underload) {
            return range("underload", "must lie in [0, 1]");
        }
        if !(self.neighbor_radius_m >= 0.0) {
            return range("neighbor_radius", "must be >= 0");
        }
        Ok(())
    }
}

/// One zoom controller step for a TBS: shrink when overloaded, expand when
/// an overloaded neighbour needs relief, clamped to +-max.
pub fn cell_zoom(zoom_db: f64, overloaded: bool, relieve_neighbor: bool, policy: &ZoomPolicy) -> f64 {
    let next = if overloaded {
        zoom_db - policy.step_db
    } else if relieve_neighbor {
        zoom_db + policy.step_db
    } else {
        zoom_db
    };
    next.clamp(-policy.max_db, policy.max_db)
}

/// Everything a day of simulation needs apart from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub rings: u32,
    pub isd_m: f64,
    pub tbs_expected: f64,
    pub wrap: bool,
    pub macro_link: LinkParams,
    pub micro_link: LinkParams,
    pub rb: RbConfig,
    pub macro_power: PowerParams,
    pub micro_power: PowerParams,
    pub traffic: TrafficProfile,
    pub policy: SleepPolicy,
    pub zoom: ZoomPolicy,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            rings: 2,
            isd_m: 500.0,
            tbs_expected: 38.0,
            wrap: true,
            macro_link: LinkParams::macro_default(),
            micro_link: LinkParams::micro_default(),
            rb: RbConfig::default(),
            macro_power: PowerParams::macro_default(),
            micro_power: PowerParams::micro_default(),
            traffic: TrafficProfile::default(),
            policy: SleepPolicy::default(),
            zoom: ZoomPolicy::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.rings > 5 {
            return Err(Error::Range { key: "topology.rings".into(), msg: "must lie in 0..=5".into() });
        }
        if !(self.isd_m > 0.0 && self.isd_m.is_finite()) {
            return Err(Error::Range { key: "topology.isd".into(), msg: "must be > 0".into() });
        }
        if !(self.tbs_expected > 0.0 && self.tbs_expected.is_finite()) {
            return Err(Error::Range { key: "topology.tbs_expected".into(), msg: "must be > 0".into() });
        }
        self.macro_link.validate("radio.macro")?;
        self.micro_link.validate("radio.micro")?;
        self.rb.validate()?;
        self.macro_power.validate("power.macro")?;
        self.micro_power.validate("power.micro")?;
        self.traffic.validate()?;
        self.policy.validate()?;
        self.zoom.validate()
    }

    pub fn layout(&self, seed: u64) -> Result<NetworkLayout> {
        NetworkLayout::generate(
            self.rings,
            self.isd_m,
            self.tbs_expected,
            self.wrap,
            derive_seed(seed, STREAM_LAYOUT),
        )
    }

    fn link(&self, role: Role) -> &LinkParams {
        match role {
            Role::Cbs => &self.macro_link,
            Role::Tbs => &self.micro_link,
        }
    }

    fn power(&self, role: Role) -> &PowerParams {
        match role {
            Role::Cbs => &self.macro_power,
            Role::Tbs => &self.micro_power,
        }
    }
}

/// Fraction of all resource blocks a station occupies.
pub fn rb_load(scheme: Scheme, role: Role, busy: bool, rb: &RbConfig) -> f64 {
    let ctrl = rb.control_rb_fraction;
    let data = if busy { 1.0 - ctrl } else { 0.0 };
    match (scheme.is_hca(), role) {
        (true, Role::Cbs) => ctrl,
        (true, Role::Tbs) => data,
        (false, _) => ctrl + data,
    }
}

/// Per-flow rates when a station's data blocks are split equally.
pub fn update_rates(sinrs: &[f64], rb: &RbConfig) -> Vec<f64> {
    let share = rb.data_rbs() / sinrs.len().max(1) as f64;
    sinrs
        .iter()
        .map(|s| radio::rate_bps(*s, share, rb.rb_bandwidth_hz))
        .collect()
}

/// Strongest eligible candidate by received power; ties go to the lowest id.
pub fn pick_strongest(rx: &[f64], eligible: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in rx.iter().enumerate() {
        if eligible(i) && best.is_none_or(|b| *p > rx[b]) {
            best = Some(i);
        }
    }
    best
}

/// A scripted arrival: time, position and per-site shadowing in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub arrival_ns: u64,
    pub pos: Position,
    pub shadowing_db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub record_events: bool,
    pub record_traces: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival,
    Serve,
    Queue,
    Block,
    Depart,
    Move,
    WakeStart,
    Active,
    CloseStart,
    Sleep,
    Zoom,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Serve => "serve",
            EventKind::Queue => "queue",
            EventKind::Block => "block",
            EventKind::Depart => "depart",
            EventKind::Move => "move",
            EventKind::WakeStart => "wake_start",
            EventKind::Active => "active",
            EventKind::CloseStart => "close_start",
            EventKind::Sleep => "sleep",
            EventKind::Zoom => "zoom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t_ns: u64,
    pub kind: EventKind,
    pub bs: Option<usize>,
    pub flow: Option<u64>,
}

impl Event {
    /// `t,kind,bs,flow` with empty fields for absent ids.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{}",
            fmt_time(self.t_ns),
            self.kind.name(),
            opt(self.bs.map(|b| b as u64)),
            opt(self.flow)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HourStats {
    pub avg_users: f64,
    pub avg_power_w: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsHour {
    pub sleep_fraction: f64,
    pub avg_load: f64,
    pub avg_power_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsReport {
    pub id: usize,
    pub role: Role,
    pub hours: Vec<BsHour>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub base_rate: f64,
    pub hours: Vec<HourStats>,
    pub bs: Vec<BsReport>,
    pub daily_energy_j: f64,
    pub mean_flow_s: f64,
    /// Flows that found no server at least once.
    pub blocked: u64,
    pub arrivals: u64,
    pub completed: u64,
    /// Sum over flows of delivered bits (completed sizes plus partial progress).
    pub bits_delivered: f64,
    /// Sum over stations of integrated service.
    pub bits_served: f64,
    pub events: Vec<Event>,
    /// Per-station power traces in seconds, in site order, when recorded.
    pub traces: Vec<PowerTrace>,
}

impl SimReport {
    pub fn daily_avg_power_w(&self) -> f64 {
        self.hours.iter().map(|h| h.avg_power_w).sum::<f64>() / self.hours.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Steady,
    Waking,
    Closing,
}

struct Station {
    role: Role,
    pos: Position,
    params: PowerParams,
    state: BsState,
    phase: Phase,
    zoom_db: f64,
    zoom_lin: f64,
    flows: Vec<usize>,
    queued: Vec<usize>,
    busy: bool,
    load: f64,
    power_w: f64,
    asleep: bool,
    last_ns: u64,
    energy_j: [f64; HOURS],
    load_s: [f64; HOURS],
    sleep_s: [f64; HOURS],
    period_busy_s: f64,
    served_bits: f64,
    trace: Option<PowerTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Served(usize),
    Queued(usize),
    Blocked,
}

struct FlowSlot {
    id: u64,
    arrival_ns: u64,
    size: f64,
    remaining: f64,
    /// Received power per site per RB before zoom offsets, mW.
    rx: Vec<f64>,
    /// Occupancy-weighted received power summed over every transmitting site.
    interference: f64,
    status: Status,
    rate: f64,
    blocked_once: bool,
    sys_index: usize,
}

enum Arrivals {
    Poisson {
        rng: ChaCha8Rng,
        multipliers: Vec<f64>,
        base_rate: f64,
        /// Float clock of the arrival process, seconds.
        t: f64,
    },
    Scripted(std::vec::IntoIter<FlowSpec>),
}

struct Sim<'a> {
    params: &'a SimParams,
    layout: &'a NetworkLayout,
    scheme: Scheme,
    sites: Vec<Station>,
    /// Occupancy weight of each site on the data blocks.
    weight: Vec<f64>,
    flows: Vec<FlowSlot>,
    free: Vec<usize>,
    in_system: Vec<usize>,
    blocked: Vec<usize>,
    timers: BinaryHeap<Reverse<(u64, u64, usize)>>,
    timer_seq: u64,
    now: u64,
    served_to: u64,
    noise_mw: f64,
    next_flow_id: u64,
    users_last_ns: u64,
    users_s: [f64; HOURS],
    warmup_ns: u64,
    users_after_warmup_s: f64,
    abort_above: Option<usize>,
    aborted: bool,
    arrivals: Arrivals,
    next_arrival: Option<FlowSpec>,
    check_ns: u64,
    next_check: u64,
    horizon: u64,
    rates_dirty: bool,
    events: Option<Vec<Event>>,
    n_arrivals: u64,
    n_completed: u64,
    n_blocked: u64,
    flow_time_s: f64,
    bits_completed: f64,
}

/// Calls `f(hour, seconds)` for each hour-aligned piece of `[from, to)`.
fn split_hours(from: u64, to: u64, mut f: impl FnMut(usize, f64)) {
    let mut t = from;
    while t < to {
        let hour = (t / HOUR_NS) as usize;
        let end = to.min((hour as u64 + 1) * HOUR_NS);
        f(hour.min(HOURS - 1), secs(end - t));
        t = end;
    }
}

impl<'a> Sim<'a> {
    fn new(
        params: &'a SimParams,
        layout: &'a NetworkLayout,
        scheme: Scheme,
        arrivals: Arrivals,
        horizon: u64,
        opts: RunOptions,
    ) -> Self {
        let sites: Vec<Station> = layout
            .sites
            .iter()
            .map(|s| Station {
                role: s.role,
                pos: s.pos,
                params: *params.power(s.role),
                state: BsState::Active,
                phase: Phase::Steady,
                zoom_db: 0.0,
                zoom_lin: 1.0,
                flows: Vec::new(),
                queued: Vec::new(),
                busy: false,
                load: 0.0,
                power_w: 0.0,
                asleep: false,
                last_ns: 0,
                energy_j: [0.0; HOURS],
                load_s: [0.0; HOURS],
                sleep_s: [0.0; HOURS],
                period_busy_s: 0.0,
                served_bits: 0.0,
                trace: opts.record_traces.then(PowerTrace::new),
            })
            .collect();
        let n = sites.len();
        let mut sim = Sim {
            params,
            layout,
            scheme,
            sites,
            weight: vec![0.0; n],
            flows: Vec::new(),
            free: Vec::new(),
            in_system: Vec::new(),
            blocked: Vec::new(),
            timers: BinaryHeap::new(),
            timer_seq: 0,
            now: 0,
            served_to: 0,
            noise_mw: params.rb.noise_per_rb_mw(&params.micro_link),
            next_flow_id: 0,
            users_last_ns: 0,
            users_s: [0.0; HOURS],
            warmup_ns: 0,
            users_after_warmup_s: 0.0,
            abort_above: None,
            aborted: false,
            arrivals,
            next_arrival: None,
            check_ns: to_ns(params.policy.check_period_s).max(1),
            next_check: 0,
            horizon,
            rates_dirty: false,
            events: opts.record_events.then(Vec::new),
            n_arrivals: 0,
            n_completed: 0,
            n_blocked: 0,
            flow_time_s: 0.0,
            bits_completed: 0.0,
        };
        sim.next_check = sim.check_ns;
        for i in 0..n {
            sim.refresh_station(i, true);
        }
        sim.next_arrival = sim.draw_arrival();
        sim
    }

    fn log(&mut self, kind: EventKind, bs: Option<usize>, flow: Option<u64>) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(Event { t_ns: self.now, kind, bs, flow });
        }
    }

    fn draw_arrival(&mut self) -> Option<FlowSpec> {
        let n_sites = self.sites.len();
        match &mut self.arrivals {
            Arrivals::Scripted(it) => it.next(),
            Arrivals::Poisson { rng, multipliers, base_rate, t } => {
                let horizon_s = secs(self.horizon);
                loop {
                    if *t >= horizon_s {
                        return None;
                    }
                    let hour = ((*t / 3600.0).floor() as usize).min(HOURS - 1);
                    let rate = *base_rate * multipliers[hour];
                    let hour_end = ((hour + 1) as f64 * 3600.0).min(horizon_s);
                    if rate <= 0.0 {
                        *t = hour_end;
                        continue;
                    }
                    let u: f64 = rng.random();
                    let gap = -(1.0 - u).ln() / rate;
                    if *t + gap >= hour_end {
                        // Memoryless: restart the draw at the hour boundary.
                        *t = hour_end;
                        continue;
                    }
                    *t += gap;
                    let pos = self.layout.region.sample(rng);
                    let shadowing_db = (0..n_sites)
                        .map(|i| {
                            let z: f64 = rng.sample(StandardNormal);
                            z * self.params.link(self.layout.sites[i].role).shadowing_sigma_db
                        })
                        .collect();
                    let arrival_ns = ((*t * 1e9) as u64).max(self.now);
                    return Some(FlowSpec { arrival_ns, pos, shadowing_db });
                }
            }
        }
    }

    /// Effective received power of flow slot `f` from site `i`.
    fn rx_eff(&self, f: usize, i: usize) -> f64 {
        self.flows[f].rx[i] * self.sites[i].zoom_lin
    }

    fn fresh_interference(&self, f: usize) -> f64 {
        (0..self.sites.len())
            .filter(|i| self.weight[*i] > 0.0)
            .map(|i| self.weight[i] * self.rx_eff(f, i))
            .sum()
    }

    fn sinr_on(&self, f: usize, i: usize) -> f64 {
        let own = self.rx_eff(f, i);
        let other = (self.flows[f].interference - self.weight[i] * own).max(0.0);
        own / (self.noise_mw + other)
    }

    /// Rate the flow would get after joining site `i`.
    fn offered_rate(&self, f: usize, i: usize) -> f64 {
        let n = self.sites[i].flows.len() + 1;
        radio::rate_bps(self.sinr_on(f, i), self.params.rb.data_rbs() / n as f64, self.params.rb.rb_bandwidth_hz)
    }

    /// Serves bits for every served flow up to `to`.
    fn serve_until(&mut self, to: u64) {
        if to <= self.served_to {
            return;
        }
        let dt = secs(to - self.served_to);
        for k in 0..self.in_system.len() {
            let f = self.in_system[k];
            let slot = &mut self.flows[f];
            if let Status::Served(b) = slot.status {
                let got = (slot.rate * dt).min(slot.remaining);
                slot.remaining -= got;
                self.sites[b].served_bits += got;
            }
        }
        self.served_to = to;
    }

    fn flush_station(&mut self, i: usize) {
        let now = self.now;
        let s = &mut self.sites[i];
        if now <= s.last_ns {
            return;
        }
        let (p, load, asleep) = (s.power_w, s.load, s.asleep);
        let busy = if s.busy { 1.0 } else { 0.0 };
        let (energy, load_s, sleep_s) = (&mut s.energy_j, &mut s.load_s, &mut s.sleep_s);
        split_hours(s.last_ns, now, |h, dt| {
            energy[h] += p * dt;
            load_s[h] += load * dt;
            if asleep {
                sleep_s[h] += dt;
            }
        });
        s.period_busy_s += busy * secs(now - s.last_ns);
        if let Some(tr) = s.trace.as_mut() {
            tr.push(secs(s.last_ns), secs(now), p);
        }
        s.last_ns = now;
    }

    fn flush_users(&mut self) {
        let n = self.in_system.len() as f64;
        let users = &mut self.users_s;
        split_hours(self.users_last_ns, self.now, |h, dt| users[h] += n * dt);
        let from = self.users_last_ns.max(self.warmup_ns);
        if self.now > from {
            self.users_after_warmup_s += n * secs(self.now - from);
        }
        self.users_last_ns = self.now;
    }

    /// Recomputes busy flag, load and power of a site after any change.
    fn refresh_station(&mut self, i: usize, force: bool) {
        let scheme = self.scheme;
        let rb = self.params.rb;
        let s = &self.sites[i];
        let busy = s.state == BsState::Active && !s.flows.is_empty();
        let load = match s.state {
            BsState::Active => rb_load(scheme, s.role, busy, &rb),
            _ => 0.0,
        };
        let power = bs_power_w(&s.params, load, s.state).expect("load within [0, 1]");
        let asleep = s.state == BsState::Sleeping;
        if !force && busy == s.busy && load == s.load && power == s.power_w && asleep == s.asleep {
            return;
        }
        self.flush_station(i);
        let s = &mut self.sites[i];
        s.asleep = asleep;
        s.busy = busy;
        s.load = load;
        s.power_w = power;
        let transmits_data = !(scheme.is_hca() && s.role == Role::Cbs);
        let w = if busy && transmits_data { 1.0 } else { 0.0 };
        self.set_weight(i, w);
        self.rates_dirty = true;
    }

    fn set_weight(&mut self, i: usize, w: f64) {
        let delta = w - self.weight[i];
        if delta == 0.0 {
            return;
        }
        self.weight[i] = w;
        let z = self.sites[i].zoom_lin;
        for k in 0..self.in_system.len() {
            let f = self.in_system[k];
            let slot = &mut self.flows[f];
            slot.interference += delta * slot.rx[i] * z;
        }
        self.rates_dirty = true;
    }

    fn recompute_all_interference(&mut self) {
        for k in 0..self.in_system.len() {
            let f = self.in_system[k];
            self.flows[f].interference = self.fresh_interference(f);
        }
        self.rates_dirty = true;
    }

    fn update_all_rates(&mut self) {
        if !self.rates_dirty {
            return;
        }
        self.rates_dirty = false;
        let rb = self.params.rb;
        for i in 0..self.sites.len() {
            let n = self.sites[i].flows.len();
            if n == 0 {
                continue;
            }
            let share = rb.data_rbs() / n as f64;
            for k in 0..n {
                let f = self.sites[i].flows[k];
                let sinr = self.sinr_on(f, i);
                self.flows[f].rate = radio::rate_bps(sinr, share, rb.rb_bandwidth_hz);
            }
        }
    }

    fn next_departure(&self) -> Option<u64> {
        let mut best: Option<u64> = None;
        for &f in &self.in_system {
            let slot = &self.flows[f];
            if let Status::Served(_) = slot.status {
                if slot.rate <= 0.0 {
                    continue;
                }
                let dt = ((slot.remaining / slot.rate) * 1e9).ceil();
                let t = self.served_to.saturating_add(if dt.is_finite() { dt as u64 } else { u64::MAX / 4 });
                if best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        }
        best
    }

    fn attach(&mut self, f: usize, i: usize, kind: EventKind) {
        self.flows[f].status = Status::Served(i);
        self.sites[i].flows.push(f);
        self.refresh_station(i, false);
        self.rates_dirty = true;
        let id = self.flows[f].id;
        self.log(kind, Some(i), Some(id));
    }

    fn steady_active(&self, i: usize) -> bool {
        let s = &self.sites[i];
        s.state == BsState::Active && s.phase == Phase::Steady
    }

    /// Picks a server for a flow that currently has none.
    fn associate(&mut self, f: usize, kind: EventKind) {
        let n = self.sites.len();
        let rx: Vec<f64> = (0..n).map(|i| self.rx_eff(f, i)).collect();
        match self.scheme {
            Scheme::Hetnet => {
                let best = pick_strongest(&rx, |i| self.steady_active(i)).expect("HETNET sites are always on");
                self.attach(f, best, kind);
            }
            Scheme::HcaNoSleep | Scheme::HcaSleep => {
                let floor = self.params.policy.rate_floor_bps;
                let is_tbs = |i: usize| self.sites[i].role == Role::Tbs;
                let good = pick_strongest(&rx, |i| {
                    is_tbs(i) && self.steady_active(i) && self.offered_rate(f, i) >= floor
                });
                if let Some(b) = good {
                    self.attach(f, b, kind);
                    return;
                }
                if self.scheme == Scheme::HcaNoSleep {
                    if let Some(b) = pick_strongest(&rx, |i| is_tbs(i) && self.steady_active(i)) {
                        self.attach(f, b, kind);
                        return;
                    }
                } else if let Some(b) = pick_strongest(&rx, |i| {
                    is_tbs(i)
                        && (self.sites[i].state == BsState::Sleeping || self.sites[i].phase == Phase::Waking)
                }) {
                    if self.sites[b].state == BsState::Sleeping {
                        self.start_wake(b);
                    }
                    self.flows[f].status = Status::Queued(b);
                    self.sites[b].queued.push(f);
                    let id = self.flows[f].id;
                    self.log(EventKind::Queue, Some(b), Some(id));
                    return;
                }
                self.flows[f].status = Status::Blocked;
                if !self.flows[f].blocked_once {
                    self.flows[f].blocked_once = true;
                    self.n_blocked += 1;
                }
                self.blocked.push(f);
                let id = self.flows[f].id;
                self.log(EventKind::Block, None, Some(id));
            }
        }
    }

    fn schedule(&mut self, at: u64, site: usize) {
        self.timer_seq += 1;
        self.timers.push(Reverse((at, self.timer_seq, site)));
    }

    fn start_wake(&mut self, i: usize) {
        self.sites[i].state = BsState::Transition;
        self.sites[i].phase = Phase::Waking;
        self.refresh_station(i, false);
        self.log(EventKind::WakeStart, Some(i), None);
        let at = self.now + to_ns(self.params.policy.set_up_delay_s);
        self.schedule(at, i);
    }

    fn start_close(&mut self, i: usize) {
        self.sites[i].state = BsState::Transition;
        self.sites[i].phase = Phase::Closing;
        self.refresh_station(i, false);
        // Weight is zero now, so resetting the offset leaves interference intact.
        self.sites[i].zoom_db = 0.0;
        self.sites[i].zoom_lin = 1.0;
        self.log(EventKind::CloseStart, Some(i), None);
        let at = self.now + to_ns(self.params.policy.close_down_delay_s);
        self.schedule(at, i);
    }

    fn finish_transition(&mut self, i: usize) {
        match self.sites[i].phase {
            Phase::Waking => {
                self.sites[i].state = BsState::Active;
                self.sites[i].phase = Phase::Steady;
                self.refresh_station(i, false);
                self.log(EventKind::Active, Some(i), None);
                let queued = std::mem::take(&mut self.sites[i].queued);
                for f in queued {
                    self.attach(f, i, EventKind::Serve);
                }
            }
            Phase::Closing => {
                self.sites[i].state = BsState::Sleeping;
                self.sites[i].phase = Phase::Steady;
                self.refresh_station(i, false);
                self.log(EventKind::Sleep, Some(i), None);
            }
            Phase::Steady => {}
        }
    }

    fn arrive(&mut self, spec: FlowSpec) {
        self.flush_users();
        let n = self.sites.len();
        let f = self.free.pop().unwrap_or_else(|| {
            self.flows.push(FlowSlot {
                id: 0,
                arrival_ns: 0,
                size: 0.0,
                remaining: 0.0,
                rx: vec![0.0; n],
                interference: 0.0,
                status: Status::Blocked,
                rate: 0.0,
                blocked_once: false,
                sys_index: 0,
            });
            self.flows.len() - 1
        });
        let size = self.params.traffic.flow_size_bits;
        let scheme = self.scheme;
        let rb = self.params.rb;
        for i in 0..n {
            let site = &self.layout.sites[i];
            self.flows[f].rx[i] = if scheme.is_hca() && site.role == Role::Cbs {
                0.0
            } else {
                let d = distance(&spec.pos, &site.pos, &self.layout.region);
                radio::rx_power_per_rb_mw(self.params.link(site.role), &rb, d, spec.shadowing_db[i], 0.0)
            };
        }
        let id = self.next_flow_id;
        self.next_flow_id += 1;
        let sys_index = self.in_system.len();
        {
            let slot = &mut self.flows[f];
            slot.id = id;
            slot.arrival_ns = self.now;
            slot.size = size;
            slot.remaining = size;
            slot.rate = 0.0;
            slot.blocked_once = false;
            slot.sys_index = sys_index;
        }
        self.in_system.push(f);
        self.flows[f].interference = self.fresh_interference(f);
        self.n_arrivals += 1;
        self.log(EventKind::Arrival, None, Some(id));
        self.associate(f, EventKind::Serve);
    }

    fn depart(&mut self, f: usize) {
        self.flush_users();
        let Status::Served(b) = self.flows[f].status else {
            unreachable!("only served flows depart");
        };
        let leftover = self.flows[f].remaining;
        self.sites[b].served_bits += leftover;
        self.flows[f].remaining = 0.0;
        self.bits_completed += self.flows[f].size;
        self.n_completed += 1;
        self.flow_time_s += secs(self.now - self.flows[f].arrival_ns);
        let list = &mut self.sites[b].flows;
        let pos = list.iter().position(|x| *x == f).expect("flow listed on its server");
        list.remove(pos);
        let k = self.flows[f].sys_index;
        self.in_system.swap_remove(k);
        if let Some(&moved) = self.in_system.get(k) {
            self.flows[moved].sys_index = k;
        }
        let id = self.flows[f].id;
        self.free.push(f);
        self.refresh_station(b, false);
        self.rates_dirty = true;
        self.log(EventKind::Depart, Some(b), Some(id));
    }

    fn check(&mut self) {
        let n = self.sites.len();
        for i in 0..n {
            self.flush_station(i);
        }
        let period = secs(self.check_ns);
        let busy: Vec<f64> = self
            .sites
            .iter_mut()
            .map(|s| std::mem::take(&mut s.period_busy_s) / period)
            .collect();

        if self.scheme.is_hca() && self.params.zoom.enabled {
            self.zoom_step(&busy);
        }
        self.recompute_all_interference();

        if self.scheme == Scheme::HcaSleep {
            let thr = self.params.policy.load_threshold_off;
            let floor = self.params.policy.rate_floor_bps;
            for i in 0..n {
                if self.sites[i].role != Role::Tbs || !self.steady_active(i) || busy[i] >= thr {
                    continue;
                }
                let movable = self.sites[i].flows.iter().all(|&f| {
                    (0..n).any(|j| {
                        j != i
                            && self.sites[j].role == Role::Tbs
                            && self.steady_active(j)
                            && self.offered_rate(f, j) >= floor
                    })
                });
                if !movable {
                    continue;
                }
                let orphans = std::mem::take(&mut self.sites[i].flows);
                self.start_close(i);
                for f in orphans {
                    self.flows[f].status = Status::Blocked;
                    self.flows[f].interference = self.fresh_interference(f);
                    self.associate(f, EventKind::Move);
                }
            }
        }

        let retry = std::mem::take(&mut self.blocked);
        for f in retry {
            self.associate(f, EventKind::Serve);
        }
    }

    fn zoom_step(&mut self, busy: &[f64]) {
        let z = self.params.zoom;
        let n = self.sites.len();
        let active_tbs: Vec<bool> = (0..n)
            .map(|i| self.sites[i].role == Role::Tbs && self.steady_active(i))
            .collect();
        let overloaded: Vec<bool> = (0..n).map(|i| active_tbs[i] && busy[i] > z.overload).collect();
        for i in 0..n {
            if !active_tbs[i] {
                continue;
            }
            let relieve = busy[i] < z.underload
                && (0..n).any(|j| {
                    j != i
                        && overloaded[j]
                        && distance(&self.sites[i].pos, &self.sites[j].pos, &self.layout.region)
                            <= z.neighbor_radius_m
                });
            let next = cell_zoom(self.sites[i].zoom_db, overloaded[i], relieve, &z);
            if next != self.sites[i].zoom_db {
                self.sites[i].zoom_db = next;
                self.sites[i].zoom_lin = radio::db_to_linear(next);
                self.log(EventKind::Zoom, Some(i), None);
                self.rates_dirty = true;
            }
        }
    }

    fn run(mut self) -> (Vec<Event>, Vec<PowerTrace>, Vec<Station>, [f64; HOURS], Totals) {
        self.run_loop();
        let partial: f64 = self
            .in_system
            .iter()
            .map(|&f| self.flows[f].size - self.flows[f].remaining)
            .sum();
        let totals = Totals {
            arrivals: self.n_arrivals,
            completed: self.n_completed,
            blocked: self.n_blocked,
            flow_time_s: self.flow_time_s,
            bits_delivered: self.bits_completed + partial,
        };
        let traces = self.sites.iter_mut().filter_map(|s| s.trace.take()).collect();
        (self.events.take().unwrap_or_default(), traces, self.sites, self.users_s, totals)
    }

    fn run_loop(&mut self) {
        loop {
            if self.abort_above.is_some_and(|cap| self.in_system.len() > cap) {
                self.aborted = true;
                return;
            }
            self.update_all_rates();
            let dep = self.next_departure();
            let timer = self.timers.peek().map(|Reverse((t, _, _))| *t);
            let arr = self.next_arrival.as_ref().map(|a| a.arrival_ns);
            let candidates = [timer, dep, Some(self.next_check), arr];
            let t = candidates.iter().flatten().copied().min().unwrap_or(self.horizon);
            if t >= self.horizon {
                break;
            }
            debug_assert!(t >= self.now, "event times must not decrease");
            self.serve_until(t);
            self.now = t;

            while let Some(Reverse((tt, _, site))) = self.timers.peek().copied() {
                if tt > t {
                    break;
                }
                self.timers.pop();
                self.finish_transition(site);
            }
            self.update_all_rates();
            let done: Vec<usize> = self
                .in_system
                .iter()
                .copied()
                .filter(|&f| {
                    let s = &self.flows[f];
                    matches!(s.status, Status::Served(_)) && s.remaining <= s.size * DONE_FRACTION
                })
                .collect();
            for f in done {
                self.depart(f);
            }
            if t == self.next_check {
                self.check();
                self.next_check += self.check_ns;
            }
            while self.next_arrival.as_ref().is_some_and(|a| a.arrival_ns <= t) {
                let spec = self.next_arrival.take().expect("checked above");
                self.arrive(spec);
                self.next_arrival = self.draw_arrival();
            }
        }
        self.serve_until(self.horizon);
        self.now = self.horizon;
        for i in 0..self.sites.len() {
            self.flush_station(i);
        }
        self.flush_users();
    }
}

struct Totals {
    arrivals: u64,
    completed: u64,
    blocked: u64,
    flow_time_s: f64,
    bits_delivered: f64,
}

fn build_report(
    scheme: Scheme,
    seed: u64,
    base_rate: f64,
    horizon: u64,
    out: (Vec<Event>, Vec<PowerTrace>, Vec<Station>, [f64; HOURS], Totals),
) -> SimReport {
    let (events, traces, sites, users_s, totals) = out;
    let mut hour_len = [0.0; HOURS];
    split_hours(0, horizon, |h, dt| hour_len[h] += dt);
    let per_hour = |x: f64, h: usize| if hour_len[h] > 0.0 { x / hour_len[h] } else { 0.0 };

    let hours = (0..HOURS)
        .map(|h| HourStats {
            avg_users: per_hour(users_s[h], h),
            avg_power_w: per_hour(sites.iter().map(|s| s.energy_j[h]).sum::<f64>(), h),
        })
        .collect();
    let bs = sites
        .iter()
        .enumerate()
        .map(|(id, s)| BsReport {
            id,
            role: s.role,
            hours: (0..HOURS)
                .map(|h| BsHour {
                    sleep_fraction: per_hour(s.sleep_s[h], h),
                    avg_load: per_hour(s.load_s[h], h),
                    avg_power_w: per_hour(s.energy_j[h], h),
                })
                .collect(),
        })
        .collect();
    SimReport {
        scheme,
        seed,
        base_rate,
        hours,
        bs,
        daily_energy_j: sites.iter().flat_map(|s| s.energy_j.iter()).sum(),
        mean_flow_s: if totals.completed > 0 {
            totals.flow_time_s / totals.completed as f64
        } else {
            0.0
        },
        blocked: totals.blocked,
        arrivals: totals.arrivals,
        completed: totals.completed,
        bits_delivered: totals.bits_delivered,
        bits_served: sites.iter().map(|s| s.served_bits).sum(),
        events,
        traces,
    }
}

fn check_layout(layout: &NetworkLayout, scheme: Scheme) -> Result<()> {
    if layout.sites.is_empty() {
        return Err(Error::Scenario("layout has no base stations".into()));
    }
    if scheme.is_hca() && layout.tbs().next().is_none() {
        return Err(Error::Scenario(format!(
            "{scheme} needs at least one TBS to carry data, but the layout has none"
        )));
    }
    Ok(())
}

/// Simulates `[0, horizon)` with Poisson arrivals at `base_rate` flows/s
/// modulated by `multipliers`, over a given layout.
pub fn simulate_poisson(
    params: &SimParams,
    layout: &NetworkLayout,
    scheme: Scheme,
    base_rate: f64,
    multipliers: &[f64],
    horizon_ns: u64,
    arrival_seed: u64,
    opts: RunOptions,
) -> Result<SimReport> {
    check_layout(layout, scheme)?;
    if multipliers.len() != HOURS {
        return Err(Error::InvalidParameter("need 24 hourly multipliers".into()));
    }
    let arrivals = Arrivals::Poisson {
        rng: ChaCha8Rng::seed_from_u64(arrival_seed),
        multipliers: multipliers.to_vec(),
        base_rate,
        t: 0.0,
    };
    let out = Sim::new(params, layout, scheme, arrivals, horizon_ns, opts).run();
    Ok(build_report(scheme, arrival_seed, base_rate, horizon_ns, out))
}

/// Simulates scripted arrivals (sorted by time) over a given layout.
pub fn simulate_flows(
    params: &SimParams,
    layout: &NetworkLayout,
    scheme: Scheme,
    flows: Vec<FlowSpec>,
    horizon_ns: u64,
    opts: RunOptions,
) -> Result<SimReport> {
    check_layout(layout, scheme)?;
    if flows.windows(2).any(|w| w[1].arrival_ns < w[0].arrival_ns) {
        return Err(Error::InvalidParameter("scripted arrivals must be sorted by time".into()));
    }
    if let Some(f) = flows.iter().find(|f| f.shadowing_db.len() != layout.sites.len()) {
        return Err(Error::Dimension { expected: layout.sites.len(), got: f.shadowing_db.len() });
    }
    let arrivals = Arrivals::Scripted(flows.into_iter());
    let out = Sim::new(params, layout, scheme, arrivals, horizon_ns, opts).run();
    Ok(build_report(scheme, 0, 0.0, horizon_ns, out))
}

const PILOT_ROUNDS: usize = 14;
const PILOT_WARMUP_NS: u64 = 120 * NS_PER_S;
const PILOT_NS: u64 = 900 * NS_PER_S;
const PILOT_TOLERANCE: f64 = 0.03;

/// Mean concurrent flows after warm-up at a constant arrival rate, or `None`
/// when the backlog runs away.
/// Scheme whose peak-hour user count defines the traffic level.
pub const CALIBRATION_SCHEME: Scheme = Scheme::Hetnet;

fn pilot_users(params: &SimParams, layout: &NetworkLayout, rate: f64, seed: u64, cap: usize) -> Option<f64> {
    let arrivals = Arrivals::Poisson {
        rng: ChaCha8Rng::seed_from_u64(seed),
        multipliers: vec![1.0; HOURS],
        base_rate: rate,
        t: 0.0,
    };
    let mut sim = Sim::new(params, layout, CALIBRATION_SCHEME, arrivals, PILOT_NS, RunOptions::default());
    sim.warmup_ns = PILOT_WARMUP_NS;
    sim.abort_above = Some(cap);
    sim.run_loop();
    if sim.aborted {
        return None;
    }
    Some(sim.users_after_warmup_s / secs(PILOT_NS - PILOT_WARMUP_NS))
}

/// Base arrival rate giving about `peak_users` concurrent flows at the peak
/// multiplier under `CALIBRATION_SCHEME`. Geometric bisection over short
/// constant-rate pilots that share one arrival stream.
pub fn calibrate_base_rate(params: &SimParams, layout: &NetworkLayout, seed: u64) -> Result<f64> {
    check_layout(layout, CALIBRATION_SCHEME)?;
    let target = params.traffic.peak_users;
    let cap = (50.0 * target) as usize + 100;
    let pilot_seed = derive_seed(seed, STREAM_PILOT);
    let single_cell_bps = params.rb.data_rbs() * params.rb.rb_bandwidth_hz * 2.0;
    let mut rate = target * single_cell_bps / params.traffic.flow_size_bits;
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    for _ in 0..PILOT_ROUNDS {
        let users = pilot_users(params, layout, rate, pilot_seed, cap);
        match users {
            Some(n) if (n / target - 1.0).abs() <= PILOT_TOLERANCE => return Ok(rate),
            Some(n) if n < target => lo = Some(rate),
            _ => hi = Some(rate),
        }
        rate = match (lo, hi, users) {
            (Some(l), Some(h), _) => (l * h).sqrt(),
            (Some(l), None, Some(n)) => l * (target / n.max(1e-9)).clamp(1.0, 4.0),
            (None, Some(h), Some(n)) => h * (target / n).clamp(0.25, 1.0),
            (None, Some(h), None) => h * 0.25,
            _ => unreachable!("every round sets a bound"),
        };
    }
    Ok(rate)
}

/// One full day for `(params, scheme, seed)`; layouts and arrivals depend
/// only on the seed, so every scheme sees the same traffic.
pub fn run_scenario(params: &SimParams, scheme: Scheme, seed: u64, opts: RunOptions) -> Result<SimReport> {
    params.validate()?;
    let layout = params.layout(seed)?;
    check_layout(&layout, scheme)?;
    let base_rate = match params.traffic.base_rate {
        Some(r) => r,
        None => calibrate_base_rate(params, &layout, seed)?,
    };
    let mut report = simulate_poisson(
        params,
        &layout,
        scheme,
        base_rate,
        &params.traffic.multipliers,
        DAY_NS,
        derive_seed(seed, STREAM_ARRIVALS),
        opts,
    )?;
    report.seed = seed;
    Ok(report)
}

pub const HOURLY_HEADER: &str = "hour,scheme,avg_users,avg_power_w";
pub const BS_ENERGY_HEADER: &str = "hour,bs_id,role,state_fraction_sleep,avg_load,avg_power_w";
pub const SUMMARY_HEADER: &str = "scheme,daily_energy_j,mean_flow_s,blocked";

pub fn hourly_csv(reports: &[SimReport]) -> String {
    let mut out = format!("{HOURLY_HEADER}\n");
    for r in reports {
        for (h, s) in r.hours.iter().enumerate() {
            out.push_str(&format!("{h},{},{},{}\n", r.scheme, sig9(s.avg_users), sig9(s.avg_power_w)));
        }
    }
    out
}

pub fn bs_energy_csv(report: &SimReport) -> String {
    let mut out = format!("{BS_ENERGY_HEADER}\n");
    for h in 0..HOURS {
        for b in &report.bs {
            let x = &b.hours[h];
            out.push_str(&format!(
                "{h},{},{},{},{},{}\n",
                b.id,
                b.role,
                sig9(x.sleep_fraction),
                sig9(x.avg_load),
                sig9(x.avg_power_w)
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub daily_energy_j: f64,
    pub mean_flow_s: f64,
    pub blocked: f64,
}

impl From<&SimReport> for SummaryRow {
    fn from(r: &SimReport) -> Self {
        Self {
            scheme: r.scheme,
            daily_energy_j: r.daily_energy_j,
            mean_flow_s: r.mean_flow_s,
            blocked: r.blocked as f64,
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.scheme,
            sig9(r.daily_energy_j),
            sig9(r.mean_flow_s),
            sig9(r.blocked)
        ));
    }
    out
}

/// Per-scheme means over seeds, schemes in first-seen order.
pub fn merge_over_seeds(reports: &[SimReport]) -> (Vec<SimReport>, Vec<SummaryRow>) {
    let mut schemes: Vec<Scheme> = Vec::new();
    for r in reports {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    let mut hourly = Vec::new();
    let mut summary = Vec::new();
    for s in schemes {
        let group: Vec<&SimReport> = reports.iter().filter(|r| r.scheme == s).collect();
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&SimReport) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
        let hours = (0..HOURS)
            .map(|h| HourStats {
                avg_users: mean(&|r| r.hours[h].avg_users),
                avg_power_w: mean(&|r| r.hours[h].avg_power_w),
            })
            .collect();
        summary.push(SummaryRow {
            scheme: s,
            daily_energy_j: mean(&|r| r.daily_energy_j),
            mean_flow_s: mean(&|r| r.mean_flow_s),
            blocked: mean(&|r| r.blocked as f64),
        });
        hourly.push(SimReport {
            scheme: s,
            seed: 0,
            base_rate: mean(&|r| r.base_rate),
            hours,
            bs: Vec::new(),
            daily_energy_j: mean(&|r| r.daily_energy_j),
            mean_flow_s: mean(&|r| r.mean_flow_s),
            blocked: 0,
            arrivals: 0,
            completed: 0,
            bits_delivered: 0.0,
            bits_served: 0.0,
            events: Vec::new(),
            traces: Vec::new(),
        });
    }
    (hourly, summary)
}

pub fn events_log(report: &SimReport) -> String {
    let mut out = String::from("t,kind,bs,flow\n");
    for e in &report.events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Region, Site};
    use proptest::prelude::*;

    fn site(id: usize, x: f64, y: f64, role: Role) -> Site {
        Site { id, pos: Position::new(x, y), role }
    }

    fn custom_layout(sites: Vec<Site>) -> NetworkLayout {
        NetworkLayout { region: Region::new(4000.0, 4000.0, false).unwrap(), sites }
    }

    fn flow_at(t_s: f64, x: f64, y: f64, n_sites: usize) -> FlowSpec {
        FlowSpec { arrival_ns: to_ns(t_s), pos: Position::new(x, y), shadowing_db: vec![0.0; n_sites] }
    }

    fn logged() -> RunOptions {
        RunOptions { record_events: true, record_traces: true }
    }

    fn kinds(r: &SimReport, kind: EventKind) -> Vec<&Event> {
        r.events.iter().filter(|e| e.kind == kind).collect()
    }

    fn small_params() -> SimParams {
        SimParams { rings: 1, tbs_expected: 6.0, ..SimParams::default() }
    }

    #[test]
    fn scheme_names_parse_back() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("hca-sleep".parse::<Scheme>().unwrap(), Scheme::HcaSleep);
        assert!("GREEN".parse::<Scheme>().is_err());
    }

    #[test]
    fn time_formatting_is_exact() {
        assert_eq!(fmt_time(0), "0.000000000");
        assert_eq!(fmt_time(60_052_000_000), "60.052000000");
        assert_eq!(to_ns(0.052), 52_000_000);
    }

    #[test]
    fn synthetic_profile_shape() {
        let p = TrafficProfile::default();
        p.validate().unwrap();
        assert_eq!(p.trough_hour(), 5);
        assert_eq!(p.peak_hour(), 21);
        assert!((p.multipliers[5] - 0.1).abs() < 1e-12);
        assert!((p.multipliers[21] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        let mut p = TrafficProfile::default();
        p.multipliers[3] = 0.0;
        assert!(p.validate().is_err());
        p.multipliers = vec![0.5; 24];
        assert!(p.validate().is_err(), "peak must be 1");
        p.multipliers = vec![1.0; 23];
        assert!(p.validate().is_err());
    }

    #[test]
    fn hourly_rate_scales_multiplier() {
        let mut p = TrafficProfile { multipliers: vec![1.0; 24], ..TrafficProfile::default() };
        for h in 0..24 {
            assert_eq!(hourly_rate(&p, 3.5, h).unwrap(), 3.5);
        }
        p.multipliers[7] = 0.25;
        assert_eq!(hourly_rate(&p, 8.0, 7).unwrap(), 2.0);
        assert!(hourly_rate(&p, 1.0, 24).is_err());
    }

    #[test]
    fn doubling_base_rate_doubles_arrivals() {
        let params = small_params();
        let layout = params.layout(3).unwrap();
        let flat = vec![1.0; 24];
        let count = |rate: f64| {
            simulate_poisson(&params, &layout, Scheme::HcaNoSleep, rate, &flat, HOUR_NS, 9, RunOptions::default())
                .unwrap()
                .arrivals as f64
        };
        let (a, b) = (count(1.0), count(2.0));
        // Expected 3600 and 7200; allow five standard deviations of the ratio.
        let ratio = b / a;
        let sd = 2.0 * (1.0 / 3600.0 + 1.0 / 7200.0f64).sqrt();
        assert!((ratio - 2.0).abs() < 5.0 * sd, "ratio {ratio}");
        assert!((a - 3600.0).abs() < 5.0 * 60.0);
    }

    #[test]
    fn single_flow_on_isolated_tbs_matches_link_budget() {
        let layout = custom_layout(vec![site(0, -1500.0, 0.0, Role::Cbs), site(1, 0.0, 0.0, Role::Tbs)]);
        let params = SimParams::default();
        let flows = vec![flow_at(0.0, 400.0, 0.0, 2)];
        let r = simulate_flows(&params, &layout, Scheme::HcaNoSleep, flows, 10 * NS_PER_S, logged()).unwrap();
        // 30 dBm over 50 RBs, micro pathloss at 0.4 km, thermal noise in 180 kHz.
        let rx_dbm = 30.0 - 10.0 * 50f64.log10() - (140.7 + 36.7 * 0.4f64.log10());
        let noise_dbm = -174.0 + 10.0 * 180e3f64.log10();
        let sinr = 10f64.powf((rx_dbm - noise_dbm) / 10.0);
        assert!(sinr < 10f64.powf(2.2), "geometry must stay below the SINR cap");
        let rate = 40.0 * 180e3 * (1.0 + sinr).log2();
        let want = 4e6 / rate;
        assert_eq!(r.completed, 1);
        assert!((r.mean_flow_s - want).abs() <= 2e-9, "{} vs {want}", r.mean_flow_s);
        let serve = kinds(&r, EventKind::Serve);
        assert_eq!(serve.len(), 1);
        assert_eq!(serve[0].bs, Some(1));
    }

    #[test]
    fn equal_received_power_goes_to_lower_id() {
        assert_eq!(pick_strongest(&[1.0, 3.0, 3.0], |_| true), Some(1));
        assert_eq!(pick_strongest(&[1.0, 3.0, 3.0], |i| i != 1), Some(2));
        assert_eq!(pick_strongest(&[1.0], |_| false), None);
        let layout = custom_layout(vec![
            site(0, 0.0, 1500.0, Role::Cbs),
            site(1, -100.0, 0.0, Role::Tbs),
            site(2, 100.0, 0.0, Role::Tbs),
        ]);
        let r = simulate_flows(
            &SimParams::default(),
            &layout,
            Scheme::HcaNoSleep,
            vec![flow_at(1.0, 0.0, 0.0, 3)],
            10 * NS_PER_S,
            logged(),
        )
        .unwrap();
        assert_eq!(kinds(&r, EventKind::Serve)[0].bs, Some(1));
    }

    #[test]
    fn zoom_flips_boundary_user() {
        let params = SimParams::default();
        let link = &params.micro_link;
        // User midway between two TBSs 200 m apart: identical pathloss.
        let d = 100.0;
        let plain = radio::rx_power_per_rb_mw(link, &params.rb, d, 0.0, 0.0);
        let shrunk = radio::rx_power_per_rb_mw(link, &params.rb, d, 0.0, -2.0);
        assert!((shrunk / plain - 10f64.powf(-0.2)).abs() < 1e-12);
        assert_eq!(pick_strongest(&[plain, plain], |_| true), Some(0));
        assert_eq!(pick_strongest(&[shrunk, plain], |_| true), Some(1));
        assert_eq!(pick_strongest(&[plain * radio::db_to_linear(0.0), plain], |_| true), Some(0));
        // Only candidate keeps the user even at the minimum offset.
        let min = radio::rx_power_per_rb_mw(link, &params.rb, d, 0.0, -params.zoom.max_db);
        assert_eq!(pick_strongest(&[min], |_| true), Some(0));
    }

    #[test]
    fn cell_zoom_steps_and_clamps() {
        let z = ZoomPolicy::default();
        assert_eq!(cell_zoom(0.0, false, false, &z), 0.0);
        assert_eq!(cell_zoom(0.0, true, false, &z), -1.0);
        assert_eq!(cell_zoom(-3.0, true, false, &z), -3.0);
        assert_eq!(cell_zoom(2.0, false, true, &z), 3.0);
        assert_eq!(cell_zoom(3.0, false, true, &z), 3.0);
    }

    #[test]
    fn equal_split_of_data_blocks() {
        let rb = RbConfig::default();
        let one = update_rates(&[10.0], &rb);
        assert_eq!(one[0], radio::rate_bps(10.0, rb.data_rbs(), rb.rb_bandwidth_hz));
        let two = update_rates(&[10.0, 10.0], &rb);
        assert!((two[0] - one[0] / 2.0).abs() < 1e-6 && two[0] == two[1]);
    }

    #[test]
    fn load_per_role_and_scheme() {
        let rb = RbConfig::default();
        assert_eq!(rb_load(Scheme::HcaSleep, Role::Cbs, true, &rb), 0.2);
        assert_eq!(rb_load(Scheme::HcaNoSleep, Role::Cbs, false, &rb), 0.2);
        assert_eq!(rb_load(Scheme::HcaSleep, Role::Tbs, false, &rb), 0.0);
        assert!((rb_load(Scheme::HcaSleep, Role::Tbs, true, &rb) - 0.8).abs() < 1e-15);
        assert_eq!(rb_load(Scheme::Hetnet, Role::Tbs, false, &rb), 0.2);
        assert_eq!(rb_load(Scheme::Hetnet, Role::Cbs, true, &rb), 1.0);
    }

    #[test]
    fn crowded_cbs_area_keeps_control_load() {
        let layout = custom_layout(vec![site(0, 0.0, 0.0, Role::Cbs), site(1, 300.0, 0.0, Role::Tbs)]);
        let flows: Vec<FlowSpec> = (0..100).map(|i| flow_at(1.0 + i as f64 * 1e-3, 10.0, 5.0, 2)).collect();
        let r = simulate_flows(&SimParams::default(), &layout, Scheme::HcaNoSleep, flows, HOUR_NS, logged()).unwrap();
        assert_eq!(r.completed, 100);
        assert!((r.bs[0].hours[0].avg_load - 0.2).abs() < 1e-12);
        assert!(kinds(&r, EventKind::Serve).iter().all(|e| e.bs == Some(1)));
    }

    #[test]
    fn idle_tbs_closes_and_bills_delay() {
        let params = SimParams::default();
        let layout = custom_layout(vec![site(0, 0.0, 0.0, Role::Cbs), site(1, 300.0, 0.0, Role::Tbs)]);
        let r = simulate_flows(&params, &layout, Scheme::HcaSleep, vec![], HOUR_NS, logged()).unwrap();
        let close = kinds(&r, EventKind::CloseStart);
        let sleep = kinds(&r, EventKind::Sleep);
        assert_eq!((close.len(), sleep.len()), (1, 1));
        assert_eq!(close[0].t_ns, 60 * NS_PER_S);
        assert_eq!(sleep[0].t_ns - close[0].t_ns, 52_000_000);
        let p = params.micro_power;
        let tr = &r.traces[1];
        // Idle and closing draw the same power, so their segments merge.
        let k = tr.segments.iter().position(|s| (s.t_end - 60.052).abs() < 1e-12).unwrap();
        assert_eq!(tr.segments[k].power_w, bs_power_w(&p, 0.0, BsState::Active).unwrap());
        assert_eq!(tr.segments[k + 1].power_w, p.p_sleep_w);
        let want = 60.052 * p.p0_w + (3600.0 - 60.052) * p.p_sleep_w;
        assert!((r.bs[1].hours[0].avg_power_w * 3600.0 - want).abs() <= 1e-9 * want);
        assert!((r.bs[1].hours[0].sleep_fraction - (3600.0 - 60.052) / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn sleeping_network_wakes_strongest_and_queues() {
        let params = SimParams::default();
        let layout = custom_layout(vec![
            site(0, 0.0, 0.0, Role::Cbs),
            site(1, 300.0, 0.0, Role::Tbs),
            site(2, -300.0, 0.0, Role::Tbs),
        ]);
        let flows = vec![flow_at(100.0, -250.0, 0.0, 3)];
        let r = simulate_flows(&params, &layout, Scheme::HcaSleep, flows, 200 * NS_PER_S, logged()).unwrap();
        let wake = kinds(&r, EventKind::WakeStart);
        assert_eq!(wake.len(), 1);
        assert_eq!((wake[0].bs, wake[0].t_ns), (Some(2), 100 * NS_PER_S));
        let queued = kinds(&r, EventKind::Queue);
        assert_eq!((queued[0].bs, queued[0].t_ns), (Some(2), 100 * NS_PER_S));
        let active = kinds(&r, EventKind::Active);
        assert_eq!(active[0].t_ns, 103 * NS_PER_S);
        let serve = kinds(&r, EventKind::Serve);
        assert_eq!((serve[0].bs, serve[0].t_ns), (Some(2), 103 * NS_PER_S));
        assert!(r.mean_flow_s > 3.0);
        assert_eq!(r.blocked, 0);
    }

    #[test]
    fn orphan_without_alternative_keeps_tbs_on() {
        let mut params = SimParams::default();
        params.traffic.flow_size_bits = 1e12;
        let layout = custom_layout(vec![site(0, 0.0, 0.0, Role::Cbs), site(1, 300.0, 0.0, Role::Tbs)]);
        let flows = vec![flow_at(59.999, 320.0, 0.0, 2)];
        let r = simulate_flows(&params, &layout, Scheme::HcaSleep, flows, 61 * NS_PER_S, logged()).unwrap();
        assert!(kinds(&r, EventKind::CloseStart).is_empty());
    }

    #[test]
    fn empty_traffic_reaches_idle_floor() {
        let mut params = SimParams::default();
        params.traffic.base_rate = Some(0.0);
        let r = run_scenario(&params, Scheme::HcaSleep, 4, RunOptions::default()).unwrap();
        let layout = params.layout(4).unwrap();
        let cbs = bs_power_w(&params.macro_power, params.rb.control_rb_fraction, BsState::Active).unwrap();
        let want = layout.cbs().count() as f64 * cbs + layout.tbs().count() as f64 * params.micro_power.p_sleep_w;
        for h in &r.hours[1..] {
            assert!((h.avg_power_w - want).abs() <= 1e-9 * want, "{} vs {want}", h.avg_power_w);
        }
        assert_eq!(r.arrivals, 0);
    }

    #[test]
    fn layout_without_tbs_is_rejected_for_decoupled_schemes() {
        let layout = custom_layout(vec![site(0, 0.0, 0.0, Role::Cbs)]);
        let p = SimParams::default();
        let err = simulate_flows(&p, &layout, Scheme::HcaSleep, vec![], NS_PER_S, RunOptions::default());
        assert!(matches!(err, Err(Error::Scenario(_))));
        assert!(simulate_flows(&p, &layout, Scheme::Hetnet, vec![flow_at(0.0, 10.0, 0.0, 1)], NS_PER_S, logged()).is_ok());
    }

    #[test]
    fn calibration_hits_target() {
        let params = SimParams::default();
        let layout = params.layout(2).unwrap();
        let rate = calibrate_base_rate(&params, &layout, 2).unwrap();
        let flat = vec![1.0; 24];
        let r = simulate_poisson(&params, &layout, CALIBRATION_SCHEME, rate, &flat, HOUR_NS, 77, RunOptions::default())
            .unwrap();
        let users = r.hours[0].avg_users;
        let target = params.traffic.peak_users;
        assert!((users / target - 1.0).abs() < 0.25, "mean users {users} at rate {rate}");
    }

    #[test]
    fn csv_headers_and_rows() {
        let mut params = small_params();
        params.traffic.base_rate = Some(0.5);
        let r = run_scenario(&params, Scheme::HcaSleep, 1, RunOptions { record_events: true, record_traces: false }).unwrap();
        let hourly = hourly_csv(std::slice::from_ref(&r));
        assert!(hourly.starts_with("hour,scheme,avg_users,avg_power_w\n"));
        assert_eq!(hourly.lines().count(), 25);
        let bs = bs_energy_csv(&r);
        assert_eq!(bs.lines().count(), 1 + 24 * r.bs.len());
        assert!(summary_csv(&[SummaryRow::from(&r)]).starts_with(SUMMARY_HEADER));
        let log = events_log(&r);
        assert!(log.starts_with("t,kind,bs,flow\n"));
        assert!(log.lines().nth(1).unwrap().split(',').count() == 4);
    }

    #[test]
    fn merge_averages_seeds() {
        let mut params = small_params();
        params.traffic.base_rate = Some(0.2);
        let a = run_scenario(&params, Scheme::Hetnet, 1, RunOptions::default()).unwrap();
        let b = run_scenario(&params, Scheme::Hetnet, 2, RunOptions::default()).unwrap();
        let (hourly, summary) = merge_over_seeds(&[a.clone(), b.clone()]);
        assert_eq!(hourly.len(), 1);
        assert_eq!(summary[0].daily_energy_j, (a.daily_energy_j + b.daily_energy_j) / 2.0);
        assert_eq!(hourly[0].hours[9].avg_power_w, (a.hours[9].avg_power_w + b.hours[9].avg_power_w) / 2.0);
    }

    /// Replays the log and checks serving and state invariants.
    fn audit(r: &SimReport, n_sites: usize) {
        let mut asleep_or_moving = vec![false; n_sites];
        let mut last = 0;
        for e in &r.events {
            assert!(e.t_ns >= last, "log out of order");
            last = e.t_ns;
            match e.kind {
                EventKind::CloseStart | EventKind::WakeStart => asleep_or_moving[e.bs.unwrap()] = true,
                EventKind::Active => asleep_or_moving[e.bs.unwrap()] = false,
                EventKind::Serve | EventKind::Move => {
                    assert!(!asleep_or_moving[e.bs.unwrap()], "flow attached to an off station")
                }
                _ => {}
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

        #[test]
        fn simulation_invariants(
            seed in 0u64..1000,
            scheme_idx in 0usize..3,
            rate in 0.0f64..3.0,
            threshold in 0.0f64..0.6,
        ) {
            let mut params = small_params();
            params.policy.load_threshold_off = threshold;
            let scheme = Scheme::ALL[scheme_idx];
            let layout = params.layout(seed).unwrap();
            let profile: Vec<f64> = (0..24).map(|h| if h % 2 == 0 { 1.0 } else { 0.3 }).collect();
            let r = simulate_poisson(&params, &layout, scheme, rate, &profile, 2 * HOUR_NS, seed, logged()).unwrap();

            let tol = 1e-6 * r.bits_delivered.max(1.0);
            prop_assert!((r.bits_served - r.bits_delivered).abs() <= tol);
            prop_assert!(r.daily_energy_j >= 0.0 && r.mean_flow_s >= 0.0);
            for b in &r.bs {
                for h in &b.hours {
                    prop_assert!(h.avg_load >= 0.0 && h.avg_power_w >= 0.0 && h.sleep_fraction >= 0.0);
                }
                if scheme.is_hca() && b.role == Role::Cbs {
                    prop_assert!(b.hours[..2].iter().all(|h| (h.avg_load - params.rb.control_rb_fraction).abs() < 1e-12));
                }
                if scheme != Scheme::HcaSleep {
                    prop_assert!(b.hours.iter().all(|h| h.sleep_fraction == 0.0));
                }
            }
            if scheme != Scheme::HcaSleep {
                prop_assert!(kinds(&r, EventKind::CloseStart).is_empty());
                prop_assert!(kinds(&r, EventKind::WakeStart).is_empty());
            }
            audit(&r, layout.sites.len());
            for t in &r.traces {
                t.validate().unwrap();
            }

            let again = simulate_poisson(&params, &layout, scheme, rate, &profile, 2 * HOUR_NS, seed, logged()).unwrap();
            prop_assert_eq!(hourly_csv(&[r.clone()]), hourly_csv(&[again.clone()]));
            prop_assert_eq!(bs_energy_csv(&r), bs_energy_csv(&again));
            prop_assert_eq!(events_log(&r), events_log(&again));
        }
    }
}
