//! Link budget for the system simulation and the geometric scatterer channel
//! used by the RRH selection experiment.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::topology::Position;

/// Distances below this are clamped before evaluating pathloss.
pub const MIN_PATHLOSS_DISTANCE_M: f64 = 10.0;

/// 22 dB spectral-efficiency cap.
pub const SINR_CAP_DB: f64 = 22.0;

/// Closest allowed approach between any two points of a scatterer scene.
pub const MIN_SCENE_SEPARATION_M: f64 = 1.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn sinr_cap() -> f64 {
    db_to_linear(SINR_CAP_DB)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub shadowing_sigma_db: f64,
    pub tx_power_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub carrier_freq_hz: f64,
}

impl LinkParams {
    /// Macro-class (CBS) link.
    pub fn macro_default() -> Self {
        Self {
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.6,
            shadowing_sigma_db: 8.0,
            tx_power_dbm: 46.0,
            noise_density_dbm_hz: -174.0,
            carrier_freq_hz: 2.0e9,
        }
    }

    /// Micro-class (TBS) link.
    pub fn micro_default() -> Self {
        Self {
            pathloss_intercept_db: 140.7,
            pathloss_slope_db: 36.7,
            shadowing_sigma_db: 10.0,
            tx_power_dbm: 30.0,
            ..Self::macro_default()
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.pathloss_slope_db > 0.0) {
            return Err(Error::Range {
                key: format!("{prefix}.pathloss_slope"),
                msg: "must be > 0".into(),
            });
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::Range {
                key: format!("{prefix}.shadowing_sigma"),
                msg: "must be >= 0".into(),
            });
        }
        if !(self.carrier_freq_hz > 0.0) {
            return Err(Error::Range {
                key: format!("{prefix}.carrier_freq"),
                msg: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbConfig {
    pub total_rbs: u32,
    pub rb_bandwidth_hz: f64,
    pub control_rb_fraction: f64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            total_rbs: 50,
            rb_bandwidth_hz: 180e3,
            control_rb_fraction: 0.2,
        }
    }
}

impl RbConfig {
    pub fn data_rbs(&self) -> f64 {
        self.total_rbs as f64 * (1.0 - self.control_rb_fraction)
    }

    pub fn noise_per_rb_mw(&self, link: &LinkParams) -> f64 {
        db_to_linear(link.noise_density_dbm_hz + linear_to_db(self.rb_bandwidth_hz))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_rbs == 0 {
            return Err(Error::Range {
                key: "radio.total_rbs".into(),
                msg: "must be > 0".into(),
            });
        }
        if !(self.rb_bandwidth_hz > 0.0) {
            return Err(Error::Range {
                key: "radio.rb_bandwidth".into(),
                msg: "must be > 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.control_rb_fraction) {
            return Err(Error::Range {
                key: "radio.control_rb_fraction".into(),
                msg: "must lie in [0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// Log-distance pathloss with the distance clamped at 10 m.
pub fn pathloss_db(link: &LinkParams, d_m: f64) -> f64 {
    let d = d_m.max(MIN_PATHLOSS_DISTANCE_M);
    link.pathloss_intercept_db + link.pathloss_slope_db * (d / 1000.0).log10()
}

/// Received power on one RB in mW. `tx_offset_db` carries cell zooming and
/// `shadowing_db` the per-link lognormal draw.
pub fn rx_power_per_rb_mw(
    link: &LinkParams,
    rb: &RbConfig,
    d_m: f64,
    shadowing_db: f64,
    tx_offset_db: f64,
) -> f64 {
    let per_rb_dbm = link.tx_power_dbm + tx_offset_db - linear_to_db(rb.total_rbs as f64);
    db_to_linear(per_rb_dbm - pathloss_db(link, d_m) + shadowing_db)
}

/// SINR on one RB: interferers contribute their received power weighted by
/// their RB occupancy probability.
pub fn sinr_linear(serving_rx_mw: f64, interferers: &[(f64, f64)], noise_mw: f64) -> f64 {
    let interference: f64 = interferers
        .iter()
        .map(|&(rx, load)| rx * load.clamp(0.0, 1.0))
        .sum();
    (serving_rx_mw / (noise_mw + interference)).max(0.0)
}

/// Shannon rate over `n_rbs` (possibly fractional) RBs with the 22 dB cap.
pub fn rate_bps(sinr: f64, n_rbs: f64, rb_bandwidth_hz: f64) -> f64 {
    n_rbs * rb_bandwidth_hz * (1.0 + sinr.max(0.0).min(sinr_cap())).log2()
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// CBS array at the origin plus scatterers and candidate RRHs in a disc.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererScene {
    pub cbs_antennas: usize,
    /// Element spacing in wavelengths.
    pub antenna_spacing: f64,
    pub scatterers: Vec<Position>,
    pub rrhs: Vec<Position>,
    pub pathloss_exponent: f64,
    /// Length normalising the two-hop product of a bounced path:
    /// amplitude is `(d1 * d2 / scatter_ref_m)^(-exponent/2)`.
    pub scatter_ref_m: f64,
    pub region_radius_m: f64,
}

pub const DEFAULT_PATHLOSS_EXPONENT: f64 = 3.7;
pub const DEFAULT_SCENE_RADIUS_M: f64 = 500.0;

fn uniform_in_disc(rng: &mut impl Rng, radius: f64) -> Position {
    let r = radius * rng.random::<f64>().sqrt();
    let a = TAU * rng.random::<f64>();
    Position::new(r * a.cos(), r * a.sin())
}

/// Draws a point in the disc that keeps the minimum separation from `avoid`.
pub(crate) fn draw_separated(
    rng: &mut impl Rng,
    radius: f64,
    avoid: &[Position],
) -> Position {
    loop {
        let p = uniform_in_disc(rng, radius);
        if p.euclid(&Position::ORIGIN) >= MIN_SCENE_SEPARATION_M
            && avoid.iter().all(|q| p.euclid(q) >= MIN_SCENE_SEPARATION_M)
        {
            return p;
        }
    }
}

pub fn gen_scatterer_scene(
    scatterers: usize,
    rrhs: usize,
    antennas: usize,
    region_radius_m: f64,
    scatter_ref_m: f64,
    seed: u64,
) -> Result<ScattererScene> {
    if scatterers < 1 || rrhs < 2 || antennas < 1 {
        return Err(Error::InvalidParameter(format!(
            "scene needs S >= 1, N >= 2, M >= 1 (got S={scatterers}, N={rrhs}, M={antennas})"
        )));
    }
    if !(region_radius_m > 0.0 && scatter_ref_m > 0.0) {
        return Err(Error::InvalidParameter(
            "scene radius and scatter reference length must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // RRHs first, so scenes with more scatterers extend those with fewer.
    let mut placed = Vec::with_capacity(scatterers + rrhs);
    for _ in 0..rrhs + scatterers {
        let p = draw_separated(&mut rng, region_radius_m, &placed);
        placed.push(p);
    }
    let scatterer_pos = placed.split_off(rrhs);
    let rrh_pos = placed;
    Ok(ScattererScene {
        cbs_antennas: antennas,
        antenna_spacing: 0.5,
        scatterers: scatterer_pos,
        rrhs: rrh_pos,
        pathloss_exponent: DEFAULT_PATHLOSS_EXPONENT,
        scatter_ref_m,
        region_radius_m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub cbs_channel: Vec<Complex64>,
    pub rrh_gains: Vec<f64>,
    pub user_pos: Position,
    pub best_rrh: usize,
}

impl ScattererScene {
    fn checked_distance(a: &Position, b: &Position, what: &str) -> Result<f64> {
        let d = a.euclid(b);
        if d < MIN_SCENE_SEPARATION_M {
            return Err(Error::DegenerateGeometry(format!(
                "{what} separation {d:.3} m is below {MIN_SCENE_SEPARATION_M} m"
            )));
        }
        Ok(d)
    }

    fn amplitude(&self, path_len: f64) -> f64 {
        path_len.powf(-self.pathloss_exponent / 2.0)
    }

    /// Adds `amp * e^{-j 2 pi len / lambda} * steer_m(theta)` to every element.
    fn add_array_path(&self, h: &mut [Complex64], amp: f64, len: f64, sin_theta: f64, wavelength: f64) {
        let mut term = Complex64::from_polar(amp, -TAU * (len / wavelength).fract());
        let step = Complex64::from_polar(1.0, -TAU * self.antenna_spacing * sin_theta);
        for hm in h.iter_mut() {
            *hm += term;
            term *= step;
        }
    }
}

/// Phase factor for a path of `len` metres.
fn path_phase(len: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(1.0, -TAU * (len / wavelength).fract())
}

/// Single-bounce geometric channel seen by the CBS array and every RRH.
///
/// The array lies along the y axis, so the steering angle satisfies
/// `sin(theta) = y / d` for a source at `(x, y)`.
pub fn sample_channel(
    scene: &ScattererScene,
    user: Position,
    wavelength_m: f64,
) -> Result<ChannelSample> {
    if !(wavelength_m > 0.0) {
        return Err(Error::InvalidParameter("wavelength must be positive".into()));
    }
    let cbs = Position::ORIGIN;
    let mut h = vec![Complex64::new(0.0, 0.0); scene.cbs_antennas];

    let d_los = ScattererScene::checked_distance(&cbs, &user, "CBS-user")?;
    scene.add_array_path(&mut h, scene.amplitude(d_los), d_los, user.y / d_los, wavelength_m);

    let mut d_su = Vec::with_capacity(scene.scatterers.len());
    for s in &scene.scatterers {
        let d1 = ScattererScene::checked_distance(&cbs, s, "CBS-scatterer")?;
        let d2 = ScattererScene::checked_distance(s, &user, "scatterer-user")?;
        let amp = scene.amplitude(d1 * d2 / scene.scatter_ref_m);
        scene.add_array_path(&mut h, amp, d1 + d2, s.y / d1, wavelength_m);
        d_su.push(d2);
    }

    let mut gains = Vec::with_capacity(scene.rrhs.len());
    for r in &scene.rrhs {
        let d = ScattererScene::checked_distance(r, &user, "RRH-user")?;
        let mut acc = scene.amplitude(d) * path_phase(d, wavelength_m);
        for (s, &d2) in scene.scatterers.iter().zip(&d_su) {
            let d1 = ScattererScene::checked_distance(r, s, "RRH-scatterer")?;
            acc += scene.amplitude(d1 * d2 / scene.scatter_ref_m) * path_phase(d1 + d2, wavelength_m);
        }
        gains.push(acc.norm_sqr());
    }
    let best_rrh = argmax_first(&gains);
    Ok(ChannelSample {
        cbs_channel: h,
        rrh_gains: gains,
        user_pos: user,
        best_rrh,
    })
}

/// Wavelength for a carrier frequency.
pub fn wavelength_m(carrier_hz: f64) -> f64 {
    299_792_458.0 / carrier_hz
}

pub fn dataset_csv_header(antennas: usize, rrhs: usize) -> String {
    let mut cols: Vec<String> = Vec::with_capacity(2 * antennas + rrhs + 3);
    for m in 0..antennas {
        cols.push(format!("re_h{m}"));
        cols.push(format!("im_h{m}"));
    }
    cols.extend((0..rrhs).map(|i| format!("g_{i}")));
    cols.extend(["x_m".to_string(), "y_m".to_string(), "label".to_string()]);
    cols.join(",")
}

impl ChannelSample {
    pub fn to_csv_row(&self) -> String {
        use crate::fmt::sig9;
        let mut cols: Vec<String> = Vec::with_capacity(2 * self.cbs_channel.len() + self.rrh_gains.len() + 3);
        for h in &self.cbs_channel {
            cols.push(sig9(h.re));
            cols.push(sig9(h.im));
        }
        cols.extend(self.rrh_gains.iter().map(|g| sig9(*g)));
        cols.push(sig9(self.user_pos.x));
        cols.push(sig9(self.user_pos.y));
        cols.push(self.best_rrh.to_string());
        cols.join(",")
    }

    pub fn from_csv_row(row: &str, antennas: usize, rrhs: usize) -> Result<Self> {
        let cols: Vec<&str> = row.trim().split(',').collect();
        let expected = 2 * antennas + rrhs + 3;
        if cols.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: cols.len(),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad number `{s}`"),
            })
        };
        let mut h = Vec::with_capacity(antennas);
        for m in 0..antennas {
            h.push(Complex64::new(num(cols[2 * m])?, num(cols[2 * m + 1])?));
        }
        let gains = cols[2 * antennas..2 * antennas + rrhs]
            .iter()
            .map(|s| num(s))
            .collect::<Result<Vec<_>>>()?;
        let base = 2 * antennas + rrhs;
        let label = cols[base + 2].parse::<usize>().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("bad label `{}`", cols[base + 2]),
        })?;
        Ok(Self {
            cbs_channel: h,
            rrh_gains: gains,
            user_pos: Position::new(num(cols[base])?, num(cols[base + 1])?),
            best_rrh: label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pathloss_examples() {
        let l = LinkParams::macro_default();
        assert!((pathloss_db(&l, 1000.0) - 128.1).abs() < 1e-12);
        assert!((pathloss_db(&l, 10000.0) - 165.7).abs() < 1e-9);
        assert_eq!(pathloss_db(&l, 5.0), pathloss_db(&l, 10.0));
    }

    #[test]
    fn sinr_reductions() {
        let noise = 1e-12;
        let p = 3e-10;
        assert_eq!(sinr_linear(p, &[], noise), p / noise);
        assert_eq!(sinr_linear(p, &[(1e-9, 0.0)], noise), p / noise);
        let lo = sinr_linear(p, &[(1e-11, 0.3), (2e-11, 0.2)], noise);
        let hi = sinr_linear(p, &[(1e-11, 0.6), (2e-11, 0.4)], noise);
        assert!(hi <= lo);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_bps(0.0, 1.0, 180e3), 0.0);
        assert!((rate_bps(1.0, 1.0, 180e3) - 180e3).abs() < 1e-9);
        assert_eq!(rate_bps(1e6, 3.0, 180e3), rate_bps(sinr_cap(), 3.0, 180e3));
        assert!((sinr_cap() - 158.489).abs() < 1e-3);
    }

    #[test]
    fn noise_per_rb() {
        let rb = RbConfig::default();
        let n = linear_to_db(rb.noise_per_rb_mw(&LinkParams::macro_default()));
        assert!((n - (-174.0 + 10.0 * 180e3f64.log10())).abs() < 1e-9);
    }

    #[test]
    fn scene_shape_and_determinism() {
        let s = gen_scatterer_scene(10, 5, 80, 500.0, 1.0, 9).unwrap();
        assert_eq!(s.scatterers.len(), 10);
        assert_eq!(s.rrhs.len(), 5);
        assert_eq!(s.cbs_antennas, 80);
        assert_eq!(s, gen_scatterer_scene(10, 5, 80, 500.0, 1.0, 9).unwrap());
        assert!(s.scatterers.iter().all(|p| p.euclid(&Position::ORIGIN) <= 500.0));
        assert!(gen_scatterer_scene(0, 5, 80, 500.0, 1.0, 9).is_err());
        assert!(gen_scatterer_scene(3, 1, 80, 500.0, 1.0, 9).is_err());
    }

    #[test]
    fn larger_scenes_extend_smaller_ones() {
        let small = gen_scatterer_scene(10, 5, 80, 500.0, 1.0, 3).unwrap();
        let large = gen_scatterer_scene(35, 5, 80, 500.0, 1.0, 3).unwrap();
        assert_eq!(small.rrhs, large.rrhs);
        assert_eq!(small.scatterers[..], large.scatterers[..10]);
    }

    /// One scatterer, two RRHs, hand-evaluated two-path sums.
    #[test]
    fn two_path_gain_matches_hand_evaluation() {
        let scene = ScattererScene {
            cbs_antennas: 2,
            antenna_spacing: 0.5,
            scatterers: vec![Position::new(0.0, 100.0)],
            rrhs: vec![Position::new(100.0, 0.0), Position::new(-100.0, 0.0)],
            pathloss_exponent: 2.0,
            scatter_ref_m: 1.0,
            region_radius_m: 500.0,
        };
        let user = Position::new(0.0, 200.0);
        let lambda = 0.3;
        let s = sample_channel(&scene, user, lambda).unwrap();
        // Both RRHs see the same geometry by symmetry: LOS sqrt(100^2+200^2),
        // scatter legs sqrt(2)*100 and 100.
        let d_los = (100.0f64.powi(2) + 200.0f64.powi(2)).sqrt();
        let d1 = 2f64.sqrt() * 100.0;
        let d2 = 100.0;
        let los = Complex64::from_polar(1.0 / d_los, -TAU * d_los / lambda);
        let bounce = Complex64::from_polar(1.0 / (d1 * d2), -TAU * (d1 + d2) / lambda);
        let expected = (los + bounce).norm_sqr();
        assert!((s.rrh_gains[0] - expected).abs() / expected < 1e-9);
        assert!((s.rrh_gains[1] - expected).abs() / expected < 1e-9);
        assert_eq!(s.best_rrh, if s.rrh_gains[1] > s.rrh_gains[0] { 1 } else { 0 });

        // CBS element 0: LOS at broadside distance 200 (sin = 1), bounce 100 + 100.
        let h0 = Complex64::from_polar(1.0 / 200.0, -TAU * 200.0 / lambda)
            + Complex64::from_polar(1.0 / (100.0 * 100.0), -TAU * 200.0 / lambda);
        assert!((s.cbs_channel[0] - h0).norm() < 1e-12);
        // Element 1: both paths arrive from sin(theta) = 1, extra phase -pi.
        let h1 = h0 * Complex64::from_polar(1.0, -PI);
        assert!((s.cbs_channel[1] - h1).norm() < 1e-12);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let scene = gen_scatterer_scene(3, 2, 4, 500.0, 1.0, 1).unwrap();
        let at_rrh = scene.rrhs[0];
        assert!(matches!(
            sample_channel(&scene, at_rrh, 0.15),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(sample_channel(&scene, Position::new(0.2, 0.0), 0.15).is_err());
    }

    #[test]
    fn sample_is_pure_and_finite() {
        let scene = gen_scatterer_scene(20, 5, 80, 500.0, 100.0, 4).unwrap();
        let u = Position::new(123.0, -77.0);
        let a = sample_channel(&scene, u, 0.15).unwrap();
        assert_eq!(a, sample_channel(&scene, u, 0.15).unwrap());
        assert_eq!(a.cbs_channel.len(), 80);
        assert!(a.cbs_channel.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        assert!(a.rrh_gains.iter().all(|g| *g > 0.0 && g.is_finite()));
        assert_eq!(a.best_rrh, argmax_first(&a.rrh_gains));
    }

    #[test]
    fn csv_row_round_trip() {
        let scene = gen_scatterer_scene(5, 3, 4, 500.0, 50.0, 2).unwrap();
        let s = sample_channel(&scene, Position::new(40.0, 30.0), 0.15).unwrap();
        let header = dataset_csv_header(4, 3);
        assert!(header.starts_with("re_h0,im_h0,re_h1"));
        assert!(header.ends_with("g_2,x_m,y_m,label"));
        let back = ChannelSample::from_csv_row(&s.to_csv_row(), 4, 3).unwrap();
        assert_eq!(back.best_rrh, s.best_rrh);
        for (a, b) in back.rrh_gains.iter().zip(&s.rrh_gains) {
            assert!((a - b).abs() / b < 1e-8);
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_first(&[2.0]), 0);
    }
}
