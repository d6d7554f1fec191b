//! Spatial layout: hexagonal CBS grid, Poisson-dropped TBSs and uniform users.
//!
//! All generators are pure functions of their parameters and seed. The
//! simulation region is the bounding rectangle of the hexagonal cell union,
//! centered at the origin, optionally treated as a torus for distances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

/// TBSs closer than this to any CBS are re-dropped.
pub const TBS_EXCLUSION_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn euclid(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub width: f64,
    pub height: f64,
    pub wrap: bool,
}

impl Region {
    pub fn new(width: f64, height: f64, wrap: bool) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "region must have positive finite extent, got {width} x {height}"
            )));
        }
        Ok(Self { width, height, wrap })
    }

    /// Bounding rectangle of the hexagonal cells around a `rings`-ring grid.
    pub fn hex_bounding(rings: u32, inter_site_distance: f64, wrap: bool) -> Result<Self> {
        let sites = build_hex_sites(rings, inter_site_distance)?;
        let circumradius = inter_site_distance / 3f64.sqrt();
        let (mut max_x, mut max_y) = (0.0f64, 0.0f64);
        for s in &sites {
            for k in 0..6 {
                let a = (30.0 + 60.0 * k as f64).to_radians();
                max_x = max_x.max((s.pos.x + circumradius * a.cos()).abs());
                max_y = max_y.max((s.pos.y + circumradius * a.sin()).abs());
            }
        }
        Region::new(2.0 * max_x, 2.0 * max_y, wrap)
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.x >= -self.width / 2.0
            && p.x <= self.width / 2.0
            && p.y >= -self.height / 2.0
            && p.y <= self.height / 2.0
    }

    /// Maps a position back into the rectangle when wrapping is on.
    pub fn wrap_position(&self, p: Position) -> Position {
        if !self.wrap {
            return p;
        }
        let fold = |v: f64, len: f64| v - len * (v / len).round();
        Position::new(fold(p.x, self.width), fold(p.y, self.height))
    }

    pub(crate) fn sample(&self, rng: &mut impl Rng) -> Position {
        Position::new(
            (rng.random::<f64>() - 0.5) * self.width,
            (rng.random::<f64>() - 0.5) * self.height,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Cbs,
    Tbs,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Cbs => "CBS",
            Role::Tbs => "TBS",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CBS" => Ok(Role::Cbs),
            "TBS" => Ok(Role::Tbs),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("unknown site role `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub id: usize,
    pub pos: Position,
    pub role: Role,
}

pub type SiteList = Vec<Site>;

/// Number of sites in a hexagonal grid with `rings` rings around the center.
pub fn hex_site_count(rings: u32) -> usize {
    let r = rings as usize;
    1 + 3 * r * (r + 1)
}

/// CBS sites on a hexagonal lattice centered at the origin, ring by ring.
pub fn build_hex_sites(rings: u32, inter_site_distance: f64) -> Result<SiteList> {
    if !(inter_site_distance > 0.0 && inter_site_distance.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inter-site distance must be positive, got {inter_site_distance}"
        )));
    }
    let n = rings as i64;
    // Axial coordinates, ordered by ring then by angle for stable ids.
    let mut axial: Vec<(i64, i64)> = Vec::with_capacity(hex_site_count(rings));
    for q in -n..=n {
        for r in (-n).max(-q - n)..=n.min(-q + n) {
            axial.push((q, r));
        }
    }
    let to_pos = |q: i64, r: i64| {
        Position::new(
            inter_site_distance * (q as f64 + r as f64 / 2.0),
            inter_site_distance * 3f64.sqrt() / 2.0 * r as f64,
        )
    };
    let ring_of = |q: i64, r: i64| (q.abs() + r.abs() + (q + r).abs()) / 2;
    axial.sort_by(|a, b| {
        let (pa, pb) = (to_pos(a.0, a.1), to_pos(b.0, b.1));
        ring_of(a.0, a.1)
            .cmp(&ring_of(b.0, b.1))
            .then(angle_key(pa).total_cmp(&angle_key(pb)))
    });
    Ok(axial
        .into_iter()
        .enumerate()
        .map(|(id, (q, r))| Site {
            id,
            pos: to_pos(q, r),
            role: Role::Cbs,
        })
        .collect())
}

fn angle_key(p: Position) -> f64 {
    let a = p.y.atan2(p.x);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Homogeneous PPP of TBSs over the region; ids are dense from 0.
pub fn drop_tbs_ppp(
    expected_count: f64,
    region: &Region,
    cbs: &[Site],
    seed: u64,
) -> Result<SiteList> {
    if !(expected_count > 0.0 && expected_count.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "expected TBS count must be positive, got {expected_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = Poisson::new(expected_count)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(&mut rng) as usize;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = region.sample(&mut rng);
        if cbs
            .iter()
            .all(|c| distance(&p, &c.pos, region) >= TBS_EXCLUSION_M)
        {
            out.push(Site {
                id: out.len(),
                pos: p,
                role: Role::Tbs,
            });
        }
    }
    Ok(out)
}

pub fn drop_users(count: usize, region: &Region, seed: u64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| region.sample(&mut rng)).collect()
}

/// Euclidean distance, or minimum-image distance when the region wraps.
pub fn distance(a: &Position, b: &Position, region: &Region) -> f64 {
    let (mut dx, mut dy) = (a.x - b.x, a.y - b.y);
    if region.wrap {
        dx -= region.width * (dx / region.width).round();
        dy -= region.height * (dy / region.height).round();
    }
    dx.hypot(dy)
}

/// Combined CBS + TBS layout with dense ids (CBSs first).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayout {
    pub region: Region,
    pub sites: SiteList,
}

impl NetworkLayout {
    pub fn generate(
        rings: u32,
        inter_site_distance: f64,
        tbs_expected: f64,
        wrap: bool,
        seed: u64,
    ) -> Result<Self> {
        let region = Region::hex_bounding(rings, inter_site_distance, wrap)?;
        let mut sites = build_hex_sites(rings, inter_site_distance)?;
        let tbs = drop_tbs_ppp(tbs_expected, &region, &sites, seed)?;
        let offset = sites.len();
        sites.extend(tbs.into_iter().map(|s| Site {
            id: s.id + offset,
            ..s
        }));
        Ok(Self { region, sites })
    }

    pub fn cbs(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter().filter(|s| s.role == Role::Cbs)
    }

    pub fn tbs(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter().filter(|s| s.role == Role::Tbs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("site_id,role,x_m,y_m\n");
        for s in &self.sites {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.id,
                s.role,
                crate::fmt::sig9(s.pos.x),
                crate::fmt::sig9(s.pos.y)
            ));
        }
        out
    }

    pub fn from_csv(text: &str, region: Region) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "site_id,role,x_m,y_m" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing header `site_id,role,x_m,y_m`".into(),
                })
            }
        }
        let mut sites = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            }
            let id: usize = cols[0].parse().map_err(|_| err("bad site_id".into()))?;
            if id != sites.len() {
                return Err(err(format!("site ids must be dense from 0, got {id}")));
            }
            let role: Role = cols[1].parse().map_err(|e: Error| err(e.to_string()))?;
            let x: f64 = cols[2].parse().map_err(|_| err("bad x_m".into()))?;
            let y: f64 = cols[3].parse().map_err(|_| err("bad y_m".into()))?;
            sites.push(Site {
                id,
                pos: Position::new(x, y),
                role,
            });
        }
        Ok(Self { region, sites })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_counts() {
        assert_eq!(build_hex_sites(2, 500.0).unwrap().len(), 19);
        let one = build_hex_sites(0, 500.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].pos, Position::ORIGIN);
        for r in 0..5 {
            assert_eq!(build_hex_sites(r, 500.0).unwrap().len(), 1 + 3 * (r as usize) * (r as usize + 1));
        }
    }

    #[test]
    fn first_ring_is_at_isd() {
        let sites = build_hex_sites(1, 500.0).unwrap();
        assert_eq!(sites.len(), 7);
        for s in &sites[1..] {
            assert!((s.pos.euclid(&Position::ORIGIN) - 500.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_neighbor_distance_is_isd() {
        let sites = build_hex_sites(3, 350.0).unwrap();
        for a in &sites {
            let nn = sites
                .iter()
                .filter(|b| b.id != a.id)
                .map(|b| a.pos.euclid(&b.pos))
                .fold(f64::INFINITY, f64::min);
            assert!((nn - 350.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_isd() {
        assert!(build_hex_sites(1, 0.0).is_err());
    }

    #[test]
    fn ppp_mean_count() {
        let region = Region::hex_bounding(2, 500.0, true).unwrap();
        let cbs = build_hex_sites(2, 500.0).unwrap();
        let n = 10_000;
        let total: usize = (0..n)
            .map(|seed| drop_tbs_ppp(38.0, &region, &cbs, seed).unwrap().len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 38.0).abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn ppp_tiny_intensity_is_empty() {
        let region = Region::new(1000.0, 1000.0, false).unwrap();
        assert!(drop_tbs_ppp(1e-4, &region, &[], 7).unwrap().is_empty());
    }

    #[test]
    fn ppp_deterministic_and_excludes_cbs() {
        let region = Region::hex_bounding(2, 500.0, true).unwrap();
        let cbs = build_hex_sites(2, 500.0).unwrap();
        let a = drop_tbs_ppp(38.0, &region, &cbs, 3).unwrap();
        let b = drop_tbs_ppp(38.0, &region, &cbs, 3).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!(region.contains(&t.pos));
            for c in &cbs {
                assert!(distance(&t.pos, &c.pos, &region) >= TBS_EXCLUSION_M);
            }
        }
    }

    #[test]
    fn users_uniform() {
        let region = Region::new(2000.0, 1000.0, true).unwrap();
        assert!(drop_users(0, &region, 1).is_empty());
        let users = drop_users(10_000, &region, 1);
        assert_eq!(users, drop_users(10_000, &region, 1));
        let mx = users.iter().map(|p| p.x).sum::<f64>() / users.len() as f64;
        let my = users.iter().map(|p| p.y).sum::<f64>() / users.len() as f64;
        assert!(mx.abs() < 0.02 * region.width);
        assert!(my.abs() < 0.02 * region.width);
        assert!(users.iter().all(|p| region.contains(p)));
    }

    #[test]
    fn distance_cases() {
        let plain = Region::new(100.0, 100.0, false).unwrap();
        let torus = Region::new(100.0, 100.0, true).unwrap();
        let o = Position::ORIGIN;
        assert_eq!(distance(&o, &Position::new(3.0, 4.0), &plain), 5.0);
        assert_eq!(distance(&o, &o, &torus), 0.0);
        assert!((distance(&o, &Position::new(99.0, 0.0), &torus) - 1.0).abs() < 1e-12);
        // Region is centered, so (0,0)-(w-1,0) is expressed as (-w/2, 0)-(w/2-1, 0).
        let a = Position::new(-50.0, 0.0);
        let b = Position::new(49.0, 0.0);
        assert!((distance(&a, &b, &torus) - 1.0).abs() < 1e-12);
        assert!((distance(&a, &b, &plain) - 99.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let layout = NetworkLayout::generate(1, 500.0, 5.0, true, 11).unwrap();
        let text = layout.to_csv();
        let back = NetworkLayout::from_csv(&text, layout.region).unwrap();
        assert_eq!(back.sites.len(), layout.sites.len());
        for (a, b) in back.sites.iter().zip(&layout.sites) {
            assert_eq!(a.role, b.role);
            assert!((a.pos.x - b.pos.x).abs() < 1e-5 && (a.pos.y - b.pos.y).abs() < 1e-5);
        }
        assert!(NetworkLayout::from_csv("id,x\n", layout.region).is_err());
    }
}
