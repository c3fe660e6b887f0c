//! Geometry of the edge area: the server grid, hop distances between
//! servers, and the wireless upload-rate map inside each cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("point ({lat}, {lon}) lies outside the grid box")]
    OutOfBounds { lat: f64, lon: f64 },
    #[error("server index {index} is not part of a grid with {servers} servers")]
    UnknownServer { index: usize, servers: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Upload-rate tiers in Mbps, from the cell center outwards.
pub const RATE_TIERS_MBPS: [f64; 5] = [60.0, 48.0, 36.0, 24.0, 12.0];

/// Rectangular lat/lon box split into `rows × cols` square cells.
///
/// Rows run along latitude (row 0 at `lat_min`), columns along longitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
    pub cell_km: f64,
}

impl GridSpec {
    pub fn new(
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
        rows: usize,
        cols: usize,
        cell_km: f64,
    ) -> Result<Self, TopologyError> {
        let grid = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            rows,
            cols,
            cell_km,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Central Rome, 8 × 8 cells of 1 km.
    pub fn rome() -> Self {
        Self {
            lat_min: 41.856,
            lat_max: 41.928,
            lon_min: 12.442,
            lon_max: 12.5387,
            rows: 8,
            cols: 8,
            cell_km: 1.0,
        }
    }

    /// Central San Francisco, 8 × 8 cells of 1 km.
    pub fn san_francisco() -> Self {
        Self {
            lat_min: 37.709,
            lat_max: 37.781,
            lon_min: -122.483,
            lon_max: -122.391,
            rows: 8,
            cols: 8,
            cell_km: 1.0,
        }
    }

    /// A dataset-free box anchored at (0, 0) with roughly 1 km cells.
    pub fn synthetic(rows: usize, cols: usize) -> Self {
        const DEG_PER_KM: f64 = 0.009;
        Self {
            lat_min: 0.0,
            lat_max: rows as f64 * DEG_PER_KM,
            lon_min: 0.0,
            lon_max: cols as f64 * DEG_PER_KM,
            rows,
            cols,
            cell_km: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.cell_km]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(TopologyError::InvalidGrid("non-finite bound".into()));
        }
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(TopologyError::InvalidGrid("empty bounding box".into()));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(TopologyError::InvalidGrid("grid needs at least one cell".into()));
        }
        if self.cell_km <= 0.0 {
            return Err(TopologyError::InvalidGrid("cell size must be positive".into()));
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn server(&self, index: usize) -> Result<ServerId, TopologyError> {
        if index < self.num_servers() {
            Ok(ServerId(index))
        } else {
            Err(TopologyError::UnknownServer {
                index,
                servers: self.num_servers(),
            })
        }
    }

    pub fn server_at(&self, row: usize, col: usize) -> Result<ServerId, TopologyError> {
        if row >= self.rows || col >= self.cols {
            return Err(TopologyError::UnknownServer {
                index: row * self.cols + col,
                servers: self.num_servers(),
            });
        }
        Ok(ServerId(row * self.cols + col))
    }

    pub fn cell_of(&self, id: ServerId) -> (usize, usize) {
        (id.0 / self.cols, id.0 % self.cols)
    }

    /// Center of the cell covered by `id`, as (lat, lon).
    pub fn cell_center(&self, id: ServerId) -> (f64, f64) {
        let (i, j) = self.cell_of(id);
        let lat = self.lat_min + (i as f64 + 0.5) * self.lat_step();
        let lon = self.lon_min + (j as f64 + 0.5) * self.lon_step();
        (lat, lon)
    }

    fn lat_step(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.rows as f64
    }

    fn lon_step(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.cols as f64
    }

    /// Box width along longitude and height along latitude, in km.
    pub fn extent_km(&self) -> (f64, f64) {
        (self.cols as f64 * self.cell_km, self.rows as f64 * self.cell_km)
    }

    /// Fractional grid coordinates (row, col) of an in-box point.
    fn fractional(&self, lat: f64, lon: f64) -> Result<(f64, f64), TopologyError> {
        if !self.contains(lat, lon) {
            return Err(TopologyError::OutOfBounds { lat, lon });
        }
        let y = (lat - self.lat_min) / (self.lat_max - self.lat_min) * self.rows as f64;
        let x = (lon - self.lon_min) / (self.lon_max - self.lon_min) * self.cols as f64;
        Ok((snap(y), snap(x)))
    }
}

/// Index of an edge server; `index = row · cols + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub usize);

impl ServerId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for ServerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of the user inside its covering cell, both axes in `[0, 1]`.
/// `frac_x` runs along longitude, `frac_y` along latitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub frac_x: f64,
    pub frac_y: f64,
}

impl RatePoint {
    pub fn new(frac_x: f64, frac_y: f64) -> Option<Self> {
        let ok = (0.0..=1.0).contains(&frac_x) && (0.0..=1.0).contains(&frac_y);
        ok.then_some(Self { frac_x, frac_y })
    }

    pub fn center() -> Self {
        Self {
            frac_x: 0.5,
            frac_y: 0.5,
        }
    }
}

/// Removes degree-arithmetic round-off on cell boundaries (1e-9 of a cell is
/// about a micrometre at 1 km cells).
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn clamp_index(v: f64, n: usize) -> usize {
    // the upper box edge belongs to the last cell
    (v.floor() as usize).min(n - 1)
}

pub fn locate_server(lat: f64, lon: f64, grid: &GridSpec) -> Result<ServerId, TopologyError> {
    let (y, x) = grid.fractional(lat, lon)?;
    let i = clamp_index(y, grid.rows);
    let j = clamp_index(x, grid.cols);
    Ok(ServerId(i * grid.cols + j))
}

/// Covering server together with the point's position inside that cell.
pub fn locate_with_offset(
    lat: f64,
    lon: f64,
    grid: &GridSpec,
) -> Result<(ServerId, RatePoint), TopologyError> {
    let (y, x) = grid.fractional(lat, lon)?;
    let i = clamp_index(y, grid.rows);
    let j = clamp_index(x, grid.cols);
    let point = RatePoint {
        frac_x: (x - j as f64).clamp(0.0, 1.0),
        frac_y: (y - i as f64).clamp(0.0, 1.0),
    };
    Ok((ServerId(i * grid.cols + j), point))
}

/// Manhattan distance between the two servers' cells.
pub fn hop_distance(a: ServerId, b: ServerId, grid: &GridSpec) -> Result<usize, TopologyError> {
    for id in [a, b] {
        grid.server(id.0)?;
    }
    let (ia, ja) = grid.cell_of(a);
    let (ib, jb) = grid.cell_of(b);
    Ok(ia.abs_diff(ib) + ja.abs_diff(jb))
}

/// Ring index in `0..5` of a point: Chebyshev distance from the cell center,
/// quantized into five equal rings.
pub fn rate_ring(p: RatePoint) -> usize {
    let dev = (p.frac_x - 0.5).abs().max((p.frac_y - 0.5).abs());
    let ring = (5.0 * dev / 0.5).floor();
    (ring.max(0.0) as usize).min(RATE_TIERS_MBPS.len() - 1)
}

/// Upload rate in bits/second for a user at `p` inside its cell.
pub fn upload_rate(p: RatePoint) -> f64 {
    RATE_TIERS_MBPS[rate_ring(p)] * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rome_corner_is_first_server() {
        let g = GridSpec::rome();
        assert_eq!(locate_server(41.856, 12.442, &g).unwrap(), ServerId(0));
    }

    #[test]
    fn rome_center_is_cell_4_4() {
        let g = GridSpec::rome();
        let lat = (g.lat_min + g.lat_max) / 2.0;
        let lon = (g.lon_min + g.lon_max) / 2.0;
        let id = locate_server(lat, lon, &g).unwrap();
        assert_eq!(id, ServerId(36));
        assert_eq!(g.cell_of(id), (4, 4));
    }

    #[test]
    fn origin_is_outside_rome() {
        let g = GridSpec::rome();
        assert!(matches!(
            locate_server(0.0, 0.0, &g),
            Err(TopologyError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn upper_edge_maps_to_last_cell() {
        let g = GridSpec::rome();
        assert_eq!(locate_server(g.lat_max, g.lon_max, &g).unwrap(), ServerId(63));
    }

    #[test]
    fn hop_examples() {
        let g = GridSpec::rome();
        let a = g.server_at(0, 0).unwrap();
        assert_eq!(hop_distance(a, a, &g).unwrap(), 0);
        assert_eq!(hop_distance(a, g.server_at(2, 3).unwrap(), &g).unwrap(), 5);
        let b = g.server_at(7, 0).unwrap();
        let c = g.server_at(0, 7).unwrap();
        assert_eq!(hop_distance(b, c, &g).unwrap(), 14);
        assert!(matches!(
            hop_distance(a, ServerId(64), &g),
            Err(TopologyError::UnknownServer { index: 64, .. })
        ));
    }

    #[test]
    fn hop_distance_is_symmetric_for_all_pairs() {
        let g = GridSpec::rome();
        for a in 0..64 {
            for b in 0..64 {
                assert_eq!(
                    hop_distance(ServerId(a), ServerId(b), &g).unwrap(),
                    hop_distance(ServerId(b), ServerId(a), &g).unwrap()
                );
            }
        }
    }

    #[test]
    fn upload_rate_examples() {
        assert_eq!(upload_rate(RatePoint::center()), 60e6);
        assert_eq!(upload_rate(RatePoint::new(0.0, 0.0).unwrap()), 12e6);
        // ring = floor(5 · 0.3 / 0.5) = 3
        assert_eq!(upload_rate(RatePoint::new(0.5, 0.8).unwrap()), 24e6);
    }

    #[test]
    fn upload_rate_stays_in_tier_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tiers: Vec<f64> = RATE_TIERS_MBPS.iter().map(|m| m * 1e6).collect();
        for _ in 0..100_000 {
            let p = RatePoint::new(rng.random(), rng.random()).unwrap();
            assert!(tiers.contains(&upload_rate(p)));
        }
    }

    #[test]
    fn locate_inverts_cell_centers() {
        for g in [GridSpec::rome(), GridSpec::san_francisco(), GridSpec::synthetic(3, 5)] {
            for idx in 0..g.num_servers() {
                let (lat, lon) = g.cell_center(ServerId(idx));
                let (id, p) = locate_with_offset(lat, lon, &g).unwrap();
                assert_eq!(id, ServerId(idx));
                assert!((p.frac_x - 0.5).abs() < 1e-9 && (p.frac_y - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GridSpec::new(1.0, 0.0, 0.0, 1.0, 8, 8, 1.0).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0, 8, 1.0).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 8, 8, 1.0).is_ok());
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in 0usize..64, b in 0usize..64, c in 0usize..64) {
            let g = GridSpec::rome();
            let (a, b, c) = (ServerId(a), ServerId(b), ServerId(c));
            let ac = hop_distance(a, c, &g).unwrap();
            let ab = hop_distance(a, b, &g).unwrap();
            let bc = hop_distance(b, c, &g).unwrap();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn offsets_stay_in_unit_square(fy in 0.0f64..=1.0, fx in 0.0f64..=1.0) {
            let g = GridSpec::san_francisco();
            let lat = g.lat_min + fy * (g.lat_max - g.lat_min);
            let lon = g.lon_min + fx * (g.lon_max - g.lon_min);
            let (id, p) = locate_with_offset(lat, lon, &g).unwrap();
            prop_assert!(id.index() < 64);
            prop_assert!(RatePoint::new(p.frac_x, p.frac_y).is_some());
        }
    }
}
