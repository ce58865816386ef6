//! Network topology and large-scale fading.
//!
//! Cells tile a square torus of `cells_per_side × cells_per_side` cells. Each
//! cell hosts `A` subarrays on a circle around its center, and each subarray
//! carries `N/A` co-located antennas. All antennas of a subarray see the same
//! large-scale attenuation, so a [`LargeScaleMap`] is stored per subarray and
//! expanded to antennas on demand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Rejection-sampling attempts per UE before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Pathloss constant in the exponent of `10^(s - 1.53) / d^3.76`.
pub const PATHLOSS_OFFSET: f64 = 1.53;
/// Pathloss exponent.
pub const PATHLOSS_EXPONENT: f64 = 3.76;
/// Default variance of the shadowing exponent `s`.
pub const DEFAULT_SHADOW_VARIANCE: f64 = 3.16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Distance on the torus of side `world_side`: the shortest distance from `p`
/// to any of the nine translated images of `q`.
pub fn wraparound_distance(p: Point, q: Point, world_side: f64) -> f64 {
    debug_assert!(world_side > 0.0);
    let mut best = f64::INFINITY;
    for sx in [-world_side, 0.0, world_side] {
        for sy in [-world_side, 0.0, world_side] {
            let d = (p.x - (q.x + sx)).hypot(p.y - (q.y + sy));
            best = best.min(d);
        }
    }
    best
}

/// Placement of cells, subarrays and UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub cells_per_side: usize,
    /// Side of one square cell in meters.
    pub cell_size: f64,
    pub subarrays_per_cell: usize,
    pub antennas_per_subarray: usize,
    pub subarray_radius: f64,
    /// Subarray positions relative to the cell center.
    pub subarray_offsets: Vec<Point>,
    /// Absolute UE positions, one list per cell.
    pub ue_positions: Vec<Vec<Point>>,
    pub min_ue_distance: f64,
}

impl NetworkLayout {
    pub fn num_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    pub fn world_side(&self) -> f64 {
        self.cells_per_side as f64 * self.cell_size
    }

    pub fn num_antennas(&self) -> usize {
        self.subarrays_per_cell * self.antennas_per_subarray
    }

    pub fn ues_per_cell(&self) -> usize {
        self.ue_positions.first().map_or(0, Vec::len)
    }

    /// Center of cell `j`, with cells numbered row-major.
    pub fn cell_center(&self, j: usize) -> Point {
        let row = j / self.cells_per_side;
        let col = j % self.cells_per_side;
        Point::new(
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Absolute position of subarray `a` of cell `j`.
    pub fn subarray_position(&self, j: usize, a: usize) -> Point {
        let c = self.cell_center(j);
        let o = self.subarray_offsets[a];
        Point::new(c.x + o.x, c.y + o.y)
    }

    pub fn with_antennas_per_subarray(mut self, antennas: usize) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::InvalidGeometry("antennas per subarray must be positive".into()));
        }
        self.antennas_per_subarray = antennas;
        Ok(self)
    }

    /// Checks the structural invariants, e.g. after loading from disk.
    pub fn validate(&self) -> Result<()> {
        if self.cells_per_side == 0 || self.subarrays_per_cell == 0 || self.antennas_per_subarray == 0 {
            return Err(Error::InvalidGeometry("zero-sized layout".into()));
        }
        if self.subarray_offsets.len() != self.subarrays_per_cell {
            return Err(Error::InvalidGeometry("subarray offset count mismatch".into()));
        }
        if !self.ue_positions.is_empty() {
            let k = self.ues_per_cell();
            if self.ue_positions.len() != self.num_cells()
                || self.ue_positions.iter().any(|c| c.len() != k)
            {
                return Err(Error::InvalidGeometry("ragged UE lists".into()));
            }
        }
        let side = self.world_side();
        for (j, ues) in self.ue_positions.iter().enumerate() {
            for p in ues {
                if !(0.0..side).contains(&p.x) || !(0.0..side).contains(&p.y) {
                    return Err(Error::InvalidGeometry(format!("UE at {p:?} outside the world")));
                }
                for a in 0..self.subarrays_per_cell {
                    let d = wraparound_distance(*p, self.subarray_position(j, a), side);
                    if d < self.min_ue_distance {
                        return Err(Error::InvalidGeometry(format!(
                            "UE at {p:?} is {d} m from subarray {a} of cell {j}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the cell grid with `subarrays` subarrays per cell, spread at equal
/// angles from 45° on a circle of `subarray_radius` meters. UEs are not
/// dropped yet and every subarray holds a single antenna.
pub fn build_wraparound_layout(
    cells_per_side: usize,
    cell_size: f64,
    subarrays: usize,
    subarray_radius: f64,
) -> Result<NetworkLayout> {
    if cells_per_side == 0 || subarrays == 0 {
        return Err(Error::InvalidGeometry("need at least one cell and one subarray".into()));
    }
    if !(cell_size > 0.0) {
        return Err(Error::InvalidGeometry(format!("cell size {cell_size} must be positive")));
    }
    if !(subarray_radius >= 0.0) || subarray_radius >= cell_size / 2.0 {
        return Err(Error::InvalidGeometry(format!(
            "subarray radius {subarray_radius} must lie in [0, {})",
            cell_size / 2.0
        )));
    }
    let subarray_offsets = (0..subarrays)
        .map(|a| {
            let angle = std::f64::consts::FRAC_PI_4
                + a as f64 * std::f64::consts::TAU / subarrays as f64;
            Point::new(subarray_radius * angle.cos(), subarray_radius * angle.sin())
        })
        .collect();
    Ok(NetworkLayout {
        cells_per_side,
        cell_size,
        subarrays_per_cell: subarrays,
        antennas_per_subarray: 1,
        subarray_radius,
        subarray_offsets,
        ue_positions: Vec::new(),
        min_ue_distance: 0.0,
    })
}

/// Drops `ues_per_cell` UEs uniformly in every cell, rejecting positions
/// closer than `min_ue_distance` to any subarray of the same cell.
pub fn drop_ues(
    layout: NetworkLayout,
    ues_per_cell: usize,
    min_ue_distance: f64,
    seed: u64,
) -> Result<NetworkLayout> {
    if ues_per_cell == 0 {
        return Err(Error::InvalidGeometry("need at least one UE per cell".into()));
    }
    let side = layout.world_side();
    let mut ue_positions = Vec::with_capacity(layout.num_cells());
    for j in 0..layout.num_cells() {
        let center = layout.cell_center(j);
        let x0 = center.x - layout.cell_size / 2.0;
        let y0 = center.y - layout.cell_size / 2.0;
        let mut cell = Vec::with_capacity(ues_per_cell);
        for k in 0..ues_per_cell {
            let mut rng = rng::stream(seed, Domain::UeDrop, (j * ues_per_cell + k) as u64);
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let p = Point::new(
                    x0 + layout.cell_size * rng.random::<f64>(),
                    y0 + layout.cell_size * rng.random::<f64>(),
                );
                let clear = (0..layout.subarrays_per_cell).all(|a| {
                    wraparound_distance(p, layout.subarray_position(j, a), side) >= min_ue_distance
                });
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            match placed {
                Some(p) => cell.push(p),
                None => {
                    return Err(Error::PlacementFailure {
                        cell: j,
                        ue: k,
                        attempts: MAX_PLACEMENT_ATTEMPTS,
                    })
                }
            }
        }
        ue_positions.push(cell);
    }
    Ok(NetworkLayout { ue_positions, min_ue_distance, ..layout })
}

/// Average channel attenuation `10^(s - 1.53) / d^3.76` at `distance` meters.
///
/// `distance` must be positive.
pub fn attenuation(distance: f64, shadow: f64) -> f64 {
    assert!(distance > 0.0, "attenuation needs a positive distance, got {distance}");
    10f64.powf(shadow - PATHLOSS_OFFSET) / distance.powf(PATHLOSS_EXPONENT)
}

/// Large-scale attenuations `λ_jlk^(n)` between BS `j` and UE `k` of cell `l`.
///
/// Antennas are organised in `groups` groups of `group_size` antennas that
/// share one attenuation. A subarray-factorized map has one group per
/// subarray; a flat map has one group per antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleMap {
    cells: usize,
    ues_per_cell: usize,
    groups: usize,
    group_size: usize,
    factorized: bool,
    /// Row-major `[j][l][k][g]`.
    gains: Vec<f64>,
}

impl LargeScaleMap {
    /// Subarray-factorized map from per-subarray gains laid out `[j][l][k][a]`.
    pub fn factorized(
        cells: usize,
        ues_per_cell: usize,
        subarrays: usize,
        antennas_per_subarray: usize,
        gains: Vec<f64>,
    ) -> Result<Self> {
        Self::new(cells, ues_per_cell, subarrays, antennas_per_subarray, true, gains)
    }

    /// Unstructured map with one gain per antenna, laid out `[j][l][k][n]`.
    pub fn flat(cells: usize, ues_per_cell: usize, antennas: usize, gains: Vec<f64>) -> Result<Self> {
        Self::new(cells, ues_per_cell, antennas, 1, false, gains)
    }

    fn new(
        cells: usize,
        ues_per_cell: usize,
        groups: usize,
        group_size: usize,
        factorized: bool,
        gains: Vec<f64>,
    ) -> Result<Self> {
        let map = Self { cells, ues_per_cell, groups, group_size, factorized, gains };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.ues_per_cell == 0 || self.groups == 0 || self.group_size == 0 {
            return Err(Error::DimensionMismatch("empty large-scale map".into()));
        }
        let expected = self.cells * self.cells * self.ues_per_cell * self.groups;
        if self.gains.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} gains, got {}",
                self.gains.len()
            )));
        }
        if let Some(bad) = self.gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::DimensionMismatch(format!("invalid gain {bad}")));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn ues_per_cell(&self) -> usize {
        self.ues_per_cell
    }

    pub fn num_groups(&self) -> usize {
        self.groups
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn num_antennas(&self) -> usize {
        self.groups * self.group_size
    }

    pub fn is_factorized(&self) -> bool {
        self.factorized
    }

    pub fn group_of(&self, n: usize) -> usize {
        n / self.group_size
    }

    fn index(&self, j: usize, l: usize, k: usize, g: usize) -> usize {
        ((j * self.cells + l) * self.ues_per_cell + k) * self.groups + g
    }

    /// Attenuation shared by the antennas of group `g`.
    pub fn group_gain(&self, j: usize, l: usize, k: usize, g: usize) -> f64 {
        self.gains[self.index(j, l, k, g)]
    }

    /// Group gains of link `(j, l, k)`.
    pub fn group_gains(&self, j: usize, l: usize, k: usize) -> &[f64] {
        let start = self.index(j, l, k, 0);
        &self.gains[start..start + self.groups]
    }

    /// `λ_jlk^(n)`.
    pub fn lambda(&self, j: usize, l: usize, k: usize, n: usize) -> f64 {
        self.group_gain(j, l, k, self.group_of(n))
    }

    /// `λ̃_jlk^(a)`, defined only for factorized maps.
    pub fn lambda_tilde(&self, j: usize, l: usize, k: usize, a: usize) -> Option<f64> {
        self.factorized.then(|| self.group_gain(j, l, k, a))
    }

    /// Per-antenna attenuations of link `(j, l, k)`.
    pub fn lambda_row(&self, j: usize, l: usize, k: usize) -> Vec<f64> {
        self.group_gains(j, l, k)
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g, self.group_size))
            .collect()
    }

    /// Same subarray gains with a different number of antennas per subarray.
    pub fn with_antennas_per_subarray(&self, antennas: usize) -> Result<Self> {
        if !self.factorized {
            return Err(Error::NotFactorized);
        }
        if antennas == 0 {
            return Err(Error::DimensionMismatch("antennas per subarray must be positive".into()));
        }
        Ok(Self { group_size: antennas, ..self.clone() })
    }

    /// Expands groups into one group per antenna. The result is unfactorized.
    pub fn to_flat(&self) -> Self {
        let n = self.num_antennas();
        let mut gains = Vec::with_capacity(self.cells * self.cells * self.ues_per_cell * n);
        for j in 0..self.cells {
            for l in 0..self.cells {
                for k in 0..self.ues_per_cell {
                    gains.extend(self.lambda_row(j, l, k));
                }
            }
        }
        Self { cells: self.cells, ues_per_cell: self.ues_per_cell, groups: n, group_size: 1, factorized: false, gains }
    }
}

/// Draws one shadowing sample per `(j, l, k, subarray)` link and returns the
/// subarray-factorized attenuation map of a dropped layout.
///
/// `shadow_variance` is the variance of the exponent `s`.
pub fn assemble_large_scale(
    layout: &NetworkLayout,
    seed: u64,
    shadow_variance: f64,
) -> Result<LargeScaleMap> {
    if layout.ue_positions.is_empty() {
        return Err(Error::InvalidGeometry("UEs have not been dropped".into()));
    }
    if !(shadow_variance >= 0.0) {
        return Err(Error::Config(format!("shadow variance {shadow_variance} must be nonnegative")));
    }
    let cells = layout.num_cells();
    let ues = layout.ues_per_cell();
    let subarrays = layout.subarrays_per_cell;
    let side = layout.world_side();
    let shadow = Normal::new(0.0, shadow_variance.sqrt()).expect("finite standard deviation");
    let mut gains = Vec::with_capacity(cells * cells * ues * subarrays);
    for j in 0..cells {
        for l in 0..cells {
            for k in 0..ues {
                let ue = layout.ue_positions[l][k];
                for a in 0..subarrays {
                    let link = ((j * cells + l) * ues + k) * subarrays + a;
                    let mut rng = rng::stream(seed, Domain::Shadowing, link as u64);
                    let s = shadow.sample(&mut rng);
                    let d = wraparound_distance(layout.subarray_position(j, a), ue, side);
                    if d <= 0.0 {
                        return Err(Error::InvalidGeometry(format!(
                            "UE {k} of cell {l} coincides with subarray {a} of cell {j}"
                        )));
                    }
                    gains.push(attenuation(d, s));
                }
            }
        }
    }
    LargeScaleMap::factorized(cells, ues, subarrays, layout.antennas_per_subarray, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Brute force over explicit image enumeration, written independently.
    fn images_min(p: Point, q: Point, w: f64) -> f64 {
        let mut ds = Vec::new();
        for i in -1..=1 {
            for k in -1..=1 {
                let dx = p.x - q.x - i as f64 * w;
                let dy = p.y - q.y - k as f64 * w;
                ds.push((dx * dx + dy * dy).sqrt());
            }
        }
        ds.into_iter().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn wraparound_examples() {
        assert_eq!(wraparound_distance(Point::new(0.0, 0.0), Point::new(0.0, 0.0), 800.0), 0.0);
        assert_relative_eq!(
            wraparound_distance(Point::new(10.0, 0.0), Point::new(790.0, 0.0), 800.0),
            20.0,
            epsilon = 1e-12
        );
        let d = wraparound_distance(Point::new(5.0, 5.0), Point::new(795.0, 795.0), 800.0);
        assert_relative_eq!(d, 200f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(d, 14.142135623730951, epsilon = 1e-12);
    }

    #[test]
    fn sixteen_cell_grid_has_sixty_four_subarrays() {
        let layout = build_wraparound_layout(4, 400.0, 4, 100.0).unwrap();
        assert_eq!(layout.num_cells(), 16);
        let all: Vec<Point> = (0..16)
            .flat_map(|j| (0..4).map(move |a| (j, a)))
            .map(|(j, a)| layout.subarray_position(j, a))
            .collect();
        assert_eq!(all.len(), 64);
        // A = 4 gives the four diagonal positions.
        let o = layout.subarray_offsets[0];
        assert_relative_eq!(o.x, 100.0 / 2f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(o.y, 100.0 / 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn co_located_single_array() {
        let layout = build_wraparound_layout(1, 400.0, 1, 0.0).unwrap();
        assert_eq!(layout.num_cells(), 1);
        assert_eq!(layout.subarray_position(0, 0), Point::new(200.0, 200.0));
    }

    #[test]
    fn small_grid_coordinates_stay_in_world() {
        let layout = build_wraparound_layout(2, 100.0, 2, 25.0).unwrap();
        assert_eq!(layout.num_cells(), 4);
        for j in 0..4 {
            let c = layout.cell_center(j);
            for a in 0..2 {
                let p = layout.subarray_position(j, a);
                assert!((0.0..200.0).contains(&p.x) && (0.0..200.0).contains(&p.y));
                assert_relative_eq!((p.x - c.x).hypot(p.y - c.y), 25.0, epsilon = 1e-9);
            }
            // the two subarrays sit opposite each other
            let p0 = layout.subarray_position(j, 0);
            let p1 = layout.subarray_position(j, 1);
            assert_relative_eq!(p0.x - c.x, -(p1.x - c.x), epsilon = 1e-9);
            assert_relative_eq!(p0.y - c.y, -(p1.y - c.y), epsilon = 1e-9);
        }
    }

    #[test]
    fn radius_too_large_is_rejected() {
        assert!(matches!(
            build_wraparound_layout(2, 100.0, 2, 50.0),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn drop_respects_minimum_distance() {
        let layout = build_wraparound_layout(4, 400.0, 4, 100.0).unwrap();
        let dropped = drop_ues(layout, 15, 25.0, 11).unwrap();
        assert_eq!(dropped.ue_positions.len(), 16);
        assert!(dropped.ue_positions.iter().all(|c| c.len() == 15));
        dropped.validate().unwrap();
    }

    #[test]
    fn drop_is_deterministic() {
        let layout = build_wraparound_layout(2, 400.0, 4, 100.0).unwrap();
        let a = drop_ues(layout.clone(), 3, 25.0, 5).unwrap();
        let b = drop_ues(layout.clone(), 3, 25.0, 5).unwrap();
        let c = drop_ues(layout, 3, 25.0, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_distance_fails() {
        let layout = build_wraparound_layout(1, 100.0, 1, 0.0).unwrap();
        assert!(matches!(
            drop_ues(layout, 1, 500.0, 1),
            Err(Error::PlacementFailure { .. })
        ));
    }

    #[test]
    fn attenuation_examples() {
        assert_relative_eq!(attenuation(1.0, 0.0), 0.029512092266663854, max_relative = 1e-12);
        assert_relative_eq!(attenuation(10.0, 0.0), 10f64.powf(-1.53 - 3.76), max_relative = 1e-12);
        assert_relative_eq!(attenuation(10.0, 0.0), 5.128613839913648e-6, max_relative = 1e-9);
        let ratio = attenuation(50.0, 0.3) / attenuation(100.0, 0.3);
        assert_relative_eq!(ratio, 2f64.powf(3.76), max_relative = 1e-12);
        assert_relative_eq!(ratio, 13.5479, max_relative = 1e-4);
    }

    #[test]
    fn large_scale_map_is_factorized_and_reproducible() {
        let layout = build_wraparound_layout(2, 400.0, 4, 100.0).unwrap();
        let layout = drop_ues(layout, 3, 25.0, 1).unwrap().with_antennas_per_subarray(3).unwrap();
        let map = assemble_large_scale(&layout, 9, DEFAULT_SHADOW_VARIANCE).unwrap();
        assert!(map.is_factorized());
        assert_eq!(map.num_antennas(), 12);
        for j in 0..4 {
            for l in 0..4 {
                for k in 0..3 {
                    for n in 0..12 {
                        let g = map.lambda(j, l, k, n);
                        assert_eq!(Some(g), map.lambda_tilde(j, l, k, n / 3));
                        assert!(g > 0.0 && g.is_finite());
                    }
                }
            }
        }
        let flat = map.to_flat();
        for j in 0..4 {
            for n in 0..12 {
                assert_eq!(flat.lambda(j, 1, 2, n), map.lambda(j, 1, 2, n));
            }
        }
        assert_eq!(map, assemble_large_scale(&layout, 9, DEFAULT_SHADOW_VARIANCE).unwrap());
    }

    #[test]
    fn single_subarray_collapses_to_one_gain() {
        let layout = build_wraparound_layout(1, 400.0, 1, 0.0).unwrap();
        let layout = drop_ues(layout, 2, 25.0, 3).unwrap().with_antennas_per_subarray(8).unwrap();
        let map = assemble_large_scale(&layout, 4, DEFAULT_SHADOW_VARIANCE).unwrap();
        let row = map.lambda_row(0, 0, 1);
        assert!(row.iter().all(|&g| g == row[0]));
    }

    proptest! {
        #[test]
        fn wraparound_is_a_torus_metric(
            px in 0.0..800.0f64, py in 0.0..800.0f64,
            qx in 0.0..800.0f64, qy in 0.0..800.0f64,
        ) {
            let p = Point::new(px, py);
            let q = Point::new(qx, qy);
            let d = wraparound_distance(p, q, 800.0);
            prop_assert!((d - wraparound_distance(q, p, 800.0)).abs() < 1e-9);
            prop_assert!((d - images_min(p, q, 800.0)).abs() < 1e-9);
            prop_assert!(d <= (px - qx).hypot(py - qy) + 1e-9);
            prop_assert!(d <= 800.0 * std::f64::consts::SQRT_2 / 2.0 + 1e-9);
        }
    }
}
