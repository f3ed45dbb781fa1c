//! Delivery paths for the general neighborhood: straight depot-to-house
//! lines, then minimal detours so that every grid cell is crossed by at
//! least one path.
//!
//! A detour inserts the uncovered cell's anchor point as an extra waypoint
//! on the path passing closest to it; anchors are interior points of
//! cell ∩ region, so the modified path gains a crossing of positive length.

use crate::geometry::{
    polyline_cell_length, segment_cell_intervals, Cell, CellGrid, Point2, Segment, SNAP_M,
};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("house {index} coincides with the depot")]
    DegenerateHouse { index: usize },
    #[error("house {index} at ({x}, {y}) lies outside the region")]
    HouseOutsideRegion { index: usize, x: f64, y: f64 },
    #[error("cell {cell} could not be reached by any detour")]
    Unreachable { cell: usize },
    #[error("arc length {s} outside [0, {len}]")]
    OutOfRange { s: f64, len: f64 },
}

/// One cell traversal of a path, in arc-length coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub cell_index: usize,
    pub s_in_m: f64,
    pub s_out_m: f64,
}

impl Crossing {
    pub fn length_m(&self) -> f64 {
        self.s_out_m - self.s_in_m
    }
}

/// Polyline trajectory from the depot to one house, with precomputed cell
/// crossings ordered by entry arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryPath {
    pub house_index: usize,
    pub waypoints: Vec<Point2>,
    pub total_length_m: f64,
    pub crossings: Vec<Crossing>,
}

impl DeliveryPath {
    /// Position at arc length `s` along the polyline.
    pub fn point_at_arclength(&self, s: f64) -> Result<Point2, TrajectoryError> {
        if !(0.0..=self.total_length_m + SNAP_M).contains(&s) {
            return Err(TrajectoryError::OutOfRange {
                s,
                len: self.total_length_m,
            });
        }
        let mut remaining = s.min(self.total_length_m);
        for w in self.waypoints.windows(2) {
            let seg_len = w[0].dist(w[1]);
            if remaining <= seg_len {
                let t = if seg_len > 0.0 {
                    remaining / seg_len
                } else {
                    0.0
                };
                return Ok(Point2::new(
                    w[0].x + t * (w[1].x - w[0].x),
                    w[0].y + t * (w[1].y - w[0].y),
                ));
            }
            remaining -= seg_len;
        }
        Ok(*self.waypoints.last().expect("path has waypoints"))
    }

    /// Total length of this path inside the given cell.
    pub fn length_in_cell(&self, cell: &Cell) -> f64 {
        polyline_cell_length(&self.waypoints, cell)
    }
}

/// The full path family, one path per house, bound to the grid whose cells
/// it must cover.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub grid: Arc<CellGrid>,
    pub paths: Vec<DeliveryPath>,
}

fn compute_crossings(waypoints: &[Point2], grid: &CellGrid) -> (f64, Vec<Crossing>) {
    let mut total = 0.0;
    let seg_offsets: Vec<f64> = waypoints
        .windows(2)
        .map(|w| {
            let here = total;
            total += w[0].dist(w[1]);
            here
        })
        .collect();
    let mut crossings: Vec<Crossing> = Vec::new();
    for cell in &grid.cells {
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for (i, w) in waypoints.windows(2).enumerate() {
            if w[0] == w[1] {
                continue;
            }
            let seg = Segment { a: w[0], b: w[1] };
            let len = seg.length();
            for (t0, t1) in segment_cell_intervals(&seg, &cell.shape) {
                let s0 = seg_offsets[i] + t0 * len;
                let s1 = seg_offsets[i] + t1 * len;
                // merge across the shared waypoint of consecutive segments
                if let Some(last) = intervals.last_mut() {
                    if s0 - last.1 <= SNAP_M {
                        last.1 = s1;
                        continue;
                    }
                }
                intervals.push((s0, s1));
            }
        }
        for (s0, s1) in intervals {
            if s1 - s0 > SNAP_M {
                crossings.push(Crossing {
                    cell_index: cell.index,
                    s_in_m: s0,
                    s_out_m: s1,
                });
            }
        }
    }
    crossings.sort_by(|a, b| {
        a.s_in_m
            .partial_cmp(&b.s_in_m)
            .unwrap()
            .then(a.cell_index.cmp(&b.cell_index))
    });
    (total, crossings)
}

fn build_path(house_index: usize, waypoints: Vec<Point2>, grid: &CellGrid) -> DeliveryPath {
    let (total_length_m, crossings) = compute_crossings(&waypoints, grid);
    DeliveryPath {
        house_index,
        waypoints,
        total_length_m,
        crossings,
    }
}

/// Straight depot-to-house paths, one per house, crossings precomputed.
pub fn straight_paths(
    depot: Point2,
    houses: &[Point2],
    grid: Arc<CellGrid>,
) -> Result<PathSet, TrajectoryError> {
    let mut paths = Vec::with_capacity(houses.len());
    for (i, house) in houses.iter().enumerate() {
        let index = i + 1;
        if *house == depot {
            return Err(TrajectoryError::DegenerateHouse { index });
        }
        if !grid.region.contains(*house) {
            return Err(TrajectoryError::HouseOutsideRegion {
                index,
                x: house.x,
                y: house.y,
            });
        }
        paths.push(build_path(index, vec![depot, *house], &grid));
    }
    Ok(PathSet { grid, paths })
}

impl PathSet {
    /// Total trajectory length inside the cell, over all paths.
    pub fn cell_crossing_length(&self, cell_index: usize) -> f64 {
        self.paths
            .iter()
            .flat_map(|p| &p.crossings)
            .filter(|c| c.cell_index == cell_index)
            .map(Crossing::length_m)
            .sum()
    }

    /// Indices of cells no path crosses with positive length.
    pub fn uncovered_cells(&self) -> Vec<usize> {
        let mut lengths = vec![0.0f64; self.grid.cell_count()];
        for path in &self.paths {
            for c in &path.crossings {
                lengths[c.cell_index - 1] += c.length_m();
            }
        }
        lengths
            .iter()
            .enumerate()
            .filter(|(_, l)| **l <= 0.0)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Reroute paths until every cell is crossed. Uncovered cells are handled
/// in ascending index order; each detour picks the path whose polyline
/// passes closest to the cell anchor (ties to the lowest house index) and
/// inserts the anchor between the bracketing waypoints. A detour can drop
/// another cell's only crossing, so passes repeat until the covering is
/// stable.
pub fn ensure_cell_coverage(mut set: PathSet) -> Result<PathSet, TrajectoryError> {
    const MAX_PASSES: usize = 64;
    for _ in 0..MAX_PASSES {
        let uncovered = set.uncovered_cells();
        if uncovered.is_empty() {
            return Ok(set);
        }
        for cell_index in uncovered {
            if set.cell_crossing_length(cell_index) > 0.0 {
                continue; // an earlier detour in this pass reached it
            }
            let anchor = set.grid.cell(cell_index).anchor;
            let mut best: Option<(f64, usize, usize)> = None; // (dist2, path idx, seg idx)
            for (pi, path) in set.paths.iter().enumerate() {
                for (si, w) in path.waypoints.windows(2).enumerate() {
                    if w[0] == w[1] {
                        continue;
                    }
                    let seg = Segment { a: w[0], b: w[1] };
                    let (d2, _) = seg.closest_point_param(anchor);
                    if best.is_none_or(|(bd, _, _)| d2 < bd) {
                        best = Some((d2, pi, si));
                    }
                }
            }
            let (_, pi, si) = best.ok_or(TrajectoryError::Unreachable { cell: cell_index })?;
            let mut waypoints = set.paths[pi].waypoints.clone();
            waypoints.insert(si + 1, anchor);
            let house_index = set.paths[pi].house_index;
            set.paths[pi] = build_path(house_index, waypoints, &set.grid);
        }
    }
    let leftover = set.uncovered_cells();
    match leftover.first() {
        None => Ok(set),
        Some(&cell) => Err(TrajectoryError::Unreachable { cell }),
    }
}
