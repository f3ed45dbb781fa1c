//! JSON scenario files and their resolution into a runnable config.
//!
//! Field names carry units (`_m`, `_s`, `_mps`, `_rad`) so that a mixed
//! km/minutes scenario cannot slip through silently. Validation errors name
//! the offending field.

use crate::coverage::{CoverageTarget, VelocityBounds};
use crate::geometry::{
    build_equal_sector_cells, build_rect_grid, AnnularSector, Point2, PolygonRegion, Region,
};
use crate::ideal::{sample_house_angles, IdealParams};
use crate::sim::{ArrivalModel, DispatchMode, Policy, SimConfig};
use crate::trajectory::{ensure_cell_coverage, straight_paths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Sector {
        gamma_m: f64,
        rho_m: f64,
        theta_max_rad: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
        depot: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HousesSpec {
    /// Explicit house coordinates.
    Points(Vec<[f64; 2]>),
    /// Sampled uniformly along the region boundary from the scenario seed.
    Generated {
        count: usize,
        boundary_uniform: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Square cells of this size tiling a polygon's bounding box.
    CellSizeM(f64),
    /// Equal-area wedges for a sector region.
    EqualSectorCells(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    pub drones: usize,
    pub v_avg_mps: f64,
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub altitude_m: f64,
    /// Warn when the closed-form profile's peak speed exceeds this;
    /// defaults to v_max_mps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory_speed_cap_mps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub p_star: f64,
    /// Time constant of the adaptive rule, seconds.
    #[serde(default = "default_kappa")]
    pub kappa_s: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub packages: usize,
    #[serde(default = "default_arrivals")]
    pub arrivals: ArrivalModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_weights: Option<Vec<f64>>,
}

fn default_arrivals() -> ArrivalModel {
    ArrivalModel::Saturated
}

fn default_dispatch() -> DispatchMode {
    DispatchMode::Fifo
}

fn default_snapshot_interval() -> f64 {
    1.0
}

fn default_late_threshold() -> f64 {
    1800.0
}

/// The on-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub region: RegionSpec,
    pub houses: HousesSpec,
    pub grid: GridSpec,
    pub fleet: FleetSpec,
    pub coverage: CoverageSpec,
    pub workload: WorkloadSpec,
    pub policy: Policy,
    #[serde(default = "default_dispatch")]
    pub dispatch: DispatchMode,
    pub seed: u64,
    #[serde(default = "default_snapshot_interval")]
    pub snapshot_interval_s: f64,
    #[serde(default = "default_late_threshold")]
    pub late_threshold_s: f64,
}

/// A scenario turned into everything a run needs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub sim: SimConfig,
    pub warnings: Vec<String>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Build the simulation config, re-deriving houses and paths from the
    /// effective seed. Replicas resolve with distinct seed overrides.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Resolved, ScenarioError> {
        let seed = seed_override.unwrap_or(self.seed);
        let mut warnings = Vec::new();

        let (region, sector) = match &self.region {
            RegionSpec::Sector {
                gamma_m,
                rho_m,
                theta_max_rad,
            } => {
                let s = AnnularSector::new(*gamma_m, *rho_m, *theta_max_rad)
                    .map_err(|e| invalid("region.sector", e.to_string()))?;
                (Region::Sector(s), Some(s))
            }
            RegionSpec::Polygon { vertices, depot } => {
                let verts = vertices.iter().map(|[x, y]| Point2::new(*x, *y)).collect();
                let poly = PolygonRegion::new(verts, Point2::new(depot[0], depot[1]))
                    .map_err(|e| invalid("region.polygon", e.to_string()))?;
                (Region::Polygon(poly), None)
            }
        };

        let grid = match (&self.grid, &region) {
            (GridSpec::CellSizeM(size), Region::Polygon(poly)) => Arc::new(
                build_rect_grid(poly, *size)
                    .map_err(|e| invalid("grid.cell_size_m", e.to_string()))?,
            ),
            (GridSpec::EqualSectorCells(n), Region::Sector(s)) => {
                if *n < 1 {
                    return Err(invalid("grid.equal_sector_cells", "must be at least 1"));
                }
                Arc::new(build_equal_sector_cells(s, *n))
            }
            (GridSpec::CellSizeM(_), Region::Sector(_)) => {
                return Err(invalid(
                    "grid.cell_size_m",
                    "rectangular grids require a polygon region",
                ))
            }
            (GridSpec::EqualSectorCells(_), Region::Polygon(_)) => {
                return Err(invalid(
                    "grid.equal_sector_cells",
                    "wedge grids require a sector region",
                ))
            }
        };

        let depot = region.depot();
        let houses = self.resolve_houses(&region, depot, seed)?;

        let bounds = VelocityBounds::new(self.fleet.v_min_mps, self.fleet.v_max_mps)
            .map_err(|e| invalid("fleet.v_min_mps/v_max_mps", e.to_string()))?;
        if !(self.fleet.v_avg_mps > 0.0) {
            return Err(invalid("fleet.v_avg_mps", "must be positive"));
        }
        if self.fleet.drones < 1 {
            return Err(invalid("fleet.drones", "need at least one drone"));
        }
        let target = CoverageTarget::new(self.coverage.p_star)
            .map_err(|e| invalid("coverage.p_star", e.to_string()))?;
        if !(self.coverage.kappa_s > 0.0) {
            return Err(invalid("coverage.kappa_s", "must be positive"));
        }
        if self.workload.packages < 1 {
            return Err(invalid("workload.packages", "need at least one package"));
        }
        if let Some(w) = &self.workload.destination_weights {
            if w.len() != houses.len() {
                return Err(invalid(
                    "workload.destination_weights",
                    format!("{} entries for {} houses", w.len(), houses.len()),
                ));
            }
            if self.policy == Policy::Ideal {
                return Err(invalid(
                    "workload.destination_weights",
                    "not supported with the ideal policy; destinations must be uniform",
                ));
            }
        }
        if !(self.snapshot_interval_s > 0.0) {
            return Err(invalid("snapshot_interval_s", "must be positive"));
        }
        if !(self.late_threshold_s > 0.0) {
            return Err(invalid("late_threshold_s", "must be positive"));
        }

        let ideal = match sector {
            Some(s) => Some(
                IdealParams::new(s, self.fleet.v_avg_mps, self.fleet.drones, houses.len())
                    .map_err(|e| invalid("fleet", e.to_string()))?,
            ),
            None => None,
        };

        if self.policy == Policy::Ideal {
            let params = ideal
                .as_ref()
                .ok_or_else(|| invalid("policy", "ideal requires a sector region"))?;
            let cap = self
                .fleet
                .advisory_speed_cap_mps
                .unwrap_or(self.fleet.v_max_mps);
            let peak = params.peak_speed_mps();
            if peak > cap {
                warnings.push(format!(
                    "ideal profile peak speed {peak:.1} m/s exceeds the advisory cap {cap:.1} m/s near r = gamma"
                ));
            }
        }

        let needs_paths = matches!(self.policy, Policy::Adaptive | Policy::MinMax);
        let needs_straight = self.policy == Policy::Benchmark && sector.is_none();
        let map_path_err = |e: crate::trajectory::TrajectoryError| match e {
            crate::trajectory::TrajectoryError::DegenerateHouse { index } => invalid(
                &format!("houses[{}]", index - 1),
                "coincides with the depot",
            ),
            crate::trajectory::TrajectoryError::HouseOutsideRegion { index, x, y } => invalid(
                &format!("houses[{}]", index - 1),
                format!("({x}, {y}) lies outside the region"),
            ),
            other => invalid("grid", other.to_string()),
        };
        let straight_set = if needs_paths || needs_straight {
            Some(straight_paths(depot, &houses, grid.clone()).map_err(map_path_err)?)
        } else {
            None
        };
        let paths = match (&straight_set, needs_paths) {
            (Some(base), true) => Some(Arc::new(
                ensure_cell_coverage(base.clone())
                    .map_err(|e| invalid("grid", format!("coverage completion failed: {e}")))?,
            )),
            _ => None,
        };
        let straight = straight_set.map(Arc::new);

        Ok(Resolved {
            sim: SimConfig {
                grid,
                houses,
                drones: self.fleet.drones,
                packages: self.workload.packages,
                policy: self.policy,
                dispatch: self.dispatch,
                arrivals: self.workload.arrivals,
                destination_weights: self.workload.destination_weights.clone(),
                bounds,
                target,
                kappa_s: self.coverage.kappa_s,
                v_avg_mps: self.fleet.v_avg_mps,
                altitude_m: self.fleet.altitude_m,
                seed,
                snapshot_interval_s: self.snapshot_interval_s,
                late_threshold_s: self.late_threshold_s,
                event_cap: 100_000_000,
                record_series: true,
                ideal,
                paths,
                straight,
            },
            warnings,
        })
    }

    fn resolve_houses(
        &self,
        region: &Region,
        depot: Point2,
        seed: u64,
    ) -> Result<Vec<Point2>, ScenarioError> {
        match &self.houses {
            HousesSpec::Points(points) => {
                if points.is_empty() {
                    return Err(invalid("houses", "need at least one house"));
                }
                let mut out = Vec::with_capacity(points.len());
                for (i, [x, y]) in points.iter().enumerate() {
                    let p = Point2::new(*x, *y);
                    if !region.contains(p) {
                        return Err(invalid(
                            &format!("houses[{i}]"),
                            format!("({x}, {y}) lies outside the region"),
                        ));
                    }
                    if p == depot {
                        return Err(invalid(&format!("houses[{i}]"), "coincides with the depot"));
                    }
                    out.push(p);
                }
                Ok(out)
            }
            HousesSpec::Generated {
                count,
                boundary_uniform,
            } => {
                if !boundary_uniform {
                    return Err(invalid(
                        "houses.boundary_uniform",
                        "only boundary-uniform generation is supported",
                    ));
                }
                if *count < 1 {
                    return Err(invalid("houses.count", "need at least one house"));
                }
                // house generation draws from its own stream so that the
                // simulation's draws stay aligned across policies
                let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                match region {
                    Region::Sector(s) => {
                        let placement = sample_house_angles(*count, s.theta_max_rad, &mut rng);
                        Ok(placement
                            .angles_rad
                            .iter()
                            .map(|th| Point2::new(s.rho_m * th.cos(), s.rho_m * th.sin()))
                            .collect())
                    }
                    Region::Polygon(poly) => {
                        let n = poly.vertices.len();
                        let edge_lengths: Vec<f64> = (0..n)
                            .map(|i| poly.vertices[i].dist(poly.vertices[(i + 1) % n]))
                            .collect();
                        let total: f64 = edge_lengths.iter().sum();
                        Ok((0..*count)
                            .map(|_| {
                                let mut u = rng.random_range(0.0..total);
                                for i in 0..n {
                                    if u <= edge_lengths[i] {
                                        let a = poly.vertices[i];
                                        let b = poly.vertices[(i + 1) % n];
                                        let t = u / edge_lengths[i];
                                        return Point2::new(
                                            a.x + t * (b.x - a.x),
                                            a.y + t * (b.y - a.y),
                                        );
                                    }
                                    u -= edge_lengths[i];
                                }
                                poly.vertices[0]
                            })
                            .collect())
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_json(policy: &str) -> String {
        format!(
            r#"{{
  "region": {{ "sector": {{ "gamma_m": 100.0, "rho_m": 5000.0, "theta_max_rad": 3.9269908169872414 }} }},
  "houses": {{ "count": 100, "boundary_uniform": true }},
  "grid": {{ "equal_sector_cells": 10 }},
  "fleet": {{ "drones": 10, "v_avg_mps": 10.0, "v_min_mps": 1.0, "v_max_mps": 50.0, "altitude_m": 60.0 }},
  "coverage": {{ "p_star": 0.1, "kappa_s": 1.0 }},
  "workload": {{ "packages": 100, "arrivals": "saturated" }},
  "policy": "{policy}",
  "dispatch": "fifo",
  "seed": 7,
  "snapshot_interval_s": 10.0,
  "late_threshold_s": 1800.0
}}"#
        )
    }

    fn polygon_json() -> String {
        r#"{
  "region": { "polygon": { "vertices": [[0,0],[400,0],[400,200],[0,200]], "depot": [20, 20] } },
  "houses": [[100, 100], [350, 150], [250, 50]],
  "grid": { "cell_size_m": 100.0 },
  "fleet": { "drones": 3, "v_avg_mps": 10.0, "v_min_mps": 2.0, "v_max_mps": 25.0, "altitude_m": 50.0 },
  "coverage": { "p_star": 0.15, "kappa_s": 20.0 },
  "workload": { "packages": 30 },
  "policy": "adaptive",
  "seed": 3
}"#
        .to_string()
    }

    #[test]
    fn ideal_scenario_resolves() {
        let scn = ScenarioFile::from_json(&ideal_json("ideal")).unwrap();
        let resolved = scn.resolve(None).unwrap();
        assert_eq!(resolved.sim.houses.len(), 100);
        assert_eq!(resolved.sim.grid.cell_count(), 10);
        assert!(resolved.sim.ideal.is_some());
        assert_eq!(resolved.sim.ideal.unwrap().tau_s, 490.0);
        // this geometry peaks at 255 m/s, above v_max = 50
        assert_eq!(resolved.warnings.len(), 1);
        // same seed resolves identically, overrides change houses
        let again = scn.resolve(None).unwrap();
        assert_eq!(resolved.sim.houses, again.sim.houses);
        let other = scn.resolve(Some(8)).unwrap();
        assert_ne!(resolved.sim.houses, other.sim.houses);
    }

    #[test]
    fn polygon_scenario_resolves_with_paths() {
        let scn = ScenarioFile::from_json(&polygon_json()).unwrap();
        let resolved = scn.resolve(None).unwrap();
        let paths = resolved.sim.paths.expect("adaptive policy builds paths");
        assert!(paths.uncovered_cells().is_empty());
        assert_eq!(resolved.sim.grid.cell_count(), 8);
        // defaults applied
        assert_eq!(resolved.sim.snapshot_interval_s, 1.0);
        assert_eq!(resolved.sim.late_threshold_s, 1800.0);
        assert_eq!(resolved.sim.dispatch, DispatchMode::Fifo);
    }

    #[test]
    fn field_specific_errors() {
        let cases = [
            (
                ideal_json("ideal").replace("\"gamma_m\": 100.0", "\"gamma_m\": -5.0"),
                "region.sector",
            ),
            (
                ideal_json("ideal").replace("\"p_star\": 0.1", "\"p_star\": 1.5"),
                "coverage.p_star",
            ),
            (
                ideal_json("ideal").replace("\"drones\": 10", "\"drones\": 0"),
                "fleet.drones",
            ),
            (
                ideal_json("ideal").replace("\"packages\": 100", "\"packages\": 0"),
                "workload.packages",
            ),
            (
                ideal_json("ideal").replace("\"equal_sector_cells\": 10", "\"cell_size_m\": 100.0"),
                "grid.cell_size_m",
            ),
            (
                ideal_json("ideal").replace(
                    "\"v_min_mps\": 1.0, \"v_max_mps\": 50.0",
                    "\"v_min_mps\": 60.0, \"v_max_mps\": 50.0",
                ),
                "fleet.v_min_mps/v_max_mps",
            ),
        ];
        for (json, field) in cases {
            let err = ScenarioFile::from_json(&json)
                .unwrap()
                .resolve(None)
                .unwrap_err();
            match err {
                ScenarioError::Invalid { field: f, .. } => assert_eq!(f, field),
                other => panic!("expected Invalid, got {other}"),
            }
        }
    }

    #[test]
    fn polygon_boundary_uniform_houses() {
        let json = polygon_json().replace(
            r#""houses": [[100, 100], [350, 150], [250, 50]],"#,
            r#""houses": { "count": 25, "boundary_uniform": true },"#,
        );
        let scn = ScenarioFile::from_json(&json).unwrap();
        let resolved = scn.resolve(None).unwrap();
        assert_eq!(resolved.sim.houses.len(), 25);
        // generated houses sit on the polygon perimeter
        for h in &resolved.sim.houses {
            let on_edge = h.x.abs() < 1e-9
                || (h.x - 400.0).abs() < 1e-9
                || h.y.abs() < 1e-9
                || (h.y - 200.0).abs() < 1e-9;
            assert!(on_edge, "house {h:?} not on the boundary");
        }
    }

    #[test]
    fn house_outside_region_names_the_entry() {
        let json = polygon_json().replace("[350, 150]", "[800, 800]");
        let err = ScenarioFile::from_json(&json)
            .unwrap()
            .resolve(None)
            .unwrap_err();
        match err {
            ScenarioError::Invalid { field, .. } => assert_eq!(field, "houses[1]"),
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn ideal_policy_requires_sector() {
        let json = polygon_json().replace("\"adaptive\"", "\"ideal\"");
        let err = ScenarioFile::from_json(&json)
            .unwrap()
            .resolve(None)
            .unwrap_err();
        assert!(err.to_string().contains("ideal"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = ideal_json("ideal").replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1");
        assert!(ScenarioFile::from_json(&json).is_err());
    }

    #[test]
    fn scenario_round_trips() {
        let scn = ScenarioFile::from_json(&ideal_json("benchmark")).unwrap();
        let back = ScenarioFile::from_json(&scn.to_json()).unwrap();
        assert_eq!(scn, back);
    }
}
