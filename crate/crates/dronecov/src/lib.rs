//! Trajectory design for multi-purpose delivery drones.
//!
//! Drones that shuttle packages between a post office and the surrounding
//! houses are already airborne over the whole neighborhood, so the same
//! fleet can double as aerial coverage (surveillance relays, network
//! nodes), provided its presence over the area is close to uniform.
//! Straight-line constant-speed delivery is the most efficient schedule but
//! concentrates flight time near the depot. This crate implements and
//! validates two schedules that keep delivery efficient while making the
//! coverage uniform:
//!
//! * **Circular neighborhoods** (houses on the boundary): a closed-form
//!   variable-speed radial profile plus randomized take-off times makes the
//!   drone positions uniform over the annulus at any observation time, at
//!   the cost of at most one extra one-way trip over the theoretical
//!   minimum delivery time. See [`ideal`].
//! * **Arbitrary polygonal neighborhoods**: the region is divided into
//!   cells, delivery paths are detoured until every cell is crossed, and
//!   per-cell speed rules steer each cell's coverage ratio toward a common
//!   target. See [`trajectory`], [`coverage`], and [`sim`].
//!
//! The event-driven simulator in [`sim`] plays out full delivery workloads
//! under either schedule (or the straight-line benchmark) and collects
//! delivery-time and occupancy statistics; [`analysis`] turns those into
//! uniformity reports and heatmaps. The `dronecov` CLI drives everything
//! from a JSON scenario file; see the guide in `book/` for a tour.

pub mod analysis;
pub mod coverage;
pub mod geometry;
pub mod ideal;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use analysis::{ks_radial, uniformity_report, Heatmap, UniformityReport};
pub use coverage::{
    adaptive_speed, convergence_check, feasibility_thresholds, minmax_speed, CellCoverageState,
    CoverageTarget, VelocityBounds,
};
pub use geometry::{
    build_equal_sector_cells, build_rect_grid, locate_cell, polyline_cell_length,
    segment_cell_length, AnnularSector, Cell, CellGrid, Point2, PolygonRegion, Region, Segment,
};
pub use ideal::{
    efficiency_bound, lower_bound_time, radial_cdf, radial_pdf, radius_at, sample_takeoffs,
    speed_at, upper_bound_time, IdealParams, TakeoffSchedule,
};
pub use scenario::ScenarioFile;
pub use sim::{Policy, RunMetrics, SimConfig};
pub use trajectory::{ensure_cell_coverage, straight_paths, DeliveryPath, PathSet};

/// Book chapters double as integration tests: every fenced Rust block in
/// the guide is compiled and run by `cargo test`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(ideal_case, "../../../book/src/ideal-case.md");
    chapter!(cells_and_paths, "../../../book/src/cells-and-paths.md");
    chapter!(adaptive_speeds, "../../../book/src/adaptive-speeds.md");
    chapter!(simulation, "../../../book/src/simulation.md");
    chapter!(cli, "../../../book/src/cli.md");
}
