//! 2D primitives, region shapes, cell grids, and exact segment-cell
//! intersection lengths.
//!
//! Cells are either axis-aligned rectangles (polygonal neighborhoods) or
//! annular-sector wedges (circular neighborhoods). Intersection lengths are
//! computed exactly by solving for every boundary-crossing parameter along
//! the segment and classifying the midpoints of the resulting subintervals,
//! so the same code path serves both cell shapes.

use thiserror::Error;

/// Absolute snap tolerance for clipping and membership tests, in meters.
/// Intersections thinner than this are treated as tangential contact.
pub const SNAP_M: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("segment endpoints coincide at ({0}, {1})")]
    DegenerateSegment(f64, f64),
    #[error("invalid annular sector: {0}")]
    InvalidSector(String),
    #[error("invalid polygon region: {0}")]
    InvalidPolygon(String),
    #[error("cell size {cell_size_m} m must be positive and smaller than the bounding-box diagonal {diagonal_m} m")]
    InvalidCellSize { cell_size_m: f64, diagonal_m: f64 },
    #[error("no grid cell intersects the region")]
    EmptyGrid,
}

/// A point in the neighborhood plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite());
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Polar angle in [0, 2π).
    pub fn angle(self) -> f64 {
        let a = self.y.atan2(self.x);
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    }
}

fn cross(a: Point2, b: Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn dot(a: Point2, b: Point2) -> f64 {
    a.x * b.x + a.y * b.y
}

/// Directed straight piece of a trajectory. Zero-length segments are
/// rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Result<Self, GeometryError> {
        if a == b {
            return Err(GeometryError::DegenerateSegment(a.x, a.y));
        }
        Ok(Self { a, b })
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        Point2::new(
            self.a.x + t * (self.b.x - self.a.x),
            self.a.y + t * (self.b.y - self.a.y),
        )
    }

    /// Squared distance from `p` to the closest point of the segment,
    /// together with the clamped parameter of that point.
    pub fn closest_point_param(&self, p: Point2) -> (f64, f64) {
        let d = Point2::new(self.b.x - self.a.x, self.b.y - self.a.y);
        let w = Point2::new(p.x - self.a.x, p.y - self.a.y);
        let t = (dot(w, d) / dot(d, d)).clamp(0.0, 1.0);
        let q = self.point_at(t);
        let dx = p.x - q.x;
        let dy = p.y - q.y;
        (dx * dx + dy * dy, t)
    }
}

/// Annulus sector centered at the origin: γ ≤ r ≤ ρ, 0 ≤ θ ≤ θ_max.
/// The post office occupies the inner disk of radius γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnularSector {
    pub gamma_m: f64,
    pub rho_m: f64,
    pub theta_max_rad: f64,
}

impl AnnularSector {
    pub fn new(gamma_m: f64, rho_m: f64, theta_max_rad: f64) -> Result<Self, GeometryError> {
        if !(gamma_m > 0.0 && rho_m.is_finite() && gamma_m < rho_m) {
            return Err(GeometryError::InvalidSector(format!(
                "need 0 < gamma < rho, got gamma={gamma_m}, rho={rho_m}"
            )));
        }
        if !(theta_max_rad > 0.0 && theta_max_rad <= std::f64::consts::TAU + 1e-12) {
            return Err(GeometryError::InvalidSector(format!(
                "need 0 < theta_max <= 2*pi, got {theta_max_rad}"
            )));
        }
        Ok(Self {
            gamma_m,
            rho_m,
            theta_max_rad: theta_max_rad.min(std::f64::consts::TAU),
        })
    }

    pub fn area(&self) -> f64 {
        0.5 * self.theta_max_rad * (self.rho_m * self.rho_m - self.gamma_m * self.gamma_m)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let r = p.norm();
        if r < self.gamma_m - SNAP_M || r > self.rho_m + SNAP_M {
            return false;
        }
        let ang_tol = SNAP_M / self.rho_m.max(1.0);
        let a = p.angle();
        a <= self.theta_max_rad + ang_tol || a >= std::f64::consts::TAU - ang_tol
    }
}

/// Simple counter-clockwise polygon with the post office (depot) inside.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonRegion {
    pub vertices: Vec<Point2>,
    pub depot: Point2,
}

impl PolygonRegion {
    pub fn new(vertices: Vec<Point2>, depot: Point2) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let area = signed_area(&vertices);
        if area.abs() <= SNAP_M * SNAP_M {
            return Err(GeometryError::InvalidPolygon("zero area".into()));
        }
        if area < 0.0 {
            return Err(GeometryError::InvalidPolygon(
                "vertices must be in counter-clockwise order".into(),
            ));
        }
        if !is_simple(&vertices) {
            return Err(GeometryError::InvalidPolygon("edges self-intersect".into()));
        }
        let region = Self { vertices, depot };
        if !region.contains(depot) {
            return Err(GeometryError::InvalidPolygon(
                "depot lies outside the polygon".into(),
            ));
        }
        Ok(region)
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Closed membership: interior points and points within `SNAP_M` of the
    /// boundary both count as inside.
    pub fn contains(&self, p: Point2) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        point_in_polygon(&self.vertices, p)
    }

    fn on_boundary(&self, p: Point2) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let seg = Segment {
                a: self.vertices[i],
                b: self.vertices[(i + 1) % n],
            };
            let (d2, _) = seg.closest_point_param(p);
            if d2 <= SNAP_M * SNAP_M {
                return true;
            }
        }
        false
    }
}

fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += cross(a, b);
    }
    0.5 * acc
}

/// Even-odd crossing test, boundary excluded (callers snap separately).
fn point_in_polygon(vertices: &[Point2], p: Point2) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_properly_intersect(p: Segment, q: Segment) -> bool {
    let d1 = cross(
        Point2::new(p.b.x - p.a.x, p.b.y - p.a.y),
        Point2::new(q.a.x - p.a.x, q.a.y - p.a.y),
    );
    let d2 = cross(
        Point2::new(p.b.x - p.a.x, p.b.y - p.a.y),
        Point2::new(q.b.x - p.a.x, q.b.y - p.a.y),
    );
    let d3 = cross(
        Point2::new(q.b.x - q.a.x, q.b.y - q.a.y),
        Point2::new(p.a.x - q.a.x, p.a.y - q.a.y),
    );
    let d4 = cross(
        Point2::new(q.b.x - q.a.x, q.b.y - q.a.y),
        Point2::new(p.b.x - q.a.x, p.b.y - q.a.y),
    );
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

fn is_simple(vertices: &[Point2]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let si = Segment {
            a: vertices[i],
            b: vertices[(i + 1) % n],
        };
        for j in (i + 1)..n {
            // skip adjacent edges (shared vertex)
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let sj = Segment {
                a: vertices[j],
                b: vertices[(j + 1) % n],
            };
            if segments_properly_intersect(si, sj) {
                return false;
            }
        }
    }
    true
}

/// Neighborhood geometry: the area drones must cover.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Sector(AnnularSector),
    Polygon(PolygonRegion),
}

impl Region {
    pub fn contains(&self, p: Point2) -> bool {
        match self {
            Region::Sector(s) => s.contains(p),
            Region::Polygon(poly) => poly.contains(p),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Region::Sector(s) => s.area(),
            Region::Polygon(poly) => poly.area(),
        }
    }

    /// Post office location: sector regions have it at the origin.
    pub fn depot(&self) -> Point2 {
        match self {
            Region::Sector(_) => Point2::new(0.0, 0.0),
            Region::Polygon(poly) => poly.depot,
        }
    }
}

/// Geometric footprint of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellShape {
    /// Axis-aligned rectangle [x0, x1] x [y0, y1].
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Origin-centered annular wedge: gamma <= r <= rho, theta0 <= θ <= theta1.
    Wedge {
        gamma_m: f64,
        rho_m: f64,
        theta0_rad: f64,
        theta1_rad: f64,
    },
}

impl CellShape {
    /// Closed membership with the snap tolerance.
    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            CellShape::Rect { x0, y0, x1, y1 } => {
                p.x >= x0 - SNAP_M && p.x <= x1 + SNAP_M && p.y >= y0 - SNAP_M && p.y <= y1 + SNAP_M
            }
            CellShape::Wedge {
                gamma_m,
                rho_m,
                theta0_rad,
                theta1_rad,
            } => {
                let r = p.norm();
                if r < gamma_m - SNAP_M || r > rho_m + SNAP_M {
                    return false;
                }
                let span = theta1_rad - theta0_rad;
                if span >= std::f64::consts::TAU - 1e-12 {
                    return true;
                }
                let ang_tol = SNAP_M / rho_m.max(1.0);
                let d = (p.angle() - theta0_rad).rem_euclid(std::f64::consts::TAU);
                d <= span + ang_tol || d >= std::f64::consts::TAU - ang_tol
            }
        }
    }
}

/// One cell of a grid: 1-based index, footprint, clipped area, and an
/// interior point used as the detour target for trajectory completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub shape: CellShape,
    pub area_m2: f64,
    pub anchor: Point2,
}

/// Raster layout of a grid, kept for heatmap export.
#[derive(Debug, Clone, PartialEq)]
pub enum GridLayout {
    /// Row-major tiling of the region bounding box. `tile_of_cell[i]` is the
    /// (row, col) of cell i+1; dropped tiles have no cell.
    Rect {
        rows: usize,
        cols: usize,
        tile_of_cell: Vec<(usize, usize)>,
    },
    /// Wedges ordered by angle; rendered as a single raster row.
    Wedge,
}

/// Partition of the region into cells. Every region point belongs to at
/// least one cell closure; cell interiors are pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub region: Region,
    pub cells: Vec<Cell>,
    pub layout: GridLayout,
    /// Nominal cell size for rectangular grids, wedge count for sectors.
    pub nominal_cell_size_m: f64,
}

impl CellGrid {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, index: usize) -> &Cell {
        &self.cells[index - 1]
    }
}

/// Length of `seg` ∩ `cell` (1D Hausdorff measure). Tangential contact of
/// zero width returns 0. Cells are closed sets, so a segment running along
/// a shared edge is attributed to both incident cells.
pub fn segment_cell_length(seg: &Segment, cell: &Cell) -> f64 {
    segment_cell_intervals(seg, &cell.shape)
        .iter()
        .map(|(t0, t1)| (t1 - t0) * seg.length())
        .sum()
}

/// Parameter intervals of `seg` inside `shape`, each with positive width.
pub fn segment_cell_intervals(seg: &Segment, shape: &CellShape) -> Vec<(f64, f64)> {
    let mut ts: Vec<f64> = vec![0.0, 1.0];
    let a = seg.a;
    let d = Point2::new(seg.b.x - seg.a.x, seg.b.y - seg.a.y);
    match *shape {
        CellShape::Rect { x0, y0, x1, y1 } => {
            for (coord_a, coord_d, line) in [
                (a.x, d.x, x0),
                (a.x, d.x, x1),
                (a.y, d.y, y0),
                (a.y, d.y, y1),
            ] {
                if coord_d != 0.0 {
                    let t = (line - coord_a) / coord_d;
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
            }
        }
        CellShape::Wedge {
            gamma_m,
            rho_m,
            theta0_rad,
            theta1_rad,
        } => {
            for radius in [gamma_m, rho_m] {
                circle_crossings(a, d, radius, &mut ts);
            }
            let span = theta1_rad - theta0_rad;
            if span < std::f64::consts::TAU - 1e-12 {
                for theta in [theta0_rad, theta1_rad] {
                    ray_crossing(a, d, theta, &mut ts);
                }
            }
        }
    }
    ts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut intervals = Vec::new();
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = seg.point_at(0.5 * (t0 + t1));
        if shape.contains(mid) {
            // extend the previous interval when contiguous
            if let Some(last) = intervals.last_mut() {
                let (_, ref mut hi) = *last;
                if *hi == t0 {
                    *hi = t1;
                    continue;
                }
            }
            intervals.push((t0, t1));
        }
    }
    intervals
        .into_iter()
        .filter(|(t0, t1)| (t1 - t0) * seg.length() > SNAP_M)
        .collect()
}

fn circle_crossings(a: Point2, d: Point2, radius: f64, ts: &mut Vec<f64>) {
    // |a + t d|^2 = radius^2
    let qa = dot(d, d);
    let qb = 2.0 * dot(a, d);
    let qc = dot(a, a) - radius * radius;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return;
    }
    let sq = disc.sqrt();
    for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
        if t > 0.0 && t < 1.0 {
            ts.push(t);
        }
    }
}

fn ray_crossing(a: Point2, d: Point2, theta: f64, ts: &mut Vec<f64>) {
    let e = Point2::new(theta.cos(), theta.sin());
    let denom = cross(e, d);
    if denom == 0.0 {
        return;
    }
    let t = -cross(e, a) / denom;
    if t > 0.0 && t < 1.0 {
        let p = Point2::new(a.x + t * d.x, a.y + t * d.y);
        // only the forward half of the boundary line is a wedge edge
        if dot(e, p) >= 0.0 {
            ts.push(t);
        }
    }
}

/// Sum of `segment_cell_length` over a chained waypoint polyline.
pub fn polyline_cell_length(waypoints: &[Point2], cell: &Cell) -> f64 {
    let mut total = 0.0;
    for w in waypoints.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let seg = Segment { a: w[0], b: w[1] };
        total += segment_cell_length(&seg, cell);
    }
    total
}

/// Axis-aligned square grid over the polygon's bounding box, keeping only
/// tiles whose intersection with the region has positive area. Indices are
/// assigned row-major over the kept tiles.
pub fn build_rect_grid(
    region: &PolygonRegion,
    cell_size_m: f64,
) -> Result<CellGrid, GeometryError> {
    let (lo, hi) = region.bbox();
    let diagonal = lo.dist(hi);
    if !(cell_size_m > 0.0) || cell_size_m >= diagonal {
        return Err(GeometryError::InvalidCellSize {
            cell_size_m,
            diagonal_m: diagonal,
        });
    }
    let cols = ((hi.x - lo.x) / cell_size_m).ceil() as usize;
    let rows = ((hi.y - lo.y) / cell_size_m).ceil() as usize;
    let area_eps = SNAP_M * cell_size_m;
    let mut cells = Vec::new();
    let mut tile_of_cell = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let x0 = lo.x + col as f64 * cell_size_m;
            let x1 = lo.x + (col + 1) as f64 * cell_size_m;
            let y0 = lo.y + row as f64 * cell_size_m;
            let y1 = lo.y + (row + 1) as f64 * cell_size_m;
            let clipped = clip_polygon_to_rect(&region.vertices, x0, y0, x1, y1);
            let area = signed_area_of(&clipped);
            if area <= area_eps {
                continue;
            }
            let shape = CellShape::Rect { x0, y0, x1, y1 };
            let anchor = match interior_anchor(region, x0, y0, x1, y1) {
                Some(p) => p,
                None => polygon_centroid(&clipped),
            };
            cells.push(Cell {
                index: cells.len() + 1,
                shape,
                area_m2: area,
                anchor,
            });
            tile_of_cell.push((row, col));
        }
    }
    if cells.is_empty() {
        return Err(GeometryError::EmptyGrid);
    }
    Ok(CellGrid {
        region: Region::Polygon(region.clone()),
        cells,
        layout: GridLayout::Rect {
            rows,
            cols,
            tile_of_cell,
        },
        nominal_cell_size_m: cell_size_m,
    })
}

fn signed_area_of(vertices: &[Point2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    signed_area(vertices).abs()
}

fn polygon_centroid(vertices: &[Point2]) -> Point2 {
    let n = vertices.len();
    if n == 0 {
        return Point2::new(0.0, 0.0);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut a = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        let w = cross(p, q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
        a += w;
    }
    if a.abs() < 1e-300 {
        let inv = 1.0 / n as f64;
        return Point2::new(
            vertices.iter().map(|v| v.x).sum::<f64>() * inv,
            vertices.iter().map(|v| v.y).sum::<f64>() * inv,
        );
    }
    Point2::new(cx / (3.0 * a), cy / (3.0 * a))
}

/// Deterministic interior point of tile ∩ region: the first midpoint of a
/// progressively refined subgrid that lands strictly inside the region.
fn interior_anchor(region: &PolygonRegion, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<Point2> {
    for k in [1usize, 3, 5, 9, 17, 33] {
        let k_f = k as f64;
        for j in 0..k {
            for i in 0..k {
                let p = Point2::new(
                    x0 + (i as f64 + 0.5) * (x1 - x0) / k_f,
                    y0 + (j as f64 + 0.5) * (y1 - y0) / k_f,
                );
                if point_in_polygon(&region.vertices, p) {
                    return Some(p);
                }
            }
        }
    }
    None
}

/// Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle.
fn clip_polygon_to_rect(vertices: &[Point2], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    // Each clip edge keeps points with keep(p) >= 0.
    type Keep = (fn(Point2, f64) -> f64, f64);
    let edges: [Keep; 4] = [
        (|p, v| p.x - v, x0),
        (|p, v| v - p.x, x1),
        (|p, v| p.y - v, y0),
        (|p, v| v - p.y, y1),
    ];
    let mut poly: Vec<Point2> = vertices.to_vec();
    for (keep, v) in edges {
        if poly.is_empty() {
            break;
        }
        let mut out = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let cur = poly[i];
            let nxt = poly[(i + 1) % poly.len()];
            let kc = keep(cur, v);
            let kn = keep(nxt, v);
            if kc >= 0.0 {
                out.push(cur);
            }
            if (kc > 0.0 && kn < 0.0) || (kc < 0.0 && kn > 0.0) {
                let t = kc / (kc - kn);
                out.push(Point2::new(
                    cur.x + t * (nxt.x - cur.x),
                    cur.y + t * (nxt.y - cur.y),
                ));
            }
        }
        poly = out;
    }
    poly
}

/// Equal-area partition of a sector into `n` wedges, each spanning the full
/// radial range. Equal areas hold by angular symmetry.
pub fn build_equal_sector_cells(sector: &AnnularSector, n: usize) -> CellGrid {
    assert!(n >= 1, "wedge count must be at least 1");
    let total_area = sector.area();
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let theta0 = sector.theta_max_rad * i as f64 / n as f64;
        let theta1 = sector.theta_max_rad * (i + 1) as f64 / n as f64;
        let mid = 0.5 * (theta0 + theta1);
        let r_mid = 0.5 * (sector.gamma_m + sector.rho_m);
        cells.push(Cell {
            index: i + 1,
            shape: CellShape::Wedge {
                gamma_m: sector.gamma_m,
                rho_m: sector.rho_m,
                theta0_rad: theta0,
                theta1_rad: theta1,
            },
            area_m2: total_area / n as f64,
            anchor: Point2::new(r_mid * mid.cos(), r_mid * mid.sin()),
        });
    }
    CellGrid {
        region: Region::Sector(*sector),
        cells,
        layout: GridLayout::Wedge,
        nominal_cell_size_m: total_area / n as f64,
    }
}

/// Cell whose closure contains `p`; boundary points resolve to the lowest
/// incident index. `None` when `p` is outside the region.
pub fn locate_cell(grid: &CellGrid, p: Point2) -> Option<usize> {
    if !grid.region.contains(p) {
        return None;
    }
    grid.cells
        .iter()
        .find(|c| c.shape.contains(p))
        .map(|c| c.index)
}
