//! Statistical validation of coverage uniformity: deviation and chi-square
//! summaries over cells, Kolmogorov-Smirnov distance for the radial law,
//! and heatmap rasterization.

use crate::geometry::{CellGrid, GridLayout};
use crate::ideal::{radial_cdf, IdealParams};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} cells, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("radius sample {r} outside [{gamma}, {rho}]")]
    Domain { r: f64, gamma: f64, rho: f64 },
}

/// Uniformity summary over per-cell occupancy. Densities are means divided
/// by cell areas, so unequal clipped cells compare fairly.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub per_cell_means: Vec<f64>,
    pub per_cell_density: Vec<f64>,
    pub grand_density: f64,
    /// max_l |density_l − grand| / grand
    pub max_rel_deviation: f64,
    /// Σ (mean_l − expected_l)² / expected_l with expectations proportional
    /// to cell areas.
    pub chi_square: f64,
    /// std/mean of the per-cell densities.
    pub coefficient_of_variation: f64,
    pub radial_ks: Option<f64>,
}

pub fn uniformity_report(means: &[f64], areas: &[f64]) -> Result<UniformityReport, AnalysisError> {
    if means.len() < 2 || means.len() != areas.len() {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: means.len().min(areas.len()),
        });
    }
    let total_area: f64 = areas.iter().sum();
    let total_mean: f64 = means.iter().sum();
    let grand_density = total_mean / total_area;
    let per_cell_density: Vec<f64> = means.iter().zip(areas).map(|(m, a)| m / a).collect();
    let max_rel_deviation = if grand_density > 0.0 {
        per_cell_density
            .iter()
            .map(|d| (d - grand_density).abs() / grand_density)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let chi_square = means
        .iter()
        .zip(areas)
        .map(|(m, a)| {
            let expected = total_mean * a / total_area;
            if expected > 0.0 {
                let d = m - expected;
                d * d / expected
            } else {
                0.0
            }
        })
        .sum();
    let n = per_cell_density.len() as f64;
    let mean_density = per_cell_density.iter().sum::<f64>() / n;
    let var = per_cell_density
        .iter()
        .map(|d| (d - mean_density) * (d - mean_density))
        .sum::<f64>()
        / n;
    let coefficient_of_variation = if mean_density > 0.0 {
        var.sqrt() / mean_density
    } else {
        0.0
    };
    Ok(UniformityReport {
        per_cell_means: means.to_vec(),
        per_cell_density,
        grand_density,
        max_rel_deviation,
        chi_square,
        coefficient_of_variation,
        radial_ks: None,
    })
}

impl UniformityReport {
    /// Attach the KS distance of observed drone radii to the stationary
    /// radial law (circular scenarios).
    pub fn with_radial_ks(mut self, ks: f64) -> Self {
        self.radial_ks = Some(ks);
        self
    }
}

/// Two-sided KS statistic between an empirical sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut sup = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        sup = sup
            .max(((i + 1) as f64 / n - f).abs())
            .max((i as f64 / n - f).abs());
    }
    sup
}

/// KS distance between observed drone radii and the stationary radial law
/// (r²−γ²)/(ρ²−γ²).
pub fn ks_radial(samples: &[f64], params: &IdealParams) -> Result<f64, AnalysisError> {
    for &r in samples {
        if r < params.sector.gamma_m || r > params.sector.rho_m {
            return Err(AnalysisError::Domain {
                r,
                gamma: params.sector.gamma_m,
                rho: params.sector.rho_m,
            });
        }
    }
    Ok(ks_statistic(samples, |r| {
        radial_cdf(r, params).expect("samples checked in range")
    }))
}

/// Per-cell scalar field arranged for raster export. Rectangular grids map
/// onto their tile lattice (dropped tiles render as 0); wedge grids render
/// as a single row ordered by angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn from_grid(grid: &CellGrid, per_cell: &[f64]) -> Self {
        assert_eq!(per_cell.len(), grid.cell_count());
        match &grid.layout {
            GridLayout::Rect {
                rows,
                cols,
                tile_of_cell,
            } => {
                let mut values = vec![0.0; rows * cols];
                for (i, (r, c)) in tile_of_cell.iter().enumerate() {
                    values[r * cols + c] = per_cell[i];
                }
                Heatmap {
                    rows: *rows,
                    cols: *cols,
                    values,
                }
            }
            GridLayout::Wedge => Heatmap {
                rows: 1,
                cols: per_cell.len(),
                values: per_cell.to_vec(),
            },
        }
    }

    /// Normalization record: the value that maps to full intensity.
    pub fn scale_max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0f64, f64::max)
    }

    /// Linear scale to 0..255 with the maximum mapped to 255; ties round
    /// half up. All-zero maps stay black.
    pub fn rasterize(&self) -> Vec<u8> {
        let max = self.scale_max();
        self.values
            .iter()
            .map(|&v| {
                if max <= 0.0 {
                    0
                } else {
                    (v / max * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }

    /// Binary portable graymap (magic "P5", max value 255).
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        w.write_all(&self.rasterize())
    }
}
