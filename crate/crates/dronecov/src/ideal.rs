//! Closed-form trajectory profiles for the circular neighborhood.
//!
//! Each drone flies radially from the post office edge (r = γ) to the
//! neighborhood edge (r = ρ) and back, with a variable speed chosen so that
//! at any observation time past the first leg the drone's radius is
//! distributed like the distance of a uniform point in the annulus. The
//! randomization comes entirely from the take-off times, drawn uniformly
//! from (0, τ) where τ = (ρ−γ)/V_avg is the one-way travel time.

use crate::geometry::AnnularSector;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdealError {
    #[error("invalid ideal-case parameters: {0}")]
    InvalidParams(String),
    #[error("radius {r} outside [{gamma}, {rho}]")]
    Domain { r: f64, gamma: f64, rho: f64 },
}

/// Fixed parameters of the ideal scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealParams {
    pub sector: AnnularSector,
    pub v_avg_mps: f64,
    /// One-way travel time (ρ−γ)/V_avg, derived at construction.
    pub tau_s: f64,
    pub drones: usize,
    pub houses: usize,
}

impl IdealParams {
    pub fn new(
        sector: AnnularSector,
        v_avg_mps: f64,
        drones: usize,
        houses: usize,
    ) -> Result<Self, IdealError> {
        if !(v_avg_mps > 0.0 && v_avg_mps.is_finite()) {
            return Err(IdealError::InvalidParams(format!(
                "average speed must be positive, got {v_avg_mps}"
            )));
        }
        if drones < 1 {
            return Err(IdealError::InvalidParams("need at least one drone".into()));
        }
        if houses < 1 {
            return Err(IdealError::InvalidParams("need at least one house".into()));
        }
        let tau_s = (sector.rho_m - sector.gamma_m) / v_avg_mps;
        Ok(Self {
            sector,
            v_avg_mps,
            tau_s,
            drones,
            houses,
        })
    }

    /// Peak instantaneous speed of the profile, reached at r = γ.
    pub fn peak_speed_mps(&self) -> f64 {
        let g = self.sector.gamma_m;
        let r = self.sector.rho_m;
        (r * r - g * g) / (2.0 * self.tau_s * g)
    }
}

/// Randomized take-off times, one per drone, each strictly inside (0, τ).
#[derive(Debug, Clone, PartialEq)]
pub struct TakeoffSchedule {
    pub times_s: Vec<f64>,
}

/// D i.i.d. samples uniform on (0, τ).
pub fn sample_takeoffs<R: Rng + ?Sized>(params: &IdealParams, rng: &mut R) -> TakeoffSchedule {
    let times_s = (0..params.drones)
        .map(|_| loop {
            let t = rng.random_range(0.0..params.tau_s);
            if t > 0.0 {
                break t;
            }
        })
        .collect();
    TakeoffSchedule { times_s }
}

/// House angles on the neighborhood edge, uniform on (0, θ_max).
#[derive(Debug, Clone, PartialEq)]
pub struct HousePlacement {
    pub angles_rad: Vec<f64>,
}

pub fn sample_house_angles<R: Rng + ?Sized>(
    count: usize,
    theta_max_rad: f64,
    rng: &mut R,
) -> HousePlacement {
    HousePlacement {
        angles_rad: (0..count)
            .map(|_| rng.random_range(0.0..theta_max_rad))
            .collect(),
    }
}

/// Destination sequence for incoming packages: house indices drawn uniformly
/// or with configured weights. Indices are 0-based internally.
#[derive(Debug, Clone)]
pub struct PackageStream {
    houses: usize,
    /// Cumulative weights when non-uniform.
    cumulative: Option<Vec<f64>>,
}

impl PackageStream {
    pub fn uniform(houses: usize) -> Self {
        Self {
            houses,
            cumulative: None,
        }
    }

    pub fn weighted(weights: &[f64]) -> Result<Self, IdealError> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(IdealError::InvalidParams(
                "destination weights must be nonnegative and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(IdealError::InvalidParams(
                "destination weights must not all be zero".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self {
            houses: weights.len(),
            cumulative: Some(cumulative),
        })
    }

    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.cumulative {
            None => rng.random_range(0..self.houses),
            Some(cum) => {
                let u: f64 = rng.random();
                cum.iter().position(|c| u <= *c).unwrap_or(self.houses - 1)
            }
        }
    }
}

/// Leg index k = floor((t − T_d)/τ): even legs are outbound, odd inbound.
/// Boundary instants t = T_d + kτ belong to the leg starting there.
fn leg_and_offset(t_s: f64, takeoff_s: f64, tau_s: f64) -> (i64, f64) {
    let dt = t_s - takeoff_s;
    debug_assert!(dt >= 0.0, "queried before take-off");
    let k = (dt / tau_s).floor() as i64;
    (k, dt - k as f64 * tau_s)
}

/// Radial position at time `t_s ≥ takeoff_s`, always in [γ, ρ].
pub fn radius_at(t_s: f64, takeoff_s: f64, params: &IdealParams) -> f64 {
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    let (k, offset) = leg_and_offset(t_s, takeoff_s, params.tau_s);
    let progress = if k % 2 == 0 {
        offset
    } else {
        params.tau_s - offset
    };
    (span2 * progress / params.tau_s + g2)
        .sqrt()
        .clamp(params.sector.gamma_m, params.sector.rho_m)
}

/// Signed radial speed at time `t_s`: positive outbound, negative inbound.
pub fn speed_at(t_s: f64, takeoff_s: f64, params: &IdealParams) -> f64 {
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    let tau = params.tau_s;
    let (k, offset) = leg_and_offset(t_s, takeoff_s, tau);
    if k % 2 == 0 {
        span2 / (2.0 * (tau * (span2 * offset + tau * g2)).sqrt())
    } else {
        -span2 / (2.0 * (tau * (span2 * (tau - offset) + tau * g2)).sqrt())
    }
}

/// Instant at which leg `k` of a drone reaches radius `r`: the inverse of
/// the position profile, monotone within each leg.
pub fn time_to_radius(r: f64, takeoff_s: f64, leg: i64, params: &IdealParams) -> f64 {
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    let tau = params.tau_s;
    let frac = tau * (r * r - g2) / span2;
    if leg % 2 == 0 {
        takeoff_s + leg as f64 * tau + frac
    } else {
        takeoff_s + (leg + 1) as f64 * tau - frac
    }
}

/// Stationary radial density 2r/(ρ²−γ²) on [γ, ρ].
pub fn radial_pdf(r: f64, params: &IdealParams) -> Result<f64, IdealError> {
    check_radius(r, params)?;
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    Ok(2.0 * r / span2)
}

/// CDF of the stationary radial law: (r²−γ²)/(ρ²−γ²).
pub fn radial_cdf(r: f64, params: &IdealParams) -> Result<f64, IdealError> {
    check_radius(r, params)?;
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    Ok((r * r - g2) / span2)
}

/// Inverse CDF: r = √(γ² + u·(ρ²−γ²)) for u in [0, 1].
pub fn radial_quantile(u: f64, params: &IdealParams) -> f64 {
    let g2 = params.sector.gamma_m * params.sector.gamma_m;
    let span2 = params.sector.rho_m * params.sector.rho_m - g2;
    (g2 + u * span2).sqrt()
}

fn check_radius(r: f64, params: &IdealParams) -> Result<(), IdealError> {
    if r < params.sector.gamma_m || r > params.sector.rho_m {
        return Err(IdealError::Domain {
            r,
            gamma: params.sector.gamma_m,
            rho: params.sector.rho_m,
        });
    }
    Ok(())
}

/// Infimum of the expected time to deliver `m` packages: 2mτ/D.
pub fn lower_bound_time(m: usize, params: &IdealParams) -> f64 {
    2.0 * m as f64 * params.tau_s / params.drones as f64
}

/// Guaranteed completion time of the randomized schedule: 2mτ/D + τ.
pub fn upper_bound_time(m: usize, params: &IdealParams) -> f64 {
    lower_bound_time(m, params) + params.tau_s
}

/// Lower bound on delivery efficiency after `m` packages: 1/(1 + D/2m).
pub fn efficiency_bound(m: usize, drones: usize) -> f64 {
    1.0 / (1.0 + drones as f64 / (2.0 * m as f64))
}
