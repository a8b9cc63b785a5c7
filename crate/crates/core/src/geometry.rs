//! Constellation geometry: Walker-Delta placement, user dropping, satellite
//! selection and the conversion of positions into array angles and link budgets.
//!
//! Coordinates are Earth-centered Cartesian in meters on a spherical Earth.
//! A direction `(x, y, z)` in an array frame is parameterized as
//! `x = sin θ cos φ`, `y = cos θ`, `z = sin θ sin φ`, which is the convention
//! the steering vectors in [`crate::channel`] expect: the boresight `+z` maps
//! to `θ = φ = π/2`.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Minimum elevation (at the region center) for a satellite to be selectable.
pub const ELEVATION_MASK_RAD: f64 = 10.0 * PI / 180.0;
pub const MAX_CENTER_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationConfig {
    pub altitude_m: f64,
    pub planes: usize,
    pub sats_per_plane: usize,
    pub inclination_rad: f64,
    pub carrier_hz: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub noise_temp_k: f64,
    pub bandwidth_hz: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            altitude_m: 600e3,
            planes: 28,
            sats_per_plane: 60,
            inclination_rad: 53f64.to_radians(),
            carrier_hz: 2e9,
            tx_gain_dbi: 6.0,
            rx_gain_dbi: 0.0,
            noise_figure_db: 7.0,
            noise_temp_k: 290.0,
            bandwidth_hz: 20e6,
        }
    }
}

impl ConstellationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.planes < 1 || self.sats_per_plane < 1 {
            return bad("planes and sats_per_plane must be >= 1");
        }
        if !(self.altitude_m > 0.0) {
            return bad("altitude_m must be positive");
        }
        if !(0.0..=PI).contains(&self.inclination_rad) {
            return bad("inclination must lie in [0, pi]");
        }
        if !(self.carrier_hz > 0.0 && self.bandwidth_hz > 0.0 && self.noise_temp_k > 0.0) {
            return bad("carrier, bandwidth and noise temperature must be positive");
        }
        Ok(())
    }

    pub fn orbit_radius(&self) -> f64 {
        EARTH_RADIUS_M + self.altitude_m
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn total_sats(&self) -> usize {
        self.planes * self.sats_per_plane
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UtDistribution {
    #[default]
    UniformDisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropConfig {
    pub region_radius_m: f64,
    pub num_sats: usize,
    pub num_uts: usize,
    #[serde(default)]
    pub ut_distribution: UtDistribution,
    pub rng_seed: u64,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            region_radius_m: 800e3,
            num_sats: 3,
            num_uts: 12,
            ut_distribution: UtDistribution::UniformDisk,
            rng_seed: 0,
        }
    }
}

impl DropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sats < 1 || self.num_uts < 1 {
            return Err(Error::InvalidConfig("num_sats and num_uts must be >= 1".into()));
        }
        if !(self.region_radius_m > 0.0) {
            return Err(Error::InvalidConfig("region_radius_m must be positive".into()));
        }
        Ok(())
    }
}

/// Satellite position with its along-track unit vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatState {
    pub position: Vec3,
    pub velocity_dir: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySample {
    pub sat_positions: Vec<Vec3>,
    /// Columns are the body x, y, z axes in Earth-centered coordinates; z is
    /// the array boresight.
    pub sat_attitudes: Vec<Mat3>,
    pub ut_positions: Vec<Vec3>,
    pub center: Vec3,
    /// Constellation indices of the selected satellites.
    pub sat_ids: Vec<usize>,
}

impl GeometrySample {
    pub fn num_sats(&self) -> usize {
        self.sat_positions.len()
    }

    pub fn num_uts(&self) -> usize {
        self.ut_positions.len()
    }

    pub fn range(&self, s: usize, k: usize) -> f64 {
        (self.sat_positions[s] - self.ut_positions[k]).norm()
    }
}

/// Angles of one satellite-terminal link in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAngles {
    pub phi_sat: f64,
    pub theta_sat: f64,
    pub phi_ut: f64,
    pub theta_ut: f64,
}

/// Walker-Delta `i: T/P/F` states with phasing factor `F = 1` and ascending
/// nodes spread over `2π`.
pub fn walker_delta_states(cfg: &ConstellationConfig, epoch_phase: f64) -> Vec<SatState> {
    let radius = cfg.orbit_radius();
    let total = cfg.total_sats() as f64;
    let (si, ci) = cfg.inclination_rad.sin_cos();
    let mut out = Vec::with_capacity(cfg.total_sats());
    for p in 0..cfg.planes {
        let raan = TAU * p as f64 / cfg.planes as f64;
        let (so, co) = raan.sin_cos();
        for j in 0..cfg.sats_per_plane {
            let u = epoch_phase + TAU * j as f64 / cfg.sats_per_plane as f64 + TAU * p as f64 / total;
            let (su, cu) = u.sin_cos();
            let position = Vec3::new(co * cu - so * su * ci, so * cu + co * su * ci, su * si) * radius;
            let velocity_dir = Vec3::new(-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si);
            out.push(SatState { position, velocity_dir });
        }
    }
    out
}

pub fn walker_delta_positions(cfg: &ConstellationConfig, epoch_phase: f64) -> Vec<Vec3> {
    walker_delta_states(cfg, epoch_phase).into_iter().map(|s| s.position).collect()
}

/// Elevation of `target` seen from the ground point `ground`.
pub fn elevation(ground: &Vec3, target: &Vec3) -> f64 {
    let los = target - ground;
    let up = ground.normalize();
    (los.dot(&up) / los.norm()).clamp(-1.0, 1.0).asin()
}

/// East-north-up basis at a ground point, as matrix columns.
pub fn enu_frame(ground: &Vec3) -> Mat3 {
    let up = ground.normalize();
    let mut east = Vec3::z().cross(&up);
    if east.norm() < 1e-12 {
        east = Vec3::y().cross(&up);
    }
    let east = east.normalize();
    let north = up.cross(&east);
    Mat3::from_columns(&[east, north, up])
}

/// Attitude whose boresight points at `target` and whose x-axis follows the
/// along-track direction.
pub fn pointing_attitude(sat: &SatState, target: &Vec3) -> Mat3 {
    let z = (target - sat.position).normalize();
    let mut x = sat.velocity_dir - z * sat.velocity_dir.dot(&z);
    if x.norm() < 1e-12 {
        x = Vec3::x() - z * z.x;
        if x.norm() < 1e-12 {
            x = Vec3::y() - z * z.y;
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

/// `(φ, θ)` of a unit direction in an array frame.
pub fn direction_angles(dir: &Vec3) -> (f64, f64) {
    let u = dir.normalize();
    let theta = u.y.clamp(-1.0, 1.0).acos();
    let phi = u.z.atan2(u.x);
    (phi, theta)
}

/// Inverse of [`direction_angles`].
pub fn angles_direction(phi: f64, theta: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, ct, st * sp)
}

fn sample_center(cfg: &ConstellationConfig, rng: &mut impl Rng) -> Vec3 {
    // Uniform on the band of latitudes the inclined orbits overfly.
    let max_lat = cfg.inclination_rad.min(PI - cfg.inclination_rad).max(1e-6);
    let sin_lat = rng.random_range(-max_lat.sin()..=max_lat.sin());
    let lon = rng.random_range(0.0..TAU);
    let cos_lat = (1.0 - sin_lat * sin_lat).sqrt();
    Vec3::new(cos_lat * lon.cos(), cos_lat * lon.sin(), sin_lat) * EARTH_RADIUS_M
}

/// A point uniformly distributed (by area) in the spherical cap of geodesic
/// radius `radius_m` around `center`.
fn sample_in_cap(center: &Vec3, radius_m: f64, rng: &mut impl Rng) -> Vec3 {
    let c = center.normalize();
    let frame = enu_frame(center);
    let (east, north) = (frame.column(0).into_owned(), frame.column(1).into_owned());
    let max_angle = (radius_m / EARTH_RADIUS_M).min(PI);
    let cos_d = 1.0 - rng.random::<f64>() * (1.0 - max_angle.cos());
    let d = cos_d.clamp(-1.0, 1.0).acos();
    let az = rng.random_range(0.0..TAU);
    let dir = north * az.cos() + east * az.sin();
    (c * d.cos() + dir * d.sin()) * EARTH_RADIUS_M
}

pub fn great_circle_distance(a: &Vec3, b: &Vec3) -> f64 {
    let cosang = (a.normalize().dot(&b.normalize())).clamp(-1.0, 1.0);
    cosang.acos() * EARTH_RADIUS_M
}

/// Samples a region center, selects the `S` nearest satellites above the
/// elevation mask and drops `K` terminals uniformly in the region.
pub fn drop_scenario(cfg: &ConstellationConfig, drop: &DropConfig) -> Result<GeometrySample> {
    cfg.validate()?;
    drop.validate()?;
    let states = walker_delta_states(cfg, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(drop.rng_seed);
    for _ in 0..MAX_CENTER_ATTEMPTS {
        let center = sample_center(cfg, &mut rng);
        let mut visible: Vec<(f64, usize)> = states
            .iter()
            .enumerate()
            .filter(|(_, st)| elevation(&center, &st.position) > ELEVATION_MASK_RAD)
            .map(|(i, st)| ((st.position - center).norm(), i))
            .collect();
        if visible.len() < drop.num_sats {
            continue;
        }
        visible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let ids: Vec<usize> = visible[..drop.num_sats].iter().map(|&(_, i)| i).collect();
        let uts: Vec<Vec3> = (0..drop.num_uts)
            .map(|_| sample_in_cap(&center, drop.region_radius_m, &mut rng))
            .collect();
        let all_visible = ids
            .iter()
            .all(|&i| uts.iter().all(|ut| elevation(ut, &states[i].position) > 0.0));
        if !all_visible {
            continue;
        }
        return Ok(GeometrySample {
            sat_positions: ids.iter().map(|&i| states[i].position).collect(),
            sat_attitudes: ids.iter().map(|&i| pointing_attitude(&states[i], &center)).collect(),
            ut_positions: uts,
            center,
            sat_ids: ids,
        });
    }
    Err(Error::SelectionInfeasible { attempts: MAX_CENTER_ATTEMPTS })
}

/// Departure angles in the satellite body frame and arrival angles of the
/// line-of-sight path in the terminal's east-north-up frame.
pub fn link_angles(geom: &GeometrySample, s: usize, k: usize) -> LinkAngles {
    let sat = geom.sat_positions[s];
    let ut = geom.ut_positions[k];
    let down = geom.sat_attitudes[s].transpose() * (ut - sat).normalize();
    let up = enu_frame(&ut).transpose() * (sat - ut).normalize();
    let (phi_sat, theta_sat) = direction_angles(&down);
    let (phi_ut, theta_ut) = direction_angles(&up);
    LinkAngles { phi_sat, theta_sat, phi_ut, theta_ut }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Free-space power gain `(λ / 4πd)²`.
pub fn free_space_gain(range_m: f64, carrier_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    (lambda / (4.0 * PI * range_m)).powi(2)
}

/// Thermal noise power `k_B T B F` in watts.
pub fn noise_power(cfg: &ConstellationConfig) -> f64 {
    BOLTZMANN * cfg.noise_temp_k * cfg.bandwidth_hz * db_to_linear(cfg.noise_figure_db)
}

/// Per-element channel gain and noise power of link `(s, k)`.
pub fn link_budget(cfg: &ConstellationConfig, geom: &GeometrySample, s: usize, k: usize) -> (f64, f64) {
    let beta = free_space_gain(geom.range(s, k), cfg.carrier_hz)
        * db_to_linear(cfg.tx_gain_dbi)
        * db_to_linear(cfg.rx_gain_dbi);
    (beta, noise_power(cfg))
}
