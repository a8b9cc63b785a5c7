//! Steering vectors, per-link Rician statistics and channel realizations.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::mix_all;
use crate::geometry::{self, ConstellationConfig, GeometrySample};
use crate::linalg::{c, kron, outer, trace_re, CMat, CVec, C64};
use crate::{Error, Result};

/// Uniform planar arrays at both ends of a link. Element spacing is in
/// wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_x: usize,
    pub m_y: usize,
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default = "half_wavelength")]
    pub spacing: f64,
}

fn half_wavelength() -> f64 {
    0.5
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { m_x: 8, m_y: 8, n_x: 2, n_y: 2, spacing: 0.5 }
    }
}

impl ArrayConfig {
    pub fn new(m_x: usize, m_y: usize, n_x: usize, n_y: usize) -> Self {
        Self { m_x, m_y, n_x, n_y, spacing: 0.5 }
    }

    pub fn tx_elements(&self) -> usize {
        self.m_x * self.m_y
    }

    pub fn rx_elements(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_x == 0 || self.m_y == 0 || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::InvalidConfig("array element counts must be >= 1".into()));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidConfig("element spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Knobs of the parametric statistics generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub kappa_mean_db: f64,
    pub kappa_std_db: f64,
    /// Range of the per-link exponential correlation coefficient of the NLoS
    /// covariance.
    pub corr_min: f64,
    pub corr_max: f64,
    /// Multiply the per-element gain by `M·N` so that `β = E{tr(HHᴴ)}` with
    /// unit-norm steering vectors.
    pub include_array_gain: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { kappa_mean_db: 10.0, kappa_std_db: 3.0, corr_min: 0.3, corr_max: 0.9, include_array_gain: true }
    }
}

/// Link angles in degrees. Degrees are the stored unit so that scenario files
/// round-trip exactly; radians are derived on access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglesDeg {
    pub phi_sat: f64,
    pub theta_sat: f64,
    pub phi_ut: f64,
    pub theta_ut: f64,
}

impl AnglesDeg {
    pub fn from_radians(a: &geometry::LinkAngles) -> Self {
        Self {
            phi_sat: a.phi_sat.to_degrees(),
            theta_sat: a.theta_sat.to_degrees(),
            phi_ut: a.phi_ut.to_degrees(),
            theta_ut: a.theta_ut.to_degrees(),
        }
    }
}

/// Statistical CSI of one satellite-terminal link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStat {
    pub angles: AnglesDeg,
    pub beta: f64,
    pub kappa: f64,
    /// NLoS receive covariance, Hermitian PSD with unit trace.
    pub sigma_nlos: CMat,
    pub g: CVec,
    pub d0: CVec,
    pub r_ut: CMat,
    pub r_sat: CMat,
    sigma_factor: Option<CMat>,
}

impl LinkStat {
    pub fn new(arr: &ArrayConfig, angles: AnglesDeg, beta: f64, kappa: f64, sigma_nlos: CMat) -> Result<Self> {
        let n = arr.rx_elements();
        if sigma_nlos.nrows() != n || sigma_nlos.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "sigma_nlos is {}x{}, expected {n}x{n}",
                sigma_nlos.nrows(),
                sigma_nlos.ncols()
            )));
        }
        if !(beta > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidConfig(format!("beta and kappa must be positive (beta={beta}, kappa={kappa})")));
        }
        let g = tx_steering(arr, angles.phi_sat.to_radians(), angles.theta_sat.to_radians());
        let d0 = rx_steering(arr, angles.phi_ut.to_radians(), angles.theta_ut.to_radians());
        let los = kappa * beta / (kappa + 1.0);
        let nlos = beta / (kappa + 1.0);
        let r_ut = outer(&d0, &d0).scale(los) + sigma_nlos.scale(nlos);
        let r_sat = outer(&g, &g).scale(beta);
        let sigma_factor = nlos_factor(&sigma_nlos);
        Ok(Self { angles, beta, kappa, sigma_nlos, g, d0, r_ut, r_sat, sigma_factor })
    }

    pub fn phi_sat(&self) -> f64 {
        self.angles.phi_sat.to_radians()
    }

    pub fn theta_sat(&self) -> f64 {
        self.angles.theta_sat.to_radians()
    }

    pub fn phi_ut(&self) -> f64 {
        self.angles.phi_ut.to_radians()
    }

    pub fn theta_ut(&self) -> f64 {
        self.angles.theta_ut.to_radians()
    }

    /// `√(κβ/(κ+1))`.
    pub fn los_amplitude(&self) -> f64 {
        (self.kappa * self.beta / (self.kappa + 1.0)).sqrt()
    }

    /// `√(β/(κ+1))`.
    pub fn nlos_amplitude(&self) -> f64 {
        (self.beta / (self.kappa + 1.0)).sqrt()
    }

    /// Mean receive vector `√(κβ/(κ+1))·d0`.
    pub fn mean_receive(&self) -> CVec {
        self.d0.scale(self.los_amplitude())
    }
}

/// Lower Cholesky factor of `Σ`, with diagonal loading `1e-12·tr(Σ)/N` when
/// `Σ` is rank deficient. `None` when `Σ = 0`.
fn nlos_factor(sigma: &CMat) -> Option<CMat> {
    let n = sigma.nrows();
    let tr = trace_re(sigma);
    if !(tr > 0.0) {
        return None;
    }
    let sym = (sigma + sigma.adjoint()).scale(0.5);
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch.unpack());
    }
    let mut loaded = sym;
    for i in 0..n {
        loaded[(i, i)] += C64::from(1e-12 * tr / n as f64);
    }
    loaded.cholesky().map(|ch| ch.unpack())
}

/// Everything the solvers need about one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub arr: ArrayConfig,
    pub num_sats: usize,
    pub num_uts: usize,
    /// Row-major `S × K`, index `s·K + k`.
    pub links: Vec<LinkStat>,
    /// Per-terminal noise power in watts.
    pub noise: Vec<f64>,
    /// Per-satellite power budget in dBW.
    pub budgets_dbw: Vec<f64>,
    /// Row-major `S × K` rate weights.
    pub weights: Vec<f64>,
}

impl ScenarioInstance {
    pub fn m(&self) -> usize {
        self.arr.tx_elements()
    }

    pub fn n(&self) -> usize {
        self.arr.rx_elements()
    }

    pub fn idx(&self, s: usize, k: usize) -> usize {
        s * self.num_uts + k
    }

    pub fn link(&self, s: usize, k: usize) -> &LinkStat {
        &self.links[s * self.num_uts + k]
    }

    pub fn weight(&self, s: usize, k: usize) -> f64 {
        self.weights[s * self.num_uts + k]
    }

    pub fn budget_w(&self, s: usize) -> f64 {
        geometry::db_to_linear(self.budgets_dbw[s])
    }

    pub fn validate(&self) -> Result<()> {
        let (s, k) = (self.num_sats, self.num_uts);
        if s == 0 || k == 0 {
            return Err(Error::InvalidConfig("scenario needs S >= 1 and K >= 1".into()));
        }
        if self.links.len() != s * k || self.weights.len() != s * k {
            return Err(Error::ShapeMismatch(format!("expected {} links and weights", s * k)));
        }
        if self.noise.len() != k || self.budgets_dbw.len() != s {
            return Err(Error::ShapeMismatch("noise must have K entries and budgets S entries".into()));
        }
        if self.noise.iter().any(|&x| !(x > 0.0)) || self.budgets_dbw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("noise and budgets must be positive".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidConfig("rate weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Same scenario with every satellite at `dbw`.
    pub fn with_budget_dbw(mut self, dbw: f64) -> Self {
        self.budgets_dbw = vec![dbw; self.num_sats];
        self
    }

    /// Relabels satellites and terminals: new satellite `i` is old
    /// `sat_perm[i]`, new terminal `j` is old `ut_perm[j]`.
    pub fn permuted(&self, sat_perm: &[usize], ut_perm: &[usize]) -> Self {
        let mut links = Vec::with_capacity(self.links.len());
        let mut weights = Vec::with_capacity(self.links.len());
        for &os in sat_perm {
            for &ok in ut_perm {
                links.push(self.link(os, ok).clone());
                weights.push(self.weight(os, ok));
            }
        }
        Self {
            arr: self.arr,
            num_sats: self.num_sats,
            num_uts: self.num_uts,
            links,
            noise: ut_perm.iter().map(|&k| self.noise[k]).collect(),
            budgets_dbw: sat_perm.iter().map(|&s| self.budgets_dbw[s]).collect(),
            weights,
        }
    }

    /// Single-satellite view of satellite `s`, with all other satellites removed.
    pub fn single_satellite(&self, s: usize) -> Self {
        let range = s * self.num_uts..(s + 1) * self.num_uts;
        Self {
            arr: self.arr,
            num_sats: 1,
            num_uts: self.num_uts,
            links: self.links[range.clone()].to_vec(),
            noise: self.noise.clone(),
            budgets_dbw: vec![self.budgets_dbw[s]],
            weights: self.weights[range].to_vec(),
        }
    }
}

/// `a_n(x) = n^{-1/2} [1, e^{-j2π·δ·x}, …, e^{-j2π·δ·(n-1)x}]ᵀ` with spacing `δ`
/// in wavelengths.
pub fn ula_steering_spaced(n: usize, x: f64, spacing: f64) -> CVec {
    let norm = 1.0 / (n as f64).sqrt();
    CVec::from_iterator(n, (0..n).map(|j| C64::from_polar(norm, -TAU * spacing * j as f64 * x)))
}

/// Half-wavelength ULA response.
pub fn ula_steering(n: usize, x: f64) -> CVec {
    ula_steering_spaced(n, x, 0.5)
}

pub fn tx_steering(arr: &ArrayConfig, phi: f64, theta: f64) -> CVec {
    upa_steering(arr.m_x, arr.m_y, arr.spacing, phi, theta)
}

pub fn rx_steering(arr: &ArrayConfig, phi: f64, theta: f64) -> CVec {
    upa_steering(arr.n_x, arr.n_y, arr.spacing, phi, theta)
}

fn upa_steering(nx: usize, ny: usize, spacing: f64, phi: f64, theta: f64) -> CVec {
    let ax = ula_steering_spaced(nx, theta.sin() * phi.cos(), spacing);
    let ay = ula_steering_spaced(ny, theta.cos(), spacing);
    kron(&ax, &ay)
}

fn exp_correlation(n: usize, rho: f64) -> CMat {
    CMat::from_fn(n, n, |i, j| C64::from(rho.powi((i as i32 - j as i32).abs())))
}

/// Unit-trace NLoS covariance over the terminal UPA: separable exponential
/// correlation with a random diagonal phase twist.
pub fn nlos_covariance(arr: &ArrayConfig, rho: f64, phases: &[f64]) -> CMat {
    let n = arr.rx_elements();
    let tx = exp_correlation(arr.n_x, rho);
    let ty = exp_correlation(arr.n_y, rho);
    let t = CMat::from_fn(n, n, |i, j| {
        tx[(i / arr.n_y, j / arr.n_y)] * ty[(i % arr.n_y, j % arr.n_y)]
    });
    CMat::from_fn(n, n, |i, j| {
        t[(i, j)] * C64::from_polar(1.0, phases[i] - phases[j]) / n as f64
    })
}

fn position_words(p: &crate::linalg::Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

/// Builds the statistical CSI of a drop. The random draws of each link are
/// keyed on the satellite and terminal positions, so relabeling satellites or
/// terminals only relabels the links.
pub fn synthesize_stats(
    geom: &GeometrySample,
    cfg: &ConstellationConfig,
    arr: &ArrayConfig,
    stats: &StatsConfig,
    budget_dbw: f64,
    rng: &mut impl Rng,
) -> Result<ScenarioInstance> {
    arr.validate()?;
    let (num_sats, num_uts) = (geom.num_sats(), geom.num_uts());
    let base: u64 = rng.random();
    let kappa_db = Normal::new(stats.kappa_mean_db, stats.kappa_std_db)
        .map_err(|e| Error::InvalidConfig(format!("kappa distribution: {e}")))?;
    let aperture = if stats.include_array_gain { (arr.tx_elements() * arr.rx_elements()) as f64 } else { 1.0 };
    let n = arr.rx_elements();
    let mut links = Vec::with_capacity(num_sats * num_uts);
    for s in 0..num_sats {
        for k in 0..num_uts {
            let [a, b, cz] = position_words(&geom.sat_positions[s]);
            let [d, e, f] = position_words(&geom.ut_positions[k]);
            let mut link_rng = ChaCha8Rng::seed_from_u64(mix_all(base, &[a, b, cz, d, e, f]));
            let angles = AnglesDeg::from_radians(&geometry::link_angles(geom, s, k));
            let (beta_elem, _) = geometry::link_budget(cfg, geom, s, k);
            let kappa = geometry::db_to_linear(kappa_db.sample(&mut link_rng));
            let rho = link_rng.random_range(stats.corr_min..=stats.corr_max);
            let phases: Vec<f64> = (0..n).map(|_| link_rng.random_range(0.0..TAU)).collect();
            let sigma = nlos_covariance(arr, rho, &phases);
            links.push(LinkStat::new(arr, angles, beta_elem * aperture, kappa, sigma)?);
        }
    }
    let noise = geometry::noise_power(cfg);
    Ok(ScenarioInstance {
        arr: *arr,
        num_sats,
        num_uts,
        links,
        noise: vec![noise; num_uts],
        budgets_dbw: vec![budget_dbw; num_sats],
        weights: vec![1.0; num_sats * num_uts],
    })
}

/// One realization of the receive-side vector
/// `d = √(κβ/(κ+1))·d0 + √(β/(κ+1))·d̃`, `d̃ ~ CN(0, Σ)`.
pub fn sample_receive(link: &LinkStat, rng: &mut impl Rng) -> CVec {
    let mut d = link.mean_receive();
    if let Some(l) = &link.sigma_factor {
        let n = d.len();
        let z = CVec::from_iterator(
            n,
            (0..n).map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }),
        );
        d += (l * z).scale(link.nlos_amplitude());
    }
    d
}

/// Rician channel realization `H = d·gᴴ` (N × M).
pub fn sample_channel(link: &LinkStat, rng: &mut impl Rng) -> CMat {
    outer(&sample_receive(link, rng), &link.g)
}
