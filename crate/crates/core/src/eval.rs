//! Monte Carlo sweeps over power, satellite and terminal grids, overhead
//! accounting, and the scenario / results file formats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_stats, AnglesDeg, ArrayConfig, LinkStat, ScenarioInstance, StatsConfig};
use crate::equinet::{infer_centralized, infer_decentralized_all, EquiWeights};
use crate::exec::{mix_all, mix_seed, Execution};
use crate::geometry::{drop_scenario, ConstellationConfig, DropConfig, UtDistribution};
use crate::linalg::{CMat, C64};
use crate::recovery::recover_precoders;
use crate::wmmse::{mmse_precoder, mrt_precoder, sep_wmmse, sum_rate, wmmse_solve, PrecodingSolution, WmmseOptions};
use crate::{Error, Result};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;
pub const RESULTS_HEADER: [&str; 8] = ["scheme", "drop", "seed", "P_dbw", "S", "K", "sum_rate_bps_hz", "feasible"];
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "sep-mrt")]
    SepMrt,
    #[serde(rename = "sep-mmse")]
    SepMmse,
    #[serde(rename = "sep-opt-wm")]
    SepOptWm,
    #[serde(rename = "cen-opt-wm")]
    CenOptWm,
    #[serde(rename = "cen-tfc-wm")]
    CenTfcWm,
    #[serde(rename = "dec-tfc-wm")]
    DecTfcWm,
}

impl Scheme {
    pub const ALL: [Scheme; 6] =
        [Scheme::SepMrt, Scheme::SepMmse, Scheme::SepOptWm, Scheme::CenOptWm, Scheme::CenTfcWm, Scheme::DecTfcWm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SepMrt => "sep-mrt",
            Scheme::SepMmse => "sep-mmse",
            Scheme::SepOptWm => "sep-opt-wm",
            Scheme::CenOptWm => "cen-opt-wm",
            Scheme::CenTfcWm => "cen-tfc-wm",
            Scheme::DecTfcWm => "dec-tfc-wm",
        }
    }

    pub fn needs_weights(self) -> bool {
        matches!(self, Scheme::CenTfcWm | Scheme::DecTfcWm)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// Real scalars exchanged over inter-satellite links per precoder update.
///
/// Centralized: every non-central satellite uploads its position (3),
/// attitude (9 as a rotation matrix), power budget (1) and per terminal
/// `β`, `κ` and the Hermitian `Σ` as `N²` reals; the central satellite returns
/// `K` complex `M`-vectors to each. Decentralized: each satellite receives
/// position, attitude and budget from the `S−1` others. Separate schemes
/// exchange nothing.
pub fn overhead_counts(scheme: Scheme, s: usize, k: usize, m: usize, n: usize) -> u64 {
    let others = s.saturating_sub(1) as u64;
    let (k, m, n) = (k as u64, m as u64, n as u64);
    match scheme {
        Scheme::SepMrt | Scheme::SepMmse | Scheme::SepOptWm => 0,
        Scheme::CenOptWm | Scheme::CenTfcWm => others * (3 + 9 + 1 + k * (2 + n * n)) + others * k * 2 * m,
        Scheme::DecTfcWm => others * (3 + 9 + 1),
    }
}

/// Settings for generating one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_sats: usize,
    pub num_uts: usize,
    pub budget_dbw: f64,
    pub region_radius_m: f64,
    pub ut_distribution: UtDistribution,
    pub constellation: ConstellationConfig,
    pub array: ArrayConfig,
    pub stats: StatsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_sats: 3,
            num_uts: 12,
            budget_dbw: 5.0,
            region_radius_m: DropConfig::default().region_radius_m,
            ut_distribution: UtDistribution::UniformDisk,
            constellation: ConstellationConfig::default(),
            array: ArrayConfig::new(4, 4, 2, 2),
            stats: StatsConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.array.validate()?;
        self.drop_config(0).validate()?;
        if !self.budget_dbw.is_finite() {
            return Err(Error::InvalidConfig("budget_dbw must be finite".into()));
        }
        Ok(())
    }

    fn drop_config(&self, seed: u64) -> DropConfig {
        DropConfig {
            region_radius_m: self.region_radius_m,
            num_sats: self.num_sats,
            num_uts: self.num_uts,
            ut_distribution: self.ut_distribution,
            rng_seed: seed,
        }
    }
}

/// Geometry drop plus statistics synthesis, deterministic in `seed`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioInstance> {
    cfg.validate()?;
    let geom = drop_scenario(&cfg.constellation, &cfg.drop_config(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    synthesize_stats(&geom, &cfg.constellation, &cfg.array, &cfg.stats, cfg.budget_dbw, &mut rng)
}

/// Everything a scheme may need besides the scenario.
#[derive(Debug, Clone, Default)]
pub struct SchemeContext {
    pub wmmse: WmmseOptions,
    pub cen_weights: Option<EquiWeights>,
    pub dec_weights: Option<EquiWeights>,
}

impl SchemeContext {
    fn check(&self, scheme: Scheme) -> Result<()> {
        let missing = match scheme {
            Scheme::CenTfcWm => self.cen_weights.is_none(),
            Scheme::DecTfcWm => self.dec_weights.is_none(),
            _ => false,
        };
        if missing {
            return Err(Error::InvalidConfig(format!("scheme {scheme} needs a weight container")));
        }
        Ok(())
    }
}

pub fn run_scheme(scn: &ScenarioInstance, scheme: Scheme, ctx: &SchemeContext) -> Result<PrecodingSolution> {
    ctx.check(scheme)?;
    match scheme {
        Scheme::SepMrt => Ok(mrt_precoder(scn)),
        Scheme::SepMmse => mmse_precoder(scn),
        Scheme::SepOptWm => sep_wmmse(scn, &ctx.wmmse),
        Scheme::CenOptWm => wmmse_solve(scn, &ctx.wmmse).map(|st| st.sol),
        Scheme::CenTfcWm => {
            let w = ctx.cen_weights.as_ref().expect("checked above");
            recover_precoders(scn, &infer_centralized(scn, w)?)
        }
        Scheme::DecTfcWm => {
            let w = ctx.dec_weights.as_ref().expect("checked above");
            recover_precoders(scn, &infer_decentralized_all(scn, w, Execution::Sequential)?)
        }
    }
}

fn default_power_grid() -> Vec<f64> {
    vec![-10.0, -5.0, 0.0, 5.0, 10.0]
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::SepMrt, Scheme::SepMmse, Scheme::SepOptWm, Scheme::CenOptWm]
}

/// Grid evaluation settings. `scenario.num_sats`, `scenario.num_uts` and
/// `scenario.budget_dbw` are overridden by the grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub scenario: ScenarioConfig,
    pub power_grid_dbw: Vec<f64>,
    pub sats_grid: Vec<usize>,
    pub uts_grid: Vec<usize>,
    pub n_drops: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub wmmse_tol: f64,
    pub wmmse_max_outer: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let wm = WmmseOptions::default();
        Self {
            scenario: ScenarioConfig::default(),
            power_grid_dbw: default_power_grid(),
            sats_grid: vec![3],
            uts_grid: vec![12],
            n_drops: 100,
            n_mc: 200,
            seed: 0,
            schemes: default_schemes(),
            wmmse_tol: wm.tol,
            wmmse_max_outer: wm.max_outer,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.power_grid_dbw.is_empty() || self.sats_grid.is_empty() || self.uts_grid.is_empty() {
            return bad("power, satellite and terminal grids must be non-empty");
        }
        if self.power_grid_dbw.iter().any(|p| !p.is_finite()) {
            return bad("power grid entries must be finite");
        }
        if self.n_drops == 0 || self.n_mc == 0 {
            return bad("n_drops and n_mc must be >= 1");
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected");
        }
        if !(self.wmmse_tol > 0.0) || self.wmmse_max_outer == 0 {
            return bad("wmmse_tol must be positive and wmmse_max_outer >= 1");
        }
        self.scenario.validate()
    }

    pub fn wmmse_options(&self) -> WmmseOptions {
        WmmseOptions { tol: self.wmmse_tol, max_outer: self.wmmse_max_outer, ..Default::default() }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seed of drop `d` at grid point `(S, K)`. It does not depend on the power
/// level or the scheme, so all of them see the same geometry, statistics and
/// channel samples.
pub fn drop_seed(base: u64, s: usize, k: usize, drop: usize) -> u64 {
    mix_all(base, &[s as u64, k as u64, drop as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropRecord {
    pub drop: usize,
    pub seed: u64,
    /// `None` when the drop failed.
    pub sum_rate: Option<f64>,
    pub feasible: bool,
    pub error: Option<String>,
}

/// Results of one scheme at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub num_sats: usize,
    pub num_uts: usize,
    pub power_dbw: f64,
    pub records: Vec<DropRecord>,
    pub overhead: u64,
}

impl EvalReport {
    pub fn rates(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.sum_rate).collect()
    }

    pub fn mean(&self) -> f64 {
        let r = self.rates();
        r.iter().sum::<f64>() / r.len().max(1) as f64
    }

    /// Half-width of the normal-approximation 95% confidence interval.
    pub fn ci95(&self) -> f64 {
        half_width(&self.rates())
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.sum_rate.is_some() && !r.feasible).count()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.sum_rate.is_none()).count()
    }
}

fn half_width(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Z95 * (var / n as f64).sqrt()
}

/// Mean of per-drop differences `a − b` with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedGap {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl PairedGap {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }
}

/// Paired comparison over the drops both reports evaluated successfully.
pub fn paired_gap(a: &EvalReport, b: &EvalReport) -> PairedGap {
    let diffs: Vec<f64> = a
        .records
        .iter()
        .filter_map(|ra| {
            let rb = b.records.iter().find(|rb| rb.drop == ra.drop && rb.seed == ra.seed)?;
            Some(ra.sum_rate? - rb.sum_rate?)
        })
        .collect();
    let n = diffs.len();
    PairedGap { mean: diffs.iter().sum::<f64>() / n.max(1) as f64, half_width: half_width(&diffs), n }
}

/// Evaluates one drop under every scheme and power level. Drop generation
/// failures are recorded against every scheme.
fn evaluate_drop(
    cfg: &SweepConfig,
    ctx: &SchemeContext,
    s: usize,
    k: usize,
    drop: usize,
) -> Vec<(usize, usize, DropRecord)> {
    let seed = drop_seed(cfg.seed, s, k, drop);
    let scn_cfg = ScenarioConfig { num_sats: s, num_uts: k, ..cfg.scenario.clone() };
    let base = generate_scenario(&scn_cfg, seed);
    let mut out = Vec::with_capacity(cfg.power_grid_dbw.len() * cfg.schemes.len());
    for (pi, &p) in cfg.power_grid_dbw.iter().enumerate() {
        for (si, &scheme) in cfg.schemes.iter().enumerate() {
            let result = base.as_ref().map_err(|e| e.to_string()).and_then(|scn| {
                let scn = scn.clone().with_budget_dbw(p);
                run_scheme(&scn, scheme, ctx)
                    .map(|sol| (sum_rate(&scn, &sol, cfg.n_mc, seed, Execution::Sequential).mean, sol.is_feasible(&scn)))
                    .map_err(|e| e.to_string())
            });
            let rec = match result {
                Ok((rate, feasible)) => DropRecord { drop, seed, sum_rate: Some(rate), feasible, error: None },
                Err(e) => DropRecord { drop, seed, sum_rate: None, feasible: false, error: Some(e) },
            };
            out.push((pi, si, rec));
        }
    }
    out
}

/// Runs every scheme over the `(S, K, P)` grid. Reports are ordered by `S`,
/// `K`, power and then scheme, following the configured order. Drops run
/// under `exec`; results do not depend on it.
pub fn run_sweep(cfg: &SweepConfig, ctx: &SchemeContext, exec: Execution) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    for &scheme in &cfg.schemes {
        ctx.check(scheme)?;
    }
    let mut reports = Vec::new();
    for &s in &cfg.sats_grid {
        for &k in &cfg.uts_grid {
            let first = reports.len();
            for &p in &cfg.power_grid_dbw {
                for &scheme in &cfg.schemes {
                    let (m, n) = (cfg.scenario.array.tx_elements(), cfg.scenario.array.rx_elements());
                    reports.push(EvalReport {
                        scheme,
                        num_sats: s,
                        num_uts: k,
                        power_dbw: p,
                        records: Vec::with_capacity(cfg.n_drops),
                        overhead: overhead_counts(scheme, s, k, m, n),
                    });
                }
            }
            let per_drop = exec.map(cfg.n_drops, |d| evaluate_drop(cfg, ctx, s, k, d));
            for recs in per_drop {
                for (pi, si, rec) in recs {
                    reports[first + pi * cfg.schemes.len() + si].records.push(rec);
                }
            }
        }
    }
    Ok(reports)
}

/// One row per drop per report, header [`RESULTS_HEADER`]. Failed drops
/// leave `sum_rate_bps_hz` empty.
pub fn write_results<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::format("results", e.to_string());
    w.write_record(RESULTS_HEADER).map_err(io)?;
    for r in reports {
        for d in &r.records {
            w.write_record([
                r.scheme.name().to_string(),
                d.drop.to_string(),
                d.seed.to_string(),
                r.power_dbw.to_string(),
                r.num_sats.to_string(),
                r.num_uts.to_string(),
                d.sum_rate.map_or(String::new(), |v| v.to_string()),
                d.feasible.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io("results", e))
}

pub fn export_results(reports: &[EvalReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_results(reports, file).map_err(|e| relabel(e, path))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        Error::Io { source, .. } => Error::io(path.display().to_string(), source),
        other => other,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinkRecord {
    s: usize,
    k: usize,
    phi_sat_deg: f64,
    theta_sat_deg: f64,
    phi_ut_deg: f64,
    theta_ut_deg: f64,
    beta: f64,
    kappa: f64,
    /// `vec_row(Re Σ)` followed by `vec_row(Im Σ)`.
    sigma_nlos: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    format_version: u32,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    noise_w: Vec<f64>,
    budgets_dbw: Vec<f64>,
    weights: Vec<f64>,
    array: ArrayConfig,
    links: Vec<LinkRecord>,
}

/// Scenario file text (TOML). Floats are written in shortest round-trip
/// form, so an import reproduces the instance bit for bit.
pub fn scenario_to_string(scn: &ScenarioInstance) -> String {
    let n = scn.n();
    let links = (0..scn.num_sats)
        .flat_map(|s| (0..scn.num_uts).map(move |k| (s, k)))
        .map(|(s, k)| {
            let l = scn.link(s, k);
            let mut sigma = Vec::with_capacity(2 * n * n);
            for part in [|z: &C64| z.re, |z: &C64| z.im] {
                for i in 0..n {
                    for j in 0..n {
                        sigma.push(part(&l.sigma_nlos[(i, j)]));
                    }
                }
            }
            LinkRecord {
                s,
                k,
                phi_sat_deg: l.angles.phi_sat,
                theta_sat_deg: l.angles.theta_sat,
                phi_ut_deg: l.angles.phi_ut,
                theta_ut_deg: l.angles.theta_ut,
                beta: l.beta,
                kappa: l.kappa,
                sigma_nlos: sigma,
            }
        })
        .collect();
    let file = ScenarioFile {
        format_version: SCENARIO_FORMAT_VERSION,
        s: scn.num_sats,
        k: scn.num_uts,
        m: scn.m(),
        n,
        noise_w: scn.noise.clone(),
        budgets_dbw: scn.budgets_dbw.clone(),
        weights: scn.weights.clone(),
        array: scn.arr,
        links,
    };
    toml::to_string(&file).expect("scenario records serialize")
}

pub fn scenario_from_str(text: &str, origin: &str) -> Result<ScenarioInstance> {
    let fail = |m: String| Error::format(origin, m);
    let f: ScenarioFile = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
    if f.format_version != SCENARIO_FORMAT_VERSION {
        return Err(fail(format!("unsupported format_version {}", f.format_version)));
    }
    f.array.validate().map_err(|e| fail(e.to_string()))?;
    if f.m != f.array.tx_elements() || f.n != f.array.rx_elements() {
        return Err(fail(format!("M={} N={} disagree with the array section", f.m, f.n)));
    }
    if f.links.len() != f.s * f.k {
        return Err(fail(format!("expected {} links, found {}", f.s * f.k, f.links.len())));
    }
    let n = f.n;
    let mut links = Vec::with_capacity(f.links.len());
    for (i, r) in f.links.iter().enumerate() {
        if (r.s, r.k) != (i / f.k, i % f.k) {
            return Err(fail(format!("links[{i}]: expected s={}, k={}, found s={}, k={}", i / f.k, i % f.k, r.s, r.k)));
        }
        if r.sigma_nlos.len() != 2 * n * n {
            return Err(fail(format!("links[{i}].sigma_nlos: expected {} values, found {}", 2 * n * n, r.sigma_nlos.len())));
        }
        let sigma = CMat::from_fn(n, n, |a, b| C64::new(r.sigma_nlos[a * n + b], r.sigma_nlos[n * n + a * n + b]));
        let angles = AnglesDeg {
            phi_sat: r.phi_sat_deg,
            theta_sat: r.theta_sat_deg,
            phi_ut: r.phi_ut_deg,
            theta_ut: r.theta_ut_deg,
        };
        links.push(LinkStat::new(&f.array, angles, r.beta, r.kappa, sigma).map_err(|e| fail(format!("links[{i}]: {e}")))?);
    }
    let scn = ScenarioInstance {
        arr: f.array,
        num_sats: f.s,
        num_uts: f.k,
        links,
        noise: f.noise_w,
        budgets_dbw: f.budgets_dbw,
        weights: f.weights,
    };
    scn.validate().map_err(|e| fail(e.to_string()))?;
    Ok(scn)
}

pub fn export_scenario(scn: &ScenarioInstance, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_string(scn)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn import_scenario(path: &Path) -> Result<ScenarioInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    scenario_from_str(&text, &path.display().to_string())
}
