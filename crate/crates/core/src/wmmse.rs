//! Centralized WMMSE under per-satellite power budgets, the rate evaluators
//! and the separate-satellite baselines.
//!
//! Links are indexed row-major over `(s, k)`: satellite `s` serves terminal
//! `k` with precoder `p_{s,k}` and the terminal combines that stream with
//! `b_{s,k}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{sample_receive, ScenarioInstance};
use crate::exec::{mix_all, Execution};
use crate::linalg::{identity, inner, quad_form, CMat, CVec, HermitianFactor, C64};
use crate::recovery::{closed_form, precoder_scale, PredictedTuple};
use crate::{Error, Result};

/// Relative slack on the per-satellite power budget.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingSolution {
    pub num_sats: usize,
    pub num_uts: usize,
    /// Row-major `S × K` precoders of length `M`.
    pub p: Vec<CVec>,
    /// Row-major `S × K` receive vectors of length `N`.
    pub b: Vec<CVec>,
}

impl PrecodingSolution {
    pub fn precoder(&self, s: usize, k: usize) -> &CVec {
        &self.p[s * self.num_uts + k]
    }

    pub fn receiver(&self, s: usize, k: usize) -> &CVec {
        &self.b[s * self.num_uts + k]
    }

    pub fn sat_power(&self, s: usize) -> f64 {
        (0..self.num_uts).map(|k| self.precoder(s, k).norm_squared()).sum()
    }

    /// Largest `power / budget − 1` over satellites.
    pub fn max_power_excess(&self, scn: &ScenarioInstance) -> f64 {
        (0..self.num_sats).map(|s| self.sat_power(s) / scn.budget_w(s) - 1.0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, scn: &ScenarioInstance) -> bool {
        self.max_power_excess(scn) <= FEASIBILITY_SLACK
    }

    pub fn permuted(&self, sat_perm: &[usize], ut_perm: &[usize]) -> Self {
        let k = self.num_uts;
        let order: Vec<usize> = sat_perm.iter().flat_map(|&s| ut_perm.iter().map(move |&m| s * k + m)).collect();
        Self {
            num_sats: self.num_sats,
            num_uts: self.num_uts,
            p: order.iter().map(|&i| self.p[i].clone()).collect(),
            b: order.iter().map(|&i| self.b[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalMoments {
    pub xi: C64,
    pub zeta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOptions {
    /// Stop when `|ε_i − ε_{i−1}| ≤ tol · max(|ε_{i−1}|, 1)`.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative width at which the λ bisection stops.
    pub lambda_tol: f64,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self { tol: 1e-5, max_outer: 100, lambda_tol: 1e-12 }
    }
}

const LAMBDA_MAX: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct WmmseState {
    pub sol: PrecodingSolution,
    pub u: Vec<C64>,
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Inputs of the last precoder update. Recovery from this tuple
    /// reproduces `sol.p`; its `b` is the receive set before the final
    /// receiver update.
    pub tuple: PredictedTuple,
}

impl WmmseState {
    /// MRT at full budget, `b = d0`, `u = 0`, `w = 1`.
    pub fn initial(scn: &ScenarioInstance) -> Self {
        let sol = mrt_precoder(scn);
        let links = scn.links.len();
        let tuple = PredictedTuple {
            num_sats: scn.num_sats,
            num_uts: scn.num_uts,
            w: vec![1.0; links],
            u: vec![C64::from(0.0); links],
            lambda: vec![0.0; scn.num_sats],
            rho: vec![C64::from(0.0); links],
            b: sol.b.clone(),
        };
        Self {
            sol,
            u: vec![C64::from(0.0); links],
            w: vec![1.0; links],
            lambda: vec![0.0; scn.num_sats],
            objective_trace: Vec::new(),
            converged: false,
            tuple,
        }
    }

    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }

    pub fn objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// `|g_{t,k}ᴴ p_{t,m}|²` at index `(t·K + k)·K + m`.
fn cross_gains(scn: &ScenarioInstance, p: &[CVec]) -> Vec<f64> {
    let (ns, nk) = (scn.num_sats, scn.num_uts);
    let mut out = Vec::with_capacity(ns * nk * nk);
    for t in 0..ns {
        for k in 0..nk {
            let g = &scn.link(t, k).g;
            for m in 0..nk {
                out.push(inner(g, &p[t * nk + m]).norm_sqr());
            }
        }
    }
    out
}

/// `Q_k = Σ_t Σ_m |g_{t,k}ᴴ p_{t,m}|² R^ut_{t,k} + σ_k² I`, the total
/// received covariance at terminal `k`, shared by all of its streams.
fn total_cov(scn: &ScenarioInstance, gains: &[f64], k: usize) -> CMat {
    let nk = scn.num_uts;
    let mut q = identity(scn.n()) * C64::from(scn.noise[k]);
    for t in 0..scn.num_sats {
        let power: f64 = gains[(t * nk + k) * nk..(t * nk + k + 1) * nk].iter().sum();
        q += &scn.link(t, k).r_ut * C64::from(power);
    }
    q
}

/// `R_{s,k} = Σ_{t≠s} Σ_m |g_{t,k}ᴴ p_{t,m}|² R^ut_{t,k} + σ_k² I`.
pub fn interference_cov(scn: &ScenarioInstance, sol: &PrecodingSolution, s: usize, k: usize) -> CMat {
    let mut r = identity(scn.n()) * C64::from(scn.noise[k]);
    for t in (0..scn.num_sats).filter(|&t| t != s) {
        let link = scn.link(t, k);
        let power: f64 = (0..scn.num_uts).map(|m| inner(&link.g, sol.precoder(t, m)).norm_sqr()).sum();
        r += &link.r_ut * C64::from(power);
    }
    r
}

pub fn signal_moments(scn: &ScenarioInstance, sol: &PrecodingSolution, s: usize, k: usize) -> SignalMoments {
    let link = scn.link(s, k);
    let b = sol.receiver(s, k);
    let gp = inner(&link.g, sol.precoder(s, k));
    let xi = inner(b, &link.d0) * gp * link.los_amplitude();
    let br = quad_form(&link.r_ut, b);
    let zeta = gp.norm_sqr() * br;
    let intra: f64 = (0..scn.num_uts).filter(|&m| m != k).map(|m| inner(&link.g, sol.precoder(s, m)).norm_sqr()).sum();
    let eta = intra * br + quad_form(&interference_cov(scn, sol, s, k), b);
    SignalMoments { xi, zeta, eta }
}

fn moments_from_cov(scn: &ScenarioInstance, sol: &PrecodingSolution, gains: &[f64], q: &CMat, s: usize, k: usize) -> SignalMoments {
    let link = scn.link(s, k);
    let b = sol.receiver(s, k);
    let nk = scn.num_uts;
    let gp = inner(&link.g, sol.precoder(s, k));
    let xi = inner(b, &link.d0) * gp * link.los_amplitude();
    let zeta = gains[(s * nk + k) * nk + k] * quad_form(&link.r_ut, b);
    let eta = (quad_form(q, b) - zeta).max(0.0);
    SignalMoments { xi, zeta, eta }
}

/// `(e, w·e − a·log w)`.
pub fn mse(m: &SignalMoments, u: C64, w: f64, a: f64) -> (f64, f64) {
    let e = u.norm_sqr() * (m.zeta + m.eta) - 2.0 * (u * m.xi).re + 1.0;
    (e, w * e - a * w.ln())
}

pub fn update_u(m: &SignalMoments, s: usize, k: usize) -> Result<C64> {
    let total = m.zeta + m.eta;
    if !(total > 0.0) {
        return Err(Error::DegenerateLink { s, k, what: "zero received power (ζ + η ≤ 0)" });
    }
    Ok(m.xi.conj() / total)
}

pub fn update_w(e: f64, a: f64, s: usize, k: usize) -> Result<f64> {
    if !(e > 0.0) {
        return Err(Error::DegenerateLink { s, k, what: "non-positive MSE" });
    }
    Ok(a / e)
}

/// `b* = √(κβ/(κ+1))·(gᴴp / u*)·Q_k⁻¹ d0`. Leaves `b` unchanged when `u = 0`.
pub fn update_b(scn: &ScenarioInstance, state: &WmmseState, s: usize, k: usize) -> Result<CVec> {
    let gains = cross_gains(scn, &state.sol.p);
    let q = total_cov(scn, &gains, k);
    let factor = HermitianFactor::new(&q, &format!("receiver update (s={s}, k={k})"))?;
    Ok(receiver_from_factor(scn, state, &factor, s, k))
}

fn receiver_from_factor(scn: &ScenarioInstance, state: &WmmseState, factor: &HermitianFactor, s: usize, k: usize) -> CVec {
    let i = scn.idx(s, k);
    let u = state.u[i];
    if u.norm_sqr() == 0.0 {
        return state.sol.b[i].clone();
    }
    let link = scn.link(s, k);
    let scale = inner(&link.g, &state.sol.p[i]) * link.los_amplitude() / u.conj();
    factor.solve(&link.d0) * scale
}

/// `ϱ_{s,m} = Σ_t w_{t,m} |u_{t,m}|² b_{t,m}ᴴ R^ut_{s,m} b_{t,m}` for all
/// `(s, m)`, row-major.
pub fn low_dim_rho(scn: &ScenarioInstance, w: &[f64], u: &[C64], b: &[CVec]) -> Vec<f64> {
    let (ns, nk) = (scn.num_sats, scn.num_uts);
    let mut rho = vec![0.0; ns * nk];
    for s in 0..ns {
        for m in 0..nk {
            rho[s * nk + m] = (0..ns)
                .map(|t| {
                    let i = t * nk + m;
                    w[i] * u[i].norm_sqr() * quad_form(&scn.link(s, m).r_ut, &b[i])
                })
                .sum();
        }
    }
    rho
}

/// Spectral form of one satellite's precoder problem:
/// `p_k(λ) = Σ_i v_i c_{ik}/(μ_i + λ) + r_k/λ`, where `(μ_i, v_i)` are the
/// non-zero eigenpairs of `A_s` and `r_k` is the part of `α_k g_k` outside
/// the range of `A_s`.
struct SatSystem {
    mu: Vec<f64>,
    vecs: Vec<CVec>,
    coef: Vec<Vec<C64>>,
    coef2: Vec<Vec<f64>>,
    residual: Vec<CVec>,
    residual2: f64,
}

impl SatSystem {
    fn new(g: &[&CVec], rho: &[f64], alpha: &[C64]) -> Self {
        let k = g.len();
        let sq: Vec<f64> = rho.iter().map(|r| r.max(0.0).sqrt()).collect();
        let gram = CMat::from_fn(k, k, |i, j| inner(g[i], g[j]) * (sq[i] * sq[j]));
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut mu = Vec::new();
        let mut vecs = Vec::new();
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > 1e-12 * top && ev > 0.0 {
                let v = eig.eigenvectors.column(i);
                let mut x = CVec::zeros(g[0].len());
                for j in 0..k {
                    x.axpy(v[j] * sq[j], g[j], C64::from(1.0));
                }
                mu.push(ev);
                vecs.push(x.unscale(ev.sqrt()));
            }
        }
        let mut coef = Vec::with_capacity(k);
        let mut residual = Vec::with_capacity(k);
        for j in 0..k {
            let q = g[j] * alpha[j];
            let c: Vec<C64> = vecs.iter().map(|v| inner(v, &q)).collect();
            let mut r = q.clone();
            for (v, ci) in vecs.iter().zip(&c) {
                r.axpy(-*ci, v, C64::from(1.0));
            }
            if r.norm() <= 1e-9 * q.norm() {
                r.fill(C64::from(0.0));
            }
            coef.push(c);
            residual.push(r);
        }
        let coef2 = coef.iter().map(|c| c.iter().map(|z| z.norm_sqr()).collect()).collect();
        let residual2 = residual.iter().map(|r| r.norm_squared()).sum();
        Self { mu, vecs, coef, coef2, residual, residual2 }
    }

    fn power(&self, lambda: f64) -> f64 {
        let mut total = 0.0;
        for c2 in &self.coef2 {
            for (i, &x) in c2.iter().enumerate() {
                total += x / (self.mu[i] + lambda).powi(2);
            }
        }
        if self.residual2 > 0.0 {
            total += self.residual2 / (lambda * lambda);
        }
        total
    }

    fn precoders(&self, lambda: f64, m: usize) -> Vec<CVec> {
        self.coef
            .iter()
            .zip(&self.residual)
            .map(|(c, r)| {
                let mut p = CVec::zeros(m);
                for (i, v) in self.vecs.iter().enumerate() {
                    p.axpy(c[i] / (self.mu[i] + lambda), v, C64::from(1.0));
                }
                if lambda > 0.0 {
                    p.axpy(C64::from(1.0 / lambda), r, C64::from(1.0));
                }
                p
            })
            .collect()
    }
}

struct SatInputs<'a> {
    g: Vec<&'a CVec>,
    rho: Vec<f64>,
    alpha: Vec<C64>,
}

fn sat_inputs<'a>(scn: &'a ScenarioInstance, w: &[f64], u: &[C64], b: &[CVec], rho_all: &[f64], s: usize) -> SatInputs<'a> {
    let nk = scn.num_uts;
    SatInputs {
        g: (0..nk).map(|k| &scn.link(s, k).g).collect(),
        rho: rho_all[s * nk..(s + 1) * nk].to_vec(),
        alpha: (0..nk).map(|k| precoder_scale(scn, w[s * nk + k], u[s * nk + k], &b[s * nk + k], s, k)).collect(),
    }
}

fn bisect_lambda(sys: &SatSystem, budget: f64, s: usize, rel_tol: f64) -> Result<f64> {
    if sys.residual2 == 0.0 && sys.power(0.0) <= budget {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = sys.mu.iter().cloned().fold(0.0, f64::max).max(1e-12);
    loop {
        let p = sys.power(hi);
        if p <= budget {
            break;
        }
        if hi > LAMBDA_MAX {
            return Err(Error::BracketFailure { s, power: p, budget, lambda: LAMBDA_MAX });
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > rel_tol * hi {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if !(mid > lo && mid < hi) {
            break;
        }
        if sys.power(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Smallest `λ_s ≥ 0` whose precoders meet satellite `s`'s budget, with `u`,
/// `w` and `b` taken from `state`.
pub fn solve_lambda(scn: &ScenarioInstance, state: &WmmseState, s: usize, opts: &WmmseOptions) -> Result<f64> {
    let rho = low_dim_rho(scn, &state.w, &state.u, &state.sol.b);
    let inp = sat_inputs(scn, &state.w, &state.u, &state.sol.b, &rho, s);
    let sys = SatSystem::new(&inp.g, &inp.rho, &inp.alpha);
    bisect_lambda(&sys, scn.budget_w(s), s, opts.lambda_tol)
}

/// Precoders of satellite `s` for a given `λ_s`, with `u`, `w` and `b` taken
/// from `state`.
pub fn update_p(scn: &ScenarioInstance, state: &WmmseState, s: usize, lambda: f64) -> Result<Vec<CVec>> {
    let rho = low_dim_rho(scn, &state.w, &state.u, &state.sol.b);
    let inp = sat_inputs(scn, &state.w, &state.u, &state.sol.b, &rho, s);
    precoders_for(scn, &inp, lambda, s)
}

fn precoders_for(scn: &ScenarioInstance, inp: &SatInputs<'_>, lambda: f64, s: usize) -> Result<Vec<CVec>> {
    let rho: Vec<C64> = inp.rho.iter().map(|&r| C64::from(r)).collect();
    match closed_form(&inp.g, &rho, lambda, &inp.alpha, &format!("precoder update, satellite {s}")) {
        Ok(p) if p.iter().all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite())) => Ok(p),
        _ => {
            let sys = SatSystem::new(&inp.g, &inp.rho, &inp.alpha);
            Ok(sys.precoders(lambda, scn.m()))
        }
    }
}

fn objective(scn: &ScenarioInstance, state: &WmmseState) -> f64 {
    let gains = cross_gains(scn, &state.sol.p);
    let q: Vec<CMat> = (0..scn.num_uts).map(|k| total_cov(scn, &gains, k)).collect();
    let mut total = 0.0;
    for s in 0..scn.num_sats {
        for k in 0..scn.num_uts {
            let i = scn.idx(s, k);
            let m = moments_from_cov(scn, &state.sol, &gains, &q[k], s, k);
            total += mse(&m, state.u[i], state.w[i], scn.weights[i]).1;
        }
    }
    total
}

fn sweep(scn: &ScenarioInstance, state: &mut WmmseState, opts: &WmmseOptions) -> Result<()> {
    let (ns, nk) = (scn.num_sats, scn.num_uts);
    // u and w from the current (P, B).
    let gains = cross_gains(scn, &state.sol.p);
    let q: Vec<CMat> = (0..nk).map(|k| total_cov(scn, &gains, k)).collect();
    for s in 0..ns {
        for k in 0..nk {
            let i = s * nk + k;
            let m = moments_from_cov(scn, &state.sol, &gains, &q[k], s, k);
            let u = update_u(&m, s, k)?;
            let (e, _) = mse(&m, u, 1.0, 1.0);
            state.u[i] = u;
            state.w[i] = update_w(e, scn.weights[i], s, k)?;
        }
    }
    // λ and P, one satellite at a time.
    let rho = low_dim_rho(scn, &state.w, &state.u, &state.sol.b);
    let mut p_new = Vec::with_capacity(ns * nk);
    for s in 0..ns {
        let inp = sat_inputs(scn, &state.w, &state.u, &state.sol.b, &rho, s);
        let sys = SatSystem::new(&inp.g, &inp.rho, &inp.alpha);
        let lambda = bisect_lambda(&sys, scn.budget_w(s), s, opts.lambda_tol)?;
        state.lambda[s] = lambda;
        p_new.extend(precoders_for(scn, &inp, lambda, s)?);
    }
    state.tuple = PredictedTuple {
        num_sats: ns,
        num_uts: nk,
        w: state.w.clone(),
        u: state.u.clone(),
        lambda: state.lambda.clone(),
        rho: rho.iter().map(|&r| C64::from(r)).collect(),
        b: state.sol.b.clone(),
    };
    state.sol.p = p_new;
    // B against the new P.
    let gains = cross_gains(scn, &state.sol.p);
    let mut b_new = state.sol.b.clone();
    for k in 0..nk {
        let q = total_cov(scn, &gains, k);
        let factor = HermitianFactor::new(&q, &format!("receiver update, terminal {k}"))?;
        for s in 0..ns {
            b_new[s * nk + k] = receiver_from_factor(scn, state, &factor, s, k);
        }
    }
    state.sol.b = b_new;
    Ok(())
}

/// Block coordinate descent over `(u, w, P, B)` from the MRT start.
pub fn wmmse_solve(scn: &ScenarioInstance, opts: &WmmseOptions) -> Result<WmmseState> {
    scn.validate()?;
    wmmse_from(scn, WmmseState::initial(scn), opts)
}

/// Block coordinate descent from a caller-provided iterate.
pub fn wmmse_from(scn: &ScenarioInstance, mut state: WmmseState, opts: &WmmseOptions) -> Result<WmmseState> {
    for it in 0..opts.max_outer {
        sweep(scn, &mut state, opts).map_err(|e| Error::Solver { iteration: it, source: Box::new(e) })?;
        let eps = objective(scn, &state);
        if !eps.is_finite() {
            return Err(Error::Solver {
                iteration: it,
                source: Box::new(Error::DegenerateLink { s: 0, k: 0, what: "non-finite objective" }),
            });
        }
        let prev = state.objective();
        state.objective_trace.push(eps);
        if let Some(prev) = prev {
            if (eps - prev).abs() <= opts.tol * prev.abs().max(1.0) {
                state.converged = true;
                break;
            }
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo ergodic rate of link `(s, k)` in bit/s/Hz.
pub fn ergodic_rate(
    scn: &ScenarioInstance,
    sol: &PrecodingSolution,
    s: usize,
    k: usize,
    n_mc: usize,
    rng: &mut impl Rng,
) -> RateEstimate {
    let link = scn.link(s, k);
    let b = sol.receiver(s, k);
    let signal = inner(&link.g, sol.precoder(s, k)).norm_sqr();
    if signal == 0.0 || n_mc == 0 {
        return RateEstimate { mean: 0.0, std_err: 0.0 };
    }
    let intra: f64 = (0..scn.num_uts).filter(|&m| m != k).map(|m| inner(&link.g, sol.precoder(s, m)).norm_sqr()).sum();
    let floor = quad_form(&interference_cov(scn, sol, s, k), b);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_mc {
        let x = inner(b, &sample_receive(link, rng)).norm_sqr();
        let r = (1.0 + signal * x / (intra * x + floor)).log2();
        sum += r;
        sum2 += r * r;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = if n_mc > 1 { ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    RateEstimate { mean, std_err: (var / n).sqrt() }
}

/// Weighted sum of the ergodic rates. Link `(s, k)` draws from its own stream
/// seeded by `(seed, s, k)`, so the result does not depend on `exec`.
pub fn sum_rate(scn: &ScenarioInstance, sol: &PrecodingSolution, n_mc: usize, seed: u64, exec: Execution) -> RateEstimate {
    let nk = scn.num_uts;
    let per_link = exec.map(scn.links.len(), |i| {
        let (s, k) = (i / nk, i % nk);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_all(seed, &[s as u64, k as u64]));
        ergodic_rate(scn, sol, s, k, n_mc, &mut rng)
    });
    let mut mean = 0.0;
    let mut var = 0.0;
    for (i, r) in per_link.iter().enumerate() {
        mean += scn.weights[i] * r.mean;
        var += (scn.weights[i] * r.std_err).powi(2);
    }
    RateEstimate { mean, std_err: var.sqrt() }
}

/// `p_{s,k} = √(P_s/K)·g_{s,k}`, `b = d0`.
pub fn mrt_precoder(scn: &ScenarioInstance) -> PrecodingSolution {
    let nk = scn.num_uts;
    let mut p = Vec::with_capacity(scn.links.len());
    for s in 0..scn.num_sats {
        let amp = (scn.budget_w(s) / nk as f64).sqrt();
        for k in 0..nk {
            let g = &scn.link(s, k).g;
            p.push(g.unscale(g.norm()) * C64::from(amp));
        }
    }
    PrecodingSolution { num_sats: scn.num_sats, num_uts: nk, p, b: scn.links.iter().map(|l| l.d0.clone()).collect() }
}

/// Per-satellite regularized channel inversion over the effective channels
/// `h_k = √(d0ᴴR^ut d0)·g_k` with loading `K·σ̄²/P_s`, scaled to full
/// budget, `b = d0`.
pub fn mmse_precoder(scn: &ScenarioInstance) -> Result<PrecodingSolution> {
    let nk = scn.num_uts;
    let noise = scn.noise.iter().sum::<f64>() / nk as f64;
    let mut p = Vec::with_capacity(scn.links.len());
    for s in 0..scn.num_sats {
        let budget = scn.budget_w(s);
        let h: Vec<CVec> = (0..nk)
            .map(|k| {
                let l = scn.link(s, k);
                l.g.scale(quad_form(&l.r_ut, &l.d0).sqrt())
            })
            .collect();
        let mut gram = CMat::from_fn(nk, nk, |i, j| inner(&h[i], &h[j]));
        for i in 0..nk {
            gram[(i, i)] += C64::from(nk as f64 * noise / budget);
        }
        let x = crate::linalg::lu_solve(&gram, &identity(nk), &format!("MMSE precoder, satellite {s}"))?;
        let mut ps: Vec<CVec> = (0..nk)
            .map(|col| {
                let mut v = CVec::zeros(scn.m());
                for (j, hj) in h.iter().enumerate() {
                    v.axpy(x[(j, col)], hj, C64::from(1.0));
                }
                v
            })
            .collect();
        let power: f64 = ps.iter().map(|v| v.norm_squared()).sum();
        if power > 0.0 {
            let scale = (budget / power).sqrt();
            ps.iter_mut().for_each(|v| *v *= C64::from(scale));
        }
        p.extend(ps);
    }
    Ok(PrecodingSolution { num_sats: scn.num_sats, num_uts: nk, p, b: scn.links.iter().map(|l| l.d0.clone()).collect() })
}

/// WMMSE run independently per satellite with the other satellites removed.
pub fn sep_wmmse(scn: &ScenarioInstance, opts: &WmmseOptions) -> Result<PrecodingSolution> {
    let nk = scn.num_uts;
    let mut p = Vec::with_capacity(scn.links.len());
    let mut b = Vec::with_capacity(scn.links.len());
    for s in 0..scn.num_sats {
        let st = wmmse_solve(&scn.single_satellite(s), opts)?;
        p.extend(st.sol.p);
        b.extend(st.sol.b);
    }
    Ok(PrecodingSolution { num_sats: scn.num_sats, num_uts: nk, p, b })
}
