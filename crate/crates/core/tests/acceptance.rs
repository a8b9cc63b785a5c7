//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satmimo::channel::{nlos_covariance, sample_channel, AnglesDeg, ArrayConfig, LinkStat, ScenarioInstance};
use satmimo::equinet::{infer_centralized, infer_decentralized, infer_decentralized_all, CenDims, DecDims, Dims, EquiWeights};
use satmimo::eval::{generate_scenario, overhead_counts, paired_gap, run_scheme, run_sweep, ScenarioConfig, Scheme, SchemeContext, SweepConfig};
use satmimo::linalg::{outer, rel_frobenius, trace_re, CMat, C64};
use satmimo::recovery::{recover_precoders, PredictedTuple};
use satmimo::wmmse::{solve_lambda, sum_rate, update_p, wmmse_solve, WmmseOptions, WmmseState};
use satmimo::Execution;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(s: usize, k: usize, tx: (usize, usize), rx: (usize, usize), budget_dbw: f64, seed: u64) -> ScenarioInstance {
    let cfg = ScenarioConfig {
        num_sats: s,
        num_uts: k,
        budget_dbw,
        array: ArrayConfig::new(tx.0, tx.1, rx.0, rx.1),
        ..Default::default()
    };
    generate_scenario(&cfg, seed).expect("scenario generation")
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn flat_c(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|v| [v.re, v.im]).collect()
}

/// Largest relative difference over the tuple components.
fn tuple_rel(a: &PredictedTuple, b: &PredictedTuple) -> f64 {
    let fb = |t: &PredictedTuple| flat_c(&t.b.iter().flat_map(|v| v.iter().copied()).collect::<Vec<_>>());
    [
        rel(&a.w, &b.w),
        rel(&a.lambda, &b.lambda),
        rel(&flat_c(&a.u), &flat_c(&b.u)),
        rel(&flat_c(&a.rho), &flat_c(&b.rho)),
        rel(&fb(a), &fb(b)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// `p_k = (Σ_i ϱ_i g_i g_iᴴ + λI)⁻¹ g_k α_k`, `α_k = c_k w_k u_k* (d0ᴴ b_k)`,
/// solved as a dense `M × M` system.
fn direct_precoders(scn: &ScenarioInstance, t: &PredictedTuple, s: usize) -> CMat {
    let (m, nk) = (scn.m(), scn.num_uts);
    let mut a = CMat::identity(m, m).scale(t.lambda[s]);
    for k in 0..nk {
        let g = &scn.link(s, k).g;
        a += outer(g, g) * t.rho[s * nk + k];
    }
    let rhs = CMat::from_fn(m, nk, |r, k| {
        let i = s * nk + k;
        let l = scn.link(s, k);
        let alpha = t.u[i].conj() * l.d0.dotc(&t.b[i]) * t.w[i] * l.los_amplitude();
        l.g[r] * alpha
    });
    a.lu().solve(&rhs).expect("dense solve")
}

fn recovery_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_direct: f64 = 0.0;
    for seed in 0..20 {
        let scn = scenario(3, 4, (4, 4), (2, 1), 5.0, seed);
        let st = wmmse_solve(&scn, &WmmseOptions::default()).expect("solver");
        let rec = recover_precoders(&scn, &st.tuple).expect("recovery");
        for s in 0..3 {
            let cols = |p: &[satmimo::linalg::CVec]| CMat::from_columns(&p[s * 4..(s + 1) * 4]);
            worst = worst.max(rel_frobenius(&cols(&rec.p), &cols(&st.sol.p)));
            worst_direct = worst_direct.max(rel_frobenius(&direct_precoders(&scn, &st.tuple, s), &cols(&st.sol.p)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && worst_direct <= 1e-8 && secs < 60.0,
        format!("max relative Frobenius error {worst:.2e} (dense M×M form {worst_direct:.2e}) over 60 satellites, {secs:.1} s"),
    )
}

fn monotonicity() -> Outcome {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut iterations = 0;
    for run in 0..100u64 {
        let s = [2, 3, 4][run as usize % 3];
        let k = [4, 8][(run as usize / 3) % 2];
        let p = [-10.0, 0.0, 10.0][(run as usize / 6) % 3];
        let scn = scenario(s, k, (4, 4), (2, 1), p, 1000 + run);
        let st = wmmse_solve(&scn, &WmmseOptions::default()).expect("solver");
        iterations += st.iterations();
        for w in st.objective_trace.windows(2) {
            let d = w[1] - w[0];
            worst = worst.max(d);
            if d > 1e-8 {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {iterations} iterations, largest step {worst:.2e}"))
}

fn random_context(scn: &ScenarioInstance, seed: u64) -> SchemeContext {
    let cen = CenDims { d_h: 32, f: 16, layers: 2, ..CenDims::for_arrays(scn.m(), scn.n()) };
    let dec = DecDims { d_h_loc: 32, d_h_oth: 32, f_loc: 16, f_oth: 16, layers: 2, ..DecDims::for_arrays(scn.m(), scn.n()) };
    SchemeContext {
        wmmse: WmmseOptions::default(),
        cen_weights: Some(EquiWeights::random(Dims::Centralized(cen), seed).unwrap()),
        dec_weights: Some(EquiWeights::random(Dims::Decentralized(dec), seed + 1).unwrap()),
    }
}

fn feasibility() -> Outcome {
    let mut runs = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for seed in 0..10 {
        let base = scenario(3, 6, (4, 4), (2, 2), 0.0, 2000 + seed);
        let ctx = random_context(&base, seed);
        for p in [-10.0, -5.0, 0.0, 5.0, 10.0] {
            let scn = base.clone().with_budget_dbw(p);
            for scheme in Scheme::ALL {
                match run_scheme(&scn, scheme, &ctx) {
                    Ok(sol) => {
                        runs += 1;
                        worst = worst.max(sol.max_power_excess(&scn));
                    }
                    Err(e) => failures.push(format!("{scheme} seed {seed}: {e}")),
                }
            }
        }
    }
    outcome(
        worst <= 1e-6 && failures.is_empty(),
        format!("{runs} runs over 6 schemes, worst relative excess {worst:.2e}, {} failures", failures.len()),
    )
}

fn power(scn: &ScenarioInstance, st: &WmmseState, s: usize, lambda: f64) -> f64 {
    update_p(scn, st, s, lambda).expect("precoder update").iter().map(|p| p.norm_squared()).sum()
}

fn lambda_oracle() -> Outcome {
    let t0 = Instant::now();
    let n_grid = 10_000;
    let (lo, hi) = (-20.0f64, 12.0f64);
    let grid: Vec<f64> = (0..n_grid).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)).collect();
    let mut worst_cells: f64 = 0.0;
    let mut worst_power: f64 = 0.0;
    let mut active = 0;
    for inst in 0..50u64 {
        let budget = [-10.0, -5.0, 0.0, 5.0, 10.0][inst as usize % 5];
        let scn = scenario(3, 4, (4, 4), (2, 1), budget, 3000 + inst);
        let mut st = wmmse_solve(&scn, &WmmseOptions { max_outer: 2, ..Default::default() }).expect("solver");
        let mut rng = ChaCha8Rng::seed_from_u64(inst);
        for u in &mut st.u {
            *u *= C64::new(rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5));
        }
        for w in &mut st.w {
            *w *= rng.random_range(0.5..1.5);
        }
        let s = inst as usize % 3;
        let lambda = solve_lambda(&scn, &st, s, &WmmseOptions::default()).expect("multiplier");
        let budget_w = scn.budget_w(s);
        // Grid optimum: the smallest grid multiplier meeting the budget.
        let j = grid.iter().position(|&l| power(&scn, &st, s, l) <= budget_w).unwrap_or(n_grid - 1);
        let cell = (hi - lo) / (n_grid - 1) as f64;
        let cells = if lambda > 0.0 { (lambda.log10() - grid[j].log10()).abs() / cell } else if j == 0 { 0.0 } else { f64::INFINITY };
        worst_cells = worst_cells.max(cells);
        if lambda > 0.0 {
            active += 1;
            worst_power = worst_power.max((power(&scn, &st, s, lambda) - budget_w).abs() / budget_w);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst_cells <= 1.0 && worst_power <= 1e-8,
        format!("max distance {worst_cells:.2} grid cells, {active}/50 active with max power gap {worst_power:.2e}, {secs:.1} s"),
    )
}

fn single_link_capacity() -> Outcome {
    let arr = ArrayConfig::new(4, 4, 2, 1);
    let mut worst: f64 = 0.0;
    for (i, snr_db) in [0.0, 10.0, 20.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let phases: Vec<f64> = (0..arr.rx_elements()).map(|_| rng.random_range(0.0..TAU)).collect();
        let angles = AnglesDeg { phi_sat: 30.0, theta_sat: 70.0, phi_ut: 80.0, theta_ut: 95.0 };
        let beta = 1e-10;
        let noise = beta / 10f64.powf(snr_db / 10.0);
        let link = LinkStat::new(&arr, angles, beta, 1e9, nlos_covariance(&arr, 0.5, &phases)).unwrap();
        let scn = ScenarioInstance {
            arr,
            num_sats: 1,
            num_uts: 1,
            links: vec![link],
            noise: vec![noise],
            budgets_dbw: vec![0.0],
            weights: vec![1.0],
        };
        let st = wmmse_solve(&scn, &WmmseOptions::default()).expect("solver");
        let rate = sum_rate(&scn, &st.sol, 1000, 5, Execution::Sequential).mean;
        let cap = (1.0 + beta * scn.budget_w(0) / noise).log2();
        worst = worst.max((rate - cap).abs() / cap);
    }
    outcome(worst <= 0.005, format!("max relative gap to log2(1 + βP/σ²) {worst:.2e} at 0, 10, 20 dB"))
}

fn scheme_ordering() -> Outcome {
    let t0 = Instant::now();
    let grid = vec![-10.0, -5.0, 0.0, 5.0, 10.0];
    let cfg = SweepConfig {
        scenario: ScenarioConfig { array: ArrayConfig::new(4, 4, 2, 2), ..Default::default() },
        power_grid_dbw: grid.clone(),
        sats_grid: vec![3],
        uts_grid: vec![12],
        n_drops: 100,
        n_mc: 500,
        seed: 2024,
        schemes: vec![Scheme::CenOptWm, Scheme::SepOptWm, Scheme::SepMmse, Scheme::SepMrt],
        ..Default::default()
    };
    let reports = run_sweep(&cfg, &SchemeContext::default(), Execution::Parallel).expect("sweep");
    let at = |p: f64, s: Scheme| reports.iter().find(|r| r.power_dbw == p && r.scheme == s).unwrap();
    let failures: usize = reports.iter().map(|r| r.failures()).sum();
    let mut pass = failures == 0;
    let mut detail = Vec::new();
    for pair in cfg.schemes.windows(2) {
        let gap = paired_gap(at(5.0, pair[0]), at(5.0, pair[1]));
        pass &= gap.lower() > 0.0;
        detail.push(format!("{}−{} = {:.4} ± {:.4}", pair[0], pair[1], gap.mean, gap.half_width));
    }
    let mut monotone = true;
    for &s in &cfg.schemes {
        let means: Vec<f64> = grid.iter().map(|&p| at(p, s).mean()).collect();
        monotone &= means.windows(2).all(|w| w[1] > w[0]);
    }
    pass &= monotone;
    let means: Vec<String> = cfg.schemes.iter().map(|&s| format!("{s} {:.3}", at(5.0, s).mean())).collect();
    outcome(
        pass,
        format!(
            "at 5 dBW: {}; paired gaps {}; monotone in P: {monotone}; {failures} failed drops; {:.0} s",
            means.join(", "),
            detail.join(", "),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn equivariance() -> Outcome {
    let mut cen_err: f64 = 0.0;
    let mut dec_err: f64 = 0.0;
    let mut inv_err: f64 = 0.0;
    let mut obj_err: f64 = 0.0;
    for seed in 0..20u64 {
        let s = [2, 3, 4][seed as usize % 3];
        let k = [3, 5][seed as usize % 2];
        let scn = scenario(s, k, (4, 4), (2, 1), 0.0, 4000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sp, up) = (permutation(s, &mut rng), permutation(k, &mut rng));
        let perm = scn.permuted(&sp, &up);
        let cen = EquiWeights::random(Dims::Centralized(CenDims::for_arrays(scn.m(), scn.n())), seed).unwrap();
        let dec = EquiWeights::random(Dims::Decentralized(DecDims::for_arrays(scn.m(), scn.n())), seed + 100).unwrap();

        let a = infer_centralized(&perm, &cen).unwrap();
        let b = infer_centralized(&scn, &cen).unwrap().permuted(&sp, &up);
        cen_err = cen_err.max(tuple_rel(&a, &b));

        let a = infer_decentralized_all(&perm, &dec, Execution::Parallel).unwrap();
        let b = infer_decentralized_all(&scn, &dec, Execution::Parallel).unwrap().permuted(&sp, &up);
        dec_err = dec_err.max(tuple_rel(&a, &b));

        // Reordering only the other satellites leaves satellite 0's output unchanged.
        let mut others: Vec<usize> = (1..s).collect();
        others.reverse();
        let keep0: Vec<usize> = std::iter::once(0).chain(others).collect();
        let a = infer_decentralized(&scn.permuted(&keep0, &(0..k).collect::<Vec<_>>()), &dec, 0).unwrap();
        let b = infer_decentralized(&scn, &dec, 0).unwrap();
        inv_err = inv_err.max(tuple_rel(&a, &b));

        let oa = wmmse_solve(&perm, &WmmseOptions::default()).unwrap().objective().unwrap();
        let ob = wmmse_solve(&scn, &WmmseOptions::default()).unwrap().objective().unwrap();
        obj_err = obj_err.max((oa - ob).abs() / ob.abs());
    }
    outcome(
        cen_err <= 1e-5 && dec_err <= 1e-5 && inv_err <= 1e-5 && obj_err <= 1e-6,
        format!(
            "centralized {cen_err:.1e}, decentralized {dec_err:.1e}, other-satellite invariance {inv_err:.1e}, WMMSE objective {obj_err:.1e}"
        ),
    )
}

fn statistics_integrity() -> Outcome {
    let mut trace_err: f64 = 0.0;
    let mut sat_err: f64 = 0.0;
    for seed in 0..5 {
        let scn = scenario(3, 4, (4, 4), (2, 2), 0.0, 5000 + seed);
        for l in &scn.links {
            trace_err = trace_err.max((trace_re(&l.r_ut) - l.beta).abs() / l.beta);
            sat_err = sat_err.max(rel_frobenius(&l.r_sat, &outer(&l.g, &l.g).scale(l.beta)));
        }
    }
    let scn = scenario(1, 1, (4, 4), (2, 2), 0.0, 5100);
    let link = &scn.links[0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = scn.n();
    let mut acc = CMat::zeros(n, n);
    let samples = 100_000;
    for _ in 0..samples {
        let h = sample_channel(link, &mut rng);
        acc += &h * h.adjoint();
    }
    let emp = rel_frobenius(&acc.unscale(samples as f64), &link.r_ut);
    outcome(
        trace_err <= 1e-9 && sat_err <= 1e-9 && emp <= 0.02,
        format!("tr(R^ut)/β error {trace_err:.1e}, R^sat error {sat_err:.1e}, empirical E[HHᴴ] error {:.2}%", 100.0 * emp),
    )
}

fn overhead() -> Outcome {
    let mut pass = true;
    for s in 2..=6 {
        for k in 1..=16 {
            for (m, n) in [(16, 2), (64, 4)] {
                pass &= overhead_counts(Scheme::DecTfcWm, s, k, m, n) < overhead_counts(Scheme::CenOptWm, s, k, m, n);
                pass &= overhead_counts(Scheme::DecTfcWm, s, k, m, n) == overhead_counts(Scheme::DecTfcWm, s, 1, 1, 1);
            }
        }
    }
    // Hand count at (3, 12, 64, 4): two non-central satellites each send
    // 3 + 9 + 1 state scalars and 12·(2 + 16) statistics scalars, and receive
    // 12 complex 64-vectors.
    let cen_hand = 2 * (3 + 9 + 1) + 2 * 12 * (2 + 16) + 2 * 12 * 2 * 64;
    let dec_hand = 2 * (3 + 9 + 1);
    let cen = overhead_counts(Scheme::CenOptWm, 3, 12, 64, 4);
    let dec = overhead_counts(Scheme::DecTfcWm, 3, 12, 64, 4);
    pass &= cen == cen_hand && dec == dec_hand && cen > 100 * dec;
    pass &= Scheme::ALL.iter().all(|&sc| overhead_counts(sc, 1, 12, 64, 4) == 0);
    outcome(pass, format!("(3,12,64,4): cen {cen} (hand {cen_hand}), dec {dec} (hand {dec_hand})"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form recovery oracle", recovery_oracle),
        ("BCD monotonicity", monotonicity),
        ("power feasibility", feasibility),
        ("lambda dual oracle", lambda_oracle),
        ("single-link capacity", single_link_capacity),
        ("scheme ordering", scheme_ordering),
        ("equivariance", equivariance),
        ("statistics integrity", statistics_integrity),
        ("overhead accounting", overhead),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
