//! Closed-form recovery of the precoders from the low-dimensional tuple
//! `(w, u, λ, ϱ, b)`.
//!
//! With `A_s = Σ_m ϱ_{s,m} g_{s,m} g_{s,m}ᴴ = G_s Φ_s G_sᴴ` the precoder
//! `p_{s,k} = w u* (A_s + λ_s I)⁻¹ g_{s,k} d̄ᴴ b` is evaluated through the
//! push-through identity `(G Φ Gᴴ + λI)⁻¹ G = G (Φ Gᴴ G + λI)⁻¹`, so each
//! satellite costs one `K × K` factorization instead of an `M × M` one.

use crate::channel::ScenarioInstance;
use crate::linalg::{inner, lu_solve, CMat, CVec, C64};
use crate::wmmse::PrecodingSolution;
use crate::{Error, Result};

/// Low-dimensional variables from which the precoders are rebuilt. All
/// per-link fields are row-major `S × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTuple {
    pub num_sats: usize,
    pub num_uts: usize,
    pub w: Vec<f64>,
    pub u: Vec<C64>,
    pub lambda: Vec<f64>,
    pub rho: Vec<C64>,
    pub b: Vec<CVec>,
}

impl PredictedTuple {
    pub fn validate(&self, scn: &ScenarioInstance) -> Result<()> {
        let links = scn.num_sats * scn.num_uts;
        if self.num_sats != scn.num_sats || self.num_uts != scn.num_uts {
            return Err(Error::ShapeMismatch(format!(
                "tuple is {}x{}, scenario is {}x{}",
                self.num_sats, self.num_uts, scn.num_sats, scn.num_uts
            )));
        }
        if self.w.len() != links || self.u.len() != links || self.rho.len() != links || self.b.len() != links {
            return Err(Error::ShapeMismatch(format!("tuple needs {links} per-link entries")));
        }
        if self.lambda.len() != scn.num_sats {
            return Err(Error::ShapeMismatch(format!("tuple needs {} multipliers", scn.num_sats)));
        }
        if let Some(b) = self.b.iter().find(|b| b.len() != scn.n()) {
            return Err(Error::ShapeMismatch(format!("receive vector of length {}, expected {}", b.len(), scn.n())));
        }
        Ok(())
    }

    /// New satellite `i` is old `sat_perm[i]`, new terminal `j` is old `ut_perm[j]`.
    pub fn permuted(&self, sat_perm: &[usize], ut_perm: &[usize]) -> Self {
        let k = self.num_uts;
        let order: Vec<usize> = sat_perm.iter().flat_map(|&s| ut_perm.iter().map(move |&m| s * k + m)).collect();
        Self {
            num_sats: self.num_sats,
            num_uts: self.num_uts,
            w: order.iter().map(|&i| self.w[i]).collect(),
            u: order.iter().map(|&i| self.u[i]).collect(),
            lambda: sat_perm.iter().map(|&s| self.lambda[s]).collect(),
            rho: order.iter().map(|&i| self.rho[i]).collect(),
            b: order.iter().map(|&i| self.b[i].clone()).collect(),
        }
    }
}

/// `α_{s,k} = √(κβ/(κ+1))·w·u*·(d0ᴴ b)`, the scalar multiplying
/// `(A_s + λ_s I)⁻¹ g_{s,k}`.
pub(crate) fn precoder_scale(scn: &ScenarioInstance, w: f64, u: C64, b: &CVec, s: usize, k: usize) -> C64 {
    let link = scn.link(s, k);
    u.conj() * inner(&link.d0, b) * (w * link.los_amplitude())
}

/// `(G Φ Gᴴ + λI)⁻¹ G diag(α)` for one satellite, returned column by column.
pub(crate) fn closed_form(g: &[&CVec], rho: &[C64], lambda: f64, alpha: &[C64], context: &str) -> Result<Vec<CVec>> {
    let k = g.len();
    let mut sys = CMat::from_fn(k, k, |i, j| rho[i] * inner(g[i], g[j]));
    for i in 0..k {
        sys[(i, i)] += C64::from(lambda);
    }
    let rhs = CMat::from_diagonal(&CVec::from_column_slice(alpha));
    let x = lu_solve(&sys, &rhs, context)?;
    Ok((0..k)
        .map(|col| {
            let mut p = CVec::zeros(g[0].len());
            for (j, gj) in g.iter().enumerate() {
                p.axpy(x[(j, col)], gj, C64::from(1.0));
            }
            p
        })
        .collect())
}

/// Rebuilds the precoders of every satellite and rescales any satellite that
/// exceeds its budget back onto it.
pub fn recover_precoders(scn: &ScenarioInstance, tuple: &PredictedTuple) -> Result<PrecodingSolution> {
    tuple.validate(scn)?;
    let kk = scn.num_uts;
    let mut p = Vec::with_capacity(scn.links.len());
    for s in 0..scn.num_sats {
        let g: Vec<&CVec> = (0..kk).map(|k| &scn.link(s, k).g).collect();
        let range = s * kk..(s + 1) * kk;
        let alpha: Vec<C64> = (0..kk)
            .map(|k| precoder_scale(scn, tuple.w[s * kk + k], tuple.u[s * kk + k], &tuple.b[s * kk + k], s, k))
            .collect();
        let mut ps = closed_form(&g, &tuple.rho[range], tuple.lambda[s], &alpha, &format!("recovery, satellite {s}"))?;
        let power: f64 = ps.iter().map(|v| v.norm_squared()).sum();
        let budget = scn.budget_w(s);
        if power > budget {
            let scale = (budget / power).sqrt();
            for v in &mut ps {
                *v *= C64::from(scale);
            }
        }
        p.extend(ps);
    }
    Ok(PrecodingSolution { num_sats: scn.num_sats, num_uts: kk, p, b: tuple.b.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_stats, ArrayConfig, StatsConfig};
    use crate::geometry::{drop_scenario, ConstellationConfig, DropConfig};
    use crate::linalg::{identity, outer, rel_frobenius};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario(seed: u64) -> ScenarioInstance {
        let cfg = ConstellationConfig::default();
        let geom =
            drop_scenario(&cfg, &DropConfig { num_sats: 2, num_uts: 3, rng_seed: seed, ..Default::default() }).unwrap();
        let arr = ArrayConfig::new(4, 2, 2, 1);
        synthesize_stats(&geom, &cfg, &arr, &StatsConfig::default(), 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_tuple(scn: &ScenarioInstance, seed: u64, lambda: f64) -> PredictedTuple {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let links = scn.links.len();
        let mut cplx = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let u: Vec<C64> = (0..links).map(|_| cplx() * 1e6).collect();
        let rho: Vec<C64> = (0..links).map(|_| cplx()).collect();
        let b: Vec<CVec> = (0..links).map(|_| CVec::from_fn(scn.n(), |_, _| cplx())).collect();
        PredictedTuple {
            num_sats: scn.num_sats,
            num_uts: scn.num_uts,
            w: (0..links).map(|i| 1.0 + i as f64 * 0.1).collect(),
            u,
            lambda: vec![lambda; scn.num_sats],
            rho,
            b,
        }
    }

    /// Direct `M × M` evaluation of the closed form without projection.
    fn direct(scn: &ScenarioInstance, t: &PredictedTuple, s: usize, k: usize) -> CVec {
        let m = scn.m();
        let mut a = identity(m) * C64::from(t.lambda[s]);
        for j in 0..scn.num_uts {
            let g = &scn.link(s, j).g;
            a += outer(g, g) * t.rho[scn.idx(s, j)];
        }
        let i = scn.idx(s, k);
        let link = scn.link(s, k);
        let rhs = scn.link(s, k).g.clone() * (inner(&link.mean_receive(), &t.b[i]) * t.u[i].conj() * t.w[i]);
        a.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn push_through_matches_direct_solve() {
        let scn = scenario(4).with_budget_dbw(200.0);
        let t = random_tuple(&scn, 1, 0.3);
        let sol = recover_precoders(&scn, &t).unwrap();
        for s in 0..scn.num_sats {
            for k in 0..scn.num_uts {
                let d = direct(&scn, &t, s, k);
                assert!((sol.precoder(s, k) - &d).norm() <= 1e-10 * d.norm());
            }
        }
        assert_eq!(sol.b, t.b);
    }

    #[test]
    fn large_lambda_vanishes() {
        let scn = scenario(2);
        let t = random_tuple(&scn, 2, 1e15);
        let sol = recover_precoders(&scn, &t).unwrap();
        for s in 0..scn.num_sats {
            assert!(sol.sat_power(s) < 1e-6 * scn.budget_w(s));
        }
    }

    #[test]
    fn projection_restores_budget() {
        let scn = scenario(3).with_budget_dbw(-40.0);
        let t = random_tuple(&scn, 3, 1e-3);
        let sol = recover_precoders(&scn, &t).unwrap();
        for s in 0..scn.num_sats {
            let p = sol.sat_power(s);
            assert!(p <= scn.budget_w(s) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn joint_scaling_is_invariant() {
        let scn = scenario(5).with_budget_dbw(200.0);
        let t = random_tuple(&scn, 5, 0.7);
        let base = recover_precoders(&scn, &t).unwrap();
        let c = 3.7;
        let mut scaled = t.clone();
        scaled.rho.iter_mut().for_each(|r| *r *= c);
        scaled.lambda.iter_mut().for_each(|l| *l *= c);
        scaled.w.iter_mut().for_each(|w| *w *= c);
        let again = recover_precoders(&scn, &scaled).unwrap();
        for s in 0..scn.num_sats {
            let a = CMat::from_columns(&(0..scn.num_uts).map(|k| base.precoder(s, k).clone()).collect::<Vec<_>>());
            let b = CMat::from_columns(&(0..scn.num_uts).map(|k| again.precoder(s, k).clone()).collect::<Vec<_>>());
            assert!(rel_frobenius(&b, &a) < 1e-10);
        }
    }

    #[test]
    fn relabeling_commutes() {
        let scn = scenario(6).with_budget_dbw(200.0);
        let t = random_tuple(&scn, 6, 0.2);
        let (sp, up) = ([1, 0], [2, 0, 1]);
        let a = recover_precoders(&scn, &t).unwrap().permuted(&sp, &up);
        let b = recover_precoders(&scn.permuted(&sp, &up), &t.permuted(&sp, &up)).unwrap();
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!((x - y).norm() <= 1e-10 * x.norm());
        }
    }

    #[test]
    fn rejects_wrong_shape() {
        let scn = scenario(7);
        let mut t = random_tuple(&scn, 7, 1.0);
        t.lambda.pop();
        assert!(matches!(recover_precoders(&scn, &t), Err(Error::ShapeMismatch(_))));
    }
}
