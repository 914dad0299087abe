//! Nishimori-line sampling of bond configurations and Metropolis moves on the
//! replica ensemble `Q(lambda)`.
//!
//! Drawing `eta_e = -1` with probability `p` and then applying a uniformly random
//! gauge transformation produces `x` with probability proportional to `Z[x](beta)`
//! whenever `tanh(beta) = 1 - 2p`. That draw is used both for exact sampling at
//! `lambda = 0` and as the independence proposal for the Metropolis chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bonds::BondConfig;
use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::tn::log_partition;

/// A point on the Nishimori line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NishimoriParams {
    pub p: f64,
    pub beta: f64,
    pub temperature: f64,
    /// `p = 0`, where `beta` is infinite.
    pub zero_temperature: bool,
}

pub fn params_from_p(p: f64) -> Result<NishimoriParams> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "flip probability {p} outside [0, 0.5]"
        )));
    }
    if p == 0.0 {
        return Ok(NishimoriParams {
            p,
            beta: f64::INFINITY,
            temperature: 0.0,
            zero_temperature: true,
        });
    }
    let beta = (1.0 - 2.0 * p).atanh();
    Ok(NishimoriParams {
        p,
        beta,
        temperature: 1.0 / beta,
        zero_temperature: false,
    })
}

/// Point on the Nishimori line at temperature `t = 1/beta`.
pub fn params_from_temperature(t: f64) -> Result<NishimoriParams> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temperature {t} must be nonnegative"
        )));
    }
    if t == 0.0 {
        return params_from_p(0.0);
    }
    let beta = 1.0 / t;
    let p = 0.5 * (1.0 - beta.tanh());
    Ok(NishimoriParams {
        p,
        beta,
        temperature: t,
        zero_temperature: false,
    })
}

/// Independent `-1` signs with probability `p`.
pub fn draw_disorder<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { -1 } else { 1 })
        .collect()
}

/// Uniform `+-1` per site.
pub fn draw_gauge<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect()
}

/// One bond configuration distributed as `Z[x] / sum Z`.
pub fn sample_nishimori<R: Rng + ?Sized>(
    geometry: &LatticeGeometry,
    params: &NishimoriParams,
    rng: &mut R,
) -> BondConfig {
    let eta = draw_disorder(geometry.n_bonds(), params.p, rng);
    let sigma = draw_gauge(geometry.n_spins(), rng);
    let x = geometry
        .bonds()
        .iter()
        .zip(eta)
        .map(|(b, e)| e * sigma[b.spins[0]] * sigma[b.spins[1]])
        .collect();
    BondConfig::from_signs(x).expect("signs are +-1")
}

/// Evaluates `log Z[x]` for a fixed lattice, temperature and bond dimension.
#[derive(Clone, Copy, Debug)]
pub struct PartitionFunction<'g> {
    pub geometry: &'g LatticeGeometry,
    pub beta: f64,
    pub chi: usize,
}

impl<'g> PartitionFunction<'g> {
    pub fn new(
        geometry: &'g LatticeGeometry,
        params: &NishimoriParams,
        chi: usize,
    ) -> Result<Self> {
        if params.zero_temperature {
            return Err(Error::InvalidParameter(
                "partition functions are undefined at p = 0 (infinite beta)".into(),
            ));
        }
        Ok(PartitionFunction {
            geometry,
            beta: params.beta,
            chi,
        })
    }

    pub fn log_z(&self, x: &BondConfig) -> Result<f64> {
        log_partition(self.geometry, x, self.beta, self.chi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replica {
    First,
    Second,
}

impl Replica {
    pub fn other(self) -> Self {
        match self {
            Replica::First => Replica::Second,
            Replica::Second => Replica::First,
        }
    }
}

/// Cached `log Z` of the four configurations entering `g(x, x', lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapCache {
    /// `log Z(x_A, x_B)`
    pub own_first: f64,
    /// `log Z(x'_A, x'_B)`
    pub own_second: f64,
    /// `log Z(x'_A, x_B)`
    pub swapped_second_a: f64,
    /// `log Z(x_A, x'_B)`
    pub swapped_first_a: f64,
}

impl SwapCache {
    fn compute(
        pf: &PartitionFunction<'_>,
        x: &BondConfig,
        xp: &BondConfig,
        mask: &[bool],
    ) -> Result<Self> {
        Ok(SwapCache {
            own_first: pf.log_z(x)?,
            own_second: pf.log_z(xp)?,
            swapped_second_a: pf.log_z(&BondConfig::splice(xp, x, mask))?,
            swapped_first_a: pf.log_z(&BondConfig::splice(x, xp, mask))?,
        })
    }

    /// `d log g / d lambda = (1/2) log[Z(x'_A,x_B) Z(x_A,x'_B) / (Z(x) Z(x'))]`.
    pub fn swap_exponent(&self) -> f64 {
        0.5 * (self.swapped_second_a + self.swapped_first_a - self.own_first - self.own_second)
    }
}

/// Two replicas and their cached partition functions for a region split.
#[derive(Clone, Debug)]
pub struct ReplicaState {
    pub x: BondConfig,
    pub xp: BondConfig,
    /// Bonds of the subsystem `A`; the rest form `B`.
    pub mask: Vec<bool>,
    pub cache: SwapCache,
}

impl ReplicaState {
    pub fn new(
        pf: &PartitionFunction<'_>,
        x: BondConfig,
        xp: BondConfig,
        mask: Vec<bool>,
    ) -> Result<Self> {
        x.check_matches(pf.geometry)?;
        xp.check_matches(pf.geometry)?;
        if mask.len() != x.len() {
            return Err(Error::ConfigMismatch(format!(
                "region mask has {} entries for {} bonds",
                mask.len(),
                x.len()
            )));
        }
        let cache = SwapCache::compute(pf, &x, &xp, &mask)?;
        Ok(ReplicaState { x, xp, mask, cache })
    }

    pub fn swap_exponent(&self) -> f64 {
        self.cache.swap_exponent()
    }

    /// Largest deviation of the caches from fresh contractions.
    pub fn cache_error(&self, pf: &PartitionFunction<'_>) -> Result<f64> {
        let fresh = SwapCache::compute(pf, &self.x, &self.xp, &self.mask)?;
        let c = &self.cache;
        Ok([
            (c.own_first, fresh.own_first),
            (c.own_second, fresh.own_second),
            (c.swapped_second_a, fresh.swapped_second_a),
            (c.swapped_first_a, fresh.swapped_first_a),
        ]
        .iter()
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max))
    }
}

/// `log g(x, x', lambda)`.
pub fn log_g(state: &ReplicaState, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * state.swap_exponent()
}

/// Log Metropolis ratio for replacing `old` by `new` at fixed `lambda`.
///
/// The proposal density is proportional to `Z` of the replaced replica, which
/// cancels the same factor in the target `Z(x) Z(x') g`, leaving `g_new / g_old`.
pub fn acceptance_log_ratio(old: &SwapCache, new: &SwapCache, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * (new.swap_exponent() - old.swap_exponent())
}

/// Proposes a fresh Nishimori draw for `which` and accepts it with probability
/// `min(1, g_new / g_old)`. Returns whether the move was accepted.
pub fn metropolis_update<R: Rng + ?Sized>(
    state: &mut ReplicaState,
    lambda: f64,
    params: &NishimoriParams,
    pf: &PartitionFunction<'_>,
    rng: &mut R,
    which: Replica,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let proposal = sample_nishimori(pf.geometry, params, rng);
    let mask = &state.mask;
    let new_cache = || -> Result<SwapCache> {
        Ok(match which {
            Replica::First => SwapCache {
                own_first: pf.log_z(&proposal)?,
                own_second: state.cache.own_second,
                swapped_second_a: pf.log_z(&BondConfig::splice(&state.xp, &proposal, mask))?,
                swapped_first_a: pf.log_z(&BondConfig::splice(&proposal, &state.xp, mask))?,
            },
            Replica::Second => SwapCache {
                own_first: state.cache.own_first,
                own_second: pf.log_z(&proposal)?,
                swapped_second_a: pf.log_z(&BondConfig::splice(&proposal, &state.x, mask))?,
                swapped_first_a: pf.log_z(&BondConfig::splice(&state.x, &proposal, mask))?,
            },
        })
    };
    let new_cache = match new_cache() {
        Ok(c) => Some(c),
        // g is too small to resolve, so the move would be rejected anyway (lambda > 0 here).
        Err(Error::BelowResolution(_)) if lambda > 0.0 => None,
        Err(e) => return Err(e),
    };
    let uniform: f64 = rng.gen();
    let Some(new_cache) = new_cache else {
        return Ok(false);
    };
    let log_ratio = acceptance_log_ratio(&state.cache, &new_cache, lambda);
    let accept = log_ratio >= 0.0 || uniform < log_ratio.exp();
    if accept {
        match which {
            Replica::First => state.x = proposal,
            Replica::Second => state.xp = proposal,
        }
        state.cache = new_cache;
    }
    Ok(accept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::oracle::all_logz;
    use crate::rng::RngStream;

    #[test]
    fn nishimori_relation() {
        let half = params_from_p(0.5).unwrap();
        assert_eq!(half.beta, 0.0);
        assert!(half.temperature.is_infinite());
        for p in [0.01, 0.1, 0.15, 0.3, 0.49] {
            let params = params_from_p(p).unwrap();
            assert!((params.beta.tanh() - (1.0 - 2.0 * p)).abs() < 1e-12);
            assert!((params.temperature * params.beta - 1.0).abs() < 1e-15);
        }
        let zero = params_from_p(0.0).unwrap();
        assert!(zero.zero_temperature && zero.beta.is_infinite());
        assert!(params_from_p(-0.1).is_err());
        assert!(params_from_p(0.51).is_err());
    }

    #[test]
    fn critical_temperature_conversion() {
        let params = params_from_temperature(0.951).unwrap();
        let expected = (1.0 - (1.0f64 / 0.951).tanh()) / 2.0;
        assert!((params.p - expected).abs() < 1e-15);
        let back = params_from_p(params.p).unwrap();
        assert!((back.temperature - 0.951).abs() < 1e-9);
    }

    #[test]
    fn zero_p_gives_pure_gauge() {
        let g = build_lattice(3).unwrap();
        let params = params_from_p(0.0).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        let x = sample_nishimori(&g, &params, &mut rng);
        // every plaquette product of a pure-gauge configuration is +1
        for plaq in g.plaquettes() {
            let prod: i8 = plaq.iter().map(|&b| x.get(b)).product();
            assert_eq!(prod, 1);
        }
        // reconstruct sigma by walking spins from spin 0
        let mut sigma = vec![0i8; g.n_spins()];
        sigma[0] = 1;
        let mut changed = true;
        while changed {
            changed = false;
            for (e, b) in g.bonds().iter().enumerate() {
                let [a, c] = b.spins;
                if sigma[a] != 0 && sigma[c] == 0 {
                    sigma[c] = x.get(e) * sigma[a];
                    changed = true;
                } else if sigma[c] != 0 && sigma[a] == 0 {
                    sigma[a] = x.get(e) * sigma[c];
                    changed = true;
                }
            }
        }
        for (e, b) in g.bonds().iter().enumerate() {
            assert_eq!(x.get(e), sigma[b.spins[0]] * sigma[b.spins[1]]);
        }
    }

    #[test]
    fn disorder_fraction_is_binomial() {
        let mut rng = RngStream::new(11, 0).rng();
        let n = 100_000;
        let p = 0.15;
        let bad = draw_disorder(n, p, &mut rng)
            .iter()
            .filter(|&&s| s < 0)
            .count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((bad - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn same_stream_same_config() {
        let g = build_lattice(4).unwrap();
        let params = params_from_p(0.2).unwrap();
        let a = sample_nishimori(&g, &params, &mut RngStream::new(5, 9).rng());
        let b = sample_nishimori(&g, &params, &mut RngStream::new(5, 9).rng());
        assert_eq!(a, b);
    }

    fn state_for(pf: &PartitionFunction<'_>, params: &NishimoriParams, seed: u64) -> ReplicaState {
        let g = pf.geometry;
        let mut rng = RngStream::new(seed, 0).rng();
        let x = sample_nishimori(g, params, &mut rng);
        let xp = sample_nishimori(g, params, &mut rng);
        let mask = (0..g.n_bonds()).map(|b| b < g.n_bonds() / 2).collect();
        ReplicaState::new(pf, x, xp, mask).unwrap()
    }

    #[test]
    fn log_g_trivial_values() {
        let g = build_lattice(2).unwrap();
        let params = params_from_p(0.15).unwrap();
        let pf = PartitionFunction::new(&g, &params, 8).unwrap();
        let state = state_for(&pf, &params, 1);
        assert_eq!(log_g(&state, 0.0), 0.0);

        let same =
            ReplicaState::new(&pf, state.x.clone(), state.x.clone(), state.mask.clone()).unwrap();
        for lambda in [0.0, 0.3, 1.0] {
            assert_eq!(log_g(&same, lambda), 0.0);
        }

        let hot = params_from_p(0.5).unwrap();
        let pf_hot = PartitionFunction::new(&g, &hot, 8).unwrap();
        let hot_state = state_for(&pf_hot, &params, 2);
        for lambda in [0.0, 0.5, 1.0] {
            assert_eq!(log_g(&hot_state, lambda), 0.0);
        }
    }

    #[test]
    fn zero_lambda_and_zero_beta_always_accept() {
        let g = build_lattice(2).unwrap();
        for (p, lambdas) in [(0.15, vec![0.0]), (0.5, vec![0.0, 0.4, 1.0])] {
            let params = params_from_p(p).unwrap();
            let pf = PartitionFunction::new(&g, &params, 8).unwrap();
            let mut state = state_for(&pf, &params, 3);
            let mut rng = RngStream::new(3, 1).rng();
            for &lambda in &lambdas {
                for step in 0..50 {
                    let which = if step % 2 == 0 {
                        Replica::First
                    } else {
                        Replica::Second
                    };
                    assert!(
                        metropolis_update(&mut state, lambda, &params, &pf, &mut rng, which)
                            .unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn acceptance_is_g_ratio() {
        let old = SwapCache {
            own_first: 10.0,
            own_second: 11.0,
            swapped_second_a: 9.5,
            swapped_first_a: 10.2,
        };
        let new = SwapCache {
            own_first: 10.4,
            own_second: 11.0,
            swapped_second_a: 9.0,
            swapped_first_a: 10.9,
        };
        let lambda = 0.7;
        let g_old = (lambda * 0.5 * (9.5 + 10.2 - 10.0 - 11.0f64)).exp();
        let g_new = (lambda * 0.5 * (9.0 + 10.9 - 10.4 - 11.0f64)).exp();
        let ratio = acceptance_log_ratio(&old, &new, lambda).exp();
        assert!((ratio - g_new / g_old).abs() < 1e-14);
        assert!((ratio.min(1.0) - (g_new / g_old).min(1.0)).abs() < 1e-14);
    }

    #[test]
    fn caches_track_fresh_contractions() {
        let g = build_lattice(3).unwrap();
        let params = params_from_p(0.1).unwrap();
        let pf = PartitionFunction::new(&g, &params, 8).unwrap();
        let mut state = state_for(&pf, &params, 5);
        let mut rng = RngStream::new(5, 1).rng();
        let mut accepted = 0;
        for step in 0..40 {
            let which = if step % 2 == 0 {
                Replica::First
            } else {
                Replica::Second
            };
            accepted +=
                metropolis_update(&mut state, 0.8, &params, &pf, &mut rng, which).unwrap() as usize;
            assert!(state.cache_error(&pf).unwrap() < 1e-10);
        }
        assert!(accepted > 0);
    }

    #[test]
    fn rejects_out_of_range_lambda() {
        let g = build_lattice(1).unwrap();
        let params = params_from_p(0.2).unwrap();
        let pf = PartitionFunction::new(&g, &params, 8).unwrap();
        let mut state = state_for(&pf, &params, 1);
        let mut rng = RngStream::new(0, 0).rng();
        assert!(
            metropolis_update(&mut state, 1.5, &params, &pf, &mut rng, Replica::First).is_err()
        );
    }

    /// Pearson statistic of sampled L=1 configurations against `Z / sum Z`.
    #[test]
    fn zero_lambda_histogram_matches_partition_weights() {
        let g = build_lattice(1).unwrap();
        let p = 0.15;
        let params = params_from_p(p).unwrap();
        let log_z = all_logz(&g, params.beta).unwrap();
        let total: f64 = log_z.iter().map(|v| v.exp()).sum();
        let n = 100_000;
        let mut counts = [0usize; 16];
        let mut rng = RngStream::new(21, 0).rng();
        for _ in 0..n {
            counts[sample_nishimori(&g, &params, &mut rng).to_bits() as usize] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&log_z)
            .map(|(&c, lz)| {
                let expected = n as f64 * lz.exp() / total;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        // 99th percentile of chi-square with 15 degrees of freedom
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    /// Frustrated (odd) versus unfrustrated gauge class of the L=1 ring.
    #[test]
    fn gauge_class_balance_matches_binomial() {
        let g = build_lattice(1).unwrap();
        let p: f64 = 0.2;
        let params = params_from_p(p).unwrap();
        let odd_exact: f64 = [1, 3]
            .iter()
            .map(|&k| {
                let binom = [1.0, 4.0, 6.0, 4.0, 1.0][k];
                binom * p.powi(k as i32) * (1.0 - p).powi(4 - k as i32)
            })
            .sum();
        // enumeration of Z over configurations gives the same class weight
        let log_z = all_logz(&g, params.beta).unwrap();
        let total: f64 = log_z.iter().map(|v| v.exp()).sum();
        let odd_z: f64 = (0..16u32)
            .filter(|b| b.count_ones() % 2 == 1)
            .map(|b| log_z[b as usize].exp())
            .sum::<f64>()
            / total;
        assert!((odd_z - odd_exact).abs() < 1e-12);

        let n = 50_000;
        let mut rng = RngStream::new(8, 0).rng();
        let odd = (0..n)
            .filter(|_| sample_nishimori(&g, &params, &mut rng).n_antiferro() % 2 == 1)
            .count() as f64;
        let sigma = (n as f64 * odd_exact * (1.0 - odd_exact)).sqrt();
        assert!((odd - n as f64 * odd_exact).abs() < 3.0 * sigma);
    }
}
