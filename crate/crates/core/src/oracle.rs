//! Brute-force references for tiny lattices.
//!
//! Spin sums use the bit trick `sum_e x_e z_a z_b = N_e - 2 popcount(x ^ s(z))`,
//! where `s(z)` marks the unsatisfied-by-ferromagnet bonds of spin state `z`.
//! Spin states are walked in Gray-code order so `s(z)` updates with one XOR.

use serde::{Deserialize, Serialize};

use crate::bonds::BondConfig;
use crate::error::{Error, Result};
use crate::lattice::{AnyonPath, LatticeGeometry};
use crate::sampler::params_from_p;

pub const MAX_ENUM_SPINS: usize = 26;
pub const MAX_ENUM_BONDS: usize = 20;

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Bonds touching each spin, as bit masks.
fn incidence_masks(geometry: &LatticeGeometry) -> Vec<u64> {
    let mut masks = vec![0u64; geometry.n_spins()];
    for (e, b) in geometry.bonds().iter().enumerate() {
        masks[b.spins[0]] |= 1 << e;
        masks[b.spins[1]] |= 1 << e;
    }
    masks
}

/// Domain-wall masks `s(z)` for every spin state, with the first spin pinned up.
/// Every mask appears twice in the full sum (global flip), which is accounted
/// for by callers.
fn domain_wall_masks(geometry: &LatticeGeometry) -> Vec<u64> {
    let masks = incidence_masks(geometry);
    let free = geometry.n_spins() - 1;
    let mut out = Vec::with_capacity(1 << free);
    let mut s = 0u64;
    out.push(s);
    for i in 1u64..(1 << free) {
        // Gray code: flip spin (1 + index of lowest set bit of i)
        let v = i.trailing_zeros() as usize + 1;
        s ^= masks[v];
        out.push(s);
    }
    out
}

fn check_enumerable_spins(geometry: &LatticeGeometry) -> Result<()> {
    if geometry.n_spins() > MAX_ENUM_SPINS || geometry.n_bonds() > 64 {
        return Err(Error::TooLarge(format!(
            "{} spins exceeds the enumeration bound of {MAX_ENUM_SPINS}",
            geometry.n_spins()
        )));
    }
    Ok(())
}

fn check_enumerable_bonds(geometry: &LatticeGeometry) -> Result<()> {
    check_enumerable_spins(geometry)?;
    if geometry.n_bonds() > MAX_ENUM_BONDS {
        return Err(Error::TooLarge(format!(
            "{} bonds exceeds the enumeration bound of {MAX_ENUM_BONDS}",
            geometry.n_bonds()
        )));
    }
    Ok(())
}

fn log_z_from_histogram(hist: &[u64], n_bonds: usize, beta: f64) -> f64 {
    log_sum_exp(
        hist.iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (c as f64).ln() + beta * (n_bonds as f64 - 2.0 * k as f64)),
    )
}

/// `log Z[x](beta)` by summing over all `2^{N_v}` spin states.
pub fn exact_logz(geometry: &LatticeGeometry, bonds: &BondConfig, beta: f64) -> Result<f64> {
    check_enumerable_spins(geometry)?;
    bonds.check_matches(geometry)?;
    let n_bonds = geometry.n_bonds();
    let x = bonds.to_bits();
    let masks = incidence_masks(geometry);
    let mut hist = vec![0u64; n_bonds + 1];
    let mut s = 0u64;
    hist[(x ^ s).count_ones() as usize] += 1;
    for i in 1u64..(1 << geometry.n_spins()) {
        s ^= masks[i.trailing_zeros() as usize];
        hist[(x ^ s).count_ones() as usize] += 1;
    }
    Ok(log_z_from_histogram(&hist, n_bonds, beta))
}

/// `log Z` of every bond configuration, indexed by its bit pattern.
pub fn all_logz(geometry: &LatticeGeometry, beta: f64) -> Result<Vec<f64>> {
    check_enumerable_bonds(geometry)?;
    let n_bonds = geometry.n_bonds();
    let walls = domain_wall_masks(geometry);
    let mut hist = vec![0u64; n_bonds + 1];
    Ok((0u64..(1 << n_bonds))
        .map(|x| {
            hist.iter_mut().for_each(|h| *h = 0);
            for &s in &walls {
                hist[(x ^ s).count_ones() as usize] += 2;
            }
            log_z_from_histogram(&hist, n_bonds, beta)
        })
        .collect())
}

fn beta_for(p: f64) -> Result<f64> {
    let params = params_from_p(p)?;
    if params.zero_temperature {
        return Err(Error::InvalidParameter(
            "exact enumeration needs p > 0".into(),
        ));
    }
    Ok(params.beta)
}

/// Normalized state `sum_x sqrt(Z[x]) |x>` on a tiny lattice.
#[derive(Clone, Debug)]
pub struct ExactWavefunction {
    /// Amplitude of every bond configuration, indexed by bit pattern.
    pub amplitudes: Vec<f64>,
    /// `log sum_x Z[x]`.
    pub log_norm: f64,
    pub n_bonds: usize,
    pub size: usize,
}

impl ExactWavefunction {
    pub fn new(geometry: &LatticeGeometry, beta: f64) -> Result<Self> {
        let log_z = all_logz(geometry, beta)?;
        let log_norm = log_sum_exp(log_z.iter().copied());
        let amplitudes = log_z
            .iter()
            .map(|lz| (0.5 * (lz - log_norm)).exp())
            .collect();
        Ok(ExactWavefunction {
            amplitudes,
            log_norm,
            n_bonds: geometry.n_bonds(),
            size: geometry.size(),
        })
    }

    /// Purity of the reduced state on the bonds in `region`, via the Gram matrix.
    pub fn purity(&self, region: &[usize]) -> Result<f64> {
        let mut in_a = vec![false; self.n_bonds];
        for &b in region {
            *in_a
                .get_mut(b)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown bond id {b}")))? = true;
        }
        let a_bonds: Vec<usize> = (0..self.n_bonds).filter(|&b| in_a[b]).collect();
        let b_bonds: Vec<usize> = (0..self.n_bonds).filter(|&b| !in_a[b]).collect();
        let scatter = |bits: usize, which: &[usize]| -> usize {
            which
                .iter()
                .enumerate()
                .fold(0, |acc, (i, &b)| acc | ((bits >> i & 1) << b))
        };
        let (na, nb) = (1usize << a_bonds.len(), 1usize << b_bonds.len());
        let mut psi = nalgebra::DMatrix::zeros(na, nb);
        for ia in 0..na {
            let xa = scatter(ia, &a_bonds);
            for ib in 0..nb {
                psi[(ia, ib)] = self.amplitudes[xa | scatter(ib, &b_bonds)];
            }
        }
        // rho_A = psi psi^T and psi^T psi share their nonzero spectrum
        let gram = if na <= nb {
            &psi * psi.transpose()
        } else {
            psi.transpose() * &psi
        };
        Ok(gram.iter().map(|v| v * v).sum())
    }
}

/// Exact second Renyi entropy of the bonds in `region` at flip probability `p`.
pub fn exact_renyi2(geometry: &LatticeGeometry, region: &[usize], p: f64) -> Result<f64> {
    let beta = beta_for(p)?;
    let psi = ExactWavefunction::new(geometry, beta)?;
    Ok(-psi.purity(region)?.ln())
}

/// Purity from the replica swap average over the exact joint distribution
/// `Z[x] Z[x'] / (sum Z)^2`. Costs `4^{N_e}`.
pub fn swap_average_purity(geometry: &LatticeGeometry, region: &[usize], p: f64) -> Result<f64> {
    let beta = beta_for(p)?;
    let log_z = all_logz(geometry, beta)?;
    let log_norm = log_sum_exp(log_z.iter().copied());
    let a_mask: u64 = region.iter().fold(0, |m, &b| m | 1 << b);
    let n = log_z.len() as u64;
    let mut total = 0.0;
    for x in 0..n {
        for xp in 0..n {
            let swapped_1 = (xp & a_mask) | (x & !a_mask);
            let swapped_2 = (x & a_mask) | (xp & !a_mask);
            let weight = (log_z[x as usize] + log_z[xp as usize] - 2.0 * log_norm).exp();
            let ratio = 0.5
                * (log_z[swapped_1 as usize] + log_z[swapped_2 as usize]
                    - log_z[x as usize]
                    - log_z[xp as usize]);
            total += weight * ratio.exp();
        }
    }
    Ok(total)
}

/// Exact `<T_l> = sum_x sqrt(Z[x] Z[x_l]) / sum_x Z[x]`.
pub fn exact_t_l(geometry: &LatticeGeometry, path: &AnyonPath, p: f64) -> Result<f64> {
    let beta = beta_for(p)?;
    let log_z = all_logz(geometry, beta)?;
    let log_norm = log_sum_exp(log_z.iter().copied());
    let flip: u64 = path.bonds.iter().fold(0, |m, &b| m | 1 << b);
    Ok((0..log_z.len())
        .map(|x| (0.5 * (log_z[x] + log_z[x ^ flip as usize]) - log_norm).exp())
        .sum())
}

/// Same quantity as [`exact_t_l`], written as the `Z`-weighted average of
/// `sqrt(Z[x_l]/Z[x])` and evaluated with independent per-configuration spin
/// sums in reverse configuration order.
pub fn exact_t_l_weighted(geometry: &LatticeGeometry, path: &AnyonPath, p: f64) -> Result<f64> {
    let beta = beta_for(p)?;
    check_enumerable_bonds(geometry)?;
    let n_bonds = geometry.n_bonds();
    let mut numerator = Vec::new();
    let mut weights = Vec::new();
    for bits in (0u64..(1 << n_bonds)).rev() {
        let x = BondConfig::from_bits(bits, n_bonds);
        let lz = exact_logz(geometry, &x, beta)?;
        let lz_flip = exact_logz(geometry, &x.flipped(&path.bonds)?, beta)?;
        weights.push(lz);
        numerator.push(lz + 0.5 * (lz_flip - lz));
    }
    Ok((log_sum_exp(numerator) - log_sum_exp(weights)).exp())
}

/// Golden reference values written to and read from JSON fixtures.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GoldenFixture {
    pub size: usize,
    pub p: f64,
    pub beta: f64,
    pub region: Vec<usize>,
    pub renyi2: f64,
    pub path: Vec<usize>,
    pub t_l: f64,
}

pub fn golden_fixture(
    geometry: &LatticeGeometry,
    region: &[usize],
    path: &AnyonPath,
    p: f64,
) -> Result<GoldenFixture> {
    Ok(GoldenFixture {
        size: geometry.size(),
        p,
        beta: beta_for(p)?,
        region: region.to_vec(),
        renyi2: exact_renyi2(geometry, region, p)?,
        path: path.bonds.clone(),
        t_l: exact_t_l(geometry, path, p)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{anyon_path, build_lattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l1_ring_partition_function() {
        // the L=1 lattice is a ring of 4 spins
        let g = build_lattice(1).unwrap();
        let beta = 0.7f64;
        let ferro = exact_logz(&g, &BondConfig::ferromagnetic(4), beta).unwrap();
        let c = beta.cosh();
        let s = beta.sinh();
        // transfer-matrix result for a ring: 2^4 (c^4 + s^4)
        assert!((ferro - (16.0 * (c.powi(4) + s.powi(4))).ln()).abs() < 1e-12);
        let frustrated = exact_logz(&g, &BondConfig::from_bits(1, 4), beta).unwrap();
        assert!((frustrated - (16.0 * (c.powi(4) - s.powi(4))).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_bond_is_four_cosh() {
        let beta: f64 = 0.3;
        let z: f64 = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .map(|(a, b): &(f64, f64)| (beta * a * b).exp())
            .sum();
        assert!((z - 4.0 * beta.cosh()).abs() < 1e-14);
    }

    #[test]
    fn zero_beta_and_gauge() {
        let g = build_lattice(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = BondConfig::from_bits(rng.gen::<u64>() & 0xffff, 16);
        assert!((exact_logz(&g, &x, 0.0).unwrap() - 12.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let sigma: Vec<i8> = (0..g.n_spins())
            .map(|_| if rng.gen() { 1 } else { -1 })
            .collect();
        let y = x.gauge_transform(&g, &sigma).unwrap();
        let a = exact_logz(&g, &x, 1.1).unwrap();
        let b = exact_logz(&g, &y, 1.1).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn too_large() {
        let g = build_lattice(4).unwrap();
        let x = BondConfig::ferromagnetic(g.n_bonds());
        assert!(matches!(exact_logz(&g, &x, 1.0), Err(Error::TooLarge(_))));
        let g3 = build_lattice(3).unwrap();
        assert!(matches!(
            exact_renyi2(&g3, &[0], 0.1),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn all_logz_agrees_with_single() {
        let g = build_lattice(2).unwrap();
        let table = all_logz(&g, 0.9).unwrap();
        for bits in [0u64, 1, 0x1234, 0xffff, 0x8001] {
            let single = exact_logz(&g, &BondConfig::from_bits(bits, 16), 0.9).unwrap();
            assert!((table[bits as usize] - single).abs() < 1e-12 * single.abs());
        }
    }

    #[test]
    fn wavefunction_normalized() {
        let g = build_lattice(2).unwrap();
        let psi = ExactWavefunction::new(&g, 0.6).unwrap();
        let norm: f64 = psi.amplitudes.iter().map(|a| a * a).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(psi.amplitudes.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn renyi_trivial_cases() {
        let g = build_lattice(2).unwrap();
        let all: Vec<usize> = (0..16).collect();
        assert!(exact_renyi2(&g, &[], 0.1).unwrap().abs() < 1e-12);
        assert!(exact_renyi2(&g, &all, 0.1).unwrap().abs() < 1e-12);
        assert!(exact_renyi2(&g, &all[..8], 0.5).unwrap().abs() < 1e-12);
        let s = exact_renyi2(&g, &all[..8], 0.1).unwrap();
        assert!(s > 0.1, "{s}");
    }

    #[test]
    fn swap_average_equals_gram_purity() {
        let g = build_lattice(1).unwrap();
        for p in [0.05, 0.15, 0.3] {
            for region in [vec![0], vec![0, 1], vec![1, 3], vec![0, 2, 3]] {
                let gram = ExactWavefunction::new(&g, params_from_p(p).unwrap().beta)
                    .unwrap()
                    .purity(&region)
                    .unwrap();
                let swap = swap_average_purity(&g, &region, p).unwrap();
                assert!(
                    (gram - swap).abs() < 1e-10,
                    "p={p} region={region:?}: {gram} vs {swap}"
                );
            }
        }
    }

    #[test]
    fn t_l_trivial_cases() {
        let g = build_lattice(2).unwrap();
        let empty = anyon_path(&g, 0).unwrap();
        assert!((exact_t_l(&g, &empty, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let path = anyon_path(&g, 2).unwrap();
        assert!((exact_t_l(&g, &path, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_l_two_orderings_agree() {
        let g = build_lattice(1).unwrap();
        let path = anyon_path(&g, 1).unwrap();
        let a = exact_t_l(&g, &path, 0.15).unwrap();
        let b = exact_t_l_weighted(&g, &path, 0.15).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!(a > 0.0 && a < 1.0);
    }
}
