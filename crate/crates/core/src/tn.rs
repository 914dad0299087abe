//! Tensor network for the bond-disordered Ising partition function and its
//! boundary-MPS contraction.
//!
//! Node `(i, j)` carries a tensor over its legs `(u, r, d, l)`, each of
//! dimension 2 (dimension 1 where the leg leaves the system). Rows are absorbed
//! top to bottom into a boundary MPS whose physical legs are the down legs of the
//! last absorbed row. Whenever a virtual dimension exceeds `chi` the MPS is
//! brought to left-canonical form with QR and truncated right to left with SVD.
//! All norms are factored into a running log-scale.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bonds::BondConfig;
use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;

/// Default boundary-MPS bond dimension.
pub const DEFAULT_CHI: usize = 8;

/// Relative singular-value cutoff below which directions are dropped even when
/// fewer than `chi` are kept.
const SV_CUTOFF: f64 = 1e-14;

/// Dense weights of one node, indexed `[u][r][d][l]`, value index 0 meaning spin +1.
#[derive(Clone, Debug)]
pub struct NodeTensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl NodeTensor {
    fn build(geometry: &LatticeGeometry, node: usize, bonds: &BondConfig, beta: f64) -> Self {
        let legs = geometry.node_legs(node);
        let dims = legs.map(|leg| if leg.is_some() { 2 } else { 1 });
        let owned: Vec<(usize, usize, f64)> = geometry
            .node_bonds(node)
            .iter()
            .map(|&b| {
                let bond = geometry.bond(b);
                (
                    bond.legs[0] as usize,
                    bond.legs[1] as usize,
                    bonds.get(b) as f64,
                )
            })
            .collect();
        let [du, dr, dd, dl] = dims;
        let mut data = Vec::with_capacity(du * dr * dd * dl);
        let sign = |v: usize| if v == 0 { 1.0 } else { -1.0 };
        for u in 0..du {
            for r in 0..dr {
                for d in 0..dd {
                    for l in 0..dl {
                        let vals = [u, r, d, l];
                        let energy: f64 = owned
                            .iter()
                            .map(|&(a, b, x)| x * sign(vals[a]) * sign(vals[b]))
                            .sum();
                        data.push((beta * energy).exp());
                    }
                }
            }
        }
        NodeTensor { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// Entry at leg values `[u, r, d, l]` (0 for spin +1, 1 for spin -1).
    pub fn entry(&self, idx: [usize; 4]) -> f64 {
        let [_, dr, dd, dl] = self.dims;
        self.data[((idx[0] * dr + idx[1]) * dd + idx[2]) * dl + idx[3]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Tensor network of `Z[x](beta)` for one bond configuration.
#[derive(Clone, Debug)]
pub struct TensorGrid<'g> {
    geometry: &'g LatticeGeometry,
    beta: f64,
    bonds: BondConfig,
    tensors: Vec<NodeTensor>,
}

pub fn build_network<'g>(
    geometry: &'g LatticeGeometry,
    bonds: &BondConfig,
    beta: f64,
) -> Result<TensorGrid<'g>> {
    bonds.check_matches(geometry)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "inverse temperature must be finite and nonnegative, got {beta}"
        )));
    }
    let tensors = (0..geometry.n_nodes())
        .map(|n| NodeTensor::build(geometry, n, bonds, beta))
        .collect();
    Ok(TensorGrid {
        geometry,
        beta,
        bonds: bonds.clone(),
        tensors,
    })
}

impl<'g> TensorGrid<'g> {
    pub fn geometry(&self) -> &'g LatticeGeometry {
        self.geometry
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bonds(&self) -> &BondConfig {
        &self.bonds
    }

    pub fn tensor(&self, node: usize) -> &NodeTensor {
        &self.tensors[node]
    }
}

/// Singular values seen at one truncation step.
#[derive(Clone, Debug, Serialize)]
pub struct TruncationRecord {
    pub row: usize,
    /// Virtual bond between sites `bond - 1` and `bond`.
    pub bond: usize,
    pub singular_values: Vec<f64>,
    pub kept: usize,
}

/// One MPS site tensor, indexed `[left][physical][right]`.
#[derive(Clone, Debug)]
struct Core {
    dl: usize,
    dp: usize,
    dr: usize,
    data: Vec<f64>,
}

impl Core {
    fn at(&self, a: usize, p: usize, b: usize) -> f64 {
        self.data[(a * self.dp + p) * self.dr + b]
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Boundary MPS with a log-scale accumulator.
#[derive(Clone, Debug)]
pub struct BoundaryMps {
    cores: Vec<Core>,
    log_scale: f64,
}

impl BoundaryMps {
    fn from_top_row(tensors: &[&NodeTensor]) -> Self {
        let cores = tensors
            .iter()
            .map(|t| {
                let [du, dr, dd, dl] = t.dims;
                debug_assert_eq!(du, 1);
                let mut data = vec![0.0; dl * dd * dr];
                for l in 0..dl {
                    for d in 0..dd {
                        for r in 0..dr {
                            data[(l * dd + d) * dr + r] = t.entry([0, r, d, l]);
                        }
                    }
                }
                Core {
                    dl,
                    dp: dd,
                    dr,
                    data,
                }
            })
            .collect();
        let mut mps = BoundaryMps {
            cores,
            log_scale: 0.0,
        };
        mps.rescale_cores();
        mps
    }

    /// Largest virtual dimension.
    pub fn max_bond(&self) -> usize {
        self.cores.iter().map(|c| c.dr).max().unwrap_or(1)
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| c.dr)
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.log_scale.is_finite()
            && self
                .cores
                .iter()
                .all(|c| c.data.iter().all(|v| v.is_finite()))
    }

    fn rescale_cores(&mut self) {
        for core in &mut self.cores {
            let m = core.max_abs();
            if m > 0.0 && m.is_finite() {
                core.scale(1.0 / m);
                self.log_scale += m.ln();
            }
        }
    }

    /// Contracts one row of node tensors into the boundary.
    fn absorb(&mut self, row: &[&NodeTensor]) {
        for (core, t) in self.cores.iter_mut().zip(row) {
            let [du, tr, td, tl] = t.dims;
            debug_assert_eq!(core.dp, du);
            let (ma, mb) = (core.dl, core.dr);
            let (nl, nr) = (ma * tl, mb * tr);
            let mut data = vec![0.0; nl * td * nr];
            for a in 0..ma {
                for u in 0..du {
                    for b in 0..mb {
                        let m = core.at(a, u, b);
                        if m == 0.0 {
                            continue;
                        }
                        for l in 0..tl {
                            for d in 0..td {
                                for r in 0..tr {
                                    let w = t.data[((u * tr + r) * td + d) * tl + l];
                                    data[((a * tl + l) * td + d) * nr + b * tr + r] += m * w;
                                }
                            }
                        }
                    }
                }
            }
            *core = Core {
                dl: nl,
                dp: td,
                dr: nr,
                data,
            };
        }
    }

    /// Left-canonicalizes with QR, then truncates right to left with SVD.
    fn compress(&mut self, chi: usize, row: usize, trace: &mut Option<&mut Vec<TruncationRecord>>) {
        let n = self.cores.len();
        for j in 0..n - 1 {
            let core = &self.cores[j];
            let rows = core.dl * core.dp;
            let mat = DMatrix::from_row_slice(rows, core.dr, &core.data);
            let qr = mat.qr();
            let q = qr.q();
            let mut r = qr.r();
            let k = q.ncols();
            let m = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 {
                r /= m;
                self.log_scale += m.ln();
            }
            self.cores[j] = Core {
                dl: core.dl,
                dp: core.dp,
                dr: k,
                data: row_major(&q),
            };
            let next = &self.cores[j + 1];
            let next_mat = DMatrix::from_row_slice(next.dl, next.dp * next.dr, &next.data);
            let merged = r * next_mat;
            self.cores[j + 1] = Core {
                dl: k,
                dp: next.dp,
                dr: next.dr,
                data: row_major(&merged),
            };
        }

        for j in (1..n).rev() {
            let core = &self.cores[j];
            let mat = DMatrix::from_row_slice(core.dl, core.dp * core.dr, &core.data);
            let svd = mat.svd(true, true);
            let u = svd.u.expect("requested U");
            let v_t = svd.v_t.expect("requested V^T");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
            let s_max = s.first().copied().unwrap_or(0.0);
            let keep = s
                .iter()
                .take(chi)
                .take_while(|&&v| v > SV_CUTOFF * s_max)
                .count()
                .max(1);
            if let Some(sink) = trace.as_deref_mut() {
                sink.push(TruncationRecord {
                    row,
                    bond: j,
                    singular_values: s.clone(),
                    kept: keep,
                });
            }

            let cols = core.dp * core.dr;
            let mut right = vec![0.0; keep * cols];
            for (kk, &src) in order.iter().take(keep).enumerate() {
                for c in 0..cols {
                    right[kk * cols + c] = v_t[(src, c)];
                }
            }
            let (dp, dr) = (core.dp, core.dr);
            self.cores[j] = Core {
                dl: keep,
                dp,
                dr,
                data: right,
            };

            // absorb U * S into the left neighbour
            let mut us = DMatrix::zeros(u.nrows(), keep);
            for (kk, &src) in order.iter().take(keep).enumerate() {
                for r in 0..u.nrows() {
                    us[(r, kk)] = u[(r, src)] * svd.singular_values[src];
                }
            }
            let prev = &self.cores[j - 1];
            let prev_mat = DMatrix::from_row_slice(prev.dl * prev.dp, prev.dr, &prev.data);
            let merged = prev_mat * us;
            self.cores[j - 1] = Core {
                dl: prev.dl,
                dp: prev.dp,
                dr: keep,
                data: row_major(&merged),
            };
        }

        let first = &mut self.cores[0];
        let norm = first.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            first.scale(1.0 / norm);
            self.log_scale += norm.ln();
        }
    }

    /// Contracts a boundary whose physical legs are all trivial.
    fn close(&self) -> Result<f64> {
        let mut v = vec![1.0];
        let mut log_scale = self.log_scale;
        for core in &self.cores {
            debug_assert_eq!(core.dp, 1);
            debug_assert_eq!(core.dl, v.len());
            let mut next = vec![0.0; core.dr];
            for (a, &va) in v.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += va * core.data[a * core.dr + b];
                }
            }
            let m = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::NumericalOverflow(format!(
                    "boundary vector collapsed (max {m})"
                )));
            }
            next.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
            v = next;
        }
        let value = v[0];
        if !log_scale.is_finite() || !value.is_finite() {
            return Err(Error::NumericalOverflow(format!(
                "final contraction value {value} with log-scale {log_scale}"
            )));
        }
        // A sum of positive weights can only come out non-positive through truncation error.
        if value <= 0.0 {
            return Err(Error::BelowResolution(format!(
                "final contraction value {value} with log-scale {log_scale}"
            )));
        }
        Ok(log_scale + value.ln())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn contract_tensors(
    geometry: &LatticeGeometry,
    tensors: &[&NodeTensor],
    chi: usize,
    mut trace: Option<&mut Vec<TruncationRecord>>,
) -> Result<f64> {
    if chi == 0 {
        return Err(Error::InvalidParameter(
            "bond dimension chi must be at least 1".into(),
        ));
    }
    let side = geometry.side();
    let mut mps = BoundaryMps::from_top_row(&tensors[..side]);
    for row in 1..side {
        mps.absorb(&tensors[row * side..(row + 1) * side]);
        if row + 1 < side {
            if mps.max_bond() > chi {
                mps.compress(chi, row, &mut trace);
            }
            mps.rescale_cores();
        }
        if !mps.is_finite() {
            return Err(Error::NumericalOverflow(format!(
                "non-finite boundary after row {row}"
            )));
        }
    }
    mps.close()
}

/// `log Z` of the network, contracted with boundary bond dimension at most `chi`.
pub fn contract_logz(grid: &TensorGrid<'_>, chi: usize) -> Result<f64> {
    if grid.beta == 0.0 {
        return Ok(grid.geometry.n_spins() as f64 * std::f64::consts::LN_2);
    }
    let refs: Vec<&NodeTensor> = grid.tensors.iter().collect();
    contract_tensors(grid.geometry, &refs, chi, None)
}

/// Same as [`contract_logz`] while recording every singular-value spectrum.
pub fn contract_logz_traced(
    grid: &TensorGrid<'_>,
    chi: usize,
    trace: &mut Vec<TruncationRecord>,
) -> Result<f64> {
    if grid.beta == 0.0 {
        return Ok(grid.geometry.n_spins() as f64 * std::f64::consts::LN_2);
    }
    let refs: Vec<&NodeTensor> = grid.tensors.iter().collect();
    contract_tensors(grid.geometry, &refs, chi, Some(trace))
}

/// `log Z` with the sign of every bond in `flips` negated; `grid` is left untouched.
pub fn contract_logz_flipped(grid: &TensorGrid<'_>, flips: &[usize], chi: usize) -> Result<f64> {
    let flipped = grid.bonds.flipped(flips)?;
    if grid.beta == 0.0 {
        return Ok(grid.geometry.n_spins() as f64 * std::f64::consts::LN_2);
    }
    let mut owners: Vec<usize> = flips.iter().map(|&b| grid.geometry.bond(b).owner).collect();
    owners.sort_unstable();
    owners.dedup();
    let rebuilt: Vec<(usize, NodeTensor)> = owners
        .into_iter()
        .map(|n| (n, NodeTensor::build(grid.geometry, n, &flipped, grid.beta)))
        .collect();
    let refs: Vec<&NodeTensor> = grid
        .tensors
        .iter()
        .enumerate()
        .map(|(n, t)| rebuilt.iter().find(|(m, _)| *m == n).map_or(t, |(_, r)| r))
        .collect();
    contract_tensors(grid.geometry, &refs, chi, None)
}

/// Convenience: build and contract in one call.
pub fn log_partition(
    geometry: &LatticeGeometry,
    bonds: &BondConfig,
    beta: f64,
    chi: usize,
) -> Result<f64> {
    contract_logz(&build_network(geometry, bonds, beta)?, chi)
}

/// Writes truncation records as JSON lines.
pub fn write_spectra<W: Write>(mut out: W, records: &[TruncationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
