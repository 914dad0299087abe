//! Anyon-condensation order parameter and the Levin-Wen combination of Renyi
//! entropies.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jarzynski::EntropyEstimate;
use crate::lattice::{AnyonPath, LatticeGeometry, RegionUnion};
use crate::rng::RngStream;
use crate::sampler::{sample_nishimori, NishimoriParams};
use crate::tn::{build_network, contract_logz, contract_logz_flipped};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnyonResult {
    pub value: f64,
    pub error: f64,
    pub n_samples: usize,
    /// Samples whose flipped partition function fell below contraction resolution; counted as 0.
    #[serde(default)]
    pub n_unresolved: usize,
    pub path: String,
    pub size: usize,
    pub temperature: f64,
    pub p: f64,
}

/// `<T_l>` as the `Z`-weighted average of `sqrt(Z[x_l] / Z[x])`.
///
/// Configurations are drawn sequentially from `stream`; contractions run in
/// parallel and are reduced in draw order.
pub fn measure_anyon(
    geometry: &LatticeGeometry,
    path: &AnyonPath,
    params: &NishimoriParams,
    n_samples: usize,
    chi: usize,
    stream: RngStream,
) -> Result<AnyonResult> {
    let samples = anyon_samples(geometry, path, params, n_samples, chi, stream)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(AnyonResult {
        value: mean,
        error: (var / n).sqrt(),
        n_samples,
        n_unresolved: samples.iter().filter(|&&s| s == 0.0).count(),
        path: path.describe(),
        size: geometry.size(),
        temperature: params.temperature,
        p: params.p,
    })
}

/// Per-sample values `exp((log Z[x_l] - log Z[x]) / 2)`.
pub fn anyon_samples(
    geometry: &LatticeGeometry,
    path: &AnyonPath,
    params: &NishimoriParams,
    n_samples: usize,
    chi: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if n_samples < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_samples,
        });
    }
    if params.zero_temperature {
        return Err(Error::InvalidParameter("anyon sampling needs p > 0".into()));
    }
    let mut rng = stream.rng();
    let configs: Vec<_> = (0..n_samples)
        .map(|_| sample_nishimori(geometry, params, &mut rng))
        .collect();
    configs
        .par_iter()
        .map(|x| {
            let grid = build_network(geometry, x, params.beta)?;
            let base = contract_logz(&grid, chi)?;
            match contract_logz_flipped(&grid, &path.bonds, chi) {
                Ok(flipped) => Ok((0.5 * (flipped - base)).exp()),
                // Z[x_l] / Z[x] is below the truncation error of the contraction.
                Err(Error::BelowResolution(_)) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Levin-Wen `gamma = S2(AC) + S2(BC) - S2(C) - S2(ABC)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeeResult {
    pub s2_ac: f64,
    pub s2_bc: f64,
    pub s2_c: f64,
    pub s2_abc: f64,
    pub err_ac: f64,
    pub err_bc: f64,
    pub err_c: f64,
    pub err_abc: f64,
    pub gamma: f64,
    pub gamma_error: f64,
    pub size: usize,
    pub temperature: f64,
    pub p: f64,
    pub n_steps: usize,
}

/// Assembles `gamma` from one entropy estimate per region union; errors add in
/// quadrature.
pub fn compute_tee(runs: &[EntropyEstimate]) -> Result<TeeResult> {
    let find = |union: RegionUnion| -> Result<&EntropyEstimate> {
        let mut hits = runs.iter().filter(|r| r.region == union.label());
        let hit = hits.next().ok_or_else(|| {
            Error::InconsistentRuns(format!("missing S2 run for region {}", union.label()))
        })?;
        if hits.next().is_some() {
            return Err(Error::InconsistentRuns(format!(
                "more than one S2 run for region {}",
                union.label()
            )));
        }
        Ok(hit)
    };
    let ac = find(RegionUnion::AC)?;
    let bc = find(RegionUnion::BC)?;
    let c = find(RegionUnion::C)?;
    let abc = find(RegionUnion::ABC)?;
    for r in [bc, c, abc] {
        if r.size != ac.size || r.p != ac.p || r.n_steps != ac.n_steps {
            return Err(Error::InconsistentRuns(format!(
                "region {} has (L={}, p={}, n_steps={}), region AC has (L={}, p={}, n_steps={})",
                r.region, r.size, r.p, r.n_steps, ac.size, ac.p, ac.n_steps
            )));
        }
    }
    let gamma = ac.s2 + bc.s2 - c.s2 - abc.s2;
    let gamma_error = [ac, bc, c, abc]
        .iter()
        .map(|r| r.error.powi(2))
        .sum::<f64>()
        .sqrt();
    let beta = if ac.p == 0.5 {
        0.0
    } else {
        (1.0 - 2.0 * ac.p).atanh()
    };
    Ok(TeeResult {
        s2_ac: ac.s2,
        s2_bc: bc.s2,
        s2_c: c.s2,
        s2_abc: abc.s2,
        err_ac: ac.error,
        err_bc: bc.error,
        err_c: c.error,
        err_abc: abc.error,
        gamma,
        gamma_error,
        size: ac.size,
        temperature: 1.0 / beta,
        p: ac.p,
        n_steps: ac.n_steps,
    })
}

/// One line of the observables table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub observable: String,
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub p: f64,
    pub value: f64,
    pub error: f64,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub chi: usize,
    pub seed: u64,
    pub code_version: String,
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "observable",
    "L",
    "T",
    "p",
    "value",
    "error",
    "n_steps",
    "n_trajectories",
    "chi",
    "seed",
    "code_version",
];

/// Appends rows to a CSV table, writing the header when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    write_rows(file, rows, fresh)
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow], header: bool) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    if header {
        writer.write_record(RESULT_COLUMNS)?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}
