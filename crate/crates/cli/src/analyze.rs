use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tmc_core::analysis::{
    bootstrap_collapse, bootstrap_crossings, collapse_fit, crossing_drift, doubling_pairs,
    find_crossings, rescaled_points, tee_collapse, write_rescaled_csv, AnalysisReport,
    BootstrapConfig, REPORT_SCHEMA_VERSION,
};
use tmc_core::observables::read_rows;
use tmc_core::{RngStream, ScalingSeries};

use crate::config::AnalysisConfig;
use crate::writer::atomic_write;

pub struct AnalysisOutput {
    pub report: AnalysisReport,
    pub report_path: PathBuf,
    pub rescaled_path: PathBuf,
}

/// `gamma` gets the TEE collapse (no prefactor); anything else the `L^eta`
/// collapse, bootstrapped when `bootstrap_repeats >= 2`.
pub fn analyze(
    input: &Path,
    cfg: &AnalysisConfig,
    seed: u64,
    out_dir: &Path,
) -> anyhow::Result<AnalysisOutput> {
    let rows = read_rows(input).with_context(|| format!("reading {}", input.display()))?;
    let series = ScalingSeries::from_rows(&rows, &cfg.observable)?;
    let tee = cfg.observable == "gamma";
    let eta = if tee { 0.0 } else { cfg.eta };

    let mut crossings = Vec::new();
    let mut crossing_errors = BTreeMap::new();
    for pair in doubling_pairs(&series) {
        match find_crossings(&series, eta, &[pair]) {
            Ok(c) => crossings.extend(c),
            Err(e) => {
                crossing_errors.insert(format!("{}-{}", pair.0, pair.1), e.to_string());
            }
        }
    }

    let mut rng = RngStream::new(seed, 0).rng();
    let fit = if tee {
        tee_collapse(
            &series,
            cfg.nu_range,
            cfg.t_c,
            cfg.degree,
            &mut rng,
            cfg.n_restarts,
        )?
    } else if cfg.bootstrap_repeats >= 2 {
        let config = BootstrapConfig {
            eta_range: cfg.eta_range.unwrap_or((eta, eta)),
            n_repeats: cfg.bootstrap_repeats,
            degree: cfg.degree,
            n_restarts: 2,
            seed,
            max_failure_fraction: cfg.max_failure_fraction,
        };
        bootstrap_collapse(&series, &config)?
    } else {
        collapse_fit(&series, eta, cfg.degree, &mut rng, cfg.n_restarts)?
    };

    let found: Vec<(usize, usize)> = crossings.iter().map(|c| (c.size, c.partner)).collect();
    let crossing_spread = if cfg.bootstrap_repeats >= 2 && !found.is_empty() {
        let range = if tee {
            (0.0, 0.0)
        } else {
            cfg.eta_range.unwrap_or((eta, eta))
        };
        bootstrap_crossings(&series, range, &found, cfg.bootstrap_repeats, seed)?
    } else {
        Vec::new()
    };

    let points = rescaled_points(&series, &fit);
    let report = AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        observable: cfg.observable.clone(),
        crossing_drift: crossing_drift(&crossings),
        crossings,
        crossing_errors,
        crossing_spread,
        fit,
        points,
    };
    let report_path = out_dir.join(format!("analysis_{}.json", cfg.observable));
    let rescaled_path = out_dir.join(format!("rescaled_{}.csv", cfg.observable));
    atomic_write(&report_path, &serde_json::to_vec_pretty(&report)?)?;
    let mut csv = Vec::new();
    write_rescaled_csv(&mut csv, &report.points)?;
    atomic_write(&rescaled_path, &csv)?;
    Ok(AnalysisOutput {
        report,
        report_path,
        rescaled_path,
    })
}

pub fn summarize(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let f = &report.fit;
    s.push_str(&format!(
        "{}: T_c = {:.5}  nu = {:.4}  eta = {:.4}  chi2 = {:.3e}  degree = {}\n",
        report.observable, f.t_c, f.nu, f.eta, f.loss, f.degree
    ));
    if let Some(b) = &f.bootstrap {
        s.push_str(&format!(
            "  bootstrap ({} repeats, {} failed): T_c = {:.5} +- {:.5}  nu = {:.4} +- {:.4}\n",
            b.n_repeats, b.n_failed, b.t_c.mean, b.t_c.std, b.nu.mean, b.nu.std
        ));
    }
    for c in &report.crossings {
        s.push_str(&format!(
            "  crossing L={}/{}: T* = {:.5}  y* = {:.5}\n",
            c.size, c.partner, c.temperature, c.value
        ));
    }
    for c in &report.crossing_spread {
        s.push_str(&format!(
            "  crossing L={}/{} bootstrap: T* = {:.5} +- {:.5}\n",
            c.size, c.partner, c.temperature.mean, c.temperature.std
        ));
    }
    for (pair, err) in &report.crossing_errors {
        s.push_str(&format!("  crossing {pair}: {err}\n"));
    }
    if let Some(d) = report.crossing_drift {
        s.push_str(&format!("  crossing drift dT*/d(1/L) = {d:.4}\n"));
    }
    s
}
