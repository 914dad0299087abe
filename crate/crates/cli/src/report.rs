use std::fmt::Write;
use std::path::Path;

use anyhow::Context;
use tmc_core::analysis::AnalysisReport;
use tmc_core::observables::read_rows;

use crate::analyze::summarize;
use crate::campaign::{EnsembleSummary, Manifest};

/// Human-readable summary of a campaign directory.
pub fn report(dir: &Path) -> anyhow::Result<String> {
    let mut out = String::new();
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        let m = Manifest::read(&manifest_path)?;
        writeln!(
            out,
            "campaign {} ({:?}), code {}, status {}, {} tasks, {:.1} s",
            m.config.name(),
            m.config.mode,
            m.code_version,
            m.status,
            m.tasks.len(),
            m.wall_time_s
        )?;
        let pending: Vec<_> = m.tasks.iter().filter(|t| t.done < t.total).collect();
        for t in pending {
            writeln!(out, "  pending {}: {}/{}", t.label, t.done, t.total)?;
        }
    }

    let results = dir.join("results.csv");
    if results.exists() {
        let rows = read_rows(&results).with_context(|| format!("reading {}", results.display()))?;
        writeln!(
            out,
            "{:<10} {:>4} {:>9} {:>9} {:>12} {:>10}",
            "observable", "L", "T", "p", "value", "error"
        )?;
        for r in &rows {
            writeln!(
                out,
                "{:<10} {:>4} {:>9.4} {:>9.5} {:>12.6} {:>10.2e}",
                r.observable, r.size, r.temperature, r.p, r.value, r.error
            )?;
        }
    }

    let entropy = dir.join("entropy.json");
    if entropy.exists() {
        let ensembles: Vec<EnsembleSummary> = serde_json::from_slice(&std::fs::read(&entropy)?)?;
        let bad: Vec<_> = ensembles
            .iter()
            .filter(|e| !e.jensen_ok)
            .map(|e| e.label.as_str())
            .collect();
        if bad.is_empty() {
            writeln!(
                out,
                "Jensen bound holds on all {} ensembles",
                ensembles.len()
            )?;
        } else {
            writeln!(out, "Jensen bound violated on: {}", bad.join(", "))?;
        }
    }

    let mut reports: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("analysis_") && n.ends_with(".json"))
        })
        .collect();
    reports.sort();
    for path in reports {
        let r: AnalysisReport = serde_json::from_slice(&std::fs::read(&path)?)?;
        out.push_str(&summarize(&r));
    }
    if out.is_empty() {
        anyhow::bail!("{} contains no campaign output", dir.display());
    }
    Ok(out)
}
