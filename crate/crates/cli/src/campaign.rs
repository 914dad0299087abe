//! Runs a campaign over its `(L, T)` grid, resuming whatever is already on disk.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tmc_core::jarzynski::{
    estimate_entropy, jensen_holds, EntropyEstimate, Trajectory, TrajectoryCheckpoint,
    TrajectoryConfig, WorkRecord,
};
use tmc_core::lattice::{anyon_path, default_path_length, levin_wen_regions, LatticeGeometry};
use tmc_core::observables::{compute_tee, measure_anyon, write_rows, AnyonResult, ResultRow};
use tmc_core::{build_lattice, RngStream};

use crate::config::{CampaignConfig, GridPoint, Mode, RegionSpec, UsageError};
use crate::writer::{atomic_write, Writer, WriterHandle};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("TMC_CODE_VERSION");

/// When to stop early and leave checkpoints behind.
#[derive(Debug, Default)]
pub struct HaltPolicy {
    pub deadline: Option<Instant>,
    pub after_checkpoints: Option<usize>,
    checkpoints: AtomicUsize,
    halted: AtomicBool,
}

impl HaltPolicy {
    pub fn new(time_budget: Option<Duration>, after_checkpoints: Option<usize>) -> Self {
        HaltPolicy {
            deadline: time_budget.map(|d| Instant::now() + d),
            after_checkpoints,
            ..Default::default()
        }
    }

    fn halted(&self) -> bool {
        if self.halted.load(Ordering::SeqCst) {
            return true;
        }
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.halted.store(true, Ordering::SeqCst);
        }
        self.halted.load(Ordering::SeqCst)
    }

    /// Counts a written checkpoint; true once the run should stop.
    fn tick(&self) -> bool {
        let n = self.checkpoints.fetch_add(1, Ordering::SeqCst) + 1;
        if self.after_checkpoints.is_some_and(|max| n >= max) {
            self.halted.store(true, Ordering::SeqCst);
        }
        self.halted()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub label: String,
    pub observable: String,
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub p: f64,
    pub stream_task: u32,
    pub done: usize,
    pub total: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub code_version: String,
    pub status: String,
    pub config: CampaignConfig,
    pub seed: u64,
    pub stream_scheme: String,
    pub tasks: Vec<TaskEntry>,
    pub jensen_violations: Vec<String>,
    pub wall_time_s: f64,
    pub finished_unix: u64,
}

impl Manifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(MANIFEST_SCHEMA_VERSION as u64) {
            bail!(
                "{}: manifest schema version {version:?}, this build reads version {MANIFEST_SCHEMA_VERSION}",
                path.display()
            );
        }
        Ok(serde_json::from_value(raw)?)
    }
}

/// Entropy estimate of one ensemble plus its Jensen check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub label: String,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub estimate: EntropyEstimate,
    pub jensen_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredAnyon {
    result: AnyonResult,
    chi: usize,
    seed: u64,
    stream: u64,
    path_bonds: Vec<usize>,
}

/// Stable 32-bit stream key of a task label (FNV-1a), so growing the grid
/// never changes the streams of existing tasks.
pub fn task_key(label: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub fn task_label(size: usize, temperature: f64, what: &str) -> String {
    format!("L{size}_T{temperature}_{what}")
}

pub struct Campaign<'a> {
    pub config: CampaignConfig,
    pub dir: PathBuf,
    pub halt: &'a HaltPolicy,
}

struct Progress {
    tasks: Vec<TaskEntry>,
    rows: Vec<ResultRow>,
    ensembles: Vec<EnsembleSummary>,
    computed: bool,
    complete: bool,
}

impl Campaign<'_> {
    pub fn run(&self) -> anyhow::Result<Outcome> {
        let cfg = &self.config;
        cfg.validate()?;
        if matches!(cfg.mode, Mode::Collapse | Mode::OracleCheck) {
            bail!("mode {:?} is not a grid campaign", cfg.mode);
        }
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        self.check_existing_config()?;
        atomic_write(
            &self.dir.join("config.json"),
            &serde_json::to_vec_pretty(cfg)?,
        )?;

        let started = Instant::now();
        let writer = Writer::spawn();
        let progress = {
            let handle = writer.handle();
            let run = || self.execute(&handle);
            if cfg.threads > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()?
                    .install(run)
            } else {
                run()
            }
        };
        writer.finish()?;
        let progress = progress?;

        let manifest_path = self.dir.join("manifest.json");
        let results_path = self.dir.join("results.csv");
        if progress.complete {
            let mut csv = Vec::new();
            write_rows(&mut csv, &progress.rows, true)?;
            if std::fs::read(&results_path).ok().as_deref() != Some(&csv[..]) {
                atomic_write(&results_path, &csv)?;
            }
            if !progress.ensembles.is_empty() {
                let entropy = serde_json::to_vec_pretty(&progress.ensembles)?;
                if std::fs::read(self.dir.join("entropy.json")).ok().as_deref()
                    != Some(&entropy[..])
                {
                    atomic_write(&self.dir.join("entropy.json"), &entropy)?;
                }
            }
        }
        let violations: Vec<String> = progress
            .ensembles
            .iter()
            .filter(|e| !e.jensen_ok)
            .map(|e| e.label.clone())
            .collect();
        for v in &violations {
            eprintln!("warning: Jensen bound S2 <= -<W> + 3 sigma violated for {v}");
        }
        if progress.computed || !manifest_path.exists() {
            let manifest = Manifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                tool: "tmc".into(),
                code_version: CODE_VERSION.into(),
                status: if progress.complete {
                    "complete"
                } else {
                    "incomplete"
                }
                .into(),
                config: cfg.clone(),
                seed: cfg.seed,
                stream_scheme: "ChaCha8(seed) stream = fnv1a32(task label) << 32 | trajectory id"
                    .into(),
                tasks: progress.tasks,
                jensen_violations: violations,
                wall_time_s: started.elapsed().as_secs_f64(),
                finished_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            atomic_write(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
        }
        Ok(if progress.complete {
            Outcome::Complete
        } else {
            Outcome::Incomplete
        })
    }

    fn check_existing_config(&self) -> anyhow::Result<()> {
        let path = self.dir.join("config.json");
        if !path.exists() {
            return Ok(());
        }
        let old: CampaignConfig = serde_json::from_slice(&std::fs::read(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        if old.physics_key() != self.config.physics_key() {
            return Err(UsageError(format!(
                "{} holds a campaign with a different configuration; choose another --name or output root",
                self.dir.display()
            ))
            .into());
        }
        Ok(())
    }

    fn execute(&self, writer: &WriterHandle) -> anyhow::Result<Progress> {
        let cfg = &self.config;
        let grid = cfg.grid()?;
        let mut progress = Progress {
            tasks: Vec::new(),
            rows: Vec::new(),
            ensembles: Vec::new(),
            computed: false,
            complete: true,
        };
        let mut keys = BTreeMap::new();
        for &size in &cfg.sizes {
            let geometry = build_lattice(size as i64)?;
            for gp in &grid {
                match cfg.mode {
                    Mode::S2 | Mode::Tee => {
                        self.entropy_point(&geometry, gp, writer, &mut progress, &mut keys)?
                    }
                    Mode::Anyon => {
                        self.anyon_point(&geometry, gp, writer, &mut progress, &mut keys)?
                    }
                    Mode::Collapse | Mode::OracleCheck => unreachable!(),
                }
            }
        }
        Ok(progress)
    }

    fn register(&self, keys: &mut BTreeMap<u32, String>, label: &str) -> anyhow::Result<u32> {
        let key = task_key(label);
        if let Some(other) = keys.insert(key, label.to_string()) {
            bail!("task labels {other} and {label} share a stream key");
        }
        Ok(key)
    }

    fn row(
        &self,
        observable: String,
        size: usize,
        gp: &GridPoint,
        value: f64,
        error: f64,
        n_traj: usize,
    ) -> ResultRow {
        let entropy = matches!(self.config.mode, Mode::S2 | Mode::Tee);
        ResultRow {
            observable,
            size,
            temperature: gp.temperature,
            p: gp.params.p,
            value,
            error,
            n_steps: if entropy { self.config.n_steps } else { 0 },
            n_trajectories: n_traj,
            chi: self.config.chi,
            seed: self.config.seed,
            code_version: CODE_VERSION.into(),
        }
    }

    fn entropy_point(
        &self,
        geometry: &LatticeGeometry,
        gp: &GridPoint,
        writer: &WriterHandle,
        progress: &mut Progress,
        keys: &mut BTreeMap<u32, String>,
    ) -> anyhow::Result<()> {
        let cfg = &self.config;
        let size = geometry.size();
        let mut estimates = Vec::new();
        for region in cfg.effective_regions() {
            let label = task_label(size, gp.temperature, region.label());
            let key = self.register(keys, &label)?;
            let mask = region_mask(geometry, region)?;
            let started = Instant::now();
            let (records, computed) =
                self.ensemble(geometry, gp, &mask, region.label(), &label, key, writer)?;
            progress.computed |= computed;
            progress.tasks.push(TaskEntry {
                label: label.clone(),
                observable: format!("S2_{}", region.label()),
                size,
                temperature: gp.temperature,
                p: gp.params.p,
                stream_task: key,
                done: records.len(),
                total: cfg.n_trajectories,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
            if records.len() < cfg.n_trajectories {
                progress.complete = false;
                continue;
            }
            let est = estimate_entropy(&records)?;
            progress.rows.push(self.row(
                format!("S2_{}", region.label()),
                size,
                gp,
                est.s2,
                est.error,
                records.len(),
            ));
            progress.ensembles.push(EnsembleSummary {
                label,
                temperature: gp.temperature,
                jensen_ok: jensen_holds(&est),
                estimate: est.clone(),
            });
            estimates.push(est);
        }
        if cfg.mode == Mode::Tee && estimates.len() == 4 {
            let tee = compute_tee(&estimates)?;
            progress.rows.push(self.row(
                "gamma".into(),
                size,
                gp,
                tee.gamma,
                tee.gamma_error,
                cfg.n_trajectories,
            ));
        }
        Ok(())
    }

    /// Completed records of one ensemble, running whatever is missing.
    #[allow(clippy::too_many_arguments)]
    fn ensemble(
        &self,
        geometry: &LatticeGeometry,
        gp: &GridPoint,
        mask: &[bool],
        region: &str,
        label: &str,
        key: u32,
        writer: &WriterHandle,
    ) -> anyhow::Result<(Vec<WorkRecord>, bool)> {
        let cfg = &self.config;
        let jsonl = self.dir.join("work").join(format!("{label}.jsonl"));
        let ckpt_dir = self.dir.join("checkpoints").join(label);
        let traj_config = TrajectoryConfig {
            n_steps: cfg.n_steps,
            updates_per_step: cfg.updates_per_step,
            chi: cfg.chi,
            record_series: false,
            identical_replicas: false,
        };
        let mut done = load_records(&jsonl)?;
        for r in done.values() {
            if r.n_steps != cfg.n_steps
                || r.chi != cfg.chi
                || r.p != gp.params.p
                || r.seed != cfg.seed
            {
                bail!(
                    "{}: record {} was produced by a different configuration",
                    jsonl.display(),
                    r.id
                );
            }
        }
        let pending: Vec<u32> = (0..cfg.n_trajectories as u32)
            .filter(|id| !done.contains_key(&(*id as u64)))
            .collect();
        if pending.is_empty() {
            return Ok((done.into_values().collect(), false));
        }
        let interval = (cfg.checkpoint_interval > 0).then_some(cfg.checkpoint_interval);
        let fresh: Vec<Option<WorkRecord>> = pending
            .par_iter()
            .map(|&id| -> anyhow::Result<Option<WorkRecord>> {
                if self.halt.halted() {
                    return Ok(None);
                }
                let origin = RngStream::for_task(cfg.seed, key, id);
                let ckpt_path = ckpt_dir.join(format!("{id}.json"));
                let traj = if ckpt_path.exists() {
                    let ckpt = TrajectoryCheckpoint::read(&ckpt_path)?;
                    check_checkpoint(&ckpt, &ckpt_path, &traj_config, gp, mask, origin)?;
                    Trajectory::resume(geometry, &ckpt)?
                } else {
                    Trajectory::start(
                        geometry,
                        mask.to_vec(),
                        region,
                        &gp.params,
                        &traj_config,
                        id as u64,
                        origin,
                    )?
                };
                let record = traj.run(interval, |c| {
                    writer.checkpoint(&ckpt_path, c);
                    Ok(!self.halt.tick())
                })?;
                if let Some(r) = &record {
                    writer.record(&jsonl, r, &ckpt_path);
                }
                Ok(record)
            })
            .collect::<anyhow::Result<_>>()?;
        for r in fresh.into_iter().flatten() {
            done.insert(r.id, r);
        }
        Ok((done.into_values().collect(), true))
    }

    fn anyon_point(
        &self,
        geometry: &LatticeGeometry,
        gp: &GridPoint,
        writer: &WriterHandle,
        progress: &mut Progress,
        keys: &mut BTreeMap<u32, String>,
    ) -> anyhow::Result<()> {
        let cfg = &self.config;
        let size = geometry.size();
        let label = task_label(size, gp.temperature, "T_l");
        let key = self.register(keys, &label)?;
        let path = anyon_path(
            geometry,
            cfg.path_length
                .unwrap_or_else(|| default_path_length(geometry)),
        )?;
        let stream = RngStream::for_task(cfg.seed, key, 0);
        let file = self.dir.join("anyon").join(format!("{label}.json"));
        let started = Instant::now();
        let stored: Option<StoredAnyon> = if file.exists() {
            let s: StoredAnyon = serde_json::from_slice(&std::fs::read(&file)?)?;
            if s.chi != cfg.chi
                || s.seed != cfg.seed
                || s.stream != stream.stream
                || s.path_bonds != path.bonds
                || s.result.n_samples != cfg.n_samples
            {
                bail!(
                    "{}: stored result was produced by a different configuration",
                    file.display()
                );
            }
            Some(s)
        } else {
            None
        };
        let result = match stored {
            Some(s) => s.result,
            None if self.halt.halted() => {
                progress.complete = false;
                progress
                    .tasks
                    .push(self.anyon_entry(&label, size, gp, key, 0, started));
                return Ok(());
            }
            None => {
                let result =
                    measure_anyon(geometry, &path, &gp.params, cfg.n_samples, cfg.chi, stream)?;
                let s = StoredAnyon {
                    result: result.clone(),
                    chi: cfg.chi,
                    seed: cfg.seed,
                    stream: stream.stream,
                    path_bonds: path.bonds.clone(),
                };
                writer.bytes(&file, serde_json::to_vec_pretty(&s)?);
                progress.computed = true;
                result
            }
        };
        progress
            .tasks
            .push(self.anyon_entry(&label, size, gp, key, cfg.n_samples, started));
        progress.rows.push(self.row(
            "T_l".into(),
            size,
            gp,
            result.value,
            result.error,
            cfg.n_samples,
        ));
        Ok(())
    }

    fn anyon_entry(
        &self,
        label: &str,
        size: usize,
        gp: &GridPoint,
        key: u32,
        done: usize,
        started: Instant,
    ) -> TaskEntry {
        TaskEntry {
            label: label.to_string(),
            observable: "T_l".into(),
            size,
            temperature: gp.temperature,
            p: gp.params.p,
            stream_task: key,
            done,
            total: self.config.n_samples,
            wall_time_s: started.elapsed().as_secs_f64(),
        }
    }
}

pub fn region_mask(geometry: &LatticeGeometry, region: RegionSpec) -> anyhow::Result<Vec<bool>> {
    Ok(match region {
        RegionSpec::Half => (0..geometry.n_bonds())
            .map(|b| b < geometry.n_bonds() / 2)
            .collect(),
        RegionSpec::Union(u) => levin_wen_regions(geometry)?.mask(u),
    })
}

fn check_checkpoint(
    ckpt: &TrajectoryCheckpoint,
    path: &Path,
    config: &TrajectoryConfig,
    gp: &GridPoint,
    mask: &[bool],
    origin: RngStream,
) -> anyhow::Result<()> {
    let mask_str: String = mask.iter().map(|&m| if m { '1' } else { '0' }).collect();
    if &ckpt.config != config
        || ckpt.p != gp.params.p
        || ckpt.mask != mask_str
        || ckpt.rng.seed != origin.seed
        || ckpt.rng.stream != origin.stream
    {
        bail!(
            "{}: checkpoint was written by a different configuration; remove it or use another output directory",
            path.display()
        );
    }
    Ok(())
}

/// Reads finished records, dropping a torn final line left by an interrupted
/// append (the file is rewritten without it).
pub fn load_records(path: &Path) -> anyhow::Result<BTreeMap<u64, WorkRecord>> {
    let mut out = BTreeMap::new();
    let Ok(file) = std::fs::File::open(path) else {
        return Ok(out);
    };
    let lines: Vec<String> = std::io::BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()?;
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<WorkRecord>(line) {
            Ok(r) => {
                out.entry(r.id).or_insert(r);
            }
            Err(_) if i + 1 == lines.len() => torn = true,
            Err(e) => return Err(e).with_context(|| format!("{} line {}", path.display(), i + 1)),
        }
    }
    if torn {
        let mut buf = Vec::new();
        tmc_core::jarzynski::write_records(&mut buf, &out.values().cloned().collect::<Vec<_>>())?;
        atomic_write(path, &buf)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_keys_are_stable_and_distinct() {
        assert_eq!(task_key("L5_T0.25_AC"), task_key("L5_T0.25_AC"));
        let labels: Vec<String> = [5, 10, 15]
            .iter()
            .flat_map(|l| {
                crate::config::default_temperatures()
                    .into_iter()
                    .flat_map(move |t| {
                        ["AC", "BC", "C", "ABC", "T_l"].map(|r| task_label(*l, t, r))
                    })
            })
            .collect();
        let keys: std::collections::BTreeSet<u32> = labels.iter().map(|l| task_key(l)).collect();
        assert_eq!(keys.len(), labels.len());
    }

    #[test]
    fn torn_record_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let rec = WorkRecord {
            id: 3,
            seed: 1,
            stream: 2,
            n_steps: 10,
            work: -0.5,
            size: 2,
            p: 0.1,
            region: "half".into(),
            chi: 8,
            accepted: 1,
            proposals: 10,
            series: None,
            wall_time_s: 0.0,
        };
        let mut text = serde_json::to_string(&rec).unwrap();
        text.push_str("\n{\"id\":4,\"se");
        std::fs::write(&path, text).unwrap();
        let loaded = load_records(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(load_records(&path).unwrap().len(), 1);
        let rewritten = std::fs::read_to_string(&path).unwrap();
        assert_eq!(rewritten.lines().count(), 1);
        assert!(!rewritten.contains("\"id\":4"));
    }
}
