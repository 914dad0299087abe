//! Non-equilibrium switching from `Q(0)` to `Q(1)` and the Renyi-2 estimate
//! `S_2 = -ln <e^W>`.
//!
//! A trajectory starts from two independent exact draws (equilibrium at
//! `lambda = 0`). At step `k` it adds `dW = u(x, x') / n_steps` measured at the
//! current configuration, then performs Metropolis updates at
//! `lambda_{k+1} = (k + 1) / n_steps`, alternating which replica is proposed.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bonds::BondConfig;
use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::rng::{RngSnapshot, RngStream, SimRng};
use crate::sampler::{
    metropolis_update, params_from_p, sample_nishimori, NishimoriParams, PartitionFunction,
    Replica, ReplicaState,
};
use crate::tn::DEFAULT_CHI;

pub const DEFAULT_N_STEPS: usize = 100_000;

pub const CHECKPOINT_MAGIC: &str = "TMC-TRAJECTORY-CHECKPOINT";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n_steps: usize,
    pub updates_per_step: usize,
    pub chi: usize,
    /// Keep the work increment of every step.
    pub record_series: bool,
    /// Diagnostic mode: both replicas always hold the same configuration.
    pub identical_replicas: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            n_steps: DEFAULT_N_STEPS,
            updates_per_step: 1,
            chi: DEFAULT_CHI,
            record_series: false,
            identical_replicas: false,
        }
    }
}

/// Result of one switching trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkRecord {
    pub id: u64,
    pub seed: u64,
    pub stream: u64,
    pub n_steps: usize,
    pub work: f64,
    pub size: usize,
    pub p: f64,
    pub region: String,
    pub chi: usize,
    pub accepted: u64,
    pub proposals: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<f64>>,
    #[serde(default)]
    pub wall_time_s: f64,
}

/// Everything needed to continue a trajectory exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheckpoint {
    pub magic: String,
    pub schema_version: u32,
    pub id: u64,
    pub size: usize,
    pub p: f64,
    pub region: String,
    /// Region mask as a string of `0`/`1`, one per bond.
    pub mask: String,
    pub config: TrajectoryConfig,
    /// Next step to perform.
    pub step: usize,
    pub lambda: f64,
    pub work: f64,
    pub x: BondConfig,
    pub xp: BondConfig,
    pub next_replica: Replica,
    pub accepted: u64,
    pub proposals: u64,
    pub rng: RngSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<f64>>,
    pub elapsed_s: f64,
}

impl TrajectoryCheckpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        match raw.get("magic").and_then(|m| m.as_str()) {
            Some(CHECKPOINT_MAGIC) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: not a trajectory checkpoint (magic {other:?})",
                    path.display()
                )))
            }
        }
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_SCHEMA_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "{}: schema version {version:?}, this build reads version {CHECKPOINT_SCHEMA_VERSION}",
                path.display()
            )));
        }
        Ok(serde_json::from_value(raw)?)
    }
}

fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

fn parse_mask(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(Error::Checkpoint(format!("bad mask character {other:?}"))),
        })
        .collect()
}

/// A trajectory in progress.
pub struct Trajectory<'g> {
    pf: PartitionFunction<'g>,
    params: NishimoriParams,
    config: TrajectoryConfig,
    state: ReplicaState,
    rng: SimRng,
    origin: RngStream,
    id: u64,
    region: String,
    step: usize,
    work: f64,
    next: Replica,
    accepted: u64,
    proposals: u64,
    series: Option<Vec<f64>>,
    elapsed_s: f64,
    started: Instant,
}

impl<'g> Trajectory<'g> {
    /// Draws both replicas from the exact `lambda = 0` distribution.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        geometry: &'g LatticeGeometry,
        mask: Vec<bool>,
        region: &str,
        params: &NishimoriParams,
        config: &TrajectoryConfig,
        id: u64,
        origin: RngStream,
    ) -> Result<Self> {
        if config.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        let pf = PartitionFunction::new(geometry, params, config.chi)?;
        let mut rng = origin.rng();
        let x = sample_nishimori(geometry, params, &mut rng);
        let xp = if config.identical_replicas {
            x.clone()
        } else {
            sample_nishimori(geometry, params, &mut rng)
        };
        let state = ReplicaState::new(&pf, x, xp, mask)?;
        Ok(Trajectory {
            pf,
            params: *params,
            config: config.clone(),
            state,
            rng,
            origin,
            id,
            region: region.to_string(),
            step: 0,
            work: 0.0,
            next: Replica::First,
            accepted: 0,
            proposals: 0,
            series: config.record_series.then(Vec::new),
            elapsed_s: 0.0,
            started: Instant::now(),
        })
    }

    pub fn resume(
        geometry: &'g LatticeGeometry,
        checkpoint: &TrajectoryCheckpoint,
    ) -> Result<Self> {
        if checkpoint.size != geometry.size() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for L={}, geometry has L={}",
                checkpoint.size,
                geometry.size()
            )));
        }
        let params = params_from_p(checkpoint.p)?;
        let pf = PartitionFunction::new(geometry, &params, checkpoint.config.chi)?;
        let mask = parse_mask(&checkpoint.mask)?;
        let state = ReplicaState::new(&pf, checkpoint.x.clone(), checkpoint.xp.clone(), mask)?;
        Ok(Trajectory {
            pf,
            params,
            config: checkpoint.config.clone(),
            state,
            rng: checkpoint.rng.restore()?,
            origin: RngStream::new(checkpoint.rng.seed, checkpoint.rng.stream),
            id: checkpoint.id,
            region: checkpoint.region.clone(),
            step: checkpoint.step,
            work: checkpoint.work,
            next: checkpoint.next_replica,
            accepted: checkpoint.accepted,
            proposals: checkpoint.proposals,
            series: checkpoint.series.clone(),
            elapsed_s: checkpoint.elapsed_s,
            started: Instant::now(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.n_steps
    }

    pub fn work(&self) -> f64 {
        self.work
    }

    pub fn state(&self) -> &ReplicaState {
        &self.state
    }

    /// Advances by one `lambda` increment.
    pub fn advance(&mut self) -> Result<()> {
        let n = self.config.n_steps as f64;
        let dw = self.state.swap_exponent() / n;
        self.work += dw;
        if let Some(series) = self.series.as_mut() {
            series.push(dw);
        }
        let lambda = ((self.step + 1) as f64 / n).min(1.0);
        for _ in 0..self.config.updates_per_step {
            if self.config.identical_replicas {
                self.resample_identical()?;
            } else {
                let accepted = metropolis_update(
                    &mut self.state,
                    lambda,
                    &self.params,
                    &self.pf,
                    &mut self.rng,
                    self.next,
                )?;
                self.accepted += accepted as u64;
                self.next = self.next.other();
            }
            self.proposals += 1;
        }
        self.step += 1;
        if !self.work.is_finite() {
            return Err(Error::NumericalOverflow(format!(
                "work became {} at step {}",
                self.work, self.step
            )));
        }
        Ok(())
    }

    fn resample_identical(&mut self) -> Result<()> {
        let y = sample_nishimori(self.pf.geometry, &self.params, &mut self.rng);
        let mask = std::mem::take(&mut self.state.mask);
        self.state = ReplicaState::new(&self.pf, y.clone(), y, mask)?;
        self.accepted += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> TrajectoryCheckpoint {
        TrajectoryCheckpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            id: self.id,
            size: self.pf.geometry.size(),
            p: self.params.p,
            region: self.region.clone(),
            mask: mask_string(&self.state.mask),
            config: self.config.clone(),
            step: self.step,
            lambda: self.step as f64 / self.config.n_steps as f64,
            work: self.work,
            x: self.state.x.clone(),
            xp: self.state.xp.clone(),
            next_replica: self.next,
            accepted: self.accepted,
            proposals: self.proposals,
            rng: RngSnapshot::capture(self.origin, &self.rng),
            series: self.series.clone(),
            elapsed_s: self.elapsed_s + self.started.elapsed().as_secs_f64(),
        }
    }

    /// Runs to completion, handing a checkpoint to `on_checkpoint` every
    /// `interval` steps. The callback returning `Ok(false)` stops the run early
    /// and yields `None`.
    pub fn run(
        mut self,
        interval: Option<usize>,
        mut on_checkpoint: impl FnMut(&TrajectoryCheckpoint) -> Result<bool>,
    ) -> Result<Option<WorkRecord>> {
        while !self.is_done() {
            self.advance()?;
            if let Some(every) = interval.filter(|&e| e > 0) {
                if self.step.is_multiple_of(every)
                    && !self.is_done()
                    && !on_checkpoint(&self.checkpoint())?
                {
                    return Ok(None);
                }
            }
        }
        Ok(Some(self.finish()))
    }

    pub fn finish(self) -> WorkRecord {
        WorkRecord {
            id: self.id,
            seed: self.origin.seed,
            stream: self.origin.stream,
            n_steps: self.config.n_steps,
            work: self.work,
            size: self.pf.geometry.size(),
            p: self.params.p,
            region: self.region,
            chi: self.config.chi,
            accepted: self.accepted,
            proposals: self.proposals,
            series: self.series,
            wall_time_s: self.elapsed_s + self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Runs one trajectory from scratch.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    geometry: &LatticeGeometry,
    mask: &[bool],
    region: &str,
    params: &NishimoriParams,
    config: &TrajectoryConfig,
    id: u64,
    origin: RngStream,
) -> Result<WorkRecord> {
    let traj = Trajectory::start(geometry, mask.to_vec(), region, params, config, id, origin)?;
    Ok(traj
        .run(None, |_| Ok(true))?
        .expect("uninterrupted run completes"))
}

/// Runs trajectories `0..n` in parallel with streams `(seed, task << 32 | id)`,
/// returned in id order.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    geometry: &LatticeGeometry,
    mask: &[bool],
    region: &str,
    params: &NishimoriParams,
    config: &TrajectoryConfig,
    seed: u64,
    task: u32,
    n_trajectories: u32,
) -> Result<Vec<WorkRecord>> {
    (0..n_trajectories)
        .into_par_iter()
        .map(|id| {
            run_trajectory(
                geometry,
                mask,
                region,
                params,
                config,
                id as u64,
                RngStream::for_task(seed, task, id),
            )
        })
        .collect()
}

/// Renyi-2 estimate from an ensemble of work values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub s2: f64,
    pub error: f64,
    pub n_trajectories: usize,
    pub region: String,
    pub size: usize,
    pub p: f64,
    pub n_steps: usize,
    pub chi: usize,
    pub mean_work: f64,
}

/// `(-ln mean e^W, jackknife error)` for a list of work values.
pub fn entropy_from_work(works: &[f64]) -> Result<(f64, f64)> {
    let m = works.len();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    if let Some(bad) = works.iter().find(|w| !w.is_finite()) {
        return Err(Error::NumericalOverflow(format!(
            "non-finite work value {bad}"
        )));
    }
    let estimate = |lse: f64, count: usize| -(lse - (count as f64).ln()) + 0.0;

    // largest and second largest, so each leave-one-out sum can be shifted by its own max
    let (mut top, mut second, mut top_idx) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for (i, &w) in works.iter().enumerate() {
        if w > top {
            second = top;
            top = w;
            top_idx = i;
        } else if w > second {
            second = w;
        }
    }
    let full = top + works.iter().map(|w| (w - top).exp()).sum::<f64>().ln();
    let s2 = estimate(full, m);

    let loo: Vec<f64> = (0..m)
        .map(|i| {
            let shift = if i == top_idx { second } else { top };
            let sum: f64 = works
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, w)| (w - shift).exp())
                .sum();
            estimate(shift + sum.ln(), m - 1)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / m as f64;
    let var = loo.iter().map(|s| (s - mean).powi(2)).sum::<f64>() * (m - 1) as f64 / m as f64;
    Ok((s2, var.sqrt()))
}

/// Combines an ensemble of records for one region into `S_2` with a
/// delete-one jackknife error.
pub fn estimate_entropy(records: &[WorkRecord]) -> Result<EntropyEstimate> {
    if records.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: records.len(),
        });
    }
    let first = &records[0];
    for r in records {
        if r.size != first.size
            || r.p != first.p
            || r.region != first.region
            || r.n_steps != first.n_steps
        {
            return Err(Error::InconsistentRuns(format!(
                "record {} (L={}, p={}, region={}, n_steps={}) differs from record {}",
                r.id, r.size, r.p, r.region, r.n_steps, first.id
            )));
        }
    }
    let works: Vec<f64> = records.iter().map(|r| r.work).collect();
    let (s2, error) = entropy_from_work(&works)?;
    Ok(EntropyEstimate {
        s2,
        error,
        n_trajectories: records.len(),
        region: first.region.clone(),
        size: first.size,
        p: first.p,
        n_steps: first.n_steps,
        chi: first.chi,
        mean_work: works.iter().sum::<f64>() / works.len() as f64,
    })
}

/// `S_2 <= -mean(W) + 3 sigma`, which follows from convexity of `exp`.
pub fn jensen_holds(estimate: &EntropyEstimate) -> bool {
    let slack = 1e-12 * (1.0 + estimate.mean_work.abs());
    estimate.s2 <= -estimate.mean_work + 3.0 * estimate.error + slack
}

/// Writes records as JSON lines.
pub fn write_records<W: std::io::Write>(mut out: W, records: &[WorkRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: std::io::BufRead>(input: R) -> Result<Vec<WorkRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    fn half_mask(g: &LatticeGeometry) -> Vec<bool> {
        (0..g.n_bonds()).map(|b| b < g.n_bonds() / 2).collect()
    }

    fn small_config(n_steps: usize) -> TrajectoryConfig {
        TrajectoryConfig {
            n_steps,
            ..TrajectoryConfig::default()
        }
    }

    #[test]
    fn degenerate_ensembles() {
        let (s, e) = entropy_from_work(&[0.0; 5]).unwrap();
        assert_eq!((s, e), (0.0, 0.0));
        assert!(s.is_sign_positive());
        let half = 0.5f64.ln();
        let (s, _) = entropy_from_work(&[half, half]).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            entropy_from_work(&[1.0]),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn shift_invariance() {
        let works = [-3.1, -2.4, -5.0, -2.9, -3.3, -4.4];
        let (s, e) = entropy_from_work(&works).unwrap();
        for c in [-50.0, 7.5, 300.0] {
            let shifted: Vec<f64> = works.iter().map(|w| w + c).collect();
            let (s2, e2) = entropy_from_work(&shifted).unwrap();
            assert!((s2 + c - s).abs() <= 1e-12 * (1.0 + c.abs()));
            assert!((e2 - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn jackknife_of_linear_functional_is_standard_error() {
        // for tiny spreads -ln mean e^W ~ -mean W, so the jackknife tends to the SEM
        let works: Vec<f64> = (0..50)
            .map(|i| 1e-6 * ((i * 37 % 11) as f64 - 5.0))
            .collect();
        let (_, e) = entropy_from_work(&works).unwrap();
        let mean = works.iter().sum::<f64>() / 50.0;
        let sem = (works.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / 49.0 / 50.0).sqrt();
        assert!((e - sem).abs() < 1e-3 * sem);
    }

    #[test]
    fn dominated_ensemble_is_finite() {
        let (s, e) = entropy_from_work(&[0.0, -800.0, -900.0]).unwrap();
        assert!(s.is_finite() && e.is_finite());
    }

    #[test]
    fn infinite_temperature_gives_zero_work() {
        let g = build_lattice(2).unwrap();
        let params = params_from_p(0.5).unwrap();
        let records = run_ensemble(
            &g,
            &half_mask(&g),
            "half",
            &params,
            &small_config(50),
            1,
            0,
            4,
        )
        .unwrap();
        assert!(records.iter().all(|r| r.work == 0.0));
        let est = estimate_entropy(&records).unwrap();
        assert_eq!((est.s2, est.error), (0.0, 0.0));
    }

    #[test]
    fn identical_replicas_give_zero_work() {
        let g = build_lattice(2).unwrap();
        let params = params_from_p(0.15).unwrap();
        let config = TrajectoryConfig {
            identical_replicas: true,
            record_series: true,
            ..small_config(40)
        };
        let r = run_trajectory(
            &g,
            &half_mask(&g),
            "half",
            &params,
            &config,
            0,
            RngStream::new(3, 0),
        )
        .unwrap();
        assert_eq!(r.work, 0.0);
        assert_eq!(r.series.unwrap().len(), 40);
    }

    #[test]
    fn trajectory_is_reproducible() {
        let g = build_lattice(2).unwrap();
        let params = params_from_p(0.15).unwrap();
        let run = || {
            run_trajectory(
                &g,
                &half_mask(&g),
                "half",
                &params,
                &small_config(200),
                7,
                RngStream::new(9, 7),
            )
        };
        let a = run().unwrap();
        let b = run().unwrap();
        assert_eq!(a.work.to_bits(), b.work.to_bits());
        assert_eq!(a.accepted, b.accepted);
        assert!(a.work < 0.0);
        assert_eq!(a.proposals, 200);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let g = build_lattice(2).unwrap();
        let params = params_from_p(0.2).unwrap();
        let mask = half_mask(&g);
        let config = TrajectoryConfig {
            record_series: true,
            ..small_config(300)
        };
        let full =
            run_trajectory(&g, &mask, "half", &params, &config, 2, RngStream::new(4, 2)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        let traj = Trajectory::start(
            &g,
            mask.clone(),
            "half",
            &params,
            &config,
            2,
            RngStream::new(4, 2),
        )
        .unwrap();
        let stopped = traj
            .run(Some(70), |ckpt| {
                ckpt.write(&path)?;
                Ok(ckpt.step < 140)
            })
            .unwrap();
        assert!(stopped.is_none());
        let ckpt = TrajectoryCheckpoint::read(&path).unwrap();
        assert_eq!(ckpt.step, 140);
        let resumed = Trajectory::resume(&g, &ckpt)
            .unwrap()
            .run(None, |_| Ok(true))
            .unwrap()
            .unwrap();
        assert_eq!(resumed.work.to_bits(), full.work.to_bits());
        assert_eq!(resumed.series, full.series);
        assert_eq!(resumed.accepted, full.accepted);
    }

    #[test]
    fn checkpoint_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"magic":"TMC-TRAJECTORY-CHECKPOINT","schema_version":99}"#,
        )
        .unwrap();
        let err = TrajectoryCheckpoint::read(&path).unwrap_err();
        assert!(err.to_string().contains("schema version"), "{err}");
        std::fs::write(&path, r#"{"magic":"something-else"}"#).unwrap();
        assert!(matches!(
            TrajectoryCheckpoint::read(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn records_roundtrip_as_json_lines() {
        let g = build_lattice(1).unwrap();
        let params = params_from_p(0.1).unwrap();
        let records = run_ensemble(
            &g,
            &[true, false, true, false],
            "A",
            &params,
            &small_config(20),
            5,
            1,
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn estimate_rejects_mixed_records() {
        let g = build_lattice(1).unwrap();
        let params = params_from_p(0.1).unwrap();
        let mut records =
            run_ensemble(&g, &[true; 4], "A", &params, &small_config(5), 5, 1, 3).unwrap();
        records[1].region = "B".into();
        assert!(matches!(
            estimate_entropy(&records),
            Err(Error::InconsistentRuns(_))
        ));
    }

    #[test]
    fn zero_steps_rejected() {
        let g = build_lattice(1).unwrap();
        let params = params_from_p(0.1).unwrap();
        assert!(run_trajectory(
            &g,
            &[true; 4],
            "A",
            &params,
            &small_config(0),
            0,
            RngStream::new(0, 0)
        )
        .is_err());
    }
}
