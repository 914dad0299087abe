//! All campaign file output goes through one thread so appends never interleave.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::thread::JoinHandle;

use anyhow::Context;
use tmc_core::jarzynski::{write_records, TrajectoryCheckpoint, WorkRecord};

enum Msg {
    Checkpoint(PathBuf, Box<TrajectoryCheckpoint>),
    Record {
        jsonl: PathBuf,
        record: Box<WorkRecord>,
        done_checkpoint: PathBuf,
    },
    Bytes(PathBuf, Vec<u8>),
}

pub struct Writer {
    tx: Sender<Msg>,
    handle: JoinHandle<anyhow::Result<()>>,
}

/// Cheap handle for worker threads.
#[derive(Clone)]
pub struct WriterHandle(Sender<Msg>);

impl Writer {
    pub fn spawn() -> Self {
        let (tx, rx) = channel::<Msg>();
        let handle = std::thread::spawn(move || -> anyhow::Result<()> {
            // Keep draining after an error so senders never block; report the first one.
            let mut first_err = None;
            for msg in rx {
                if first_err.is_some() {
                    continue;
                }
                if let Err(e) = handle_msg(msg) {
                    first_err = Some(e);
                }
            }
            first_err.map_or(Ok(()), Err)
        });
        Writer { tx, handle }
    }

    pub fn handle(&self) -> WriterHandle {
        WriterHandle(self.tx.clone())
    }

    /// Flushes everything queued and reports the first write failure.
    pub fn finish(self) -> anyhow::Result<()> {
        drop(self.tx);
        self.handle
            .join()
            .map_err(|_| anyhow::anyhow!("writer thread panicked"))?
    }
}

impl WriterHandle {
    pub fn checkpoint(&self, path: &Path, ckpt: &TrajectoryCheckpoint) {
        let _ = self
            .0
            .send(Msg::Checkpoint(path.to_path_buf(), Box::new(ckpt.clone())));
    }

    /// Appends a finished record, then deletes its checkpoint.
    pub fn record(&self, jsonl: &Path, record: &WorkRecord, done_checkpoint: &Path) {
        let _ = self.0.send(Msg::Record {
            jsonl: jsonl.to_path_buf(),
            record: Box::new(record.clone()),
            done_checkpoint: done_checkpoint.to_path_buf(),
        });
    }

    /// Atomically replaces a whole file.
    pub fn bytes(&self, path: &Path, data: Vec<u8>) {
        let _ = self.0.send(Msg::Bytes(path.to_path_buf(), data));
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn atomic_write(path: &Path, data: &[u8]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, data).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn handle_msg(msg: Msg) -> anyhow::Result<()> {
    match msg {
        Msg::Checkpoint(path, ckpt) => {
            ensure_parent(&path)?;
            ckpt.write(&path)
                .with_context(|| format!("writing checkpoint {}", path.display()))
        }
        Msg::Record {
            jsonl,
            record,
            done_checkpoint,
        } => {
            ensure_parent(&jsonl)?;
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&jsonl)
                .with_context(|| format!("opening {}", jsonl.display()))?;
            let mut line = Vec::new();
            write_records(&mut line, std::slice::from_ref(&*record))?;
            file.write_all(&line)?;
            file.sync_data()?;
            match std::fs::remove_file(&done_checkpoint) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
                _ => Ok(()),
            }
        }
        Msg::Bytes(path, data) => atomic_write(&path, &data),
    }
}
