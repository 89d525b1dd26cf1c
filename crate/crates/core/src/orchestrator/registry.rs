use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::JobState;

pub const REGISTRY_FILE: &str = "registry.jsonl";

/// One line of the append-only registry log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RegistryEvent {
    State { state: JobState },
    Removed { id: String },
}

/// In-memory job index backed by an append-only log. Not synchronized;
/// the API wraps it in a mutex.
#[derive(Debug)]
pub struct Registry {
    jobs: BTreeMap<String, JobState>,
    log: File,
    path: PathBuf,
}

impl Registry {
    /// Opens `dir/registry.jsonl`, replaying it. The last record per id wins;
    /// a torn final line from a crash is ignored.
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(REGISTRY_FILE);
        let mut jobs = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<RegistryEvent>(&line) {
                    Ok(RegistryEvent::State { state }) => {
                        jobs.insert(state.id.clone(), state);
                    }
                    Ok(RegistryEvent::Removed { id }) => {
                        jobs.remove(&id);
                    }
                    Err(e) => tracing::warn!(error = %e, "skipping unreadable registry line"),
                }
            }
        }
        let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
        let len = log.metadata()?.len();
        if len > 0 && std::fs::read(&path)?.last() != Some(&b'\n') {
            // terminate a torn line so the next event starts cleanly
            log.write_all(b"\n")?;
        }
        Ok(Self { jobs, log, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&mut self, event: &RegistryEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.flush()
    }

    pub fn put(&mut self, state: JobState) -> io::Result<()> {
        self.append(&RegistryEvent::State { state: state.clone() })?;
        self.jobs.insert(state.id.clone(), state);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> io::Result<Option<JobState>> {
        let Some(state) = self.jobs.remove(id) else {
            return Ok(None);
        };
        self.append(&RegistryEvent::Removed { id: id.to_string() })?;
        Ok(Some(state))
    }

    pub fn get(&self, id: &str) -> Option<&JobState> {
        self.jobs.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.jobs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Ids of jobs that had not finished when the log was last written.
    pub fn unfinished(&self) -> Vec<String> {
        self.jobs
            .values()
            .filter(|s| !s.phase.is_terminal())
            .map(|s| s.id.clone())
            .collect()
    }
}
