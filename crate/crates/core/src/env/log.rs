//! Line-delimited JSON trajectory logs: one `episode` header line followed by
//! one `slot` line per slot.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SlotRecord, VnfAction};
use crate::config::{MonitoringConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::failure::TransitionConfig;
use crate::net::{NetworkState, VnfId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub episode: usize,
    pub seed: u64,
    pub substrate_seed: u64,
    pub episode_length: usize,
    /// Flat VNF order used by every per-VNF array in the slot records.
    pub vnf_ids: Vec<VnfId>,
    pub transition_configs: Vec<TransitionConfig>,
    pub monitoring: MonitoringConfig,
    pub reward: RewardConfig,
    /// Substrate, embedding and (empty) backup map at reset.
    pub network: NetworkState,
}

impl EpisodeHeader {
    pub fn backup_cost(&self, v: usize) -> f64 {
        let id = self.vnf_ids[v];
        self.network.sfcs[id.sfc].vnfs[id.pos].backup_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Episode(Box<EpisodeHeader>),
    Slot(SlotRecord),
}

/// A complete recorded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub slots: Vec<SlotRecord>,
}

impl EpisodeLog {
    pub fn total_return(&self) -> f64 {
        self.slots.iter().map(|s| s.reward.total).sum()
    }

    pub fn actions(&self) -> impl Iterator<Item = &[VnfAction]> + '_ {
        self.slots.iter().map(|s| s.actions.as_slice())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &LogLine::Episode(Box::new(self.header.clone())))?;
        out.write_all(b"\n")?;
        for s in &self.slots {
            serde_json::to_writer(&mut out, &LogLine::Slot(s.clone()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn write_episodes(path: &Path, episodes: &[EpisodeLog]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for ep in episodes {
        ep.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<EpisodeLog>> {
    let mut out: Vec<EpisodeLog> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(origin, format!("line {}: {e}", i + 1)))?;
        match parsed {
            LogLine::Episode(h) => out.push(EpisodeLog {
                header: *h,
                slots: Vec::new(),
            }),
            LogLine::Slot(s) => match out.last_mut() {
                Some(ep) => ep.slots.push(s),
                None => {
                    return Err(Error::format(
                        origin,
                        format!("line {}: slot record before any episode header", i + 1),
                    ))
                }
            },
        }
    }
    Ok(out)
}

pub fn read_episodes_file(path: &Path) -> Result<Vec<EpisodeLog>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_episodes(std::io::BufReader::new(file), path)
}
