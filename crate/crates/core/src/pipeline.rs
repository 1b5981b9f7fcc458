//! Offline processing: raw device logs in, aligned and exported episode out.

use std::fmt;
use std::path::Path;

use crate::config::PipelineConfig;
use crate::dataset::export_episode;
use crate::ingest::read_raw_dir;
use crate::model::{Label, RawEpisode};
use crate::sync::{align, apply_offsets, estimate_episode_offsets, AlignedEpisode, DeviceOffset, EpisodeEvent};
use crate::tactile::{calibrate_frame, detect_contact, ContactMask, TactileError};
use crate::config::Rig;
use crate::simulator::{EVENT_APPROACH, EVENT_GRASP, EVENT_INITIAL_POSE, EVENT_INSERTION_COMPLETE};
use crate::Error;

/// Named task events: the first tick, the first tick with contact on both
/// jaws, and the start and end of the first Fine segment.
pub fn detect_events(ep: &AlignedEpisode, rig: &Rig) -> Result<Vec<EpisodeEvent>, TactileError> {
    let n = ep.n_ticks();
    let mut events = Vec::new();
    let mut push = |name: &str, tick: usize| {
        events.push(EpisodeEvent {
            name: name.to_string(),
            tick,
            t: ep.timeline[tick],
        })
    };
    if n == 0 {
        return Ok(Vec::new());
    }
    push(EVENT_INITIAL_POSE, 0);

    let th = rig.tactile.contact;
    let mut prev: [Option<ContactMask>; 2] = [None, None];
    for k in 0..n {
        let mut touching = true;
        for (side, at) in [&ep.tactile_left[k], &ep.tactile_right[k]].into_iter().enumerate() {
            if !at.valid {
                prev[side] = None;
                touching = false;
                continue;
            }
            let mask = detect_contact(&calibrate_frame(&at.frame, &rig.tactile.calib), th, prev[side].as_ref())?;
            touching &= mask.count() > 0;
            prev[side] = Some(mask);
        }
        if touching {
            push(EVENT_GRASP, k);
            break;
        }
    }

    if let Some(a) = ep.labels.iter().position(|l| *l == Label::Fine) {
        push(EVENT_APPROACH, a);
        if let Some(len) = ep.labels[a..].iter().position(|l| *l == Label::Coarse) {
            push(EVENT_INSERTION_COMPLETE, a + len);
        }
    }
    events.sort_by_key(|e| e.tick);
    Ok(events)
}

/// Offsets → master time → alignment → events.
pub fn process(raw: &RawEpisode, cfg: &PipelineConfig, episode_id: &str) -> Result<AlignedEpisode, Error> {
    cfg.check()?;
    let offsets = estimate_episode_offsets(raw, cfg.master)?;
    let on_master = apply_offsets(raw, &offsets)?;
    let mut ep = align(&on_master, cfg.rate_hz, &cfg.policy, &cfg.rig)?;
    ep.events = detect_events(&ep, &cfg.rig)?;
    ep.meta.episode_id = episode_id.to_string();
    ep.meta.master = cfg.master;
    ep.meta.devices = offsets
        .iter()
        .map(|(id, offset)| DeviceOffset { id, offset })
        .collect();
    Ok(ep)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n_ticks: usize,
    pub n_segments: usize,
    pub fine_fraction: f64,
}

impl Summary {
    pub fn of(ep: &AlignedEpisode) -> Self {
        Self {
            n_ticks: ep.n_ticks(),
            n_segments: ep.segments.len(),
            fine_fraction: ep.fine_fraction(),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n_ticks={} n_segments={} fine_fraction={:.4}",
            self.n_ticks, self.n_segments, self.fine_fraction
        )
    }
}

/// Read a raw session directory, process it and export the episode.
pub fn process_dir(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<Summary, Error> {
    cfg.check()?;
    let raw = read_raw_dir(input, cfg.devices, cfg.rig.markers, cfg.rig.tactile.count_ceiling)?;
    let id = output
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "episode".into());
    let ep = process(&raw, cfg, &id)?;
    export_episode(&ep, output)?;
    Ok(Summary::of(&ep))
}
