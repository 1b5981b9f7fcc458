//! Writers for the raw device log formats read by [`crate::ingest`].
//! Floats are printed in shortest round-trip form, so parsing a written log
//! gives back the same values.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::ingest::{
    MarkerObservation, BUTTON_FILE, FRAMES_FILE, MARKER_FILE, SYNC_FILE, TACTILE_FILE,
    TACTILE_MAGIC, TACTILE_RECORD_LEN, TRAJECTORY_FILE,
};
use crate::model::{ButtonEvent, DeviceId, Edge, FrameRef, PoseSample, RawEpisode, TactileFrame, Timestamp};

pub fn format_trajectory(poses: &[PoseSample]) -> String {
    let mut s = String::from("# t tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.translation();
        let [w, x, y, z] = p.quat_wxyz();
        writeln!(s, "{} {} {} {} {} {} {} {}", p.t().secs(), t.x, t.y, t.z, x, y, z, w).unwrap();
    }
    s
}

pub fn serialize_tactile_log(frames: &[TactileFrame]) -> Vec<u8> {
    let mut b = Vec::with_capacity(frames.len() * TACTILE_RECORD_LEN);
    for f in frames {
        b.extend_from_slice(&TACTILE_MAGIC.to_le_bytes());
        b.extend_from_slice(&f.t().secs().to_le_bytes());
        b.push(f.jaw().as_u8());
        b.extend_from_slice(&[0, 0]);
        for c in f.grid().cells() {
            b.extend_from_slice(&c.to_le_bytes());
        }
    }
    b
}

/// Interleave both jaws in time order; left first on equal times.
pub fn merge_tactile(left: &[TactileFrame], right: &[TactileFrame]) -> Vec<TactileFrame> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() || j < right.len() {
        let take_left = j == right.len()
            || (i < left.len() && left[i].t().secs() <= right[j].t().secs());
        if take_left {
            out.push(left[i].clone());
            i += 1;
        } else {
            out.push(right[j].clone());
            j += 1;
        }
    }
    out
}

pub fn format_button_log(events: &[ButtonEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let edge = match e.edge {
            Edge::Press => "P",
            Edge::Release => "R",
        };
        writeln!(s, "{} {edge}", e.t.secs()).unwrap();
    }
    s
}

pub fn format_marker_log(markers: &[MarkerObservation]) -> String {
    let mut s = String::new();
    for m in markers {
        let p = m.translation();
        writeln!(s, "{} {} {} {} {}", m.t().secs(), m.marker_id(), p.x, p.y, p.z).unwrap();
    }
    s
}

pub fn format_frames_log(frames: &[FrameRef]) -> String {
    let mut s = String::new();
    for f in frames {
        writeln!(s, "{} {} {}", f.t.secs(), f.index, f.uri).unwrap();
    }
    s
}

pub fn format_sync_log<'a>(markers: impl IntoIterator<Item = (&'a DeviceId, &'a Timestamp)>) -> String {
    let mut s = String::new();
    for (d, t) in markers {
        writeln!(s, "{d} {}", t.secs()).unwrap();
    }
    s
}

/// Write all six device logs of `raw` into `dir` (created if needed).
pub fn write_raw_dir(raw: &RawEpisode, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRAJECTORY_FILE), format_trajectory(&raw.trajectory))?;
    fs::write(
        dir.join(TACTILE_FILE),
        serialize_tactile_log(&merge_tactile(&raw.tactile_left, &raw.tactile_right)),
    )?;
    fs::write(dir.join(BUTTON_FILE), format_button_log(&raw.buttons))?;
    fs::write(dir.join(MARKER_FILE), format_marker_log(&raw.markers))?;
    fs::write(dir.join(FRAMES_FILE), format_frames_log(&raw.frames))?;
    fs::write(dir.join(SYNC_FILE), format_sync_log(&raw.sync_markers))?;
    Ok(())
}
