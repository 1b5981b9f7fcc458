//! Annotation button → debounced edges → coarse/fine segments → per-tick labels.

use thiserror::Error;

use crate::model::{ButtonEvent, Edge, Label, ModelError, Segment, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("segment span [{0}, {1}] is empty")]
    SpanEmpty(f64, f64),
    #[error("tick {0} lies outside the segmented span")]
    TickOutsideSpan(f64),
    #[error("no segments to label against")]
    NoSegments,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Drop every pressed or released state shorter than `min_state` by deleting
/// the two edges around it. Scans from the end so that a bounce burst keeps
/// its first edge. Idempotent, and only ever removes events.
pub fn debounce(events: &[ButtonEvent], min_state: f64) -> Vec<ButtonEvent> {
    let mut kept: Vec<ButtonEvent> = Vec::with_capacity(events.len());
    for e in events.iter().rev() {
        match kept.last() {
            Some(next) if next.t.secs() - e.t.secs() < min_state => {
                kept.pop();
            }
            _ => kept.push(*e),
        }
    }
    kept.reverse();
    kept
}

/// Tile `[t0, t1)` with segments: Fine while the button is held, Coarse
/// otherwise. The button starts released; a press without a release is
/// closed at `t1`.
pub fn segments_from_button(
    events: &[ButtonEvent],
    span: (Timestamp, Timestamp),
) -> Result<Vec<Segment>, SegmentError> {
    let (t0, t1) = span;
    t0.same_clock(&t1)?;
    if t0.secs() >= t1.secs() {
        return Err(SegmentError::SpanEmpty(t0.secs(), t1.secs()));
    }
    let mut label = Label::Coarse;
    let mut cursor = t0;
    let mut out: Vec<Segment> = Vec::new();
    for e in events {
        t0.same_clock(&e.t)?;
        let next = match e.edge {
            Edge::Press => Label::Fine,
            Edge::Release => Label::Coarse,
        };
        if next == label {
            continue;
        }
        if e.t.secs() >= t1.secs() {
            break;
        }
        if e.t.secs() > cursor.secs() {
            out.push(Segment::new(cursor, e.t, label)?);
            cursor = e.t;
        }
        label = next;
    }
    out.push(Segment::new(cursor, t1, label)?);
    Ok(out)
}

fn coalesce(segs: Vec<Segment>) -> Result<Vec<Segment>, ModelError> {
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(prev) if prev.label() == s.label() => {
                *prev = Segment::new(prev.t_start(), s.t_end(), s.label())?;
            }
            _ => out.push(s),
        }
    }
    Ok(out)
}

/// Absorb segments shorter than `min_len` into their longer neighbor
/// (earlier neighbor on ties), shortest first, then join equal labels.
pub fn merge_short_segments(segs: &[Segment], min_len: f64) -> Result<Vec<Segment>, SegmentError> {
    let mut segs = coalesce(segs.to_vec())?;
    loop {
        if segs.len() < 2 {
            return Ok(segs);
        }
        let shortest = segs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len_secs() < min_len)
            .min_by(|a, b| a.1.len_secs().total_cmp(&b.1.len_secs()));
        let Some((i, short)) = shortest.map(|(i, s)| (i, *s)) else {
            return Ok(segs);
        };
        let prev_len = if i > 0 { segs[i - 1].len_secs() } else { f64::NEG_INFINITY };
        let next_len = segs.get(i + 1).map(|s| s.len_secs()).unwrap_or(f64::NEG_INFINITY);
        if prev_len >= next_len {
            let p = segs[i - 1];
            segs[i - 1] = Segment::new(p.t_start(), short.t_end(), p.label())?;
        } else {
            let n = segs[i + 1];
            segs[i + 1] = Segment::new(short.t_start(), n.t_end(), n.label())?;
        }
        segs.remove(i);
        segs = coalesce(segs)?;
    }
}

/// Label each tick with the segment `[start, end)` containing it; a tick at
/// the very end of the span takes the last segment.
pub fn label_frames(timeline: &[Timestamp], segs: &[Segment]) -> Result<Vec<Label>, SegmentError> {
    let (first, last) = match (segs.first(), segs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SegmentError::NoSegments),
    };
    timeline
        .iter()
        .map(|t| {
            t.same_clock(&first.t_start())?;
            let s = t.secs();
            if s < first.t_start().secs() || s > last.t_end().secs() {
                return Err(SegmentError::TickOutsideSpan(s));
            }
            let i = segs.partition_point(|seg| seg.t_start().secs() <= s);
            Ok(segs[i.saturating_sub(1)].label())
        })
        .collect()
}
