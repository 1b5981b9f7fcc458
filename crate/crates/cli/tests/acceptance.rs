//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vitac_core::config::PipelineConfig;
use vitac_core::dataset::raw::write_raw_dir;
use vitac_core::dataset::{encode_blobs, export_episode, load_episode, read_manifest, validate_episode, verify_blob, BLOBS};
use vitac_core::ingest::read_raw_dir;
use vitac_core::model::{
    ButtonEvent, DeviceId, Jaw, Label, PoseFrame, PoseSample, Segment, TactileGrid, TactileFrame, Timestamp,
    WidthSample, TAXELS, TAXEL_COLS,
};
use vitac_core::pipeline::{process, process_dir};
use vitac_core::pose_width::Rigid;
use vitac_core::segmentation::{debounce, label_frames, segments_from_button};
use vitac_core::simulator::{
    simulate, synth_tactile_imprint, toy_insertion_waypoints, ClockFault, CrossSection, ImprintSpec, Script,
    SimConfig, EVENT_APPROACH, EVENT_GRASP, EVENT_INITIAL_POSE, EVENT_INSERTION_COMPLETE,
};
use vitac_core::sync::{align_traced, apply_offsets, estimate_episode_offsets};
use vitac_core::tactile::{calibrate_frame, reconstruct_contact_points, ContactMask, JawGeometry};

type Check = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // NaN comparisons are false, so they fail the check.
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn s<E: Display>(e: E) -> String {
    e.to_string()
}

fn dev(name: &str) -> DeviceId {
    DeviceId::new(name).unwrap()
}

fn m(secs: f64) -> Timestamp {
    Timestamp::master(secs).unwrap()
}

/// Nearest sample by full scan; earlier sample on ties.
fn brute_nearest(times: &[f64], t: f64, max_gap: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in times.iter().enumerate() {
        let d = (x - t).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.filter(|&(_, d)| d <= max_gap).map(|(i, _)| i)
}

fn sync_oracle() -> Check {
    let mut cfg = SimConfig {
        time_scale: 60.0 / 14.0,
        ..SimConfig::default()
    };
    cfg.clock_faults.insert(dev("mcu"), ClockFault { offset: 2.5, jitter_std: 0.002, drop_prob: 0.0 });
    let out = simulate(&cfg).map_err(s)?;
    let dir = tempfile::tempdir().map_err(s)?;
    let raw_dir = dir.path().join("raw");
    write_raw_dir(&out.raw, &raw_dir).map_err(s)?;
    let pcfg = PipelineConfig::default();

    let start = Instant::now();
    let summary = process_dir(&raw_dir, &dir.path().join("ep"), &pcfg).map_err(s)?;
    let elapsed = start.elapsed().as_secs_f64();
    let secs = summary.n_ticks as f64 / pcfg.rate_hz;
    ensure!(secs >= 60.0, "episode only {secs} s long");
    ensure!(elapsed < 5.0, "processing took {elapsed:.2} s");

    let ep = load_episode(&dir.path().join("ep")).map_err(s)?;
    let off = ep.meta.devices.iter().find(|d| d.id == dev("mcu")).map(|d| d.offset);
    ensure!(off == Some(2.5), "estimated mcu offset {off:?}");

    let raw = read_raw_dir(&raw_dir, pcfg.devices, pcfg.rig.markers, pcfg.rig.tactile.count_ceiling).map_err(s)?;
    let offsets = estimate_episode_offsets(&raw, pcfg.master).map_err(s)?;
    let on_master = apply_offsets(&raw, &offsets).map_err(s)?;
    let (aligned, trace) = align_traced(&on_master, pcfg.rate_hz, &pcfg.policy, &pcfg.rig).map_err(s)?;
    let mut checked = 0;
    for (frames, chosen) in [
        (&on_master.tactile_left, &trace.tactile_left),
        (&on_master.tactile_right, &trace.tactile_right),
    ] {
        let times: Vec<f64> = frames.iter().map(|f| f.t().secs()).collect();
        for (k, t) in aligned.timeline.iter().enumerate() {
            let want = brute_nearest(&times, t.secs(), pcfg.policy.max_gap);
            ensure!(chosen[k] == want, "tick {k}: chose {:?}, scan gives {want:?}", chosen[k]);
            checked += 1;
        }
    }
    ensure!(
        aligned.tactile_left == ep.tactile_left && aligned.tactile_right == ep.tactile_right,
        "traced alignment differs from the exported episode"
    );
    Ok(format!(
        "offset 2.5 exact, {checked} nearest choices match scan, {:.1} s episode processed in {elapsed:.3} s",
        secs
    ))
}

fn ground_truth_recovery() -> Check {
    let cfg = SimConfig::default();
    let out = simulate(&cfg).map_err(s)?;
    let gt = &out.ground_truth;
    let ep = process(&out.raw, &PipelineConfig::default(), "gt").map_err(s)?;
    ensure!(ep.n_ticks() == gt.n_ticks(), "{} ticks vs {} in ground truth", ep.n_ticks(), gt.n_ticks());
    let mut pose_err: f64 = 0.0;
    let mut width_err: f64 = 0.0;
    for k in 0..gt.n_ticks() {
        ensure!((ep.timeline[k].secs() - gt.timeline[k].secs()).abs() < 1e-12, "timeline differs at {k}");
        pose_err = pose_err.max((ep.poses[k].translation() - gt.poses[k].translation()).norm());
        width_err = width_err.max((ep.widths[k].width() - gt.widths[k].width()).abs());
    }
    ensure!(pose_err < 1e-9, "pose error {pose_err:e} at coincident ticks");
    ensure!(width_err < 1e-9, "width error {width_err:e}");
    let boundaries: Vec<usize> = (1..gt.n_ticks()).filter(|&k| gt.labels[k] != gt.labels[k - 1]).collect();
    let mut label_diffs = 0;
    for k in 0..gt.n_ticks() {
        if ep.labels[k] != gt.labels[k] {
            label_diffs += 1;
            ensure!(
                boundaries.iter().any(|&b| b.abs_diff(k) <= 1),
                "label differs at tick {k}, away from any boundary"
            );
        }
    }

    // Twice the sample rate: odd ticks fall between pose samples.
    let pcfg = PipelineConfig {
        rate_hz: 2.0 * cfg.rates.pose,
        ..PipelineConfig::default()
    };
    let fine = process(&out.raw, &pcfg, "gt60").map_err(s)?;
    let wps = toy_insertion_waypoints(cfg.grip_thickness);
    let script = Script::new(&wps, gt.timeline[0].secs(), cfg.time_scale, cfg.rig.width_calib.width_max).map_err(s)?;
    // Cosine easing: |p''| peaks at |dp| * pi^2 / (2 T^2) on each leg.
    let max_acc = wps
        .windows(2)
        .map(|w| {
            let dp = (Vector3::from(w[1].position) - Vector3::from(w[0].position)).norm();
            let dt = (w[1].t - w[0].t) * cfg.time_scale;
            dp * std::f64::consts::PI.powi(2) / (2.0 * dt * dt)
        })
        .fold(0.0, f64::max);
    let h = 1.0 / cfg.rates.pose;
    let bound = h * h / 8.0 * max_acc;
    let (mut coincident, mut between): (f64, f64) = (0.0, 0.0);
    for k in 0..fine.n_ticks() {
        let truth = script.tcp(fine.timeline[k].secs()).translation;
        let e = (fine.poses[k].translation() - truth).norm();
        if k % 2 == 0 {
            coincident = coincident.max(e);
        } else {
            between = between.max(e);
        }
    }
    ensure!(coincident < 1e-9, "60 Hz grid: coincident error {coincident:e}");
    ensure!(between <= bound + 1e-12, "interpolated error {between:e} exceeds bound {bound:e}");
    Ok(format!(
        "pose {pose_err:.1e} m, width {width_err:.1e} m, {label_diffs} label diffs at boundaries, \
         interpolated {between:.2e} m <= bound {bound:.2e} m"
    ))
}

fn random_trace(rng: &mut ChaCha8Rng, t0: f64, t1: f64) -> Vec<ButtonEvent> {
    let mut events = Vec::new();
    let mut t = t0;
    let mut pressed = false;
    loop {
        t += if rng.random_bool(0.3) {
            rng.random_range(0.001..0.04)
        } else {
            rng.random_range(0.05..3.0)
        };
        if t >= t1 {
            return events;
        }
        pressed = !pressed;
        events.push(if pressed { ButtonEvent::press(m(t)) } else { ButtonEvent::release(m(t)) });
    }
}

fn oracle_label(segs: &[Segment], t: f64) -> Label {
    for sg in segs {
        if sg.t_start().secs() <= t && t < sg.t_end().secs() {
            return sg.label();
        }
    }
    segs.last().unwrap().label()
}

fn coarse_fine_semantics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let min_state = PipelineConfig::default().policy.debounce;
    let (mut ticks_checked, mut traces) = (0, 0);
    while ticks_checked < 10_000 {
        traces += 1;
        let t0 = rng.random_range(0.0..100.0);
        let t1 = t0 + rng.random_range(1.0..60.0);
        let events = debounce(&random_trace(&mut rng, t0, t1), min_state);
        for w in events.windows(2) {
            ensure!(w[0].edge != w[1].edge, "debounced trace does not alternate");
            ensure!(w[1].t.secs() - w[0].t.secs() >= min_state, "debounced state shorter than {min_state}");
        }
        let segs = segments_from_button(&events, (m(t0), m(t1))).map_err(s)?;
        ensure!(segs[0].t_start().secs() == t0, "first segment starts late");
        ensure!(segs.last().unwrap().t_end().secs() == t1, "last segment ends early");
        for w in segs.windows(2) {
            ensure!(w[0].t_end().secs() == w[1].t_start().secs(), "gap or overlap between segments");
        }
        let mut pressed_time = 0.0;
        let mut since = None;
        for e in &events {
            match since.take() {
                None => since = Some(e.t.secs()),
                Some(p) => pressed_time += e.t.secs() - p,
            }
        }
        if let Some(p) = since {
            pressed_time += t1 - p;
        }
        let fine: f64 = segs.iter().filter(|s| s.label() == Label::Fine).map(|s| s.len_secs()).sum();
        let tol = 4.0 * f64::EPSILON * t1 * (segs.len() as f64);
        ensure!((fine - pressed_time).abs() <= tol, "fine {fine} vs pressed {pressed_time}");

        let mut ts: Vec<f64> = (0..50).map(|_| rng.random_range(t0..t1)).collect();
        ts.push(t1);
        ts.sort_by(f64::total_cmp);
        let timeline: Vec<Timestamp> = ts.iter().map(|&t| m(t)).collect();
        let labels = label_frames(&timeline, &segs).map_err(s)?;
        for (t, l) in ts.iter().zip(&labels) {
            ensure!(*l == oracle_label(&segs, *t), "label at {t} disagrees with linear search");
        }
        ticks_checked += ts.len();
    }
    Ok(format!("{traces} traces tile exactly, Fine time conserved, {ticks_checked} ticks match linear search"))
}

fn random_rigid(rng: &mut ChaCha8Rng) -> Rigid {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rot = UnitQuaternion::from_scaled_axis(axis * std::f64::consts::PI);
    let q = rot.quaternion();
    let tr = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    Rigid::new(tr, [q.w, q.i, q.j, q.k]).unwrap()
}

fn tcp_pose(r: &Rigid) -> PoseSample {
    PoseSample::new(m(0.0), PoseFrame::Tcp, r.translation, *r.rotation.quaternion()).unwrap()
}

fn contact_geometry() -> Check {
    let g = JawGeometry::default();
    let curve = PipelineConfig::default().rig.tactile.calib;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let jaw = if i % 2 == 0 { Jaw::Left } else { Jaw::Right };
        let mut mask = ContactMask::empty(m(0.0), jaw);
        let mut cells = [0u16; TAXELS];
        for (k, c) in cells.iter_mut().enumerate() {
            if rng.random_bool(0.3) {
                mask.mask[k] = true;
                *c = rng.random_range(1..=1023);
            }
        }
        let forces = calibrate_frame(&TactileFrame::new(m(0.0), jaw, TactileGrid::new(cells, 1023).unwrap()), &curve);
        let width = WidthSample::new(m(0.0), rng.random_range(0.0..0.08), 0.08).unwrap();
        let tcp = random_rigid(&mut rng);
        let t = random_rigid(&mut rng);
        let a = reconstruct_contact_points(&mask, &forces, &tcp_pose(&tcp), &width, &g).map_err(s)?;
        let b = reconstruct_contact_points(&mask, &forces, &tcp_pose(&t.compose(&tcp)), &width, &g).map_err(s)?;
        let population = mask.mask.iter().filter(|&&x| x).count();
        ensure!(a.len() == population && b.len() == population, "point count differs from mask population");
        for (pa, pb) in a.iter().zip(&b) {
            worst = worst.max((t.apply(&pa.point) - pb.point).norm());
            ensure!(pa.force == pb.force, "force changed under a rigid motion");
        }
    }
    ensure!(worst <= 1e-12, "equivariance error {worst:e}");

    let mut mask = ContactMask::empty(m(0.0), Jaw::Left);
    mask.mask[0] = true;
    let forces = calibrate_frame(&TactileFrame::zeros(m(0.0), Jaw::Left), &curve);
    let g = JawGeometry { pad_size: 0.00125 * 16.0, pad_center_offset: [0.0; 3] };
    let width = WidthSample::new(m(0.0), 0.04, 0.08).unwrap();
    let p = reconstruct_contact_points(&mask, &forces, &PoseSample::identity(m(0.0), PoseFrame::Tcp), &width, &g)
        .map_err(s)?;
    let want = Vector3::new(-0.009375, -0.02, -0.009375);
    let e = (p[0].point - want).amax();
    ensure!(p.len() == 1 && e <= 1e-15, "taxel (0,0) at {:?}", p[0].point);
    Ok(format!("1000 transforms equivariant to {worst:.1e} m, taxel (0,0) error {e:.1e} m"))
}

fn random_shape(rng: &mut ChaCha8Rng) -> CrossSection {
    match rng.random_range(0..3) {
        0 => CrossSection::Circle { r: rng.random_range(0.001..0.012) },
        1 => CrossSection::Hexagon { r: rng.random_range(0.001..0.012) },
        _ => CrossSection::Rectangle { w: rng.random_range(0.002..0.02), h: rng.random_range(0.002..0.02) },
    }
}

fn corrupt_all(dir: &Path, rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let manifest = read_manifest(dir).map_err(s)?;
    let mut flips = 0;
    for (name, file) in BLOBS {
        let bytes = fs::read(dir.join(file)).map_err(s)?;
        let positions: Vec<usize> = if bytes.len() <= 4096 {
            (0..bytes.len()).collect()
        } else {
            let mut p: Vec<usize> = (0..64).map(|_| rng.random_range(0..bytes.len())).collect();
            p.extend([0, bytes.len() - 1]);
            p
        };
        for p in positions {
            let mut b = bytes.clone();
            b[p] ^= rng.random_range(1..=255u8);
            ensure!(verify_blob(&manifest, name, &b).is_err(), "flip at {name}[{p}] undetected");
            flips += 1;
        }
    }
    let (_, file) = BLOBS[rng.random_range(0..BLOBS.len())];
    let path = dir.join(file);
    let mut b = fs::read(&path).map_err(s)?;
    let p = rng.random_range(0..b.len());
    b[p] ^= 0x40;
    fs::write(&path, b).map_err(s)?;
    ensure!(load_episode(dir).is_err(), "loading with {file}[{p}] flipped succeeded");
    Ok(flips + 1)
}

fn format_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let root = tempfile::tempdir().map_err(s)?;
    let mut flips = 0;
    for i in 0..100u64 {
        let mut cfg = SimConfig {
            seed: i,
            time_scale: rng.random_range(0.3..1.0),
            object: random_shape(&mut rng),
            tactile_noise_std: rng.random_range(0.0..4.0),
            ..SimConfig::default()
        };
        for d in ["cam", "mcu"] {
            let f = ClockFault {
                offset: rng.random_range(-3.0..3.0),
                jitter_std: rng.random_range(0.0..0.003),
                drop_prob: rng.random_range(0.0..0.1),
            };
            cfg.clock_faults.insert(dev(d), f);
        }
        let out = simulate(&cfg).map_err(s)?;
        let ep = process(&out.raw, &PipelineConfig::default(), &format!("fuzz-{i}")).map_err(|e| format!("episode {i}: {e}"))?;
        let dir = root.path().join(format!("ep{i}"));
        export_episode(&ep, &dir).map_err(s)?;
        let back = load_episode(&dir).map_err(s)?;
        ensure!(back == ep, "episode {i} changed in the round trip");
        let blobs = encode_blobs(&back);
        for (name, file) in BLOBS {
            ensure!(fs::read(dir.join(file)).map_err(s)? == blobs[name], "episode {i}: {file} re-encodes differently");
        }
        let v = validate_episode(&dir);
        ensure!(v.is_empty(), "episode {i}: {} violations, first: {}", v.len(), v[0]);
        flips += corrupt_all(&dir, &mut rng)?;
    }
    Ok(format!("100 episodes bit-exact and valid, {flips} single-byte corruptions all detected"))
}

fn vitac(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vitac")).args(args).output().map_err(s)?;
    ensure!(
        out.status.success(),
        "vitac {}: {}\n{}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).map_err(s)
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn fig2_properties() -> Check {
    let dir = tempfile::tempdir().map_err(s)?;
    let d = |p: &str| dir.path().join(p).display().to_string();
    vitac(&["simulate", "--out", &d("sim"), "--seed", "0"])?;
    let cfg = default_config().display().to_string();
    vitac(&["process", "--in", &d("sim/raw"), "--out", &d("ep"), "--config", &cfg])?;

    let events = vitac(&["inspect", "--in", &d("ep"), "--events"])?;
    let rows: Vec<Vec<&str>> = events.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    let want = [EVENT_INITIAL_POSE, EVENT_GRASP, EVENT_APPROACH, EVENT_INSERTION_COMPLETE];
    ensure!(names == want, "events {names:?}");
    let ticks: Vec<usize> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    for (i, r) in rows.iter().enumerate() {
        ensure!(r[0] == (i + 1).to_string(), "event order column {}", r[0]);
    }
    ensure!(ticks.windows(2).all(|w| w[0] < w[1]), "event ticks not increasing: {ticks:?}");

    let csv = vitac(&["inspect", "--in", &d("ep"), "--csv", "width"])?;
    let widths: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let rate = PipelineConfig::default().rate_hz;
    let wps = toy_insertion_waypoints(SimConfig::default().grip_thickness);
    let closing = wps.iter().position(|w| w.event.as_deref() == Some(EVENT_GRASP)).unwrap();
    let delta = wps[closing].t - wps[closing - 1].t;
    let (grasp, done) = (ticks[1], ticks[3]);
    let from = grasp - (delta * rate).ceil() as usize;
    for k in from..grasp {
        ensure!(widths[k + 1] <= widths[k], "width rises at tick {k} before the grasp");
    }
    ensure!(widths[from] - widths[grasp] > 0.03, "no closure before the grasp");
    let reopened = widths[done..].iter().cloned().fold(f64::MIN, f64::max);
    ensure!(reopened > widths[done] + 0.03, "width does not increase after insertion");
    Ok(format!(
        "events at ticks {ticks:?}, width falls {:.3} m over {delta:.2} s to the grasp and rises {:.3} m after insertion",
        widths[from] - widths[grasp],
        reopened - widths[done]
    ))
}

/// Inside test against the explicit hexagon polygon.
fn in_hexagon(r: f64, x: f64, y: f64) -> bool {
    let v: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    (0..6).all(|k| {
        let (ax, ay) = v[k];
        let (bx, by) = v[(k + 1) % 6];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

/// Counts for `force` on a piecewise-linear curve given as (count, newtons).
fn counts_for(points: &[(f64, f64)], force: f64) -> f64 {
    for w in points.windows(2) {
        let ((c0, f0), (c1, f1)) = (w[0], w[1]);
        if force <= f1 {
            return c0 + (force - f0) * (c1 - c0) / (f1 - f0);
        }
    }
    points.last().unwrap().0
}

fn imprint_rasterization() -> Check {
    let rig = PipelineConfig::default().rig;
    let g = rig.tactile.geometry;
    let curve = rig.tactile.calib;
    let pitch = g.pad_size / 16.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut active = 0;
    for i in 0..50 {
        let r = rng.random_range(0.0005..0.014);
        let shape = if i % 2 == 0 { CrossSection::Hexagon { r } } else { CrossSection::Circle { r } };
        let force = rng.random_range(0.2..3.9);
        let spec = ImprintSpec {
            shape,
            grip_force: force,
            noise_std: 0.0,
            geometry: &g,
            curve: &curve,
            ceiling: 1023,
        };
        let frame = synth_tactile_imprint(&spec, i, m(0.0), Jaw::Left).map_err(s)?;
        let level = counts_for(curve.points(), force).round() as u16;
        for (k, &c) in frame.grid().cells().iter().enumerate() {
            let (row, col) = (k / TAXEL_COLS, k % TAXEL_COLS);
            let (x, y) = ((col as f64 - 7.5) * pitch, (row as f64 - 7.5) * pitch);
            let inside = match shape {
                CrossSection::Hexagon { r } => in_hexagon(r, x, y),
                _ => x * x + y * y <= r * r,
            };
            let want = if inside { level } else { 0 };
            ensure!(c == want, "shape {shape:?}: taxel ({row},{col}) has {c}, oracle {want}");
            active += usize::from(inside);
        }
    }
    Ok(format!("50 imprints match the point-in-shape oracle on all taxels ({active} active cells)"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        (1, "synchronization oracle", sync_oracle),
        (2, "ground-truth recovery", ground_truth_recovery),
        (3, "coarse/fine semantics", coarse_fine_semantics),
        (4, "contact-geometry reconstruction", contact_geometry),
        (5, "format round trip", format_round_trip),
        (6, "width and event properties", fig2_properties),
        (7, "imprint rasterization", imprint_rasterization),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.2}s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {e} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
