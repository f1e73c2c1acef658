//! Synthetic pen recordings.
//!
//! Each writer gets a [`WriterStyle`] drawn from a seed derived from the master
//! seed and the writer index. A letter is produced by distorting its stroke
//! template per writer (and slightly per repetition), moving the pen tip along
//! it with minimum-jerk velocity profiles, and turning the resulting motion
//! into the 13 sensor channels:
//!
//! - accelerometers: specific force at two points along the pen axis,
//!   rotated into the pen frame;
//! - gyroscope: body rate from the pen orientation, which tilts as the tip
//!   moves relative to the grip plus a small tremor wobble;
//! - magnetometer: a fixed earth field rotated into the pen frame;
//! - force: an on-paper profile during strokes, near zero while lifted.
//!
//! Every channel is clipped to the sensor range and quantized to the sensor
//! resolution, so written files re-read bit-exactly.

pub mod motion;
pub mod template;

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    self, channel_bounds, IngestError, LabelInterval, LetterCase, LetterSample, SensorFrame,
    FRAME_PERIOD_MS,
};
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};
use crate::NUM_CHANNELS;
use motion::{PenState, DT, GRAVITY};
pub use template::{letter_template, StrokeTemplate};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown letter {0:?}")]
    UnknownLabel(char),
    #[error("invalid writer style: {0}")]
    InvalidStyle(String),
    #[error("invalid generator request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mean tip speed at `speed_scale = 1`, mm/s.
const BASE_SPEED_MM_S: f64 = 35.0;
/// Vertices turning more than this split a stroke into separate movements.
const CORNER_TURN_RAD: f64 = 1.0;
const MIN_PART_FRAMES: usize = 8;
const MIN_STROKE_FRAMES: usize = 15;
const MIN_LIFT_FRAMES: usize = 12;
const LIFT_HEIGHT_MM: f64 = 3.0;
/// Hover padding before and after the letter, in frames.
const HOVER_FRAMES: std::ops::RangeInclusive<usize> = 20..=40;
/// Distance from the tip to the grip pivot; tip displacement tilts the pen by
/// `displacement / PIVOT_MM` radians.
const PIVOT_MM: f64 = 40.0;
const FRONT_SENSOR_MM: f64 = 15.0;
const REAR_SENSOR_MM: f64 = 120.0;
/// Tremor wobble amplitude per unit of tremor noise, rad per m/s².
const WOBBLE_RAD_PER_MS2: f64 = 0.01;
const EARTH_FIELD_MT: f64 = 0.05;
const FIELD_INCLINATION_RAD: f64 = 1.1;
const GYRO_NOISE_DPS: f64 = 0.3;
const MAG_NOISE_MT: f64 = 0.0005;
const LIFT_FORCE_MAX: f64 = 0.04;
/// Lowercase shapes vary more between writers than uppercase shapes.
const LOWERCASE_SHAPE_FACTOR: f64 = 1.8;

/// Sensor resolution per channel (range / 2^bits).
fn channel_lsb(channel: usize) -> f64 {
    match channel {
        0..=2 => 4.0 / 65536.0,
        3..=5 => 4.0 / 16384.0,
        6..=8 => 2000.0 / 65536.0,
        9..=11 => 4.8 / 16384.0,
        _ => 5.32 / 4096.0,
    }
}

fn quantize(channel: usize, value: f64) -> f64 {
    let (lo, hi) = channel_bounds(channel);
    let lsb = channel_lsb(channel);
    ((value.clamp(lo, hi) / lsb).round() * lsb).clamp(lo, hi)
}

/// Per-writer handwriting and pen-holding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub speed_scale: f64,
    /// Letter height, mm.
    pub size_mm: f64,
    /// Forward slant as a shear angle, rad.
    pub slant_rad: f64,
    /// Acceleration noise, m/s².
    pub tremor_sigma: f64,
    /// Pen orientation at rest, `[w, x, y, z]`.
    pub hold_quaternion: [f64; 4],
    /// Typical on-paper force, N.
    pub force_base: f64,
    pub seed: u64,
    /// Width-to-height ratio applied to templates.
    pub aspect: f64,
    /// Amplitude of smooth shape distortion, in template units.
    pub shape_jitter: f64,
    /// Paper orientation relative to magnetic north, rad.
    pub heading_rad: f64,
}

impl WriterStyle {
    pub fn draw(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let tilt = rng.random_range(0.6..0.95);
        let azimuth = rng.random_range(-0.9..-0.3);
        let roll = rng.random_range(-0.25..0.25);
        let hold = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), azimuth)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), tilt)
            * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll);
        let q = hold.into_inner();
        WriterStyle {
            speed_scale: rng.random_range(0.7..1.4),
            size_mm: rng.random_range(8.0..20.0),
            slant_rad: rng.random_range(-0.2..0.35),
            tremor_sigma: rng.random_range(0.02..0.1),
            hold_quaternion: [q.w, q.i, q.j, q.k],
            force_base: rng.random_range(0.8..2.2),
            seed,
            aspect: rng.random_range(0.8..1.2),
            shape_jitter: rng.random_range(0.02..0.05),
            heading_rad: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        }
    }

    /// Neutral writer: upright pen, no slant, no tremor.
    pub fn neutral(seed: u64) -> Self {
        WriterStyle {
            speed_scale: 1.0,
            size_mm: 12.0,
            slant_rad: 0.0,
            tremor_sigma: 0.0,
            hold_quaternion: [1.0, 0.0, 0.0, 0.0],
            force_base: 1.2,
            seed,
            aspect: 1.0,
            shape_jitter: 0.0,
            heading_rad: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidStyle(m));
        let [w, x, y, z] = self.hold_quaternion;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("hold quaternion norm {norm}"));
        }
        if !(self.force_base > 0.2 && self.force_base < ingest::FORCE_MAX) {
            return bad(format!("force_base {} outside (0.2, 5.32)", self.force_base));
        }
        if !(self.speed_scale > 0.0 && self.size_mm > 0.0 && self.aspect > 0.0) {
            return bad("speed_scale, size_mm and aspect must be positive".into());
        }
        if !(self.tremor_sigma >= 0.0 && self.shape_jitter >= 0.0) {
            return bad("tremor_sigma and shape_jitter must be non-negative".into());
        }
        Ok(())
    }

    fn hold(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.hold_quaternion;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }
}

/// Smooth displacement field over the unit box, two harmonics per axis.
#[derive(Debug, Clone, Copy)]
struct Warp {
    amp: f64,
    coef: [f64; 4],
    phase: [f64; 4],
}

impl Warp {
    fn draw(rng: &mut Rng, amp: f64) -> Self {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut coef = [0.0; 4];
        let mut phase = [0.0; 4];
        for k in 0..4 {
            coef[k] = n.sample(rng);
            phase[k] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        Warp { amp, coef, phase }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        use std::f64::consts::PI;
        let [x, y] = p;
        let c = &self.coef;
        let ph = &self.phase;
        let dx = c[0] * (PI * y + ph[0]).sin() + 0.5 * c[1] * (2.0 * PI * y + ph[1]).sin();
        let dy = c[2] * (PI * x + ph[2]).sin() + 0.5 * c[3] * (2.0 * PI * x + ph[3]).sin();
        [x + self.amp * dx, y + self.amp * dy]
    }
}

fn letter_tag(letter: char) -> u64 {
    letter as u64
}

/// Writes one letter with the given style. The returned sample starts at
/// `t_ms = 0`, has an empty writer id and `seq = 0`.
pub fn synthesize_sample(
    template: &StrokeTemplate,
    style: &WriterStyle,
    rng_seed: u64,
) -> LetterSample {
    let mut rng = rng_from_seed(rng_seed);
    let case_factor = match template.case {
        LetterCase::Upper => 1.0,
        LetterCase::Lower => LOWERCASE_SHAPE_FACTOR,
    };

    // Writer-specific letter shape, stable across repetitions.
    let mut letter_rng = rng_from_seed(derive_seed(style.seed, tag::LETTER, letter_tag(template.letter)));
    let writer_warp = Warp::draw(&mut letter_rng, style.shape_jitter * case_factor);
    let rep_warp = Warp::draw(&mut rng, 0.25 * style.shape_jitter * case_factor);

    let size = style.size_mm * rng.random_range(0.95..1.05);
    let speed = BASE_SPEED_MM_S * style.speed_scale * rng.random_range(0.9..1.1);
    let force_base = style.force_base * rng.random_range(0.9..1.1);
    let shear = style.slant_rad.tan();
    let to_mm = |p: [f64; 2]| -> [f64; 2] {
        let [x, y] = rep_warp.apply(writer_warp.apply(p));
        [size * (style.aspect * x + shear * y), size * y]
    };
    let strokes: Vec<Vec<[f64; 2]>> = template
        .strokes
        .iter()
        .map(|s| s.iter().map(|&p| to_mm(p)).collect())
        .collect();

    // Tip trajectory and force at 100 Hz.
    let mut states: Vec<PenState> = Vec::new();
    let mut force: Vec<f64> = Vec::new();
    let lift_force = |rng: &mut Rng| rng.random_range(0.0..LIFT_FORCE_MAX);
    let start = strokes[0][0];
    for _ in 0..rng.random_range(HOVER_FRAMES) {
        states.push(PenState {
            tip_mm: Vector3::new(start[0], start[1], 0.0),
            contact: false,
        });
        force.push(lift_force(&mut rng));
    }
    let force_noise = Normal::new(0.0, 0.02 * force_base).expect("finite sigma");
    for (si, stroke) in strokes.iter().enumerate() {
        if si > 0 {
            let from = strokes[si - 1].last().copied().expect("non-empty stroke");
            let to = stroke[0];
            let dist = (to[0] - from[0]).hypot(to[1] - from[1]);
            let frames = MIN_LIFT_FRAMES.max((dist / (1.5 * speed) / DT).ceil() as usize);
            motion::traverse(&mut states, &[from, to], frames, false, LIFT_HEIGHT_MM);
            for _ in 0..frames {
                force.push(lift_force(&mut rng));
            }
        }
        let parts = motion::split_at_corners(stroke, CORNER_TURN_RAD);
        let mut frames_per_part: Vec<usize> = parts
            .iter()
            .map(|p| MIN_PART_FRAMES.max((motion::polyline_length(p) / speed / DT).ceil() as usize))
            .collect();
        let total: usize = frames_per_part.iter().sum();
        if total < MIN_STROKE_FRAMES {
            *frames_per_part.last_mut().expect("at least one part") += MIN_STROKE_FRAMES - total;
        }
        let total: usize = frames_per_part.iter().sum();
        for (part, &frames) in parts.iter().zip(&frames_per_part) {
            motion::traverse(&mut states, part, frames, true, 0.0);
        }
        let wobble_phase = rng.random_range(0.0..std::f64::consts::TAU);
        for j in 0..total {
            let ramp = 1f64.min((j + 1) as f64 / 3.0).min((total - j) as f64 / 3.0);
            let shape = 1.0 + 0.15 * (std::f64::consts::TAU * 1.5 * j as f64 / total as f64 + wobble_phase).sin();
            force.push(force_base * ramp * shape + force_noise.sample(&mut rng));
        }
    }
    let end = states.last().map(|s| s.tip_mm).expect("non-empty trajectory");
    for _ in 0..rng.random_range(HOVER_FRAMES) {
        states.push(PenState {
            tip_mm: Vector3::new(end.x, end.y, 0.0),
            contact: false,
        });
        force.push(lift_force(&mut rng));
    }
    debug_assert_eq!(states.len(), force.len());

    // Orientation: grip pivot tilt plus tremor wobble.
    let (lo, hi) = bounds_mm(&strokes);
    let center = Vector3::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, 0.0);
    let hold = style.hold();
    let wobble_amp = style.tremor_sigma * WOBBLE_RAD_PER_MS2;
    let wobble_hz = [rng.random_range(8.0..11.0), rng.random_range(8.0..11.0)];
    let wobble_phase = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let orientations: Vec<UnitQuaternion<f64>> = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let d = s.tip_mm - center;
            let t = k as f64 * DT;
            let wob = |axis: usize| {
                wobble_amp * (std::f64::consts::TAU * wobble_hz[axis] * t + wobble_phase[axis]).sin()
            };
            let tilt = UnitQuaternion::from_euler_angles(-d.y / PIVOT_MM + wob(0), d.x / PIVOT_MM + wob(1), 0.0);
            tilt * hold
        })
        .collect();

    let sensor_positions = |offset_mm: f64| -> Vec<Vector3<f64>> {
        states
            .iter()
            .zip(&orientations)
            .map(|(s, q)| (s.tip_mm + q * Vector3::new(0.0, 0.0, offset_mm)) / 1000.0)
            .collect()
    };
    let acc_front = motion::acceleration(&sensor_positions(FRONT_SENSOR_MM));
    let acc_rear = motion::acceleration(&sensor_positions(REAR_SENSOR_MM));
    let omega = motion::angular_velocity(&orientations);
    let field = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), style.heading_rad)
        * Vector3::new(FIELD_INCLINATION_RAD.cos(), 0.0, -FIELD_INCLINATION_RAD.sin())
        * EARTH_FIELD_MT;

    let tremor = (style.tremor_sigma > 0.0)
        .then(|| Normal::new(0.0, style.tremor_sigma).expect("finite tremor sigma"));
    let gyro_noise = Normal::new(0.0, GYRO_NOISE_DPS).expect("finite sigma");
    let mag_noise = Normal::new(0.0, MAG_NOISE_MT).expect("finite sigma");
    let up = Vector3::new(0.0, 0.0, GRAVITY);

    let frames = (0..states.len())
        .map(|k| {
            let q_inv = orientations[k].inverse();
            let specific = |a: Vector3<f64>, rng: &mut Rng| -> Vector3<f64> {
                let mut f = q_inv * (a + up);
                if let Some(n) = &tremor {
                    f += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
                }
                f / GRAVITY
            };
            let af = specific(acc_front[k], &mut rng);
            let ar = specific(acc_rear[k], &mut rng);
            let g = omega[k].map(f64::to_degrees)
                + Vector3::new(
                    gyro_noise.sample(&mut rng),
                    gyro_noise.sample(&mut rng),
                    gyro_noise.sample(&mut rng),
                );
            let m = q_inv * field
                + Vector3::new(
                    mag_noise.sample(&mut rng),
                    mag_noise.sample(&mut rng),
                    mag_noise.sample(&mut rng),
                );
            let raw: [f64; NUM_CHANNELS] = [
                af.x, af.y, af.z, ar.x, ar.y, ar.z, g.x, g.y, g.z, m.x, m.y, m.z, force[k],
            ];
            let mut channels = [0.0; NUM_CHANNELS];
            for (c, v) in raw.into_iter().enumerate() {
                channels[c] = quantize(c, v);
            }
            SensorFrame::from_channels(k as i64 * FRAME_PERIOD_MS, channels)
        })
        .collect();

    LetterSample {
        frames,
        label: template.letter,
        writer_id: String::new(),
        case: template.case,
        seq: 0,
    }
}

fn bounds_mm(strokes: &[Vec<[f64; 2]>]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in strokes.iter().flatten() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CaseSet {
    #[default]
    Upper,
    Lower,
    Both,
}

impl CaseSet {
    /// Cases in session order: uppercase alphabet first.
    pub fn cases(self) -> &'static [LetterCase] {
        match self {
            CaseSet::Upper => &[LetterCase::Upper],
            CaseSet::Lower => &[LetterCase::Lower],
            CaseSet::Both => &[LetterCase::Upper, LetterCase::Lower],
        }
    }
}

impl std::str::FromStr for CaseSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(CaseSet::Upper),
            "lower" => Ok(CaseSet::Lower),
            "both" => Ok(CaseSet::Both),
            other => Err(format!("unknown case set `{other}` (upper, lower or both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_writers: usize,
    pub reps_per_letter: usize,
    pub cases: CaseSet,
    pub master_seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_writers == 0 || self.reps_per_letter == 0 {
            return Err(SynthError::InvalidRequest(
                "need at least one writer and one repetition".into(),
            ));
        }
        Ok(())
    }
}

/// One writer's recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct WriterSession {
    pub writer_id: String,
    pub style: WriterStyle,
    /// Samples in prompt order, with session-relative timestamps.
    pub samples: Vec<LetterSample>,
}

impl WriterSession {
    /// The continuous sensor stream of the session.
    pub fn frames(&self) -> Vec<SensorFrame> {
        self.samples.iter().flat_map(|s| s.frames.iter().copied()).collect()
    }

    /// Prompt windows covering each sample's frames exactly.
    pub fn intervals(&self) -> Vec<LabelInterval> {
        self.samples
            .iter()
            .map(|s| LabelInterval {
                label: s.label,
                t_start_ms: s.frames[0].t_ms,
                t_end_ms: s.frames.last().expect("non-empty sample").t_ms + FRAME_PERIOD_MS,
            })
            .collect()
    }
}

pub fn writer_id(index: usize) -> String {
    format!("w{index:03}")
}

/// Records one writer: `reps` passes over the alphabet(s), uppercase first.
pub fn synthesize_writer(index: usize, cfg: &GeneratorConfig) -> WriterSession {
    let seed = derive_seed(cfg.master_seed, tag::WRITER, index as u64);
    let style = WriterStyle::draw(seed);
    let id = writer_id(index);
    let mut samples = Vec::new();
    let mut t0 = 0i64;
    for _ in 0..cfg.reps_per_letter {
        for &case in cfg.cases.cases() {
            for letter in case.alphabet() {
                let seq = samples.len();
                let template = letter_template(letter, case).expect("alphabet letters have templates");
                let mut sample =
                    synthesize_sample(&template, &style, derive_seed(seed, tag::SAMPLE, seq as u64));
                for f in &mut sample.frames {
                    f.t_ms += t0;
                }
                t0 = sample.frames.last().expect("non-empty").t_ms + FRAME_PERIOD_MS;
                sample.writer_id = id.clone();
                sample.seq = seq;
                samples.push(sample);
            }
        }
    }
    WriterSession {
        writer_id: id,
        style,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: GeneratorConfig,
    pub sessions: Vec<WriterSession>,
}

impl SyntheticDataset {
    pub fn samples(&self) -> impl Iterator<Item = &LetterSample> {
        self.sessions.iter().flat_map(|s| s.samples.iter())
    }

    pub fn num_samples(&self) -> usize {
        self.sessions.iter().map(|s| s.samples.len()).sum()
    }
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<SyntheticDataset, SynthError> {
    cfg.validate()?;
    let sessions = (0..cfg.n_writers).map(|i| synthesize_writer(i, cfg)).collect();
    Ok(SyntheticDataset {
        config: *cfg,
        sessions,
    })
}

pub const SESSIONS_MANIFEST: &str = "sessions.csv";

/// Writes `<writer>.stream.csv` / `<writer>.labels.csv` for every session plus
/// a `sessions.csv` index and `styles.json`.
pub fn write_dataset(dir: &Path, dataset: &SyntheticDataset) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut index = String::from("writer_id,stream,labels,samples\n");
    for session in &dataset.sessions {
        let (stream, labels) =
            ingest::write_session(dir, &session.writer_id, &session.frames(), &session.intervals())?;
        index.push_str(&format!(
            "{},{},{},{}\n",
            session.writer_id,
            file_name(&stream),
            file_name(&labels),
            session.samples.len()
        ));
    }
    let manifest = dir.join(SESSIONS_MANIFEST);
    fs::File::create(&manifest)
        .and_then(|mut f| f.write_all(index.as_bytes()))
        .map_err(io(&manifest))?;

    let styles: Vec<_> = dataset
        .sessions
        .iter()
        .map(|s| serde_json::json!({ "writer_id": s.writer_id, "style": s.style }))
        .collect();
    let styles_path = dir.join("styles.json");
    let text = serde_json::to_string_pretty(&styles).expect("styles serialize");
    fs::write(&styles_path, text + "\n").map_err(io(&styles_path))?;
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEntry {
    pub writer_id: String,
    pub stream: String,
    pub labels: String,
}

/// Reads `sessions.csv`, or pairs `*.stream.csv` / `*.labels.csv` files when
/// the index is missing. Entries come back sorted by writer id.
pub fn list_sessions(dir: &Path) -> Result<Vec<SessionEntry>, SynthError> {
    let manifest = dir.join(SESSIONS_MANIFEST);
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let mut out = Vec::new();
    if manifest.exists() {
        let mut rdr = csv::Reader::from_path(&manifest).map_err(|e| SynthError::Io {
            path: manifest.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SynthError::Io {
                path: manifest.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
            out.push(SessionEntry {
                writer_id: rec[0].to_string(),
                stream: rec[1].to_string(),
                labels: rec[2].to_string(),
            });
        }
    } else {
        for entry in fs::read_dir(dir).map_err(io(dir))? {
            let name = entry.map_err(io(dir))?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".stream.csv") {
                out.push(SessionEntry {
                    writer_id: stem.to_string(),
                    stream: name.clone(),
                    labels: format!("{stem}.labels.csv"),
                });
            }
        }
    }
    out.sort_by(|a, b| a.writer_id.cmp(&b.writer_id));
    Ok(out)
}
