use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    gen_trajectory, read_trajectory_csv, render_hrrp, write_trajectory_csv, RenderParams, SimError, TargetModel,
    TrajectoryConfig, TrajectorySample,
};
use crate::config::{ConfigError, KvConfig};
use crate::fsutil::temp_sibling;
use crate::geometry::{aspect_angle, los_azimuth, AngleRad, PlanarPoint};
use crate::rng::stream;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";
pub const TRAJECTORY_DIR: &str = "trajectories";
const FORMAT: &str = "hrrp-lab-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Few shared lengths/widths across classes plus port/starboard mirror twins.
    Ambiguous,
    /// Lengths drawn uniformly from `[lengths[0], lengths[1]]`, no twins.
    Diverse,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ambiguous" => Ok(Preset::Ambiguous),
            "diverse" => Ok(Preset::Diverse),
            other => Err(format!("unknown preset `{other}` (ambiguous|diverse)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: Preset,
    pub n_classes: usize,
    pub lengths: Vec<f64>,
    pub widths: Vec<f64>,
    /// Number of (class, mirrored class) pairs, taken from the lowest class ids.
    pub mirror_pairs: usize,
    pub interior_min: usize,
    pub interior_max: usize,
    pub trajectories_per_class: usize,
    pub trajectory: TrajectoryConfig,
    pub render: RenderParams,
    pub radar: PlanarPoint,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn preset(preset: Preset) -> Self {
        let (lengths, widths, mirror_pairs) = match preset {
            Preset::Ambiguous => (vec![80.0, 100.0, 120.0], vec![12.0, 16.0], 2),
            Preset::Diverse => (vec![20.0, 250.0], vec![6.0, 40.0], 0),
        };
        Self {
            preset,
            n_classes: 10,
            lengths,
            widths,
            mirror_pairs,
            interior_min: 3,
            interior_max: 6,
            trajectories_per_class: 8,
            trajectory: TrajectoryConfig::default(),
            render: RenderParams::default(),
            radar: PlanarPoint::new(0.0, 0.0),
            seed: 0,
        }
    }

    /// Reads a flat key-value config on top of the preset named by `preset`
    /// (default `ambiguous`). Unknown keys are rejected.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        let preset: Preset = kv.get_or("preset", Preset::Ambiguous)?;
        let mut c = Self::preset(preset);
        c.n_classes = kv.get_or("n_classes", c.n_classes)?;
        if let Some(v) = kv.get_list("lengths")? {
            c.lengths = v;
        }
        if let Some(v) = kv.get_list("widths")? {
            c.widths = v;
        }
        c.mirror_pairs = kv.get_or("mirror_pairs", c.mirror_pairs)?;
        c.interior_min = kv.get_or("interior_min", c.interior_min)?;
        c.interior_max = kv.get_or("interior_max", c.interior_max)?;
        c.trajectories_per_class = kv.get_or("trajectories_per_class", c.trajectories_per_class)?;
        let t = &mut c.trajectory;
        t.samples = kv.get_or("samples_per_trajectory", t.samples)?;
        t.dt = kv.get_or("dt", t.dt)?;
        t.speed_min = kv.get_or("speed_min", t.speed_min)?;
        t.speed_max = kv.get_or("speed_max", t.speed_max)?;
        t.meas_sigma = kv.get_or("meas_sigma", t.meas_sigma)?;
        t.p_straight = kv.get_or("p_straight", t.p_straight)?;
        t.turn_rate_min = kv.get_or("turn_rate_min", t.turn_rate_min)?;
        t.turn_rate_max = kv.get_or("turn_rate_max", t.turn_rate_max)?;
        t.leg_min = kv.get_or("leg_min", t.leg_min)?;
        t.leg_max = kv.get_or("leg_max", t.leg_max)?;
        t.range_min = kv.get_or("range_min", t.range_min)?;
        t.range_max = kv.get_or("range_max", t.range_max)?;
        t.gap = kv.get_or("trajectory_gap", t.gap)?;
        let r = &mut c.render;
        r.n_bins = kv.get_or("n_bins", r.n_bins)?;
        r.delta_r = kv.get_or("delta_r", r.delta_r)?;
        r.noise_sigma = kv.get_or("noise_sigma", r.noise_sigma)?;
        r.amp_jitter = kv.get_or("amp_jitter", r.amp_jitter)?;
        c.radar.x = kv.get_or("radar_x", c.radar.x)?;
        c.radar.y = kv.get_or("radar_y", c.radar.y)?;
        c.seed = kv.get_or("seed", c.seed)?;
        kv.reject_unknown()?;
        c.validate().map_err(|e| kv.invalid("preset", e.to_string()))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.trajectories_per_class < 1 {
            return bad("need at least 1 trajectory per class");
        }
        if 2 * self.mirror_pairs > self.n_classes {
            return bad("mirror_pairs exceeds n_classes / 2");
        }
        if self.interior_min < 1 || self.interior_max < self.interior_min {
            return bad("interior scatterer range invalid");
        }
        if self.lengths.is_empty() || self.widths.is_empty() {
            return bad("lengths and widths must be non-empty");
        }
        if self.lengths.iter().chain(&self.widths).any(|v| !(*v > 0.0)) {
            return bad("lengths and widths must be positive");
        }
        if self.preset == Preset::Diverse && (self.lengths.len() != 2 || self.widths.len() != 2) {
            return bad("diverse preset takes `lengths = min, max` and `widths = min, max`");
        }
        self.trajectory.validate()?;
        self.render.validate()
    }

    /// Builds every class target. Deterministic in `seed`.
    pub fn build_targets(&self) -> Result<Vec<TargetModel>, SimError> {
        use rand::Rng;
        let mut targets: Vec<TargetModel> = Vec::with_capacity(self.n_classes);
        for k in 0..self.n_classes {
            if k % 2 == 1 && k < 2 * self.mirror_pairs {
                let twin = targets[k - 1].mirrored(k);
                targets.push(twin);
                continue;
            }
            let mut rng = stream(self.seed, &format!("class/{k}/target"));
            let (length, width) = match self.preset {
                Preset::Ambiguous => (
                    self.lengths[k % self.lengths.len()],
                    self.widths[(k / self.lengths.len()) % self.widths.len()],
                ),
                Preset::Diverse => {
                    let l = rng.random_range(self.lengths[0]..=self.lengths[1]);
                    let w = rng.random_range(self.widths[0]..=self.widths[1]).min(0.5 * l);
                    (l, w)
                }
            };
            let interior = rng.random_range(self.interior_min..=self.interior_max);
            targets.push(TargetModel::random(k, length, width, interior, &mut rng)?);
        }
        for t in &targets {
            self.render.check_target(t)?;
        }
        Ok(targets)
    }
}

/// One HRRP sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecord {
    pub profile: Vec<f64>,
    pub class_id: usize,
    pub t: f64,
    pub aspect_ref: AngleRad,
    pub aspect_pred: Option<AngleRad>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipEntry {
    pub ship_id: usize,
    pub class_id: usize,
    /// Relative to the dataset directory.
    pub trajectory_csv: String,
}

/// Where a record came from: `row` indexes the ship's trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordIndex {
    pub class_id: usize,
    pub ship_id: usize,
    pub traj_id: usize,
    pub row: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub record_layout: String,
    pub n_bins: usize,
    pub delta_r: f64,
    pub render: RenderParams,
    pub radar: PlanarPoint,
    pub config: DatasetConfig,
    pub classes: Vec<TargetModel>,
    pub ships: Vec<ShipEntry>,
    pub records: Vec<RecordIndex>,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<ProfileRecord>,
    /// Per ship, in time order; index = ship id.
    pub trajectories: Vec<Vec<TrajectorySample>>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.class_id).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes()
    }

    pub fn n_bins(&self) -> usize {
        self.manifest.n_bins
    }
}

/// Values as they are stored on disk: every float field goes through `f32`.
fn quantize_angle(a: AngleRad) -> AngleRad {
    AngleRad::new(a.value() as f32 as f64).unwrap_or_default()
}

/// Generates a full dataset in memory. Record values are rounded through `f32`
/// exactly as `records.bin` stores them, so an in-memory dataset equals the
/// one read back from disk.
pub fn gen_dataset(config: &DatasetConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let targets = config.build_targets()?;
    let tc = &config.trajectory;
    let mut records = Vec::new();
    let mut index = Vec::new();
    let mut ships = Vec::new();
    let mut trajectories = Vec::new();
    for target in &targets {
        let k = target.class_id;
        let mut render_rng = stream(config.seed, &format!("class/{k}/render"));
        let mut ship_track: Vec<TrajectorySample> = Vec::new();
        for j in 0..config.trajectories_per_class {
            let mut rng = stream(config.seed, &format!("class/{k}/traj/{j}"));
            let t0 = j as f64 * (tc.duration() + tc.gap);
            let spec = tc.draw(config.radar, t0, &mut rng);
            let samples = gen_trajectory(&spec, &mut rng)?;
            for s in samples {
                let los = los_azimuth(s.pos, config.radar).map_err(|e| SimError::Config(format!("class {k}: {e}")))?;
                let aspect = aspect_angle(s.hdg_true, los);
                let profile = render_hrrp(target, aspect, &config.render, &mut render_rng)?;
                index.push(RecordIndex {
                    class_id: k,
                    ship_id: k,
                    traj_id: j,
                    row: ship_track.len(),
                    t: s.t,
                });
                records.push(ProfileRecord {
                    profile: profile.iter().map(|v| *v as f32 as f64).collect(),
                    class_id: k,
                    t: s.t,
                    aspect_ref: quantize_angle(aspect),
                    aspect_pred: None,
                });
                ship_track.push(s);
            }
        }
        ships.push(ShipEntry {
            ship_id: k,
            class_id: k,
            trajectory_csv: format!("{TRAJECTORY_DIR}/ship_{k:03}.csv"),
        });
        trajectories.push(ship_track);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        record_layout: "f32le per record: profile[n_bins], aspect_ref, t, class_id".into(),
        n_bins: config.render.n_bins,
        delta_r: config.render.delta_r,
        render: config.render,
        radar: config.radar,
        config: config.clone(),
        classes: targets,
        ships,
        records: index,
    };
    Ok(Dataset {
        manifest,
        records,
        trajectories,
    })
}

fn encode_records(records: &[ProfileRecord]) -> Vec<u8> {
    let width = records.first().map_or(0, |r| r.profile.len() + 3);
    let mut buf = Vec::with_capacity(records.len() * width * 4);
    for r in records {
        for v in &r.profile {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(r.aspect_ref.value() as f32).to_le_bytes());
        buf.extend_from_slice(&(r.t as f32).to_le_bytes());
        buf.extend_from_slice(&(r.class_id as f32).to_le_bytes());
    }
    buf
}

/// Writes `manifest.json`, `records.bin` and one trajectory CSV per ship.
/// Output lands in a temporary sibling directory that is renamed into place
/// once complete. An existing target directory is replaced only if it is
/// empty or already holds a dataset manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), SimError> {
    if dir.exists() {
        let is_dataset = dir.join(MANIFEST_FILE).exists();
        let is_empty = fs::read_dir(dir).map_err(|e| SimError::io(dir, e))?.next().is_none();
        if !(is_dataset || is_empty) {
            return Err(SimError::Config(format!(
                "refusing to overwrite non-dataset directory {}",
                dir.display()
            )));
        }
    }
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| SimError::io(&tmp, e))?;
    }
    let result = (|| {
        fs::create_dir_all(tmp.join(TRAJECTORY_DIR)).map_err(|e| SimError::io(&tmp, e))?;
        let manifest = serde_json::to_string_pretty(&ds.manifest).map_err(|e| SimError::Format(e.to_string()))?;
        fs::write(tmp.join(MANIFEST_FILE), manifest + "\n").map_err(|e| SimError::io(tmp.join(MANIFEST_FILE), e))?;
        fs::write(tmp.join(RECORDS_FILE), encode_records(&ds.records))
            .map_err(|e| SimError::io(tmp.join(RECORDS_FILE), e))?;
        for (ship, track) in ds.manifest.ships.iter().zip(&ds.trajectories) {
            let path = tmp.join(&ship.trajectory_csv);
            let f = fs::File::create(&path).map_err(|e| SimError::io(&path, e))?;
            let mut w = BufWriter::new(f);
            write_trajectory_csv(&mut w, track)?;
            w.flush().map_err(|e| SimError::io(&path, e))?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| SimError::io(dir, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SimError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| SimError::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SimError::Format(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(SimError::Format(format!(
            "unsupported dataset {} v{}",
            manifest.format, manifest.version
        )));
    }
    let rpath = dir.join(RECORDS_FILE);
    let mut bytes = Vec::new();
    fs::File::open(&rpath)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| SimError::io(&rpath, e))?;
    let width = manifest.n_bins + 3;
    let n = manifest.records.len();
    if bytes.len() != n * width * 4 {
        return Err(SimError::Format(format!(
            "records.bin has {} bytes, expected {} records x {} floats",
            bytes.len(),
            n,
            width
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut records = Vec::with_capacity(n);
    for (chunk, idx) in floats.chunks_exact(width).zip(&manifest.records) {
        let class_id = chunk[width - 1] as usize;
        if class_id != idx.class_id {
            return Err(SimError::Format(format!(
                "record class {class_id} disagrees with manifest {}",
                idx.class_id
            )));
        }
        records.push(ProfileRecord {
            profile: chunk[..manifest.n_bins].iter().map(|v| *v as f64).collect(),
            class_id,
            t: idx.t,
            aspect_ref: AngleRad::new(chunk[manifest.n_bins] as f64).map_err(|e| SimError::Format(e.to_string()))?,
            aspect_pred: None,
        });
    }
    let mut trajectories = Vec::with_capacity(manifest.ships.len());
    for ship in &manifest.ships {
        let path = dir.join(&ship.trajectory_csv);
        if !path.exists() {
            // Profiles stay usable; predicted aspects for this ship will be flagged missing.
            log::warn!("trajectory {} is missing", path.display());
            trajectories.push(Vec::new());
            continue;
        }
        let f = fs::File::open(&path).map_err(|e| SimError::io(&path, e))?;
        trajectories.push(read_trajectory_csv(BufReader::new(f))?);
    }
    Ok(Dataset {
        manifest,
        records,
        trajectories,
    })
}
