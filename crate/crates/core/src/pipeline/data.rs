use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stratified_split, temporal_split, PipelineError, Split, SplitAssignment, DEFAULT_RATIOS};
use crate::geometry::{wrap_angle, AngleRad};
use crate::nn::{encode_angle, CondVector, Tensor3};
use crate::rng::derive_seed;
use crate::simulator::{Dataset, RecordIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    OneView,
    MultiView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleSource {
    None,
    Reference,
    Predicted,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::OneView => "one_view",
            Task::MultiView => "multi_view",
        }
    }
}

impl AngleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AngleSource::None => "none",
            AngleSource::Reference => "reference",
            AngleSource::Predicted => "predicted",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for AngleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "one_view" => Ok(Task::OneView),
            "multi_view" => Ok(Task::MultiView),
            _ => Err(format!("unknown task '{s}' (expected one_view or multi_view)")),
        }
    }
}

impl FromStr for AngleSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AngleSource::None),
            "reference" => Ok(AngleSource::Reference),
            "predicted" => Ok(AngleSource::Predicted),
            _ => Err(format!(
                "unknown angle source '{s}' (expected none, reference or predicted)"
            )),
        }
    }
}

/// `wrap(φ + ε)` with `ε ~ N(0, σ²)`, `σ` given in degrees.
pub fn jitter_angle<R: Rng + ?Sized>(phi: AngleRad, sigma_deg: f64, rng: &mut R) -> AngleRad {
    if sigma_deg == 0.0 {
        return phi;
    }
    let eps = Normal::new(0.0, sigma_deg.to_radians())
        .expect("finite sigma")
        .sample(rng);
    wrap_angle(phi.value() + eps).unwrap_or(phi)
}

/// One training example: a single record (one-view) or a time-ordered run
/// of `T` records of one ship (multi-view).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub members: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceSet {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Records left over after chunking.
    pub dropped: usize,
}

impl SequenceSet {
    pub fn get(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Groups eligible records by (ship, split), sorts each group by time and
/// cuts it into consecutive non-overlapping runs of `steps`; leftovers are
/// dropped and counted.
pub fn build_sequences(
    index: &[RecordIndex],
    split: &SplitAssignment,
    eligible: &[bool],
    steps: usize,
) -> Result<SequenceSet, PipelineError> {
    if steps == 0 {
        return Err(PipelineError::Config("sequence length must be >= 1".into()));
    }
    if split.assign.len() != index.len() || eligible.len() != index.len() {
        return Err(PipelineError::Data(
            "split, eligibility and record index differ in length".into(),
        ));
    }
    let mut buckets: BTreeMap<(usize, Split), Vec<usize>> = BTreeMap::new();
    for (i, idx) in index.iter().enumerate() {
        if eligible[i] {
            buckets.entry((idx.ship_id, split.assign[i])).or_default().push(i);
        }
    }
    let mut out = SequenceSet::default();
    for ((ship, sp), mut members) in buckets {
        members.sort_by(|&a, &b| index[a].t.total_cmp(&index[b].t).then(a.cmp(&b)));
        if members.len() < steps {
            log::info!("ship {ship} {sp}: {} records, fewer than T = {steps}", members.len());
        }
        let chunks = members.chunks_exact(steps);
        out.dropped += chunks.remainder().len();
        for c in chunks {
            let label = index[c[0]].class_id;
            out.get_mut(sp).push(Sample {
                members: c.to_vec(),
                label,
            });
        }
    }
    Ok(out)
}

/// Samples per split for a task and angle source, plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitAssignment,
    pub samples: SequenceSet,
    /// Records without a usable predicted aspect.
    pub excluded: usize,
}

/// Splits the dataset (on all records) and builds the samples of each split
/// from the records usable with `source`. One-view uses a label-stratified
/// random split; multi-view a per-ship temporal split.
pub fn prepare(
    ds: &Dataset,
    task: Task,
    source: AngleSource,
    steps: usize,
    seed: u64,
) -> Result<Prepared, PipelineError> {
    let eligible: Vec<bool> = ds
        .records
        .iter()
        .map(|r| source != AngleSource::Predicted || r.aspect_pred.is_some())
        .collect();
    if source == AngleSource::Predicted && !eligible.iter().any(|&e| e) {
        return Err(PipelineError::MissingPredicted);
    }
    let excluded = eligible.iter().filter(|&&e| !e).count();
    let index = &ds.manifest.records;
    let (split, samples) = match task {
        Task::OneView => {
            let split = stratified_split(&ds.labels(), DEFAULT_RATIOS, derive_seed(seed, "split"))?;
            let mut set = SequenceSet::default();
            for (i, r) in ds.records.iter().enumerate() {
                if eligible[i] {
                    set.get_mut(split.assign[i]).push(Sample {
                        members: vec![i],
                        label: r.class_id,
                    });
                }
            }
            (split, set)
        }
        Task::MultiView => {
            let ships: Vec<usize> = index.iter().map(|r| r.ship_id).collect();
            let times: Vec<f64> = index.iter().map(|r| r.t).collect();
            let split = temporal_split(&ships, &times, DEFAULT_RATIOS)?;
            let set = build_sequences(index, &split, &eligible, steps)?;
            (split, set)
        }
    };
    for sp in Split::ALL {
        if samples.get(sp).is_empty() {
            return Err(PipelineError::Data(format!("no {} samples for split {sp}", task)));
        }
    }
    Ok(Prepared {
        split,
        samples,
        excluded,
    })
}

/// The angle a record contributes under `source`.
pub fn record_angle(ds: &Dataset, i: usize, source: AngleSource) -> Option<AngleRad> {
    let r = &ds.records[i];
    match source {
        AngleSource::None => None,
        AngleSource::Reference => Some(r.aspect_ref),
        AngleSource::Predicted => r.aspect_pred,
    }
}

/// Stacks the members of `samples` into `(ΣT, 1, L)` profiles, the matching
/// angle encodings (when `cond_dim` is given) and the sample labels.
/// `jitter` perturbs every angle (training only).
pub fn assemble_batch<R: Rng + ?Sized>(
    ds: &Dataset,
    samples: &[&Sample],
    source: AngleSource,
    cond_dim: Option<usize>,
    mut jitter: Option<(f64, &mut R)>,
) -> Result<(Tensor3, Option<CondVector>, Vec<usize>), PipelineError> {
    let l = ds.n_bins();
    let rows: usize = samples.iter().map(|s| s.members.len()).sum();
    let mut x = Vec::with_capacity(rows * l);
    let mut c = Vec::new();
    for s in samples {
        for &i in &s.members {
            x.extend_from_slice(&ds.records[i].profile);
            if let Some(d) = cond_dim {
                let phi = record_angle(ds, i, source)
                    .ok_or_else(|| PipelineError::Data(format!("record {i} has no {source} aspect angle")))?;
                let phi = match jitter.as_mut() {
                    Some((sigma, rng)) => jitter_angle(phi, *sigma, &mut **rng),
                    None => phi,
                };
                c.extend(encode_angle(phi, d));
            }
        }
    }
    let x = Tensor3::from_vec(rows, 1, l, x).map_err(|e| PipelineError::Data(e.to_string()))?;
    let c = cond_dim
        .map(|d| CondVector::new(rows, d, c))
        .transpose()
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok((x, c, samples.iter().map(|s| s.label).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrapped_error;
    use crate::rng::stream;

    fn index(ship: usize, n: usize) -> Vec<RecordIndex> {
        (0..n)
            .map(|i| RecordIndex {
                class_id: ship,
                ship_id: ship,
                traj_id: 0,
                row: i,
                t: (n - i) as f64,
            })
            .collect()
    }

    #[test]
    fn jitter_examples() {
        let mut rng = stream(1, "jitter");
        let phi = AngleRad::new(0.01).unwrap();
        assert_eq!(jitter_angle(phi, 0.0, &mut rng), phi);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let j = jitter_angle(phi, 2.0, &mut rng);
            assert!((0.0..std::f64::consts::TAU).contains(&j.value()));
            sum += wrapped_error(j, phi).to_degrees();
        }
        // Folded normal mean σ·√(2/π).
        let expect = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((sum / n as f64 - expect).abs() < 0.02, "{}", sum / n as f64);
    }

    #[test]
    fn chunking_arithmetic_and_hygiene() {
        let idx = index(0, 35);
        let split = SplitAssignment {
            assign: vec![Split::Train; 35],
        };
        let set = build_sequences(&idx, &split, &[true; 35], 10).unwrap();
        assert_eq!(set.train.len(), 3);
        assert_eq!(set.dropped, 5);
        // Time-sorted: record 34 has the earliest time.
        assert_eq!(set.train[0].members[0], 34);

        let mut idx = index(0, 20);
        idx.extend(index(1, 20));
        let split = temporal_split(
            &idx.iter().map(|r| r.ship_id).collect::<Vec<_>>(),
            &idx.iter().map(|r| r.t).collect::<Vec<_>>(),
            DEFAULT_RATIOS,
        )
        .unwrap();
        let set = build_sequences(&idx, &split, &[true; 40], 3).unwrap();
        for sp in Split::ALL {
            for s in set.get(sp) {
                let ship = idx[s.members[0]].ship_id;
                assert!(s.members.iter().all(|&m| idx[m].ship_id == ship));
                assert!(s.members.iter().all(|&m| split.assign[m] == sp));
            }
        }
    }
}
