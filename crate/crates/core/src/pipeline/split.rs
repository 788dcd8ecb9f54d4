use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::rng::stream;

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (expected train, val or test)")),
        }
    }
}

/// Split membership of every record, by record index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assign: Vec<Split>,
}

impl SplitAssignment {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.assign.len()).filter(|&i| self.assign[i] == split).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.assign {
            c[*s as usize] += 1;
        }
        c
    }
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<(), PipelineError> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Config(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    Ok(())
}

/// Train / val sizes for a group of `n`: rounded shares, test takes the rest.
fn sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize) {
    let n_train = ((n as f64) * ratios.0).round() as usize;
    let n_val = (((n as f64) * ratios.1).round() as usize).min(n - n_train);
    (n_train, n_val)
}

/// Shuffles each class with its own seeded stream, then assigns the first
/// `round(0.70·n)` to train, the next `round(0.15·n)` to val and the rest to
/// test.
pub fn stratified_split(
    labels: &[usize],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, PipelineError> {
    check_ratios(ratios)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut assign = vec![Split::Train; labels.len()];
    for (class, mut idx) in by_class {
        if idx.len() < 3 {
            return Err(PipelineError::TooFewRecords {
                class,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut stream(seed, &format!("split/class/{class}")));
        let (n_train, n_val) = sizes(idx.len(), ratios);
        for (j, &i) in idx.iter().enumerate() {
            assign[i] = if j < n_train {
                Split::Train
            } else if j < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(SplitAssignment { assign })
}

/// Per group (ship), records sorted by time: the earliest 70% go to train,
/// the next 15% to val, the latest 15% to test. Ties in time keep index order.
pub fn temporal_split(
    groups: &[usize],
    times: &[f64],
    ratios: (f64, f64, f64),
) -> Result<SplitAssignment, PipelineError> {
    check_ratios(ratios)?;
    if groups.len() != times.len() {
        return Err(PipelineError::Data("groups and times differ in length".into()));
    }
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut assign = vec![Split::Train; groups.len()];
    for (group, mut idx) in by_group {
        if idx.len() < 3 {
            return Err(PipelineError::TooFewRecords {
                class: group,
                count: idx.len(),
            });
        }
        idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let (n_train, n_val) = sizes(idx.len(), ratios);
        for (j, &i) in idx.iter().enumerate() {
            assign[i] = if j < n_train {
                Split::Train
            } else if j < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(SplitAssignment { assign })
}

/// Inverse-frequency class weights scaled to mean 1.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, PipelineError> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(PipelineError::Data(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        counts[y] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(PipelineError::EmptyClass { class });
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / n_classes as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}
