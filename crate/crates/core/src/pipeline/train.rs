use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    assemble_batch, class_weights, prepare, AngleSource, MetricsReport, PipelineError, Prepared, Sample, Split, Task,
};
use crate::config::{ConfigError, KvConfig};
use crate::models::{Aggregator, BackboneSpec, Conditioning, Family, Model, ModelSpec, SequenceSpec};
use crate::nn::{Mode, Sgd, Tape, ANGLE_ENCODING_DIM};
use crate::rng::{stream, StreamRng};
use crate::simulator::Dataset;

const EVAL_BATCH: usize = 256;

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub backbone: Family,
    pub conditioning: Conditioning,
    pub angle_source: AngleSource,
    /// Overrides the family's default widths.
    pub widths: Option<Vec<usize>>,
    pub kernel: usize,
    pub cond_dim: usize,
    pub aggregator: Aggregator,
    pub hidden: usize,
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub jitter_sigma_deg: f64,
    pub class_weighted: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::OneView,
            backbone: Family::Resnet,
            conditioning: Conditioning::None,
            angle_source: AngleSource::None,
            widths: None,
            kernel: 7,
            cond_dim: ANGLE_ENCODING_DIM,
            aggregator: Aggregator::Gru,
            hidden: 32,
            steps: 10,
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            jitter_sigma_deg: 2.0,
            class_weighted: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reads a flat key-value config over the defaults. When `angle_source`
    /// is omitted it is `reference` for conditioned models and `none`
    /// otherwise. Unknown keys are rejected.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        let d = Self::default();
        let conditioning = kv.get_or("conditioning", d.conditioning)?;
        let default_source = if conditioning == Conditioning::None {
            AngleSource::None
        } else {
            AngleSource::Reference
        };
        let c = Self {
            task: kv.get_or("task", d.task)?,
            backbone: kv.get_or("backbone", d.backbone)?,
            conditioning,
            angle_source: kv.get_or("angle_source", default_source)?,
            widths: kv.get_list("widths")?,
            kernel: kv.get_or("kernel", d.kernel)?,
            cond_dim: kv.get_or("cond_dim", d.cond_dim)?,
            aggregator: kv.get_or("aggregator", d.aggregator)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            steps: kv.get_or("steps", d.steps)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            weight_decay: kv.get_or("weight_decay", d.weight_decay)?,
            jitter_sigma_deg: kv.get_or("jitter_sigma_deg", d.jitter_sigma_deg)?,
            class_weighted: kv.get_or("class_weighted", d.class_weighted)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        kv.reject_unknown()?;
        c.validate().map_err(|e| match e {
            PipelineError::Config(msg) => kv.invalid("conditioning", msg),
            other => kv.invalid("conditioning", other.to_string()),
        })?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.conditioning != Conditioning::None && self.angle_source == AngleSource::None {
            return bad("a conditioned model needs angle_source reference or predicted");
        }
        if self.epochs == 0 || self.batch_size < 2 {
            return bad("epochs must be >= 1 and batch_size >= 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("lr must be positive, momentum in [0, 1), weight_decay >= 0");
        }
        if !(self.jitter_sigma_deg >= 0.0 && self.jitter_sigma_deg.is_finite()) {
            return bad("jitter_sigma_deg must be finite and >= 0");
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn model_spec(&self, n_classes: usize, input_len: usize) -> ModelSpec {
        let mut backbone = BackboneSpec::default_for(self.backbone, self.conditioning, n_classes, input_len);
        if let Some(w) = &self.widths {
            backbone.widths = w.clone();
        }
        backbone.kernel = self.kernel;
        backbone.cond_dim = self.cond_dim;
        let sequence = (self.task == Task::MultiView).then_some(SequenceSpec {
            aggregator: self.aggregator,
            hidden: self.hidden,
            steps: self.steps,
        });
        ModelSpec { backbone, sequence }
    }

    fn cond_dim_if_conditioned(&self) -> Option<usize> {
        (self.conditioning != Conditioning::None).then_some(self.cond_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub excluded_records: usize,
    pub dropped_records: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub model: Model,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub counts: SampleCounts,
}

/// Eval-mode metrics of `model` on `samples`.
pub fn evaluate(
    model: &mut Model,
    ds: &Dataset,
    samples: &[Sample],
    source: AngleSource,
) -> Result<MetricsReport, crate::Error> {
    let cond = model.is_conditioned().then_some(model.spec().backbone.cond_dim);
    let mut truth = Vec::with_capacity(samples.len());
    let mut pred = Vec::with_capacity(samples.len());
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(EVAL_BATCH) {
        let (x, c, y) = assemble_batch::<StreamRng>(ds, chunk, source, cond, None)?;
        let logits = model.logits(&x, c.as_ref())?;
        for i in 0..logits.n() {
            let row = logits.row(i);
            let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            pred.push(arg);
        }
        truth.extend(y);
    }
    Ok(MetricsReport::from_predictions(
        &truth,
        &pred,
        model.spec().backbone.n_classes,
    )?)
}

/// Trains with mini-batch SGD, a seeded shuffle per epoch and angle jitter on
/// training batches only; keeps the parameters with the best validation
/// macro-F1 and reports test metrics for them.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome, crate::Error> {
    cfg.validate()?;
    let Prepared { samples, excluded, .. } = prepare(ds, cfg.task, cfg.angle_source, cfg.steps, cfg.seed)?;
    let n_classes = ds.n_classes();
    let mut model = Model::build(cfg.model_spec(n_classes, ds.n_bins()), cfg.seed)?;
    let train_labels: Vec<usize> = samples.train.iter().map(|s| s.label).collect();
    let weights = if cfg.class_weighted {
        Some(class_weights(&train_labels, n_classes)?)
    } else {
        None
    };
    let cond = cfg.cond_dim_if_conditioned();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let mut order: Vec<usize> = (0..samples.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, &format!("shuffle/epoch/{epoch}")));
        let mut jitter_rng = stream(cfg.seed, &format!("jitter/epoch/{epoch}"));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                // Batch statistics need at least two samples.
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples.train[i]).collect();
            let jitter = cond.map(|_| (cfg.jitter_sigma_deg, &mut jitter_rng));
            let (x, c, y) = assemble_batch(ds, &batch, cfg.angle_source, cond, jitter)?;
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &x, c.as_ref(), Mode::Train)?;
            let loss = tape.softmax_cross_entropy(logits, &y, weights.as_deref())?;
            let lv = tape.value(loss).values[0];
            if !lv.is_finite() {
                return Err(PipelineError::Divergence { epoch, step, loss: lv }.into());
            }
            tape.backward(loss)?;
            tape.accumulate_param_grads(&mut model.store);
            opt.step(&mut model.store);
            model.store.zero_grad();
            loss_sum += lv;
            loss_n += 1;
        }
        if !model.store.is_finite() {
            return Err(PipelineError::Divergence {
                epoch,
                step: loss_n,
                loss: f64::NAN,
            }
            .into());
        }
        let val = evaluate(&mut model, ds, &samples.val, cfg.angle_source)?;
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / loss_n.max(1) as f64,
            val_accuracy: val.accuracy,
            val_macro_f1: val.macro_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val acc {:.4}, val macro-F1 {:.4}",
            row.train_loss,
            row.val_accuracy,
            row.val_macro_f1
        );
        if best.as_ref().is_none_or(|(f1, _, _)| val.macro_f1 > *f1) {
            best = Some((val.macro_f1, epoch, model.store.clone()));
        }
        history.push(row);
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    let val = evaluate(&mut model, ds, &samples.val, cfg.angle_source)?;
    let test = evaluate(&mut model, ds, &samples.test, cfg.angle_source)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        val,
        test,
        counts: SampleCounts {
            train: samples.train.len(),
            val: samples.val.len(),
            test: samples.test.len(),
            excluded_records: excluded,
            dropped_records: samples.dropped,
        },
    })
}

/// Samples of one split under the run's task, source and seed, as `train`
/// would build them.
pub fn split_samples(cfg: &TrainConfig, ds: &Dataset, split: Split) -> Result<Vec<Sample>, PipelineError> {
    let p = prepare(ds, cfg.task, cfg.angle_source, cfg.steps, cfg.seed)?;
    Ok(p.samples.get(split).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{gen_dataset, DatasetConfig, Preset};

    fn tiny_dataset(seed: u64) -> Dataset {
        let mut c = DatasetConfig::preset(Preset::Ambiguous);
        c.n_classes = 2;
        c.mirror_pairs = 0;
        c.lengths = vec![40.0, 100.0];
        c.trajectories_per_class = 2;
        c.trajectory.samples = 40;
        c.render.n_bins = 64;
        c.seed = seed;
        gen_dataset(&c).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            backbone: Family::Conv,
            widths: Some(vec![4, 8]),
            kernel: 5,
            epochs: 20,
            batch_size: 8,
            lr: 0.05,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned_and_reproducible() {
        let ds = tiny_dataset(1);
        let cfg = tiny_config();
        let a = train(&cfg, &ds).unwrap();
        assert_eq!(a.test.accuracy, 1.0, "{:?}", a.history);
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.test, b.test);
        assert_eq!(a.model.store, b.model.store);
    }

    #[test]
    fn evaluation_is_repeatable_without_jitter() {
        let ds = tiny_dataset(2);
        let cfg = TrainConfig {
            conditioning: Conditioning::Film,
            angle_source: AngleSource::Reference,
            epochs: 2,
            ..tiny_config()
        };
        let mut out = train(&cfg, &ds).unwrap();
        let test = split_samples(&cfg, &ds, Split::Test).unwrap();
        let m1 = evaluate(&mut out.model, &ds, &test, cfg.angle_source).unwrap();
        let m2 = evaluate(&mut out.model, &ds, &test, cfg.angle_source).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1, out.test);
    }

    #[test]
    fn predicted_source_without_estimates_names_the_attach_step() {
        let ds = tiny_dataset(3);
        let cfg = TrainConfig {
            conditioning: Conditioning::Cbn,
            angle_source: AngleSource::Predicted,
            ..tiny_config()
        };
        let err = train(&cfg, &ds).unwrap_err().to_string();
        assert!(err.contains("attach-aspects"), "{err}");
    }

    #[test]
    fn config_parsing() {
        let kv = KvConfig::parse("task = multi_view\nconditioning = cbn\nwidths = 8, 16\nepochs = 3\n").unwrap();
        let c = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(c.angle_source, AngleSource::Reference);
        assert_eq!(c.widths, Some(vec![8, 16]));
        assert_eq!(c.model_spec(5, 64).sequence.unwrap().steps, 10);
        let kv = KvConfig::parse("conditioning = film\nangle_source = none\n").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KvConfig::parse("epochs = 3\nlearning_rate = 0.1\n").unwrap();
        assert!(matches!(
            TrainConfig::from_kv(&kv),
            Err(ConfigError::Unknown { line: 2, .. })
        ));
        assert_ne!(TrainConfig::default().hash(), tiny_config().hash());
        assert_eq!(TrainConfig::default().hash().len(), 16);
    }
}
