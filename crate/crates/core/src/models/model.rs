use std::path::Path;

use super::backbone::Backbone;
use super::{Aggregator, Conditioning, GruCell, ModelSpec};
use crate::nn::{
    load_into, read_checkpoint, save_checkpoint, CondVector, Linear, Mode, NnError, ParamStore, Tape, Tensor3, Var,
};
use crate::rng::stream;

/// A backbone, an optional sequence aggregator and a linear classifier head,
/// together with their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    pub store: ParamStore,
    backbone: Backbone,
    gru: Option<GruCell>,
    head: Linear,
}

impl Model {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let backbone = Backbone::build(&spec.backbone, &mut store, seed);
        let gru = match &spec.sequence {
            Some(s) if s.aggregator == Aggregator::Gru => {
                Some(GruCell::new(&mut store, "gru", backbone.latent_dim(), s.hidden, seed))
            }
            _ => None,
        };
        let head_in = gru.as_ref().map_or(backbone.latent_dim(), |g| g.hidden);
        let head = Linear::new(
            &mut store,
            "head",
            head_in,
            spec.backbone.n_classes,
            true,
            &mut stream(seed, "init/head"),
        );
        Ok(Self {
            spec,
            store,
            backbone,
            gru,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn is_conditioned(&self) -> bool {
        self.spec.backbone.conditioning != Conditioning::None
    }

    pub fn latent_dim(&self) -> usize {
        self.backbone.latent_dim()
    }

    /// Trainable parameter count, summed layer by layer.
    pub fn n_params(&self) -> usize {
        self.backbone.n_params() + self.gru.as_ref().map_or(0, |g| g.n_params()) + self.head.n_params()
    }

    fn check_inputs(&self, x: &Tensor3, angles: Option<&CondVector>) -> Result<(), NnError> {
        let l = self.spec.backbone.input_len;
        if x.c() != 1 || x.l() != l || x.n() == 0 {
            return Err(NnError::Shape(format!(
                "profiles must be (N, 1, {l}), got {:?}",
                x.shape()
            )));
        }
        match (self.is_conditioned(), angles) {
            (true, None) => Err(NnError::Invalid("conditioned model needs an angle input".into())),
            (false, Some(_)) => Err(NnError::Invalid("unconditioned model takes no angle input".into())),
            (true, Some(c)) if c.n() != x.n() || c.dim() != self.spec.backbone.cond_dim => {
                Err(NnError::Shape(format!(
                    "angle input ({}, {}) for {} profiles, D = {}",
                    c.n(),
                    c.dim(),
                    x.n(),
                    self.spec.backbone.cond_dim
                )))
            }
            _ => Ok(()),
        }
    }

    /// Per-profile latents `(N, F, 1)`.
    pub fn latent(
        &mut self,
        tape: &mut Tape,
        profiles: &Tensor3,
        angles: Option<&CondVector>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        self.check_inputs(profiles, angles)?;
        let x = tape.input(profiles.clone());
        let c = angles.map(|c| tape.input(c.to_tensor()));
        self.backbone.forward(tape, &mut self.store, x, c, mode)
    }

    /// `(N, 1, L)` profiles → `(N, n_classes, 1)` logits.
    pub fn forward_one_view(
        &mut self,
        tape: &mut Tape,
        profiles: &Tensor3,
        angles: Option<&CondVector>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        if self.spec.sequence.is_some() {
            return Err(NnError::Invalid("multi-view model called with single profiles".into()));
        }
        let z = self.latent(tape, profiles, angles, mode)?;
        self.head.forward(tape, &self.store, z)
    }

    /// Sequences stored sample-major as `(N·T, 1, L)` with `T` from the spec
    /// (row `n·T + t` is step `t` of sequence `n`); angles likewise `N·T`
    /// rows. Returns `(N, n_classes, 1)` logits.
    pub fn forward_multi_view(
        &mut self,
        tape: &mut Tape,
        sequences: &Tensor3,
        angles: Option<&CondVector>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let seq = self
            .spec
            .sequence
            .clone()
            .ok_or_else(|| NnError::Invalid("one-view model called with sequences".into()))?;
        if !sequences.n().is_multiple_of(seq.steps) {
            return Err(NnError::Shape(format!(
                "{} profiles do not form sequences of length {}",
                sequences.n(),
                seq.steps
            )));
        }
        let z = self.latent(tape, sequences, angles, mode)?;
        let pooled = match &self.gru {
            Some(g) => g.run(tape, &self.store, z, seq.steps)?,
            None => tape.group_mean(z, seq.steps)?,
        };
        self.head.forward(tape, &self.store, pooled)
    }

    /// Dispatches on whether the spec has a sequence aggregator.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: &Tensor3,
        angles: Option<&CondVector>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        if self.spec.sequence.is_some() {
            self.forward_multi_view(tape, x, angles, mode)
        } else {
            self.forward_one_view(tape, x, angles, mode)
        }
    }

    /// Eval-mode logits.
    pub fn logits(&mut self, x: &Tensor3, angles: Option<&CondVector>) -> Result<Tensor3, NnError> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, x, angles, Mode::Eval)?;
        let mut out = tape.value(y).clone();
        out.grad = Vec::new();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let header = serde_json::to_value(&self.spec).expect("spec serializes");
        save_checkpoint(path, &header, &self.store)
    }

    /// Rebuilds the model from the spec in the checkpoint header and loads
    /// its parameters and running statistics.
    pub fn load(path: &Path) -> Result<Self, NnError> {
        let (header, data) = read_checkpoint(path)?;
        let spec: ModelSpec = serde_json::from_value(header.model.clone())
            .map_err(|e| NnError::Checkpoint(format!("bad model spec: {e}")))?;
        let mut model = Model::build(spec, 0)?;
        load_into(&header, &data, &mut model.store)?;
        Ok(model)
    }
}
