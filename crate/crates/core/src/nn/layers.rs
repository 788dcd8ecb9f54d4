use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, Tape, Tensor3, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Named trainable tensors plus named non-trainable buffers (running
/// statistics). Registration order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<(String, Tensor3)>,
    buffers: Vec<(String, Vec<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor3) -> ParamId {
        self.params.push((name.into(), t));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, v: Vec<f64>) -> BufferId {
        self.buffers.push((name.into(), v));
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor3 {
        &self.params[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor3 {
        &mut self.params[id.0].1
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Vec<f64> {
        &mut self.buffers[id.0].1
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor3)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor3> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.buffers.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.buffers.iter_mut().map(|(_, v)| v)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    /// Total number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.is_finite())
            && self.buffers.iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

fn he_normal<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Dense map on `(N, D, 1)` tensors; weight `(Dout, Din, 1)`, bias `(1, Dout, 1)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = Tensor3::from_vec(d_out, d_in, 1, he_normal(d_out * d_in, d_in, rng)).expect("sized");
        Self::from_tensors(store, name, w, bias.then(|| Tensor3::zeros(1, d_out, 1)))
    }

    /// All-zero weight and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        Self::from_tensors(
            store,
            name,
            Tensor3::zeros(d_out, d_in, 1),
            Some(Tensor3::zeros(1, d_out, 1)),
        )
    }

    fn from_tensors(store: &mut ParamStore, name: &str, w: Tensor3, b: Option<Tensor3>) -> Self {
        let [d_out, d_in, _] = w.shape();
        let weight = store.add(format!("{name}.weight"), w);
        let bias = b.map(|b| store.add(format!("{name}.bias"), b));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn n_params(&self) -> usize {
        self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = Tensor3::from_vec(
            c_out,
            c_in,
            kernel,
            he_normal(c_out * c_in * kernel, c_in * kernel, rng),
        )
        .expect("sized");
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor3::zeros(1, c_out, 1)));
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
        }
    }

    pub fn n_params(&self) -> usize {
        self.c_out * self.c_in * self.kernel + if self.bias.is_some() { self.c_out } else { 0 }
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization with running statistics. The affine part is optional
/// so that conditional batch normalization can supply it per sample.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub affine: Option<(ParamId, ParamId)>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, affine: bool) -> Self {
        let running_mean = store.add_buffer(format!("{name}.running_mean"), vec![0.0; channels]);
        let running_var = store.add_buffer(format!("{name}.running_var"), vec![1.0; channels]);
        let affine = affine.then(|| {
            (
                store.add(format!("{name}.gamma"), Tensor3::filled(1, channels, 1, 1.0)),
                store.add(format!("{name}.beta"), Tensor3::zeros(1, channels, 1)),
            )
        });
        Self {
            channels,
            running_mean,
            running_var,
            affine,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn n_params(&self) -> usize {
        if self.affine.is_some() {
            2 * self.channels
        } else {
            0
        }
    }

    /// Normalization without the affine term. Train mode uses batch
    /// statistics and updates the running averages; eval mode uses the
    /// running averages.
    pub fn normalize(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var, NnError> {
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(x, self.eps)?;
                let m = self.momentum;
                for (r, b) in store.buffer_mut(self.running_mean).iter_mut().zip(&stats.mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in store.buffer_mut(self.running_var).iter_mut().zip(&stats.var) {
                    *r = (1.0 - m) * *r + m * b;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).to_vec();
                let var = store.buffer(self.running_var).to_vec();
                tape.normalize(x, &mean, &var, self.eps)
            }
        }
    }

    /// Normalization followed by the learned affine term, if any.
    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var, NnError> {
        let y = self.normalize(tape, store, x, mode)?;
        match self.affine {
            Some((g, b)) => {
                let g = tape.param(store, g);
                let b = tape.param(store, b);
                tape.channel_affine(y, g, b)
            }
            None => Ok(y),
        }
    }
}

/// Linear map from a `D`-dimensional condition to `2C` modulation
/// parameters: `γ` in the first `C` outputs, `β` in the last `C`.
/// Starts at zero weight and bias `(1, …, 1, 0, …, 0)`, i.e. the identity.
#[derive(Debug, Clone)]
pub struct AffinePredictor {
    pub map: Linear,
    pub channels: usize,
}

impl AffinePredictor {
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, channels: usize) -> Self {
        let map = Linear::zeros(store, name, cond_dim, 2 * channels);
        let bias = store.get_mut(map.bias.expect("zeros() has bias"));
        bias.values[..channels].iter_mut().for_each(|v| *v = 1.0);
        Self { map, channels }
    }

    pub fn n_params(&self) -> usize {
        self.map.n_params()
    }

    /// `(N, D, 1)` condition → `(N, 2C, 1)` parameters.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, c: Var) -> Result<Var, NnError> {
        self.map.forward(tape, store, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_starts_at_identity() {
        let mut store = ParamStore::new();
        let p = AffinePredictor::new(&mut store, "p", 4, 3);
        let mut tape = Tape::new();
        let c = tape.input(Tensor3::from_vec(2, 4, 1, vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, 1.0, 1.0]).unwrap());
        let gb = p.forward(&mut tape, &store, c).unwrap();
        assert_eq!(
            tape.value(gb).values,
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(p.n_params(), 4 * 6 + 6);
    }

    #[test]
    fn eval_mode_tracks_train_mode_after_repeated_batches() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2, false);
        let x = Tensor3::from_vec(
            2,
            2,
            3,
            vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0, 0.5, 2.5, 1.0, 3.0, 3.0, 2.0],
        )
        .unwrap();
        let mut train_out = Vec::new();
        for _ in 0..200 {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let y = bn.normalize(&mut tape, &mut store, xv, Mode::Train).unwrap();
            train_out = tape.value(y).values.clone();
        }
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = bn.normalize(&mut tape, &mut store, xv, Mode::Eval).unwrap();
        for (a, b) in tape.value(y).values.iter().zip(&train_out) {
            // EMA residual after 200 steps of momentum 0.1 is 0.9^200.
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_out_len() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(0, "t");
        let c = Conv1d::new(&mut store, "c", 1, 2, 7, 2, 3, false, &mut rng);
        assert_eq!(c.out_len(128), 64);
        assert_eq!(c.out_len(7), 4);
        assert_eq!(c.n_params(), 14);
    }
}
