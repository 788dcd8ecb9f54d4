use super::{AffinePredictor, BatchNorm, Linear, Mode, NnError, ParamStore, Tape, Tensor3, Var};
use crate::geometry::AngleRad;

/// Default width of the angle encoding.
pub const ANGLE_ENCODING_DIM: usize = 4;

/// A batch of `D`-dimensional condition vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CondVector {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl CondVector {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self, NnError> {
        if d == 0 {
            return Err(NnError::Invalid("condition dimension must be >= 1".into()));
        }
        if values.len() != n * d {
            return Err(NnError::Shape(format!(
                "{} values for ({n}, {d}) condition",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Invalid("non-finite condition value".into()));
        }
        Ok(Self { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// As an `(N, D, 1)` tensor.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_vec(self.n, self.d, 1, self.values.clone()).expect("sized")
    }
}

/// Harmonic encoding `(sin φ, cos φ, sin 2φ, cos 2φ, sin 3φ, …)` truncated to
/// `dim` entries. Continuous across the 0/2π seam; the second harmonic is
/// shared by `φ` and `φ + π`.
pub fn encode_angle(phi: AngleRad, dim: usize) -> Vec<f64> {
    let p = phi.value();
    (0..dim)
        .map(|i| {
            let k = (i / 2 + 1) as f64;
            if i % 2 == 0 {
                (k * p).sin()
            } else {
                (k * p).cos()
            }
        })
        .collect()
}

pub fn encode_angles(phis: &[AngleRad], dim: usize) -> Result<CondVector, NnError> {
    let values = phis.iter().flat_map(|&p| encode_angle(p, dim)).collect();
    CondVector::new(phis.len(), dim, values)
}

/// Appends `proj(c_n)` as an extra channel broadcast over length.
pub fn concat_condition(tape: &mut Tape, store: &ParamStore, x: Var, c: Var, proj: &Linear) -> Result<Var, NnError> {
    if proj.d_out != 1 {
        return Err(NnError::Shape(format!(
            "concat projection must map to 1, got {}",
            proj.d_out
        )));
    }
    let token = proj.forward(tape, store, c)?;
    tape.concat_token(x, token)
}

/// `y[n,c,l] = γ_c(c_n)·x[n,c,l] + β_c(c_n)`.
pub fn film(tape: &mut Tape, store: &ParamStore, x: Var, c: Var, pred: &AffinePredictor) -> Result<Var, NnError> {
    if tape.value(x).c() != pred.channels {
        return Err(NnError::Shape(format!(
            "FiLM predictor for {} channels applied to {}",
            pred.channels,
            tape.value(x).c()
        )));
    }
    let gb = pred.forward(tape, store, c)?;
    tape.modulate(x, gb)
}

/// Conditional batch normalization: `film(batchnorm(x))`.
pub fn cbn(
    tape: &mut Tape,
    store: &mut ParamStore,
    x: Var,
    c: Var,
    pred: &AffinePredictor,
    bn: &BatchNorm,
    mode: Mode,
) -> Result<Var, NnError> {
    if bn.affine.is_some() {
        return Err(NnError::Invalid(
            "CBN expects a batch norm without its own affine".into(),
        ));
    }
    let xhat = bn.normalize(tape, store, x, mode)?;
    film(tape, store, xhat, c, pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Tensor3};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn t(n: usize, c: usize, l: usize, v: &[f64]) -> Tensor3 {
        Tensor3::from_vec(n, c, l, v.to_vec()).unwrap()
    }

    fn random(n: usize, c: usize, l: usize, seed: u64) -> Tensor3 {
        let mut rng = crate::rng::stream(seed, "cond-test");
        t(
            n,
            c,
            l,
            &(0..n * c * l).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(),
        )
    }

    fn set(store: &mut ParamStore, id: crate::nn::ParamId, v: &[f64]) {
        store.get_mut(id).values.copy_from_slice(v);
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_angle(AngleRad::ZERO, 4), vec![0.0, 1.0, 0.0, 1.0]);
        let e = encode_angle(AngleRad::new(PI).unwrap(), 4);
        let expect = [0.0, -1.0, 0.0, 1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(encode_angle(AngleRad::ZERO, 1), vec![0.0]);
        assert_eq!(encode_angle(AngleRad::ZERO, 6).len(), 6);
        assert!(CondVector::new(1, 0, vec![]).is_err());
        assert!(CondVector::new(1, 1, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn encoding_is_periodic(r in -50.0f64..50.0) {
            let a = encode_angle(AngleRad::new(r).unwrap(), 4);
            let b = encode_angle(AngleRad::new(r + 2.0 * PI).unwrap(), 4);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn film_hand_example() {
        let mut store = ParamStore::new();
        let pred = AffinePredictor::new(&mut store, "p", 1, 2);
        set(&mut store, pred.map.bias.unwrap(), &[2.0, -1.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.input(t(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.input(t(1, 1, 1, &[0.7]));
        let y = film(&mut tape, &store, x, c, &pred).unwrap();
        assert_eq!(tape.value(y).values, vec![2.0, 4.0, -2.0, -3.0]);
    }

    #[test]
    fn film_identity_and_constant() {
        let mut store = ParamStore::new();
        let pred = AffinePredictor::new(&mut store, "p", 4, 3);
        let x0 = random(5, 3, 7, 1);
        let c0 = random(5, 4, 1, 2);
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let c = tape.input(c0.clone());
        let y = film(&mut tape, &store, x, c, &pred).unwrap();
        assert_eq!(tape.value(y).values, x0.values);

        set(&mut store, pred.map.bias.unwrap(), &[0.0, 0.0, 0.0, 5.0, 5.0, 5.0]);
        let mut tape = Tape::new();
        let x = tape.input(x0);
        let c = tape.input(c0);
        let y = film(&mut tape, &store, x, c, &pred).unwrap();
        assert!(tape.value(y).values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn cbn_reduces_to_batch_norm_and_matches_composition() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3, false);
        let pred = AffinePredictor::new(&mut store, "p", 4, 3);
        let x0 = random(4, 3, 6, 3);
        let c0 = random(4, 4, 1, 4);

        let mut s1 = store.clone();
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let c = tape.input(c0.clone());
        let y = cbn(&mut tape, &mut s1, x, c, &pred, &bn, Mode::Train).unwrap();
        let mut s2 = store.clone();
        let mut tape2 = Tape::new();
        let x2 = tape2.input(x0.clone());
        let plain = bn.forward(&mut tape2, &mut s2, x2, Mode::Train).unwrap();
        assert_eq!(tape.value(y).values, tape2.value(plain).values);
        assert_eq!(s1, s2);

        // Random predictor: compare against an explicit normalize-then-modulate.
        let mut rng = crate::rng::stream(5, "w");
        let w: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        set(&mut store, pred.map.weight, &w);
        let mut s1 = store.clone();
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let c = tape.input(c0.clone());
        let y = cbn(&mut tape, &mut s1, x, c, &pred, &bn, Mode::Train).unwrap();
        let mut s2 = store.clone();
        let mut tape2 = Tape::new();
        let x2 = tape2.input(x0);
        let c2 = tape2.input(c0);
        let xhat = bn.normalize(&mut tape2, &mut s2, x2, Mode::Train).unwrap();
        let gb = pred.forward(&mut tape2, &s2, c2).unwrap();
        let two_step = tape2.modulate(xhat, gb).unwrap();
        let a: Vec<u64> = tape.value(y).values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = tape2.value(two_step).values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn cbn_on_normalized_input() {
        // Train-mode normalization of data that is already zero-mean,
        // unit-variance per channel is the identity up to eps.
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, false);
        let pred = AffinePredictor::new(&mut store, "p", 1, 1);
        set(&mut store, pred.map.bias.unwrap(), &[2.0, 1.0]);
        let x0 = t(2, 1, 2, &[1.0, -1.0, 1.0, -1.0]);
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let c = tape.input(t(2, 1, 1, &[0.0, 0.0]));
        let y = cbn(&mut tape, &mut store, x, c, &pred, &bn, Mode::Train).unwrap();
        for (a, b) in tape.value(y).values.iter().zip(&x0.values) {
            assert!((a - (2.0 * b + 1.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn concat_examples() {
        let mut store = ParamStore::new();
        let proj = Linear::zeros(&mut store, "proj", 2, 1);
        let mut tape = Tape::new();
        let x = tape.input(t(1, 1, 2, &[1.0, 2.0]));
        let c = tape.input(t(1, 2, 1, &[0.4, -0.9]));
        let y = concat_condition(&mut tape, &store, x, c, &proj).unwrap();
        assert_eq!(tape.value(y).values, vec![1.0, 2.0, 0.0, 0.0]);

        set(&mut store, proj.bias.unwrap(), &[3.0]);
        let mut tape = Tape::new();
        let x = tape.input(t(1, 1, 2, &[1.0, 2.0]));
        let c = tape.input(t(1, 2, 1, &[0.4, -0.9]));
        let y = concat_condition(&mut tape, &store, x, c, &proj).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 2, 2]);
        assert_eq!(tape.value(y).values, vec![1.0, 2.0, 3.0, 3.0]);

        let bad = tape.input(t(2, 2, 1, &[0.0; 4]));
        assert!(concat_condition(&mut tape, &store, x, bad, &proj).is_err());
    }

    #[test]
    fn concat_bias_gradient_is_twice_appended_sum() {
        let mut store = ParamStore::new();
        let proj = Linear::zeros(&mut store, "proj", 2, 1);
        set(&mut store, proj.weight, &[0.5, -0.25]);
        set(&mut store, proj.bias.unwrap(), &[0.3]);
        let x0 = random(3, 2, 4, 9);
        let c0 = random(3, 2, 1, 10);
        let mut tape = Tape::new();
        let x = tape.input(x0);
        let c = tape.input(c0);
        let y = concat_condition(&mut tape, &store, x, c, &proj).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        let yv = tape.value(y);
        let appended: f64 = (0..3)
            .flat_map(|n| (0..4).map(move |l| (n, l)))
            .map(|(n, l)| yv.at(n, 2, l))
            .sum();
        let g = store.get(proj.bias.unwrap()).grad[0];
        assert!((g - 2.0 * appended).abs() < 1e-12);

        // Finite-difference oracle on the same loss.
        let report = grad_check(&mut store, |tape, store| {
            let x = tape.input(random(3, 2, 4, 9));
            let c = tape.input(random(3, 2, 1, 10));
            let y = concat_condition(tape, store, x, c, &proj)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "{report:?}");
    }
}
