use crate::nn::{Linear, NnError, ParamStore, Tape, Tensor3, Var};
use crate::rng::stream;

/// Gated recurrent unit with separate input and hidden maps per gate:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    ir: Linear,
    iz: Linear,
    in_: Linear,
    hr: Linear,
    hz: Linear,
    hn: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, seed: u64) -> Self {
        let mut lin = |gate: &str, d_in: usize| {
            let lname = format!("{name}.{gate}");
            Linear::new(
                store,
                &lname,
                d_in,
                hidden,
                true,
                &mut stream(seed, &format!("init/{lname}")),
            )
        };
        Self {
            ir: lin("ir", input),
            iz: lin("iz", input),
            in_: lin("in", input),
            hr: lin("hr", hidden),
            hz: lin("hz", hidden),
            hn: lin("hn", hidden),
            input,
            hidden,
        }
    }

    pub fn n_params(&self) -> usize {
        3 * (self.input * self.hidden + self.hidden) + 3 * (self.hidden * self.hidden + self.hidden)
    }

    /// One step: `x (N, input, 1)`, `h (N, hidden, 1)` → `h' (N, hidden, 1)`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var, NnError> {
        let a = self.ir.forward(tape, store, x)?;
        let b = self.hr.forward(tape, store, h)?;
        let s = tape.add(a, b)?;
        let r = tape.sigmoid(s);
        let a = self.iz.forward(tape, store, x)?;
        let b = self.hz.forward(tape, store, h)?;
        let s = tape.add(a, b)?;
        let z = tape.sigmoid(s);
        let a = self.in_.forward(tape, store, x)?;
        let b = self.hn.forward(tape, store, h)?;
        let rb = tape.mul(r, b)?;
        let s = tape.add(a, rb)?;
        let n = tape.tanh(s);
        let one_minus_z = tape.one_minus(z);
        let keep_new = tape.mul(one_minus_z, n)?;
        let keep_old = tape.mul(z, h)?;
        tape.add(keep_new, keep_old)
    }

    /// Runs over `(N·T, input, 1)` step features (sample-major) from a zero
    /// initial state and returns the final hidden state `(N, hidden, 1)`.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: Var, steps: usize) -> Result<Var, NnError> {
        let nt = tape.value(xs).n();
        if steps == 0 || !nt.is_multiple_of(steps) {
            return Err(NnError::Shape(format!(
                "{nt} rows do not split into sequences of {steps}"
            )));
        }
        let mut h = tape.input(Tensor3::zeros(nt / steps, self.hidden, 1));
        for t in 0..steps {
            let x = tape.select_step(xs, steps, t)?;
            h = self.step(tape, store, x, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::Rng;

    fn random(n: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = stream(seed, "gru-x");
        Tensor3::from_vec(n, c, 1, (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_step_sequence_equals_cell() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, 1);
        let x0 = random(2, 3, 2);
        let mut tape = Tape::new();
        let xs = tape.input(x0.clone());
        let h = cell.run(&mut tape, &store, xs, 1).unwrap();
        let mut tape2 = Tape::new();
        let x = tape2.input(x0);
        let h0 = tape2.input(Tensor3::zeros(2, 4, 1));
        let h2 = cell.step(&mut tape2, &store, x, h0).unwrap();
        assert_eq!(tape.value(h).values, tape2.value(h2).values);
        assert_eq!(store.n_params(), cell.n_params());
    }

    #[test]
    fn zero_update_gate_bias_limit() {
        // With z → 1 the state is carried unchanged.
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, 5);
        for lin in [&cell.iz, &cell.hz] {
            store.get_mut(lin.weight).values.iter_mut().for_each(|v| *v = 0.0);
            store
                .get_mut(lin.bias.unwrap())
                .values
                .iter_mut()
                .for_each(|v| *v = 20.0);
        }
        let mut tape = Tape::new();
        let x = tape.input(random(1, 2, 3));
        let h = tape.input(Tensor3::from_vec(1, 3, 1, vec![0.5, -0.25, 0.1]).unwrap());
        let h1 = cell.step(&mut tape, &store, x, h).unwrap();
        for (a, b) in tape.value(h1).values.iter().zip([0.5, -0.25, 0.1]) {
            assert!((a - b).abs() < 1e-15 + 2.0 * (-40.0f64).exp());
        }
    }

    #[test]
    fn gradient_through_three_steps() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, 7);
        let head = Linear::new(&mut store, "head", 4, 3, true, &mut stream(7, "head"));
        let xs0 = random(2 * 3, 3, 8);
        let report = grad_check(&mut store, |tape, store| {
            let xs = tape.input(xs0.clone());
            let h = cell.run(tape, store, xs, 3)?;
            let y = head.forward(tape, store, h)?;
            tape.softmax_cross_entropy(y, &[0, 2], None)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }
}
