use super::ParamStore;

/// Stochastic gradient descent with heavy-ball momentum and optional L2
/// weight decay: `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients. Parameters that
    /// received no gradient are still decayed and carried by momentum.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.velocity.is_empty() {
            self.velocity = store.params().map(|(_, t)| vec![0.0; t.len()]).collect();
        }
        for (t, v) in store.params_mut().zip(&mut self.velocity) {
            let has_grad = !t.grad.is_empty();
            for i in 0..t.values.len() {
                let g = if has_grad { t.grad[i] } else { 0.0 } + self.weight_decay * t.values[i];
                v[i] = self.momentum * v[i] + g;
                t.values[i] -= self.lr * v[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor3;

    #[test]
    fn momentum_update_by_hand() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor3::from_vec(1, 1, 1, vec![1.0]).unwrap());
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        store.get_mut(id).grad_mut()[0] = 2.0;
        opt.step(&mut store);
        assert!((store.get(id).values[0] - 0.8).abs() < 1e-15);
        opt.step(&mut store);
        // v = 0.9·2 + 2 = 3.8
        assert!((store.get(id).values[0] - (0.8 - 0.38)).abs() < 1e-15);
    }
}
