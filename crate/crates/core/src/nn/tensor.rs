use super::NnError;

/// A `(batch, channels, length)` array of doubles with a gradient buffer of the
/// same shape. The gradient is allocated on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: [usize; 3],
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Self {
            shape: [n, c, l],
            values: vec![0.0; n * c * l],
            grad: Vec::new(),
        }
    }

    pub fn from_vec(n: usize, c: usize, l: usize, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != n * c * l {
            return Err(NnError::Shape(format!(
                "{} values for shape ({n}, {c}, {l})",
                values.len()
            )));
        }
        Ok(Self {
            shape: [n, c, l],
            values,
            grad: Vec::new(),
        })
    }

    pub fn filled(n: usize, c: usize, l: usize, v: f64) -> Self {
        Self {
            shape: [n, c, l],
            values: vec![v; n * c * l],
            grad: Vec::new(),
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn l(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, l: usize) -> usize {
        (n * self.shape[1] + c) * self.shape[2] + l
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, l: usize) -> f64 {
        self.values[self.index(n, c, l)]
    }

    /// Row `n` as a flat `(C·L)` slice.
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.shape[1] * self.shape[2];
        &self.values[n * w..(n + 1) * w]
    }

    /// Gradient buffer, allocated as zeros if absent.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.values.len() {
            self.grad = vec![0.0; self.values.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}
