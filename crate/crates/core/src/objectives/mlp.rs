use std::sync::Arc;

use crate::numkit::{DenseVector, RngStream};

use super::{argmax, glorot_uniform, log_sum_exp, Classifier, Dataset, Objective, ObjectiveKind};

/// One-hidden-layer perceptron: `features → tanh(hidden) → softmax(classes)`
/// trained with cross-entropy.
///
/// Parameter layout (flat): `W1` stored input-major (`features × hidden`), so
/// each input pixel owns a contiguous run of `hidden` weights; then `b1`
/// (`hidden`); then `W2` (`classes × hidden`, row-major); then `b2`.
/// With 784–128–10 this is 101,770 parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    data: Arc<Dataset>,
    hidden: usize,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Mlp {
    pub fn new(data: Arc<Dataset>, hidden: usize) -> Self {
        assert!(hidden > 0, "hidden layer must be non-empty");
        Mlp { data, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn layout(&self) -> Layout {
        let p = self.data.n_features();
        let h = self.hidden;
        let c = self.data.n_classes();
        let w1 = 0;
        let b1 = w1 + p * h;
        let w2 = b1 + h;
        let b2 = w2 + c * h;
        Layout {
            w1,
            b1,
            w2,
            b2,
            end: b2 + c,
        }
    }

    /// Hidden activations and output logits for one row.
    fn forward(&self, x: &[f64], row: &[f32], hidden: &mut [f64], logits: &mut [f64]) {
        let lay = self.layout();
        let h = self.hidden;
        hidden.copy_from_slice(&x[lay.b1..lay.b1 + h]);
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                let v = v as f64;
                let w = &x[lay.w1 + j * h..lay.w1 + (j + 1) * h];
                for (a, wk) in hidden.iter_mut().zip(w) {
                    *a += v * wk;
                }
            }
        }
        for a in hidden.iter_mut() {
            *a = a.tanh();
        }
        for (k, z) in logits.iter_mut().enumerate() {
            let w = &x[lay.w2 + k * h..lay.w2 + (k + 1) * h];
            *z = x[lay.b2 + k] + w.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Objective for Mlp {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Mlp
    }

    fn dim(&self) -> usize {
        self.layout().end
    }

    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn loss_and_grad(&self, x: &[f64], indices: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        let lay = self.layout();
        let h = self.hidden;
        let c = self.data.n_classes();
        let inv_b = 1.0 / indices.len() as f64;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut act = vec![0.0; h];
        let mut z = vec![0.0; c];
        let mut dz = vec![0.0; c];
        let mut da = vec![0.0; h];
        let mut loss = 0.0;
        for &i in indices {
            let row = self.data.row(i);
            let label = self.data.label(i);
            self.forward(x, row, &mut act, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[label];
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            for k in 0..c {
                dz[k] = ((z[k] - lse).exp() - if k == label { 1.0 } else { 0.0 }) * inv_b;
            }
            da.fill(0.0);
            for k in 0..c {
                let w = &x[lay.w2 + k * h..lay.w2 + (k + 1) * h];
                let gw = &mut g[lay.w2 + k * h..lay.w2 + (k + 1) * h];
                for m in 0..h {
                    gw[m] += dz[k] * act[m];
                    da[m] += dz[k] * w[m];
                }
                g[lay.b2 + k] += dz[k];
            }
            for m in 0..h {
                da[m] *= 1.0 - act[m] * act[m];
                g[lay.b1 + m] += da[m];
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let v = v as f64;
                    let gw = &mut g[lay.w1 + j * h..lay.w1 + (j + 1) * h];
                    for (gk, d) in gw.iter_mut().zip(&da) {
                        *gk += v * d;
                    }
                }
            }
        }
        loss * inv_b
    }

    fn initial_point(&self, rng: &mut RngStream) -> DenseVector {
        let lay = self.layout();
        let p = self.data.n_features();
        let c = self.data.n_classes();
        let mut x = DenseVector::zeros(lay.end);
        let s = x.as_mut_slice();
        glorot_uniform(rng, p, self.hidden, &mut s[lay.w1..lay.b1]);
        glorot_uniform(rng, self.hidden, c, &mut s[lay.w2..lay.b2]);
        x
    }

    fn classifier(&self) -> Option<&dyn Classifier> {
        Some(self)
    }
}

impl Classifier for Mlp {
    fn predict(&self, x: &[f64], features: &[f32]) -> usize {
        let mut act = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.data.n_classes()];
        self.forward(x, features, &mut act, &mut z);
        argmax(&z)
    }
}
