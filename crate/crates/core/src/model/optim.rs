use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<_> = store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            ndarray::Zip::from(store.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::Graph;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", array![[3.0, -2.0]]);
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&store);
                let v = g.param(x);
                let vt = g.transpose(v);
                let sq = g.matmul(v, vt);
                g.backward(sq)
            };
            adam.step(&mut store, &grads);
        }
        assert!(store.get(x).iter().all(|v| v.abs() < 1e-2), "{:?}", store.get(x));
    }
}
