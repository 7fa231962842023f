use super::params::{Gradients, ParameterStore};

/// Agreement between analytic and central-difference gradients for one array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, 0 when both vanish.
    pub rel_error: f64,
}

/// Compares `analytic` against central differences of `loss` with the given
/// step, perturbing each trainable value in turn. Values are restored afterwards.
pub fn check_gradients<F>(store: &mut ParameterStore, analytic: &Gradients, step: f64, mut loss: F) -> Vec<ArrayCheck>
where
    F: FnMut(&ParameterStore) -> f64,
{
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.values(id)[j];
            store.values_mut(id)[j] = orig + step;
            let up = loss(store);
            store.values_mut(id)[j] = orig - step;
            let down = loss(store);
            store.values_mut(id)[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let a = analytic.get(id);
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = an.max(nn);
        out.push(ArrayCheck {
            name: store.get(id).name.clone(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::Graph;

    #[test]
    fn quadratic_gradient_matches() {
        let mut store = ParameterStore::new();
        let w = store.add("w", &[1, 3], vec![0.5, -0.25, 1.0], true).unwrap();
        let loss_of = |s: &ParameterStore| {
            let mut g = Graph::new(s);
            let x = g.input(vec![1.0, 2.0, 3.0]);
            let y = g.linear(w, None, x);
            let t = g.tanh(y);
            let sq = g.mul(t, t);
            g.scalar(sq)
        };
        let mut grads = Gradients::zeros_like(&store);
        {
            let mut g = Graph::new(&store);
            let x = g.input(vec![1.0, 2.0, 3.0]);
            let y = g.linear(w, None, x);
            let t = g.tanh(y);
            let sq = g.mul(t, t);
            g.backward(sq, &mut grads);
        }
        let checks = check_gradients(&mut store, &grads, 1e-5, loss_of);
        assert_eq!(checks.len(), 1);
        assert!(checks[0].rel_error < 1e-7, "{checks:?}");
        assert!(checks[0].analytic_norm > 0.0);
    }
}
