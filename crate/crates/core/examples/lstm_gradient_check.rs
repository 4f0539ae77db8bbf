//! Backpropagation through time against central finite differences.
//!
//! ```bash
//! cargo run --example lstm_gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use session_intent::lstm::{CellCandidate, LstmParams};
use session_intent::numerics::{ParamSet, Tensor};

fn objective(params: &ParamSet, lstm: &LstmParams, xs: &Tensor, target: &[f64]) -> f64 {
    let cache = lstm.sequence_forward(params, xs).unwrap();
    cache.last_h().iter().zip(target).map(|(h, t)| 0.5 * (h - t).powi(2)).sum()
}

fn main() -> anyhow::Result<()> {
    let (input, hidden, steps) = (3, 4, 6);
    for cand in [CellCandidate::Sigmoid, CellCandidate::Tanh] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        let lstm = LstmParams::register(&mut params, "demo", input, hidden, cand, &mut rng)?;
        // larger weights than the default init so the gates are not all near 0.5
        for p in params.iter_mut() {
            for v in p.value.data_mut() {
                *v *= 10.0;
            }
        }
        let xs = Tensor::uniform(&[steps, input], 1.0, &mut rng);
        let target = vec![0.3, -0.2, 0.1, 0.05];

        let cache = lstm.sequence_forward(&params, &xs)?;
        let mut grad_hs = vec![vec![0.0; hidden]; steps];
        for (g, (h, t)) in grad_hs[steps - 1].iter_mut().zip(cache.last_h().iter().zip(&target)) {
            *g = h - t;
        }
        params.zero_grads();
        lstm.sequence_backward(&mut params, &cache, &grad_hs)?;

        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        let names = params.names();
        for name in &names {
            let id = params.id(name).unwrap();
            for k in 0..params.value(id).len() {
                let analytic = params.grad(id).data()[k];
                let orig = params.value(id).data()[k];
                params.value_mut(id).data_mut()[k] = orig + eps;
                let up = objective(&params, &lstm, &xs, &target);
                params.value_mut(id).data_mut()[k] = orig - eps;
                let down = objective(&params, &lstm, &xs, &target);
                params.value_mut(id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        println!("{cand:?}: {} tensors, {} scalars, worst relative error {worst:.2e}", names.len(), params.scalar_count());
    }
    Ok(())
}
