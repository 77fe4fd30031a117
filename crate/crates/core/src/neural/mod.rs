//! Self-contained neural engine: a fixed-topology dense network, squared TD
//! loss, Adam, and a portable checkpoint format. Everything runs in 64-bit
//! floats with fixed summation order, so identical seeds give identical
//! training trajectories.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load as load_checkpoint, save as save_checkpoint, Checkpoint};
pub use mlp::{backward, td_loss, ForwardCache, MlpGrads, MlpParams};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn adam_descends_on_a_fixed_batch() {
        // 100 steps at lr 1e-3 on a fixed regression batch must at least
        // halve the loss.
        let mut rng = stream_rng(77, 1);
        let mut params = MlpParams::he_uniform(&[6, 16, 2], &mut rng);
        let batch: Vec<(Vec<f64>, usize, f64)> = (0..16)
            .map(|_| {
                let x: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                (x, rng.gen_range(0..2), rng.gen::<f64>() - 0.5)
            })
            .collect();

        let loss_of = |p: &MlpParams| -> f64 {
            batch
                .iter()
                .map(|(x, a, y)| td_loss(&p.forward(x).unwrap(), *a, *y).0)
                .sum::<f64>()
                / batch.len() as f64
        };

        let initial = loss_of(&params);
        let mut state = AdamState::new(&params);
        for _ in 0..100 {
            let mut grads = MlpGrads::zeros_like(&params);
            for (x, a, y) in &batch {
                let (q, cache) = params.forward_cached(x).unwrap();
                let (_, dq) = td_loss(&q, *a, *y);
                backward(&params, &cache, &dq, &mut grads).unwrap();
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        }
        let final_loss = loss_of(&params);
        assert!(
            final_loss < 0.5 * initial,
            "loss went {initial} -> {final_loss}, expected at least a halving"
        );
    }

    #[test]
    fn batch_mean_loss_is_mean_of_item_losses() {
        let mut rng = stream_rng(77, 2);
        let params = MlpParams::he_uniform(&[5, 8, 2], &mut rng);
        let items: Vec<(Vec<f64>, usize, f64)> = (0..64)
            .map(|_| {
                let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
                (x, rng.gen_range(0..2), rng.gen::<f64>())
            })
            .collect();
        let mut sum = 0.0;
        for (x, a, y) in &items {
            sum += td_loss(&params.forward(x).unwrap(), *a, *y).0;
        }
        let mean = sum / items.len() as f64;
        let direct: f64 = items
            .iter()
            .map(|(x, a, y)| td_loss(&params.forward(x).unwrap(), *a, *y).0)
            .sum::<f64>()
            / 64.0;
        assert!((mean - direct).abs() < 1e-15);
    }
}
