//! Straight-through Gumbel-Softmax sampling and mask-pattern sampling.

use ndarray::Array2;
use rand::Rng;

use crate::nn::Var;

const UNIFORM_CLAMP: f64 = 1e-10;

/// i.i.d. standard Gumbel noise, g = -log(-log(U)), with U clamped away from
/// 0 and 1.
pub fn gumbel_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u: f64 = rng
            .random::<f64>()
            .clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
        -(-u.ln()).ln()
    })
}

/// Forward: exact one-hot at argmax(logits + g) (ties to the lowest index).
/// Backward: gradients flow as through softmax((logits + g) / tau).
pub fn gumbel_st_sample<R: Rng>(logits: &Var, tau: f64, rng: &mut R) -> Var {
    let (rows, cols) = logits.shape();
    let noise = gumbel_noise(rows, cols, rng);
    gumbel_st_with_noise(logits, tau, &noise)
}

/// The relaxed sample alone: softmax((logits + g) / tau). Differentiable
/// everywhere, so gradient checks run against this path.
pub fn gumbel_soft_with_noise(logits: &Var, tau: f64, noise: &Array2<f64>) -> Var {
    logits.add_const(noise).scale(1.0 / tau).softmax_rows()
}

/// Same as [`gumbel_st_sample`] with caller-provided noise (tests freeze it).
pub fn gumbel_st_with_noise(logits: &Var, tau: f64, noise: &Array2<f64>) -> Var {
    let perturbed = logits.add_const(noise);
    let relaxed = perturbed.scale(1.0 / tau).softmax_rows();
    let hard = {
        let v = perturbed.value();
        let mut hard = Array2::zeros(v.raw_dim());
        for (r, row) in v.rows().into_iter().enumerate() {
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = c;
                }
            }
            hard[[r, best]] = 1.0;
        }
        hard
    };
    relaxed.straight_through(hard)
}

/// Independent Bernoulli(mask_rate) per position; if nothing is selected, one
/// uniform position is forced so every sentence trains.
pub fn sample_mask<R: Rng>(length: usize, mask_rate: f64, rng: &mut R) -> Vec<bool> {
    assert!(length >= 1);
    let mut mask: Vec<bool> = (0..length).map(|_| rng.random_bool(mask_rate)).collect();
    if !mask.iter().any(|&m| m) {
        mask[rng.random_range(0..length)] = true;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_noise_gives_argmax_onehot() {
        let logits = Var::constant(array![[10.0f64, 0.0, 0.0]]);
        let noise = Array2::zeros((1, 3));
        let st = gumbel_st_with_noise(&logits, 2.0, &noise);
        assert_eq!(*st.value(), array![[1.0f64, 0.0, 0.0]]);
    }

    #[test]
    fn output_is_always_exactly_one_hot() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let logits = Var::constant(array![[0.3f64, -0.1, 0.7, 0.2]]);
        for _ in 0..200 {
            let st = gumbel_st_sample(&logits, 2.0, &mut rng);
            let v = st.value();
            let ones = v.iter().filter(|&&x| x == 1.0).count();
            let zeros = v.iter().filter(|&&x| x == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, 3);
        }
    }

    #[test]
    fn relaxed_softmax_approaches_onehot_as_tau_shrinks() {
        let logits = Var::constant(array![[1.0f64, 0.0, -0.5]]);
        let noise = array![[0.2f64, -0.1, 0.3]];
        let perturbed = logits.add_const(&noise);
        let sharp = perturbed.scale(1.0 / 1e-4).softmax_rows();
        let st = gumbel_st_with_noise(&logits, 1e-4, &noise);
        for (a, b) in sharp.value().iter().zip(st.value().iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_distribution_matches_gumbel_max_property() {
        // Monte-Carlo oracle: the argmax of logits+Gumbel noise is
        // distributed as softmax(logits).
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let logits = Var::constant(array![[1.0f64, 0.0]]);
        let n = 100_000;
        let mut hits = [0u64; 2];
        for _ in 0..n {
            let st = gumbel_st_sample(&logits, 2.0, &mut rng);
            let v = st.value();
            if v[[0, 0]] == 1.0 {
                hits[0] += 1;
            } else {
                hits[1] += 1;
            }
        }
        let expected0 = (1.0f64).exp() / ((1.0f64).exp() + 1.0);
        let got0 = hits[0] as f64 / n as f64;
        assert!((got0 - expected0).abs() < 0.01, "{got0} vs {expected0}");
    }

    #[test]
    fn length_one_sentence_is_always_masked() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_mask(1, 0.15, &mut rng), vec![true]);
        }
    }

    #[test]
    fn mask_rate_matches_binomial_with_forcing_oracle() {
        // Oracle: P(pos masked) = rate + (1-rate)^len / len extra mass from
        // the forced pick; estimate both by Monte Carlo and compare means.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (len, rate, trials) = (20usize, 0.15f64, 100_000usize);
        let mut total = 0usize;
        for _ in 0..trials {
            total += sample_mask(len, rate, &mut rng)
                .iter()
                .filter(|&&m| m)
                .count();
        }
        let mean_frac = total as f64 / (trials * len) as f64;
        let expected = rate + (1.0 - rate).powi(len as i32) / len as f64;
        assert!(
            (mean_frac - expected).abs() < 0.01,
            "{mean_frac} vs {expected}"
        );
    }

    #[test]
    fn same_seed_same_mask() {
        let a = sample_mask(30, 0.15, &mut ChaCha20Rng::seed_from_u64(12));
        let b = sample_mask(30, 0.15, &mut ChaCha20Rng::seed_from_u64(12));
        assert_eq!(a, b);
    }
}
