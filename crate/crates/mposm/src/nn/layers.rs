//! Layers built on the autodiff graph: linear maps, embeddings, and a
//! mask-aware LSTM usable in both directions.

use ndarray::Array2;
use rand::Rng;

use super::var::Var;

pub fn uniform_init<R: Rng>(rows: usize, cols: usize, range: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-range..=range))
}

pub fn xavier_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let range = (6.0 / (rows + cols) as f64).sqrt();
    uniform_init(rows, cols, range, rng)
}

pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Linear {
        Linear {
            w: Var::param(xavier_init(input, output, rng)),
            b: Var::param(Array2::zeros((1, output))),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.matmul(&self.w).add_bias(&self.b)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct Embedding {
    pub table: Var,
}

impl Embedding {
    pub fn new<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Embedding {
        Embedding {
            table: Var::param(uniform_init(rows, dim, 0.1, rng)),
        }
    }

    pub fn from_matrix(matrix: Array2<f64>) -> Embedding {
        Embedding {
            table: Var::param(matrix),
        }
    }

    pub fn lookup(&self, ids: &[usize]) -> Var {
        self.table.gather_rows(ids)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.table"), self.table.clone()));
    }
}

/// Single-direction LSTM cell. Gate order in the packed weight: input,
/// forget, cell, output.
pub struct LstmCell {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> LstmCell {
        let range = (1.0 / hidden as f64).sqrt();
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget-gate bias starts at 1
        for c in hidden..2 * hidden {
            bias[[0, c]] = 1.0;
        }
        LstmCell {
            wx: Var::param(uniform_init(input, 4 * hidden, range, rng)),
            wh: Var::param(uniform_init(hidden, 4 * hidden, range, rng)),
            b: Var::param(bias),
            hidden,
        }
    }

    fn step(&self, x: &Var, h: &Var, c: &Var) -> (Var, Var) {
        let hd = self.hidden;
        let z = x
            .matmul(&self.wx)
            .add(&h.matmul(&self.wh))
            .add_bias(&self.b);
        let i = z.slice_cols(0..hd).sigmoid();
        let f = z.slice_cols(hd..2 * hd).sigmoid();
        let g = z.slice_cols(2 * hd..3 * hd).tanh();
        let o = z.slice_cols(3 * hd..4 * hd).sigmoid();
        let c_new = f.mul(c).add(&i.mul(&g));
        let h_new = o.mul(&c_new.tanh());
        (h_new, c_new)
    }

    /// Run over a [B, in] sequence. `masks[t]` is a [B, 1] 0/1 column; at
    /// masked-out rows the state carries over unchanged, so padded positions
    /// never influence the state.
    pub fn run(&self, xs: &[Var], masks: Option<&[Array2<f64>]>) -> Vec<Var> {
        let batch = xs[0].shape().0;
        let mut h = Var::constant(Array2::zeros((batch, self.hidden)));
        let mut c = Var::constant(Array2::zeros((batch, self.hidden)));
        let mut out = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let (h_new, c_new) = self.step(x, &h, &c);
            match masks.map(|m| &m[t]) {
                Some(mask) if mask.iter().any(|&m| m != 1.0) => {
                    let inv: Array2<f64> = mask.mapv(|m| 1.0 - m);
                    h = h_new.mul_col(mask).add(&h.mul_col(&inv));
                    c = c_new.mul_col(mask).add(&c.mul_col(&inv));
                }
                _ => {
                    h = h_new;
                    c = c_new;
                }
            }
            out.push(h.clone());
        }
        out
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.wx"), self.wx.clone()));
        out.push((format!("{prefix}.wh"), self.wh.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Forward and backward LSTM over the same inputs.
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> BiLstm {
        BiLstm {
            fwd: LstmCell::new(input, hidden, rng),
            bwd: LstmCell::new(input, hidden, rng),
        }
    }

    /// Per-timestep concatenated [B, 2H] states.
    pub fn run(&self, xs: &[Var], masks: Option<&[Array2<f64>]>) -> Vec<Var> {
        let fwd_states = self.fwd.run(xs, masks);
        let rev_xs: Vec<Var> = xs.iter().rev().cloned().collect();
        let rev_masks: Option<Vec<Array2<f64>>> = masks.map(|m| m.iter().rev().cloned().collect());
        let bwd_states = self.bwd.run(&rev_xs, rev_masks.as_deref());
        (0..xs.len())
            .map(|t| {
                Var::concat_cols(&[fwd_states[t].clone(), bwd_states[xs.len() - 1 - t].clone()])
            })
            .collect()
    }

    /// Final states of both directions, concatenated [B, 2H]. With masks, the
    /// forward final is the state after the last valid position and the
    /// backward final covers back to position 0.
    pub fn final_states(&self, xs: &[Var], masks: Option<&[Array2<f64>]>) -> Var {
        let fwd_states = self.fwd.run(xs, masks);
        let rev_xs: Vec<Var> = xs.iter().rev().cloned().collect();
        let rev_masks: Option<Vec<Array2<f64>>> = masks.map(|m| m.iter().rev().cloned().collect());
        let bwd_states = self.bwd.run(&rev_xs, rev_masks.as_deref());
        Var::concat_cols(&[
            fwd_states.last().expect("non-empty sequence").clone(),
            bwd_states.last().expect("non-empty sequence").clone(),
        ])
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.fwd.collect_params(&format!("{prefix}.fwd"), out);
        self.bwd.collect_params(&format!("{prefix}.bwd"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn masked_lstm_ignores_padding() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let cell = LstmCell::new(3, 4, &mut rng);
        // One real sequence of length 2, padded to 4.
        let xs: Vec<Var> = (0..4)
            .map(|t| {
                Var::constant(Array2::from_shape_fn((1, 3), |(_, j)| {
                    (t * 3 + j) as f64 * 0.1
                }))
            })
            .collect();
        let masks: Vec<Array2<f64>> = (0..4)
            .map(|t| Array2::from_elem((1, 1), if t < 2 { 1.0 } else { 0.0 }))
            .collect();
        let padded = cell.run(&xs, Some(&masks));
        let unpadded = cell.run(&xs[..2], None);
        let a = padded.last().unwrap().value().clone();
        let b = unpadded.last().unwrap().value().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn bilstm_final_state_matches_unpadded_run() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let net = BiLstm::new(2, 3, &mut rng);
        let xs: Vec<Var> = (0..5)
            .map(|t| Var::constant(Array2::from_elem((1, 2), t as f64 * 0.2 - 0.3)))
            .collect();
        let masks: Vec<Array2<f64>> = (0..5)
            .map(|t| Array2::from_elem((1, 1), if t < 3 { 1.0 } else { 0.0 }))
            .collect();
        let padded = net.final_states(&xs, Some(&masks));
        let unpadded = net.final_states(&xs[..3], None);
        let pv = padded.value().clone();
        let uv = unpadded.value().clone();
        for (a, b) in pv.iter().zip(uv.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cell = LstmCell::new(2, 3, &mut rng);
        let xs: Vec<Var> = (0..3)
            .map(|_| Var::constant(uniform_init(2, 2, 0.5, &mut rng)))
            .collect();
        let f = || {
            let states = cell.run(&xs, None);
            states.last().unwrap().logsumexp_rows().mean_all()
        };
        let loss = f();
        loss.backward();
        for param in [&cell.wx, &cell.wh, &cell.b] {
            let analytic = param.grad().clone();
            let (rows, cols) = param.shape();
            for r in 0..rows {
                for c in (0..cols).step_by(5) {
                    let eps = 1e-3;
                    let orig = param.value()[[r, c]];
                    param.update_value(|v| v[[r, c]] = orig + eps);
                    let up = f().scalar();
                    param.update_value(|v| v[[r, c]] = orig - eps);
                    let down = f().scalar();
                    param.update_value(|v| v[[r, c]] = orig);
                    let numeric = (up - down) / (2.0 * eps);
                    let a = analytic[[r, c]];
                    let denom = a.abs().max(numeric.abs()).max(1e-2);
                    assert!(
                        (a - numeric).abs() / denom < 3e-2,
                        "at ({r},{c}): analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }
}
