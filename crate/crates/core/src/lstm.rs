//! Single-layer LSTM with hand-derived backpropagation through time.
//!
//! Gate pre-activations are stacked as `[input; forget; output; candidate]`:
//!
//! ```text
//! z = Wx x + Wh h_prev + b
//! i = σ(z_i)   f = σ(z_f)   o = σ(z_o)   g = tanh(z_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use rand::Rng;

use crate::error::Result;
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::linalg::{matvec, matvec_t_acc, outer_acc, sigmoid};

/// Forget-gate bias at initialization.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Everything one forward step produced, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i; f; o; g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Lstm {
    /// Registers `{prefix}.Wx`, `{prefix}.Wh` and `{prefix}.b`.
    pub fn register<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let wx = store.insert_uniform(&format!("{prefix}.Wx"), &[4 * hidden, input], rng)?;
        let wh = store.insert_uniform(&format!("{prefix}.Wh"), &[4 * hidden, hidden], rng)?;
        let b = store.insert_uniform(&format!("{prefix}.b"), &[4 * hidden], rng)?;
        let mut bias = store.value(b).clone();
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        store.set_value(b, bias)?;
        Ok(Lstm {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    /// Looks up existing parameters, e.g. after loading a checkpoint.
    pub fn bind(store: &ParameterStore, prefix: &str) -> Result<Self> {
        let wx = store.require(&format!("{prefix}.Wx"))?;
        let wh = store.require(&format!("{prefix}.Wh"))?;
        let b = store.require(&format!("{prefix}.b"))?;
        let shape = store.value(wx).shape();
        let (hidden, input) = (shape[0] / 4, shape[1]);
        Ok(Lstm {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.wx, self.wh, self.b]
    }

    pub fn zero_state(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.hidden], vec![0.0; self.hidden])
    }

    pub fn step(
        &self,
        store: &ParameterStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> LstmStep {
        let d = self.hidden;
        debug_assert_eq!(x.len(), self.input);
        let mut z = vec![0.0; 4 * d];
        matvec(store.value(self.wx).data(), x, &mut z);
        let mut zh = vec![0.0; 4 * d];
        matvec(store.value(self.wh).data(), h_prev, &mut zh);
        let bias = store.value(self.b).data();
        for k in 0..4 * d {
            z[k] += zh[k] + bias[k];
        }
        let mut gates = z;
        for v in &mut gates[..3 * d] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * d..] {
            *v = v.tanh();
        }
        let mut c = vec![0.0; d];
        let mut tanh_c = vec![0.0; d];
        let mut h = vec![0.0; d];
        for k in 0..d {
            let (i, f, o, g) = (gates[k], gates[d + k], gates[2 * d + k], gates[3 * d + k]);
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Runs the cell over `inputs` from the zero state.
    pub fn run(&self, store: &ParameterStore, inputs: &[Vec<f64>]) -> Vec<LstmStep> {
        let (mut h, mut c) = self.zero_state();
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let s = self.step(store, x, &h, &c);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        steps
    }

    /// Backward through one step. `dh`/`dc` are gradients w.r.t. this step's
    /// outputs; returns `(dx, dh_prev, dc_prev)`. Parameter gradients are
    /// accumulated into `grads`.
    pub fn backward_step(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.hidden;
        let g = &step.gates;
        let mut dz = vec![0.0; 4 * d];
        let mut dc_prev = vec![0.0; d];
        for k in 0..d {
            let (i, f, o, cand) = (g[k], g[d + k], g[2 * d + k], g[3 * d + k]);
            let tc = step.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            let d_i = dct * cand;
            let d_g = dct * i;
            let d_f = dct * step.c_prev[k];
            dc_prev[k] = dct * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[d + k] = d_f * f * (1.0 - f);
            dz[2 * d + k] = d_o * o * (1.0 - o);
            dz[3 * d + k] = d_g * (1.0 - cand * cand);
        }
        outer_acc(&dz, &step.x, grads.data_mut(self.wx));
        outer_acc(&dz, &step.h_prev, grads.data_mut(self.wh));
        for (a, &b) in grads.data_mut(self.b).iter_mut().zip(&dz) {
            *a += b;
        }
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(store.value(self.wx).data(), &dz, &mut dx);
        let mut dh_prev = vec![0.0; d];
        matvec_t_acc(store.value(self.wh).data(), &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    /// BPTT over a whole run. `dh_out[t]` is the external gradient on step
    /// `t`'s hidden output. Returns the gradient for each step's input.
    pub fn backward(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        steps: &[LstmStep],
        dh_out: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        debug_assert_eq!(steps.len(), dh_out.len());
        let d = self.hidden;
        let mut dh_next = vec![0.0; d];
        let mut dc_next = vec![0.0; d];
        let mut dxs = vec![Vec::new(); steps.len()];
        for t in (0..steps.len()).rev() {
            let dh: Vec<f64> = dh_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = self.backward_step(store, grads, &steps[t], &dh, &dc_next);
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, sample_coordinates, LossProbe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParameterStore, Lstm, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let lstm = Lstm::register(&mut store, "l", 3, 4, &mut rng).unwrap();
        // larger weights than the init range so the check exercises saturation
        for id in lstm.param_ids() {
            let mut v = store.value(id).clone();
            for x in v.data_mut() {
                *x *= 8.0;
            }
            store.set_value(id, v).unwrap();
        }
        let inputs = (0..4)
            .map(|t| (0..3).map(|k| ((t * 3 + k) as f64 * 0.7).sin()).collect())
            .collect();
        (store, lstm, inputs)
    }

    fn loss(store: &ParameterStore, lstm: &Lstm, inputs: &[Vec<f64>]) -> f64 {
        // weighted sum over all hidden states so every step matters
        lstm.run(store, inputs)
            .iter()
            .enumerate()
            .map(|(t, s)| {
                s.h.iter()
                    .enumerate()
                    .map(|(k, h)| (1.0 + t as f64 + 0.3 * k as f64) * h)
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (store, lstm, _) = setup();
        let mut s2 = ParameterStore::new();
        let l2 = Lstm::register(&mut s2, "x", 2, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s2.value(l2.b).data()[3..6]
            .iter()
            .all(|&v| v == FORGET_BIAS_INIT));
        assert_eq!(Lstm::bind(&store, "l").unwrap(), lstm);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let (mut store, lstm, inputs) = setup();
        let steps = lstm.run(&store, &inputs);
        let dh_out: Vec<Vec<f64>> = (0..steps.len())
            .map(|t| (0..4).map(|k| 1.0 + t as f64 + 0.3 * k as f64).collect())
            .collect();
        let mut grads = store.new_gradients();
        lstm.backward(&store, &mut grads, &steps, &dh_out);
        store.accumulate(&grads).unwrap();
        let coords = sample_coordinates(&store, 60, &mut ChaCha8Rng::seed_from_u64(9));
        let report = finite_diff_check(
            &mut store,
            |s| Ok(LossProbe::smooth(loss(s, &lstm, &inputs))),
            1e-5,
            &coords,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (store, lstm, inputs) = setup();
        let steps = lstm.run(&store, &inputs);
        let dh_out: Vec<Vec<f64>> = (0..steps.len())
            .map(|t| (0..4).map(|k| 1.0 + t as f64 + 0.3 * k as f64).collect())
            .collect();
        let mut grads = store.new_gradients();
        let dxs = lstm.backward(&store, &mut grads, &steps, &dh_out);
        let h = 1e-6;
        for t in 0..inputs.len() {
            for k in 0..3 {
                let mut plus = inputs.clone();
                plus[t][k] += h;
                let mut minus = inputs.clone();
                minus[t][k] -= h;
                let numeric =
                    (loss(&store, &lstm, &plus) - loss(&store, &lstm, &minus)) / (2.0 * h);
                let rel = (numeric - dxs[t][k]).abs() / (numeric.abs() + dxs[t][k].abs()).max(1e-8);
                assert!(rel < 1e-6, "t={t} k={k} rel={rel}");
            }
        }
    }
}
