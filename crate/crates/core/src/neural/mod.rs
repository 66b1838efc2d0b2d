//! Small feedforward networks with exact reverse-mode gradients, a diagonal
//! Gaussian policy and an Adam optimizer.

mod adam;
mod tape;

pub use adam::{Adam, OptimizerState};
pub use tape::{sigmoid, Gradients, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

/// Fully connected ReLU network. `tensors` holds `[W0, b0, W1, b1, ...]`
/// with each `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub output: Activation,
    pub tensors: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Uniform `±1/sqrt(fan_in)` initialization; the last layer is shrunk by
    /// `last_scale`.
    pub fn init<R: Rng>(sizes: &[usize], output: Activation, last_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut tensors = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let scale = if l + 1 == layers { last_scale } else { 1.0 };
            let mut u = || scale * bound * (2.0 * rng.random::<f64>() - 1.0);
            tensors.push((0..n_in * n_out).map(|_| u()).collect());
            tensors.push((0..n_out).map(|_| u()).collect());
        }
        Self {
            sizes: sizes.to_vec(),
            output,
            tensors,
        }
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        let tensors = sizes
            .windows(2)
            .flat_map(|w| [vec![0.0; w[0] * w[1]], vec![0.0; w[1]]])
            .collect();
        Self {
            sizes: sizes.to_vec(),
            output,
            tensors,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut x = input.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (&self.tensors[2 * l], &self.tensors[2 * l + 1]);
            let mut y = b.clone();
            for (r, yr) in y.iter_mut().enumerate() {
                let row = &w[r * n_in..(r + 1) * n_in];
                *yr += row.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>();
            }
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == Activation::Sigmoid {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            debug_assert_eq!(y.len(), n_out);
            x = y;
        }
        x
    }

    /// Records the parameters on `tape`, one leaf per tensor.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Forward pass recorded on `tape` using parameter leaves from
    /// [`Self::leaves`].
    pub fn forward_tape(&self, tape: &mut Tape, leaves: &[Var], input: Var) -> Var {
        let layers = self.sizes.len() - 1;
        let mut x = input;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let wx = tape.matvec(leaves[2 * l], n_out, n_in, x);
            let y = tape.add(wx, leaves[2 * l + 1]);
            x = if l + 1 < layers {
                tape.relu(y)
            } else if self.output == Activation::Sigmoid {
                tape.sigmoid(y)
            } else {
                y
            };
        }
        x
    }

    /// Collects gradients for each tensor in parameter order.
    pub fn gradients(&self, grads: &Gradients, leaves: &[Var]) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(leaves)
            .map(|(t, &v)| grads.get(v, t.len()))
            .collect()
    }
}

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Bounds applied to sampled actions so the environment sees `(0, 1)`.
pub const ACTION_EPS: f64 = 1e-6;

/// Diagonal Gaussian with a sigmoid-output mean network and a learnable,
/// state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: MlpParams,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Pre-clip sample; log densities are evaluated here.
    pub action: Vec<f64>,
    /// Sample clipped into `(0, 1)` for the environment.
    pub clipped: Vec<f64>,
    pub log_prob: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng>(state_dim: usize, hidden: &[usize], action_dim: usize, log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self {
            mean: MlpParams::init(&sizes, Activation::Sigmoid, 0.1, rng),
            log_std: vec![log_std; action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        self.mean.forward(state)
    }

    pub fn sample<R: Rng>(&self, state: &[f64], rng: &mut R) -> PolicySample {
        let mu = self.mean.forward(state);
        let action: Vec<f64> = mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect();
        let log_prob = gaussian_log_prob(&mu, &self.log_std, &action);
        let clipped = action
            .iter()
            .map(|a| a.clamp(ACTION_EPS, 1.0 - ACTION_EPS))
            .collect();
        PolicySample {
            action,
            clipped,
            log_prob,
        }
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        gaussian_log_prob(&self.mean.forward(state), &self.log_std, action)
    }

    /// Records `log p(action | state)`; `leaves` are the mean-network leaves
    /// followed by the log-std leaf.
    pub fn log_prob_tape(&self, tape: &mut Tape, leaves: &[Var], state: &[f64], action: &[f64]) -> Var {
        let n = self.mean.tensors.len();
        let x = tape.constant(state.to_vec());
        let mu = self.mean.forward_tape(tape, &leaves[..n], x);
        let log_std = leaves[n];
        let a = tape.constant(action.to_vec());
        let diff = tape.sub(a, mu);
        let neg = tape.scale(log_std, -1.0);
        let inv_std = tape.exp(neg);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.square(z);
        let half = tape.scale(z2, -0.5);
        let per = tape.sub(half, log_std);
        let s = tape.sum(per);
        tape.offset(s, -(action.len() as f64) * LOG_SQRT_2PI)
    }

    /// Parameter leaves in the order expected by [`Self::log_prob_tape`].
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        let mut l = self.mean.leaves(tape);
        l.push(tape.leaf(self.log_std.clone()));
        l
    }

    pub fn gradients(&self, grads: &Gradients, leaves: &[Var]) -> Vec<Vec<f64>> {
        let n = self.mean.tensors.len();
        let mut g = self.mean.gradients(grads, &leaves[..n]);
        g.push(grads.get(leaves[n], self.log_std.len()));
        g
    }

    /// Parameter tensors in gradient order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = self.mean.tensors.iter_mut().collect();
        v.push(&mut self.log_std);
        v
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.mean.tensors.iter().map(Vec::len).collect();
        v.push(self.log_std.len());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }
}

pub fn gaussian_log_prob(mu: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - LOG_SQRT_2PI
        })
        .sum()
}

/// `KL(p || q)` for diagonal Gaussians given as `(mean, log_std)`.
pub fn gaussian_kl(mu_p: &[f64], ls_p: &[f64], mu_q: &[f64], ls_q: &[f64]) -> f64 {
    (0..mu_p.len())
        .map(|i| {
            let (vp, vq) = ((2.0 * ls_p[i]).exp(), (2.0 * ls_q[i]).exp());
            ls_q[i] - ls_p[i] + (vp + (mu_p[i] - mu_q[i]).powi(2)) / (2.0 * vq) - 0.5
        })
        .sum()
}
