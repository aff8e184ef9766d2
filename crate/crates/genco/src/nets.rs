//! Generator and discriminator networks: plain MLPs over the tensor graph,
//! weight flattening for the discrepancy loss, and the generator EMA.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

/// Activation applied after a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::Linear => x.clone(),
            Activation::LeakyRelu(slope) => x.leaky_relu(*slope),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Architecture descriptor: layer widths plus hidden and head activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub head: Activation,
}

pub const HIDDEN_WIDTH: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, head: Activation) -> MlpSpec {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w >= 1));
        MlpSpec {
            widths,
            hidden,
            head,
        }
    }

    /// Generator body: latent → 64 → 64 → output.
    pub fn generator(latent_dim: usize, out_dim: usize, head: Activation) -> MlpSpec {
        MlpSpec::new(
            vec![latent_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, out_dim],
            Activation::LeakyRelu(LEAKY_SLOPE),
            head,
        )
    }

    /// Discriminator body: input → 64 → 64 → raw logit.
    pub fn discriminator(in_dim: usize) -> MlpSpec {
        MlpSpec::new(
            vec![in_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, 1],
            Activation::LeakyRelu(LEAKY_SLOPE),
            Activation::Linear,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Ordered, flattenable set of trainable weights of one network.
#[derive(Clone)]
pub struct NetworkParams {
    pub spec: MlpSpec,
    /// (name, tensor) in declaration order; flatten() follows this order.
    pub entries: Vec<(String, Tensor)>,
}

impl NetworkParams {
    /// Weights ~ Normal(0, 1/√fan_in), biases exactly zero, drawn from the
    /// caller's init stream. Deterministic given the stream state.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> NetworkParams {
        let mut entries = Vec::new();
        for layer in 0..spec.widths.len() - 1 {
            let (fan_in, fan_out) = (spec.widths[layer], spec.widths[layer + 1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let weight: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            entries.push((
                format!("layer{layer}.weight"),
                Tensor::from_vec(vec![fan_in, fan_out], weight).unwrap(),
            ));
            entries.push((
                format!("layer{layer}.bias"),
                Tensor::from_vec(vec![1, fan_out], vec![0.0; fan_out]).unwrap(),
            ));
        }
        NetworkParams { spec, entries }
    }

    /// Forward pass over a batch, shape [batch, in_dim] → [batch, out_dim].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let batch = x.shape()[0];
        // bias broadcast via ones-column matmul; row broadcasting is not a
        // graph primitive
        let ones = Tensor::from_vec(vec![batch, 1], vec![1.0; batch]).unwrap();
        let n_layers = self.spec.widths.len() - 1;
        let mut h = x.clone();
        for layer in 0..n_layers {
            let w = &self.entries[2 * layer].1;
            let b = &self.entries[2 * layer + 1].1;
            h = h.matmul(w)?.add(&ones.matmul(b)?)?;
            let act = if layer + 1 == n_layers {
                self.spec.head
            } else {
                self.spec.hidden
            };
            h = act.apply(&h);
        }
        Ok(h)
    }

    /// Concatenates every entry in declaration order into one 1-D tensor,
    /// graph-connected to the source weights.
    pub fn flatten(&self) -> Result<Tensor, TensorError> {
        let parts: Vec<Tensor> = self.entries.iter().map(|(_, t)| t.clone()).collect();
        Tensor::concat(&parts)
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Deep copy with fresh leaves (no shared storage, no graph links).
    pub fn clone_detached(&self) -> NetworkParams {
        NetworkParams {
            spec: self.spec.clone(),
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.detach()))
                .collect(),
        }
    }
}

/// Exponential moving average of one network's weights.
#[derive(Clone)]
pub struct EmaShadow {
    pub decay: f64,
    /// (name, shape, values), mirroring the tracked network.
    pub entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl EmaShadow {
    /// Shadow initialized to the network's current weights.
    pub fn new(params: &NetworkParams, decay: f64) -> EmaShadow {
        assert!((0.0..=1.0).contains(&decay));
        EmaShadow {
            decay,
            entries: params
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.shape(), t.data()))
                .collect(),
        }
    }

    /// shadow ← decay·shadow + (1−decay)·current, elementwise.
    pub fn update(&mut self, params: &NetworkParams) {
        assert_eq!(self.entries.len(), params.entries.len(), "shape mismatch");
        for ((_, shape, shadow), (_, t)) in self.entries.iter_mut().zip(&params.entries) {
            assert_eq!(*shape, t.shape(), "shape mismatch");
            let current = t.data();
            for (s, c) in shadow.iter_mut().zip(&current) {
                *s = self.decay * *s + (1.0 - self.decay) * c;
            }
        }
    }

    /// Builds a standalone network holding the shadow weights.
    pub fn materialize(&self, spec: &MlpSpec) -> NetworkParams {
        NetworkParams {
            spec: spec.clone(),
            entries: self
                .entries
                .iter()
                .map(|(n, shape, vals)| {
                    (
                        n.clone(),
                        Tensor::from_vec(shape.clone(), vals.clone()).unwrap(),
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = MlpSpec::discriminator(4);
        let a = NetworkParams::init(spec.clone(), &mut StdRng::seed_from_u64(7));
        let b = NetworkParams::init(spec, &mut StdRng::seed_from_u64(7));
        for ((_, ta), (_, tb)) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn biases_start_at_exactly_zero() {
        let spec = MlpSpec::generator(3, 2, Activation::Linear);
        let params = NetworkParams::init(spec, &mut StdRng::seed_from_u64(1));
        for (name, t) in &params.entries {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_std_follows_fan_in_law() {
        let spec = MlpSpec::new(
            vec![64, 16],
            Activation::LeakyRelu(0.2),
            Activation::Linear,
        );
        let params = NetworkParams::init(spec, &mut StdRng::seed_from_u64(7));
        let w = params.entries[0].1.data();
        assert_eq!(w.len(), 1024);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let std = var.sqrt();
        let target = 1.0 / 8.0;
        assert!(std > 0.8 * target && std < 1.2 * target, "std {std}");
    }

    #[test]
    fn flatten_order_and_length() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Linear, Activation::Linear);
        let params = NetworkParams::init(spec, &mut StdRng::seed_from_u64(3));
        let flat = params.flatten().unwrap();
        assert_eq!(flat.len(), 6); // 2x2 weights then 2 biases
        let w = params.entries[0].1.data();
        let b = params.entries[1].1.data();
        let expected: Vec<f64> = w.into_iter().chain(b).collect();
        assert_eq!(flat.data(), expected);
    }

    #[test]
    fn flatten_of_identical_nets_is_identical() {
        let spec = MlpSpec::discriminator(3);
        let a = NetworkParams::init(spec.clone(), &mut StdRng::seed_from_u64(9));
        let b = NetworkParams::init(spec, &mut StdRng::seed_from_u64(9));
        assert_eq!(a.flatten().unwrap().data(), b.flatten().unwrap().data());
    }

    #[test]
    fn flatten_is_graph_connected() {
        // d/dw (flat·flat) = 2w, against central finite differences
        let spec = MlpSpec::new(vec![2, 2], Activation::Linear, Activation::Linear);
        let params = NetworkParams::init(spec, &mut StdRng::seed_from_u64(5));
        let loss = || {
            let f = params.flatten().unwrap();
            f.dot(&f).unwrap()
        };
        loss().backward().unwrap();
        let w = &params.entries[0].1;
        let analytic = w.grad().unwrap();
        let values = w.data();
        let eps = 1e-5;
        for i in 0..values.len() {
            assert!((analytic[i] - 2.0 * values[i]).abs() < 1e-9);
            let mut up = values.clone();
            up[i] += eps;
            w.set_data(up);
            let f_plus = loss().item();
            let mut dn = values.clone();
            dn[i] -= eps;
            w.set_data(dn);
            let f_minus = loss().item();
            w.set_data(values.clone());
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            assert!((analytic[i] - numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_shapes_are_correct() {
        let mut rng = StdRng::seed_from_u64(2);
        let g = NetworkParams::init(MlpSpec::generator(8, 2, Activation::Linear), &mut rng);
        let d = NetworkParams::init(MlpSpec::discriminator(2), &mut rng);
        let z = Tensor::zeros(vec![5, 8]);
        let fake = g.forward(&z).unwrap();
        assert_eq!(fake.shape(), vec![5, 2]);
        let logits = d.forward(&fake).unwrap();
        assert_eq!(logits.shape(), vec![5, 1]);
    }

    #[test]
    fn tanh_head_bounds_outputs() {
        let mut rng = StdRng::seed_from_u64(4);
        let g = NetworkParams::init(MlpSpec::generator(4, 16, Activation::Tanh), &mut rng);
        let z = Tensor::from_vec(vec![3, 4], vec![2.0; 12]).unwrap();
        let out = g.forward(&z).unwrap();
        assert!(out.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn ema_extremes_and_arithmetic() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Linear, Activation::Linear);
        let params = NetworkParams::init(spec.clone(), &mut StdRng::seed_from_u64(6));
        params.entries[0].1.set_data(vec![1.0]);

        let mut zero = EmaShadow::new(&params, 0.0);
        params.entries[0].1.set_data(vec![2.0]);
        zero.update(&params);
        assert_eq!(zero.entries[0].2, vec![2.0]); // decay 0 tracks current

        params.entries[0].1.set_data(vec![1.0]);
        let mut one = EmaShadow::new(&params, 1.0);
        params.entries[0].1.set_data(vec![5.0]);
        one.update(&params);
        assert_eq!(one.entries[0].2, vec![1.0]); // decay 1 never moves

        params.entries[0].1.set_data(vec![1.0]);
        let mut ema = EmaShadow::new(&params, 0.9);
        params.entries[0].1.set_data(vec![2.0]);
        ema.update(&params);
        assert!((ema.entries[0].2[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn materialized_shadow_matches_tracked_values() {
        let spec = MlpSpec::discriminator(3);
        let params = NetworkParams::init(spec.clone(), &mut StdRng::seed_from_u64(8));
        let ema = EmaShadow::new(&params, 0.5);
        let copy = ema.materialize(&spec);
        for ((_, t), (_, _, vals)) in copy.entries.iter().zip(&ema.entries) {
            assert_eq!(&t.data(), vals);
        }
    }
}
