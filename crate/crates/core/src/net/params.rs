use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

use super::ModelConfig;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, RealTensor>,
}

struct Init {
    rng: ChaCha8Rng,
    map: BTreeMap<String, RealTensor>,
}

impl Init {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) {
        let dist = Normal::new(0.0, std).expect("finite std");
        let t = RealTensor::from_fn(shape, |_| dist.sample(&mut self.rng));
        self.map.insert(name, t);
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) {
        self.map.insert(name, RealTensor::full(shape, value));
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, gain: f64) {
        self.normal(format!("{prefix}.w"), &[fan_in, fan_out], gain / (fan_in as f64).sqrt());
        self.fill(format!("{prefix}.b"), &[fan_out], 0.0);
    }

    fn layer_norm(&mut self, prefix: &str, n: usize) {
        self.fill(format!("{prefix}.g"), &[n], 1.0);
        self.fill(format!("{prefix}.b"), &[n], 0.0);
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, gain: f64) {
        let std = gain / ((cin * 9) as f64).sqrt();
        self.normal(format!("{prefix}.w"), &[cout, cin, 3, 3], std);
        self.fill(format!("{prefix}.b"), &[cout], 0.0);
    }
}

impl ParamStore {
    /// Seeded initialization: normal weights scaled by `1/sqrt(fan_in)`, zero
    /// biases, unit layer-norm gains. The last refiner layer starts small so
    /// each refiner begins close to the identity.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let v = &config.vit;
        let (d, tw, s2) = (v.dim, v.token_width(), v.patch * v.patch);
        let hidden = tw * v.mlp_ratio;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            map: BTreeMap::new(),
        };
        init.linear("vit.meas.0", s2, d, 1.0);
        init.linear("vit.meas.1", d, d, 1.0);
        init.linear("vit.coord.0", 4 * (v.bands + 1), d, 1.0);
        init.linear("vit.coord.1", d, d, 1.0);
        for b in 0..v.depth {
            let p = format!("vit.block{b}");
            init.layer_norm(&format!("{p}.ln1"), tw);
            for m in ["q", "v", "o"] {
                init.linear(&format!("{p}.attn.{m}"), tw, tw, 1.0);
            }
            // A key bias only shifts each row of scores, which softmax ignores.
            init.normal(format!("{p}.attn.k.w"), &[tw, tw], 1.0 / (tw as f64).sqrt());
            init.layer_norm(&format!("{p}.ln2"), tw);
            init.linear(&format!("{p}.mlp.0"), tw, hidden, 1.0);
            init.linear(&format!("{p}.mlp.1"), hidden, tw, 1.0);
        }
        init.layer_norm("vit.head.ln", tw);
        init.linear("vit.head.0", tw, hidden, 1.0);
        init.linear("vit.head.1", hidden, 2 * s2, 1.0);
        let c = config.cnn_width;
        for j in 0..config.refiner_count() {
            let p = format!("du.refiner{j}");
            init.conv(&format!("{p}.conv0"), 2, c, 1.0);
            init.conv(&format!("{p}.conv1"), c, c, 1.0);
            init.conv(&format!("{p}.conv2"), c, 2, 0.1);
        }
        Self { map: init.map }
    }

    pub fn from_map(map: BTreeMap<String, RealTensor>) -> Self {
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<&RealTensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut RealTensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealTensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(RealTensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(RealTensor::is_finite)
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams::from_vars(self.map.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))))
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        BoundParams::from_vars(self.map.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))))
    }
}

/// Parameter handles on one tape.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    map: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            map: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
