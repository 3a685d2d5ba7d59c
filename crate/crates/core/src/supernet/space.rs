use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionType {
    Skip,
    Gcn,
    Gat,
    GatSym,
    Cos,
    Linear,
    GeneLinear,
}

impl AttentionType {
    pub const ALL: [Self; 7] = [
        Self::Skip,
        Self::Gcn,
        Self::Gat,
        Self::GatSym,
        Self::Cos,
        Self::Linear,
        Self::GeneLinear,
    ];

    /// Types whose coefficients come from trainable parameters and a row softmax.
    pub fn is_learned(self) -> bool {
        !matches!(self, Self::Skip | Self::Gcn)
    }

    pub fn uses_w1(self) -> bool {
        matches!(self, Self::Gat | Self::GatSym | Self::Cos | Self::GeneLinear)
    }

    pub fn uses_w2(self) -> bool {
        matches!(self, Self::Gat | Self::GatSym | Self::Linear | Self::GeneLinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Skip => "skip",
            Self::Gcn => "gcn",
            Self::Gat => "gat",
            Self::GatSym => "gat-sym",
            Self::Cos => "cos",
            Self::Linear => "linear",
            Self::GeneLinear => "gene-linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Sum,
    Mean,
    Max,
    /// GIN-style `MLP((1 + eps) x_i + sum_j x_j)`.
    Mlp,
}

impl Aggregation {
    pub const ALL: [Self; 4] = [Self::Sum, Self::Mean, Self::Max, Self::Mlp];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Skip,
    Sigmoid,
    Tanh,
    Relu,
    Linear,
    Softplus,
    LeakyRelu,
    Relu6,
    Elu,
}

const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub const ALL: [Self; 9] = [
        Self::Skip,
        Self::Sigmoid,
        Self::Tanh,
        Self::Relu,
        Self::Linear,
        Self::Softplus,
        Self::LeakyRelu,
        Self::Relu6,
        Self::Elu,
    ];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Skip | Self::Linear => z,
            Self::Sigmoid => sigmoid(z),
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(0.0),
            Self::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Self::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Self::Relu6 => z.clamp(0.0, 6.0),
            Self::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `z` with output `y = apply(z)`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Self::Skip | Self::Linear => 1.0,
            Self::Sigmoid => y * (1.0 - y),
            Self::Tanh => 1.0 - y * y,
            Self::Relu => f64::from(u8::from(z > 0.0)),
            Self::Softplus => sigmoid(z),
            Self::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Self::Relu6 => f64::from(u8::from(z > 0.0 && z < 6.0)),
            Self::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Option lists for one supernet layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOptions {
    pub attention_types: Vec<AttentionType>,
    pub aggregation_types: Vec<Aggregation>,
    pub activation_types: Vec<Activation>,
    pub hidden_dims: Vec<usize>,
    pub attention_heads: Vec<usize>,
    pub sampling_rates: Vec<f64>,
}

impl LayerOptions {
    /// Every attention, aggregation, activation, width, head and sampling option.
    pub fn full() -> Self {
        Self {
            attention_types: AttentionType::ALL.to_vec(),
            aggregation_types: Aggregation::ALL.to_vec(),
            activation_types: Activation::ALL.to_vec(),
            hidden_dims: vec![4, 8, 16, 32, 64, 128, 256],
            attention_heads: vec![1, 2, 4, 6, 8, 16],
            sampling_rates: vec![0.1, 0.5, 1.0],
        }
    }

    /// Prediction layer: hidden dim pinned to the class count and a linear
    /// activation ahead of the softmax.
    pub fn prediction(num_classes: usize) -> Self {
        Self {
            hidden_dims: vec![num_classes],
            activation_types: vec![Activation::Linear],
            ..Self::full()
        }
    }

    pub fn singleton(choice: &LayerChoice) -> Self {
        Self {
            attention_types: vec![choice.attention],
            aggregation_types: vec![choice.aggregation],
            activation_types: vec![choice.activation],
            hidden_dims: vec![choice.hidden_dim],
            attention_heads: vec![choice.heads],
            sampling_rates: vec![choice.sampling_rate],
        }
    }

    pub fn cardinality(&self) -> u128 {
        [
            self.attention_types.len(),
            self.aggregation_types.len(),
            self.activation_types.len(),
            self.hidden_dims.len(),
            self.attention_heads.len(),
            self.sampling_rates.len(),
        ]
        .iter()
        .fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
    }

    pub fn max_hidden(&self) -> usize {
        self.hidden_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn max_heads(&self) -> usize {
        self.attention_heads.iter().copied().max().unwrap_or(0)
    }

    pub fn contains(&self, c: &LayerChoice) -> bool {
        self.attention_types.contains(&c.attention)
            && self.aggregation_types.contains(&c.aggregation)
            && self.activation_types.contains(&c.activation)
            && self.hidden_dims.contains(&c.hidden_dim)
            && self.attention_heads.contains(&c.heads)
            && self.sampling_rates.contains(&c.sampling_rate)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> LayerChoice {
        LayerChoice {
            attention: *choose(&self.attention_types, rng),
            aggregation: *choose(&self.aggregation_types, rng),
            activation: *choose(&self.activation_types, rng),
            hidden_dim: *choose(&self.hidden_dims, rng),
            heads: *choose(&self.attention_heads, rng),
            sampling_rate: *choose(&self.sampling_rates, rng),
        }
    }

    /// Re-draws each attribute independently with probability `rate`.
    pub fn mutate(&self, c: &LayerChoice, rate: f64, rng: &mut impl Rng) -> LayerChoice {
        LayerChoice {
            attention: redraw(c.attention, &self.attention_types, rate, rng),
            aggregation: redraw(c.aggregation, &self.aggregation_types, rate, rng),
            activation: redraw(c.activation, &self.activation_types, rate, rng),
            hidden_dim: redraw(c.hidden_dim, &self.hidden_dims, rate, rng),
            heads: redraw(c.heads, &self.attention_heads, rate, rng),
            sampling_rate: redraw(c.sampling_rate, &self.sampling_rates, rate, rng),
        }
    }

    fn check(&self, layer: usize) -> Result<()> {
        let empty = self.attention_types.is_empty()
            || self.aggregation_types.is_empty()
            || self.activation_types.is_empty()
            || self.hidden_dims.is_empty()
            || self.attention_heads.is_empty()
            || self.sampling_rates.is_empty();
        if empty {
            return Err(Error::Argument(format!("layer {layer}: empty option list")));
        }
        if self.hidden_dims.contains(&0) || self.attention_heads.contains(&0) {
            return Err(Error::Argument(format!("layer {layer}: zero hidden dim or head count")));
        }
        if self.sampling_rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Argument(format!("layer {layer}: sampling rates must lie in (0, 1]")));
        }
        Ok(())
    }
}

/// Uniform pick; singleton lists do not consume randomness.
pub(crate) fn choose<'a, T>(items: &'a [T], rng: &mut impl Rng) -> &'a T {
    if items.len() == 1 {
        &items[0]
    } else {
        &items[rng.gen_range(0..items.len())]
    }
}

/// Keeps `current` unless a `rate` coin lands, then draws uniformly from `items`.
pub(crate) fn redraw<T: Copy>(current: T, items: &[T], rate: f64, rng: &mut impl Rng) -> T {
    if rng.gen::<f64>() < rate {
        *choose(items, rng)
    } else {
        current
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetSpace {
    pub layers: Vec<LayerOptions>,
    /// The last layer is the prediction layer with pinned hidden dim and activation.
    pub final_layer_fixed: bool,
}

impl SupernetSpace {
    /// `searchable` full layers, optionally followed by a fixed prediction layer.
    pub fn standard(searchable: usize, prediction_classes: Option<usize>) -> Self {
        let mut layers = vec![LayerOptions::full(); searchable];
        if let Some(c) = prediction_classes {
            layers.push(LayerOptions::prediction(c));
        }
        Self {
            layers,
            final_layer_fixed: prediction_classes.is_some(),
        }
    }

    pub fn singleton(subnet: &SubnetSpec) -> Self {
        Self {
            layers: subnet.layers.iter().map(LayerOptions::singleton).collect(),
            final_layer_fixed: false,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Argument("supernet needs at least one layer".into()));
        }
        for (l, opts) in self.layers.iter().enumerate() {
            opts.check(l)?;
        }
        if self.final_layer_fixed {
            let last = self.layers.last().expect("non-empty");
            if last.hidden_dims.len() != 1 || last.activation_types.len() != 1 {
                return Err(Error::Argument(
                    "fixed prediction layer needs singleton hidden dim and activation lists".into(),
                ));
            }
        }
        Ok(())
    }

    /// Exact number of distinct subnetworks (saturates at `u128::MAX`).
    pub fn subnet_count(&self) -> u128 {
        self.layers
            .iter()
            .fold(1u128, |acc, l| acc.saturating_mul(l.cardinality()))
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> SubnetSpec {
        SubnetSpec {
            layers: self.layers.iter().map(|l| l.sample(rng)).collect(),
        }
    }

    pub fn mutate(&self, s: &SubnetSpec, rate: f64, rng: &mut impl Rng) -> SubnetSpec {
        SubnetSpec {
            layers: self
                .layers
                .iter()
                .zip(&s.layers)
                .map(|(o, c)| o.mutate(c, rate, rng))
                .collect(),
        }
    }

    pub fn contains(&self, s: &SubnetSpec) -> bool {
        s.layers.len() == self.layers.len()
            && self.layers.iter().zip(&s.layers).all(|(o, c)| o.contains(c))
    }

    /// SHA-256 over the canonical JSON of the option lists.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("space serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One concrete choice per block attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub attention: AttentionType,
    pub aggregation: Aggregation,
    pub activation: Activation,
    pub hidden_dim: usize,
    pub heads: usize,
    pub sampling_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub layers: Vec<LayerChoice>,
}

impl SubnetSpec {
    /// Two-layer GCN: GCN attention, sum aggregation, relu hidden layer.
    pub fn gcn(hidden: usize, num_classes: usize) -> Self {
        let layer = |hidden_dim, activation| LayerChoice {
            attention: AttentionType::Gcn,
            aggregation: Aggregation::Sum,
            activation,
            hidden_dim,
            heads: 1,
            sampling_rate: 1.0,
        };
        Self {
            layers: vec![layer(hidden, Activation::Relu), layer(num_classes, Activation::Linear)],
        }
    }
}

/// Column ranges of the concatenated head outputs: `ceil(k / heads)` columns
/// per head, truncated at `k`; heads left without columns are dropped.
pub fn head_columns(hidden: usize, heads: usize) -> Vec<std::ops::Range<usize>> {
    let per = hidden.div_ceil(heads.max(1));
    (0..heads)
        .map(|h| (h * per).min(hidden)..((h + 1) * per).min(hidden))
        .filter(|r| !r.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_counts() {
        assert_eq!(SupernetSpace::standard(1, None).subnet_count(), 31_752);
        assert_eq!(SupernetSpace::standard(2, None).subnet_count(), 1_008_189_504);
        assert_eq!(
            SupernetSpace::standard(1, Some(7)).subnet_count(),
            31_752 * 7 * 4 * 6 * 3
        );
    }

    #[test]
    fn singleton_space_counts_one_and_samples_itself() {
        let s = SubnetSpec::gcn(16, 7);
        let space = SupernetSpace::singleton(&s);
        assert_eq!(space.subnet_count(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(space.sample_uniform(&mut rng), s);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let opts = LayerOptions {
            sampling_rates: vec![0.1, 0.5, 1.0],
            ..LayerOptions::full()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let c = opts.sample(&mut rng);
            counts[opts.sampling_rates.iter().position(|&r| r == c.sampling_rate).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_space() {
        let space = SupernetSpace::standard(2, Some(7));
        let a = space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(5));
        let b = space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(space.contains(&a));
    }

    #[test]
    fn fingerprint_tracks_options() {
        let a = SupernetSpace::standard(1, Some(7));
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.layers[0].hidden_dims.pop();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn head_column_split() {
        assert_eq!(head_columns(16, 4), vec![0..4, 4..8, 8..12, 12..16]);
        assert_eq!(head_columns(8, 6), vec![0..2, 2..4, 4..6, 6..8]);
        assert_eq!(head_columns(4, 16), vec![0..1, 1..2, 2..3, 3..4]);
        assert_eq!(head_columns(7, 2), vec![0..4, 4..7]);
    }

    #[test]
    fn check_rejects_bad_spaces() {
        let mut s = SupernetSpace::standard(1, Some(3));
        s.check().unwrap();
        s.layers[0].sampling_rates = vec![];
        assert!(s.check().is_err());
        let mut s = SupernetSpace::standard(1, Some(3));
        s.layers[1].hidden_dims = vec![3, 4];
        assert!(s.check().is_err());
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in Activation::ALL {
            for &z in &[-2.3, -0.4, 0.7, 3.1, 7.5] {
                let h = 1e-6;
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                let an = act.derivative(z, act.apply(z));
                assert!((fd - an).abs() < 1e-6, "{act:?} at {z}: {fd} vs {an}");
            }
        }
    }
}
