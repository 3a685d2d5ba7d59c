use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::space::{Aggregation, AttentionType, SupernetSpace};
use crate::error::{Error, Result};

/// A shared tensor with its Adam moments. Step counts are kept per element
/// because different subnetworks touch different slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub steps: Array2<u32>,
}

impl Param {
    fn new(value: Array2<f64>) -> Self {
        let dim = value.raw_dim();
        Self {
            value,
            m: Array2::zeros(dim.clone()),
            v: Array2::zeros(dim.clone()),
            steps: Array2::zeros(dim),
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::new(Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit)))
    }

    pub fn leading(&self, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        self.value.slice(s![..rows, ..cols])
    }

    pub fn leading_mut(&mut self, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        self.value.slice_mut(s![..rows, ..cols])
    }

    /// Adam update on the leading `grad.dim()` slice only.
    pub fn adam_update(&mut self, grad: &Array2<f64>, opt: &AdamParams) {
        let (r, c) = grad.dim();
        let mut value = self.value.slice_mut(s![..r, ..c]);
        let mut m = self.m.slice_mut(s![..r, ..c]);
        let mut v = self.v.slice_mut(s![..r, ..c]);
        let mut steps = self.steps.slice_mut(s![..r, ..c]);
        ndarray::Zip::from(&mut value)
            .and(&mut m)
            .and(&mut v)
            .and(&mut steps)
            .and(grad)
            .for_each(|w, m, v, t, &g| {
                *t += 1;
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let m_hat = *m / (1.0 - opt.beta1.powi(*t as i32));
                let v_hat = *v / (1.0 - opt.beta2.powi(*t as i32));
                *w -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon);
            });
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Attention parameters of one type: column `h` of `w1`/`w2` is head `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w1: Param,
    pub w2: Param,
    /// Per-head output scale used by gene-linear attention (1 × heads).
    pub scale: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub in_max: usize,
    pub out_max: usize,
    pub heads_max: usize,
    /// `in_max × out_max` combination weights.
    pub combine: Param,
    /// GIN hidden-to-output weights (`out_max × out_max`), present when MLP aggregation is an option.
    pub gin: Option<Param>,
    /// GIN epsilon (1 × 1).
    pub gin_eps: Option<Param>,
    pub attention: BTreeMap<AttentionType, AttentionParams>,
}

/// Which tensor of which layer a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Combine,
    Gin,
    GinEps,
    AttW1(AttentionType),
    AttW2(AttentionType),
    AttScale(AttentionType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

impl ParamId {
    pub fn name(&self) -> String {
        let kind = match self.kind {
            ParamKind::Combine => "combine".to_string(),
            ParamKind::Gin => "gin".to_string(),
            ParamKind::GinEps => "gin_eps".to_string(),
            ParamKind::AttW1(t) => format!("{}.w1", t.name()),
            ParamKind::AttW2(t) => format!("{}.w2", t.name()),
            ParamKind::AttScale(t) => format!("{}.scale", t.name()),
        };
        format!("layer{}.{kind}", self.layer)
    }
}

/// Gradients for the leading slices a subnetwork touched.
pub type Grads = BTreeMap<ParamId, Array2<f64>>;

/// Weight tensors shared by every subnetwork of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedWeights {
    pub layers: Vec<LayerWeights>,
    pub input_dim: usize,
    pub fingerprint: String,
}

impl SharedWeights {
    /// Glorot-uniform initialization scaled by each tensor's full dimensions.
    pub fn init(space: &SupernetSpace, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        space.check()?;
        if input_dim == 0 {
            return Err(Error::Shape("input feature dimension is zero".into()));
        }
        let mut layers = Vec::with_capacity(space.num_layers());
        let mut in_max = input_dim;
        for opts in &space.layers {
            let out_max = opts.max_hidden();
            let heads_max = opts.max_heads();
            let combine = Param::glorot(in_max, out_max, rng);
            let has_gin = opts.aggregation_types.contains(&Aggregation::Mlp);
            let gin = has_gin.then(|| Param::glorot(out_max, out_max, rng));
            let gin_eps = has_gin.then(|| Param::new(Array2::zeros((1, 1))));
            let mut attention = BTreeMap::new();
            for &t in opts.attention_types.iter().filter(|t| t.is_learned()) {
                let w1 = Param::glorot(in_max, heads_max, rng);
                let w2 = Param::glorot(in_max, heads_max, rng);
                let scale = Param::new(Array2::ones((1, heads_max)));
                attention.insert(t, AttentionParams { w1, w2, scale });
            }
            layers.push(LayerWeights {
                in_max,
                out_max,
                heads_max,
                combine,
                gin,
                gin_eps,
                attention,
            });
            in_max = out_max;
        }
        Ok(Self {
            layers,
            input_dim,
            fingerprint: space.fingerprint(),
        })
    }

    pub fn param(&self, id: &ParamId) -> Option<&Param> {
        let l = self.layers.get(id.layer)?;
        match id.kind {
            ParamKind::Combine => Some(&l.combine),
            ParamKind::Gin => l.gin.as_ref(),
            ParamKind::GinEps => l.gin_eps.as_ref(),
            ParamKind::AttW1(t) => l.attention.get(&t).map(|a| &a.w1),
            ParamKind::AttW2(t) => l.attention.get(&t).map(|a| &a.w2),
            ParamKind::AttScale(t) => l.attention.get(&t).map(|a| &a.scale),
        }
    }

    pub fn param_mut(&mut self, id: &ParamId) -> Option<&mut Param> {
        let l = self.layers.get_mut(id.layer)?;
        match id.kind {
            ParamKind::Combine => Some(&mut l.combine),
            ParamKind::Gin => l.gin.as_mut(),
            ParamKind::GinEps => l.gin_eps.as_mut(),
            ParamKind::AttW1(t) => l.attention.get_mut(&t).map(|a| &mut a.w1),
            ParamKind::AttW2(t) => l.attention.get_mut(&t).map(|a| &mut a.w2),
            ParamKind::AttScale(t) => l.attention.get_mut(&t).map(|a| &mut a.scale),
        }
    }

    /// Every tensor with its id, in a stable order.
    pub fn named(&self) -> Vec<(ParamId, &Param)> {
        let mut out = Vec::new();
        for (layer, l) in self.layers.iter().enumerate() {
            let id = |kind| ParamId { layer, kind };
            out.push((id(ParamKind::Combine), &l.combine));
            if let Some(g) = &l.gin {
                out.push((id(ParamKind::Gin), g));
            }
            if let Some(e) = &l.gin_eps {
                out.push((id(ParamKind::GinEps), e));
            }
            for (&t, a) in &l.attention {
                out.push((id(ParamKind::AttW1(t)), &a.w1));
                out.push((id(ParamKind::AttW2(t)), &a.w2));
                out.push((id(ParamKind::AttScale(t)), &a.scale));
            }
        }
        out
    }

    pub fn apply_adam(&mut self, grads: &Grads, opt: &AdamParams) {
        for (id, g) in grads {
            let p = self.param_mut(id).expect("gradient for a known tensor");
            p.adam_update(g, opt);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: self.fingerprint.clone(),
            input_dim: self.input_dim,
            tensors: self
                .named()
                .into_iter()
                .map(|(id, p)| NamedTensor {
                    name: id.name(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().copied().collect(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint into freshly shaped tensors for `space`; optimizer
    /// state starts from zero.
    pub fn load(path: &Path, space: &SupernetSpace) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let expected = space.fingerprint();
        if ckpt.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected,
                found: ckpt.fingerprint,
            });
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut w = Self::init(space, ckpt.input_dim, &mut rng)?;
        let by_name: BTreeMap<String, ParamId> =
            w.named().into_iter().map(|(id, _)| (id.name(), id)).collect();
        if by_name.len() != ckpt.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, space needs {}",
                ckpt.tensors.len(),
                by_name.len()
            )));
        }
        for t in ckpt.tensors {
            let id = by_name
                .get(&t.name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor `{}`", t.name)))?;
            let p = w.param_mut(id).expect("named tensor exists");
            if p.value.dim() != (t.shape[0], t.shape[1]) {
                return Err(Error::Format(format!("tensor `{}` has shape {:?}", t.name, t.shape)));
            }
            p.value = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                .map_err(|e| Error::Format(format!("tensor `{}`: {e}", t.name)))?;
        }
        Ok(w)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    fingerprint: String,
    input_dim: usize,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_follow_space_maxima() {
        let space = SupernetSpace::standard(1, Some(7));
        let w = SharedWeights::init(&space, 50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(w.layers[0].combine.value.dim(), (50, 256));
        assert_eq!(w.layers[1].combine.value.dim(), (256, 7));
        assert_eq!(w.layers[0].attention.len(), 5);
        assert_eq!(w.layers[0].attention[&AttentionType::Gat].w1.value.dim(), (50, 16));
        assert_eq!(w.layers[1].gin.as_ref().unwrap().value.dim(), (7, 7));
    }

    #[test]
    fn adam_touches_only_leading_slice() {
        let mut p = Param::glorot(4, 6, &mut ChaCha8Rng::seed_from_u64(1));
        let before = p.clone();
        p.adam_update(&Array2::ones((2, 3)), &AdamParams::with_lr(0.1));
        for ((i, j), &v) in p.value.indexed_iter() {
            if i < 2 && j < 3 {
                assert!((v - (before.value[[i, j]] - 0.1)).abs() < 1e-6);
                assert_eq!(p.steps[[i, j]], 1);
            } else {
                assert_eq!(v.to_bits(), before.value[[i, j]].to_bits());
                assert_eq!(p.m[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_fingerprint_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let space = SupernetSpace::standard(1, Some(3));
        let w = SharedWeights::init(&space, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        w.save(&path).unwrap();
        let back = SharedWeights::load(&path, &space).unwrap();
        for ((a, pa), (b, pb)) in w.named().into_iter().zip(back.named()) {
            assert_eq!(a, b);
            assert_eq!(pa.value, pb.value);
        }
        let other = SupernetSpace::standard(2, Some(3));
        assert!(matches!(
            SharedWeights::load(&path, &other),
            Err(Error::Fingerprint { .. })
        ));
    }
}
