//! Flat parameter storage with named tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::real::Real;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Shared,
    Head(usize),
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// U(±1/√fan_in).
    Uniform(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<R> {
    pub values: Vec<R>,
    pub tensors: Vec<TensorInfo>,
}

impl<R: Real> ParamStore<R> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[R]> {
        self.tensor(name).map(|t| &self.values[t.offset..t.offset + t.len])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [R]> {
        let t = self.tensor(name)?.clone();
        Some(&mut self.values[t.offset..t.offset + t.len])
    }

    /// Trainable element count per role class.
    pub fn count(&self, pred: impl Fn(Role) -> bool) -> usize {
        self.tensors.iter().filter(|t| pred(t.role)).map(|t| t.len).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            values: self.values.iter().map(|v| S::c(v.f64())).collect(),
            tensors: self.tensors.clone(),
        }
    }
}

/// Offsets of one pre-norm transformer block's tensors, stored contiguously.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOffsets {
    pub base: usize,
    pub k: usize,
    pub f: usize,
}

impl BlockOffsets {
    pub const TENSORS: [&'static str; 16] = [
        "ln1.weight",
        "ln1.bias",
        "attn.q.weight",
        "attn.q.bias",
        "attn.k.weight",
        "attn.k.bias",
        "attn.v.weight",
        "attn.v.bias",
        "attn.o.weight",
        "attn.o.bias",
        "ln2.weight",
        "ln2.bias",
        "ffn.fc1.weight",
        "ffn.fc1.bias",
        "ffn.fc2.weight",
        "ffn.fc2.bias",
    ];

    fn shapes(k: usize, f: usize) -> [Vec<usize>; 16] {
        [
            vec![k],
            vec![k],
            vec![k, k],
            vec![k],
            vec![k, k],
            vec![k],
            vec![k, k],
            vec![k],
            vec![k, k],
            vec![k],
            vec![k],
            vec![k],
            vec![f, k],
            vec![f],
            vec![k, f],
            vec![k],
        ]
    }

    pub fn size(k: usize, f: usize) -> usize {
        4 * k + 4 * (k * k + k) + 2 * f * k + f + k
    }

    pub fn ln1_w(&self) -> usize {
        self.base
    }
    pub fn ln1_b(&self) -> usize {
        self.base + self.k
    }
    /// Projection `i` ∈ {0: q, 1: k, 2: v, 3: o}: weight offset.
    pub fn proj_w(&self, i: usize) -> usize {
        self.base + 2 * self.k + i * (self.k * self.k + self.k)
    }
    pub fn proj_b(&self, i: usize) -> usize {
        self.proj_w(i) + self.k * self.k
    }
    pub fn ln2_w(&self) -> usize {
        self.proj_w(4)
    }
    pub fn ln2_b(&self) -> usize {
        self.ln2_w() + self.k
    }
    pub fn fc1_w(&self) -> usize {
        self.ln2_b() + self.k
    }
    pub fn fc1_b(&self) -> usize {
        self.fc1_w() + self.f * self.k
    }
    pub fn fc2_w(&self) -> usize {
        self.fc1_b() + self.f
    }
    pub fn fc2_b(&self) -> usize {
        self.fc2_w() + self.k * self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockSet {
    pub time: Option<BlockOffsets>,
    pub space: Option<BlockOffsets>,
    pub joint: Option<BlockOffsets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOffsets {
    pub base: usize,
    pub d: usize,
    pub h: usize,
}

impl HeadOffsets {
    pub fn size(d: usize, h: usize) -> usize {
        d * h + h + h + 1
    }
    pub fn fc1_w(&self) -> usize {
        self.base
    }
    pub fn fc1_b(&self) -> usize {
        self.base + self.h * self.d
    }
    pub fn fc2_w(&self) -> usize {
        self.fc1_b() + self.h
    }
    pub fn fc2_b(&self) -> usize {
        self.fc2_w() + self.h
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.base..self.base + Self::size(self.d, self.h)
    }
}

/// Offsets of every tensor group, derived from the config and head count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv_w: usize,
    pub conv_b: usize,
    pub bn_w: usize,
    pub bn_b: usize,
    pub bn_mean: usize,
    pub bn_var: usize,
    pub blocks: Vec<BlockSet>,
    pub pe_w: Option<usize>,
    pub pe_b: Option<usize>,
    pub trunk_w: usize,
    pub trunk_b: usize,
    pub heads: Vec<HeadOffsets>,
    /// End of shared/buffer tensors; heads start here.
    pub shared_end: usize,
}

struct Builder {
    tensors: Vec<(TensorInfo, Init)>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, role: Role, init: Init) -> usize {
        let len = shape.iter().product();
        let offset = self.offset;
        self.tensors.push((
            TensorInfo {
                name,
                shape,
                offset,
                len,
                role,
            },
            init,
        ));
        self.offset += len;
        offset
    }

    fn block(&mut self, prefix: &str, k: usize, f: usize) -> BlockOffsets {
        let base = self.offset;
        for (name, shape) in BlockOffsets::TENSORS.iter().zip(BlockOffsets::shapes(k, f)) {
            let init = if name.ends_with(".bias") {
                Init::Zeros
            } else if name.starts_with("ln") {
                Init::Ones
            } else {
                Init::Uniform(shape[1])
            };
            self.push(format!("{prefix}.{name}"), shape, Role::Shared, init);
        }
        BlockOffsets { base, k, f }
    }

    fn head(&mut self, i: usize, d: usize, h: usize, prefix: &str) -> HeadOffsets {
        let base = self.offset;
        self.push(
            format!("{prefix}.fc1.weight"),
            vec![h, d],
            Role::Head(i),
            Init::Uniform(d),
        );
        self.push(format!("{prefix}.fc1.bias"), vec![h], Role::Head(i), Init::Zeros);
        self.push(
            format!("{prefix}.fc2.weight"),
            vec![1, h],
            Role::Head(i),
            Init::Uniform(h),
        );
        self.push(format!("{prefix}.fc2.bias"), vec![1], Role::Head(i), Init::Zeros);
        HeadOffsets { base, d, h }
    }
}

pub fn head_prefix(i: usize) -> String {
    format!("heads.{i}")
}

fn build(config: &ModelConfig, n_heads: usize) -> (Vec<(TensorInfo, Init)>, Layout) {
    let (k, f, d, h) = (config.k, config.ffn_hidden(), config.d, config.head_hidden);
    let mut b = Builder {
        tensors: Vec::new(),
        offset: 0,
    };
    let conv_w = b.push(
        "tokenizer.conv.weight".into(),
        vec![k, config.conv_kernel],
        Role::Shared,
        Init::Uniform(config.conv_kernel),
    );
    let conv_b = b.push("tokenizer.conv.bias".into(), vec![k], Role::Shared, Init::Zeros);
    let bn_w = b.push("tokenizer.bn.weight".into(), vec![k], Role::Shared, Init::Ones);
    let bn_b = b.push("tokenizer.bn.bias".into(), vec![k], Role::Shared, Init::Zeros);
    let bn_mean = b.push("tokenizer.bn.running_mean".into(), vec![k], Role::Buffer, Init::Zeros);
    let bn_var = b.push("tokenizer.bn.running_var".into(), vec![k], Role::Buffer, Init::Ones);

    let blocks = (0..config.n_blocks)
        .map(|i| {
            if config.variant_2d {
                BlockSet {
                    joint: Some(b.block(&format!("blocks.{i}.joint"), k, f)),
                    ..BlockSet::default()
                }
            } else {
                BlockSet {
                    time: config.uses_time().then(|| b.block(&format!("blocks.{i}.time"), k, f)),
                    space: config.uses_space().then(|| b.block(&format!("blocks.{i}.space"), k, f)),
                    joint: None,
                }
            }
        })
        .collect();

    let p = config.pe_features();
    let (pe_w, pe_b) = if p > 0 {
        (
            Some(b.push("pe.proj.weight".into(), vec![k, p], Role::Shared, Init::Uniform(p))),
            Some(b.push("pe.proj.bias".into(), vec![k], Role::Shared, Init::Zeros)),
        )
    } else {
        (None, None)
    };
    let trunk_w = b.push(
        "trunk.weight".into(),
        vec![d, config.trunk_in()],
        Role::Shared,
        Init::Uniform(config.trunk_in()),
    );
    let trunk_b = b.push("trunk.bias".into(), vec![d], Role::Shared, Init::Zeros);
    let shared_end = b.offset;
    let heads = (0..n_heads).map(|i| b.head(i, d, h, &head_prefix(i))).collect();
    (
        b.tensors,
        Layout {
            conv_w,
            conv_b,
            bn_w,
            bn_b,
            bn_mean,
            bn_var,
            blocks,
            pe_w,
            pe_b,
            trunk_w,
            trunk_b,
            heads,
            shared_end,
        },
    )
}

/// Tensor metadata and layout without allocating values.
pub fn describe(config: &ModelConfig, n_heads: usize) -> (Vec<TensorInfo>, Layout) {
    let (t, layout) = build(config, n_heads);
    (t.into_iter().map(|(t, _)| t).collect(), layout)
}

fn fill<R: Real>(values: &mut [R], init: Init, r: &mut impl Rng) {
    match init {
        Init::Zeros => values.fill(R::zero()),
        Init::Ones => values.fill(R::one()),
        Init::Uniform(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in values {
                *v = R::c(r.random_range(-bound..bound));
            }
        }
    }
}

/// Freshly initialized parameters: shared tensors from one seed stream, each
/// head from its own.
pub fn init_params<R: Real>(config: &ModelConfig, n_heads: usize, seed: u64) -> (ParamStore<R>, Layout) {
    let (tensors, layout) = build(config, n_heads);
    let mut values = vec![R::zero(); tensors.last().map_or(0, |(t, _)| t.offset + t.len)];
    let mut shared_rng = rng::stream(seed, "init", 0);
    for (t, init) in &tensors {
        let dst = &mut values[t.offset..t.offset + t.len];
        match t.role {
            Role::Head(i) => fill(
                dst,
                *init,
                &mut rng::stream(seed, &format!("init-head-{}", t.name), i as u64),
            ),
            _ => fill(dst, *init, &mut shared_rng),
        }
    }
    (
        ParamStore {
            values,
            tensors: tensors.into_iter().map(|(t, _)| t).collect(),
        },
        layout,
    )
}

/// Append one freshly initialized head, returning its index.
pub fn append_head<R: Real>(store: &mut ParamStore<R>, config: &ModelConfig, seed: u64) -> (usize, Layout) {
    let n_heads = store.tensors.iter().filter(|t| matches!(t.role, Role::Head(_))).count() / 4;
    let (tensors, layout) = build(config, n_heads + 1);
    let new: Vec<_> = tensors
        .into_iter()
        .filter(|(t, _)| t.role == Role::Head(n_heads))
        .collect();
    for (t, init) in new {
        store.values.resize(t.offset + t.len, R::zero());
        let dst = &mut store.values[t.offset..t.offset + t.len];
        fill(
            dst,
            init,
            &mut rng::stream(seed, &format!("init-head-{}", t.name), n_heads as u64),
        );
        store.tensors.push(t);
    }
    (n_heads, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = ModelConfig::default();
        let (store, layout) = init_params::<f32>(&c, 21, 0);
        let per_head = store.count(|r| r == Role::Head(0));
        assert_eq!(per_head, 2081);
        assert_eq!(store.count(|r| matches!(r, Role::Head(_))), 43_701);
        let shared = store.count(|r| r == Role::Shared);
        assert_eq!(shared, 753_324);
        assert_eq!(store.count(|_| true), store.len());
        assert_eq!(layout.blocks.len(), 1);
        let trunk = store.tensor("trunk.weight").unwrap();
        assert_eq!(trunk.shape, vec![128, 5880]);
        assert_eq!(BlockOffsets::size(2, 8), 74);
    }

    #[test]
    fn block_offsets_match_names() {
        let c = ModelConfig::default();
        let (store, layout) = init_params::<f64>(&c, 1, 0);
        let b = layout.blocks[0].space.unwrap();
        let off = |n: &str| store.tensor(&format!("blocks.0.space.{n}")).unwrap().offset;
        assert_eq!(b.ln1_w(), off("ln1.weight"));
        assert_eq!(b.proj_w(2), off("attn.v.weight"));
        assert_eq!(b.proj_b(3), off("attn.o.bias"));
        assert_eq!(b.ln2_b(), off("ln2.bias"));
        assert_eq!(b.fc2_b(), off("ffn.fc2.bias"));
        let h = layout.heads[0];
        assert_eq!(h.fc2_b(), store.tensor("heads.0.fc2.bias").unwrap().offset);
    }

    #[test]
    fn appended_head_matches_fresh_layout() {
        let c = ModelConfig::default();
        let (mut store, _) = init_params::<f32>(&c, 2, 3);
        let before = store.values.clone();
        let (idx, layout) = append_head(&mut store, &c, 3);
        assert_eq!(idx, 2);
        assert_eq!(&store.values[..before.len()], &before[..]);
        let (fresh, fresh_layout) = init_params::<f32>(&c, 3, 3);
        assert_eq!(layout, fresh_layout);
        assert_eq!(store, fresh);
    }
}
