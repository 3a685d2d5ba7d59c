//! Searchable accelerator configurations: platform budgets, the per
//! sub-accelerator tiling/kernel choices, validation and workload allocation.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::{LayerWorkload, MatmulOp};
use crate::sim::buffer_requirement;

pub const TILING_MODES: u8 = 3;
pub const KERNEL_MODES: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Platform {
    pub total_pes: usize,
    pub clock_hz: f64,
    pub offchip_bytes_per_sec: f64,
    pub onchip_buffer_bytes: usize,
    pub value_bytes: usize,
    /// Bytes per COO coordinate.
    pub index_bytes: usize,
    pub num_subaccs: usize,
    /// Fixed cost of starting a phase on a sub-accelerator.
    pub startup_cycles: u64,
}

impl Default for Platform {
    fn default() -> Self {
        Self {
            total_pes: 4096,
            clock_hz: 330e6,
            offchip_bytes_per_sec: 460e9,
            onchip_buffer_bytes: 42 * 1024 * 1024,
            value_bytes: 2,
            index_bytes: 4,
            num_subaccs: 5,
            startup_cycles: 1000,
        }
    }
}

impl Platform {
    pub fn bytes_per_cycle(&self) -> f64 {
        self.offchip_bytes_per_sec / self.clock_hz
    }

    pub fn buffer_share(&self) -> usize {
        self.onchip_buffer_bytes / self.num_subaccs.max(1)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.total_pes > 0
            && self.clock_hz > 0.0
            && self.offchip_bytes_per_sec > 0.0
            && self.onchip_buffer_bytes > 0
            && self.value_bytes > 0
            && self.index_bytes > 0
            && self.num_subaccs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("platform fields must all be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationScheme {
    /// Contiguous left-operand rows, balanced by non-zeros.
    Rows,
    /// Contiguous right-operand columns, proportional to PE count.
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationPolicy {
    /// Scheme for products with a sparse left operand.
    pub sparse: AllocationScheme,
    /// Scheme for dense products.
    pub dense: AllocationScheme,
}

impl Default for AllocationPolicy {
    fn default() -> Self {
        Self {
            sparse: AllocationScheme::Rows,
            dense: AllocationScheme::Cols,
        }
    }
}

impl AllocationPolicy {
    pub fn for_op(&self, op: &MatmulOp) -> AllocationScheme {
        if op.is_sparse() {
            self.sparse
        } else {
            self.dense
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubAccelerator {
    /// 0 weight reuse, 1 feature reuse, 2 output reuse.
    pub tiling_mode: u8,
    /// 0 inner product, 1 row-wise, 2 outer product, 3 column-wise.
    pub kernel_mode: u8,
    pub tile_size_index: usize,
    pub pe_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccelConfig {
    pub buffer_repurposing: bool,
    pub wbuf_sharing: bool,
    #[serde(default)]
    pub allocation: AllocationPolicy,
    /// Number of entries in the tile-size ladder.
    pub tile_options: usize,
    pub sub_accelerators: Vec<SubAccelerator>,
}

impl AccelConfig {
    pub fn total_pes(&self) -> usize {
        self.sub_accelerators.iter().map(|s| s.pe_count).sum()
    }

    pub fn modes_must_match(&self) -> bool {
        self.buffer_repurposing || self.wbuf_sharing
    }

    /// Copies sub-accelerator 0's modes to the others when a global flag demands it.
    pub fn enforce_mode_uniformity(&mut self) {
        if !self.modes_must_match() {
            return;
        }
        if let Some(&first) = self.sub_accelerators.first() {
            for s in &mut self.sub_accelerators[1..] {
                s.tiling_mode = first.tiling_mode;
                s.kernel_mode = first.kernel_mode;
            }
        }
    }

    /// Equal split of the platform's PEs; the remainder goes to the first units.
    pub fn equal_pe_split(platform: &Platform) -> Vec<usize> {
        let s = platform.num_subaccs;
        (0..s)
            .map(|i| platform.total_pes / s + usize::from(i < platform.total_pes % s))
            .collect()
    }

    /// A uniform baseline: every unit in mode (0, 0) with the middle tile size.
    pub fn uniform(platform: &Platform, tile_options: usize) -> Self {
        let index = tile_options.saturating_sub(1) / 2;
        Self {
            buffer_repurposing: false,
            wbuf_sharing: false,
            allocation: AllocationPolicy::default(),
            tile_options,
            sub_accelerators: Self::equal_pe_split(platform)
                .into_iter()
                .map(|pe_count| SubAccelerator {
                    tiling_mode: 0,
                    kernel_mode: 0,
                    tile_size_index: index,
                    pe_count,
                })
                .collect(),
        }
    }
}

/// Uniform draw of every searchable field; PEs are split equally.
pub fn random_config(platform: &Platform, tile_options: usize, rng: &mut impl Rng) -> AccelConfig {
    let buffer_repurposing = rng.gen::<bool>();
    let wbuf_sharing = rng.gen::<bool>();
    let sub_accelerators = AccelConfig::equal_pe_split(platform)
        .into_iter()
        .map(|pe_count| SubAccelerator {
            tiling_mode: rng.gen_range(0..TILING_MODES),
            kernel_mode: rng.gen_range(0..KERNEL_MODES),
            tile_size_index: if tile_options > 1 { rng.gen_range(0..tile_options) } else { 0 },
            pe_count,
        })
        .collect();
    let mut cfg = AccelConfig {
        buffer_repurposing,
        wbuf_sharing,
        allocation: AllocationPolicy::default(),
        tile_options,
        sub_accelerators,
    };
    cfg.enforce_mode_uniformity();
    cfg
}

/// Re-draws every searchable field with probability `rate`, then re-applies
/// mode uniformity.
pub fn mutate_config(config: &AccelConfig, rate: f64, rng: &mut impl Rng) -> AccelConfig {
    let mut out = config.clone();
    if rng.gen::<f64>() < rate {
        out.buffer_repurposing = rng.gen();
    }
    if rng.gen::<f64>() < rate {
        out.wbuf_sharing = rng.gen();
    }
    let options = config.tile_options;
    for unit in &mut out.sub_accelerators {
        if rng.gen::<f64>() < rate {
            unit.tiling_mode = rng.gen_range(0..TILING_MODES);
        }
        if rng.gen::<f64>() < rate {
            unit.kernel_mode = rng.gen_range(0..KERNEL_MODES);
        }
        if rng.gen::<f64>() < rate && options > 1 {
            unit.tile_size_index = rng.gen_range(0..options);
        }
    }
    out.enforce_mode_uniformity();
    out
}

/// Number of configurations honouring mode uniformity: `(12 n)^S` with both
/// flags off plus `3 * 12 * n^S` for the other flag settings. Saturates at
/// `u128::MAX`.
pub fn space_cardinality(num_subaccs: usize, tile_options: usize) -> u128 {
    let per_unit = (TILING_MODES as u128) * (KERNEL_MODES as u128) * tile_options as u128;
    let free = pow(per_unit, num_subaccs);
    let tied = 3u128.saturating_mul(12).saturating_mul(pow(tile_options as u128, num_subaccs));
    free.saturating_add(tied)
}

fn pow(base: u128, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileSizes {
    pub t_m: usize,
    pub t_k: usize,
    pub t_n: usize,
}

impl TileSizes {
    pub fn cube(t: usize) -> Self {
        Self { t_m: t, t_k: t, t_n: t }
    }
}

/// Geometric ladder of `n` edge lengths from 10 to 100 (a single 32 when `n == 1`).
pub fn tile_ladder(n: usize) -> Vec<usize> {
    match n {
        0 => vec![],
        1 => vec![32],
        _ => (0..n)
            .map(|i| (10.0 * 10f64.powf(i as f64 / (n - 1) as f64)).round() as usize)
            .collect(),
    }
}

/// Tile triple selected by `index`, clamped to the product's dimensions.
pub fn tile_sizes_for(
    index: usize,
    op: &MatmulOp,
    platform: &Platform,
    config: &AccelConfig,
    sub: usize,
) -> Result<TileSizes> {
    let ladder = tile_ladder(config.tile_options);
    let t = *ladder.get(index).ok_or_else(|| {
        Error::Argument(format!("tile index {index} outside ladder of {}", ladder.len()))
    })?;
    let tiles = TileSizes {
        t_m: t.min(op.m).max(1),
        t_k: t.min(op.k).max(1),
        t_n: t.min(op.n).max(1),
    };
    let unit = &config.sub_accelerators[sub];
    let need = buffer_requirement(unit.kernel_mode, unit.tiling_mode, &tiles, platform, op.is_sparse());
    if need > platform.buffer_share() as u64 {
        return Err(Error::InfeasibleTile(format!(
            "sub-accelerator {sub}: {need} bytes for tile {tiles:?} exceed share {}",
            platform.buffer_share()
        )));
    }
    Ok(tiles)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    SubaccCount { expected: usize, found: usize },
    PeBudget { used: usize, available: usize },
    EmptyPeArray { sub: usize },
    ModeRange { sub: usize },
    TileIndex { sub: usize, index: usize, options: usize },
    ModeUniformity,
    Buffer { sub: usize, needed: u64, available: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SubaccCount { expected, found } => {
                write!(f, "{found} sub-accelerators configured, platform has {expected}")
            }
            Self::PeBudget { used, available } => write!(f, "PE budget exceeded: {used} > {available}"),
            Self::EmptyPeArray { sub } => write!(f, "sub-accelerator {sub} has no PEs"),
            Self::ModeRange { sub } => write!(f, "sub-accelerator {sub}: tiling or kernel mode out of range"),
            Self::TileIndex { sub, index, options } => {
                write!(f, "sub-accelerator {sub}: tile index {index} not below {options}")
            }
            Self::ModeUniformity => write!(
                f,
                "buffer re-purposing/weight-buffer sharing require identical modes on all sub-accelerators"
            ),
            Self::Buffer { sub, needed, available } => {
                write!(f, "sub-accelerator {sub}: buffer need {needed} B exceeds share {available} B")
            }
        }
    }
}

/// All budget and consistency violations; empty when the configuration is usable.
pub fn validate(config: &AccelConfig, platform: &Platform, workloads: &[LayerWorkload]) -> Vec<Violation> {
    let mut out = Vec::new();
    let units = &config.sub_accelerators;
    if units.len() != platform.num_subaccs {
        out.push(Violation::SubaccCount {
            expected: platform.num_subaccs,
            found: units.len(),
        });
    }
    let used = config.total_pes();
    if used > platform.total_pes {
        out.push(Violation::PeBudget {
            used,
            available: platform.total_pes,
        });
    }
    let mut structurally_ok = true;
    for (sub, u) in units.iter().enumerate() {
        if u.pe_count == 0 {
            out.push(Violation::EmptyPeArray { sub });
        }
        if u.tiling_mode >= TILING_MODES || u.kernel_mode >= KERNEL_MODES {
            out.push(Violation::ModeRange { sub });
            structurally_ok = false;
        }
        if u.tile_size_index >= config.tile_options {
            out.push(Violation::TileIndex {
                sub,
                index: u.tile_size_index,
                options: config.tile_options,
            });
            structurally_ok = false;
        }
    }
    if config.modes_must_match() {
        let first = units.first().map(|u| (u.tiling_mode, u.kernel_mode));
        if units.iter().any(|u| Some((u.tiling_mode, u.kernel_mode)) != first) {
            out.push(Violation::ModeUniformity);
        }
    }
    if structurally_ok {
        let share = platform.buffer_share() as u64;
        for (sub, u) in units.iter().enumerate() {
            let ladder = tile_ladder(config.tile_options);
            let t = ladder[u.tile_size_index];
            let needed = workloads
                .iter()
                .flat_map(|w| &w.ops)
                .map(|op| {
                    let tiles = TileSizes {
                        t_m: t.min(op.m).max(1),
                        t_k: t.min(op.k).max(1),
                        t_n: t.min(op.n).max(1),
                    };
                    buffer_requirement(u.kernel_mode, u.tiling_mode, &tiles, platform, op.is_sparse())
                })
                .max()
                .unwrap_or(0);
            if needed > share {
                out.push(Violation::Buffer {
                    sub,
                    needed,
                    available: share,
                });
            }
        }
    }
    out
}

/// Partition of one product across sub-accelerators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadPlan {
    pub scheme: AllocationScheme,
    /// Row ranges of the left operand (rows) or column ranges of the right operand (cols).
    pub ranges: Vec<Range<usize>>,
    /// Left-operand non-zeros each unit processes.
    pub nnz: Vec<usize>,
    /// Whether every unit needs the whole right operand.
    pub weights_replicated: bool,
}

pub fn allocate(op: &MatmulOp, config: &AccelConfig) -> WorkloadPlan {
    let pes: Vec<usize> = config.sub_accelerators.iter().map(|s| s.pe_count).collect();
    let scheme = config.allocation.for_op(op);
    let row_nnz = op.row_nnz();
    match scheme {
        AllocationScheme::Rows => {
            let ranges = cut_rows(&row_nnz, &pes);
            let nnz = ranges.iter().map(|r| row_nnz[r.clone()].iter().sum()).collect();
            WorkloadPlan {
                scheme,
                ranges,
                nnz,
                weights_replicated: true,
            }
        }
        AllocationScheme::Cols => {
            let counts = largest_remainder(op.n, &pes);
            let mut start = 0;
            let ranges = counts
                .iter()
                .map(|&c| {
                    let r = start..start + c;
                    start += c;
                    r
                })
                .collect::<Vec<_>>();
            let nnz = counts.iter().map(|&c| if c > 0 { op.left_nnz } else { 0 }).collect();
            WorkloadPlan {
                scheme,
                ranges,
                nnz,
                weights_replicated: false,
            }
        }
    }
}

/// Contiguous row cuts. Boundary `b` sits at the prefix whose non-zero total is
/// closest to the PE-proportional target for the first `b` units (earliest
/// cut on ties), which minimizes the summed boundary deviation.
pub fn cut_rows(row_nnz: &[usize], pes: &[usize]) -> Vec<Range<usize>> {
    let s = pes.len();
    if s == 0 {
        return vec![];
    }
    let total_pe: usize = pes.iter().sum();
    let mut prefix = Vec::with_capacity(row_nnz.len() + 1);
    prefix.push(0u64);
    for &r in row_nnz {
        prefix.push(prefix.last().unwrap() + r as u64);
    }
    let total = *prefix.last().unwrap() as f64;
    let mut cuts = vec![0usize];
    let mut pe_acc = 0usize;
    for &pe in &pes[..s - 1] {
        pe_acc += pe;
        let target = if total_pe == 0 { 0.0 } else { total * pe_acc as f64 / total_pe as f64 };
        // first prefix at or above the target, or its predecessor
        let hi = prefix.partition_point(|&p| (p as f64) < target);
        let dev = |c: usize| (prefix[c] as f64 - target).abs();
        let best = if hi > 0 && (hi == prefix.len() || dev(hi - 1) <= dev(hi)) {
            hi - 1
        } else {
            hi
        };
        // earliest cut with the same prefix total
        let pick = prefix.partition_point(|&p| p < prefix[best]);
        cuts.push(pick.max(*cuts.last().unwrap()));
    }
    cuts.push(row_nnz.len());
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Integer counts proportional to `weights` summing to `total`; remainders are
/// granted largest first, earlier units winning ties.
pub fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let mut counts: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((total * weights[i]) % sum), i));
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}
