//! Analytic cycle and traffic model of the multi sub-accelerator template,
//! plus an event-level oracle used to verify the per-tile cycle formulas.
//!
//! Kernel modes map a tile `left (t_m x t_k) * right (t_k x t_n)` onto `pe`
//! lanes that advance in lock-step waves:
//!
//! | mode | dataflow      | unit of work per lane        | wave cost             |
//! |------|---------------|------------------------------|-----------------------|
//! | 0    | inner product | one output element           | max row nnz in wave   |
//! | 1    | row-wise      | one left row (all outputs)   | max row nnz * t_n     |
//! | 2    | outer product | MACs of one left column      | ceil(c_k t_n / pe)    |
//! | 3    | column-wise   | one output column            | tile nnz              |

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::accel::{allocate, tile_sizes_for, validate, AccelConfig, AllocationScheme, Platform, TileSizes};
use crate::error::{Error, Result};
use crate::parser::{LayerWorkload, MatmulOp, Phase};

/// Non-zeros per row and per column of a left-operand tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileStats {
    pub row_nnz: Vec<usize>,
    pub col_nnz: Vec<usize>,
}

impl TileStats {
    pub fn dense(t_m: usize, t_k: usize) -> Self {
        Self {
            row_nnz: vec![t_k; t_m],
            col_nnz: vec![t_m; t_k],
        }
    }

    pub fn from_pattern(pattern: &[Vec<bool>]) -> Self {
        let t_k = pattern.first().map_or(0, Vec::len);
        let row_nnz = pattern.iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
        let col_nnz = (0..t_k).map(|k| pattern.iter().filter(|r| r[k]).count()).collect();
        Self { row_nnz, col_nnz }
    }

    pub fn nnz(&self) -> usize {
        self.row_nnz.iter().sum()
    }
}

/// Qualitative trade-offs of a kernel mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModeProperties {
    pub parallel_axis: &'static str,
    pub resident: &'static str,
    pub bandwidth: &'static str,
}

pub fn mode_properties(kernel_mode: u8) -> ModeProperties {
    match kernel_mode {
        0 => ModeProperties {
            parallel_axis: "output elements",
            resident: "output tile",
            bandwidth: "high operand re-reads",
        },
        1 => ModeProperties {
            parallel_axis: "left rows",
            resident: "right tile",
            bandwidth: "moderate, imbalance-sensitive",
        },
        2 => ModeProperties {
            parallel_axis: "products of one left column",
            resident: "full output accumulator bank",
            bandwidth: "low input traffic",
        },
        _ => ModeProperties {
            parallel_axis: "output columns",
            resident: "right (weight) tile",
            bandwidth: "streams left non-zeros",
        },
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Compute cycles of one tile. `stats` gives the left tile's row and column
/// non-zeros; `tiles.t_n` is the right tile width.
pub fn tile_compute_cycles(kernel_mode: u8, t_n: usize, stats: &TileStats, pe: usize) -> u64 {
    let pe = pe.max(1);
    let t_m = stats.row_nnz.len();
    match kernel_mode {
        0 => {
            let total = t_m * t_n;
            let mut cycles = 0u64;
            let mut start = 0;
            while start < total {
                let end = (start + pe).min(total);
                let (r0, r1) = (start / t_n, (end - 1) / t_n);
                cycles += stats.row_nnz[r0..=r1].iter().copied().max().unwrap_or(0) as u64;
                start = end;
            }
            cycles
        }
        1 => stats
            .row_nnz
            .chunks(pe)
            .map(|w| *w.iter().max().unwrap_or(&0) as u64 * t_n as u64)
            .sum(),
        2 => stats
            .col_nnz
            .iter()
            .map(|&c| ceil_div(c as u64 * t_n as u64, pe as u64))
            .sum(),
        _ => ceil_div(t_n as u64, pe as u64) * stats.nnz() as u64,
    }
}

/// Event-level walk of one explicit tile: lanes receive work in lock-step
/// waves and every cycle each busy lane retires one MAC.
pub fn oracle_tile_cycles(kernel_mode: u8, pattern: &[Vec<bool>], t_n: usize, pe: usize) -> u64 {
    let pe = pe.max(1);
    let t_m = pattern.len();
    let t_k = pattern.first().map_or(0, Vec::len);
    // run a wave: lanes hold MAC counts, step until all are idle
    let run_wave = |lanes: &mut Vec<u64>| -> u64 {
        let mut cycles = 0;
        while lanes.iter().any(|&x| x > 0) {
            for l in lanes.iter_mut() {
                *l = l.saturating_sub(1);
            }
            cycles += 1;
        }
        cycles
    };
    let mut cycles = 0u64;
    match kernel_mode {
        0 => {
            let mut tasks = Vec::with_capacity(t_m * t_n);
            for row in pattern {
                let macs = row.iter().filter(|&&b| b).count() as u64;
                tasks.extend(std::iter::repeat(macs).take(t_n));
            }
            for wave in tasks.chunks(pe) {
                cycles += run_wave(&mut wave.to_vec());
            }
        }
        1 => {
            let tasks: Vec<u64> = pattern
                .iter()
                .map(|row| row.iter().filter(|&&b| b).count() as u64 * t_n as u64)
                .collect();
            for wave in tasks.chunks(pe) {
                cycles += run_wave(&mut wave.to_vec());
            }
        }
        2 => {
            for k in 0..t_k {
                let mut pool: u64 = (0..t_m).filter(|&i| pattern[i][k]).count() as u64 * t_n as u64;
                while pool > 0 {
                    pool -= pool.min(pe as u64);
                    cycles += 1;
                }
            }
        }
        _ => {
            let mut col = 0;
            while col < t_n {
                let lanes = (t_n - col).min(pe);
                for row in pattern {
                    for _ in row.iter().filter(|&&b| b) {
                        // every active lane multiplies this non-zero by its column
                        let mut wave = vec![1u64; lanes];
                        cycles += run_wave(&mut wave);
                    }
                }
                col += lanes;
            }
        }
    }
    cycles
}

/// Resident bytes: double-buffered left and right tiles plus an output tile;
/// the outer-product mode adds a full accumulator bank and sparse tiles carry
/// COO coordinates.
pub fn buffer_requirement(
    kernel_mode: u8,
    _tiling_mode: u8,
    tiles: &TileSizes,
    platform: &Platform,
    sparse: bool,
) -> u64 {
    let vb = platform.value_bytes as u64;
    let per_left = vb + if sparse { 2 * platform.index_bytes as u64 } else { 0 };
    let (m, k, n) = (tiles.t_m as u64, tiles.t_k as u64, tiles.t_n as u64);
    let out = m * n * vb;
    let base = 2 * (m * k * per_left + k * n * vb) + out;
    if kernel_mode == 2 {
        base + out
    } else {
        base
    }
}

/// Balanced split of `extent` into `ceil(extent / t)` pieces.
fn balanced(extent: usize, t: usize) -> (usize, usize, usize) {
    if extent == 0 {
        return (0, 0, 0);
    }
    let count = extent.div_ceil(t.max(1));
    (count, extent / count, extent % count)
}

fn balanced_ranges(range: Range<usize>, t: usize) -> Vec<Range<usize>> {
    let (count, base, wide) = balanced(range.len(), t);
    let mut start = range.start;
    (0..count)
        .map(|q| {
            let w = base + usize::from(q < wide);
            let r = start..start + w;
            start += w;
            r
        })
        .collect()
}

/// Left rows assigned to a unit and their non-zeros, plus the right columns.
struct UnitShare {
    rows: Range<usize>,
    cols: usize,
}

fn unit_shares(op: &MatmulOp, config: &AccelConfig) -> Vec<UnitShare> {
    let plan = allocate(op, config);
    plan.ranges
        .into_iter()
        .map(|r| match plan.scheme {
            AllocationScheme::Rows => UnitShare { rows: r, cols: op.n },
            AllocationScheme::Cols => UnitShare {
                rows: 0..op.m,
                cols: r.len(),
            },
        })
        .collect()
}

/// Tile cycle histogram of a unit: `(cycles, multiplicity)` pairs, plus MACs.
fn unit_tile_histogram(
    row_nnz: &[usize],
    k: usize,
    cols: usize,
    tiles: &TileSizes,
    kernel_mode: u8,
    pe: usize,
) -> (Vec<(u64, u64)>, u64) {
    let mut hist = Vec::new();
    let mut macs = 0u64;
    if row_nnz.is_empty() || cols == 0 || k == 0 {
        return (hist, macs);
    }
    let (kt, k_base, k_wide) = balanced(k, tiles.t_k);
    let (nt, n_base, n_wide) = balanced(cols, tiles.t_n);
    let n_widths = [(n_base + 1, n_wide), (n_base, nt - n_wide)];
    for m_tile in balanced_ranges(0..row_nnz.len(), tiles.t_m) {
        let rows = &row_nnz[m_tile];
        let mut bounds: Vec<usize> = rows.iter().map(|&r| r % kt).collect();
        bounds.extend([0, kt, k_wide]);
        bounds.sort_unstable();
        bounds.dedup();
        for seg in bounds.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if a >= b || a >= kt {
                continue;
            }
            let width = k_base + usize::from(a < k_wide);
            let row_counts: Vec<usize> = rows.iter().map(|&r| r / kt + usize::from(a < r % kt)).collect();
            let z: usize = row_counts.iter().sum();
            let col_counts = (0..width).map(|j| z / width + usize::from(j < z % width)).collect();
            let stats = TileStats {
                row_nnz: row_counts,
                col_nnz: col_counts,
            };
            for &(t_n, count) in &n_widths {
                if count == 0 || t_n == 0 {
                    continue;
                }
                let mult = ((b - a) * count) as u64;
                hist.push((tile_compute_cycles(kernel_mode, t_n, &stats, pe), mult));
                macs += (z * t_n) as u64 * mult;
            }
        }
    }
    (hist, macs)
}

/// Explicit left-operand tile under the same non-zero placement the analytic
/// model assumes: each row's non-zeros spread evenly over the K tiles and laid
/// out round-robin over the tile's columns.
fn explicit_tile(rows: &[usize], kt: usize, q: usize, width: usize) -> Vec<Vec<bool>> {
    let mut cursor = 0;
    rows.iter()
        .map(|&r| {
            let count = r / kt + usize::from(q < r % kt);
            let mut row = vec![false; width];
            for _ in 0..count {
                row[cursor % width] = true;
                cursor += 1;
            }
            row
        })
        .collect()
}

/// Compute cycles (no traffic, no start-up) per sub-accelerator for one
/// execution of `op`, from the analytic tile formulas.
pub fn op_compute_cycles(op: &MatmulOp, config: &AccelConfig, platform: &Platform) -> Result<Vec<u64>> {
    let row_nnz = op.row_nnz();
    unit_shares(op, config)
        .into_iter()
        .enumerate()
        .map(|(s, share)| {
            let unit = &config.sub_accelerators[s];
            let tiles = tile_sizes_for(unit.tile_size_index, op, platform, config, s)?;
            let (hist, _) =
                unit_tile_histogram(&row_nnz[share.rows], op.k, share.cols, &tiles, unit.kernel_mode, unit.pe_count);
            Ok(hist.iter().map(|&(c, m)| c * m).sum())
        })
        .collect()
}

const ORACLE_CAP: usize = 64;

/// Event-level reference for [`op_compute_cycles`]: materializes every tile
/// of every unit and walks it lane by lane. Dimensions are capped at 64.
pub fn oracle_simulate(op: &MatmulOp, config: &AccelConfig, platform: &Platform) -> Result<Vec<u64>> {
    if op.m > ORACLE_CAP || op.k > ORACLE_CAP || op.n > ORACLE_CAP {
        return Err(Error::OracleCap(format!(
            "dims {}x{}x{} exceed {ORACLE_CAP}",
            op.m, op.k, op.n
        )));
    }
    let row_nnz = op.row_nnz();
    unit_shares(op, config)
        .into_iter()
        .enumerate()
        .map(|(s, share)| {
            let unit = &config.sub_accelerators[s];
            let tiles = tile_sizes_for(unit.tile_size_index, op, platform, config, s)?;
            let mut cycles = 0;
            if share.rows.is_empty() || share.cols == 0 {
                return Ok(0);
            }
            let k_tiles = balanced_ranges(0..op.k, tiles.t_k);
            let n_tiles = balanced_ranges(0..share.cols, tiles.t_n);
            for m_tile in balanced_ranges(share.rows.clone(), tiles.t_m) {
                for (q, k_tile) in k_tiles.iter().enumerate() {
                    let pattern = explicit_tile(&row_nnz[m_tile.clone()], k_tiles.len(), q, k_tile.len());
                    for n_tile in &n_tiles {
                        cycles += oracle_tile_cycles(unit.kernel_mode, &pattern, n_tile.len(), unit.pe_count);
                    }
                }
            }
            Ok(cycles)
        })
        .collect()
}

/// Off-chip bytes by operand class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    /// Left-operand values (adjacency or features).
    pub feature: f64,
    /// COO coordinates of sparse left operands.
    pub index: f64,
    /// Right-operand values (features or weights).
    pub weight: f64,
    pub output: f64,
}

impl Traffic {
    pub fn total(&self) -> f64 {
        self.feature + self.index + self.weight + self.output
    }

    fn scaled(&self, f: f64) -> Self {
        Self {
            feature: self.feature * f,
            index: self.index * f,
            weight: self.weight * f,
            output: self.output * f,
        }
    }

    fn add(&mut self, o: &Self) {
        self.feature += o.feature;
        self.index += o.index;
        self.weight += o.weight;
        self.output += o.output;
    }
}

/// Reload-factor traffic of one unit for one execution.
fn unit_traffic(
    op: &MatmulOp,
    share: &UnitShare,
    nnz: usize,
    tiles: &TileSizes,
    tiling_mode: u8,
    platform: &Platform,
) -> Traffic {
    let m = share.rows.len();
    let n = share.cols;
    if m == 0 || n == 0 {
        return Traffic::default();
    }
    let vb = platform.value_bytes as f64;
    let (left_vals, left_idx) = if op.is_sparse() {
        (nnz as f64 * vb, nnz as f64 * 2.0 * platform.index_bytes as f64)
    } else {
        ((m * op.k) as f64 * vb, 0.0)
    };
    let right = (op.k * n) as f64 * vb;
    let out = (m * n) as f64 * vb;
    let n_tiles = n.div_ceil(tiles.t_n) as f64;
    let m_tiles = m.div_ceil(tiles.t_m) as f64;
    let partial = 2.0 * op.k.div_ceil(tiles.t_k) as f64 - 1.0;
    let (r_f, r_w, r_o) = match tiling_mode {
        0 => (n_tiles, 1.0, partial),
        1 => (1.0, m_tiles, partial),
        _ => (n_tiles, m_tiles, 1.0),
    };
    Traffic {
        feature: left_vals * r_f,
        index: left_idx * r_f,
        weight: right * r_w,
        output: out * r_o,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub layer: usize,
    pub phase: Phase,
    pub repeat: usize,
    /// Latency of the phase including all repeats.
    pub cycles: u64,
    /// Slowest unit's tile-pipeline latency (one execution, start-up included).
    pub unit_cycles: u64,
    /// Aggregate traffic divided by bandwidth (one execution).
    pub memory_cycles: u64,
    pub edge_cycles: u64,
    pub traffic: Traffic,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub latency_seconds: f64,
    pub phases: Vec<PhaseReport>,
    pub offchip_bytes_total: f64,
    pub traffic: Traffic,
    pub average_bandwidth_bytes_per_sec: f64,
    pub peak_buffer_bytes: Vec<u64>,
    pub useful_macs: u64,
    pub pe_utilization: f64,
}

fn simulate_op(
    layer: usize,
    op: &MatmulOp,
    config: &AccelConfig,
    platform: &Platform,
    peak_buffer: &mut [u64],
) -> Result<PhaseReport> {
    let bpc = platform.bytes_per_cycle();
    let row_nnz = op.row_nnz();
    let shares = unit_shares(op, config);
    let plan_nnz: Vec<usize> = shares
        .iter()
        .map(|s| if s.cols == 0 { 0 } else { row_nnz[s.rows.clone()].iter().sum() })
        .collect();

    let mut unit_traffics = Vec::with_capacity(shares.len());
    let mut hists = Vec::with_capacity(shares.len());
    let mut macs = 0u64;
    for (s, share) in shares.iter().enumerate() {
        let unit = &config.sub_accelerators[s];
        let tiles = tile_sizes_for(unit.tile_size_index, op, platform, config, s)?;
        peak_buffer[s] = peak_buffer[s].max(buffer_requirement(
            unit.kernel_mode,
            unit.tiling_mode,
            &tiles,
            platform,
            op.is_sparse(),
        ));
        let (hist, unit_macs) =
            unit_tile_histogram(&row_nnz[share.rows.clone()], op.k, share.cols, &tiles, unit.kernel_mode, unit.pe_count);
        macs += unit_macs;
        hists.push(hist);
        unit_traffics.push(unit_traffic(op, share, plan_nnz[s], &tiles, unit.tiling_mode, platform));
    }

    // intermediates that fit on chip never leave it when buffers are re-purposed
    if config.buffer_repurposing {
        let vb = platform.value_bytes as f64;
        let cap = platform.onchip_buffer_bytes as f64;
        let keep_left = op.left_intermediate && (op.m * op.k) as f64 * vb <= cap;
        let keep_right = op.right_intermediate && (op.k * op.n) as f64 * vb <= cap;
        let keep_out = op.output_intermediate && (op.m * op.n) as f64 * vb <= cap;
        for t in &mut unit_traffics {
            if keep_left {
                t.feature = 0.0;
                t.index = 0.0;
            }
            if keep_right {
                t.weight = 0.0;
            }
            if keep_out {
                t.output = 0.0;
            }
        }
    }
    // replicated weights are fetched once and broadcast over the shared buffers
    if config.wbuf_sharing && config.allocation.for_op(op) == AllocationScheme::Rows {
        let sum: f64 = unit_traffics.iter().map(|t| t.weight).sum();
        let max = unit_traffics.iter().map(|t| t.weight).fold(0.0, f64::max);
        if sum > 0.0 {
            for t in &mut unit_traffics {
                t.weight *= max / sum;
            }
        }
    }

    let mut traffic = Traffic::default();
    let mut unit_cycles = 0u64;
    for (hist, t) in hists.iter().zip(&unit_traffics) {
        traffic.add(t);
        let tiles: u64 = hist.iter().map(|&(_, m)| m).sum();
        if tiles == 0 {
            continue;
        }
        let per_tile = t.total() / tiles as f64 / bpc;
        let pipeline: f64 = hist.iter().map(|&(c, m)| m as f64 * (c as f64).max(per_tile)).sum();
        unit_cycles = unit_cycles.max(platform.startup_cycles + pipeline.ceil() as u64);
    }
    let memory_cycles = (traffic.total() / bpc).ceil() as u64;
    let edge_cycles = op.edge_op_count.div_ceil(config.total_pes().max(1) as u64);
    let repeat = op.repeat as u64;
    Ok(PhaseReport {
        layer,
        phase: op.phase,
        repeat: op.repeat,
        cycles: (unit_cycles.max(memory_cycles) + edge_cycles) * repeat,
        unit_cycles,
        memory_cycles,
        edge_cycles,
        traffic: traffic.scaled(repeat as f64),
        macs: macs * repeat,
    })
}

/// Phases run back to back on the shared hardware; units run in parallel
/// within a phase and synchronize at its end.
pub fn simulate(workloads: &[LayerWorkload], config: &AccelConfig, platform: &Platform) -> Result<SimReport> {
    platform.check()?;
    let violations = validate(config, platform, workloads);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut peak_buffer = vec![0u64; config.sub_accelerators.len()];
    let mut phases = Vec::new();
    for w in workloads {
        for op in &w.ops {
            phases.push(simulate_op(w.layer, op, config, platform, &mut peak_buffer)?);
        }
    }
    let total_cycles: u64 = phases.iter().map(|p| p.cycles).sum();
    let mut traffic = Traffic::default();
    for p in &phases {
        traffic.add(&p.traffic);
    }
    let useful_macs: u64 = phases.iter().map(|p| p.macs).sum();
    let latency_seconds = total_cycles as f64 / platform.clock_hz;
    let offchip = traffic.total();
    let pes = config.total_pes() as f64;
    Ok(SimReport {
        total_cycles,
        latency_seconds,
        phases,
        offchip_bytes_total: offchip,
        traffic,
        average_bandwidth_bytes_per_sec: if latency_seconds > 0.0 { offchip / latency_seconds } else { 0.0 },
        peak_buffer_bytes: peak_buffer,
        useful_macs,
        pe_utilization: if total_cycles > 0 {
            useful_macs as f64 / (pes * total_cycles as f64)
        } else {
            0.0
        },
    })
}
