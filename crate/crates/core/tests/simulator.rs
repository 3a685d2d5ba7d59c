use gcos_core::accel::{random_config, AccelConfig, Platform};
use gcos_core::graph::synthetic::power_law_profile;
use gcos_core::parser::{parse_subnet, LayerWorkload};
use gcos_core::sim::{oracle_tile_cycles, simulate, tile_compute_cycles, TileStats};
use gcos_core::supernet::SupernetSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_workload(rng: &mut ChaCha8Rng) -> Vec<LayerWorkload> {
    let n = rng.gen_range(50..400);
    let profile = power_law_profile(n, rng.gen_range(2.0..8.0), rng.gen());
    let space = SupernetSpace::standard(2, Some(5));
    let subnet = space.sample_uniform(rng);
    parse_subnet(&subnet, n, rng.gen_range(16..300), 5, &profile).unwrap()
}

#[test]
fn tile_formulas_match_oracle_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let mode = (case % 4) as u8;
        let (t_m, t_k, t_n) = (rng.gen_range(1..=32), rng.gen_range(1..=32), rng.gen_range(1..=32));
        let pe = rng.gen_range(1..=8);
        let density: f64 = rng.gen();
        let pattern: Vec<Vec<bool>> = (0..t_m).map(|_| (0..t_k).map(|_| rng.gen::<f64>() < density).collect()).collect();
        let stats = TileStats::from_pattern(&pattern);
        assert_eq!(
            tile_compute_cycles(mode, t_n, &stats, pe),
            oracle_tile_cycles(mode, &pattern, t_n, pe),
            "case {case}"
        );
    }
}

#[test]
fn more_pes_or_bandwidth_never_slow_down() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let platform = Platform::default();
    for _ in 0..100 {
        let w = random_workload(&mut rng);
        let cfg = random_config(&platform, 10, &mut rng);
        let base = simulate(&w, &cfg, &platform).unwrap().latency_seconds;

        let wide = Platform {
            total_pes: 2 * platform.total_pes,
            ..platform.clone()
        };
        let mut doubled = cfg.clone();
        for u in &mut doubled.sub_accelerators {
            u.pe_count *= 2;
        }
        assert!(simulate(&w, &doubled, &wide).unwrap().latency_seconds <= base);

        let fast = Platform {
            offchip_bytes_per_sec: 2.0 * platform.offchip_bytes_per_sec,
            ..platform.clone()
        };
        assert!(simulate(&w, &cfg, &fast).unwrap().latency_seconds <= base);
    }
}

#[test]
fn report_is_consistent_and_flags_only_help() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let platform = Platform::default();
    for _ in 0..50 {
        let w = random_workload(&mut rng);
        let mut cfg = random_config(&platform, 10, &mut rng);
        cfg.buffer_repurposing = false;
        cfg.wbuf_sharing = false;
        let r = simulate(&w, &cfg, &platform).unwrap();
        assert_eq!(r.total_cycles, r.phases.iter().map(|p| p.cycles).sum::<u64>());
        assert!((r.traffic.total() - r.offchip_bytes_total).abs() <= 1e-6 * r.offchip_bytes_total.max(1.0));
        assert_eq!(r.latency_seconds, r.total_cycles as f64 / platform.clock_hz);
        assert!(r.pe_utilization > 0.0 && r.pe_utilization <= 1.0);
        assert_eq!(r.useful_macs, gcos_core::parser::total_macs(&w));

        let mut flagged = cfg.clone();
        flagged.buffer_repurposing = true;
        flagged.enforce_mode_uniformity();
        let mut same_modes = cfg.clone();
        same_modes.buffer_repurposing = false;
        same_modes.sub_accelerators = flagged.sub_accelerators.clone();
        let plain = simulate(&w, &same_modes, &platform).unwrap();
        let repurposed = simulate(&w, &flagged, &platform).unwrap();
        assert!(repurposed.offchip_bytes_total <= plain.offchip_bytes_total);

        let mut shared = same_modes.clone();
        shared.wbuf_sharing = true;
        let shared = simulate(&w, &shared, &platform).unwrap();
        assert!(shared.traffic.weight <= plain.traffic.weight + 1e-6);
    }
}

#[test]
fn default_gcn_latency_is_cycles_over_clock() {
    let platform = Platform::default();
    let profile = power_law_profile(2708, 3.9, 0);
    let subnet = gcos_core::supernet::SubnetSpec::gcn(16, 7);
    let w = parse_subnet(&subnet, 2708, 1433, 7, &profile).unwrap();
    let cfg = AccelConfig::uniform(&platform, 10);
    let a = simulate(&w, &cfg, &platform).unwrap();
    let b = simulate(&w, &cfg, &platform).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.latency_seconds, a.total_cycles as f64 / 330e6);
}
