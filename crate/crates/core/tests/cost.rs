use proptest::prelude::*;

use spikeplace::cost::{account_traffic, bench, estimate_latency, BenchConfig, EnergyModel, TrafficTable};
use spikeplace::network::{build_relnet, RelNetConfig};
use spikeplace::placement::{insert_relays, place, relnet_grouping, AxonTables, BoardModel, CoreBudget, Placement, Strategy};
use spikeplace::sim::{answer_relnet, Mode};
use spikeplace::train::pair_matching_stories;
use spikeplace::{NetworkGraph, Raster};

fn m6() -> (NetworkGraph, Placement, Placement, Raster) {
    let g = build_relnet(&RelNetConfig::new(6, 60), 2).unwrap();
    let (budget, board) = (CoreBudget::relnet(), BoardModel::default());
    let g = insert_relays(&g, &relnet_grouping(&g, &budget, &board).unwrap()).unwrap();
    let opt = place(&g, Strategy::Optimized, &budget, &board).unwrap();
    let naive = place(&g, Strategy::Naive, &budget, &board).unwrap();
    let story = &pair_matching_stories(6, 20, 40, 1, 9).unwrap()[0];
    let a = answer_relnet(&g, story, Mode::Real, 0).unwrap();
    let mut r = a.embedding;
    r.append(&a.feedforward);
    (g, opt, naive, r)
}

/// Re-walks the raster against the slices directly.
fn brute_force(g: &NetworkGraph, p: &Placement, r: &Raster) -> [u64; 3] {
    let t = AxonTables::build(g, p);
    let mut out = [0u64; 3];
    for e in &r.events {
        let home = p.slices.iter().find(|s| s.pop == e.pop && s.start <= e.neuron && e.neuron < s.end).unwrap();
        let home_core = p.global_core(home);
        for &dst in &t.dest[e.pop][e.neuron as usize] {
            let other = p.slices.iter().find(|s| p.global_core(s) == dst).unwrap();
            if dst == home_core {
                out[0] += 1;
            } else if other.chip == home.chip {
                out[1] += 1;
            } else {
                out[2] += 1;
            }
        }
    }
    out
}

#[test]
fn m6_traffic_matches_recount() {
    let (g, opt, naive, r) = m6();
    assert!(!r.is_empty());
    for p in [&opt, &naive] {
        let t = account_traffic(p, &r, &g).unwrap();
        assert_eq!([t.intra_core, t.intra_chip, t.inter_chip], brute_force(&g, p, &r));
        assert_eq!(t.per_step_inter.iter().sum::<u64>(), t.inter_chip);
        assert_eq!(t.spikes, r.len() as u64);
    }
}

#[test]
fn optimized_is_not_slower_at_m10() {
    let cfg = BenchConfig { ms: vec![10], samples: 1, ..BenchConfig::default() };
    let rows = bench(&cfg, |_| {}).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert!(r.optimized.inter_chip <= r.naive.inter_chip);
    assert!(r.optimized.latency_s <= r.naive.latency_s);
    assert_eq!((r.optimized.violations, r.naive.violations), (0, 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn deliveries_conserve_output_axons(keep in prop::collection::vec(any::<bool>(), 64)) {
        let (g, opt, _, r) = m6();
        let events: Vec<_> = r.events.iter().enumerate().filter(|(i, _)| keep[i % 64]).map(|(_, e)| *e).collect();
        let sub = Raster::new(r.steps, events, r.active.clone());
        let table = TrafficTable::new(&g, &opt).unwrap();
        let t = table.account(&sub).unwrap();
        let axons: u64 = sub.events.iter().map(|e| table.classes(e.pop, e.neuron).iter().map(|&c| c as u64).sum::<u64>()).sum();
        prop_assert_eq!(t.deliveries(), axons);
    }

    #[test]
    fn latency_is_linear_in_its_coefficients(scale in 0.0f64..10.0) {
        let (g, opt, _, r) = m6();
        let t = account_traffic(&opt, &r, &g).unwrap();
        let m = EnergyModel::default();
        let s = EnergyModel { step_time_base: m.step_time_base * scale, congestion_coeff: m.congestion_coeff * scale, ..m };
        let a = estimate_latency(&t, &m, r.steps);
        prop_assert!((estimate_latency(&t, &s, r.steps) - scale * a).abs() <= 1e-12 * a.max(1e-12));
    }
}
