mod common;

use std::collections::BTreeSet;

use common::*;
use malgraph::graph::read_graphs;
use malgraph::reduce::{
    comp_prune, comp_prune_count, kcore, leaf_prune, wis, wis_order, wis_removal_count,
};
use malgraph::x86::{
    decode_hex, decode_instr, encode_instr, DIM, DISP, IMM, MODRM, OPCODE, PREFIX, PRESENCE, SIB,
};
use proptest::prelude::*;

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn degree_sum_is_twice_edge_count(g in arb_graph(30, 60)) {
        let table = g.degrees();
        prop_assert_eq!(table.total(), 2 * g.edge_count());
        let oracle = degree_oracle(&node_set(&g), &edge_list(&g));
        prop_assert_eq!(table.0, oracle);
    }

    #[test]
    fn components_partition_nodes(g in arb_graph(30, 40)) {
        let parts = g.components();
        let mut ours = parts.components.clone();
        let mut all = BTreeSet::new();
        for c in &ours {
            for id in c {
                prop_assert!(all.insert(id.clone()), "node {} in two components", id);
            }
        }
        prop_assert_eq!(all, node_set(&g));
        for w in ours.windows(2) {
            prop_assert!((w[0].len(), w[0].first()) <= (w[1].len(), w[1].first()));
        }
        let mut oracle = components_oracle(&g);
        ours.sort();
        oracle.sort();
        prop_assert_eq!(ours, oracle);
    }

    #[test]
    fn leaf_prune_matches_oracle(g in arb_graph(50, 80)) {
        let (out, report) = leaf_prune(&g);
        let keep = leaf_oracle(&g);
        prop_assert_eq!(node_set(&out), keep.clone());
        let expected: Vec<Edge> = edge_list(&g)
            .into_iter()
            .filter(|(s, d)| keep.contains(s) && keep.contains(d))
            .collect();
        prop_assert_eq!(edge_list(&out), expected);
        prop_assert_eq!(report.nodes_after, out.node_count());
    }

    #[test]
    fn kcore_matches_exhaustive_oracle(g in arb_graph(12, 30), k in 0usize..5) {
        let (out, _) = kcore(&g, k);
        prop_assert_eq!(node_set(&out), kcore_oracle(&g, k));
        for d in out.degree_vec() {
            prop_assert!(d >= k);
        }
    }

    #[test]
    fn comp_prune_removes_smallest_components(g in arb_graph(30, 25), u in 0.0f64..=1.0) {
        let before = g.components();
        let drop = comp_prune_count(u, before.len());
        prop_assert_eq!(drop, (u * before.len() as f64 + 1e-9).floor() as usize);
        let (out, _) = comp_prune(&g, u);
        let after = out.components();
        prop_assert_eq!(after.len(), before.len() - drop);
        let mut expected: Vec<_> = before.components[drop..].to_vec();
        let mut got = after.components.clone();
        expected.sort();
        got.sort();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn wis_matches_reranking_oracle(g in arb_graph(15, 30), frac in 0.0f64..=1.0) {
        let removals = wis_removal_count(frac, g.edge_count());
        let order: Vec<Edge> = wis_order(&g, removals)
            .into_iter()
            .map(|e| edge_list(&g)[e].clone())
            .collect();
        prop_assert_eq!(&order, &wis_oracle(&g, removals));
        let (out, _) = wis(&g, frac);
        prop_assert_eq!(node_set(&out), node_set(&g));
        prop_assert_eq!(out.edge_count(), g.edge_count() - removals);
        let removed: BTreeSet<Edge> = order.into_iter().collect();
        for e in edge_list(&out) {
            prop_assert!(!removed.contains(&e));
        }
    }

    #[test]
    fn reductions_never_add_nodes_or_edges(g in arb_graph(30, 50), k in 0usize..4, u in 0.0f64..=1.0) {
        for (out, _) in [leaf_prune(&g), kcore(&g, k), comp_prune(&g, u), wis(&g, u)] {
            prop_assert!(node_set(&out).is_subset(&node_set(&g)));
            let edges: BTreeSet<Edge> = edge_list(&g).into_iter().collect();
            for e in edge_list(&out) {
                prop_assert!(edges.contains(&e));
            }
        }
    }

    #[test]
    fn jsonl_roundtrip(g in arb_graph(20, 30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        malgraph::graph::write_graphs(&path, [&g]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back = read_graphs(text.as_bytes()).unwrap();
        prop_assert_eq!(back, vec![g]);
    }

    #[test]
    fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..18)) {
        if let Ok(c) = decode_instr(&bytes) {
            prop_assert!(c.is_valid());
            let v = encode_instr(&c);
            prop_assert_eq!(v.0.len(), DIM);
            prop_assert!(v.0.iter().all(|x| *x == 0.0 || *x == 1.0));
            prop_assert_eq!(sum(v.block(OPCODE)), 1.0);
            prop_assert_eq!(sum(v.block(PRESENCE)), [
                c.has_prefix(), c.modrm.is_some(), c.sib.is_some(), c.disp.is_some(), c.imm.is_some()
            ].iter().filter(|b| **b).count() as f64);
            prop_assert_eq!(sum(v.block(MODRM)), if c.modrm.is_some() { 3.0 } else { 0.0 });
            prop_assert_eq!(sum(v.block(SIB)), if c.sib.is_some() { 3.0 } else { 0.0 });
            let ones = |b: &Option<Vec<u8>>| b.iter().flatten().map(|x| x.count_ones()).sum::<u32>() as f64;
            prop_assert_eq!(sum(v.block(DISP)), ones(&c.disp));
            prop_assert_eq!(sum(v.block(IMM)), ones(&c.imm));
            let prefixes = [c.seg_override.slot().is_some(), c.op_size_override, c.addr_size_override, c.lock];
            prop_assert_eq!(sum(v.block(PREFIX)), prefixes.iter().filter(|b| **b).count() as f64);
        }
    }

    #[test]
    fn hex_and_bytes_decode_alike(bytes in prop::collection::vec(any::<u8>(), 1..16)) {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        prop_assert_eq!(decode_hex(&hex), decode_instr(&bytes));
    }
}
