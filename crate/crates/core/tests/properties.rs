//! Property tests for MAC, feature propagation and mode matching.

use nalgebra::DMatrix;
use proptest::prelude::*;
use trussmodal_core::fem::ModalReference;
use trussmodal_core::graphdata::Split;
use trussmodal_core::identify::{mac, match_and_report, IdentifiedMode, IdentifyConfig, StructureIdentification};
use trussmodal_core::sensing::{adjacency_from_edges, feature_propagate};

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Connected graph: a random spanning tree plus extra chords.
fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (4usize..14).prop_flat_map(|n| {
        let tree = (1..n).map(|v| (0..v).prop_map(move |u| (u, v))).collect::<Vec<_>>();
        let chords = prop::collection::vec((0..n, 0..n), 0..n);
        (Just(n), tree, chords).prop_map(|(n, tree, chords)| {
            let mut edges = tree;
            for (a, b) in chords {
                let e = (a.min(b), a.max(b));
                if a != b && !edges.contains(&e) {
                    edges.push(e);
                }
            }
            (n, edges)
        })
    })
}

fn propagation_case() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<bool>, Vec<f64>, Vec<usize>)> {
    graph().prop_flat_map(|(n, edges)| {
        let mask = prop::collection::vec(any::<bool>(), n).prop_map(|mut m| {
            m[0] = true;
            m
        });
        let signals = prop::collection::vec(-1.0f64..1.0, n * 3);
        let perm = Just((0..n).collect::<Vec<_>>()).prop_shuffle();
        (Just(n), Just(edges), mask, signals, perm)
    })
}

fn mode(frequency_hz: f64, shape: Vec<f64>, source_index: usize) -> IdentifiedMode {
    IdentifiedMode { frequency_hz, damping_ratio: Some(0.01), mode_shape: shape, psd_peak_magnitude: 1.0, single_peak_dominance: 1.0, source_index }
}

proptest! {
    #[test]
    fn mac_is_symmetric_bounded_and_scale_invariant(a in vector(8), b in vector(8), s in prop::num::f64::NORMAL.prop_filter("moderate", |s| (1e-3..1e3).contains(&s.abs()))) {
        let m = mac(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((m - mac(&b, &a).unwrap()).abs() < 1e-15);
        let scaled: Vec<f64> = b.iter().map(|v| v * s).collect();
        prop_assert!((m - mac(&a, &scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn propagation_commutes_with_node_relabelling((n, edges, mask, data, perm) in propagation_case()) {
        let x = DMatrix::from_row_slice(n, 3, &data);
        let out = feature_propagate(&x, &mask, &adjacency_from_edges(n, &edges).unwrap(), 40).unwrap();
        // New node k is old node perm[k].
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let pmask: Vec<bool> = perm.iter().map(|&p| mask[p]).collect();
        let px = DMatrix::from_fn(n, 3, |r, c| x[(perm[r], c)]);
        let pout = feature_propagate(&px, &pmask, &adjacency_from_edges(n, &pedges).unwrap(), 40).unwrap();
        for r in 0..n {
            for c in 0..3 {
                prop_assert!((pout[(r, c)] - out[(perm[r], c)]).abs() < 1e-12);
            }
            if mask[r] {
                prop_assert_eq!(out.row(r), x.row(r));
            }
        }
    }

    #[test]
    fn matching_ignores_the_order_of_identified_modes(
        offsets in prop::collection::vec(-0.2f64..0.2, 4),
        shapes in prop::collection::vec(vector(5), 4),
        order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let freqs = [2.0, 5.0, 9.0, 14.0];
        let reference = ModalReference {
            frequencies_hz: freqs.to_vec(),
            damping_ratios: vec![0.01; 4],
            mode_shapes: DMatrix::from_fn(5, 4, |r, c| ((r + 1) * (c + 1)) as f64 % 3.0 - 1.0 + 0.1 * r as f64),
            rayleigh_alpha: 0.0,
            rayleigh_beta: 0.0,
        };
        let modes: Vec<IdentifiedMode> = (0..4).map(|k| mode(freqs[k] * (1.0 + offsets[k]), shapes[k].clone(), k)).collect();
        let shuffled: Vec<IdentifiedMode> = order.iter().map(|&k| modes[k].clone()).collect();
        let cfg = IdentifyConfig::default();
        let a = StructureIdentification { graph_id: 0, split: Split::Train, modes };
        let b = StructureIdentification { graph_id: 0, split: Split::Train, modes: shuffled };
        let ra = match_and_report(&[a], &[&reference], 4, &cfg).unwrap();
        let rb = match_and_report(&[b], &[&reference], 4, &cfg).unwrap();
        prop_assert_eq!(ra, rb);
    }
}
