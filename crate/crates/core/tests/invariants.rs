mod common;

use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;

use hspr_core::experiment::{generate_scenes, standard_benchmark, Benchmark, BenchmarkSpec};
use hspr_core::fusion::fuse_final;
use hspr_core::kb::{accumulate_scene, normalize_counts, CountMatrices, P_MAX};
use hspr_core::metrics::{episode_metrics, NeMode, SUCCESS_THRESHOLD};
use hspr_core::perception::{ConfusionMode, ConfusionModel, TypeBelief};
use hspr_core::reasoner::{bilinear, enumerate_type_paths, path_order, select_path, ReasonerConfig, TypePath};
use hspr_core::scene::{region_adjacency, segment_regions};
use hspr_core::sim::{run_episode, AgentConfig, PerceptionConfig, Policy};
use hspr_core::synth::{house_generator_kb, GeneratorConfig};
use hspr_core::topo::RoutingTable;

fn bench() -> &'static Benchmark {
    static BENCH: OnceLock<Benchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        let spec = BenchmarkSpec {
            scenes: 10,
            ..BenchmarkSpec::default()
        };
        standard_benchmark(&spec, 1).unwrap()
    })
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn proximity(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(prop::sample::select(vec![0.0, 0.2, 0.5, 0.8, 0.95]), n * n)
        .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

proptest! {
    #[test]
    fn normalization_ignores_positive_scaling(row in prop::collection::vec(0u64..1000, 2..40), k in 1u64..50) {
        let base = normalize_counts(&Array2::from_shape_vec((1, row.len()), row.clone()).unwrap());
        let scaled: Vec<u64> = row.iter().map(|x| x * k).collect();
        let scaled = normalize_counts(&Array2::from_shape_vec((1, row.len()), scaled).unwrap());
        for (a, b) in base.iter().zip(scaled.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalized_rows_span_the_range(row in prop::collection::vec(0u64..1000, 2..40)) {
        let out = normalize_counts(&Array2::from_shape_vec((1, row.len()), row.clone()).unwrap());
        prop_assert!(out.iter().all(|&x| (0.0..=P_MAX).contains(&x)));
        let constant = row.iter().all(|&x| x == row[0]);
        let max = out.iter().cloned().fold(0.0, f64::max);
        let min = out.iter().cloned().fold(1.0, f64::min);
        if constant {
            prop_assert!(out.iter().all(|&x| x == 0.0));
        } else {
            prop_assert_eq!(max, P_MAX);
            prop_assert_eq!(min, 0.0);
        }
    }

    #[test]
    fn accumulation_is_order_free_and_symmetric(seed in 0u64..1000, rotate in 0usize..5) {
        let kb = house_generator_kb();
        let scenes = generate_scenes(&kb, &GeneratorConfig::default(), 5, seed, 1).unwrap();
        let fresh = || CountMatrices::new(kb.type_vocabulary.clone(), kb.object_vocabulary.clone());
        let forward = scenes.iter().try_fold(fresh(), accumulate_scene).unwrap();
        let mut order: Vec<_> = scenes.iter().collect();
        order.rotate_left(rotate);
        order.reverse();
        let other = order.into_iter().try_fold(fresh(), accumulate_scene).unwrap();
        prop_assert_eq!(&forward, &other);
        prop_assert_eq!(&forward.c_r, &forward.c_r.t());
        prop_assert_eq!(&forward.c_o, &forward.c_o.t());
    }

    #[test]
    fn regions_partition_nodes(seed in 0u64..10_000, n in 2usize..20, regions in 1usize..6) {
        let scene = common::random_scene(seed, n, regions);
        let segmented = segment_regions(&scene);
        let mut seen = std::collections::BTreeSet::new();
        for r in &segmented {
            for id in &r.member_nodes {
                prop_assert!(seen.insert(id.clone()));
            }
        }
        prop_assert_eq!(seen.len(), scene.len());
        for (a, b) in region_adjacency(&scene, &segmented) {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn routing_is_a_metric(seed in 0u64..10_000, n in 2usize..25) {
        let scene = common::random_scene(seed, n, 1);
        let nodes: Vec<usize> = (0..n).collect();
        let table = RoutingTable::floyd_warshall(&nodes, scene.edges().iter().map(|e| (e.a, e.b, e.length)));
        for a in 0..n {
            prop_assert_eq!(table.dist(a, a), 0.0);
            for b in 0..n {
                prop_assert!((table.dist(a, b) - table.dist(b, a)).abs() < 1e-9);
                for c in 0..n {
                    prop_assert!(table.dist(a, c) <= table.dist(a, b) + table.dist(b, c) + 1e-9);
                }
                let path = table.path(a, b).unwrap();
                let distinct: std::collections::BTreeSet<_> = path.iter().collect();
                prop_assert_eq!(distinct.len(), path.len());
            }
        }
    }

    #[test]
    fn proximity_is_bilinear_and_bounded(
        p in proximity(4),
        r1 in probs(4),
        r2 in probs(4),
        y in probs(4),
        a in 0.0f64..1.0,
    ) {
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(x, z)| a * x + (1.0 - a) * z).collect();
        let lhs = bilinear(&mix, &p, &y);
        let rhs = a * bilinear(&r1, &p, &y) + (1.0 - a) * bilinear(&r2, &p, &y);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        let ymix: Vec<f64> = y.iter().zip(&r2).map(|(x, z)| a * x + (1.0 - a) * z).collect();
        let lhs = bilinear(&r1, &p, &ymix);
        let rhs = a * bilinear(&r1, &p, &y) + (1.0 - a) * bilinear(&r1, &p, &r2);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!((0.0..=P_MAX + 1e-12).contains(&bilinear(&r1, &p, &y)));
    }

    #[test]
    fn fusion_is_convex_and_shift_covariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
        beta in 0.0f64..=1.0,
        c in -10.0f64..10.0,
    ) {
        let (l_c, l_f): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let fused = fuse_final(&l_c, &l_f, beta).unwrap();
        let shifted_c: Vec<f64> = l_c.iter().map(|x| x + c).collect();
        let shifted_f: Vec<f64> = l_f.iter().map(|x| x + c).collect();
        let shifted = fuse_final(&shifted_c, &shifted_f, beta).unwrap();
        for i in 0..fused.len() {
            prop_assert!(fused[i] >= l_c[i].min(l_f[i]) - 1e-12 && fused[i] <= l_c[i].max(l_f[i]) + 1e-12);
            prop_assert!((shifted[i] - fused[i] - c).abs() < 1e-9);
        }
    }

    #[test]
    fn enumeration_ignores_type_labels(
        p in proximity(5),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        present in prop::collection::btree_set(0usize..5, 1..5),
        target in 0usize..5,
        steps in 1usize..4,
    ) {
        let config = ReasonerConfig { beam: 1000, ..ReasonerConfig::with_steps(steps) };
        let base = enumerate_type_paths(&present, target, &p, &config);
        let relabeled = Array2::from_shape_fn((5, 5), |(i, j)| {
            let (a, b) = (perm.iter().position(|&x| x == i).unwrap(), perm.iter().position(|&x| x == j).unwrap());
            p[[a, b]]
        });
        let present2 = present.iter().map(|&t| perm[t]).collect();
        let mut other = enumerate_type_paths(&present2, perm[target], &relabeled, &config);
        for path in &mut other {
            for t in &mut path.types {
                *t = perm.iter().position(|&x| x == *t).unwrap();
            }
        }
        other.sort_by(path_order);
        prop_assert_eq!(base, other);
    }

    #[test]
    fn boosting_the_selected_path_keeps_it(
        p in proximity(5),
        present in prop::collection::btree_set(0usize..5, 1..5),
        target in 0usize..5,
        beliefs in prop::collection::vec(probs(5), 1..5),
        boost in 1.0f64..3.0,
    ) {
        let config = ReasonerConfig::default();
        let mut paths = enumerate_type_paths(&present, target, &p, &config);
        let navigable: Vec<TypeBelief> = beliefs.into_iter().enumerate().map(|(node, probs)| TypeBelief { node, probs }).collect();
        let chosen = select_path(&paths, &navigable, 0.3);
        if let hspr_core::reasoner::Selection::Path { path, .. } = &chosen {
            let k = paths.iter().position(|x| x == path).unwrap();
            paths[k].confidence *= boost;
            let boosted = TypePath { confidence: paths[k].confidence, types: path.types.clone() };
            paths.sort_by(path_order);
            match select_path(&paths, &navigable, 0.3) {
                hspr_core::reasoner::Selection::Path { path, .. } => prop_assert_eq!(path, boosted),
                other => prop_assert!(false, "selection became {:?}", other),
            }
        }
    }

    #[test]
    fn confusion_beliefs_are_normalized(n in 2usize..12, eps in 0.0f64..1.0, t in 0usize..12, draw in any::<u64>()) {
        let t = t % n;
        for mode in [ConfusionMode::Distribution, ConfusionMode::Sampled] {
            let model = ConfusionModel::eps_uniform(n, eps, mode).unwrap();
            let b = model.belief(0, t, draw);
            prop_assert!((b.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(b.probs.iter().all(|&x| x >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_trajectories_are_walks_with_bounded_spl(k in 0usize..50, seed in any::<u64>(), budget in 1usize..20) {
        let bench = bench();
        let ep = &bench.episodes[k];
        let scene = bench.scenes.iter().find(|s| s.scene_id() == ep.scene_id).unwrap();
        let mut agent = AgentConfig::new(PerceptionConfig::oracle(bench.kb.n_types()), seed);
        agent.max_actions = budget;
        let t = run_episode(scene, ep, &bench.kb, &agent, Policy::Random).unwrap();
        let ids: Vec<usize> = t.node_sequence.iter().map(|id| scene.node_index(id).unwrap()).collect();
        let mut length = 0.0;
        for w in ids.windows(2) {
            length += scene.edge_length(w[0], w[1]).expect("consecutive nodes share an edge");
        }
        prop_assert!((length - t.total_length).abs() < 1e-9);
        prop_assert!(t.action_sequence.len() <= budget);
        if t.forced_stop {
            prop_assert_eq!(t.action_sequence.len(), budget);
        }
        let m = episode_metrics(&t, ep, scene, SUCCESS_THRESHOLD, NeMode::Geodesic).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.spl));
        if !m.success {
            prop_assert_eq!(m.spl, 0.0);
        }
        prop_assert!(m.rgspl <= m.spl);
        prop_assert_eq!(m, episode_metrics(&t, ep, scene, SUCCESS_THRESHOLD, NeMode::Geodesic).unwrap());
    }
}
