use proptest::prelude::*;

use promptq::config::RunConfig;
use promptq::features::segment_mean;
use promptq::fourier::FourierPE;
use promptq::fps::fps;
use promptq::knn::{knn_graph, Edge};
use promptq::model::Model;
use promptq::params::Graph;
use promptq::render::{render, render_views};
use promptq::scene::{generate_scene, Camera, Vec3};
use promptq::segment::{fh_segments, members, segment_count};
use promptq::voxel::{parent, voxel_of, voxelize, LEVELS};

fn on_x(xs: &[f64]) -> Vec<Vec3> {
    xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
}

/// Same-partition check independent of label order.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn knn_collinear_example() {
    let edges = knn_graph(&on_x(&[0.0, 1.0, 3.0]), None, 0.0, 1).unwrap();
    assert_eq!(edges, vec![Edge { i: 0, j: 1, weight: 1.0 }, Edge { i: 1, j: 2, weight: 2.0 }]);
}

#[test]
fn knn_full_k_gives_complete_graph() {
    let pts = on_x(&[0.0, 0.5, 2.0, 7.0, 9.0]);
    let edges = knn_graph(&pts, None, 0.0, 4).unwrap();
    assert_eq!(edges.len(), 10);
}

#[test]
fn knn_duplicates_and_errors() {
    let edges = knn_graph(&on_x(&[1.0, 1.0]), None, 0.0, 1).unwrap();
    assert_eq!(edges[0].weight, 0.0);
    assert!(knn_graph(&on_x(&[1.0]), None, 0.0, 1).is_err());
    assert!(knn_graph(&on_x(&[0.0, 1.0]), None, 0.0, 2).is_err());
}

#[test]
fn fh_examples() {
    let pts = on_x(&[0.0, 0.1, 0.2, 10.0, 10.1, 10.2]);
    let edges = knn_graph(&pts, None, 0.0, 2).unwrap();
    let ids = fh_segments(6, &edges, 0.5, 1);
    assert_eq!(ids, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(segment_count(&fh_segments(6, &knn_graph(&pts, None, 0.0, 3).unwrap(), f64::INFINITY, 1)), 1);
    assert_eq!(segment_count(&fh_segments(6, &edges, 0.0, 6)), 1);
}

#[test]
fn fh_folds_unreachable_small_components() {
    let edges = [Edge { i: 0, j: 1, weight: 0.1 }];
    assert_eq!(fh_segments(3, &edges, 1.0, 2), vec![0, 0, 0]);
}

#[test]
fn fps_examples() {
    let pts = on_x(&[0.0, 1.0, 4.0, 9.0]);
    assert_eq!(fps(&pts, 3, 0).unwrap(), vec![0, 3, 2]);
    assert_eq!(fps(&pts, 1, 2).unwrap(), vec![2]);
    let mut all = fps(&pts, 4, 0).unwrap();
    all.sort_unstable();
    assert_eq!(all, vec![0, 1, 2, 3]);
    assert!(fps(&pts, 5, 0).is_err());
}

#[test]
fn voxel_examples() {
    assert_eq!(voxel_of(&[0.01, 0.01, 0.01], 0.02), [0, 0, 0]);
    assert_eq!(voxel_of(&[0.03, 0.03, 0.03], 0.02), [1, 1, 1]);
    assert_eq!(voxel_of(&[-0.01, 0.0, 0.0], 0.02)[0], -1);
    assert_eq!(parent([3, 3, 3], 2), [1, 1, 1]);
    assert_eq!(parent([-1, 0, 1], 2), [-1, 0, 0]);
}

#[test]
fn voxel_levels_nest() {
    let cfg = RunConfig::default();
    let scene = generate_scene(3, &cfg.scene).unwrap();
    let grid = voxelize(&scene.points, 0.05);
    assert_eq!(grid.levels.len(), LEVELS);
    let base = &grid.levels[0];
    for l in 1..LEVELS {
        let lv = &grid.levels[l];
        for p in 0..scene.len() {
            let b = base.coords[base.point_voxel[p]];
            assert_eq!(lv.coords[lv.point_voxel[p]], parent(b, lv.stride));
        }
    }
}

#[test]
fn fourier_examples() {
    let pe = FourierPE::new(6, 0.5, 11);
    let z = pe.encode(&[[0.0, 0.0, 0.0]]);
    assert_eq!(&z.data()[..6], &[1.0; 6]);
    assert_eq!(&z.data()[6..], &[0.0; 6]);
    let p = [0.3, -1.7, 2.2];
    let e = pe.encode(&[p]);
    let w = pe.matrix();
    for k in 0..6 {
        let t = 2.0 * std::f64::consts::PI * (0..3).map(|a| p[a] * w.at(k, a)).sum::<f64>();
        assert!((e.at(0, k) - t.cos()).abs() < 1e-12);
        assert!((e.at(0, 6 + k) - t.sin()).abs() < 1e-12);
        assert!((e.at(0, k).powi(2) + e.at(0, 6 + k).powi(2) - 1.0).abs() < 1e-12);
    }
}

fn camera() -> Camera {
    Camera {
        position: [0.0, -3.0, 0.0],
        look_at: [0.0, 0.0, 0.0],
        fov: 60.0,
        width: 9,
        height: 9,
    }
}

#[test]
fn render_examples() {
    let cam = camera();
    let v = render(&cam, &[[0.0, 0.0, 0.0]], 0);
    assert_eq!(v.hits(), 1);
    assert!(render(&cam, &[[0.0, -5.0, 0.0]], 0).hits() == 0);
    let v = render(&cam, &[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], 0);
    assert_eq!(v.hits(), 1);
    assert_eq!(v.hit.iter().flatten().next(), Some(&1));
}

/// Naive per-point reference for the cached pooled inputs of a real scene.
#[test]
fn cached_pooling_matches_naive_loops() {
    let cfg = RunConfig::default();
    let model = Model::new(&cfg.model, 5).unwrap();
    let scene = generate_scene(17, &cfg.scene).unwrap();
    let cache = model.cache(&scene).unwrap();
    let mem = members(&cache.segment_ids);
    assert_eq!(mem, cache.members);

    for (s, m) in mem.iter().enumerate() {
        for a in 0..3 {
            let mut acc = 0.0;
            for &p in m {
                acc += scene.points[p][a];
            }
            assert_eq!(cache.centroids.at(s, a), acc / m.len() as f64);
        }
    }

    let grid = voxelize(&scene.points, cfg.model.voxel_size);
    let pe = model.pe();
    for l in 0..LEVELS {
        let desc = grid.descriptors(l, &scene.colors, &pe);
        let lv = &grid.levels[l];
        for (s, m) in mem.iter().enumerate() {
            for c in 0..desc.cols() {
                let mut acc = 0.0;
                for &p in m {
                    acc += desc.at(lv.point_voxel[p], c);
                }
                assert_eq!(cache.voxel_pooled[l].at(s, c), acc / m.len() as f64);
            }
        }
    }

    // pixel -> point -> segment, recomputed from the raw views
    let table = model.embed_table();
    let classes = scene.point_classes();
    let feature = |p: usize, c: usize| {
        let d = table.cols();
        if c < d {
            table.at(promptq::features::class_row(classes[p]), c)
        } else {
            scene.colors[p][c - d]
        }
    };
    let views = render_views(&scene.cameras, &scene.points, cfg.model.splat_radius);
    let width = table.cols() + 3;
    let mut per_point = vec![vec![0.0; width]; scene.len()];
    let mut seen = vec![0usize; scene.len()];
    for v in &views {
        for h in v.hit.iter().flatten() {
            seen[*h] += 1;
            for c in 0..width {
                per_point[*h][c] += feature(*h, c);
            }
        }
    }
    for p in 0..scene.len() {
        if seen[p] > 0 {
            for x in &mut per_point[p] {
                *x /= seen[p] as f64;
            }
        }
    }
    for (s, m) in mem.iter().enumerate() {
        for c in 0..width {
            let mut acc = 0.0;
            for &p in m {
                acc += per_point[p][c];
            }
            assert_eq!(cache.image_pooled.at(s, c), acc / m.len() as f64);
        }
    }
}

#[test]
fn voxel_stream_equals_pooling_after_the_linear_maps() {
    let cfg = RunConfig::tiny();
    let model = Model::new(&cfg.model, 2).unwrap();
    let scene = generate_scene(4, &cfg.scene).unwrap();
    let cache = model.cache(&scene).unwrap();
    let mut g = Graph::new(&model.store);
    let v = model.scene.voxel(&mut g, &cache).unwrap();
    let v = g.value(v).clone();

    let grid = voxelize(&scene.points, cfg.model.voxel_size);
    let pe = model.pe();
    let d = cfg.model.hidden_dim;
    let store = &model.store;
    let mut per_point = vec![vec![0.0; d]; scene.len()];
    for p in 0..scene.len() {
        let mut cat = Vec::new();
        for (l, lin) in model.scene.voxel_levels.iter().enumerate() {
            let desc = grid.descriptors(l, &scene.colors, &pe);
            let x = desc.row(grid.levels[l].point_voxel[p]);
            let (w, b) = (store.get(lin.w), store.get(lin.b));
            for o in 0..w.cols() {
                cat.push(b.data()[o] + (0..x.len()).map(|i| x[i] * w.at(i, o)).sum::<f64>());
            }
        }
        let (w, b) = (store.get(model.scene.voxel_proj.w), store.get(model.scene.voxel_proj.b));
        for o in 0..d {
            per_point[p][o] = b.data()[o] + (0..d).map(|i| cat[i] * w.at(i, o)).sum::<f64>();
        }
    }
    for (s, m) in cache.members.iter().enumerate() {
        for o in 0..d {
            let mean = m.iter().map(|&p| per_point[p][o]).sum::<f64>() / m.len() as f64;
            assert!((v.at(s, o) - mean).abs() < 1e-9, "{} vs {mean}", v.at(s, o));
        }
    }
}

#[test]
fn point_samples_are_scale_invariant() {
    let cfg = RunConfig::tiny();
    let model = Model::new(&cfg.model, 2).unwrap();
    let mut scene = generate_scene(4, &cfg.scene).unwrap();
    let cache = model.cache(&scene).unwrap();
    for p in &mut scene.points {
        *p = p.map(|x| 2.0 * x);
    }
    let scaled = promptq::features::SceneCache::with_segments(
        &scene,
        cache.segment_ids.clone(),
        &cfg.model,
        model.embed_table(),
        &model.pe(),
        model.seed,
    )
    .unwrap();
    assert!(scaled.point_samples.max_abs_diff(&cache.point_samples) < 1e-12);
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 1..=max)
}

/// O(n²) greedy farthest-point reference written from the definition.
fn greedy_reference(points: &[Vec3], n: usize, start: usize) -> Vec<usize> {
    let d = |a: &Vec3, b: &Vec3| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let mut out = vec![start];
    while out.len() < n {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..points.len() {
            if out.contains(&i) {
                continue;
            }
            let to_set = out.iter().map(|&j| d(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
            if to_set > best.0 {
                best = (to_set, i);
            }
        }
        out.push(best.1);
    }
    out
}

/// Reference FH with plain label vectors (no union-find).
fn fh_reference(n: usize, edges: &[Edge], tau: f64, min_size: usize) -> Vec<usize> {
    let mut label: Vec<usize> = (0..n).collect();
    let mut internal = vec![0.0f64; n];
    let mut sorted = edges.to_vec();
    sorted.sort_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap().then((a.i, a.j).cmp(&(b.i, b.j))));
    let size = |label: &[usize], c: usize| label.iter().filter(|&&x| x == c).count();
    let relabel = |label: &mut Vec<usize>, from: usize, to: usize| {
        for x in label.iter_mut() {
            if *x == from {
                *x = to;
            }
        }
    };
    for e in &sorted {
        let (a, b) = (label[e.i], label[e.j]);
        if a == b {
            continue;
        }
        let ta = internal[a] + tau / size(&label, a) as f64;
        let tb = internal[b] + tau / size(&label, b) as f64;
        if e.weight <= ta.min(tb) {
            internal[a] = internal[a].max(internal[b]).max(e.weight);
            relabel(&mut label, b, a);
        }
    }
    for e in &sorted {
        let (a, b) = (label[e.i], label[e.j]);
        if a != b && (size(&label, a) < min_size || size(&label, b) < min_size) {
            relabel(&mut label, b, a);
        }
    }
    label
}

/// Connected random graph: a random-weight spanning path plus extra edges.
fn graph() -> impl Strategy<Value = (usize, Vec<Edge>)> {
    (2usize..=14).prop_flat_map(|n| {
        let path = prop::collection::vec(0u8..20, n - 1);
        let extra = prop::collection::vec((0..n, 0..n, 0u8..20), 0..=2 * n);
        (Just(n), path, extra).prop_map(|(n, path, extra)| {
            let mut edges: Vec<Edge> = path
                .into_iter()
                .enumerate()
                .map(|(i, w)| Edge { i, j: i + 1, weight: w as f64 / 10.0 })
                .collect();
            for (a, b, w) in extra {
                if a != b && !edges.iter().any(|e| (e.i, e.j) == (a.min(b), a.max(b))) {
                    edges.push(Edge { i: a.min(b), j: a.max(b), weight: w as f64 / 10.0 });
                }
            }
            (n, edges)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fps_matches_greedy_reference(points in cloud(64), frac in 0.0..1.0f64, start in 0usize..64) {
        let n = 1 + (frac * (points.len() - 1) as f64) as usize;
        let start = start % points.len();
        prop_assert_eq!(fps(&points, n, start).unwrap(), greedy_reference(&points, n, start));
    }

    #[test]
    fn segment_mean_matches_naive_loop(ids in prop::collection::vec(0usize..6, 1..40), seed in 0u64..1000) {
        let ids = promptq::segment::compact_ids(&ids);
        let mem = members(&ids);
        let rows: Vec<Vec<f64>> = (0..ids.len()).map(|p| (0..3).map(|c| ((p * 7 + c) as f64 * 0.37 + seed as f64).sin()).collect()).collect();
        let got = segment_mean(&mem, 3, |p| &rows[p]);
        for (s, m) in mem.iter().enumerate() {
            prop_assert!(!m.is_empty());
            for c in 0..3 {
                let mut acc = 0.0;
                for &p in m {
                    acc += rows[p][c];
                }
                prop_assert_eq!(got.at(s, c), acc / m.len() as f64);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn fh_matches_reference((n, edges) in graph(), tau in 0.0..2.0f64, min_size in 1usize..5) {
        let got = fh_segments(n, &edges, tau, min_size);
        let want = fh_reference(n, &edges, tau, min_size);
        prop_assert!(same_partition(&got, &want), "{got:?} vs {want:?}");
        // partition of [0, n) into compact, nonempty, large-enough segments
        let count = segment_count(&got);
        let mem = members(&got);
        prop_assert_eq!(mem.len(), count);
        prop_assert!(mem.iter().all(|m| m.len() >= min_size.min(n)));
    }

    #[test]
    fn fh_ignores_edge_order((n, edges) in graph(), tau in 0.0..2.0f64, seed in 0u64..1000) {
        let mut shuffled = edges.clone();
        let len = shuffled.len();
        for k in 0..len {
            let j = (seed as usize).wrapping_mul(31).wrapping_add(k * 17) % len;
            shuffled.swap(k, j);
        }
        prop_assert_eq!(fh_segments(n, &edges, tau, 2), fh_segments(n, &shuffled, tau, 2));
    }
}
