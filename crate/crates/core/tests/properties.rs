use proptest::prelude::*;

use highlighter_core::apps::{
    brute_force_minimum, composite_stylizations, delete_region, extrude_region, select_region, stretch_region,
    threshold_mask, HighlightResult, SegmentationProblem, MASK_THRESHOLD,
};
use highlighter_core::eval::r_precision;
use highlighter_core::guidance::{aggregate_embeddings, argmax_first, guidance_loss, guidance_loss_and_grad};
use highlighter_core::mesh::{normalize_mesh, primitives, Mesh, NormalizationTransform};
use highlighter_core::render::{blend_backward, blend_colors, Image, PerspectiveWarp, RenderConfig};
use highlighter_core::result::Provenance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>() > 1e-6
}

fn result(probabilities: Vec<f64>) -> HighlightResult {
    HighlightResult::new(
        probabilities,
        NormalizationTransform::identity(),
        Provenance::new("p".into(), 0, "test".into(), serde_json::Value::Null),
    )
}

proptest! {
    #[test]
    fn loss_is_bounded_and_scale_invariant(
        (a, b) in (1usize..16).prop_flat_map(|n| (vector(n), vector(n))),
        s in 0.01f64..100.0,
        t in 0.01f64..100.0,
    ) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let l = guidance_loss(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&l));
        let scaled_a: Vec<f64> = a.iter().map(|x| x * s).collect();
        let scaled_b: Vec<f64> = b.iter().map(|x| x * t).collect();
        prop_assert!((guidance_loss(&scaled_a, &scaled_b).unwrap() - l).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_is_orthogonal_to_the_image_embedding(
        (a, b) in (2usize..16).prop_flat_map(|n| (vector(n), vector(n))),
    ) {
        prop_assume!(nonzero(&a) && nonzero(&b));
        let (_, g) = guidance_loss_and_grad(&a, &b).unwrap();
        let dot: f64 = g.iter().zip(&a).map(|(x, y)| x * y).sum();
        let scale = g.iter().map(|x| x.abs()).sum::<f64>() * a.iter().map(|x| x.abs()).sum::<f64>();
        prop_assert!(dot.abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn aggregation_ignores_view_order(
        embeddings in (1usize..8).prop_flat_map(|d| prop::collection::vec(vector(d), 1..6)),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = embeddings.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = aggregate_embeddings(&embeddings).unwrap();
        let b = aggregate_embeddings(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_is_first_maximum_and_survives_monotone_maps(
        scores in prop::collection::vec(-5i32..5, 1..12),
        gain in 0.1f64..10.0,
        offset in -10.0f64..10.0,
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let i = argmax_first(&scores).unwrap();
        prop_assert!(scores.iter().all(|&s| s <= scores[i]));
        prop_assert!(scores[..i].iter().all(|&s| s < scores[i]));
        let mapped: Vec<f64> = scores.iter().map(|s| gain * s + offset).collect();
        prop_assert_eq!(argmax_first(&mapped), Some(i));
    }

    #[test]
    fn blend_stays_on_the_segment_and_backward_is_its_adjoint(
        probabilities in prop::collection::vec(0.0f64..=1.0, 1..20),
        upstream in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        let cfg = RenderConfig::default();
        let colors = blend_colors(&probabilities, &cfg);
        for (c, &p) in colors.iter().zip(&probabilities) {
            for k in 0..3 {
                let (lo, hi) = (cfg.highlight_color[k].min(cfg.base_color[k]), cfg.highlight_color[k].max(cfg.base_color[k]));
                prop_assert!(c[k] >= lo - 1e-12 && c[k] <= hi + 1e-12);
                prop_assert!((c[k] - (p * cfg.highlight_color[k] + (1.0 - p) * cfg.base_color[k])).abs() < 1e-12);
            }
        }
        let dcolors: Vec<[f64; 3]> = (0..probabilities.len()).map(|v| [upstream[3 * v], upstream[3 * v + 1], upstream[3 * v + 2]]).collect();
        let dp = blend_backward(&dcolors, &cfg);
        // The blend is affine in p, so a unit step along p moves each color by H - G.
        let shifted: Vec<f64> = probabilities.iter().map(|p| p + 1.0).collect();
        let moved = blend_colors(&shifted, &cfg);
        for v in 0..probabilities.len() {
            let directional: f64 = (0..3).map(|k| dcolors[v][k] * (moved[v][k] - colors[v][k])).sum();
            prop_assert!((directional - dp[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_backward_is_the_adjoint_of_apply(seed in any::<u64>(), scale in 0.0f64..0.9) {
        let (w, h) = (9, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp = PerspectiveWarp::sample(w, h, scale, &mut rng);
        let mut x = Image::new(w, h);
        let mut y = Image::new(w, h);
        let mut vals = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for v in x.data.iter_mut().chain(y.data.iter_mut()) {
            *v = rand::Rng::random_range(&mut vals, -1.0..1.0);
        }
        let ax = warp.apply(&x, [0.0; 3]);
        let aty = warp.backward(&y);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn normalization_round_trips_and_fits_the_unit_ball(
        verts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 3..20),
    ) {
        let mesh = Mesh::new(verts.clone(), vec![[0, 1, 2]]).unwrap();
        prop_assume!(mesh.vertices.iter().any(|v| (0..3).any(|k| (v[k] - verts[0][k]).abs() > 1e-3)));
        let (normalized, t) = normalize_mesh(&mesh).unwrap();
        prop_assert!((normalized.max_radius() - 1.0).abs() < 1e-9);
        for (n, v) in normalized.vertices.iter().zip(&verts) {
            let back = t.invert(*n);
            for k in 0..3 {
                prop_assert!((back[k] - v[k]).abs() < 1e-9 * (1.0 + v[k].abs()));
            }
        }
    }

    #[test]
    fn edits_touch_only_the_mask(mask in prop::collection::vec(any::<bool>(), 42), delta in -0.5f64..0.5) {
        let mesh = primitives::icosphere(1);
        let extruded = extrude_region(&mesh, &mask, delta).unwrap();
        let stretched = stretch_region(&mesh, &mask, [delta, 0.3, -delta]).unwrap();
        for v in 0..mesh.vertex_count() {
            if !mask[v] {
                prop_assert_eq!(extruded.vertices[v], mesh.vertices[v]);
                prop_assert_eq!(stretched.vertices[v], mesh.vertices[v]);
            }
        }
        prop_assert_eq!(&extruded.faces, &mesh.faces);
        prop_assert_eq!(&stretched.faces, &mesh.faces);
    }

    #[test]
    fn delete_keeps_the_faces_select_keeps_for_the_complement(mask in prop::collection::vec(any::<bool>(), 42)) {
        let mesh = primitives::icosphere(1);
        let kept = delete_region(&mesh, &mask).unwrap();
        let inverse: Vec<bool> = mask.iter().map(|m| !m).collect();
        let selected = select_region(&mesh, &inverse).unwrap();
        let original = |out: &highlighter_core::apps::EditOutput| -> Vec<[usize; 3]> {
            let mut back = vec![0; mesh.vertex_count()];
            for (old, new) in out.vertex_map.iter().enumerate() {
                if let Some(n) = new {
                    back[*n] = old;
                }
            }
            out.mesh.faces.iter().map(|f| f.map(|v| back[v])).collect()
        };
        prop_assert_eq!(original(&kept), original(&selected));
        prop_assert_eq!(&kept.mesh.vertices.len(), &kept.vertex_map.iter().flatten().count());
        for (old, new) in kept.vertex_map.iter().enumerate() {
            match new {
                Some(n) => prop_assert_eq!(kept.mesh.vertices[*n], mesh.vertices[old]),
                None => prop_assert!(mask[old]),
            }
        }
    }

    #[test]
    fn precision_is_quantized_and_order_free(outcomes in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let hits = outcomes.iter().filter(|&&o| o).count();
        let p = r_precision(hits, outcomes.len()).unwrap();
        prop_assert!((0.0..=100.0).contains(&p));
        let steps = p * outcomes.len() as f64 / 100.0;
        prop_assert!((steps - steps.round()).abs() < 1e-9);
        let mut shuffled = outcomes.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hits2 = shuffled.iter().filter(|&&o| o).count();
        prop_assert_eq!(r_precision(hits2, shuffled.len()).unwrap(), p);
    }

    #[test]
    fn threshold_mask_is_strict(probabilities in prop::collection::vec(0.0f64..=1.0, 0..30)) {
        let mask = threshold_mask(&probabilities);
        for (m, p) in mask.iter().zip(&probabilities) {
            prop_assert_eq!(*m, *p > MASK_THRESHOLD);
        }
    }

    #[test]
    fn compositing_twice_changes_nothing(
        layers in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 10), 0..4),
    ) {
        let base: Vec<u32> = (0..10).collect();
        let attrs: Vec<Vec<u32>> = (0..layers.len()).map(|l| vec![100 * (l as u32 + 1); 10]).collect();
        let results: Vec<HighlightResult> = layers.into_iter().map(result).collect();
        let stack: Vec<(&[u32], &HighlightResult)> = attrs.iter().map(|a| a.as_slice()).zip(&results).collect();
        let once = composite_stylizations(&base, &stack).unwrap();
        let twice = composite_stylizations(&once, &stack).unwrap();
        prop_assert_eq!(&once, &twice);
        for (v, value) in once.iter().enumerate() {
            if results.iter().all(|r| r.probabilities[v] <= MASK_THRESHOLD) {
                prop_assert_eq!(*value, base[v]);
            }
        }
    }

    #[test]
    fn graph_cut_never_beats_the_optimum_nor_loses_to_argmax(
        probabilities in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 6),
        weights in prop::collection::vec(0.1f64..1.0, 12),
        lambda in 0.0f64..2.0,
    ) {
        let tet = primitives::tetrahedron();
        let mut edges: Vec<(usize, usize)> = tet.edges();
        edges.extend([(0, 4), (4, 5), (5, 1), (2, 5), (3, 4), (1, 4)]);
        let weighted: Vec<_> = edges.into_iter().zip(weights).map(|((a, b), w)| (a, b, w)).collect();
        let problem = SegmentationProblem::new(&probabilities, weighted, lambda).unwrap();
        let (labels, energy) = problem.solve();
        prop_assert!((problem.energy(&labels) - energy).abs() < 1e-9);
        prop_assert!(energy <= problem.energy(&problem.argmax_labels()) + 1e-9);
        prop_assert!(energy >= brute_force_minimum(&problem).1 - 1e-9);
        if lambda == 0.0 {
            prop_assert_eq!(labels, problem.argmax_labels());
        }
    }
}
