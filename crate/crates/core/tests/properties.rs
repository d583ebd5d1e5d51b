use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use relkd::eval::{rank1_embeddings, verify_scores, PairSet};
use relkd::harness::{compute_centroids, generate_dataset, DatasetConfig, Teacher};
use relkd::losses::dense;
use relkd::math::{dot64, Mat64};
use relkd::occlusion::{
    baseline_inpaint, contextual_attention, synthesize_mask, BinaryMask, MaskCategory, MaskSpec,
    Raster,
};
use relkd::tuples::{enumerate_pairs, enumerate_triplets, TripletMode, TuplePolicy};

fn gaussian_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat64 {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Mat64::from_vec(rows, cols, data).unwrap()
}

fn permute_rows(m: &Mat64, perm: &[usize]) -> Mat64 {
    let mut out = Mat64::zeros(m.rows, m.cols);
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(src));
    }
    out
}

/// Random orthogonal matrix via Gram–Schmidt on Gaussian columns.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for b in &basis {
            let p = dot64(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot64(&v, &v).sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_nonnegative_and_zero_at_teacher(seed in any::<u64>(), n in 3usize..9, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_mat(&mut rng, n, d);
        let s = gaussian_mat(&mut rng, n, d);
        let c = gaussian_mat(&mut rng, n, d);
        let pairs = enumerate_pairs(n, &TuplePolicy::all()).unwrap();
        let trips = enumerate_triplets(n, &TuplePolicy::all()).unwrap();
        for (a, b) in [(&t, &s), (&t, &t)] {
            let vals = [
                dense::instance_loss(a, b, false).unwrap().value,
                dense::soft_instance_loss(a, b, &c, false).unwrap().value,
                dense::pair_loss(a, b, 1.0, &pairs, false).unwrap().value,
                dense::triplet_loss(a, b, 1.0, &trips, false).unwrap().value,
            ];
            prop_assert!(vals.iter().all(|&v| v >= 0.0));
            if std::ptr::eq(a, b) {
                prop_assert!(vals.iter().all(|&v| v == 0.0), "{:?}", vals);
            }
        }
    }

    #[test]
    fn pair_loss_ignores_uniform_scale(seed in any::<u64>(), n in 2usize..9, c in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_mat(&mut rng, n, 4);
        let mut s = t.clone();
        s.scale(c);
        let pairs = enumerate_pairs(n, &TuplePolicy::all()).unwrap();
        let out = dense::pair_loss(&t, &s, 1.0, &pairs, true).unwrap();
        prop_assert!(out.value.abs() < 1e-12);
        prop_assert!(out.grad.unwrap().data.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn triplet_loss_ignores_similarity_transforms(seed in any::<u64>(), n in 3usize..8, d in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_mat(&mut rng, n, d);
        let q = random_orthogonal(&mut rng, d);
        let scale = rng.random_range(0.1..10.0);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut s = Mat64::zeros(n, d);
        for i in 0..n {
            for (k, qk) in q.iter().enumerate() {
                s.row_mut(i)[k] = scale * dot64(qk, t.row(i)) + shift[k];
            }
        }
        for mode in [TripletMode::VertexMiddle, TripletMode::AllVertices] {
            let policy = TuplePolicy { triplet_mode: mode, ..TuplePolicy::all() };
            let trips = enumerate_triplets(n, &policy).unwrap();
            let v = dense::triplet_loss(&t, &s, 1.0, &trips, false).unwrap().value;
            prop_assert!(v.abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn relational_losses_are_permutation_equivariant(seed in any::<u64>(), n in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_mat(&mut rng, n, 3);
        let s = gaussian_mat(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let (tp, sp) = (permute_rows(&t, &perm), permute_rows(&s, &perm));
        let pairs = enumerate_pairs(n, &TuplePolicy::all()).unwrap();
        let trips = enumerate_triplets(n, &TuplePolicy { triplet_mode: TripletMode::AllVertices, ..TuplePolicy::all() }).unwrap();
        let a = dense::pair_loss(&t, &s, 0.5, &pairs, true).unwrap();
        let b = dense::pair_loss(&tp, &sp, 0.5, &pairs, true).unwrap();
        let c = dense::triplet_loss(&t, &s, 0.5, &trips, true).unwrap();
        let e = dense::triplet_loss(&tp, &sp, 0.5, &trips, true).unwrap();
        prop_assert!(close(a.value, b.value, 1e-12));
        prop_assert!(close(c.value, e.value, 1e-12));
        let (ga, gb) = (a.grad.unwrap(), b.grad.unwrap());
        let (gc, ge) = (c.grad.unwrap(), e.grad.unwrap());
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..3 {
                prop_assert!(close(gb.row(dst)[k], ga.row(src)[k], 1e-9));
                prop_assert!(close(ge.row(dst)[k], gc.row(src)[k], 1e-9));
            }
        }
    }

    #[test]
    fn soft_instance_equals_instance(seed in any::<u64>(), n in 1usize..20, d in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_mat(&mut rng, n, d);
        let s = gaussian_mat(&mut rng, n, d);
        let mut c = gaussian_mat(&mut rng, n, d);
        c.scale(10.0);
        let hard = dense::instance_loss(&t, &s, false).unwrap().value;
        let soft = dense::soft_instance_loss(&t, &s, &c, false).unwrap().value;
        prop_assert!(close(hard, soft, 1e-12));
    }

    #[test]
    fn tuples_unique_and_distinct(n in 3usize..14, cap in proptest::option::of(1usize..60), seed in any::<u64>(), all in any::<bool>()) {
        let mut policy = TuplePolicy {
            triplet_mode: if all { TripletMode::AllVertices } else { TripletMode::VertexMiddle },
            ..TuplePolicy::all()
        };
        if let Some(c) = cap {
            policy = policy.with_cap(c, seed);
        }
        let pairs = enumerate_pairs(n, &policy).unwrap();
        let trips = enumerate_triplets(n, &policy).unwrap();
        prop_assert_eq!(&pairs, &enumerate_pairs(n, &policy).unwrap());
        prop_assert_eq!(&trips, &enumerate_triplets(n, &policy).unwrap());
        let mut p = pairs.clone();
        p.sort_unstable();
        p.dedup();
        prop_assert_eq!(p.len(), pairs.len());
        prop_assert!(pairs.iter().all(|&(a, b)| a != b && a < n && b < n));
        let mut t = trips.clone();
        t.sort_unstable();
        t.dedup();
        prop_assert_eq!(t.len(), trips.len());
        prop_assert!(trips.iter().all(|&(a, b, c)| a != b && b != c && a != c));
    }

    #[test]
    fn verification_invariant_under_monotone_maps(seed in any::<u64>(), half in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..2 * half).map(|_| rng.random_range(-1.0..1.0)).collect();
        let same: Vec<bool> = (0..2 * half).map(|i| i < half).collect();
        let base = verify_scores(&scores, &same).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| ((s * 3.0).exp() - 1.0) / 30.0).collect();
        let other = verify_scores(&mapped, &same).unwrap();
        prop_assert_eq!(base.accuracy, other.accuracy);
        prop_assert!((0.5..=1.0).contains(&base.accuracy));
        let fprs: Vec<f64> = base.roc_points.iter().map(|p| p.0).collect();
        prop_assert!(fprs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rank1_invariant_under_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gallery = gaussian_mat(&mut rng, 6, 4);
        let probes = gaussian_mat(&mut rng, 9, 4);
        let gl: Vec<u32> = (0..6).map(|i| i % 3).collect();
        let pl: Vec<u32> = (0..9).map(|i| i % 3).collect();
        let a = rank1_embeddings(&gallery, &gl, &probes, &pl).unwrap();
        let (mut g2, mut p2) = (gallery.clone(), probes.clone());
        g2.scale(scale);
        p2.scale(scale);
        prop_assert_eq!(a, rank1_embeddings(&g2, &gl, &p2, &pl).unwrap());
    }

    #[test]
    fn attention_rows_sum_to_one_and_observed_pixels_kept(seed in any::<u64>(), cat in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<f32> = (0..16 * 16).map(|_| rng.random::<f32>()).collect();
        let raster = Raster::new(16, 16, 1, pixels).unwrap();
        let spec = MaskSpec { category: MaskCategory::ALL[cat], seed, ..MaskSpec::default() };
        let sample = synthesize_mask(&spec, &raster).unwrap();
        prop_assert_eq!(&sample, &synthesize_mask(&spec, &raster).unwrap());
        let (done, attn) = contextual_attention(&sample.masked, &sample.mask, 3, 10.0).unwrap();
        for q in 0..attn.queries.len() {
            let sum: f64 = attn.row(q).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
        for (i, (&a, &b)) in done.pixels().iter().zip(sample.masked.pixels()).enumerate() {
            if !sample.mask.bits()[i] {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_mask_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.random::<f32>()).collect();
        let raster = Raster::new(8, 8, 3, pixels).unwrap();
        let mask = BinaryMask::empty(8, 8);
        prop_assert_eq!(&baseline_inpaint(&raster, &mask).unwrap(), &raster);
        prop_assert_eq!(&contextual_attention(&raster, &mask, 3, 50.0).unwrap().0, &raster);
    }

    #[test]
    fn centroids_match_brute_force(seed in any::<u64>(), n in 1usize..30, ids in 1u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = gaussian_mat(&mut rng, n, 3);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..ids)).collect();
        let table = compute_centroids(&f, &labels).unwrap();
        for (label, c) in table.iter() {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == label).collect();
            prop_assert_eq!(table.count(label), rows.len());
            for k in 0..3 {
                let mean = rows.iter().map(|&i| f.row(i)[k]).sum::<f64>() / rows.len() as f64;
                prop_assert_eq!(c.as_slice()[k], mean as f32);
            }
        }
    }
}

#[test]
fn noisy_teacher_features_stay_nearest_their_anchor() {
    for sigma in [0.05, 0.1] {
        let ds = generate_dataset(&DatasetConfig {
            num_identities: 40,
            samples_per_identity: 25,
            noise_sigma: sigma,
            seed: 11,
            ..DatasetConfig::default()
        })
        .unwrap();
        let teacher = Teacher::new(&ds, 1.0).unwrap();
        let anchors = ds.anchors.to_f64();
        for s in &ds.samples {
            let f = teacher.embed64(s.clean());
            assert!((dot64(&f, &f).sqrt() - 1.0).abs() < 1e-6);
            let own = dot64(&f, anchors.row(s.label as usize));
            for c in 0..anchors.rows {
                if c != s.label as usize {
                    assert!(own > dot64(&f, anchors.row(c)), "sigma {sigma}");
                }
            }
        }
    }
}

#[test]
fn pairsets_from_dataset_are_balanced() {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let labels: Vec<u32> = ds.samples.iter().map(|s| s.label).collect();
    let pairs = PairSet::sample(&ds.eval, &labels, 6000, 0).unwrap();
    let pos = pairs.labels().iter().filter(|&&b| b).count();
    assert_eq!(2 * pos, pairs.len());
    assert!(pairs
        .pairs()
        .iter()
        .all(|&(a, b, same)| a != b && (labels[a] == labels[b]) == same));
}
