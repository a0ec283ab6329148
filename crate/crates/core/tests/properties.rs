use premover_core::focus::{focus_loss, focus_map, injection_weights, similarity, StreamingFocus, TargetMask};
use premover_core::numerics::{l2_normalize_rows, AdamWState, HeadDims, ParamSet, Tensor2D};
use premover_core::readiness::{readiness_loss, readiness_score, top_k_indices, ReadinessState};
use premover_core::streaming::{prefix_at_step, training_prefixes, TypingSchedule};
use premover_core::training::iou_at_half;
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2D> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |d| Tensor2D::from_vec(rows, cols, d).unwrap())
}

fn sort_oracle(p: &[f64], k: usize) -> f64 {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let c = sorted[0];
    let top: f64 = sorted[..k].iter().map(|v| v - c).sum();
    let all: f64 = sorted.iter().map(|v| v - c).sum();
    top / k as f64 - all / p.len() as f64
}

proptest! {
    #[test]
    fn normalized_rows_are_unit_and_idempotent(x in tensor(5, 4), c in 0.01f64..100.0) {
        let y = l2_normalize_rows(&x);
        let yy = l2_normalize_rows(&y);
        let mut scaled = x.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= c);
        let ys = l2_normalize_rows(&scaled);
        for i in 0..x.rows() {
            let n: f64 = y.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if x.row(i).iter().any(|&v| v != 0.0) {
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
            for j in 0..x.cols() {
                prop_assert!((yy.get(i, j) - y.get(i, j)).abs() < 1e-12);
                prop_assert!((ys.get(i, j) - y.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readiness_matches_sort_oracle(p in prop::collection::vec(0.0f64..1.0, 2..80), k_frac in 0.0f64..1.0) {
        let k = 1 + ((p.len() - 1) as f64 * k_frac) as usize;
        let r = readiness_score(&p, k).unwrap();
        if k == p.len() {
            prop_assert_eq!(r, 0.0);
        } else {
            prop_assert_eq!(r, sort_oracle(&p, k));
        }
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(r >= -1e-12 && r <= max - mean + 1e-12);
    }

    #[test]
    fn constant_maps_score_zero(v in 0.0f64..1.0, n in 2usize..64, k in 1usize..64) {
        let k = k.min(n);
        prop_assert_eq!(readiness_score(&vec![v; n], k).unwrap(), 0.0);
    }

    #[test]
    fn top_k_is_sorted_and_dominates(p in prop::collection::vec(-5.0f64..5.0, 1..50), k in 1usize..50) {
        let k = k.min(p.len());
        let idx = top_k_indices(&p, k);
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.windows(2).all(|w| p[w[0]] >= p[w[1]]));
        let floor = p[idx[k - 1]];
        for (i, &v) in p.iter().enumerate() {
            if !idx.contains(&i) {
                prop_assert!(v <= floor);
            }
        }
    }

    #[test]
    fn latch_is_monotone_and_commits_at_first_crossing(
        rs in prop::collection::vec(-1.0f64..1.0, 1..60),
        tau in -1.0f64..1.0,
    ) {
        let mut s = ReadinessState::new(tau);
        let mut was = false;
        for (t, &r) in rs.iter().enumerate() {
            s = s.gate(r, t);
            prop_assert!(!was || s.committed);
            prop_assert_eq!(s.r, Some(r));
            was = s.committed;
        }
        let first = rs.iter().position(|&r| r >= tau);
        prop_assert_eq!(s.commit_step, first);
        prop_assert_eq!(s.committed, first.is_some());
    }

    #[test]
    fn focus_maps_are_probabilities(x in tensor(6, 3), l in tensor(3, 3), scale in 0.1f64..20.0) {
        let s = similarity(&l2_normalize_rows(&x), &l2_normalize_rows(&l)).unwrap();
        let m = focus_map(&s, scale);
        prop_assert!(m.p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn streaming_maps_grow_with_the_prefix(x in tensor(8, 4), l in tensor(5, 4)) {
        let z_img = l2_normalize_rows(&x);
        let z_lang = l2_normalize_rows(&l);
        let mut sf = StreamingFocus::new(z_img.clone());
        let mut prev: Option<Vec<f64>> = None;
        for j in 0..z_lang.rows() {
            sf.push_token(z_lang.row(j)).unwrap();
            let m = sf.map(6.0, j).unwrap();
            if let Some(prev) = &prev {
                prop_assert!(m.p.iter().zip(prev).all(|(a, b)| a >= b));
            }
            let head = Tensor2D::from_rows(&z_lang.to_rows()[..=j]).unwrap();
            prop_assert_eq!(&focus_map(&similarity(&z_img, &head).unwrap(), 6.0).p, &m.p);
            prev = Some(m.p);
        }
    }

    #[test]
    fn injection_weights_stay_between_alpha_and_one(p in prop::collection::vec(0.0f64..=1.0, 1..40), alpha in 0.0f64..=1.0) {
        let w = injection_weights(&p, alpha);
        prop_assert!(w.iter().all(|&v| v >= alpha - 1e-15 && v <= 1.0 + 1e-15));
        prop_assert!(injection_weights(&p, 1.0).iter().all(|&v| v == 1.0));
        prop_assert_eq!(injection_weights(&p, 0.0), p);
    }

    #[test]
    fn focus_loss_is_finite_and_nonnegative(
        p in prop::collection::vec(0.0f64..=1.0, 4..30),
        pos in prop::collection::vec(any::<bool>(), 30),
    ) {
        let mask = TargetMask::new(pos[..p.len()].to_vec());
        let (l, g) = focus_loss(&p, &mask).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
        prop_assert!(g.iter().all(|v| v.is_finite()));
        for (gi, &m) in g.iter().zip(&mask.m_star) {
            let ok = if m { *gi <= 0.0 } else { *gi >= 0.0 };
            prop_assert!(ok);
        }
    }

    #[test]
    fn iou_is_a_fraction(p in prop::collection::vec(0.0f64..=1.0, 1..30), m in prop::collection::vec(any::<bool>(), 30)) {
        let v = iou_at_half(&p, &m[..p.len()]);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn prefixes_grow_and_complete_on_schedule(words in 1usize..20, spt in 1usize..20, t in 0usize..500) {
        let instruction: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        let sched = TypingSchedule { steps_per_token: spt, ..TypingSchedule::default() };
        let a = prefix_at_step(&instruction, t, &sched);
        let b = prefix_at_step(&instruction, t + 1, &sched);
        prop_assert!(a.len() <= b.len());
        prop_assert_eq!(&b.tokens[..a.len()], &a.tokens[..]);
        prop_assert_eq!(&a.tokens[..], &instruction[..a.len()]);
        prop_assert_eq!(a.is_complete(), t >= sched.completion_step(words));
    }

    #[test]
    fn adamw_with_zero_lr_is_identity(seed in any::<u64>(), g in prop::collection::vec(-100.0f64..100.0, 1..8)) {
        let mut params = ParamSet::init(HeadDims { d: 4, h: 5, d_proj: 3 }, seed);
        let before = params.clone();
        for (bi, block) in params.grads.blocks_mut().into_iter().enumerate() {
            for (i, v) in block.iter_mut().enumerate() {
                *v = g[(bi + i) % g.len()];
            }
        }
        let mut opt = AdamWState::new(&params, 0.0, 0.01, 1.0);
        opt.step(&mut params).unwrap();
        prop_assert!(params.same_values(&before));
    }

    #[test]
    fn raising_a_similarity_never_lowers_the_map(x in tensor(6, 3), i in 0usize..6, j in 0usize..3, bump in 0.0f64..2.0) {
        let before = focus_map(&x, 6.0);
        let mut y = x.clone();
        y.set(i, j, x.get(i, j) + bump);
        let after = focus_map(&y, 6.0);
        prop_assert!(after.p.iter().zip(&before.p).all(|(a, b)| a >= b));
    }

    #[test]
    fn focus_loss_ignores_patch_order(
        p in prop::collection::vec(0.01f64..0.99, 6..30),
        m in prop::collection::vec(any::<bool>(), 30),
        seed in any::<u64>(),
    ) {
        let n = p.len();
        let mut perm: Vec<usize> = (0..n).collect();
        premover_core::rng::SeededRng::new(seed).shuffle(&mut perm);
        let mask = TargetMask::new(m[..n].to_vec());
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let mp = TargetMask::new(perm.iter().map(|&i| m[i]).collect());
        let (a, ga) = focus_loss(&p, &mask).unwrap();
        let (b, gb) = focus_loss(&pp, &mp).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((gb[k] - ga[i]).abs() <= 1e-12 * ga[i].abs());
        }
    }

    #[test]
    fn balanced_masks_give_plain_bce(p in prop::collection::vec(0.01f64..0.99, 1..20)) {
        let n = p.len();
        let pp: Vec<f64> = p.iter().chain(p.iter()).copied().collect();
        let mask = TargetMask::new((0..2 * n).map(|i| i < n).collect());
        let (l, _) = focus_loss(&pp, &mask).unwrap();
        let bce: f64 = pp
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < n { -v.ln() } else { -(1.0 - v).ln() })
            .sum::<f64>()
            / (2 * n) as f64;
        prop_assert!((l - bce).abs() < 1e-12);
    }

    #[test]
    fn focus_loss_gradient_matches_central_differences(
        p in prop::collection::vec(0.05f64..0.95, 2..20),
        m in prop::collection::vec(any::<bool>(), 20),
    ) {
        let mask = TargetMask::new(m[..p.len()].to_vec());
        let (_, g) = focus_loss(&p, &mask).unwrap();
        let eps = 1e-6;
        for i in 0..p.len() {
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi[i] += eps;
            lo[i] -= eps;
            let num = (focus_loss(&hi, &mask).unwrap().0 - focus_loss(&lo, &mask).unwrap().0) / (2.0 * eps);
            prop_assert!((g[i] - num).abs() / num.abs().max(1e-8) < 1e-6, "{} vs {}", g[i], num);
        }
    }

    #[test]
    fn injection_preserves_order(p in prop::collection::vec(0.0f64..=1.0, 2..40), alpha in 0.0f64..=1.0) {
        let w = injection_weights(&p, alpha);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] >= p[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn readiness_is_bounded_and_order_free(p in prop::collection::vec(0.0f64..=1.0, 2..80), k in 1usize..80, seed in any::<u64>()) {
        let n = p.len();
        let k = k.min(n);
        let r = readiness_score(&p, k).unwrap();
        prop_assert!(r >= 0.0 && r <= 1.0 - 1.0 / n as f64);
        let mut q = p.clone();
        premover_core::rng::SeededRng::new(seed).shuffle(&mut q);
        prop_assert_eq!(readiness_score(&q, k).unwrap().to_bits(), r.to_bits());
    }

    #[test]
    fn sharpening_never_lowers_readiness(p in prop::collection::vec(0.0f64..=1.0, 3..80), k in 1usize..79, drop in 0.0f64..1.0) {
        let n = p.len();
        let k = k.min(n - 1);
        let r = readiness_score(&p, k).unwrap();
        let top = top_k_indices(&p, k);
        let (i, &v) = p
            .iter()
            .enumerate()
            .filter(|(i, _)| !top.contains(i))
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mut q = p.clone();
        q[i] = v * drop;
        prop_assert!(readiness_score(&q, k).unwrap() >= r);
    }

    #[test]
    fn readiness_loss_depends_on_the_gap_only(r in -1.0f64..1.0, tau in -1.0f64..1.0, t in 0.01f64..1.0, y in any::<bool>()) {
        let (_, dr, dtau) = readiness_loss(r, tau, t, y);
        prop_assert_eq!(dr + dtau, 0.0);
        let eps = 1e-6;
        let num_r = (readiness_loss(r + eps, tau, t, y).0 - readiness_loss(r - eps, tau, t, y).0) / (2.0 * eps);
        let num_t = (readiness_loss(r, tau + eps, t, y).0 - readiness_loss(r, tau - eps, t, y).0) / (2.0 * eps);
        prop_assert!((dr - num_r).abs() / num_r.abs().max(1e-8) < 1e-6);
        prop_assert!((dtau - num_t).abs() / num_t.abs().max(1e-8) < 1e-6);
    }

    #[test]
    fn training_prefixes_end_with_the_instruction(words in 1usize..40) {
        let instruction: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        let prefixes = training_prefixes(&instruction).unwrap();
        prop_assert!(prefixes.last().unwrap().is_complete());
        prop_assert!(prefixes.windows(2).all(|w| w[0].len() < w[1].len()));
    }
}
