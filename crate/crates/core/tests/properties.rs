use omnisparse::io::{load_csv, Dataset, Split};
use omnisparse::search::{dominates, Candidate, ParetoFront};
use omnisparse::sparsity::{
    adam_prune_score, block_scores, build_block_mask, cubic_max_sparsity, model_size_bytes, pruned_block_count,
    ArchSizes, BlockShape, LayerSize, ScheduleConfig, SparsityConfig,
};
use omnisparse::tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn arch(layers: usize) -> ArchSizes {
    let mut ls = vec![LayerSize {
        rows: 16,
        cols: 5,
        prunable: false,
    }];
    ls.extend((0..layers).map(|i| LayerSize {
        rows: 8 * (i as u64 + 1),
        cols: 16,
        prunable: true,
    }));
    ArchSizes::new(ls, 40, 1).unwrap()
}

proptest! {
    #[test]
    fn mask_prunes_exact_count_in_whole_blocks(
        row_blocks in 1usize..5,
        cols in 1usize..7,
        s in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let rows = 8 * row_blocks;
        let mut x = seed;
        let scores: Vec<f64> = (0..rows * cols)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let bs = block_scores(&scores, rows, cols, BlockShape::EIGHT_BY_ONE).unwrap();
        let mask = build_block_mask(&bs, rows, cols, BlockShape::EIGHT_BY_ONE, s).unwrap();
        prop_assert_eq!(mask.pruned_blocks(), pruned_block_count(s, mask.n_blocks()));
        for c in 0..cols {
            for rb in 0..row_blocks {
                let k = mask.keeps(8 * rb, c);
                for r in 8 * rb..8 * rb + 8 {
                    prop_assert_eq!(mask.keeps(r, c), k);
                }
            }
        }
        // Every pruned block scores no higher than every kept one.
        let keeps = mask.block_keeps();
        let max_pruned = bs.iter().zip(keeps).filter(|(_, &k)| !k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        let min_kept = bs.iter().zip(keeps).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        prop_assert!(max_pruned <= min_kept);
    }

    #[test]
    fn size_is_monotone_in_each_layer(
        ratios in proptest::collection::vec(prop::sample::select(vec![0.0f64, 0.5, 0.6, 0.7, 0.8]), 3),
        layer in 0usize..3,
        bump in prop::sample::select(vec![0.5f64, 0.6, 0.7, 0.8]),
    ) {
        let a = arch(3);
        let mut more = ratios.clone();
        more[layer] = more[layer].max(bump);
        prop_assert!(model_size_bytes(&more, &a).unwrap() <= model_size_bytes(&ratios, &a).unwrap());
    }

    #[test]
    fn schedule_is_monotone_and_bounded(t in 0u64..10_000, dt in 0u64..3000, sf in 0.05f64..0.95) {
        let cfg = ScheduleConfig::new(sf, 2048, 256).unwrap();
        let (a, b) = (cubic_max_sparsity(t, &cfg), cubic_max_sparsity(t + dt, &cfg));
        prop_assert!(a <= b);
        prop_assert!((0.0..=sf).contains(&b));
    }

    #[test]
    fn adam_scores_are_nonnegative(
        w in proptest::collection::vec(-10.0f64..10.0, 1..40),
        step in 0u64..1000,
    ) {
        let v: Vec<f64> = w.iter().map(|x| x * x * 0.01).collect();
        let s = adam_prune_score(&w, &v, step, 0.999, 1e-12).unwrap();
        for (si, wi) in s.iter().zip(&w) {
            prop_assert!(*si >= 0.0);
            if *wi != 0.0 {
                prop_assert!(*si > 0.0);
            }
        }
    }

    #[test]
    fn adam_second_moment_stays_nonnegative(inputs in proptest::collection::vec(-1e3f64..1e3, 1..30)) {
        let mut p = ParamStore::new();
        let w = p.add("w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5]).unwrap());
        let b = p.add("b", Tensor::zeros(&[2]));
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        for g in inputs {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::matrix(1, 3, vec![g, -g, 0.5 * g]).unwrap());
            let z = tape.linear(&p, x, w, b, None).unwrap();
            let loss = tape.cross_entropy(z, &[0]).unwrap();
            tape.backward(loss, &mut p).unwrap();
            adam.step(&mut p).unwrap();
            prop_assert!(adam.moments().iter().all(|m| m.v.iter().all(|&v| v >= 0.0)));
        }
    }

    #[test]
    fn dataset_csv_round_trip(
        rows in proptest::collection::vec((proptest::collection::vec(-1e6f64..1e6, 3), 0usize..4), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let feats: Vec<f64> = rows.iter().flat_map(|(f, _)| f.clone()).collect();
        let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
        let ds = Dataset::new(Tensor::matrix(rows.len(), 3, feats).unwrap(), labels, 4, Split::Train).unwrap();
        ds.write_csv(&path).unwrap();
        prop_assert_eq!(load_csv(&path, Some(4), Split::Train).unwrap(), ds);
    }

    #[test]
    fn front_equals_quadratic_filter(
        points in proptest::collection::vec((0u64..20, 0u32..20), 1..60),
        seed in any::<u64>(),
    ) {
        // Distinct configs, one per point.
        let cands: Vec<Candidate> = points
            .iter()
            .enumerate()
            .map(|(i, &(size, loss))| Candidate {
                config: SparsityConfig::new(vec![i as f64 / 100.0]).unwrap(),
                val_loss: loss as f64 / 4.0,
                size_bytes: size,
            })
            .collect();
        let naive: Vec<&Candidate> = cands
            .iter()
            .filter(|c| !cands.iter().any(|o| dominates(o, c)))
            .collect();

        let mut order: Vec<usize> = (0..cands.len()).collect();
        let mut x = seed;
        for i in (1..order.len()).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            order.swap(i, (x >> 33) as usize % (i + 1));
        }
        let mut front = ParetoFront::new();
        for &i in &order {
            front.update(cands[i].clone());
        }
        let mut got: Vec<&Candidate> = front.members().iter().collect();
        let mut want = naive.clone();
        let key = |c: &&Candidate| (c.size_bytes, c.val_loss.to_bits(), c.config.ratios()[0].to_bits());
        got.sort_by_key(key);
        want.sort_by_key(key);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn config_string_round_trip(r in proptest::collection::vec(prop::sample::select(vec![0.0, 0.5, 0.6, 0.7, 0.8]), 1..8)) {
        let c = SparsityConfig::new(r).unwrap();
        prop_assert_eq!(c.to_string().parse::<SparsityConfig>().unwrap(), c);
    }
}
