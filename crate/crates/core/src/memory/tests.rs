use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(rows: &[Vec<f32>]) -> PatchGrid {
    let dim = rows[0].len();
    PatchGrid::new(1, rows.len(), dim, 1, rows.concat()).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen::<f32>()).collect())
        .collect()
}

fn bank_with(config: MemoryConfig, keys: &[Vec<f32>], values: &[Vec<f32>]) -> MemoryBank {
    let mut bank = MemoryBank::new(config).unwrap();
    bank.add_support(&grid(keys), &grid(values), "p").unwrap();
    bank
}

fn big() -> MemoryConfig {
    MemoryConfig {
        capacity: 100_000,
        prototype_budget: 8,
    }
}

/// Softmax over negative scaled squared distances, written out directly.
fn oracle_weights(keys: &[Vec<f32>], q: &[f32], t: f64) -> Vec<f64> {
    let d = q.len() as f64;
    let s: Vec<f64> = keys
        .iter()
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..q.len() {
                acc += (f64::from(q[j]) - f64::from(k[j])).powi(2);
            }
            -acc / (t * d.sqrt())
        })
        .collect();
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

#[test]
fn add_counts_patches_and_tracks_sources() {
    let mut bank = MemoryBank::new(big()).unwrap();
    let keys = PatchGrid::new(8, 8, 3, 8, vec![0.5; 192]).unwrap();
    let values = PatchGrid::new(8, 8, 1, 8, vec![1.0; 64]).unwrap();
    bank.add_support(&keys, &values, "first").unwrap();
    assert_eq!(bank.len(), 64);
    bank.add_support(&keys, &values, "second").unwrap();
    assert_eq!(bank.source(64), &EntrySource { pair_id: "second".into(), patch: 0 });
    assert_eq!(bank.source(127).patch, 63);
    assert!(bank.usage.iter().all(|&u| u == 0.0));
}

#[test]
fn add_rejects_inconsistent_dims() {
    let mut bank = MemoryBank::new(big()).unwrap();
    bank.add_support(&grid(&[vec![0.0; 3]]), &grid(&[vec![1.0]]), "a").unwrap();
    assert!(bank.add_support(&grid(&[vec![0.0; 4]]), &grid(&[vec![1.0]]), "b").is_err());
    let values = PatchGrid::new(1, 2, 1, 1, vec![0.0, 1.0]).unwrap();
    assert!(bank.add_support(&grid(&[vec![0.0; 3]]), &values, "c").is_err());
}

#[test]
fn overflow_triggers_consolidation() {
    let config = MemoryConfig {
        capacity: 100,
        prototype_budget: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bank = MemoryBank::new(config).unwrap();
    let r1 = bank
        .add_support(&grid(&random_rows(&mut rng, 64, 4)), &grid(&random_rows(&mut rng, 64, 1)), "a")
        .unwrap();
    assert!(!r1.performed);
    let r2 = bank
        .add_support(&grid(&random_rows(&mut rng, 64, 4)), &grid(&random_rows(&mut rng, 64, 1)), "b")
        .unwrap();
    assert!(r2.performed);
    assert!(bank.working_count() <= 100);
    assert_eq!(bank.working_count(), 50);
    assert_eq!(bank.longterm_count(), 10);
    assert!(bank.len() < 128);
    bank.check_invariants().unwrap();
}

#[test]
fn singleton_and_symmetric_affinity() {
    let bank = bank_with(big(), &[vec![0.3, 0.1]], &[vec![1.0]]);
    assert_eq!(bank.affinity(&[5.0, -2.0], 1.0, None).unwrap().weights, vec![1.0]);

    let bank = bank_with(big(), &[vec![1.0, 0.0], vec![-1.0, 0.0]], &[vec![0.0], vec![1.0]]);
    let row = bank.affinity(&[0.0, 0.7], 0.5, None).unwrap();
    assert!((row.weights[0] - 0.5).abs() < 1e-9);
    assert!((row.weights[1] - 0.5).abs() < 1e-9);
}

#[test]
fn affinity_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let keys = random_rows(&mut rng, 3, 6);
        let q: Vec<f32> = (0..6).map(|_| rng.gen()).collect();
        let bank = bank_with(big(), &keys, &random_rows(&mut rng, 3, 1));
        let got = bank.affinity(&q, 1.0, None).unwrap();
        let want = oracle_weights(&keys, &q, 1.0);
        for (g, w) in got.weights.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
    }
}

#[test]
fn top_k_limits_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let keys = random_rows(&mut rng, 40, 5);
    let bank = bank_with(big(), &keys, &random_rows(&mut rng, 40, 1));
    let q: Vec<f32> = (0..5).map(|_| rng.gen()).collect();
    let row = bank.affinity(&q, 0.1, Some(7)).unwrap();
    assert!(row.nonzero() <= 7);
    assert!((row.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // the kept entries are the 7 nearest
    let mut by_dist: Vec<usize> = (0..40).collect();
    by_dist.sort_by(|&a, &b| squared_distance(&q, &keys[a]).total_cmp(&squared_distance(&q, &keys[b])));
    for &i in &by_dist[..7] {
        assert!(row.weights[i] > 0.0);
    }
}

#[test]
fn affinity_errors() {
    let bank = MemoryBank::new(big()).unwrap();
    assert!(matches!(bank.affinity(&[0.0], 1.0, None), Err(Error::EmptyBank)));
    let bank = bank_with(big(), &[vec![0.0]], &[vec![0.0]]);
    assert!(bank.affinity(&[0.0], 0.0, None).is_err());
    assert!(bank.affinity(&[0.0, 1.0], 1.0, None).is_err());
    assert!(bank.affinity(&[0.0], 1.0, Some(0)).is_err());
}

#[test]
fn single_entry_readout_copies_value() {
    let bank = bank_with(big(), &[vec![0.2, 0.9]], &[vec![0.25, 0.75]]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = grid(&random_rows(&mut rng, 5, 2));
    let out = bank.readout(&q, 1.0, None).unwrap();
    for p in out.patches() {
        assert_eq!(p, &[0.25, 0.75]);
    }
}

#[test]
fn self_retrieval_with_top1() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let keys = random_rows(&mut rng, 30, 4);
    let values = random_rows(&mut rng, 30, 1);
    let bank = bank_with(big(), &keys, &values);
    let out = bank.readout(&grid(&keys), 1.0, Some(1)).unwrap();
    for (i, p) in out.patches().enumerate() {
        assert_eq!(p, values[i].as_slice());
    }
}

#[test]
fn cold_temperature_approaches_nearest() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let keys = random_rows(&mut rng, 20, 3);
    let values = random_rows(&mut rng, 20, 1);
    let bank = bank_with(big(), &keys, &values);
    for _ in 0..20 {
        let q: Vec<f32> = (0..3).map(|_| rng.gen()).collect();
        let nearest = (0..20)
            .min_by(|&a, &b| squared_distance(&q, &keys[a]).total_cmp(&squared_distance(&q, &keys[b])))
            .unwrap();
        let out = bank.readout(&grid(&[q]), 1e-4, None).unwrap();
        assert!((out.data()[0] - values[nearest][0]).abs() < 1e-4);
    }
}

#[test]
fn dominant_usage_becomes_prototype() {
    let config = MemoryConfig {
        capacity: 8,
        prototype_budget: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bank = MemoryBank::new(MemoryConfig { capacity: 100, prototype_budget: 2 }).unwrap();
    bank.add_support(&grid(&random_rows(&mut rng, 10, 2)), &grid(&random_rows(&mut rng, 10, 1)), "a")
        .unwrap();
    bank.usage[6] = 50.0;
    bank.config = config;
    let report = bank.consolidate();
    assert!(report.performed);
    assert!(report.prototypes.contains(&6));
    // remaining prototype is the earliest zero-usage entry
    assert_eq!(report.prototypes, vec![0, 6]);
    assert_eq!(report.retained, vec![5, 7, 8, 9]);
    bank.check_invariants().unwrap();
}

#[test]
fn zero_usage_prototypes_are_earliest() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bank = MemoryBank::new(MemoryConfig { capacity: 8, prototype_budget: 3 }).unwrap();
    let report = bank
        .add_support(&grid(&random_rows(&mut rng, 12, 2)), &grid(&random_rows(&mut rng, 12, 1)), "a")
        .unwrap();
    assert_eq!(report.prototypes, vec![0, 1, 2]);
    assert_eq!(report.retained, vec![8, 9, 10, 11]);
    assert_eq!(bank.len(), 7);
}

#[test]
fn consolidation_noop_when_budget_covers_working() {
    let mut bank = bank_with(
        MemoryConfig { capacity: 100, prototype_budget: 4 },
        &[vec![0.0], vec![1.0], vec![2.0]],
        &[vec![0.0], vec![1.0], vec![0.5]],
    );
    let before = bank.clone();
    assert!(!bank.consolidate().performed);
    assert_eq!(bank, before);
}

/// Brute-force nearest prototype by key distance, first-wins on ties.
fn oracle_assignment(keys: &[Vec<f32>], protos: &[usize], e: usize) -> usize {
    let mut best = protos[0];
    let mut best_d = f64::INFINITY;
    for &p in protos {
        let d: f64 = keys[e]
            .iter()
            .zip(&keys[p])
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
            .sum();
        if d < best_d {
            best_d = d;
            best = p;
        }
    }
    best
}

#[test]
fn eviction_assignment_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let keys = random_rows(&mut rng, 50, 6);
    let values = random_rows(&mut rng, 50, 1);
    let mut bank = bank_with(MemoryConfig { capacity: 1000, prototype_budget: 5 }, &keys, &values);
    for u in bank.usage.iter_mut() {
        *u = rng.gen::<f32>() * 3.0;
    }
    let usage = bank.usage.clone();
    bank.config = MemoryConfig { capacity: 20, prototype_budget: 5 };
    let report = bank.consolidate();
    let protos: Vec<usize> = report.prototypes.iter().map(|&s| s as usize).collect();
    assert_eq!(protos.len(), 5);

    let mut ranked: Vec<usize> = (0..50).collect();
    ranked.sort_by(|&a, &b| usage[b].total_cmp(&usage[a]).then(a.cmp(&b)));
    let mut expect_protos = ranked[..5].to_vec();
    expect_protos.sort();
    assert_eq!(protos, expect_protos);

    assert_eq!(report.assignments.len(), 50 - 5 - 10);
    for &(e, p) in &report.assignments {
        assert_eq!(p as usize, oracle_assignment(&keys, &protos, e as usize));
    }

    // value mass: each prototype value is the weighted mean of its members
    for &p in &protos {
        let mut num = f64::from(values[p][0]) * (1.0 + f64::from(usage[p]));
        let mut den = 1.0 + f64::from(usage[p]);
        for &(e, q) in &report.assignments {
            if q as usize == p {
                let w = 1.0 + f64::from(usage[e as usize]);
                num += f64::from(values[e as usize][0]) * w;
                den += w;
            }
        }
        let pos = bank.position_of(p as u64).unwrap();
        assert!((f64::from(bank.value(pos)[0]) - num / den).abs() < 1e-6);
    }
}

#[test]
fn consolidation_readout_drift_is_bounded() {
    // Regression record: max |Δreadout| for this fixed instance.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let keys = random_rows(&mut rng, 200, 4);
    let values = random_rows(&mut rng, 200, 1);
    let mut bank = bank_with(MemoryConfig { capacity: 1000, prototype_budget: 20 }, &keys, &values);
    let queries = grid(&random_rows(&mut rng, 50, 4));
    let before = bank.readout(&queries, 0.1, Some(30)).unwrap();
    let mut acc = UsageAccumulator::for_bank(&bank);
    bank.readout_tracked(&queries, 0.1, Some(30), &mut acc).unwrap();
    bank.merge_usage(&acc).unwrap();
    bank.config = MemoryConfig { capacity: 100, prototype_budget: 20 };
    assert!(bank.consolidate().performed);
    let after = bank.readout(&queries, 0.1, Some(30)).unwrap();
    let drift = before
        .data()
        .iter()
        .zip(after.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(drift < 0.5, "readout drift {drift}");
}

#[test]
fn usage_accumulates_affinity_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut bank = bank_with(big(), &random_rows(&mut rng, 10, 3), &random_rows(&mut rng, 10, 1));
    let q = grid(&random_rows(&mut rng, 4, 3));
    let mut acc = UsageAccumulator::for_bank(&bank);
    let frozen = bank.clone();
    bank.readout_tracked(&q, 1.0, None, &mut acc).unwrap();
    assert_eq!(bank, frozen);
    assert!((acc.mass().iter().sum::<f64>() - 4.0).abs() < 1e-9);
    let mut manual = UsageAccumulator::for_bank(&bank);
    for p in q.patches() {
        manual.record(&bank.affinity(p, 1.0, None).unwrap());
    }
    for (a, b) in acc.mass().iter().zip(manual.mass()) {
        assert!((a - b).abs() < 1e-12);
    }
    bank.merge_usage(&acc).unwrap();
    assert!(bank.usage.iter().all(|&u| u >= 0.0));
}

#[test]
fn snapshot_round_trip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut bank = MemoryBank::new(MemoryConfig { capacity: 40, prototype_budget: 5 }).unwrap();
    for i in 0..4 {
        bank.add_support(
            &grid(&random_rows(&mut rng, 16, 5)),
            &grid(&random_rows(&mut rng, 16, 1)),
            &format!("pair-{i}"),
        )
        .unwrap();
    }
    assert!(bank.longterm_count() > 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.mbk");
    bank.save(&path).unwrap();
    let loaded = MemoryBank::load(&path).unwrap();
    assert_eq!(loaded, bank);
    assert_eq!(loaded.to_bytes(), bank.to_bytes());
    let q = grid(&random_rows(&mut rng, 9, 5));
    let a = bank.readout(&q, 0.3, Some(4)).unwrap();
    let b = loaded.readout(&q, 0.3, Some(4)).unwrap();
    let bits = |g: &PatchGrid| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));

    let bytes = bank.to_bytes();
    assert_eq!(&bytes[..4], b"MBK1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
    assert!(MemoryBank::from_bytes(&bytes[..30], &path).is_err());
    assert!(MemoryBank::from_bytes(b"XBK1", &path).is_err());
}

fn arb_bank_case() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>, u64)> {
    (1usize..6, 1usize..9).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f32..1.0, dim), n),
            Just((0..n).collect::<Vec<_>>()),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn readout_is_permutation_invariant((keys, _, seed) in arb_bank_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = keys.len();
        let dim = keys[0].len();
        let values = random_rows(&mut rng, n, 2);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let pk: Vec<Vec<f32>> = perm.iter().map(|&i| keys[i].clone()).collect();
        let pv: Vec<Vec<f32>> = perm.iter().map(|&i| values[i].clone()).collect();
        let a = bank_with(big(), &keys, &values);
        let b = bank_with(big(), &pk, &pv);
        let q = grid(&random_rows(&mut rng, 6, dim));
        for top_k in [None, Some(2)] {
            let ra = a.readout(&q, 0.7, top_k).unwrap();
            let rb = b.readout(&q, 0.7, top_k).unwrap();
            prop_assert_eq!(ra.data(), rb.data());
        }
        let qa = q.patch(0);
        let wa = a.affinity(qa, 0.7, None).unwrap();
        let wb = b.affinity(qa, 0.7, None).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(wb.weights[j], wa.weights[i]);
        }
        for c in 0..2 {
            let lo = values.iter().map(|v| v[c]).fold(f32::INFINITY, f32::min);
            let hi = values.iter().map(|v| v[c]).fold(f32::NEG_INFINITY, f32::max);
            let ra = a.readout(&q, 0.7, None).unwrap();
            for p in ra.patches() {
                prop_assert!(p[c] >= lo - 1e-6 && p[c] <= hi + 1e-6);
            }
        }
    }
}
