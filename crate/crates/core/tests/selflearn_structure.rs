mod common;

use advsl::model::Arch;
use advsl::selflearn::{
    merge_selection, select_balanced, self_learn, RetrainMode, SelfLearnConfig,
};
use advsl::textdata::{Dataset, Example};
use advsl::train::train;
use common::{check_self_learning_run as check_run, small_benchmark};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn structural_invariants_hold_across_settings() {
    for (seed, n_u, k_t, mode) in [
        (0, 150, 50, RetrainMode::Continue),
        (1, 150, 7, RetrainMode::Continue),
        (2, 60, 40, RetrainMode::FromScratch),
        (3, 200, 1, RetrainMode::Continue),
    ] {
        check_run(seed, n_u, k_t, mode);
    }
}

#[test]
fn empty_pool_is_plain_training() {
    let (cfg, prep) = small_benchmark(4, 10);
    let empty = Dataset::new("empty", prep.a_train.num_classes);
    let out = self_learn(
        prep.params.clone(),
        &prep.a_train,
        &empty,
        &prep.a_val,
        None,
        &cfg.train,
        &SelfLearnConfig::default(),
    )
    .unwrap();
    let (plain, _) = train(prep.params.clone(), &prep.a_train, &prep.a_val, &cfg.train).unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.selections.is_empty());
    assert_eq!(out.params.checksum(), plain.checksum());
}

fn random_pool(r: &mut rand_chacha::ChaCha8Rng, n: usize, vocab: usize) -> Dataset {
    let mut pool = Dataset::new("pool", 3);
    for _ in 0..n {
        // Repeat an earlier item now and then to create exact confidence ties.
        if !pool.examples.is_empty() && r.random_bool(0.15) {
            let j = r.random_range(0..pool.examples.len());
            let ids = pool.examples[j].token_ids.clone();
            pool.examples.push(Example::unlabeled(ids));
        } else {
            pool.examples
                .push(Example::unlabeled(common::random_ids(r, vocab, 1, 12)));
        }
    }
    pool
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn selection_matches_brute_force(seed in 0u64..1_000_000, n in 1usize..=200, k_t in 1usize..80, mlp in any::<bool>(), max_len in 1usize..16) {
        let arch = if mlp { Arch::Mlp1 } else { Arch::Linear };
        let params = common::random_model(arch, 25, 6, 3, 8, seed);
        let mut r = common::rng(seed ^ 0xabc);
        let pool = random_pool(&mut r, n, 25);
        let sel = select_balanced(&params, &pool, k_t, max_len, 1).unwrap();
        let got: Vec<Vec<usize>> = sel.per_class.iter().map(|v| v.iter().map(|x| x.0).collect()).collect();
        prop_assert_eq!(&got, &common::oracle_select(&params, &pool, k_t, max_len));

        let mut labeled = Dataset::new("L", 3);
        let mut rest = pool.clone();
        merge_selection(&mut labeled, &mut rest, &sel);
        prop_assert_eq!(labeled.len(), sel.total());
        prop_assert_eq!(labeled.len() + rest.len(), n);
    }
}
