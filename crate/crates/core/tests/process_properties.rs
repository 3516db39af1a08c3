use proptest::prelude::*;

use sevastyanov::rng::stream;
use sevastyanov::simulator::{individuals, process_path, sample_batch, sample_tree, Characteristic};
use sevastyanov::validation::{structural_failures, structural_kernels};
use sevastyanov::AgeMode;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_trees_satisfy_the_structural_identities(kernel in 0usize..4, seed in any::<u64>(), probe in any::<u64>()) {
        let kernels = structural_kernels().unwrap();
        let (_, k, spec) = &kernels[kernel];
        let t = sample_tree(k, spec, seed).unwrap();
        let failures = structural_failures(&t, &mut stream(probe)).unwrap();
        prop_assert!(failures.is_empty(), "{:?}", failures);
    }

    #[test]
    fn branch_and_individual_counts_agree(kernel in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let kernels = structural_kernels().unwrap();
        let (_, k, spec) = &kernels[kernel];
        prop_assert_eq!(spec.mode, AgeMode::Asymmetric);
        let t = sample_tree(k, spec, seed).unwrap();
        let z = process_path(&t, Characteristic::Simple).unwrap();
        let people = individuals(&t).unwrap();
        let mut times: Vec<f64> = z.times.iter().copied().filter(|&x| x <= spec.horizon).collect();
        times.push(spec.horizon);
        for x in times {
            let alive = people.iter().filter(|p| p.alive_at(x)).count() as i64;
            prop_assert_eq!(alive, z.eval(x), "t={}", x);
        }
    }

    #[test]
    fn same_seed_gives_identical_json(kernel in 0usize..4, seed in any::<u64>()) {
        let kernels = structural_kernels().unwrap();
        let (_, k, spec) = &kernels[kernel];
        let a = sample_tree(k, spec, seed).unwrap().to_json_string();
        let b = sample_tree(k, spec, seed).unwrap().to_json_string();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let kernels = structural_kernels().unwrap();
    let (_, k, spec) = &kernels[3];
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| sample_batch(k, spec, 99, 200)).unwrap();
    let b = four.install(|| sample_batch(k, spec, 99, 200)).unwrap();
    assert_eq!(a, b);
}
