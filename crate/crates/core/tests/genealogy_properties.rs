use proptest::prelude::*;

use sevastyanov::genealogy::{log_density, simulate_genealogy_batch, Genealogy, GenealogyLawTables};
use sevastyanov::newick::parse_newick;
use sevastyanov::simulator::{extant_summary, sample_tree, SimSpec};
use sevastyanov::solver::{solve_extinction, uniform, GridSpec};
use sevastyanov::{AgeMode, Kernel, RateArgument, RateFunction};

fn age_kernel() -> Kernel {
    Kernel::birth_death(RateFunction::exp_decay(1.5, 0.5, RateArgument::Age), RateFunction::constant(0.4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn asymmetric_genealogical_ages(seed in any::<u64>()) {
        let spec = SimSpec::new(0.0, 0.4, 2.0, AgeMode::Asymmetric);
        let t = sample_tree(&age_kernel(), &spec, seed).unwrap();
        let Ok(g) = Genealogy::from_tree(&t, 2.0) else { return Ok(()) };
        let gt = g.tree();
        prop_assert_eq!(g.alpha_t()[0], 0.4);
        for (i, n) in gt.nodes().iter().enumerate() {
            if n.parent.is_some() && n.label.rank() > 1 {
                prop_assert_eq!(g.alpha_t()[i], 0.0);
            }
        }
        // children of the least common ancestor carry its end age iff their
        // original rank is 1
        let summary = extant_summary(&t, 2.0).unwrap().unwrap();
        let lca = t.find(&summary.lca).unwrap();
        let lca_end = t.birth_ages()[lca] + t.node(lca).length.unwrap();
        let kids: Vec<usize> = gt.children(0).collect();
        prop_assert_eq!(kids.len(), summary.n_genealogy);
        for (&gi, label) in kids.iter().zip(&summary.lca_children_with_progeny) {
            let expected = if label.rank() == 1 { lca_end } else { 0.0 };
            prop_assert_eq!(g.alpha_t()[gi], expected);
        }
    }

    #[test]
    fn json_and_newick_round_trips(seed in any::<u64>()) {
        let k = Kernel::birth_death_constant(1.0, 0.3).unwrap();
        let spec = SimSpec::new(0.0, 0.0, 2.0, AgeMode::Symmetric);
        let t = sample_tree(&k, &spec, seed).unwrap();
        let Ok(g) = Genealogy::from_tree(&t, 2.0) else { return Ok(()) };
        prop_assert_eq!(Genealogy::from_json_str(&g.to_json_string()).unwrap(), g.clone());
        let parsed = parse_newick(&g.to_newick(None)).unwrap();
        prop_assert_eq!(parsed.leaf_count(), g.leaf_count());
        prop_assert!((parsed.height() - 2.0).abs() < 1e-9);
    }
}

#[test]
fn direct_batches_do_not_depend_on_thread_count() {
    let k = age_kernel();
    let grid = GridSpec::new(2.0, 128, uniform(0.0, 1.0, 3)).with_alpha_grid(uniform(0.0, 4.0, 17));
    let p0 = solve_extinction(&k, AgeMode::Asymmetric, &grid).unwrap();
    let spec = SimSpec::new(0.0, 0.0, 2.0, AgeMode::Asymmetric);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| simulate_genealogy_batch(&k, &spec, &p0, 3, 300)).unwrap();
    let b = four.install(|| simulate_genealogy_batch(&k, &spec, &p0, 3, 300)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|g| g.is_ultrametric(1e-9) && !g.has_unary()));
}

#[test]
fn sampled_genealogies_have_finite_density() {
    let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
    let law = GenealogyLawTables::solve(&k, &GridSpec::new(1.0, 128, uniform(0.0, 1.0, 21)), 8).unwrap();
    let spec = SimSpec::new(0.0, 0.0, 1.0, AgeMode::Symmetric);
    let gs = simulate_genealogy_batch(&k, &spec, law.p0(), 8, 200).unwrap();
    for g in gs {
        let d = log_density(&g, &law).unwrap();
        assert!(d.is_finite(), "{}", g.to_newick(None));
    }
}
