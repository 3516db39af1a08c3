//! Density of a symmetric genealogy with respect to Lebesgue measure on
//! its internal branch lengths, and probabilities of tree shapes.

use crate::error::{Error, Result};
use crate::genealogy::{Genealogy, GenealogyLawTables};
use crate::quadrature::adaptive_simpson;
use crate::tree::NeveuTree;

/// Largest number of internal nodes accepted by [`topology_probability`].
pub const MAX_SHAPE_INTERNAL: usize = 8;

fn require_symmetric(law: &GenealogyLawTables) -> Result<()> {
    if law.is_symmetric() {
        Ok(())
    } else {
        Err(Error::ModeMismatch)
    }
}

fn out_of_range(e: Error) -> Error {
    match e {
        Error::OutOfDomain(m) => Error::TableOutOfRange(m),
        other => other,
    }
}

/// Log density: internal nodes contribute `log g^T_{τ_x}(ℓ_x) + log ν^T_{τ_x,ℓ_x}(n_x)`,
/// leaves `log Ḡ^T_{τ_x}(T − τ_x)`.
pub fn log_density(g: &Genealogy, law: &GenealogyLawTables) -> Result<f64> {
    require_symmetric(law)?;
    if g.horizon() != law.horizon() {
        return Err(Error::IncompatibleGrid(format!("genealogy horizon {} differs from {}", g.horizon(), law.horizon())));
    }
    let tree = g.tree();
    let tau = tree.birth_times();
    let mut total = 0.0;
    for (i, node) in tree.nodes().iter().enumerate() {
        let n = node.offspring();
        let ell = node.length.expect("genealogy branches have lengths");
        if n == 0 {
            let tx = tau[i].min(law.horizon());
            let surv = law.survival(tx, 0.0, law.horizon() - tx).map_err(out_of_range)?;
            total += surv.ln();
            continue;
        }
        if n == 1 {
            return Err(Error::ZeroMassNode { children: 1 });
        }
        let mass = law.nu(tau[i], ell, n)?;
        if mass <= 0.0 {
            return Err(Error::ZeroMassNode { children: n });
        }
        let dens = law.density(tau[i], 0.0, ell).map_err(out_of_range)?;
        total += dens.ln() + mass.ln();
    }
    Ok(total)
}

/// Probability under the survival-conditioned law started at `tau` that
/// the genealogy has shape `shape`, integrating the density over the
/// internal branch lengths compatible with ultrametricity by nested
/// adaptive quadrature with absolute tolerance `tol`.
pub fn topology_probability(shape: &NeveuTree, tau: f64, law: &GenealogyLawTables, tol: f64) -> Result<f64> {
    require_symmetric(law)?;
    let internal = shape.internal_count();
    if internal > MAX_SHAPE_INTERNAL {
        return Err(Error::ShapeTooLarge { internal, limit: MAX_SHAPE_INTERNAL });
    }
    if !(0.0..law.horizon()).contains(&tau) {
        return Err(Error::TableOutOfRange(format!("tau={tau} outside [0, {})", law.horizon())));
    }
    if shape.children.len() == 1 || has_unary(shape) {
        return Ok(0.0);
    }
    // surface lookup errors from inside the integrand
    let failure = std::cell::RefCell::new(None);
    let p = shape_prob(shape, tau, law, tol, &failure);
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(p.clamp(0.0, 1.0)),
    }
}

fn has_unary(s: &NeveuTree) -> bool {
    s.children.len() == 1 || s.children.iter().any(has_unary)
}

fn shape_prob(
    shape: &NeveuTree,
    tau: f64,
    law: &GenealogyLawTables,
    tol: f64,
    failure: &std::cell::RefCell<Option<Error>>,
) -> f64 {
    let t_end = law.horizon();
    let mut record = |e: Error| {
        failure.borrow_mut().get_or_insert(out_of_range(e));
        0.0
    };
    if tau >= t_end {
        return 0.0;
    }
    if shape.is_leaf() {
        return law.survival(tau, 0.0, t_end - tau).unwrap_or_else(&mut record);
    }
    let n = shape.children.len();
    let span = t_end - tau;
    let inner_tol = tol / (2.0 * n as f64);
    let f = |ell: f64| -> f64 {
        if ell <= 0.0 || ell >= span || failure.borrow().is_some() {
            return 0.0;
        }
        let g = match law.density(tau, 0.0, ell) {
            Ok(g) => g,
            Err(e) => {
                failure.borrow_mut().get_or_insert(out_of_range(e));
                return 0.0;
            }
        };
        let mass = match law.nu(tau, ell, n) {
            Ok(m) => m,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return 0.0;
            }
        };
        if g == 0.0 || mass == 0.0 {
            return 0.0;
        }
        let mut prod = g * mass;
        for c in &shape.children {
            prod *= shape_prob(c, tau + ell, law, inner_tol, failure);
            if prod == 0.0 {
                break;
            }
        }
        prod
    };
    adaptive_simpson(&f, 0.0, span, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::{solve_ht, Builder};
    use crate::kernel::Kernel;
    use crate::solver::{conditional_gf, solve_ds_reduced, solve_extinction, solve_gf_reduced, uniform, GridSpec};
    use crate::tree::AgeMode;

    fn law_for(k: &Kernel, t: f64, n: usize) -> GenealogyLawTables {
        let grid = GridSpec::new(t, n, uniform(0.0, 1.0, 21));
        let p0 = solve_extinction(k, AgeMode::Symmetric, &grid).unwrap();
        let ft = solve_gf_reduced(k, AgeMode::Symmetric, &grid, &p0).unwrap();
        let et = conditional_gf(&ft, &p0).unwrap();
        let ds = solve_ds_reduced(k, AgeMode::Symmetric, &grid, &p0).unwrap();
        let mut law = GenealogyLawTables::new(ds, p0).unwrap();
        let probes: Vec<usize> = (0..n - 2).step_by(n / 8).collect();
        law.nu = Some(solve_ht(k, &et, &law, &probes).unwrap());
        law
    }

    fn cherry(ell: f64, t: f64) -> Genealogy {
        let mut b = Builder::default();
        let r = b.push(None, ell, 0.0, 2);
        b.push(Some(r), t - ell, 0.0, 0);
        b.push(Some(r), t - ell, 0.0, 0);
        b.finish(0.0, 0.0, AgeMode::Symmetric, t)
    }

    #[test]
    fn single_leaf_density_and_probability() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let law = law_for(&k, 1.0, 128);
        let mut b = Builder::default();
        b.push(None, 1.0, 0.0, 0);
        let g = b.finish(0.0, 0.0, AgeMode::Symmetric, 1.0);
        let expect = law.survival(0.0, 0.0, 1.0).unwrap();
        assert!((log_density(&g, &law).unwrap() - expect.ln()).abs() < 1e-12);
        let p = topology_probability(&NeveuTree::leaf(), 0.0, &law, 1e-6).unwrap();
        assert!((p - expect).abs() < 1e-12);
    }

    #[test]
    fn cherry_density_factorizes() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let law = law_for(&k, 1.0, 128);
        let ell = 0.3;
        let expect = law.density(0.0, 0.0, ell).unwrap().ln()
            + law.nu(0.0, ell, 2).unwrap().ln()
            + 2.0 * law.survival(ell, 0.0, 1.0 - ell).unwrap().ln();
        assert!((log_density(&cherry(ell, 1.0), &law).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn unary_and_oversized_shapes() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let law = law_for(&k, 1.0, 64);
        let mut b = Builder::default();
        let r = b.push(None, 0.5, 0.0, 1);
        b.push(Some(r), 0.5, 0.0, 0);
        let g = b.finish(0.0, 0.0, AgeMode::Symmetric, 1.0);
        assert!(matches!(log_density(&g, &law), Err(Error::ZeroMassNode { children: 1 })));
        let mut big = NeveuTree::leaf();
        for _ in 0..9 {
            big = NeveuTree::node(vec![big, NeveuTree::leaf()]);
        }
        assert!(matches!(
            topology_probability(&big, 0.0, &law, 1e-6),
            Err(Error::ShapeTooLarge { internal: 9, limit: 8 })
        ));
    }

    #[test]
    fn shape_masses_are_a_subprobability() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let law = law_for(&k, 1.0, 128);
        let mut total = 0.0;
        for leaves in 1..=3 {
            for s in NeveuTree::all_with_leaves(leaves) {
                let p = topology_probability(&s, 0.0, &law, 1e-6).unwrap();
                assert!((0.0..=1.0).contains(&p));
                total += p;
            }
        }
        assert!(total < 1.0 + 1e-3 && total > 0.5, "{total}");
    }
}
