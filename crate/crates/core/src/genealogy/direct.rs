//! Direct simulation of genealogies by thinning offspring with their
//! survival probabilities, without generating the underlying tree.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genealogy::{Builder, Genealogy};
use crate::kernel::Kernel;
use crate::label::Label;
use crate::rng::{branch_stream, replicate_seed};
use crate::simulator::SimSpec;
use crate::solver::{SolutionTable, EPS_COND};
use crate::tree::AgeMode;

/// Rejections allowed per genealogical branch before giving up.
pub const RESTART_CAP: usize = 1_000_000;

/// Samples one genealogy under the survival-conditioned law started at
/// `(spec.tau, spec.alpha)` with horizon `spec.horizon`. `p0` must hold
/// extinction probabilities at that horizon.
///
/// Each genealogical branch follows its lineage through births where
/// only one offspring has extant progeny. A draw with no surviving
/// offspring rejects the lineage segment started at the last point known
/// to survive (the branch start or the last single survivor).
pub fn simulate_genealogy(kernel: &Kernel, spec: &SimSpec, p0: &SolutionTable, seed: u64) -> Result<Genealogy> {
    let t_end = spec.horizon;
    if p0.grid().horizon != t_end {
        return Err(Error::IncompatibleGrid(format!(
            "extinction table horizon {} differs from {t_end}",
            p0.grid().horizon
        )));
    }
    if !(spec.tau < t_end) {
        return Err(Error::OutOfDomain(format!("tau={} must be below T={t_end}", spec.tau)));
    }
    let surv = |tau: f64, alpha: f64| -> Result<f64> { Ok((1.0 - p0.p0_at(tau, alpha)?).clamp(0.0, 1.0)) };
    let q = surv(spec.tau, spec.alpha)?;
    if q <= EPS_COND {
        return Err(Error::ConditioningDegenerate { tau: spec.tau, alpha: spec.alpha, p0: 1.0 - q });
    }
    let mut b = Builder::default();
    // (genealogical label, parent index, start time, start age)
    let mut stack = vec![(Label::root(), None::<usize>, spec.tau, spec.alpha)];
    while let Some((label, parent, tau_s, alpha_s)) = stack.pop() {
        if b.len() >= spec.caps.max_branches {
            return Err(Error::RecursionCap(spec.caps.max_branches));
        }
        let mut rng = branch_stream(seed, &label);
        let (mut tau_c, mut alpha_c) = (tau_s, alpha_s);
        let mut restarts = 0usize;
        let (length, kids) = loop {
            let l = kernel.sample_length(tau_c, alpha_c, &mut rng)?;
            let birth = tau_c + l;
            if birth >= t_end {
                break (t_end - tau_s, Vec::new());
            }
            let n = kernel.sample_offspring(tau_c, alpha_c, l, &mut rng);
            let first_age = match spec.mode {
                AgeMode::Asymmetric => alpha_c + l,
                AgeMode::Symmetric => 0.0,
            };
            let (first, others) = if n == 0 {
                (false, 0)
            } else {
                let first = rng.random_bool(surv(birth, first_age)?);
                let q0 = surv(birth, 0.0)?;
                let others = if n > 1 && q0 > 0.0 {
                    Binomial::new((n - 1) as u64, q0).expect("valid binomial").sample(&mut rng) as usize
                } else {
                    0
                };
                (first, others)
            };
            match usize::from(first) + others {
                0 => {
                    restarts += 1;
                    if restarts > RESTART_CAP {
                        return Err(Error::ConditioningDegenerate {
                            tau: tau_c,
                            alpha: alpha_c,
                            p0: 1.0 - surv(tau_c, alpha_c)?,
                        });
                    }
                }
                1 => {
                    tau_c = birth;
                    alpha_c = if first { first_age } else { 0.0 };
                    restarts = 0;
                }
                _ => {
                    let mut kids = Vec::with_capacity(usize::from(first) + others);
                    if first {
                        kids.push((birth, first_age));
                    }
                    kids.extend(std::iter::repeat_n((birth, 0.0), others));
                    break (birth - tau_s, kids);
                }
            }
        };
        let idx = b.push(parent, length, alpha_s, kids.len());
        for (k, &(t, a)) in kids.iter().enumerate().rev() {
            stack.push((label.child(k as u32 + 1), Some(idx), t, a));
        }
    }
    Ok(b.finish(spec.tau, spec.alpha, spec.mode, t_end))
}

/// `replicates` independent genealogies, identical for any thread count.
pub fn simulate_genealogy_batch(
    kernel: &Kernel,
    spec: &SimSpec,
    p0: &SolutionTable,
    seed: u64,
    replicates: usize,
) -> Result<Vec<Genealogy>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| simulate_genealogy(kernel, spec, p0, replicate_seed(seed, r)))
        .collect()
}
