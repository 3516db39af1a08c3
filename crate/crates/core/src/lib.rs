//! Symmetric and asymmetric branching trees marked with birth times and
//! ages, the Sevast'yanov processes they induce, numerical solvers for
//! the associated generating-function integral equations, and reduced
//! genealogies of the branches extant at a horizon.

pub mod error;
pub mod genealogy;
pub mod kernel;
pub mod label;
pub mod newick;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod solver;
pub mod stats;
pub mod tree;
pub mod validation;

pub use error::{Error, Result};
pub use genealogy::{Genealogy, GenealogyLawTables};
pub use kernel::{Kernel, KernelConfig, LengthLaw, RateArgument, RateFunction};
pub use label::{relative_rank, Label, StoppingLine};
pub use tree::{AgeMode, BranchingTree, NeveuTree};
