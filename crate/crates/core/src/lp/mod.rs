//! Linear programming and the structure-selection programs built on it.

pub mod simplex;
pub mod structure;

pub use simplex::{solve_lp, Constraint, Goal, LinearProgram, LpSolution, Sense};
pub use structure::{marginals_feasible, min_ssd_structure, minimax_structure, reduce_constraints, LPConfig, MarginalConstraints, StructureSolution};
