//! LP relaxations and branch-and-bound.

mod propagate;
pub mod simplex;
pub mod bnb;
