//! Grounding natural-language commands into LTL over finite traces from
//! demonstrations only.

pub mod automata;
pub mod dataset;
pub mod eval;
pub mod ltl;
pub mod model;
pub mod planner;
pub mod trainer;
pub mod world;
