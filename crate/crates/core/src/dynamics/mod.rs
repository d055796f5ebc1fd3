//! The per-worker physics engine: collision detection, MLCP assembly, projected Gauss-Seidel,
//! and time integration.

pub mod collision;
pub mod engine;
pub mod integrate;
pub mod mlcp;
pub mod pgs;

pub use collision::{detect_collisions, detect_collisions_filtered};
pub use engine::{collide_scene, jointed_pairs, Engine, StepStats};
pub use integrate::{integrate, integrate_body};
pub use mlcp::{
    assemble_mlcp, Assembly, BodySlotInput, ImpulseCache, MlcpProblem, RowKind, SolverConfig,
    SystemMatrix,
};
pub use pgs::{residual, solve_pgs, solve_pgs_observed, SolveResult, SolverError};
