//! Whole-micrograph enhancement, method benchmarking and session planning.

pub mod eval;
pub mod plan;
pub mod tile;

pub use eval::{evaluate, EvalItem, EvalReport, EvalSet, Method, MethodReport};
pub use plan::{plan_rescan, time_ratio, Decision, RescanPlan};
pub use tile::{enhance_micrograph, seam_statistic, tile_core, SeamStats, TilePlan, TileSpec};
