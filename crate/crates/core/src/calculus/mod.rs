//! Formula parsing, point and interval evaluation, and KVI results.

pub mod eval;
pub mod formula;
pub mod interval;
pub mod kvi;

pub use eval::{
    brute_force_range, brute_force_range_exhaustive, eval_interval, eval_point, EvalError, IntervalBindings,
    PointBindings, MAX_ORACLE_SYMBOLS,
};
pub use formula::{parse_formula, BinaryOp, FormulaError, FormulaExpr, Func};
pub use interval::{Interval, IntervalError};
pub use kvi::{compute_kvi, verify_result, KviError, KviResult};
