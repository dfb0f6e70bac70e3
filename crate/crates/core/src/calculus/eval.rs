use std::collections::BTreeMap;

use thiserror::Error;

use super::formula::{BinaryOp, FormulaExpr, Func};
use super::interval::Interval;

pub type PointBindings = BTreeMap<String, f64>;
pub type IntervalBindings = BTreeMap<String, Interval>;

/// Largest symbol count accepted by the grid oracle.
pub const MAX_ORACLE_SYMBOLS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
    #[error("denominator `{expr}` ranges over {range}, which touches zero")]
    DivisionRange { expr: String, range: Interval },
    #[error("clamp bounds cross in `{expr}` (lo {lo} > hi {hi})")]
    ClampBounds { expr: String, lo: f64, hi: f64 },
    #[error("non-finite result in `{expr}`")]
    NonFinite { expr: String },
    #[error("grid oracle supports at most {MAX_ORACLE_SYMBOLS} symbols, formula has {0}")]
    TooManySymbols(usize),
    #[error("grid needs at least one step")]
    EmptyGrid,
}

fn check_finite(v: f64, e: &FormulaExpr) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { expr: e.to_string() })
    }
}

pub fn eval_point(f: &FormulaExpr, bindings: &PointBindings) -> Result<f64, EvalError> {
    let v = match f {
        FormulaExpr::Number(v) => *v,
        FormulaExpr::Symbol(s) => *bindings.get(s).ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?,
        FormulaExpr::Neg(inner) => -eval_point(inner, bindings)?,
        FormulaExpr::Binary { op, lhs, rhs } => {
            let a = eval_point(lhs, bindings)?;
            let b = eval_point(rhs, bindings)?;
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero { expr: rhs.to_string() });
                    }
                    a / b
                }
            }
        }
        FormulaExpr::Call { func, args } => {
            let vals = args.iter().map(|a| eval_point(a, bindings)).collect::<Result<Vec<_>, _>>()?;
            match func {
                Func::Min => vals[0].min(vals[1]),
                Func::Max => vals[0].max(vals[1]),
                Func::Clamp => {
                    let (x, lo, hi) = (vals[0], vals[1], vals[2]);
                    if lo > hi {
                        return Err(EvalError::ClampBounds { expr: f.to_string(), lo, hi });
                    }
                    x.max(lo).min(hi)
                }
            }
        }
    };
    check_finite(v, f)
}

/// Natural interval extension of `f` over the binding box.
///
/// Succeeds only when every point of the box evaluates without error: a
/// denominator touching zero, or clamp bounds that may cross, are rejected.
pub fn eval_interval(f: &FormulaExpr, bindings: &IntervalBindings) -> Result<Interval, EvalError> {
    let r = match f {
        FormulaExpr::Number(v) => Interval::point(*v),
        FormulaExpr::Symbol(s) => *bindings.get(s).ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?,
        FormulaExpr::Neg(inner) => eval_interval(inner, bindings)?.neg(),
        FormulaExpr::Binary { op, lhs, rhs } => {
            let a = eval_interval(lhs, bindings)?;
            let b = eval_interval(rhs, bindings)?;
            match op {
                BinaryOp::Add => a.add(b),
                BinaryOp::Sub => a.sub(b),
                BinaryOp::Mul => a.mul(b),
                BinaryOp::Div => a
                    .div(b)
                    .ok_or_else(|| EvalError::DivisionRange { expr: rhs.to_string(), range: b })?,
            }
        }
        FormulaExpr::Call { func, args } => {
            let vals = args.iter().map(|a| eval_interval(a, bindings)).collect::<Result<Vec<_>, _>>()?;
            match func {
                Func::Min => vals[0].min(vals[1]),
                Func::Max => vals[0].max(vals[1]),
                Func::Clamp => {
                    let (x, lo, hi) = (vals[0], vals[1], vals[2]);
                    if lo.hi() > hi.lo() {
                        return Err(EvalError::ClampBounds { expr: f.to_string(), lo: lo.hi(), hi: hi.lo() });
                    }
                    x.max(lo).min(hi)
                }
            }
        }
    };
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::NonFinite { expr: f.to_string() })
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinaryOp),
    Min,
    Max,
    Clamp,
}

/// Postfix program over symbol slots; used to sweep large grids quickly.
struct Program {
    ops: Vec<Op>,
    slots: Vec<String>,
}

impl Program {
    fn compile(f: &FormulaExpr) -> Program {
        let slots: Vec<String> = f.free_symbols().into_iter().collect();
        Self::compile_with_slots(f, &slots)
    }

    fn compile_with_slots(f: &FormulaExpr, slots: &[String]) -> Program {
        let mut ops = Vec::with_capacity(f.node_count());
        Self::emit(f, slots, &mut ops);
        Program { ops, slots: slots.to_vec() }
    }

    fn emit(f: &FormulaExpr, slots: &[String], ops: &mut Vec<Op>) {
        match f {
            FormulaExpr::Number(v) => ops.push(Op::Const(*v)),
            FormulaExpr::Symbol(s) => ops.push(Op::Load(slots.binary_search(s).expect("slot"))),
            FormulaExpr::Neg(inner) => {
                Self::emit(inner, slots, ops);
                ops.push(Op::Neg);
            }
            FormulaExpr::Binary { op, lhs, rhs } => {
                Self::emit(lhs, slots, ops);
                Self::emit(rhs, slots, ops);
                ops.push(Op::Bin(*op));
            }
            FormulaExpr::Call { func, args } => {
                args.iter().for_each(|a| Self::emit(a, slots, ops));
                ops.push(match func {
                    Func::Min => Op::Min,
                    Func::Max => Op::Max,
                    Func::Clamp => Op::Clamp,
                });
            }
        }
    }

    /// `None` on any evaluation fault; the caller replays the point through
    /// [`eval_point`] to obtain a descriptive error.
    fn run(&self, vals: &[f64], stack: &mut Vec<f64>) -> Option<f64> {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(v) => stack.push(v),
                Op::Load(i) => stack.push(vals[i]),
                Op::Neg => {
                    let a = stack.pop()?;
                    stack.push(-a);
                }
                Op::Bin(b) => {
                    let y = stack.pop()?;
                    let x = stack.pop()?;
                    stack.push(match b {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => {
                            if y == 0.0 {
                                return None;
                            }
                            x / y
                        }
                    });
                }
                Op::Min | Op::Max => {
                    let y = stack.pop()?;
                    let x = stack.pop()?;
                    stack.push(if matches!(op, Op::Min) { x.min(y) } else { x.max(y) });
                }
                Op::Clamp => {
                    let hi = stack.pop()?;
                    let lo = stack.pop()?;
                    let x = stack.pop()?;
                    if lo > hi {
                        return None;
                    }
                    stack.push(x.max(lo).min(hi));
                }
            }
            if !stack.last()?.is_finite() {
                return None;
            }
        }
        stack.pop()
    }
}

fn grid_axis(range: Interval, steps: usize) -> Vec<f64> {
    if range.is_degenerate() || steps == 1 {
        return vec![range.lo()];
    }
    let n = steps - 1;
    (0..steps)
        .map(|i| if i == n { range.hi() } else { range.lo() + range.width() * (i as f64) / (n as f64) })
        .collect()
}

/// Subexpressions whose sign must stay fixed over the box for the endpoint
/// collapse to be exact: every divisor, and `hi - lo` of every clamp.
fn collect_guards(f: &FormulaExpr, out: &mut Vec<(FormulaExpr, bool)>) {
    match f {
        FormulaExpr::Number(_) | FormulaExpr::Symbol(_) => {}
        FormulaExpr::Neg(inner) => collect_guards(inner, out),
        FormulaExpr::Binary { op, lhs, rhs } => {
            if *op == BinaryOp::Div {
                out.push(((**rhs).clone(), true));
            }
            collect_guards(lhs, out);
            collect_guards(rhs, out);
        }
        FormulaExpr::Call { func, args } => {
            if *func == Func::Clamp {
                out.push((FormulaExpr::binary(BinaryOp::Sub, args[2].clone(), args[1].clone()), false));
            }
            args.iter().for_each(|a| collect_guards(a, out));
        }
    }
}

struct Guard {
    prog: Program,
    strict: bool,
    seen_pos: bool,
    seen_neg: bool,
}

impl Guard {
    fn observe(&mut self, vals: &[f64], stack: &mut Vec<f64>) -> bool {
        match self.prog.run(vals, stack) {
            Some(v) if v > 0.0 => self.seen_pos = true,
            Some(v) if v < 0.0 => self.seen_neg = true,
            Some(_) if !self.strict => {}
            _ => return false,
        }
        !(self.strict && self.seen_pos && self.seen_neg) && !(!self.strict && self.seen_neg)
    }
}

fn grid_range(
    f: &FormulaExpr,
    bindings: &IntervalBindings,
    grid_steps: usize,
    collapse_single_occurrence: bool,
) -> Result<Interval, EvalError> {
    if grid_steps == 0 {
        return Err(EvalError::EmptyGrid);
    }
    let prog = Program::compile(f);
    if prog.slots.len() > MAX_ORACLE_SYMBOLS {
        return Err(EvalError::TooManySymbols(prog.slots.len()));
    }
    let occurrences = f.symbol_occurrences();
    let mut axes = Vec::with_capacity(prog.slots.len());
    let mut collapsed = Vec::new();
    for s in &prog.slots {
        let range = *bindings.get(s).ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?;
        let axis = if collapse_single_occurrence && grid_steps >= 2 && occurrences[s] == 1 && !range.is_degenerate() {
            collapsed.push(s.clone());
            vec![range.lo(), range.hi()]
        } else {
            grid_axis(range, grid_steps)
        };
        axes.push(axis);
    }

    let mut guards: Vec<Guard> = Vec::new();
    if !collapsed.is_empty() {
        let mut raw = Vec::new();
        collect_guards(f, &mut raw);
        for (expr, strict) in raw {
            if expr.free_symbols().iter().any(|s| collapsed.contains(s)) {
                guards.push(Guard { prog: Program::compile_with_slots(&expr, &prog.slots), strict, seen_pos: false, seen_neg: false });
            }
        }
    }

    let mut idx = vec![0usize; axes.len()];
    let mut vals: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut stack = Vec::with_capacity(16);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    loop {
        for g in guards.iter_mut() {
            if !g.observe(&vals, &mut stack) {
                // a divisor may cross zero (or clamp bounds cross) between
                // endpoints: monotonicity is lost, enumerate every point
                return grid_range(f, bindings, grid_steps, false);
            }
        }
        match prog.run(&vals, &mut stack) {
            Some(v) => {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            None => {
                let point: PointBindings = prog.slots.iter().cloned().zip(vals.iter().copied()).collect();
                eval_point(f, &point)?;
                unreachable!("compiled program and tree evaluator disagree");
            }
        }
        // odometer
        let mut k = 0;
        loop {
            if k == axes.len() {
                return Ok(Interval::from_unchecked(lo, hi));
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                vals[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            vals[k] = axes[k][0];
            k += 1;
        }
    }
}

/// Range of `eval_point` over a uniform grid of `grid_steps` points per
/// symbol, endpoints included.
///
/// A symbol that occurs once in `f` reaches its extremes at the ends of its
/// range (every operator is monotone in each argument once the divisor sign
/// is fixed), so its axis collapses to the two endpoints. Divisor signs and
/// clamp bounds are checked at every visited point; if any may cross, the
/// full grid is enumerated instead. The result equals
/// [`brute_force_range_exhaustive`].
pub fn brute_force_range(f: &FormulaExpr, bindings: &IntervalBindings, grid_steps: usize) -> Result<Interval, EvalError> {
    grid_range(f, bindings, grid_steps, true)
}

/// Full grid enumeration with no axis reduction.
pub fn brute_force_range_exhaustive(
    f: &FormulaExpr,
    bindings: &IntervalBindings,
    grid_steps: usize,
) -> Result<Interval, EvalError> {
    grid_range(f, bindings, grid_steps, false)
}
