//! Blank-parameter synthesis: after partial evaluation every atom bounds a
//! single parameter by a constant, so an exhaustive search over the
//! midpoints between constants decides satisfiability exactly.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::dimensions::TypeEnv;
use crate::dsl::{Cmp, Policy, Pred, Threshold};
use crate::interp::{partial_eval, EvalError, ResidualPred, WorldState};
use crate::synth::{route_demos, Demonstration, Route};

/// Values for blank parameters, keyed by hole name.
pub type ParamAssignment = BTreeMap<String, f64>;

pub const DEFAULT_CAPACITY: f64 = 1e7;

/// A residual that cannot hold, found while building a system.
#[derive(Clone, Debug, PartialEq)]
pub enum Contradiction {
    /// The residual of this positive example folded to `false`.
    Positive(usize),
    /// The residual of this negative example folded to `true`.
    Negative(usize),
    EvalFailed {
        example: usize,
        positive: bool,
        error: EvalError,
    },
}

impl fmt::Display for Contradiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contradiction::Positive(i) => {
                write!(f, "positive example {i} is rejected by the fixed structure")
            }
            Contradiction::Negative(i) => {
                write!(f, "negative example {i} is accepted by the fixed structure")
            }
            Contradiction::EvalFailed {
                example,
                positive,
                error,
            } => {
                let kind = if *positive { "positive" } else { "negative" };
                write!(f, "{kind} example {example} fails to evaluate: {error}")
            }
        }
    }
}

/// Residuals that must hold on positives and fail on negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamConstraintSystem {
    pub holes: Vec<String>,
    pub positives: Vec<ResidualPred>,
    pub negatives: Vec<ResidualPred>,
    pub contradictions: Vec<Contradiction>,
}

impl ParamConstraintSystem {
    pub fn new(holes: Vec<String>) -> Self {
        ParamConstraintSystem {
            holes,
            ..Default::default()
        }
    }

    /// Adds the residual of the next positive example.
    pub fn require(&mut self, r: Result<ResidualPred, EvalError>) {
        let i = self.positives.len();
        match r {
            Ok(ResidualPred::False) => {
                self.contradictions.push(Contradiction::Positive(i));
                self.positives.push(ResidualPred::False);
            }
            Ok(r) => self.positives.push(r),
            Err(error) => {
                self.contradictions.push(Contradiction::EvalFailed {
                    example: i,
                    positive: true,
                    error,
                });
                self.positives.push(ResidualPred::False);
            }
        }
    }

    /// Adds the residual of the next negative example.
    pub fn forbid(&mut self, r: Result<ResidualPred, EvalError>) {
        let i = self.negatives.len();
        match r {
            Ok(ResidualPred::True) => {
                self.contradictions.push(Contradiction::Negative(i));
                self.negatives.push(ResidualPred::True);
            }
            Ok(r) => self.negatives.push(r),
            Err(error) => {
                self.contradictions.push(Contradiction::EvalFailed {
                    example: i,
                    positive: false,
                    error,
                });
                self.negatives.push(ResidualPred::True);
            }
        }
    }

    /// Direct check of an assignment against every residual.
    pub fn satisfied_by(&self, a: &ParamAssignment) -> bool {
        let v = |h: &str| a.get(h).copied().unwrap_or(f64::NAN);
        self.contradictions.is_empty()
            && self.positives.iter().all(|r| r.holds(&v))
            && self.negatives.iter().all(|r| !r.holds(&v))
    }

    /// Distinct comparison constants per hole, ascending.
    pub fn constants(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> =
            self.holes.iter().map(|h| (h.clone(), Vec::new())).collect();
        for r in self.positives.iter().chain(&self.negatives) {
            r.visit_atoms(&mut |c, _, h| out.entry(h.to_string()).or_default().push(c));
        }
        for cs in out.values_mut() {
            cs.sort_by(f64::total_cmp);
            cs.dedup();
        }
        out
    }
}

/// Builds the system for `b` from positive and negative worlds.
pub fn build_system(
    b: &Pred,
    pos: &[WorldState],
    neg: &[WorldState],
    env: &TypeEnv,
) -> ParamConstraintSystem {
    let mut sys = ParamConstraintSystem::new(b.holes().0);
    for w in pos {
        sys.require(partial_eval(b, w, env));
    }
    for w in neg {
        sys.forbid(partial_eval(b, w, env));
    }
    sys
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Largest distance from any comparison constant.
    MaxMinMargin,
    /// Smallest total magnitude, used for repair adjustments.
    MinAbsSum,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("unsatisfiable: {0}")]
    Unsat(String),
    #[error("candidate grid of {product:.0} points exceeds the capacity of {bound:.0}")]
    CapacityExceeded { product: f64, bound: f64 },
}

/// A decision procedure for parameter systems.
pub trait ParamSolver: Send + Sync {
    fn solve(&self, sys: &ParamConstraintSystem) -> Result<ParamAssignment, SolveError>;
}

/// The exact midpoint-grid search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSolver {
    pub objective: Objective,
    pub capacity: f64,
}

impl Default for GridSolver {
    fn default() -> Self {
        GridSolver {
            objective: Objective::MaxMinMargin,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl ParamSolver for GridSolver {
    fn solve(&self, sys: &ParamConstraintSystem) -> Result<ParamAssignment, SolveError> {
        solve_grid(sys, self.objective, self.capacity)
    }
}

pub fn solve(sys: &ParamConstraintSystem) -> Result<ParamAssignment, SolveError> {
    GridSolver::default().solve(sys)
}

/// Candidate values of a hole: midpoints of consecutive constants plus one
/// point beyond each end.
pub fn candidate_grid(constants: &[f64]) -> Vec<f64> {
    let (Some(&lo), Some(&hi)) = (constants.first(), constants.last()) else {
        return vec![0.0];
    };
    let off = (hi - lo).max(1.0) * 0.5;
    let mut out = Vec::with_capacity(constants.len() + 1);
    out.push(lo - off);
    out.extend(constants.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(hi + off);
    out
}

fn margin(constants: &[f64], v: f64) -> f64 {
    if constants.is_empty() {
        return f64::INFINITY;
    }
    let i = constants.partition_point(|c| *c < v);
    let mut m = f64::INFINITY;
    if i < constants.len() {
        m = m.min((constants[i] - v).abs());
    }
    if i > 0 {
        m = m.min((v - constants[i - 1]).abs());
    }
    m
}

/// Best of several satisfying assignments: largest minimum margin, then the
/// lexicographically smallest values in hole-name order.
pub fn rank_assignment(
    sys: &ParamConstraintSystem,
    candidates: &[ParamAssignment],
) -> Option<ParamAssignment> {
    let consts = sys.constants();
    let score = |a: &ParamAssignment| {
        a.iter()
            .map(|(h, v)| consts.get(h).map_or(f64::INFINITY, |cs| margin(cs, *v)))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best: Option<(&ParamAssignment, f64)> = None;
    for c in candidates {
        let s = score(c);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && lex_cmp(c, b).is_lt()),
        };
        if better {
            best = Some((c, s));
        }
    }
    best.map(|(a, _)| a.clone())
}

fn lex_cmp(a: &ParamAssignment, b: &ParamAssignment) -> std::cmp::Ordering {
    a.values()
        .zip(b.values())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// `value > c` when `above`, else `value < c`; `strict` false admits equality.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Lit {
    hole: usize,
    above: bool,
    strict: bool,
    c: f64,
}

impl Lit {
    fn holds(&self, v: f64) -> bool {
        match (self.above, self.strict) {
            (true, true) => v > self.c,
            (true, false) => v >= self.c,
            (false, true) => v < self.c,
            (false, false) => v <= self.c,
        }
    }
}

type Clause = Vec<Lit>;

/// Conjunctive normal form of `r` (or of its negation).
fn cnf(r: &ResidualPred, positive: bool, index: &BTreeMap<&str, usize>) -> Vec<Clause> {
    match (r, positive) {
        (ResidualPred::True, true) | (ResidualPred::False, false) => Vec::new(),
        (ResidualPred::False, true) | (ResidualPred::True, false) => vec![Vec::new()],
        (
            ResidualPred::Atom {
                constant,
                cmp,
                param,
            },
            _,
        ) => {
            // `c < k` bounds k from above the constant
            let above = (*cmp == Cmp::Lt) == positive;
            vec![vec![Lit {
                hole: index[param.as_str()],
                above,
                strict: positive,
                c: *constant,
            }]]
        }
        (ResidualPred::And(a, b), true) | (ResidualPred::Or(a, b), false) => {
            let mut out = cnf(a, positive, index);
            out.extend(cnf(b, positive, index));
            out
        }
        (ResidualPred::Or(a, b), true) | (ResidualPred::And(a, b), false) => {
            let l = cnf(a, positive, index);
            let r = cnf(b, positive, index);
            let mut out = Vec::with_capacity(l.len() * r.len());
            for x in &l {
                for y in &r {
                    let mut c = x.clone();
                    c.extend_from_slice(y);
                    out.push(c);
                }
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Bound {
    lo: f64,
    lo_strict: bool,
    hi: f64,
    hi_strict: bool,
}

impl Bound {
    fn open() -> Self {
        Bound {
            lo: f64::NEG_INFINITY,
            lo_strict: true,
            hi: f64::INFINITY,
            hi_strict: true,
        }
    }

    fn add(&mut self, l: &Lit) {
        if l.above {
            if l.c > self.lo || (l.c == self.lo && l.strict) {
                self.lo = l.c;
                self.lo_strict = l.strict;
            }
        } else if l.c < self.hi || (l.c == self.hi && l.strict) {
            self.hi = l.c;
            self.hi_strict = l.strict;
        }
    }

    fn contains(&self, v: f64) -> bool {
        (if self.lo_strict {
            v > self.lo
        } else {
            v >= self.lo
        }) && (if self.hi_strict {
            v < self.hi
        } else {
            v <= self.hi
        })
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_strict || self.hi_strict))
    }

    /// Whether every point of the bound satisfies `l`.
    fn implies(&self, l: &Lit) -> bool {
        if l.above {
            self.lo > l.c || (self.lo == l.c && (self.lo_strict || !l.strict))
        } else {
            self.hi < l.c || (self.hi == l.c && (self.hi_strict || !l.strict))
        }
    }

    /// Whether no point of the bound satisfies `l`.
    fn refutes(&self, l: &Lit) -> bool {
        let mut b = *self;
        b.add(l);
        b.is_empty()
    }
}

fn solve_grid(
    sys: &ParamConstraintSystem,
    objective: Objective,
    capacity: f64,
) -> Result<ParamAssignment, SolveError> {
    if let Some(c) = sys.contradictions.first() {
        return Err(SolveError::Unsat(c.to_string()));
    }
    let mut names: Vec<String> = sys.holes.clone();
    for r in sys.positives.iter().chain(&sys.negatives) {
        r.visit_atoms(&mut |_, _, h| {
            if !names.iter().any(|n| n == h) {
                names.push(h.to_string());
            }
        });
    }
    names.sort();
    names.dedup();
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut clauses: Vec<Clause> = Vec::new();
    for r in &sys.positives {
        clauses.extend(cnf(r, true, &index));
    }
    for r in &sys.negatives {
        clauses.extend(cnf(r, false, &index));
    }

    let consts = sys.constants();
    let n = names.len();
    let mut bounds = vec![Bound::open(); n];

    // unit propagation to a fixpoint
    loop {
        let mut changed = false;
        let mut kept = Vec::with_capacity(clauses.len());
        for mut c in clauses {
            if c.iter().any(|l| bounds[l.hole].implies(l)) {
                changed = true;
                continue;
            }
            let before = c.len();
            c.retain(|l| !bounds[l.hole].refutes(l));
            changed |= c.len() != before;
            match c.len() {
                0 => {
                    return Err(SolveError::Unsat(
                        "no parameter values satisfy every example".into(),
                    ))
                }
                1 => {
                    bounds[c[0].hole].add(&c[0]);
                    changed = true;
                }
                _ => kept.push(c),
            }
        }
        clauses = kept;
        if let Some(h) = bounds.iter().position(Bound::is_empty) {
            return Err(SolveError::Unsat(format!(
                "parameter `{}` has an empty feasible interval",
                names[h]
            )));
        }
        if !changed {
            break;
        }
    }

    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (h, name) in names.iter().enumerate() {
        let cs = consts.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let mut g = candidate_grid(cs);
        if objective == Objective::MinAbsSum {
            g.push(0.0);
            g.sort_by(f64::total_cmp);
            g.dedup();
        }
        g.retain(|v| bounds[h].contains(*v));
        if g.is_empty() {
            return Err(SolveError::Unsat(format!(
                "no candidate value for parameter `{name}`"
            )));
        }
        grids.push(g);
    }
    let product: f64 = grids.iter().map(|g| g.len() as f64).product();
    if product > capacity {
        return Err(SolveError::CapacityExceeded {
            product,
            bound: capacity,
        });
    }

    let costs: Vec<Vec<f64>> = grids
        .iter()
        .zip(&names)
        .map(|(g, name)| {
            let cs = consts.get(name).map(Vec::as_slice).unwrap_or(&[]);
            g.iter()
                .map(|v| match objective {
                    Objective::MaxMinMargin => margin(cs, *v),
                    Objective::MinAbsSum => v.abs(),
                })
                .collect()
        })
        .collect();

    let mut by_last: Vec<Vec<Clause>> = vec![Vec::new(); n];
    for c in clauses {
        let last = c
            .iter()
            .map(|l| l.hole)
            .max()
            .expect("clauses are nonempty");
        by_last[last].push(c);
    }

    let mut search = Search {
        grids: &grids,
        costs: &costs,
        by_last: &by_last,
        objective,
        current: vec![0.0; n],
        best: None,
    };
    search.dfs(
        0,
        match objective {
            Objective::MaxMinMargin => f64::INFINITY,
            Objective::MinAbsSum => 0.0,
        },
    );
    match search.best {
        Some((values, _)) => Ok(names.into_iter().zip(values).collect()),
        None => Err(SolveError::Unsat(
            "no candidate assignment satisfies every example".into(),
        )),
    }
}

struct Search<'a> {
    grids: &'a [Vec<f64>],
    costs: &'a [Vec<f64>],
    by_last: &'a [Vec<Clause>],
    objective: Objective,
    current: Vec<f64>,
    best: Option<(Vec<f64>, f64)>,
}

impl Search<'_> {
    fn combine(&self, acc: f64, cost: f64) -> f64 {
        match self.objective {
            Objective::MaxMinMargin => acc.min(cost),
            Objective::MinAbsSum => acc + cost,
        }
    }

    /// Whether a partial score can still strictly beat the incumbent.
    fn promising(&self, score: f64) -> bool {
        match (&self.best, self.objective) {
            (None, _) => true,
            (Some((_, b)), Objective::MaxMinMargin) => score > *b,
            (Some((_, b)), Objective::MinAbsSum) => score < *b,
        }
    }

    fn dfs(&mut self, h: usize, score: f64) {
        if h == self.grids.len() {
            if self.promising(score) {
                self.best = Some((self.current.clone(), score));
            }
            return;
        }
        let by_last = self.by_last;
        // clauses closing at this hole, reduced by the earlier assignment
        let mut pending: Vec<Vec<&Lit>> = Vec::new();
        for c in &by_last[h] {
            if c.iter()
                .any(|l| l.hole < h && l.holds(self.current[l.hole]))
            {
                continue;
            }
            pending.push(c.iter().filter(|l| l.hole == h).collect());
            if pending.last().is_some_and(Vec::is_empty) {
                return;
            }
        }
        for i in 0..self.grids[h].len() {
            let v = self.grids[h][i];
            let next = self.combine(score, self.costs[h][i]);
            if !self.promising(next) {
                continue;
            }
            if !pending.iter().all(|ls| ls.iter().any(|l| l.holds(v))) {
                continue;
            }
            self.current[h] = v;
            self.dfs(h + 1, next);
        }
    }
}

/// One repaired threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjustment {
    pub name: String,
    pub old: f64,
    pub delta: f64,
    pub new: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepairResult {
    pub policy: Policy,
    pub adjustments: Vec<Adjustment>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum RepairError {
    #[error("policy has holes; only complete policies can be repaired")]
    Incomplete,
    #[error("correction {index} cannot be reached: {reason}")]
    Unroutable { index: usize, reason: String },
    #[error("branch {branch}: {source}")]
    Solve { branch: usize, source: SolveError },
}

pub fn adjustments_csv(adj: &[Adjustment]) -> String {
    let mut out = String::from("name,old,delta,new\n");
    for a in adj {
        out.push_str(&format!("{},{},{},{}\n", a.name, a.old, a.delta, a.new));
    }
    out
}

/// Shifts every threshold by the smallest total adjustment that classifies
/// all corrections correctly.
pub fn repair(
    p: &Policy,
    corrections: &[Demonstration],
    env: &TypeEnv,
    capacity: f64,
) -> Result<RepairResult, RepairError> {
    if !p.is_complete() {
        return Err(RepairError::Incomplete);
    }
    let routes = route_demos(p, corrections)
        .map_err(|(index, reason)| RepairError::Unroutable { index, reason })?;
    let mut values: BTreeMap<String, f64> = BTreeMap::new();
    let mut deltas: BTreeMap<String, f64> = BTreeMap::new();
    let mut branches = p.branches.clone();
    for (i, branch) in p.branches.iter().enumerate() {
        let mut old = BTreeMap::new();
        let blank = branch.guard.map_cmps(&mut |c, e, t| {
            let t = match t {
                Threshold::Param { name, value, dim } => {
                    old.insert(name.clone(), *value);
                    Threshold::Hole {
                        name: name.clone(),
                        dim: *dim,
                    }
                }
                hole => hole.clone(),
            };
            Pred::Cmp(c, e.clone(), t)
        });
        let shift =
            |r: Result<ResidualPred, EvalError>| r.map(|r| r.map_constants(&|c, h| c - old[h]));
        let mut sys = ParamConstraintSystem::new(old.keys().cloned().collect());
        for (d, route) in corrections.iter().zip(&routes) {
            match route {
                Route::Branch(j) if *j == i => {
                    sys.require(shift(partial_eval(&blank, &d.world, env)))
                }
                Route::Branch(j) if *j < i => {}
                _ => sys.forbid(shift(partial_eval(&blank, &d.world, env))),
            }
        }
        let sol = solve_grid(&sys, Objective::MinAbsSum, capacity)
            .map_err(|source| RepairError::Solve { branch: i, source })?;
        branches[i].guard = branch.guard.map_cmps(&mut |c, e, t| {
            let t = match t {
                Threshold::Param { name, value, dim } => {
                    let delta = sol.get(name).copied().unwrap_or(0.0);
                    values.insert(name.clone(), *value);
                    deltas.insert(name.clone(), delta);
                    Threshold::Param {
                        name: name.clone(),
                        value: value + delta,
                        dim: *dim,
                    }
                }
                hole => hole.clone(),
            };
            Pred::Cmp(c, e.clone(), t)
        });
    }
    let policy = Policy {
        branches,
        fallback: p.fallback.clone(),
    };
    let adjustments = p
        .thresholds()
        .iter()
        .map(|t| {
            let name = t.name().to_string();
            let old = values[&name];
            let delta = deltas[&name];
            Adjustment {
                new: old + delta,
                name,
                old,
                delta,
            }
        })
        .collect();
    Ok(RepairResult {
        policy,
        adjustments,
    })
}
