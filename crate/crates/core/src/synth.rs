//! Expression filling, predicate search and policy assembly.

use std::collections::HashMap;

use thiserror::Error;

use crate::dimensions::{check_expr, TypeEnv};
use crate::dsl::{
    positional_name, ActionRef, Branch, Cmp, Dimension, Expr, Policy, Pred, Threshold, ValueType,
};
use crate::enumerate::{
    enum_features, EnumConfig, Feature, PruningMode, TypeTarget, DEFAULT_TOLERANCE,
};
use crate::interp::{
    eval_expr, eval_expr_with, eval_policy, eval_pred, partial_eval_with, static_truth, WorldState,
};
use crate::paramsolve::{
    GridSolver, Objective, ParamConstraintSystem, ParamSolver, SolveError, DEFAULT_CAPACITY,
};
use crate::worldio::DomainDef;

/// A labeled transition: the action chosen next in `world`.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub world: WorldState,
    pub next_action: String,
}

impl Demonstration {
    pub fn start_action(&self) -> &str {
        &self.world.start_action
    }
}

/// One transition's classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct SubProblem {
    pub start: String,
    pub target: String,
    pub positives: Vec<WorldState>,
    pub negatives: Vec<WorldState>,
}

impl SubProblem {
    pub fn label(&self) -> String {
        format!("{} -> {}", self.start, self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    /// Height of enumerated feature expressions.
    pub feature_depth: usize,
    /// Largest number of comparisons in a synthesized predicate.
    pub predicate_atoms: usize,
    pub mode: PruningMode,
    pub tolerance: f64,
    pub capacity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feature_depth: 3,
            predicate_atoms: 3,
            mode: PruningMode::Full,
            tolerance: DEFAULT_TOLERANCE,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl SynthConfig {
    fn enum_config(&self) -> EnumConfig {
        EnumConfig {
            max_depth: self.feature_depth,
            mode: self.mode,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("no policy is consistent with the demonstrations ({subproblem}): {reason}")]
    Unsat { subproblem: String, reason: String },
    #[error(transparent)]
    Capacity(SolveError),
    #[error("hole `{hole}` has no candidate expression of type {ty}")]
    EmptyCandidates { hole: String, ty: String },
    #[error("synthesized policy disagrees with demonstration {index}")]
    Inconsistent { index: usize },
}

fn unsat(subproblem: impl Into<String>, reason: impl Into<String>) -> SynthError {
    SynthError::Unsat {
        subproblem: subproblem.into(),
        reason: reason.into(),
    }
}

/// Work counters for one synthesis run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthStats {
    pub subproblems: usize,
    pub features: usize,
    pub fills: u64,
    pub systems: u64,
    pub enumeration_secs: f64,
    pub solving_secs: f64,
    pub assembly_secs: f64,
}

impl SynthStats {
    fn merge(&mut self, o: &SynthStats) {
        self.subproblems += o.subproblems;
        self.features += o.features;
        self.fills += o.fills;
        self.systems += o.systems;
        self.enumeration_secs += o.enumeration_secs;
        self.solving_secs += o.solving_secs;
        self.assembly_secs += o.assembly_secs;
    }
}

/// Wall-clock timer that reads zero where no clock is available.
struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        Clock(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

/// Splits demonstrations into one sub-problem per observed non-default transition.
pub fn divide_problem(demos: &[Demonstration], domain: &DomainDef) -> Vec<SubProblem> {
    let mut starts: Vec<&str> = Vec::new();
    for d in demos {
        if !starts.contains(&d.start_action()) {
            starts.push(d.start_action());
        }
    }
    let mut out = Vec::new();
    for s in starts {
        let from_s: Vec<&Demonstration> = demos.iter().filter(|d| d.start_action() == s).collect();
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for d in &from_s {
            if d.next_action == domain.default_action {
                continue;
            }
            match counts.iter_mut().find(|(a, _)| *a == d.next_action) {
                Some((_, n)) => *n += 1,
                None => counts.push((&d.next_action, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (target, _) in counts {
            let (pos, neg): (Vec<&Demonstration>, Vec<&Demonstration>) =
                from_s.iter().partition(|d| d.next_action == target);
            out.push(SubProblem {
                start: s.to_string(),
                target: target.to_string(),
                positives: pos.into_iter().map(|d| d.world.clone()).collect(),
                negatives: neg.into_iter().map(|d| d.world.clone()).collect(),
            });
        }
    }
    out
}

/// Placeholder type of skeleton expression holes; any scalar may fill them.
const SKELETON_TY: ValueType = ValueType::Scalar(Dimension::DIMENSIONLESS);

fn skeleton_atoms(n: usize, cache: &mut Vec<Vec<Pred>>) -> Vec<Pred> {
    while cache.len() < n {
        let size = cache.len() + 1;
        let level = if size == 1 {
            let atom = |c| {
                Pred::Cmp(
                    c,
                    Expr::hole("e", SKELETON_TY),
                    Threshold::Hole {
                        name: "p".into(),
                        dim: Dimension::DIMENSIONLESS,
                    },
                )
            };
            vec![atom(Cmp::Gt), atom(Cmp::Lt)]
        } else {
            let mut level = Vec::new();
            for and in [true, false] {
                for l in 1..=size / 2 {
                    let r = size - l;
                    for (i, a) in cache[l - 1].iter().enumerate() {
                        for (j, b) in cache[r - 1].iter().enumerate() {
                            if l == r && j < i {
                                continue;
                            }
                            let (a, b) = (a.clone(), b.clone());
                            level.push(if and { Pred::and(a, b) } else { Pred::or(a, b) });
                        }
                    }
                }
            }
            level
        };
        cache.push(level);
    }
    cache[n - 1].clone()
}

/// Gives the leaves of a skeleton distinct hole names `{prefix}e{i}` and `{prefix}p{i}`.
fn name_skeleton(p: &Pred, prefix: &str) -> Pred {
    let mut i = 0;
    p.map_cmps(&mut |c, _, _| {
        i += 1;
        Pred::Cmp(
            c,
            Expr::hole(format!("{prefix}e{i}"), SKELETON_TY),
            Threshold::Hole {
                name: format!("{prefix}p{i}"),
                dim: Dimension::DIMENSIONLESS,
            },
        )
    })
}

/// Lazy stream of predicate skeletons in increasing number of comparisons.
pub struct PredicateStream {
    max_atoms: usize,
    size: usize,
    level: std::vec::IntoIter<Pred>,
    cache: Vec<Vec<Pred>>,
    prefix: String,
}

impl Iterator for PredicateStream {
    type Item = Pred;

    fn next(&mut self) -> Option<Pred> {
        loop {
            if let Some(p) = self.level.next() {
                return Some(name_skeleton(&p, &self.prefix));
            }
            if self.size >= self.max_atoms {
                return None;
            }
            self.size += 1;
            self.level = skeleton_atoms(self.size, &mut self.cache).into_iter();
        }
    }
}

/// Skeletons with up to `max_atoms` comparisons of the form `?e > ?p` / `?e < ?p`.
pub fn enum_predicates(max_atoms: usize) -> PredicateStream {
    enum_predicates_named(max_atoms, "")
}

fn enum_predicates_named(max_atoms: usize, prefix: &str) -> PredicateStream {
    PredicateStream {
        max_atoms,
        size: 0,
        level: Vec::new().into_iter(),
        cache: Vec::new(),
        prefix: prefix.to_string(),
    }
}

fn is_skeleton_hole(name: &str) -> bool {
    name.starts_with('~')
}

/// Candidate indices per expression hole of `b`.
fn hole_candidates(
    b: &Pred,
    features: &[Feature],
    any_scalar: &dyn Fn(&str) -> bool,
) -> Result<(Vec<String>, Vec<Vec<usize>>), SynthError> {
    let holes = b.expr_holes();
    let mut names = Vec::with_capacity(holes.len());
    let mut lists = Vec::with_capacity(holes.len());
    for (name, ty) in holes {
        let list: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.signature.has_errors())
            .filter(|(_, f)| match f.ty {
                None => false,
                Some(t) if any_scalar(&name) => t.is_scalar(),
                Some(t) => t == ty,
            })
            .map(|(i, _)| i)
            .collect();
        if list.is_empty() {
            let ty = if any_scalar(&name) {
                "scalar".to_string()
            } else {
                ty.to_string()
            };
            return Err(SynthError::EmptyCandidates { hole: name, ty });
        }
        names.push(name);
        lists.push(list);
    }
    Ok((names, lists))
}

/// Odometer over candidate lists, last position fastest.
struct Odometer {
    sizes: Vec<usize>,
    pos: Vec<usize>,
    done: bool,
}

impl Odometer {
    fn new(sizes: Vec<usize>) -> Self {
        let done = sizes.contains(&0);
        Odometer {
            pos: vec![0; sizes.len()],
            sizes,
            done,
        }
    }
}

impl Iterator for Odometer {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.pos.clone();
        let mut i = self.pos.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.pos[i] += 1;
            if self.pos[i] < self.sizes[i] {
                break;
            }
            self.pos[i] = 0;
        }
        Some(out)
    }
}

/// Lazy stream of `b` with every expression hole filled from `candidates`.
pub struct FillStream<'a> {
    pred: Pred,
    names: Vec<String>,
    lists: Vec<Vec<usize>>,
    candidates: &'a [Feature],
    odometer: Odometer,
}

impl Iterator for FillStream<'_> {
    type Item = Pred;

    fn next(&mut self) -> Option<Pred> {
        let combo = self.odometer.next()?;
        let chosen: HashMap<&str, &Expr> = self
            .names
            .iter()
            .zip(&combo)
            .zip(&self.lists)
            .map(|((n, &k), list)| (n.as_str(), &self.candidates[list[k]].expr))
            .collect();
        Some(fill_pred_exprs(&self.pred, &|n| {
            chosen.get(n).map(|e| (*e).clone())
        }))
    }
}

fn fill_pred_exprs(p: &Pred, lookup: &impl Fn(&str) -> Option<Expr>) -> Pred {
    p.map_cmps(&mut |c, e, t| Pred::Cmp(c, e.fill(lookup), t.clone()))
}

/// Fills the expression holes of `b` with type-matching candidates, in
/// odometer order over the candidate list.
pub fn fill_expressions<'a>(
    b: &Pred,
    candidates: &'a [Feature],
) -> Result<FillStream<'a>, SynthError> {
    let (names, lists) = hole_candidates(b, candidates, &is_skeleton_hole)?;
    let odometer = Odometer::new(lists.iter().map(Vec::len).collect());
    Ok(FillStream {
        pred: b.clone(),
        names,
        lists,
        candidates,
        odometer,
    })
}

/// A conjunction or disjunction of `?e ⋈ ?p` atoms over distinct holes.
struct Chain {
    conjunction: bool,
    /// (expression-hole position, comparison) per atom.
    atoms: Vec<(usize, Cmp)>,
}

fn as_chain(b: &Pred, names: &[String]) -> Option<Chain> {
    fn walk(p: &Pred, conj: bool, names: &[String], out: &mut Vec<(usize, Cmp)>) -> bool {
        match p {
            Pred::And(a, c) if conj => walk(a, conj, names, out) && walk(c, conj, names, out),
            Pred::Or(a, c) if !conj => walk(a, conj, names, out) && walk(c, conj, names, out),
            Pred::Cmp(cmp, Expr::Hole { name, .. }, Threshold::Hole { .. }) => {
                match names.iter().position(|n| n == name) {
                    Some(i) if !out.iter().any(|(j, _)| *j == i) => {
                        out.push((i, *cmp));
                        true
                    }
                    _ => false,
                }
            }
            _ => false,
        }
    }
    let conjunction = !matches!(b, Pred::Or(..));
    let mut atoms = Vec::new();
    if walk(b, conjunction, names, &mut atoms) && atoms.len() == names.len() {
        Some(Chain { conjunction, atoms })
    } else {
        None
    }
}

/// For a conjunction: the negatives one atom rejects with its threshold as
/// tight as the positives allow. Disjunctions swap the roles.
fn coverage(sig: &[f64], n_pos: usize, cmp: Cmp, conjunction: bool) -> Vec<u64> {
    let (fixed, other) = if conjunction {
        sig.split_at(n_pos)
    } else {
        (&sig[n_pos..], &sig[..n_pos])
    };
    let mut bits = vec![0u64; other.len().div_ceil(64)];
    let lo = fixed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fixed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (i, &x) in other.iter().enumerate() {
        let hit = match (conjunction, cmp) {
            (true, Cmp::Gt) => x < lo,
            (true, Cmp::Lt) => x > hi,
            (false, Cmp::Gt) => x > hi,
            (false, Cmp::Lt) => x < lo,
        };
        if hit {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    bits
}

struct L2Input<'a> {
    env: &'a TypeEnv,
    pos: &'a [WorldState],
    neg: &'a [WorldState],
    features: &'a [Feature],
    capacity: f64,
}

/// Fills every expression and parameter hole of `b`; `Ok(None)` when no
/// candidate combination works.
fn l2_core(input: &L2Input, b: &Pred, stats: &mut SynthStats) -> Result<Option<Pred>, SynthError> {
    let (names, lists) = match hole_candidates(b, input.features, &is_skeleton_hole) {
        Ok(x) => x,
        Err(SynthError::EmptyCandidates { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n_pos = input.pos.len();
    let worlds: Vec<&WorldState> = input.pos.iter().chain(input.neg).collect();
    let values: Vec<Vec<f64>> = input
        .features
        .iter()
        .map(|f| {
            (0..worlds.len())
                .map(|k| f.signature.scalar(k).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();

    let chain = as_chain(b, &names);
    let mut cover_cache: HashMap<(usize, Cmp), Vec<u64>> = HashMap::new();
    let target_bits = if chain.as_ref().is_some_and(|c| c.conjunction) {
        input.neg.len()
    } else {
        n_pos
    };
    let full: Vec<u64> = (0..target_bits.div_ceil(64))
        .map(|w| {
            if (w + 1) * 64 <= target_bits {
                u64::MAX
            } else {
                (1u64 << (target_bits % 64)) - 1
            }
        })
        .collect();

    let odometer = Odometer::new(lists.iter().map(Vec::len).collect());
    for combo in odometer {
        stats.fills += 1;
        let chosen: Vec<usize> = combo.iter().zip(&lists).map(|(&k, l)| l[k]).collect();
        if let Some(ch) = &chain {
            let mut acc = vec![0u64; full.len()];
            for &(hole, cmp) in &ch.atoms {
                let f = chosen[hole];
                let bits = cover_cache
                    .entry((f, cmp))
                    .or_insert_with(|| coverage(&values[f], n_pos, cmp, ch.conjunction));
                for (a, b) in acc.iter_mut().zip(bits.iter()) {
                    *a |= *b;
                }
            }
            if acc != full {
                continue;
            }
        }
        let index: HashMap<&str, usize> = names
            .iter()
            .map(String::as_str)
            .zip(chosen.iter().copied())
            .collect();
        let mut sys = ParamConstraintSystem::new(b.holes().0);
        for (k, w) in worlds.iter().enumerate() {
            let lookup = |n: &str| index.get(n).and_then(|&f| input.features[f].signature.0[k]);
            let mut valuer = |e: &Expr| -> Result<f64, crate::interp::EvalError> {
                let v = match e {
                    Expr::Hole { name, .. } => index
                        .get(name.as_str())
                        .map(|&f| values[f][k])
                        .ok_or_else(|| crate::interp::EvalError::Hole(name.clone()))?,
                    e if e.has_holes() => eval_expr_with(e, w, input.env, &lookup)?
                        .as_scalar()
                        .ok_or(crate::interp::EvalError::ShapeFault)?,
                    e => eval_expr(e, w, input.env)?
                        .as_scalar()
                        .ok_or(crate::interp::EvalError::ShapeFault)?,
                };
                Ok(v)
            };
            let r = partial_eval_with(b, w, &mut valuer);
            if k < n_pos {
                sys.require(r);
            } else {
                sys.forbid(r);
            }
            if !sys.contradictions.is_empty() {
                break;
            }
        }
        if !sys.contradictions.is_empty() {
            continue;
        }
        stats.systems += 1;
        match (GridSolver {
            objective: Objective::MaxMinMargin,
            capacity: input.capacity,
        })
        .solve(&sys)
        {
            Ok(assignment) => {
                let filled = fill_pred_exprs(b, &|n| {
                    index.get(n).map(|&f| input.features[f].expr.clone())
                });
                let done = filled.map_cmps(&mut |c, e, t| {
                    let t = match t {
                        Threshold::Hole { name, dim } => {
                            let dim = if is_skeleton_hole(name) {
                                match check_expr(e, input.env) {
                                    Ok(ValueType::Scalar(d)) => d,
                                    _ => *dim,
                                }
                            } else {
                                *dim
                            };
                            let value = assignment.get(name).copied().unwrap_or(0.0);
                            Threshold::Param {
                                name: name.clone(),
                                value,
                                dim,
                            }
                        }
                        t => t.clone(),
                    };
                    Pred::Cmp(c, e.clone(), t)
                });
                return Ok(Some(done));
            }
            Err(SolveError::Unsat(_)) => continue,
            Err(e) => return Err(SynthError::Capacity(e)),
        }
    }
    Ok(None)
}

fn features_for(
    cfg: &SynthConfig,
    env: &TypeEnv,
    pos: &[WorldState],
    neg: &[WorldState],
) -> Vec<Feature> {
    let worlds: Vec<WorldState> = pos.iter().chain(neg).cloned().collect();
    enum_features(&cfg.enum_config(), env, TypeTarget::AnyScalar, &worlds)
}

/// Completes a predicate without predicate holes: expressions first, then
/// parameters.
pub fn l2(
    cfg: &SynthConfig,
    env: &TypeEnv,
    pos: &[WorldState],
    neg: &[WorldState],
    b: &Pred,
) -> Result<Pred, SynthError> {
    let features = features_for(cfg, env, pos, neg);
    let input = L2Input {
        env,
        pos,
        neg,
        features: &features,
        capacity: cfg.capacity,
    };
    l2_core(&input, b, &mut SynthStats::default())?.ok_or_else(|| {
        unsat(
            "predicate",
            "no expression and parameter completion separates the examples",
        )
    })
}

/// Positive and negative worlds that no feature can tell apart.
fn inseparable(pos: &[WorldState], neg: &[WorldState]) -> Option<(usize, usize)> {
    for (i, p) in pos.iter().enumerate() {
        for (j, n) in neg.iter().enumerate() {
            if p.bindings == n.bindings {
                return Some((i, j));
            }
        }
    }
    None
}

/// Fills all predicate, expression and parameter holes of one guard.
fn fill_guard(
    cfg: &SynthConfig,
    env: &TypeEnv,
    pos: &[WorldState],
    neg: &[WorldState],
    guard: &Pred,
    label: &str,
    stats: &mut SynthStats,
) -> Result<Pred, SynthError> {
    if let Some((i, j)) = inseparable(pos, neg) {
        return Err(unsat(
            label,
            format!("positive {i} and negative {j} are the same world"),
        ));
    }
    let clock = Clock::start();
    let features = features_for(cfg, env, pos, neg);
    stats.enumeration_secs += clock.secs();
    stats.features += features.len();
    let input = L2Input {
        env,
        pos,
        neg,
        features: &features,
        capacity: cfg.capacity,
    };
    let clock = Clock::start();
    let pred_holes = guard.holes().2;
    let result = if pred_holes.is_empty() {
        l2_core(&input, guard, stats)?
    } else {
        let skeletons: Vec<Vec<Pred>> = pred_holes
            .iter()
            .map(|h| enum_predicates_named(cfg.predicate_atoms, &format!("~{h}~")).collect())
            .collect();
        let mut found = None;
        for combo in Odometer::new(skeletons.iter().map(Vec::len).collect()) {
            let chosen: HashMap<&str, &Pred> = pred_holes
                .iter()
                .map(String::as_str)
                .zip(combo.iter().zip(&skeletons).map(|(&k, s)| &s[k]))
                .collect();
            let candidate = guard.fill_preds(&|n| chosen.get(n).map(|p| (*p).clone()));
            if let Some(p) = l2_core(&input, &candidate, stats)? {
                found = Some(p);
                break;
            }
        }
        found
    };
    stats.solving_secs += clock.secs();
    result.ok_or_else(|| {
        unsat(
            label,
            format!(
                "no predicate with at most {} comparisons separates the examples",
                cfg.predicate_atoms
            ),
        )
    })
}

/// Assembles solved sub-problem guards into a decision list.
pub fn make_policy(subproblems: &[SubProblem], guards: Vec<Pred>, domain: &DomainDef) -> Policy {
    let branches = subproblems
        .iter()
        .zip(guards)
        .map(|(s, g)| Branch {
            guard: Pred::and(
                Pred::ActionEq(ActionRef::Current, ActionRef::Named(s.start.clone())),
                g,
            ),
            action: s.target.clone(),
        })
        .collect();
    Policy {
        branches,
        fallback: domain.default_action.clone(),
    }
}

/// Where a demonstration must be decided for a policy shape to label it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Branch(usize),
    Fallback,
}

/// Sends each demonstration to the first branch with its label whose guard
/// is not ruled out by action tests, or to the fallback.
pub fn route_demos(p: &Policy, demos: &[Demonstration]) -> Result<Vec<Route>, (usize, String)> {
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let hit = p.branches.iter().position(|b| {
                b.action == d.next_action && static_truth(&b.guard, &d.world) != Some(false)
            });
            match hit {
                Some(j) => Ok(Route::Branch(j)),
                None if p.fallback == d.next_action => Ok(Route::Fallback),
                None => Err((
                    i,
                    format!(
                        "no branch can produce `{}` from `{}`",
                        d.next_action,
                        d.start_action()
                    ),
                )),
            }
        })
        .collect()
}

/// Result of a synthesis run.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub policy: Policy,
    pub stats: SynthStats,
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Synthesizes a policy consistent with every demonstration. With a sketch
/// only its holes are filled.
pub fn synthesize(
    cfg: &SynthConfig,
    demos: &[Demonstration],
    domain: &DomainDef,
    env: &TypeEnv,
    sketch: Option<&Policy>,
) -> Result<Synthesis, SynthError> {
    let mut stats = SynthStats::default();
    let policy = match sketch {
        None => {
            let subs = divide_problem(demos, domain);
            stats.subproblems = subs.len();
            let results = map_ordered(&subs, |s| {
                let mut st = SynthStats::default();
                let guard = Pred::Hole("~b".into());
                let r = fill_guard(
                    cfg,
                    env,
                    &s.positives,
                    &s.negatives,
                    &guard,
                    &s.label(),
                    &mut st,
                );
                (r, st)
            });
            let mut guards = Vec::with_capacity(subs.len());
            for (r, st) in results {
                stats.merge(&st);
                guards.push(r?);
            }
            let clock = Clock::start();
            let p = make_policy(&subs, guards, domain).with_positional_param_names();
            stats.assembly_secs += clock.secs();
            p
        }
        Some(sketch) => fill_sketch(cfg, demos, env, sketch, &mut stats)?,
    };
    for (i, d) in demos.iter().enumerate() {
        if eval_policy(&policy, &d.world, env).ok() != Some(d.next_action.as_str()) {
            return Err(SynthError::Inconsistent { index: i });
        }
    }
    Ok(Synthesis { policy, stats })
}

fn fill_sketch(
    cfg: &SynthConfig,
    demos: &[Demonstration],
    env: &TypeEnv,
    sketch: &Policy,
    stats: &mut SynthStats,
) -> Result<Policy, SynthError> {
    let routes = route_demos(sketch, demos)
        .map_err(|(i, reason)| unsat(format!("demonstration {i}"), reason))?;
    let n = sketch.branches.len();
    stats.subproblems = n;
    let tasks: Vec<(usize, Vec<WorldState>, Vec<WorldState>)> = (0..n)
        .map(|i| {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (d, r) in demos.iter().zip(&routes) {
                match r {
                    Route::Branch(j) if *j == i => pos.push(d.world.clone()),
                    Route::Branch(j) if *j < i => {}
                    _ => neg.push(d.world.clone()),
                }
            }
            (i, pos, neg)
        })
        .collect();
    let results = map_ordered(&tasks, |(i, pos, neg)| {
        let mut st = SynthStats::default();
        let b = &sketch.branches[*i];
        let label = format!("branch {} -> {}", i + 1, b.action);
        let r = if b.guard.has_holes() {
            fill_guard(cfg, env, pos, neg, &b.guard, &label, &mut st)
        } else {
            check_fixed_guard(&b.guard, pos, neg, env, &label).map(|_| b.guard.clone())
        };
        (r, st)
    });
    let mut branches = Vec::with_capacity(n);
    for ((r, st), b) in results.into_iter().zip(&sketch.branches) {
        stats.merge(&st);
        branches.push(Branch {
            guard: r?,
            action: b.action.clone(),
        });
    }
    let clock = Clock::start();
    let p = rename_skeleton_params(&Policy {
        branches,
        fallback: sketch.fallback.clone(),
    });
    stats.assembly_secs += clock.secs();
    Ok(p)
}

fn check_fixed_guard(
    guard: &Pred,
    pos: &[WorldState],
    neg: &[WorldState],
    env: &TypeEnv,
    label: &str,
) -> Result<(), SynthError> {
    for (i, w) in pos.iter().enumerate() {
        if !eval_pred(guard, w, env).unwrap_or(false) {
            return Err(unsat(label, format!("fixed guard rejects positive {i}")));
        }
    }
    for (i, w) in neg.iter().enumerate() {
        if eval_pred(guard, w, env).unwrap_or(true) {
            return Err(unsat(label, format!("fixed guard accepts negative {i}")));
        }
    }
    Ok(())
}

/// Parameters introduced by predicate skeletons take positional names.
fn rename_skeleton_params(p: &Policy) -> Policy {
    let mut index = 0;
    let branches = p
        .branches
        .iter()
        .map(|b| Branch {
            guard: b.guard.map_cmps(&mut |c, e, t| {
                index += 1;
                let t = match t {
                    Threshold::Param { name, value, dim } if is_skeleton_hole(name) => {
                        Threshold::Param {
                            name: positional_name(index),
                            value: *value,
                            dim: *dim,
                        }
                    }
                    t => t.clone(),
                };
                Pred::Cmp(c, e.clone(), t)
            }),
            action: b.action.clone(),
        })
        .collect();
    Policy {
        branches,
        fallback: p.fallback.clone(),
    }
}

/// Synthesizes a policy; see [`synthesize`].
pub fn l3(
    cfg: &SynthConfig,
    demos: &[Demonstration],
    domain: &DomainDef,
    sketch: Option<&Policy>,
) -> Result<Policy, SynthError> {
    let env = domain
        .type_env()
        .map_err(|e| unsat("domain", e.to_string()))?;
    synthesize(cfg, demos, domain, &env, sketch).map(|s| s.policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_policy, parse_pred, print_policy, Value};
    use crate::enumerate::signature_of;
    use crate::worldio::{parse_demos, soccer_domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env() -> TypeEnv {
        soccer_domain().type_env().unwrap()
    }

    fn worked_demos() -> Vec<Demonstration> {
        parse_demos(
            include_str!("../../../fixtures/worked_demos.jsonl"),
            &soccer_domain(),
        )
        .unwrap()
    }

    fn features(texts: &[&str], worlds: &[WorldState]) -> Vec<Feature> {
        let env = env();
        texts
            .iter()
            .map(|t| {
                let expr = crate::dsl::parse_expr(t, &env).unwrap();
                let ty = check_expr(&expr, &env).unwrap();
                Feature {
                    signature: signature_of(&expr, &env, worlds),
                    depth: expr.depth(),
                    shape: ty.shape(),
                    ty: Some(ty),
                    expr,
                }
            })
            .collect()
    }

    fn ball(v: [f64; 2]) -> WorldState {
        WorldState::new("Goto")
            .with("p_r", Value::Vector([0.0, 0.0]))
            .with("v_r", Value::Vector([0.0, 0.0]))
            .with("p_b", Value::Vector([1.0, 1.0]))
            .with("v_b", Value::Vector(v))
    }

    #[test]
    fn fill_product_sizes_and_order() {
        let w = [ball([1.0, 0.0])];
        let cands = features(&["norm(v_b)", "norm(v_r)", "norm(v_b - v_r)"], &w);
        let one = parse_pred("?e:[1,-1,0] > ?k:[1,-1,0]", &env()).unwrap();
        assert_eq!(fill_expressions(&one, &cands).unwrap().count(), 3);

        let cands = features(
            &[
                "norm(v_b)",
                "norm(v_r)",
                "norm(v_b - v_r)",
                "norm(p_b)",
                "norm(p_r)",
            ],
            &w,
        );
        let two = parse_pred(
            "?a:[1,-1,0] > ?k1:[1,-1,0] && ?b:[1,0,0] < ?k2:[1,0,0]",
            &env(),
        )
        .unwrap();
        let all: Vec<Pred> = fill_expressions(&two, &cands).unwrap().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(
            all[0],
            parse_pred(
                "norm(v_b) > ?k1:[1,-1,0] && norm(p_b) < ?k2:[1,0,0]",
                &env()
            )
            .unwrap()
        );
        assert_eq!(
            all[1],
            parse_pred(
                "norm(v_b) > ?k1:[1,-1,0] && norm(p_r) < ?k2:[1,0,0]",
                &env()
            )
            .unwrap()
        );
    }

    #[test]
    fn fill_reports_empty_candidates() {
        let cands = features(&["norm(v_b)"], &[ball([1.0, 0.0])]);
        let b = parse_pred("?e:[1,0,0] > ?k:[1,0,0]", &env()).unwrap();
        assert!(matches!(
            fill_expressions(&b, &cands),
            Err(SynthError::EmptyCandidates { .. })
        ));
    }

    #[test]
    fn l2_finds_the_ball_speed_threshold() {
        let env = env();
        let pos = [ball([0.5, 0.0]), ball([0.0, -0.651])];
        let neg = [ball([0.1, 0.0]), ball([-0.05, 0.05])];
        let b = parse_pred("?e:[1,-1,0] > ?k:[1,-1,0]", &env).unwrap();
        let p = l2(&SynthConfig::default(), &env, &pos, &neg, &b).unwrap();
        assert!(!p.has_holes());
        assert!(pos.iter().all(|w| eval_pred(&p, w, &env).unwrap()));
        assert!(neg.iter().all(|w| !eval_pred(&p, w, &env).unwrap()));
    }

    #[test]
    fn l2_cannot_separate_a_world_from_itself() {
        let env = env();
        let b = parse_pred("?e:[1,-1,0] > ?k:[1,-1,0]", &env).unwrap();
        let r = l2(
            &SynthConfig::default(),
            &env,
            &[ball([0.5, 0.0])],
            &[ball([0.5, 0.0])],
            &b,
        );
        assert!(matches!(r, Err(SynthError::Unsat { .. })));
    }

    #[test]
    fn degenerate_l2_matches_the_solver() {
        let env = env();
        let pos = [ball([0.5, 0.0])];
        let neg = [ball([0.1, 0.0])];
        let b = parse_pred("norm(v_b) > ?k:[1,-1,0]", &env).unwrap();
        let direct =
            crate::paramsolve::solve(&crate::paramsolve::build_system(&b, &pos, &neg, &env))
                .unwrap();
        let p = l2(&SynthConfig::default(), &env, &pos, &neg, &b).unwrap();
        assert_eq!(
            p,
            parse_pred(&format!("norm(v_b) > k={}", direct["k"]), &env).unwrap()
        );
    }

    #[test]
    fn divide_worked_example() {
        let subs = divide_problem(&worked_demos(), &soccer_domain());
        let labels: Vec<String> = subs.iter().map(SubProblem::label).collect();
        assert_eq!(
            labels,
            [
                "Goto -> Inter",
                "Goto -> Kick",
                "Inter -> Inter",
                "Inter -> Kick"
            ]
        );
        let kick = &subs[1];
        assert_eq!(kick.positives.len(), 2);
        assert_eq!(kick.negatives.len(), 3);
    }

    #[test]
    fn divide_edge_cases() {
        let d = |s: &str, n: &str| {
            Demonstration {
                world: ball([0.0, 0.0]).with("p_r", Value::Vector([0.0, 0.0])),
                next_action: n.into(),
            }
            .with_start(s)
        };
        assert!(
            divide_problem(&[d("Goto", "Goto"), d("Kick", "Goto")], &soccer_domain()).is_empty()
        );
        let one = divide_problem(&[d("Kick", "Inter")], &soccer_domain());
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].positives.len(), one[0].negatives.len()), (1, 0));
        let ordered = divide_problem(
            &[
                d("Goto", "Kick"),
                d("Goto", "Inter"),
                d("Goto", "Inter"),
                d("Goto", "Inter"),
            ],
            &soccer_domain(),
        );
        assert_eq!(ordered[0].target, "Inter");
        assert_eq!(ordered[1].target, "Kick");
    }

    impl Demonstration {
        fn with_start(mut self, s: &str) -> Self {
            self.world.start_action = s.into();
            self
        }
    }

    /// Every And/Or tree over two atom polarities, deduplicated up to commutation.
    fn naive_skeletons(n: usize) -> Vec<String> {
        fn trees(n: usize) -> Vec<String> {
            if n == 1 {
                return vec![">".into(), "<".into()];
            }
            let mut out = Vec::new();
            for l in 1..n {
                for a in trees(l) {
                    for b in trees(n - l) {
                        for op in ["&", "|"] {
                            let (x, y) = if a <= b { (&a, &b) } else { (&b, &a) };
                            out.push(format!("({x}{op}{y})"));
                        }
                    }
                }
            }
            out.sort();
            out.dedup();
            out
        }
        (1..=n).flat_map(trees).collect()
    }

    fn shape(p: &Pred) -> String {
        match p {
            Pred::Cmp(c, ..) => c.symbol().to_string(),
            Pred::And(a, b) | Pred::Or(a, b) => {
                let op = if matches!(p, Pred::And(..)) { "&" } else { "|" };
                let (x, y) = (shape(a), shape(b));
                let (x, y) = if x <= y { (x, y) } else { (y, x) };
                format!("({x}{op}{y})")
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn predicate_stream() {
        let first: Vec<Pred> = enum_predicates(2).collect();
        let text = |p: &Pred| p.to_string();
        assert_eq!(text(&first[0]), "?e1:[0,0,0] > ?p1:[0,0,0]");
        assert_eq!(text(&first[1]), "?e1:[0,0,0] < ?p1:[0,0,0]");
        assert!(matches!(first[2], Pred::And(..)));
        assert_eq!(first.len(), 8);
        for n in 1..=3 {
            let mut got: Vec<String> = enum_predicates(n).map(|p| shape(&p)).collect();
            let len = got.len();
            got.sort();
            got.dedup();
            assert_eq!(got.len(), len, "no duplicates at {n}");
            let mut want = naive_skeletons(n);
            want.sort();
            assert_eq!(got, want);
        }
        assert_eq!(enum_predicates(3).count(), 2 + 6 + 24);
        // a shorter stream is a prefix of a longer one
        let a: Vec<Pred> = enum_predicates(2).collect();
        let b: Vec<Pred> = enum_predicates(3).take(a.len()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn make_policy_without_subproblems_is_the_fallback() {
        assert_eq!(
            make_policy(&[], Vec::new(), &soccer_domain()),
            Policy::fallback_only("Goto")
        );
    }

    #[test]
    fn synthesizes_the_worked_example() {
        let demos = worked_demos();
        let s = synthesize(
            &SynthConfig::default(),
            &demos,
            &soccer_domain(),
            &env(),
            None,
        )
        .unwrap();
        assert_eq!(s.policy.branches.len(), 4);
        assert_eq!(s.policy.fallback, "Goto");
        for d in &demos {
            assert_eq!(
                eval_policy(&s.policy, &d.world, &env()).unwrap(),
                d.next_action
            );
        }
        let again = synthesize(
            &SynthConfig::default(),
            &demos,
            &soccer_domain(),
            &env(),
            None,
        )
        .unwrap();
        assert_eq!(print_policy(&s.policy), print_policy(&again.policy));
    }

    #[test]
    fn contradictory_demos_are_unsat() {
        let demos = parse_demos(
            include_str!("../../../fixtures/label_flip.jsonl"),
            &soccer_domain(),
        )
        .unwrap();
        let r = synthesize(
            &SynthConfig::default(),
            &demos,
            &soccer_domain(),
            &env(),
            None,
        );
        assert!(matches!(r, Err(SynthError::Unsat { .. })), "{r:?}");
    }

    fn random_world(rng: &mut ChaCha8Rng, start: &str) -> WorldState {
        let mut v = |s: f64| Value::Vector([rng.gen_range(-s..s), rng.gen_range(-s..s)]);
        WorldState::new(start)
            .with("p_r", v(300.0))
            .with("v_r", v(200.0))
            .with("p_b", v(300.0))
            .with("v_b", v(200.0))
    }

    #[test]
    fn sketch_completion_preserves_structure() {
        let env = env();
        let reference = parse_policy(include_str!("../../../fixtures/worked_policy.asp"), &env).unwrap();
        let sketch = parse_policy(include_str!("../../../fixtures/kick_thresholds.sketch"), &env).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let demos: Vec<Demonstration> = (0..60)
            .map(|i| {
                let world = random_world(&mut rng, ["Goto", "Inter", "Kick"][i % 3]);
                let next_action = eval_policy(&reference, &world, &env).unwrap().to_string();
                Demonstration { world, next_action }
            })
            .collect();
        let s = synthesize(
            &SynthConfig::default(),
            &demos,
            &soccer_domain(),
            &env,
            Some(&sketch),
        )
        .unwrap();
        for d in &demos {
            assert_eq!(
                eval_policy(&s.policy, &d.world, &env).unwrap(),
                d.next_action
            );
        }
        // only hole positions differ
        assert!(s.policy.is_complete());
        let text = print_policy(&s.policy);
        assert!(
            text.starts_with("if (a_s == Kick || norm(p_r - p_b) < k1="),
            "{text}"
        );
        assert!(text.contains("&& norm(v_r - v_b) < k2="), "{text}");
        assert!(text.contains("> k3="), "{text}");
        assert!(text.ends_with("else: Goto\n"), "{text}");
    }
}
