//! Bottom-up enumeration of feature expressions with dimension-directed
//! typing and observational-equivalence pruning over an example set.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::dimensions::{OpSignature, TypeEnv};
use crate::dsl::{Expr, Value, ValueType};
use crate::interp::{EvalError, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PruningMode {
    Full,
    DimensionOnly,
    SignatureOnly,
    None,
}

impl PruningMode {
    pub const ALL: [PruningMode; 4] = [
        PruningMode::Full,
        PruningMode::DimensionOnly,
        PruningMode::SignatureOnly,
        PruningMode::None,
    ];

    pub fn uses_dimensions(self) -> bool {
        matches!(self, PruningMode::Full | PruningMode::DimensionOnly)
    }

    pub fn uses_signatures(self) -> bool {
        matches!(self, PruningMode::Full | PruningMode::SignatureOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            PruningMode::Full => "full",
            PruningMode::DimensionOnly => "dimension-only",
            PruningMode::SignatureOnly => "signature-only",
            PruningMode::None => "none",
        }
    }
}

impl fmt::Display for PruningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruningMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PruningMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown pruning mode `{s}`"))
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumConfig {
    pub max_depth: usize,
    pub mode: PruningMode,
    pub tolerance: f64,
}

impl EnumConfig {
    pub fn new(max_depth: usize) -> Self {
        EnumConfig {
            max_depth,
            mode: PruningMode::Full,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_mode(mut self, mode: PruningMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Values of an expression across the example sequence; `None` marks an
/// example on which evaluation failed.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature(pub Vec<Option<Value>>);

impl Signature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.0.iter().any(Option::is_none)
    }

    /// Componentwise equality within `tol`, with error marks aligned.
    pub fn matches(&self, other: &Signature, tol: f64) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => a.max_abs_diff(b).is_some_and(|d| d <= tol),
                _ => false,
            })
    }

    pub fn scalar(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied().flatten().and_then(|v| v.as_scalar())
    }
}

/// Which feature types a caller wants back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TypeTarget {
    Exact(ValueType),
    AnyScalar,
    Any,
}

/// An enumerated expression with its signature.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub expr: Expr,
    /// Dimensional type; `None` when the expression is ill-typed, which only
    /// happens in modes that ignore dimensions.
    pub ty: Option<ValueType>,
    pub shape: ValueType,
    pub depth: usize,
    pub signature: Signature,
}

impl Feature {
    fn fits(&self, target: TypeTarget, mode: PruningMode) -> bool {
        match target {
            TypeTarget::Any => true,
            TypeTarget::AnyScalar => self.shape.is_scalar(),
            TypeTarget::Exact(t) if mode.uses_dimensions() => self.ty == Some(t),
            TypeTarget::Exact(t) => self.shape == t.shape(),
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(Expr),
    Unary(usize, usize),
    Binary(usize, usize, usize),
}

struct Entry {
    node: Node,
    ty: Option<ValueType>,
    shape: ValueType,
    depth: usize,
    sig: Signature,
}

struct Candidate {
    node: Node,
    ty: Option<ValueType>,
    shape: ValueType,
}

/// Signature index with tolerance-aware bucketing on a fixed projection.
struct SigIndex {
    tol: f64,
    width: f64,
    weights: Vec<f64>,
    buckets: HashMap<(ValueType, u64, i64), Vec<usize>>,
}

impl SigIndex {
    fn new(len: usize, tol: f64) -> Self {
        // golden-ratio weights keep the projection injective in practice
        let weights: Vec<f64> = (0..2 * len)
            .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
            .collect();
        let width = 2.0 * tol * weights.iter().sum::<f64>();
        SigIndex {
            tol,
            width,
            weights,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, sig: &Signature) -> (u64, f64) {
        let mut mask = 0xcbf2_9ce4_8422_2325u64;
        let mut s = 0.0;
        for (i, v) in sig.0.iter().enumerate() {
            let bit = match v {
                None => 1u64,
                Some(Value::Scalar(x)) => {
                    s += self.weights[2 * i] * x;
                    2
                }
                Some(Value::Vector([x, y])) => {
                    s += self.weights[2 * i] * x + self.weights[2 * i + 1] * y;
                    3
                }
            };
            mask = (mask ^ bit).wrapping_mul(0x100_0000_01b3);
        }
        (mask, s)
    }

    fn bucket(&self, s: f64) -> i64 {
        if self.width > 0.0 {
            (s / self.width).floor() as i64
        } else {
            (s + 0.0).to_bits() as i64
        }
    }

    fn find(&self, ty: ValueType, sig: &Signature, bank: &[Entry]) -> Option<usize> {
        let (mask, s) = self.key(sig);
        let b = self.bucket(s);
        let range: &[i64] = if self.width > 0.0 { &[-1, 0, 1] } else { &[0] };
        for off in range {
            if let Some(ids) = self.buckets.get(&(ty, mask, b.saturating_add(*off))) {
                if let Some(&i) = ids.iter().find(|&&i| bank[i].sig.matches(sig, self.tol)) {
                    return Some(i);
                }
            }
        }
        None
    }

    fn insert(&mut self, ty: ValueType, sig: &Signature, id: usize) {
        let (mask, s) = self.key(sig);
        let b = self.bucket(s);
        self.buckets.entry((ty, mask, b)).or_default().push(id);
    }
}

/// The retained expressions of every depth up to `cfg.max_depth`.
pub struct FeatureBank {
    ops: Vec<Arc<OpSignature>>,
    entries: Vec<Entry>,
    mode: PruningMode,
    /// Candidates generated per depth before signature pruning.
    pub generated: Vec<usize>,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn expr(&self, i: usize) -> Expr {
        match &self.entries[i].node {
            Node::Leaf(e) => e.clone(),
            Node::Unary(op, a) => Expr::unary(self.ops[*op].name.clone(), self.expr(*a)),
            Node::Binary(op, a, b) => {
                Expr::binary(self.ops[*op].name.clone(), self.expr(*a), self.expr(*b))
            }
        }
    }

    fn feature(&self, i: usize) -> Feature {
        let e = &self.entries[i];
        Feature {
            expr: self.expr(i),
            ty: e.ty,
            shape: e.shape,
            depth: e.depth,
            signature: e.sig.clone(),
        }
    }

    /// Retained features of the requested type, in enumeration order.
    pub fn features(&self, target: TypeTarget) -> Vec<Feature> {
        (0..self.entries.len())
            .map(|i| self.feature(i))
            .filter(|f| f.fits(target, self.mode))
            .collect()
    }
}

fn leaf_signature(e: &Expr, examples: &[WorldState]) -> Signature {
    Signature(
        examples
            .iter()
            .map(|w| match e {
                Expr::Var { name, .. } => w.bindings.get(name).copied(),
                Expr::Const { value, .. } => Some(*value),
                _ => None,
            })
            .collect(),
    )
}

fn apply_signature(op: &OpSignature, args: &[&Signature]) -> Signature {
    let n = args[0].len();
    let mut out = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(args.len());
    for i in 0..n {
        buf.clear();
        let mut ok = true;
        for a in args {
            match a.0[i] {
                Some(v) => buf.push(v),
                None => ok = false,
            }
        }
        let v = if ok {
            (op.eval)(&buf).ok().filter(Value::is_finite)
        } else {
            None
        };
        out.push(v);
    }
    Signature(out)
}

#[cfg(feature = "parallel")]
fn signatures(ops: &[Arc<OpSignature>], bank: &[Entry], cands: &[Candidate]) -> Vec<Signature> {
    use rayon::prelude::*;
    cands
        .par_iter()
        .map(|c| candidate_signature(ops, bank, c))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn signatures(ops: &[Arc<OpSignature>], bank: &[Entry], cands: &[Candidate]) -> Vec<Signature> {
    cands
        .iter()
        .map(|c| candidate_signature(ops, bank, c))
        .collect()
}

fn candidate_signature(ops: &[Arc<OpSignature>], bank: &[Entry], c: &Candidate) -> Signature {
    match c.node {
        Node::Unary(op, a) => apply_signature(&ops[op], &[&bank[a].sig]),
        Node::Binary(op, a, b) => apply_signature(&ops[op], &[&bank[a].sig, &bank[b].sig]),
        Node::Leaf(_) => unreachable!("leaves are not generated as candidates"),
    }
}

fn operand_result(
    op: &OpSignature,
    mode: PruningMode,
    args: &[&Entry],
) -> Option<(Option<ValueType>, ValueType)> {
    let types: Option<Vec<ValueType>> = args.iter().map(|e| e.ty).collect();
    let ty = types.and_then(|t| op.type_of(&t).ok());
    if mode.uses_dimensions() {
        let ty = ty?;
        Some((Some(ty), ty.shape()))
    } else {
        let shapes: Vec<ValueType> = args.iter().map(|e| e.shape).collect();
        let shape = op.shape_of(&shapes).ok()?;
        Some((ty, shape))
    }
}

/// Enumerates every expression up to `cfg.max_depth`, keeping all types.
pub fn enum_bank(cfg: &EnumConfig, env: &TypeEnv, examples: &[WorldState]) -> FeatureBank {
    let mode = cfg.mode;
    let dedupe = mode.uses_signatures() && !examples.is_empty();
    let mut bank = FeatureBank {
        ops: env.ops.clone(),
        entries: Vec::new(),
        mode,
        generated: Vec::new(),
    };
    if cfg.max_depth == 0 {
        return bank;
    }
    let mut index = SigIndex::new(examples.len(), cfg.tolerance.max(0.0));
    let key = |ty: Option<ValueType>, shape: ValueType| {
        if mode.uses_dimensions() {
            ty.unwrap_or(shape)
        } else {
            shape
        }
    };

    let mut leaves: Vec<(Expr, ValueType)> = env
        .inputs
        .iter()
        .map(|(n, t)| (Expr::var(n.clone(), *t), *t))
        .collect();
    for (v, d) in &env.constants {
        leaves.push((Expr::scalar(*v, *d), ValueType::Scalar(*d)));
    }
    bank.generated.push(leaves.len());
    for (e, ty) in leaves {
        let sig = leaf_signature(&e, examples);
        // leaves are never pruned, so every input stays addressable by name
        if dedupe
            && index
                .find(key(Some(ty), ty.shape()), &sig, &bank.entries)
                .is_none()
        {
            index.insert(key(Some(ty), ty.shape()), &sig, bank.entries.len());
        }
        bank.entries.push(Entry {
            node: Node::Leaf(e),
            ty: Some(ty),
            shape: ty.shape(),
            depth: 1,
            sig,
        });
    }

    let mut level_start = 0;
    for depth in 2..=cfg.max_depth {
        let level_end = bank.entries.len();
        let mut cands = Vec::new();
        for (oi, op) in bank.ops.iter().enumerate() {
            match op.arity {
                1 => {
                    for a in level_start..level_end {
                        if let Some((ty, shape)) = operand_result(op, mode, &[&bank.entries[a]]) {
                            cands.push(Candidate {
                                node: Node::Unary(oi, a),
                                ty,
                                shape,
                            });
                        }
                    }
                }
                2 => {
                    for a in 0..level_end {
                        for b in 0..level_end {
                            if a < level_start && b < level_start {
                                continue;
                            }
                            let args = [&bank.entries[a], &bank.entries[b]];
                            if let Some((ty, shape)) = operand_result(op, mode, &args) {
                                cands.push(Candidate {
                                    node: Node::Binary(oi, a, b),
                                    ty,
                                    shape,
                                });
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        bank.generated.push(cands.len());
        let sigs = signatures(&bank.ops, &bank.entries, &cands);
        for (c, sig) in cands.into_iter().zip(sigs) {
            if dedupe {
                let k = key(c.ty, c.shape);
                if index.find(k, &sig, &bank.entries).is_some() {
                    continue;
                }
                index.insert(k, &sig, bank.entries.len());
            }
            bank.entries.push(Entry {
                node: c.node,
                ty: c.ty,
                shape: c.shape,
                depth,
                sig,
            });
        }
        level_start = level_end;
    }
    bank
}

/// Features of the `target` type up to `cfg.max_depth`.
pub fn enum_features(
    cfg: &EnumConfig,
    env: &TypeEnv,
    target: TypeTarget,
    examples: &[WorldState],
) -> Vec<Feature> {
    enum_bank(cfg, env, examples).features(target)
}

/// Signature of an arbitrary hole-free expression over `examples`.
pub fn signature_of(e: &Expr, env: &TypeEnv, examples: &[WorldState]) -> Signature {
    Signature(
        examples
            .iter()
            .map(|w| {
                crate::interp::eval_expr(e, w, env)
                    .map_err(|_: EvalError| ())
                    .ok()
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountRow {
    pub mode: PruningMode,
    pub depth: usize,
    pub count: usize,
}

/// Number of retained expressions (all types) per pruning mode.
pub fn enum_count_report(
    modes: &[PruningMode],
    depth: usize,
    tolerance: f64,
    env: &TypeEnv,
    examples: &[WorldState],
) -> Vec<CountRow> {
    modes
        .iter()
        .map(|&mode| {
            let cfg = EnumConfig {
                max_depth: depth,
                mode,
                tolerance,
            };
            CountRow {
                mode,
                depth,
                count: enum_bank(&cfg, env, examples).len(),
            }
        })
        .collect()
}

pub fn count_report_csv(rows: &[CountRow]) -> String {
    let mut out = String::from("mode,depth,count\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.mode, r.depth, r.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimensions::check_expr;
    use crate::dsl::{parse_expr, Dimension};
    use crate::worldio::{parse_demos, soccer_domain};

    fn env() -> TypeEnv {
        soccer_domain().type_env().unwrap()
    }

    fn worked_worlds() -> Vec<WorldState> {
        let text = include_str!("../../../fixtures/worked_demos.jsonl");
        parse_demos(text, &soccer_domain())
            .unwrap()
            .into_iter()
            .map(|d| d.world)
            .collect()
    }

    /// Every well-typed expression up to `depth`, built top-down without pruning.
    fn naive(env: &TypeEnv, depth: usize) -> Vec<Expr> {
        if depth == 0 {
            return Vec::new();
        }
        let mut out: Vec<Expr> = env
            .inputs
            .iter()
            .map(|(n, t)| Expr::var(n.clone(), *t))
            .collect();
        let smaller = naive(env, depth - 1);
        for op in &env.ops {
            for a in &smaller {
                if op.arity == 1 {
                    out.push(Expr::unary(op.name.clone(), a.clone()));
                    continue;
                }
                for b in &smaller {
                    out.push(Expr::binary(op.name.clone(), a.clone(), b.clone()));
                }
            }
        }
        out.retain(|e| check_expr(e, env).is_ok());
        out.sort_by_key(|e| format!("{e:?}"));
        out.dedup();
        out
    }

    #[test]
    fn depth_zero_is_empty() {
        let cfg = EnumConfig::new(0);
        assert!(enum_features(&cfg, &env(), TypeTarget::Any, &worked_worlds()).is_empty());
    }

    #[test]
    fn depth_one_has_no_scalars() {
        let cfg = EnumConfig::new(1);
        assert!(enum_features(&cfg, &env(), TypeTarget::AnyScalar, &worked_worlds()).is_empty());
        assert_eq!(
            enum_features(&cfg, &env(), TypeTarget::Any, &worked_worlds()).len(),
            4
        );
    }

    #[test]
    fn depth_three_represents_the_worked_example_features() {
        let env = env();
        let worlds = worked_worlds();
        let found = enum_features(&EnumConfig::new(3), &env, TypeTarget::AnyScalar, &worlds);
        for text in ["norm(p_r - p_b)", "norm(v_r - v_b)", "norm(v_b)"] {
            let sig = signature_of(&parse_expr(text, &env).unwrap(), &env, &worlds);
            assert!(
                found
                    .iter()
                    .any(|f| f.signature.matches(&sig, DEFAULT_TOLERANCE)),
                "{text}"
            );
        }
    }

    #[test]
    fn full_pruning_matches_naive_signature_classes() {
        let env = env();
        let worlds = worked_worlds();
        let found = enum_features(&EnumConfig::new(3), &env, TypeTarget::AnyScalar, &worlds);
        let mut classes: Vec<(ValueType, Signature)> = Vec::new();
        for e in naive(&env, 3) {
            let ty = check_expr(&e, &env).unwrap();
            if !ty.is_scalar() {
                continue;
            }
            let sig = signature_of(&e, &env, &worlds);
            if !classes
                .iter()
                .any(|(t, s)| *t == ty && s.matches(&sig, DEFAULT_TOLERANCE))
            {
                classes.push((ty, sig));
            }
        }
        assert_eq!(found.len(), classes.len());
        for f in &found {
            assert_eq!(check_expr(&f.expr, &env).ok(), f.ty);
            assert!(classes
                .iter()
                .any(|(t, s)| Some(*t) == f.ty && s.matches(&f.signature, DEFAULT_TOLERANCE)));
        }
    }

    #[test]
    fn enumeration_order_and_determinism() {
        let env = env();
        let worlds = worked_worlds();
        let a = enum_features(&EnumConfig::new(3), &env, TypeTarget::Any, &worlds);
        let b = enum_features(&EnumConfig::new(3), &env, TypeTarget::Any, &worlds);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].depth <= w[1].depth));
        assert_eq!(a[4].expr, parse_expr("norm(p_r)", &env).unwrap());
    }

    #[test]
    fn exact_targets_filter_by_dimension() {
        let env = env();
        let worlds = worked_worlds();
        let vel = enum_features(
            &EnumConfig::new(2),
            &env,
            TypeTarget::Exact(ValueType::Scalar(Dimension::VELOCITY)),
            &worlds,
        );
        assert!(!vel.is_empty());
        assert!(vel
            .iter()
            .all(|f| f.ty == Some(ValueType::Scalar(Dimension::VELOCITY))));
    }

    #[test]
    fn division_by_zero_marks_errors() {
        let env = env();
        let worlds = worked_worlds();
        let e = parse_expr("norm(p_r) / norm(v_b)", &env).unwrap();
        let sig = signature_of(&e, &env, &worlds);
        assert!(sig.0[0].is_none() && sig.0[3].is_some());
    }

    #[test]
    fn count_report_ordering() {
        let env = env();
        let worlds = worked_worlds();
        let rows = enum_count_report(&PruningMode::ALL, 3, DEFAULT_TOLERANCE, &env, &worlds);
        let c = |m| rows.iter().find(|r| r.mode == m).unwrap().count;
        eprintln!("{}", count_report_csv(&rows));
        assert!(c(PruningMode::Full) < c(PruningMode::DimensionOnly));
        assert!(c(PruningMode::DimensionOnly) < c(PruningMode::None));
        assert!(c(PruningMode::Full) < c(PruningMode::SignatureOnly));
        assert!(c(PruningMode::SignatureOnly) < c(PruningMode::None));
        let one = enum_count_report(&PruningMode::ALL, 1, DEFAULT_TOLERANCE, &env, &worlds);
        assert!(one.iter().all(|r| r.count == 4));
    }

    #[test]
    fn empty_env_counts_zero() {
        let mut env = env();
        env.inputs.clear();
        let rows = enum_count_report(&PruningMode::ALL, 3, DEFAULT_TOLERANCE, &env, &worked_worlds());
        assert!(rows.iter().all(|r| r.count == 0));
    }
}
