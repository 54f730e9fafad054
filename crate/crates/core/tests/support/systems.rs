use ldips::dimensions::TypeEnv;
use ldips::dsl::{parse_pred, Dimension, Pred, Threshold, Value};
use ldips::interp::{eval_pred, WorldState};
use ldips::paramsolve::{build_system, solve, ParamConstraintSystem, SolveError};
use ldips::worldio::{DomainDef, InputDef, InputKind};
use proptest::prelude::*;

pub fn env() -> TypeEnv {
    DomainDef {
        name: "grid".into(),
        actions: vec!["A".into()],
        default_action: "A".into(),
        inputs: (0..3)
            .map(|i| InputDef {
                name: format!("x{i}"),
                kind: InputKind::Scalar,
                dim: Dimension::DIMENSIONLESS,
            })
            .collect(),
        operators: ["+", "-"].map(String::from).to_vec(),
        constants: Vec::new(),
    }
    .type_env()
    .unwrap()
}

// World values are multiples of 0.5 in [-5, 5], so any satisfying region of
// a hole contains one of these points.
fn dense_points() -> Vec<f64> {
    (-48..48).map(|i| i as f64 * 0.25 + 0.125).collect()
}

fn oracle_sat(sys: &ParamConstraintSystem) -> bool {
    let pts = dense_points();
    let n = sys.holes.len();
    let mut idx = vec![0usize; n];
    loop {
        let a = sys
            .holes
            .iter()
            .cloned()
            .zip(idx.iter().map(|&i| pts[i]))
            .collect();
        if sys.satisfied_by(&a) {
            return true;
        }
        let mut h = 0;
        loop {
            if h == n {
                return false;
            }
            idx[h] += 1;
            if idx[h] < pts.len() {
                break;
            }
            idx[h] = 0;
            h += 1;
        }
    }
}

fn atom() -> impl Strategy<Value = (&'static str, bool)> {
    (
        prop::sample::select(vec!["x0", "x1", "x2", "x0 + x1", "x1 - x2"]),
        prop::bool::ANY,
    )
}

// Up to three comparisons, each with its own hole, joined by random
// connectives with an optional grouping of the last two.
pub fn pred_text() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(atom(), 1..=3),
        prop::collection::vec(prop::bool::ANY, 2),
        prop::bool::ANY,
    )
        .prop_map(|(atoms, ands, group)| {
            let parts: Vec<String> = atoms
                .iter()
                .enumerate()
                .map(|(i, (f, gt))| {
                    format!("{f} {} ?p{}:[0,0,0]", if *gt { ">" } else { "<" }, i + 1)
                })
                .collect();
            let op = |and: bool| if and { " && " } else { " || " };
            match parts.len() {
                1 => parts[0].clone(),
                2 => format!("{}{}{}", parts[0], op(ands[0]), parts[1]),
                _ if group => format!(
                    "{}{}({}{}{})",
                    parts[0],
                    op(ands[0]),
                    parts[1],
                    op(ands[1]),
                    parts[2]
                ),
                _ => format!(
                    "{}{}{}{}{}",
                    parts[0],
                    op(ands[0]),
                    parts[1],
                    op(ands[1]),
                    parts[2]
                ),
            }
        })
}

pub fn world() -> impl Strategy<Value = WorldState> {
    prop::collection::vec(-10i32..=10, 3).prop_map(|v| {
        v.iter()
            .enumerate()
            .fold(WorldState::new("A"), |w, (i, x)| {
                w.with(format!("x{i}"), Value::Scalar(*x as f64 / 2.0))
            })
    })
}

/// A random predicate over up to three holes with up to six positive and
/// six negative worlds.
pub fn case() -> impl Strategy<Value = (String, Vec<WorldState>, Vec<WorldState>)> {
    (
        pred_text(),
        prop::collection::vec(world(), 0..=6),
        prop::collection::vec(world(), 0..=6),
    )
}

/// The grid solver's answer is verified directly when SAT and confirmed by
/// the dense oracle when UNSAT.
pub fn check_solver(
    text: &str,
    pos: &[WorldState],
    neg: &[WorldState],
) -> Result<(), TestCaseError> {
    let env = env();
    let pred = parse_pred(text, &env).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
    let sys = build_system(&pred, pos, neg, &env);
    match solve(&sys) {
        Ok(a) => {
            let filled = pred.map_cmps(&mut |c, e, t| {
                let t = match t {
                    Threshold::Hole { name, dim } => Threshold::Param {
                        name: name.clone(),
                        value: a[name],
                        dim: *dim,
                    },
                    t => t.clone(),
                };
                Pred::Cmp(c, e.clone(), t)
            });
            for w in pos {
                prop_assert_eq!(
                    eval_pred(&filled, w, &env).ok(),
                    Some(true),
                    "{}: positive rejected",
                    text
                );
            }
            for w in neg {
                prop_assert_eq!(
                    eval_pred(&filled, w, &env).ok(),
                    Some(false),
                    "{}: negative accepted",
                    text
                );
            }
        }
        Err(SolveError::Unsat(_)) => {
            prop_assert!(!oracle_sat(&sys), "{}: oracle found a solution", text)
        }
        Err(e) => prop_assert!(false, "{}: {}", text, e),
    }
    Ok(())
}
