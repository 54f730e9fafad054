use ldips::dimensions::TypeEnv;
use ldips::dsl::{Dimension, Value};
use ldips::enumerate::{
    enum_features, EnumConfig, Feature, PruningMode, Signature, TypeTarget, DEFAULT_TOLERANCE,
};
use ldips::interp::WorldState;
use ldips::worldio::{DomainDef, InputDef, InputKind};
use proptest::prelude::*;

fn dims() -> Vec<Dimension> {
    vec![
        Dimension::LENGTH,
        Dimension::VELOCITY,
        Dimension::DIMENSIONLESS,
        Dimension::new(0, 1, 0),
    ]
}

pub fn fuzz_env() -> impl Strategy<Value = TypeEnv> {
    let input = (prop::bool::ANY, prop::sample::select(dims()));
    prop::collection::vec(input, 1..=3).prop_map(|defs| {
        let domain = DomainDef {
            name: "fuzz".into(),
            actions: vec!["A".into()],
            default_action: "A".into(),
            inputs: defs
                .into_iter()
                .enumerate()
                .map(|(i, (vector, dim))| InputDef {
                    name: format!("x{i}"),
                    kind: if vector {
                        InputKind::Vector
                    } else {
                        InputKind::Scalar
                    },
                    dim,
                })
                .collect(),
            operators: ["abs", "sin", "cos", "norm", "+", "-", "*", "/", "dist"]
                .map(String::from)
                .to_vec(),
            constants: Vec::new(),
        };
        domain.type_env().unwrap()
    })
}

pub fn worlds(env: &TypeEnv) -> impl Strategy<Value = Vec<WorldState>> {
    let inputs: Vec<(String, bool)> = env
        .inputs
        .iter()
        .map(|(n, t)| (n.clone(), !t.is_scalar()))
        .collect();
    let value = -5i32..=5;
    let world = prop::collection::vec((value.clone(), value), inputs.len()).prop_map(move |vals| {
        let mut w = WorldState::new("A");
        for ((name, vector), (a, b)) in inputs.iter().zip(vals) {
            let v = if *vector {
                Value::Vector([a as f64, b as f64])
            } else {
                Value::Scalar(a as f64 / 2.0)
            };
            w = w.with(name.clone(), v);
        }
        w
    });
    prop::collection::vec(world, 1..=4)
}

fn key(sig: &Signature) -> f64 {
    sig.0
        .iter()
        .flatten()
        .map(|v| match v {
            Value::Scalar(x) => *x,
            Value::Vector([x, _]) => *x,
        })
        .next()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Full-pruning features grouped by type and sorted by a projection for
/// windowed lookup.
fn index(full: &[Feature]) -> Vec<(Option<ldips::dsl::ValueType>, f64, &Signature)> {
    let mut out: Vec<_> = full
        .iter()
        .map(|f| (f.ty, key(&f.signature), &f.signature))
        .collect();
    out.sort_by(|a, b| {
        format!("{:?}", a.0)
            .cmp(&format!("{:?}", b.0))
            .then(a.1.total_cmp(&b.1))
    });
    out
}

/// A fuzzed environment with an example set over it.
pub fn case() -> impl Strategy<Value = (TypeEnv, Vec<WorldState>)> {
    fuzz_env().prop_flat_map(|env| {
        let w = worlds(&env);
        (Just(env), w)
    })
}

/// Every typed expression enumerated without pruning has a signature-equal
/// expression of the same type in the fully pruned output.
pub fn check_representatives(env: &TypeEnv, examples: &[WorldState]) -> Result<(), TestCaseError> {
    let depth = 3;
    let full = enum_features(&EnumConfig::new(depth), env, TypeTarget::Any, examples);
    let none = enum_features(
        &EnumConfig::new(depth).with_mode(PruningMode::None),
        env,
        TypeTarget::Any,
        examples,
    );
    let idx = index(&full);
    for f in none.iter().filter(|f| f.ty.is_some()) {
        let k = key(&f.signature);
        let found = idx.iter().any(|(ty, fk, sig)| {
            *ty == f.ty
                && (k == *fk || (k - fk).abs() <= DEFAULT_TOLERANCE)
                && sig.matches(&f.signature, DEFAULT_TOLERANCE)
        });
        prop_assert!(found, "no representative for {}", f.expr);
    }
    Ok(())
}
