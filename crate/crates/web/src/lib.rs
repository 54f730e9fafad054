//! Browser bindings: score a policy over the start grid, count enumerated
//! features, and synthesize a policy from pasted demonstrations. The plain
//! functions are usable natively; the `wasm_bindgen` wrappers turn their
//! errors into JavaScript exceptions.

use ldips::dimensions::TypeEnv;
use ldips::dsl::print_policy;
use ldips::enumerate::{count_report_csv, enum_count_report, PruningMode, DEFAULT_TOLERANCE};
use ldips::simkit::{perturb, score, Perturbation, SimConfig, StartGrid};
use ldips::synth::{synthesize, SynthConfig};
use ldips::worldio::{parse_demos, parse_policy_text, soccer_domain, DomainDef};
use serde_json::json;
use wasm_bindgen::prelude::*;

pub const REFERENCE_POLICY: &str = include_str!("../../../fixtures/reference.asp");
pub const SAMPLE_DEMOS: &str = include_str!("../../../fixtures/reference_demos.jsonl");

fn soccer() -> (DomainDef, TypeEnv) {
    let d = soccer_domain();
    let env = d.type_env().expect("bundled domain is valid");
    (d, env)
}

/// Scores `policy` on the default 20x15 grid with friction scaled by
/// `friction`. Returns `{"rate": r, "nx": 20, "ny": 15, "cells": [[i, j, ok], ...]}`.
pub fn heatmap(policy: &str, friction: f64) -> Result<String, String> {
    let (d, env) = soccer();
    let p = parse_policy_text(policy, &d).map_err(|e| e.to_string())?;
    if !p.is_complete() {
        return Err("policy has unfilled holes".into());
    }
    let cfg = perturb(
        &SimConfig::default(),
        Perturbation {
            friction,
            accel: 1.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let grid = StartGrid::default();
    let r = score(&p, &env, &cfg, &grid);
    let cells: Vec<_> = r
        .cells
        .iter()
        .map(|c| json!([c.i, c.j, c.outcome.name() == "success"]))
        .collect();
    Ok(json!({ "rate": r.rate, "nx": grid.nx, "ny": grid.ny, "cells": cells }).to_string())
}

/// Feature counts per pruning mode as `mode,depth,count` CSV, with
/// signatures taken over the sample demonstrations.
pub fn feature_counts(depth: usize) -> Result<String, String> {
    if !(1..=3).contains(&depth) {
        return Err("depth must be between 1 and 3".into());
    }
    let (d, env) = soccer();
    let worlds: Vec<_> = parse_demos(SAMPLE_DEMOS, &d)
        .map_err(|e| e.to_string())?
        .into_iter()
        .take(20)
        .map(|x| x.world)
        .collect();
    let rows = enum_count_report(&PruningMode::ALL, depth, DEFAULT_TOLERANCE, &env, &worlds);
    Ok(count_report_csv(&rows))
}

/// Synthesizes a policy from JSON Lines demonstrations.
pub fn synthesize_text(demos: &str, max_depth: usize) -> Result<String, String> {
    let (d, env) = soccer();
    let demos = parse_demos(demos, &d).map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        feature_depth: max_depth,
        predicate_atoms: max_depth,
        ..SynthConfig::default()
    };
    let s = synthesize(&cfg, &demos, &d, &env, None).map_err(|e| e.to_string())?;
    Ok(print_policy(&s.policy))
}

#[wasm_bindgen(js_name = referencePolicy)]
pub fn reference_policy() -> String {
    REFERENCE_POLICY.to_string()
}

#[wasm_bindgen(js_name = sampleDemos)]
pub fn sample_demos() -> String {
    SAMPLE_DEMOS.to_string()
}

#[wasm_bindgen(js_name = simulateHeatmap)]
pub fn simulate_heatmap(policy: &str, friction: f64) -> Result<String, JsError> {
    heatmap(policy, friction).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = enumStats)]
pub fn enum_stats(depth: usize) -> Result<String, JsError> {
    feature_counts(depth).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = synthesizePolicy)]
pub fn synthesize_policy(demos: &str, max_depth: usize) -> Result<String, JsError> {
    synthesize_text(demos, max_depth).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_heatmap_matches_the_baseline() {
        let v: serde_json::Value =
            serde_json::from_str(&heatmap(REFERENCE_POLICY, 1.0).unwrap()).unwrap();
        assert_eq!(v["rate"], 0.93);
        assert_eq!(v["cells"].as_array().unwrap().len(), 300);
        assert!(heatmap(REFERENCE_POLICY, 0.0).is_err());
        assert!(heatmap("else: Fly", 1.0).is_err());
    }

    #[test]
    fn counts_are_ordered() {
        let csv = feature_counts(3).unwrap();
        let counts: Vec<usize> = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(
            counts[0] < counts[1]
                && counts[1] < counts[3]
                && counts[0] < counts[2]
                && counts[2] < counts[3]
        );
        assert!(feature_counts(4).is_err());
    }

    #[test]
    fn synthesizes_from_the_samples() {
        let p = synthesize_text(SAMPLE_DEMOS, 3).unwrap();
        assert!(p.ends_with("else: Goto\n"), "{p}");
        let err =
            synthesize_text(include_str!("../../../fixtures/label_flip.jsonl"), 3).unwrap_err();
        assert!(err.contains("no policy"), "{err}");
    }
}
