use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use ldips::dimensions::TypeEnv;
use ldips::dsl::{print_policy, Policy};
use ldips::enumerate::{count_report_csv, enum_count_report, PruningMode};
use ldips::interp::eval_policy;
use ldips::paramsolve::{adjustments_csv, repair, RepairError, SolveError, DEFAULT_CAPACITY};
use ldips::simkit::{
    perturb, record_demos, score, suggest_corrections, Perturbation, SimConfig, StartGrid,
};
use ldips::synth::{synthesize, Demonstration, SynthConfig, SynthError};
use ldips::worldio::{
    demos_to_jsonl, parse_demos, parse_domain, parse_policy_text, DomainDef, WorldIoError,
};

use crate::report::RunReport;
use crate::{Cli, Command, SimArgs};

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }

    fn unsat(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    fn capacity(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }

    fn invalid(error: anyhow::Error) -> Self {
        Failure { code: 4, error }
    }

    pub fn status(&self) -> &'static str {
        match self.code {
            2 => "unsat",
            3 => "capacity",
            4 => "invalid",
            _ => "error",
        }
    }
}

impl From<WorldIoError> for Failure {
    fn from(e: WorldIoError) -> Self {
        match e {
            WorldIoError::Io { .. } => Failure::usage(e.into()),
            _ => Failure::invalid(e.into()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Unsat { .. } | SynthError::EmptyCandidates { .. } => {
                Failure::unsat(e.into())
            }
            SynthError::Capacity(_) => Failure::capacity(e.into()),
            SynthError::Inconsistent { .. } => Failure::invalid(e.into()),
        }
    }
}

impl From<RepairError> for Failure {
    fn from(e: RepairError) -> Self {
        match &e {
            RepairError::Incomplete => Failure::invalid(e.into()),
            RepairError::Solve {
                source: SolveError::CapacityExceeded { .. },
                ..
            } => Failure::capacity(e.into()),
            RepairError::Unroutable { .. } | RepairError::Solve { .. } => Failure::unsat(e.into()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("expected COLSxROWS, got `{s}`"))?;
    let n = |t: &str| t.parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((n(a)?, n(b)?))
}

/// Loaded inputs, with every file read recorded in the report.
struct Inputs<'r> {
    report: &'r mut RunReport,
}

impl Inputs<'_> {
    fn read(&mut self, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(Failure::usage)?;
        self.report.record_input(path, &bytes);
        String::from_utf8(bytes).map_err(|e| Failure::invalid(anyhow!("{}: {e}", path.display())))
    }

    fn domain(&mut self, path: &Path) -> Result<(DomainDef, TypeEnv)> {
        let d = parse_domain(&self.read(path)?).with_context_path(path)?;
        let env = d.type_env().with_context_path(path)?;
        Ok((d, env))
    }

    fn demos(&mut self, path: &Path, domain: &DomainDef) -> Result<Vec<Demonstration>> {
        parse_demos(&self.read(path)?, domain).with_context_path(path)
    }

    fn policy(&mut self, path: &Path, domain: &DomainDef) -> Result<Policy> {
        parse_policy_text(&self.read(path)?, domain).with_context_path(path)
    }
}

trait PathContext<T> {
    fn with_context_path(self, path: &Path) -> Result<T>;
}

impl<T> PathContext<T> for std::result::Result<T, WorldIoError> {
    fn with_context_path(self, path: &Path) -> Result<T> {
        self.map_err(|e| {
            let mut f = Failure::from(e);
            f.error = f.error.context(path.display().to_string());
            f
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::usage)
}

fn sim_config(args: &SimArgs) -> Result<(SimConfig, StartGrid)> {
    let base = SimConfig {
        seed: args.seed,
        ..SimConfig::default()
    };
    let factors = Perturbation::from_pairs(args.perturb.iter().map(String::as_str))
        .map_err(|e| Failure::usage(e.into()))?;
    let cfg = perturb(&base, factors).map_err(|e| Failure::usage(e.into()))?;
    let grid = StartGrid {
        nx: args.grid.0,
        ny: args.grid.1,
        ..StartGrid::default()
    };
    Ok((cfg, grid))
}

pub fn run(cli: &Cli, report: &mut RunReport) -> Result<()> {
    let t0 = Instant::now();
    let out = dispatch(cli, report);
    report.timing.total_secs = t0.elapsed().as_secs_f64();
    out
}

fn dispatch(cli: &Cli, report: &mut RunReport) -> Result<()> {
    let mut synth_cfg = SynthConfig {
        tolerance: cli.tolerance,
        ..SynthConfig::default()
    };
    if let Some(d) = cli.max_depth {
        synth_cfg.feature_depth = d;
        synth_cfg.predicate_atoms = d;
    }
    match &cli.command {
        Command::Synth {
            domain,
            demos,
            sketch,
            out,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let demos = inp.demos(demos, &d)?;
            let sketch = sketch.as_deref().map(|s| inp.policy(s, &d)).transpose()?;
            report.counts.insert("demos", demos.len() as u64);
            let result = synthesize(&synth_cfg, &demos, &d, &env, sketch.as_ref());
            let s = result?;
            report.timing.enumeration_secs = s.stats.enumeration_secs;
            report.timing.solving_secs = s.stats.solving_secs;
            report.timing.assembly_secs = s.stats.assembly_secs;
            report
                .counts
                .insert("subproblems", s.stats.subproblems as u64);
            report.counts.insert("features", s.stats.features as u64);
            report.counts.insert("fills", s.stats.fills);
            report.counts.insert("systems", s.stats.systems);
            report
                .counts
                .insert("branches", s.policy.branches.len() as u64);
            write(out, &print_policy(&s.policy))
        }
        Command::Check {
            domain,
            policy,
            demos,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let p = inp.policy(policy, &d)?;
            let demos = inp.demos(demos, &d)?;
            report.counts.insert("demos", demos.len() as u64);
            if !p.is_complete() {
                return Err(Failure::invalid(anyhow!("policy has unfilled holes")));
            }
            for (i, demo) in demos.iter().enumerate() {
                let got = eval_policy(&p, &demo.world, &env).map_err(|e| {
                    Failure::invalid(anyhow!(
                        "demo {} (start {}): {e}",
                        i + 1,
                        demo.world.start_action
                    ))
                })?;
                if got != demo.next_action {
                    return Err(Failure::invalid(anyhow!(
                        "demo {} (start {}): expected {}, policy chose {got}",
                        i + 1,
                        demo.world.start_action,
                        demo.next_action
                    )));
                }
            }
            println!("ok: {} demonstrations consistent", demos.len());
            Ok(())
        }
        Command::Eval {
            domain,
            policy,
            demos,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let p = inp.policy(policy, &d)?;
            let demos = inp.demos(demos, &d)?;
            let mut out = String::new();
            let mut agree = 0u64;
            for demo in &demos {
                match eval_policy(&p, &demo.world, &env) {
                    Ok(a) => {
                        agree += u64::from(a == demo.next_action);
                        let _ = writeln!(out, "{a}");
                    }
                    Err(e) => {
                        let _ = writeln!(out, "error: {e}");
                    }
                }
            }
            report.counts.insert("demos", demos.len() as u64);
            report.counts.insert("agree", agree);
            print!("{out}");
            Ok(())
        }
        Command::EnumStats {
            domain,
            demos,
            modes,
            out,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let worlds: Vec<_> = match demos {
                Some(p) => inp.demos(p, &d)?.into_iter().map(|d| d.world).collect(),
                None => Vec::new(),
            };
            let modes = if modes.is_empty() {
                PruningMode::ALL.to_vec()
            } else {
                modes.clone()
            };
            let t = Instant::now();
            let rows = enum_count_report(
                &modes,
                cli.max_depth.unwrap_or(3),
                cli.tolerance,
                &env,
                &worlds,
            );
            report.timing.enumeration_secs = t.elapsed().as_secs_f64();
            for r in &rows {
                report.counts.insert(r.mode.name(), r.count as u64);
            }
            let csv = count_report_csv(&rows);
            match out {
                Some(path) => write(path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Repair {
            domain,
            policy,
            corrections,
            out,
            adjustments,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let p = inp.policy(policy, &d)?;
            let corrections = inp.demos(corrections, &d)?;
            report
                .counts
                .insert("corrections", corrections.len() as u64);
            let t = Instant::now();
            let r = repair(&p, &corrections, &env, DEFAULT_CAPACITY)?;
            report.timing.solving_secs = t.elapsed().as_secs_f64();
            report.counts.insert(
                "adjustments",
                r.adjustments.iter().filter(|a| a.delta != 0.0).count() as u64,
            );
            write(out, &print_policy(&r.policy))?;
            let csv = adjustments_csv(&r.adjustments);
            match adjustments {
                Some(path) => write(path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Simulate {
            domain,
            policy,
            sim,
            csv,
            corrections,
            max_corrections,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let p = inp.policy(policy, &d)?;
            if !p.is_complete() {
                return Err(Failure::invalid(anyhow!("policy has unfilled holes")));
            }
            let (cfg, grid) = sim_config(sim)?;
            let r = score(&p, &env, &cfg, &grid);
            report.counts.insert("episodes", r.cells.len() as u64);
            report.counts.insert(
                "successes",
                r.cells
                    .iter()
                    .filter(|c| c.outcome.name() == "success")
                    .count() as u64,
            );
            if let Some(path) = csv {
                write(path, &r.to_csv())?;
            }
            if let Some(path) = corrections {
                let c = suggest_corrections(&p, &env, &cfg, &grid, *max_corrections);
                report.counts.insert("corrections", c.len() as u64);
                write(path, &demos_to_jsonl(&c))?;
            }
            println!("{}", r.rate);
            Ok(())
        }
        Command::Record {
            domain,
            policy,
            sim,
            stride,
            out,
        } => {
            let mut inp = Inputs { report };
            let (d, env) = inp.domain(&domain.domain)?;
            let p = inp.policy(policy, &d)?;
            if !p.is_complete() {
                return Err(Failure::invalid(anyhow!("policy has unfilled holes")));
            }
            let (cfg, grid) = sim_config(sim)?;
            let starts: Vec<_> = grid.cells(&cfg).into_iter().map(|c| c.start).collect();
            let demos = record_demos(&p, &env, &cfg, &starts, *stride);
            report.counts.insert("episodes", starts.len() as u64);
            report.counts.insert("demos", demos.len() as u64);
            write(out, &demos_to_jsonl(&demos))
        }
    }
}
