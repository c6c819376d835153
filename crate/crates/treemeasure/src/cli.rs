//! Command-line front end. Machine-readable JSON goes to stdout, human
//! diagnostics to stderr; identical invocations produce byte-identical
//! stdout. Exit codes: 0 success, 1 input or domain error, 2 I/O error,
//! 3 non-convergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::automaton::{self, Automaton, Severity};
use crate::finite_lattice;
use crate::fo_export::{self, SolverVerdict};
use crate::powerdomain::{self, MeasureError, MeasureOpts, MeasureReport};
use crate::unary_mu::EvalError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "treemeasure",
    version,
    about = "Coin-flipping measures of parity tree automaton languages"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an automaton file and report diagnostics.
    Validate { path: PathBuf },
    /// Compute the measure of the automaton's language.
    Measure {
        path: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Compare the measure against a rational threshold.
    Compare {
        path: PathBuf,
        /// Threshold in [0,1], e.g. `1/2` or `0.5`.
        q: String,
        /// Half-width of the approximate-equality band.
        #[arg(long, default_value_t = 1e-6)]
        band: f64,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Write the exact-mode real-arithmetic script.
    Export {
        path: PathBuf,
        /// Optional threshold: also assert `measure > q`.
        q: Option<String>,
        /// Output file; the script goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// External SMT solver; enables the numeric/exact consistency check.
        #[arg(long)]
        solver: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Run a built-in cross-check harness (`lattice` or `order`).
    Selftest {
        kind: String,
        #[arg(long, default_value_t = 2)]
        g: u32,
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: u32,
    },
}

#[derive(Args)]
struct PipelineFlags {
    /// Total-variation stabilization tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Basic-function applications allowed per limit node.
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: u64,
    /// Hard ceiling on distribution support size.
    #[arg(long, default_value_t = 65536)]
    max_support: usize,
    /// Check structural invariants at stage boundaries; violations fail
    /// the run.
    #[arg(long)]
    strict_invariants: bool,
}

impl PipelineFlags {
    fn to_opts(&self) -> Result<MeasureOpts, String> {
        if self.tol <= 0.0 {
            return Err("tol must be > 0".into());
        }
        if self.max_iter < 1 || self.max_support < 1 {
            return Err("caps must be >= 1".into());
        }
        Ok(MeasureOpts {
            tol: self.tol,
            max_iterations: self.max_iter,
            max_support: self.max_support,
            check_invariants: self.strict_invariants,
        })
    }
}

#[derive(Serialize)]
struct DiagnosticOut {
    severity: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    col: Option<usize>,
}

#[derive(Serialize)]
struct ValidateOut {
    errors: usize,
    warnings: usize,
    diagnostics: Vec<DiagnosticOut>,
}

#[derive(Serialize)]
struct CompareOut {
    verdict: &'static str,
    approximate: bool,
    measure: f64,
    q: String,
    band: f64,
}

#[derive(Serialize)]
struct ExportOut {
    written: String,
    bytes: usize,
    solver_check: &'static str,
}

#[derive(Serialize)]
struct LatticeSelftestOut {
    kind: &'static str,
    g: u32,
    d: u32,
    seed: u64,
    trials: u32,
    mismatches: usize,
    replay_files: Vec<String>,
}

#[derive(Serialize)]
struct OrderSelftestOut {
    kind: &'static str,
    seed: u64,
    trials: u32,
    disagreements: usize,
    incomparable_pair_ok: bool,
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) {
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string(value).expect("serializable")
    );
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_INPUT
                }
            };
        }
    };
    match cli.command {
        Cmd::Validate { path } => cmd_validate(&path, out, err),
        Cmd::Measure { path, pipeline } => cmd_measure(&path, &pipeline, out, err),
        Cmd::Compare {
            path,
            q,
            band,
            pipeline,
        } => cmd_compare(&path, &q, band, &pipeline, out, err),
        Cmd::Export {
            path,
            q,
            out: out_path,
            solver,
            pipeline,
        } => cmd_export(
            &path,
            q.as_deref(),
            out_path.as_deref(),
            solver.as_deref(),
            &pipeline,
            out,
            err,
        ),
        Cmd::Selftest {
            kind,
            g,
            d,
            seed,
            trials,
        } => cmd_selftest(&kind, g, d, seed, trials, out, err),
    }
}

fn read_automaton(
    path: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
    json_diagnostics: bool,
) -> Result<Automaton, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            return Err(EXIT_IO);
        }
    };
    match automaton::parse_automaton(&text) {
        Ok(aut) => Ok(aut),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            if json_diagnostics {
                emit_json(
                    out,
                    &ValidateOut {
                        errors: 1,
                        warnings: 0,
                        diagnostics: vec![DiagnosticOut {
                            severity: "error",
                            message: e.message.clone(),
                            line: Some(e.line),
                            col: Some(e.col),
                        }],
                    },
                );
            }
            Err(EXIT_INPUT)
        }
    }
}

fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let aut = match read_automaton(path, out, err, true) {
        Ok(aut) => aut,
        Err(code) => return code,
    };
    let diags = automaton::validate(&aut);
    let errors = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .count();
    let warnings = diags.len() - errors;
    for d in &diags {
        let _ = writeln!(err, "{d}");
    }
    emit_json(
        out,
        &ValidateOut {
            errors,
            warnings,
            diagnostics: diags
                .iter()
                .map(|d| DiagnosticOut {
                    severity: match d.severity {
                        Severity::Error => "error",
                        Severity::Warning => "warning",
                    },
                    message: d.message.clone(),
                    line: d.line,
                    col: d.col,
                })
                .collect(),
        },
    );
    if errors == 0 {
        EXIT_OK
    } else {
        EXIT_INPUT
    }
}

fn run_measure(
    aut: &Automaton,
    flags: &PipelineFlags,
    err: &mut dyn Write,
) -> Result<MeasureReport, i32> {
    let opts = match flags.to_opts() {
        Ok(o) => o,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return Err(EXIT_INPUT);
        }
    };
    match powerdomain::measure_of_language(aut, &opts) {
        Ok(report) => Ok(report),
        Err(MeasureError::Eval(EvalError::IterationLimit { path, cap })) => {
            let _ = writeln!(
                err,
                "error: no convergence in limit node `{path}` (cap {cap})"
            );
            Err(EXIT_NO_CONVERGENCE)
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            Err(EXIT_INPUT)
        }
    }
}

fn strict_violations_fail(report: &MeasureReport, strict: bool, err: &mut dyn Write) -> bool {
    if strict && !report.violations.is_empty() {
        for v in &report.violations {
            let _ = writeln!(err, "invariant violation: {v}");
        }
        return true;
    }
    false
}

fn cmd_measure(
    path: &Path,
    flags: &PipelineFlags,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let aut = match read_automaton(path, out, err, false) {
        Ok(aut) => aut,
        Err(code) => return code,
    };
    let report = match run_measure(&aut, flags, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let _ = writeln!(err, "measured in {:.3}s", report.wall_time);
    emit_json(out, &report);
    if strict_violations_fail(&report, flags.strict_invariants, err) {
        return EXIT_INPUT;
    }
    EXIT_OK
}

fn cmd_compare(
    path: &Path,
    q_text: &str,
    band: f64,
    flags: &PipelineFlags,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let q = match fo_export::parse_rational(q_text) {
        Ok(q) if q >= Ratio::from_integer(0) && q <= Ratio::from_integer(1) => q,
        _ => {
            let _ = writeln!(
                err,
                "error: threshold must be a rational in [0,1], got `{q_text}`"
            );
            return EXIT_INPUT;
        }
    };
    let aut = match read_automaton(path, out, err, false) {
        Ok(aut) => aut,
        Err(code) => return code,
    };
    let report = match run_measure(&aut, flags, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let qf = *q.numer() as f64 / *q.denom() as f64;
    let verdict = if (report.measure - qf).abs() <= band {
        "EQUAL"
    } else if report.measure < qf {
        "LESS"
    } else {
        "GREATER"
    };
    emit_json(
        out,
        &CompareOut {
            verdict,
            approximate: true,
            measure: report.measure,
            q: q.to_string(),
            band,
        },
    );
    if strict_violations_fail(&report, flags.strict_invariants, err) {
        return EXIT_INPUT;
    }
    EXIT_OK
}

fn cmd_export(
    path: &Path,
    q_text: Option<&str>,
    out_path: Option<&Path>,
    solver: Option<&Path>,
    flags: &PipelineFlags,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let aut = match read_automaton(path, out, err, false) {
        Ok(aut) => aut,
        Err(code) => return code,
    };
    let script = match q_text {
        Some(qt) => {
            let q = match fo_export::parse_rational(qt) {
                Ok(q) => q,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_INPUT;
                }
            };
            fo_export::export_compare(&aut, q)
        }
        None => fo_export::export_measure(&aut),
    };
    let script = match script {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };

    let mut solver_check = "skipped";
    if let Some(solver) = solver {
        let report = match run_measure(&aut, flags, err) {
            Ok(r) => r,
            Err(code) => return code,
        };
        let check = fo_export::export_deviation_check(&aut, report.measure, 1e-6)
            .and_then(|s| fo_export::run_solver(solver, &s));
        match check {
            Ok(SolverVerdict::Unsat) => {
                solver_check = "passed";
                let _ = writeln!(err, "solver consistency check passed (deviation unsat)");
            }
            Ok(v) => {
                solver_check = "failed";
                let _ = writeln!(err, "solver consistency check FAILED: got {v:?}");
            }
            Err(e) => {
                solver_check = "failed";
                let _ = writeln!(err, "solver consistency check errored: {e}");
            }
        }
    }

    let code = match out_path {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &script) {
                let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
                return EXIT_IO;
            }
            emit_json(
                out,
                &ExportOut {
                    written: p.display().to_string(),
                    bytes: script.len(),
                    solver_check,
                },
            );
            EXIT_OK
        }
        None => {
            let _ = out.write_all(script.as_bytes());
            EXIT_OK
        }
    };
    if solver_check == "failed" {
        return EXIT_INPUT;
    }
    code
}

/// Two-state width-4 carrier automaton for the order harness.
fn order_carrier() -> Automaton {
    use crate::automaton::Transition;
    Automaton::from_parts(
        vec!["a".into()],
        vec!["p".into(), "q".into()],
        vec![2, 2],
        0,
        [
            Transition {
                state: 0,
                letter: 0,
                left: 0,
                right: 0,
            },
            Transition {
                state: 1,
                letter: 0,
                left: 1,
                right: 1,
            },
        ],
    )
    .expect("carrier is valid")
}

fn cmd_selftest(
    kind: &str,
    g: u32,
    d: u32,
    seed: u64,
    trials: u32,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    match kind {
        "lattice" => {
            let report = match finite_lattice::check_equivalence(g, d, seed, trials) {
                Ok(r) => r,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_INPUT;
                }
            };
            let mut replay_files = Vec::new();
            for m in &report.mismatches {
                let name = format!("treemeasure-replay-lattice-{}.txt", m.trial);
                if std::fs::write(&name, &m.replay).is_ok() {
                    let _ = writeln!(
                        err,
                        "mismatch at trial {}: {} (replay in {name})",
                        m.trial, m.detail
                    );
                    replay_files.push(name);
                } else {
                    let _ = writeln!(err, "mismatch at trial {}: {}", m.trial, m.detail);
                }
            }
            emit_json(
                out,
                &LatticeSelftestOut {
                    kind: "lattice",
                    g,
                    d,
                    seed,
                    trials,
                    mismatches: report.mismatches.len(),
                    replay_files,
                },
            );
            if report.passed() {
                EXIT_OK
            } else {
                EXIT_INPUT
            }
        }
        "order" => {
            let aut = order_carrier();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut disagreements = 0usize;
            for _ in 0..trials {
                let alpha = powerdomain::random_dist(&aut, &mut rng, 8);
                let beta = if rng.gen_bool(0.5) {
                    powerdomain::random_dist(&aut, &mut rng, 8)
                } else {
                    powerdomain::random_upward_shift(&aut, &alpha, &mut rng)
                };
                for (x, y) in [(&alpha, &beta), (&beta, &alpha)] {
                    let naive = powerdomain::dist_leq_naive(&aut, x, y).expect("width 4");
                    let coupling = powerdomain::dist_leq_coupling(&aut, x, y, 0.0);
                    if naive != coupling {
                        disagreements += 1;
                        let _ =
                            writeln!(err, "order disagreement: naive={naive} coupling={coupling}");
                    }
                }
            }
            // The classic non-lattice witness: half on each singleton versus
            // half on bottom and top; incomparable both ways.
            use crate::subset_lattice::RSet;
            use std::collections::BTreeMap;
            let alpha =
                powerdomain::Dist::from_map(BTreeMap::from([(RSet(1), 0.5), (RSet(2), 0.5)]));
            let beta =
                powerdomain::Dist::from_map(BTreeMap::from([(RSet(0), 0.5), (RSet(3), 0.5)]));
            let incomparable_pair_ok = !powerdomain::dist_leq_naive(&aut, &alpha, &beta).unwrap()
                && !powerdomain::dist_leq_naive(&aut, &beta, &alpha).unwrap()
                && !powerdomain::dist_leq_coupling(&aut, &alpha, &beta, 0.0)
                && !powerdomain::dist_leq_coupling(&aut, &beta, &alpha, 0.0);
            emit_json(
                out,
                &OrderSelftestOut {
                    kind: "order",
                    seed,
                    trials,
                    disagreements,
                    incomparable_pair_ok,
                },
            );
            if disagreements == 0 && incomparable_pair_ok {
                EXIT_OK
            } else {
                EXIT_INPUT
            }
        }
        other => {
            let _ = writeln!(
                err,
                "error: unknown selftest kind `{other}` (use lattice|order)"
            );
            EXIT_INPUT
        }
    }
}
