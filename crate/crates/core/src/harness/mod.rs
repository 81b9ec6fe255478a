//! Experiment orchestration: configuration, drivers, run records and reports.

mod record;
mod spec;
mod studies;

pub use record::*;
pub use spec::*;
pub use studies::*;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::linalg::SolverConfig;
use crate::operators::GridOperator;
use crate::random::rng;
use crate::resolvent::expansion_eval;
use crate::semigroup::{smoothing_fit, SmoothingOptions};
use crate::spectral::leading_eigenpair;

fn verdict(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn run_window_scan(seed: u64, s: &WindowScanSpec, cfg: &SolverConfig) -> Result<(RunResult, Vec<Verdict>)> {
    let op = s.operator.build(s.mesh)?;
    let report = leading_eigenpair(&op, cfg)?;
    let u = s.reference.vector(&report);
    let tol = crate::cone::ConeTolerance::relative(s.tol_rel)?;
    let inputs = s.inputs.generate(op.space(), &mut rng(seed));
    let windows = scan_batch(&op, &report, &inputs, s.side, s.mode, &u, &s.ladder, &tol, cfg)?;
    let verdicts = windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            verdict(
                format!("window_{i:03}"),
                w.is_empty() != s.expect_nonempty,
                format!("delta = {:e}", w.delta),
            )
        })
        .collect();
    Ok((
        RunResult::WindowScan {
            lambda0: report.lambda0,
            gap: report.gap,
            windows,
        },
        verdicts,
    ))
}

fn run_smoothing(s: &SmoothingSpec, cfg: &SolverConfig) -> Result<(RunResult, Vec<Verdict>)> {
    let op = s.operator.build(s.mesh)?;
    let opts = SmoothingOptions {
        max_residual: s.max_residual,
        ..Default::default()
    };
    let times = s.times.times();
    let mut entries = Vec::new();
    let mut verdicts = Vec::new();
    for &p in &s.p {
        let fit = smoothing_fit(&op, p, &times, &opts, cfg)?;
        if let Some([lo, hi]) = s.q_range {
            verdicts.push(verdict(
                format!("q_p{p}"),
                (lo..=hi).contains(&fit.q),
                format!("q = {:.4} expected in [{lo}, {hi}]", fit.q),
            ));
        }
        verdicts.push(verdict(
            format!("fit_p{p}"),
            fit.fit_residual <= s.max_residual,
            format!("residual = {:.2e}", fit.fit_residual),
        ));
        entries.push(SmoothingEntry { p, fit });
    }
    Ok((RunResult::SmoothingStudy(entries), verdicts))
}

/// Points to the right of every eigenvalue: `λ = b + 1/2`, `μ_j = b + 1 + j`
/// with `b` the Gershgorin bound.
fn expansion_points(op: &GridOperator, m: usize) -> (f64, Vec<f64>) {
    let b = op.matrix().gershgorin_upper();
    (b + 0.5, (0..m).map(|j| b + 1.0 + j as f64).collect())
}

fn run_expansion(seed: u64, s: &ExpansionSpec, cfg: &SolverConfig) -> Result<(RunResult, Vec<Verdict>)> {
    let mut r = rng(seed);
    let ops: Vec<(String, GridOperator)> = match &s.source {
        ExpansionSource::Operator { operator, mesh } => {
            let op = operator.build(*mesh)?;
            vec![(op.family().as_str().to_string(), op)]
        }
        ExpansionSource::Random { count, max_side } => (0..*count)
            .map(|i| {
                let side = r.random_range(1..=*max_side);
                let m = gaussian_matrix(&mut r, side, side);
                Ok((format!("random_{i:03}"), GridOperator::custom(&m, format!("random_{i}"))?))
            })
            .collect::<Result<_>>()?,
    };
    let mut entries = Vec::new();
    for (label, op) in &ops {
        let f = crate::random::squared_gaussian(op.space(), &mut r);
        for &m in &s.orders {
            let (lambda, points) = expansion_points(op, m);
            let (_, check) = expansion_eval(op, lambda, &points, &f, cfg)?;
            entries.push(ExpansionEntry {
                case: label.clone(),
                check,
            });
        }
    }
    let worst = entries.iter().map(|e| e.check.residual).fold(0.0, f64::max);
    let verdicts = vec![verdict("expansion_residual", worst <= s.tol, format!("max residual {worst:.2e} (tol {:.0e})", s.tol))];
    Ok((RunResult::ExpansionCheck(entries), verdicts))
}

/// Runs one experiment from scratch.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunRecord> {
    spec.validate()?;
    let start = Instant::now();
    let cfg = &spec.solver;
    let (result, verdicts) = match &spec.experiment {
        Experiment::WindowScan(s) => run_window_scan(spec.seed, s, cfg)?,
        Experiment::ThresholdStudy(s) => {
            let cells = run_threshold_study(spec.seed, s, cfg)?;
            let mut v: Vec<Verdict> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    verdict(
                        format!("cell_{i:03}"),
                        c.agrees(),
                        format!(
                            "d={} p={} k={}: {} (growth {:?}, predicted robust {:?})",
                            c.d,
                            c.p,
                            c.k,
                            c.verdict.as_str(),
                            c.growth_exponent,
                            c.predicted_robust
                        ),
                    )
                })
                .collect();
            for (i, c) in cells.iter().enumerate() {
                if let Some((ok, total)) = c.windows {
                    v.push(verdict(format!("windows_{i:03}"), ok == total, format!("{ok}/{total} nonempty")));
                }
            }
            (RunResult::ThresholdStudy(cells), v)
        }
        Experiment::ConcentrationStudy(s) => {
            let op = s.operator.build(s.mesh)?;
            let family = concentrating_family(&op, s)?;
            let out = run_concentration_study(&op, &family, s, cfg)?;
            let v = vec![verdict(
                "trend",
                out.passed,
                format!("spearman {:.3}, deltas {:?}", out.spearman, out.deltas),
            )];
            (RunResult::ConcentrationStudy(out), v)
        }
        Experiment::EquivalenceSuite(s) => {
            let rep = run_equivalence_suite(spec.seed, s, cfg)?;
            let v = vec![
                verdict(
                    "random_metzler",
                    rep.random_passed == rep.random_total,
                    format!("{}/{}", rep.random_passed, rep.random_total),
                ),
                verdict(
                    "violations_detected",
                    rep.violations_detected == rep.violations_total,
                    format!("{}/{}", rep.violations_detected, rep.violations_total),
                ),
            ];
            (RunResult::EquivalenceSuite(rep), v)
        }
        Experiment::SmoothingStudy(s) => run_smoothing(s, cfg)?,
        Experiment::CoveringSearch(s) => {
            let trials = run_covering_trials(spec.seed, s.trials, s.family_size, s.side, s.subspace_rank, s.samples)?;
            let found = trials.iter().filter(|t| t.found == Some(t.planted)).count();
            let agree = trials.iter().filter(|t| t.brute_force_agrees).count();
            let v = vec![
                verdict("planted_found", found == trials.len(), format!("{found}/{}", trials.len())),
                verdict("brute_force_agrees", agree == trials.len(), format!("{agree}/{}", trials.len())),
            ];
            (RunResult::CoveringSearch(trials), v)
        }
        Experiment::ExpansionCheck(s) => run_expansion(spec.seed, s, cfg)?,
    };
    Ok(RunRecord {
        spec: spec.clone(),
        spec_hash: spec.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        verdicts,
        result,
    })
}

/// Returns the stored record for `spec` when present (unless `force`), otherwise runs and stores it.
pub fn run_cached(store: &RunStore, spec: &ExperimentSpec, force: bool) -> Result<(RunRecord, bool)> {
    let hash = spec.hash();
    if !force {
        if let Some(rec) = store.load(&hash)? {
            return Ok((rec, true));
        }
    }
    let rec = run_experiment(spec)?;
    store.save(&rec)?;
    Ok((rec, false))
}

/// Runs independent experiments on a pool of at most `jobs` worker threads.
pub fn run_batch(store: &RunStore, specs: &[ExperimentSpec], jobs: usize, force: bool) -> Result<Vec<Result<RunRecord>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::validation(format!("worker pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(|s| run_cached(store, s, force).map(|r| r.0)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::BoundaryCondition;
    use crate::resolvent::{OffsetLadder, Side, WindowMode};

    fn window_spec(seed: u64) -> ExperimentSpec {
        ExperimentSpec::new(
            seed,
            Experiment::WindowScan(WindowScanSpec {
                operator: OperatorSpec::Laplacian {
                    dim: 1,
                    bc: BoundaryCondition::robin(1.0),
                },
                mesh: 30,
                inputs: InputSpec::SquaredGaussian { count: 3 },
                side: Side::Left,
                mode: WindowMode::Plain,
                reference: Reference::Ones,
                ladder: OffsetLadder::default(),
                tol_rel: 1e-10,
                expect_nonempty: true,
            }),
        )
    }

    #[test]
    fn records_round_trip_and_reproduce() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let spec = window_spec(4);
        let (rec, cached) = run_cached(&store, &spec, false).unwrap();
        assert!(!cached && rec.passed());
        let (again, cached) = run_cached(&store, &spec, false).unwrap();
        assert!(cached);
        assert!(again == rec);
        let fresh = run_experiment(&spec).unwrap();
        assert!(fresh.same_outcome(&rec));
        let files = emit_report(&rec, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
    }

    #[test]
    fn expansion_on_random_matrices() {
        let spec = ExperimentSpec::new(
            3,
            Experiment::ExpansionCheck(ExpansionSpec {
                source: ExpansionSource::Random { count: 4, max_side: 20 },
                orders: vec![0, 1, 2],
                tol: 1e-9,
            }),
        );
        let rec = run_experiment(&spec).unwrap();
        assert!(rec.passed(), "{:?}", rec.verdicts);
    }

    #[test]
    fn empty_window_record_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = run_experiment(&window_spec(1)).unwrap();
        rec.result = RunResult::WindowScan {
            lambda0: 0.0,
            gap: 1.0,
            windows: Vec::new(),
        };
        let files = emit_report(&rec, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), "offset,lambda,verdict,margin,c_value\n");
        rec.result = RunResult::ThresholdStudy(Vec::new());
        let files = emit_report(&rec, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), "d,p,k,verdict,growth_exponent\n");
    }

    #[test]
    fn batch_runs_on_a_bounded_pool() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let specs = vec![window_spec(1), window_spec(2)];
        let out = run_batch(&store, &specs, 2, false).unwrap();
        assert!(out.iter().all(|r| r.as_ref().is_ok_and(|r| r.passed())));
        assert!(store.record_path(&specs[1].hash()).exists());
    }
}
