//! Scenario execution: structure construction, dimensional validation,
//! certifications, flow integration and report/CSV emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dimmech_core::bundle::{BaseProduct, Derivation, Factor, RatioBranch, SmoothMap, TrivialLineBundle};
use dimmech_core::dynamics::{integrate_flow, monitor_energy, FlowProblem, Method};
use dimmech_core::expr::{parse_expr, BivectorField, ChartDomain, Expr, ScalarField, VectorField};
use dimmech_core::jacobi::{
    check_bracket_relations, coisotropic_check, contact_to_jacobi, jacobi_map_check,
    jet_lift_diffeo, lgraph_coisotropy_check, lgraph_samples, product_jacobi_on_branch,
    test_fields, CheckReport, ContactForm, JetChart, LichnerowiczPair,
};
use dimmech_core::measurand::{parse_dimension, Dimension, MeasurandSpace, UnitSystem};
use dimmech_core::sampling::low_discrepancy_points;
use thiserror::Error;

use crate::dimcheck::{check_observable, CheckedObservable, DimCheckError};
use crate::scenario::{
    BranchDecl, CheckDecl, CheckKind, ChartDecl, FactorDecl, ScenarioFile, StructureDecl,
    StructureKind, SubScenarioDecl,
};

#[derive(Debug, Error)]
pub enum RunError {
    /// Configuration-level failure (exit code 2).
    #[error("{0}")]
    Config(String),
    /// Execution-level failure (exit code 1).
    #[error("{0}")]
    Execution(String),
}

impl From<DimCheckError> for RunError {
    fn from(e: DimCheckError) -> Self {
        RunError::Config(e.to_string())
    }
}

fn config<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Config(e.to_string())
}

fn execution<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Execution(e.to_string())
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub dry_run: bool,
    pub seed_override: Option<u64>,
    pub write_outputs: bool,
}

pub struct RunOutcome {
    pub all_passed: bool,
    pub report: String,
}

fn build_chart(decl: &ChartDecl) -> Result<Arc<ChartDomain>, RunError> {
    let bounds = decl
        .coords
        .iter()
        .map(|name| decl.bounds.get(name).copied())
        .collect();
    ChartDomain::with_bounds(decl.coords.clone(), bounds).map_err(config)
}

struct BuiltStructure {
    chart: Arc<ChartDomain>,
    pair: LichnerowiczPair,
    cert: CheckReport,
    /// Present for canonical structures (needed by jet-chart checks).
    jet: Option<JetChart>,
    base: Option<Arc<ChartDomain>>,
}

fn certify_samples(chart: &Arc<ChartDomain>, seed: u64, count: usize) -> Vec<Vec<f64>> {
    low_discrepancy_points(seed, count, &chart.sampling_windows())
}

fn build_structure(
    decl: &StructureDecl,
    chart_decl: &ChartDecl,
    seed: u64,
    tol: f64,
    samples: usize,
) -> Result<BuiltStructure, RunError> {
    match decl.kind {
        StructureKind::Explicit => {
            let chart = build_chart(chart_decl)?;
            let mut entries = Vec::new();
            for e in &decl.pi {
                let expr = parse_expr(&e.expr, &chart).map_err(config)?;
                entries.push((e.i, e.j, ScalarField::new(&chart, expr)));
            }
            let pi = BivectorField::from_components(&chart, entries).map_err(config)?;
            let reeb_decl = decl.reeb.as_ref().expect("validated");
            if reeb_decl.len() != chart.dim() {
                return Err(RunError::Config(format!(
                    "reeb has {} components, chart has dimension {}",
                    reeb_decl.len(),
                    chart.dim()
                )));
            }
            let reeb = VectorField::new(
                &chart,
                reeb_decl
                    .iter()
                    .map(|s| Ok(ScalarField::new(&chart, parse_expr(s, &chart).map_err(config)?)))
                    .collect::<Result<Vec<_>, RunError>>()?,
            )
            .map_err(config)?;
            let pair = LichnerowiczPair::new(pi, reeb).map_err(config)?;
            let pts = certify_samples(&chart, seed, samples);
            let (pair, cert) = pair.certify(&pts, tol).map_err(execution)?;
            Ok(BuiltStructure {
                chart,
                pair,
                cert,
                jet: None,
                base: None,
            })
        }
        StructureKind::Contact => {
            let chart = build_chart(chart_decl)?;
            let theta_decl = decl.theta.as_ref().expect("validated");
            let theta = theta_decl
                .iter()
                .map(|s| Ok(ScalarField::new(&chart, parse_expr(s, &chart).map_err(config)?)))
                .collect::<Result<Vec<_>, RunError>>()?;
            let pts = certify_samples(&chart, seed, samples);
            let form = ContactForm::new(&chart, theta, &pts).map_err(config)?;
            let (pair, cert) = contact_to_jacobi(&form, &pts, tol).map_err(execution)?;
            Ok(BuiltStructure {
                chart,
                pair,
                cert,
                jet: None,
                base: None,
            })
        }
        StructureKind::Canonical => {
            let n = decl.n.expect("validated");
            let base_names: Vec<String> = chart_decl.coords[..n].to_vec();
            let base_bounds = base_names
                .iter()
                .map(|name| chart_decl.bounds.get(name).copied())
                .collect();
            let base = ChartDomain::with_bounds(base_names, base_bounds).map_err(config)?;
            let jet = JetChart::for_base(&base).map_err(config)?;
            if jet.chart().coord_names() != chart_decl.coords {
                return Err(RunError::Config(format!(
                    "canonical structure with n = {n} generates jet coordinates {:?}, scenario declares {:?}",
                    jet.chart().coord_names(),
                    chart_decl.coords
                )));
            }
            let pair = jet.canonical_pair_raw().map_err(config)?;
            let pts = certify_samples(jet.chart(), seed, samples);
            let (pair, cert) = pair.certify(&pts, tol).map_err(execution)?;
            Ok(BuiltStructure {
                chart: Arc::clone(jet.chart()),
                pair,
                cert,
                jet: Some(jet),
                base: Some(base),
            })
        }
        StructureKind::Product => {
            let first = decl.first.as_ref().expect("validated");
            let second = decl.second.as_ref().expect("validated");
            let b1 = build_sub(first, seed, tol, samples)?;
            let b2 = build_sub(second, seed ^ 0x5eed, tol, samples)?;
            let branch = match decl.branch {
                Some(BranchDecl::Negative) => RatioBranch::Negative,
                _ => RatioBranch::Positive,
            };
            let (prod, pair) =
                product_jacobi_on_branch(&b1.pair, &b2.pair, branch).map_err(execution)?;
            if prod.chart().coord_names() != chart_decl.coords {
                return Err(RunError::Config(format!(
                    "product chart has coordinates {:?}, scenario declares {:?}",
                    prod.chart().coord_names(),
                    chart_decl.coords
                )));
            }
            let pts = certify_samples(prod.chart(), seed, samples);
            let (pair, cert) = pair.certify(&pts, tol).map_err(execution)?;
            Ok(BuiltStructure {
                chart: Arc::clone(prod.chart()),
                pair,
                cert,
                jet: None,
                base: None,
            })
        }
    }
}

fn build_sub(
    sub: &SubScenarioDecl,
    seed: u64,
    tol: f64,
    samples: usize,
) -> Result<BuiltStructure, RunError> {
    build_structure(&sub.structure, &sub.chart, seed, tol, samples)
}

fn coord_dimensions(
    chart_decl: &ChartDecl,
    space: &Arc<MeasurandSpace>,
) -> Result<Vec<Dimension>, RunError> {
    match &chart_decl.dims {
        Some(dims) => dims
            .iter()
            .map(|d| parse_dimension(d, space).map_err(config))
            .collect(),
        None => Ok(vec![space.dimensionless(); chart_decl.coords.len()]),
    }
}

fn battery_derivations(base: &Arc<ChartDomain>, seed: u64, count: usize) -> Vec<Derivation> {
    let fields = test_fields(base, seed, 2 * count * base.dim());
    let n = base.dim();
    (0..count)
        .map(|k| {
            let symbol = VectorField::new(
                base,
                (0..n).map(|i| fields[k * (n + 1) + i].clone()).collect(),
            )
            .expect("same chart");
            Derivation::new(symbol, fields[k * (n + 1) + n].clone()).expect("same chart")
        })
        .collect()
}

fn run_check(
    check: &CheckDecl,
    built: &BuiltStructure,
    seed: u64,
) -> Result<CheckReport, RunError> {
    match check.kind {
        CheckKind::JacobiPair => {
            let pts = certify_samples(&built.chart, seed, check.samples);
            dimmech_core::jacobi::check_jacobi_pair(&built.pair, &pts, check.tol)
                .map_err(execution)
        }
        CheckKind::BracketRelations => {
            let jet = built.jet.as_ref().ok_or_else(|| {
                RunError::Config("bracket_relations requires a canonical structure".into())
            })?;
            let base = built.base.as_ref().expect("canonical structure");
            let ders = battery_derivations(base, seed ^ 0xb1, 2);
            let sections = test_fields(base, seed ^ 0xb2, 2);
            let pts = certify_samples(&built.chart, seed, check.samples);
            check_bracket_relations(
                &built.pair,
                jet,
                &ders[0],
                &ders[1],
                &sections[0],
                &sections[1],
                &pts,
                check.tol,
            )
            .map_err(execution)
        }
        CheckKind::Coisotropy => {
            let indices: Vec<usize> = check
                .constraints
                .iter()
                .map(|name| built.chart.index_of(name).expect("validated"))
                .collect();
            let constraints: Vec<ScalarField> = indices
                .iter()
                .map(|&i| ScalarField::coordinate(&built.chart, i))
                .collect();
            let mut pts = certify_samples(&built.chart, seed, check.samples);
            for p in &mut pts {
                for &i in &indices {
                    p[i] = 0.0;
                }
            }
            let sections: Vec<ScalarField> = if check.sections.is_empty() {
                test_fields(&built.chart, seed ^ 0xc0, 3)
            } else {
                check
                    .sections
                    .iter()
                    .map(|s| {
                        Ok(ScalarField::new(
                            &built.chart,
                            parse_expr(s, &built.chart).map_err(config)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, RunError>>()?
            };
            coisotropic_check(&built.pair, &constraints, &pts, &sections, check.tol)
                .map_err(execution)
        }
        CheckKind::JacobiMap => {
            let decl = check.factor.as_ref().expect("validated");
            let factor = build_self_factor(decl, &built.chart)?;
            let fields = test_fields(&built.chart, seed ^ 0xd0, 4);
            let pairs = vec![
                (fields[0].clone(), fields[1].clone()),
                (fields[2].clone(), fields[3].clone()),
            ];
            let pts = certify_samples(&built.chart, seed, check.samples);
            jacobi_map_check(&factor, &built.pair, &built.pair, &pairs, &pts, check.tol)
                .map_err(execution)
        }
        CheckKind::JetLiftGraph => {
            run_jet_lift_graph_check(check, built, seed)
        }
    }
}

/// Factor from the scenario chart to itself.
fn build_self_factor(decl: &FactorDecl, chart: &Arc<ChartDomain>) -> Result<Factor, RunError> {
    if decl.b.len() != chart.dim() {
        return Err(RunError::Config(format!(
            "factor `b` has {} components, chart has dimension {}",
            decl.b.len(),
            chart.dim()
        )));
    }
    let components = decl
        .b
        .iter()
        .map(|s| parse_expr(s, chart).map_err(config))
        .collect::<Result<Vec<_>, _>>()?;
    let map = SmoothMap::new(chart, chart, components).map_err(config)?;
    let beta = ScalarField::new(chart, parse_expr(&decl.beta, chart).map_err(config)?);
    let inverse = decl
        .inverse
        .as_ref()
        .map(|exprs| -> Result<SmoothMap, RunError> {
            let comps = exprs
                .iter()
                .map(|s| parse_expr(s, chart).map_err(config))
                .collect::<Result<Vec<_>, _>>()?;
            SmoothMap::new(chart, chart, comps).map_err(config)
        })
        .transpose()?;
    Factor::new(map, beta, inverse).map_err(config)
}

/// Jet-lift graph coisotropy: the factor maps the canonical base chart to
/// a fresh copy (coordinates suffixed `2`); inverse expressions are
/// written in the suffixed names.
fn run_jet_lift_graph_check(
    check: &CheckDecl,
    built: &BuiltStructure,
    seed: u64,
) -> Result<CheckReport, RunError> {
    let decl = check.factor.as_ref().expect("validated");
    let base = built
        .base
        .as_ref()
        .ok_or_else(|| RunError::Config("jet_lift_graph requires a canonical structure".into()))?
        .clone();
    let jet_src = built.jet.as_ref().expect("canonical structure");
    let target_names: Vec<String> = base.coord_names().iter().map(|n| format!("{n}2")).collect();
    let target = ChartDomain::with_bounds(target_names, base.bounds().to_vec()).map_err(config)?;
    let jet_tgt = JetChart::for_base(&target).map_err(config)?;
    if decl.b.len() != base.dim() {
        return Err(RunError::Config(format!(
            "factor `b` has {} components, base has dimension {}",
            decl.b.len(),
            base.dim()
        )));
    }
    let map = SmoothMap::new(
        &base,
        &target,
        decl.b
            .iter()
            .map(|s| parse_expr(s, &base).map_err(config))
            .collect::<Result<Vec<_>, _>>()?,
    )
    .map_err(config)?;
    let beta = ScalarField::new(&base, parse_expr(&decl.beta, &base).map_err(config)?);
    let inverse_exprs = decl.inverse.as_ref().ok_or_else(|| {
        RunError::Config("jet_lift_graph factor needs a declared inverse".into())
    })?;
    let inverse = SmoothMap::new(
        &target,
        &base,
        inverse_exprs
            .iter()
            .map(|s| parse_expr(s, &target).map_err(config))
            .collect::<Result<Vec<_>, _>>()?,
    )
    .map_err(config)?;
    let factor = Factor::new(map, beta, Some(inverse)).map_err(config)?;

    let (_, pair_tgt, _) =
        dimmech_core::jacobi::canonical_contact(&target, seed ^ 0xe1, 100, 1e-9)
            .map_err(execution)?;
    let mut lift = jet_lift_diffeo(&factor, jet_src, &jet_tgt).map_err(execution)?;
    if let Some(c) = check.perturb_beta {
        // negative control: scale the lifted fibre map so it stops being
        // a Jacobi map; its own L-graph then fails coisotropy
        let perturbed = ScalarField::new(
            jet_tgt.chart(),
            Expr::mul(
                lift.beta().expr().clone(),
                Expr::add(
                    Expr::constant(1.0),
                    Expr::mul(Expr::constant(c), Expr::var(0)),
                ),
            ),
        );
        lift = Factor::new(lift.map().clone(), perturbed, None).map_err(config)?;
    }
    let ders = battery_derivations(&base, seed ^ 0xe2, 2);
    let mut sections = Vec::new();
    for d in &ders {
        sections.push(
            jet_src
                .fibrewise_linear(d)
                .map_err(execution)?
                .as_field()
                .clone(),
        );
    }
    for s in test_fields(&base, seed ^ 0xe3, 2) {
        sections.push(jet_src.lift_section(&s).map_err(execution)?);
    }
    let prod = BaseProduct::new(
        &TrivialLineBundle::new(jet_tgt.chart()),
        &TrivialLineBundle::new(jet_src.chart()),
    )
    .map_err(execution)?;
    let samples = lgraph_samples(&lift, &prod, seed ^ 0xe4, check.samples)
        .map_err(execution)?;
    lgraph_coisotropy_check(&lift, &pair_tgt, &built.pair, &sections, &samples, check.tol)
        .map_err(execution)
}

/// Executes a loaded scenario end to end. Configuration failures map to
/// `RunError::Config` (exit 2); check failures are recorded in the
/// outcome (exit 1 upstream); integration failures are execution errors.
pub fn run_scenario(
    scenario: &ScenarioFile,
    scenario_path: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    let seed = opts.seed_override.or(scenario.seed).unwrap_or(0);
    let space = MeasurandSpace::new(scenario.space.base.clone()).map_err(config)?;
    let mut unit_systems = Vec::new();
    for (name, decl) in &scenario.units {
        let sys = UnitSystem::new(&space, decl.scales.clone(), decl.names.clone())
            .map_err(config)?;
        unit_systems.push((name.clone(), sys));
    }

    // structure
    let pair_check = scenario
        .checks
        .iter()
        .find(|c| c.kind == CheckKind::JacobiPair);
    let cert_tol = pair_check.map(|c| c.tol).unwrap_or(1e-9);
    let cert_samples = pair_check.map(|c| c.samples).unwrap_or(100);
    let built = build_structure(
        &scenario.structure,
        &scenario.chart,
        seed,
        cert_tol,
        cert_samples,
    )?;

    // dimensional validation of every observable
    let coord_dims = coord_dimensions(&scenario.chart, &space)?;
    let mut observables: Vec<(String, CheckedObservable)> = Vec::new();
    for (name, decl) in &scenario.observables {
        let checked =
            check_observable(name, &decl.expr, &decl.dim, &built.chart, &space, &coord_dims)?;
        observables.push((name.clone(), checked));
    }

    let stem = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "scenario".to_string());
    let mut report = String::new();
    let _ = writeln!(report, "scenario: {stem}");
    let _ = writeln!(report, "seed: {seed}");
    for (name, sys) in &unit_systems {
        let _ = writeln!(report, "unit_system: {name} ({})", sys.unit_names().join(","));
    }
    for (name, obs) in &observables {
        let _ = writeln!(report, "observable: {name} [{}]", obs.dimension);
    }
    if let Some(h) = &scenario.hamiltonian {
        let dim = &observables
            .iter()
            .find(|(n, _)| n == h)
            .expect("validated")
            .1
            .dimension;
        let _ = writeln!(report, "hamiltonian: {h} [{dim}]");
    }
    let _ = writeln!(report);
    let mut cert = built.cert.clone();
    cert.check = "structure_certification".into();
    let _ = write!(report, "{cert}");
    let mut all_passed = built.cert.passed;

    // requested checks
    for check in &scenario.checks {
        let check_report = run_check(check, &built, seed)?;
        all_passed &= check_report.passed;
        let _ = writeln!(report);
        let _ = write!(report, "{check_report}");
    }

    // flow
    if let (Some(integ), Some(h_name), false) =
        (&scenario.integration, &scenario.hamiltonian, opts.dry_run)
    {
        let h = &observables
            .iter()
            .find(|(n, _)| n == h_name)
            .expect("validated")
            .1
            .field;
        let method = match integ.method.as_str() {
            "rk4" => Method::Rk4 {
                step: integ.step.unwrap_or(1e-3),
            },
            _ => Method::Rk45 {
                rtol: integ.rtol.unwrap_or(1e-8),
                atol: integ.atol.unwrap_or(1e-10),
            },
        };
        let prob = FlowProblem::new(
            built.pair.clone(),
            h.clone(),
            integ.x0.clone(),
            (integ.t0, integ.t1),
            method,
        )
        .map_err(execution)?;
        let traj = integrate_flow(&prob).map_err(execution)?;
        let summary = monitor_energy(&traj, &built.pair, h).map_err(execution)?;
        let _ = writeln!(report);
        let _ = writeln!(report, "integration: {}", integ.method);
        let _ = writeln!(report, "t_span: [{}, {}]", integ.t0, integ.t1);
        let _ = writeln!(report, "steps: {}", traj.times.len() - 1);
        let _ = writeln!(
            report,
            "max_pointwise_energy_residual: {:e}",
            summary.max_pointwise_residual
        );
        let _ = writeln!(
            report,
            "max_discrete_energy_drift: {:e}",
            summary.max_discrete_drift
        );
        if opts.write_outputs {
            let csv_name = scenario
                .outputs
                .as_ref()
                .and_then(|o| o.csv.clone())
                .unwrap_or_else(|| format!("{stem}.csv"));
            let path = opts.out_dir.join(&csv_name);
            std::fs::write(&path, traj.to_csv(built.chart.coord_names()))
                .map_err(|e| RunError::Execution(format!("cannot write {}: {e}", path.display())))?;
            let _ = writeln!(report, "csv: {csv_name}");
        }
    }

    let _ = writeln!(report);
    let _ = writeln!(report, "status: {}", if all_passed { "ok" } else { "failed" });

    if opts.write_outputs {
        let report_name = scenario
            .outputs
            .as_ref()
            .and_then(|o| o.report.clone())
            .unwrap_or_else(|| format!("{stem}.report.txt"));
        let path = opts.out_dir.join(report_name);
        std::fs::write(&path, &report)
            .map_err(|e| RunError::Execution(format!("cannot write {}: {e}", path.display())))?;
    }

    Ok(RunOutcome { all_passed, report })
}
