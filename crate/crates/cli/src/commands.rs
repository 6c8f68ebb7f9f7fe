use std::fs;
use std::path::Path;

use bcm::connect::{
    assemble_from_response, hat_kernel, restrict, route_agreement, ConnectingOperator, ConnectingOperatorDocument,
    Provenance as Route,
};
use bcm::factor::{
    diagonal_identity_residual, factorize_cholesky, factorize_krein_rows, product_identity_residual,
    reconstruction_residual,
};
use bcm::forward::{response_function, solve_wave, ResponseFunction};
use bcm::io::write_table;
use bcm::potential::control_panel;
use bcm::recover::{default_window, invert, roundtrip, window_error, InverseData, RecoveryOptions};
use bcm::wavemodel::{defect_element, eikonal_apply, u_transform, wave_model_apply};
use bcm::{Control, Error, Kernel2D, Potential, Quadrature, Result, Support, TimeGrid};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::output::{Artifacts, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Response,
    Connect,
    Factorize,
    Recover,
    Roundtrip,
    Wavemodel,
    Selfcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Response => "response",
            Command::Connect => "connect",
            Command::Factorize => "factorize",
            Command::Recover => "recover",
            Command::Roundtrip => "roundtrip",
            Command::Wavemodel => "wavemodel",
            Command::Selfcheck => "selfcheck",
        }
    }
}

/// What a successful run produced. `failed_checks` is non-empty only for
/// `selfcheck`.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub failed_checks: Vec<String>,
}

/// Runs `command` and returns the artifacts written.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let potential = Potential::new(cfg.potential)?;
    let mut grid = TimeGrid::new(cfg.horizon, cfg.nodes)?;
    let mut input = None;
    let mut label = potential.name().to_owned();
    if let (Command::Factorize | Command::Recover, Some(path)) = (command, &cfg.input) {
        let (data, g) = read_input(path)?;
        input = Some(data);
        grid = g;
        label = format!("input {}", path.file_name().unwrap_or_default().to_string_lossy());
    }
    let mut out = match command {
        Command::Wavemodel => {
            let space = TimeGrid::new(cfg.space_extent, cfg.space_nodes)?;
            artifacts(command, cfg, &label, &space)?
        }
        Command::Roundtrip => {
            let finest = *cfg.ladder.iter().max().expect("validated ladder");
            artifacts(command, cfg, &label, &TimeGrid::new(cfg.horizon, finest)?)?
        }
        Command::Selfcheck => artifacts(command, cfg, &label, &TimeGrid::new(cfg.horizon, SELFCHECK_NODES)?)?,
        _ => artifacts(command, cfg, &label, &grid)?,
    };
    let mut failed_checks = Vec::new();
    match command {
        Command::Simulate => simulate(cfg, &potential, &grid, &mut out)?,
        Command::Response => {
            let r = response_function(&potential, &grid.doubled())?;
            out.csv("response.csv", |w, c| r.write_csv(w, c))?;
        }
        Command::Connect => connect(cfg, &potential, &grid, &mut out)?,
        Command::Factorize => factorize(input, &potential, &grid, &mut out)?,
        Command::Recover => recover(cfg, input, &potential, &grid, &mut out)?,
        Command::Roundtrip => {
            let options = recovery_options(cfg);
            let report = roundtrip(&potential, cfg.horizon, &cfg.ladder, cfg.window, &options)?;
            out.json("roundtrip.json", &report)?;
            out.csv("roundtrip.csv", |w, c| report.write_csv(w, c))?;
        }
        Command::Wavemodel => wavemodel(cfg, &potential, &mut out)?,
        Command::Selfcheck => failed_checks = selfcheck(cfg, &potential, &mut out)?,
    }
    Ok(Outcome {
        artifacts: out,
        failed_checks,
    })
}

fn artifacts(command: Command, cfg: &RunConfig, label: &str, grid: &TimeGrid) -> Result<Artifacts> {
    let provenance = Provenance::new(command.name(), cfg.hash(), label.to_owned(), grid);
    Artifacts::create(cfg.resolve_output_dir(), provenance)
}

fn recovery_options(cfg: &RunConfig) -> RecoveryOptions {
    RecoveryOptions {
        formula: cfg.formula,
        smoothing: cfg.smoothing,
    }
}

fn simulate(cfg: &RunConfig, q: &Potential, grid: &TimeGrid, out: &mut Artifacts) -> Result<()> {
    let t = grid.horizon();
    let f = match cfg.control {
        Some(c) => Control::bump(grid, c.center, c.radius, c.omega)?,
        None => Control::bump(grid, 0.5 * t, 0.25 * t, 0.0)?,
    };
    let u = solve_wave(q, &f)?;
    out.csv("wave.csv", |w, c| u.write_csv(w, c))?;
    out.json(
        "simulate.json",
        serde_json::json!({
            "max_abs_beyond_horizon": u.energy_beyond_horizon(),
            "space_nodes": u.space().len(),
            "time_nodes": u.time().len(),
        }),
    )
}

fn connect(cfg: &RunConfig, q: &Potential, grid: &TimeGrid, out: &mut Artifacts) -> Result<()> {
    let r = response_function(q, &grid.doubled())?;
    let c = assemble_from_response(&r, grid)?;
    let comments = out.provenance().comments();
    out.json("connecting_operator.json", OperatorFile { operator: c.to_document(&comments)? })?;
    out.csv("kernel.csv", |w, cm| c.kernel().write_csv(w, cm))?;
    let panel = control_panel(grid, cfg.controls);
    let agreement = route_agreement(q, &c, &panel)?;
    out.json("route_agreement.json", &agreement)
}

#[derive(Serialize)]
struct OperatorFile {
    operator: ConnectingOperatorDocument,
}

/// Preloaded input, or the response of the configured potential.
fn inverse_data(input: Option<InverseData>, q: &Potential, grid: &TimeGrid) -> Result<InverseData> {
    match input {
        Some(data) => Ok(data),
        None => Ok(InverseData::Response(response_function(q, &grid.doubled())?)),
    }
}

/// Reads a response CSV (`t,r` on `[0, 2T]`), a kernel CSV (`t,s,value`)
/// or a connecting-operator JSON file.
pub fn read_input(path: &Path) -> Result<(InverseData, TimeGrid)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if header.starts_with('{') {
        let v: Value = serde_json::from_str(&text)?;
        let doc = v.get("operator").cloned().unwrap_or(v);
        let c = serde_json::from_value::<ConnectingOperatorDocument>(doc)?.into_operator()?;
        let g = *c.grid();
        return Ok((InverseData::Operator(c), g));
    }
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    match columns.as_slice() {
        ["t", "r"] => {
            let r = ResponseFunction::read_csv(text.as_bytes())?;
            let len = r.grid().len();
            if len < 9 || len % 2 == 0 {
                return Err(Error::Validation(format!(
                    "a response on [0, 2T] needs an odd number of at least 9 nodes, got {len}"
                )));
            }
            let g = r.grid().prefix(len.div_ceil(2))?;
            Ok((InverseData::Response(r), g))
        }
        ["t", "s", "value"] => {
            let k = Kernel2D::read_csv(text.as_bytes(), Support::Full)?;
            let c = ConnectingOperator::new(k, Route::External)?;
            let g = *c.grid();
            Ok((InverseData::Operator(c), g))
        }
        _ => Err(Error::Parse(format!(
            "{}: expected a `t,r` or `t,s,value` table or an operator JSON file",
            path.display()
        ))),
    }
}

fn operator_of(data: &InverseData, grid: &TimeGrid) -> Result<ConnectingOperator> {
    match data {
        InverseData::Response(r) => assemble_from_response(r, grid),
        InverseData::Operator(c) => restrict(c, grid.horizon()),
    }
}

#[derive(Serialize)]
struct IdentityReport {
    product_identity: f64,
    reconstruction: f64,
    diagonal_identity: f64,
    cross_route_b: f64,
    max_pivot_deviation: f64,
    min_pivot: f64,
}

fn factorize(input: Option<InverseData>, q: &Potential, grid: &TimeGrid, out: &mut Artifacts) -> Result<()> {
    let data = inverse_data(input, q, grid)?;
    let khat = hat_kernel(&operator_of(&data, grid)?);
    let b = factorize_krein_rows(&khat)?;
    let (b_chol, a, pivots) = factorize_cholesky(&khat)?;
    let report = IdentityReport {
        product_identity: product_identity_residual(&a, &b)?,
        reconstruction: reconstruction_residual(&a, &khat)?,
        diagonal_identity: diagonal_identity_residual(&a, &b_chol),
        cross_route_b: b.max_abs_diff(&b_chol),
        max_pivot_deviation: pivots.max_pivot_deviation,
        min_pivot: pivots.min_pivot,
    };
    out.csv("b.csv", |w, c| b.write_csv(w, c))?;
    out.csv("b_cholesky.csv", |w, c| b_chol.write_csv(w, c))?;
    out.csv("a.csv", |w, c| a.write_csv(w, c))?;
    out.json("identities.json", &report)
}

fn recover(
    cfg: &RunConfig,
    input: Option<InverseData>,
    q: &Potential,
    grid: &TimeGrid,
    out: &mut Artifacts,
) -> Result<()> {
    let from_input = input.is_some();
    let data = inverse_data(input, q, grid)?;
    let q_hat = invert(&data, grid, &recovery_options(cfg))?;
    let rows = (0..grid.len()).map(|i| vec![grid.node(i), q_hat[i]]);
    out.csv("q_hat.csv", |w, c| write_table(w, c, &["t", "q_hat"], rows))?;
    let max_abs = q_hat.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut summary = serde_json::json!({
        "nodes": grid.len(),
        "horizon": grid.horizon(),
        "max_abs_q_hat": max_abs,
        "source": if from_input { "input" } else { "potential" },
    });
    if !from_input {
        let window = cfg.window.unwrap_or_else(|| default_window(grid.horizon()));
        summary["window"] = serde_json::json!(window);
        summary["max_relative_error"] = serde_json::json!(window_error(grid, &q.samples(grid), &q_hat, window));
    }
    out.json("recover.json", summary)
}

#[derive(Serialize)]
struct WaveModelReport {
    defect_residual: f64,
    route_discrepancy: f64,
    isometry_defect: f64,
    intertwining_defect: f64,
}

fn sine_modes(g: &TimeGrid, count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|k| g.sample(|x| (k as f64 * std::f64::consts::PI * x / g.horizon()).sin()))
        .collect()
}

fn wavemodel_report(q: &Potential, space: &TimeGrid) -> Result<(bcm::wavemodel::DefectElement, WaveModelReport)> {
    let eps = defect_element(q, space)?;
    let modes = sine_modes(space, 4);
    let mut discrepancy: f64 = 0.0;
    for phi in &modes {
        discrepancy = discrepancy.max(wave_model_apply(phi, q, &eps)?.max_discrepancy());
    }
    let quad = Quadrature::trapezoid(space);
    let (y, z) = (&modes[0], &modes[1]);
    let (ty, tz) = (u_transform(y, &eps)?, u_transform(z, &eps)?);
    let isometry = (quad.inner(y, z) - eps.inner_mu(&ty, &tz)).abs();
    let lhs = u_transform(&eikonal_apply(y, space)?, &eps)?;
    let rhs = eikonal_apply(&ty, space)?;
    let intertwining = lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    let report = WaveModelReport {
        defect_residual: eps.residual(q),
        route_discrepancy: discrepancy,
        isometry_defect: isometry,
        intertwining_defect: intertwining,
    };
    Ok((eps, report))
}

fn wavemodel(cfg: &RunConfig, q: &Potential, out: &mut Artifacts) -> Result<()> {
    let space = TimeGrid::new(cfg.space_extent, cfg.space_nodes)?;
    let (eps, report) = wavemodel_report(q, &space)?;
    out.csv("defect.csv", |w, c| eps.write_csv(w, c))?;
    out.json("wavemodel.json", &report)
}

const SELFCHECK_NODES: usize = 101;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &str, value: f64, tolerance: f64) -> Check {
    Check {
        name: name.to_owned(),
        value,
        tolerance,
        pass: value.is_finite() && value <= tolerance,
    }
}

/// The module property checks at `n = 101`.
fn selfcheck(cfg: &RunConfig, q: &Potential, out: &mut Artifacts) -> Result<Vec<String>> {
    let grid = TimeGrid::new(cfg.horizon, SELFCHECK_NODES)?;
    let mut checks = Vec::new();

    let panel = control_panel(&grid, cfg.controls);
    let beyond = panel
        .iter()
        .map(|f| solve_wave(q, f).map(|u| u.energy_beyond_horizon()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(check("finite_propagation", beyond, 1e-12));

    let r = response_function(q, &grid.doubled())?;
    let flat = r.derivatives_at_zero(2).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    checks.push(check("flat_response", flat, 1e-4 * r.max_abs().max(1.0)));

    let c = assemble_from_response(&r, &grid)?;
    checks.push(check("route_agreement", route_agreement(q, &c, &panel)?.max_relative_error, 2e-3));

    let khat = hat_kernel(&c);
    let b = factorize_krein_rows(&khat)?;
    let (b_chol, a, _) = factorize_cholesky(&khat)?;
    checks.push(check("product_identity", product_identity_residual(&a, &b)?, 5e-3));
    checks.push(check("reconstruction", reconstruction_residual(&a, &khat)?, 5e-3));
    checks.push(check("diagonal_identity", diagonal_identity_residual(&a, &b_chol), 5e-3));
    checks.push(check("cross_route_b", b.max_abs_diff(&b_chol), 5e-3));

    let half = grid.offset_steps(0.5 * grid.horizon()).map(|s| grid.len() - s);
    if let Ok(m) = half {
        let sub = grid.prefix(m)?;
        let direct = hat_kernel(&assemble_from_response(&r, &sub)?);
        let full = khat.leading_block(m)?;
        checks.push(check("shift_invariance", direct.max_abs_diff(&full), 1e-12));
    }

    let q_hat = invert(&InverseData::Response(r), &grid, &recovery_options(cfg))?;
    let window = cfg.window.unwrap_or_else(|| default_window(grid.horizon()));
    checks.push(check("recovery", window_error(&grid, &q.samples(&grid), &q_hat, window), 0.05));

    let unit = Potential::constant(1.0)?;
    let space = TimeGrid::new(20.0, 2001)?;
    let eps = defect_element(&unit, &space)?;
    let image = wave_model_apply(&space.nodes(), &unit, &eps)?;
    let dev = image.reduced.iter().map(|v| (v - 2.0).abs()).fold(0.0, f64::max);
    checks.push(check("wave_model_linear", dev, 1e-3));
    let (_, wm) = wavemodel_report(&unit, &space)?;
    checks.push(check("transform_isometry", wm.isometry_defect, 1e-12));
    checks.push(check("transform_intertwining", wm.intertwining_defect, 1e-12));

    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    out.json(
        "selfcheck.json",
        serde_json::json!({ "checks": checks, "all_pass": failed.is_empty() }),
    )?;
    Ok(failed)
}
