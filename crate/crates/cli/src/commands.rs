//! One runner per subcommand. Runners compute everything in memory and
//! return an [`Emission`]; nothing is written here.

use degensolve_core::barriers::{
    boundary_modulus_check, build_barrier, verify_barrier, BarrierSamples, BoundaryModulusSpec,
};
use degensolve_core::conditions::{
    check_diagonal_equivalence, check_nondegeneracy_box, check_subordination_suite, BoxRegion,
    ConditionName, Interval, SampleLattice, SuiteOptions,
};
use degensolve_core::oracle::{
    dyadic_samples, oracle_diagnostics, sharpness_grad_w, sharpness_w, SharpnessExample,
};
use degensolve_core::principles::{check_comparison, check_maximum_principle, interior_regularity_report};
use degensolve_core::solver::{build_truncation, check_m_matrix, frozen_operator, truncation_level, viscosity_continuation};
use degensolve_core::{BoundaryData, CoefficientField, Error, StructuredGrid};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::{dirichlet_function, profile_from_spec, Command, DirichletSpec, Resolved};
use crate::emit::Emission;
use crate::CliError;

pub fn execute(run: &Resolved) -> Result<Emission, CliError> {
    let config_echo = serde_json::to_value(&run.config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = Emission::new(run.command.as_str(), config_echo, run.config.seed);
    match run.command {
        Command::Solve => solve(run, &mut out)?,
        Command::CheckConditions => check_conditions(run, &mut out)?,
        Command::Oracle => oracle(run, &mut out)?,
        Command::Barrier => barrier(run, &mut out)?,
        Command::Convergence => convergence(run, &mut out)?,
        Command::Report => return Err(CliError::Config("command: `report` reads an existing run".into())),
    }
    Ok(out)
}

fn field_rows(grid: &StructuredGrid, values: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.len())
        .map(|p| {
            let mut row = grid.coords(p);
            row.push(values[p]);
            row
        })
        .collect()
}

fn coordinate_header(dim: usize, last: &'static str) -> Vec<&'static str> {
    let mut h: Vec<&'static str> = ["x", "y", "z"][..dim].to_vec();
    h.push(last);
    h
}

fn solve(run: &Resolved, out: &mut Emission) -> Result<(), CliError> {
    let field = run.family.as_ref().unwrap();
    let grid = run.grid.as_ref().unwrap();
    let phi = run.dirichlet.as_ref().unwrap();
    let cfg = &run.config.solver;
    let ladder = viscosity_continuation(field, grid, phi, cfg)?;
    let last = ladder.last();

    out.add_csv("field.csv", &coordinate_header(grid.dim(), "w"), &field_rows(grid, &last.values))?;
    let rows: Vec<Vec<f64>> = ladder
        .rungs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let diff = if i == 0 { f64::NAN } else { ladder.differences[i - 1] };
            vec![s.eps, s.residual_norm, s.newton_iters as f64, s.sup_norm(), diff]
        })
        .collect();
    out.add_csv(
        "ladder.csv",
        &["eps", "residual_norm", "newton_iters", "sup_norm", "difference"],
        &rows,
    )?;
    out.add_result("final_eps", last.eps);
    out.add_result("sup_norm", last.sup_norm());
    out.add_result("residual_norm", last.residual_norm);
    out.add_result("truncation", last.truncation);
    out.add_result("rungs", ladder.rungs.len());
    out.add_result(
        "newton_iters",
        ladder.rungs.iter().map(|s| s.newton_iters).sum::<usize>(),
    );

    let checks = &run.config.checks;
    if checks.maximum_principle {
        let mut reports = Vec::new();
        for sol in &ladder.rungs {
            reports.push(check_maximum_principle(field, sol, phi)?);
        }
        let holds = reports.iter().all(|r| r.holds);
        let worst = reports.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        out.add_check("maximum_principle", holds, worst, &reports);
    }
    if checks.m_matrix {
        let trunc = build_truncation(truncation_level(grid, phi, cfg)?)?;
        let op = frozen_operator(field, grid, &last.values, last.eps, &trunc)?;
        let r = check_m_matrix(&op, grid);
        out.add_check("m_matrix", r.holds, r.min_row_dominance, &r);
    }
    if let Some(spec) = &checks.regularity {
        let r = interior_regularity_report(&ladder.rungs, spec.shrink)?;
        out.add_check("interior_bounds", r.holds, r.margin, &r);
    }
    if let Some(spec) = &checks.comparison {
        let lower = phi.shifted(-spec.shift);
        let r = check_comparison(field, grid, phi, &lower, 0.0, cfg)?;
        out.add_check("comparison", r.holds, r.margin, &r);
    }
    if let Some(spec) = &checks.boundary_modulus {
        let bm = BoundaryModulusSpec::on_box_face(grid, spec.x0.clone(), spec.sigma, spec.kappa0)?;
        let r = boundary_modulus_check(field, &ladder.rungs, phi, &bm)?;
        out.add_check("boundary_modulus", r.holds, r.margin, &r);
    }
    Ok(())
}

fn check_conditions(run: &Resolved, out: &mut Emission) -> Result<(), CliError> {
    let field = run.family.as_ref().unwrap();
    let spec = run.config.conditions.as_ref().unwrap();
    let region = match (&spec.region, &run.grid) {
        (Some(b), _) => BoxRegion::from_bounds(&b.lows, &b.highs)?,
        (None, Some(g)) => BoxRegion::from_bounds(g.lows(), g.highs())?,
        (None, None) => unreachable!("validated"),
    };
    let z = Interval::new(spec.z_range[0], spec.z_range[1])?;
    let mut rows = Vec::new();
    let suite_flags: Vec<ConditionName> = spec
        .flags
        .iter()
        .copied()
        .filter(|f| !matches!(f, ConditionName::Diagonal | ConditionName::Nondegeneracy))
        .collect();
    let mut reports = Vec::new();
    if spec.flags.contains(&ConditionName::Diagonal) {
        let density = match spec.lattice {
            SampleLattice::Uniform { per_axis } => per_axis,
            SampleLattice::Dyadic { levels } => 2 * levels as usize + 3,
        };
        let bound = spec.bounds.get(&ConditionName::Diagonal).copied().unwrap_or(f64::MAX);
        reports.push(check_diagonal_equivalence(field, &region, z, bound, density)?);
    }
    if !suite_flags.is_empty() {
        let options = SuiteOptions {
            lattice: spec.lattice,
            bounds: spec.bounds.clone(),
            super_exponent: spec.super_exponent,
        };
        reports.extend(check_subordination_suite(field, &region, z, &suite_flags, &options)?);
    }
    for r in reports {
        rows.push((r.condition_name, r.holds, r.best_constant, r.samples));
        out.add_check(&r.condition_name.to_string(), r.holds, r.best_constant, &r);
    }
    if spec.flags.contains(&ConditionName::Nondegeneracy) {
        let nd = spec
            .nondegeneracy
            .as_ref()
            .ok_or_else(|| CliError::Config("conditions.nondegeneracy: required by the nondegeneracy flag".into()))?;
        let mut boxes = Vec::new();
        let mut holds = true;
        for p in &nd.points {
            match check_nondegeneracy_box(field, p, nd.epsilon, z, nd.budget, nd.samples_per_axis) {
                Ok(b) => boxes.push(json!({"point": p, "box": b})),
                Err(e @ Error::NondegeneracyViolation { .. }) => {
                    holds = false;
                    boxes.push(json!({"point": p, "error": e.to_string()}));
                }
                Err(e) => return Err(e.into()),
            }
        }
        rows.push((ConditionName::Nondegeneracy, holds, f64::NAN, nd.points.len()));
        out.add_check("nondegeneracy", holds, if holds { 1.0 } else { 0.0 }, &boxes);
    }
    let mut w = String::from("condition,holds,best_constant,samples\n");
    for (n, h, b, s) in rows {
        w.push_str(&format!("{n},{h},{b:?},{s}\n"));
    }
    out.add_raw("conditions.csv", w.into_bytes());
    Ok(())
}

fn oracle(run: &Resolved, out: &mut Emission) -> Result<(), CliError> {
    let spec = run.config.oracle.as_ref().unwrap();
    let grid = run.grid.as_ref().unwrap();
    let ex = SharpnessExample::new(spec.m)?;
    let ys = dyadic_samples(spec.holder_kmin, spec.holder_kmax);
    let d = oracle_diagnostics(&ex, grid, spec.exclusion_radius, &ys)?;
    out.add_result("diagnostics", &d);
    out.add_check("energy", d.energy <= d.energy_bound, d.energy_bound - d.energy, &d);
    let holder_gap = (d.holder_slope - d.holder_target).abs();
    out.add_check("holder", holder_gap <= spec.holder_tol, spec.holder_tol - holder_gap, &d);

    // |w_x| ≤ m and k·w_y² ≤ 2m away from the x-axis
    let m = spec.m as f64;
    let mut worst = (f64::INFINITY, None::<usize>);
    let mut rows = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let c = grid.coords(p);
        let w = sharpness_w(&ex, c[0], c[1])?;
        rows.push(vec![c[0], c[1], w]);
        if c[1].abs() < 1e-8 {
            continue;
        }
        let (wx, wy) = sharpness_grad_w(&ex, c[0], c[1])?;
        let slack = (m - wx.abs()).min(2.0 * m - ex.weight(c[0], w) * wy * wy);
        if slack < worst.0 {
            worst = (slack, Some(p));
        }
    }
    out.add_check(
        "gradient_bounds",
        worst.0 >= 0.0,
        worst.0,
        json!({"margin": worst.0, "witness": worst.1}),
    );
    if spec.write_field {
        out.add_csv("oracle_field.csv", &["x", "y", "w"], &rows)?;
    }
    Ok(())
}

fn barrier(run: &Resolved, out: &mut Emission) -> Result<(), CliError> {
    let spec = run.config.barrier.as_ref().unwrap();
    let field = run.family.as_ref().unwrap();
    let n = field.dim();
    let origin = spec.origin.clone().unwrap_or_else(|| vec![0.0; n]);
    if origin.len() != n {
        return Err(CliError::Config("barrier.origin: dimension mismatch".into()));
    }
    let profile = profile_from_spec(&spec.profile)?;
    let nu = spec.search.nu.unwrap_or(spec.m0);
    match build_barrier(profile, spec.kappa0, spec.m0, spec.k, field, DMatrix::identity(n, n), origin, &spec.search) {
        Ok(b) => {
            let r = verify_barrier(&b, field, spec.m0, spec.k, nu, &BarrierSamples::default())?;
            out.add_json("certificate.json", &r.metadata["certificate"]);
            out.add_result("certificate", &r.metadata["certificate"]);
            out.add_check("barrier", r.holds, r.margin, &r);
        }
        Err(e @ Error::BarrierConstruction { .. }) => {
            out.add_check("barrier", false, f64::NAN, json!({"error": e.to_string()}));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn convergence(run: &Resolved, out: &mut Emission) -> Result<(), CliError> {
    let fspec = run.config.family.as_ref().unwrap();
    let gspec = run.config.grid.as_ref().unwrap();
    let spec = run.config.convergence.as_ref().unwrap();
    let field = run.family.as_ref().unwrap();
    let m = fspec.params.first().copied().unwrap_or(1.0) as u32;
    let ex = SharpnessExample::new(m)?;
    let phi_fn = dirichlet_function(&DirichletSpec::Oracle, Some(fspec), 2, run.config.seed)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &count in &spec.counts {
        let grid = StructuredGrid::new(gspec.lows.clone(), gspec.highs.clone(), vec![count, count])?;
        let phi = BoundaryData::from_fn(&grid, |x| phi_fn(x));
        let ladder = viscosity_continuation(field, &grid, &phi, &run.config.solver)?;
        let mut err = 0.0f64;
        for (p, v) in ladder.last().values.iter().enumerate() {
            let c = grid.coords(p);
            err = err.max((v - sharpness_w(&ex, c[0], c[1])?).abs());
        }
        let h = grid.spacing()[0];
        let order = rows
            .last()
            .map(|prev| (prev[2] / err).ln() / (prev[1] / h).ln())
            .unwrap_or(f64::NAN);
        rows.push(vec![count as f64, h, err, order]);
    }
    out.add_csv("convergence.csv", &["count", "h", "sup_error", "order"], &rows)?;
    let table: Vec<_> = rows
        .iter()
        .map(|r| json!({"count": r[0], "h": r[1], "sup_error": r[2], "order": r[3]}))
        .collect();
    out.add_result("table", &table);
    if let Some(max_error) = spec.max_error {
        let worst = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
        out.add_check("max_error", worst <= max_error, max_error - worst, &table);
    }
    if let Some(min_order) = spec.min_order {
        let worst = rows.iter().skip(1).map(|r| r[3]).fold(f64::INFINITY, f64::min);
        out.add_check("min_order", worst >= min_order, worst - min_order, &table);
    }
    Ok(())
}
