//! One runner per subcommand: build the inputs, run the core computation,
//! write the CSV artifacts and the JSON report, return the pass flag.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use otsl_core::decomposition::{audit_chain_condition, boman_family, whitney_decompose};
use otsl_core::density::DensityModel;
use otsl_core::geometry::{AlignedBox, ConvexCell, DomainModel};
use otsl_core::overlap_graph::{
    build_graph, cauchy_family_cells, cauchy_family_graph, cheeger_audit, lambda2, GraphError,
    WeightedGraph,
};
use otsl_core::stability::{
    audit_gluing_boman, audit_gluing_graph, counterexample_run, fit_exponent, log_log_fit,
    sharpness_family, sharpness_solver_w1, ExponentConfig, SharpnessKind, StabilityError,
};
use otsl_core::transport::{solve_ot, CostKind, DiscreteMeasure, TransportError};

use crate::config::*;
use crate::report::{fmt_f64, Artifacts};
use crate::{CliError, RunContext};

fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}

fn graph_err(e: GraphError) -> CliError {
    match e {
        GraphError::IsolatedVertex(_) => CliError::Audit(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn stability_err(e: StabilityError) -> CliError {
    match e {
        StabilityError::InsufficientScales(_) => CliError::Config(e.to_string()),
        StabilityError::ZeroSpectralGap => CliError::Audit(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn density_for(
    spec: &Option<DensitySpec>,
    domain: &DomainModel,
) -> Result<DensityModel, CliError> {
    match spec {
        Some(s) => s.build(Some(domain)),
        None => DensityModel::uniform(domain.clone())
            .map_err(|e| config_err(format!("default uniform density: {e}"))),
    }
}

// ---------------------------------------------------------------------------

pub fn decompose(ctx: &RunContext, cfg: DecomposeConfig, raw: serde_json::Value) -> Result<bool, CliError> {
    let dom = cfg.domain.build()?;
    let rho = density_for(&cfg.density, &dom)?;
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["cubes.csv", "report.json"])?;

    let w = whitney_decompose(&dom, cfg.max_level)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let fam = boman_family(w).map_err(|e| CliError::Numerical(e.to_string()))?;
    let audit =
        audit_chain_condition(&fam, &rho).map_err(|e| CliError::Numerical(e.to_string()))?;

    let d = dom.dim();
    let mut header: Vec<String> = vec!["level".into()];
    header.extend((0..d).map(|j| format!("index_{j}")));
    header.push("side".into());
    header.push("boundary_distance".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = fam
        .whitney
        .cubes
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let mut row = vec![c.level.to_string()];
            row.extend(c.index.iter().map(i64::to_string));
            row.push(fmt_f64(c.sidelength()));
            row.push(fmt_f64(fam.whitney.boundary_distance(id as u32)));
            row
        })
        .collect();
    art.write_csv("cubes.csv", &header_refs, &rows)?;

    let pass = audit.overlap_within_bound && audit.constants_finite;
    let body = json!({
        "cube_count": fam.whitney.cubes.len(),
        "covered_volume": fam.whitney.covered_volume,
        "uncovered_volume": fam.whitney.uncovered_volume,
        "sigma": fam.sigma,
        "central_cell": fam.central_index,
        "chain_audit": audit,
    });
    let detail = format!(
        "{} cubes, overlap bound {}, growth {:.3}",
        fam.whitney.cubes.len(),
        audit.a_meas,
        audit.d_meas
    );
    art.finish("decompose", "whitney_chain_family", ctx.seed, raw, body, pass, &detail)
}

// ---------------------------------------------------------------------------

pub fn graph_audit(
    ctx: &RunContext,
    cfg: GraphAuditConfig,
    raw: serde_json::Value,
) -> Result<bool, CliError> {
    if !(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0) {
        return Err(config_err("rel_tol must lie in (0, 1)".into()));
    }
    let graph: WeightedGraph = match &cfg.graph {
        GraphSource::CauchyFamily(s) => {
            cauchy_family_graph(s.dim, s.beta, s.n, cfg.rel_tol).map_err(graph_err)?
        }
        GraphSource::WhitneyCover(s) => {
            let dom = s.domain.build()?;
            let rho = density_for(&s.density, &dom)?;
            let w = whitney_decompose(&dom, s.max_level)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let fam = boman_family(w).map_err(|e| CliError::Numerical(e.to_string()))?;
            let cells: Vec<ConvexCell> = fam
                .cells
                .iter()
                .map(|q| ConvexCell::Cube { cube: q.clone() })
                .collect();
            build_graph(&cells, &rho, cfg.rel_tol).map_err(graph_err)?
        }
    };

    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["vertices.csv", "edges.csv", "report.json"])?;

    let spectral = lambda2(&graph).map_err(graph_err)?;
    let cheeger = if spectral.connected {
        Some(cheeger_audit(&graph).map_err(graph_err)?)
    } else {
        None
    };

    let vrows: Vec<Vec<String>> = graph
        .vertex_weights
        .iter()
        .enumerate()
        .map(|(i, w)| vec![i.to_string(), fmt_f64(*w)])
        .collect();
    art.write_csv("vertices.csv", &["id", "weight"], &vrows)?;
    let erows: Vec<Vec<String>> = graph
        .edges
        .iter()
        .map(|&(i, j, w)| vec![i.to_string(), j.to_string(), fmt_f64(w)])
        .collect();
    art.write_csv("edges.csv", &["i", "j", "weight"], &erows)?;

    let pass = spectral.connected && cheeger.map_or(false, |c| c.pass);
    let detail = if spectral.connected {
        format!(
            "lambda2 {:.6e}, cut value {:.6e}",
            spectral.lambda2, spectral.cheeger_value
        )
    } else {
        format!(
            "disconnected: component of vertex 0 holds {} of {} cells",
            spectral.witness_component.as_ref().map_or(0, Vec::len),
            graph.n()
        )
    };
    let body = json!({
        "vertex_count": graph.n(),
        "edge_count": graph.edges.len(),
        "total_volume": graph.total_volume(),
        "degree_bound": graph.degree_bound(),
        "spectral": spectral,
        "cheeger_audit": cheeger,
    });
    art.finish("graph-audit", "spectral_gap_vs_cut", ctx.seed, raw, body, pass, &detail)
}

// ---------------------------------------------------------------------------

fn read_measure_csv(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| config_err(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "mass" {
        return Err(config_err(format!(
            "{}: header must be x0,...,x{{d-1}},mass",
            path.display()
        )));
    }
    let d = cols.len() - 1;
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(config_err(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                k + 2,
                d + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse::<f64>().map_err(|_| {
                config_err(format!(
                    "{} line {}: `{s}` is not a number",
                    path.display(),
                    k + 2
                ))
            })
        };
        let point: Result<Vec<f64>, CliError> = fields[..d].iter().map(|s| parse(s)).collect();
        points.push(point?);
        masses.push(parse(fields[d])?);
    }
    DiscreteMeasure::new(points, masses)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

pub fn ot_solve(ctx: &RunContext, cfg: OtSolveConfig, raw: serde_json::Value) -> Result<bool, CliError> {
    let source = read_measure_csv(&cfg.source_csv)?;
    let target = read_measure_csv(&cfg.target_csv)?;
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["plan.csv", "report.json"])?;

    let kind = cfg.cost.kind();
    let sol = solve_ot(&source, &target, kind).map_err(|e| match e {
        TransportError::UnbalancedMasses { .. }
        | TransportError::BadAtom { .. }
        | TransportError::SizeExceeded { .. } => config_err(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    })?;

    let rows: Vec<Vec<String>> = sol
        .plan
        .iter()
        .map(|&(i, j, m)| vec![i.to_string(), j.to_string(), fmt_f64(m)])
        .collect();
    art.write_csv("plan.csv", &["source", "target", "mass"], &rows)?;

    let wasserstein = match kind {
        CostKind::Quadratic => sol.primal_cost.max(0.0).sqrt(),
        CostKind::Euclidean => sol.primal_cost,
    };
    let pass = sol.duality_gap.abs() <= cfg.gap_tolerance;
    let detail = format!(
        "cost {:.6e}, duality gap {:.3e}",
        sol.primal_cost, sol.duality_gap
    );
    let body = json!({
        "source_atoms": source.len(),
        "target_atoms": target.len(),
        "cost_kind": match kind { CostKind::Quadratic => "quadratic", CostKind::Euclidean => "euclidean" },
        "primal_cost": sol.primal_cost,
        "wasserstein": wasserstein,
        "duality_gap": sol.duality_gap,
        "gap_tolerance": cfg.gap_tolerance,
        "plan_rows": sol.plan.len(),
        "source_potential": sol.source_potential,
        "target_potential": sol.target_potential,
    });
    art.finish("ot-solve", "exact_ot_duality", ctx.seed, raw, body, pass, &detail)
}

// ---------------------------------------------------------------------------

fn eval_function(
    spec: &FunctionSpec,
    points: &[Vec<f64>],
    dim: usize,
    seed: u64,
) -> Result<Vec<f64>, CliError> {
    match spec {
        FunctionSpec::Coordinate(c) => {
            if c.axis >= dim {
                return Err(config_err(format!(
                    "function coordinate: axis {} out of range for dimension {dim}",
                    c.axis
                )));
            }
            Ok(points.iter().map(|x| x[c.axis]).collect())
        }
        FunctionSpec::NormClamp(c) => {
            if !(c.cap > 0.0) {
                return Err(config_err("function norm_clamp: cap must be positive".into()));
            }
            Ok(points
                .iter()
                .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().min(c.cap))
                .collect())
        }
        FunctionSpec::MaxAffine(m) => {
            if m.pieces == 0 {
                return Err(config_err("function max_affine: need at least one piece".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let planes: Vec<(Vec<f64>, f64)> = (0..m.pieces)
                .map(|_| {
                    let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (a, rng.gen_range(-1.0..1.0))
                })
                .collect();
            Ok(points
                .iter()
                .map(|x| {
                    planes
                        .iter()
                        .map(|(a, b)| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + b)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect())
        }
    }
}

pub fn glue_audit(ctx: &RunContext, cfg: GlueAuditConfig, raw: serde_json::Value) -> Result<bool, CliError> {
    if cfg.grid < 2 {
        return Err(config_err("grid must be at least 2".into()));
    }
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["cells.csv", "report.json"])?;

    let (report, check) = match &cfg.target {
        GlueTarget::Chain(t) => {
            let dom = t.domain.build()?;
            let rho = density_for(&t.density, &dom)?;
            let region = dom
                .bounding_box()
                .map_err(|e| config_err(format!("domain has no bounding box: {e}")))?;
            let w = whitney_decompose(&dom, t.max_level)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let fam = boman_family(w).map_err(|e| CliError::Numerical(e.to_string()))?;
            let audit = audit_chain_condition(&fam, &rho)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let atoms = rho
                .discretize(&region, cfg.grid)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let f = eval_function(&cfg.function, &atoms.points, dom.dim(), ctx.seed)?;
            let rep = audit_gluing_boman(&fam, &audit, &atoms, &f).map_err(stability_err)?;
            (rep, "chain_family_gluing")
        }
        GlueTarget::CauchyGraph(t) => {
            let rho = DensityModel::generalized_cauchy(t.dim, t.beta)
                .map_err(|e| config_err(format!("generalized_cauchy: {e}")))?;
            let cells = cauchy_family_cells(t.dim, t.n);
            let graph = cauchy_family_graph(t.dim, t.beta, t.n, t.rel_tol).map_err(graph_err)?;
            let spectral = lambda2(&graph).map_err(graph_err)?;
            let radius = 2.0f64.powi(t.n as i32);
            let region = AlignedBox::new(vec![-radius; t.dim], vec![radius; t.dim]);
            let atoms = rho
                .discretize(&region, cfg.grid)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let f = eval_function(&cfg.function, &atoms.points, t.dim, ctx.seed)?;
            let rep =
                audit_gluing_graph(&cells, &graph, &spectral, &atoms, &f).map_err(stability_err)?;
            (rep, "spectral_gap_gluing")
        }
    };

    let rows: Vec<Vec<String>> = report
        .per_cell
        .iter()
        .map(|c| vec![c.cell.to_string(), fmt_f64(c.mass), fmt_f64(c.variance)])
        .collect();
    art.write_csv("cells.csv", &["cell", "mass", "variance"], &rows)?;

    let pass = report.pass;
    let detail = format!(
        "lhs {:.6e} vs rhs {:.6e}, slack {:.3e}",
        report.lhs, report.rhs, report.slack
    );
    let body = serde_json::to_value(&report)
        .map_err(|e| CliError::Numerical(format!("report serialization: {e}")))?;
    art.finish("glue-audit", check, ctx.seed, raw, body, pass, &detail)
}

// ---------------------------------------------------------------------------

pub fn stability_exponent(
    ctx: &RunContext,
    cfg: StabilityExponentConfig,
    raw: serde_json::Value,
) -> Result<bool, CliError> {
    let domain = cfg.domain.as_ref().map(|d| d.build()).transpose()?;
    let rho = cfg.density.build(domain.as_ref())?;
    let region = cfg.region.build()?;
    if region.dim() != rho.dim() {
        return Err(config_err(format!(
            "region dimension {} does not match density dimension {}",
            region.dim(),
            rho.dim()
        )));
    }
    if cfg.grid < 2 || cfg.target_atoms < 2 || cfg.trials == 0 {
        return Err(config_err(
            "need grid >= 2, target_atoms >= 2, trials >= 1".into(),
        ));
    }
    if cfg.scales.iter().any(|&s| !(s > 0.0)) {
        return Err(config_err("scales must be positive".into()));
    }
    if cfg.scales.windows(2).any(|w| w[0] <= w[1]) {
        return Err(config_err("scales must be strictly decreasing".into()));
    }
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["pairs.csv", "report.json"])?;

    let ecfg = ExponentConfig {
        tag: cfg.tag.clone(),
        rho,
        region,
        grid: cfg.grid,
        target_atoms: cfg.target_atoms,
        split_mass: cfg.split_mass,
        theory_potential: cfg.theory_potential,
        theory_map: cfg.theory_map,
    };
    let fit = fit_exponent(&ecfg, &cfg.scales, cfg.trials, ctx.seed).map_err(stability_err)?;

    let rows: Vec<Vec<String>> = fit
        .pairs
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.scale),
                p.trial.to_string(),
                fmt_f64(p.w1),
                fmt_f64(p.w2),
                fmt_f64(p.potential_gap),
                fmt_f64(p.map_gap),
                fmt_f64(p.drift),
                p.refined.to_string(),
            ]
        })
        .collect();
    art.write_csv(
        "pairs.csv",
        &["scale", "trial", "w1", "w2", "potential_gap", "map_gap", "drift", "refined"],
        &rows,
    )?;

    let slope_ok = cfg
        .min_potential_slope
        .map_or(true, |v| fit.potential_slope >= v);
    let gap_ok = cfg.max_gap_factor.map_or(true, |c| {
        fit.pairs.iter().all(|p| p.potential_gap <= c * p.w1.sqrt())
    });
    let pass = slope_ok && gap_ok;
    let detail = format!(
        "potential slope {:.3} (theory {:.3}), map slope {:.3}, {} pairs",
        fit.potential_slope,
        fit.theory_potential,
        fit.map_slope,
        fit.pairs.len()
    );
    let body = json!({
        "family": fit.family,
        "fit": {
            "potential": {"slope": fit.potential_slope, "intercept": fit.potential_intercept, "residual": fit.potential_residual},
            "map": {"slope": fit.map_slope, "intercept": fit.map_intercept, "residual": fit.map_residual},
        },
        "theory": {"potential": fit.theory_potential, "map": fit.theory_map},
        "grids": fit.grids,
        "max_drift": fit.max_drift,
        "pair_count": fit.pairs.len(),
        "gates": {
            "min_potential_slope": cfg.min_potential_slope,
            "min_potential_slope_pass": slope_ok,
            "max_gap_factor": cfg.max_gap_factor,
            "max_gap_factor_pass": gap_ok,
        },
    });
    art.finish(
        "stability-exponent",
        "stability_exponent_fit",
        ctx.seed,
        raw,
        body,
        pass,
        &detail,
    )
}

// ---------------------------------------------------------------------------

pub fn sharpness(ctx: &RunContext, cfg: SharpnessConfig, raw: serde_json::Value) -> Result<bool, CliError> {
    if cfg.radii.is_empty() || cfg.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(config_err("radii must be positive and finite".into()));
    }
    if !(cfg.band_factor >= 1.0) {
        return Err(config_err("band_factor must be at least 1".into()));
    }
    if cfg.slope_range.is_some() && cfg.radii.len() < 2 {
        return Err(config_err("slope_range needs at least two radii".into()));
    }
    let (kind, rho) = match &cfg.family {
        SharpnessFamilySpec::Cauchy(s) => (
            SharpnessKind::Cauchy,
            DensityModel::generalized_cauchy(s.dim, s.beta)
                .map_err(|e| config_err(format!("generalized_cauchy: {e}")))?,
        ),
        SharpnessFamilySpec::Gaussian(s) => {
            if s.kappa <= 0.0 {
                return Err(config_err("gaussian: kappa must be positive".into()));
            }
            (SharpnessKind::Gaussian, DensityModel::gaussian(s.dim, s.kappa))
        }
    };
    if let Some(sc) = &cfg.solver_check {
        if rho.dim() != 1 {
            return Err(config_err(
                "solver_check is supported in dimension 1 only".into(),
            ));
        }
        if sc.grid < 2 || !(sc.region_factor > 1.0) || !(sc.rel_tolerance > 0.0) {
            return Err(config_err(
                "solver_check: need grid >= 2, region_factor > 1, rel_tolerance > 0".into(),
            ));
        }
    }
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["rows.csv", "report.json"])?;

    let table = sharpness_family(kind, &rho, &cfg.radii).map_err(stability_err)?;

    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.r),
                fmt_f64(r.r_prime),
                fmt_f64(r.c_r),
                fmt_f64(r.c_r_prime),
                fmt_f64(r.ball_mass),
                fmt_f64(r.w1),
                fmt_f64(r.potential_gap),
                fmt_f64(r.rate),
                fmt_f64(r.ratio),
            ]
        })
        .collect();
    art.write_csv(
        "rows.csv",
        &["r", "r_prime", "c_r", "c_r_prime", "ball_mass", "w1", "potential_gap", "rate", "ratio"],
        &rows,
    )?;

    let band_pass = table.ratio_spread <= cfg.band_factor;
    let fit_points: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.w1 > 0.0 && r.potential_gap > 0.0)
        .map(|r| (r.w1, r.potential_gap))
        .collect();
    let (slope, intercept, residual) = log_log_fit(&fit_points);
    let slope_pass = cfg
        .slope_range
        .map_or(true, |(lo, hi)| slope >= lo && slope <= hi);

    let mut solver_rows = Vec::new();
    let mut solver_pass = true;
    if let Some(sc) = &cfg.solver_check {
        for row in &table.rows {
            let half = sc.region_factor * row.r_prime;
            let region = AlignedBox::new(vec![-half], vec![half]);
            let solved = sharpness_solver_w1(&rho, row.r, row.r_prime, &region, sc.grid)
                .map_err(stability_err)?;
            let rel = (solved - row.w1).abs() / row.w1;
            solver_pass &= rel <= sc.rel_tolerance;
            solver_rows.push(json!({
                "r": row.r,
                "r_prime": row.r_prime,
                "closed_form_w1": row.w1,
                "solver_w1": solved,
                "rel_error": rel,
            }));
        }
    }

    let pass = band_pass && slope_pass && solver_pass;
    let detail = format!(
        "ratio spread {:.3} (band {:.1}), gap slope {:.3}",
        table.ratio_spread, cfg.band_factor, slope
    );
    let body = json!({
        "kind": match kind { SharpnessKind::Cauchy => "cauchy", SharpnessKind::Gaussian => "gaussian" },
        "theta": table.theta,
        "row_count": table.rows.len(),
        "small_radius": table.small_radius,
        "ratio_spread": table.ratio_spread,
        "band_factor": cfg.band_factor,
        "band_pass": band_pass,
        "gap_slope": slope,
        "gap_intercept": intercept,
        "gap_residual": residual,
        "slope_range": cfg.slope_range,
        "slope_pass": slope_pass,
        "solver_check": solver_rows,
        "solver_pass": solver_pass,
    });
    art.finish("sharpness", "sharpness_ratio_band", ctx.seed, raw, body, pass, &detail)
}

// ---------------------------------------------------------------------------


pub fn counterexample(
    ctx: &RunContext,
    cfg: CounterexampleConfig,
    raw: serde_json::Value,
) -> Result<bool, CliError> {
    if cfg.n_rooms < 3 {
        return Err(config_err("need n_rooms >= 3".into()));
    }
    if cfg.n_max < 1 || cfg.n_max >= cfg.n_rooms {
        return Err(config_err(format!(
            "n_max must lie in 1..={} for {} rooms",
            cfg.n_rooms - 1,
            cfg.n_rooms
        )));
    }
    if cfg.pairs.is_empty() || cfg.pairs.iter().any(|&(p, _)| p != 1 && p != 2) {
        return Err(config_err(
            "pairs must be nonempty with p in {1, 2}".into(),
        ));
    }
    if cfg.monotone_from < 1 || cfg.monotone_from > cfg.n_max {
        return Err(config_err(format!(
            "monotone_from must lie in 1..={}",
            cfg.n_max
        )));
    }
    let mut art = Artifacts::new(&ctx.out, ctx.force)?;
    art.reserve(&["rows.csv", "report.json"])?;

    let dom = DomainModel::room_and_passage(cfg.n_rooms);
    let table = counterexample_run(&dom, cfg.n_max, &cfg.pairs).map_err(stability_err)?;

    let mut header: Vec<String> = [
        "n",
        "t",
        "t_prime",
        "left_mass",
        "passage_mass",
        "right_mass",
        "variance",
        "variance_lower_bound",
        "mass_identity_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(cfg.pairs.iter().map(|(p, q)| format!("ratio_p{p}_q{q}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                r.n.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.t_prime),
                fmt_f64(r.left_mass),
                fmt_f64(r.passage_mass),
                fmt_f64(r.right_mass),
                fmt_f64(r.variance),
                fmt_f64(r.variance_lower_bound),
                fmt_f64(r.mass_identity_error),
            ];
            row.extend(table.curves.iter().map(|c| fmt_f64(c.ratios[i])));
            row
        })
        .collect();
    art.write_csv("rows.csv", &header_refs, &rows)?;

    let lo = cfg.monotone_from - 1;
    let mut curve_reports = Vec::new();
    let mut all_decreasing = true;
    for curve in &table.curves {
        let window = &curve.ratios[lo..];
        let mut violations = Vec::new();
        for (k, pair) in window.windows(2).enumerate() {
            if pair[1] >= pair[0] {
                violations.push(format!(
                    "n {} -> {}: {:.6e} -> {:.6e}",
                    cfg.monotone_from + k,
                    cfg.monotone_from + k + 1,
                    pair[0],
                    pair[1]
                ));
            }
        }
        let decreasing = violations.is_empty();
        all_decreasing &= decreasing;
        curve_reports.push(json!({
            "p": curve.p,
            "q": curve.q,
            "ratios": curve.ratios,
            "strictly_decreasing": decreasing,
            "violations": violations,
        }));
    }
    let identity_max = table
        .rows
        .iter()
        .map(|r| r.mass_identity_error)
        .fold(0.0, f64::max);
    let identity_pass = identity_max <= cfg.identity_tolerance;
    let pass = all_decreasing && identity_pass;
    let detail = format!(
        "{} of {} curves strictly decreasing on n in [{}, {}], identity error {:.2e}",
        curve_reports
            .iter()
            .filter(|c| c["strictly_decreasing"] == json!(true))
            .count(),
        table.curves.len(),
        cfg.monotone_from,
        cfg.n_max,
        identity_max
    );
    let body = json!({
        "n_rooms": cfg.n_rooms,
        "n_max": cfg.n_max,
        "monotone_from": cfg.monotone_from,
        "curves": curve_reports,
        "identity_max_error": identity_max,
        "identity_tolerance": cfg.identity_tolerance,
        "identity_pass": identity_pass,
        "smallness_warnings": table.smallness_warnings,
    });
    art.finish(
        "counterexample",
        "transport_variance_ratio_decay",
        ctx.seed,
        raw,
        body,
        pass,
        &detail,
    )
}
