//! Drivers that combine assembly, training and measurement into the rows
//! of convergence tables.

use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{assemble_system, compute_infsup, solve_petrov_galerkin, AssembledSystem, InfSupReport};
use crate::error::{Error, Result};
use crate::mesh::DiscretizationConfig;
use crate::network::{Activation, Mlp};
use crate::problems::{case_parametric_nonlinear, parameter_grid, TestCase};
use crate::reporting::{measurement_precision, ConvergenceRecord, ConvergenceRow, ErrorMeter, FieldErrors};
use crate::training::{nodal_values, train, Objective, TrainingConfig, TrainingHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub hidden: usize,
    pub width: usize,
}

impl NetShape {
    pub fn new(hidden: usize, width: usize) -> Self {
        Self { hidden, width }
    }

    pub fn build(self, input_dim: usize, seed: u64) -> Result<Mlp> {
        Mlp::with_shape(input_dim, self.hidden, self.width, Activation::Tanh, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Loss on the interpolant `I_H B w`; error of the interpolant.
    Interpolated,
    /// Loss and error on `B w` at quadrature points.
    NonInterpolated,
}

#[derive(Debug, Clone)]
pub struct RowOutcome {
    pub row: ConvergenceRow,
    pub net: Mlp,
    pub history: TrainingHistory,
}

fn meter_for(system: &AssembledSystem) -> Result<ErrorMeter> {
    let exact = system
        .problem
        .exact
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("case {} has no exact solution", system.problem.name)))?;
    ErrorMeter::new(&system.trial, &exact, measurement_precision(system.config))
}

/// Errors of a trained network on a system: of its interpolant or of
/// `B w` itself.
pub fn network_errors(system: &AssembledSystem, net: &Mlp, variant: Variant) -> Result<FieldErrors> {
    let meter = meter_for(system)?;
    match variant {
        Variant::Interpolated => Ok(meter.nodal(&nodal_values(system, net))),
        Variant::NonInterpolated => meter.network(&system.problem, net),
    }
}

/// Assembles, trains and measures one coarse mesh.
pub fn train_row(
    case: &TestCase,
    config: DiscretizationConfig,
    nx: usize,
    shape: NetShape,
    cfg: &TrainingConfig,
    variant: Variant,
) -> Result<RowOutcome> {
    let start = Instant::now();
    let mesh = case.problem.coarse_mesh(nx)?;
    let system = Arc::new(assemble_system(&case.problem, config, &mesh)?);
    let net = shape.build(case.problem.network_input_dim(), cfg.seed)?;
    let objective = match variant {
        Variant::Interpolated => Objective::interpolated(system.clone())?,
        Variant::NonInterpolated => Objective::pointwise(system.clone())?,
    };
    let meter = meter_for(&system)?;
    let monitor = |n: &Mlp| match variant {
        Variant::Interpolated => meter.nodal(&nodal_values(&system, n)).h1,
        Variant::NonInterpolated => meter.network(&system.problem, n).map(|e| e.h1).unwrap_or(f64::NAN),
    };
    let (net, history) = train(&objective, net, cfg, Some(&monitor))?;
    let errs = network_errors(&system, &net, variant)?;
    let n_inputs = match variant {
        Variant::Interpolated => system.n_trial(),
        Variant::NonInterpolated => system.cache.quad.len(),
    };
    Ok(RowOutcome {
        row: ConvergenceRow {
            h_coarse: system.coarse.meshsize(),
            h_fine: system.fine.meshsize(),
            n_inputs,
            h1_error: errs.h1,
            l2_error: errs.l2,
            final_loss: history.best_loss(),
            wall_time: start.elapsed().as_secs_f64(),
            seed: Some(cfg.seed),
        },
        net,
        history,
    })
}

/// Trained convergence study over a sequence of coarse meshes.
pub fn trained_study(
    case: &TestCase,
    config: DiscretizationConfig,
    nxs: &[usize],
    shape: NetShape,
    cfg: &TrainingConfig,
    variant: Variant,
) -> Result<(ConvergenceRecord, Vec<RowOutcome>)> {
    let mut record = ConvergenceRecord::new(&case.problem.name, config);
    let mut outcomes = Vec::new();
    for &nx in nxs {
        let out = train_row(case, config, nx, shape, cfg, variant)?;
        record.rows.push(out.row);
        outcomes.push(out);
    }
    record.finish(2);
    Ok((record, outcomes))
}

/// Direct Petrov-Galerkin solutions on a sequence of coarse meshes.
pub fn petrov_galerkin_study(case: &TestCase, config: DiscretizationConfig, nxs: &[usize]) -> Result<ConvergenceRecord> {
    let mut record = ConvergenceRecord::new(&case.problem.name, config);
    for &nx in nxs {
        let start = Instant::now();
        let mesh = case.problem.coarse_mesh(nx)?;
        let system = assemble_system(&case.problem, config, &mesh)?;
        let u = solve_petrov_galerkin(&system)?;
        let errs = meter_for(&system)?.nodal(&u);
        record.rows.push(ConvergenceRow {
            h_coarse: system.coarse.meshsize(),
            h_fine: system.fine.meshsize(),
            n_inputs: system.n_trial(),
            h1_error: errs.h1,
            l2_error: errs.l2,
            final_loss: Some(system.compute_residuals(&u).loss),
            wall_time: start.elapsed().as_secs_f64(),
            seed: None,
        });
    }
    record.finish(2);
    Ok(record)
}

/// Inf-sup diagnostics on a sequence of coarse meshes.
pub fn infsup_study(case: &TestCase, config: DiscretizationConfig, nxs: &[usize]) -> Result<Vec<(usize, InfSupReport)>> {
    nxs.iter()
        .map(|&nx| {
            let mesh = case.problem.coarse_mesh(nx)?;
            let system = assemble_system(&case.problem, config, &mesh)?;
            Ok((nx, compute_infsup(&system)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ParametricOutcome {
    pub train_params: Vec<f64>,
    pub train_errors: Vec<f64>,
    pub test_params: Vec<f64>,
    pub test_errors: Vec<f64>,
    pub net: Mlp,
    pub history: TrainingHistory,
}

/// `H^1` errors of the interpolated parametric network at the given
/// parameter values.
pub fn parametric_errors(net: &Mlp, config: DiscretizationConfig, nx: usize, params: &[f64]) -> Result<Vec<f64>> {
    params
        .iter()
        .map(|&p| {
            let case = case_parametric_nonlinear(p);
            let mesh = case.problem.coarse_mesh(nx)?;
            let system = assemble_system(&case.problem, config, &mesh)?;
            Ok(network_errors(&system, net, Variant::Interpolated)?.h1)
        })
        .collect()
}

/// Trains one network with the parameter as extra input on `n_train`
/// equally spaced values and measures it on those and on `test_params`.
pub fn parametric_study(
    config: DiscretizationConfig,
    nx: usize,
    n_train: usize,
    test_params: &[f64],
    shape: NetShape,
    cfg: &TrainingConfig,
) -> Result<ParametricOutcome> {
    let train_params = parameter_grid(n_train);
    let systems = train_params
        .iter()
        .map(|&p| {
            let case = case_parametric_nonlinear(p);
            let mesh = case.problem.coarse_mesh(nx)?;
            Ok(Arc::new(assemble_system(&case.problem, config, &mesh)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let net = shape.build(3, cfg.seed)?;
    let (net, history) = train(&Objective::parametric(systems)?, net, cfg, None)?;
    Ok(ParametricOutcome {
        train_errors: parametric_errors(&net, config, nx, &train_params)?,
        test_errors: parametric_errors(&net, config, nx, test_params)?,
        train_params,
        test_params: test_params.to_vec(),
        net,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub shape: NetShape,
    pub h1_error: f64,
    pub final_loss: f64,
}

/// Errors of trained networks of every listed depth and width on one mesh.
pub fn hyperparameter_sweep(
    case: &TestCase,
    config: DiscretizationConfig,
    nx: usize,
    layers: &[usize],
    widths: &[usize],
    cfg: &TrainingConfig,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &l in layers {
        for &w in widths {
            let shape = NetShape::new(l, w);
            let out = train_row(case, config, nx, shape, cfg, Variant::Interpolated)?;
            cells.push(SweepCell {
                shape,
                h1_error: out.row.h1_error,
                final_loss: out.row.final_loss.unwrap_or(f64::NAN),
            });
        }
    }
    Ok(cells)
}
