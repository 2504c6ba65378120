//! Error measurement against exact solutions, log-log rate fitting, and
//! convergence tables.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{build_space, interpolation_at_points, FeSpace, InterpolationMatrices, QuadratureSet};
use crate::lifting::Field;
use crate::mesh::{DiscretizationConfig, Mesh};
use crate::network::{input_batch, Mlp};
use crate::problems::ProblemDefinition;
use crate::problems::TestCase;
use crate::quadrature::MAX_TRIANGLE_PRECISION;

/// Quadrature precision used to measure errors of a configuration: strictly
/// finer than assembly and exact for squared interpolants.
pub fn measurement_precision(config: DiscretizationConfig) -> usize {
    (config.q + 2).max(2 * config.k_int + 2).min(MAX_TRIANGLE_PRECISION)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldErrors {
    pub h1: f64,
    pub l2: f64,
}

/// Exact solution sampled on a measurement rule over a mesh, with the
/// interpolation matrices of a Lagrange space at the same points.
#[derive(Debug, Clone)]
pub struct ErrorMeter {
    quad: QuadratureSet,
    exact: Vec<(f64, [f64; 2])>,
    interp: InterpolationMatrices,
    dim: usize,
}

impl ErrorMeter {
    pub fn new(space: &FeSpace, exact: &Field, precision: usize) -> Result<Self> {
        let quad = QuadratureSet::new(space.mesh(), precision)?;
        let interp = interpolation_at_points(space, &quad.points, &quad.element)?;
        let exact = quad.points.iter().map(|&x| exact(x)).collect();
        Ok(Self {
            quad,
            exact,
            interp,
            dim: space.mesh().dim(),
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.quad.points
    }

    /// Errors of the finite-element field with the given nodal values.
    pub fn nodal(&self, nodal: &[f64]) -> FieldErrors {
        let (v, g) = self.interp.apply(nodal);
        self.pointwise(&v, &g)
    }

    /// Errors of a field given by values and gradients at the meter's
    /// points.
    pub fn pointwise(&self, vals: &[f64], grads: &[[f64; 2]]) -> FieldErrors {
        let (mut l2, mut semi) = (0.0, 0.0);
        for (q, w) in self.quad.weights.iter().enumerate() {
            let (u, gu) = self.exact[q];
            l2 += w * (u - vals[q]).powi(2);
            semi += w * (0..self.dim).map(|d| (gu[d] - grads[q][d]).powi(2)).sum::<f64>();
        }
        FieldErrors {
            h1: (l2 + semi).sqrt(),
            l2: l2.sqrt(),
        }
    }

    /// Errors of `B w` itself, evaluated at the meter's points without
    /// interpolation.
    pub fn network(&self, problem: &ProblemDefinition, net: &Mlp) -> Result<FieldErrors> {
        let x = input_batch(&self.quad.points, problem.dim(), problem.parameter);
        let (w, jac) = net.value_and_input_jacobian(x.as_ref())?;
        let wg: Vec<[f64; 2]> = (0..w.len())
            .map(|i| [jac[0][i], if self.dim == 2 { jac[1][i] } else { 0.0 }])
            .collect();
        let (v, g) = problem.lifting.apply(&self.quad.points, &w, &wg);
        Ok(self.pointwise(&v, &g))
    }
}

/// `H^1` error of a finite-element field against an exact solution.
pub fn h1_error(exact: &Field, space: &FeSpace, nodal: &[f64], precision: usize) -> Result<f64> {
    Ok(ErrorMeter::new(space, exact, precision)?.nodal(nodal).h1)
}

/// `H^1` norm of a finite-element field.
pub fn h1_norm(space: &FeSpace, nodal: &[f64], precision: usize) -> Result<f64> {
    h1_error(&crate::lifting::zero_field(), space, nodal, precision)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Coarse points left out of the fit.
    pub dropped: usize,
    pub n_points: usize,
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Least-squares slope of `log(error)` against `log(h)`. Up to
/// `min(trim, 2)` of the coarsest points may be dropped; the count with the
/// best coefficient of determination wins.
pub fn fit_rate(rows: &[(f64, f64)], trim: usize) -> Result<RateFit> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0 && h.is_finite() && e.is_finite())
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFewPoints(pts.len()));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: Option<RateFit> = None;
    for drop in 0..=trim.min(2) {
        let rest = &pts[drop..];
        if rest.len() < 3 {
            break;
        }
        let (slope, intercept, r2) = least_squares(rest);
        if best.is_none_or(|b| r2 > b.r_squared + 1e-12) {
            best = Some(RateFit {
                slope,
                intercept,
                r_squared: r2,
                dropped: drop,
                n_points: rest.len(),
            });
        }
    }
    Ok(best.expect("at least one fit"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    /// Coarse meshsize.
    pub h_coarse: f64,
    pub h_fine: f64,
    /// Number of interpolation nodes, i.e. network evaluation points.
    pub n_inputs: usize,
    pub h1_error: f64,
    pub l2_error: f64,
    pub final_loss: Option<f64>,
    pub wall_time: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub case: String,
    pub config: DiscretizationConfig,
    pub rows: Vec<ConvergenceRow>,
    pub rate: Option<RateFit>,
}

impl ConvergenceRecord {
    pub fn new(case: &str, config: DiscretizationConfig) -> Self {
        Self {
            case: case.to_string(),
            config,
            rows: Vec::new(),
            rate: None,
        }
    }

    /// Sorts rows by decreasing coarse meshsize and refits the `H^1` rate.
    /// The rate is left empty when fewer than three rows have a positive
    /// error.
    pub fn finish(&mut self, trim: usize) {
        self.rows.sort_by(|a, b| b.h_coarse.total_cmp(&a.h_coarse));
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.h_coarse, r.h1_error)).collect();
        self.rate = fit_rate(&pts, trim).ok();
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.case, self.config.k_test, self.config.q)
    }

    /// CSV table with `#` comment lines echoing the configuration and the
    /// fitted rate.
    pub fn to_csv(&self) -> String {
        let c = self.config;
        let mut s = format!("# case={} k_test={} q={} k_int={}\n", self.case, c.k_test, c.q, c.k_int);
        match self.rate {
            Some(r) => {
                let _ = writeln!(s, "# rate={:.6} r_squared={:.6} dropped={}", r.slope, r.r_squared, r.dropped);
            }
            None => s.push_str("# rate=none\n"),
        }
        s.push_str("H,h,n_inputs,h1_error,l2_error,final_loss,wall_time,seed\n");
        for r in &self.rows {
            let loss = r.final_loss.map(|l| format!("{l:e}")).unwrap_or_default();
            let seed = r.seed.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:e},{:e},{},{:e},{:e},{},{:.6},{}",
                r.h_coarse, r.h_fine, r.n_inputs, r.h1_error, r.l2_error, loss, r.wall_time, seed
            );
        }
        s
    }
}

/// Errors of the nodal interpolant of the exact solution on a sequence of
/// coarse meshes, without any training.
pub fn interpolant_oracle_study(case: &TestCase, config: DiscretizationConfig, nxs: &[usize]) -> Result<ConvergenceRecord> {
    let exact = case
        .problem
        .exact
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("case {} has no exact solution", case.problem.name)))?;
    let mut record = ConvergenceRecord::new(&case.problem.name, config);
    for &nx in nxs {
        let start = std::time::Instant::now();
        let mesh = Arc::new(case.problem.coarse_mesh(nx)?);
        let row = oracle_row(&mesh, &exact, config)?;
        record.rows.push(ConvergenceRow {
            wall_time: start.elapsed().as_secs_f64(),
            ..row
        });
    }
    record.finish(2);
    Ok(record)
}

fn oracle_row(mesh: &Arc<Mesh>, exact: &Field, config: DiscretizationConfig) -> Result<ConvergenceRow> {
    let space = build_space(mesh.clone(), config.k_int)?;
    let nodal = space.interpolate(|x| exact(x).0);
    let errs = ErrorMeter::new(&space, exact, measurement_precision(config))?.nodal(&nodal);
    let h = mesh.meshsize();
    Ok(ConvergenceRow {
        h_coarse: h,
        h_fine: h / config.k_int as f64,
        n_inputs: space.n_nodes(),
        h1_error: errs.h1,
        l2_error: errs.l2,
        final_loss: None,
        wall_time: 0.0,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::field;
    use crate::mesh::{build_structured_mesh, BoundarySpec, BoundaryTag, Rectangle};
    use crate::problems::{case_corner_singularity, case_smooth};

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_structured_mesh(n, n, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap())
    }

    #[test]
    fn polynomials_of_the_space_degree_are_reproduced() {
        let mesh = square(3);
        for k in [1, 2, 4] {
            let space = build_space(mesh.clone(), k).unwrap();
            let kk = k as i32;
            let u = field(move |x| {
                (x[0].powi(kk) + x[1] - 2.0, [kk as f64 * x[0].powi(kk - 1), 1.0])
            });
            let nodal = space.interpolate(|x| u(x).0);
            assert!(h1_error(&u, &space, &nodal, 2 * k + 2).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn p1_interpolation_error_of_x_squared() {
        // Two triangles of the unit square split along the diagonal: the P1
        // interpolant of x^2 is x on both, so the error is x^2 - x with
        // gradient 2x - 1. int (x^2 - x)^2 = 1/30, int (2x - 1)^2 = 1/3.
        let mesh = square(1);
        let space = build_space(mesh, 1).unwrap();
        let u = field(|x| (x[0] * x[0], [2.0 * x[0], 0.0]));
        let nodal = space.interpolate(|x| u(x).0);
        let meter = ErrorMeter::new(&space, &u, 6).unwrap();
        let e = meter.nodal(&nodal);
        assert!((e.l2 - (1.0f64 / 30.0).sqrt()).abs() < 1e-13);
        assert!((e.h1 - (1.0f64 / 30.0 + 1.0 / 3.0).sqrt()).abs() < 1e-13);
        let same = meter.pointwise(&meter.exact.iter().map(|p| p.0).collect::<Vec<_>>(), &meter.exact.iter().map(|p| p.1).collect::<Vec<_>>());
        assert_eq!(same.h1, 0.0);
    }

    #[test]
    fn rate_of_exact_power_law() {
        let rows: Vec<(f64, f64)> = (1..6).map(|i| {
            let h = 0.5f64.powi(i);
            (h, 3.0 * h * h)
        }).collect();
        let fit = fit_rate(&rows, 2).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert_eq!(fit.dropped, 0);
        assert!(matches!(fit_rate(&rows[..2], 2), Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn trimming_skips_a_preasymptotic_plateau() {
        let mut rows = vec![(1.0, 0.9), (0.5, 0.8)];
        for i in 2..6 {
            let h = 0.5f64.powi(i);
            rows.push((h, 10.0 * h.powi(4)));
        }
        let fit = fit_rate(&rows, 2).unwrap();
        assert_eq!(fit.dropped, 2);
        assert!((fit.slope - 4.0).abs() < 1e-10);
        let untrimmed = fit_rate(&rows, 0).unwrap();
        assert!((untrimmed.slope - 4.0).abs() > 0.2, "{}", untrimmed.slope);
    }

    #[test]
    fn oracle_rates() {
        let smooth = case_smooth();
        let cfg = DiscretizationConfig::new(1, 3).unwrap();
        let rec = interpolant_oracle_study(&smooth, cfg, &[2, 4, 8]).unwrap();
        let slope = rec.rate.unwrap().slope;
        assert!((slope - 4.0).abs() < 0.4, "{slope}");
        assert_eq!(rec.rows.len(), 3);
        assert!(rec.rows.windows(2).all(|w| w[0].h_coarse > w[1].h_coarse));
        assert!(rec.to_csv().contains("H,h,n_inputs,h1_error,l2_error,final_loss,wall_time,seed\n"));
        assert_eq!(rec.file_name(), "smooth_1_3.csv");
        let corner = interpolant_oracle_study(&case_corner_singularity(), cfg, &[4, 8, 16, 32]).unwrap();
        let slope = corner.rate.unwrap().slope;
        assert!((0.5..=0.9).contains(&slope), "{slope}");
    }
}
