//! Quick self-tests of the data and the discretization.

use std::sync::Arc;

use ivpinn::assembly::{assemble_system, solve_petrov_galerkin};
use ivpinn::fem::{build_interpolation_matrices, build_space, QuadratureSet};
use ivpinn::mesh::{refine_nested, DiscretizationConfig};
use ivpinn::problems::{case_by_name, check_consistency, case_smooth, CASE_NAMES};
use ivpinn::quadrature::reference_triangle_rule;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Prints one line per check and returns whether all passed.
pub fn run_checks() -> bool {
    let mut ok = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "ok  " } else { "FAIL" });
        ok &= pass;
    };

    for name in CASE_NAMES {
        let case = match case_by_name(name, None) {
            Ok(c) => c,
            Err(e) => {
                report(name, false, e.to_string());
                continue;
            }
        };
        if let Some(r) = check_consistency(&case.problem, 100, 7) {
            report(
                &format!("data of case {name}"),
                r.pde <= 1e-6 && r.gradient <= 1e-7,
                format!("strong residual {:.1e}, gradient mismatch {:.1e}", r.pde, r.gradient),
            );
        }
    }

    for q in [3, 5] {
        let rule = reference_triangle_rule(q).expect("supported precision");
        let mut worst = 0.0f64;
        for a in 0..=q as u32 {
            for b in 0..=(q as u32 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                worst = worst.max((approx - exact).abs() / exact);
            }
        }
        report(&format!("triangle rule q = {q}"), worst <= 1e-12, format!("worst monomial error {worst:.1e}"));
    }

    let smooth = case_smooth();
    for cfg in DiscretizationConfig::SUPPORTED {
        let mesh = Arc::new(smooth.problem.coarse_mesh(2).expect("mesh"));
        let fine = refine_nested(&mesh, cfg.k_int).expect("refinement");
        let space = build_space(mesh, cfg.k_int).expect("space");
        let quad = QuadratureSet::new(&fine, cfg.q).expect("rule");
        let m = build_interpolation_matrices(&space, &quad, fine.parent_map().expect("nested")).expect("matrices");
        let k = cfg.k_int as i32;
        let u = |x: [f64; 2]| x[0].powi(k) - 2.0 * x[1].powi(k - 1) * x[0] + 0.5;
        let (vals, _) = m.apply(&space.interpolate(u));
        let worst = quad.points.iter().zip(&vals).map(|(&x, v)| (u(x) - v).abs()).fold(0.0, f64::max);
        report(
            &format!("degree {} interpolation", cfg.k_int),
            worst <= 1e-9,
            format!("worst value error {worst:.1e}"),
        );
    }

    let cfg = DiscretizationConfig::new(1, 3).expect("supported");
    let result = smooth
        .problem
        .coarse_mesh(2)
        .and_then(|mesh| assemble_system(&smooth.problem, cfg, &mesh))
        .and_then(|sys| Ok(sys.compute_residuals(&solve_petrov_galerkin(&sys)?).loss));
    match result {
        Ok(loss) => report("direct Petrov-Galerkin solve", loss <= 1e-18, format!("loss {loss:.1e}")),
        Err(e) => report("direct Petrov-Galerkin solve", false, e.to_string()),
    }
    ok
}
