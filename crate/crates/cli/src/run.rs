//! Executes one experiment and writes its artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ivpinn::experiments::{
    infsup_study, parametric_study, train_row, NetShape, RowOutcome, Variant,
};
use ivpinn::mesh::DiscretizationConfig;
use ivpinn::problems::TestCase;
use ivpinn::reporting::{interpolant_oracle_study, ConvergenceRecord};
use ivpinn::training::write_checkpoint;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Mode};

#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub row_seconds: Vec<f64>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    outcome: Outcome,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> std::io::Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        self.outcome.files.push(path);
        Ok(())
    }

    fn fail(&mut self, what: String) {
        eprintln!("error: {what}");
        self.outcome.failures.push(what);
    }
}

/// Runs the experiment, writing CSVs, histories, checkpoints and a
/// manifest into `out`. Row failures are collected, not raised.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> std::io::Result<Outcome> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut ctx = Ctx {
        cfg,
        out,
        outcome: Outcome::default(),
    };
    let case = cfg.test_case().expect("validated");
    let disc = cfg.discretization().expect("validated");
    let nxs = cfg.mesh.as_ref().map(|m| m.sequence().expect("validated")).unwrap_or_default();
    match cfg.mode {
        Mode::Ivpinn | Mode::ZeroData => trained(&mut ctx, &case, disc, &nxs, Variant::Interpolated)?,
        Mode::Vpinn => trained(&mut ctx, &case, disc, &nxs, Variant::NonInterpolated)?,
        Mode::OracleInterp => match interpolant_oracle_study(&case, disc, &nxs) {
            Ok(rec) => {
                ctx.outcome.row_seconds = rec.rows.iter().map(|r| r.wall_time).collect();
                ctx.write(&rec.file_name(), rec.to_csv())?;
            }
            Err(e) => ctx.fail(format!("oracle study: {e}")),
        },
        Mode::Infsup => infsup(&mut ctx, &case, disc, &nxs)?,
        Mode::Parametric => parametric(&mut ctx, disc, nxs[0])?,
        Mode::HyperparamSweep => sweep(&mut ctx, &case, disc, nxs[0])?,
    }
    let manifest = json!({
        "config": cfg,
        "versions": {
            "ivpinn": env!("CARGO_PKG_VERSION"),
        },
        "case": case.problem.name,
        "k_int": disc.k_int,
        "training": format!("{:?}", cfg.training_config()),
        "row_seconds": ctx.outcome.row_seconds,
        "total_seconds": start.elapsed().as_secs_f64(),
        "files": ctx.outcome.files,
        "failures": ctx.outcome.failures,
    });
    ctx.write("manifest.json", serde_json::to_string_pretty(&manifest).expect("serializable"))?;
    Ok(ctx.outcome)
}

fn trained(
    ctx: &mut Ctx<'_>,
    case: &TestCase,
    disc: DiscretizationConfig,
    nxs: &[usize],
    variant: Variant,
) -> std::io::Result<()> {
    let cfg = ctx.cfg;
    let shape = NetShape::new(cfg.network.hidden, cfg.network.width);
    let stem = match variant {
        Variant::Interpolated => case.problem.name.clone(),
        Variant::NonInterpolated => format!("{}-vpinn", case.problem.name),
    };
    let row_cfg = |nx: usize| {
        let mut t = cfg.training_config();
        t.checkpoint = Some(ctx.out.join(format!("{stem}_{}_{}_nx{nx}.net", disc.k_test, disc.q)));
        t
    };
    let results: Vec<(usize, ivpinn::Result<RowOutcome>)> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = nxs
                .iter()
                .map(|&nx| {
                    let t = row_cfg(nx);
                    s.spawn(move || (nx, train_row(case, disc, nx, shape, &t, variant)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("row thread panicked")).collect()
        })
    } else {
        nxs.iter().map(|&nx| (nx, train_row(case, disc, nx, shape, &row_cfg(nx), variant))).collect()
    };
    let mut record = ConvergenceRecord::new(&stem, disc);
    for (nx, res) in results {
        match res {
            Ok(out) => {
                ctx.outcome.row_seconds.push(out.row.wall_time);
                ctx.write(&format!("{stem}_{}_{}_nx{nx}_history.csv", disc.k_test, disc.q), out.history.to_csv())?;
                record.rows.push(out.row);
            }
            Err(ivpinn::Error::NonFiniteLoss { epoch, last_good }) => {
                let path = ctx.out.join(format!("{stem}_{}_{}_nx{nx}_last_good.net", disc.k_test, disc.q));
                if write_checkpoint(&path, &last_good).is_ok() {
                    ctx.outcome.files.push(path);
                }
                ctx.fail(format!("nx = {nx}: non-finite loss at epoch {epoch}"));
            }
            Err(e) => ctx.fail(format!("nx = {nx}: {e}")),
        }
    }
    record.finish(2);
    ctx.write(&record.file_name(), record.to_csv())
}

fn infsup(ctx: &mut Ctx<'_>, case: &TestCase, disc: DiscretizationConfig, nxs: &[usize]) -> std::io::Result<()> {
    let mut csv = String::from("nx,dim_trial,dim_test,alpha_tilde,c_h,C_h\n");
    for &nx in nxs {
        match infsup_study(case, disc, &[nx]) {
            Ok(rows) => {
                for (nx, r) in rows {
                    let _ = writeln!(csv, "{nx},{},{},{:e},{:e},{:e}", r.dim_trial, r.dim_test, r.alpha_tilde, r.c_h, r.c_h_upper);
                }
            }
            Err(e) => ctx.fail(format!("nx = {nx}: {e}")),
        }
    }
    let name = format!("{}-infsup_{}_{}.csv", case.problem.name, disc.k_test, disc.q);
    ctx.write(&name, csv)
}

fn parametric(ctx: &mut Ctx<'_>, disc: DiscretizationConfig, nx: usize) -> std::io::Result<()> {
    let cfg = ctx.cfg;
    let mut t = cfg.training_config();
    t.checkpoint = Some(ctx.out.join(format!("parametric_{}_{}.net", disc.k_test, disc.q)));
    let shape = NetShape::new(cfg.network.hidden, cfg.network.width);
    let start = Instant::now();
    match parametric_study(disc, nx, cfg.n_train(), &cfg.test_values(), shape, &t) {
        Ok(o) => {
            ctx.outcome.row_seconds.push(start.elapsed().as_secs_f64());
            let mut csv = String::from("p,set,h1_error\n");
            for (p, e) in o.train_params.iter().zip(&o.train_errors) {
                let _ = writeln!(csv, "{p},train,{e:e}");
            }
            for (p, e) in o.test_params.iter().zip(&o.test_errors) {
                let set = if ivpinn::problems::is_extrapolation(*p) { "extrapolation" } else { "test" };
                let _ = writeln!(csv, "{p},{set},{e:e}");
            }
            ctx.write(&format!("parametric_{}_{}.csv", disc.k_test, disc.q), csv)?;
            ctx.write(&format!("parametric_{}_{}_history.csv", disc.k_test, disc.q), o.history.to_csv())?;
        }
        Err(e) => ctx.fail(format!("parametric training: {e}")),
    }
    Ok(())
}

fn sweep(ctx: &mut Ctx<'_>, case: &TestCase, disc: DiscretizationConfig, nx: usize) -> std::io::Result<()> {
    let cfg = ctx.cfg;
    let spec = cfg.sweep.clone().expect("validated");
    let t = cfg.training_config();
    let mut csv = String::from("layers");
    for w in &spec.widths {
        let _ = write!(csv, ",width_{w}");
    }
    csv.push('\n');
    for &l in &spec.layers {
        let _ = write!(csv, "{l}");
        for &w in &spec.widths {
            match train_row(case, disc, nx, NetShape::new(l, w), &t, Variant::Interpolated) {
                Ok(out) => {
                    ctx.outcome.row_seconds.push(out.row.wall_time);
                    let _ = write!(csv, ",{:e}", out.row.h1_error);
                }
                Err(e) => {
                    ctx.fail(format!("{l} layers x {w} neurons: {e}"));
                    csv.push(',');
                }
            }
        }
        csv.push('\n');
    }
    let name = format!("{}-sweep_{}_{}.csv", case.problem.name, disc.k_test, disc.q);
    ctx.write(&name, csv)
}
