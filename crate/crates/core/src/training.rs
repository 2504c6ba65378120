//! Minimization of the residual loss over network weights: ADAM with a
//! decaying learning rate followed by BFGS or L-BFGS with a strong Wolfe
//! line search.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};
use crate::network::{input_batch, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondOrder {
    /// Dense BFGS up to `dense_limit` weights, L-BFGS beyond.
    Auto,
    Bfgs,
    Lbfgs,
    Off,
}

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub adam_epochs: usize,
    pub adam_lr0: f64,
    /// Epochs over which the learning rate halves.
    pub lr_half_life: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub second_order: SecondOrder,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
    pub dense_limit: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    /// Relative loss decrease below which an iteration counts as stalled.
    pub stagnation_tol: f64,
    /// Consecutive stalled iterations that end the second-order phase.
    pub stagnation_patience: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Record the monitor value every this many epochs (0 disables it).
    pub monitor_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam_epochs: 3000,
            adam_lr0: 1e-3,
            lr_half_life: 1000.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            second_order: SecondOrder::Auto,
            max_iterations: 2000,
            lbfgs_memory: 20,
            dense_limit: 5000,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-10,
            stagnation_tol: 1e-12,
            stagnation_patience: 50,
            seed: 0,
            checkpoint: None,
            checkpoint_every: 500,
            monitor_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "line search needs 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.adam_lr0.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.adam_lr0)));
        }
        if self.lr_half_life.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidConfig("learning-rate half-life must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("ADAM moment factors must lie in [0, 1)".into()));
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::InvalidConfig("L-BFGS memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Bfgs,
    Lbfgs,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Bfgs => "bfgs",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub loss: f64,
    pub phase: Phase,
    pub elapsed_seconds: f64,
    pub h1_error: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainingHistory {
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    /// Smallest recorded loss, which is the loss of the returned network.
    pub fn best_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.loss).reduce(f64::min)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,phase,elapsed_seconds,h1_error\n");
        for r in &self.records {
            let err = r.h1_error.map(|e| format!("{e:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:.6},{}", r.epoch, r.loss, r.phase.name(), r.elapsed_seconds, err);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Network sampled at the interpolation nodes.
    Interpolated,
    /// Network and its spatial gradient sampled at the quadrature points.
    Pointwise,
}

struct Term {
    system: Arc<AssembledSystem>,
    inputs: Mat<f64>,
    phi: Vec<(f64, [f64; 2])>,
    ubar: Vec<(f64, [f64; 2])>,
}

/// Loss `sum_i r_i^2 / gamma_i` summed over one or more assembled systems,
/// as a function of the network weights.
pub struct Objective {
    kind: Kind,
    terms: Vec<Term>,
}

impl Objective {
    fn build(kind: Kind, systems: Vec<Arc<AssembledSystem>>) -> Result<Self> {
        if systems.is_empty() {
            return Err(Error::InvalidConfig("objective needs at least one system".into()));
        }
        let input_dim = systems[0].problem.network_input_dim();
        let mut terms = Vec::with_capacity(systems.len());
        for system in systems {
            if system.problem.network_input_dim() != input_dim {
                return Err(Error::InvalidConfig("systems disagree on the network input dimension".into()));
            }
            let points: Vec<[f64; 2]> = match kind {
                Kind::Interpolated => system.trial_nodes().to_vec(),
                Kind::Pointwise => system.cache.quad.points.clone(),
            };
            let lift = &system.problem.lifting;
            let phi = points.iter().map(|&x| (lift.phi)(x)).collect();
            let ubar = points.iter().map(|&x| (lift.ubar)(x)).collect();
            let inputs = input_batch(&points, system.problem.dim(), system.problem.parameter);
            terms.push(Term {
                system,
                inputs,
                phi,
                ubar,
            });
        }
        Ok(Self { kind, terms })
    }

    /// Interpolated loss of a single system.
    pub fn interpolated(system: Arc<AssembledSystem>) -> Result<Self> {
        Self::build(Kind::Interpolated, vec![system])
    }

    /// Loss with `B w` evaluated directly at the quadrature points.
    pub fn pointwise(system: Arc<AssembledSystem>) -> Result<Self> {
        Self::build(Kind::Pointwise, vec![system])
    }

    /// Interpolated loss summed over systems that differ in the parameter
    /// fed to the network.
    pub fn parametric(systems: Vec<Arc<AssembledSystem>>) -> Result<Self> {
        Self::build(Kind::Interpolated, systems)
    }

    pub fn input_dim(&self) -> usize {
        self.terms[0].inputs.nrows()
    }

    pub fn systems(&self) -> impl Iterator<Item = &Arc<AssembledSystem>> {
        self.terms.iter().map(|t| &t.system)
    }

    fn check(&self, net: &Mlp) -> Result<()> {
        if net.input_dim() != self.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "network takes {} inputs, the problem provides {}",
                net.input_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Loss value only.
    pub fn loss(&self, net: &Mlp) -> Result<f64> {
        Ok(self.loss_and_gradient(net)?.0)
    }

    /// Loss and its gradient with respect to the flat network parameters.
    pub fn loss_and_gradient(&self, net: &Mlp) -> Result<(f64, Vec<f64>)> {
        self.check(net)?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; net.n_params()];
        for t in &self.terms {
            let (l, g) = match self.kind {
                Kind::Interpolated => interpolated_term(t, net),
                Kind::Pointwise => pointwise_term(t, net)?,
            };
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }
}

fn interpolated_term(t: &Term, net: &Mlp) -> (f64, Vec<f64>) {
    let w = net.forward(t.inputs.as_ref());
    let u: Vec<f64> = (0..w.len()).map(|i| t.ubar[i].0 + t.phi[i].0 * w[i]).collect();
    let res = t.system.compute_residuals(&u);
    let cot: Vec<f64> = res.grad.iter().zip(&t.phi).map(|(g, p)| g * p.0).collect();
    (res.loss, net.weight_gradient(t.inputs.as_ref(), &cot))
}

fn pointwise_term(t: &Term, net: &Mlp) -> Result<(f64, Vec<f64>)> {
    let (w, jac) = net.value_and_input_jacobian(t.inputs.as_ref())?;
    let dim = t.system.problem.dim();
    let n = w.len();
    let mut u = Vec::with_capacity(n);
    let mut gu = Vec::with_capacity(n);
    for i in 0..n {
        let (p, gp) = t.phi[i];
        let (b, gb) = t.ubar[i];
        let mut g = [0.0; 2];
        for d in 0..dim {
            g[d] = gb[d] + p * jac[d][i] + w[i] * gp[d];
        }
        u.push(b + p * w[i]);
        gu.push(g);
    }
    let pr = t.system.point_residuals(&u, &gu);
    let mut cot_val = vec![0.0; n];
    let mut cot_jac = vec![vec![0.0; n]; net.input_dim()];
    for i in 0..n {
        let (p, gp) = t.phi[i];
        let cg = pr.cot_grad[i];
        cot_val[i] = pr.cot_value[i] * p + (0..dim).map(|d| cg[d] * gp[d]).sum::<f64>();
        for d in 0..dim {
            cot_jac[d][i] = cg[d] * p;
        }
    }
    let (_, _, grad) = net.jacobian_weight_gradient(t.inputs.as_ref(), &cot_val, &cot_jac)?;
    Ok((pr.loss, grad))
}

/// Values of `B w` at the interpolation nodes of a system, i.e. the nodal
/// values of the interpolated network solution.
pub fn nodal_values(system: &AssembledSystem, net: &Mlp) -> Vec<f64> {
    let nodes = system.trial_nodes();
    let x = input_batch(nodes, system.problem.dim(), system.problem.parameter);
    let w = net.forward(x.as_ref());
    system.problem.lifting.apply_values(nodes, &w)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Shared state of one training run.
struct Run<'a> {
    objective: &'a Objective,
    cfg: &'a TrainingConfig,
    monitor: Option<&'a dyn Fn(&Mlp) -> f64>,
    work: Mlp,
    history: TrainingHistory,
    start: Instant,
    best: (f64, Vec<f64>),
}

impl Run<'_> {
    fn eval(&mut self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.work.set_params(p);
        self.objective.loss_and_gradient(&self.work)
    }

    fn record(&mut self, phase: Phase, loss: f64, params: &[f64]) -> Result<()> {
        let epoch = self.history.records.len();
        if loss < self.best.0 {
            self.best = (loss, params.to_vec());
        }
        let h1_error = match self.monitor {
            Some(m) if self.cfg.monitor_every > 0 && epoch % self.cfg.monitor_every == 0 => {
                self.work.set_params(params);
                Some(m(&self.work))
            }
            _ => None,
        };
        self.history.records.push(HistoryRecord {
            epoch,
            loss,
            phase,
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
            h1_error,
        });
        if let Some(path) = &self.cfg.checkpoint {
            if self.cfg.checkpoint_every > 0 && (epoch + 1) % self.cfg.checkpoint_every == 0 {
                let mut net = self.work.clone();
                net.set_params(&self.best.1);
                write_checkpoint(path, &net)?;
            }
        }
        Ok(())
    }

    fn best_net(&self) -> Mlp {
        let mut net = self.work.clone();
        net.set_params(&self.best.1);
        net
    }

    fn non_finite(&self, epoch: usize) -> Error {
        Error::NonFiniteLoss {
            epoch,
            last_good: Box::new(self.best_net()),
        }
    }
}

/// Saves a network atomically.
pub fn write_checkpoint(path: &std::path::Path, net: &Mlp) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, net.to_bytes()).map_err(|e| Error::Checkpoint(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(path: &std::path::Path) -> Result<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Mlp::from_bytes(&bytes)
}

/// Trains a network on an objective and returns the best network seen with
/// the per-epoch history. `monitor`, when given, is recorded as the error
/// column every `monitor_every` epochs.
pub fn train(
    objective: &Objective,
    net: Mlp,
    cfg: &TrainingConfig,
    monitor: Option<&dyn Fn(&Mlp) -> f64>,
) -> Result<(Mlp, TrainingHistory)> {
    cfg.validate()?;
    objective.check(&net)?;
    let mut run = Run {
        objective,
        cfg,
        monitor,
        best: (f64::INFINITY, net.params().to_vec()),
        work: net,
        history: TrainingHistory::default(),
        start: Instant::now(),
    };
    let mut p = run.work.params().to_vec();
    adam(&mut run, &mut p)?;
    let n = p.len();
    let phase = match cfg.second_order {
        SecondOrder::Off => None,
        SecondOrder::Bfgs => Some(Phase::Bfgs),
        SecondOrder::Lbfgs => Some(Phase::Lbfgs),
        SecondOrder::Auto if n <= cfg.dense_limit => Some(Phase::Bfgs),
        SecondOrder::Auto => Some(Phase::Lbfgs),
    };
    if let Some(phase) = phase {
        p = run.best.1.clone();
        quasi_newton(&mut run, &mut p, phase)?;
    }
    if run.history.records.is_empty() {
        let (f, _) = run.eval(&p)?;
        if !f.is_finite() {
            return Err(run.non_finite(0));
        }
        run.record(Phase::Adam, f, &p)?;
    }
    let net = run.best_net();
    if let Some(path) = &cfg.checkpoint {
        write_checkpoint(path, &net)?;
    }
    Ok((net, run.history))
}

fn adam(run: &mut Run<'_>, p: &mut [f64]) -> Result<()> {
    let cfg = run.cfg;
    let n = p.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for t in 0..cfg.adam_epochs {
        let (f, g) = run.eval(p)?;
        if !f.is_finite() || !finite(&g) {
            return Err(run.non_finite(t));
        }
        run.record(Phase::Adam, f, p)?;
        if norm(&g) <= cfg.grad_tol {
            break;
        }
        let lr = cfg.adam_lr0 * 0.5f64.powf(t as f64 / cfg.lr_half_life);
        b1t *= b1;
        b2t *= b2;
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            p[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

enum Curvature {
    Dense(Vec<f64>),
    Limited(VecDeque<(Vec<f64>, Vec<f64>, f64)>),
}

impl Curvature {
    fn new(phase: Phase) -> Self {
        match phase {
            Phase::Lbfgs => Curvature::Limited(VecDeque::new()),
            _ => Curvature::Dense(Vec::new()),
        }
    }

    fn is_fresh(&self) -> bool {
        match self {
            Curvature::Dense(h) => h.is_empty(),
            Curvature::Limited(pairs) => pairs.is_empty(),
        }
    }

    fn reset(&mut self) {
        match self {
            Curvature::Dense(h) => h.clear(),
            Curvature::Limited(pairs) => pairs.clear(),
        }
    }

    /// Search direction `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let n = g.len();
        match self {
            Curvature::Dense(h) if h.is_empty() => g.iter().map(|x| -x).collect(),
            Curvature::Dense(h) => (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
            Curvature::Limited(pairs) => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                if let Some((s, y, _)) = pairs.back() {
                    let scale = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|x| *x *= scale);
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q.into_iter().map(|x| -x).collect()
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>, memory: usize) {
        let sy = dot(&s, &y);
        if sy <= 1e-300 || !sy.is_finite() {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            Curvature::Dense(h) => {
                let n = s.len();
                if h.is_empty() {
                    let scale = sy / dot(&y, &y);
                    *h = vec![0.0; n * n];
                    for i in 0..n {
                        h[i * n + i] = scale;
                    }
                }
                // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
                let yhy = dot(&y, &hy);
                let c = rho * rho * yhy + rho;
                for i in 0..n {
                    let row = &mut h[i * n..(i + 1) * n];
                    for j in 0..n {
                        row[j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                    }
                }
            }
            Curvature::Limited(pairs) => {
                if pairs.len() == memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

fn quasi_newton(run: &mut Run<'_>, p: &mut Vec<f64>, phase: Phase) -> Result<()> {
    let cfg = run.cfg;
    let (mut f, mut g) = run.eval(p)?;
    if !f.is_finite() || !finite(&g) {
        return Err(run.non_finite(run.history.records.len()));
    }
    let mut curv = Curvature::new(phase);
    let mut stalled = 0;
    for _ in 0..cfg.max_iterations {
        let gn = norm(&g);
        if gn <= cfg.grad_tol || f == 0.0 {
            break;
        }
        let mut d = curv.direction(&g);
        if dot(&d, &g) >= 0.0 {
            curv.reset();
            d = curv.direction(&g);
        }
        let alpha0 = if curv.is_fresh() { (1.0 / gn).min(1.0) } else { 1.0 };
        let step = {
            let base = p.clone();
            let dir = d.clone();
            let mut phi = |alpha: f64| -> Result<(f64, f64, Vec<f64>)> {
                let x: Vec<f64> = base.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
                let (fa, ga) = run.eval(&x)?;
                let fa = if fa.is_finite() && finite(&ga) { fa } else { f64::INFINITY };
                Ok((fa, dot(&ga, &dir), ga))
            };
            strong_wolfe(&mut phi, f, dot(&g, &d), alpha0, cfg.c1, cfg.c2)?
        };
        let Some((alpha, f_new, g_new)) = step else {
            if curv.is_fresh() {
                break;
            }
            curv.reset();
            continue;
        };
        let s: Vec<f64> = d.iter().map(|x| alpha * x).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi += si);
        let decrease = f - f_new;
        let scale = f.abs().max(f_new.abs()).max(f64::MIN_POSITIVE);
        stalled = if decrease <= cfg.stagnation_tol * scale { stalled + 1 } else { 0 };
        f = f_new;
        g = g_new;
        curv.update(s, y, cfg.lbfgs_memory);
        run.record(phase, f, p)?;
        if stalled >= cfg.stagnation_patience {
            break;
        }
    }
    Ok(())
}

type LineEval<'a> = dyn FnMut(f64) -> Result<(f64, f64, Vec<f64>)> + 'a;

/// Step length satisfying the strong Wolfe conditions along a descent
/// direction, by bracketing and zooming with safeguarded cubic
/// interpolation. Returns `None` when no such step is found.
pub fn strong_wolfe(
    phi: &mut LineEval<'_>,
    f0: f64,
    d0: f64,
    alpha0: f64,
    c1: f64,
    c2: f64,
) -> Result<Option<(f64, f64, Vec<f64>)>> {
    if d0 >= 0.0 {
        return Ok(None);
    }
    let alpha_max = 1e10;
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, d0);
    let mut alpha = alpha0;
    for i in 0..40 {
        let (fa, da, ga) = phi(alpha)?;
        if fa > f0 + c1 * alpha * d0 || (i > 0 && fa >= f_prev) {
            return zoom(phi, f0, d0, c1, c2, (a_prev, f_prev, d_prev), (alpha, fa, da));
        }
        if da.abs() <= -c2 * d0 {
            return Ok(Some((alpha, fa, ga)));
        }
        if da >= 0.0 {
            return zoom(phi, f0, d0, c1, c2, (alpha, fa, da), (a_prev, f_prev, d_prev));
        }
        a_prev = alpha;
        f_prev = fa;
        d_prev = da;
        alpha = (2.0 * alpha).min(alpha_max);
    }
    Ok(None)
}

/// Minimizer of the cubic through two points with slopes, if it lies
/// strictly inside the safeguarded interval.
fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x0, f0, g0) = a;
    let (x1, f1, g1) = b;
    if !(f0.is_finite() && f1.is_finite() && g1.is_finite()) {
        return None;
    }
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (x0 - x1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    let x = x1 - (x1 - x0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    let (lo, hi) = (x0.min(x1), x0.max(x1));
    let margin = 0.1 * (hi - lo);
    (x.is_finite() && x > lo + margin && x < hi - margin).then_some(x)
}

fn zoom(
    phi: &mut LineEval<'_>,
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
) -> Result<Option<(f64, f64, Vec<f64>)>> {
    for _ in 0..60 {
        if (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(hi.0.abs()) {
            break;
        }
        let a = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        let (fa, da, ga) = phi(a)?;
        if fa > f0 + c1 * a * d0 || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -c2 * d0 {
                return Ok(Some((a, fa, ga)));
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
    }
    Ok(None)
}

/// Interpolated IVPINN training on one assembled system.
pub fn train_ivpinn(system: Arc<AssembledSystem>, net: Mlp, cfg: &TrainingConfig) -> Result<(Mlp, TrainingHistory)> {
    train(&Objective::interpolated(system)?, net, cfg, None)
}

/// Training with the network and its gradient evaluated directly at the
/// quadrature points (no interpolation). Requires a smooth activation.
pub fn train_vpinn_noninterp(
    system: Arc<AssembledSystem>,
    net: Mlp,
    cfg: &TrainingConfig,
) -> Result<(Mlp, TrainingHistory)> {
    train(&Objective::pointwise(system)?, net, cfg, None)
}

/// Training on the summed loss of several systems, one per parameter value.
pub fn train_parametric(
    systems: Vec<Arc<AssembledSystem>>,
    net: Mlp,
    cfg: &TrainingConfig,
) -> Result<(Mlp, TrainingHistory)> {
    train(&Objective::parametric(systems)?, net, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, solve_petrov_galerkin};
    use crate::mesh::DiscretizationConfig;
    use crate::network::Activation;
    use crate::problems::{case_parametric_nonlinear, case_smooth, case_zero_data};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(case: crate::problems::TestCase, n: usize, kt: usize, q: usize) -> Arc<AssembledSystem> {
        let mesh = case.problem.coarse_mesh(n).unwrap();
        Arc::new(assemble_system(&case.problem, DiscretizationConfig::new(kt, q).unwrap(), &mesh).unwrap())
    }

    fn fd_check(obj: &Objective, net: &Mlp, seed: u64) {
        let (loss, g) = obj.loss_and_gradient(net).unwrap();
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let k = rng.random_range(0..net.n_params());
            let h = 1e-6;
            let mut a = net.clone();
            a.params_mut()[k] += h;
            let mut b = net.clone();
            b.params_mut()[k] -= h;
            let fd = (obj.loss(&a).unwrap() - obj.loss(&b).unwrap()) / (2.0 * h);
            // Cancellation in the difference quotient is about eps * loss / h.
            let floor = (1e-3 * gmax).max(1e-4 * loss);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(floor);
            assert!(err <= 1e-5, "param {k}: fd {fd} analytic {} loss {loss}", g[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = system(case_smooth(), 2, 1, 3);
        let net = Mlp::with_shape(2, 2, 6, Activation::Tanh, 3).unwrap();
        fd_check(&Objective::interpolated(s.clone()).unwrap(), &net, 1);
        fd_check(&Objective::pointwise(s).unwrap(), &net, 2);
        let systems: Vec<_> = [0.5, 1.3, 2.0].iter().map(|&p| system(case_parametric_nonlinear(p), 2, 1, 3)).collect();
        let net3 = Mlp::with_shape(3, 2, 6, Activation::Tanh, 5).unwrap();
        fd_check(&Objective::parametric(systems.clone()).unwrap(), &net3, 3);
        fd_check(&Objective::build(Kind::Pointwise, systems).unwrap(), &net3, 4);
    }

    #[test]
    fn zero_weights_on_zero_problem_have_zero_loss() {
        let s = system(case_zero_data(2).unwrap(), 2, 1, 3);
        let net = Mlp::zeros(vec![2, 5, 1], Activation::Tanh).unwrap();
        assert_eq!(Objective::pointwise(s.clone()).unwrap().loss(&net).unwrap(), 0.0);
        assert_eq!(Objective::interpolated(s).unwrap().loss(&net).unwrap(), 0.0);
    }

    #[test]
    fn network_reproducing_the_oracle_has_negligible_loss() {
        // The loss sees the network only through its nodal values, so the
        // oracle loss bounds that of any network matching the oracle there.
        let s = system(case_smooth(), 2, 1, 3);
        let u = solve_petrov_galerkin(&s).unwrap();
        assert!(s.compute_residuals(&u).loss <= 1e-20);
        let net = Mlp::zeros(vec![2, 3, 1], Activation::Tanh).unwrap();
        let nodal = nodal_values(&s, &net);
        let direct = s.compute_residuals(&nodal).loss;
        assert_eq!(direct, Objective::interpolated(s).unwrap().loss(&net).unwrap());
    }

    #[test]
    fn training_decreases_loss_and_is_deterministic() {
        let s = system(case_smooth(), 2, 1, 3);
        let cfg = TrainingConfig {
            adam_epochs: 200,
            max_iterations: 100,
            ..TrainingConfig::default()
        };
        let net = Mlp::with_shape(2, 2, 8, Activation::Tanh, 11).unwrap();
        let (a, ha) = train_ivpinn(s.clone(), net.clone(), &cfg).unwrap();
        let (b, hb) = train_ivpinn(s.clone(), net, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha.losses(), hb.losses());
        assert!(ha.best_loss().unwrap() < ha.initial_loss().unwrap());
        let obj = Objective::interpolated(s).unwrap();
        assert_eq!(obj.loss(&a).unwrap(), ha.best_loss().unwrap());
        // Second-order losses never increase.
        let bfgs: Vec<f64> = ha.records.iter().filter(|r| r.phase == Phase::Bfgs).map(|r| r.loss).collect();
        assert!(!bfgs.is_empty());
        assert!(bfgs.windows(2).all(|w| w[1] <= w[0]));
        // Phases are contiguous.
        let first_bfgs = ha.records.iter().position(|r| r.phase == Phase::Bfgs).unwrap();
        assert!(ha.records[first_bfgs..].iter().all(|r| r.phase == Phase::Bfgs));
    }

    #[test]
    fn lbfgs_and_checkpoint() {
        let s = system(case_smooth(), 2, 1, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let cfg = TrainingConfig {
            adam_epochs: 20,
            max_iterations: 50,
            second_order: SecondOrder::Lbfgs,
            checkpoint: Some(path.clone()),
            checkpoint_every: 10,
            ..TrainingConfig::default()
        };
        let net = Mlp::with_shape(2, 1, 5, Activation::Tanh, 1).unwrap();
        let (out, h) = train_ivpinn(s, net, &cfg).unwrap();
        assert!(h.records.iter().any(|r| r.phase == Phase::Lbfgs));
        assert_eq!(read_checkpoint(&path).unwrap().params(), out.params());
        assert!(h.to_csv().starts_with("epoch,loss,phase,elapsed_seconds,h1_error\n0,"));
    }

    #[test]
    fn non_finite_loss_returns_last_good_network() {
        let s = system(case_smooth(), 2, 1, 3);
        let cfg = TrainingConfig {
            adam_epochs: 5,
            second_order: SecondOrder::Off,
            ..TrainingConfig::default()
        };
        let mut net = Mlp::with_shape(2, 1, 3, Activation::Tanh, 1).unwrap();
        net.params_mut()[0] = f64::NAN;
        match train_ivpinn(s, net, &cfg) {
            Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected a non-finite loss error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn rejects_bad_line_search_constants_and_wrong_input_dim() {
        let s = system(case_smooth(), 2, 1, 3);
        let cfg = TrainingConfig {
            c1: 0.95,
            ..TrainingConfig::default()
        };
        let net = Mlp::with_shape(2, 1, 3, Activation::Tanh, 1).unwrap();
        assert!(matches!(train_ivpinn(s.clone(), net, &cfg), Err(Error::InvalidConfig(_))));
        let net3 = Mlp::with_shape(3, 1, 3, Activation::Tanh, 1).unwrap();
        assert!(train_ivpinn(s, net3, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn strong_wolfe_on_a_quadratic() {
        // f(x) = (x - 3)^2 from x = 0 along d = 1.
        let mut phi = |a: f64| -> Result<(f64, f64, Vec<f64>)> { Ok(((a - 3.0).powi(2), 2.0 * (a - 3.0), vec![]) ) };
        let (a, fa, _) = strong_wolfe(&mut phi, 9.0, -6.0, 1.0, 1e-4, 0.1).unwrap().unwrap();
        assert!(fa <= 9.0 + 1e-4 * a * -6.0);
        assert!((2.0 * (a - 3.0)).abs() <= 0.1 * 6.0);
    }
}
