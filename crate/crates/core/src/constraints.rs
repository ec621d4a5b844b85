//! Lipschitz mechanisms for the discriminator: topological consistency (TC),
//! weight clipping and gradient penalty, plus the TC continuity probe and a
//! numerical theorem suite.
//!
//! TC compares two routes from a pair `(x_r, x_g)` to embedding space: mix
//! first and embed (`D(ε·x_r + (1−ε)·x_g)`) versus embed first and mix
//! (`ε·D(x_r) + (1−ε)·D(x_g)`). The residual vanishes for affine `D`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Discriminator, DiscriminatorConfig, InitScheme, Module};
use crate::objectives::EPS;
use crate::par::{self, Execution};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    #[default]
    None,
    Clip,
    Gp,
    Tc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TcMetric {
    #[default]
    Mse,
    L1,
    Cosine,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|k| k.name() == s)
                    .ok_or_else(|| Error::Config(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

named_enum!(ConstraintKind, "constraint", None => "none", Clip => "clip", Gp => "gp", Tc => "tc");
named_enum!(TcMetric, "tc metric", Mse => "mse", L1 => "l1", Cosine => "cosine");

/// Which side of the pair `ε` weights in embedding space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MixOrder {
    /// `ε` weights the real term in both spaces.
    #[default]
    Consistent,
    /// `ε` weights the real term in data space but the generated term in
    /// embedding space. Only useful as a deliberately broken variant.
    Reversed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    /// Clip bound.
    pub c: f64,
    pub lambda_gp: f64,
    pub lambda_tc: f64,
    pub tc_metric: TcMetric,
    /// Standard deviation of the additive TC perturbation.
    pub delta_std: f64,
    /// Layer the continuity probe reads (0-based).
    pub probe_layer: usize,
    /// Weight `K` on the adversarial objective relative to the constraint.
    pub k: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        Self {
            kind: ConstraintKind::None,
            c: 0.01,
            lambda_gp: 10.0,
            lambda_tc: 1.0,
            tc_metric: TcMetric::Mse,
            delta_std: 0.05,
            probe_layer: Discriminator::DEPTH - 2,
            k: 1.0,
        }
    }
}

impl ConstraintSpec {
    pub fn of(kind: ConstraintKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Every violated field, prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == ConstraintKind::Clip && !(self.c > 0.0) {
            out.push(format!("{prefix}c: clip bound must be positive, got {}", self.c));
        }
        for (name, v) in [("lambda_gp", self.lambda_gp), ("lambda_tc", self.lambda_tc)] {
            if !(v >= 0.0) || !v.is_finite() {
                out.push(format!("{prefix}{name}: must be finite and ≥ 0, got {v}"));
            }
        }
        if !(self.delta_std >= 0.0) || !self.delta_std.is_finite() {
            out.push(format!("{prefix}delta_std: must be finite and ≥ 0, got {}", self.delta_std));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            out.push(format!("{prefix}k: must be finite and > 0, got {}", self.k));
        }
        if self.probe_layer >= Discriminator::DEPTH {
            out.push(format!(
                "{prefix}probe_layer: must be < {}, got {}",
                Discriminator::DEPTH,
                self.probe_layer
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Anything that maps a `[b×n]` batch to `[b×m]` embeddings inside a graph.
pub trait Embedder {
    fn embed(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

impl<F: Fn(&mut Graph, Var) -> Result<Var>> Embedder for F {
    fn embed(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self(g, x)
    }
}

/// A discriminator whose parameters are already bound into a graph, read at
/// a given layer.
pub struct BoundDiscriminator<'a> {
    pub net: &'a Discriminator,
    pub vars: &'a [Var],
    pub layer: usize,
}

impl Embedder for BoundDiscriminator<'_> {
    fn embed(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.net.forward_to(g, self.vars, x, self.layer)
    }
}

/// Per-sample randomness of one TC evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TcSample {
    /// Mix coefficients in `[0, 1)`.
    pub eps: Vec<f64>,
    /// Additive perturbations.
    pub delta: Vec<f64>,
}

impl TcSample {
    pub fn draw(b: usize, delta_std: f64, mix: &mut impl Rng, perturb: &mut impl Rng) -> Self {
        let eps = mix_coefficients(mix, b);
        let delta = if delta_std > 0.0 {
            let n = Normal::new(0.0, delta_std).expect("finite std");
            (0..b).map(|_| n.sample(perturb)).collect()
        } else {
            vec![0.0; b]
        };
        Self { eps, delta }
    }

    /// Given coefficients, no perturbation.
    pub fn exact(eps: Vec<f64>) -> Self {
        let delta = vec![0.0; eps.len()];
        Self { eps, delta }
    }
}

pub fn mix_coefficients(rng: &mut impl Rng, b: usize) -> Vec<f64> {
    (0..b).map(|_| rng.random::<f64>()).collect()
}

fn check_eps(eps: &[f64], rows: usize) -> Result<()> {
    if eps.len() != rows {
        return Err(Error::shape("mix coefficients", &[rows], &[eps.len()]));
    }
    if let Some(e) = eps.iter().find(|e| !(0.0..1.0).contains(*e)) {
        return Err(Error::Contract(format!("mix coefficient {e} outside [0, 1)")));
    }
    Ok(())
}

/// `x̂ᵢ = εᵢ·x_rᵢ + (1−εᵢ)·x_gᵢ`
pub fn mixup(x_r: &Tensor, x_g: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if x_r.shape() != x_g.shape() {
        return Err(Error::shape("mixup", x_r.shape(), x_g.shape()));
    }
    check_eps(eps, x_r.rows())?;
    let c = x_r.cols();
    let data = x_r
        .data()
        .iter()
        .zip(x_g.data())
        .enumerate()
        .map(|(k, (&r, &g))| {
            let e = eps[k / c];
            e * r + (1.0 - e) * g
        })
        .collect();
    Tensor::matrix(x_r.rows(), c, data)
}

/// Graph form of [`mixup`] (gradients flow to both endpoints).
pub fn mixup_var(g: &mut Graph, a: Var, b: Var, eps: &[f64]) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("mixup", g.shape(a), g.shape(b)));
    }
    let rows = g.shape(a)[0];
    if eps.len() != rows {
        return Err(Error::shape("mix coefficients", &[rows], &[eps.len()]));
    }
    let e = g.constant(Tensor::column(eps));
    let one_minus = g.constant(Tensor::column(&eps.iter().map(|e| 1.0 - e).collect::<Vec<_>>()));
    let wa = g.mul(a, e)?;
    let wb = g.mul(b, one_minus)?;
    g.add(wa, wb)
}

/// Per-row distance `[b×m] × [b×m] → [b×1]`.
pub fn row_distance(g: &mut Graph, a: Var, b: Var, metric: TcMetric) -> Result<Var> {
    match metric {
        TcMetric::Mse => {
            let d = g.sub(a, b)?;
            let sq = g.square(d);
            Ok(g.mean_rows(sq))
        }
        TcMetric::L1 => {
            let d = g.sub(a, b)?;
            let ab = g.abs(d);
            Ok(g.mean_rows(ab))
        }
        TcMetric::Cosine => {
            let prod = g.mul(a, b)?;
            let dot = g.sum_rows(prod);
            let na = crate::objectives::row_norm(g, a);
            let nb = crate::objectives::row_norm(g, b);
            let den = g.mul(na, nb)?;
            let cos = g.div(dot, den)?;
            let neg = g.neg(cos);
            Ok(g.offset(neg, 1.0))
        }
    }
}

/// Per-sample TC residual `d(e_mix, ε·e_r + (1−ε)·e_g)` before perturbation.
pub fn tc_residuals(
    g: &mut Graph,
    e_mix: Var,
    e_r: Var,
    e_g: Var,
    eps: &[f64],
    metric: TcMetric,
    order: MixOrder,
) -> Result<Var> {
    let target = match order {
        MixOrder::Consistent => mixup_var(g, e_r, e_g, eps)?,
        MixOrder::Reversed => mixup_var(g, e_g, e_r, eps)?,
    };
    row_distance(g, e_mix, target, metric)
}

/// `D_TC = mean(residual + δ)` reusing embeddings `e_r = D(x_r)`, `e_g = D(x_g)`
/// the caller already computed: costs a single extra forward pass.
#[allow(clippy::too_many_arguments)]
pub fn topological_consistency_with(
    g: &mut Graph,
    d: &impl Embedder,
    x_r: Var,
    x_g: Var,
    e_r: Var,
    e_g: Var,
    sample: &TcSample,
    metric: TcMetric,
    order: MixOrder,
) -> Result<Var> {
    let rows = g.shape(x_r)[0];
    check_eps(&sample.eps, rows)?;
    if sample.delta.len() != rows {
        return Err(Error::shape("tc perturbation", &[rows], &[sample.delta.len()]));
    }
    let x_hat = mixup_var(g, x_r, x_g, &sample.eps)?;
    let e_mix = d.embed(g, x_hat)?;
    let res = tc_residuals(g, e_mix, e_r, e_g, &sample.eps, metric, order)?;
    let delta = g.constant(Tensor::column(&sample.delta));
    let total = g.add(res, delta)?;
    Ok(g.mean(total))
}

/// `D_TC` from scratch (three forward passes).
pub fn topological_consistency(
    g: &mut Graph,
    d: &impl Embedder,
    x_r: Var,
    x_g: Var,
    sample: &TcSample,
    metric: TcMetric,
) -> Result<Var> {
    let e_r = d.embed(g, x_r)?;
    let e_g = d.embed(g, x_g)?;
    topological_consistency_with(g, d, x_r, x_g, e_r, e_g, sample, metric, MixOrder::Consistent)
}

/// Clamps every parameter of `net` to `[−c, c]`.
pub fn weight_clip<M: Module + ?Sized>(net: &mut M, c: f64) {
    for t in net.params_mut() {
        for w in t.data_mut() {
            *w = w.clamp(-c, c);
        }
    }
}

/// `mean((‖∇ₓ R(x̂)‖₂ − 1)²)` where `realness` maps `[b×n] → [b×1]`. Built with
/// a differentiable gradient so the penalty itself can be backpropagated.
pub fn gradient_penalty(
    g: &mut Graph,
    realness: impl Fn(&mut Graph, Var) -> Result<Var>,
    x_hat: Var,
) -> Result<Var> {
    let r = realness(g, x_hat)?;
    if g.shape(r)[1] != 1 {
        return Err(Error::Contract("gradient penalty needs a [b×1] realness".into()));
    }
    // samples are scored independently, so the gradient of the sum has the
    // per-sample input gradients as its rows
    let total = g.sum(r);
    let grad = g.differentiate(total, &[x_hat])?[0];
    let sq = g.square(grad);
    let s = g.sum_rows(sq);
    let s = g.offset(s, EPS);
    let norm = g.sqrt(s);
    let dev = g.offset(norm, -1.0);
    let dev2 = g.square(dev);
    Ok(g.mean(dev2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub mean: f64,
    pub variance: f64,
    pub trials: usize,
}

/// MSE TC with `δ = 0` at `layer`, over `trials` fresh coefficient draws.
pub fn continuity_probe(
    net: &Discriminator,
    x_r: &Tensor,
    x_g: &Tensor,
    layer: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<ProbeStats> {
    if trials == 0 {
        return Err(Error::Config("probe needs at least one trial".into()));
    }
    let mut g = Graph::new();
    let vars = net.bind(&mut g, false);
    let xr = g.constant(x_r.clone());
    let xg = g.constant(x_g.clone());
    let d = BoundDiscriminator { net, vars: &vars, layer };
    let e_r = d.embed(&mut g, xr)?;
    let e_g = d.embed(&mut g, xg)?;
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let sample = TcSample::exact(mix_coefficients(rng, x_r.rows()));
        let tc = topological_consistency_with(
            &mut g, &d, xr, xg, e_r, e_g, &sample, TcMetric::Mse, MixOrder::Consistent,
        )?;
        values.push(g.value(tc).item()?);
    }
    let (mean, variance) = mean_var(&values);
    Ok(ProbeStats { mean, variance, trials })
}

/// Population mean and variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// One line of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub tolerance: String,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, tolerance: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            tolerance: tolerance.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} (tol {}): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }
}

fn normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect())
        .expect("positive dims")
}

/// Largest per-sample TC residual (δ = 0) of `embed` over a batch.
fn max_residual(
    embed: &impl Embedder,
    x_r: &Tensor,
    x_g: &Tensor,
    eps: &[f64],
    metric: TcMetric,
    order: MixOrder,
) -> Result<f64> {
    let mut g = Graph::new();
    let xr = g.constant(x_r.clone());
    let xg = g.constant(x_g.clone());
    let e_r = embed.embed(&mut g, xr)?;
    let e_g = embed.embed(&mut g, xg)?;
    let x_hat = mixup_var(&mut g, xr, xg, eps)?;
    let e_mix = embed.embed(&mut g, x_hat)?;
    let res = tc_residuals(&mut g, e_mix, e_r, e_g, eps, metric, order)?;
    Ok(g.value(res).data().iter().fold(0.0f64, |a, &b| a.max(b.abs())))
}

fn affine_embedder(a: Tensor, b: Tensor) -> impl Fn(&mut Graph, Var) -> Result<Var> {
    move |g: &mut Graph, x: Var| {
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        g.affine(x, av, bv)
    }
}

fn deep_discriminator(seed: u64, hidden: usize, embed_dim: usize) -> Result<Discriminator> {
    let cfg = DiscriminatorConfig {
        in_dim: 2,
        hidden,
        pieces: 2,
        embed_dim,
    };
    Discriminator::new(cfg, InitScheme::Uniform, &mut rng::stream(seed, Stream::DiscriminatorInit))
}

fn bound_embedder(net: &Discriminator) -> impl Fn(&mut Graph, Var) -> Result<Var> + '_ {
    move |g: &mut Graph, x: Var| {
        let vars = net.bind(g, false);
        net.forward(g, &vars, x)
    }
}

pub const AFFINE_TOL: f64 = 1e-12;

/// Numerical checks of the TC optimality claims.
pub fn theorem_suite(exec: Execution) -> Report {
    theorem_suite_with(exec, MixOrder::Consistent)
}

/// [`theorem_suite`] with a selectable embedding-space ordering, so that a
/// broken ordering can be shown to fail the affine test.
pub fn theorem_suite_with(exec: Execution, order: MixOrder) -> Report {
    let mut report = Report::default();
    let run = |name: &str, tol: &str, f: &dyn Fn() -> Result<(bool, String)>| match f() {
        Ok((ok, detail)) => Check::new(name, ok, tol, detail),
        Err(e) => Check::new(name, false, tol, format!("error: {e}")),
    };

    report.checks.push(run("tc_affine_exact_zero", "1e-12", &|| {
        let mut worst = 0.0f64;
        for &metric in TcMetric::ALL {
            let mut rng = rng::stream(101, Stream::Eval);
            let a = normal_tensor(&mut rng, 2, 8, 1.0);
            let b = normal_tensor(&mut rng, 1, 8, 1.0);
            let x_r = normal_tensor(&mut rng, 1000, 2, 2.0);
            let x_g = normal_tensor(&mut rng, 1000, 2, 2.0);
            let eps = mix_coefficients(&mut rng, 1000);
            let r = max_residual(&affine_embedder(a, b), &x_r, &x_g, &eps, metric, order)?;
            worst = worst.max(r);
        }
        Ok((worst <= AFFINE_TOL, format!("max residual {worst:.3e} over 1000 triples × 3 metrics")))
    }));

    report.checks.push(run("tc_deep_positive", ">= 99/100 seeds", &|| {
        let positives = par::map_range(exec, 100, |seed| -> Result<bool> {
            let net = deep_discriminator(seed as u64, 16, 8)?;
            let mut rng = rng::stream(seed as u64, Stream::Eval);
            let x_r = normal_tensor(&mut rng, 64, 2, 1.5);
            let x_g = normal_tensor(&mut rng, 64, 2, 1.5);
            let eps = mix_coefficients(&mut rng, 64);
            let mut g = Graph::new();
            let xr = g.constant(x_r);
            let xg = g.constant(x_g);
            let tc = topological_consistency(&mut g, &bound_embedder(&net), xr, xg, &TcSample::exact(eps), TcMetric::Mse)?;
            Ok(g.value(tc).item()? > 0.0)
        });
        let mut hits = 0;
        for p in positives {
            hits += p? as usize;
        }
        Ok((hits >= 99, format!("{hits}/100 random deep discriminators with D_TC > 0")))
    }));

    report.checks.push(run("tc_square_hand_value", "1e-12", &|| {
        let sq = |g: &mut Graph, x: Var| Ok(g.square(x));
        let mut g = Graph::new();
        let xr = g.constant(Tensor::scalar(1.0));
        let xg = g.constant(Tensor::scalar(-1.0));
        let tc = topological_consistency(&mut g, &sq, xr, xg, &TcSample::exact(vec![0.5]), TcMetric::Mse)?;
        let v = g.value(tc).item()?;
        Ok(((v - 1.0).abs() <= 1e-12, format!("D(x)=x², ε=0.5 gives {v}")))
    }));

    report.checks.push(run("tc_endpoints", "0 at ε=0, 1e-6 at ε=1−1e-9", &|| {
        let net = deep_discriminator(7, 16, 8)?;
        let mut rng = rng::stream(7, Stream::Eval);
        let x_r = normal_tensor(&mut rng, 128, 2, 1.5);
        let x_g = normal_tensor(&mut rng, 128, 2, 1.5);
        let emb = bound_embedder(&net);
        let mut worst0 = 0.0f64;
        let mut worst1 = 0.0f64;
        for &metric in &[TcMetric::Mse, TcMetric::L1] {
            worst0 = worst0.max(max_residual(&emb, &x_r, &x_g, &[0.0; 128], metric, order)?);
            worst1 = worst1.max(max_residual(&emb, &x_r, &x_g, &[1.0 - 1e-9; 128], metric, order)?);
        }
        Ok((
            worst0 == 0.0 && worst1 <= 1e-6,
            format!("ε=0 residual {worst0:.3e}, ε→1 residual {worst1:.3e}"),
        ))
    }));

    report.checks.push(run("k_invariance", "exact", &|| {
        // candidate critics: affine ones (on the TC zero-set) and deep ones
        let mut rng = rng::stream(11, Stream::Eval);
        let x_r = normal_tensor(&mut rng, 64, 2, 1.0);
        let x_g = normal_tensor(&mut rng, 64, 2, 1.0);
        let eps = mix_coefficients(&mut rng, 64);
        let mut tc = Vec::new();
        let mut gap = Vec::new();
        for i in 0..12u64 {
            let mut g = Graph::new();
            let xr = g.constant(x_r.clone());
            let xg = g.constant(x_g.clone());
            let (e_r, e_g, t) = if i % 2 == 0 {
                let a = normal_tensor(&mut rng, 2, 1, 1.0);
                let b = normal_tensor(&mut rng, 1, 1, 1.0);
                let emb = affine_embedder(a, b);
                let e_r = emb.embed(&mut g, xr)?;
                let e_g = emb.embed(&mut g, xg)?;
                let t = topological_consistency_with(&mut g, &emb, xr, xg, e_r, e_g, &TcSample::exact(eps.clone()), TcMetric::Mse, order)?;
                (e_r, e_g, t)
            } else {
                let net = deep_discriminator(i, 8, 1)?;
                let emb = bound_embedder(&net);
                let e_r = emb.embed(&mut g, xr)?;
                let e_g = emb.embed(&mut g, xg)?;
                let t = topological_consistency_with(&mut g, &emb, xr, xg, e_r, e_g, &TcSample::exact(eps.clone()), TcMetric::Mse, order)?;
                (e_r, e_g, t)
            };
            let mr = g.mean(e_r);
            let mg = g.mean(e_g);
            gap.push(g.value(mr).item()? - g.value(mg).item()?);
            tc.push(g.value(t).item()?);
        }
        let zero_set = |k: f64| -> Vec<bool> { tc.iter().map(|t| k * t <= AFFINE_TOL * k).collect() };
        let argmin = |k: f64| -> usize {
            let obj: Vec<f64> = gap.iter().zip(&tc).map(|(g, t)| k * (-g + t)).collect();
            (0..obj.len()).min_by(|&a, &b| obj[a].total_cmp(&obj[b])).unwrap_or(0)
        };
        let ks = [1.0, 5.0, 10.0];
        let zs_ok = ks.iter().all(|&k| zero_set(k) == zero_set(1.0));
        let am_ok = ks.iter().all(|&k| argmin(k) == argmin(1.0));
        let zeros = zero_set(1.0).iter().filter(|z| **z).count();
        Ok((
            zs_ok && am_ok && zeros == 6,
            format!("zero-set size {zeros}/12 and optimum index {} for K ∈ {{1,5,10}}", argmin(1.0)),
        ))
    }));

    report
}
