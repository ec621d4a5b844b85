//! Adversarial objectives over embedding batches.
//!
//! Every objective is expressed through a per-sample *realness* scalar
//! `R(V)`: the discriminator pushes `R` up on real codes and down on
//! generated ones, the generator pushes `R` up on its own samples. Losses are
//! returned as minimization targets.
//!
//! | kind    | `R(V)`                                        |
//! |---------|-----------------------------------------------|
//! | `std`   | `σ(V)` (cross-entropy form, see [`loss_std`])  |
//! | `wgan`  | `V`                                           |
//! | `maf-c` | cosine similarity to a trainable pivot `W`     |
//! | `maf-d` | standard-normal log-density of `V`             |
//! | `maf-e` | `‖U‖₁/m − mean(log U)`, `U = softplus(V) + 1e-6` |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Guard for norms and logarithms.
pub const EPS: f64 = 1e-12;
/// Positivity floor added after softplus for `maf-e`.
pub const POSITIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "std")]
    Std,
    #[serde(rename = "wgan")]
    Wgan,
    #[serde(rename = "maf-c")]
    MafC,
    #[serde(rename = "maf-d")]
    MafD,
    #[serde(rename = "maf-e")]
    MafE,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Std,
        ObjectiveKind::Wgan,
        ObjectiveKind::MafC,
        ObjectiveKind::MafD,
        ObjectiveKind::MafE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Std => "std",
            ObjectiveKind::Wgan => "wgan",
            ObjectiveKind::MafC => "maf-c",
            ObjectiveKind::MafD => "maf-d",
            ObjectiveKind::MafE => "maf-e",
        }
    }

    /// Only the scalar baselines are restricted to `m = 1`.
    pub fn requires_scalar(self) -> bool {
        matches!(self, ObjectiveKind::Std | ObjectiveKind::Wgan)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// Generator target for the Std-GAN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorForm {
    /// `−E log σ(V_fake)`
    #[default]
    NonSaturating,
    /// `E log(1 − σ(V_fake))`
    Minimax,
}

/// Trainable anchor `W ∈ ℝᵐ` for the cosine objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Pivot {
    /// `[1 × m]`
    pub w: Tensor,
}

impl Pivot {
    /// Norms below this trigger re-initialization.
    pub const MIN_NORM: f64 = 1e-8;

    pub fn uniform(m: usize) -> Self {
        Self {
            w: Tensor::full(1, m, 1.0 / (m as f64).sqrt()),
        }
    }

    /// Normalized mean of a batch of embeddings (uniform direction if the
    /// mean vanishes).
    pub fn from_embeddings(v: &Tensor) -> Self {
        let (b, m) = (v.rows(), v.cols());
        let mut mean = vec![0.0; m];
        for i in 0..b {
            for (acc, x) in mean.iter_mut().zip(v.row(i)) {
                *acc += x / b as f64;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= Self::MIN_NORM) {
            return Self::uniform(m);
        }
        Self {
            w: Tensor::row_vector(&mean.iter().map(|x| x / norm).collect::<Vec<_>>()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.w.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Re-initializes from `fallback` embeddings when `‖W‖` collapsed.
    /// Returns whether a reset happened.
    pub fn ensure_nonzero(&mut self, fallback: &Tensor) -> bool {
        if self.norm() >= Self::MIN_NORM {
            return false;
        }
        *self = Self::from_embeddings(fallback);
        true
    }
}

/// Fixed standard Gaussian prior over embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriorQ {
    pub dim: usize,
}

impl PriorQ {
    pub fn log_density(&self, v: &[f64]) -> f64 {
        -(self.dim as f64) / 2.0 * (2.0 * PI).ln() - v.iter().map(|x| x * x).sum::<f64>() / 2.0
    }

    /// Upper bound of the log-density, attained at `V = 0`.
    pub fn max_log_density(&self) -> f64 {
        -(self.dim as f64) / 2.0 * (2.0 * PI).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Auxiliary {
    None,
    Pivot(Pivot),
    Prior(PriorQ),
}

/// Selected objective plus the auxiliary state it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub embed_dim: usize,
    pub auxiliary: Auxiliary,
    pub generator_form: GeneratorForm,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, embed_dim: usize) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::Config("embedding length must be positive".into()));
        }
        if kind.requires_scalar() && embed_dim != 1 {
            return Err(Error::Config(format!(
                "objective `{kind}` needs a scalar critic (m = 1), got m = {embed_dim}"
            )));
        }
        let auxiliary = match kind {
            ObjectiveKind::MafC => Auxiliary::Pivot(Pivot::uniform(embed_dim)),
            ObjectiveKind::MafD => Auxiliary::Prior(PriorQ { dim: embed_dim }),
            _ => Auxiliary::None,
        };
        Ok(Self {
            kind,
            embed_dim,
            auxiliary,
            generator_form: GeneratorForm::default(),
        })
    }

    pub fn pivot(&self) -> Option<&Pivot> {
        match &self.auxiliary {
            Auxiliary::Pivot(p) => Some(p),
            _ => None,
        }
    }

    pub fn pivot_mut(&mut self) -> Option<&mut Pivot> {
        match &mut self.auxiliary {
            Auxiliary::Pivot(p) => Some(p),
            _ => None,
        }
    }
}

/// `(d_loss, g_loss)` as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossPair {
    pub d_loss: Var,
    pub g_loss: Var,
}

fn check_scalar(g: &Graph, v: Var, kind: ObjectiveKind) -> Result<()> {
    let m = g.shape(v)[1];
    if m != 1 {
        return Err(Error::Config(format!(
            "objective `{kind}` needs m = 1 embeddings, got m = {m}"
        )));
    }
    Ok(())
}

/// `ln(max(p, 1e-12))`
fn clamped_log(g: &mut Graph, p: Var) -> Var {
    let c = g.clamp_min(p, EPS);
    g.ln(c)
}

/// Per-row Euclidean norm `[b×m] → [b×1]`, floored at [`EPS`].
pub fn row_norm(g: &mut Graph, v: Var) -> Var {
    let sq = g.square(v);
    let s = g.sum_rows(sq);
    let n = g.sqrt_guarded(s);
    g.clamp_min(n, EPS)
}

impl Graph {
    /// `sqrt` whose gradient stays finite at exactly zero: zero entries are
    /// lifted to `EPS²` first.
    pub(crate) fn sqrt_guarded(&mut self, v: Var) -> Var {
        let c = self.clamp_min(v, EPS * EPS);
        self.sqrt(c)
    }
}

/// Per-row cosine similarity `[b×m] × [1×m] → [b×1]`.
pub fn cosine_to_pivot(g: &mut Graph, v: Var, w: Var) -> Result<Var> {
    let m = g.shape(v)[1];
    if g.shape(w) != [1, m] {
        return Err(Error::shape("maf-c pivot", g.shape(v), g.shape(w)));
    }
    let wt = g.transpose(w);
    let dot = g.matmul(v, wt)?;
    let nv = row_norm(g, v);
    let nw = row_norm(g, w);
    let denom = g.mul(nv, nw)?;
    g.div(dot, denom)
}

fn reject_zero_rows(g: &Graph, v: Var) -> Result<()> {
    let t = g.value(v);
    for i in 0..t.rows() {
        if t.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::Numerical(format!(
                "embedding row {i} has zero norm; cosine similarity undefined"
            )));
        }
    }
    Ok(())
}

/// Gaussian log-density per row, `[b×m] → [b×1]`.
pub fn gaussian_log_density(g: &mut Graph, v: Var) -> Var {
    let m = g.shape(v)[1] as f64;
    let sq = g.square(v);
    let s = g.sum_rows(sq);
    let half = g.scale(s, -0.5);
    g.offset(half, -m / 2.0 * (2.0 * PI).ln())
}

/// `softplus(V) + 1e-6`, the positive code scored by `maf-e`.
pub fn positive_code(g: &mut Graph, v: Var) -> Result<Var> {
    let sp = g.softplus(v);
    let u = g.offset(sp, POSITIVE_FLOOR);
    if g.value(u).data().iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Contract(
            "positivity squash produced a non-positive code".into(),
        ));
    }
    Ok(u)
}

/// `‖U‖₁/m − mean(log U)` per row for an already-positive `U`.
pub fn norm_entropy(g: &mut Graph, u: Var) -> Var {
    let m = g.shape(u)[1] as f64;
    let l1 = g.sum_rows(u);
    let l1 = g.scale(l1, 1.0 / m);
    let logs = g.ln(u);
    let ent = g.mean_rows(logs);
    g.sub(l1, ent).expect("both terms are [b×1]")
}

/// Realness scalar each objective maximizes on real data, `[b×m] → [b×1]`.
pub fn realness(g: &mut Graph, v: Var, spec: &ObjectiveSpec, pivot: Option<Var>) -> Result<Var> {
    realness_checked(g, v, spec, pivot, true)
}

fn realness_checked(
    g: &mut Graph,
    v: Var,
    spec: &ObjectiveSpec,
    pivot: Option<Var>,
    strict: bool,
) -> Result<Var> {
    match spec.kind {
        ObjectiveKind::Std => {
            check_scalar(g, v, spec.kind)?;
            Ok(g.sigmoid(v))
        }
        ObjectiveKind::Wgan => {
            check_scalar(g, v, spec.kind)?;
            Ok(v)
        }
        ObjectiveKind::MafC => {
            let w = pivot.ok_or_else(|| Error::Config("maf-c needs a pivot".into()))?;
            if strict {
                reject_zero_rows(g, v)?;
            }
            cosine_to_pivot(g, v, w)
        }
        ObjectiveKind::MafD => Ok(gaussian_log_density(g, v)),
        ObjectiveKind::MafE => {
            let u = positive_code(g, v)?;
            Ok(norm_entropy(g, u))
        }
    }
}

/// `−(E R(V_real) − E R(V_fake))` and `−E R(V_fake)`.
fn critic_gap(g: &mut Graph, r_real: Var, r_fake: Var) -> Result<LossPair> {
    let mr = g.mean(r_real);
    let mf = g.mean(r_fake);
    let gap = g.sub(mr, mf)?;
    Ok(LossPair {
        d_loss: g.neg(gap),
        g_loss: g.neg(mf),
    })
}

/// Cross-entropy GAN. `log` arguments are clamped at `1e-12`; `1 − σ(v)` is
/// evaluated as `σ(−v)`.
pub fn loss_std(g: &mut Graph, v_real: Var, v_fake: Var, form: GeneratorForm) -> Result<LossPair> {
    check_scalar(g, v_real, ObjectiveKind::Std)?;
    check_scalar(g, v_fake, ObjectiveKind::Std)?;
    let p_real = g.sigmoid(v_real);
    let log_real = clamped_log(g, p_real);
    let neg_fake = g.neg(v_fake);
    let q_fake = g.sigmoid(neg_fake);
    let log_not_fake = clamped_log(g, q_fake);
    let a = g.mean(log_real);
    let b = g.mean(log_not_fake);
    let sum = g.add(a, b)?;
    let d_loss = g.neg(sum);
    let g_loss = match form {
        GeneratorForm::NonSaturating => {
            let p_fake = g.sigmoid(v_fake);
            let l = clamped_log(g, p_fake);
            let m = g.mean(l);
            g.neg(m)
        }
        GeneratorForm::Minimax => b,
    };
    Ok(LossPair { d_loss, g_loss })
}

pub fn loss_wgan(g: &mut Graph, v_real: Var, v_fake: Var) -> Result<LossPair> {
    check_scalar(g, v_real, ObjectiveKind::Wgan)?;
    check_scalar(g, v_fake, ObjectiveKind::Wgan)?;
    critic_gap(g, v_real, v_fake)
}

/// Cosine objective. `w` is the pivot node; when it is trainable the same
/// `d_loss` gradient maximizes the gap over `W` as well.
pub fn loss_maf_c(g: &mut Graph, v_real: Var, v_fake: Var, w: Var) -> Result<LossPair> {
    reject_zero_rows(g, v_real)?;
    reject_zero_rows(g, v_fake)?;
    let rr = cosine_to_pivot(g, v_real, w)?;
    let rf = cosine_to_pivot(g, v_fake, w)?;
    critic_gap(g, rr, rf)
}

pub fn loss_maf_d(g: &mut Graph, v_real: Var, v_fake: Var) -> Result<LossPair> {
    let rr = gaussian_log_density(g, v_real);
    let rf = gaussian_log_density(g, v_fake);
    critic_gap(g, rr, rf)
}

pub fn loss_maf_e(g: &mut Graph, v_real: Var, v_fake: Var) -> Result<LossPair> {
    let ur = positive_code(g, v_real)?;
    let uf = positive_code(g, v_fake)?;
    let rr = norm_entropy(g, ur);
    let rf = norm_entropy(g, uf);
    critic_gap(g, rr, rf)
}

/// Dispatches to the objective selected by `spec`.
pub fn losses(
    g: &mut Graph,
    v_real: Var,
    v_fake: Var,
    spec: &ObjectiveSpec,
    pivot: Option<Var>,
) -> Result<LossPair> {
    match spec.kind {
        ObjectiveKind::Std => loss_std(g, v_real, v_fake, spec.generator_form),
        ObjectiveKind::Wgan => loss_wgan(g, v_real, v_fake),
        ObjectiveKind::MafC => {
            let w = pivot.ok_or_else(|| Error::Config("maf-c needs a pivot".into()))?;
            loss_maf_c(g, v_real, v_fake, w)
        }
        ObjectiveKind::MafD => loss_maf_d(g, v_real, v_fake),
        ObjectiveKind::MafE => loss_maf_e(g, v_real, v_fake),
    }
}

/// Generator target alone (no real batch needed).
pub fn generator_loss(g: &mut Graph, v_fake: Var, spec: &ObjectiveSpec, pivot: Option<Var>) -> Result<Var> {
    match (spec.kind, spec.generator_form) {
        (ObjectiveKind::Std, GeneratorForm::NonSaturating) => {
            let r = realness(g, v_fake, spec, pivot)?;
            let l = clamped_log(g, r);
            let m = g.mean(l);
            Ok(g.neg(m))
        }
        (ObjectiveKind::Std, GeneratorForm::Minimax) => {
            check_scalar(g, v_fake, spec.kind)?;
            let neg = g.neg(v_fake);
            let q = g.sigmoid(neg);
            let l = clamped_log(g, q);
            Ok(g.mean(l))
        }
        _ => {
            let r = realness(g, v_fake, spec, pivot)?;
            let m = g.mean(r);
            Ok(g.neg(m))
        }
    }
}

/// Numeric realness field for a batch of embeddings (confidence maps). A
/// zero embedding scores cosine 0 here instead of raising.
pub fn realness_scalar(v: &Tensor, spec: &ObjectiveSpec) -> Result<Tensor> {
    let mut g = Graph::new();
    let vv = g.constant(v.clone());
    let pivot = spec.pivot().map(|p| g.constant(p.w.clone()));
    let r = realness_checked(&mut g, vv, spec, pivot, false)?;
    Ok(g.value(r).clone())
}
