//! Self-checks bundled into `verify`: gradient correctness on random
//! networks, the TC theorem suite, metric oracles and run determinism.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{finite_diff_check, Graph, Mode, Tensor, Var};
use crate::constraints::{
    gradient_penalty, theorem_suite_with, topological_consistency_with, Check, MixOrder, Report, TcMetric, TcSample,
};
use crate::data::SyntheticSpec;
use crate::error::Result;
use crate::metrics::{frechet_distance_2d, frechet_from_stats, frechet_from_stats_eig};
use crate::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, InitScheme, Module};
use crate::objectives::{losses, realness, ObjectiveKind, ObjectiveSpec};
use crate::par::{self, Execution};
use crate::rng::{self, Stream};
use crate::trainer::{train, TrainConfig};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect()).expect("positive dims")
}

fn small_d(rng: &mut impl Rng, embed_dim: usize) -> Discriminator {
    let cfg = DiscriminatorConfig { in_dim: 2, hidden: 4, pieces: 2, embed_dim };
    Discriminator::new(cfg, InitScheme::Uniform, rng).expect("valid config")
}

fn params_of(net: &impl Module) -> Vec<Tensor> {
    net.params().into_iter().cloned().collect()
}

/// Sets of primitives exercised by [`gradient_suite`].
pub const PRIMITIVE_SETS: [&str; 4] = ["discriminator", "generator", "objectives", "constraints"];

/// One random case of a primitive set: `(max relative error, coordinates checked)`.
pub fn gradient_case(set: &str, case: u64) -> Result<(f64, usize)> {
    let mut rng = rng::stream(case, Stream::Eval);
    let rep = match set {
        "discriminator" => {
            let d = small_d(&mut rng, 3);
            let x = normal(&mut rng, 5, 2, 1.5);
            let w = normal(&mut rng, 5, 3, 1.0);
            let nd = d.params().len();
            let mut params = params_of(&d);
            params.push(x);
            finite_diff_check(
                |g, p| {
                    let v = d.forward(g, &p[..nd], p[nd])?;
                    let c = g.constant(w.clone());
                    let y = g.mul(v, c)?;
                    Ok(g.sum(y))
                },
                &params,
                FD_STEP,
                FD_TOL,
            )?
        }
        "generator" => {
            let cfg = GeneratorConfig { z_dim: 3, hidden: 4, layers: 2, out_dim: 2 };
            let gen = Generator::new(cfg, InitScheme::Uniform, &mut rng);
            let z = normal(&mut rng, 6, 3, 1.0);
            let w = normal(&mut rng, 6, 2, 1.0);
            // Biases feeding batch norm have an identically zero gradient
            // (the batch mean cancels them), so relative error there is pure
            // roundoff; hold them fixed.
            let all = params_of(&gen);
            let is_bn_bias = |i: usize| i < 4 * cfg.layers && i % 4 == 1;
            let mut params: Vec<Tensor> = (0..all.len()).filter(|&i| !is_bn_bias(i)).map(|i| all[i].clone()).collect();
            params.push(z);
            finite_diff_check(
                |g, p| {
                    let mut free = p.iter().copied();
                    let vars: Vec<Var> = (0..all.len())
                        .map(|i| if is_bn_bias(i) { g.constant(all[i].clone()) } else { free.next().expect("free param") })
                        .collect();
                    let z = free.next().expect("latent");
                    let out = gen.forward(g, &vars, z, Mode::Train)?;
                    let c = g.constant(w.clone());
                    let y = g.mul(out.samples, c)?;
                    Ok(g.sum(y))
                },
                &params,
                FD_STEP,
                FD_TOL,
            )?
        }
        "objectives" => {
            let kind = ObjectiveKind::ALL[(case % 5) as usize];
            let m = if kind.requires_scalar() { 1 } else { 4 };
            let spec = ObjectiveSpec::new(kind, m)?;
            let mut params = vec![normal(&mut rng, 6, m, 1.0), normal(&mut rng, 6, m, 1.0)];
            if kind == ObjectiveKind::MafC {
                params.push(normal(&mut rng, 1, m, 1.0));
            }
            finite_diff_check(
                |g, p| {
                    let pair = losses(g, p[0], p[1], &spec, p.get(2).copied())?;
                    let gl = g.scale(pair.g_loss, 0.7);
                    g.add(pair.d_loss, gl)
                },
                &params,
                FD_STEP,
                FD_TOL,
            )?
        }
        "constraints" => {
            let d = small_d(&mut rng, 3);
            let nd = d.params().len();
            let x_r = normal(&mut rng, 5, 2, 1.5);
            let x_g = normal(&mut rng, 5, 2, 1.5);
            let eps: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.95)).collect();
            let delta: Vec<f64> = (0..5).map(|_| rng.random_range(-0.05..0.05)).collect();
            let sample = TcSample { eps: eps.clone(), delta };
            let metric = TcMetric::ALL[(case % 3) as usize];
            let spec = ObjectiveSpec::new(ObjectiveKind::MafE, 3)?;
            let mut params = params_of(&d);
            params.push(x_r);
            params.push(x_g);
            finite_diff_check(
                |g, p| {
                    let (dv, xr, xg) = (&p[..nd], p[nd], p[nd + 1]);
                    let embed = |g: &mut Graph, x: Var| d.forward(g, dv, x);
                    let e_r = embed(g, xr)?;
                    let e_g = embed(g, xg)?;
                    let tc = topological_consistency_with(g, &embed, xr, xg, e_r, e_g, &sample, metric, MixOrder::Consistent)?;
                    let x_hat = crate::constraints::mixup_var(g, xr, xg, &eps)?;
                    let gp = gradient_penalty(
                        g,
                        |g: &mut Graph, x: Var| {
                            let v = d.forward(g, dv, x)?;
                            realness(g, v, &spec, None)
                        },
                        x_hat,
                    )?;
                    g.add(tc, gp)
                },
                &params,
                FD_STEP,
                FD_TOL,
            )?
        }
        other => return Err(crate::Error::Config(format!("unknown primitive set `{other}`"))),
    };
    Ok((rep.max_rel_error, rep.checked()))
}

/// Finite-difference agreement over `cases` random networks/inputs per set.
pub fn gradient_suite(exec: Execution, cases: usize) -> Vec<Check> {
    PRIMITIVE_SETS
        .iter()
        .map(|&set| {
            let results = par::map_range(exec, cases, |i| gradient_case(set, i as u64));
            let mut worst = 0.0f64;
            let mut checked = 0;
            let mut errors = Vec::new();
            for r in results {
                match r {
                    Ok((e, n)) => {
                        worst = worst.max(e);
                        checked += n;
                    }
                    Err(e) => errors.push(e.to_string()),
                }
            }
            let passed = errors.is_empty() && worst < FD_TOL && checked > 0;
            let detail = if errors.is_empty() {
                format!("max rel error {worst:.2e} over {cases} cases, {checked} coordinates")
            } else {
                format!("{} cases errored, first: {}", errors.len(), errors[0])
            };
            Check::new(&format!("grad_{set}"), passed, format!("{FD_TOL:e}"), detail)
        })
        .collect()
}

fn random_cov(rng: &mut impl Rng) -> [[f64; 2]; 2] {
    let l = [[rng.random_range(-2.0..2.0), 0.0], [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]];
    let a = l[0][0] * l[0][0] + 0.1;
    let b = l[0][0] * l[1][0];
    let d = l[1][0] * l[1][0] + l[1][1] * l[1][1] + 0.1;
    [[a, b], [b, d]]
}

pub const ORACLE_TOL: f64 = 1e-8;

/// Closed-form 2D Fréchet against the eigendecomposition oracle, plus the
/// unit-shift sample case.
pub fn metric_oracles() -> Vec<Check> {
    let mut rng = rng::stream(2024, Stream::Eval);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mu_a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let mu_b = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let (ca, cb) = (random_cov(&mut rng), random_cov(&mut rng));
        let fast = frechet_from_stats(mu_a, ca, mu_b, cb);
        let slow = frechet_from_stats_eig(mu_a, ca, mu_b, cb);
        worst = worst.max((fast - slow).abs() / slow.abs().max(1.0));
    }
    let oracle = Check::new(
        "frechet_matches_eigen_oracle",
        worst < ORACLE_TOL,
        format!("{ORACLE_TOL:e}"),
        format!("max rel deviation {worst:.2e} over 100 random pairs"),
    );

    let n = 100_000;
    let a = normal(&mut rng, n, 2, 1.0);
    let mut b = normal(&mut rng, n, 2, 1.0);
    for i in 0..n {
        b.data_mut()[2 * i] += 1.0;
    }
    let analytic = match frechet_distance_2d(&a, &b) {
        Ok(fd) => Check::new("frechet_unit_shift", (fd - 1.0).abs() <= 0.05, "1.0 ± 0.05", format!("{fd:.4} at n = {n}")),
        Err(e) => Check::new("frechet_unit_shift", false, "1.0 ± 0.05", format!("error: {e}")),
    };
    vec![oracle, analytic]
}

/// Two identical tiny runs must produce byte-identical records.
pub fn determinism_check() -> Check {
    let mut cfg = TrainConfig { seed: 17, epochs: 2, batch_size: 16, ..TrainConfig::default() };
    cfg.generator = GeneratorConfig { z_dim: 4, hidden: 8, layers: 2, out_dim: 2 };
    cfg.discriminator = DiscriminatorConfig { hidden: 8, embed_dim: 4, ..DiscriminatorConfig::default() };
    cfg.schedule.metrics_every = 1;
    cfg.schedule.eval_samples = 64;
    cfg.schedule.probe_batch = 16;
    cfg.schedule.confmap_epochs = vec![];
    let data = SyntheticSpec { count: 96, ..SyntheticSpec::default() };
    let csv = || -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        train(&cfg, &data)?.record.write_csv(&mut buf)?;
        Ok(buf)
    };
    match (csv(), csv()) {
        (Ok(a), Ok(b)) => Check::new(
            "record_determinism",
            a == b,
            "byte-identical",
            format!("{} bytes, {}", a.len(), if a == b { "identical" } else { "differ" }),
        ),
        (Err(e), _) | (_, Err(e)) => Check::new("record_determinism", false, "byte-identical", format!("error: {e}")),
    }
}

/// Everything `verify` runs.
pub fn verify(exec: Execution) -> Report {
    verify_with(exec, MixOrder::Consistent)
}

pub fn verify_with(exec: Execution, order: MixOrder) -> Report {
    let mut report = theorem_suite_with(exec, order);
    report.checks.extend(gradient_suite(exec, 100));
    report.checks.extend(metric_oracles());
    report.checks.push(determinism_check());
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_set_passes_a_few_cases() {
        for c in gradient_suite(Execution::default(), 5) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn unknown_set_is_rejected() {
        assert!(gradient_case("conv", 0).is_err());
    }

    #[test]
    fn oracles_and_determinism_pass() {
        for c in metric_oracles() {
            assert!(c.passed, "{c}");
        }
        assert!(determinism_check().passed);
    }
}
