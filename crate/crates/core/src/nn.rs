//! Toy fully-connected generator and maxout discriminator.
//!
//! Parameters live outside any graph. Each forward pass binds them into a
//! fresh [`Graph`] (trainable or frozen), and gradients are read back in the
//! same order as [`Module::params`].

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights `U(−1/√fan_in, 1/√fan_in)`, biases 0, BN scale 1.
    Uniform,
    /// Everything zero, BN scale included.
    Zeros,
}

/// Named parameter (and buffer) access with a stable order.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Binds every parameter into `g` as a leaf.
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| {
                g.leaf(t.clone(), trainable)
                    .expect("parameters are matrices")
            })
            .collect()
    }

    /// Gradients of bound parameters (zeros where none reached).
    fn grads(&self, g: &Graph, vars: &[Var]) -> Vec<Tensor> {
        self.params()
            .iter()
            .zip(vars)
            .map(|(p, v)| {
                g.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect()
    }
}

/// All parameters concatenated in [`Module::params`] order.
pub fn flatten_params<M: Module + ?Sized>(net: &M) -> Vec<f64> {
    net.params()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect()
}

/// Inverse of [`flatten_params`].
pub fn scatter_params<M: Module + ?Sized>(net: &mut M, flat: &[f64]) -> Result<()> {
    let total = net.param_count();
    if flat.len() != total {
        return Err(Error::shape("scatter_params", &[total], &[flat.len()]));
    }
    let mut offset = 0;
    for t in net.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

/// Ranges of the flattened vector grouped by layer (name prefix before `.`).
pub fn layer_slices<M: Module + ?Sized>(net: &M) -> Vec<(String, Range<usize>)> {
    let mut out: Vec<(String, Range<usize>)> = Vec::new();
    let mut offset = 0;
    for (name, t) in net.named_params() {
        let layer = name.split('.').next().unwrap_or(&name).to_string();
        let end = offset + t.len();
        match out.last_mut() {
            Some((l, r)) if *l == layer => r.end = end,
            _ => out.push((layer, offset..end)),
        }
        offset = end;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[1 × out]`
    pub bias: Tensor,
}

impl Linear {
    fn new(input: usize, output: usize, scheme: InitScheme, rng: &mut impl Rng) -> Self {
        let weight = match scheme {
            InitScheme::Uniform => {
                let bound = 1.0 / (input as f64).sqrt();
                let data = (0..input * output)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::from_parts(input, output, data)
            }
            InitScheme::Zeros => Tensor::zeros(input, output),
        };
        Self {
            weight,
            bias: Tensor::zeros(1, output),
        }
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.affine(x, vars[0], vars[1])
    }
}

/// Linear maxout: `k` affine maps, elementwise max.
#[derive(Clone, Debug, PartialEq)]
pub struct Maxout {
    /// Piece `p` occupies columns `p·out .. (p+1)·out` of the linear map.
    pub linear: Linear,
    pub pieces: usize,
}

impl Maxout {
    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let pre = self.linear.forward(g, vars, x)?;
        g.maxout(pre, self.pieces)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    fn new(width: usize, scheme: InitScheme) -> Self {
        let scale = match scheme {
            InitScheme::Uniform => 1.0,
            InitScheme::Zeros => 0.0,
        };
        Self {
            gamma: Tensor::full(1, width, scale),
            beta: Tensor::zeros(1, width),
            running_mean: Tensor::zeros(1, width),
            running_var: Tensor::full(1, width, 1.0),
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, vars[0], vars[1], BN_EPS)?;
                Ok((y, Some(stats)))
            }
            Mode::Eval => {
                let mean = g.constant(self.running_mean.clone());
                let inv = g.constant(self.running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
                let centered = g.sub(x, mean)?;
                let xhat = g.mul(centered, inv)?;
                let scaled = g.mul(xhat, vars[0])?;
                Ok((g.add(scaled, vars[1])?, None))
            }
        }
    }

    fn update(&mut self, stats: &BatchStats, batch: usize) {
        let unbias = batch as f64 / (batch as f64 - 1.0);
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub out_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: 32,
            hidden: 128,
            layers: 4,
            out_dim: 2,
        }
    }
}

/// `layers` × (linear → batch norm → ReLU), then a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub hidden: Vec<(Linear, BatchNorm)>,
    pub output: Linear,
}

pub struct GeneratorOutput {
    pub samples: Var,
    /// One entry per hidden layer in train mode, empty in eval mode.
    pub stats: Vec<BatchStats>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, scheme: InitScheme, rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::with_capacity(config.layers);
        let mut width = config.z_dim;
        for _ in 0..config.layers {
            hidden.push((
                Linear::new(width, config.hidden, scheme, rng),
                BatchNorm::new(config.hidden, scheme),
            ));
            width = config.hidden;
        }
        let output = Linear::new(width, config.out_dim, scheme, rng);
        Self {
            config,
            hidden,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], z: Var, mode: Mode) -> Result<GeneratorOutput> {
        if g.shape(z).get(1) != Some(&self.config.z_dim) {
            return Err(Error::shape("generator input", g.shape(z), &[self.config.z_dim]));
        }
        let mut h = z;
        let mut stats = Vec::new();
        for (i, (lin, bn)) in self.hidden.iter().enumerate() {
            let v = &vars[4 * i..4 * i + 4];
            h = lin.forward(g, &v[..2], h)?;
            let (y, s) = bn.forward(g, &v[2..], h, mode)?;
            stats.extend(s);
            h = g.relu(y);
        }
        let v = &vars[4 * self.hidden.len()..];
        let samples = self.output.forward(g, v, h)?;
        Ok(GeneratorOutput { samples, stats })
    }

    /// Draws samples outside any training graph.
    pub fn sample(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &vars, zv, mode)?;
        Ok(g.value(out.samples).clone())
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats], batch: usize) {
        for ((_, bn), s) in self.hidden.iter_mut().zip(stats) {
            bn.update(s, batch);
        }
    }

    /// Parameters plus batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        for (i, (_, bn)) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.running_mean"), bn.running_mean.clone()));
            out.push((format!("hidden{i}.running_var"), bn.running_var.clone()));
        }
        out
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let n_params = names.len();
        if entries.len() != n_params + 2 * self.hidden.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} tensors, generator expects {}",
                entries.len(),
                n_params + 2 * self.hidden.len()
            )));
        }
        let targets = names.into_iter().zip(self.params_mut()).collect();
        assign_state(targets, &entries[..n_params])?;
        let buffers = self
            .hidden
            .iter_mut()
            .enumerate()
            .flat_map(|(i, (_, bn))| {
                [
                    (format!("hidden{i}.running_mean"), &mut bn.running_mean),
                    (format!("hidden{i}.running_var"), &mut bn.running_var),
                ]
            })
            .collect();
        assign_state(buffers, &entries[n_params..])
    }
}

impl Module for Generator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (lin, bn)) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.weight"), &lin.weight));
            out.push((format!("hidden{i}.bias"), &lin.bias));
            out.push((format!("hidden{i}.gamma"), &bn.gamma));
            out.push((format!("hidden{i}.beta"), &bn.beta));
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (lin, bn) in self.hidden.iter_mut() {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub pieces: usize,
    /// Embedding length `m`; `1` gives a scalar critic.
    pub embed_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_dim: 2,
            hidden: 128,
            pieces: 2,
            embed_dim: 16,
        }
    }
}

/// Three fully-connected layers: maxout, maxout, linear embedding head.
/// No normalization, so every sample is scored independently of its batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub hidden: Vec<Maxout>,
    pub head: Linear,
}

impl Discriminator {
    pub const DEPTH: usize = 3;

    pub fn new(config: DiscriminatorConfig, scheme: InitScheme, rng: &mut impl Rng) -> Result<Self> {
        if config.pieces < 2 {
            return Err(Error::Config(format!(
                "maxout needs at least 2 pieces, got {}",
                config.pieces
            )));
        }
        let mk = |input: usize, rng: &mut dyn rand::RngCore| {
            let mut rng = rng;
            Maxout {
                linear: Linear::new(input, config.hidden * config.pieces, scheme, &mut rng),
                pieces: config.pieces,
            }
        };
        let l1 = mk(config.in_dim, rng);
        let l2 = mk(config.hidden, rng);
        let head = Linear::new(config.hidden, config.embed_dim, scheme, rng);
        Ok(Self {
            config,
            hidden: vec![l1, l2],
            head,
        })
    }

    /// Output of fully-connected layer `layer` (0-based; `DEPTH - 1` is the
    /// embedding).
    pub fn forward_to(&self, g: &mut Graph, vars: &[Var], x: Var, layer: usize) -> Result<Var> {
        if g.shape(x).get(1) != Some(&self.config.in_dim) {
            return Err(Error::shape("discriminator input", g.shape(x), &[self.config.in_dim]));
        }
        if layer >= Self::DEPTH {
            return Err(Error::Config(format!(
                "layer {layer} out of range for a {}-layer discriminator",
                Self::DEPTH
            )));
        }
        let mut h = x;
        for (i, m) in self.hidden.iter().enumerate() {
            h = m.forward(g, &vars[2 * i..2 * i + 2], h)?;
            if i == layer {
                return Ok(h);
            }
        }
        self.head.forward(g, &vars[2 * self.hidden.len()..], h)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        self.forward_to(g, vars, x, Self::DEPTH - 1)
    }

    /// Embeddings for a batch of points, outside any training graph.
    pub fn embed_points(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn state(&self) -> Vec<(String, Tensor)> {
        self.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let targets = names.into_iter().zip(self.params_mut()).collect();
        assign_state(targets, entries)
    }
}

impl Module for Discriminator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, m) in self.hidden.iter().enumerate() {
            out.push((format!("maxout{i}.weight"), &m.linear.weight));
            out.push((format!("maxout{i}.bias"), &m.linear.bias));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for m in self.hidden.iter_mut() {
            out.push(&mut m.linear.weight);
            out.push(&mut m.linear.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

fn assign_state(targets: Vec<(String, &mut Tensor)>, entries: &[(String, Tensor)]) -> Result<()> {
    if targets.len() != entries.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} tensors, network expects {}",
            entries.len(),
            targets.len()
        )));
    }
    for ((name, dst), (src_name, src)) in targets.into_iter().zip(entries) {
        if &name != src_name {
            return Err(Error::Parse(format!(
                "checkpoint tensor `{src_name}` where `{name}` was expected"
            )));
        }
        if dst.shape() != src.shape() {
            return Err(Error::shape("checkpoint", dst.shape(), src.shape()));
        }
        *dst = src.clone();
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "mafgan-checkpoint 1";

/// Writes a text checkpoint.
///
/// Format: the line `mafgan-checkpoint 1`, then per tensor a header line
/// `<name> <rows> <cols>` followed by one line of space-separated values in
/// row-major order. Values use Rust's shortest round-trip float formatting,
/// so reading back is bit-exact.
pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    for (name, t) in entries {
        if name.contains(char::is_whitespace) {
            return Err(Error::Contract(format!("tensor name `{name}` contains whitespace")));
        }
        writeln!(out, "{name} {} {}", t.rows(), t.cols()).unwrap();
        let line: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(l)) if l.trim_end() == CHECKPOINT_MAGIC => {}
        _ => return Err(Error::Parse(format!("{} is not a checkpoint", path.display()))),
    }
    let mut out = Vec::new();
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols] = parts.as_slice() else {
            return Err(Error::Parse(format!("bad tensor header `{header}`")));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")))
        };
        let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
        let body = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing values for `{name}`")))??;
        let values = body
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad value `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((name.to_string(), Tensor::matrix(rows, cols, values)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn small_g() -> GeneratorConfig {
        GeneratorConfig {
            z_dim: 32,
            hidden: 16,
            layers: 4,
            out_dim: 2,
        }
    }

    fn small_d(m: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_dim: 2,
            hidden: 8,
            pieces: 2,
            embed_dim: m,
        }
    }

    fn normal(rows: usize, cols: usize, seed: u64) -> Tensor {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream(seed, Stream::Latent);
        let d = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Tensor::matrix(rows, cols, d).unwrap()
    }

    #[test]
    fn generator_output_shape() {
        let gen = Generator::new(GeneratorConfig::default(), InitScheme::Uniform, &mut stream(0, Stream::GeneratorInit));
        let mut g = Graph::new();
        let vars = gen.bind(&mut g, true);
        let z = g.constant(normal(64, 32, 1));
        let out = gen.forward(&mut g, &vars, z, Mode::Train).unwrap();
        assert_eq!(g.shape(out.samples), &[64, 2]);
        assert_eq!(out.stats.len(), 4);
        assert!(g.value(out.samples).is_finite());
    }

    #[test]
    fn generator_rejects_wrong_latent_width() {
        let gen = Generator::new(small_g(), InitScheme::Uniform, &mut stream(0, Stream::GeneratorInit));
        let err = gen.sample(&normal(4, 16, 0), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn identical_latents_give_identical_eval_samples() {
        let gen = Generator::new(small_g(), InitScheme::Uniform, &mut stream(3, Stream::GeneratorInit));
        let z = normal(1, 32, 5);
        let zz = Tensor::vstack(&[&z, &z, &z]).unwrap();
        let out = gen.sample(&zz, Mode::Eval).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
    }

    #[test]
    fn zero_generator_outputs_its_output_bias() {
        let mut gen = Generator::new(small_g(), InitScheme::Zeros, &mut stream(0, Stream::GeneratorInit));
        gen.output.bias = Tensor::row_vector(&[0.25, -1.5]);
        for mode in [Mode::Train, Mode::Eval] {
            let out = gen.sample(&normal(8, 32, 2), mode).unwrap();
            for i in 0..8 {
                assert_eq!(out.row(i), &[0.25, -1.5]);
            }
        }
    }

    #[test]
    fn discriminator_shapes() {
        let d = Discriminator::new(small_d(16), InitScheme::Uniform, &mut stream(0, Stream::DiscriminatorInit)).unwrap();
        assert_eq!(d.embed_points(&normal(64, 2, 0)).unwrap().shape(), &[64, 16]);
        let d1 = Discriminator::new(small_d(1), InitScheme::Uniform, &mut stream(0, Stream::DiscriminatorInit)).unwrap();
        assert_eq!(d1.embed_points(&normal(5, 2, 0)).unwrap().shape(), &[5, 1]);
        assert!(matches!(d.embed_points(&normal(3, 3, 0)), Err(Error::Shape { .. })));
    }

    #[test]
    fn discriminator_is_batch_independent() {
        let d = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(9, Stream::DiscriminatorInit)).unwrap();
        let x = normal(6, 2, 4);
        let full = d.embed_points(&x).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let rows: Vec<&[f64]> = perm.iter().map(|&i| x.row(i)).collect();
        let permuted = d.embed_points(&Tensor::from_rows(&rows)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(permuted.row(k), full.row(i));
            let single = d.embed_points(&x.slice_rows(i, 1)).unwrap();
            assert_eq!(single.row(0), full.row(i));
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        let b = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        let c = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(2, Stream::DiscriminatorInit)).unwrap();
        assert_eq!(flatten_params(&a), flatten_params(&b));
        assert_ne!(flatten_params(&a), flatten_params(&c));
        let z = Discriminator::new(small_d(4), InitScheme::Zeros, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        assert!(flatten_params(&z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let d = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        let bound = 1.0 / (8f64).sqrt();
        assert!(d.hidden[1].linear.weight.data().iter().all(|v| v.abs() <= bound));
        assert!(d.hidden[1].linear.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_scatter_roundtrip_and_counts() {
        let cfg = small_d(4);
        let d = Discriminator::new(cfg, InitScheme::Uniform, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        let (h, k, m) = (cfg.hidden, cfg.pieces, cfg.embed_dim);
        let analytic = (2 * h * k + h * k) + (h * h * k + h * k) + (h * m + m);
        let flat = flatten_params(&d);
        assert_eq!(flat.len(), analytic);
        let mut other = Discriminator::new(cfg, InitScheme::Zeros, &mut stream(0, Stream::DiscriminatorInit)).unwrap();
        scatter_params(&mut other, &flat).unwrap();
        assert_eq!(other, d);
        assert!(scatter_params(&mut other, &flat[1..]).is_err());

        let slices = layer_slices(&d);
        let names: Vec<&str> = slices.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["maxout0", "maxout1", "head"]);
        assert_eq!(slices.last().unwrap().1.end, analytic);

        let gcfg = small_g();
        let gen = Generator::new(gcfg, InitScheme::Uniform, &mut stream(0, Stream::GeneratorInit));
        let hg = gcfg.hidden;
        let g_count = (32 * hg + hg + 2 * hg) + 3 * (hg * hg + hg + 2 * hg) + (hg * 2 + 2);
        assert_eq!(gen.param_count(), g_count);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut gen = Generator::new(small_g(), InitScheme::Uniform, &mut stream(4, Stream::GeneratorInit));
        gen.hidden[0].1.running_mean.data_mut()[0] = 1.0 / 3.0;
        let path = dir.path().join("g.ckpt");
        write_checkpoint(&path, &gen.state()).unwrap();
        let mut back = Generator::new(small_g(), InitScheme::Zeros, &mut stream(0, Stream::GeneratorInit));
        back.load_state(&read_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(back, gen);

        let d = Discriminator::new(small_d(4), InitScheme::Uniform, &mut stream(1, Stream::DiscriminatorInit)).unwrap();
        write_checkpoint(&path, &d.state()).unwrap();
        let mut wrong = Discriminator::new(small_d(8), InitScheme::Zeros, &mut stream(0, Stream::DiscriminatorInit)).unwrap();
        assert!(wrong.load_state(&read_checkpoint(&path).unwrap()).is_err());
    }
}
