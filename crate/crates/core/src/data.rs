//! Synthetic 2D distributions: a 3×3 Gaussian grid and concentric circles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    #[default]
    GaussianGrid,
    Circles,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 2] = [SyntheticKind::GaussianGrid, SyntheticKind::Circles];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::GaussianGrid => "gaussian-grid",
            SyntheticKind::Circles => "circles",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub count: usize,
    /// Grid spacing; centers sit on `{−s, 0, s}²`.
    pub spacing: f64,
    /// Per-mode standard deviation of the grid.
    pub sigma: f64,
    pub radii: Vec<f64>,
    /// Radial noise of the circles.
    pub sigma_c: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::GaussianGrid,
            count: 50_000,
            spacing: 2.0,
            sigma: 0.05,
            radii: vec![0.5, 1.0, 1.5],
            sigma_c: 0.02,
        }
    }
}

impl SyntheticSpec {
    pub fn of(kind: SyntheticKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// The nine grid centers, row-major from `(−s, −s)`.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let s = self.spacing;
        let mut out = Vec::with_capacity(9);
        for i in -1..=1 {
            for j in -1..=1 {
                out.push([i as f64 * s, j as f64 * s]);
            }
        }
        out
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.count == 0 {
            out.push(format!("{prefix}count: must be positive"));
        }
        match self.kind {
            SyntheticKind::GaussianGrid => {
                if !(self.spacing > 0.0) || !self.spacing.is_finite() {
                    out.push(format!("{prefix}spacing: must be positive, got {}", self.spacing));
                }
                if !(self.sigma > 0.0) || !self.sigma.is_finite() {
                    out.push(format!("{prefix}sigma: must be positive, got {}", self.sigma));
                }
            }
            SyntheticKind::Circles => {
                if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                    out.push(format!("{prefix}radii: need positive finite radii, got {:?}", self.radii));
                }
                let mut sorted = self.radii.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    out.push(format!("{prefix}radii: must be distinct, got {:?}", self.radii));
                }
                if !(self.sigma_c > 0.0) || !self.sigma_c.is_finite() {
                    out.push(format!("{prefix}sigma_c: must be positive, got {}", self.sigma_c));
                }
            }
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

/// `n` points drawn from the data substream of `seed`.
pub fn sample_synthetic(spec: &SyntheticSpec, seed: u64, n: usize) -> Result<Tensor> {
    sample_with(spec, &mut rng::stream(seed, Stream::Data), n)
}

pub fn sample_with(spec: &SyntheticSpec, rng: &mut impl Rng, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Contract("cannot sample zero points".into()));
    }
    let mut data = Vec::with_capacity(2 * n);
    match spec.kind {
        SyntheticKind::GaussianGrid => {
            let centers = spec.centers();
            for _ in 0..n {
                let c = centers[rng.random_range(0..centers.len())];
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                data.push(c[0] + spec.sigma * zx);
                data.push(c[1] + spec.sigma * zy);
            }
        }
        SyntheticKind::Circles => {
            if spec.radii.is_empty() {
                return Err(Error::Config("circles need at least one radius".into()));
            }
            for _ in 0..n {
                let r0 = spec.radii[rng.random_range(0..spec.radii.len())];
                let theta = rng.random::<f64>() * 2.0 * PI;
                let z: f64 = rng.sample(StandardNormal);
                let r = r0 + spec.sigma_c * z;
                data.push(r * theta.cos());
                data.push(r * theta.sin());
            }
        }
    }
    Tensor::matrix(n, 2, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grid_hits_centers_exactly() {
        let spec = SyntheticSpec { sigma: 0.0, ..SyntheticSpec::default() };
        let x = sample_synthetic(&spec, 3, 500).unwrap();
        let centers = spec.centers();
        for i in 0..x.rows() {
            let p = x.row(i);
            assert!(centers.iter().any(|c| c[0] == p[0] && c[1] == p[1]));
        }
    }

    #[test]
    fn noiseless_circles_sit_on_radii() {
        let spec = SyntheticSpec { sigma_c: 0.0, ..SyntheticSpec::of(SyntheticKind::Circles) };
        let x = sample_synthetic(&spec, 1, 1000).unwrap();
        for i in 0..x.rows() {
            let r = x.row(i)[0].hypot(x.row(i)[1]);
            assert!(spec.radii.iter().any(|&r0| (r - r0).abs() < 1e-12), "{r}");
        }
    }

    #[test]
    fn mode_proportions_are_balanced() {
        let spec = SyntheticSpec::default();
        let n = 20_000;
        let x = sample_synthetic(&spec, 42, n).unwrap();
        let centers = spec.centers();
        let mut counts = [0usize; 9];
        for i in 0..n {
            let p = x.row(i);
            let k = (0..9)
                .min_by(|&a, &b| {
                    let da = (p[0] - centers[a][0]).hypot(p[1] - centers[a][1]);
                    let db = (p[0] - centers[b][0]).hypot(p[1] - centers[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 1.0 / 9.0).abs() < 3.0 / (n as f64).sqrt(), "{frac}");
        }
    }

    #[test]
    fn component_moments_within_standard_error() {
        let spec = SyntheticSpec::default();
        let centers = spec.centers();
        let mut worst = 0.0f64;
        for seed in 0..50 {
            let x = sample_synthetic(&spec, seed, 2000).unwrap();
            let mut sums = [[0.0; 3]; 9];
            let mut counts = [0usize; 9];
            for i in 0..x.rows() {
                let p = x.row(i);
                let k = centers
                    .iter()
                    .position(|c| (p[0] - c[0]).abs() < 1.0 && (p[1] - c[1]).abs() < 1.0)
                    .unwrap();
                counts[k] += 1;
                sums[k][0] += p[0] - centers[k][0];
                sums[k][1] += p[1] - centers[k][1];
                sums[k][2] += (p[0] - centers[k][0]).powi(2);
            }
            for k in 0..9 {
                let n = counts[k] as f64;
                let se = spec.sigma / n.sqrt();
                worst = worst.max((sums[k][0] / n).abs() / se);
                worst = worst.max((sums[k][1] / n).abs() / se);
                // variance estimator: se ≈ σ²·√(2/n)
                let var = sums[k][2] / n;
                worst = worst.max((var - spec.sigma.powi(2)).abs() / (spec.sigma.powi(2) * (2.0 / n).sqrt()));
            }
        }
        assert!(worst < 5.0, "{worst}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = SyntheticSpec::of(SyntheticKind::Circles);
        assert_eq!(sample_synthetic(&spec, 9, 100).unwrap(), sample_synthetic(&spec, 9, 100).unwrap());
        assert_ne!(sample_synthetic(&spec, 9, 100).unwrap(), sample_synthetic(&spec, 10, 100).unwrap());
    }

    #[test]
    fn validation() {
        let bad = SyntheticSpec {
            kind: SyntheticKind::Circles,
            count: 0,
            radii: vec![1.0, 1.0],
            sigma_c: -1.0,
            ..SyntheticSpec::default()
        };
        match bad.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(SyntheticSpec::default().validate().is_ok());
    }
}
