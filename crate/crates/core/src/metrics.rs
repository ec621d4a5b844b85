//! Evaluation instruments: mode coverage, 2D Fréchet distance, confidence
//! maps and per-layer weight histograms, with CSV export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{layer_slices, flatten_params, Discriminator};
use crate::objectives::{realness_scalar, ObjectiveSpec};
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: usize,
    pub modes: usize,
    /// Points within the radius of each mode.
    pub counts: Vec<usize>,
    /// Points outside every radius.
    pub unassigned: usize,
}

/// A mode is covered when at least `min_frac` of all points fall within
/// `radius` of its center. Each point goes to its nearest center.
pub fn mode_coverage(points: &Tensor, centers: &[[f64; 2]], radius: f64, min_frac: f64) -> Coverage {
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0;
    let n = if points.is_empty() { 0 } else { points.rows() };
    for i in 0..n {
        let p = points.row(i);
        let nearest = centers
            .iter()
            .map(|c| (p[0] - c[0]).hypot(p[1] - c[1]))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((k, d)) if d <= radius => counts[k] += 1,
            _ => unassigned += 1,
        }
    }
    let covered = if n == 0 {
        0
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0 && c as f64 >= min_frac * n as f64)
            .count()
    };
    Coverage {
        covered,
        modes: centers.len(),
        counts,
        unassigned,
    }
}

/// Mean and unbiased covariance of a 2D cloud.
pub fn gaussian_fit(x: &Tensor) -> Result<([f64; 2], [[f64; 2]; 2])> {
    if x.cols() != 2 {
        return Err(Error::shape("gaussian_fit", x.shape(), &[0, 2]));
    }
    let n = x.rows();
    if n < 3 {
        return Err(Error::Contract(format!("need at least 3 points, got {n}")));
    }
    let mut mu = [0.0; 2];
    for i in 0..n {
        mu[0] += x.row(i)[0];
        mu[1] += x.row(i)[1];
    }
    mu[0] /= n as f64;
    mu[1] /= n as f64;
    let mut cov = [[0.0; 2]; 2];
    for i in 0..n {
        let d = [x.row(i)[0] - mu[0], x.row(i)[1] - mu[1]];
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += d[a] * d[b];
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    Ok((mu, cov))
}

/// `‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^{1/2})` for 2×2 covariances.
///
/// `ΣaΣb` is similar to a PSD matrix, so its eigenvalues are real and
/// non-negative and `tr √(ΣaΣb) = √(tr(ΣaΣb) + 2√det(ΣaΣb))`.
pub fn frechet_from_stats(mu_a: [f64; 2], cov_a: [[f64; 2]; 2], mu_b: [f64; 2], cov_b: [[f64; 2]; 2]) -> f64 {
    let dm = (mu_a[0] - mu_b[0]).powi(2) + (mu_a[1] - mu_b[1]).powi(2);
    let prod = mat_mul(cov_a, cov_b);
    let tr = (prod[0][0] + prod[1][1]).max(0.0);
    let det = (det2(cov_a).max(0.0) * det2(cov_b).max(0.0)).max(0.0);
    let tr_sqrt = (tr + 2.0 * det.sqrt()).max(0.0).sqrt();
    let value = dm + cov_a[0][0] + cov_a[1][1] + cov_b[0][0] + cov_b[1][1] - 2.0 * tr_sqrt;
    value.max(0.0)
}

pub fn frechet_distance_2d(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    Ok(frechet_from_stats(ma, ca, mb, cb))
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn det2(a: [[f64; 2]; 2]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Eigen-decomposition of a symmetric 2×2 matrix by one Jacobi rotation:
/// returns eigenvalues and the rotation `(cos, sin)` whose columns are the
/// eigenvectors.
pub fn symmetric_eigen(a: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let off = 0.5 * (a[0][1] + a[1][0]);
    let theta = 0.5 * (2.0 * off).atan2(a[0][0] - a[1][1]);
    let (s, c) = theta.sin_cos();
    let q = [[c, -s], [s, c]];
    let qt = [[c, s], [-s, c]];
    let sym = [[a[0][0], off], [off, a[1][1]]];
    let d = mat_mul(mat_mul(qt, sym), q);
    ([d[0][0], d[1][1]], q)
}

fn sqrt_psd(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (l, q) = symmetric_eigen(a);
    let r = [l[0].max(0.0).sqrt(), l[1].max(0.0).sqrt()];
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = q[i][0] * r[0] * q[j][0] + q[i][1] * r[1] * q[j][1];
        }
    }
    out
}

/// Reference Fréchet distance: `tr √(√Σa Σb √Σa)` via explicit
/// eigen-decompositions. Independent of [`frechet_from_stats`]'s closed form.
pub fn frechet_from_stats_eig(mu_a: [f64; 2], cov_a: [[f64; 2]; 2], mu_b: [f64; 2], cov_b: [[f64; 2]; 2]) -> f64 {
    let dm = (mu_a[0] - mu_b[0]).powi(2) + (mu_a[1] - mu_b[1]).powi(2);
    let ra = sqrt_psd(cov_a);
    let inner = mat_mul(mat_mul(ra, cov_b), ra);
    let (l, _) = symmetric_eigen(inner);
    let tr_sqrt = l[0].max(0.0).sqrt() + l[1].max(0.0).sqrt();
    (dm + cov_a[0][0] + cov_a[1][1] + cov_b[0][0] + cov_b[1][1] - 2.0 * tr_sqrt).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }
}

/// Realness field on an `r × r` grid, stored row-major with `y` outer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub bounds: Bounds,
    pub resolution: usize,
    pub values: Vec<f64>,
}

fn axis(lo: f64, hi: f64, r: usize, i: usize) -> f64 {
    if r == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (r - 1) as f64
    }
}

impl ConfidenceMap {
    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        let b = self.bounds;
        [
            axis(b.x_min, b.x_max, self.resolution, ix),
            axis(b.y_min, b.y_max, self.resolution, iy),
        ]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "value"])?;
        let r = self.resolution;
        for iy in 0..r {
            for ix in 0..r {
                let [x, y] = self.point(ix, iy);
                out.write_record(&[x.to_string(), y.to_string(), self.values[iy * r + ix].to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates the objective's realness over a grid; rows of the grid are
/// evaluated independently (in parallel when enabled).
pub fn confidence_map(
    net: &Discriminator,
    spec: &ObjectiveSpec,
    bounds: Bounds,
    resolution: usize,
    exec: Execution,
) -> Result<ConfidenceMap> {
    if resolution == 0 {
        return Err(Error::Config("confidence map resolution must be positive".into()));
    }
    let rows = par::map_range(exec, resolution, |iy| -> Result<Vec<f64>> {
        let y = axis(bounds.y_min, bounds.y_max, resolution, iy);
        let pts: Vec<[f64; 2]> = (0..resolution)
            .map(|ix| [axis(bounds.x_min, bounds.x_max, resolution, ix), y])
            .collect();
        let v = net.embed_points(&Tensor::from_rows(&pts))?;
        Ok(realness_scalar(&v, spec)?.into_data())
    });
    let mut values = Vec::with_capacity(resolution * resolution);
    for r in rows {
        values.extend(r?);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("confidence map contains non-finite values".into()));
    }
    Ok(ConfidenceMap {
        bounds,
        resolution,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub layer: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl LayerHistogram {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }
}

/// Per-layer histograms over uniform bins spanning each layer's observed
/// range. A layer with a single distinct value puts everything in bin 0.
pub fn weight_histogram(net: &Discriminator, bins: usize) -> Result<Vec<LayerHistogram>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let flat = flatten_params(net);
    Ok(layer_slices(net)
        .into_iter()
        .map(|(layer, range)| {
            let vals = &flat[range];
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut counts = vec![0usize; bins];
            let width = hi - lo;
            for &v in vals {
                let k = if width > 0.0 {
                    (((v - lo) / width * bins as f64) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[k] += 1;
            }
            LayerHistogram { layer, lo, hi, counts }
        })
        .collect())
}

pub fn write_histograms_csv(hists: &[LayerHistogram], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer", "bin_lo", "bin_hi", "count"])?;
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            let (lo, hi) = h.bin_edges(i);
            out.write_record(&[h.layer.clone(), lo.to_string(), hi.to_string(), c.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DiscriminatorConfig, InitScheme, Module};
    use crate::objectives::ObjectiveKind;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn grid_centers() -> Vec<[f64; 2]> {
        crate::data::SyntheticSpec::default().centers()
    }

    #[test]
    fn coverage_examples() {
        let c = grid_centers();
        let all: Vec<[f64; 2]> = c.iter().flat_map(|p| std::iter::repeat_n(*p, 5)).collect();
        assert_eq!(mode_coverage(&Tensor::from_rows(&all), &c, 0.15, 0.01).covered, 9);
        let one = vec![c[4]; 40];
        let cov = mode_coverage(&Tensor::from_rows(&one), &c, 0.15, 0.01);
        assert_eq!((cov.covered, cov.counts[4]), (1, 40));
        let empty = Tensor::from_rows::<[f64; 2]>(&[]);
        assert_eq!(mode_coverage(&empty, &c, 0.15, 0.01).covered, 0);
    }

    fn normal_cloud(seed: u64, n: usize, mean: [f64; 2], l: [[f64; 2]; 2]) -> Tensor {
        let mut rng = stream(seed, Stream::Eval);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [
                    mean[0] + l[0][0] * z[0] + l[0][1] * z[1],
                    mean[1] + l[1][0] * z[0] + l[1][1] * z[1],
                ]
            })
            .collect();
        Tensor::from_rows(&pts)
    }

    #[test]
    fn frechet_examples() {
        let a = normal_cloud(1, 500, [0.3, -1.0], [[1.0, 0.0], [0.4, 0.7]]);
        assert!(frechet_distance_2d(&a, &a).unwrap() < 1e-12);

        let id = [[1.0, 0.0], [0.0, 1.0]];
        let p = normal_cloud(2, 100_000, [0.0, 0.0], id);
        let q = normal_cloud(3, 100_000, [1.0, 0.0], id);
        let d = frechet_distance_2d(&p, &q).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        assert_eq!(d, frechet_distance_2d(&q, &p).unwrap());

        let two = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(frechet_distance_2d(&two, &a).is_err());

        // collinear cloud: singular covariance still yields a finite value
        let line = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert!(frechet_distance_2d(&line, &a).unwrap().is_finite());
    }

    #[test]
    fn eigen_oracle_reconstructs() {
        let a = [[2.0, 0.7], [0.7, 0.5]];
        let (l, q) = symmetric_eigen(a);
        for i in 0..2 {
            for j in 0..2 {
                let r = q[i][0] * l[0] * q[j][0] + q[i][1] * l[1] * q[j][1];
                assert!((r - a[i][j]).abs() < 1e-14);
            }
        }
    }

    fn random_cov(rng: &mut impl Rng) -> [[f64; 2]; 2] {
        let l: [f64; 3] = [rng.random_range(0.05..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.05..2.0)];
        [[l[0] * l[0], l[0] * l[1]], [l[0] * l[1], l[1] * l[1] + l[2] * l[2]]]
    }

    #[test]
    fn closed_form_matches_eigen_oracle() {
        let mut rng = stream(17, Stream::Eval);
        for _ in 0..100 {
            let mu_a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mu_b = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (ca, cb) = (random_cov(&mut rng), random_cov(&mut rng));
            let x = frechet_from_stats(mu_a, ca, mu_b, cb);
            let y = frechet_from_stats_eig(mu_a, ca, mu_b, cb);
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    fn small_d(seed: u64, m: usize) -> Discriminator {
        let cfg = DiscriminatorConfig { in_dim: 2, hidden: 6, pieces: 2, embed_dim: m };
        Discriminator::new(cfg, InitScheme::Uniform, &mut stream(seed, Stream::DiscriminatorInit)).unwrap()
    }

    #[test]
    fn confidence_map_shapes_and_csv() {
        let d = small_d(1, 1);
        let spec = ObjectiveSpec::new(ObjectiveKind::Wgan, 1).unwrap();
        let map = confidence_map(&d, &spec, Bounds::square(3.0), 200, Execution::default()).unwrap();
        assert_eq!(map.values.len(), 40_000);
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 40_001);
        assert!(text.starts_with("x,y,value\n-3,-3,"));

        let seq = confidence_map(&d, &spec, Bounds::square(3.0), 200, Execution::Sequential).unwrap();
        assert_eq!(seq, map);
    }

    #[test]
    fn constant_discriminator_gives_constant_field() {
        let mut d = small_d(2, 1);
        for w in d.head.weight.data_mut() {
            *w = 0.0;
        }
        let spec = ObjectiveSpec::new(ObjectiveKind::Wgan, 1).unwrap();
        let map = confidence_map(&d, &spec, Bounds::square(2.0), 9, Execution::Sequential).unwrap();
        assert!(map.values.iter().all(|&v| v == map.values[0]));
    }

    #[test]
    fn gaussian_field_decreases_with_radius() {
        // identity embedding: hidden maxouts pass x through, head is identity
        let mut d = small_d(3, 2);
        let cfg = d.config;
        let pass = |rows: usize, hidden: usize| {
            // pieces are column blocks; both pieces copy the input so max = x
            let mut w = vec![0.0; rows * hidden * 2];
            for p in 0..2 {
                for i in 0..rows.min(hidden) {
                    w[i * hidden * 2 + p * hidden + i] = 1.0;
                }
            }
            Tensor::matrix(rows, hidden * 2, w).unwrap()
        };
        d.hidden[0].linear.weight = pass(2, cfg.hidden);
        d.hidden[0].linear.bias = Tensor::zeros(1, cfg.hidden * 2);
        d.hidden[1].linear.weight = pass(cfg.hidden, cfg.hidden);
        d.hidden[1].linear.bias = Tensor::zeros(1, cfg.hidden * 2);
        let mut head = vec![0.0; cfg.hidden * 2];
        head[0] = 1.0;
        head[3] = 1.0;
        d.head.weight = Tensor::matrix(cfg.hidden, 2, head).unwrap();
        d.head.bias = Tensor::zeros(1, 2);

        let spec = ObjectiveSpec::new(ObjectiveKind::MafD, 2).unwrap();
        let pts: Vec<[f64; 2]> = (0..20).map(|i| [0.1 * i as f64 + 1e-3, 0.05 * i as f64]).collect();
        let v = d.embed_points(&Tensor::from_rows(&pts)).unwrap();
        assert_eq!(v.row(7), pts[7].as_slice());
        let r = realness_scalar(&v, &spec).unwrap();
        assert!(r.data().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn histogram_examples() {
        let mut d = small_d(4, 3);
        let h = weight_histogram(&d, 1).unwrap();
        assert_eq!(h.iter().map(|l| l.counts[0]).sum::<usize>(), d.param_count());
        assert_eq!(h.len(), 3);

        crate::constraints::weight_clip(&mut d, 0.01);
        for l in weight_histogram(&d, 20).unwrap() {
            assert!(l.lo >= -0.01 && l.hi <= 0.01);
        }

        let zero = Discriminator::new(d.config, InitScheme::Zeros, &mut stream(0, Stream::DiscriminatorInit)).unwrap();
        for l in weight_histogram(&zero, 10).unwrap() {
            assert_eq!(l.counts.iter().filter(|&&c| c > 0).count(), 1);
        }

        let mut buf = Vec::new();
        write_histograms_csv(&weight_histogram(&d, 4).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("layer,bin_lo,bin_hi,count\nmaxout0,"));
        assert_eq!(text.lines().count(), 1 + 3 * 4);
    }

    proptest! {
        #[test]
        fn frechet_symmetric_nonnegative(seed in 0u64..300) {
            let mut rng = stream(seed, Stream::Eval);
            let (ca, cb) = (random_cov(&mut rng), random_cov(&mut rng));
            let mu = [rng.random_range(-1.0..1.0), 0.0];
            let ab = frechet_from_stats(mu, ca, [0.0, 0.0], cb);
            let ba = frechet_from_stats([0.0, 0.0], cb, mu, ca);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(frechet_from_stats(mu, ca, mu, ca) < 1e-12);
        }

        #[test]
        fn coverage_permutation_invariant_and_monotone(seed in 0u64..200, r in 0.01f64..0.5) {
            let spec = crate::data::SyntheticSpec { sigma: 0.2, ..Default::default() };
            let x = crate::data::sample_synthetic(&spec, seed, 300).unwrap();
            let c = spec.centers();
            let base = mode_coverage(&x, &c, r, 0.01);
            let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
            rows.reverse();
            let perm = mode_coverage(&Tensor::from_rows(&rows), &c, r, 0.01);
            prop_assert_eq!(&base, &perm);
            prop_assert!(mode_coverage(&x, &c, r * 1.5, 0.01).covered >= base.covered);
        }
    }
}
