use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GMM_FORMAT: &str = "contactcap-gmm-prior";
pub const GMM_VERSION: u32 = 1;

/// One Gaussian of the mixture, stored with its precision and normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the covariance.
    pub cov_factor: DMatrix<f64>,
    precision: DMatrix<f64>,
    /// `ln w - ½(d ln 2π + ln det Σ)`.
    log_scale: f64,
}

impl GmmComponent {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .cov_factor
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }
}

/// Gaussian mixture over pose vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPosePrior {
    pub dim: usize,
    pub components: Vec<GmmComponent>,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    format: String,
    version: u32,
    dim: usize,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major lower triangle of the Cholesky factor.
    cov_factor: Vec<f64>,
}

const BUILTIN_PRIOR: &str = include_str!("../../assets/pose_prior.json");

/// Settings used to fit the built-in prior.
pub const BUILTIN_COMPONENTS: usize = 8;
pub const BUILTIN_EM_ITERATIONS: usize = 60;
pub const BUILTIN_REGULARIZATION: f64 = 0.05;
pub const BUILTIN_SEED: u64 = 2024;

impl GmmPosePrior {
    /// Builds a prior from weights, means and covariances. Covariances must
    /// be symmetric positive definite and weights must sum to one.
    pub fn new(
        weights: &[f64],
        means: &[DVector<f64>],
        covariances: &[DMatrix<f64>],
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len()
        {
            return Err(Error::InvalidPrior(
                "component lists must be non-empty and aligned".into(),
            ));
        }
        let mut factors = Vec::with_capacity(covariances.len());
        for (k, c) in covariances.iter().enumerate() {
            let asym = (c - c.transpose()).abs().max();
            if asym > 1e-9 * c.abs().max().max(1.0) {
                return Err(Error::InvalidPrior(format!(
                    "covariance {k} is not symmetric"
                )));
            }
            let chol = c.clone().cholesky().ok_or_else(|| {
                Error::InvalidPrior(format!("covariance {k} is not positive definite"))
            })?;
            factors.push(chol.l());
        }
        Self::from_factors(weights, means, factors)
    }

    fn from_factors(
        weights: &[f64],
        means: &[DVector<f64>],
        factors: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(
                "weights must be positive and sum to 1".into(),
            ));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((&weight, mean), l) in weights.iter().zip(means).zip(factors) {
            if mean.len() != dim || l.nrows() != dim || l.ncols() != dim {
                return Err(Error::InvalidPrior(
                    "inconsistent component dimensions".into(),
                ));
            }
            if mean.iter().chain(l.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidPrior(
                    "non-finite component parameters".into(),
                ));
            }
            if l.diagonal().iter().any(|d| *d <= 0.0)
                || (0..dim).any(|i| (i + 1..dim).any(|j| l[(i, j)] != 0.0))
            {
                return Err(Error::InvalidPrior(
                    "covariance factor must be lower triangular with positive diagonal".into(),
                ));
            }
            let identity = DMatrix::<f64>::identity(dim, dim);
            let l_inv = l
                .solve_lower_triangular(&identity)
                .ok_or_else(|| Error::InvalidPrior("singular covariance factor".into()))?;
            let precision = l_inv.transpose() * &l_inv;
            let mut c = GmmComponent {
                weight,
                mean: mean.clone(),
                cov_factor: l,
                precision,
                log_scale: 0.0,
            };
            c.log_scale = weight.ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + c.log_det());
            components.push(c);
        }
        Ok(Self { dim, components })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Negative log density and its gradient.
    pub fn neg_log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                what: "pose prior input",
                expected: self.dim,
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let mut logs = Vec::with_capacity(self.components.len());
        let mut pulls = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let d = &x - &c.mean;
            let pd = &c.precision * &d;
            logs.push(c.log_scale - 0.5 * d.dot(&pd));
            pulls.push(pd);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let lse = top + sum.ln();
        let mut grad = DVector::zeros(self.dim);
        for (l, pd) in logs.iter().zip(&pulls) {
            grad += (l - lse).exp() * pd;
        }
        Ok((-lse, grad.as_slice().to_vec()))
    }

    /// Expectation-maximization fit with `reg` added to every covariance
    /// diagonal. Initial means are seeded picks from the samples.
    pub fn fit_em(
        samples: &[Vec<f64>],
        n_components: usize,
        iterations: usize,
        reg: f64,
        seed: u64,
    ) -> Result<Self> {
        if samples.len() < n_components || n_components == 0 {
            return Err(Error::InvalidInput(
                "need at least one sample per component".into(),
            ));
        }
        if !(reg > 0.0) {
            return Err(Error::InvalidInput(
                "covariance regularization must be positive".into(),
            ));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidInput(
                "samples have inconsistent dimension".into(),
            ));
        }
        let data: Vec<DVector<f64>> = samples
            .iter()
            .map(|s| DVector::from_column_slice(s))
            .collect();
        let n = data.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // k-means++ style seeding.
        let mut means = vec![data[rng.random_range(0..n)].clone()];
        while means.len() < n_components {
            let d2: Vec<f64> = data
                .iter()
                .map(|x| {
                    means
                        .iter()
                        .map(|m| (x - m).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.random_range(0.0..total);
                d2.iter()
                    .position(|&d| {
                        r -= d;
                        r <= 0.0
                    })
                    .unwrap_or(n - 1)
            } else {
                rng.random_range(0..n)
            };
            means.push(data[pick].clone());
        }
        let global_var = {
            let mean = data.iter().fold(DVector::zeros(dim), |a, x| a + x) / n as f64;
            data.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / (n * dim) as f64
        };
        let init_cov = DMatrix::identity(dim, dim) * (global_var + reg);
        let mut prior = Self::new(
            &vec![1.0 / n_components as f64; n_components],
            &means,
            &vec![init_cov; n_components],
        )?;

        for _ in 0..iterations {
            let mut resp = vec![vec![0.0; n_components]; n];
            for (i, x) in data.iter().enumerate() {
                let logs: Vec<f64> = prior
                    .components
                    .iter()
                    .map(|c| {
                        let d = x - &c.mean;
                        c.log_scale - 0.5 * d.dot(&(&c.precision * &d))
                    })
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logs.iter().map(|l| (l - top).exp()).sum();
                for k in 0..n_components {
                    resp[i][k] = (logs[k] - top).exp() / z;
                }
            }
            let mut weights = Vec::with_capacity(n_components);
            let mut means = Vec::with_capacity(n_components);
            let mut covs = Vec::with_capacity(n_components);
            for k in 0..n_components {
                // Floor keeps an emptied component alive with a tiny weight.
                let nk: f64 = resp.iter().map(|r| r[k]).sum::<f64>().max(1e-6);
                let mean = data
                    .iter()
                    .zip(&resp)
                    .fold(DVector::zeros(dim), |a, (x, r)| a + r[k] * x)
                    / nk;
                let mut cov = DMatrix::identity(dim, dim) * reg;
                for (x, r) in data.iter().zip(&resp) {
                    let d = x - &mean;
                    cov += (r[k] / nk) * &d * d.transpose();
                }
                cov = (&cov + cov.transpose()) * 0.5;
                weights.push(nk);
                means.push(mean);
                covs.push(cov);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            prior = Self::new(&weights, &means, &covs)?;
        }
        Ok(prior)
    }

    /// The shipped 8-component prior fitted to the synthetic pose library.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PRIOR).expect("built-in pose prior asset is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PriorFile {
            format: GMM_FORMAT.into(),
            version: GMM_VERSION,
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight,
                    mean: c.mean.as_slice().to_vec(),
                    cov_factor: (0..self.dim)
                        .flat_map(|i| (0..=i).map(move |j| (i, j)))
                        .map(|(i, j)| c.cov_factor[(i, j)])
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PriorFile = serde_json::from_str(text)?;
        if file.format != GMM_FORMAT || file.version != GMM_VERSION {
            return Err(Error::format(
                "pose prior",
                format!(
                    "expected {GMM_FORMAT} v{GMM_VERSION}, found {} v{}",
                    file.format, file.version
                ),
            ));
        }
        if file.components.is_empty() {
            return Err(Error::InvalidPrior("no components".into()));
        }
        let dim = file.dim;
        let tri = dim * (dim + 1) / 2;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut factors = Vec::new();
        for c in file.components {
            if c.mean.len() != dim || c.cov_factor.len() != tri {
                return Err(Error::format(
                    "pose prior",
                    "component size does not match dim",
                ));
            }
            let mut l = DMatrix::zeros(dim, dim);
            let mut it = c.cov_factor.into_iter();
            for i in 0..dim {
                for j in 0..=i {
                    l[(i, j)] = it.next().unwrap_or(0.0);
                }
            }
            weights.push(c.weight);
            means.push(DVector::from_vec(c.mean));
            factors.push(l);
        }
        Self::from_factors(&weights, &means, factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.3..0.3));
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.05
    }

    #[test]
    fn single_component_at_mean_is_half_log_normalizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = spd(72, &mut rng);
        let mean = DVector::from_fn(72, |_, _| rng.random_range(-0.5..0.5));
        let prior = GmmPosePrior::new(&[1.0], &[mean.clone()], &[cov.clone()]).unwrap();
        let (v, g) = prior.neg_log_density(mean.as_slice()).unwrap();
        // Independent determinant via LU.
        let expected = 0.5 * (72.0 * (2.0 * PI).ln() + cov.determinant().ln());
        assert!(
            (v - expected).abs() < 1e-8 * expected.abs().max(1.0),
            "{v} vs {expected}"
        );
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn reordering_components_keeps_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let means: Vec<_> = (0..3)
            .map(|_| DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let covs: Vec<_> = (0..3).map(|_| spd(6, &mut rng)).collect();
        let w = [0.2, 0.5, 0.3];
        let a = GmmPosePrior::new(&w, &means, &covs).unwrap();
        let b = GmmPosePrior::new(
            &[w[2], w[0], w[1]],
            &[means[2].clone(), means[0].clone(), means[1].clone()],
            &[covs[2].clone(), covs[0].clone(), covs[1].clone()],
        )
        .unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (va, _) = a.neg_log_density(&x).unwrap();
        let (vb, _) = b.neg_log_density(&x).unwrap();
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_covariances_and_weights() {
        let m = DVector::zeros(2);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GmmPosePrior::new(&[1.0], &[m.clone()], &[not_pd]),
            Err(Error::InvalidPrior(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GmmPosePrior::new(&[1.0], &[m.clone()], &[asym]).is_err());
        let id = DMatrix::identity(2, 2);
        assert!(GmmPosePrior::new(&[0.7], &[m.clone()], &[id.clone()]).is_err());
        assert!(GmmPosePrior::new(&[], &[], &[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means: Vec<_> = (0..2)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let covs: Vec<_> = (0..2).map(|_| spd(4, &mut rng)).collect();
        let a = GmmPosePrior::new(&[0.4, 0.6], &means, &covs).unwrap();
        let b = GmmPosePrior::from_json(&a.to_json().unwrap()).unwrap();
        let x = [0.1, -0.2, 0.3, 0.0];
        assert_eq!(
            a.neg_log_density(&x).unwrap(),
            b.neg_log_density(&x).unwrap()
        );
        assert!(
            GmmPosePrior::from_json(&a.to_json().unwrap().replace(GMM_FORMAT, "other")).is_err()
        );
    }

    #[test]
    fn em_recovers_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[-2.0, 0.0], [2.0, 1.0]];
        let samples: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let c = centers[i % 2];
                vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
            })
            .collect();
        let prior = GmmPosePrior::fit_em(&samples, 2, 30, 1e-4, 1).unwrap();
        for c in centers {
            let hit = prior
                .components
                .iter()
                .any(|k| (k.mean[0] - c[0]).abs() < 0.05 && (k.mean[1] - c[1]).abs() < 0.05);
            assert!(hit, "cluster {c:?} not recovered");
        }
        for k in &prior.components {
            assert!((k.weight - 0.5).abs() < 0.05);
            assert!((k.covariance()[(0, 0)] - 0.01).abs() < 0.005);
        }
    }
}
