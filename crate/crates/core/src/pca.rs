//! Linear baseline: PCA over character-frequency features, reconstruction
//! scoring, and a single-layer linear autoencoder for comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{CanonicalRequest, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{adam_step, mix_seed, uniform_init, AdamState, Matrix, ParamId, ParamStore};

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Relative character frequencies indexed by vocabulary id (unknown
/// characters count towards UNK). Zero vector for empty text.
pub fn feature_vector(v: &Vocabulary, c: &CanonicalRequest) -> Vec<f64> {
    let mut out = vec![0.0; v.size()];
    let mut n = 0usize;
    for ch in c.text().chars() {
        out[v.id_of(ch) as usize] += 1.0;
        n += 1;
    }
    if n > 0 {
        out.iter_mut().for_each(|x| *x /= n as f64);
    }
    out
}

pub fn feature_matrix(v: &Vocabulary, corpus: &[CanonicalRequest]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = corpus.iter().map(|c| feature_vector(v, c)).collect();
    Matrix::from_rows(&rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d x k`, orthonormal columns.
    pub components: Matrix,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and the `1/(n-1)` sample covariance.
pub fn covariance(x: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let centered: Vec<f64> = x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                let v = cov.get(i, j) + centered[i] * centered[j];
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    (mean, cov)
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let d = a.rows();
    let mut m: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                m = m.max(a.get(i, j).abs());
            }
        }
    }
    m
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues (unsorted) and the eigenvectors as columns.
pub fn jacobi_eigen(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let d = sym.rows();
    if sym.cols() != d {
        return Err(Error::Dimension {
            op: "jacobi_eigen",
            left: sym.shape(),
            right: (d, d),
        });
    }
    let mut a = sym.clone();
    let mut v = Matrix::identity(d);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if max_off_diagonal(&a) < JACOBI_TOLERANCE {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..d).map(|i| a.get(i, i)).collect(), v))
}

/// Top-`k` principal axes of the rows of `x` (`n x d`).
pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if k == 0 || k > d {
        return Err(Error::invalid(format!("k must be in 1..={d}, got {k}")));
    }
    let (mean, cov) = covariance(x);
    let (values, vectors) = jacobi_eigen(&cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut components = Matrix::zeros(d, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (j, &src) in order.iter().take(k).enumerate() {
        let mut col = vectors.col(src);
        // sign convention: largest-magnitude entry positive
        let mut big = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[big].abs() {
                big = i;
            }
        }
        if col[big] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in col.into_iter().enumerate() {
            components.set(i, j, x);
        }
        // tiny negative round-off on rank-deficient data
        eigenvalues.push(values[src].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

fn check_dim(m: &PcaModel, len: usize) -> Result<()> {
    if len != m.dim() {
        return Err(Error::Dimension {
            op: "pca input",
            left: (len, 1),
            right: (m.dim(), 1),
        });
    }
    Ok(())
}

/// `Vᵀ (x − μ)`
pub fn pc_scores(m: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(m, x.len())?;
    let centered: Vec<f64> = x.iter().zip(&m.mean).map(|(a, b)| a - b).collect();
    Ok((0..m.k())
        .map(|j| (0..m.dim()).map(|i| m.components.get(i, j) * centered[i]).sum())
        .collect())
}

/// `V · scores + μ`
pub fn reconstruct(m: &PcaModel, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != m.k() {
        return Err(Error::Dimension {
            op: "pca scores",
            left: (scores.len(), 1),
            right: (m.k(), 1),
        });
    }
    Ok((0..m.dim())
        .map(|i| {
            m.mean[i]
                + (0..m.k())
                    .map(|j| m.components.get(i, j) * scores[j])
                    .sum::<f64>()
        })
        .collect())
}

/// Squared reconstruction error `‖x − x̂‖²`.
pub fn pca_anomaly_score(m: &PcaModel, x: &[f64]) -> Result<f64> {
    let xr = reconstruct(m, &pc_scores(m, x)?)?;
    Ok(x.iter().zip(&xr).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean squared reconstruction error over the rows of `x`.
pub fn pca_mse(m: &PcaModel, x: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..x.rows() {
        total += pca_anomaly_score(m, x.row(r))?;
    }
    Ok(total / x.rows() as f64)
}

/// `x̂ = W_dec (W_enc x + b_enc) + b_dec` with identity activations.
#[derive(Clone, Debug)]
pub struct LinearAutoencoder {
    store: ParamStore,
    enc_w: ParamId,
    enc_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct LinearAeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LinearAeConfig {
    fn default() -> Self {
        LinearAeConfig {
            iterations: 4000,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

impl LinearAutoencoder {
    pub fn new(dim: usize, width: usize, seed: u64) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::invalid("linear autoencoder sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x11e]));
        let mut store = ParamStore::new();
        let enc_w = store.add("encoder.w", uniform_init(width, dim, dim, &mut rng))?;
        let enc_b = store.add("encoder.b", Matrix::zeros(width, 1))?;
        let dec_w = store.add("decoder.w", uniform_init(dim, width, width, &mut rng))?;
        let dec_b = store.add("decoder.b", Matrix::zeros(dim, 1))?;
        Ok(LinearAutoencoder {
            store,
            enc_w,
            enc_b,
            dec_w,
            dec_b,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let z = affine(self.store.value(self.enc_w), self.store.value(self.enc_b), x);
        affine(self.store.value(self.dec_w), self.store.value(self.dec_b), &z)
    }

    /// Mean over rows of `‖x − x̂‖²`.
    pub fn mse(&self, x: &Matrix) -> f64 {
        (0..x.rows())
            .map(|r| {
                let xr = self.reconstruct(x.row(r));
                x.row(r).iter().zip(&xr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / x.rows() as f64
    }

    /// Full-batch Adam on the mean squared error. Returns the final MSE.
    pub fn fit(&mut self, x: &Matrix, cfg: &LinearAeConfig) -> Result<f64> {
        let (n, d) = x.shape();
        if n == 0 || d != self.store.value(self.dec_b).rows() {
            return Err(Error::invalid("data does not match autoencoder input size"));
        }
        let mut adam = AdamState::new(&self.store, cfg.learning_rate);
        for _ in 0..cfg.iterations {
            let mut g = self.store.zero_gradients();
            let we = self.store.value(self.enc_w);
            let wd = self.store.value(self.dec_w);
            for r in 0..n {
                let xr = x.row(r);
                let z = affine(we, self.store.value(self.enc_b), xr);
                let y = affine(wd, self.store.value(self.dec_b), &z);
                let dy: Vec<f64> = y.iter().zip(xr).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
                crate::neural::matrix::outer_acc(g.get_mut(self.dec_w), &dy, &z);
                crate::neural::matrix::axpy(1.0, &dy, g.get_mut(self.dec_b).as_mut_slice());
                let mut dz = vec![0.0; z.len()];
                crate::neural::matrix::gemv_t_acc(wd, &dy, &mut dz);
                crate::neural::matrix::outer_acc(g.get_mut(self.enc_w), &dz, xr);
                crate::neural::matrix::axpy(1.0, &dz, g.get_mut(self.enc_b).as_mut_slice());
            }
            self.store.set_grads(g)?;
            adam_step(&mut self.store, &mut adam);
        }
        Ok(self.mse(x))
    }
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = b.as_slice().to_vec();
    crate::neural::matrix::gemv_acc(w, x, &mut out);
    out
}
