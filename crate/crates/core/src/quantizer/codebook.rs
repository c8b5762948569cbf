use crate::error::{Error, Result};
use crate::numkernel::Rng;
use crate::quantizer::{check_dim, kmeans_plus_plus, mean_normalized_sq_error, nearest};
use crate::tensor::{Matrix, Real};

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_COUNT_FLOOR: f64 = 1e-9;

/// Cluster index per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub indices: Vec<u32>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqOutput<F> {
    pub assignment: Assignment,
    pub quantized: Matrix<F>,
    /// `(1/T)·Σ_t (1/H)·‖z_t − e_{assign(t)}‖²`
    pub loss: f64,
}

/// K codewords with exponential-moving-average cluster statistics.
///
/// After every [`Codebook::ema_update`], `entries[k] = ema_sums[k] / max(ema_counts[k], ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F> {
    entries: Matrix<F>,
    ema_counts: Vec<F>,
    ema_sums: Matrix<F>,
    gamma: f64,
    epsilon: f64,
}

impl<F: Real> Codebook<F> {
    /// Codebook whose EMA statistics start as one observation of each entry.
    pub fn from_entries(entries: Matrix<F>, gamma: f64) -> Result<Self> {
        let counts = vec![F::one(); entries.rows()];
        let sums = entries.clone();
        Self::from_parts(entries, counts, sums, gamma, DEFAULT_COUNT_FLOOR)
    }

    pub fn from_parts(
        entries: Matrix<F>,
        ema_counts: Vec<F>,
        ema_sums: Matrix<F>,
        gamma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let (k, h) = entries.shape();
        if k == 0 || h == 0 {
            return Err(Error::Config(format!("codebook must be non-empty, got {k}x{h}")));
        }
        if ema_counts.len() != k {
            return Err(Error::Contract(format!(
                "codebook has {k} entries but {} counts",
                ema_counts.len()
            )));
        }
        ema_sums.ensure_shape(k, h, "codebook EMA sums")?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("EMA factor {gamma} outside [0, 1]")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config("count floor must be positive".into()));
        }
        if !entries.is_finite()
            || !ema_sums.is_finite()
            || ema_counts.iter().any(|c| !c.is_finite() || *c < F::zero())
        {
            return Err(Error::Data("codebook holds negative or non-finite values".into()));
        }
        Ok(Self {
            entries,
            ema_counts,
            ema_sums,
            gamma,
            epsilon,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Matrix<F> {
        &self.entries
    }

    pub fn ema_counts(&self) -> &[F] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &Matrix<F> {
        &self.ema_sums
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("EMA factor {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(())
    }

    /// `argmin_k ‖z − e_k‖²`, lowest index on ties.
    pub fn assign(&self, z: &[F]) -> Result<usize> {
        if z.len() != self.dim() {
            return Err(Error::Contract(format!(
                "vector of dimension {} against codebook of dimension {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(nearest(&self.entries, z))
    }

    pub fn quantize(&self, latents: &Matrix<F>) -> Result<VqOutput<F>> {
        check_dim(&self.entries, latents, "quantize")?;
        let mut indices = Vec::with_capacity(latents.rows());
        let mut quantized = Matrix::zeros(latents.rows(), latents.cols());
        for (t, z) in latents.iter_rows().enumerate() {
            let k = nearest(&self.entries, z);
            indices.push(k as u32);
            quantized.row_mut(t).copy_from_slice(self.entries.row(k));
        }
        let loss = mean_normalized_sq_error(latents, &quantized);
        Ok(VqOutput {
            assignment: Assignment { indices },
            quantized,
            loss,
        })
    }

    /// EMA step over a batch of latents and their assignments:
    /// `ñ_k ← γ·ñ_k + (1−γ)·n_k`, `ẽ_k ← γ·ẽ_k + (1−γ)·Σ_{j∈k} z_j`,
    /// then `e_k = ẽ_k / max(ñ_k, ε)` for every k.
    pub fn ema_update(&mut self, latents: &Matrix<F>, assignment: &Assignment) -> Result<()> {
        check_dim(&self.entries, latents, "ema_update")?;
        if assignment.len() != latents.rows() {
            return Err(Error::Contract(format!(
                "{} assignments for {} latents",
                assignment.len(),
                latents.rows()
            )));
        }
        let (k_size, h) = self.entries.shape();
        let mut counts = vec![0.0f64; k_size];
        let mut sums = vec![0.0f64; k_size * h];
        for (z, &k) in latents.iter_rows().zip(&assignment.indices) {
            let k = k as usize;
            if k >= k_size {
                return Err(Error::Contract(format!(
                    "assignment {k} outside codebook of size {k_size}"
                )));
            }
            counts[k] += 1.0;
            for (s, &v) in sums[k * h..(k + 1) * h].iter_mut().zip(z) {
                *s += v.to_f64_lossy();
            }
        }

        let g = self.gamma;
        for k in 0..k_size {
            let count = g * self.ema_counts[k].to_f64_lossy() + (1.0 - g) * counts[k];
            self.ema_counts[k] = F::from_f64_lossy(count);
            let denom = self.ema_counts[k].to_f64_lossy().max(self.epsilon);
            for c in 0..h {
                let sum =
                    g * self.ema_sums.get(k, c).to_f64_lossy() + (1.0 - g) * sums[k * h + c];
                let sum = F::from_f64_lossy(sum);
                self.ema_sums.set(k, c, sum);
                self.entries
                    .set(k, c, F::from_f64_lossy(sum.to_f64_lossy() / denom));
            }
        }
        Ok(())
    }

    /// Replaces every entry whose EMA count is below `threshold` with a
    /// uniformly drawn row of `latents` (count 1, sum = that row). Returns the
    /// replaced indices in ascending order.
    pub fn reset_dead_codes(
        &mut self,
        latents: &Matrix<F>,
        rng: &mut Rng,
        threshold: f64,
    ) -> Result<Vec<usize>> {
        if !(threshold > 0.0) {
            return Err(Error::Config("dead-code threshold must be positive".into()));
        }
        if latents.rows() == 0 {
            return Err(Error::Config("cannot reset dead codes from an empty batch".into()));
        }
        check_dim(&self.entries, latents, "reset_dead_codes")?;
        let mut replaced = Vec::new();
        for k in 0..self.size() {
            if self.ema_counts[k].to_f64_lossy() < threshold {
                let v = latents.row(rng.below(latents.rows()));
                self.entries.row_mut(k).copy_from_slice(v);
                self.ema_sums.row_mut(k).copy_from_slice(v);
                self.ema_counts[k] = F::one();
                replaced.push(k);
            }
        }
        Ok(replaced)
    }

    pub fn cast<G: Real>(&self) -> Codebook<G> {
        Codebook {
            entries: self.entries.cast(),
            ema_counts: self
                .ema_counts
                .iter()
                .map(|&c| G::from_f64_lossy(c.to_f64_lossy()))
                .collect(),
            ema_sums: self.ema_sums.cast(),
            gamma: self.gamma,
            epsilon: self.epsilon,
        }
    }
}

pub fn quantize_vq<F: Real>(codebook: &Codebook<F>, latents: &Matrix<F>) -> Result<VqOutput<F>> {
    codebook.quantize(latents)
}

/// Codebook seeded with `k` distinct rows of `latents`, chosen by
/// k-means++ (D²-weighted) sampling.
pub fn init_codebook_from_latents<F: Real>(
    latents: &Matrix<F>,
    k: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Result<Codebook<F>> {
    if latents.rows() < k {
        return Err(Error::Config(format!(
            "codebook of {k} entries needs at least {k} frames, batch has {}",
            latents.rows()
        )));
    }
    let picks = kmeans_plus_plus(latents, k, rng)?;
    let rows: Vec<&[F]> = picks.iter().map(|&i| latents.row(i)).collect();
    Codebook::from_entries(Matrix::from_rows(&rows)?, gamma)
}
