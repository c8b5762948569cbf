//! Lloyd's k-means with k-means++ seeding, scored in the same normalisation
//! as the VQ quantization loss so the two are directly comparable.

use crate::error::{Error, Result};
use crate::numkernel::Rng;
use crate::quantizer::{check_dim, nearest, TokenSequence};
use crate::tensor::{squared_distance_f64, Matrix, Real};

pub const DEFAULT_KMEANS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<F> {
    pub centers: Matrix<F>,
    /// Distortion of `centers` on the training data.
    pub distortion: f64,
    /// Distortion after seeding and after every Lloyd iteration.
    pub history: Vec<f64>,
    /// Points assigned to each center under `centers`.
    pub cluster_sizes: Vec<usize>,
}

/// `k` distinct row indices of `data`: the first uniform, the rest drawn with
/// probability proportional to squared distance from the nearest pick. When
/// every remaining row coincides with a pick, falls back to a uniform draw
/// among unpicked rows.
pub fn kmeans_plus_plus<F: Real>(data: &Matrix<F>, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = data.rows();
    if k == 0 {
        return Err(Error::Config("number of clusters must be positive".into()));
    }
    if n < k {
        return Err(Error::Config(format!(
            "{k} clusters need at least {k} points, got {n}"
        )));
    }
    let mut picked = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let mut d2 = vec![f64::INFINITY; n];

    let mut next = rng.below(n);
    loop {
        picked[next] = true;
        picks.push(next);
        if picks.len() == k {
            return Ok(picks);
        }
        let c = data.row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = if picked[i] {
                0.0
            } else {
                d.min(squared_distance_f64(data.row(i), c))
            };
        }
        next = match rng.weighted_index(&d2) {
            Some(i) => i,
            None => {
                let free: Vec<usize> = (0..n).filter(|&i| !picked[i]).collect();
                free[rng.below(free.len())]
            }
        };
    }
}

struct Assignments {
    labels: Vec<usize>,
    /// f64 squared distance of each point to its center.
    dist: Vec<f64>,
}

fn assign_all<F: Real>(data: &Matrix<F>, centers: &Matrix<F>) -> Assignments {
    let mut labels = Vec::with_capacity(data.rows());
    let mut dist = Vec::with_capacity(data.rows());
    for z in data.iter_rows() {
        let k = nearest(centers, z);
        labels.push(k);
        dist.push(squared_distance_f64(z, centers.row(k)));
    }
    Assignments { labels, dist }
}

fn mean_distortion(dist: &[f64], dim: usize) -> f64 {
    dist.iter().map(|d| d / dim as f64).sum::<f64>() / dist.len() as f64
}

/// Full-batch Lloyd's algorithm. Stops when the relative distortion
/// improvement drops below `tol`, the distortion reaches zero, or after
/// `max_iters` center updates. Empty clusters are re-seeded with the point
/// farthest from its current center.
pub fn kmeans_fit<F: Real>(
    data: &Matrix<F>,
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<KMeansFit<F>> {
    if max_iters == 0 {
        return Err(Error::Config("k-means needs at least one iteration".into()));
    }
    if !data.is_finite() {
        return Err(Error::Data("k-means input holds non-finite values".into()));
    }
    let (n, h) = data.shape();
    let seeds = kmeans_plus_plus(data, k, rng)?;
    let mut centers = Matrix::from_rows(&seeds.iter().map(|&i| data.row(i)).collect::<Vec<_>>())?;

    let mut current = assign_all(data, &centers);
    let mut distortion = mean_distortion(&current.dist, h);
    let mut history = vec![distortion];

    for _ in 0..max_iters {
        if distortion == 0.0 {
            break;
        }
        let mut sums = vec![0.0f64; k * h];
        let mut counts = vec![0usize; k];
        for (z, &c) in data.iter_rows().zip(&current.labels) {
            counts[c] += 1;
            for (s, &v) in sums[c * h..(c + 1) * h].iter_mut().zip(z) {
                *s += v.to_f64_lossy();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let row = centers.row_mut(c);
            for (dst, &s) in row.iter_mut().zip(&sums[c * h..(c + 1) * h]) {
                *dst = F::from_f64_lossy(s / counts[c] as f64);
            }
        }
        let mut far = current.dist.clone();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let (i, _) = far
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
            centers.row_mut(c).copy_from_slice(data.row(i));
            far[i] = 0.0;
        }

        current = assign_all(data, &centers);
        let next = mean_distortion(&current.dist, h);
        history.push(next);
        let improvement = distortion - next;
        let previous = distortion;
        distortion = next;
        if improvement <= tol * previous {
            break;
        }
    }

    let mut cluster_sizes = vec![0usize; k];
    for &c in &current.labels {
        cluster_sizes[c] += 1;
    }
    debug_assert_eq!(cluster_sizes.iter().sum::<usize>(), n);
    Ok(KMeansFit {
        centers,
        distortion,
        history,
        cluster_sizes,
    })
}

/// Nearest-center token per frame, as a single-layer token sequence.
pub fn kmeans_predict<F: Real>(centers: &Matrix<F>, data: &Matrix<F>) -> Result<TokenSequence> {
    check_dim(centers, data, "kmeans_predict")?;
    if centers.rows() == 0 {
        return Err(Error::Contract("no k-means centers".into()));
    }
    let tokens = data
        .iter_rows()
        .map(|z| nearest(centers, z) as u32)
        .collect();
    TokenSequence::new(centers.rows() as u32, 1, data.rows(), tokens)
}
