use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sq_dist, EmbeddingSequence};
use crate::error::{Error, Result};

/// `K x D` centroid table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    centroids: Array2<f64>,
}

impl Codebook {
    pub fn new(centroids: Array2<f64>) -> Result<Self> {
        if centroids.nrows() == 0 || centroids.ncols() == 0 {
            return Err(Error::shape("codebook needs at least one centroid of positive dim"));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("codebook has non-finite centroids"));
        }
        for i in 0..centroids.nrows() {
            for j in 0..i {
                if centroids.row(i) == centroids.row(j) {
                    return Err(Error::validation(format!("centroids {j} and {i} are identical")));
                }
            }
        }
        Ok(Codebook { centroids })
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn nearest(&self, x: ArrayView1<'_, f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in self.centroids.rows().into_iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    /// Total within-cluster squared distance of `points` under nearest assignment.
    pub fn distortion(&self, points: ArrayView2<'_, f64>) -> f64 {
        points.rows().into_iter().map(|p| sq_dist(p, self.centroids.row(self.nearest(p)))).sum()
    }
}

/// k-means++ seeding: first centroid uniform, the rest drawn proportional to
/// squared distance from the nearest chosen centroid.
pub fn kmeans_plus_plus_init(points: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::validation(format!("need at least {k} frames, have {n}")));
    }
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation(format!("only {} distinct frames available for {k} clusters", chosen.len())));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // floating-point fallthrough: take the last point with positive weight
        if d2[pick] <= 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        chosen.push(pick);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    let mut out = Array2::zeros((k, points.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        out.row_mut(r).assign(&points.row(i));
    }
    Ok(out)
}

fn assign(points: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    points
        .rows()
        .into_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd iterations from `init`. Returns the centroids and the distortion after
/// every iteration (non-increasing).
///
/// An emptied cluster is moved onto the point currently farthest from its centroid.
pub fn lloyd(points: ArrayView2<'_, f64>, init: Array2<f64>, max_iters: usize) -> (Array2<f64>, Vec<f64>) {
    let mut centroids = init;
    let k = centroids.nrows();
    let mut history = Vec::new();
    let mut labels = assign(points, &centroids);
    for _ in 0..max_iters {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.rows().into_iter().zip(&labels) {
            sums.row_mut(c).scaled_add(1.0, &p);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = labels
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .expect("non-empty");
                centroids.row_mut(c).assign(&points.row(far));
                labels[far] = (c, 0.0);
            }
        }
        let next = assign(points, &centroids);
        let changed = next.iter().zip(&labels).any(|(a, b)| a.0 != b.0);
        history.push(next.iter().map(|l| l.1).sum());
        labels = next;
        if !changed {
            break;
        }
    }
    (centroids, history)
}

/// Stacks all frames and runs k-means++ seeded Lloyd.
pub fn fit_codebook(embeddings: &[EmbeddingSequence], k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    let dim =
        embeddings.first().map(|e| e.dim()).ok_or_else(|| Error::validation("no embeddings to fit a codebook on"))?;
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::shape("embeddings disagree on dimension"));
    }
    let views: Vec<ArrayView2<'_, f64>> = embeddings.iter().map(|e| e.frames().view()).collect();
    let points = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
    if points.nrows() < k {
        return Err(Error::validation(format!("{} frames are fewer than the {k} requested clusters", points.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus_init(points.view(), k, &mut rng)?;
    let (centroids, _) = lloyd(points.view(), init, max_iters);
    Codebook::new(centroids)
}
