//! Dynamic time warping: an exact full-table DP, the multilevel FastDTW
//! approximation, and warping of one sequence onto another's timeline.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encode::EmbeddingSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                match (na > 0.0, nb > 0.0) {
                    (true, true) => (1.0 - dot / (na * nb)).max(0.0),
                    (false, false) => 0.0,
                    _ => 1.0,
                }
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::validation(format!("unknown metric {other:?}"))),
        }
    }
}

/// Monotone warping path from `(0, 0)` to `(n - 1, m - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
    /// Frame distance of each pair, parallel to `pairs`.
    pub pair_costs: Vec<f64>,
    /// Sum of `pair_costs`.
    pub cost: f64,
}

impl AlignmentPath {
    /// Checks boundary, step-set and monotonicity constraints for an `n x m` problem.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::validation(format!("invalid alignment path: {msg}")));
        if self.pairs.len() != self.pair_costs.len() {
            return bad("pair/cost length mismatch".into());
        }
        match (self.pairs.first(), self.pairs.last()) {
            (Some(&(0, 0)), Some(&last)) if last == (n.wrapping_sub(1), m.wrapping_sub(1)) => {}
            (first, last) => return bad(format!("endpoints {first:?}..{last:?} do not span {n}x{m}")),
        }
        for w in self.pairs.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return bad(format!("illegal step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }

    /// Debug dump: one `i j pairwise_cost` line per pair.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (&(i, j), c) in self.pairs.iter().zip(&self.pair_costs) {
            let _ = writeln!(s, "{i} {j} {c}");
        }
        s
    }
}

/// Per-row inclusive column ranges of the cells the DP may visit.
#[derive(Debug, Clone)]
struct Window {
    rows: Vec<(usize, usize)>,
}

impl Window {
    fn full(n: usize, m: usize) -> Self {
        Window { rows: vec![(0, m - 1); n] }
    }
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::validation("cannot align an empty sequence"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!("cannot align dims {} and {}", a.ncols(), b.ncols())));
    }
    Ok(())
}

fn dtw_windowed(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, window: &Window, metric: Metric) -> AlignmentPath {
    let (n, m) = (a.nrows(), b.nrows());
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    let mut local = Array2::from_elem((n, m), f64::NAN);
    for i in 0..n {
        let (lo, hi) = window.rows[i];
        for j in lo..=hi {
            let d = metric.distance(a.row(i), b.row(j));
            local[[i, j]] = d;
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = prev + d;
        }
    }

    let (mut i, mut j) = (n - 1, m - 1);
    let mut pairs = vec![(i, j)];
    while (i, j) != (0, 0) {
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            // preference on ties: diagonal, then advance in a, then in b
            let cands = [(i - 1, j - 1), (i - 1, j), (i, j - 1)];
            *cands.iter().min_by(|x, y| acc[**x].total_cmp(&acc[**y])).expect("three candidates")
        };
        (i, j) = step;
        pairs.push(step);
    }
    pairs.reverse();
    let pair_costs: Vec<f64> = pairs.iter().map(|&p| local[p]).collect();
    let cost = pair_costs.iter().sum();
    AlignmentPath { pairs, pair_costs, cost }
}

/// Exact DTW over raw frame matrices.
pub fn dtw_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, metric: Metric) -> Result<AlignmentPath> {
    check_pair(a, b)?;
    Ok(dtw_windowed(a, b, &Window::full(a.nrows(), b.nrows()), metric))
}

/// Exact DTW with steps `(1,0)`, `(0,1)`, `(1,1)`.
pub fn dtw_full(a: &EmbeddingSequence, b: &EmbeddingSequence, metric: Metric) -> Result<AlignmentPath> {
    dtw_matrix(a.frames().view(), b.frames().view(), metric)
}

/// Halves the length by averaging adjacent frames; an odd last frame is kept as is.
fn coarsen(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows().div_ceil(2);
    let mut out = Array2::zeros((n, x.ncols()));
    for r in 0..n {
        let i = 2 * r;
        if i + 1 < x.nrows() {
            let avg = (&x.row(i) + &x.row(i + 1)) * 0.5;
            out.row_mut(r).assign(&avg);
        } else {
            out.row_mut(r).assign(&x.row(i));
        }
    }
    out
}

/// Projects a coarse path to the finer grid, widening it by `radius` coarse cells.
fn expand_window(path: &AlignmentPath, n: usize, m: usize, radius: usize) -> Window {
    let mut rows = vec![(usize::MAX, 0usize); n];
    let r = radius as isize;
    for &(ci, cj) in &path.pairs {
        for di in -r..=r {
            let i = ci as isize + di;
            if i < 0 {
                continue;
            }
            let jlo = (cj as isize - r).max(0) as usize;
            let jhi = cj + radius;
            for fi in [2 * i as usize, 2 * i as usize + 1] {
                if fi >= n {
                    continue;
                }
                let lo = 2 * jlo;
                let hi = (2 * jhi + 1).min(m - 1);
                if lo > hi {
                    continue;
                }
                let row = &mut rows[fi];
                row.0 = row.0.min(lo);
                row.1 = row.1.max(hi);
            }
        }
    }
    // keep the band contiguous and monotone so every row is reachable
    let mut prev_lo = 0;
    for i in 0..n {
        if rows[i].0 == usize::MAX {
            rows[i] = (prev_lo, prev_lo);
        }
        rows[i].0 = rows[i].0.max(prev_lo).min(rows[i].1);
        prev_lo = rows[i].0;
    }
    let mut next_hi = m - 1;
    for i in (0..n).rev() {
        rows[i].1 = rows[i].1.min(next_hi).max(rows[i].0);
        next_hi = rows[i].1;
    }
    for i in 1..n {
        if rows[i].0 > rows[i - 1].1 {
            rows[i - 1].1 = rows[i].0;
        }
    }
    rows[0].0 = 0;
    rows[n - 1].1 = m - 1;
    Window { rows }
}

fn fastdtw_rec(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, radius: usize, metric: Metric) -> AlignmentPath {
    let (n, m) = (a.nrows(), b.nrows());
    let min_size = radius + 2;
    if n <= min_size || m <= min_size {
        return dtw_windowed(a, b, &Window::full(n, m), metric);
    }
    let ca = coarsen(a);
    let cb = coarsen(b);
    let coarse = fastdtw_rec(ca.view(), cb.view(), radius, metric);
    let window = expand_window(&coarse, n, m, radius);
    dtw_windowed(a, b, &window, metric)
}

/// Raw-matrix FastDTW.
pub fn fastdtw_matrix(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    radius: usize,
    metric: Metric,
) -> Result<AlignmentPath> {
    check_pair(a, b)?;
    Ok(fastdtw_rec(a, b, radius, metric))
}

/// Multilevel coarsen / project / refine approximation of [`dtw_full`].
///
/// Falls back to the exact DP once either sequence is no longer than `radius + 2`.
pub fn fastdtw(a: &EmbeddingSequence, b: &EmbeddingSequence, radius: usize, metric: Metric) -> Result<AlignmentPath> {
    fastdtw_matrix(a.frames().view(), b.frames().view(), radius, metric)
}

/// Re-times `source` onto a `target_len` timeline using `path` (source index `i`,
/// target index `j`). Where several source frames share a target frame the
/// cheapest pair wins, ties going to the lowest source index.
pub fn warp_to_target(
    source: &EmbeddingSequence,
    path: &AlignmentPath,
    target_len: usize,
) -> Result<EmbeddingSequence> {
    if target_len == 0 {
        return Err(Error::validation("target length must be positive"));
    }
    path.validate(source.len(), target_len)?;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; target_len];
    for (&(i, j), &c) in path.pairs.iter().zip(&path.pair_costs) {
        match best[j] {
            Some((bc, bi)) if bc < c || (bc == c && bi <= i) => {}
            _ => best[j] = Some((c, i)),
        }
    }
    let mut out = Array2::zeros((target_len, source.dim()));
    for (j, b) in best.iter().enumerate() {
        let (_, i) = b.expect("valid path covers every target index");
        out.row_mut(j).assign(&source.frame(i));
    }
    EmbeddingSequence::new(out, source.frame_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: &[f64]) -> EmbeddingSequence {
        EmbeddingSequence::new(Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap(), 50.0).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingSequence {
        EmbeddingSequence::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)), 50.0).unwrap()
    }

    /// Every monotone path enumerated recursively; returns the minimum cost.
    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            here + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn self_alignment_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 12, 3);
        let p = dtw_full(&a, &a, Metric::Euclidean).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.pairs, (0..12).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(fastdtw(&a, &a, 1, Metric::Euclidean).unwrap().cost, 0.0);
    }

    #[test]
    fn small_scalar_example() {
        let a = [0.0, 1.0, 2.0];
        let b = [0.0, 2.0];
        assert_eq!(brute_force(&a, &b), 1.0);
        let p = dtw_full(&scalar(&a), &scalar(&b), Metric::Euclidean).unwrap();
        assert_eq!(p.cost, 1.0);
        p.validate(3, 2).unwrap();
        let w = warp_to_target(&scalar(&a), &p, 2).unwrap();
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn single_frame_target() {
        let a = scalar(&[1.0, 2.0, 3.0, 4.0]);
        let b = scalar(&[0.0]);
        let p = dtw_full(&a, &b, Metric::Euclidean).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
    }

    #[test]
    fn matches_enumeration_on_small_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..7);
            let m = rng.gen_range(1..7);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = dtw_full(&scalar(&a), &scalar(&b), Metric::Euclidean).unwrap();
            assert!((p.cost - brute_force(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let a = scalar(&[1.0]);
        let b = EmbeddingSequence::new(Array2::zeros((2, 2)), 50.0).unwrap();
        assert!(matches!(dtw_full(&a, &b, Metric::Euclidean), Err(Error::Shape(_))));
        let p = dtw_full(&a, &a, Metric::Euclidean).unwrap();
        assert!(warp_to_target(&a, &p, 3).is_err());
    }

    #[test]
    fn base_case_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&mut rng, 3, 2);
        let b = random(&mut rng, 9, 2);
        let exact = dtw_full(&a, &b, Metric::Euclidean).unwrap();
        assert_eq!(fastdtw(&a, &b, 1, Metric::Euclidean).unwrap(), exact);
    }

    #[test]
    fn fastdtw_bounds_and_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (n, m) = (rng.gen_range(1..40), rng.gen_range(1..40));
            let a = random(&mut rng, n, 4);
            let b = random(&mut rng, m, 4);
            let exact = dtw_full(&a, &b, Metric::Euclidean).unwrap();
            let approx = fastdtw(&a, &b, 1, Metric::Euclidean).unwrap();
            approx.validate(n, m).unwrap();
            assert!(approx.cost >= exact.cost - 1e-9);
            let wide = fastdtw(&a, &b, n.max(m), Metric::Euclidean).unwrap();
            assert!((wide.cost - exact.cost).abs() <= 1e-9);
        }
    }

    #[test]
    fn cost_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let a = random(&mut rng, n, 3);
            let b = random(&mut rng, 17, 3);
            let ab = dtw_full(&a, &b, Metric::Cosine).unwrap().cost;
            let ba = dtw_full(&b, &a, Metric::Cosine).unwrap().cost;
            assert!((ab - ba).abs() < 1e-9);
        }
    }

    #[test]
    fn warp_never_exceeds_path_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random(&mut rng, 30, 5);
        let b = random(&mut rng, 22, 5);
        let p = fastdtw(&a, &b, 2, Metric::Euclidean).unwrap();
        let w = warp_to_target(&a, &p, b.len()).unwrap();
        let max = p.pair_costs.iter().copied().fold(0.0, f64::max);
        for j in 0..b.len() {
            let d = Metric::Euclidean.distance(w.frame(j), b.frame(j));
            assert!(d <= max + 1e-12);
        }
    }

    #[test]
    fn identity_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random(&mut rng, 10, 2);
        let p = dtw_full(&a, &a, Metric::Euclidean).unwrap();
        assert_eq!(warp_to_target(&a, &p, 10).unwrap(), a);
    }

    #[test]
    fn text_dump_has_one_line_per_pair() {
        let p = dtw_full(&scalar(&[0.0, 1.0, 2.0]), &scalar(&[0.0, 2.0]), Metric::Euclidean).unwrap();
        assert_eq!(p.to_text().lines().count(), p.pairs.len());
    }
}
