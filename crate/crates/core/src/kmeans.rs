//! Weighted Lloyd k-means with k-means++ seeding.

use rand::Rng;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent k-means++ initializations per k.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<F> {
    pub centroids: Vec<Vec<F>>,
    pub labels: Vec<usize>,
    /// Weighted sum of squared distances to the assigned centroid.
    pub distortion: F,
}

fn sq_dist<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn assign<F: Real>(points: &[Vec<F>], weights: &[F], centroids: &[Vec<F>]) -> (Vec<usize>, F) {
    let mut labels = Vec::with_capacity(points.len());
    let mut total = F::zero();
    for (p, &w) in points.iter().zip(weights) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, sq_dist(p, centroid)))
            .fold((0, F::infinity()), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        labels.push(best);
        total = total + w * d;
    }
    (labels, total)
}

fn weighted_pick<F: Real, R: Rng>(rng: &mut R, mass: &[F]) -> usize {
    let total: F = mass.iter().copied().sum();
    if total <= F::zero() {
        return rng.random_range(0..mass.len());
    }
    let u = F::from_f64_lossy(rng.random::<f64>()) * total;
    let mut acc = F::zero();
    for (i, &m) in mass.iter().enumerate() {
        acc = acc + m;
        if u < acc {
            return i;
        }
    }
    mass.iter().rposition(|&m| m > F::zero()).unwrap_or(0)
}

/// k-means++ seeding with point weights.
pub fn kmeanspp_seeds<F: Real, R: Rng>(
    points: &[Vec<F>],
    weights: &[F],
    k: usize,
    rng: &mut R,
) -> Vec<Vec<F>> {
    let mut centroids = vec![points[weighted_pick(rng, weights)].clone()];
    let mut nearest: Vec<F> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mass: Vec<F> = nearest.iter().zip(weights).map(|(&d, &w)| d * w).collect();
        let next = points[weighted_pick(rng, &mass)].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Runs Lloyd iterations from `init` and returns the lowest-distortion state
/// visited, so the result never exceeds the distortion of `init` itself.
pub fn lloyd<F: Real>(
    points: &[Vec<F>],
    weights: &[F],
    init: Vec<Vec<F>>,
    params: &KMeansParams,
) -> KMeansFit<F> {
    let dim = points.first().map_or(0, Vec::len);
    let mut centroids = init;
    let (mut labels, mut distortion) = assign(points, weights, &centroids);
    let mut best = KMeansFit {
        centroids: centroids.clone(),
        labels: labels.clone(),
        distortion,
    };
    let tol = F::from_f64_lossy(params.tol);
    for _ in 0..params.max_iter {
        let mut sums = vec![vec![F::zero(); dim]; centroids.len()];
        let mut mass = vec![F::zero(); centroids.len()];
        for ((p, &w), &l) in points.iter().zip(weights).zip(&labels) {
            mass[l] = mass[l] + w;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s = *s + w * x;
            }
        }
        let mut shift = F::zero();
        for (c, (sum, m)) in centroids.iter_mut().zip(sums.into_iter().zip(mass)) {
            // Empty clusters keep their previous centroid.
            if m > F::zero() {
                let updated: Vec<F> = sum.into_iter().map(|s| s / m).collect();
                shift = shift.max(sq_dist(c, &updated).sqrt());
                *c = updated;
            }
        }
        let (new_labels, new_distortion) = assign(points, weights, &centroids);
        labels = new_labels;
        distortion = new_distortion;
        if distortion < best.distortion {
            best = KMeansFit {
                centroids: centroids.clone(),
                labels: labels.clone(),
                distortion,
            };
        }
        if shift <= tol {
            break;
        }
    }
    best
}

/// Best of several seeded runs for each `k` in `1..=k_max`, with
/// distortion guaranteed non-increasing in `k`: every `k > 1` also tries a warm
/// start from the `k - 1` solution plus its worst-fit point.
pub fn fit_range<F: Real, R: Rng>(
    points: &[Vec<F>],
    weights: &[F],
    k_max: usize,
    params: &KMeansParams,
    rng: &mut R,
) -> Vec<KMeansFit<F>> {
    let k_max = k_max.min(points.len());
    let mut fits: Vec<KMeansFit<F>> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut best: Option<KMeansFit<F>> = None;
        let mut consider = |fit: KMeansFit<F>| {
            if best.as_ref().is_none_or(|b| fit.distortion < b.distortion) {
                best = Some(fit);
            }
        };
        if let Some(prev) = fits.last() {
            let worst = points
                .iter()
                .zip(weights)
                .zip(&prev.labels)
                .enumerate()
                .map(|(i, ((p, &w), &l))| (i, w * sq_dist(p, &prev.centroids[l])))
                .fold((0, F::neg_infinity()), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                .0;
            let mut init = prev.centroids.clone();
            init.push(points[worst].clone());
            consider(lloyd(points, weights, init, params));
        }
        for _ in 0..params.restarts.max(1) {
            let init = kmeanspp_seeds(points, weights, k, rng);
            consider(lloyd(points, weights, init, params));
        }
        fits.push(best.expect("at least one run per k"));
    }
    fits
}

/// Largest squared distance from any point to its assigned centroid.
pub fn spread<F: Real>(points: &[Vec<F>], fit: &KMeansFit<F>) -> F {
    points
        .iter()
        .zip(&fit.labels)
        .map(|(p, &l)| sq_dist(p, &fit.centroids[l]))
        .fold(F::zero(), |a, b| if b > a { b } else { a })
}

/// Elbow selection over `distortions[i]` (the best distortion at `k = i + 1`).
///
/// Picks the smallest `k` that is already tight (every point within squared
/// distance `tight_floor` of its centroid, per `spreads`) or whose move to
/// `k + 1` improves distortion by a relative amount below `threshold`.
pub fn choose_elbow<F: Real>(distortions: &[F], spreads: &[F], threshold: f64, tight_floor: f64) -> usize {
    let threshold = F::from_f64_lossy(threshold);
    let tight = F::from_f64_lossy(tight_floor);
    for (i, &d) in distortions.iter().enumerate() {
        if spreads.get(i).is_some_and(|&s| s <= tight) || d <= F::zero() {
            return i + 1;
        }
        if let Some(&next) = distortions.get(i + 1) {
            if (d - next) / d < threshold {
                return i + 1;
            }
        }
    }
    distortions.len().max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs() -> (Vec<Vec<f64>>, Vec<f64>) {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        (pts, vec![1.0; 6])
    }

    #[test]
    fn separates_two_blobs() {
        let (pts, w) = blobs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fits = fit_range(&pts, &w, 4, &KMeansParams::default(), &mut rng);
        assert_eq!(fits.len(), 4);
        let d: Vec<f64> = fits.iter().map(|f| f.distortion).collect();
        let s: Vec<f64> = fits.iter().map(|f| spread(&pts, f)).collect();
        assert_eq!(choose_elbow(&d, &s, 0.15, 0.02), 2);
        let l = &fits[1].labels;
        assert!(l[0] == l[1] && l[1] == l[2]);
        assert!(l[3] == l[4] && l[4] == l[5]);
        assert_ne!(l[0], l[3]);
        for w in fits.windows(2) {
            assert!(w[1].distortion <= w[0].distortion);
        }
    }

    #[test]
    fn weights_pull_centroid() {
        let pts = vec![vec![0.0], vec![1.0]];
        let fit: KMeansFit<f64> = lloyd(&pts, &[3.0, 1.0], vec![vec![0.5]], &KMeansParams::default());
        assert!((fit.centroids[0][0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn elbow_edge_cases() {
        let loose = [1.0; 3];
        assert_eq!(choose_elbow::<f64>(&[0.0, 0.0], &loose, 0.15, 0.0), 1);
        assert_eq!(choose_elbow(&[4.0], &loose, 0.15, 0.0), 1);
        assert_eq!(choose_elbow(&[10.0, 5.0, 1.0], &loose, 0.15, 0.0), 3);
        assert_eq!(choose_elbow(&[10.0, 9.0, 1.0], &loose, 0.15, 0.0), 1);
        // tight enough at k = 2 even though k = 3 would still improve a lot
        assert_eq!(choose_elbow(&[10.0, 0.1, 0.01], &[1.0, 0.01, 0.001], 0.15, 0.02), 2);
        // a far outlier keeps the search going past a small total distortion
        assert_eq!(choose_elbow(&[10.0, 0.5, 0.01], &[1.0, 0.5, 0.001], 0.15, 0.02), 3);
    }

    #[test]
    fn works_in_f32() {
        let (pts, w) = blobs();
        let pts: Vec<Vec<f32>> = pts.iter().map(|p| p.iter().map(|&x| x as f32).collect()).collect();
        let w: Vec<f32> = w.iter().map(|&x| x as f32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fits = fit_range(&pts, &w, 3, &KMeansParams::default(), &mut rng);
        assert!(fits[1].distortion < 0.1);
    }
}
