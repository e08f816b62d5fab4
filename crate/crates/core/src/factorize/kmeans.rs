use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Clustering of the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

const MAX_LLOYD_ITER: usize = 300;

/// Lloyd's algorithm with `restarts` seeded random initializations; the run
/// with the lowest inertia wins (earliest run on ties). Assignment ties go to
/// the lowest cluster index.
pub fn kmeans(x: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> KMeans {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let init: Vec<usize> = sample(&mut rng, x.nrows(), k).into_vec();
        let run = lloyd(x, x.select(ndarray::Axis(0), &init));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>) -> KMeans {
    let (n, d) = x.dim();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut distances = vec![0.0; n];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for i in 0..n {
            let (label, dist) = nearest(x.row(i), &centroids);
            distances[i] = dist;
            if labels[i] != label {
                labels[i] = label;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(labels[i]).scaled_add(1.0, &x.row(i));
            counts[labels[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / count as f64));
            } else {
                // empty cluster: restart it at the worst-fit point
                let far = (0..n)
                    .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)))
                    .unwrap();
                centroids.row_mut(c).assign(&x.row(far));
                distances[far] = 0.0;
            }
        }
    }
    let inertia = (0..n).map(|i| nearest(x.row(i), &centroids).1).sum();
    KMeans {
        centroids,
        labels,
        inertia,
    }
}

fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let dist: f64 = row
            .iter()
            .zip(centroid.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// One-hot cluster memberships `n × k`.
pub(crate) fn membership(labels: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        m[[i, l]] = 1.0;
    }
    m
}

#[allow(dead_code)]
pub(crate) fn cluster_sizes(labels: &[usize], k: usize) -> Array1<usize> {
    let mut counts = Array1::zeros(k);
    for &l in labels {
        counts[l] += 1;
    }
    counts
}
