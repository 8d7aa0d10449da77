//! Seeded Lloyd k-means with k-means++ seeding, used to train the coarse
//! quantizer of the clustered index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sq_dist_f32;

/// Trains `k` centroids over `n = data.len() / dim` points and returns them
/// row-major. Runs exactly `iters` Lloyd iterations; no early stop.
pub(crate) fn train(data: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Vec<f64> {
    let n = data.len() / dim;
    debug_assert!(k >= 1 && k <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(data, dim, k, &mut rng);

    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..iters {
        let assigned = assign(data, dim, &centroids);

        sums.fill(0.0);
        counts.fill(0);
        for (i, &(c, _)) in assigned.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1;
            let row = &data[i * dim..(i + 1) * dim];
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s * inv;
                }
            }
        }
        repair_empty(data, dim, &mut centroids, &counts, &assigned);
    }
    centroids
}

/// Reseeds each empty cluster at the point farthest from its assigned
/// centroid. Points are taken in decreasing distance, each used at most once.
fn repair_empty(data: &[f32], dim: usize, centroids: &mut [f64], counts: &[usize], assigned: &[(u32, f64)]) {
    let empty: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..assigned.len()).collect();
    order.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
    for (c, &p) in empty.iter().zip(&order) {
        for (dst, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&data[p * dim..(p + 1) * dim]) {
            *dst = f64::from(v);
        }
    }
}

fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(data[first * dim..(first + 1) * dim].iter().map(|&v| f64::from(v)));

    let mut nearest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist_f32(&centroids[..dim], &data[i * dim..(i + 1) * dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(data[pick * dim..(pick + 1) * dim].iter().map(|&v| f64::from(v)));
        let newest = &centroids[start..start + dim];
        nearest.par_iter_mut().enumerate().for_each(|(i, best)| {
            let d = sq_dist_f32(newest, &data[i * dim..(i + 1) * dim]);
            if d < *best {
                *best = d;
            }
        });
    }
    centroids
}

/// Nearest centroid (ties to the lower index) and its squared distance, per point.
pub(crate) fn assign(data: &[f32], dim: usize, centroids: &[f64]) -> Vec<(u32, f64)> {
    let k = centroids.len() / dim;
    data.par_chunks(dim)
        .map(|point| {
            let mut best = (0u32, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist_f32(&centroids[c * dim..(c + 1) * dim], point);
                if d < best.1 {
                    best = (c as u32, d);
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut data = Vec::new();
        for i in 0..50 {
            let jitter = (i as f32) * 0.001;
            data.extend_from_slice(&[jitter, 0.0]);
            data.extend_from_slice(&[100.0 + jitter, 100.0]);
        }
        let c = train(&data, 2, 2, 10, 7);
        let mut xs = [c[0], c[2]];
        xs.sort_by(f64::total_cmp);
        assert!(xs[0] < 1.0 && xs[1] > 99.0, "{c:?}");
    }

    #[test]
    fn duplicate_points_do_not_panic() {
        let data = vec![1.0f32; 2 * 20];
        let c = train(&data, 2, 5, 5, 1);
        assert_eq!(c.len(), 10);
        assert!(c.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let data: Vec<f32> = (0..600).map(|i| ((i * 7919) % 101) as f32 * 0.1).collect();
        assert_eq!(train(&data, 3, 8, 5, 42), train(&data, 3, 8, 5, 42));
    }
}
