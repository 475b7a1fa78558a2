//! Lloyd's K-Means with k-means++ seeding and restarts, for small point sets.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(point, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one centroid")
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        if total == 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if *di > 0.0 && target < *di {
                chosen = i;
                break;
            }
            target -= di;
        }
        centroids.push(points[chosen].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignments).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                centroid[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, a)| dist2(p, &centroids[*a])).sum();
    Clustering {
        centroids,
        assignments,
        inertia,
    }
}

/// Best of `restarts` runs by inertia. `k` is capped at the number of points.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Clustering {
    assert!(!points.is_empty() && k > 0, "kmeans needs points and k > 0");
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, seed_plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![i as f64 * 0.1, 0.0]);
            pts.push(vec![100.0 + i as f64 * 0.1, 50.0]);
        }
        let c = kmeans(&pts, 2, 10, 7);
        assert!(c.inertia < 1.0);
        assert_ne!(c.assignments[0], c.assignments[1]);
        assert!(c.assignments.iter().step_by(2).all(|a| *a == c.assignments[0]));
    }

    #[test]
    fn k_equal_n_keeps_every_point() {
        let pts = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let c = kmeans(&pts, 3, 10, 1);
        assert_eq!(c.inertia, 0.0);
        let mut a = c.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64]).collect();
        assert_eq!(kmeans(&pts, 4, 10, 42), kmeans(&pts, 4, 10, 42));
    }
}
