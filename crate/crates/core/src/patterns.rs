//! Moving-pattern clusters per agent category via normalized spectral clustering.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trajrisk_tensor::Container;

use crate::data::{AgentCategory, SceneWindow, TrackSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub pedestrian_k: usize,
    pub car_k: usize,
    pub rider_k: usize,
    pub max_iter: usize,
    /// Per-category cap on clustered trajectories; larger sets are subsampled.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            pedestrian_k: 6,
            car_k: 3,
            rider_k: 3,
            max_iter: 100,
            max_samples: 512,
            seed: 0,
        }
    }
}

impl PatternConfig {
    pub fn k(&self, c: AgentCategory) -> usize {
        match c {
            AgentCategory::Pedestrian => self.pedestrian_k,
            AgentCategory::Car => self.car_k,
            AgentCategory::Rider => self.rider_k,
        }
    }

    /// Offset of each category's block in the shared one-hot code space.
    pub fn code_offset(&self, c: AgentCategory) -> usize {
        AgentCategory::ALL[..c.index()].iter().map(|&o| self.k(o)).sum()
    }

    pub fn code_width(&self) -> usize {
        AgentCategory::ALL.iter().map(|&c| self.k(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPatterns {
    pub sigma: f64,
    /// `k` centroids of length `2 * t_obs`.
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternModel {
    pub t_obs: usize,
    pub config: PatternConfig,
    pub categories: [Option<CategoryPatterns>; 3],
}

/// Observed positions relative to the first one, as `[x0, y0, x1, y1, ...]`.
pub fn flatten(obs: &[TrackSample]) -> Vec<f64> {
    let Some(first) = obs.first() else {
        return Vec::new();
    };
    obs.iter()
        .flat_map(|s| [s.position.x - first.position.x, s.position.y - first.position.y])
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance, or 1 when it is zero.
pub fn median_distance(samples: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            d.push(dist2(&samples[i], &samples[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let m = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// `W_ij = exp(-||x_i - x_j||² / (2σ))`, clamped away from zero.
pub fn affinity(samples: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let n = samples.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-dist2(&samples[i], &samples[j]) / (2.0 * sigma)).exp().max(f64::MIN_POSITIVE)
        }
    })
}

/// `D^{-1/2} (D - W) D^{-1/2}`.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / w.row(i).sum().sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let l = if i == j { w.row(i).sum() - w[(i, j)] } else { -w[(i, j)] };
        inv_sqrt[i] * l * inv_sqrt[j]
    })
}

/// Row-normalized eigenvectors of the `k` smallest eigenvalues, `n × k`.
fn spectral_embedding(w: &DMatrix<f64>, k: usize) -> Vec<Vec<f64>> {
    let eig = SymmetricEigen::new(normalized_laplacian(w));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let n = w.nrows();
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect()
}

/// Lloyd's k-means with farthest-point seeding; the first centre is drawn from `rng`.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let far = (0..n)
            .map(|i| {
                let d = centers.iter().map(|c| dist2(&points[i], c)).fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(points[far.0].clone());
    }

    let nearest = |p: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, ctr) in centers.iter().enumerate() {
            let d = dist2(p, ctr);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    };

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..max_iter {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Spectral partition of `samples` into `k` groups. Returns labels and σ.
pub fn spectral_cluster(samples: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> (Vec<usize>, f64) {
    let sigma = median_distance(samples);
    let w = affinity(samples, sigma);
    let emb = spectral_embedding(&w, k.min(samples.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (kmeans(&emb, k, max_iter, &mut rng), sigma)
}

fn fit_category(samples: &[Vec<f64>], k: usize, config: &PatternConfig, seed: u64) -> CategoryPatterns {
    let (labels, sigma) = spectral_cluster(samples, k, config.max_iter, seed);
    let dim = samples[0].len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (s, &l) in samples.iter().zip(&labels) {
        counts[l] += 1;
        centroids[l].iter_mut().zip(s).for_each(|(c, v)| *c += v);
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    // A spectral cluster left empty by k-means keeps the sample farthest from
    // every populated centroid, so each index stays reachable.
    for c in 0..k {
        if counts[c] == 0 {
            let far = samples
                .iter()
                .max_by(|a, b| {
                    let da = (0..k).filter(|&o| counts[o] > 0).map(|o| dist2(a, &centroids[o])).fold(f64::INFINITY, f64::min);
                    let db = (0..k).filter(|&o| counts[o] > 0).map(|o| dist2(b, &centroids[o])).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db)
                })
                .cloned()
                .unwrap_or_else(|| vec![0.0; dim]);
            centroids[c] = far;
        }
    }
    CategoryPatterns { sigma, centroids }
}

/// Fits pattern centroids per category from every observed segment in `windows`.
/// Categories with no trajectories stay unfitted.
pub fn fit_patterns(windows: &[SceneWindow], config: &PatternConfig) -> Result<PatternModel> {
    let t_obs = windows
        .first()
        .map(|w| w.t_obs)
        .ok_or_else(|| Error::Config("no windows to fit patterns on".into()))?;
    let mut per_cat: [Vec<Vec<f64>>; 3] = Default::default();
    for w in windows {
        if w.t_obs != t_obs {
            return Err(Error::Config("windows disagree on t_obs".into()));
        }
        for (i, t) in w.tracks.iter().enumerate() {
            per_cat[t.category.index()].push(flatten(w.observed(i)));
        }
    }

    let mut categories: [Option<CategoryPatterns>; 3] = Default::default();
    for c in AgentCategory::ALL {
        let mut samples = std::mem::take(&mut per_cat[c.index()]);
        let k = config.k(c);
        if samples.is_empty() {
            continue;
        }
        if k == 0 {
            return Err(Error::Config(format!("cluster count for {c} must be positive")));
        }
        if samples.len() < k {
            return Err(Error::Config(format!(
                "category {c} has {} trajectories but {k} clusters were requested",
                samples.len()
            )));
        }
        let seed = config.seed ^ (c.index() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        if samples.len() > config.max_samples.max(k) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, samples.len(), config.max_samples.max(k)).into_vec();
            idx.sort_unstable();
            samples = idx.into_iter().map(|i| samples[i].clone()).collect();
        }
        categories[c.index()] = Some(fit_category(&samples, k, config, seed));
    }
    Ok(PatternModel {
        t_obs,
        config: config.clone(),
        categories,
    })
}

impl PatternModel {
    pub fn category(&self, c: AgentCategory) -> Result<&CategoryPatterns> {
        self.categories[c.index()]
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no moving patterns fitted for category {c}")))
    }

    pub fn save(&self, out: &mut Container) {
        out.metadata.insert("patterns.t_obs".into(), self.t_obs.to_string());
        for c in AgentCategory::ALL {
            out.metadata.insert(format!("patterns.{c}.k"), self.config.k(c).to_string());
            if let Some(p) = &self.categories[c.index()] {
                out.metadata.insert(format!("patterns.{c}.sigma"), p.sigma.to_bits().to_string());
                let flat: Vec<f64> = p.centroids.iter().flatten().copied().collect();
                out.put(format!("patterns/{c}"), &[p.centroids.len(), 2 * self.t_obs], &flat);
            }
        }
    }

    pub fn load(from: &Container) -> Result<Self> {
        let parse_usize = |key: &str| -> Result<usize> {
            from.meta(key)?
                .parse()
                .map_err(|_| Error::Config(format!("bad checkpoint metadata `{key}`")))
        };
        let t_obs = parse_usize("patterns.t_obs")?;
        let config = PatternConfig {
            pedestrian_k: parse_usize("patterns.pedestrian.k")?,
            car_k: parse_usize("patterns.car.k")?,
            rider_k: parse_usize("patterns.rider.k")?,
            ..PatternConfig::default()
        };
        let mut categories: [Option<CategoryPatterns>; 3] = Default::default();
        for c in AgentCategory::ALL {
            let Ok((shape, values)) = from.tensor(&format!("patterns/{c}")) else {
                continue;
            };
            let bits: u64 = from
                .meta(&format!("patterns.{c}.sigma"))?
                .parse()
                .map_err(|_| Error::Config(format!("bad sigma for {c}")))?;
            categories[c.index()] = Some(CategoryPatterns {
                sigma: f64::from_bits(bits),
                centroids: values.chunks(shape[1].max(1)).map(<[f64]>::to_vec).collect(),
            });
        }
        Ok(Self {
            t_obs,
            config,
            categories,
        })
    }
}

/// Index of the nearest centroid to the track's flattened observation.
pub fn assign_pattern(obs: &[TrackSample], category: AgentCategory, model: &PatternModel) -> Result<usize> {
    if obs.len() != model.t_obs {
        return Err(Error::Shape {
            what: "observation segment",
            expected: vec![model.t_obs],
            got: vec![obs.len()],
        });
    }
    let p = model.category(category)?;
    let x = flatten(obs);
    let mut best = (0, f64::INFINITY);
    for (i, c) in p.centroids.iter().enumerate() {
        let d = dist2(&x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn seg(points: &[(f64, f64)]) -> Vec<TrackSample> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TrackSample {
                frame: i as i64,
                position: Point::new(x, y),
            })
            .collect()
    }

    /// Two planted groups: eastward and northward straight lines with small jitter.
    fn planted(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut truth = Vec::new();
        for g in 0..2 {
            for _ in 0..n_per {
                let pts: Vec<(f64, f64)> = (0..4)
                    .map(|t| {
                        let j = rng.random_range(-0.05..0.05);
                        if g == 0 {
                            (t as f64 * 2.0 + j, j)
                        } else {
                            (j, t as f64 * 2.0 + j)
                        }
                    })
                    .collect();
                xs.push(flatten(&seg(&pts)));
                truth.push(g);
            }
        }
        (xs, truth)
    }

    /// Fraction of sample pairs on which two partitions agree (same/different).
    fn pair_agreement(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn affinity_and_laplacian_invariants() {
        let (xs, _) = planted(6, 1);
        let w = affinity(&xs, median_distance(&xs));
        for i in 0..w.nrows() {
            assert_eq!(w[(i, i)], 1.0);
            for j in 0..w.ncols() {
                assert_eq!(w[(i, j)], w[(j, i)]);
                assert!(w[(i, j)] > 0.0 && w[(i, j)] <= 1.0);
            }
        }
        let eig = SymmetricEigen::new(normalized_laplacian(&w));
        for &l in eig.eigenvalues.iter() {
            assert!((-1e-8..=2.0 + 1e-8).contains(&l), "eigenvalue {l}");
        }
    }

    #[test]
    fn recovers_planted_groups() {
        for seed in 0..10 {
            let (xs, truth) = planted(8, seed);
            let (labels, _) = spectral_cluster(&xs, 2, 100, seed);
            assert_eq!(pair_agreement(&labels, &truth), 1.0, "seed {seed}");
        }
    }

    #[test]
    fn identical_trajectories_single_cluster() {
        let xs = vec![flatten(&seg(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])); 5];
        let (labels, sigma) = spectral_cluster(&xs, 1, 10, 0);
        assert!(labels.iter().all(|&l| l == 0));
        assert_eq!(sigma, 1.0);
    }

    #[test]
    fn permutation_gives_same_partition() {
        let (xs, _) = planted(7, 3);
        let (base, _) = spectral_cluster(&xs, 2, 100, 5);
        let perm: Vec<usize> = (0..xs.len()).rev().collect();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let (l2, _) = spectral_cluster(&shuffled, 2, 100, 5);
        let mut back = vec![0; xs.len()];
        for (pos, &i) in perm.iter().enumerate() {
            back[i] = l2[pos];
        }
        assert_eq!(pair_agreement(&base, &back), 1.0);
    }

    #[test]
    fn nearest_centroid_assignment() {
        let model = PatternModel {
            t_obs: 2,
            config: PatternConfig::default(),
            categories: [
                None,
                Some(CategoryPatterns {
                    sigma: 1.0,
                    centroids: vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 3.0]],
                }),
                None,
            ],
        };
        let on_a = seg(&[(5.0, 5.0), (6.0, 5.0)]);
        assert_eq!(assign_pattern(&on_a, AgentCategory::Car, &model).unwrap(), 0);
        let on_b = seg(&[(0.0, 0.0), (0.0, 3.0)]);
        assert_eq!(assign_pattern(&on_b, AgentCategory::Car, &model).unwrap(), 1);
        // Between the two, nearer A: displacement (0.4, 1.2) -> d²(A)=1.8, d²(B)=3.4.
        let mid = seg(&[(0.0, 0.0), (0.4, 1.2)]);
        assert_eq!(assign_pattern(&mid, AgentCategory::Car, &model).unwrap(), 0);
        assert!(matches!(assign_pattern(&mid, AgentCategory::Rider, &model), Err(Error::Config(_))));
    }

    #[test]
    fn code_space_offsets() {
        let c = PatternConfig::default();
        assert_eq!(c.code_width(), 12);
        assert_eq!(c.code_offset(AgentCategory::Pedestrian), 0);
        assert_eq!(c.code_offset(AgentCategory::Car), 6);
        assert_eq!(c.code_offset(AgentCategory::Rider), 9);
    }
}
