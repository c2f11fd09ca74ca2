//! Bernstein-polynomial smoothing of predicted trajectories.

use crate::geometry::Point;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bézier curve of `controls` (order `controls.len() - 1`) at parameter `s`.
pub fn bezier_point(controls: &[Point], s: f64) -> Point {
    let n = controls.len().saturating_sub(1);
    let mut acc = Point::ORIGIN;
    for (t, &p) in controls.iter().enumerate() {
        let w = binomial(n, t) * (1.0 - s).powi((n - t) as i32) * s.powi(t as i32);
        acc = acc + p * w;
    }
    acc
}

/// Smooths `points` (the predicted positions) back onto the same number of
/// samples. With `anchor` (the last observed position) the control polygon
/// is `[anchor, points...]` and the curve is read at `s = k / len` for
/// `k = 1..=len`; without it the controls are `points` alone, read at
/// `s = k / (len - 1)`.
pub fn bezier_smooth(points: &[Point], anchor: Option<Point>) -> Vec<Point> {
    let len = points.len();
    match anchor {
        Some(a) => {
            let mut controls = Vec::with_capacity(len + 1);
            controls.push(a);
            controls.extend_from_slice(points);
            (1..=len).map(|k| bezier_point(&controls, k as f64 / len as f64)).collect()
        }
        None if len < 2 => points.to_vec(),
        None => (0..len)
            .map(|k| bezier_point(points, k as f64 / (len - 1) as f64))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
            .collect()
    }

    #[test]
    fn endpoints() {
        for seed in 0..20 {
            let c = random_points(seed, 7);
            assert!(bezier_point(&c, 0.0).distance(c[0]) < 1e-12);
            assert!(bezier_point(&c, 1.0).distance(c[6]) < 1e-12);
            let s = bezier_smooth(&c[1..], Some(c[0]));
            assert!(s[5].distance(c[6]) < 1e-12);
            let s = bezier_smooth(&c, None);
            assert!(s[0].distance(c[0]) < 1e-12 && s[6].distance(c[6]) < 1e-12);
        }
    }

    #[test]
    fn constant_controls() {
        let c = vec![Point::new(3.5, -1.25); 7];
        for k in 0..=50 {
            assert!(bezier_point(&c, k as f64 / 50.0).distance(c[0]) < 1e-12);
        }
        for p in bezier_smooth(&c[1..], Some(c[0])) {
            assert!(p.distance(c[0]) < 1e-12);
        }
    }

    #[test]
    fn collinear_controls_stay_on_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let o = Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let th: f64 = rng.random_range(-3.0..3.0);
            let dir = Point::new(th.cos(), th.sin());
            let c: Vec<Point> = (0..7).map(|_| o + dir * rng.random_range(-10.0..10.0)).collect();
            for s in bezier_smooth(&c[1..], Some(c[0])).into_iter().chain(bezier_smooth(&c, None)) {
                let d = s - o;
                let perp = (d.x * dir.y - d.y * dir.x).abs();
                assert!(perp < 1e-12, "{perp}");
            }
        }
    }

    #[test]
    fn length_preserved() {
        let c = random_points(1, 6);
        assert_eq!(bezier_smooth(&c, None).len(), 6);
        assert_eq!(bezier_smooth(&c, Some(Point::ORIGIN)).len(), 6);
        assert_eq!(bezier_smooth(&c[..1], None), c[..1].to_vec());
    }
}
