//! Displacement metrics, best-of-h reductions, miss rate and the
//! category-weighted summary.

use serde::{Deserialize, Serialize};

use crate::data::AgentCategory;
use crate::error::{Error, Result};
use crate::geometry::Point;

pub const MISS_THRESHOLD: f64 = 2.0;

/// Weight of each category in the weighted summary, indexed like [`AgentCategory::ALL`].
pub fn category_weight(c: AgentCategory) -> f64 {
    match c {
        AgentCategory::Car => 0.2,
        AgentCategory::Pedestrian => 0.58,
        AgentCategory::Rider => 0.22,
    }
}

fn check_shapes(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<()> {
    let shape = |x: &[Vec<Point>]| {
        let mut s = vec![x.len()];
        s.extend(x.iter().map(Vec::len));
        s
    };
    if shape(pred) != shape(truth) || truth.iter().any(Vec::is_empty) {
        return Err(Error::Shape {
            what: "trajectory metrics",
            expected: shape(truth),
            got: shape(pred),
        });
    }
    Ok(())
}

/// Per-agent mean and final displacement.
pub fn agent_errors(pred: &[Point], truth: &[Point]) -> (f64, f64) {
    let d: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).collect();
    (d.iter().sum::<f64>() / d.len() as f64, *d.last().unwrap_or(&0.0))
}

/// Mean error over all agent-frames and mean final-frame error, `[N][T_pred]` inputs.
pub fn ade_fde(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<(f64, f64)> {
    check_shapes(pred, truth)?;
    let (mut sum, mut count, mut fde) = (0.0, 0usize, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            sum += a.distance(*b);
            count += 1;
        }
        fde += p.last().unwrap().distance(*t.last().unwrap());
    }
    Ok((sum / count as f64, fde / pred.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestOfH {
    pub made: f64,
    pub mfde: f64,
    pub mr: f64,
}

/// Minimum ADE and FDE over joint samples `[h][N][T_pred]`, and the fraction of
/// agents whose best final error over the samples exceeds [`MISS_THRESHOLD`].
pub fn best_of_h(samples: &[Vec<Vec<Point>>], truth: &[Vec<Point>]) -> Result<BestOfH> {
    if samples.is_empty() {
        return Err(Error::Validation("best-of-h needs at least one sample".into()));
    }
    let (mut made, mut mfde) = (f64::INFINITY, f64::INFINITY);
    let mut best_final = vec![f64::INFINITY; truth.len()];
    for s in samples {
        let (a, f) = ade_fde(s, truth)?;
        made = made.min(a);
        mfde = mfde.min(f);
        for (i, (p, t)) in s.iter().zip(truth).enumerate() {
            best_final[i] = best_final[i].min(p.last().unwrap().distance(*t.last().unwrap()));
        }
    }
    Ok(BestOfH {
        made,
        mfde,
        mr: miss_rate(&best_final),
    })
}

/// Fraction of per-agent best final errors above [`MISS_THRESHOLD`].
pub fn miss_rate(best_final: &[f64]) -> f64 {
    if best_final.is_empty() {
        return 0.0;
    }
    best_final.iter().filter(|&&d| d > MISS_THRESHOLD).count() as f64 / best_final.len() as f64
}

/// Weighted combination of per-category values in [`AgentCategory::ALL`] order.
/// Absent categories contribute zero.
pub fn weighted(values: [Option<f64>; 3]) -> f64 {
    AgentCategory::ALL
        .iter()
        .zip(values)
        .map(|(&c, v)| {
            if v.is_none() {
                log::warn!("no {c} agents; its weighted term is zero");
            }
            category_weight(c) * v.unwrap_or(0.0)
        })
        .sum()
}

/// `(wade, wfde)` from per-category `(made, mfde)`.
pub fn weighted_metrics(per_category: [Option<(f64, f64)>; 3]) -> (f64, f64) {
    (
        weighted(per_category.map(|v| v.map(|x| x.0))),
        weighted(per_category.map(|v| v.map(|x| x.1))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub ade: f64,
    pub fde: f64,
    pub made: f64,
    pub mfde: f64,
    pub mr: f64,
    /// Agents contributing to these values.
    pub agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub h: usize,
    pub trials: usize,
    pub overall: Metrics,
    pub pedestrian: Option<Metrics>,
    pub car: Option<Metrics>,
    pub rider: Option<Metrics>,
    pub wade: f64,
    pub wfde: f64,
}

impl MetricReport {
    pub fn category(&self, c: AgentCategory) -> Option<&Metrics> {
        match c {
            AgentCategory::Pedestrian => self.pedestrian.as_ref(),
            AgentCategory::Car => self.car.as_ref(),
            AgentCategory::Rider => self.rider.as_ref(),
        }
    }

    fn category_mut(&mut self, c: AgentCategory) -> &mut Option<Metrics> {
        match c {
            AgentCategory::Pedestrian => &mut self.pedestrian,
            AgentCategory::Car => &mut self.car,
            AgentCategory::Rider => &mut self.rider,
        }
    }

    /// Plain-text table, one row per category plus the overall row.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>8} {:>8} {:>8} {:>8} {:>6}\n",
            "category", "agents", "ADE", "FDE", "mADE", "mFDE", "MR"
        );
        let mut row = |name: &str, m: &Metrics| {
            out.push_str(&format!(
                "{:<10} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6.3}\n",
                name, m.agents, m.ade, m.fde, m.made, m.mfde, m.mr
            ));
        };
        for c in AgentCategory::ALL {
            if let Some(m) = self.category(c) {
                row(c.as_str(), m);
            }
        }
        row("overall", &self.overall);
        out.push_str(&format!(
            "h = {}, trials = {}, wADE = {:.4}, wFDE = {:.4}\n",
            self.h, self.trials, self.wade, self.wfde
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    ade: f64,
    fde: f64,
    made: f64,
    mfde: f64,
    misses: usize,
    agents: usize,
}

impl Sums {
    fn metrics(&self) -> Option<Metrics> {
        (self.agents > 0).then(|| {
            let n = self.agents as f64;
            Metrics {
                ade: self.ade / n,
                fde: self.fde / n,
                made: self.made / n,
                mfde: self.mfde / n,
                mr: self.misses as f64 / n,
                agents: self.agents,
            }
        })
    }
}

/// Accumulates windows into a [`MetricReport`]. Best-of-h minima are taken per
/// window (and per category within it) and then averaged with agent weights.
#[derive(Debug, Clone)]
pub struct Evaluator {
    h: usize,
    overall: Sums,
    per_category: [Sums; 3],
}

impl Evaluator {
    pub fn new(h: usize) -> Self {
        Self {
            h,
            overall: Sums::default(),
            per_category: [Sums::default(); 3],
        }
    }

    /// `mean`, `truth`: `[N][T_pred]`; `samples`: `[h][N][T_pred]`.
    pub fn add_window(
        &mut self,
        categories: &[AgentCategory],
        mean: &[Vec<Point>],
        samples: &[Vec<Vec<Point>>],
        truth: &[Vec<Point>],
    ) -> Result<()> {
        if samples.len() != self.h || categories.len() != truth.len() {
            return Err(Error::Shape {
                what: "evaluation window",
                expected: vec![self.h, truth.len()],
                got: vec![samples.len(), categories.len()],
            });
        }
        check_shapes(mean, truth)?;
        let mut groups: Vec<(Option<AgentCategory>, Vec<usize>)> = vec![(None, (0..truth.len()).collect())];
        for c in AgentCategory::ALL {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| categories[i] == c).collect();
            if !idx.is_empty() {
                groups.push((Some(c), idx));
            }
        }
        for (cat, idx) in groups {
            let pick = |x: &[Vec<Point>]| idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>();
            let t = pick(truth);
            let (ade, fde) = ade_fde(&pick(mean), &t)?;
            let sub: Vec<Vec<Vec<Point>>> = samples.iter().map(|s| pick(s)).collect();
            let b = best_of_h(&sub, &t)?;
            let n = idx.len();
            let acc = match cat {
                None => &mut self.overall,
                Some(c) => &mut self.per_category[c.index()],
            };
            acc.ade += ade * n as f64;
            acc.fde += fde * n as f64;
            acc.made += b.made * n as f64;
            acc.mfde += b.mfde * n as f64;
            acc.misses += (b.mr * n as f64).round() as usize;
            acc.agents += n;
        }
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let mut r = MetricReport {
            h: self.h,
            trials: 1,
            overall: self.overall.metrics().unwrap_or_default(),
            pedestrian: None,
            car: None,
            rider: None,
            wade: 0.0,
            wfde: 0.0,
        };
        for c in AgentCategory::ALL {
            *r.category_mut(c) = self.per_category[c.index()].metrics();
        }
        let per = AgentCategory::ALL.map(|c| r.category(c).map(|m| (m.made, m.mfde)));
        (r.wade, r.wfde) = weighted_metrics(per);
        r
    }
}

fn min_metrics(items: impl Iterator<Item = Metrics>) -> Option<Metrics> {
    items.reduce(|a, b| Metrics {
        ade: a.ade.min(b.ade),
        fde: a.fde.min(b.fde),
        made: a.made.min(b.made),
        mfde: a.mfde.min(b.mfde),
        mr: a.mr.min(b.mr),
        agents: a.agents.max(b.agents),
    })
}

/// Field-wise minimum over repeated trials.
pub fn min_over_trials(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("min_over_trials needs at least one report".into()))?;
    let mut out = first.clone();
    out.trials = reports.iter().map(|r| r.trials).sum();
    out.overall = min_metrics(reports.iter().map(|r| r.overall)).unwrap();
    for c in AgentCategory::ALL {
        *out.category_mut(c) = min_metrics(reports.iter().filter_map(|r| r.category(c).copied()));
    }
    out.wade = reports.iter().map(|r| r.wade).fold(f64::INFINITY, f64::min);
    out.wfde = reports.iter().map(|r| r.wfde).fold(f64::INFINITY, f64::min);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<Vec<Point>> {
        (0..n)
            .map(|_| {
                (0..t)
                    .map(|_| Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
                    .collect()
            })
            .collect()
    }

    fn shift(x: &[Vec<Point>], d: Point) -> Vec<Vec<Point>> {
        x.iter().map(|r| r.iter().map(|&p| p + d).collect()).collect()
    }

    #[test]
    fn exact_prediction_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = traj(&mut rng, 3, 6);
        assert_eq!(ade_fde(&t, &t).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn pythagorean_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = traj(&mut rng, 4, 6);
        let p = shift(&t, Point::new(3.0, 4.0));
        let (ade, fde) = ade_fde(&p, &t).unwrap();
        assert!((ade - 5.0).abs() < 1e-12 && (fde - 5.0).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, t) = (traj(&mut rng, 5, 7), traj(&mut rng, 5, 7));
        let mut s = 0.0;
        let mut f = 0.0;
        for i in 0..5 {
            for k in 0..7 {
                let (dx, dy) = (p[i][k].x - t[i][k].x, p[i][k].y - t[i][k].y);
                s += (dx * dx + dy * dy).sqrt();
            }
            let (dx, dy) = (p[i][6].x - t[i][6].x, p[i][6].y - t[i][6].y);
            f += (dx * dx + dy * dy).sqrt();
        }
        let (ade, fde) = ade_fde(&p, &t).unwrap();
        assert!((ade - s / 35.0).abs() < 1e-12 && (fde - f / 5.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(ade_fde(&traj(&mut rng, 2, 3), &traj(&mut rng, 2, 4)).is_err());
        assert!(ade_fde(&traj(&mut rng, 3, 3), &traj(&mut rng, 2, 3)).is_err());
    }

    #[test]
    fn single_sample_equals_ade() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, t) = (traj(&mut rng, 3, 5), traj(&mut rng, 3, 5));
        let b = best_of_h(std::slice::from_ref(&p), &t).unwrap();
        let (ade, fde) = ade_fde(&p, &t).unwrap();
        assert_eq!((b.made, b.mfde), (ade, fde));
    }

    #[test]
    fn exact_sample_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = traj(&mut rng, 1, 5);
        let far = shift(&t, Point::new(50.0, 0.0));
        let b = best_of_h(&[far.clone(), t.clone(), far], &t).unwrap();
        assert_eq!((b.made, b.mfde, b.mr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn miss_rate_threshold_count() {
        assert_eq!(miss_rate(&[1.5, 2.5, 3.0, 0.4]), 0.5);
        assert_eq!(miss_rate(&[2.0]), 0.0);
        // per-agent best final errors through best_of_h
        let truth: Vec<Vec<Point>> = (0..4).map(|_| vec![Point::ORIGIN]).collect();
        let s: Vec<Vec<Point>> = [1.5, 2.5, 3.0, 0.4].iter().map(|&d| vec![Point::new(d, 0.0)]).collect();
        assert_eq!(best_of_h(&[s], &truth).unwrap().mr, 0.5);
    }

    #[test]
    fn weighted_coefficients() {
        assert_eq!(weighted_metrics([Some((1.0, 1.0)); 3]), (1.0, 1.0));
        let car_only = [None, Some((1.25, 1.25)), None];
        assert_eq!(weighted_metrics(car_only).0, 0.25);
        assert_eq!(weighted_metrics([Some((1.0, 0.0)), Some((0.0, 0.0)), Some((0.0, 0.0))]).0, 0.58);
        let sum: f64 = AgentCategory::ALL.iter().map(|&c| category_weight(c)).sum();
        assert_eq!(sum, 1.0);
    }

    fn report(made: f64, seed: u64) -> MetricReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = || Metrics {
            ade: rng.random_range(0.0..3.0),
            fde: rng.random_range(0.0..3.0),
            made,
            mfde: rng.random_range(0.0..3.0),
            mr: rng.random_range(0.0..1.0),
            agents: 4,
        };
        MetricReport {
            h: 20,
            trials: 1,
            overall: m(),
            pedestrian: Some(m()),
            car: None,
            rider: Some(m()),
            wade: made,
            wfde: made,
        }
    }

    #[test]
    fn trials_reduce_fieldwise() {
        let one = report(1.0, 0);
        assert_eq!(min_over_trials(std::slice::from_ref(&one)).unwrap(), one);
        let rs = [report(1.0, 1), report(0.9, 2), report(1.1, 3)];
        let m = min_over_trials(&rs).unwrap();
        assert_eq!(m.overall.made, 0.9);
        assert_eq!(m.trials, 3);
        for f in [|m: &Metrics| m.ade, |m: &Metrics| m.fde, |m: &Metrics| m.mfde, |m: &Metrics| m.mr] {
            let want = rs.iter().map(|r| f(&r.overall)).fold(f64::INFINITY, f64::min);
            assert_eq!(f(&m.overall), want);
            let want = rs.iter().map(|r| f(r.rider.as_ref().unwrap())).fold(f64::INFINITY, f64::min);
            assert_eq!(f(m.rider.as_ref().unwrap()), want);
        }
        assert!(m.car.is_none());
        assert!(min_over_trials(&[]).is_err());
    }

    #[test]
    fn evaluator_perfect_forecast_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = traj(&mut rng, 3, 4);
        let cats = [AgentCategory::Car, AgentCategory::Pedestrian, AgentCategory::Pedestrian];
        let mut e = Evaluator::new(2);
        e.add_window(&cats, &t, &[t.clone(), t.clone()], &t).unwrap();
        let r = e.report();
        assert_eq!(r.overall.made, 0.0);
        assert_eq!(r.wade, 0.0);
        assert_eq!(r.pedestrian.unwrap().agents, 2);
        assert!(r.rider.is_none());
        assert!(r.table().contains("overall"));
    }

    proptest! {
        #[test]
        fn best_of_h_monotone_in_h(seed in 0u64..500, h in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = traj(&mut rng, 3, 4);
            let samples: Vec<_> = (0..h + 1).map(|_| traj(&mut rng, 3, 4)).collect();
            let a = best_of_h(&samples[..h], &t).unwrap();
            let b = best_of_h(&samples, &t).unwrap();
            prop_assert!(b.made <= a.made && b.mfde <= a.mfde && b.mr <= a.mr);
        }

        #[test]
        fn translation_invariant(seed in 0u64..500, dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = traj(&mut rng, 3, 5);
            let samples: Vec<_> = (0..4).map(|_| traj(&mut rng, 3, 5)).collect();
            let d = Point::new(dx, dy);
            let a = best_of_h(&samples, &t).unwrap();
            let moved: Vec<_> = samples.iter().map(|s| shift(s, d)).collect();
            let b = best_of_h(&moved, &shift(&t, d)).unwrap();
            prop_assert!((a.made - b.made).abs() < 1e-9 && (a.mfde - b.mfde).abs() < 1e-9);
            prop_assert_eq!(a.mr, b.mr);
        }
    }
}
