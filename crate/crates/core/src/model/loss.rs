use std::f64::consts::PI;

use trajrisk_tensor::{Session, Var};

use crate::error::{Error, Result};

use super::layers::PARAMS;

/// Bivariate normal density at `(x, y)`.
pub fn bivariate_density(mu: [f64; 2], sigma: [f64; 2], rho: f64, p: [f64; 2]) -> f64 {
    let dx = (p[0] - mu[0]) / sigma[0];
    let dy = (p[1] - mu[1]) / sigma[1];
    let om = 1.0 - rho * rho;
    let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
    (-z / (2.0 * om)).exp() / (2.0 * PI * sigma[0] * sigma[1] * om.sqrt())
}

/// Negative log density, evaluated without forming the density.
pub fn point_nll(mu: [f64; 2], sigma: [f64; 2], rho: f64, p: [f64; 2]) -> f64 {
    let dx = (p[0] - mu[0]) / sigma[0];
    let dy = (p[1] - mu[1]) / sigma[1];
    let om = 1.0 - rho * rho;
    let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
    (2.0 * PI).ln() + sigma[0].ln() + sigma[1].ln() + 0.5 * om.ln() + z / (2.0 * om)
}

/// Mean negative log-likelihood of `truth` (`[N, L, 2]`, row-major) under
/// `params: [N, 5, L]`.
pub fn bgpd_nll(s: &mut Session<'_>, params: Var, truth: &[f64]) -> Result<Var> {
    let ps = s.tape.shape(params).to_vec();
    if ps.len() != 3 || ps[1] != PARAMS || truth.len() != ps[0] * ps[2] * 2 {
        return Err(Error::Shape {
            what: "bgpd_nll",
            expected: vec![ps.first().copied().unwrap_or(0), ps.get(2).copied().unwrap_or(0), 2],
            got: vec![truth.len()],
        });
    }
    let (n, l) = (ps[0], ps[2]);
    let mut t = vec![0.0; n * 2 * l];
    for i in 0..n {
        for k in 0..l {
            for c in 0..2 {
                t[(i * 2 + c) * l + k] = truth[(i * l + k) * 2 + c];
            }
        }
    }
    let truth = s.tape.constant(t, &[n, 2, l])?;
    let mu = s.tape.narrow(params, 1, 0, 2)?;
    let sig = s.tape.narrow(params, 1, 2, 2)?;
    let rho = s.tape.narrow(params, 1, 4, 1)?;

    let diff = s.tape.sub(truth, mu)?;
    let z = s.tape.div(diff, sig)?;
    let zx = s.tape.narrow(z, 1, 0, 1)?;
    let zy = s.tape.narrow(z, 1, 1, 1)?;
    let zx2 = s.tape.square(zx)?;
    let zy2 = s.tape.square(zy)?;
    let sq = s.tape.add(zx2, zy2)?;
    let cross = s.tape.mul(zx, zy)?;
    let cross = s.tape.mul(cross, rho)?;
    let cross = s.tape.scale(cross, -2.0)?;
    let quad = s.tape.add(sq, cross)?;
    let rho2 = s.tape.square(rho)?;
    let om = s.tape.affine(rho2, -1.0, 1.0)?;
    let quad = s.tape.div(quad, om)?;
    let quad = s.tape.scale(quad, 0.5)?;

    let log_sig = s.tape.log(sig)?;
    let lsx = s.tape.narrow(log_sig, 1, 0, 1)?;
    let lsy = s.tape.narrow(log_sig, 1, 1, 1)?;
    let log_om = s.tape.log(om)?;
    let log_om = s.tape.scale(log_om, 0.5)?;

    let a = s.tape.add(lsx, lsy)?;
    let b = s.tape.add(log_om, quad)?;
    let per_point = s.tape.add(a, b)?;
    let per_point = s.tape.add_scalar(per_point, (2.0 * PI).ln())?;
    Ok(s.tape.mean(per_point)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use trajrisk_tensor::ParamStore;

    /// Direct transcription of the density with the covariance matrix inverted by hand.
    fn oracle_nll(mu: [f64; 2], sigma: [f64; 2], rho: f64, p: [f64; 2]) -> f64 {
        let c = rho * sigma[0] * sigma[1];
        let (a, d) = (sigma[0] * sigma[0], sigma[1] * sigma[1]);
        let det = a * d - c * c;
        let (x, y) = (p[0] - mu[0], p[1] - mu[1]);
        let q = (d * x * x - 2.0 * c * x * y + a * y * y) / det;
        -((-0.5 * q).exp() / (2.0 * PI * det.sqrt())).ln()
    }

    #[test]
    fn unit_density_at_mean() {
        let d = bivariate_density([0.3, -1.0], [1.0, 1.0], 0.0, [0.3, -1.0]);
        assert!((d - 1.0 / (2.0 * PI)).abs() < 1e-12);
        let nll = point_nll([0.3, -1.0], [1.0, 1.0], 0.0, [0.3, -1.0]);
        assert!((nll - (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_correlation_factorizes() {
        let uni = |m: f64, s: f64, x: f64| 0.5 * (2.0 * PI).ln() + s.ln() + (x - m).powi(2) / (2.0 * s * s);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mu = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let sg = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
            let p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let joint = point_nll(mu, sg, 0.0, p);
            let sum = uni(mu[0], sg[0], p[0]) + uni(mu[1], sg[1], p[1]);
            assert!((joint - sum).abs() < 1e-12, "{joint} vs {sum}");
            let d = bivariate_density(mu, sg, 0.0, p);
            let f = (-uni(mu[0], sg[0], p[0])).exp() * (-uni(mu[1], sg[1], p[1])).exp();
            assert!((d - f).abs() < 1e-12 * f.max(1e-300).max(d));
        }
    }

    #[test]
    fn tape_loss_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, l) = (3, 4);
        let mut params = vec![0.0; n * 5 * l];
        let mut truth = vec![0.0; n * l * 2];
        for v in truth.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        for i in 0..n {
            for k in 0..l {
                params[(i * 5) * l + k] = rng.random_range(-3.0..3.0);
                params[(i * 5 + 1) * l + k] = rng.random_range(-3.0..3.0);
                params[(i * 5 + 2) * l + k] = rng.random_range(0.2..2.0);
                params[(i * 5 + 3) * l + k] = rng.random_range(0.2..2.0);
                params[(i * 5 + 4) * l + k] = rng.random_range(-0.9..0.9);
            }
        }
        let store = ParamStore::new();
        let mut s = Session::new(&store, false, 0);
        let p = s.tape.constant(params.clone(), &[n, 5, l]).unwrap();
        let loss = bgpd_nll(&mut s, p, &truth).unwrap();
        let got = s.tape.value(loss)[0];
        let mut want = 0.0;
        for i in 0..n {
            for k in 0..l {
                let at = |c: usize| params[(i * 5 + c) * l + k];
                let pt = [truth[(i * l + k) * 2], truth[(i * l + k) * 2 + 1]];
                want += oracle_nll([at(0), at(1)], [at(2), at(3)], at(4), pt);
            }
        }
        want /= (n * l) as f64;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn nll_lower_bound_attained_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mu = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let sg = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
            let rho: f64 = rng.random_range(-0.99..0.99);
            let bound = (2.0 * PI * sg[0] * sg[1] * (1.0 - rho * rho).sqrt()).ln();
            let p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert!(point_nll(mu, sg, rho, p) >= bound - 1e-12);
            assert!((point_nll(mu, sg, rho, mu) - bound).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let store = ParamStore::new();
        let mut s = Session::new(&store, false, 0);
        let p = s.tape.constant(vec![0.0; 10], &[1, 5, 2]).unwrap();
        assert!(matches!(bgpd_nll(&mut s, p, &[0.0; 3]), Err(Error::Shape { .. })));
    }
}
