//! Serial-correlation diagnostics for return series.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// ARMA model with Box-Jenkins signs:
/// `x_t = sum phi_i x_{t-i} + e_t - sum theta_j e_{t-j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ARMASpec {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub innovation_variance: f64,
}

impl ARMASpec {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, innovation_variance: f64) -> Result<Self> {
        if !(innovation_variance > 0.0) || ar.iter().chain(&ma).any(|v| !v.is_finite()) {
            return Err(Error::Domain("innovation variance must be positive".into()));
        }
        Ok(Self { ar, ma, innovation_variance })
    }

    pub fn white_noise(innovation_variance: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), innovation_variance)
    }

    /// Roots of the AR polynomial lie outside the unit circle.
    pub fn is_stationary(&self) -> bool {
        let p = self.ar.len();
        if p == 0 {
            return true;
        }
        let companion = DMatrix::from_fn(p, p, |r, c| {
            if r == 0 {
                self.ar[c]
            } else if r == c + 1 {
                1.0
            } else {
                0.0
            }
        });
        companion.complex_eigenvalues().iter().all(|z| z.norm() < 1.0 - 1e-12)
    }

    /// Simulates `len` values after a burn-in of `burn_in` draws.
    pub fn simulate<R: Rng + ?Sized>(&self, len: usize, burn_in: usize, rng: &mut R) -> Vec<f64> {
        let sd = self.innovation_variance.sqrt();
        let total = len + burn_in;
        let mut x = vec![0.0; total];
        let mut e = vec![0.0; total];
        for t in 0..total {
            e[t] = sd * rng.sample::<f64, _>(StandardNormal);
            let mut v = e[t];
            for (i, phi) in self.ar.iter().enumerate() {
                if t > i {
                    v += phi * x[t - i - 1];
                }
            }
            for (j, theta) in self.ma.iter().enumerate() {
                if t > j {
                    v -= theta * e[t - j - 1];
                }
            }
            x[t] = v;
        }
        x.split_off(burn_in)
    }
}

fn centred(series: &[f64], max_lag: usize) -> Result<(Vec<f64>, f64)> {
    if series.len() <= max_lag {
        return Err(Error::Domain(format!("series of length {} too short for lag {max_lag}", series.len())));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let d: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let ss: f64 = d.iter().map(|v| v * v).sum();
    if !(ss > 0.0) {
        return Err(Error::Domain("series has zero variance".into()));
    }
    Ok((d, ss))
}

/// Sample autocorrelations for lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let (d, ss) = centred(series, max_lag)?;
    Ok((0..=max_lag).map(|k| d.iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / ss).collect())
}

/// Partial autocorrelations for lags `1..=max_lag` (index `k - 1`), by the
/// Durbin-Levinson recursion.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let r = acf(series, max_lag)?;
    Ok(durbin_levinson(&r))
}

fn durbin_levinson(r: &[f64]) -> Vec<f64> {
    let max_lag = r.len() - 1;
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = r[k] - (1..k).map(|j| phi[j - 1] * r[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * r[j]).sum::<f64>();
        let kk = num / den;
        let next: Vec<f64> = (1..k).map(|j| phi[j - 1] - kk * phi[k - j - 1]).chain(std::iter::once(kk)).collect();
        phi = next;
        out.push(kk);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortmanteauResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Ljung-Box test of no serial correlation up to `max_lag`.
pub fn serial_correlation_test(series: &[f64], max_lag: usize) -> Result<PortmanteauResult> {
    if max_lag == 0 || series.len() <= max_lag + 1 {
        return Err(Error::Domain("need 1 <= max_lag < len - 1".into()));
    }
    let r = acf(series, max_lag)?;
    let t = series.len() as f64;
    let statistic = t * (t + 2.0) * (1..=max_lag).map(|k| r[k] * r[k] / (t - k as f64)).sum::<f64>();
    let chi = ChiSquared::new(max_lag as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let p_value = chi.sf(statistic).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(PortmanteauResult {
        statistic,
        degrees_of_freedom: max_lag,
        p_value,
    })
}

/// Default lag count: a quarter of the series length.
pub fn default_max_lag(len: usize) -> usize {
    (len / 4).max(1)
}

pub fn bonferroni_alpha(alpha_star: f64, tests: usize) -> Result<f64> {
    if tests == 0 || !(alpha_star > 0.0 && alpha_star < 1.0) {
        return Err(Error::Domain("need alpha in (0, 1) and at least one test".into()));
    }
    Ok(alpha_star / tests as f64)
}

/// Chance of at least one false rejection among independent tests.
pub fn familywise_error(alpha: f64, tests: usize) -> Result<f64> {
    if tests == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain("need alpha in (0, 1) and at least one test".into()));
    }
    Ok(1.0 - (1.0 - alpha).powi(tests as i32))
}

/// Lag at which an AR(1) autocorrelation halves.
pub fn ar1_half_life(phi: f64) -> Result<f64> {
    if !(phi.abs() > 0.0 && phi.abs() < 1.0) {
        return Err(Error::Domain("need 0 < |phi| < 1".into()));
    }
    Ok(0.5f64.ln() / phi.abs().ln())
}

const PSI_CAP: usize = 100_000;

/// Theoretical autocorrelations for lags `0..=max_lag`.
pub fn theoretical_arma_acf(spec: &ARMASpec, max_lag: usize) -> Result<Vec<f64>> {
    if !spec.is_stationary() {
        return Err(Error::Nonstationary);
    }
    let q = spec.ma.len();
    if spec.ar.is_empty() {
        // closed form for a moving average
        let theta = |i: usize| if i == 0 { -1.0 } else { spec.ma[i - 1] };
        let gamma = |k: usize| -> f64 {
            if k > q {
                0.0
            } else {
                (0..=q - k).map(|i| theta(i) * theta(i + k)).sum()
            }
        };
        let g0 = gamma(0);
        return Ok((0..=max_lag).map(|k| gamma(k) / g0).collect());
    }
    if spec.ar.len() == 1 && q == 0 {
        return Ok((0..=max_lag).map(|k| spec.ar[0].powi(k as i32)).collect());
    }
    // general case: autocovariances from the infinite moving-average weights
    let mut psi = vec![1.0];
    let mut quiet = 0;
    while psi.len() < PSI_CAP {
        let j = psi.len();
        let mut v = if j <= q { -spec.ma[j - 1] } else { 0.0 };
        for (i, phi) in spec.ar.iter().enumerate() {
            if j > i {
                v += phi * psi[j - i - 1];
            }
        }
        psi.push(v);
        quiet = if v.abs() < 1e-17 { quiet + 1 } else { 0 };
        if j > q && quiet > spec.ar.len() {
            break;
        }
    }
    let gamma = |k: usize| -> f64 { psi.iter().zip(psi.iter().skip(k)).map(|(a, b)| a * b).sum() };
    let g0 = gamma(0);
    Ok((0..=max_lag).map(|k| gamma(k) / g0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn acf_examples() {
        let mut r = rng(1);
        let x = ARMASpec::new(vec![0.6], vec![], 1.0).unwrap().simulate(10_000, 500, &mut r);
        let a = acf(&x, 5).unwrap();
        assert_eq!(a[0], 1.0);
        for k in 1..=5 {
            assert!((a[k] - 0.6f64.powi(k as i32)).abs() < 0.05);
        }
        let x = ARMASpec::new(vec![], vec![0.5], 1.0).unwrap().simulate(10_000, 0, &mut r);
        assert!((acf(&x, 1).unwrap()[1] + 0.4).abs() < 0.05);
        assert!(acf(&[2.0; 10], 2).is_err());
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn pacf_examples() {
        let mut r = rng(2);
        let t = 10_000;
        let x = ARMASpec::new(vec![0.6], vec![], 1.0).unwrap().simulate(t, 500, &mut r);
        let p = pacf(&x, 6).unwrap();
        assert!((p[0] - 0.6).abs() < 2.0 / (t as f64).sqrt());
        for v in &p[1..] {
            assert!(v.abs() < 2.0 / (t as f64).sqrt() * 1.5);
        }
        assert_eq!(p[0], acf(&x, 6).unwrap()[1]);
        let w = ARMASpec::white_noise(1.0).unwrap().simulate(t, 0, &mut r);
        for v in pacf(&w, 20).unwrap() {
            assert!(v.abs() < 3.0 / (t as f64).sqrt());
        }
    }

    #[test]
    fn durbin_levinson_recovers_ar2() {
        // exact AR(2) autocorrelations give phi_2 at lag 2 and zero after
        let spec = ARMASpec::new(vec![0.5, 0.3], vec![], 1.0).unwrap();
        let r = theoretical_arma_acf(&spec, 6).unwrap();
        let p = durbin_levinson(&r);
        assert_abs_diff_eq!(p[1], 0.3, epsilon = 1e-10);
        for v in &p[2..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn portmanteau_calibration() {
        let mut r = rng(3);
        let wn = ARMASpec::white_noise(1.0).unwrap();
        let trials = 500;
        let mut rejections = 0;
        for _ in 0..trials {
            let x = wn.simulate(10_000, 0, &mut r);
            let p = serial_correlation_test(&x, 20).unwrap().p_value;
            assert!(p > 0.0 && p <= 1.0);
            rejections += usize::from(p < 0.05);
        }
        let rate = rejections as f64 / trials as f64;
        assert!((0.02..=0.08).contains(&rate), "{rate}");
        let ar = ARMASpec::new(vec![0.8], vec![], 1.0).unwrap();
        let strong = (0..200)
            .filter(|_| serial_correlation_test(&ar.simulate(500, 200, &mut r), 10).unwrap().p_value < 0.001)
            .count();
        assert!(strong >= 198);
    }

    #[test]
    fn multiplicity() {
        assert_abs_diff_eq!(bonferroni_alpha(0.05, 18).unwrap(), 0.002778, epsilon = 5e-7);
        assert_eq!(bonferroni_alpha(0.05, 1).unwrap(), 0.05);
        assert_eq!(bonferroni_alpha(0.10, 4).unwrap(), 0.025);
        assert!((familywise_error(0.05, 18).unwrap() - 0.60).abs() < 0.005);
        assert_abs_diff_eq!(familywise_error(0.05, 1).unwrap(), 0.05, epsilon = 1e-15);
        let mut last = 0.0;
        for n in 1..200 {
            let v = familywise_error(0.05, n).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(last > 0.9999);
        assert!(bonferroni_alpha(0.05, 0).is_err());
    }

    #[test]
    fn theoretical_examples() {
        let ar = theoretical_arma_acf(&ARMASpec::new(vec![0.5], vec![], 1.0).unwrap(), 3).unwrap();
        assert_eq!(ar, vec![1.0, 0.5, 0.25, 0.125]);
        let ma = theoretical_arma_acf(&ARMASpec::new(vec![], vec![0.5], 1.0).unwrap(), 3).unwrap();
        assert_abs_diff_eq!(ma[1], -0.4, epsilon = 1e-15);
        assert_eq!((ma[2], ma[3]), (0.0, 0.0));
        let wn = theoretical_arma_acf(&ARMASpec::white_noise(2.0).unwrap(), 4).unwrap();
        assert_eq!(wn, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            theoretical_arma_acf(&ARMASpec::new(vec![1.1], vec![], 1.0).unwrap(), 2),
            Err(Error::Nonstationary)
        );
        assert_eq!(
            theoretical_arma_acf(&ARMASpec::new(vec![0.5, 0.6], vec![], 1.0).unwrap(), 2),
            Err(Error::Nonstationary)
        );
        // ARMA(1,1) closed form: rho1 = (1 - phi theta)(phi - theta) / (1 + theta^2 - 2 phi theta)
        let (phi, theta) = (0.7, 0.4);
        let arma = theoretical_arma_acf(&ARMASpec::new(vec![phi], vec![theta], 1.0).unwrap(), 3).unwrap();
        let rho1 = (1.0 - phi * theta) * (phi - theta) / (1.0 + theta * theta - 2.0 * phi * theta);
        assert_abs_diff_eq!(arma[1], rho1, epsilon = 1e-12);
        assert_abs_diff_eq!(arma[2], phi * rho1, epsilon = 1e-12);
    }

    #[test]
    fn theory_matches_long_simulation() {
        let mut r = rng(4);
        for spec in [
            ARMASpec::new(vec![0.5, 0.2], vec![0.3], 1.0).unwrap(),
            ARMASpec::new(vec![], vec![0.6, -0.3], 1.0).unwrap(),
            ARMASpec::new(vec![-0.4], vec![], 2.0).unwrap(),
        ] {
            let x = spec.simulate(100_000, 1000, &mut r);
            let emp = acf(&x, 5).unwrap();
            let th = theoretical_arma_acf(&spec, 5).unwrap();
            for k in 0..=5 {
                assert!((emp[k] - th[k]).abs() < 0.02, "lag {k}: {} vs {}", emp[k], th[k]);
            }
        }
    }

    #[test]
    fn half_life() {
        for phi in [0.1, 0.5, 0.9, 0.99] {
            let k = ar1_half_life(phi).unwrap();
            assert_abs_diff_eq!(phi.powf(k), 0.5, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn correlations_bounded(xs in prop::collection::vec(-10.0f64..10.0, 12..60)) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
            let lag = xs.len() / 4;
            for v in acf(&xs, lag).unwrap() {
                prop_assert!(v.abs() <= 1.0 + 1e-12);
            }
            for v in pacf(&xs, lag).unwrap() {
                prop_assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
