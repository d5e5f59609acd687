//! Truncated discrete Gaussians over Z_q, finite densities, and the
//! Hellinger and total variation distances between them.

use std::collections::BTreeMap;

use rand::Rng;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::ringmod::Modulus;

/// Above this many support points the sampler switches from the explicit
/// prefix table to the closed-form midpoint CDF.
const TABLE_LIMIT: u128 = 1 << 16;

/// Weight of x under the unnormalized Gaussian exp(-π x² / B²).
fn rho(x: f64, width: f64) -> f64 {
    (-std::f64::consts::PI * x * x / (width * width)).exp()
}

#[derive(Clone, Debug)]
enum Cdf {
    /// Support points from `lo` upward with inclusive prefix sums of the
    /// normalized weights.
    Table { lo: i128, prefix: Vec<f64>, log_norm: f64 },
    /// Support [-t, t]; normalizer from the midpoint integral.
    Analytic { t: i128, log_norm: f64 },
}

/// The one-dimensional truncated discrete Gaussian over Z_q with width B,
/// supported on balanced values with |x| ≤ B. Coordinates of a k-dimensional
/// draw are independent.
#[derive(Clone, Debug)]
pub struct TruncGaussian {
    modulus: Modulus,
    width: f64,
    dim: usize,
    cdf: Cdf,
}

impl TruncGaussian {
    pub fn new(modulus: Modulus, width: f64, dim: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("Gaussian width must be positive, got {width}")));
        }
        let half = modulus.half();
        // Largest |x| in the support, clipped to the balanced range.
        let mut t = width.floor() as i128;
        let clipped = t >= half;
        if clipped {
            t = half;
        }
        let lo = if clipped { -half + 1 } else { -t };
        let size = (t - lo + 1) as u128;
        let cdf = if size <= TABLE_LIMIT {
            let weights: Vec<f64> = (lo..=t).map(|x| rho(x as f64, width)).collect();
            let log_norm = log_sum_exp(&weights.iter().map(|w| w.ln()).collect::<Vec<_>>());
            let mut prefix = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in &weights {
                acc += (w.ln() - log_norm).exp();
                prefix.push(acc);
            }
            Cdf::Table { lo, prefix, log_norm }
        } else {
            if clipped {
                return Err(Error::Config("wide Gaussians must fit inside (-q/2, q/2]".into()));
            }
            let norm = midpoint_mass(-t, t, width);
            Cdf::Analytic { t, log_norm: norm.ln() }
        };
        Ok(TruncGaussian { modulus, width, dim, cdf })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    /// Inclusive bounds of the one-dimensional support.
    pub fn support_bounds(&self) -> (i128, i128) {
        match &self.cdf {
            Cdf::Table { lo, prefix, .. } => (*lo, *lo + prefix.len() as i128 - 1),
            Cdf::Analytic { t, .. } => (-*t, *t),
        }
    }

    pub fn in_support(&self, x: i128) -> bool {
        let (lo, hi) = self.support_bounds();
        x >= lo && x <= hi
    }

    /// Natural log of the one-dimensional pmf; `-inf` off the support.
    pub fn log_pmf1(&self, x: i128) -> f64 {
        let x = self.modulus.reduce(x);
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        let xf = x as f64;
        let log_rho = -std::f64::consts::PI * xf * xf / (self.width * self.width);
        let log_norm = match &self.cdf {
            Cdf::Table { log_norm, .. } | Cdf::Analytic { log_norm, .. } => *log_norm,
        };
        log_rho - log_norm
    }

    pub fn pmf1(&self, x: i128) -> f64 {
        self.log_pmf1(x).exp()
    }

    /// Product-form pmf of a k-dimensional point.
    pub fn pmf(&self, x: &[i128]) -> f64 {
        self.log_pmf(x).exp()
    }

    pub fn log_pmf(&self, x: &[i128]) -> f64 {
        x.iter().map(|&v| self.log_pmf1(v)).sum()
    }

    /// Cumulative mass of the one-dimensional law up to and including x.
    pub fn cdf1(&self, x: i128) -> f64 {
        let (lo, hi) = self.support_bounds();
        if x < lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match &self.cdf {
            Cdf::Table { lo, prefix, .. } => prefix[(x - lo) as usize],
            Cdf::Analytic { t, log_norm } => (midpoint_mass(-*t, x, self.width).ln() - log_norm).exp(),
        }
    }

    pub fn sample1<R: Rng + ?Sized>(&self, rng: &mut R) -> i128 {
        let u: f64 = rng.gen();
        match &self.cdf {
            Cdf::Table { lo, prefix, .. } => {
                let idx = prefix.partition_point(|&p| p <= u).min(prefix.len() - 1);
                lo + idx as i128
            }
            Cdf::Analytic { t, .. } => {
                // Smallest x with cdf(x) > u.
                let (mut a, mut b) = (-*t, *t);
                while a < b {
                    let mid = a + (b - a) / 2;
                    if self.cdf1(mid) > u {
                        b = mid;
                    } else {
                        a = mid + 1;
                    }
                }
                a
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i128> {
        (0..self.dim).map(|_| self.sample1(rng)).collect()
    }

    /// The exact one-dimensional law as a density over its support.
    pub fn density1(&self) -> Result<Density> {
        let (lo, hi) = self.support_bounds();
        if (hi - lo) as u128 >= TABLE_LIMIT {
            return Err(Error::Config("support too large to enumerate".into()));
        }
        let points = (lo..=hi).map(|x| vec![x]).collect::<Vec<_>>();
        let weights = (lo..=hi).map(|x| self.pmf1(x)).collect();
        Density::new(points, weights)
    }

    /// The product law over Z_q^k, enumerated.
    pub fn density(&self) -> Result<Density> {
        let one = self.density1()?;
        let mut points: Vec<Vec<i128>> = vec![vec![]];
        let mut weights = vec![1.0];
        for _ in 0..self.dim {
            let mut np = Vec::with_capacity(points.len() * one.len());
            let mut nw = Vec::with_capacity(points.len() * one.len());
            for (p, w) in points.iter().zip(&weights) {
                for (x, wx) in one.points.iter().zip(&one.weights) {
                    let mut v = p.clone();
                    v.push(x[0]);
                    np.push(v);
                    nw.push(w * wx);
                }
            }
            points = np;
            weights = nw;
        }
        Density::new(points, weights)
    }
}

/// ∫ over [a - ½, b + ½] of exp(-π u²/B²), the midpoint estimate of Σ_{x=a}^{b} ρ(x).
fn midpoint_mass(a: i128, b: i128, width: f64) -> f64 {
    let s = std::f64::consts::PI.sqrt() / width;
    let hi = erf(s * (b as f64 + 0.5));
    let lo = erf(s * (a as f64 - 0.5));
    0.5 * width * (hi - lo)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Exact prefix sums of the one-dimensional pmf over its support, as
/// (point, cumulative mass) pairs.
pub fn cumulative_weights(modulus: Modulus, width: f64) -> Result<Vec<(i128, f64)>> {
    let g = TruncGaussian::new(modulus, width, 1)?;
    let (lo, hi) = g.support_bounds();
    if (hi - lo) as u128 >= TABLE_LIMIT {
        return Err(Error::Config("support too large to tabulate".into()));
    }
    let mut acc = 0.0;
    Ok((lo..=hi)
        .map(|x| {
            acc += g.pmf1(x);
            (x, acc)
        })
        .collect())
}

/// A probability density on a finite, ordered list of integer points.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    points: Vec<Vec<i128>>,
    weights: Vec<f64>,
}

impl Density {
    pub fn new(points: Vec<Vec<i128>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Dimension("points and weights differ in length".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("negative or NaN weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        Ok(Density { points, weights })
    }

    /// Builds a density from a weight map, normalizing the total.
    pub fn from_map(map: BTreeMap<Vec<i128>, f64>) -> Result<Self> {
        let total: f64 = map.values().sum();
        if total <= 0.0 {
            return Err(Error::Config("empty density".into()));
        }
        let (points, weights) = map.into_iter().map(|(k, v)| (k, v / total)).unzip();
        Density::new(points, weights)
    }

    pub fn points(&self) -> &[Vec<i128>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight_of(&self, p: &[i128]) -> f64 {
        self.points.iter().position(|x| x == p).map(|i| self.weights[i]).unwrap_or(0.0)
    }

    /// The law of x + shift (mod q) for x drawn from `self`.
    pub fn shifted(&self, modulus: Modulus, shift: &[i128]) -> Density {
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(shift).map(|(&a, &b)| modulus.add(a, b)).collect())
            .collect();
        Density { points, weights: self.weights.clone() }
    }

    /// Re-expresses both densities on the sorted union of their supports.
    pub fn align(a: &Density, b: &Density) -> (Density, Density) {
        let mut ma: BTreeMap<Vec<i128>, f64> = BTreeMap::new();
        let mut mb: BTreeMap<Vec<i128>, f64> = BTreeMap::new();
        for (p, w) in a.points.iter().zip(&a.weights) {
            *ma.entry(p.clone()).or_default() += w;
            mb.entry(p.clone()).or_default();
        }
        for (p, w) in b.points.iter().zip(&b.weights) {
            *mb.entry(p.clone()).or_default() += w;
            ma.entry(p.clone()).or_default();
        }
        let pa = ma.keys().cloned().collect::<Vec<_>>();
        (
            Density { points: pa.clone(), weights: ma.into_values().collect() },
            Density { points: pa, weights: mb.into_values().collect() },
        )
    }

    /// Probability of the event given as a predicate on points.
    pub fn prob<F: Fn(&[i128]) -> bool>(&self, event: F) -> f64 {
        self.points.iter().zip(&self.weights).filter(|(p, _)| event(p)).map(|(_, w)| w).sum()
    }
}

fn check_domain(f1: &Density, f2: &Density) -> Result<()> {
    if f1.points != f2.points {
        return Err(Error::Dimension("densities are on different domains".into()));
    }
    Ok(())
}

/// H² = 1 - Σ √(f1 f2).
pub fn hellinger2(f1: &Density, f2: &Density) -> Result<f64> {
    check_domain(f1, f2)?;
    let bc: f64 = f1.weights.iter().zip(&f2.weights).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((1.0 - bc).max(0.0))
}

/// TV = ½ Σ |f1 - f2|.
pub fn tv_distance(f1: &Density, f2: &Density) -> Result<f64> {
    check_domain(f1, f2)?;
    Ok(0.5 * f1.weights.iter().zip(&f2.weights).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Upper bound 1 - exp(-2π √k ‖e‖ / B) on H²(D, D + e).
pub fn shift_bound(dim: usize, shift_norm: f64, width: f64) -> f64 {
    1.0 - (-2.0 * std::f64::consts::PI * (dim as f64).sqrt() * shift_norm / width).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn md(k: u32) -> Modulus {
        Modulus::new(k).unwrap()
    }

    #[test]
    fn mode_and_symmetry() {
        let g = TruncGaussian::new(md(6), 8.0, 1).unwrap();
        let p0 = g.pmf1(0);
        for x in -8..=8 {
            assert!(g.pmf1(x) <= p0);
            assert!((g.pmf1(x) - g.pmf1(-x)).abs() < 1e-15);
        }
        assert_eq!(g.pmf1(9), 0.0);
    }

    #[test]
    fn table_q16_b2_matches_direct_sum() {
        // Direct oracle: weights exp(-π x²/4) on x ∈ {-2..2}.
        let raw: Vec<f64> = (-2..=2).map(|x: i32| (-std::f64::consts::PI * (x * x) as f64 / 4.0).exp()).collect();
        let z: f64 = raw.iter().sum();
        let g = TruncGaussian::new(md(4), 2.0, 1).unwrap();
        let table = cumulative_weights(md(4), 2.0).unwrap();
        let mut acc = 0.0;
        for (i, x) in (-2..=2).enumerate() {
            assert!((g.pmf1(x) - raw[i] / z).abs() < 1e-15);
            acc += raw[i] / z;
            assert_eq!(table[i].0, x);
            assert!((table[i].1 - acc).abs() < 1e-12);
        }
        assert!((table.last().unwrap().1 - 1.0).abs() < 1e-12);
        // The symmetric median split sits at 0.
        let mid = table.iter().position(|(_, c)| *c >= 0.5).unwrap();
        assert_eq!(table[mid].0, 0);
    }

    #[test]
    fn wide_width_wraps_whole_ring() {
        let g = TruncGaussian::new(md(3), 100.0, 1).unwrap();
        assert_eq!(g.support_bounds(), (-3, 4));
        let d = g.density1().unwrap();
        assert_eq!(d.len(), 8);
    }

    #[test]
    fn samples_respect_support_and_mean() {
        let g = TruncGaussian::new(md(10), 5.0, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let n = 100_000;
        let mut sums = [0f64; 3];
        for _ in 0..n {
            let v = g.sample(&mut rng);
            for (s, x) in sums.iter_mut().zip(&v) {
                assert!(x.abs() <= 5);
                *s += *x as f64;
            }
        }
        let sigma = 5.0 / (2.0 * std::f64::consts::PI).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < 3.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn sampler_chi_square_q16_b2() {
        let g = TruncGaussian::new(md(4), 2.0, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 1_000_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[(g.sample1(&mut rng) + 2) as usize] += 1;
        }
        let stat: f64 = (-2..=2)
            .map(|x| {
                let e = g.pmf1(x) * n as f64;
                let o = counts[(x + 2) as usize] as f64;
                (o - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new(4.0).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    #[test]
    fn analytic_path_agrees_with_table_near_threshold() {
        // Width just below the table limit against a width just above it:
        // the normalizers of both paths must agree with the continuous
        // approximation B to high relative precision.
        let m = md(40);
        let g = TruncGaussian::new(m, 30000.0, 1).unwrap();
        let h = TruncGaussian::new(m, 40000.0, 1).unwrap();
        assert!(matches!(g.cdf, Cdf::Table { .. }));
        assert!(matches!(h.cdf, Cdf::Analytic { .. }));
        for x in [0i128, 1000, -20000, 25000] {
            let ratio_g = g.pmf1(x) * 30000.0 / rho(x as f64, 30000.0);
            let ratio_h = h.pmf1(x) * 40000.0 / rho(x as f64, 40000.0);
            assert!((ratio_g - ratio_h).abs() < 1e-6, "{ratio_g} {ratio_h}");
        }
        assert!((h.cdf1(0) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn analytic_sampler_moments() {
        let h = TruncGaussian::new(md(60), 1.0e8, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| h.sample1(&mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // Truncation at |x| ≤ B sits at a = √(2π) standard deviations.
        let sigma2 = 1.0e16 / (2.0 * std::f64::consts::PI);
        let a = (2.0 * std::f64::consts::PI).sqrt();
        let std_normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let phi = (-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let shrink = 1.0 - 2.0 * a * phi / (2.0 * std_normal.cdf(a) - 1.0);
        assert!(mean.abs() < 4.0 * sigma2.sqrt() / (n as f64).sqrt());
        assert!((var / (sigma2 * shrink) - 1.0).abs() < 0.05);
    }

    #[test]
    fn distances_basic() {
        let a = Density::new(vec![vec![0], vec![1]], vec![1.0, 0.0]).unwrap();
        let b = Density::new(vec![vec![0], vec![1]], vec![0.0, 1.0]).unwrap();
        assert_eq!(hellinger2(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert!((hellinger2(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = Density::new(vec![vec![5]], vec![1.0]).unwrap();
        assert!(hellinger2(&a, &c).is_err());
    }

    #[test]
    fn shifted_gaussian_respects_bound_k2() {
        let m = md(6);
        let g = TruncGaussian::new(m, 8.0, 2).unwrap();
        let d = g.density().unwrap();
        let e = [1i128, 0];
        let (a, b) = Density::align(&d, &d.shifted(m, &e));
        let h2 = hellinger2(&a, &b).unwrap();
        assert!(h2 > 0.0 && h2 <= shift_bound(2, 1.0, 8.0));
    }

    #[test]
    fn event_probability_bounded_by_tv_exhaustive() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..50 {
            let pts: Vec<Vec<i128>> = (0..5).map(|i| vec![i]).collect();
            let w1 = random_weights(&mut rng, 5);
            let w2 = random_weights(&mut rng, 5);
            let f1 = Density::new(pts.clone(), w1).unwrap();
            let f2 = Density::new(pts, w2).unwrap();
            let tv = tv_distance(&f1, &f2).unwrap();
            for mask in 0u32..32 {
                let ev = |p: &[i128]| mask >> p[0] & 1 == 1;
                assert!((f1.prob(ev) - f2.prob(ev)).abs() <= tv + 1e-12);
            }
        }
    }

    fn random_weights(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let drift: f64 = 1.0 - w.iter().sum::<f64>();
        w[0] += drift;
        w
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tv_squared_at_most_twice_hellinger(seed in any::<u64>()) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let pts: Vec<Vec<i128>> = (0..6).map(|i| vec![i]).collect();
                let f1 = Density::new(pts.clone(), random_weights(&mut rng, 6)).unwrap();
                let f2 = Density::new(pts, random_weights(&mut rng, 6)).unwrap();
                let tv = tv_distance(&f1, &f2).unwrap();
                let h2 = hellinger2(&f1, &f2).unwrap();
                prop_assert!(tv * tv <= 2.0 * h2 + 1e-12);
                prop_assert!(h2 <= tv + 1e-12);
            }

            #[test]
            fn pmf_normalized(k in 3u32..12, width in 0.5f64..40.0) {
                let g = TruncGaussian::new(md(k), width, 1).unwrap();
                let (lo, hi) = g.support_bounds();
                let total: f64 = (lo..=hi).map(|x| g.pmf1(x)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
