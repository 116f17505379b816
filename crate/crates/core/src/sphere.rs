//! Analytics and sampling on the unit hypersphere S^{d-1}.
//!
//! The skill prior is the uniform distribution on the sphere. Its
//! log-partition `log E_z[exp(wᵀz)]` has the closed form
//! `log[Γ(d/2) 2^{d/2-1} I_{d/2-1}(‖w‖) / ‖w‖^{d/2-1}]`, which this module
//! evaluates through the normalized power series of the modified Bessel
//! function of the first kind.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest argument accepted by the Bessel and log-partition routines.
pub const MAX_ARGUMENT: f64 = 50.0;
/// Largest Bessel order accepted (`d = 64`).
pub const MAX_ORDER: f64 = 31.0;
const SERIES_TOL: f64 = 1e-15;
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkillMode {
    #[default]
    ContinuousVmfUniform,
    OneHotDiscrete,
}

/// A latent skill: a unit vector, or a one-hot vector in discrete mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillVector {
    values: Vec<f64>,
    mode: SkillMode,
}

impl SkillVector {
    /// Normalizes `values` in continuous mode; checks one-hot structure
    /// otherwise.
    pub fn new(values: Vec<f64>, mode: SkillMode) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        match mode {
            SkillMode::ContinuousVmfUniform => {
                let n = norm(&values);
                if !(n > 1e-12) || !n.is_finite() {
                    return Err(Error::NotUnit(n));
                }
                Ok(Self {
                    values: values.iter().map(|v| v / n).collect(),
                    mode,
                })
            }
            SkillMode::OneHotDiscrete => {
                let ones = values.iter().filter(|&&v| v == 1.0).count();
                let zeros = values.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != values.len() {
                    return Err(Error::Config("skill is not one-hot".into()));
                }
                Ok(Self { values, mode })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> SkillMode {
        self.mode
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw from Unif(S^{d-1}) by normalizing a standard Gaussian draw.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SkillVector> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n >= 1e-12 {
            return Ok(SkillVector {
                values: g.iter().map(|v| v / n).collect(),
                mode: SkillMode::ContinuousVmfUniform,
            });
        }
    }
}

/// Uniformly chosen one-hot vector.
pub fn sample_one_hot<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SkillVector> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut values = vec![0.0; d];
    values[rng.random_range(0..d)] = 1.0;
    Ok(SkillVector {
        values,
        mode: SkillMode::OneHotDiscrete,
    })
}

pub fn sample_skill<R: Rng + ?Sized>(d: usize, mode: SkillMode, rng: &mut R) -> Result<SkillVector> {
    match mode {
        SkillMode::ContinuousVmfUniform => sample_uniform_sphere(d, rng),
        SkillMode::OneHotDiscrete => sample_one_hot(d, rng),
    }
}

fn check_bessel_args(v: f64, x: f64) -> Result<()> {
    if !(0.0..=MAX_ORDER).contains(&v) || !(0.0..=MAX_ARGUMENT).contains(&x) {
        return Err(Error::Range(format!(
            "bessel order {v} (max {MAX_ORDER}), argument {x} (max {MAX_ARGUMENT})"
        )));
    }
    Ok(())
}

/// `Σ_k (x²/4)^k / (k! (v+1)_k)`, the Bessel series with its leading
/// factor `(x/2)^v / Γ(v+1)` removed. Equals 1 at `x = 0`.
fn normalized_series(v: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + v));
        sum += term;
        if term < SERIES_TOL * sum {
            return sum;
        }
    }
}

/// Modified Bessel function of the first kind, `I_v(x)`, by power series.
pub fn bessel_iv(v: f64, x: f64) -> Result<f64> {
    check_bessel_args(v, x)?;
    if x == 0.0 {
        return Ok(if v == 0.0 { 1.0 } else { 0.0 });
    }
    let log_lead = v * (0.5 * x).ln() - libm::lgamma(v + 1.0);
    Ok(log_lead.exp() * normalized_series(v, x))
}

/// `log E_{z∼Unif(S^{d-1})}[exp(r·z₁)]` for `d ≥ 2`, `0 ≤ r ≤ 50`.
pub fn log_partition_norm(d: usize, r: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let v = d as f64 / 2.0 - 1.0;
    check_bessel_args(v, r)?;
    // Γ(d/2) 2^{v} I_v(r) / r^v  ==  Γ(v+1) (2/r)^v I_v(r)  ==  normalized series.
    Ok(normalized_series(v, r).ln())
}

/// Exact log-partition of the uniform skill prior at `w`.
pub fn log_partition(w: &[f64]) -> Result<f64> {
    log_partition_norm(w.len(), norm(w))
}

/// Sampled estimate of the log-partition with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// `log((1/n) Σ_i exp(wᵀz_i))` over i.i.d. uniform `z_i`.
pub fn log_partition_mc<R: Rng + ?Sized>(w: &[f64], n_samples: usize, rng: &mut R) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: n_samples,
        });
    }
    if w.iter().all(|&x| x == 0.0) {
        return Ok(McEstimate {
            estimate: 0.0,
            standard_error: 0.0,
        });
    }
    let n = n_samples as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let z = sample_uniform_sphere(w.len(), rng)?;
        let e = dot(w, z.values()).exp();
        sum += e;
        sum_sq += e * e;
    }
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean.ln(),
        standard_error: (var / n).sqrt() / mean,
    })
}

/// Second-order approximation `‖w‖² / (2d)` of the log-partition.
pub fn quadratic_approx(w: &[f64]) -> Result<f64> {
    if w.len() < 2 {
        return Err(Error::InvalidDimension(w.len()));
    }
    Ok(dot(w, w) / (2.0 * w.len() as f64))
}

/// `1 / (2d)`, the curvature of the log-partition at the origin.
pub fn quadratic_coefficient(d: usize) -> f64 {
    1.0 / (2.0 * d as f64)
}

/// von Mises–Fisher parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mean: Vec<f64>,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mean: Vec<f64>, kappa: f64) -> Result<Self> {
        let n = norm(&mean);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit(n));
        }
        if !(kappa >= 0.0) {
            return Err(Error::Range(format!("vMF concentration {kappa} < 0")));
        }
        Ok(Self { mean, kappa })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Log density w.r.t. the uniform probability measure on the sphere:
/// `κ μᵀz − log E_unif[exp(κ μᵀz)]`.
pub fn vmf_log_density(z: &[f64], params: &VmfParams) -> Result<f64> {
    if z.len() != params.mean.len() {
        return Err(Error::InvalidDimension(z.len()));
    }
    let n = norm(z);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit(n));
    }
    if params.kappa == 0.0 {
        return Ok(0.0);
    }
    Ok(params.kappa * dot(&params.mean, z) - log_partition_norm(z.len(), params.kappa)?)
}

/// Cosines `uᵀμ̂` of draws `x ∼ N(μ, σ²I)` kept only when
/// `|‖x‖ − ‖μ‖| < shell`, with `u = x/‖x‖`. Returns the cosines and the
/// number of draws it took to collect `n_accept` of them.
pub fn shell_conditioned_cosines<R: Rng + ?Sized>(
    mu: &[f64],
    sigma: f64,
    shell: f64,
    n_accept: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    let r_mu = norm(mu);
    if mu.is_empty() || r_mu == 0.0 {
        return Err(Error::InvalidDimension(mu.len()));
    }
    if !(sigma > 0.0) || !(shell > 0.0) {
        return Err(Error::Range(format!("sigma {sigma} and shell {shell} must be positive")));
    }
    let mut cosines = Vec::with_capacity(n_accept);
    let mut x = vec![0.0; mu.len()];
    let mut attempts = 0usize;
    while cosines.len() < n_accept {
        attempts += 1;
        for (xi, m) in x.iter_mut().zip(mu) {
            *xi = m + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let r = norm(&x);
        if (r - r_mu).abs() < shell {
            cosines.push(dot(&x, mu) / (r * r_mu));
        }
    }
    Ok((cosines, attempts))
}

/// Probability that the cosine `μᵀz` of `z ∼ vMF(μ, κ)` on S^{d−1} falls in
/// each interval `[edges[i], edges[i+1])`. In angle form the cosine density
/// is `∝ sin^{d−2}θ · exp(κ cos θ)`, integrated here with composite Simpson.
pub fn vmf_cosine_bin_probs(d: usize, kappa: f64, edges: &[f64]) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges[0] < -1.0 || edges[edges.len() - 1] > 1.0 {
        return Err(Error::Range("bin edges must increase within [-1, 1]".into()));
    }
    let density = |theta: f64| theta.sin().powi(d as i32 - 2) * (kappa * (theta.cos() - 1.0)).exp();
    let integrate = |a: f64, b: f64| {
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut s = density(a) + density(b);
        for i in 1..n {
            s += density(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let total = integrate(0.0, core::f64::consts::PI);
    // Cosine bins [lo, hi) are angle bins [acos hi, acos lo].
    Ok(edges
        .windows(2)
        .map(|w| integrate(w[1].acos(), w[0].acos()) / total)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vmf_cosine_bins_match_closed_form_in_three_dimensions() {
        // d = 3: P(t ≤ x) = (e^{κx} − e^{−κ}) / (e^{κ} − e^{−κ}).
        let kappa = 4.0;
        let cdf = |x: f64| ((kappa * x).exp() - (-kappa).exp()) / (kappa.exp() - (-kappa).exp());
        let edges: Vec<f64> = (0..=10).map(|i| -1.0 + 0.2 * i as f64).collect();
        let probs = vmf_cosine_bin_probs(3, kappa, &edges).unwrap();
        for (p, w) in probs.iter().zip(edges.windows(2)) {
            assert!((p - (cdf(w[1]) - cdf(w[0]))).abs() < 1e-9);
        }
        let uniform = vmf_cosine_bin_probs(2, 0.0, &[-1.0, 0.0, 1.0]).unwrap();
        assert!((uniform[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bessel_small_cases() {
        assert_eq!(bessel_iv(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_iv(1.0, 0.0).unwrap(), 0.0);
        assert!(bessel_iv(0.0, 51.0).is_err());
        assert!(bessel_iv(-1.0, 1.0).is_err());
    }

    #[test]
    fn bessel_i0_one_matches_trapezoid_integral() {
        // I_0(1) = (1/π) ∫_0^π exp(cos θ) dθ; the periodic trapezoid rule is
        // spectrally accurate here.
        let n = 2000;
        let h = core::f64::consts::PI / n as f64;
        let mut s = 0.5 * (1f64.exp() + (-1f64).exp());
        for i in 1..n {
            s += (i as f64 * h).cos().exp();
        }
        let integral = s * h / core::f64::consts::PI;
        let series = bessel_iv(0.0, 1.0).unwrap();
        assert!((series - integral).abs() < 1e-12);
        assert!((series - 1.266_065_877_752_0).abs() < 1e-10);
    }

    #[test]
    fn log_partition_matches_bessel_formula() {
        for d in [2usize, 3, 4, 8, 16, 64] {
            for r in [0.3, 1.0, 5.0, 20.0] {
                let v = d as f64 / 2.0 - 1.0;
                let direct = libm::lgamma(d as f64 / 2.0)
                    + v * 2f64.ln()
                    + bessel_iv(v, r).unwrap().ln()
                    - v * r.ln();
                let got = log_partition_norm(d, r).unwrap();
                assert!((got - direct).abs() < 1e-10 * (1.0 + direct.abs()), "d={d} r={r}");
            }
        }
    }

    #[test]
    fn log_partition_edge_cases() {
        assert_eq!(log_partition(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(log_partition(&[1.0]).is_err());
        assert!(log_partition(&[60.0, 0.0]).is_err());
        let lp = log_partition(&[1.0, 0.0]).unwrap();
        assert!((lp - 0.235_914).abs() < 1e-6, "{lp}");
    }

    #[test]
    fn quadratic_approx_values() {
        assert_eq!(quadratic_approx(&[1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(quadratic_approx(&[0.0, 0.0]).unwrap(), 0.0);
        let w = [0.1, 0.0];
        let q = quadratic_approx(&w).unwrap();
        assert!((log_partition(&w).unwrap() - q).abs() / q < 0.01);
    }

    #[test]
    fn uniform_sample_is_unit_and_rejects_zero_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..10 {
            let z = sample_uniform_sphere(d, &mut rng).unwrap();
            assert!((norm(z.values()) - 1.0).abs() < 1e-9);
        }
        assert_eq!(
            sample_uniform_sphere(0, &mut rng).unwrap_err(),
            Error::InvalidDimension(0)
        );
    }

    #[test]
    fn one_hot_skill_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = sample_skill(5, SkillMode::OneHotDiscrete, &mut rng).unwrap();
        assert_eq!(z.values().iter().sum::<f64>(), 1.0);
        assert!(SkillVector::new(vec![1.0, 1.0], SkillMode::OneHotDiscrete).is_err());
    }

    #[test]
    fn vmf_density_basics() {
        let mu = VmfParams::new(vec![0.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(vmf_log_density(&[1.0, 0.0, 0.0], &mu).unwrap(), 0.0);
        let p = VmfParams::new(vec![0.0, 0.0, 1.0], 2.0).unwrap();
        let at_mean = vmf_log_density(&[0.0, 0.0, 1.0], &p).unwrap();
        let off = vmf_log_density(&[0.6, 0.0, 0.8], &p).unwrap();
        assert!(at_mean > off);
        assert!(matches!(
            vmf_log_density(&[1.0, 1.0, 0.0], &p),
            Err(Error::NotUnit(_))
        ));
        assert!(VmfParams::new(vec![2.0, 0.0], 1.0).is_err());
    }
}
