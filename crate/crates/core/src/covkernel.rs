//! Matérn covariance and the modified Bessel function of the second kind.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::Location;

/// Matérn parameters stored as variances: `sigma2` (σ²), `ell` (ℓ), `nu` (ν), `tau2` (τ²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaternParams {
    pub sigma2: f64,
    pub ell: f64,
    pub nu: f64,
    pub tau2: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, ell: f64, nu: f64, tau2: f64) -> Result<Self> {
        let p = MaternParams { sigma2, ell, nu, tau2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2 > 0.0
            && self.ell > 0.0
            && self.nu > 0.0
            && self.tau2 >= 0.0
            && [self.sigma2, self.ell, self.nu, self.tau2].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "require sigma2 > 0, ell > 0, nu > 0, tau2 >= 0, all finite; got {self:?}"
            )))
        }
    }

    /// Variance at a single observed location, σ² + τ².
    pub fn sill(&self) -> f64 {
        self.sigma2 + self.tau2
    }
}

// Below this scaled distance a lag is treated as zero.
const ZERO_LAG: f64 = 1e-10;

/// Matérn covariance at distance `h`; the nugget contributes only at `h == 0`.
pub fn matern(h: f64, params: &MaternParams) -> Result<f64> {
    params.validate()?;
    if !h.is_finite() || h < 0.0 {
        return Err(Error::InvalidInput(format!("distance must be finite and nonnegative, got {h}")));
    }
    if h == 0.0 {
        return Ok(params.sill());
    }
    Ok(MaternKernel::new(*params).cov(h))
}

/// Matérn covariance at `h > 0` that always takes the general Bessel route,
/// even for half-integer smoothness.
pub fn matern_via_bessel(h: f64, params: &MaternParams) -> Result<f64> {
    params.validate()?;
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidInput(format!("distance must be finite and positive, got {h}")));
    }
    let x = h / params.ell;
    if x < ZERO_LAG {
        return Ok(params.sigma2);
    }
    let log_norm = (1.0 - params.nu) * std::f64::consts::LN_2 - ln_gamma(params.nu);
    Ok(params.sigma2 * generic_correlation(params.nu, x, log_norm))
}

/// Precomputed Matérn evaluator for hot loops. Parameters are validated once.
#[derive(Clone, Debug)]
pub struct MaternKernel {
    params: MaternParams,
    log_norm: f64,
    half_integer: Option<Vec<f64>>,
}

impl MaternKernel {
    pub fn new(params: MaternParams) -> Self {
        let nu = params.nu;
        MaternKernel {
            params,
            log_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
            half_integer: half_integer_order(nu).map(half_integer_coeffs),
        }
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    /// Covariance between two distinct observations at distance `h`.
    #[inline]
    pub fn cov(&self, h: f64) -> f64 {
        let x = h / self.params.ell;
        if x < ZERO_LAG {
            return self.params.sigma2;
        }
        let rho = match &self.half_integer {
            Some(a) => half_integer_correlation(a, x),
            None => generic_correlation(self.params.nu, x, self.log_norm),
        };
        self.params.sigma2 * rho
    }

    /// Covariance between observations `i` and `j` at locations `a`, `b`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize, a: &Location, b: &Location) -> f64 {
        if i == j {
            self.params.sill()
        } else {
            self.cov(a.dist(b))
        }
    }
}

/// Dense covariance block between index lists; the nugget appears only where
/// the row and column index coincide.
pub fn cov_block(
    rows: &[usize],
    cols: &[usize],
    locations: &[Location],
    params: &MaternParams,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = locations.len();
    if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!("index {bad} out of range for {n} locations")));
    }
    let k = MaternKernel::new(*params);
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        let (i, j) = (rows[a], cols[b]);
        k.entry(i, j, &locations[i], &locations[j])
    }))
}

fn half_integer_order(nu: f64) -> Option<usize> {
    let twice = 2.0 * nu;
    if twice.fract() == 0.0 && twice < 200.0 && (twice as u64) % 2 == 1 {
        Some(((twice as u64) - 1) as usize / 2)
    } else {
        None
    }
}

// ρ_{n+1/2}(x) = e^{-x} Σ_k a_k (2x)^{n-k}, a_k = n!/(2n)! · (n+k)!/(k!(n-k)!), a_n = 1
fn half_integer_coeffs(n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n + 1];
    a[n] = 1.0;
    for k in (1..=n).rev() {
        a[k - 1] = a[k] * k as f64 / ((n + k) * (n - k + 1)) as f64;
    }
    a
}

fn half_integer_correlation(coeffs: &[f64], x: f64) -> f64 {
    let two_x = 2.0 * x;
    coeffs.iter().fold(0.0, |acc, &a| acc * two_x + a) * (-x).exp()
}

fn generic_correlation(nu: f64, x: f64, log_norm: f64) -> f64 {
    let (mantissa, log_scale) = k_scaled_parts(nu, x);
    (nu * x.ln() - x + mantissa.ln() + log_scale + log_norm).exp()
}

/// K_ν(x) for ν > 0, x > 0. Underflows to zero for very large `x`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    check_bessel_args(nu, x)?;
    let (m, log_scale) = match half_integer_order(nu) {
        Some(n) => (half_integer_k_scaled(n, x), 0.0),
        None => k_scaled_parts(nu, x),
    };
    Ok(m * (log_scale - x).exp())
}

/// K_ν(x) computed by the Temme / Steed route regardless of ν.
pub fn bessel_k_generic(nu: f64, x: f64) -> Result<f64> {
    check_bessel_args(nu, x)?;
    let (m, log_scale) = k_scaled_parts(nu, x);
    Ok(m * (log_scale - x).exp())
}

/// e^x K_ν(x).
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    check_bessel_args(nu, x)?;
    let (m, log_scale) = k_scaled_parts(nu, x);
    Ok(m * log_scale.exp())
}

fn check_bessel_args(nu: f64, x: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("Bessel order must be positive, got {nu}")));
    }
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::Domain(format!("Bessel argument must be positive, got {x}")));
    }
    Ok(())
}

// e^x K_{n+1/2}(x) = sqrt(π/(2x)) Σ_{k=0}^{n} (n+k)!/(k!(n-k)!) (2x)^{-k}
fn half_integer_k_scaled(n: usize, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=n {
        term *= ((n + k) * (n - k + 1)) as f64 / (k as f64 * 2.0 * x);
        sum += term;
    }
    (std::f64::consts::PI / (2.0 * x)).sqrt() * sum
}

const RESCALE: f64 = 1e150;

/// Returns `(m, s)` with e^x K_ν(x) = m · e^s.
fn k_scaled_parts(nu: f64, x: f64) -> (f64, f64) {
    let steps = (nu + 0.5).floor() as usize;
    let mu = nu - steps as f64; // in [-1/2, 1/2)
    let (mut k_nu, mut k_nup1) = if x < 2.0 { temme_scaled(mu, x) } else { steed_cf2_scaled(mu, x) };
    let mut log_scale = 0.0;
    for j in 0..steps {
        let k_num1 = k_nu;
        k_nu = k_nup1;
        k_nup1 = 2.0 * (mu + j as f64 + 1.0) / x * k_nu + k_num1;
        if k_nup1.abs() > RESCALE {
            k_nu /= RESCALE;
            k_nup1 /= RESCALE;
            log_scale += RESCALE.ln();
        }
    }
    (k_nu, log_scale)
}

// Chebyshev fits of the Temme auxiliary gamma functions on |μ| ≤ 1/2.
const G1_COEFFS: [f64; 14] = [
    -1.145_164_083_662_683_1,
    0.006_360_853_113_470_843,
    0.001_862_451_930_072_068_5,
    0.000_152_833_085_873_453_5,
    0.000_017_017_464_011_802_04,
    -6.459_750_292_334_725e-7,
    -5.181_984_843_251_938e-8,
    4.518_909_289_485_818e-10,
    3.243_322_737_102_087_3e-11,
    6.830_943_402_494_752e-13,
    2.835_350_275_517_210_2e-14,
    -7.988_390_576_932_359e-16,
    -3.372_667_730_077_195e-17,
    -3.658_633_480_921_052e-20,
];

const G2_COEFFS: [f64; 15] = [
    1.882_645_524_949_671_8,
    -0.077_490_658_396_167_52,
    -0.018_256_714_847_324_93,
    0.000_633_803_020_907_489_6,
    0.000_076_229_054_350_872_9,
    -9.550_164_756_172_044e-7,
    -8.892_726_810_788_635e-8,
    -1.952_133_477_231_961_4e-9,
    -9.400_305_273_588_516e-11,
    4.687_513_384_953_239e-12,
    2.265_853_574_692_576e-13,
    -1.172_550_969_848_801_5e-15,
    -7.044_133_820_024_522e-17,
    -2.437_787_831_010_769_4e-18,
    -7.522_524_321_825_39e-20,
];

fn chebyshev(coeffs: &[f64], y: f64) -> f64 {
    let y2 = 2.0 * y;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let t = d;
        d = y2 * d - dd + c;
        dd = t;
    }
    y * d - dd + 0.5 * coeffs[0]
}

/// Returns (1/Γ(1+μ), 1/Γ(1-μ), g1, g2).
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let y = 4.0 * mu.abs() - 1.0;
    let g1 = chebyshev(&G1_COEFFS, y);
    let g2 = chebyshev(&G2_COEFFS, y);
    (1.0 / (g2 - mu * g1), 1.0 / (g2 + mu * g1), g1, g2)
}

/// Temme's series for e^x K_μ(x), e^x K_{μ+1}(x); |μ| ≤ 1/2, x < 2.
fn temme_scaled(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let half_x_mu = (mu * ln_half_x).exp();
    let pi_mu = std::f64::consts::PI * mu;
    let sigma = -mu * ln_half_x;
    let sinrat = if pi_mu.abs() < f64::EPSILON { 1.0 } else { pi_mu / pi_mu.sin() };
    let sinhrat = if sigma.abs() < f64::EPSILON { 1.0 } else { sigma.sinh() / sigma };
    let (g_1pmu, g_1mmu, g1, g2) = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut pk = 0.5 / half_x_mu * g_1pmu;
    let mut qk = 0.5 * half_x_mu * g_1mmu;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = pk;
    for k in 1..=15_000 {
        let k = k as f64;
        fk = (k * fk + pk + qk) / (k * k - mu * mu);
        ck *= half_x * half_x / k;
        pk /= k - mu;
        qk /= k + mu;
        let hk = -k * fk + pk;
        let del0 = ck * fk;
        sum0 += del0;
        sum1 += ck * hk;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    let ex = x.exp();
    (sum0 * ex, sum1 * 2.0 / x * ex)
}

/// Steed's continued fraction (Temme's CF2) for e^x K_μ(x), e^x K_{μ+1}(x); x ≥ 2.
fn steed_cf2_scaled(mu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut big_q = -ai;
    let mut s = 1.0 + big_q * delhi;
    for i in 2..=10_000 {
        ai -= 2.0 * (i - 1) as f64;
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        big_q += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi = (bi * di - 1.0) * delhi;
        hi += delhi;
        let dels = big_q * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    let k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() / s;
    let k_mup1 = k_mu * (mu + x + 0.5 - hi) / x;
    (k_mu, k_mup1)
}
