//! Maximum likelihood estimation of the Matérn parameters.
//!
//! The search runs over unconstrained coordinates `(σ₀, ℓ₀, ν₀, τ₀)` with
//! `σ = 2/1.1^σ₀`, `ℓ = 1/1.5^ℓ₀`, `ν = 1/1.2^ν₀`, `τ = 1/2^τ₀`. Each sweep
//! applies a Brent maximizer along a set of directions, starting with the
//! coordinate axes in that order. With [`Search::Powell`] the net move of a
//! sweep may replace one direction, which lets the search follow the curved
//! ridges typical of Matérn likelihoods.

use std::time::Instant;

use crate::covkernel::MaternParams;
use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::loglik::{HConfig, LikelihoodProblem};

const SIGMA_BASE: f64 = 1.1;
const ELL_BASE: f64 = 1.5;
const NU_BASE: f64 = 1.2;
const TAU_BASE: f64 = 2.0;

/// Unconstrained optimization coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReparamPoint {
    pub sigma0: f64,
    pub ell0: f64,
    pub nu0: f64,
    pub tau0: f64,
}

impl Default for ReparamPoint {
    /// The initial guess `(2, 2, 1, 15)`.
    fn default() -> Self {
        ReparamPoint { sigma0: 2.0, ell0: 2.0, nu0: 1.0, tau0: 15.0 }
    }
}

impl ReparamPoint {
    pub fn new(sigma0: f64, ell0: f64, nu0: f64, tau0: f64) -> Self {
        ReparamPoint { sigma0, ell0, nu0, tau0 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.sigma0, self.ell0, self.nu0, self.tau0]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ReparamPoint { sigma0: a[0], ell0: a[1], nu0: a[2], tau0: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Maps coordinates to parameters; σ and τ are squared.
pub fn reparam_to_params(p: &ReparamPoint) -> MaternParams {
    let sigma = 2.0 / SIGMA_BASE.powf(p.sigma0);
    let tau = 1.0 / TAU_BASE.powf(p.tau0);
    MaternParams {
        sigma2: sigma * sigma,
        ell: 1.0 / ELL_BASE.powf(p.ell0),
        nu: 1.0 / NU_BASE.powf(p.nu0),
        tau2: tau * tau,
    }
}

/// Inverse of [`reparam_to_params`]; needs `τ² > 0`.
pub fn params_to_reparam(params: &MaternParams) -> Result<ReparamPoint> {
    params.validate()?;
    if params.tau2 <= 0.0 {
        return Err(Error::InvalidParams("τ² = 0 has no finite reparameterization".into()));
    }
    Ok(ReparamPoint {
        sigma0: (2.0 / params.sigma2.sqrt()).ln() / SIGMA_BASE.ln(),
        ell0: -params.ell.ln() / ELL_BASE.ln(),
        nu0: -params.nu.ln() / NU_BASE.ln(),
        tau0: -params.tau2.sqrt().ln() / TAU_BASE.ln(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrentResult {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

/// Brent's derivative-free scalar maximization on `[lo, hi]`.
///
/// Golden-section steps are replaced by parabolic interpolation when the
/// parabola is well defined and stays inside the bracket. Non-finite
/// values count as −∞ and disable interpolation through them.
pub fn brent_max_1d<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64, max_evals: usize) -> Result<BrentResult> {
    brent_max_1d_from(f, lo, hi, None, tol, 0.0, max_evals)
}

/// Probes near the best value needed before a plateau ends a search.
const FLAT_PROBES: usize = 4;
/// Minimum spread of those probes, in units of the Brent tolerance.
const FLAT_SPAN: f64 = 100.0;

/// Brent maximization started from an interior point `start = (x, f(x))`
/// whose value is already known. The result is never worse than the start.
/// With `flat_tol > 0` the search also ends on a plateau: at least four
/// probes within `flat_tol` of the best value, spread over `100·tol`.
pub fn brent_max_1d_from<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    start: Option<(f64, f64)>,
    tol: f64,
    flat_tol: f64,
    max_evals: usize,
) -> Result<BrentResult> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("invalid bracket ({lo}, {hi})")));
    }
    if !(tol > 0.0) || max_evals == 0 {
        return Err(Error::InvalidInput("Brent needs tol > 0 and max_evals >= 1".into()));
    }
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    // minimize g = −f
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (lo, hi);
    let (mut x, mut fx, mut evals) = match start {
        Some((x0, f0)) if x0 > lo && x0 < hi => (x0, if f0.is_finite() { -f0 } else { f64::INFINITY }, 0),
        Some((x0, _)) => return Err(Error::InvalidInput(format!("start {x0} outside ({lo}, {hi})"))),
        None => {
            let x0 = a + golden * (b - a);
            (x0, g(x0), 1)
        }
    };
    let (mut w, mut v) = (x, x);
    let (mut fw, mut fv) = (fx, fx);
    let mut probes: Vec<(f64, f64)> = vec![(x, fx)];
    let (mut d, mut e) = (0.0f64, 0.0f64);

    let mut flat = false;
    while evals < max_evals && !flat {
        let xm = 0.5 * (a + b);
        let tol1 = f64::EPSILON.sqrt() * 1e-3 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        evals += 1;
        if flat_tol > 0.0 && fu.is_finite() {
            probes.push((u, fu));
            let top = fu.min(fx);
            let near = probes.iter().filter(|p| p.1 <= top + flat_tol);
            let (lo_x, hi_x, count) =
                near.fold((f64::INFINITY, f64::NEG_INFINITY, 0), |(l, h, c), p| (l.min(p.0), h.max(p.0), c + 1));
            flat = count >= FLAT_PROBES && hi_x - lo_x >= FLAT_SPAN * tol;
        }
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    if fx == f64::INFINITY {
        return Err(Error::UndefinedOnBracket);
    }
    Ok(BrentResult { x, value: -fx, evals })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Sigma,
    Ell,
    Nu,
    Tau,
}

impl Coordinate {
    pub const ALL: [Coordinate; 4] = [Coordinate::Sigma, Coordinate::Ell, Coordinate::Nu, Coordinate::Tau];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["sigma0", "ell0", "nu0", "tau0"][self.index()]
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Coordinate::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Outer loop of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    /// Cyclic coordinate ascent.
    Coordinate,
    /// Coordinate sweeps whose net moves replace directions, as in Powell's
    /// method.
    Powell,
}

/// What produced a trace entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Initial,
    /// Brent search along one coordinate.
    Axis(Coordinate),
    /// Brent search along a direction built from earlier sweeps.
    Direction,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Initial => "init",
            Step::Axis(c) => c.name(),
            Step::Direction => "direction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub initial: ReparamPoint,
    /// A sweep improving L by less than this ends the search.
    pub threshold: f64,
    /// Budget of one-dimensional optimizations.
    pub max_iters: usize,
    /// Bracket half-width per coordinate for the first sweep. Later brackets
    /// follow the last step along each direction, down to 1/16 of this.
    pub half_width: [f64; 4],
    /// Doublings of the full bracket when the maximizer lands on an edge.
    pub max_expansions: usize,
    /// Brent tolerance in reparameterized units.
    pub brent_tol: f64,
    /// Likelihood evaluations per Brent call.
    pub brent_max_evals: usize,
    /// A line search whose probes agree to within this ends early.
    pub flat_tol: f64,
    /// Coordinates that are optimized; the others stay at their initial value.
    pub free: [bool; 4],
    pub search: Search,
    pub h: HConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            initial: ReparamPoint::default(),
            threshold: 1e-4,
            max_iters: 400,
            half_width: [8.0; 4],
            max_expansions: 3,
            brent_tol: 1e-3,
            brent_max_evals: 60,
            flat_tol: 1e-6,
            free: [true; 4],
            search: Search::Powell,
            h: HConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self.half_width.iter().all(|w| *w > 0.0 && w.is_finite());
        if !(self.threshold > 0.0) || !(self.flat_tol >= 0.0) || self.max_iters == 0 || !widths || !(self.brent_tol > 0.0) || self.brent_max_evals == 0 {
            return Err(Error::InvalidInput(format!("invalid optimizer configuration {self:?}")));
        }
        if !self.initial.is_finite() {
            return Err(Error::InvalidInput("initial point must be finite".into()));
        }
        Ok(())
    }
}

/// One accepted state of the search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    /// Number of one-dimensional optimizations done so far.
    pub iteration: usize,
    pub step: Step,
    pub point: ReparamPoint,
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub theta_hat: MaternParams,
    pub point: ReparamPoint,
    pub loglik: f64,
    /// One-dimensional optimizations used.
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// L improvement of the last full sweep.
    pub last_sweep_delta: f64,
    pub trace: Vec<TraceEntry>,
    pub seconds: f64,
}

/// Distance bins used by [`empirical_start`].
const START_BINS: usize = 50;
/// Points used by [`empirical_start`]; larger inputs are strided.
const START_POINTS: usize = 2000;

/// A data-driven starting point: `σ²` from the second moment of `z`, `ℓ`
/// matching the first lag where the binned empirical covariance falls below
/// `σ²/e`, and `ν`, `τ` from the default guess.
pub fn empirical_start(locations: &[Location], z: &[f64]) -> Result<ReparamPoint> {
    crate::geometry::validate_locations(locations)?;
    if z.len() != locations.len() {
        return Err(Error::DimensionMismatch { expected: locations.len(), got: z.len() });
    }
    let n = z.len();
    let stride = n.div_ceil(START_POINTS).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let var = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>() / idx.len() as f64;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::InvalidInput("observations have zero second moment".into()));
    }
    let bbox = crate::geometry::BoundingBox::of(locations);
    let reach = 0.5 * bbox.diam();
    let default = ReparamPoint::default();
    let mut point = ReparamPoint { sigma0: (2.0 / var.sqrt()).ln() / SIGMA_BASE.ln(), ..default };
    if reach > 0.0 {
        let width = reach / START_BINS as f64;
        let mut sum = vec![0.0; START_BINS];
        let mut count = vec![0usize; START_BINS];
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let b = (locations[i].dist(&locations[j]) / width) as usize;
                if b < START_BINS {
                    sum[b] += z[i] * z[j];
                    count[b] += 1;
                }
            }
        }
        let target = var / std::f64::consts::E;
        let lag = (0..START_BINS).find(|&b| count[b] > 0 && sum[b] / (count[b] as f64) < target);
        if let Some(b) = lag {
            let h = (b as f64 + 0.5) * width;
            let nu = reparam_to_params(&default).nu;
            let kernel = crate::covkernel::MaternKernel::new(MaternParams { sigma2: 1.0, ell: 1.0, nu, tau2: 0.0 });
            // unit-range lag where the correlation is 1/e
            let (mut lo, mut hi) = (1e-6f64, 1e3f64);
            for _ in 0..100 {
                let mid = (lo * hi).sqrt();
                if kernel.cov(mid) > 1.0 / std::f64::consts::E {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            point.ell0 = -(h / lo).ln() / ELL_BASE.ln();
        }
    }
    Ok(point)
}

/// Fits the Matérn parameters to observations `z` at `locations`.
pub fn fit(locations: &[Location], z: &[f64], config: &OptimizerConfig) -> Result<FitReport> {
    config.validate()?;
    let problem = LikelihoodProblem::new(locations, z, config.h)?;
    fit_problem(&problem, config)
}

/// Fits against a prepared likelihood problem.
pub fn fit_problem(problem: &LikelihoodProblem, config: &OptimizerConfig) -> Result<FitReport> {
    config.validate()?;
    let start = Instant::now();
    let mut evaluations = 0usize;
    let mut any_finite = false;
    let mut objective = |p: [f64; 4]| -> f64 {
        evaluations += 1;
        let v = problem
            .evaluate(&reparam_to_params(&ReparamPoint::from_array(p)))
            .map(|r| r.loglik)
            .unwrap_or(f64::NEG_INFINITY);
        if v.is_finite() {
            any_finite = true;
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut state = Ascent {
        x: config.initial.to_array(),
        best: f64::NEG_INFINITY,
        iterations: 0,
        trace: Vec::new(),
    };
    state.best = objective(state.x);
    state.trace.push(TraceEntry { iteration: 0, step: Step::Initial, point: config.initial, loglik: state.best });

    let free: Vec<Coordinate> = Coordinate::ALL.into_iter().filter(|c| config.free[c.index()]).collect();
    // (direction, label, current half-width, widest half-width)
    let mut dirs: Vec<([f64; 4], Step, f64, f64)> = free
        .iter()
        .map(|&c| {
            let mut u = [0.0; 4];
            u[c.index()] = 1.0;
            let hw = config.half_width[c.index()];
            (u, Step::Axis(c), hw, hw)
        })
        .collect();
    let wide = free.iter().map(|c| config.half_width[c.index()]).fold(0.0, f64::max);
    let mut converged = false;
    let mut last_sweep_delta = f64::INFINITY;

    'outer: while !dirs.is_empty() {
        let (x0, f0) = (state.x, state.best);
        let (mut big_gain, mut big_i) = (0.0, 0);
        for (i, (u, step, hw, base)) in dirs.iter_mut().enumerate() {
            let before = state.best;
            let Some(t) = state.line_search(&mut objective, *u, *step, *hw, *base, config) else {
                break 'outer;
            };
            *hw = adapt_width(t, *base);
            if state.best - before > big_gain {
                big_gain = state.best - before;
                big_i = i;
            }
        }
        last_sweep_delta = state.best - f0;
        if state.best.is_finite() && last_sweep_delta < config.threshold {
            converged = true;
            break;
        }
        if config.search != Search::Powell || dirs.len() < 2 || !state.best.is_finite() {
            continue;
        }
        let d: [f64; 4] = std::array::from_fn(|k| state.x[k] - x0[k]);
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        // Powell's test on the extrapolated point decides whether the net
        // move replaces the direction of largest gain.
        let fe = objective(std::array::from_fn(|k| 2.0 * state.x[k] - x0[k]));
        let (g0, gn, ge) = (-f0, -state.best, -fe);
        if ge < g0 {
            let t = 2.0 * (g0 - 2.0 * gn + ge) * (g0 - gn - big_gain).powi(2) - big_gain * (g0 - ge).powi(2);
            if t < 0.0 {
                let u = d.map(|v| v / scale);
                let Some(t) = state.line_search(&mut objective, u, Step::Direction, wide, wide, config) else {
                    break;
                };
                dirs[big_i] = *dirs.last().unwrap();
                *dirs.last_mut().unwrap() = (u, Step::Direction, adapt_width(t, wide), wide);
            }
        }
    }

    if !any_finite {
        return Err(Error::FitFailed("likelihood undefined at every probe; increase the nugget".into()));
    }
    let point = ReparamPoint::from_array(state.x);
    Ok(FitReport {
        theta_hat: reparam_to_params(&point),
        point,
        loglik: state.best,
        iterations: state.iterations,
        evaluations,
        converged,
        last_sweep_delta,
        trace: state.trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Narrowest bracket, as a fraction of the configured half-width.
const MIN_WIDTH_FRACTION: f64 = 1.0 / 16.0;

/// Next half-width along a direction: four times the last step, kept
/// within `[base/16, base]`.
fn adapt_width(step: f64, base: f64) -> f64 {
    (4.0 * step.abs()).clamp(MIN_WIDTH_FRACTION * base, base)
}

struct Ascent {
    x: [f64; 4],
    best: f64,
    iterations: usize,
    trace: Vec<TraceEntry>,
}

impl Ascent {
    /// Brent search along `x + t·u`, `|t| ≤ hw`, widening the bracket when
    /// the maximizer lands on an edge. Returns the accepted step, or `None`
    /// once the budget is spent.
    fn line_search(
        &mut self,
        objective: &mut impl FnMut([f64; 4]) -> f64,
        u: [f64; 4],
        step: Step,
        half_width: f64,
        base: f64,
        config: &OptimizerConfig,
    ) -> Option<f64> {
        let reach = base * 2f64.powi(config.max_expansions as i32);
        let mut hw = half_width;
        let mut moved = 0.0;
        loop {
            if self.iterations >= config.max_iters {
                return None;
            }
            self.iterations += 1;
            let base = self.x;
            let known = self.best.is_finite().then_some((0.0, self.best));
            let r = brent_max_1d_from(
                |t| objective(std::array::from_fn(|k| base[k] + t * u[k])),
                -hw,
                hw,
                known,
                config.brent_tol,
                config.flat_tol,
                config.brent_max_evals,
            );
            let Ok(r) = r else { return Some(moved) };
            if r.value > self.best {
                moved += r.x;
                self.best = r.value;
                self.x = std::array::from_fn(|k| base[k] + r.x * u[k]);
                self.trace.push(TraceEntry {
                    iteration: self.iterations,
                    step,
                    point: ReparamPoint::from_array(self.x),
                    loglik: self.best,
                });
            }
            let edge = 10.0 * config.brent_tol;
            if (r.x + hw > edge && hw - r.x > edge) || hw >= reach {
                return Some(moved);
            }
            hw *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::generate;
    use proptest::prelude::*;

    #[test]
    fn reparam_examples() {
        let p = reparam_to_params(&ReparamPoint::new(0.0, 0.0, 0.0, 0.0));
        assert_eq!((p.sigma2, p.ell, p.nu, p.tau2), (4.0, 1.0, 1.0, 1.0));
        let p = reparam_to_params(&ReparamPoint::default());
        assert!((p.sigma2.sqrt() - 1.652892561983471).abs() < 1e-12);
        assert!((p.sigma2 - 2.732053821460283).abs() < 1e-12);
        assert!((p.ell - 0.4444444444444444).abs() < 1e-15);
        assert!((p.nu - 0.8333333333333334).abs() < 1e-15);
        assert!((p.tau2.sqrt() - 3.0517578125e-5).abs() < 1e-18);
        assert!((p.tau2 - 9.313225746154785e-10).abs() < 1e-22);
        assert!(params_to_reparam(&MaternParams::new(1.0, 0.1, 0.5, 0.0).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn reparam_round_trip(s in -30.0f64..30.0, l in -20.0f64..20.0, n in -15.0f64..15.0, t in -10.0f64..40.0) {
            let p = ReparamPoint::new(s, l, n, t);
            let params = reparam_to_params(&p);
            prop_assert!(params.sigma2 > 0.0 && params.ell > 0.0 && params.nu > 0.0 && params.tau2 > 0.0);
            let q = params_to_reparam(&params).unwrap();
            for (a, b) in p.to_array().iter().zip(q.to_array()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn brent_finds_quadratic_max(c in -3.0f64..3.0) {
            let r = brent_max_1d(|x| -(x - c).powi(2), -4.0, 4.0, 1e-8, 200).unwrap();
            prop_assert!((r.x - c).abs() < 1e-7);
        }
    }

    #[test]
    fn brent_examples() {
        let r = brent_max_1d(|x| -(x - 1.0).powi(2), -4.0, 4.0, 1e-8, 200).unwrap();
        assert!((r.x - 1.0).abs() < 1e-7);
        let r = brent_max_1d(|x| -x.abs(), -4.0, 4.0, 1e-6, 500).unwrap();
        assert!(r.x.abs() < 1e-6, "{}", r.x);
        let mut n = 0;
        let r = brent_max_1d(|x| { n += 1; -(x - 0.3).abs() }, -4.0, 4.0, 1e-12, 7).unwrap();
        assert_eq!(r.evals, 7);
        assert_eq!(n, 7);
        let r = brent_max_1d(|x| if x < 0.0 { f64::NEG_INFINITY } else { -(x - 1.0).powi(2) }, -4.0, 4.0, 1e-8, 200).unwrap();
        assert!((r.x - 1.0).abs() < 1e-6);
        assert!(matches!(brent_max_1d(|_| f64::NAN, -1.0, 1.0, 1e-6, 50), Err(Error::UndefinedOnBracket)));
        assert!(brent_max_1d(|x| x, 1.0, 1.0, 1e-6, 50).is_err());
    }

    #[test]
    fn brent_matches_grid_on_likelihood_slice() {
        let truth = MaternParams::new(1.0, 0.1, 1.0, 0.01).unwrap();
        let d = generate(256, &truth, None, 5, 1.0).unwrap();
        let prob = LikelihoodProblem::new(&d.locations, &d.values, HConfig::with_eps(1e-6)).unwrap();
        let base = params_to_reparam(&truth).unwrap();
        let f = |s: f64| {
            let mut p = base;
            p.sigma0 = s;
            prob.evaluate(&reparam_to_params(&p)).map(|r| r.loglik).unwrap_or(f64::NEG_INFINITY)
        };
        let (lo, hi) = (base.sigma0 - 8.0, base.sigma0 + 8.0);
        let step = (hi - lo) / 2000.0;
        let grid: Vec<(f64, f64)> = (0..=2000).map(|i| lo + step * i as f64).map(|x| (x, f(x))).collect();
        let grid_best = grid.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        let r = brent_max_1d(f, lo, hi, 1e-6, 200).unwrap();
        assert!((r.x - grid_best).abs() <= step, "{} {}", r.x, grid_best);
    }

    #[test]
    fn fit_sigma_only() {
        let truth = MaternParams::new(1.5, 0.1, 0.5, 0.01).unwrap();
        let d = generate(1024, &truth, None, 9, 1.0).unwrap();
        let mut init = params_to_reparam(&truth).unwrap();
        init.sigma0 = 0.0;
        let cfg = OptimizerConfig { initial: init, free: [true, false, false, false], h: HConfig::with_eps(1e-4), ..Default::default() };
        let r = fit(&d.locations, &d.values, &cfg).unwrap();
        assert!((r.theta_hat.sigma2 - 1.5).abs() / 1.5 < 0.25, "{:?}", r.theta_hat);
        assert!(r.converged);
        for w in r.trace.windows(2) {
            assert!(w[1].loglik >= w[0].loglik);
        }
        let at_truth = LikelihoodProblem::new(&d.locations, &d.values, HConfig::with_eps(1e-4)).unwrap().evaluate(&truth).unwrap();
        assert!(r.loglik >= at_truth.loglik - 1e-3);
    }

    #[test]
    fn brent_warm_start_never_worse() {
        let f = |x: f64| -(x - 2.0).powi(2) + (5.0 * x).sin();
        for x0 in [-3.0, -0.5, 0.1, 1.7, 3.9] {
            let r = brent_max_1d_from(f, -4.0, 4.0, Some((x0, f(x0))), 1e-8, 0.0, 60).unwrap();
            assert!(r.value >= f(x0));
        }
        let mut n = 0;
        let r = brent_max_1d_from(|x| { n += 1; -x * x }, -1.0, 1.0, Some((0.0, 0.0)), 1e-8, 0.0, 50).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(n, r.evals);
        assert!(brent_max_1d_from(|x| x, -1.0, 1.0, Some((1.0, 1.0)), 1e-8, 0.0, 50).is_err());
    }

    #[test]
    fn plateau_stops_early() {
        let f = |x: f64| if x.abs() < 3.0 { 1e-9 * x } else { -1.0 };
        let full = brent_max_1d_from(f, -4.0, 4.0, Some((0.5, f(0.5))), 1e-8, 0.0, 200).unwrap();
        let flat = brent_max_1d_from(f, -4.0, 4.0, Some((0.5, f(0.5))), 1e-8, 1e-6, 200).unwrap();
        assert!(flat.evals < full.evals, "{} {}", flat.evals, full.evals);
        assert!(flat.value >= f(0.5));
    }

    #[test]
    fn empirical_start_tracks_scale_and_range() {
        let truth = MaternParams::new(2.0, 0.08, 0.8333333333333334, 1e-4).unwrap();
        let d = generate(1500, &truth, None, 12, 1.0).unwrap();
        let p = reparam_to_params(&empirical_start(&d.locations, &d.values).unwrap());
        assert!((p.sigma2 / truth.sigma2).ln().abs() < 2f64.ln(), "{p:?}");
        assert!((p.ell / truth.ell).ln().abs() < 2f64.ln(), "{p:?}");
        assert_eq!(p.nu, reparam_to_params(&ReparamPoint::default()).nu);
        assert!(empirical_start(&d.locations, &vec![0.0; d.values.len()]).is_err());
        assert!(empirical_start(&d.locations, &d.values[1..]).is_err());
    }

    #[test]
    fn powell_and_coordinate_reach_the_truth_level() {
        let truth = MaternParams::new(1.0, 0.1, 0.8, 0.05).unwrap();
        let d = generate(400, &truth, None, 4, 1.0).unwrap();
        let h = HConfig::with_eps(1e-6);
        let prob = LikelihoodProblem::new(&d.locations, &d.values, h).unwrap();
        let at_truth = prob.evaluate(&truth).unwrap().loglik;
        let init = empirical_start(&d.locations, &d.values).unwrap();
        for search in [Search::Powell, Search::Coordinate] {
            let cfg = OptimizerConfig { initial: init, search, h, ..Default::default() };
            let r = fit_problem(&prob, &cfg).unwrap();
            assert!(r.loglik >= at_truth - 1e-3, "{search:?} {} {at_truth}", r.loglik);
            assert!(r.iterations <= cfg.max_iters);
            for w in r.trace.windows(2) {
                assert!(w[1].loglik >= w[0].loglik);
            }
        }
    }

    #[test]
    fn fit_respects_budget_and_is_reproducible() {
        let truth = MaternParams::new(1.0, 0.1, 0.5, 0.01).unwrap();
        let d = generate(200, &truth, None, 3, 1.0).unwrap();
        let cfg = OptimizerConfig { max_iters: 5, h: HConfig::with_eps(1e-4), ..Default::default() };
        let a = fit(&d.locations, &d.values, &cfg).unwrap();
        let b = fit(&d.locations, &d.values, &cfg).unwrap();
        assert!(a.iterations <= 5);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.theta_hat, b.theta_hat);
    }
}
