use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::Hyperparams;
use super::model::{factorize, gram, lml_columns};
use super::GpError;

/// Minimum number of points accepted by [`fit_hyperparameters`].
const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Gradient iterations per start.
    pub budget: usize,
    pub starts: usize,
    pub seed: u64,
    /// Spread of the random restarts around the initial guess, in log units.
    pub restart_spread: f64,
    /// Bounds on `ln ℓ_d`.
    pub log_lengthscale_bounds: (f64, f64),
    /// Optional per-dimension floor on `ℓ_d`, tighter than the global bound.
    pub min_lengthscales: Option<DVector<f64>>,
    pub log_signal_bounds: (f64, f64),
    pub log_noise_bounds: (f64, f64),
    /// Stop once the relative likelihood gain per iteration falls below this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            budget: 80,
            starts: 4,
            seed: 0,
            restart_spread: 1.0,
            log_lengthscale_bounds: (-7.0, 7.0),
            min_lengthscales: None,
            log_signal_bounds: (-12.0, 8.0),
            log_noise_bounds: (-18.0, 6.0),
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Improved,
    /// No start beat the initial guess; the initial guess is returned.
    NoImprovement,
    /// A zero budget was requested.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub hyperparams: Hyperparams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub status: FitStatus,
}

/// Evidence of the columns of `y` under a shared kernel and its gradient with
/// respect to `(ln ℓ_1..ln ℓ_d, ln σ_f², ln σ²)`.
pub fn log_marginal_likelihood_with_gradient(
    inputs: &[DVector<f64>],
    y: &DMatrix<f64>,
    h: &Hyperparams,
) -> Result<(f64, DVector<f64>), GpError> {
    h.validate()?;
    let n = inputs.len();
    let d = h.dim();
    let m = y.ncols() as f64;
    let k = gram(inputs, h);
    let (chol, _) = factorize(k.clone())?;
    let alpha = chol.solve(y);
    let kinv = chol.inverse();
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * y.component_mul(&alpha).sum()
        - m * half_logdet
        - 0.5 * m * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // ∂L/∂θ = ½ tr(W ∂K/∂θ) with W = ααᵀ − m K⁻¹
    let w = &alpha * alpha.transpose() - kinv * m;
    let mut grad = DVector::zeros(d + 2);
    let mut sig = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kf = if i == j { h.signal_var } else { k[(i, j)] };
            let wk = w[(i, j)] * kf;
            sig += wk;
            if i != j {
                for dd in 0..d {
                    let diff = (inputs[i][dd] - inputs[j][dd]) / h.lengthscales[dd];
                    grad[dd] += wk * diff * diff;
                }
            }
        }
    }
    for dd in 0..d {
        grad[dd] *= 0.5;
    }
    grad[d] = 0.5 * sig;
    grad[d + 1] = 0.5 * h.noise_var * w.trace();
    Ok((lml, grad))
}

fn clamp_log(t: &mut DVector<f64>, o: &FitOptions) {
    let d = t.len() - 2;
    for i in 0..d {
        let floor = o.min_lengthscales.as_ref().map_or(f64::NEG_INFINITY, |m| m[i].ln());
        let lo = o.log_lengthscale_bounds.0.max(floor).min(o.log_lengthscale_bounds.1);
        t[i] = t[i].clamp(lo, o.log_lengthscale_bounds.1);
    }
    t[d] = t[d].clamp(o.log_signal_bounds.0, o.log_signal_bounds.1);
    t[d + 1] = t[d + 1].clamp(o.log_noise_bounds.0, o.log_noise_bounds.1);
}

fn ascend(
    inputs: &[DVector<f64>],
    y: &DMatrix<f64>,
    start: DVector<f64>,
    o: &FitOptions,
) -> Option<(DVector<f64>, f64)> {
    let mut theta = start;
    let (mut f, mut g) = log_marginal_likelihood_with_gradient(inputs, y, &Hyperparams::from_log(&theta)).ok()?;
    let mut step = 0.1;
    for _ in 0..o.budget {
        let gnorm = g.norm();
        if !gnorm.is_finite() || gnorm < 1e-10 {
            break;
        }
        let dir = &g / gnorm;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand = &theta + &dir * step;
            clamp_log(&mut cand, o);
            if let Ok((fc, gc)) = log_marginal_likelihood_with_gradient(inputs, y, &Hyperparams::from_log(&cand)) {
                if fc > f {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let gain = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        step = (step * 2.0).min(2.0);
        if gain <= o.tolerance * f.abs().max(1.0) {
            break;
        }
    }
    Some((theta, f))
}

/// Maximizes the evidence of the columns of `y` over a shared kernel by
/// projected gradient ascent in log-parameter space with random restarts.
pub fn fit_hyperparameters(
    inputs: &[DVector<f64>],
    y: &DMatrix<f64>,
    init: &Hyperparams,
    options: &FitOptions,
) -> Result<FitResult, GpError> {
    init.validate()?;
    if inputs.len() < MIN_POINTS {
        return Err(GpError::TooFewPoints { needed: MIN_POINTS, have: inputs.len() });
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != init.dim()) {
        return Err(GpError::DimensionMismatch { expected: init.dim(), got: x.len() });
    }
    if let Some(m) = &options.min_lengthscales {
        if m.len() != init.dim() {
            return Err(GpError::DimensionMismatch { expected: init.dim(), got: m.len() });
        }
    }
    let f0 = lml_columns(inputs, y, init)?;
    if options.budget == 0 {
        return Ok(FitResult {
            hyperparams: init.clone(),
            log_likelihood: f0,
            initial_log_likelihood: f0,
            status: FitStatus::Skipped,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let t0 = init.to_log();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for s in 0..options.starts.max(1) {
        let mut start = t0.clone();
        if s > 0 {
            for v in start.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += options.restart_spread * z;
            }
        }
        clamp_log(&mut start, options);
        if let Some((t, f)) = ascend(inputs, y, start, options) {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((t, f));
            }
        }
    }
    match best {
        Some((t, f)) if f > f0 => Ok(FitResult {
            hyperparams: Hyperparams::from_log(&t),
            log_likelihood: f,
            initial_log_likelihood: f0,
            status: FitStatus::Improved,
        }),
        _ => {
            log::warn!("hyperparameter fit did not improve on the initial guess");
            Ok(FitResult {
                hyperparams: init.clone(),
                log_likelihood: f0,
                initial_log_likelihood: f0,
                status: FitStatus::NoImprovement,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_prior(rng: &mut ChaCha8Rng, xs: &[DVector<f64>], h: &Hyperparams) -> DMatrix<f64> {
        let l = factorize(gram(xs, h)).unwrap().0.l();
        let z = DMatrix::from_fn(xs.len(), 1, |_, _| StandardNormal.sample(rng));
        l * z
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<_> = (0..15).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let y = DMatrix::from_fn(15, 2, |_, _| rng.random_range(-1.0..1.0));
        let h = Hyperparams::new(DVector::from_vec(vec![0.5, 0.9, 1.6]), 0.8, 0.05).unwrap();
        let (_, g) = log_marginal_likelihood_with_gradient(&xs, &y, &h).unwrap();
        let t = h.to_log();
        for i in 0..t.len() {
            let e = 1e-6;
            let mut tp = t.clone();
            tp[i] += e;
            let mut tm = t.clone();
            tm[i] -= e;
            let fp = lml_columns(&xs, &y, &Hyperparams::from_log(&tp)).unwrap();
            let fm = lml_columns(&xs, &y, &Hyperparams::from_log(&tm)).unwrap();
            let fd = (fp - fm) / (2.0 * e);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn lengthscale_floor_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<_> = (0..60).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0))).collect();
        let y = DMatrix::from_fn(60, 1, |i, _| f64::sin(3.0 * xs[i][0]) + 0.05 * rng.random_range(-1.0..1.0));
        let init = Hyperparams::isotropic(2, 1.0, 1.0, 0.1).unwrap();
        let free = fit_hyperparameters(&xs, &y, &init, &FitOptions::default()).unwrap();
        assert!(free.hyperparams.lengthscales[0] < 0.8);
        let floor = DVector::from_vec(vec![0.8, 0.8]);
        let opts = FitOptions { min_lengthscales: Some(floor), ..Default::default() };
        let held = fit_hyperparameters(&xs, &y, &init, &opts).unwrap();
        assert!(held.hyperparams.lengthscales.iter().all(|&l| l >= 0.8 * (1.0 - 1e-12)));
        let bad = FitOptions { min_lengthscales: Some(DVector::from_element(3, 1.0)), ..Default::default() };
        assert!(fit_hyperparameters(&xs, &y, &init, &bad).is_err());
    }

    #[test]
    fn zero_budget_returns_init() {
        let xs: Vec<_> = (0..6).map(|i| DVector::from_element(1, i as f64)).collect();
        let y = DMatrix::from_fn(6, 1, |i, _| (i as f64).sin());
        let h = Hyperparams::isotropic(1, 1.0, 1.0, 0.1).unwrap();
        let r = fit_hyperparameters(&xs, &y, &h, &FitOptions { budget: 0, ..Default::default() }).unwrap();
        assert_eq!(r.hyperparams, h);
        assert_eq!(r.status, FitStatus::Skipped);
    }

    #[test]
    fn too_few_points() {
        let xs: Vec<_> = (0..4).map(|i| DVector::from_element(1, i as f64)).collect();
        let y = DMatrix::zeros(4, 1);
        let h = Hyperparams::isotropic(1, 1.0, 1.0, 0.1).unwrap();
        assert!(matches!(
            fit_hyperparameters(&xs, &y, &h, &FitOptions::default()),
            Err(GpError::TooFewPoints { needed: 5, have: 4 })
        ));
    }

    #[test]
    fn recovers_generating_lengthscales() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth = Hyperparams::new(DVector::from_vec(vec![0.4, 1.5]), 1.0, 0.01).unwrap();
        let xs: Vec<_> = (0..200).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0))).collect();
        let y = sample_prior(&mut rng, &xs, &truth);
        let init = Hyperparams::isotropic(2, 1.0, 0.5, 0.1).unwrap();
        let r = fit_hyperparameters(&xs, &y, &init, &FitOptions { seed: 1, ..Default::default() }).unwrap();
        assert_eq!(r.status, FitStatus::Improved);
        assert!(r.log_likelihood >= r.initial_log_likelihood);
        for d in 0..2 {
            let ratio = r.hyperparams.lengthscales[d] / truth.lengthscales[d];
            assert!((0.5..=2.0).contains(&ratio), "dim {d}: ratio {ratio}");
        }
    }

    #[test]
    fn pure_noise_recovers_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<_> = (0..150).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0))).collect();
        let y = DMatrix::from_fn(150, 1, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 0.3 * z });
        let mean = y.mean();
        let sample_var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        let init = Hyperparams::isotropic(2, 1.0, 0.05, 0.01).unwrap();
        let r = fit_hyperparameters(&xs, &y, &init, &FitOptions { seed: 3, ..Default::default() }).unwrap();
        let rel = (r.hyperparams.noise_var - sample_var).abs() / sample_var;
        assert!(rel <= 0.25, "fitted noise {} vs sample variance {sample_var}", r.hyperparams.noise_var);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<_> = (0..30).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0))).collect();
        let y = DMatrix::from_fn(30, 1, |i, _| f64::sin(xs[i][0]) + 0.1 * xs[i][1]);
        let init = Hyperparams::isotropic(2, 1.0, 1.0, 0.1).unwrap();
        let o = FitOptions { seed: 9, budget: 30, ..Default::default() };
        let a = fit_hyperparameters(&xs, &y, &init, &o).unwrap();
        let b = fit_hyperparameters(&xs, &y, &init, &o).unwrap();
        assert_eq!(a.hyperparams, b.hyperparams);
    }
}
