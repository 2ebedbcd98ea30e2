use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector6};

use super::dataset::Dataset;
use super::kernel::{kernel_se, Hyperparams, OutputKernels};
use super::{GpError, OUTPUTS};

/// Diagonal jitter tried in order when the Gram factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

type MeanFn = dyn Fn(&DVector<f64>) -> Vector6<f64> + Send + Sync;

/// Prior mean `m(q)` per output.
#[derive(Clone, Default)]
pub enum MeanFunction {
    #[default]
    Zero,
    Constant(Vector6<f64>),
    Custom(Arc<MeanFn>),
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(c) => write!(f, "Constant({:?})", c.as_slice()),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl MeanFunction {
    pub fn eval(&self, x: &DVector<f64>) -> Vector6<f64> {
        match self {
            Self::Zero => Vector6::zeros(),
            Self::Constant(c) => *c,
            Self::Custom(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: Vector6<f64>,
    pub variance: Vector6<f64>,
}

impl Prediction {
    pub fn std_dev(&self) -> Vector6<f64> {
        self.variance.map(f64::sqrt)
    }
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Immutable posterior built from one dataset generation.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernels: OutputKernels,
    mean_fn: MeanFunction,
    inputs: Vec<DVector<f64>>,
    /// one factor when the kernel is shared, otherwise one per output
    factors: Vec<Factor>,
    /// `K⁻¹(Y − m(X))`, column per output
    alpha: DMatrix<f64>,
    dataset_index: u64,
}

pub(crate) fn gram(inputs: &[DVector<f64>], h: &Hyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel_se(&inputs[i], &inputs[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] = h.signal_var + h.noise_var;
    }
    k
}

pub(crate) fn factorize(k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    for &j in &JITTER_LADDER {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += j;
        }
        if let Some(c) = Cholesky::new(kj) {
            log::debug!("Gram factorization needed jitter {j:e}");
            return Ok((c, j));
        }
    }
    Err(GpError::IllConditioned(JITTER_LADDER[JITTER_LADDER.len() - 1]))
}

/// Posterior model for the dataset under the given kernel(s).
pub fn build_model(data: &Dataset, kernels: OutputKernels, mean_fn: MeanFunction) -> Result<GpModel, GpError> {
    kernels.validate()?;
    if data.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let dim = data.input_dim().unwrap_or(0);
    if dim != kernels.dim() {
        return Err(GpError::DimensionMismatch { expected: kernels.dim(), got: dim });
    }
    let inputs = data.inputs();
    let y = data.outputs();
    let n = inputs.len();
    let mut resid = y.clone();
    for (i, x) in inputs.iter().enumerate() {
        let m = mean_fn.eval(x);
        for j in 0..OUTPUTS {
            resid[(i, j)] -= m[j];
        }
    }
    let mut factors = Vec::new();
    let mut alpha = DMatrix::zeros(n, OUTPUTS);
    match &kernels {
        OutputKernels::Shared(h) => {
            let (chol, jitter) = factorize(gram(&inputs, h))?;
            alpha = chol.solve(&resid);
            factors.push(Factor { chol, jitter });
        }
        OutputKernels::PerOutput(hs) => {
            for (j, h) in hs.iter().enumerate() {
                let (chol, jitter) = factorize(gram(&inputs, h))?;
                let a = chol.solve(&resid.column(j).into_owned());
                alpha.set_column(j, &a);
                factors.push(Factor { chol, jitter });
            }
        }
    }
    Ok(GpModel { kernels, mean_fn, inputs, factors, alpha, dataset_index: data.index() })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
    pub fn kernels(&self) -> &OutputKernels {
        &self.kernels
    }
    pub fn dataset_index(&self) -> u64 {
        self.dataset_index
    }
    /// True when the dataset has moved on since this model was built.
    pub fn is_stale(&self, data: &Dataset) -> bool {
        data.index() != self.dataset_index
    }
    /// Largest jitter used across the factorizations.
    pub fn jitter(&self) -> f64 {
        self.factors.iter().map(|f| f.jitter).fold(0.0, f64::max)
    }
    /// Lower-triangular Gram factor for output `j`.
    pub fn factor(&self, j: usize) -> DMatrix<f64> {
        self.factor_for(j).chol.l()
    }

    fn factor_for(&self, j: usize) -> &Factor {
        if self.factors.len() == 1 {
            &self.factors[0]
        } else {
            &self.factors[j]
        }
    }

    fn kvec(&self, x: &DVector<f64>, h: &Hyperparams) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.inputs.iter().map(|xi| kernel_se(x, xi, h)))
    }

    pub fn predict_mean(&self, x: &DVector<f64>) -> Vector6<f64> {
        let mut mean = self.mean_fn.eval(x);
        match &self.kernels {
            OutputKernels::Shared(h) => {
                let k = self.kvec(x, h);
                mean += (self.alpha.transpose() * k).fixed_rows::<OUTPUTS>(0);
            }
            OutputKernels::PerOutput(hs) => {
                for (j, h) in hs.iter().enumerate() {
                    mean[j] += self.kvec(x, h).dot(&self.alpha.column(j));
                }
            }
        }
        mean
    }

    pub fn predict(&self, x: &DVector<f64>) -> Prediction {
        let mut mean = self.mean_fn.eval(x);
        let mut variance = Vector6::zeros();
        match &self.kernels {
            OutputKernels::Shared(h) => {
                let k = self.kvec(x, h);
                mean += (self.alpha.transpose() * &k).fixed_rows::<OUTPUTS>(0);
                variance.fill(self.variance_from(&self.factors[0], &k, h));
            }
            OutputKernels::PerOutput(hs) => {
                for (j, h) in hs.iter().enumerate() {
                    let k = self.kvec(x, h);
                    mean[j] += k.dot(&self.alpha.column(j));
                    variance[j] = self.variance_from(&self.factors[j], &k, h);
                }
            }
        }
        Prediction { mean, variance }
    }

    fn variance_from(&self, f: &Factor, k: &DVector<f64>, h: &Hyperparams) -> f64 {
        let explained = f.chol.l_dirty().solve_lower_triangular(k).map_or(0.0, |w| w.norm_squared());
        let v = h.signal_var - explained;
        if v < 0.0 {
            log::trace!("posterior variance {v:e} clamped to 0");
            0.0
        } else {
            v
        }
    }
}

/// Evidence `ln p(Y | X, h)` summed over the six outputs.
pub fn log_marginal_likelihood(data: &Dataset, kernels: &OutputKernels) -> Result<f64, GpError> {
    kernels.validate()?;
    if data.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let inputs = data.inputs();
    let y = data.outputs();
    let mut total = 0.0;
    match kernels {
        OutputKernels::Shared(h) => total += lml_columns(&inputs, &y, h)?,
        OutputKernels::PerOutput(hs) => {
            for (j, h) in hs.iter().enumerate() {
                total += lml_columns(&inputs, &y.columns(j, 1).into_owned(), h)?;
            }
        }
    }
    Ok(total)
}

pub(crate) fn lml_columns(inputs: &[DVector<f64>], y: &DMatrix<f64>, h: &Hyperparams) -> Result<f64, GpError> {
    let n = inputs.len() as f64;
    let (chol, _) = factorize(gram(inputs, h))?;
    let alpha = chol.solve(y);
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let m = y.ncols() as f64;
    let fit: f64 = y.component_mul(&alpha).sum();
    Ok(-0.5 * fit - m * half_logdet - 0.5 * m * n * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::super::dataset::TrainingPoint;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Dataset {
        let mut d = Dataset::unbounded();
        for _ in 0..n {
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let y = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            d.update(TrainingPoint { input: x, output: y, t: 0.0 }).unwrap();
        }
        d
    }

    fn dense_oracle(d: &Dataset, h: &Hyperparams, x: &DVector<f64>) -> (Vector6<f64>, f64) {
        let xs = d.inputs();
        let kinv = gram(&xs, h).try_inverse().unwrap();
        let k = DVector::from_iterator(xs.len(), xs.iter().map(|xi| kernel_se(x, xi, h)));
        let mean = (d.outputs().transpose() * &kinv * &k).fixed_rows::<6>(0).into_owned();
        let var = h.signal_var - (k.transpose() * kinv * &k)[(0, 0)];
        (mean, var)
    }

    #[test]
    fn single_point_factor() {
        let mut d = Dataset::unbounded();
        d.update(TrainingPoint { input: DVector::from_element(1, 0.5), output: Vector6::repeat(1.0), t: 0.0 })
            .unwrap();
        let h = Hyperparams::isotropic(1, 1.0, 2.0, 0.25).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
        assert_relative_eq!(m.factor(0)[(0, 0)], 2.25f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn duplicates_with_noise_factorize() {
        let mut d = Dataset::unbounded();
        for _ in 0..5 {
            d.update(TrainingPoint { input: DVector::from_element(3, 0.1), output: Vector6::repeat(1.0), t: 0.0 })
                .unwrap();
        }
        let h = Hyperparams::isotropic(3, 1.0, 1.0, 1e-4).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h.clone()), MeanFunction::Zero).unwrap();
        let l = m.factor(0);
        let k = gram(&d.inputs(), &h);
        assert!((&l * l.transpose() - &k).norm() / k.norm() <= 1e-10);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = 1 + trial % 20;
            let d = random_dataset(&mut rng, n, 3);
            let h = Hyperparams::new(DVector::from_vec(vec![0.7, 1.3, 2.0]), 1.4, 0.05).unwrap();
            let m = build_model(&d, OutputKernels::Shared(h.clone()), MeanFunction::Zero).unwrap();
            for _ in 0..5 {
                let x = DVector::from_fn(3, |_, _| rng.random_range(-2.5..2.5));
                let (om, ov) = dense_oracle(&d, &h, &x);
                let p = m.predict(&x);
                assert!((p.mean - om).amax() <= 1e-8, "mean off by {}", (p.mean - om).amax());
                for j in 0..6 {
                    assert!((p.variance[j] - ov.max(0.0)).abs() <= 1e-8);
                }
                assert!((m.predict_mean(&x) - p.mean).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn kinv_via_factor_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dataset(&mut rng, 20, 4);
        let h = Hyperparams::isotropic(4, 1.0, 1.0, 0.01).unwrap();
        let (chol, _) = factorize(gram(&d.inputs(), &h)).unwrap();
        let dense = gram(&d.inputs(), &h).try_inverse().unwrap();
        assert!((chol.inverse() - dense).amax() <= 1e-8);
    }

    #[test]
    fn noise_free_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_dataset(&mut rng, 12, 2);
        let h = Hyperparams::isotropic(2, 0.6, 1.0, 1e-12).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
        for p in d.points() {
            let pr = m.predict(&p.input);
            assert!((pr.mean - p.output).amax() <= 1e-4);
            assert!(pr.variance.amax() <= 1e-6);
        }
    }

    #[test]
    fn prior_reversion_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dataset(&mut rng, 10, 2);
        let h = Hyperparams::isotropic(2, 0.5, 1.7, 0.01).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
        let p = m.predict(&DVector::from_element(2, 1e3));
        assert!(p.mean.amax() < 1e-12);
        assert_relative_eq!(p.variance[0], 1.7, epsilon = 1e-12);
    }

    #[test]
    fn mean_function_is_added() {
        let mut d = Dataset::unbounded();
        d.update(TrainingPoint { input: DVector::from_element(1, 0.0), output: Vector6::repeat(3.0), t: 0.0 })
            .unwrap();
        let h = Hyperparams::isotropic(1, 1.0, 1.0, 1e-9).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Constant(Vector6::repeat(2.0))).unwrap();
        assert_relative_eq!(m.predict(&DVector::from_element(1, 0.0)).mean[3], 3.0, epsilon = 1e-6);
        assert_relative_eq!(m.predict(&DVector::from_element(1, 50.0)).mean[3], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn per_output_kernels_match_individual_shared_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_dataset(&mut rng, 15, 2);
        let hs: Vec<_> =
            (0..6).map(|j| Hyperparams::isotropic(2, 0.3 + 0.2 * j as f64, 1.0 + j as f64, 0.02).unwrap()).collect();
        let m = build_model(&d, OutputKernels::PerOutput(hs.clone()), MeanFunction::Zero).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let p = m.predict(&x);
        for (j, hj) in hs.iter().enumerate() {
            let mj = build_model(&d, OutputKernels::Shared(hj.clone()), MeanFunction::Zero).unwrap();
            let pj = mj.predict(&x);
            assert_relative_eq!(p.mean[j], pj.mean[j], epsilon = 1e-12);
            assert_relative_eq!(p.variance[j], pj.variance[j], epsilon = 1e-12);
        }
        assert!((m.predict_mean(&x) - p.mean).amax() < 1e-12);
    }

    #[test]
    fn staleness_tracks_dataset_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = random_dataset(&mut rng, 3, 2);
        let h = Hyperparams::isotropic(2, 1.0, 1.0, 0.1).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
        assert!(!m.is_stale(&d));
        d.update(TrainingPoint { input: DVector::zeros(2), output: Vector6::zeros(), t: 1.0 }).unwrap();
        assert!(m.is_stale(&d));
    }

    #[test]
    fn empty_and_mismatched_rejected() {
        let h = Hyperparams::isotropic(2, 1.0, 1.0, 0.1).unwrap();
        assert!(matches!(
            build_model(&Dataset::unbounded(), OutputKernels::Shared(h.clone()), MeanFunction::Zero),
            Err(GpError::EmptyDataset)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_dataset(&mut rng, 3, 4);
        assert!(build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).is_err());
    }

    #[test]
    fn lml_single_point_closed_form() {
        let mut d = Dataset::unbounded();
        let y = Vector6::new(0.3, -1.0, 2.0, 0.0, 0.5, -0.25);
        d.update(TrainingPoint { input: DVector::from_element(2, 0.4), output: y, t: 0.0 }).unwrap();
        let (sf, sn) = (1.3, 0.2);
        let h = Hyperparams::isotropic(2, 0.8, sf, sn).unwrap();
        let s = sf + sn;
        let expected: f64 = y.iter().map(|yi| -0.5 * (yi * yi / s + (2.0 * PI * s).ln())).sum();
        assert_relative_eq!(log_marginal_likelihood(&d, &OutputKernels::Shared(h)).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn lml_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_dataset(&mut rng, 12, 3);
        let mut pts: Vec<_> = d.points().cloned().collect();
        pts.reverse();
        pts.swap(2, 7);
        let mut d2 = Dataset::unbounded();
        d2.update_batch(pts).unwrap();
        let k = OutputKernels::Shared(Hyperparams::isotropic(3, 0.9, 1.1, 0.07).unwrap());
        let a = log_marginal_likelihood(&d, &k).unwrap();
        let b = log_marginal_likelihood(&d2, &k).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn lml_prefers_consistent_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_dataset(&mut rng, 8, 2);
        let first = base.points().next().unwrap().clone();
        let k = OutputKernels::Shared(Hyperparams::isotropic(2, 0.7, 1.0, 0.01).unwrap());
        let mut consistent = base.clone();
        consistent.update(first.clone()).unwrap();
        let mut inconsistent = base.clone();
        inconsistent.update(TrainingPoint { output: first.output.map(|y| -y + 0.5), ..first }).unwrap();
        assert!(log_marginal_likelihood(&consistent, &k).unwrap() >= log_marginal_likelihood(&inconsistent, &k).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn posterior_variance_below_prior(seed in any::<u64>(), n in 1usize..25, ls in 0.2f64..3.0, sn in 1e-6f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_dataset(&mut rng, n, 3);
            let h = Hyperparams::isotropic(3, ls, 1.2, sn).unwrap();
            let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
            let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let p = m.predict(&x);
            prop_assert!(p.variance.iter().all(|&v| (0.0..=1.2 + 1e-12).contains(&v)));
        }

        #[test]
        fn extra_point_never_increases_variance(seed in any::<u64>(), n in 1usize..30, ls in 0.2f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = random_dataset(&mut rng, n, 2);
            let h = Hyperparams::isotropic(2, ls, 1.0, 0.01).unwrap();
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let before = build_model(&d, OutputKernels::Shared(h.clone()), MeanFunction::Zero).unwrap().predict(&x);
            let extra = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            d.update(TrainingPoint { input: extra, output: Vector6::zeros(), t: 0.0 }).unwrap();
            let after = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap().predict(&x);
            prop_assert!(after.variance[0] <= before.variance[0] + 1e-10);
        }
    }
}
