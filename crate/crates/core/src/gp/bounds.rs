use nalgebra::{Cholesky, DMatrix, DVector, Vector6};

use super::dataset::Dataset;
use super::kernel::{kernel_se, Hyperparams};
use super::model::{GpModel, Prediction};
use super::{GpError, OUTPUTS};

/// Candidate-set size up to which [`info_gain`] enumerates subsets exactly.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct InfoGain {
    /// `½ ln |I + σ⁻² K_S|` of the selected subset.
    pub value: f64,
    pub selected: Vec<usize>,
    /// Exact maximum rather than the greedy estimate.
    pub exhaustive: bool,
}

fn log_det_gain(cands: &[DVector<f64>], subset: &[usize], h: &Hyperparams, noise_var: f64) -> f64 {
    let k = subset.len();
    let m = DMatrix::from_fn(k, k, |i, j| {
        let v = kernel_se(&cands[subset[i]], &cands[subset[j]], h) / noise_var;
        if i == j {
            v + 1.0
        } else {
            v
        }
    });
    match Cholesky::new(m) {
        Some(c) => c.l_dirty().diagonal().iter().map(|d| d.ln()).sum(),
        None => f64::NEG_INFINITY,
    }
}

fn greedy(cands: &[DVector<f64>], h: &Hyperparams, noise_var: f64, k_max: usize) -> InfoGain {
    let m = cands.len();
    // residual prior variances and the pivoted-Cholesky rows of chosen points
    let mut resid: Vec<f64> = vec![h.signal_var; m];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    let mut selected = Vec::with_capacity(k_max);
    let mut value = 0.0;
    let mut taken = vec![false; m];
    for _ in 0..k_max.min(m) {
        let Some(best) = (0..m).filter(|&i| !taken[i]).max_by(|&a, &b| resid[a].total_cmp(&resid[b])) else {
            break;
        };
        let v = resid[best].max(0.0);
        value += 0.5 * (1.0 + v / noise_var).ln();
        taken[best] = true;
        selected.push(best);
        // rank-one update of the posterior under noisy observation of `best`
        let denom = v + noise_var;
        let mut row = vec![0.0; m];
        for i in 0..m {
            let mut c = kernel_se(&cands[i], &cands[best], h);
            for r in &rows {
                c -= r[i] * r[best];
            }
            row[i] = c / denom.sqrt();
        }
        for i in 0..m {
            resid[i] -= row[i] * row[i];
        }
        rows.push(row);
    }
    InfoGain { value, selected, exhaustive: false }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn exhaustive(cands: &[DVector<f64>], h: &Hyperparams, noise_var: f64, k: usize) -> InfoGain {
    let n = cands.len();
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = InfoGain { value: f64::NEG_INFINITY, selected: idx.clone(), exhaustive: true };
    loop {
        let v = log_det_gain(cands, &idx, h, noise_var);
        if v > best.value {
            best.value = v;
            best.selected = idx.clone();
        }
        if k == 0 || !next_combination(&mut idx, n) {
            break;
        }
    }
    if k == 0 {
        best.value = 0.0;
    }
    best
}

/// Maximum information gain over `k_max`-subsets of the candidates.
///
/// Uses exact enumeration for at most [`EXHAUSTIVE_LIMIT`] candidates and the
/// greedy `(1 − 1/e)`-approximation otherwise.
pub fn info_gain(candidates: &[DVector<f64>], h: &Hyperparams, noise_var: f64, k_max: usize) -> InfoGain {
    if candidates.len() <= EXHAUSTIVE_LIMIT {
        exhaustive(candidates, h, noise_var, k_max)
    } else {
        greedy(candidates, h, noise_var, k_max)
    }
}

/// Greedy estimate regardless of candidate count.
pub fn info_gain_greedy(candidates: &[DVector<f64>], h: &Hyperparams, noise_var: f64, k_max: usize) -> InfoGain {
    greedy(candidates, h, noise_var, k_max)
}

/// `(β_n)_j = √(2 B_j² + 300 γ_j ln³((N + 1)/(1 − δ^{1/6})))`.
pub fn beta(n: usize, gamma: &Vector6<f64>, caps: &Vector6<f64>, delta: f64) -> Result<Vector6<f64>, GpError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GpError::Domain(format!("δ = {delta} must lie in (0, 1)")));
    }
    if gamma.iter().chain(caps.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(GpError::Domain("γ and B must be finite and non-negative".into()));
    }
    let l = ((n as f64 + 1.0) / (1.0 - delta.powf(1.0 / 6.0))).ln();
    let l3 = l * l * l;
    Ok(Vector6::from_fn(|j, _| (2.0 * caps[j] * caps[j] + 300.0 * gamma[j] * l3).sqrt()))
}

/// `‖β ⊙ √var‖₂`.
pub fn rho_bar(beta: &Vector6<f64>, prediction: &Prediction) -> f64 {
    beta.component_mul(&prediction.std_dev()).norm()
}

/// Confidence machinery for one dataset generation.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBundle {
    pub n: usize,
    pub beta: Vector6<f64>,
    pub gamma: Vector6<f64>,
    pub caps: Vector6<f64>,
    pub delta: f64,
}

impl BoundBundle {
    /// Computes `γ_j` over the envelope candidates with `k_max = N + 1`
    /// (capped by the candidate count) and the resulting `β_n`.
    ///
    /// `caps` defaults to twice the largest `|y_j|` in the dataset.
    pub fn compute(
        model: &GpModel,
        data: &Dataset,
        candidates: &[DVector<f64>],
        delta: f64,
        caps: Option<Vector6<f64>>,
    ) -> Result<Self, GpError> {
        let n = data.len();
        let caps = caps.unwrap_or_else(|| data.sup_abs_outputs() * 2.0);
        let k_max = (n + 1).min(candidates.len());
        let mut gamma = Vector6::zeros();
        let mut cache: Option<f64> = None;
        for j in 0..OUTPUTS {
            let h = model.kernels().for_output(j);
            if let (Some(g), super::OutputKernels::Shared(_)) = (cache, model.kernels()) {
                gamma[j] = g;
                continue;
            }
            let g = info_gain(candidates, h, h.noise_var, k_max).value;
            cache = Some(g);
            gamma[j] = g;
        }
        let beta = beta(n, &gamma, &caps, delta)?;
        Ok(Self { n, beta, gamma, caps, delta })
    }

    pub fn rho_bar(&self, model: &GpModel, x: &DVector<f64>) -> f64 {
        rho_bar(&self.beta, &model.predict(x))
    }
}

#[cfg(test)]
mod tests {
    use super::super::dataset::TrainingPoint;
    use super::super::model::{build_model, MeanFunction};
    use super::super::OutputKernels;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cands(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<DVector<f64>> {
        (0..n).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.5..1.5))).collect()
    }

    #[test]
    fn single_candidate_closed_form() {
        let h = Hyperparams::isotropic(2, 1.0, 2.0, 0.1).unwrap();
        let c = vec![DVector::from_vec(vec![0.1, 0.2])];
        let g = info_gain(&c, &h, 0.5, 1);
        assert_relative_eq!(g.value, 0.5 * (1.0f64 + 2.0 / 0.5).ln(), epsilon = 1e-14);
        let gg = info_gain_greedy(&c, &h, 0.5, 1);
        assert_relative_eq!(gg.value, g.value, epsilon = 1e-14);
    }

    #[test]
    fn duplicates_add_vanishing_gain() {
        let h = Hyperparams::isotropic(1, 1.0, 1.0, 0.1).unwrap();
        let x = DVector::from_element(1, 0.3);
        let one = info_gain_greedy(std::slice::from_ref(&x), &h, 1e-2, 1).value;
        let many = info_gain_greedy(&vec![x; 20], &h, 1e-2, 5).value;
        // each duplicate only halves the residual; the total grows logarithmically
        assert!(many - one < 0.5 * (5.0f64).ln() + 1e-9);
        let spread: Vec<_> = (0..20).map(|i| DVector::from_element(1, i as f64 * 5.0)).collect();
        assert!(info_gain_greedy(&spread, &h, 1e-2, 5).value > many);
    }

    #[test]
    fn greedy_within_submodular_ratio_of_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let c = cands(&mut rng, 10, 2);
            let h = Hyperparams::isotropic(2, 0.7, 1.0, 0.1).unwrap();
            let exact = info_gain(&c, &h, 0.05, 3);
            assert!(exact.exhaustive);
            let g = info_gain_greedy(&c, &h, 0.05, 3);
            assert!(g.value >= (1.0 - (-1.0f64).exp()) * exact.value - 1e-12);
            assert!(g.value <= exact.value + 1e-9);
        }
    }

    #[test]
    fn greedy_value_matches_log_det_of_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = cands(&mut rng, 40, 3);
        let h = Hyperparams::isotropic(3, 0.5, 1.3, 0.1).unwrap();
        let g = info_gain(&c, &h, 0.02, 8);
        assert!(!g.exhaustive);
        assert_relative_eq!(g.value, log_det_gain(&c, &g.selected, &h, 0.02), epsilon = 1e-9);
    }

    #[test]
    fn beta_examples() {
        let z = Vector6::zeros();
        assert_eq!(beta(10, &z, &z, 0.5).unwrap(), z);
        // N = 0, δ = (1 − 1/e)⁶ makes the logarithm exactly 1
        let delta = (1.0 - (-1.0f64).exp()).powi(6);
        let b = beta(0, &Vector6::repeat(1.0), &z, delta).unwrap();
        assert_relative_eq!(b[0], 300f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(b[0], 17.320508, epsilon = 1e-6);
        let delta1 = (1.0 - 2.0 * (-1.0f64).exp()).powi(6);
        assert_relative_eq!(beta(1, &Vector6::repeat(1.0), &z, delta1).unwrap()[3], 300f64.sqrt(), epsilon = 1e-9);
        assert!(beta(10, &z, &z, 0.0).is_err());
        assert!(beta(10, &z, &z, 1.0).is_err());
        assert!(beta(10, &z, &z, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn beta_monotone(n in 0usize..10_000, g in 0.0f64..50.0, b in 0.0f64..10.0, d in 0.01f64..0.98) {
            let base = beta(n, &Vector6::repeat(g), &Vector6::repeat(b), d).unwrap()[0];
            prop_assert!(beta(n + 1, &Vector6::repeat(g), &Vector6::repeat(b), d).unwrap()[0] >= base);
            prop_assert!(beta(n, &Vector6::repeat(g + 0.5), &Vector6::repeat(b), d).unwrap()[0] >= base);
            prop_assert!(beta(n, &Vector6::repeat(g), &Vector6::repeat(b + 0.5), d).unwrap()[0] >= base);
            prop_assert!(beta(n, &Vector6::repeat(g), &Vector6::repeat(b), d + 0.01).unwrap()[0] >= base);
            prop_assert!(base >= 0.0);
        }
    }

    fn small_model(rng: &mut ChaCha8Rng, sn: f64) -> (Dataset, GpModel) {
        let mut d = Dataset::unbounded();
        for x in cands(rng, 12, 2) {
            let y = Vector6::from_fn(|j, _| (x[0] * (j + 1) as f64).sin() + x[1]);
            d.update(TrainingPoint { input: x, output: y, t: 0.0 }).unwrap();
        }
        let h = Hyperparams::isotropic(2, 0.8, 1.0, sn).unwrap();
        let m = build_model(&d, OutputKernels::Shared(h), MeanFunction::Zero).unwrap();
        (d, m)
    }

    #[test]
    fn rho_bar_composition_and_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (d, m) = small_model(&mut rng, 1e-12);
        let b = Vector6::new(1.0, 2.0, 0.5, 3.0, 0.1, 1.5);
        for _ in 0..10 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let p = m.predict(&x);
            let hand = (0..6).map(|j| (b[j] * p.variance[j].sqrt()).powi(2)).sum::<f64>().sqrt();
            assert!((rho_bar(&b, &p) - hand).abs() <= 1e-12);
        }
        assert_eq!(rho_bar(&Vector6::zeros(), &m.predict(&DVector::zeros(2))), 0.0);
        let x0 = d.points().next().unwrap().input.clone();
        assert!(rho_bar(&b, &m.predict(&x0)) < 1e-4);
    }

    #[test]
    fn bundle_uses_default_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (d, m) = small_model(&mut rng, 0.01);
        let c = cands(&mut rng, 30, 2);
        let bb = BoundBundle::compute(&m, &d, &c, 0.05, None).unwrap();
        assert_eq!(bb.caps, d.sup_abs_outputs() * 2.0);
        assert!(bb.gamma.iter().all(|&g| g > 0.0));
        assert!(bb.beta.iter().all(|&v| v >= 0.0));
        assert!(bb.rho_bar(&m, &c[0]) >= 0.0);
    }
}
