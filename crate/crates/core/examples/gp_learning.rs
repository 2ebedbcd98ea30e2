//! Learns a state-dependent disturbance from noisy samples, fits the kernel
//! hyperparameters and evaluates the high-probability error bound.
use hexafault::dynamics::{DisturbanceParams, GroundTruthDisturbance, RigidState};
use hexafault::gp::{
    build_model, encode_state, fit_hyperparameters, BoundBundle, Dataset, EncodingScales, FitOptions, Hyperparams,
    MeanFunction, OutputKernels, TrainingPoint, UpdatePolicy,
};
use hexafault::se3::exp_so3;
use nalgebra::{DMatrix, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng) -> RigidState {
    let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    RigidState { rotation: exp_so3(&(0.3 * v())), position: v(), omega: 0.5 * v(), velocity: v() }
}

fn main() {
    let truth = GroundTruthDisturbance::from_params(&DisturbanceParams::tilt_aero_default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = Dataset::new(200, UpdatePolicy::SlidingWindow, None);
    for i in 0..120 {
        let s = random_state(&mut rng);
        let noise = Vector6::from_fn(|j, _| if j < 3 { 0.2 } else { 0.005 } * rng.random_range(-1.0..1.0));
        let y = truth.sample(&s, true).stacked() + noise;
        data.update(TrainingPoint { input: encode_state(&s), output: y, t: i as f64 * 0.05 }).unwrap();
    }

    let scales = EncodingScales::default();
    let init = Hyperparams::new(scales.lengthscales(1.0), 1.0, 0.05).unwrap();
    let inputs = data.inputs();
    let y = data.outputs();
    let fit = |cols: DMatrix<f64>, h: &Hyperparams| {
        let opts = FitOptions { budget: 60, starts: 3, ..Default::default() };
        fit_hyperparameters(&inputs, &cols, h, &opts).unwrap()
    };
    let per_output: Vec<Hyperparams> = (0..6)
        .map(|j| {
            let r = fit(y.columns(j, 1).into_owned(), &init);
            println!("output {j}: log-evidence {:.2} -> {:.2}", r.initial_log_likelihood, r.log_likelihood);
            r.hyperparams
        })
        .collect();
    let model = build_model(&data, OutputKernels::PerOutput(per_output), MeanFunction::Zero).unwrap();

    let candidates: Vec<_> = inputs.iter().step_by(2).cloned().collect();
    let bounds = BoundBundle::compute(&model, &data, &candidates, 0.9, None).unwrap();
    println!("β = {:?}", bounds.beta.as_slice());

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = random_state(&mut rng);
        let x = encode_state(&s);
        let err = (truth.sample(&s, true).stacked() - model.predict_mean(&x)).norm();
        worst = worst.max(err / bounds.rho_bar(&model, &x));
    }
    println!("largest ‖f − μ‖ / ρ̄ over 200 test states: {worst:.3}");
}
