//! Integrates a torque-free tumbling body and a hover with RK4, reporting
//! conserved quantities and the rotation drift.
use hexafault::dynamics::{step_rk4, DisturbanceSample, InertiaParams, RigidState, Wrench};
use hexafault::se3::orthogonality_defect;
use nalgebra::{Matrix3, Vector3};

fn main() {
    let params = InertiaParams::new(2.8, Matrix3::from_diagonal(&Vector3::new(0.035, 0.045, 0.075)), 0.0).unwrap();
    let mut s = RigidState::at_rest(Vector3::zeros());
    s.omega = Vector3::new(0.1, 3.0, 0.2);
    let j = params.inertia;
    let energy = |s: &RigidState| 0.5 * s.omega.dot(&(j * s.omega));
    let momentum = |s: &RigidState| s.rotation * (j * s.omega);
    let (e0, h0) = (energy(&s), momentum(&s));
    let dt = 1e-3;
    let zero = Wrench::new(Vector3::zeros(), Vector3::zeros());
    for k in 1..=10_000 {
        s = step_rk4(&s, &zero, |_| DisturbanceSample::default(), dt, &params).unwrap();
        if k % 2000 == 0 {
            println!(
                "t={:5.1}s  energy drift {:.2e}  momentum drift {:.2e}  ‖RᵀR−I‖ {:.2e}",
                k as f64 * dt,
                (energy(&s) - e0).abs() / e0,
                (momentum(&s) - h0).norm() / h0.norm(),
                orthogonality_defect(s.rotation.matrix())
            );
        }
    }

    let params = InertiaParams::hexarotor();
    let mut s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.5));
    let hover = Wrench::new(Vector3::zeros(), Vector3::new(0.0, 0.0, params.mass * params.gravity));
    for _ in 0..5000 {
        s = step_rk4(&s, &hover, |_| DisturbanceSample::default(), dt, &params).unwrap();
    }
    println!("hover after 5 s: position {:?}", s.position.as_slice());
}
