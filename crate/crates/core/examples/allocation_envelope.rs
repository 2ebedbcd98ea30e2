//! Hover allocation, single-rotor failure reconfiguration with a tilting
//! partner, and the worst-case yaw/roll/pitch torque envelope.
use hexafault::allocation::{
    allocate, build_a, hover_pwm, reconfigure, sphere_directions, worst_direction, EnvelopeMethod, RotorLayout,
};
use hexafault::dynamics::InertiaParams;
use nalgebra::Vector3;

fn main() {
    let params = InertiaParams::hexarotor();
    let layout = RotorLayout::default_hexarotor();
    let nominal = build_a(&layout);
    println!("hover PWM, all rotors: {:.2?}", hover_pwm(&nominal, &layout, &params).unwrap().u.as_slice());

    let f_z = params.mass * params.gravity;
    let dirs = sphere_directions(400);
    let (alpha, _) = worst_direction(&nominal, &layout, f_z, &dirs, EnvelopeMethod::Exact).unwrap();
    println!("nominal worst-case torque margin {alpha:.3} N·m");

    for failed in 1..=6 {
        let (l, a) = reconfigure(&layout, failed).unwrap();
        let tilt = l.deployed.map_or("none".to_string(), |(r, ang)| format!("M{} at {:+.0}°", r + 1, ang.to_degrees()));
        let (alpha, _) = worst_direction(&a, &l, f_z, &dirs, EnvelopeMethod::Exact).unwrap();
        let pwm = hover_pwm(&a, &l, &params).unwrap();
        println!("M{failed} lost: tilt {tilt:<12} margin {alpha:.3} N·m  hover {:.1?}", pwm.u.as_slice());
    }

    let (l, a) = reconfigure(&layout, 3).unwrap();
    let cmd = allocate(&a, &l, &Vector3::new(0.0, 0.0, 0.4), f_z).unwrap();
    println!("yaw 0.4 N·m with M3 lost: {:.1?} saturated={}", cmd.u.as_slice(), cmd.any_saturated());
}
