//! Rotation errors and the small SO(3)/SE(3) toolkit.
use hexafault::se3::{
    axis_angle, chi_error, exp_so3, hat, orthogonality_defect, psi_error, reproject, vee, BodyTwist,
};
use nalgebra::{Matrix3, Vector3};

fn main() {
    let w = Vector3::new(0.3, -1.2, 0.5);
    println!("hat(w) =\n{}", hat(&w));
    println!("vee(hat(w)) = {:?}", vee(&hat(&w)).unwrap().as_slice());

    let rd = axis_angle(&Vector3::z(), 0.0);
    println!("{:>8} {:>10} {:>10}", "angle", "psi", "|chi|");
    for deg in [0.0, 30.0, 90.0, 150.0, 180.0] {
        let r = axis_angle(&Vector3::new(1.0, 1.0, 0.0).normalize(), f64::to_radians(deg));
        println!("{deg:>8.1} {:>10.4} {:>10.4}", psi_error(&r, &rd), chi_error(&r, &rd).norm());
    }

    let drifted = exp_so3(&Vector3::new(0.2, 0.1, -0.4)).into_inner() + Matrix3::repeat(1e-4);
    println!("orthogonality defect before reprojection {:.2e}", orthogonality_defect(&drifted));
    let fixed = reproject(&drifted).unwrap();
    println!("orthogonality defect after reprojection  {:.2e}", orthogonality_defect(fixed.matrix()));

    let xi = BodyTwist::new(w, Vector3::new(1.0, 0.0, 0.0));
    println!("stacked twist (ω, v) = {:?}", xi.stacked().as_slice());
}
