use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::metrics::MetricsReport;
use super::sim::{LogRow, RunStatus, ScenarioLog};
use super::HarnessError;
use crate::gp::CSV_HEADER;
use crate::se3::RotationMatrix;

/// Columns of the per-tick log. Units: s, m, m/s, rad/s, rad, N, N·m, %.
/// `r*` is the body-to-world rotation row-major, `v*` the body velocity,
/// `rd*` the attitude setpoint, `gp_*`/`gpvar_*` the posterior mean and
/// variance of `(f_v, f_ω)`, `dist_*` the true disturbance.
pub const LOG_HEADER: [&str; 81] = [
    "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "px", "py", "pz", "wx", "wy", "wz", "vx", "vy",
    "vz", "pd_x", "pd_y", "pd_z", "pdot_d_x", "pdot_d_y", "pdot_d_z", "yaw_d", "rd11", "rd12", "rd13", "rd21", "rd22",
    "rd23", "rd31", "rd32", "rd33", "u1_x", "u1_y", "u1_z", "u2_x", "u2_y", "u2_z", "thrust", "f_z", "pwm1", "pwm2",
    "pwm3", "pwm4", "pwm5", "pwm6", "saturated", "gp_fvx", "gp_fvy", "gp_fvz", "gp_fwx", "gp_fwy", "gp_fwz",
    "gpvar_fvx", "gpvar_fvy", "gpvar_fvz", "gpvar_fwx", "gpvar_fwy", "gpvar_fwz", "rho_bar", "dist_fvx", "dist_fvy",
    "dist_fvz", "dist_fwx", "dist_fwy", "dist_fwz", "e_norm", "z_norm", "chi_norm", "omega_err_norm", "zeta", "eta",
    "psi", "fault", "reconfigured", "degenerate", "n_data", "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub log_csv: PathBuf,
    pub training_csv: PathBuf,
    pub metrics: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { context: path.to_path_buf(), source }
}

fn row_fields(r: &LogRow, status: u8) -> Vec<String> {
    let mut out = Vec::with_capacity(LOG_HEADER.len());
    let mut push = |x: f64| out.push(x.to_string());
    push(r.t);
    for i in 0..3 {
        for j in 0..3 {
            push(r.rotation[(i, j)]);
        }
    }
    r.position.iter().chain(&r.omega).chain(&r.velocity).chain(&r.p_d).chain(&r.pdot_d).for_each(|&x| push(x));
    push(r.yaw_d);
    for i in 0..3 {
        for j in 0..3 {
            push(r.r_d[(i, j)]);
        }
    }
    r.u1.iter().chain(&r.u2).for_each(|&x| push(x));
    push(r.thrust);
    push(r.f_z);
    r.pwm.iter().for_each(|&x| push(x));
    push(r.saturated as f64);
    r.gp_mean.iter().chain(&r.gp_var).for_each(|&x| push(x));
    push(r.rho_bar);
    r.disturbance.iter().for_each(|&x| push(x));
    for x in [r.e_norm, r.z_norm, r.chi_norm, r.omega_err_norm, r.zeta, r.eta, r.psi] {
        push(x);
    }
    for b in [r.fault, r.reconfigured, r.degenerate] {
        out.push(u8::from(b).to_string());
    }
    out.push(r.n_data.to_string());
    out.push(status.to_string());
    out
}

/// Writes the per-tick log. The `status` column is 1 on every row of a
/// completed run and 0 on the rows of an aborted one.
pub fn write_log_csv<W: Write>(log: &ScenarioLog, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(LOG_HEADER)?;
    let status = u8::from(log.status == RunStatus::Completed);
    for r in &log.rows {
        wr.write_record(row_fields(r, status))?;
    }
    wr.flush()?;
    Ok(())
}

fn write_training_csv<W: Write>(log: &ScenarioLog, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for rec in &log.training {
        let p = &rec.point;
        let fields = p.input.iter().chain(p.output.iter()).chain(std::iter::once(&p.t)).map(|x| x.to_string());
        wr.write_record(fields)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_metrics<W: Write>(log: &ScenarioLog, report: &MetricsReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "name={}", log.config.name)?;
    writeln!(w, "seed={}", log.config.seed)?;
    match &log.status {
        RunStatus::Completed => writeln!(w, "status=completed")?,
        RunStatus::Aborted { t, reason } => writeln!(w, "status=aborted at t={t}: {reason}")?,
    }
    writeln!(w, "rows={}", log.rows.len())?;
    writeln!(w, "training_points={}", log.training.len())?;
    writeln!(w, "dataset_switches={}", log.dataset_switches)?;
    writeln!(w, "hyperparameter_refits={}", log.refits)?;
    writeln!(w, "disturbance_scale={}", log.disturbance_scale)?;
    for (k, v) in report.key_values() {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()
}

/// Writes `key=value` lines, creating parent directories as needed.
pub fn write_key_values(path: &Path, kv: &[(String, String)]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for (k, v) in kv {
        writeln!(w, "{k}={v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `log.csv`, `training.csv`, `metrics.txt` and, for non-empty logs,
/// four SVG plots into `outdir`.
pub fn emit(log: &ScenarioLog, report: &MetricsReport, outdir: &Path) -> Result<EmittedFiles, HarnessError> {
    std::fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    let log_csv = outdir.join("log.csv");
    let training_csv = outdir.join("training.csv");
    let metrics = outdir.join("metrics.txt");

    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| HarnessError::Output(format!("{}: {e}", p.display()))
    };
    let f = File::create(&log_csv).map_err(io_err(&log_csv))?;
    write_log_csv(log, BufWriter::new(f)).map_err(csv_err(&log_csv))?;
    let f = File::create(&training_csv).map_err(io_err(&training_csv))?;
    write_training_csv(log, BufWriter::new(f)).map_err(csv_err(&training_csv))?;
    let f = File::create(&metrics).map_err(io_err(&metrics))?;
    write_metrics(log, report, BufWriter::new(f)).map_err(io_err(&metrics))?;

    let mut plots = Vec::new();
    if !log.rows.is_empty() {
        let stride = log.rows.len().div_ceil(4000).max(1);
        let rows: Vec<&LogRow> = log.rows.iter().step_by(stride).collect();
        for (name, draw) in [
            ("trajectory_xy.svg", plot_trajectory as PlotFn),
            ("attitude.svg", plot_attitude),
            ("pwm.svg", plot_pwm),
            ("gp_force.svg", plot_gp),
        ] {
            let path = outdir.join(name);
            draw(&rows, &path).map_err(|e| HarnessError::Output(format!("{}: {e}", path.display())))?;
            plots.push(path);
        }
    }
    Ok(EmittedFiles { log_csv, training_csv, metrics, plots })
}

type PlotResult = Result<(), Box<dyn std::error::Error>>;
type PlotFn = fn(&[&LogRow], &Path) -> PlotResult;

fn range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return -1.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad)..(hi + pad)
}

fn time_range(rows: &[&LogRow]) -> std::ops::Range<f64> {
    rows[0].t..rows[rows.len() - 1].t.max(rows[0].t + 1e-6)
}

fn plot_trajectory(rows: &[&LogRow], path: &Path) -> PlotResult {
    let root = SVGBackend::new(path, (800, 700)).into_drawing_area();
    root.fill(&WHITE)?;
    let xs = range(rows.iter().flat_map(|r| [r.position.x, r.p_d.x]));
    let ys = range(rows.iter().flat_map(|r| [r.position.y, r.p_d.y]));
    let mut chart = ChartBuilder::on(&root)
        .caption("Top-down trajectory", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(xs, ys)?;
    chart.configure_mesh().x_desc("x [m]").y_desc("y [m]").draw()?;
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.p_d.x, r.p_d.y)), BLACK.stroke_width(1)))?
        .label("reference")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.position.x, r.position.y)), BLUE.stroke_width(2)))?
        .label("vehicle")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw()?;
    root.present()?;
    Ok(())
}

fn plot_attitude(rows: &[&LogRow], path: &Path) -> PlotResult {
    let angles: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| {
            let (roll, pitch, _) = RotationMatrix::from_matrix_unchecked(r.rotation).euler_angles();
            (r.t, roll.to_degrees(), pitch.to_degrees())
        })
        .collect();
    let root = SVGBackend::new(path, (1000, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Roll and pitch", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(time_range(rows), range(angles.iter().flat_map(|a| [a.1, a.2])))?;
    chart.configure_mesh().x_desc("t [s]").y_desc("angle [deg]").draw()?;
    chart
        .draw_series(LineSeries::new(angles.iter().map(|a| (a.0, a.1)), RED))?
        .label("roll")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    chart
        .draw_series(LineSeries::new(angles.iter().map(|a| (a.0, a.2)), BLUE))?
        .label("pitch")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw()?;
    root.present()?;
    Ok(())
}

fn plot_pwm(rows: &[&LogRow], path: &Path) -> PlotResult {
    let root = SVGBackend::new(path, (1000, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Rotor commands", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(time_range(rows), 0.0..105.0)?;
    chart.configure_mesh().x_desc("t [s]").y_desc("PWM [%]").draw()?;
    for i in 0..6 {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.t, r.pwm[i])), color))?
            .label(format!("M{}", i + 1))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw()?;
    root.present()?;
    Ok(())
}

fn plot_gp(rows: &[&LogRow], path: &Path) -> PlotResult {
    let root = SVGBackend::new(path, (1000, 900)).into_drawing_area();
    root.fill(&WHITE)?;
    let panels = root.split_evenly((3, 1));
    for (c, (panel, axis)) in panels.iter().zip(["x", "y", "z"]).enumerate() {
        let band = |r: &LogRow, s: f64| r.gp_mean[c] + s * 1.96 * r.gp_var[c].max(0.0).sqrt();
        let ys = range(rows.iter().flat_map(|r| [band(r, -1.0), band(r, 1.0), r.disturbance[c]]));
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("f_v,{axis}: GP mean with 95% band"), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(time_range(rows), ys)?;
        chart.configure_mesh().x_desc("t [s]").y_desc("N").draw()?;
        let upper = rows.iter().map(|r| (r.t, band(r, 1.0)));
        let lower = rows.iter().rev().map(|r| (r.t, band(r, -1.0)));
        chart.draw_series(std::iter::once(Polygon::new(upper.chain(lower).collect::<Vec<_>>(), BLUE.mix(0.2))))?;
        chart.draw_series(LineSeries::new(rows.iter().map(|r| (r.t, r.gp_mean[c])), BLUE))?;
        chart.draw_series(LineSeries::new(rows.iter().map(|r| (r.t, r.disturbance[c])), BLACK))?;
    }
    root.present()?;
    Ok(())
}
