//! Deterministic reverse-time integration of the update field
//! `dx/dt = (s'/s + σ'/σ) x − (σ' s/σ) D(x; t)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::process::DiffusionProcess;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridScheme {
    #[default]
    Uniform,
    /// Knots `ε + (T − ε)(k/steps)²`, dense near the end.
    Quadratic,
}

/// Strictly decreasing knots `t_0 = T > … > t_steps = ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

/// Terminal knot `T/1000` shared by every grid.
pub fn grid_end(horizon: f64) -> f64 {
    horizon / 1000.0
}

pub fn make_time_grid(horizon: f64, steps: usize, scheme: GridScheme) -> Result<TimeGrid> {
    if steps < 1 {
        return Err(Error::InvalidArgument(
            "a time grid needs steps >= 1".into(),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
    }
    let eps = grid_end(horizon);
    let n = steps as f64;
    let times = (0..=steps)
        .map(|k| {
            if k == 0 {
                return horizon;
            }
            if k == steps {
                return eps;
            }
            let r = (steps - k) as f64 / n;
            match scheme {
                GridScheme::Uniform => eps + (horizon - eps) * r,
                GridScheme::Quadratic => eps + (horizon - eps) * r * r,
            }
        })
        .collect();
    TimeGrid::from_times(times)
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a time grid needs two knots".into()));
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) || !(times[times.len() - 1] > 0.0) {
            return Err(Error::InvalidArgument(
                "grid knots must be positive and strictly decreasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EulerOptions {
    /// Replace the final state by `D(x; t_last)`.
    pub final_denoise: bool,
    /// Keep the state at every knot.
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct EulerRun {
    pub output: Field,
    /// `(t, x)` at each knot, starting with the initial state; empty unless recorded.
    pub trajectory: Vec<(f64, Field)>,
}

fn check_grid(p: &DiffusionProcess, grid: &TimeGrid) -> Result<()> {
    if grid.start() > p.horizon() {
        return Err(Error::TimeOutOfRange {
            t: grid.start(),
            horizon: p.horizon(),
        });
    }
    Ok(())
}

/// One Euler step from `t` to `t_next` (which is smaller).
pub fn euler_step(
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    x: &Field,
    t: f64,
    t_next: f64,
) -> Result<Field> {
    let d = p.pfode_rhs(den, t, x)?;
    let mut next = x.clone();
    next.axpy(t_next - t, &d);
    if !next.is_finite() {
        return Err(Error::NonFiniteState { t: t_next });
    }
    Ok(next)
}

pub fn sample_euler(
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    x_init: &Field,
    grid: &TimeGrid,
) -> Result<Field> {
    Ok(sample_euler_with(p, den, x_init, grid, EulerOptions::default())?.output)
}

pub fn sample_euler_with(
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    x_init: &Field,
    grid: &TimeGrid,
    opts: EulerOptions,
) -> Result<EulerRun> {
    check_grid(p, grid)?;
    x_init.ensure_shape(p.shape())?;
    let mut trajectory = Vec::new();
    if opts.record {
        trajectory.push((grid.start(), x_init.clone()));
    }
    let mut x = x_init.clone();
    for w in grid.times().windows(2) {
        x = euler_step(p, den, &x, w[0], w[1])?;
        if opts.record {
            trajectory.push((w[1], x.clone()));
        }
    }
    if opts.final_denoise {
        x = den.denoise(&x, grid.end())?;
    }
    Ok(EulerRun {
        output: x,
        trajectory,
    })
}

/// Classical fourth-order Runge–Kutta from `T` to `T/1000` on the quadratic
/// grid, whose knots cluster where `σ'/σ ~ 1/(2t)` grows.
pub fn sample_reference(
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    x_init: &Field,
    steps: usize,
) -> Result<Field> {
    if steps < 4 {
        return Err(Error::InvalidArgument(
            "the reference integrator needs steps >= 4".into(),
        ));
    }
    let grid = make_time_grid(p.horizon(), steps, GridScheme::Quadratic)?;
    sample_reference_on(p, den, x_init, &grid)
}

/// Fourth-order Runge–Kutta over an arbitrary grid.
pub fn sample_reference_on(
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    x_init: &Field,
    grid: &TimeGrid,
) -> Result<Field> {
    check_grid(p, grid)?;
    x_init.ensure_shape(p.shape())?;
    let mut x = x_init.clone();
    for w in grid.times().windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let mid = t + 0.5 * h;
        let k1 = p.pfode_rhs(den, t, &x)?;
        let k2 = p.pfode_rhs(den, mid, &(&x + &k1.scale(0.5 * h)))?;
        let k3 = p.pfode_rhs(den, mid, &(&x + &k2.scale(0.5 * h)))?;
        let k4 = p.pfode_rhs(den, w[1], &(&x + &k3.scale(h)))?;
        let mut incr = k1;
        incr.axpy(2.0, &k2);
        incr.axpy(2.0, &k3);
        incr += &k4;
        x.axpy(h / 6.0, &incr);
        if !x.is_finite() {
            return Err(Error::NonFiniteState { t: w[1] });
        }
    }
    Ok(x)
}

/// `t,x0,x1,…` CSV, one row per knot.
pub fn write_trajectory_csv<W: Write>(w: &mut W, trajectory: &[(f64, Field)]) -> Result<()> {
    let d = trajectory.first().map_or(0, |(_, x)| x.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..d).map(|i| format!("x{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, x) in trajectory {
        let row: Vec<String> = std::iter::once(format!("{t:e}"))
            .chain(x.data().iter().map(|v| format!("{v:e}")))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::pixel_basis;
    use crate::denoiser::ConstantOracle;
    use crate::schedule::make_vp_schedule;

    #[test]
    fn five_step_uniform_grid() {
        let g = make_time_grid(100.0, 5, GridScheme::Uniform).unwrap();
        let expected = [100.0, 80.02, 60.04, 40.06, 20.08, 0.1];
        for (a, b) in g.times().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(g.steps(), 5);
    }

    #[test]
    fn single_step_grid() {
        let g = make_time_grid(100.0, 1, GridScheme::Uniform).unwrap();
        assert_eq!(g.times(), &[100.0, 0.1]);
        assert!(make_time_grid(100.0, 0, GridScheme::Uniform).is_err());
    }

    #[test]
    fn quadratic_grid_is_decreasing() {
        for steps in [1, 2, 5, 17, 100] {
            let g = make_time_grid(100.0, steps, GridScheme::Quadratic).unwrap();
            assert!(g.times().windows(2).all(|w| w[1] < w[0]));
            assert_eq!(g.end(), 0.1);
            assert_eq!(g.start(), 100.0);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::from_times(vec![1.0, 2.0]).is_err());
        assert!(TimeGrid::from_times(vec![1.0, 0.0]).is_err());
        assert!(TimeGrid::from_times(vec![1.0]).is_err());
    }

    #[test]
    fn tiny_step_near_the_end_barely_moves() {
        let p = DiffusionProcess::new(
            make_vp_schedule(0.0001, 0.02, 100.0).unwrap(),
            pixel_basis(&[2]),
            0.0,
        )
        .unwrap();
        let den = ConstantOracle::new(Field::from_vec(vec![0.0, 0.0]));
        let x = Field::from_vec(vec![0.01, -0.02]);
        let grid = TimeGrid::from_times(vec![0.1001, 0.1]).unwrap();
        let out = sample_euler(&p, &den, &x, &grid).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-3);
    }

    #[test]
    fn records_every_knot() {
        let p = DiffusionProcess::new(
            make_vp_schedule(0.0001, 0.02, 100.0).unwrap(),
            pixel_basis(&[1]),
            0.0,
        )
        .unwrap();
        let den = ConstantOracle::new(Field::from_vec(vec![0.5]));
        let grid = make_time_grid(100.0, 5, GridScheme::Uniform).unwrap();
        let run = sample_euler_with(
            &p,
            &den,
            &Field::from_vec(vec![1.0]),
            &grid,
            EulerOptions {
                final_denoise: true,
                record: true,
            },
        )
        .unwrap();
        assert_eq!(run.trajectory.len(), 6);
        assert_eq!(run.output.data(), &[0.5]);
        let mut csv = Vec::new();
        write_trajectory_csv(&mut csv, &run.trajectory).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,x0\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
