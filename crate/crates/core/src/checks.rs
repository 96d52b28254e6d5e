//! Seeded numerical audits: finite-difference gradient checks over every
//! primitive and layer, and rotation-group residuals over random planes.

use crate::array::Array;
use crate::autodiff::{concat_rows, grad_check, Var};
use crate::error::Result;
use crate::nn::{film_var, Activation, FilmrVars, MlpParams};
use crate::rng::Rng;
use crate::rotation::{angle_between, rotation_diagnostics, PlanePair};

type Probe = for<'t> fn(Var<'t>) -> Result<Var<'t>>;

/// A differentiable function of one `rows x cols` input.
pub struct GradCase {
    pub name: &'static str,
    pub shape: (usize, usize),
    probe: Probe,
}

const fn case(name: &'static str, shape: (usize, usize), probe: Probe) -> GradCase {
    GradCase { name, shape, probe }
}

fn top(x: Var<'_>) -> Result<Var<'_>> {
    x.slice_rows(0, 3)
}

fn bottom(x: Var<'_>) -> Result<Var<'_>> {
    x.slice_rows(3, 3)
}

fn fixed_mlp() -> MlpParams {
    MlpParams::init(
        &[4, 5, 3],
        &[Activation::Tanh, Activation::Linear],
        &mut Rng::seeded(11),
    )
    .expect("valid sizes")
}

fn fixed_filmr_parts() -> [Array; 4] {
    let mut rng = Rng::seeded(12);
    [
        rng.normal_array(1, 4, 1.0),
        rng.normal_array(1, 4, 1.0),
        rng.normal_array(1, 4, 1.0),
        rng.normal_array(1, 4, 1.0),
    ]
}

fn filmr_with<'t>(x: Var<'t>, slot: usize, value: Var<'t>) -> Result<Var<'t>> {
    let tape = value.tape();
    let parts = fixed_filmr_parts();
    let mut vars: Vec<Var<'t>> = parts.into_iter().map(|a| tape.constant(a)).collect();
    vars[slot] = value;
    FilmrVars {
        gamma: vars[0],
        beta: vars[1],
        u: vars[2],
        v: vars[3],
    }
    .forward(x)
}

fn fixed_points(tape: &crate::autodiff::Tape) -> Var<'_> {
    tape.constant(Rng::seeded(13).normal_array(3, 4, 1.0))
}

/// Every primitive plus the MLP, FiLM and FiLMR layers (the latter through
/// each of its parameter groups, so the rotation construction is covered).
pub fn grad_cases() -> Vec<GradCase> {
    vec![
        case("add", (6, 4), |x| top(x)?.add(bottom(x)?)),
        case("sub", (6, 4), |x| top(x)?.sub(bottom(x)?)),
        case("mul", (6, 4), |x| top(x)?.mul(bottom(x)?)),
        case("div", (6, 4), |x| {
            top(x)?.div(bottom(x)?.square().offset(0.5))
        }),
        case("scale", (3, 4), |x| Ok(x.scale(-1.7))),
        case("offset", (3, 4), |x| Ok(x.offset(0.3).square())),
        case("mul_scalar", (6, 4), |x| {
            top(x)?.mul_scalar(bottom(x)?.sum())
        }),
        case("matmul", (6, 4), |x| top(x)?.matmul(bottom(x)?.t())),
        case("transpose", (3, 4), |x| Ok(x.t())),
        case("tanh", (3, 4), |x| Ok(x.tanh())),
        case("relu", (3, 4), |x| Ok(x.relu())),
        case("square", (3, 4), |x| Ok(x.square())),
        case("sqrt", (3, 4), |x| x.square().offset(0.1).sqrt()),
        case("sum", (3, 4), |x| Ok(x.sum())),
        case("mean", (3, 4), |x| x.mean()),
        case("sum_rows", (3, 4), |x| Ok(x.sum_rows())),
        case("mean_rows", (3, 4), |x| x.mean_rows()),
        case("sum_cols", (3, 4), |x| Ok(x.sum_cols())),
        case("concat_rows", (6, 4), |x| {
            concat_rows(&[bottom(x)?, top(x)?.tanh()])
        }),
        case("slice_rows", (6, 4), |x| x.slice_rows(2, 3)),
        case("norm", (3, 4), |x| Ok(x.norm())),
        case("broadcast_rows", (1, 4), |x| x.broadcast_rows(3)),
        case("broadcast_cols", (3, 1), |x| x.broadcast_cols(4)),
        case("add_row", (4, 4), |x| {
            x.slice_rows(0, 3)?.add_row(x.slice_rows(3, 1)?)
        }),
        case("mul_row", (4, 4), |x| {
            x.slice_rows(0, 3)?.mul_row(x.slice_rows(3, 1)?)
        }),
        case("sub_row", (4, 4), |x| {
            x.slice_rows(0, 3)?.sub_row(x.slice_rows(3, 1)?)
        }),
        case("div_scalar", (6, 4), |x| {
            top(x)?.div_scalar(bottom(x)?.square().sum().offset(0.5))
        }),
        case("clamp_min", (3, 4), |x| Ok(x.clamp_min(0.05))),
        case("mlp_forward/input", (3, 4), |x| {
            fixed_mlp().bind_frozen(x.tape()).forward(x)
        }),
        case("mlp_forward/weight", (4, 5), |w| {
            let tape = w.tape();
            let mut vars = fixed_mlp().bind_frozen(tape);
            vars.replace_weight(0, w);
            vars.forward(fixed_points(tape))
        }),
        case("film_forward/input", (3, 4), |x| {
            let t = x.tape();
            let [g, b, _, _] = fixed_filmr_parts();
            film_var(t.constant(g), t.constant(b), x)
        }),
        case("film_forward/gamma", (1, 4), |g| {
            let t = g.tape();
            film_var(
                g,
                t.constant(Array::row(&[0.1, -0.2, 0.3, 0.0])),
                fixed_points(t),
            )
        }),
        case("film_forward/beta", (1, 4), |b| {
            let t = b.tape();
            film_var(
                t.constant(Array::row(&[1.5, -0.5, 0.7, 2.0])),
                b,
                fixed_points(t),
            )
        }),
        case("filmr_forward/input", (3, 4), |x| {
            let t = x.tape();
            let gamma = t.constant(fixed_filmr_parts()[0].clone());
            filmr_with(x, 0, gamma)
        }),
        case("filmr_forward/gamma", (1, 4), |p| {
            filmr_with(fixed_points(p.tape()), 0, p)
        }),
        case("filmr_forward/beta", (1, 4), |p| {
            filmr_with(fixed_points(p.tape()), 1, p)
        }),
        case("filmr_forward/u", (1, 4), |p| {
            filmr_with(fixed_points(p.tape()), 2, p)
        }),
        case("filmr_forward/v", (1, 4), |p| {
            filmr_with(fixed_points(p.tape()), 3, p)
        }),
    ]
}

/// Worst relative error of one case over its probe points.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_err: f64,
}

/// Normal draws pushed at least 0.2 away from zero, clear of every kink.
fn probe_input(rng: &mut Rng, rows: usize, cols: usize) -> Array {
    rng.normal_array(rows, cols, 1.0)
        .map(|x| if x >= 0.0 { 0.2 + x } else { x - 0.2 })
}

/// Runs every case at `points` seeded inputs. Each output is contracted
/// against fixed random weights to give a scalar.
pub fn gradient_audit(points: usize, seed: u64, eps: f64) -> Result<Vec<GradReport>> {
    let base = Rng::seeded(seed);
    let mut out = Vec::new();
    for (k, c) in grad_cases().into_iter().enumerate() {
        let mut rng = base.fork(k as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let x = probe_input(&mut rng, c.shape.0, c.shape.1);
            let out_shape = {
                let tape = crate::autodiff::Tape::new();
                (c.probe)(tape.leaf(x.clone()))?.shape()
            };
            let w = rng.normal_array(out_shape.0, out_shape.1, 1.0);
            let probe = c.probe;
            let err = grad_check(
                |v| {
                    let y = probe(v)?;
                    Ok(y.mul(v.tape().constant(w.clone()))?.sum())
                },
                &x,
                eps,
            )?;
            worst = worst.max(err);
        }
        out.push(GradReport {
            name: c.name,
            points,
            max_rel_err: worst,
        });
    }
    Ok(out)
}

/// Worst rotation residuals over random planes in one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationReport {
    pub dim: usize,
    pub pairs: usize,
    pub orthogonality: f64,
    pub determinant: f64,
    pub complement: f64,
    /// `|angle(u, uM) - 2 angle(u, v)|`, over pairs with `angle(u, v) <= π/2`.
    pub angle: f64,
}

pub fn rotation_audit(dims: &[usize], pairs: usize, seed: u64) -> Result<Vec<RotationReport>> {
    let mut rng = Rng::seeded(seed);
    let mut out = Vec::new();
    for &n in dims {
        let mut r = RotationReport {
            dim: n,
            pairs,
            orthogonality: 0.0,
            determinant: 0.0,
            complement: 0.0,
            angle: 0.0,
        };
        for _ in 0..pairs {
            let pair = PlanePair::new(rng.normal_array(1, n, 1.0), rng.normal_array(1, n, 1.0))?;
            let d = rotation_diagnostics(&pair)?;
            r.orthogonality = r.orthogonality.max(d.orthogonality_residual);
            r.determinant = r.determinant.max(d.det_residual);
            r.complement = r.complement.max(d.complement_residual);
            let theta = angle_between(pair.u(), pair.v());
            if theta <= std::f64::consts::FRAC_PI_2 {
                r.angle = r.angle.max((d.angle - 2.0 * theta).abs());
            }
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_are_unique() {
        let cases = grad_cases();
        let mut names: Vec<_> = cases.iter().map(|c| c.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), cases.len());
    }

    #[test]
    fn probe_inputs_avoid_zero() {
        let x = probe_input(&mut Rng::seeded(0), 50, 4);
        assert!(x.data().iter().all(|v| v.abs() >= 0.2));
    }

    #[test]
    fn small_audits_pass() {
        for r in gradient_audit(2, 1, 1e-6).unwrap() {
            assert!(r.max_rel_err < 1e-5, "{}: {}", r.name, r.max_rel_err);
        }
        for r in rotation_audit(&[2, 5], 5, 1).unwrap() {
            assert!(
                r.orthogonality < 1e-9
                    && r.determinant < 1e-9
                    && r.complement < 1e-9
                    && r.angle < 1e-8
            );
        }
    }
}
