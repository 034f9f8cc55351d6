//! Steady saturated flow, `div(T grad u) = 0`, on a cell-centered finite
//! volume grid.
//!
//! Interior faces use the harmonic mean of the adjacent transmissivities.
//! A Dirichlet face sits half a cell from the center, so its conductance is
//! `2 T`. The resulting matrix is SPD whenever at least one Dirichlet face
//! exists, and is factorized with a band Cholesky whose half-bandwidth is
//! bounded by the grid width.

use super::banded::BandedSpd;
use super::grid::{FlowGrid, SideBc};
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-10;

/// Conductance of the face between two cells.
#[inline]
pub fn harmonic_face(t_a: f64, t_b: f64) -> f64 {
    2.0 * t_a * t_b / (t_a + t_b)
}

/// Solves for the heads at every active cell given cell log-transmissivities.
pub fn solve_flow(grid: &FlowGrid, log_t: &[f64]) -> Result<Vec<f64>> {
    let n = grid.n_active();
    if log_t.len() != n {
        return Err(Error::Dimension(format!(
            "log_t has length {}, grid has {n} active cells",
            log_t.len()
        )));
    }
    if let Some(i) = log_t.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical("solve_flow", format!("log_t[{i}] is not finite")));
    }
    grid.check_well_posed()?;

    let t: Vec<f64> = log_t.iter().map(|v| v.exp()).collect();
    let bw = (0..n)
        .flat_map(|c| grid.neighbors(c).map(move |nb| c.abs_diff(nb)))
        .max()
        .unwrap_or(0);
    let mut a = BandedSpd::zeros(n, bw);
    let mut rhs = vec![0.0; n];
    for c in 0..n {
        for nb in grid.neighbors(c) {
            let k = harmonic_face(t[c], t[nb]);
            a.add(c, c, k);
            if nb < c {
                a.add(c, nb, -k);
            }
        }
        for (_, bc) in grid.boundary_faces(c) {
            if let SideBc::Dirichlet(value) = bc {
                let k = 2.0 * t[c];
                a.add(c, c, k);
                rhs[c] += k * value;
            }
        }
    }

    let factor = a.clone().cholesky()?;
    let mut heads = factor.solve(&rhs);

    // one step of iterative refinement, then verify
    let mut resid = residual(&a, &heads, &rhs);
    let corr = factor.solve(&resid);
    for (h, d) in heads.iter_mut().zip(&corr) {
        *h += d;
    }
    resid = residual(&a, &heads, &rhs);
    let rnorm = norm(&resid);
    let bnorm = norm(&rhs).max(f64::MIN_POSITIVE);
    if rnorm > RESIDUAL_TOL * bnorm && rnorm > 0.0 {
        return Err(Error::numerical(
            "solve_flow",
            format!("relative residual {:e} exceeds {RESIDUAL_TOL:e}", rnorm / bnorm),
        ));
    }
    Ok(heads)
}

fn residual(a: &BandedSpd, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(b, ax)| b - ax).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::BoundarySpec;

    #[test]
    fn constant_field_gives_linear_profile() {
        let g = FlowGrid::rectangle(5, 7, 1.0, BoundarySpec::default()).unwrap();
        let heads = solve_flow(&g, &vec![0.3; g.n_active()]).unwrap();
        for c in 0..g.n_active() {
            let (x, _) = g.center(c);
            assert!((heads[c] - (1.0 - x / 7.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn wrong_length_is_a_dimension_error() {
        let g = FlowGrid::rectangle(3, 3, 1.0, BoundarySpec::default()).unwrap();
        assert!(matches!(solve_flow(&g, &[0.0; 4]), Err(Error::Dimension(_))));
    }

    #[test]
    fn no_flow_everywhere_is_rejected() {
        let bc = BoundarySpec {
            left: SideBc::NoFlow,
            right: SideBc::NoFlow,
            top: SideBc::NoFlow,
            bottom: SideBc::NoFlow,
        };
        let g = FlowGrid::rectangle(3, 3, 1.0, bc).unwrap();
        assert!(matches!(solve_flow(&g, &[0.0; 9]), Err(Error::WellPosedness(_))));
    }
}
