//! Projected-Newton solver for the per-knot box-constrained control QP
//!
//! ```text
//! min_δu  ½ δuᵀ H δu + gᵀ δu    s.t.  lower ≤ u_ref + δu ≤ upper
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
const ARMIJO: f64 = 0.1;
const STEP_DECREASE: f64 = 0.6;
const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    /// Minimizer `δu`.
    pub delta: DVector<f64>,
    /// `true` where the coordinate is not held at a bound.
    pub free: Vec<bool>,
    /// Cholesky factor of `H` restricted to the free coordinates, `None` when
    /// every coordinate is clamped.
    pub free_factor: Option<Cholesky<f64, Dyn>>,
    pub iterations: usize,
}

impl BoxQpSolution {
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&i| self.free[i]).collect()
    }
}

fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + g.dot(x)
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Coordinates held at a bound by an outward-pointing gradient. A coordinate
/// on a bound whose gradient points inward counts as free.
fn clamped_set(x: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<bool> {
    (0..x.len())
        .map(|i| (x[i] <= lo[i] && grad[i] > 0.0) || (x[i] >= hi[i] && grad[i] < 0.0))
        .collect()
}

/// Solves the box QP. `h` must be symmetric positive definite and `u_ref`
/// within `[lower, upper]`. `warm_start` is an initial `δu`, projected onto
/// the box before use.
pub fn box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    u_ref: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<BoxQpSolution> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || u_ref.len() != n || lower.len() != n || upper.len() != n {
        return Err(Error::InvalidInput("box QP operands have inconsistent sizes".into()));
    }
    let lo = lower - u_ref;
    let hi = upper - u_ref;
    if (0..n).any(|i| !(lo[i] <= 0.0 && hi[i] >= 0.0)) {
        return Err(Error::InvalidInput("box QP reference control lies outside its bounds".into()));
    }
    let project = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(lo[i], hi[i]));

    let mut x = match warm_start {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => project(w),
        _ => DVector::zeros(n),
    };
    let tol = 1e-9 * g.amax().max(1.0);
    let mut value = objective(h, g, &x);

    for iter in 0..=MAX_ITERATIONS {
        let grad = g + h * &x;
        let clamped = clamped_set(&x, &grad, &lo, &hi);
        let free: Vec<usize> = (0..n).filter(|&i| !clamped[i]).collect();
        let pg = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        let done = free.is_empty() || pg < tol;
        if done || iter == MAX_ITERATIONS {
            if !done {
                return Err(Error::BoxQpIterations(MAX_ITERATIONS));
            }
            let free_factor = if free.is_empty() {
                None
            } else {
                Some(
                    Cholesky::new(submatrix(h, &free, &free))
                        .ok_or(Error::NotPositiveDefinite { knot: 0, mu: 0.0 })?,
                )
            };
            return Ok(BoxQpSolution {
                delta: x,
                free: clamped.iter().map(|c| !c).collect(),
                free_factor,
                iterations: iter,
            });
        }

        // Newton step on the free coordinates, clamped ones held fixed
        let chol = Cholesky::new(submatrix(h, &free, &free)).ok_or(Error::NotPositiveDefinite { knot: 0, mu: 0.0 })?;
        let grad_free = DVector::from_fn(free.len(), |i, _| grad[free[i]]);
        let step_free = chol.solve(&grad_free);
        let mut dir = DVector::zeros(n);
        for (a, &i) in free.iter().enumerate() {
            dir[i] = -step_free[a];
        }

        let mut step = 1.0;
        loop {
            let candidate = project(&(&x + &dir * step));
            let candidate_value = objective(h, g, &candidate);
            if candidate_value - value <= ARMIJO * grad.dot(&(&candidate - &x)) {
                x = candidate;
                value = candidate_value;
                break;
            }
            step *= STEP_DECREASE;
            if step < MIN_STEP {
                // no descent left at working precision
                let free_factor = Some(chol);
                return Ok(BoxQpSolution {
                    delta: x,
                    free: clamped.iter().map(|c| !c).collect(),
                    free_factor,
                    iterations: iter + 1,
                });
            }
        }
    }
    unreachable!("loop returns at MAX_ITERATIONS")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: every coordinate is either free, at its lower bound
    /// or at its upper bound. The free block is solved exactly and the best
    /// feasible candidate wins.
    pub(crate) fn enumerate_oracle(
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> DVector<f64> {
        let n = g.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for pattern in 0..3usize.pow(n as u32) {
            let mut x = DVector::zeros(n);
            let mut free = Vec::new();
            let mut p = pattern;
            for i in 0..n {
                match p % 3 {
                    0 => free.push(i),
                    1 => x[i] = lo[i],
                    _ => x[i] = hi[i],
                }
                p /= 3;
            }
            if x.iter().any(|v| !v.is_finite()) {
                continue;
            }
            if !free.is_empty() {
                let fixed: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
                let hff = submatrix(h, &free, &free);
                let hfc = submatrix(h, &free, &fixed);
                let xc = DVector::from_fn(fixed.len(), |i, _| x[fixed[i]]);
                let rhs = -(DVector::from_fn(free.len(), |i, _| g[free[i]]) + hfc * xc);
                let xf = hff.lu().solve(&rhs).unwrap();
                for (a, &i) in free.iter().enumerate() {
                    x[i] = xf[a];
                }
            }
            if (0..n).any(|i| x[i] < lo[i] - 1e-12 || x[i] > hi[i] + 1e-12) {
                continue;
            }
            let v = objective(h, g, &x);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, x));
            }
        }
        best.expect("the box is non-empty").1
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let lower = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
        let upper = DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
        let u_ref = DVector::from_fn(n, |i, _| rng.random_range(lower[i]..=upper[i]));
        (h, g, u_ref, lower, upper)
    }

    #[test]
    fn interior_optimum_is_newton_step() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = DVector::from_vec(vec![1.0, -2.0]);
        let big = DVector::from_element(2, 100.0);
        let sol = box_qp(&h, &g, &DVector::zeros(2), &-&big, &big, None).unwrap();
        let newton = -h.clone().cholesky().unwrap().solve(&g);
        approx::assert_relative_eq!(sol.delta, newton, epsilon = 1e-14);
        assert_eq!(sol.free, vec![true, true]);
    }

    #[test]
    fn one_dimensional_upper_bound() {
        let sol = box_qp(
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, -10.0),
            &DVector::zeros(1),
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        assert_eq!(sol.delta[0], 1.0);
        assert_eq!(sol.free, vec![false]);
        assert!(sol.free_factor.is_none());
    }

    #[test]
    fn on_bound_with_inward_gradient_is_free() {
        // starts on the upper bound, optimum lies inside
        let sol = box_qp(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 0.5),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        assert_eq!(sol.delta[0], -0.5);
        assert_eq!(sol.free, vec![true]);
    }

    #[test]
    fn random_instances_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let (h, g, u_ref, lower, upper) = random_instance(&mut rng, 5);
            let sol = box_qp(&h, &g, &u_ref, &lower, &upper, None).unwrap();
            let oracle = enumerate_oracle(&h, &g, &(&lower - &u_ref), &(&upper - &u_ref));
            assert!((sol.delta - oracle).amax() < 1e-8);
        }
    }

    #[test]
    fn infinite_bounds() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let g = DVector::from_vec(vec![-4.0, 2.0]);
        let inf = DVector::from_element(2, f64::INFINITY);
        let lower = DVector::from_vec(vec![f64::NEG_INFINITY, 0.0]);
        let sol = box_qp(&h, &g, &DVector::zeros(2), &lower, &inf, None).unwrap();
        approx::assert_relative_eq!(sol.delta, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-14);
        assert_eq!(sol.free, vec![true, false]);
    }

    #[test]
    fn rejects_reference_outside_box() {
        let one = DVector::from_element(1, 1.0);
        let r = box_qp(&DMatrix::identity(1, 1), &one, &(&one * 2.0), &-&one, &one, None);
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn solution_is_feasible_and_warm_start_invariant(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, g, u_ref, lower, upper) = random_instance(&mut rng, n);
            let cold = box_qp(&h, &g, &u_ref, &lower, &upper, None).unwrap();
            let warm_guess = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let warm = box_qp(&h, &g, &u_ref, &lower, &upper, Some(&warm_guess)).unwrap();
            let u = &u_ref + &cold.delta;
            for i in 0..n {
                prop_assert!(u[i] >= lower[i] - 1e-12 && u[i] <= upper[i] + 1e-12);
            }
            prop_assert!((cold.delta - warm.delta).amax() < 1e-8);
        }
    }
}
