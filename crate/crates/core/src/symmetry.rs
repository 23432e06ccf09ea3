//! Dih4-symmetric kernel construction and orbit combination.
//!
//! Symmetrisation projects a grid onto the Dih4-invariant subspace by orbit
//! averaging. Each orbit's average is computed once (pairwise summation over
//! the canonical element order) and written to every site of the orbit, so
//! the result is invariant under all eight group elements bit-exactly and
//! the projection is bit-exactly idempotent.

use crate::cnn::{conv_same, CnnError};
use crate::grid::{Dih4Element, Grid2D};

/// A grid that is Dih4-invariant bit-exactly; constructible only through
/// [`symmetrize_kernel`] or from a grid that already passes the check.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricKernel {
    grid: Grid2D,
}

impl SymmetricKernel {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D {
        self.grid
    }
}

/// Pairwise sum of eight values; exact when all eight are equal.
#[inline]
fn pairwise8(v: [f64; 8]) -> f64 {
    ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]))
}

/// Orbit-average projection onto the Dih4-invariant subspace.
///
/// Returns (1/8)·Σ_g apply_dih4(g, K). The average for each orbit is
/// evaluated once at the orbit's row-major-first site and shared by all of
/// its sites, which makes the invariance and the idempotence exact.
pub fn symmetrize(kernel: &Grid2D) -> Grid2D {
    let side = kernel.side();
    let elements = Dih4Element::all();
    let mut out = Grid2D::zeros(side).expect("side validated by input grid");
    let mut done = vec![false; side * side];
    for r in 0..side {
        for c in 0..side {
            if done[r * side + c] {
                continue;
            }
            let mut vals = [0.0f64; 8];
            for (g, slot) in elements.iter().zip(vals.iter_mut()) {
                let (sr, sc) = g.inverse().map_position(side, r, c);
                *slot = kernel.get(sr, sc);
            }
            let avg = pairwise8(vals) / 8.0;
            for g in elements {
                let (or, oc) = g.map_position(side, r, c);
                out.set(or, oc, avg);
                done[or * side + oc] = true;
            }
        }
    }
    out
}

pub fn symmetrize_kernel(kernel: &Grid2D) -> SymmetricKernel {
    SymmetricKernel { grid: symmetrize(kernel) }
}

/// Bit-exact Dih4 invariance check.
pub fn is_dih4_invariant(grid: &Grid2D) -> bool {
    Dih4Element::all().iter().all(|g| g.apply(grid).bit_eq(grid))
}

/// Σ_g apply_dih4(g, I) with g running over the canonical element order
/// (identity, r, r², r³, s, rs, r²s, r³s), summed pairwise per pixel.
pub fn dih4_orbit_sum(input: &Grid2D) -> Grid2D {
    let side = input.side();
    let elements = Dih4Element::all();
    Grid2D::from_fn(side, |r, c| {
        let mut vals = [0.0f64; 8];
        for (g, slot) in elements.iter().zip(vals.iter_mut()) {
            let (sr, sc) = g.inverse().map_position(side, r, c);
            *slot = input.get(sr, sc);
        }
        pairwise8(vals)
    })
    .expect("side validated by input grid")
}

/// Σ_g conv_same(apply_dih4(g, I), K) over the canonical element order.
///
/// Oracle form of orbit combination: convolving after summing the orbit
/// must agree with this within float reassociation noise.
pub fn combine_at_end(input: &Grid2D, kernel: &Grid2D) -> Result<Grid2D, CnnError> {
    let side = input.side();
    let mut acc = Grid2D::zeros(side).expect("side validated by input grid");
    for g in Dih4Element::all() {
        let convolved = conv_same(&g.apply(input), kernel)?;
        for (a, b) in acc.as_mut_slice().iter_mut().zip(convolved.as_slice()) {
            *a += b;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_grid(side: usize, rng: &mut StdRng) -> Grid2D {
        Grid2D::from_fn(side, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Independent 8-term oracle: evaluates (1/8)·Σ_g K[g⁻¹p] at every
    /// position with plain sequential accumulation.
    fn symmetrize_oracle(kernel: &Grid2D) -> Grid2D {
        let side = kernel.side();
        Grid2D::from_fn(side, |r, c| {
            let mut acc = 0.0;
            for g in Dih4Element::all() {
                let (sr, sc) = g.inverse().map_position(side, r, c);
                acc += kernel.get(sr, sc);
            }
            acc / 8.0
        })
        .unwrap()
    }

    fn orbit_sum_oracle(input: &Grid2D) -> Grid2D {
        let side = input.side();
        let mut acc = Grid2D::zeros(side).unwrap();
        for g in Dih4Element::all() {
            let t = g.apply(input);
            for (a, b) in acc.as_mut_slice().iter_mut().zip(t.as_slice()) {
                *a += b;
            }
        }
        acc
    }

    #[test]
    fn symmetric_input_is_fixed_point() {
        let mut rng = StdRng::seed_from_u64(7);
        let k = symmetrize(&random_grid(5, &mut rng));
        assert!(symmetrize(&k).bit_eq(&k));
    }

    #[test]
    fn corner_delta_spreads_to_four_corners() {
        let mut k = Grid2D::zeros(3).unwrap();
        k.set(0, 0, 1.0);
        let s = symmetrize(&k);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(s.get(r, c), 0.25, "corner ({r},{c})");
        }
        for (r, c) in [(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)] {
            assert_eq!(s.get(r, c), 0.0, "non-corner ({r},{c})");
        }
    }

    #[test]
    fn matches_explicit_orbit_average() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let k = random_grid(5, &mut rng);
            let s = symmetrize(&k);
            let oracle = symmetrize_oracle(&k);
            assert!(s.max_abs_diff(&oracle) < 1e-15);
        }
    }

    #[test]
    fn symmetrized_grid_is_invariant_bit_exactly() {
        let mut rng = StdRng::seed_from_u64(13);
        for side in [3, 5, 7, 9, 11, 13] {
            let s = symmetrize(&random_grid(side, &mut rng));
            assert!(is_dih4_invariant(&s), "side {side}");
        }
    }

    #[test]
    fn orbit_sum_of_symmetric_grid_is_eight_times() {
        let mut rng = StdRng::seed_from_u64(17);
        let s = symmetrize(&random_grid(7, &mut rng));
        let sum = dih4_orbit_sum(&s);
        let scaled = Grid2D::from_fn(7, |r, c| 8.0 * s.get(r, c)).unwrap();
        assert!(sum.bit_eq(&scaled));
    }

    #[test]
    fn orbit_sum_of_center_delta() {
        let mut d = Grid2D::zeros(5).unwrap();
        d.set(2, 2, 0.3);
        let sum = dih4_orbit_sum(&d);
        assert_eq!(sum.get(2, 2), 2.4);
        assert_eq!(sum.sum(), 2.4);
    }

    #[test]
    fn orbit_sum_matches_oracle_and_is_invariant() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let i = random_grid(3, &mut rng);
            let sum = dih4_orbit_sum(&i);
            assert!(sum.max_abs_diff(&orbit_sum_oracle(&i)) < 1e-14);
            for g in Dih4Element::all() {
                assert!(g.apply(&sum).max_abs_diff(&sum) <= 1e-12);
            }
        }
    }

    #[test]
    fn combine_at_end_with_delta_kernel_is_orbit_sum() {
        let mut rng = StdRng::seed_from_u64(23);
        let i = random_grid(7, &mut rng);
        let mut delta = Grid2D::zeros(3).unwrap();
        delta.set(1, 1, 1.0);
        let combined = combine_at_end(&i, &delta).unwrap();
        let direct = orbit_sum_oracle(&i);
        assert!(combined.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn combine_before_or_after_convolution_agrees() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..10 {
            let i = random_grid(9, &mut rng);
            let k = random_grid(3, &mut rng);
            let after = combine_at_end(&i, &k).unwrap();
            let before = conv_same(&dih4_orbit_sum(&i), &k).unwrap();
            assert!(after.max_abs_diff(&before) <= 1e-12);
        }
    }

    #[test]
    fn combine_at_end_of_zero_is_zero() {
        let z = Grid2D::zeros(9).unwrap();
        let k = Grid2D::from_fn(3, |r, c| (r + c) as f64).unwrap();
        let out = combine_at_end(&z, &k).unwrap();
        assert_eq!(out.sum(), 0.0);
        assert_eq!(out.max_abs_diff(&z), 0.0);
    }
}
