//! Single-site spin operators and many-body tensor embedding.
//!
//! Two operator families are exposed: spin-1/2 matrices for the two-level
//! {|0>, |-1>} restriction used by the dynamics simulator, and spin-1 matrices
//! for the three-level ground state used by the ESR model. The restricted
//! two-level forms of the spin-1 operators (with their sqrt(2) matrix
//! elements) are kept alongside for the lab-frame validation Hamiltonian.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SimError};

pub type OperatorMatrix = DMatrix<Complex64>;
pub type StateVector = DVector<Complex64>;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn im(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

/// The five spin-1/2 operators on {|0>, |-1>}: Sz = diag(1/2, -1/2),
/// S+ = |0><-1|, S- = |-1><0|.
pub struct SpinHalfOps {
    pub sx: OperatorMatrix,
    pub sy: OperatorMatrix,
    pub sz: OperatorMatrix,
    pub splus: OperatorMatrix,
    pub sminus: OperatorMatrix,
}

pub fn spin_half_ops() -> SpinHalfOps {
    let z = re(0.0);
    SpinHalfOps {
        sx: OperatorMatrix::from_row_slice(2, 2, &[z, re(0.5), re(0.5), z]),
        sy: OperatorMatrix::from_row_slice(2, 2, &[z, im(-0.5), im(0.5), z]),
        sz: OperatorMatrix::from_row_slice(2, 2, &[re(0.5), z, z, re(-0.5)]),
        splus: OperatorMatrix::from_row_slice(2, 2, &[z, re(1.0), z, z]),
        sminus: OperatorMatrix::from_row_slice(2, 2, &[z, z, re(1.0), z]),
    }
}

/// Standard spin-1 operators in the basis {|+1>, |0>, |-1>}.
pub struct SpinOneOps {
    pub sx: OperatorMatrix,
    pub sy: OperatorMatrix,
    pub sz: OperatorMatrix,
}

pub fn spin_one_ops() -> SpinOneOps {
    let z = re(0.0);
    let s = re(1.0 / 2.0_f64.sqrt());
    let si = im(1.0 / 2.0_f64.sqrt());
    SpinOneOps {
        sx: OperatorMatrix::from_row_slice(3, 3, &[z, s, z, s, z, s, z, s, z]),
        sy: OperatorMatrix::from_row_slice(3, 3, &[z, -si, z, si, z, -si, z, si, z]),
        sz: OperatorMatrix::from_row_slice(
            3,
            3,
            &[re(1.0), z, z, z, z, z, z, z, re(-1.0)],
        ),
    }
}

/// Spin-1 operators restricted to the two-level {|0>, |-1>} subspace.
///
/// These keep the sqrt(2) matrix elements of the parent spin-1 operators:
/// Sz = diag(0, -1), Sx = [[0,1],[1,0]]/sqrt(2), Sy = [[0,-i],[i,0]]/sqrt(2),
/// and S+- = (Sx +- i Sy)/sqrt(2) which come out as the unit raising and
/// lowering matrices.
pub struct RestrictedSpinOneOps {
    pub sx: OperatorMatrix,
    pub sy: OperatorMatrix,
    pub sz: OperatorMatrix,
    pub splus: OperatorMatrix,
    pub sminus: OperatorMatrix,
}

pub fn spin_one_restricted_ops() -> RestrictedSpinOneOps {
    let z = re(0.0);
    let s = re(1.0 / 2.0_f64.sqrt());
    let si = im(1.0 / 2.0_f64.sqrt());
    RestrictedSpinOneOps {
        sx: OperatorMatrix::from_row_slice(2, 2, &[z, s, s, z]),
        sy: OperatorMatrix::from_row_slice(2, 2, &[z, -si, si, z]),
        sz: OperatorMatrix::from_row_slice(2, 2, &[z, z, z, re(-1.0)]),
        splus: OperatorMatrix::from_row_slice(2, 2, &[z, re(1.0), z, z]),
        sminus: OperatorMatrix::from_row_slice(2, 2, &[z, z, re(1.0), z]),
    }
}

/// I (x) ... (x) op (x) ... (x) I with `op` at position `site`.
///
/// Site 0 is the leftmost (most significant) tensor factor. The result has
/// dimension local_dim^n_sites.
pub fn embed(
    op: &OperatorMatrix,
    site: usize,
    n_sites: usize,
    local_dim: usize,
) -> Result<OperatorMatrix> {
    if site >= n_sites {
        return Err(SimError::InvalidArgument(format!(
            "site index {site} out of range for {n_sites} sites"
        )));
    }
    if op.nrows() != local_dim || op.ncols() != local_dim {
        return Err(SimError::InvalidArgument(format!(
            "operator is {}x{}, expected {local_dim}x{local_dim}",
            op.nrows(),
            op.ncols()
        )));
    }
    let mut out = OperatorMatrix::identity(1, 1);
    for k in 0..n_sites {
        if k == site {
            out = out.kronecker(op);
        } else {
            out = out.kronecker(&OperatorMatrix::identity(local_dim, local_dim));
        }
    }
    Ok(out)
}

/// [A, B] = AB - BA.
pub fn commutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a * b - b * a
}

/// Largest entrywise magnitude, for closeness checks.
pub fn max_abs(m: &OperatorMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise deviation from Hermiticity, ||H - H^dag||_max.
pub fn hermiticity_defect(m: &OperatorMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Errors unless ||H - H^dag||_max < tol.
pub fn require_hermitian(m: &OperatorMatrix, tol: f64) -> Result<()> {
    let defect = hermiticity_defect(m);
    if defect >= tol {
        return Err(SimError::InvalidArgument(format!(
            "matrix is not Hermitian: defect {defect:.3e} exceeds {tol:.1e}"
        )));
    }
    Ok(())
}

/// Errors unless ||U^dag U - I||_max < tol.
pub fn require_unitary(u: &OperatorMatrix, tol: f64) -> Result<()> {
    let n = u.nrows();
    let defect = max_abs(&(u.adjoint() * u - OperatorMatrix::identity(n, n)));
    if defect >= tol {
        return Err(SimError::InvalidArgument(format!(
            "matrix is not unitary: defect {defect:.3e} exceeds {tol:.1e}"
        )));
    }
    Ok(())
}

/// <psi| op |psi>.
pub fn expectation(op: &OperatorMatrix, psi: &StateVector) -> Complex64 {
    (psi.adjoint() * op * psi)[(0, 0)]
}

/// exp(-i * angle * n(phase) . S) for one spin-1/2, with the rotation axis
/// n(phase) = (cos(phase), sin(phase), 0) in the equatorial plane:
/// cos(angle/2) I - 2i sin(angle/2) (cos(phase) Sx + sin(phase) Sy).
pub fn spin_half_rotation(phase: f64, angle: f64) -> OperatorMatrix {
    let c = re((angle / 2.0).cos());
    let s = (angle / 2.0).sin();
    let off_upper = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, -phase);
    let off_lower = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, phase);
    OperatorMatrix::from_row_slice(2, 2, &[c, off_upper, off_lower, c])
}

/// The same equatorial rotation applied to every spin at once:
/// spin_half_rotation(phase, angle)^(tensor n_sites).
pub fn global_rotation(phase: f64, angle: f64, n_sites: usize) -> OperatorMatrix {
    let local = spin_half_rotation(phase, angle);
    let mut out = OperatorMatrix::identity(1, 1);
    for _ in 0..n_sites {
        out = out.kronecker(&local);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_close(a: &OperatorMatrix, b: &OperatorMatrix, tol: f64) {
        assert!(
            max_abs(&(a - b)) < tol,
            "matrices differ by {:.3e} (tol {tol:.1e})",
            max_abs(&(a - b))
        );
    }

    #[test]
    fn spin_half_sz_is_half_diag() {
        let ops = spin_half_ops();
        assert_abs_diff_eq!(ops.sz[(0, 0)].re, 0.5);
        assert_abs_diff_eq!(ops.sz[(1, 1)].re, -0.5);
        assert_abs_diff_eq!(ops.sz[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn spin_half_commutators_close_su2() {
        let ops = spin_half_ops();
        let i = Complex64::i();
        assert_close(&commutator(&ops.sx, &ops.sy), &(&ops.sz * i), 1e-14);
        assert_close(&commutator(&ops.sy, &ops.sz), &(&ops.sx * i), 1e-14);
        assert_close(&commutator(&ops.sz, &ops.sx), &(&ops.sy * i), 1e-14);
    }

    #[test]
    fn spin_half_ladder_anticommutator_is_identity() {
        let ops = spin_half_ops();
        let anti = &ops.splus * &ops.sminus + &ops.sminus * &ops.splus;
        assert_close(&anti, &OperatorMatrix::identity(2, 2), 1e-15);
    }

    #[test]
    fn ladder_matches_sx_sy_combination() {
        let ops = spin_half_ops();
        let i = Complex64::i();
        assert_close(&(&ops.sx + &ops.sy * i), &ops.splus, 1e-15);
        assert_close(&(&ops.sx - &ops.sy * i), &ops.sminus, 1e-15);
    }

    #[test]
    fn spin_one_sz_eigenvalues() {
        let ops = spin_one_ops();
        for (k, want) in [(0, 1.0), (1, 0.0), (2, -1.0)] {
            assert_abs_diff_eq!(ops.sz[(k, k)].re, want);
        }
    }

    #[test]
    fn spin_one_commutators_close_su2() {
        let ops = spin_one_ops();
        let i = Complex64::i();
        assert_close(&commutator(&ops.sx, &ops.sy), &(&ops.sz * i), 1e-14);
        assert_close(&commutator(&ops.sy, &ops.sz), &(&ops.sx * i), 1e-14);
        assert_close(&commutator(&ops.sz, &ops.sx), &(&ops.sy * i), 1e-14);
    }

    #[test]
    fn spin_one_casimir_is_two() {
        let ops = spin_one_ops();
        let casimir = &ops.sx * &ops.sx + &ops.sy * &ops.sy + &ops.sz * &ops.sz;
        assert_close(&casimir, &(OperatorMatrix::identity(3, 3) * re(2.0)), 1e-14);
    }

    #[test]
    fn restricted_sz_is_zero_minus_one() {
        let ops = spin_one_restricted_ops();
        assert_abs_diff_eq!(ops.sz[(0, 0)].re, 0.0);
        assert_abs_diff_eq!(ops.sz[(1, 1)].re, -1.0);
    }

    #[test]
    fn restricted_ladder_matches_definition() {
        // S+- = (Sx +- i Sy)/sqrt(2) for the restricted operators.
        let ops = spin_one_restricted_ops();
        let i = Complex64::i();
        let root_half = re(1.0 / 2.0_f64.sqrt());
        assert_close(&((&ops.sx + &ops.sy * i) * root_half), &ops.splus, 1e-15);
        assert_close(&((&ops.sx - &ops.sy * i) * root_half), &ops.sminus, 1e-15);
    }

    #[test]
    fn restricted_ops_scale_to_spin_half() {
        // Sx_restricted = sqrt(2) Sx_half, and Sz_restricted = Sz_half - I/2.
        let r = spin_one_restricted_ops();
        let h = spin_half_ops();
        let root_two = re(2.0_f64.sqrt());
        assert_close(&(&h.sx * root_two), &r.sx, 1e-15);
        assert_close(&(&h.sy * root_two), &r.sy, 1e-15);
        let shifted = &h.sz - OperatorMatrix::identity(2, 2) * re(0.5);
        assert_close(&shifted, &r.sz, 1e-15);
    }

    #[test]
    fn embed_places_operator_at_site() {
        let ops = spin_half_ops();
        let embedded = embed(&ops.sz, 0, 2, 2).unwrap();
        let direct = ops.sz.kronecker(&OperatorMatrix::identity(2, 2));
        assert_close(&embedded, &direct, 1e-15);
    }

    #[test]
    fn embed_is_traceless_for_traceless_input() {
        let ops = spin_half_ops();
        let embedded = embed(&ops.sx, 1, 3, 2).unwrap();
        assert!(embedded.trace().norm() < 1e-13);
    }

    #[test]
    fn embed_identity_is_identity() {
        let ident = OperatorMatrix::identity(2, 2);
        for site in 0..3 {
            let embedded = embed(&ident, site, 3, 2).unwrap();
            assert_close(&embedded, &OperatorMatrix::identity(8, 8), 1e-15);
        }
    }

    #[test]
    fn embed_multiplicative_on_same_site() {
        let ops = spin_half_ops();
        let product = embed(&(&ops.sx * &ops.sy), 1, 3, 2).unwrap();
        let separate =
            embed(&ops.sx, 1, 3, 2).unwrap() * embed(&ops.sy, 1, 3, 2).unwrap();
        assert_close(&product, &separate, 1e-13);
    }

    #[test]
    fn embed_rejects_bad_dimensions() {
        let ops = spin_half_ops();
        assert!(embed(&ops.sz, 2, 2, 2).is_err());
        assert!(embed(&ops.sz, 0, 2, 3).is_err());
    }

    #[test]
    fn hermiticity_and_unitarity_checks() {
        let ops = spin_half_ops();
        assert!(require_hermitian(&ops.sx, 1e-12).is_ok());
        assert!(require_hermitian(&ops.splus, 1e-12).is_err());
        let ident = OperatorMatrix::identity(2, 2);
        assert!(require_unitary(&ident, 1e-9).is_ok());
        assert!(require_unitary(&ops.sx, 1e-9).is_err());
    }

    #[test]
    fn expectation_of_sz_on_basis_states() {
        let ops = spin_half_ops();
        let up = StateVector::from_vec(vec![re(1.0), re(0.0)]);
        let down = StateVector::from_vec(vec![re(0.0), re(1.0)]);
        assert_abs_diff_eq!(expectation(&ops.sz, &up).re, 0.5);
        assert_abs_diff_eq!(expectation(&ops.sz, &down).re, -0.5);
    }

    #[test]
    fn rotation_is_unitary_and_matches_exponential_series() {
        let ops = spin_half_ops();
        for &(phase, angle) in &[(0.0, PI), (FRAC_PI_2, FRAC_PI_2), (1.1, 2.3)] {
            let u = spin_half_rotation(phase, angle);
            assert!(require_unitary(&u, 1e-12).is_ok());
            let generator = (&ops.sx * re(phase.cos()) + &ops.sy * re(phase.sin()))
                * Complex64::new(0.0, -angle);
            let mut series = OperatorMatrix::identity(2, 2);
            let mut term = OperatorMatrix::identity(2, 2);
            for k in 1..30 {
                term = (&term * &generator) / re(k as f64);
                series += &term;
            }
            assert_close(&u, &series, 1e-13);
        }
    }

    #[test]
    fn x_pi_rotation_flips_sz() {
        // exp(-i pi Sx) Sz exp(i pi Sx) = -Sz.
        let ops = spin_half_ops();
        let u = spin_half_rotation(0.0, PI);
        let conj = u.adjoint() * &ops.sz * &u;
        assert_close(&conj, &(&ops.sz * re(-1.0)), 1e-13);
    }

    #[test]
    fn minus_y_half_rotation_maps_plus_x_to_up() {
        // A pi/2 pulse at phase -pi/2 sends (|0> + |-1>)/sqrt(2) to |0>.
        let u = spin_half_rotation(-FRAC_PI_2, FRAC_PI_2);
        let plus_x = StateVector::from_vec(vec![
            re(1.0 / 2.0_f64.sqrt()),
            re(1.0 / 2.0_f64.sqrt()),
        ]);
        let out = &u * &plus_x;
        assert!((out[0].norm() - 1.0).abs() < 1e-12);
        assert!(out[1].norm() < 1e-12);
    }

    #[test]
    fn global_rotation_is_tensor_power() {
        let u1 = spin_half_rotation(0.3, 0.9);
        let u3 = global_rotation(0.3, 0.9, 3);
        let want = u1.kronecker(&u1).kronecker(&u1);
        assert_close(&u3, &want, 1e-13);
        assert!(require_unitary(&u3, 1e-11).is_ok());
    }
}
