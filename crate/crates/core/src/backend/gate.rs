use num_complex::Complex64;

use super::QubitError;

pub type Matrix2 = [[Complex64; 2]; 2];
pub type Matrix4 = [[Complex64; 4]; 4];

const UNITARY_TOL: f64 = 1e-9;

/// A gate applied through [`crate::backend::Backend::apply_gate`].
///
/// Two-qubit matrices act on the basis `|a b>` where `a` is the first
/// (control) operand and `b` the second, with `a` as the more significant
/// bit: `|00>, |01>, |10>, |11>`.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    I,
    X,
    Y,
    Z,
    H,
    S,
    T,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    Custom1(Matrix2),
    Cnot,
    Cz,
    Custom2(Matrix4),
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl Gate {
    /// Validated single-qubit custom gate.
    pub fn custom_1q(m: Matrix2) -> Result<Self, QubitError> {
        if !is_unitary(&m.iter().map(|r| r.to_vec()).collect::<Vec<_>>()) {
            return Err(QubitError::NotUnitary);
        }
        Ok(Gate::Custom1(m))
    }

    /// Validated two-qubit custom gate.
    pub fn custom_2q(m: Matrix4) -> Result<Self, QubitError> {
        if !is_unitary(&m.iter().map(|r| r.to_vec()).collect::<Vec<_>>()) {
            return Err(QubitError::NotUnitary);
        }
        Ok(Gate::Custom2(m))
    }

    pub fn arity(&self) -> usize {
        match self {
            Gate::Cnot | Gate::Cz | Gate::Custom2(_) => 2,
            _ => 1,
        }
    }

    pub fn matrix_1q(&self) -> Option<Matrix2> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let m = match self {
            Gate::I => [[one, z], [z, one]],
            Gate::X => [[z, one], [one, z]],
            Gate::Y => [[z, c(0.0, -1.0)], [c(0.0, 1.0), z]],
            Gate::Z => [[one, z], [z, -one]],
            Gate::H => [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]],
            Gate::S => [[one, z], [z, c(0.0, 1.0)]],
            Gate::T => [[one, z], [z, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]],
            Gate::Rx(theta) => {
                let (sn, cs) = (theta / 2.0).sin_cos();
                [[c(cs, 0.0), c(0.0, -sn)], [c(0.0, -sn), c(cs, 0.0)]]
            }
            Gate::Ry(theta) => {
                let (sn, cs) = (theta / 2.0).sin_cos();
                [[c(cs, 0.0), c(-sn, 0.0)], [c(sn, 0.0), c(cs, 0.0)]]
            }
            Gate::Rz(theta) => [
                [Complex64::from_polar(1.0, -theta / 2.0), z],
                [z, Complex64::from_polar(1.0, theta / 2.0)],
            ],
            Gate::Custom1(m) => *m,
            _ => return None,
        };
        Some(m)
    }

    pub fn matrix_2q(&self) -> Option<Matrix4> {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let mut m = [[z; 4]; 4];
        match self {
            Gate::Cnot => {
                m[0][0] = one;
                m[1][1] = one;
                m[2][3] = one;
                m[3][2] = one;
            }
            Gate::Cz => {
                m[0][0] = one;
                m[1][1] = one;
                m[2][2] = one;
                m[3][3] = -one;
            }
            Gate::Custom2(u) => m = *u,
            _ => return None,
        }
        Some(m)
    }

    /// The adjoint gate, as a custom matrix for kinds without a named inverse.
    pub fn dagger(&self) -> Gate {
        match self {
            Gate::I | Gate::X | Gate::Y | Gate::Z | Gate::H | Gate::Cnot | Gate::Cz => self.clone(),
            Gate::Rx(t) => Gate::Rx(-t),
            Gate::Ry(t) => Gate::Ry(-t),
            Gate::Rz(t) => Gate::Rz(-t),
            Gate::S | Gate::T | Gate::Custom1(_) => {
                let m = self.matrix_1q().expect("single-qubit gate");
                let mut d = m;
                for (i, row) in d.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = m[j][i].conj();
                    }
                }
                Gate::Custom1(d)
            }
            Gate::Custom2(m) => {
                let mut d = *m;
                for (i, row) in d.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = m[j][i].conj();
                    }
                }
                Gate::Custom2(d)
            }
        }
    }
}

fn is_unitary(m: &[Vec<Complex64>]) -> bool {
    let n = m.len();
    for i in 0..n {
        for j in 0..n {
            // (U^dagger U)_{ij} = sum_k conj(U_ki) U_kj
            let mut acc = c(0.0, 0.0);
            for row in m {
                acc += row[i].conj() * row[j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            if (acc - c(expect, 0.0)).norm() > UNITARY_TOL {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_gates_are_unitary() {
        let gates = [
            Gate::I,
            Gate::X,
            Gate::Y,
            Gate::Z,
            Gate::H,
            Gate::S,
            Gate::T,
            Gate::Rx(0.3),
            Gate::Ry(-1.2),
            Gate::Rz(2.5),
        ];
        for g in gates {
            let m = g.matrix_1q().unwrap();
            assert!(Gate::custom_1q(m).is_ok(), "{g:?}");
        }
        for g in [Gate::Cnot, Gate::Cz] {
            assert!(Gate::custom_2q(g.matrix_2q().unwrap()).is_ok());
        }
    }

    #[test]
    fn rejects_non_unitary() {
        let z = c(0.0, 0.0);
        let m = [[c(1.0, 0.0), c(1.0, 0.0)], [z, c(1.0, 0.0)]];
        assert_eq!(Gate::custom_1q(m), Err(QubitError::NotUnitary));
    }
}
