//! Dense complex linear algebra over labeled tensor-product spaces.
//!
//! Every vector and operator carries its list of tensor factors. Factor lists
//! are always kept in canonical order: the clock `T` first, then the system
//! `Q`, then memories `M1..MN` by index. Constructors that combine factors
//! (`kron`) permute the underlying amplitudes so this order holds, which keeps
//! index arithmetic in the rest of the crate free of permutation bookkeeping.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Maximum entry of `A - A^dagger` accepted for a hermitian operator.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Maximum entry of `A^dagger A - I` accepted for a unitary operator.
pub const UNITARY_TOL: f64 = 1e-10;
/// Maximum entry of `sum_a K_a^dagger K_a - I` accepted for an instrument.
pub const KRAUS_TOL: f64 = 1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// The tensor factor a space label refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Space {
    /// The clock, `T`.
    Clock,
    /// The measured system, `Q`.
    System,
    /// Memory register `M<i>`, `i >= 1`.
    Memory(u32),
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Clock => write!(f, "T"),
            Space::System => write!(f, "Q"),
            Space::Memory(i) => write!(f, "M{i}"),
        }
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Space::Clock),
            "Q" => Ok(Space::System),
            _ => {
                let idx = s
                    .strip_prefix('M')
                    .and_then(|rest| rest.parse::<u32>().ok())
                    .filter(|&i| i >= 1 && !s[1..].starts_with('0') && !s[1..].starts_with('+'));
                idx.map(Space::Memory)
                    .ok_or_else(|| Error::InvalidLabel(s.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceLabel {
    pub space: Space,
    pub dim: usize,
}

impl SpaceLabel {
    pub fn new(space: Space, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidLabel(format!("{space} has dimension 0")));
        }
        Ok(Self { space, dim })
    }

    pub fn system(dim: usize) -> Result<Self> {
        Self::new(Space::System, dim)
    }

    pub fn memory(index: u32, dim: usize) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidLabel("M0".into()));
        }
        Self::new(Space::Memory(index), dim)
    }
}

impl fmt::Display for SpaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.space, self.dim)
    }
}

fn total_dim(factors: &[SpaceLabel]) -> usize {
    factors.iter().map(|l| l.dim).product()
}

fn check_unique(factors: &[SpaceLabel]) -> Result<()> {
    for (i, a) in factors.iter().enumerate() {
        if factors[i + 1..].iter().any(|b| b.space == a.space) {
            return Err(Error::DuplicateLabel(a.space.to_string()));
        }
    }
    Ok(())
}

/// Permutation sorting `factors` into canonical order: `perm[i]` is the old
/// axis that becomes new axis `i`.
fn canonical_perm(factors: &[SpaceLabel]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..factors.len()).collect();
    perm.sort_by_key(|&i| factors[i].space);
    perm
}

/// For an axis permutation of a row-major array, maps each new flat index to
/// the old flat index holding the same element.
pub(crate) fn permutation_map(dims: &[usize], perm: &[usize]) -> Vec<usize> {
    let n = dims.len();
    let mut old_strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        old_strides[i] = old_strides[i + 1] * dims[i + 1];
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
    let total: usize = dims.iter().product();

    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut old = 0usize;
    for _ in 0..total {
        map.push(old);
        // odometer increment over the new dims, tracking the old offset
        for axis in (0..n).rev() {
            counter[axis] += 1;
            old += strides[axis];
            if counter[axis] < new_dims[axis] {
                break;
            }
            old -= strides[axis] * new_dims[axis];
            counter[axis] = 0;
        }
    }
    map
}

fn is_identity_perm(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    factors: Vec<SpaceLabel>,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(factors: Vec<SpaceLabel>, amplitudes: DVector<C64>) -> Result<Self> {
        check_unique(&factors)?;
        let dim = total_dim(&factors);
        if amplitudes.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "{} amplitudes for a space of dimension {dim}",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite amplitude".into()));
        }
        Self::from_parts(factors, amplitudes)
    }

    pub fn from_slice(factors: Vec<SpaceLabel>, amplitudes: &[C64]) -> Result<Self> {
        Self::new(factors, DVector::from_column_slice(amplitudes))
    }

    /// Computational basis vector `|index>` on the given factors.
    pub fn basis(factors: Vec<SpaceLabel>, index: usize) -> Result<Self> {
        let dim = total_dim(&factors);
        if index >= dim {
            return Err(Error::IndexOutOfRange {
                label: factors
                    .iter()
                    .map(|l| l.space.to_string())
                    .collect::<Vec<_>>()
                    .join("x"),
                index,
                dim,
            });
        }
        let mut amps = DVector::from_element(dim, ZERO);
        amps[index] = ONE;
        Self::new(factors, amps)
    }

    fn from_parts(factors: Vec<SpaceLabel>, amplitudes: DVector<C64>) -> Result<Self> {
        let perm = canonical_perm(&factors);
        if is_identity_perm(&perm) {
            return Ok(Self { factors, amplitudes });
        }
        let dims: Vec<usize> = factors.iter().map(|l| l.dim).collect();
        let map = permutation_map(&dims, &perm);
        let amps = DVector::from_iterator(map.len(), map.iter().map(|&o| amplitudes[o]));
        let factors = perm.iter().map(|&p| factors[p]).collect();
        Ok(Self {
            factors,
            amplitudes: amps,
        })
    }

    pub fn factors(&self) -> &[SpaceLabel] {
        &self.factors
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// `<self|other>`, antilinear in `self`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch("inner product of different spaces".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn scaled(&self, s: C64) -> StateVector {
        StateVector {
            factors: self.factors.clone(),
            amplitudes: &self.amplitudes * s,
        }
    }

    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    /// Max-norm distance to another vector on the same factors.
    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch("distance between different spaces".into()));
        }
        Ok((&self.amplitudes - &other.amplitudes).norm())
    }

    pub(crate) fn with_amplitudes(&self, amplitudes: DVector<C64>) -> StateVector {
        debug_assert_eq!(amplitudes.len(), self.amplitudes.len());
        StateVector {
            factors: self.factors.clone(),
            amplitudes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    factors: Vec<SpaceLabel>,
    matrix: DMatrix<C64>,
    hermitian: bool,
    unitary: bool,
}

impl Operator {
    pub fn new(factors: Vec<SpaceLabel>, matrix: DMatrix<C64>) -> Result<Self> {
        check_unique(&factors)?;
        let dim = total_dim(&factors);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix for a space of dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let perm = canonical_perm(&factors);
        if is_identity_perm(&perm) {
            return Ok(Self {
                factors,
                matrix,
                hermitian: false,
                unitary: false,
            });
        }
        let dims: Vec<usize> = factors.iter().map(|l| l.dim).collect();
        let map = permutation_map(&dims, &perm);
        let permuted = DMatrix::from_fn(dim, dim, |r, c| matrix[(map[r], map[c])]);
        Ok(Self {
            factors: perm.iter().map(|&p| factors[p]).collect(),
            matrix: permuted,
            hermitian: false,
            unitary: false,
        })
    }

    pub fn identity(factors: Vec<SpaceLabel>) -> Result<Self> {
        let dim = total_dim(&factors);
        let mut op = Self::new(factors, DMatrix::identity(dim, dim))?;
        op.hermitian = true;
        op.unitary = true;
        Ok(op)
    }

    pub fn factors(&self) -> &[SpaceLabel] {
        &self.factors
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn unitary_deviation(&self) -> f64 {
        let n = self.dim();
        max_abs(&(self.matrix.adjoint() * &self.matrix - DMatrix::<C64>::identity(n, n)))
    }

    /// Checks hermiticity and returns the operator with the flag set.
    pub fn certify_hermitian(mut self) -> Result<Self> {
        if !self.hermitian {
            let dev = self.hermitian_deviation();
            if dev > HERMITIAN_TOL {
                return Err(Error::NotHermitian(dev));
            }
            self.hermitian = true;
        }
        Ok(self)
    }

    pub fn certify_unitary(mut self) -> Result<Self> {
        if !self.unitary {
            let dev = self.unitary_deviation();
            if dev > UNITARY_TOL {
                return Err(Error::NotUnitary(dev));
            }
            self.unitary = true;
        }
        Ok(self)
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            factors: self.factors.clone(),
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
            unitary: self.unitary,
        }
    }

    /// Operator product `self * other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch("composing operators on different spaces".into()));
        }
        Ok(Operator {
            factors: self.factors.clone(),
            matrix: &self.matrix * &other.matrix,
            hermitian: false,
            unitary: self.unitary && other.unitary,
        })
    }

    pub fn scaled(&self, s: f64) -> Operator {
        Operator {
            factors: self.factors.clone(),
            matrix: &self.matrix * C64::new(s, 0.0),
            hermitian: self.hermitian,
            unitary: false,
        }
    }

    /// Max-norm distance between two operators on the same factors.
    pub fn distance(&self, other: &Operator) -> Result<f64> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch("distance between different spaces".into()));
        }
        Ok(max_abs(&(&self.matrix - &other.matrix)))
    }

    pub(crate) fn from_trusted(
        factors: Vec<SpaceLabel>,
        matrix: DMatrix<C64>,
        hermitian: bool,
        unitary: bool,
    ) -> Operator {
        Operator {
            factors,
            matrix,
            hermitian,
            unitary,
        }
    }
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Tensor product of two vectors or two operators.
pub trait TensorProduct: Sized {
    fn kron(&self, other: &Self) -> Result<Self>;
}

impl TensorProduct for StateVector {
    fn kron(&self, other: &Self) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        check_unique(&factors)?;
        let amps = self.amplitudes.kronecker(&other.amplitudes);
        StateVector::from_parts(factors, amps)
    }
}

impl TensorProduct for Operator {
    fn kron(&self, other: &Self) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        check_unique(&factors)?;
        let mut op = Operator::new(factors, self.matrix.kronecker(&other.matrix))?;
        op.hermitian = self.hermitian && other.hermitian;
        op.unitary = self.unitary && other.unitary;
        Ok(op)
    }
}

pub fn kron<T: TensorProduct>(a: &T, b: &T) -> Result<T> {
    a.kron(b)
}

/// Matrix-vector product; the operator and vector must live on the same factors.
pub fn apply(op: &Operator, v: &StateVector) -> Result<StateVector> {
    if op.factors != v.factors {
        return Err(Error::ShapeMismatch(format!(
            "operator on {} applied to vector on {}",
            describe(&op.factors),
            describe(&v.factors)
        )));
    }
    Ok(v.with_amplitudes(&op.matrix * &v.amplitudes))
}

/// Applies an operator acting on a subset of the vector's factors, with the
/// identity on the remaining ones.
pub fn apply_local(op: &Operator, v: &StateVector) -> Result<StateVector> {
    if op.factors == v.factors {
        return apply(op, v);
    }
    let positions = op
        .factors
        .iter()
        .map(|l| {
            v.factors
                .iter()
                .position(|f| f == l)
                .ok_or_else(|| Error::LabelAbsent(l.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    // bring the operator's axes to the front, act, then undo the permutation
    let mut perm = positions.clone();
    perm.extend((0..v.factors.len()).filter(|i| !positions.contains(i)));
    let dims: Vec<usize> = v.factors.iter().map(|l| l.dim).collect();
    let map = permutation_map(&dims, &perm);

    let local = op.dim();
    let rest = v.dim() / local;
    let front = DMatrix::from_fn(local, rest, |r, c| v.amplitudes[map[r * rest + c]]);
    let acted = &op.matrix * front;

    let mut out = DVector::from_element(v.dim(), ZERO);
    for (new, &old) in map.iter().enumerate() {
        out[old] = acted[(new / rest, new % rest)];
    }
    Ok(v.with_amplitudes(out))
}

/// Unnormalized slice `<k|_space v` on the remaining factors.
pub fn partial_project(v: &StateVector, space: Space, k: usize) -> Result<StateVector> {
    let axis = v
        .factors
        .iter()
        .position(|l| l.space == space)
        .ok_or_else(|| Error::LabelAbsent(space.to_string()))?;
    let dim = v.factors[axis].dim;
    if k >= dim {
        return Err(Error::IndexOutOfRange {
            label: space.to_string(),
            index: k,
            dim,
        });
    }
    let inner: usize = v.factors[axis + 1..].iter().map(|l| l.dim).product();
    let outer: usize = v.factors[..axis].iter().map(|l| l.dim).product();
    let mut amps = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = o * dim * inner + k * inner;
        amps.extend(v.amplitudes.rows(base, inner).iter().copied());
    }
    let factors: Vec<SpaceLabel> = v
        .factors
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, l)| *l)
        .collect();
    Ok(StateVector {
        factors,
        amplitudes: DVector::from_vec(amps),
    })
}

/// `exp(-i H theta)` computed from the eigendecomposition of `H`.
pub fn matrix_exp(h: &Operator, theta: f64) -> Result<Operator> {
    let eig = HermitianEigen::new(h)?;
    eig.exp(theta)
}

/// Eigendecomposition of a hermitian operator, reusable for many exponentials.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    factors: Vec<SpaceLabel>,
    values: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(h: &Operator) -> Result<Self> {
        if !h.hermitian {
            let dev = h.hermitian_deviation();
            if dev > HERMITIAN_TOL {
                return Err(Error::NotHermitian(dev));
            }
        }
        // symmetrize away sub-tolerance noise before handing to the solver
        let sym = (&h.matrix + h.matrix.adjoint()) * C64::new(0.5, 0.0);
        let eig = nalgebra::SymmetricEigen::new(sym);
        Ok(Self {
            factors: h.factors.clone(),
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    /// Eigenvalues sorted ascending.
    pub fn sorted_eigenvalues(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn exp_matrix(&self, theta: f64) -> DMatrix<C64> {
        let phases = DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&l| C64::from_polar(1.0, -l * theta)),
        );
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }

    pub fn exp(&self, theta: f64) -> Result<Operator> {
        Operator {
            factors: self.factors.clone(),
            matrix: self.exp_matrix(theta),
            hermitian: false,
            unitary: false,
        }
        .certify_unitary()
    }
}

/// Outcome of a Kraus completeness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KrausCheck {
    Complete { deviation: f64 },
    Violation { deviation: f64 },
}

impl KrausCheck {
    pub fn passed(&self) -> bool {
        matches!(self, KrausCheck::Complete { .. })
    }

    pub fn deviation(&self) -> f64 {
        match *self {
            KrausCheck::Complete { deviation } | KrausCheck::Violation { deviation } => deviation,
        }
    }
}

/// Checks `sum_a K_a^dagger K_a = I`.
pub fn check_kraus_complete(kraus: &[Operator]) -> Result<KrausCheck> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty Kraus set".into()))?;
    let n = first.dim();
    let mut sum = DMatrix::<C64>::zeros(n, n);
    for k in kraus {
        if k.factors != first.factors {
            return Err(Error::ShapeMismatch("Kraus operators on different spaces".into()));
        }
        sum += k.matrix.adjoint() * &k.matrix;
    }
    let deviation = max_abs(&(sum - DMatrix::<C64>::identity(n, n)));
    Ok(if deviation <= KRAUS_TOL {
        KrausCheck::Complete { deviation }
    } else {
        KrausCheck::Violation { deviation }
    })
}

fn describe(factors: &[SpaceLabel]) -> String {
    factors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("⊗")
}

pub mod pauli {
    //! Single-qubit Pauli matrices.
    use super::{C64, ONE, ZERO};
    use nalgebra::DMatrix;

    pub fn i2() -> DMatrix<C64> {
        DMatrix::identity(2, 2)
    }

    pub fn x() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn y() -> DMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        DMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])
    }

    pub fn z() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(dim: usize) -> SpaceLabel {
        SpaceLabel::system(dim).unwrap()
    }

    fn m(i: u32, dim: usize) -> SpaceLabel {
        SpaceLabel::memory(i, dim).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn space_labels_parse_and_order() {
        assert_eq!("T".parse::<Space>().unwrap(), Space::Clock);
        assert_eq!("M12".parse::<Space>().unwrap(), Space::Memory(12));
        assert!("M0".parse::<Space>().is_err());
        assert!("M01".parse::<Space>().is_err());
        assert!("X".parse::<Space>().is_err());
        assert!(Space::Clock < Space::System);
        assert!(Space::System < Space::Memory(1));
        assert!(Space::Memory(2) < Space::Memory(10));
        assert!(SpaceLabel::system(0).is_err());
    }

    #[test]
    fn kron_identities() {
        let a = Operator::identity(vec![q(2)]).unwrap();
        let b = Operator::identity(vec![m(1, 2)]).unwrap();
        let ab = kron(&a, &b).unwrap();
        assert_eq!(ab.matrix(), &DMatrix::<C64>::identity(4, 4));
        assert!(ab.is_unitary() && ab.is_hermitian());
    }

    #[test]
    fn kron_basis_bookkeeping() {
        let dm = 3;
        for r in 0..dm {
            let v = kron(
                &StateVector::basis(vec![q(2)], 0).unwrap(),
                &StateVector::basis(vec![m(1, dm)], r).unwrap(),
            )
            .unwrap();
            let nz: Vec<usize> = (0..v.dim()).filter(|&i| v.amplitudes()[i] != ZERO).collect();
            assert_eq!(nz, vec![r]);
        }
    }

    #[test]
    fn kron_matches_index_arithmetic() {
        let x = Operator::new(vec![q(2)], pauli::x()).unwrap();
        let z = Operator::new(vec![m(1, 2)], pauli::z()).unwrap();
        let xz = kron(&x, &z).unwrap();
        for r in 0..4 {
            for cidx in 0..4 {
                let expected = pauli::x()[(r / 2, cidx / 2)] * pauli::z()[(r % 2, cidx % 2)];
                assert_eq!(xz.matrix()[(r, cidx)], expected);
            }
        }
    }

    #[test]
    fn kron_normalizes_factor_order() {
        let x = Operator::new(vec![q(2)], pauli::x()).unwrap();
        let z = Operator::new(vec![m(1, 2)], pauli::z()).unwrap();
        assert_eq!(kron(&z, &x).unwrap(), kron(&x, &z).unwrap());

        let u = StateVector::from_slice(vec![q(2)], &[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let w = StateVector::from_slice(vec![m(1, 3)], &[c(3.0, 0.0), c(5.0, 0.0), c(7.0, 0.0)])
            .unwrap();
        assert_eq!(kron(&w, &u).unwrap(), kron(&u, &w).unwrap());
    }

    #[test]
    fn kron_rejects_duplicates() {
        let a = Operator::identity(vec![q(2)]).unwrap();
        assert!(matches!(kron(&a, &a), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn apply_pauli_and_identity() {
        let v = StateVector::from_slice(vec![q(2)], &[c(0.3, 0.1), c(-0.2, 0.5)]).unwrap();
        let id = Operator::identity(vec![q(2)]).unwrap();
        assert_eq!(apply(&id, &v).unwrap(), v);

        let x = Operator::new(vec![q(2)], pauli::x()).unwrap();
        let zero = StateVector::basis(vec![q(2)], 0).unwrap();
        assert_eq!(apply(&x, &zero).unwrap(), StateVector::basis(vec![q(2)], 1).unwrap());

        let wrong = StateVector::basis(vec![q(3)], 0).unwrap();
        assert!(matches!(apply(&x, &wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn apply_local_matches_explicit_kron() {
        // X on M2 inside Q x M1 x M2
        let x = Operator::new(vec![m(2, 2)], pauli::x()).unwrap();
        let full = kron(
            &kron(
                &Operator::identity(vec![q(3)]).unwrap(),
                &Operator::identity(vec![m(1, 2)]).unwrap(),
            )
            .unwrap(),
            &x,
        )
        .unwrap();
        let amps: Vec<C64> = (0..12).map(|i| c(i as f64, 0.5 * i as f64)).collect();
        let v = StateVector::from_slice(vec![q(3), m(1, 2), m(2, 2)], &amps).unwrap();
        let local = apply_local(&x, &v).unwrap();
        let direct = apply(&full, &v).unwrap();
        assert!(local.distance(&direct).unwrap() < 1e-14);
    }

    #[test]
    fn partial_project_cases() {
        let v = kron(
            &StateVector::basis(vec![q(2)], 0).unwrap(),
            &StateVector::basis(vec![m(1, 3)], 2).unwrap(),
        )
        .unwrap();
        let slice = partial_project(&v, Space::System, 0).unwrap();
        assert_eq!(slice, StateVector::basis(vec![m(1, 3)], 2).unwrap());

        let s = 1.0 / 2f64.sqrt();
        let bell = StateVector::from_slice(
            vec![q(2), m(1, 2)],
            &[c(s, 0.0), ZERO, ZERO, c(s, 0.0)],
        )
        .unwrap();
        let slice = partial_project(&bell, Space::System, 1).unwrap();
        assert!((slice.norm_squared() - 0.5).abs() < 1e-15);
        assert!((slice.amplitudes()[1] - c(s, 0.0)).norm() < 1e-15);

        assert!(matches!(
            partial_project(&bell, Space::Memory(2), 0),
            Err(Error::LabelAbsent(_))
        ));
        assert!(matches!(
            partial_project(&bell, Space::Memory(1), 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn matrix_exp_closed_forms() {
        let h = Operator::new(vec![q(2)], pauli::x() * c(std::f64::consts::FRAC_PI_2, 0.0))
            .unwrap();
        let u0 = matrix_exp(&h, 0.0).unwrap();
        assert!(u0.distance(&Operator::identity(vec![q(2)]).unwrap()).unwrap() < 1e-15);

        let u = matrix_exp(&h, 1.0).unwrap();
        let expected = Operator::new(vec![q(2)], pauli::x() * c(0.0, -1.0)).unwrap();
        assert!(u.distance(&expected).unwrap() < 1e-14);
        assert!(u.is_unitary());
    }

    #[test]
    fn matrix_exp_rejects_non_hermitian() {
        let a = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let op = Operator::new(vec![q(2)], a).unwrap();
        assert!(matches!(matrix_exp(&op, 1.0), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn kraus_completeness_cases() {
        let p0 = Operator::new(vec![q(2)], DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]))
            .unwrap();
        let p1 = Operator::new(vec![q(2)], DMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]))
            .unwrap();
        assert!(check_kraus_complete(&[p0, p1]).unwrap().passed());

        let a = Operator::new(vec![q(2)], pauli::i2() * c(0.3f64.sqrt(), 0.0)).unwrap();
        let b = Operator::new(vec![q(2)], pauli::x() * c(0.7f64.sqrt(), 0.0)).unwrap();
        assert!(check_kraus_complete(&[a, b]).unwrap().passed());

        let id = Operator::identity(vec![q(2)]).unwrap();
        let check = check_kraus_complete(&[id.clone(), id]).unwrap();
        assert!(!check.passed());
        assert!((check.deviation() - 1.0).abs() < 1e-15);
    }
}
