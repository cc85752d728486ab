//! The discretized global history state and everything obtained from it by
//! conditioning: states at a clock time, frequency slices, propagators, and
//! constraint residuals.
//!
//! A history is stored clock-block-diagonally: one system vector per grid
//! point, `branch_k = phi_k U(t_k, t0) psi0`. Only [`constraint_operator`]
//! ever materializes the full clock-times-system space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::clock::{ClockGrid, Envelope, OmegaTransform};
use crate::error::{Error, Result};
use crate::oracle::{segment_unitary, HamiltonianSpec};
use crate::tensor::{apply_local, Operator, Space, SpaceLabel, StateVector, TensorProduct, C64};

/// Largest `N * dim(Q)` for which the dense constraint operator is built.
pub const DENSE_LIMIT: usize = 4096;

/// Thresholds used when dividing out or classifying conditioned quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningTolerances {
    /// Smallest `|phi_k|` a query may condition on.
    pub cond: f64,
    /// Norm below which a frequency slice counts as null.
    pub null: f64,
    /// Relative eigen-residual accepted for a nonzero frequency slice.
    pub eig: f64,
}

impl Default for ConditioningTolerances {
    fn default() -> Self {
        Self {
            cond: 1e-8,
            null: 1e-8,
            eig: 1e-6,
        }
    }
}

/// Bookkeeping for one memory register of a measured history.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub index: u32,
    pub event_time: f64,
    pub dim: usize,
    pub ready: DVector<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    grid: ClockGrid,
    envelope: Envelope,
    factors: Vec<SpaceLabel>,
    branches: Vec<DVector<C64>>,
    memories: Vec<MemoryRecord>,
    tolerances: ConditioningTolerances,
}

impl HistoryState {
    pub(crate) fn from_branches(
        envelope: &Envelope,
        factors: Vec<SpaceLabel>,
        branches: Vec<DVector<C64>>,
        memories: Vec<MemoryRecord>,
    ) -> HistoryState {
        HistoryState {
            grid: *envelope.grid(),
            envelope: envelope.clone(),
            factors,
            branches,
            memories,
            tolerances: ConditioningTolerances::default(),
        }
    }

    pub fn with_tolerances(mut self, tolerances: ConditioningTolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn tolerances(&self) -> ConditioningTolerances {
        self.tolerances
    }

    pub fn grid(&self) -> &ClockGrid {
        &self.grid
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    /// System-side factors of every branch (`Q`, then memories).
    pub fn factors(&self) -> &[SpaceLabel] {
        &self.factors
    }

    pub fn memories(&self) -> &[MemoryRecord] {
        &self.memories
    }

    pub fn memory(&self, index: u32) -> Option<&MemoryRecord> {
        self.memories.iter().find(|m| m.index == index)
    }

    pub fn branch(&self, k: usize) -> StateVector {
        StateVector::new(self.factors.clone(), self.branches[k].clone())
            .expect("branch dimensions fixed at construction")
    }

    /// `<<Phi|Phi>>`.
    pub fn norm_squared(&self) -> f64 {
        self.branches.iter().map(|b| b.norm_squared()).sum()
    }

    /// The whole history as one vector on `T ⊗ (system factors)`.
    pub fn to_state(&self) -> StateVector {
        let d = self.branches[0].len();
        let flat = DVector::from_iterator(
            self.grid.len() * d,
            self.branches.iter().flat_map(|b| b.iter().copied()),
        );
        let mut factors = vec![self.grid.label()];
        factors.extend_from_slice(&self.factors);
        StateVector::new(factors, flat).expect("flat history matches its factors")
    }

    /// Grid index for a query time, refusing times whose clock weight is
    /// below the conditioning threshold.
    pub(crate) fn conditioning_index(&self, t: f64) -> Result<usize> {
        let k = self.grid.nearest_index(t)?;
        let weight = self.envelope.weight(k).norm();
        if weight < self.tolerances.cond {
            return Err(Error::NullProbabilityTime { t, weight });
        }
        Ok(k)
    }

    /// `|psi(t)> = <t|Phi>> / phi(t)` at the grid point nearest `t`.
    pub fn condition_on_time(&self, t: f64) -> Result<StateVector> {
        let k = self.conditioning_index(t)?;
        let phi = self.envelope.weight(k);
        Ok(self.branch(k).scaled(phi.inv()))
    }

    /// `<omega_j|Psi>>`, unnormalized. Requires a flat envelope.
    pub fn condition_on_frequency(&self, j: i64) -> Result<FrequencySlice> {
        if !self.envelope.is_flat() {
            return Err(Error::UnsupportedEnvelope);
        }
        let bra = crate::clock::frequency_vector(&self.grid, j)?;
        let d = self.branches[0].len();
        let mut out = DVector::<C64>::zeros(d);
        for (k, b) in self.branches.iter().enumerate() {
            out += b * bra.amplitudes()[k].conj();
        }
        Ok(FrequencySlice {
            index: j,
            omega: self.grid.frequency(j),
            vector: StateVector::new(self.factors.clone(), out)?,
            tolerances: self.tolerances,
        })
    }

    #[doc(hidden)]
    /// Test hook: scales branch `k` by `1/sqrt(2)` so that probability
    /// identities at that clock time break.
    pub fn inject_fault(&mut self, k: usize) {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        self.branches[k] *= s;
    }
}

/// A history projected on one clock frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySlice {
    pub index: i64,
    pub omega: f64,
    pub vector: StateVector,
    tolerances: ConditioningTolerances,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrequencyClass {
    /// The slice vanishes.
    Null { norm: f64 },
    /// The slice is an eigenvector of `H` with eigenvalue `-omega`.
    Eigen { eigenvalue: f64, residual: f64 },
    /// Neither: nonzero but not an eigenvector within tolerance.
    Mixed { norm: f64, residual: f64 },
}

impl FrequencySlice {
    /// `‖H v + omega v‖ / ‖v‖`.
    pub fn eigen_residual(&self, h: &Operator) -> Result<f64> {
        let hv = apply_local(h, &self.vector)?;
        let r = hv.amplitudes() + self.vector.amplitudes() * C64::from(self.omega);
        Ok(r.norm() / self.vector.norm())
    }

    pub fn classify(&self, h: &Operator) -> Result<FrequencyClass> {
        let norm = self.vector.norm();
        if norm <= self.tolerances.null {
            return Ok(FrequencyClass::Null { norm });
        }
        let residual = self.eigen_residual(h)?;
        Ok(if residual <= self.tolerances.eig {
            FrequencyClass::Eigen {
                eigenvalue: -self.omega,
                residual,
            }
        } else {
            FrequencyClass::Mixed { norm, residual }
        })
    }
}

fn check_initial(psi0: &StateVector, q: SpaceLabel, grid: &ClockGrid, t0: f64) -> Result<()> {
    if psi0.factors() != [q] {
        return Err(Error::ShapeMismatch(format!(
            "initial state must live on Q[{}]",
            q.dim
        )));
    }
    let n = psi0.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n));
    }
    if !grid.contains(t0) {
        return Err(Error::TimeOutsideWindow {
            t: t0,
            t_min: grid.t_min(),
            t_max: grid.t_max(),
        });
    }
    Ok(())
}

/// `|Phi>> = sum_k phi_k |t_k> ⊗ U(t_k, t0) psi0`.
pub fn build_history(
    spec: &HamiltonianSpec,
    psi0: &StateVector,
    t0: f64,
    envelope: &Envelope,
    substeps: usize,
) -> Result<HistoryState> {
    let grid = envelope.grid();
    check_initial(psi0, spec.system_label(), grid, t0)?;
    let branches = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let u = segment_unitary(spec, grid.time(k), t0, substeps)?;
            Ok(u.matrix() * psi0.amplitudes() * envelope.weight(k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HistoryState::from_branches(
        envelope,
        vec![spec.system_label()],
        branches,
        Vec::new(),
    ))
}

/// The clock-controlled unitary `sum_k |t_k><t_k| ⊗ U(t_k, t0)`, kept block-wise.
#[derive(Debug, Clone)]
pub struct DilationUnitary {
    grid: ClockGrid,
    system: SpaceLabel,
    blocks: Vec<DMatrix<C64>>,
}

impl DilationUnitary {
    pub fn new(spec: &HamiltonianSpec, grid: &ClockGrid, t0: f64, substeps: usize) -> Result<Self> {
        let blocks = (0..grid.len())
            .into_par_iter()
            .map(|k| Ok(segment_unitary(spec, grid.time(k), t0, substeps)?.matrix().clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            system: spec.system_label(),
            blocks,
        })
    }

    pub fn block(&self, k: usize) -> &DMatrix<C64> {
        &self.blocks[k]
    }

    /// Right-multiplies by `1_T ⊗ v`.
    pub fn then_system(&self, v: &Operator) -> Result<DilationUnitary> {
        if v.factors() != [self.system] {
            return Err(Error::ShapeMismatch("system operator on the wrong space".into()));
        }
        Ok(DilationUnitary {
            grid: self.grid,
            system: self.system,
            blocks: self.blocks.iter().map(|b| b * v.matrix()).collect(),
        })
    }

    /// Dense operator on `T ⊗ Q`.
    pub fn to_operator(&self) -> Result<Operator> {
        let d = self.system.dim;
        let n = self.grid.len();
        if n * d > DENSE_LIMIT {
            return Err(Error::SizeGuard(n * d));
        }
        let mut m = DMatrix::<C64>::zeros(n * d, n * d);
        for (k, b) in self.blocks.iter().enumerate() {
            m.view_mut((k * d, k * d), (d, d)).copy_from(b);
        }
        Operator::new(vec![self.grid.label(), self.system], m)?.certify_unitary()
    }

    /// Acts on the product `|phi>_T ⊗ psi0`.
    pub fn apply_product(&self, envelope: &Envelope, psi0: &StateVector) -> Result<HistoryState> {
        if envelope.grid() != &self.grid {
            return Err(Error::GridMismatch("envelope grid differs from the dilation grid".into()));
        }
        if psi0.factors() != [self.system] {
            return Err(Error::ShapeMismatch("initial state must live on Q".into()));
        }
        let branches = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| b * psi0.amplitudes() * envelope.weight(k))
            .collect();
        Ok(HistoryState::from_branches(
            envelope,
            vec![self.system],
            branches,
            Vec::new(),
        ))
    }
}

/// Transition amplitude `<F| U(t_F, t_I) |I>` read off a flat history started
/// at `(t_I, I)`.
///
/// The overlap with a flat-envelope branch carries the clock weight
/// `1/sqrt(N)`; it is multiplied back here.
pub fn propagator(
    spec: &HamiltonianSpec,
    initial: &StateVector,
    t_initial: f64,
    fin: &StateVector,
    t_final: f64,
    grid: &ClockGrid,
    substeps: usize,
) -> Result<C64> {
    let flat = Envelope::flat(grid);
    let k = grid.nearest_index(t_final)?;
    let history = build_history(spec, initial, t_initial, &flat, substeps)?;
    if fin.factors() != history.factors() {
        return Err(Error::ShapeMismatch("final state must live on Q".into()));
    }
    let jacobian = (grid.len() as f64).sqrt();
    Ok(fin.inner(&history.branch(k))? * jacobian)
}

/// Dense `Omega ⊗ 1 + sum_k |t_k><t_k| ⊗ H(t_k)` on `T ⊗ Q`.
pub fn constraint_operator(spec: &HamiltonianSpec, grid: &ClockGrid) -> Result<Operator> {
    let q = spec.system_label();
    let d = q.dim;
    let n = grid.len();
    if n * d > DENSE_LIMIT {
        return Err(Error::SizeGuard(n * d));
    }
    let omega = crate::clock::omega_operator(grid);
    let id = Operator::identity(vec![q])?;
    let mut j = omega.kron(&id)?.matrix().clone();
    for k in 0..n {
        let h = spec.at(grid.time(k));
        let mut block = j.view_mut((k * d, k * d), (d, d));
        block += h.matrix();
    }
    Operator::new(vec![grid.label(), q], j)?.certify_hermitian_within(1e-10)
}

impl Operator {
    fn certify_hermitian_within(self, tol: f64) -> Result<Operator> {
        let dev = self.hermitian_deviation();
        if dev > tol {
            return Err(Error::NotHermitian(dev));
        }
        let (factors, matrix) = (self.factors().to_vec(), self.matrix().clone());
        Ok(Operator::from_trusted(factors, matrix, true, false))
    }
}

/// Norms of the constraint applied to a history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResidual {
    /// `‖J |Phi>>‖`.
    pub plain: f64,
    /// `‖(J + i phi'(T)/phi(T) ⊗ 1) |Phi>>‖`, zero for an exact history.
    pub regularized: f64,
}

/// Applies the constraint across branches with the spectral frequency
/// operator, without building the dense matrix.
pub fn constraint_residual(history: &HistoryState, spec: &HamiltonianSpec) -> Result<ConstraintResidual> {
    let q = spec.system_label();
    if history.factors() != [q] {
        return Err(Error::GridMismatch(
            "constraint residual needs an unmeasured history on Q matching the Hamiltonian".into(),
        ));
    }
    let grid = history.grid();
    let n = grid.len();
    let d = q.dim;
    let omega = OmegaTransform::new(grid);

    // Omega acting on the clock index, one system component at a time
    let mut omega_phi = vec![DVector::<C64>::zeros(d); n];
    for c in 0..d {
        let column: Vec<C64> = (0..n).map(|k| history.branches[k][c]).collect();
        for (k, z) in omega.apply(&column).into_iter().enumerate() {
            omega_phi[k][c] = z;
        }
    }

    let phi = history.envelope().weights();
    let phi_dot = history.envelope().derivative();
    let mut plain = 0.0;
    let mut regularized = 0.0;
    for k in 0..n {
        let h = spec.at(grid.time(k));
        let jk = &omega_phi[k] + h.matrix() * &history.branches[k];
        plain += jk.norm_squared();
        // i phi'/phi acting on phi_k psi_k is i phi'_k psi_k. Recovering psi_k
        // by dividing in two steps stays finite for subnormal weights.
        let s = phi[k].norm();
        let correction = if s > 0.0 {
            let unit = phi[k] / s;
            history.branches[k].map(|z| z / s / unit) * (C64::i() * phi_dot[k])
        } else {
            DVector::zeros(d)
        };
        regularized += (jk + correction).norm_squared();
    }
    Ok(ConstraintResidual {
        plain: plain.sqrt(),
        regularized: regularized.sqrt(),
    })
}

/// Builds `|phi> ⊗ psi0` on `T ⊗ Q` (no dynamics), for tests and cross-checks.
pub fn product_history(envelope: &Envelope, psi0: &StateVector) -> Result<HistoryState> {
    if psi0.factors().len() != 1 || psi0.factors()[0].space != Space::System {
        return Err(Error::ShapeMismatch("product history needs a state on Q".into()));
    }
    let branches = envelope
        .weights()
        .iter()
        .map(|&w| psi0.amplitudes() * w)
        .collect();
    Ok(HistoryState::from_branches(
        envelope,
        psi0.factors().to_vec(),
        branches,
        Vec::new(),
    ))
}
