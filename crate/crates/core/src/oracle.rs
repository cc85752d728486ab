//! Standard Schrödinger propagation, used as ground truth for everything the
//! history state predicts.
//!
//! Time-ordered exponentials are approximated by a midpoint product over a
//! uniform partition of `[t0, t]`. The same formula covers `t < t0`: the step
//! is negative and the product becomes the anti-ordered inverse.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measurement::{Assignments, MeasurementSchedule};
use crate::tensor::{apply_local, HermitianEigen, Operator, Space, SpaceLabel, StateVector, C64};

/// Midpoint substeps per unit time used when a caller does not choose.
pub const DEFAULT_SUBSTEPS: usize = 64;

/// Scalar time profile multiplying one Hamiltonian term.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Const(f64),
    /// `values[i]` holds on `[times[i], times[i+1])`; zero before `times[0]`,
    /// the last value extends forever.
    Piecewise { times: Vec<f64>, values: Vec<f64> },
    /// `amplitude * sin(frequency * t + phase)`.
    Sin {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

impl Waveform {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Waveform::Const(c) => *c,
            Waveform::Piecewise { times, values } => {
                match times.iter().rposition(|&s| s <= t) {
                    Some(i) => values[i],
                    None => 0.0,
                }
            }
            Waveform::Sin {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).sin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        match self {
            Waveform::Const(c) if finite(*c) => Ok(()),
            Waveform::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidHamiltonian(
                        "piecewise table needs matching, nonempty times and values".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidHamiltonian(
                        "piecewise breakpoints must be strictly increasing".into(),
                    ));
                }
                if !times.iter().chain(values).all(|&x| finite(x)) {
                    return Err(Error::InvalidHamiltonian("non-finite piecewise entry".into()));
                }
                Ok(())
            }
            Waveform::Sin {
                amplitude,
                frequency,
                phase,
            } if finite(*amplitude) && finite(*frequency) && finite(*phase) => Ok(()),
            _ => Err(Error::InvalidHamiltonian("non-finite waveform parameter".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrivenTerm {
    pub operator: Operator,
    pub waveform: Waveform,
}

/// Hamiltonian of the system `Q`, constant or a sum of driven terms.
#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianSpec {
    Constant(Operator),
    TimeDependent(Vec<DrivenTerm>),
}

impl HamiltonianSpec {
    /// Builds a constant spec, certifying hermiticity.
    pub fn constant(h: Operator) -> Result<Self> {
        let spec = HamiltonianSpec::Constant(h.certify_hermitian()?);
        spec.validate()?;
        Ok(spec)
    }

    pub fn time_dependent(terms: Vec<DrivenTerm>) -> Result<Self> {
        let terms = terms
            .into_iter()
            .map(|t| {
                Ok(DrivenTerm {
                    operator: t.operator.certify_hermitian()?,
                    waveform: t.waveform,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = HamiltonianSpec::TimeDependent(terms);
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero(dim: usize) -> Result<Self> {
        let q = SpaceLabel::system(dim)?;
        Self::constant(Operator::new(vec![q], DMatrix::zeros(dim, dim))?)
    }

    pub fn validate(&self) -> Result<()> {
        let check_op = |op: &Operator| -> Result<()> {
            if op.factors().len() != 1 || op.factors()[0].space != Space::System {
                return Err(Error::InvalidHamiltonian(
                    "Hamiltonian terms must act on Q alone".into(),
                ));
            }
            if !op.is_hermitian() {
                let dev = op.hermitian_deviation();
                if dev > crate::tensor::HERMITIAN_TOL {
                    return Err(Error::NotHermitian(dev));
                }
            }
            Ok(())
        };
        match self {
            HamiltonianSpec::Constant(h) => check_op(h),
            HamiltonianSpec::TimeDependent(terms) => {
                let first = terms
                    .first()
                    .ok_or_else(|| Error::InvalidHamiltonian("no terms".into()))?;
                for t in terms {
                    check_op(&t.operator)?;
                    t.waveform.validate()?;
                    if t.operator.factors() != first.operator.factors() {
                        return Err(Error::InvalidHamiltonian(
                            "terms act on systems of different dimension".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn system_label(&self) -> SpaceLabel {
        match self {
            HamiltonianSpec::Constant(h) => h.factors()[0],
            HamiltonianSpec::TimeDependent(terms) => terms[0].operator.factors()[0],
        }
    }

    pub fn dim(&self) -> usize {
        self.system_label().dim
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, HamiltonianSpec::Constant(_))
    }

    /// `H(t)` as a hermitian operator on `Q`.
    pub fn at(&self, t: f64) -> Operator {
        match self {
            HamiltonianSpec::Constant(h) => h.clone(),
            HamiltonianSpec::TimeDependent(terms) => {
                let d = self.dim();
                let mut m = DMatrix::<C64>::zeros(d, d);
                for term in terms {
                    m += term.operator.matrix() * C64::from(term.waveform.eval(t));
                }
                Operator::from_trusted(vec![self.system_label()], m, true, false)
            }
        }
    }

    /// The same dynamics with the spectrum moved by `-eps`: `H - eps I`.
    pub fn shifted(&self, eps: f64) -> HamiltonianSpec {
        let q = self.system_label();
        let shift = DMatrix::<C64>::identity(q.dim, q.dim) * C64::from(eps);
        match self {
            HamiltonianSpec::Constant(h) => HamiltonianSpec::Constant(Operator::from_trusted(
                vec![q],
                h.matrix() - shift,
                true,
                false,
            )),
            HamiltonianSpec::TimeDependent(terms) => {
                let mut terms = terms.clone();
                terms.push(DrivenTerm {
                    operator: Operator::from_trusted(vec![q], -shift, true, false),
                    waveform: Waveform::Const(1.0),
                });
                HamiltonianSpec::TimeDependent(terms)
            }
        }
    }
}

fn check_substeps(substeps: usize) -> Result<()> {
    if substeps == 0 {
        return Err(Error::InvalidHamiltonian("substeps per unit time must be >= 1".into()));
    }
    Ok(())
}

/// Propagator `U(t, t0)` on `Q`.
pub fn segment_unitary(
    spec: &HamiltonianSpec,
    t: f64,
    t0: f64,
    substeps: usize,
) -> Result<Operator> {
    check_substeps(substeps)?;
    match spec {
        HamiltonianSpec::Constant(h) => HermitianEigen::new(h)?.exp(t - t0),
        HamiltonianSpec::TimeDependent(_) => {
            let q = spec.system_label();
            if t == t0 {
                return Operator::identity(vec![q]);
            }
            let steps = ((t - t0).abs() * substeps as f64).ceil().max(1.0) as usize;
            let delta = (t - t0) / steps as f64;
            let mut u = DMatrix::<C64>::identity(q.dim, q.dim);
            for i in 0..steps {
                let mid = t0 + (i as f64 + 0.5) * delta;
                let step = HermitianEigen::new(&spec.at(mid))?.exp_matrix(delta);
                u = step * u;
            }
            Operator::from_trusted(vec![q], u, false, false).certify_unitary()
        }
    }
}

/// `exp(-i H (t - t0)) psi0` for a constant hermitian `H`.
pub fn evolve_const(h: &Operator, psi0: &StateVector, t: f64, t0: f64) -> Result<StateVector> {
    let u = HermitianEigen::new(h)?.exp(t - t0)?;
    apply_local(&u, psi0)
}

/// Time-ordered evolution `U(t, t0) psi0`. Factors of `psi0` other than `Q`
/// are left untouched.
pub fn evolve_td(
    spec: &HamiltonianSpec,
    psi0: &StateVector,
    t: f64,
    t0: f64,
    substeps: usize,
) -> Result<StateVector> {
    let u = segment_unitary(spec, t, t0, substeps)?;
    apply_local(&u, psi0)
}

/// An instantaneous unitary kick at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseEvent {
    pub time: f64,
    pub unitary: Operator,
}

impl ImpulseEvent {
    pub fn new(time: f64, unitary: Operator) -> Result<Self> {
        Ok(Self {
            time,
            unitary: unitary.certify_unitary()?,
        })
    }
}

/// Piecewise evolution with impulses inserted at their event times. An impulse
/// at `t_i` has acted for every query time `t >= t_i`.
pub fn evolve_schedule(
    spec: &HamiltonianSpec,
    impulses: &[ImpulseEvent],
    psi0: &StateVector,
    t: f64,
    t0: f64,
    substeps: usize,
) -> Result<StateVector> {
    if impulses.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::InvalidSchedule("impulse times must be strictly increasing".into()));
    }
    if let Some(early) = impulses.iter().find(|i| i.time < t0) {
        return Err(Error::InvalidSchedule(format!(
            "impulse at {} precedes the initial time {t0}",
            early.time
        )));
    }
    let mut psi = psi0.clone();
    let mut now = t0;
    for imp in impulses.iter().take_while(|i| i.time <= t) {
        psi = evolve_td(spec, &psi, imp.time, now, substeps)?;
        psi = apply_local(&imp.unitary, &psi)?;
        now = imp.time;
    }
    evolve_td(spec, &psi, t, now, substeps)
}

/// Probability of the assigned outcomes as seen at time `t`, by direct
/// composition of Kraus operators with free evolution in between.
///
/// Unassigned events are summed over. Assigned events that have not happened
/// by `t` contribute the ready-state factor `|<a|r>|^2`.
pub fn oracle_chain_prob(
    schedule: &MeasurementSchedule,
    psi0: &StateVector,
    t0: f64,
    assignments: &Assignments,
    t: f64,
    substeps: usize,
) -> Result<f64> {
    check_substeps(substeps)?;
    schedule.check_assignments(assignments)?;
    if let Some(first) = schedule.events().first() {
        if first.time < t0 {
            return Err(Error::InvalidSchedule(
                "initial time lies after the first event".into(),
            ));
        }
    }
    chain(schedule, psi0.clone(), t0, 0, assignments, t, substeps)
}

fn chain(
    schedule: &MeasurementSchedule,
    psi: StateVector,
    now: f64,
    idx: usize,
    assignments: &Assignments,
    t: f64,
    substeps: usize,
) -> Result<f64> {
    let events = schedule.events();
    if idx == events.len() || events[idx].time > t {
        // free evolution up to t is unitary and leaves the weight unchanged
        let pending: f64 = events[idx..]
            .iter()
            .filter_map(|e| {
                assignments
                    .get(&e.memory.index())
                    .map(|&a| e.memory.ready_overlap_sq(a))
            })
            .product();
        return Ok(psi.norm_squared() * pending);
    }
    let event = &events[idx];
    let psi = evolve_td(schedule.hamiltonian(), &psi, event.time, now, substeps)?;
    let kraus = event.instrument.operators();
    match assignments.get(&event.memory.index()) {
        Some(&a) if a >= kraus.len() => Ok(0.0),
        Some(&a) => {
            let next = apply_local(&kraus[a], &psi)?;
            chain(schedule, next, event.time, idx + 1, assignments, t, substeps)
        }
        None => kraus.iter().try_fold(0.0, |acc, k| {
            let next = apply_local(k, &psi)?;
            Ok(acc + chain(schedule, next, event.time, idx + 1, assignments, t, substeps)?)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::pauli;
    use std::f64::consts::FRAC_PI_2;

    fn q2() -> SpaceLabel {
        SpaceLabel::system(2).unwrap()
    }

    fn rabi() -> Operator {
        Operator::new(vec![q2()], pauli::x() * C64::from(FRAC_PI_2)).unwrap()
    }

    fn ket(amps: &[C64]) -> StateVector {
        StateVector::from_slice(vec![q2()], amps).unwrap()
    }

    #[test]
    fn evolve_const_closed_forms() {
        let psi0 = StateVector::basis(vec![q2()], 0).unwrap();
        let same = evolve_const(&rabi(), &psi0, 0.3, 0.3).unwrap();
        assert!(same.distance(&psi0).unwrap() < 1e-15);

        let one = evolve_const(&rabi(), &psi0, 1.0, 0.0).unwrap();
        assert!(one.distance(&ket(&[C64::from(0.0), C64::new(0.0, -1.0)])).unwrap() < 1e-14);

        let s = 1.0 / 2f64.sqrt();
        let half = evolve_const(&rabi(), &psi0, 1.5, 1.0).unwrap();
        assert!(half.distance(&ket(&[C64::from(s), C64::new(0.0, -s)])).unwrap() < 1e-14);
    }

    #[test]
    fn evolve_const_reversible() {
        let psi0 = ket(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let fwd = evolve_const(&rabi(), &psi0, 2.7, 0.4).unwrap();
        let back = evolve_const(&rabi(), &fwd, 0.4, 2.7).unwrap();
        assert!(back.distance(&psi0).unwrap() < 1e-12);
    }

    #[test]
    fn constant_waveform_matches_const_evolution() {
        let psi0 = ket(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let td = HamiltonianSpec::time_dependent(vec![DrivenTerm {
            operator: rabi(),
            waveform: Waveform::Const(1.0),
        }])
        .unwrap();
        let exact = evolve_const(&rabi(), &psi0, 1.37, -0.2).unwrap();
        for substeps in [1, 3, 64] {
            let approx = evolve_td(&td, &psi0, 1.37, -0.2, substeps).unwrap();
            assert!(approx.distance(&exact).unwrap() < 1e-10);
        }
    }

    #[test]
    fn waveform_piecewise_semantics() {
        let w = Waveform::Piecewise {
            times: vec![0.0, 1.0],
            values: vec![2.0, -1.0],
        };
        assert_eq!(w.eval(-0.1), 0.0);
        assert_eq!(w.eval(0.0), 2.0);
        assert_eq!(w.eval(0.99), 2.0);
        assert_eq!(w.eval(1.0), -1.0);
        assert_eq!(w.eval(50.0), -1.0);
        let bad = Waveform::Piecewise {
            times: vec![1.0, 1.0],
            values: vec![0.0, 0.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_rejects_bad_impulses() {
        let spec = HamiltonianSpec::constant(rabi()).unwrap();
        let psi0 = StateVector::basis(vec![q2()], 0).unwrap();
        let id = Operator::identity(vec![q2()]).unwrap();
        let unsorted = vec![
            ImpulseEvent::new(1.0, id.clone()).unwrap(),
            ImpulseEvent::new(0.5, id.clone()).unwrap(),
        ];
        assert!(evolve_schedule(&spec, &unsorted, &psi0, 2.0, 0.0, 8).is_err());
        let early = vec![ImpulseEvent::new(-1.0, id).unwrap()];
        assert!(evolve_schedule(&spec, &early, &psi0, 2.0, 0.0, 8).is_err());
    }

    #[test]
    fn impulse_at_query_time_is_included() {
        let spec = HamiltonianSpec::zero(2).unwrap();
        let x = Operator::new(vec![q2()], pauli::x()).unwrap();
        let kick = vec![ImpulseEvent::new(1.0, x).unwrap()];
        let psi0 = StateVector::basis(vec![q2()], 0).unwrap();
        let before = evolve_schedule(&spec, &kick, &psi0, 0.999, 0.0, 8).unwrap();
        let at = evolve_schedule(&spec, &kick, &psi0, 1.0, 0.0, 8).unwrap();
        assert!(before.distance(&psi0).unwrap() < 1e-15);
        assert!(at.distance(&StateVector::basis(vec![q2()], 1).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn substeps_must_be_positive() {
        let spec = HamiltonianSpec::constant(rabi()).unwrap();
        assert!(segment_unitary(&spec, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn shifted_spec_moves_spectrum() {
        let spec = HamiltonianSpec::constant(rabi()).unwrap();
        let h = spec.shifted(0.25).at(0.0);
        let ev = HermitianEigen::new(&h).unwrap().sorted_eigenvalues();
        assert!((ev[0] + FRAC_PI_2 + 0.25).abs() < 1e-14);
        assert!((ev[1] - FRAC_PI_2 + 0.25).abs() < 1e-14);
    }
}
