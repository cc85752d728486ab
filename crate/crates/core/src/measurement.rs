//! Von Neumann measurements: Kraus instruments, memory registers, their
//! dilation to unitaries on `Q ⊗ M`, measured histories, and the probability
//! queries read off them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::clock::{ClockGrid, Envelope};
use crate::error::{Error, Result};
use crate::history::{HistoryState, MemoryRecord};
use crate::oracle::{evolve_schedule, HamiltonianSpec, ImpulseEvent};
use crate::tensor::{
    check_kraus_complete, kron, partial_project, KrausCheck, Operator, Space, SpaceLabel,
    StateVector, C64, ONE, ZERO,
};

/// Memory index (the `i` of `M_i`) to recorded outcome. Index `m` of an
/// `m`-outcome memory is its ready basis vector.
pub type Assignments = BTreeMap<u32, usize>;

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KrausInstrument {
    kraus: Vec<Operator>,
    certificate: KrausCheck,
}

impl KrausInstrument {
    pub fn new(kraus: Vec<Operator>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidSchedule("instrument has no outcomes".into()))?;
        if first.factors().len() != 1 || first.factors()[0].space != Space::System {
            return Err(Error::ShapeMismatch("Kraus operators must act on Q alone".into()));
        }
        let certificate = check_kraus_complete(&kraus)?;
        if !certificate.passed() {
            return Err(Error::IncompleteKraus(certificate.deviation()));
        }
        Ok(Self { kraus, certificate })
    }

    pub fn operators(&self) -> &[Operator] {
        &self.kraus
    }

    pub fn outcomes(&self) -> usize {
        self.kraus.len()
    }

    pub fn system(&self) -> SpaceLabel {
        self.kraus[0].factors()[0]
    }

    pub fn certificate(&self) -> KrausCheck {
        self.certificate
    }
}

fn orthonormal_deviation(vectors: &[DVector<C64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, u) in vectors.iter().enumerate() {
        for (j, v) in vectors.iter().enumerate() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((u.dotc(v) - target).norm());
        }
    }
    worst
}

/// Rank-1 projectors `|u_a><u_a|` onto an orthonormal basis of `Q`.
pub fn instrument_from_projectors(basis: &[StateVector]) -> Result<KrausInstrument> {
    let first = basis
        .first()
        .ok_or_else(|| Error::InvalidSchedule("empty measurement basis".into()))?;
    let q = first.factors().to_vec();
    if basis.iter().any(|b| b.factors() != q.as_slice()) {
        return Err(Error::ShapeMismatch("basis vectors live on different spaces".into()));
    }
    let amps: Vec<DVector<C64>> = basis.iter().map(|b| b.amplitudes().clone()).collect();
    let dev = orthonormal_deviation(&amps);
    if dev > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    let kraus = amps
        .iter()
        .map(|u| Operator::new(q.clone(), u * u.adjoint()))
        .collect::<Result<Vec<_>>>()?;
    KrausInstrument::new(kraus)
}

/// A memory register `M_i` with `m` outcome states and a ready state.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySpec {
    index: u32,
    outcomes: usize,
    ready: DVector<C64>,
}

impl MemorySpec {
    /// Dimension `m + 1`, ready state `|m>`.
    pub fn new(index: u32, outcomes: usize) -> Result<Self> {
        let label = SpaceLabel::memory(index, outcomes + 1)?;
        let mut ready = DVector::from_element(label.dim, ZERO);
        ready[outcomes] = ONE;
        Ok(Self {
            index,
            outcomes,
            ready,
        })
    }

    /// Same register with a custom unit ready vector of length `m + 1`.
    pub fn with_ready(index: u32, outcomes: usize, ready: DVector<C64>) -> Result<Self> {
        if ready.len() != outcomes + 1 {
            return Err(Error::ShapeMismatch(format!(
                "ready state of M{index} needs {} amplitudes",
                outcomes + 1
            )));
        }
        let n = ready.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(n));
        }
        let mut spec = Self::new(index, outcomes)?;
        spec.ready = ready;
        Ok(spec)
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    pub fn dim(&self) -> usize {
        self.outcomes + 1
    }

    pub fn label(&self) -> SpaceLabel {
        SpaceLabel::memory(self.index, self.dim()).expect("index validated at construction")
    }

    pub fn ready(&self) -> &DVector<C64> {
        &self.ready
    }

    pub fn ready_state(&self) -> StateVector {
        StateVector::new(vec![self.label()], self.ready.clone()).expect("ready state length")
    }

    /// `|<a|r>|^2`, the probability of reading `a` before the event.
    pub fn ready_overlap_sq(&self, a: usize) -> f64 {
        self.ready.get(a).map_or(0.0, |z| z.norm_sqr())
    }
}

/// Order in which the standard basis is swept when completing the image of
/// the ready sector. The input side is always swept forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Completion {
    #[default]
    Forward,
    Reverse,
}

/// Extends `fixed` (orthonormal columns) to an orthonormal basis, returning
/// only the new vectors.
fn complete_basis(fixed: &[DVector<C64>], dim: usize, order: Completion) -> Vec<DVector<C64>> {
    let mut basis: Vec<DVector<C64>> = fixed.to_vec();
    let mut extra = Vec::new();
    let candidates: Vec<usize> = match order {
        Completion::Forward => (0..dim).collect(),
        Completion::Reverse => (0..dim).rev().collect(),
    };
    for e in candidates {
        if basis.len() == dim {
            break;
        }
        let mut v = DVector::from_element(dim, ZERO);
        v[e] = ONE;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&v);
                v -= b * c;
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            v /= C64::from(n);
            basis.push(v.clone());
            extra.push(v);
        }
    }
    extra
}

/// A unitary `V` on `Q ⊗ M` with `V (psi ⊗ r) = sum_a K_a psi ⊗ |a>`.
pub fn dilate_instrument(
    instr: &KrausInstrument,
    mem: &MemorySpec,
    completion: Completion,
) -> Result<Operator> {
    if mem.outcomes() != instr.outcomes() {
        return Err(Error::ShapeMismatch(format!(
            "memory M{} records {} outcomes, instrument has {}",
            mem.index(),
            mem.outcomes(),
            instr.outcomes()
        )));
    }
    let q = instr.system();
    let dm = mem.dim();
    let dim = q.dim * dm;

    let ready_sector: Vec<DVector<C64>> = (0..q.dim)
        .map(|i| {
            let mut e = DVector::from_element(q.dim, ZERO);
            e[i] = ONE;
            e.kronecker(mem.ready())
        })
        .collect();
    let images: Vec<DVector<C64>> = (0..q.dim)
        .map(|i| {
            let mut out = DVector::from_element(dim, ZERO);
            for (a, k) in instr.operators().iter().enumerate() {
                let mut ket_a = DVector::from_element(dm, ZERO);
                ket_a[a] = ONE;
                out += k.matrix().column(i).into_owned().kronecker(&ket_a);
            }
            out
        })
        .collect();

    let ins = complete_basis(&ready_sector, dim, Completion::Forward);
    let outs = complete_basis(&images, dim, completion);
    debug_assert_eq!(ins.len(), outs.len());

    let mut v = DMatrix::<C64>::zeros(dim, dim);
    for (out, inp) in images.iter().zip(&ready_sector).chain(outs.iter().zip(&ins)) {
        v += out * inp.adjoint();
    }
    Operator::new(vec![q, mem.label()], v)?.certify_unitary()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEvent {
    pub time: f64,
    pub instrument: KrausInstrument,
    pub memory: MemorySpec,
}

impl MeasurementEvent {
    pub fn new(time: f64, instrument: KrausInstrument, memory: MemorySpec) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::InvalidSchedule("event time must be finite".into()));
        }
        if memory.outcomes() != instrument.outcomes() {
            return Err(Error::InvalidSchedule(format!(
                "M{} has {} outcome states for a {}-outcome instrument",
                memory.index(),
                memory.outcomes(),
                instrument.outcomes()
            )));
        }
        Ok(Self {
            time,
            instrument,
            memory,
        })
    }
}

/// Measurement events on top of the free dynamics of `Q`. Memories have no
/// dynamics of their own.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    hamiltonian: HamiltonianSpec,
    events: Vec<MeasurementEvent>,
}

impl MeasurementSchedule {
    pub fn new(hamiltonian: HamiltonianSpec, events: Vec<MeasurementEvent>) -> Result<Self> {
        hamiltonian.validate()?;
        if events.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidSchedule("event times must be strictly increasing".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &events {
            if !seen.insert(e.memory.index()) {
                return Err(Error::DuplicateLabel(format!("M{}", e.memory.index())));
            }
            if e.instrument.system() != hamiltonian.system_label() {
                return Err(Error::InvalidSchedule(format!(
                    "instrument at t = {} acts on a different system",
                    e.time
                )));
            }
        }
        Ok(Self {
            hamiltonian,
            events,
        })
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.hamiltonian
    }

    pub fn events(&self) -> &[MeasurementEvent] {
        &self.events
    }

    pub fn event_for(&self, memory: u32) -> Option<&MeasurementEvent> {
        self.events.iter().find(|e| e.memory.index() == memory)
    }

    /// Checks that every assigned memory exists and every outcome index is a
    /// basis vector of it.
    pub fn check_assignments(&self, assignments: &Assignments) -> Result<()> {
        for (&m, &a) in assignments {
            let event = self
                .event_for(m)
                .ok_or_else(|| Error::InvalidAssignment(format!("no memory M{m}")))?;
            if a >= event.memory.dim() {
                return Err(Error::IndexOutOfRange {
                    label: format!("M{m}"),
                    index: a,
                    dim: event.memory.dim(),
                });
            }
        }
        Ok(())
    }

    /// System and memory factors of a measured history, canonically ordered.
    pub fn factors(&self) -> Vec<SpaceLabel> {
        let mut f = vec![self.hamiltonian.system_label()];
        f.extend(self.events.iter().map(|e| e.memory.label()));
        f.sort_by_key(|l| l.space);
        f
    }
}

/// History on `T ⊗ Q ⊗ M_1 ⊗ ... ⊗ M_N` with the default unitary completion.
pub fn build_measured_history(
    schedule: &MeasurementSchedule,
    psi0: &StateVector,
    t0: f64,
    envelope: &Envelope,
    substeps: usize,
) -> Result<HistoryState> {
    build_measured_history_with(schedule, psi0, t0, envelope, substeps, Completion::Forward)
}

pub fn build_measured_history_with(
    schedule: &MeasurementSchedule,
    psi0: &StateVector,
    t0: f64,
    envelope: &Envelope,
    substeps: usize,
    completion: Completion,
) -> Result<HistoryState> {
    let grid = envelope.grid();
    let q = schedule.hamiltonian().system_label();
    if psi0.factors() != [q] {
        return Err(Error::ShapeMismatch("initial state must live on Q".into()));
    }
    let n = psi0.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n));
    }
    check_window(grid, t0)?;
    for e in schedule.events() {
        check_window(grid, e.time)?;
        if e.time < t0 {
            return Err(Error::InvalidSchedule(format!(
                "event at {} precedes the initial time {t0}",
                e.time
            )));
        }
    }

    let impulses = schedule
        .events()
        .iter()
        .map(|e| ImpulseEvent::new(e.time, dilate_instrument(&e.instrument, &e.memory, completion)?))
        .collect::<Result<Vec<_>>>()?;
    let mut initial = psi0.clone();
    for e in schedule.events() {
        initial = kron(&initial, &e.memory.ready_state())?;
    }

    let branches = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let state = evolve_schedule(
                schedule.hamiltonian(),
                &impulses,
                &initial,
                grid.time(k),
                t0,
                substeps,
            )?;
            Ok(state.into_amplitudes() * envelope.weight(k))
        })
        .collect::<Result<Vec<_>>>()?;

    let memories = schedule
        .events()
        .iter()
        .map(|e| MemoryRecord {
            index: e.memory.index(),
            event_time: e.time,
            dim: e.memory.dim(),
            ready: e.memory.ready().clone(),
        })
        .collect();
    Ok(HistoryState::from_branches(
        envelope,
        initial.factors().to_vec(),
        branches,
        memories,
    ))
}

fn check_window(grid: &ClockGrid, t: f64) -> Result<()> {
    if grid.contains(t) {
        Ok(())
    } else {
        Err(Error::TimeOutsideWindow {
            t,
            t_min: grid.t_min(),
            t_max: grid.t_max(),
        })
    }
}

fn check_history_assignments(history: &HistoryState, assignments: &Assignments) -> Result<()> {
    for (&m, &a) in assignments {
        let rec = history
            .memory(m)
            .ok_or_else(|| Error::InvalidAssignment(format!("no memory M{m}")))?;
        if a >= rec.dim {
            return Err(Error::IndexOutOfRange {
                label: format!("M{m}"),
                index: a,
                dim: rec.dim,
            });
        }
    }
    Ok(())
}

/// Probability that the assigned memories (any subset) read the given
/// outcomes at clock time `t`.
pub fn marginal_prob(history: &HistoryState, assignments: &Assignments, t: f64) -> Result<f64> {
    check_history_assignments(history, assignments)?;
    let k = history.conditioning_index(t)?;
    let mut v = history.branch(k);
    for (&m, &a) in assignments {
        v = partial_project(&v, Space::Memory(m), a)?;
    }
    Ok(v.norm_squared() / history.envelope().weight(k).norm_sqr())
}

/// Probability of a full outcome string at clock time `t`.
pub fn joint_prob(history: &HistoryState, assignments: &Assignments, t: f64) -> Result<f64> {
    if let Some(missing) = history
        .memories()
        .iter()
        .find(|m| !assignments.contains_key(&m.index))
    {
        return Err(Error::InvalidAssignment(format!(
            "joint probability needs an outcome for every memory; M{} is unassigned",
            missing.index
        )));
    }
    marginal_prob(history, assignments, t)
}

/// One memory reading at one clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub memory: u32,
    pub outcome: usize,
    pub time: f64,
}

/// `P[(b|t'') | (a|t')] = P(b, a|t'') / P(a|t')`.
pub fn conditional_prob(
    history: &HistoryState,
    later: Observation,
    earlier: Observation,
) -> Result<f64> {
    if later.time < earlier.time {
        return Err(Error::InvalidAssignment(
            "the conditioning observation must not be later than the conditioned one".into(),
        ));
    }
    if later.memory == earlier.memory {
        return Err(Error::InvalidAssignment(
            "conditional probability needs two different memories".into(),
        ));
    }
    let prior = marginal_prob(
        history,
        &Assignments::from([(earlier.memory, earlier.outcome)]),
        earlier.time,
    )?;
    let floor = history.tolerances().cond * history.tolerances().cond;
    if prior < floor {
        return Err(Error::NullProbabilityOutcome(prior));
    }
    let both = marginal_prob(
        history,
        &Assignments::from([
            (earlier.memory, earlier.outcome),
            (later.memory, later.outcome),
        ]),
        later.time,
    )?;
    Ok(both / prior)
}

/// Multi-time statistics of a full outcome string, read off at the latest
/// observation time.
pub fn multi_time_joint(history: &HistoryState, observations: &[Observation]) -> Result<f64> {
    if observations.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::InvalidAssignment("observation times must be increasing".into()));
    }
    let mut assignments = Assignments::new();
    for o in observations {
        let rec = history
            .memory(o.memory)
            .ok_or_else(|| Error::InvalidAssignment(format!("no memory M{}", o.memory)))?;
        if o.time < rec.event_time {
            return Err(Error::InvalidAssignment(format!(
                "M{} is read at {} before its event at {}",
                o.memory, o.time, rec.event_time
            )));
        }
        if assignments.insert(o.memory, o.outcome).is_some() {
            return Err(Error::DuplicateLabel(format!("M{}", o.memory)));
        }
    }
    let last = observations
        .last()
        .ok_or_else(|| Error::InvalidAssignment("no observations".into()))?;
    joint_prob(history, &assignments, last.time)
}

/// All full outcome strings of the history's memories, in lexicographic order
/// of memory index. Ready indices are included.
pub fn outcome_strings(history: &HistoryState) -> Vec<Assignments> {
    let mut out = vec![Assignments::new()];
    for m in history.memories() {
        out = out
            .into_iter()
            .flat_map(|base| {
                (0..m.dim).map(move |a| {
                    let mut next = base.clone();
                    next.insert(m.index, a);
                    next
                })
            })
            .collect();
    }
    out
}
