//! Scenario files: a JSON description of a grid, a system, a measurement
//! schedule and a list of queries, validated into library objects before
//! anything is computed.

pub mod pauli;
mod run;

pub use run::{
    run_scenario, spectrum_report, sweep_residual, verify_report, Artifact, IdentityReport,
    RunOptions, RunOutput, SpectrumReport, VerifyReport,
};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clock::{ClockGrid, Envelope};
use crate::error::{Error, Result};
use crate::measurement::{
    instrument_from_projectors, KrausInstrument, MeasurementEvent, MeasurementSchedule, MemorySpec,
};
use crate::oracle::{DrivenTerm, HamiltonianSpec, Waveform, DEFAULT_SUBSTEPS};
use crate::tensor::{Operator, Space, SpaceLabel, StateVector, C64};
use pauli::PauliExpression;

pub const SCHEMA_VERSION: u32 = 1;

/// A complex number written as `[re, im]`.
pub type ComplexPair = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub grid: GridSpec,
    #[serde(default)]
    pub envelope: EnvelopeSpec,
    pub system: SystemSpec,
    pub initial_state: StateSpec,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub schedule: Vec<EventSpec>,
    #[serde(default)]
    pub queries: Vec<QuerySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSpec {
    #[default]
    Flat,
    Gaussian {
        n: f64,
        #[serde(default)]
        center: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub qubits: Option<usize>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub hamiltonian: Option<OperatorSpec>,
    #[serde(default)]
    pub drive: Vec<DriveSpec>,
}

/// A Pauli expression (qubit systems only) or a dense matrix of `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Pauli(String),
    Matrix(Vec<Vec<ComplexPair>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub operator: OperatorSpec,
    pub waveform: WaveformSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSpec {
    Const {
        value: f64,
    },
    Piecewise {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    Sin {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

/// A basis label (bit string for qubits, decimal index otherwise) or explicit
/// amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Label(String),
    Amplitudes(Vec<ComplexPair>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    pub instrument: InstrumentSpec,
    pub memory: String,
    #[serde(default)]
    pub ready: Option<Vec<ComplexPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstrumentSpec {
    /// `"X"`, `"Y"` (one qubit), `"Z"` or `"computational"` (any system).
    Named(String),
    Explicit(ExplicitInstrument),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExplicitInstrument {
    /// Orthonormal basis vectors; the instrument projects onto each.
    Basis(Vec<Vec<ComplexPair>>),
    Kraus(Vec<Vec<Vec<ComplexPair>>>),
}

/// An outcome reading, `{"memory": "M1", "outcome": 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingSpec {
    pub memory: String,
    pub outcome: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedReadingSpec {
    pub memory: String,
    pub outcome: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    /// Each entry of `columns` is a set of readings; every grid time gets a
    /// row. Without `columns`, one column per outcome of every memory.
    ProbVsTime {
        #[serde(default)]
        columns: Option<Vec<Vec<ReadingSpec>>>,
    },
    /// All full outcome strings at the given times.
    Joint { times: Vec<f64> },
    Conditional {
        later: TimedReadingSpec,
        earlier: TimedReadingSpec,
    },
    Propagator {
        initial: StateSpec,
        t_initial: f64,
        #[serde(rename = "final")]
        final_state: StateSpec,
        times: Vec<f64>,
    },
    ResidualSweep {
        #[serde(default = "default_widths")]
        widths: Vec<f64>,
    },
}

fn default_widths() -> Vec<f64> {
    vec![1.0, 4.0, 16.0]
}

impl QuerySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            QuerySpec::ProbVsTime { .. } => "prob_vs_time",
            QuerySpec::Joint { .. } => "joint",
            QuerySpec::Conditional { .. } => "conditional",
            QuerySpec::Propagator { .. } => "propagator",
            QuerySpec::ResidualSweep { .. } => "residual_sweep",
        }
    }
}

/// A scenario after validation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub grid: ClockGrid,
    pub envelope: Envelope,
    pub schedule: MeasurementSchedule,
    pub psi0: StateVector,
    pub t0: f64,
    pub substeps: usize,
    qubits: Option<usize>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidScenario(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario> {
        if file.version != SCHEMA_VERSION {
            return Err(Error::InvalidScenario(format!(
                "unsupported version {} (expected {SCHEMA_VERSION})",
                file.version
            )));
        }
        let grid = ClockGrid::new(file.grid.n, file.grid.t_min, file.grid.t_max)?;
        let envelope = match file.envelope {
            EnvelopeSpec::Flat => Envelope::flat(&grid),
            EnvelopeSpec::Gaussian { n, center } => {
                Envelope::gaussian_at(&grid, n, center.unwrap_or(0.0))?
            }
        };

        let (q, qubits) = system_label(&file.system)?;
        let hamiltonian = build_hamiltonian(&file.system, q, qubits)?;
        let psi0 = build_state(&file.initial_state, q, qubits)?;
        if !file.t0.is_finite() || !grid.contains(file.t0) {
            return Err(Error::TimeOutsideWindow {
                t: file.t0,
                t_min: grid.t_min(),
                t_max: grid.t_max(),
            });
        }

        let events = file
            .schedule
            .iter()
            .map(|e| build_event(e, q, qubits, &grid, file.t0))
            .collect::<Result<Vec<_>>>()?;
        let schedule = MeasurementSchedule::new(hamiltonian, events)?;
        let substeps = file.substeps.unwrap_or(DEFAULT_SUBSTEPS);
        if substeps == 0 {
            return Err(Error::InvalidScenario("substeps must be positive".into()));
        }

        let scenario = Scenario {
            grid,
            envelope,
            schedule,
            psi0,
            t0: file.t0,
            substeps,
            qubits,
            file,
        };
        for q in &scenario.file.queries {
            scenario.validate_query(q)?;
        }
        Ok(scenario)
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        self.schedule.hamiltonian()
    }

    pub fn system_label(&self) -> SpaceLabel {
        self.hamiltonian().system_label()
    }

    pub(crate) fn memory_index(&self, name: &str) -> Result<u32> {
        match name.parse::<Space>() {
            Ok(Space::Memory(i)) if self.schedule.event_for(i).is_some() => Ok(i),
            _ => Err(Error::InvalidScenario(format!("unknown memory '{name}'"))),
        }
    }

    fn check_reading(&self, memory: &str, outcome: usize) -> Result<u32> {
        let m = self.memory_index(memory)?;
        let dim = self.schedule.event_for(m).expect("checked above").memory.dim();
        if outcome >= dim {
            return Err(Error::IndexOutOfRange {
                label: memory.into(),
                index: outcome,
                dim,
            });
        }
        Ok(m)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && self.grid.contains(t) {
            Ok(())
        } else {
            Err(Error::TimeOutsideWindow {
                t,
                t_min: self.grid.t_min(),
                t_max: self.grid.t_max(),
            })
        }
    }

    pub(crate) fn state(&self, spec: &StateSpec) -> Result<StateVector> {
        build_state(spec, self.system_label(), self.qubits)
    }

    fn validate_query(&self, q: &QuerySpec) -> Result<()> {
        match q {
            QuerySpec::ProbVsTime { columns } => {
                for col in columns.iter().flatten() {
                    if col.is_empty() {
                        return Err(Error::InvalidScenario("empty probability column".into()));
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for r in col {
                        let m = self.check_reading(&r.memory, r.outcome)?;
                        if !seen.insert(m) {
                            return Err(Error::DuplicateLabel(r.memory.clone()));
                        }
                    }
                }
                if columns.is_none() && self.schedule.events().is_empty() {
                    return Err(Error::InvalidScenario(
                        "prob_vs_time needs columns or at least one event".into(),
                    ));
                }
                Ok(())
            }
            QuerySpec::Joint { times } => {
                if self.schedule.events().is_empty() {
                    return Err(Error::InvalidScenario("joint query needs events".into()));
                }
                if times.is_empty() {
                    return Err(Error::InvalidScenario("joint query needs times".into()));
                }
                times.iter().try_for_each(|&t| self.check_time(t))
            }
            QuerySpec::Conditional { later, earlier } => {
                let a = self.check_reading(&earlier.memory, earlier.outcome)?;
                let b = self.check_reading(&later.memory, later.outcome)?;
                if a == b {
                    return Err(Error::InvalidScenario(
                        "conditional query needs two different memories".into(),
                    ));
                }
                self.check_time(earlier.t)?;
                self.check_time(later.t)?;
                if later.t < earlier.t {
                    return Err(Error::InvalidScenario(
                        "conditional query: later reading precedes the earlier one".into(),
                    ));
                }
                Ok(())
            }
            QuerySpec::Propagator {
                initial,
                t_initial,
                final_state,
                times,
            } => {
                self.state(initial)?;
                self.state(final_state)?;
                self.check_time(*t_initial)?;
                if times.is_empty() {
                    return Err(Error::InvalidScenario("propagator query needs times".into()));
                }
                times.iter().try_for_each(|&t| self.check_time(t))
            }
            QuerySpec::ResidualSweep { widths } => {
                if widths.is_empty() || widths.iter().any(|&n| !(n.is_finite() && n > 0.0)) {
                    return Err(Error::InvalidScenario(
                        "residual sweep widths must be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn system_label(system: &SystemSpec) -> Result<(SpaceLabel, Option<usize>)> {
    match (system.qubits, system.dim) {
        (Some(n), None) if (1..=10).contains(&n) => Ok((SpaceLabel::system(1 << n)?, Some(n))),
        (Some(n), None) => Err(Error::InvalidScenario(format!("unsupported qubit count {n}"))),
        (None, Some(d)) => Ok((SpaceLabel::system(d)?, None)),
        _ => Err(Error::InvalidScenario(
            "system needs exactly one of 'qubits' or 'dim'".into(),
        )),
    }
}

fn complex_matrix(rows: &[Vec<ComplexPair>], dim: usize) -> Result<DMatrix<C64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch(format!("expected a {dim}x{dim} matrix")));
    }
    if rows.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidScenario("non-finite matrix entry".into()));
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        C64::new(rows[r][c][0], rows[r][c][1])
    }))
}

fn complex_vector(amps: &[ComplexPair]) -> DVector<C64> {
    DVector::from_iterator(amps.len(), amps.iter().map(|z| C64::new(z[0], z[1])))
}

fn operator(spec: &OperatorSpec, q: SpaceLabel, qubits: Option<usize>) -> Result<Operator> {
    let m = match spec {
        OperatorSpec::Pauli(text) => {
            let n = qubits.ok_or_else(|| {
                Error::InvalidScenario("Pauli expressions need a qubit system".into())
            })?;
            PauliExpression::parse(text)?.matrix(n)?
        }
        OperatorSpec::Matrix(rows) => complex_matrix(rows, q.dim)?,
    };
    Operator::new(vec![q], m)
}

fn build_hamiltonian(
    system: &SystemSpec,
    q: SpaceLabel,
    qubits: Option<usize>,
) -> Result<HamiltonianSpec> {
    let base = system
        .hamiltonian
        .as_ref()
        .map(|h| operator(h, q, qubits))
        .transpose()?;
    if system.drive.is_empty() {
        return match base {
            Some(h) => HamiltonianSpec::constant(h),
            None => HamiltonianSpec::zero(q.dim),
        };
    }
    let mut terms = Vec::new();
    if let Some(h) = base {
        terms.push(DrivenTerm {
            operator: h,
            waveform: Waveform::Const(1.0),
        });
    }
    for d in &system.drive {
        let waveform = match &d.waveform {
            WaveformSpec::Const { value } => Waveform::Const(*value),
            WaveformSpec::Piecewise { times, values } => Waveform::Piecewise {
                times: times.clone(),
                values: values.clone(),
            },
            WaveformSpec::Sin {
                amplitude,
                frequency,
                phase,
            } => Waveform::Sin {
                amplitude: *amplitude,
                frequency: *frequency,
                phase: *phase,
            },
        };
        terms.push(DrivenTerm {
            operator: operator(&d.operator, q, qubits)?,
            waveform,
        });
    }
    HamiltonianSpec::time_dependent(terms)
}

fn build_state(spec: &StateSpec, q: SpaceLabel, qubits: Option<usize>) -> Result<StateVector> {
    let state = match spec {
        StateSpec::Label(label) => {
            let label = label.trim();
            let index = match qubits {
                Some(n) if label.len() == n && label.chars().all(|c| c == '0' || c == '1') => {
                    usize::from_str_radix(label, 2).expect("binary digits")
                }
                Some(n) => {
                    return Err(Error::InvalidScenario(format!(
                        "basis label '{label}' is not a {n}-bit string"
                    )))
                }
                None => label
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidScenario(format!("bad basis label '{label}'")))?,
            };
            StateVector::basis(vec![q], index)?
        }
        StateSpec::Amplitudes(amps) => {
            if amps.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidScenario("non-finite amplitude".into()));
            }
            StateVector::new(vec![q], complex_vector(amps))?
        }
    };
    let n = state.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n));
    }
    Ok(state)
}

fn named_instrument(name: &str, q: SpaceLabel, qubits: Option<usize>) -> Result<KrausInstrument> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one_qubit = |amps: [[C64; 2]; 2]| -> Result<KrausInstrument> {
        if qubits != Some(1) {
            return Err(Error::InvalidScenario(format!(
                "instrument '{name}' is defined for a single qubit"
            )));
        }
        let basis = amps
            .iter()
            .map(|a| StateVector::from_slice(vec![q], a))
            .collect::<Result<Vec<_>>>()?;
        instrument_from_projectors(&basis)
    };
    match name {
        "computational" | "Z" => {
            let basis = (0..q.dim)
                .map(|i| StateVector::basis(vec![q], i))
                .collect::<Result<Vec<_>>>()?;
            instrument_from_projectors(&basis)
        }
        "X" => one_qubit([
            [C64::from(s), C64::from(s)],
            [C64::from(s), C64::from(-s)],
        ]),
        "Y" => one_qubit([
            [C64::from(s), C64::new(0.0, s)],
            [C64::from(s), C64::new(0.0, -s)],
        ]),
        _ => Err(Error::InvalidScenario(format!("unknown instrument '{name}'"))),
    }
}

fn build_event(
    spec: &EventSpec,
    q: SpaceLabel,
    qubits: Option<usize>,
    grid: &ClockGrid,
    t0: f64,
) -> Result<MeasurementEvent> {
    if !spec.time.is_finite() || !grid.contains(spec.time) {
        return Err(Error::TimeOutsideWindow {
            t: spec.time,
            t_min: grid.t_min(),
            t_max: grid.t_max(),
        });
    }
    if spec.time < t0 {
        return Err(Error::InvalidSchedule(format!(
            "event at {} precedes t0 = {t0}",
            spec.time
        )));
    }
    let instrument = match &spec.instrument {
        InstrumentSpec::Named(name) => named_instrument(name, q, qubits)?,
        InstrumentSpec::Explicit(ExplicitInstrument::Basis(vectors)) => {
            let basis = vectors
                .iter()
                .map(|v| StateVector::new(vec![q], complex_vector(v)))
                .collect::<Result<Vec<_>>>()?;
            instrument_from_projectors(&basis)?
        }
        InstrumentSpec::Explicit(ExplicitInstrument::Kraus(ops)) => KrausInstrument::new(
            ops.iter()
                .map(|m| Operator::new(vec![q], complex_matrix(m, q.dim)?))
                .collect::<Result<Vec<_>>>()?,
        )?,
    };
    let index = match spec.memory.parse::<Space>() {
        Ok(Space::Memory(i)) => i,
        _ => {
            return Err(Error::InvalidLabel(format!(
                "'{}' is not a memory label",
                spec.memory
            )))
        }
    };
    let memory = match &spec.ready {
        None => MemorySpec::new(index, instrument.outcomes())?,
        Some(r) => MemorySpec::with_ready(index, instrument.outcomes(), complex_vector(r))?,
    };
    MeasurementEvent::new(spec.time, instrument, memory)
}
