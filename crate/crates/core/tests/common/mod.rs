//! Test-side oracles and random generators, written without the library's
//! propagation code so they can check it.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtime::measurement::{
    instrument_from_projectors, Assignments, KrausInstrument, MeasurementEvent,
    MeasurementSchedule, MemorySpec,
};
use qtime::oracle::HamiltonianSpec;
use qtime::tensor::{Operator, SpaceLabel, StateVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_c(rng: &mut ChaCha8Rng) -> C64 {
    // Box-Muller
    let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * th.cos(), r * th.sin()) / 2f64.sqrt()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian_c(rng))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<C64> {
    let a = random_matrix(rng, d, d);
    (&a + a.adjoint()) * C64::from(0.5 * scale)
}

pub fn random_state(rng: &mut ChaCha8Rng, d: usize) -> DVector<C64> {
    let v = DVector::from_fn(d, |_, _| gaussian_c(rng));
    let n = v.norm();
    v / C64::from(n)
}

/// Columns orthonormalized by Gram-Schmidt.
pub fn orthonormalize(m: &DMatrix<C64>) -> DMatrix<C64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mut v = out.column(j).into_owned();
        for i in 0..j {
            let u = out.column(i).into_owned();
            let c = u.dotc(&v);
            v -= u * c;
        }
        let n = v.norm();
        out.set_column(j, &(v / C64::from(n)));
    }
    out
}

pub fn random_unitary(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    orthonormalize(&random_matrix(rng, d, d))
}

/// `exp(-i H t)` by scaling and squaring of a Taylor series.
pub fn expm_taylor(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let d = h.nrows();
    let a = h * C64::new(0.0, -t);
    let norm: f64 = a.iter().map(|z| z.norm()).sum::<f64>().max(1e-300);
    let squarings = (norm.log2().ceil().max(0.0) as u32) + 4;
    let a = a / C64::from(2f64.powi(squarings as i32));
    let mut term = DMatrix::<C64>::identity(d, d);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &a / C64::from(k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn q(d: usize) -> SpaceLabel {
    SpaceLabel::system(d).unwrap()
}

pub fn state(d: usize, v: &DVector<C64>) -> StateVector {
    StateVector::new(vec![q(d)], v.clone()).unwrap()
}

pub fn op(d: usize, m: DMatrix<C64>) -> Operator {
    Operator::new(vec![q(d)], m).unwrap()
}

/// A random instrument on `Q[d]`: projective onto the columns of a random
/// unitary, or a general Kraus set cut from a random isometry.
pub fn random_instrument(rng: &mut ChaCha8Rng, d: usize, projective: bool) -> EventInstrument {
    if projective {
        let u = random_unitary(rng, d);
        let kraus = (0..d)
            .map(|a| {
                let c = u.column(a).into_owned();
                &c * c.adjoint()
            })
            .collect();
        EventInstrument { kraus, basis: Some(u) }
    } else {
        let m = rng.random_range(2..=3);
        let v = orthonormalize(&random_matrix(rng, m * d, d));
        let kraus = (0..m).map(|a| v.rows(a * d, d).into_owned()).collect();
        EventInstrument { kraus, basis: None }
    }
}

pub struct EventInstrument {
    pub kraus: Vec<DMatrix<C64>>,
    /// Measurement basis (as columns) when the instrument is projective.
    pub basis: Option<DMatrix<C64>>,
}

pub struct RandomSchedule {
    pub dim: usize,
    pub h: DMatrix<C64>,
    pub psi0: DVector<C64>,
    pub t0: f64,
    /// `(time, memory index, Kraus set)`.
    pub events: Vec<(f64, u32, EventInstrument)>,
}

impl RandomSchedule {
    /// Event times are placed between grid points of `grid_times` so that
    /// every event is resolved by the grid.
    pub fn generate(rng: &mut ChaCha8Rng, grid_times: &[f64], max_events: usize) -> Self {
        let dim = rng.random_range(2..=3);
        let h = random_hermitian(rng, dim, 1.5);
        let psi0 = random_state(rng, dim);
        let n_events = rng.random_range(1..=max_events);
        let n = grid_times.len();
        let mut slots: Vec<usize> = Vec::new();
        while slots.len() < n_events {
            let k = rng.random_range(n / 8..7 * n / 8);
            if slots.iter().all(|&s| s.abs_diff(k) > 2) {
                slots.push(k);
            }
        }
        slots.sort();
        let mut memories: Vec<u32> = (1..=n_events as u32).collect();
        // shuffle labels so memory order differs from time order
        for i in (1..memories.len()).rev() {
            let j = rng.random_range(0..=i);
            memories.swap(i, j);
        }
        let events = slots
            .iter()
            .zip(memories)
            .map(|(&k, m)| {
                let frac: f64 = rng.random_range(0.1..0.9);
                let t = grid_times[k] + frac * (grid_times[k + 1] - grid_times[k]);
                let projective = rng.random_bool(0.5);
                (t, m, random_instrument(rng, dim, projective))
            })
            .collect();
        Self {
            dim,
            h,
            psi0,
            t0: grid_times[n / 16],
            events,
        }
    }

    pub fn schedule(&self) -> MeasurementSchedule {
        let spec = HamiltonianSpec::constant(op(self.dim, self.h.clone())).unwrap();
        let events = self
            .events
            .iter()
            .map(|(t, m, ei)| {
                let instr = match &ei.basis {
                    Some(u) => instrument_from_projectors(
                        &(0..self.dim)
                            .map(|a| state(self.dim, &u.column(a).into_owned()))
                            .collect::<Vec<_>>(),
                    )
                    .unwrap(),
                    None => KrausInstrument::new(
                        ei.kraus.iter().map(|k| op(self.dim, k.clone())).collect(),
                    )
                    .unwrap(),
                };
                let mem = MemorySpec::new(*m, ei.kraus.len()).unwrap();
                MeasurementEvent::new(*t, instr, mem).unwrap()
            })
            .collect();
        MeasurementSchedule::new(spec, events).unwrap()
    }

    pub fn psi0_state(&self) -> StateVector {
        state(self.dim, &self.psi0)
    }

    pub fn memory_dims(&self) -> Vec<(u32, usize)> {
        let mut v: Vec<(u32, usize)> = self.events.iter().map(|(_, m, ei)| (*m, ei.kraus.len() + 1)).collect();
        v.sort();
        v
    }

    /// Kraus-chain probability with ready-state statistics for events after
    /// `t`; matrix exponentials by Taylor series.
    pub fn chain_prob(&self, assignments: &Assignments, t: f64) -> f64 {
        self.chain(self.psi0.clone(), self.t0, 0, assignments, t)
    }

    fn chain(&self, psi: DVector<C64>, now: f64, idx: usize, asg: &Assignments, t: f64) -> f64 {
        if idx == self.events.len() || self.events[idx].0 > t {
            let mut p = psi.norm_squared();
            for (_, m, ei) in &self.events[idx..] {
                if let Some(&a) = asg.get(m) {
                    // default ready state is the last basis vector
                    if a != ei.kraus.len() {
                        p = 0.0;
                    }
                }
            }
            return p;
        }
        let (te, m, ei) = &self.events[idx];
        let ks = &ei.kraus;
        let psi = expm_taylor(&self.h, te - now) * psi;
        match asg.get(m) {
            Some(&a) if a >= ks.len() => 0.0,
            Some(&a) => self.chain(&ks[a] * &psi, *te, idx + 1, asg, t),
            None => ks
                .iter()
                .map(|k| self.chain(k * &psi, *te, idx + 1, asg, t))
                .sum(),
        }
    }

    /// Every assignment of outcomes (ready index included) to `memories`.
    pub fn strings(&self, memories: &[(u32, usize)]) -> Vec<Assignments> {
        let mut out = vec![Assignments::new()];
        for &(m, dim) in memories {
            out = out
                .into_iter()
                .flat_map(|base| {
                    (0..dim).map(move |a| {
                        let mut next = base.clone();
                        next.insert(m, a);
                        next
                    })
                })
                .collect();
        }
        out
    }
}
