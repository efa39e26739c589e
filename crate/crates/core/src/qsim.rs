//! Dense statevector simulation for small registers.
//!
//! Qubit ordering is little-endian: qubit `q` is bit `q` of the basis index,
//! so `|q1 q0⟩ = |10⟩` lives at index 2. Gates act in place by pairing
//! amplitudes whose indices differ only in the target bit; no `2^n x 2^n`
//! matrices are built.

use num_complex::Complex64;
use thiserror::Error;

pub const MAX_QUBITS: usize = 14;

/// Projections with less probability than this count as degenerate.
pub const DEGENERATE_PROB: f64 = 1e-20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("invalid register configuration: {0}")]
    Config(String),
    #[error("qubit index error: {0}")]
    Index(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("trash reset projected onto a zero-probability subspace")]
    DegenerateReset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0⟩` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self, QsimError> {
        if !(1..=MAX_QUBITS).contains(&n) {
            return Err(QsimError::Config(format!(
                "{n} qubits requested; supported range is 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits: n, amps })
    }

    /// Wrap amplitudes, normalizing them. Fails on a zero vector or a length
    /// that is not a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, QsimError> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QsimError::Shape(format!(
                "{len} amplitudes is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(QsimError::Config(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        let mut state = StateVector { n_qubits, amps };
        let norm = state.norm_sqr().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QsimError::Shape("amplitudes have zero or non-finite norm".into()));
        }
        state.amps.iter_mut().for_each(|a| *a /= norm);
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<(), QsimError> {
        if q >= self.n_qubits {
            return Err(QsimError::Index(format!(
                "qubit {q} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    fn check_distinct(&self, qubits: &[usize]) -> Result<usize, QsimError> {
        let mut mask = 0usize;
        for &q in qubits {
            self.check_qubit(q)?;
            if mask & (1 << q) != 0 {
                return Err(QsimError::Index(format!("qubit {q} listed twice")));
            }
            mask |= 1 << q;
        }
        Ok(mask)
    }

    /// Apply a 2x2 matrix `[[m00, m01], [m10, m11]]` to qubit `q`.
    fn apply_single(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let stride = 1usize << q;
        for base in (0..self.amps.len()).step_by(stride << 1) {
            for i in base..base + stride {
                let a0 = self.amps[i];
                let a1 = self.amps[i + stride];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    /// `RY(θ) = [[cos θ/2, -sin θ/2], [sin θ/2, cos θ/2]]`.
    pub fn apply_ry(&mut self, q: usize, angle: f64) -> Result<(), QsimError> {
        self.check_qubit(q)?;
        let (s, c) = (angle / 2.0).sin_cos();
        let stride = 1usize << q;
        for base in (0..self.amps.len()).step_by(stride << 1) {
            for i in base..base + stride {
                let a0 = self.amps[i];
                let a1 = self.amps[i + stride];
                self.amps[i] = a0 * c - a1 * s;
                self.amps[i + stride] = a0 * s + a1 * c;
            }
        }
        Ok(())
    }

    /// `RZ(θ) = diag(e^{-iθ/2}, e^{iθ/2})`.
    pub fn apply_rz(&mut self, q: usize, angle: f64) -> Result<(), QsimError> {
        self.check_qubit(q)?;
        let phase0 = Complex64::from_polar(1.0, -angle / 2.0);
        let phase1 = phase0.conj();
        let bit = 1usize << q;
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & bit == 0 { phase0 } else { phase1 };
        }
        Ok(())
    }

    /// Controlled RZ: the RZ phases on `target` where `control` is 1.
    pub fn apply_crz(&mut self, control: usize, target: usize, angle: f64) -> Result<(), QsimError> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(QsimError::Index(format!("control and target are both qubit {control}")));
        }
        let phase0 = Complex64::from_polar(1.0, -angle / 2.0);
        let phase1 = phase0.conj();
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & cbit != 0 {
                *a *= if i & tbit == 0 { phase0 } else { phase1 };
            }
        }
        Ok(())
    }

    /// Generic single-qubit unitary, mostly for tests and tooling.
    pub fn apply_matrix(&mut self, q: usize, m: [[Complex64; 2]; 2]) -> Result<(), QsimError> {
        self.check_qubit(q)?;
        self.apply_single(q, m);
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64, QsimError> {
        if self.n_qubits != other.n_qubits {
            return Err(QsimError::Shape(format!(
                "inner product of {}-qubit and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64, QsimError> {
        Ok(self.inner(other)?.norm_sqr().min(1.0))
    }

    /// Exact `⟨Z_q⟩ = P(q = 0) - P(q = 1)` for each listed qubit.
    pub fn z_expectations(&self, qubits: &[usize]) -> Result<Vec<f64>, QsimError> {
        self.check_distinct(qubits)?;
        let mut out = vec![0.0; qubits.len()];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (slot, &q) in out.iter_mut().zip(qubits) {
                if i & (1 << q) == 0 {
                    *slot += p;
                } else {
                    *slot -= p;
                }
            }
        }
        Ok(out)
    }

    /// Probability that every listed qubit reads 0.
    pub fn zero_projection_prob(&self, qubits: &[usize]) -> Result<f64, QsimError> {
        let mask = self.check_distinct(qubits)?;
        let p: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        Ok(p.min(1.0))
    }

    /// Project the listed qubits onto `|0⟩` and renormalize. Returns the
    /// probability of the projected branch.
    pub fn project_zero(&mut self, qubits: &[usize]) -> Result<f64, QsimError> {
        let mask = self.check_distinct(qubits)?;
        let mut p = 0.0;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & mask == 0 {
                p += a.norm_sqr();
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        if p < DEGENERATE_PROB {
            return Err(QsimError::DegenerateReset);
        }
        let scale = 1.0 / p.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= scale);
        Ok(p)
    }
}
