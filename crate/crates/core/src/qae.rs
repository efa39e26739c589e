//! Quantum autoencoder over a simulated register.
//!
//! The circuit has three stages:
//!
//! * a data layer, `RY(x_q)` on every qubit, whose angles come from the
//!   pooled embedding through [`AngleEncoder`];
//! * the variational ansatz: per layer `RY(θ[l][q][0])`, `RZ(θ[l][q][1])` on
//!   every qubit, then a ring of `CRZ(π/2)` from `q` to `(q + 1) mod n`;
//! * measurement: `⟨Z⟩` on the latent qubits (`0..n_latent`) and the
//!   probability that the trash qubits (the last `n_trash`) read `|0…0⟩`.
//!
//! Reconstruction projects the trash qubits onto `|0⟩`, renormalizes, and
//! runs the ansatz backwards. The fidelity against the data-layer state is
//! then `|⟨ψ|P₀ψ⟩|² / ⟨ψ|P₀ψ⟩`, which equals the trash-zero probability for
//! pure states. Both quantities are reported separately anyway.
//!
//! Every loss the trainer feeds back is an affine function of expectation
//! values, so the two-term parameter-shift rule gives exact gradients for
//! both the ansatz angles and the data angles.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rand::Rng;

use crate::nn::{Dense, Graph, NnError, ParamSet, Tensor, Var};
use crate::qsim::{QsimError, StateVector};

/// Fixed rotation angle of every ring entangler.
pub const ENTANGLER_ANGLE: f64 = FRAC_PI_2;

/// Register layout of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QaeConfig {
    pub n_total: usize,
    pub n_latent: usize,
    pub n_trash: usize,
    pub n_layers: usize,
}

impl Default for QaeConfig {
    fn default() -> Self {
        QaeConfig {
            n_total: 8,
            n_latent: 5,
            n_trash: 3,
            n_layers: 5,
        }
    }
}

impl QaeConfig {
    pub fn validate(&self) -> Result<(), QsimError> {
        if self.n_latent + self.n_trash != self.n_total {
            return Err(QsimError::Config(format!(
                "latent qubits ({}) + trash qubits ({}) = {} but total qubits = {}; \
                 the reference values 8 total, 5 latent and 4 trash \
                 cannot all hold at once",
                self.n_latent,
                self.n_trash,
                self.n_latent + self.n_trash,
                self.n_total
            )));
        }
        if !(1..=crate::qsim::MAX_QUBITS).contains(&self.n_total) {
            return Err(QsimError::Config(format!(
                "total qubits {} outside 1..={}",
                self.n_total,
                crate::qsim::MAX_QUBITS
            )));
        }
        if self.n_latent == 0 {
            return Err(QsimError::Config("at least one latent qubit is required".into()));
        }
        if self.n_layers == 0 {
            return Err(QsimError::Config("at least one ansatz layer is required".into()));
        }
        Ok(())
    }

    pub fn latent_qubits(&self) -> Vec<usize> {
        (0..self.n_latent).collect()
    }

    pub fn trash_qubits(&self) -> Vec<usize> {
        (self.n_latent..self.n_total).collect()
    }

    /// Trainable ansatz angles.
    pub fn num_circuit_params(&self) -> usize {
        self.n_layers * self.n_total * 2
    }

    /// Rotation parameters including the data-layer angles.
    pub fn num_rotation_params(&self) -> usize {
        self.num_circuit_params() + self.n_total
    }
}

/// Ansatz angles laid out as `[layer][qubit][ry, rz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    pub n_layers: usize,
    pub n_qubits: usize,
    pub angles: Vec<f64>,
}

impl CircuitParams {
    pub fn zeros(cfg: &QaeConfig) -> Self {
        CircuitParams {
            n_layers: cfg.n_layers,
            n_qubits: cfg.n_total,
            angles: vec![0.0; cfg.num_circuit_params()],
        }
    }

    /// Uniform in `[-0.1, 0.1]`.
    pub fn random<R: Rng + ?Sized>(cfg: &QaeConfig, rng: &mut R) -> Self {
        CircuitParams {
            n_layers: cfg.n_layers,
            n_qubits: cfg.n_total,
            angles: (0..cfg.num_circuit_params())
                .map(|_| rng.gen_range(-0.1..=0.1))
                .collect(),
        }
    }

    pub fn from_slice(cfg: &QaeConfig, angles: &[f64]) -> Result<Self, QsimError> {
        if angles.len() != cfg.num_circuit_params() {
            return Err(QsimError::Shape(format!(
                "{} circuit angles for {} layers x {} qubits x 2",
                angles.len(),
                cfg.n_layers,
                cfg.n_total
            )));
        }
        Ok(CircuitParams {
            n_layers: cfg.n_layers,
            n_qubits: cfg.n_total,
            angles: angles.to_vec(),
        })
    }

    /// `(layers, qubits * 2)` tensor for storage in a [`ParamSet`].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.n_layers, self.n_qubits * 2, self.angles.clone()).expect("layout")
    }

    pub fn index(&self, layer: usize, qubit: usize, which: usize) -> usize {
        (layer * self.n_qubits + qubit) * 2 + which
    }

    pub fn get(&self, layer: usize, qubit: usize, which: usize) -> f64 {
        self.angles[self.index(layer, qubit, which)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Adjoint,
}

/// `RY(angles[q])` on every qubit, or its inverse.
pub fn data_layer(state: &mut StateVector, angles: &[f64], dir: Direction) -> Result<(), QsimError> {
    if angles.len() != state.n_qubits() {
        return Err(QsimError::Shape(format!(
            "{} data angles for {} qubits",
            angles.len(),
            state.n_qubits()
        )));
    }
    let sign = match dir {
        Direction::Forward => 1.0,
        Direction::Adjoint => -1.0,
    };
    for (q, &a) in angles.iter().enumerate() {
        state.apply_ry(q, sign * a)?;
    }
    Ok(())
}

fn ring(n: usize) -> impl DoubleEndedIterator<Item = (usize, usize)> {
    let pairs = if n > 1 { n } else { 0 };
    (0..pairs).map(move |q| (q, (q + 1) % n))
}

/// Apply the layered ansatz or its exact inverse.
pub fn ansatz(state: &mut StateVector, theta: &CircuitParams, dir: Direction) -> Result<(), QsimError> {
    if theta.n_qubits != state.n_qubits() || theta.angles.len() != theta.n_layers * theta.n_qubits * 2 {
        return Err(QsimError::Shape(format!(
            "ansatz for {} qubits applied to a {}-qubit state",
            theta.n_qubits,
            state.n_qubits()
        )));
    }
    let n = theta.n_qubits;
    match dir {
        Direction::Forward => {
            for l in 0..theta.n_layers {
                for q in 0..n {
                    state.apply_ry(q, theta.get(l, q, 0))?;
                    state.apply_rz(q, theta.get(l, q, 1))?;
                }
                for (c, t) in ring(n) {
                    state.apply_crz(c, t, ENTANGLER_ANGLE)?;
                }
            }
        }
        Direction::Adjoint => {
            for l in (0..theta.n_layers).rev() {
                for (c, t) in ring(n).rev() {
                    state.apply_crz(c, t, -ENTANGLER_ANGLE)?;
                }
                for q in (0..n).rev() {
                    state.apply_rz(q, -theta.get(l, q, 1))?;
                    state.apply_ry(q, -theta.get(l, q, 0))?;
                }
            }
        }
    }
    Ok(())
}

/// Everything one autoencoder pass produces.
#[derive(Debug, Clone)]
pub struct QaeForward {
    /// Data-layer state before the ansatz.
    pub data_state: StateVector,
    /// Encoded state after the ansatz.
    pub psi_in: StateVector,
    /// Reconstruction in the data frame; `None` when the trash projection
    /// had zero probability.
    pub psi_out: Option<StateVector>,
    pub fidelity: f64,
    pub trash_zero_prob: f64,
    /// `⟨Z⟩` of each latent qubit of the encoded state.
    pub latent: Vec<f64>,
}

impl QaeForward {
    pub fn degenerate_reset(&self) -> bool {
        self.psi_out.is_none()
    }
}

/// Encode, measure and reconstruct one input.
pub fn qae_forward(
    angles: &[f64],
    theta: &CircuitParams,
    cfg: &QaeConfig,
) -> Result<QaeForward, QsimError> {
    cfg.validate()?;
    let mut data_state = StateVector::zero(cfg.n_total)?;
    data_layer(&mut data_state, angles, Direction::Forward)?;
    let mut psi_in = data_state.clone();
    ansatz(&mut psi_in, theta, Direction::Forward)?;

    let trash = cfg.trash_qubits();
    let trash_zero_prob = psi_in.zero_projection_prob(&trash)?;
    let latent = psi_in.z_expectations(&cfg.latent_qubits())?;

    let mut decoded = psi_in.clone();
    let (psi_out, fidelity) = match decoded.project_zero(&trash) {
        Ok(_) => {
            ansatz(&mut decoded, theta, Direction::Adjoint)?;
            let f = data_state.fidelity(&decoded)?;
            (Some(decoded), f)
        }
        Err(QsimError::DegenerateReset) => (None, 0.0),
        Err(e) => return Err(e),
    };
    Ok(QaeForward {
        data_state,
        psi_in,
        psi_out,
        fidelity,
        trash_zero_prob,
        latent,
    })
}

pub fn fidelity_loss(f: &QaeForward) -> f64 {
    1.0 - f.fidelity
}

pub fn trash_loss(f: &QaeForward) -> f64 {
    1.0 - f.trash_zero_prob
}

/// Scalar objective over one forward pass:
/// `w_f (1 - F) + w_t (1 - p₀) + Σ wᵢ ⟨Zᵢ⟩`.
///
/// The latent weights carry the upstream gradient of the classical decoder
/// with respect to the measured latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumObjective {
    pub fidelity_weight: f64,
    pub trash_weight: f64,
    pub latent_weights: Vec<f64>,
}

impl QuantumObjective {
    pub fn value(&self, f: &QaeForward) -> f64 {
        self.fidelity_weight * fidelity_loss(f)
            + self.trash_weight * trash_loss(f)
            + self
                .latent_weights
                .iter()
                .zip(&f.latent)
                .map(|(w, z)| w * z)
                .sum::<f64>()
    }
}

/// Gradient of a [`QuantumObjective`] with respect to every rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct QaeGradient {
    pub theta: Vec<f64>,
    pub angles: Vec<f64>,
}

/// Parameter-shift gradient: `(L(θₖ + π/2) - L(θₖ - π/2)) / 2` for every
/// ansatz angle and every data-layer angle.
pub fn param_shift_grad(
    angles: &[f64],
    theta: &CircuitParams,
    cfg: &QaeConfig,
    objective: &QuantumObjective,
) -> Result<QaeGradient, QsimError> {
    if objective.latent_weights.len() != cfg.n_latent && !objective.latent_weights.is_empty() {
        return Err(QsimError::Shape(format!(
            "{} latent weights for {} latent qubits",
            objective.latent_weights.len(),
            cfg.n_latent
        )));
    }
    let eval = |a: &[f64], t: &CircuitParams| -> Result<f64, QsimError> {
        Ok(objective.value(&qae_forward(a, t, cfg)?))
    };

    let mut shifted = theta.clone();
    let mut d_theta = Vec::with_capacity(theta.angles.len());
    for k in 0..theta.angles.len() {
        let orig = shifted.angles[k];
        shifted.angles[k] = orig + FRAC_PI_2;
        let up = eval(angles, &shifted)?;
        shifted.angles[k] = orig - FRAC_PI_2;
        let down = eval(angles, &shifted)?;
        shifted.angles[k] = orig;
        d_theta.push((up - down) / 2.0);
    }

    let mut a = angles.to_vec();
    let mut d_angles = Vec::with_capacity(angles.len());
    for k in 0..angles.len() {
        let orig = a[k];
        a[k] = orig + FRAC_PI_2;
        let up = eval(&a, theta)?;
        a[k] = orig - FRAC_PI_2;
        let down = eval(&a, theta)?;
        a[k] = orig;
        d_angles.push((up - down) / 2.0);
    }
    Ok(QaeGradient {
        theta: d_theta,
        angles: d_angles,
    })
}

/// Trainable map from the pooled embedding to data-layer angles:
/// `π · tanh(z W + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngleEncoder {
    pub dense: Dense,
}

impl AngleEncoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, d_model: usize, n_qubits: usize, rng: &mut R) -> Self {
        AngleEncoder {
            dense: Dense::new(
                params,
                "encoder.projection",
                d_model,
                n_qubits,
                1.0 / (d_model as f64).sqrt(),
                rng,
            ),
        }
    }

    pub fn encode_angles(&self, g: &mut Graph, params: &ParamSet, z: Var) -> Result<Var, NnError> {
        let pre = self.dense.forward(g, params, z)?;
        let t = g.tanh(pre);
        Ok(g.scale(t, PI))
    }
}

/// One line of the circuit listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateSpec {
    /// `None` for the data layer.
    pub layer: Option<usize>,
    pub gate: &'static str,
    pub qubits: Vec<usize>,
    pub parameter: ParamRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Data(usize),
    Theta(usize),
    Fixed,
}

impl fmt::Display for GateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layer = match self.layer {
            None => "data".to_string(),
            Some(l) => format!("L{}", l + 1),
        };
        let qubits = self
            .qubits
            .iter()
            .map(|q| format!("q{q}"))
            .collect::<Vec<_>>()
            .join("->");
        let param = match self.parameter {
            ParamRef::Data(i) => format!("x[{i}]"),
            ParamRef::Theta(i) => format!("theta[{i}]"),
            ParamRef::Fixed => "fixed pi/2".to_string(),
        };
        write!(f, "{layer:<5} {:<4} {qubits:<9} {param}", self.gate)
    }
}

/// Every gate of the forward circuit in application order.
pub fn gate_listing(cfg: &QaeConfig) -> Result<Vec<GateSpec>, QsimError> {
    cfg.validate()?;
    let theta = CircuitParams::zeros(cfg);
    let mut out = Vec::new();
    for q in 0..cfg.n_total {
        out.push(GateSpec {
            layer: None,
            gate: "RY",
            qubits: vec![q],
            parameter: ParamRef::Data(q),
        });
    }
    for l in 0..cfg.n_layers {
        for q in 0..cfg.n_total {
            out.push(GateSpec {
                layer: Some(l),
                gate: "RY",
                qubits: vec![q],
                parameter: ParamRef::Theta(theta.index(l, q, 0)),
            });
            out.push(GateSpec {
                layer: Some(l),
                gate: "RZ",
                qubits: vec![q],
                parameter: ParamRef::Theta(theta.index(l, q, 1)),
            });
        }
        for (c, t) in ring(cfg.n_total) {
            out.push(GateSpec {
                layer: Some(l),
                gate: "CRZ",
                qubits: vec![c, t],
                parameter: ParamRef::Fixed,
            });
        }
    }
    Ok(out)
}
