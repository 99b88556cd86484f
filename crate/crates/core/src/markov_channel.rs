//! Distance-parameterized Markov transition structure of a flow-driven
//! microfluidic channel.
//!
//! The transient state space holds `N - 1` free propagation states followed by
//! one bound state at the receiver. A single absorbing state collects molecules
//! washed out past the outlet; it is represented only through the flow-out
//! vector `psi`.
//!
//! State indices in this module are zero-based: free state `s_j` of the
//! one-based description lives at index `j - 1`, and the bound state `s_N` at
//! index `N - 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used by every stochasticity check.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Relative tolerance when deciding whether a distance sits on the spatial grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid physical parameter `{name}`: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("number of transient states must be at least 3, got {0}")]
    TooFewStates(usize),
    #[error("elementary probability `{name}` = {value} lies outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("outgoing probability mass {mass} exceeds one (2*p_diff + p_flow + p_bind)")]
    ExcessOutgoingMass { mass: f64 },
    #[error("distance {distance} m is not aligned with the spatial step {step} m")]
    OffGrid { distance: f64, step: f64 },
    #[error("receiver index {index} outside the free-state range [1, {max}]")]
    ReceiverOutOfRange { index: i64, max: usize },
}

/// Physical constants of the channel, in SI units (receptor concentration in molar).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Diffusion coefficient `D` (m²/s).
    pub diffusion_coeff: f64,
    /// Mean flow velocity `v` (m/s).
    pub flow_velocity: f64,
    /// Association rate `k_on` (1/(M·s)).
    pub binding_rate: f64,
    /// Dissociation rate `k_off` (1/s).
    pub unbinding_rate: f64,
    /// Receptor concentration `c_p` (M).
    pub receptor_conc: f64,
    /// Spatial step `Δx` (m).
    pub spatial_step: f64,
    /// Markov time step `Δt` (s).
    pub time_step: f64,
    /// Number of transient states, bound state included.
    pub num_states: usize,
}

impl PhysicalParams {
    /// Reference microfluidic channel: 300 µm of free propagation states at
    /// 1 µm resolution, 0.8 ms steps.
    pub fn reference() -> Self {
        Self {
            diffusion_coeff: 5e-11,
            flow_velocity: 10e-6,
            binding_rate: 6e8,
            unbinding_rate: 3.0,
            receptor_conc: 1e-8,
            spatial_step: 1e-6,
            time_step: 8e-4,
            num_states: 301,
        }
    }

    /// Checks strict positivity of every constant and `N >= 3`, then that the
    /// derived probabilities are admissible.
    pub fn validate(&self) -> Result<ElementaryProbs, ChannelError> {
        let fields = [
            ("diffusion_coeff", self.diffusion_coeff),
            ("flow_velocity", self.flow_velocity),
            ("binding_rate", self.binding_rate),
            ("unbinding_rate", self.unbinding_rate),
            ("receptor_conc", self.receptor_conc),
            ("spatial_step", self.spatial_step),
            ("time_step", self.time_step),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(ChannelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        if self.num_states < 3 {
            return Err(ChannelError::TooFewStates(self.num_states));
        }
        elementary_probs(self)
    }

    /// Index of the last free state (the outlet), zero-based.
    pub fn outlet_index(&self) -> usize {
        self.num_states - 2
    }

    /// Index of the bound state, zero-based.
    pub fn bound_index(&self) -> usize {
        self.num_states - 1
    }
}

/// Per-step transition probabilities derived from [`PhysicalParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementaryProbs {
    pub p_diff: f64,
    pub p_flow: f64,
    pub p_bind: f64,
    pub p_unbind: f64,
}

impl ElementaryProbs {
    /// Largest outgoing mass of any free state: the receiver-adjacent state
    /// can diffuse both ways, advect, and bind.
    pub fn worst_case_outgoing(&self) -> f64 {
        2.0 * self.p_diff + self.p_flow + self.p_bind
    }
}

/// Evaluates `p_diff = DΔt/Δx²`, `p_flow = vΔt/Δx`, `p_bind = k_on c_p Δt` and
/// `p_unbind = k_off Δt`, rejecting inadmissible combinations.
///
/// Zero rates are accepted here; strict positivity is checked by
/// [`PhysicalParams::validate`].
pub fn elementary_probs(params: &PhysicalParams) -> Result<ElementaryProbs, ChannelError> {
    let dt = params.time_step;
    let dx = params.spatial_step;
    let probs = ElementaryProbs {
        p_diff: params.diffusion_coeff * dt / (dx * dx),
        p_flow: params.flow_velocity * dt / dx,
        p_bind: params.binding_rate * params.receptor_conc * dt,
        p_unbind: params.unbinding_rate * dt,
    };
    let named = [
        ("p_diff", probs.p_diff),
        ("p_flow", probs.p_flow),
        ("p_bind", probs.p_bind),
        ("p_unbind", probs.p_unbind),
    ];
    for (name, value) in named {
        if !(0.0..=1.0).contains(&value) {
            return Err(ChannelError::ProbabilityOutOfRange { name, value });
        }
    }
    let mass = probs.worst_case_outgoing();
    if mass > 1.0 {
        return Err(ChannelError::ExcessOutgoingMass { mass });
    }
    Ok(probs)
}

/// One-based receiver index `r = d/Δx + 1` for a grid-aligned distance.
pub fn receiver_index(distance: f64, spatial_step: f64, num_states: usize) -> Result<usize, ChannelError> {
    let off_grid = ChannelError::OffGrid {
        distance,
        step: spatial_step,
    };
    if !distance.is_finite() || !spatial_step.is_finite() || spatial_step <= 0.0 {
        return Err(off_grid);
    }
    let ratio = distance / spatial_step;
    let steps = ratio.round();
    if (ratio - steps).abs() > GRID_TOL * steps.abs().max(1.0) {
        return Err(off_grid);
    }
    let index = steps as i64 + 1;
    let max = num_states.saturating_sub(1);
    if index < 1 || index as usize > max {
        return Err(ChannelError::ReceiverOutOfRange { index, max });
    }
    Ok(index as usize)
}

/// Inverse of [`receiver_index`]: `d = (r - 1)Δx`.
pub fn distance_of(receiver_index: usize, spatial_step: f64) -> f64 {
    (receiver_index - 1) as f64 * spatial_step
}

/// Transient-to-transient matrix `Q(d)` in compressed-column form, together
/// with the flow-out vector `psi(d)`.
///
/// Entry `(i, j)` is the probability of moving from state `j` to state `i` in
/// one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    dims: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    psi: Vec<f64>,
    receiver_index: usize,
    distance: f64,
}

impl ChannelMatrix {
    /// Assembles a matrix from explicit per-column `(row, value)` lists without
    /// checking any invariant. Use [`ChannelMatrix::validate`] afterwards.
    pub fn from_columns(
        columns: Vec<Vec<(usize, f64)>>,
        psi: Vec<f64>,
        receiver_index: usize,
        distance: f64,
    ) -> Self {
        let dims = columns.len();
        let mut col_ptr = Vec::with_capacity(dims + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut column in columns {
            column.sort_by_key(|&(row, _)| row);
            for (row, value) in column {
                row_idx.push(row);
                values.push(value);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            dims,
            col_ptr,
            row_idx,
            values,
            psi,
            receiver_index,
            distance,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// One-based index of the receiver-adjacent free state.
    pub fn receiver_index(&self) -> usize {
        self.receiver_index
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Dense lookup of entry `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.column(j)
            .filter(|&(row, _)| row == i)
            .map(|(_, v)| v)
            .sum()
    }

    /// `out = Q x`. Panics if the slice lengths differ from `dims`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dims);
        assert_eq!(out.len(), self.dims);
        out.fill(0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    /// Mass leaving the transient states in one step from state vector `x`.
    pub fn outflow(&self, x: &[f64]) -> f64 {
        self.psi.iter().zip(x).map(|(p, v)| p * v).sum()
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.dims;
        if self.psi.len() != n {
            violations.push(Violation::PsiLength {
                expected: n,
                found: self.psi.len(),
            });
        }
        if n < 3 || self.receiver_index < 1 || self.receiver_index > n - 1 {
            violations.push(Violation::ReceiverIndex {
                index: self.receiver_index,
                dims: n,
            });
        }
        for j in 0..n {
            let mut sum = 0.0;
            for (i, value) in self.column(j) {
                if i >= n || !(0.0..=1.0).contains(&value) || !value.is_finite() {
                    violations.push(Violation::EntryOutOfRange { row: i, col: j, value });
                }
                sum += value;
            }
            let psi = self.psi.get(j).copied().unwrap_or(0.0);
            if !(0.0..=1.0).contains(&psi) || !psi.is_finite() {
                violations.push(Violation::PsiOutOfRange { index: j, value: psi });
            }
            if psi != 0.0 && n >= 2 && j != n - 2 {
                violations.push(Violation::PsiSupport { index: j, value: psi });
            }
            let total = sum + psi;
            if (total - 1.0).abs() > STOCHASTIC_TOL || !total.is_finite() {
                violations.push(Violation::ColumnSum { col: j, sum: total });
            }
        }
        ValidationReport { violations }
    }
}

/// A single failed invariant of a [`ChannelMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ColumnSum { col: usize, sum: f64 },
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    PsiOutOfRange { index: usize, value: f64 },
    PsiSupport { index: usize, value: f64 },
    PsiLength { expected: usize, found: usize },
    ReceiverIndex { index: usize, dims: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ColumnSum { col, sum } => {
                write!(f, "column {col}: Q column sum + psi = {sum:.15} (expected 1)")
            }
            Violation::EntryOutOfRange { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} outside [0, 1]")
            }
            Violation::PsiOutOfRange { index, value } => {
                write!(f, "psi[{index}] = {value} outside [0, 1]")
            }
            Violation::PsiSupport { index, value } => {
                write!(f, "psi[{index}] = {value} nonzero away from the outlet state")
            }
            Violation::PsiLength { expected, found } => {
                write!(f, "psi has length {found}, expected {expected}")
            }
            Violation::ReceiverIndex { index, dims } => {
                write!(f, "receiver index {index} invalid for {dims} transient states")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Builds `Q(d)` and `psi(d)` for a receiver at distance `d` from the inlet.
///
/// Free states move right with `p_diff + p_flow`, left with `p_diff`, and keep
/// the residual mass. The inlet reflects (no left move), the outlet's right
/// move feeds the absorbing state. The receiver-adjacent state additionally
/// binds with `p_bind`; the bound state releases with `p_unbind` back to the
/// receiver-adjacent state.
pub fn build_transition(params: &PhysicalParams, distance: f64) -> Result<ChannelMatrix, ChannelError> {
    let probs = params.validate()?;
    let r = receiver_index(distance, params.spatial_step, params.num_states)?;
    Ok(assemble(params.num_states, &probs, r, distance))
}

/// Builds the matrix directly from elementary probabilities and a one-based
/// receiver index. The caller guarantees admissibility.
pub fn assemble(num_states: usize, probs: &ElementaryProbs, receiver_index: usize, distance: f64) -> ChannelMatrix {
    let n = num_states;
    let outlet = n - 2;
    let bound = n - 1;
    let rx = receiver_index - 1;
    let right = probs.p_diff + probs.p_flow;

    let mut columns = Vec::with_capacity(n);
    let mut psi = vec![0.0; n];
    for j in 0..=outlet {
        let mut column = Vec::with_capacity(4);
        let mut leaving = right;
        if j > 0 {
            push_nonzero(&mut column, j - 1, probs.p_diff);
            leaving += probs.p_diff;
        }
        if j < outlet {
            push_nonzero(&mut column, j + 1, right);
        }
        if j == rx {
            push_nonzero(&mut column, bound, probs.p_bind);
            leaving += probs.p_bind;
        }
        push_nonzero(&mut column, j, (1.0 - leaving).max(0.0));
        columns.push(column);
    }
    let mut bound_col = Vec::with_capacity(2);
    push_nonzero(&mut bound_col, rx, probs.p_unbind);
    push_nonzero(&mut bound_col, bound, 1.0 - probs.p_unbind);
    columns.push(bound_col);
    psi[outlet] = right;

    ChannelMatrix::from_columns(columns, psi, receiver_index, distance)
}

fn push_nonzero(column: &mut Vec<(usize, f64)>, row: usize, value: f64) {
    if value != 0.0 {
        column.push((row, value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * b.abs().max(1.0)
    }

    #[test]
    fn reference_elementary_probs() {
        let p = elementary_probs(&PhysicalParams::reference()).unwrap();
        assert!(close(p.p_diff, 0.04));
        assert!(close(p.p_flow, 0.008));
        assert!(close(p.p_bind, 4.8e-3));
        assert!(close(p.p_unbind, 2.4e-3));
    }

    #[test]
    fn zero_rates_give_zero_probs() {
        let params = PhysicalParams {
            diffusion_coeff: 0.0,
            flow_velocity: 0.0,
            binding_rate: 0.0,
            unbinding_rate: 0.0,
            ..PhysicalParams::reference()
        };
        let p = elementary_probs(&params).unwrap();
        assert_eq!((p.p_diff, p.p_flow, p.p_bind, p.p_unbind), (0.0, 0.0, 0.0, 0.0));
        // Still not a valid channel.
        assert!(params.validate().is_err());
    }

    #[test]
    fn rejects_negative_and_excess_mass() {
        let negative = PhysicalParams {
            flow_velocity: -1e-6,
            ..PhysicalParams::reference()
        };
        assert!(matches!(
            elementary_probs(&negative),
            Err(ChannelError::ProbabilityOutOfRange { name: "p_flow", .. })
        ));
        // p_diff = 0.5 alone already pushes 2 p_diff + ... over one.
        let fast = PhysicalParams {
            diffusion_coeff: 6.25e-10,
            ..PhysicalParams::reference()
        };
        assert!(matches!(
            elementary_probs(&fast),
            Err(ChannelError::ExcessOutgoingMass { .. })
        ));
        assert_eq!(
            PhysicalParams {
                num_states: 2,
                ..PhysicalParams::reference()
            }
            .validate(),
            Err(ChannelError::TooFewStates(2))
        );
    }

    #[test]
    fn receiver_index_examples() {
        assert_eq!(receiver_index(150e-6, 1e-6, 301).unwrap(), 151);
        assert_eq!(receiver_index(0.0, 1e-6, 301).unwrap(), 1);
        assert_eq!(receiver_index(130e-6, 1e-6, 301).unwrap(), 131);
        assert_eq!(distance_of(131, 1e-6), 130e-6);
        assert!(matches!(
            receiver_index(150.5e-6, 1e-6, 301),
            Err(ChannelError::OffGrid { .. })
        ));
        assert!(matches!(
            receiver_index(300e-6, 1e-6, 301),
            Err(ChannelError::ReceiverOutOfRange { index: 301, .. })
        ));
        assert!(matches!(
            receiver_index(-1e-6, 1e-6, 301),
            Err(ChannelError::ReceiverOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn reference_matrix_structure() {
        let params = PhysicalParams::reference();
        let cm = build_transition(&params, 150e-6).unwrap();
        assert!(cm.validate().passed());
        assert_eq!(cm.receiver_index(), 151);
        let nonzero: Vec<_> = cm.psi().iter().enumerate().filter(|(_, &p)| p != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, 299);
        assert!(close(*nonzero[0].1, 0.048));

        let rx = 150;
        let bound = 300;
        assert!(close(cm.get(bound, rx), 4.8e-3));
        assert!(close(cm.get(rx, bound), 2.4e-3));
        assert!(close(cm.get(bound, bound), 1.0 - 2.4e-3));
        assert!(close(cm.get(rx, rx), 1.0 - 0.08 - 0.008 - 4.8e-3));
        // Interior and inlet columns.
        assert!(close(cm.get(11, 10), 0.048));
        assert!(close(cm.get(9, 10), 0.04));
        assert!(close(cm.get(10, 10), 0.912));
        assert!(close(cm.get(0, 0), 0.952));
        assert!(close(cm.get(1, 0), 0.048));
        for j in 0..cm.dims() {
            assert!(cm.column(j).count() <= 4);
        }
    }

    #[test]
    fn validate_names_bad_column() {
        let params = PhysicalParams::reference();
        let probs = params.validate().unwrap();
        let good = assemble(5, &probs, 2, 1e-6);
        assert!(good.validate().passed());

        let mut columns: Vec<Vec<(usize, f64)>> = (0..5).map(|j| good.column(j).collect()).collect();
        // Shave 0.001 off the self-loop of column 2.
        for entry in columns[2].iter_mut() {
            if entry.0 == 2 {
                entry.1 -= 0.001;
            }
        }
        let bad = ChannelMatrix::from_columns(columns.clone(), good.psi().to_vec(), 2, 1e-6);
        let report = bad.validate();
        assert!(!report.passed());
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::ColumnSum { col: 2, .. }));
        assert!(report.violations[0].to_string().contains("column 2"));

        columns[2].push((4, -0.001));
        let negative = ChannelMatrix::from_columns(columns, good.psi().to_vec(), 2, 1e-6);
        assert!(negative
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EntryOutOfRange { row: 4, col: 2, .. })));
    }

    #[test]
    fn distances_differ_only_near_receivers() {
        let params = PhysicalParams::reference();
        let a = build_transition(&params, 130e-6).unwrap();
        let b = build_transition(&params, 160e-6).unwrap();
        let n = a.dims();
        let touched = [130usize, 160, n - 1];
        for j in 0..n {
            for i in 0..n {
                if a.get(i, j) != b.get(i, j) {
                    assert!(touched.contains(&i) && touched.contains(&j), "entry ({i}, {j}) changed");
                }
            }
        }
        assert_eq!(a.psi(), b.psi());
    }

    proptest! {
        #[test]
        fn constructed_matrices_are_column_stochastic(
            diffusion in 1e-13f64..2e-10,
            velocity in 1e-8f64..5e-5,
            k_on in 1e5f64..1e9,
            k_off in 1e-3f64..100.0,
            num_states in 3usize..40,
            r_frac in 0.0f64..1.0,
        ) {
            let params = PhysicalParams {
                diffusion_coeff: diffusion,
                flow_velocity: velocity,
                binding_rate: k_on,
                unbinding_rate: k_off,
                num_states,
                ..PhysicalParams::reference()
            };
            let r = 1 + ((num_states - 2) as f64 * r_frac) as usize;
            let d = distance_of(r, params.spatial_step);
            match build_transition(&params, d) {
                Ok(cm) => {
                    prop_assert_eq!(cm.receiver_index(), r);
                    prop_assert!(cm.validate().passed(), "{:?}", cm.validate());
                }
                Err(ChannelError::ExcessOutgoingMass { mass }) => prop_assert!(mass > 1.0),
                Err(ChannelError::ProbabilityOutOfRange { value, .. }) => prop_assert!(value > 1.0),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn receiver_index_round_trips(steps in 0usize..300) {
            let d = distance_of(steps + 1, 1e-6);
            prop_assert_eq!(receiver_index(d, 1e-6, 301).unwrap(), steps + 1);
            prop_assert_eq!(distance_of(receiver_index(d, 1e-6, 301).unwrap(), 1e-6), d);
        }
    }
}
