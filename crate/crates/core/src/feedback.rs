//! Feedback unitaries `U = exp(iF)` applied after each collective detection,
//! and the sector-graph analysis that decides whether a given `U` protects
//! and reaches a target dark state.
//!
//! Local-drive generators use spin-1/2 operators, `F = Σ_i a_i σ_x^(i)/2`, so
//! the pair-symmetric drive becomes a collective rotation (no sector mixing)
//! exactly when `A` is a multiple of `π`.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, collective, embed_single, pauli, Collective, OperatorMatrix, StateVector};
use crate::linalg::{self, C64};
use crate::spin::{dark_vectors, CoupledBasis, HalfInt, SubspaceLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Identity,
    LocalDrive,
    EpsilonPair,
    SchematicOneWay,
    SchematicTwoWay,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schematic {
    OneWay,
    TwoWay,
}

#[derive(Clone, Debug)]
pub struct FeedbackScheme {
    kind: SchemeKind,
    generator: Option<OperatorMatrix>,
    unitary: OperatorMatrix,
    params: BTreeMap<String, f64>,
}

const UNITARY_TOL: f64 = 1e-10;

impl FeedbackScheme {
    pub fn identity(n_qubits: usize) -> Self {
        FeedbackScheme {
            kind: SchemeKind::Identity,
            generator: Some(OperatorMatrix::zeros(n_qubits)),
            unitary: OperatorMatrix::identity(n_qubits),
            params: BTreeMap::new(),
        }
    }

    pub fn from_generator(kind: SchemeKind, generator: OperatorMatrix, params: BTreeMap<String, f64>) -> Result<Self> {
        let unitary = unitary_from_generator(&generator)?;
        Ok(FeedbackScheme { kind, generator: Some(generator), unitary, params })
    }

    pub fn from_unitary(kind: SchemeKind, unitary: OperatorMatrix, params: BTreeMap<String, f64>) -> Result<Self> {
        let dev = unitary.unitarity_deviation();
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(FeedbackScheme { kind, generator: None, unitary, params })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn generator(&self) -> Option<&OperatorMatrix> {
        self.generator.as_ref()
    }

    pub fn unitary(&self) -> &OperatorMatrix {
        &self.unitary
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn n_qubits(&self) -> usize {
        self.unitary.n_qubits()
    }
}

/// `exp(iF)` for Hermitian `F`.
pub fn unitary_from_generator(generator: &OperatorMatrix) -> Result<OperatorMatrix> {
    let dev = generator.hermitian_deviation();
    if dev > 1e-10 {
        return Err(Error::NotHermitian(dev));
    }
    OperatorMatrix::new(linalg::expi_hermitian(&generator.entries().view()))
}

fn sx_sum(amplitudes: &[f64]) -> Result<OperatorMatrix> {
    let n = amplitudes.len();
    let mut f = OperatorMatrix::zeros(n);
    for (i, &a) in amplitudes.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let term = embed_single(&pauli::x(), i + 1, n)?.scale(C64::new(a / 2.0, 0.0));
        f = f.add(&term)?;
    }
    Ok(f)
}

/// Independent drive of each atom: `F = Σ_i a_i σ_x^(i)/2`.
pub fn local_drive_feedback(a: &[f64]) -> Result<FeedbackScheme> {
    if a.is_empty() || a.len() > crate::hilbert::MAX_QUBITS {
        return Err(Error::UnsupportedQubitCount { n_qubits: a.len(), reason: "one drive amplitude per qubit" });
    }
    let params = a.iter().enumerate().map(|(i, &x)| (format!("a{}", i + 1), x)).collect();
    FeedbackScheme::from_generator(SchemeKind::LocalDrive, sx_sum(a)?, params)
}

/// Four-qubit drive `(A, A(1−ε), −A, −A(1−ε))`.
pub fn epsilon_pair_feedback(amplitude: f64, eps: f64) -> Result<FeedbackScheme> {
    let a = [amplitude, amplitude * (1.0 - eps), -amplitude, -amplitude * (1.0 - eps)];
    let params = BTreeMap::from([("A".to_string(), amplitude), ("eps".to_string(), eps)]);
    FeedbackScheme::from_generator(SchemeKind::EpsilonPair, sx_sum(&a)?, params)
}

fn lowering_residual(state: &StateVector) -> Result<f64> {
    let n = state.n_qubits();
    let jm = collective(Collective::Minus, n)?.apply(state)?.norm();
    let jp = collective(Collective::Plus, n)?.apply(state)?.norm();
    Ok(jm.max(jp))
}

fn check_dark_target(target: &StateVector, basis: &CoupledBasis) -> Result<()> {
    check_dim(basis.dim(), target.dim())?;
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(norm));
    }
    let residual = lowering_residual(target)?;
    if residual > 1e-8 {
        return Err(Error::NotDark(residual));
    }
    Ok(())
}

/// Feedback realized as π/2 two-state rotations along a path from the
/// highest-`J` ladder through every other non-dark ladder to `target`.
///
/// One-way links pair a state of the source ladder with the top (`J_z = J`)
/// state of the next ladder, which `J_-` can never populate; the chain head
/// leaves from `J_z = −J`, later ladders from `J_z = J − 1`. Two-way links pair
/// `J_z = 0` of the source with `J_z = −J` of the next ladder, so jumps can go
/// back. The dark states orthogonal to `target` are left untouched.
pub fn schematic_feedback(kind: Schematic, basis: &CoupledBasis, target: &StateVector) -> Result<FeedbackScheme> {
    check_dark_target(target, basis)?;
    let mut chain: Vec<&SubspaceLabel> = basis.sectors().iter().filter(|s| !s.is_dark()).collect();
    chain.sort_by_key(|s| std::cmp::Reverse(s.j));

    let column = |sector: &SubspaceLabel, jz2: i32| -> StateVector {
        basis
            .state(sector, HalfInt::from_doubled(jz2))
            .expect("J_z within ladder")
    };
    let mut pairs: Vec<(StateVector, StateVector)> = Vec::with_capacity(chain.len());
    for (k, source) in chain.iter().enumerate() {
        let j2 = source.j.doubled();
        let exit = match kind {
            Schematic::OneWay if k == 0 => column(source, -j2),
            Schematic::OneWay => column(source, j2 - 2),
            Schematic::TwoWay => column(source, 0),
        };
        let entry = match chain.get(k + 1) {
            None => target.clone(),
            Some(dest) => match kind {
                Schematic::OneWay => column(dest, dest.j.doubled()),
                Schematic::TwoWay => column(dest, -dest.j.doubled()),
            },
        };
        pairs.push((exit, entry));
    }

    let d = basis.dim();
    let mut unitary = linalg::identity(d);
    let mut generator = Array2::<C64>::zeros((d, d));
    for (a, b) in &pairs {
        // G = I − |a⟩⟨a| − |b⟩⟨b| + |b⟩⟨a| − |a⟩⟨b| sends a → b and b → −a
        let aa = linalg::outer(a.amplitudes(), a.amplitudes());
        let bb = linalg::outer(b.amplitudes(), b.amplitudes());
        let ba = linalg::outer(b.amplitudes(), a.amplitudes());
        let ab = linalg::outer(a.amplitudes(), b.amplitudes());
        let givens = linalg::identity(d) - &aa - &bb + &ba - &ab;
        unitary = givens.dot(&unitary);
        // exp(iF) = exp(π/2 (|b⟩⟨a| − |a⟩⟨b|))
        generator = generator + (&ba - &ab).mapv(|z| z * C64::new(0.0, -FRAC_PI_2));
    }
    let scheme_kind = match kind {
        Schematic::OneWay => SchemeKind::SchematicOneWay,
        Schematic::TwoWay => SchemeKind::SchematicTwoWay,
    };
    let params = BTreeMap::from([("links".to_string(), pairs.len() as f64)]);
    let unitary = OperatorMatrix::new(unitary)?;
    let generator = OperatorMatrix::new(generator)?;
    let from_generator = unitary_from_generator(&generator)?;
    let mismatch = from_generator.max_abs_diff(&unitary);
    if mismatch > UNITARY_TOL {
        return Err(Error::InvalidArgument(format!("path rotations do not commute ({mismatch:.3e})")));
    }
    let mut scheme = FeedbackScheme::from_unitary(scheme_kind, unitary, params)?;
    scheme.generator = Some(generator);
    Ok(scheme)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Sector(SubspaceLabel),
    Target,
    Unwanted,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Sector(s) => write!(f, "{s}"),
            Node::Target => write!(f, "target"),
            Node::Unwanted => write!(f, "unwanted"),
        }
    }
}

impl Serialize for Node {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Jump,
    Hamiltonian,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyReport {
    /// No unwanted dark state can be fed by `U` from a state `J_-` can produce.
    pub protected: bool,
    /// Every node other than the unwanted dark states has a path to the target.
    pub reachable: bool,
    /// Largest `‖P_u U v‖` over coupled states `v` with `J_z ≠ J`.
    pub max_leak: f64,
    pub blocking_sectors: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl StrategyReport {
    pub fn jump_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Jump)
    }

    /// True when the jump edges between distinct nodes contain a directed cycle.
    pub fn has_jump_cycle(&self) -> bool {
        let mut adj: BTreeMap<&Node, Vec<&Node>> = BTreeMap::new();
        for e in self.jump_edges() {
            if e.from != e.to {
                adj.entry(&e.from).or_default().push(&e.to);
            }
        }
        // 0 unvisited, 1 on stack, 2 done
        let mut state: BTreeMap<&Node, u8> = BTreeMap::new();
        fn visit<'a>(n: &'a Node, adj: &BTreeMap<&'a Node, Vec<&'a Node>>, state: &mut BTreeMap<&'a Node, u8>) -> bool {
            match state.get(n).copied().unwrap_or(0) {
                1 => return true,
                2 => return false,
                _ => {}
            }
            state.insert(n, 1);
            for &m in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if visit(m, adj, state) {
                    return true;
                }
            }
            state.insert(n, 2);
            false
        }
        let nodes: Vec<&Node> = adj.keys().copied().collect();
        nodes.into_iter().any(|n| visit(n, &adj, &mut state))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Zero-block threshold relative to the largest block of `U·J_-`.
pub const RELATIVE_BLOCK_TOL: f64 = 1e-10;
/// Protection threshold on `‖P_u U v‖`.
pub const PROTECTION_TOL: f64 = 1e-10;

/// Checks the two feedback requirements for `target` under unitary `U`.
pub fn validate_strategy(unitary: &OperatorMatrix, target: &StateVector, basis: &CoupledBasis) -> Result<StrategyReport> {
    check_dim(basis.dim(), unitary.dim())?;
    let dev = unitary.unitarity_deviation();
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary(dev));
    }
    check_dark_target(target, basis)?;
    let n = basis.n_qubits();
    let d = basis.dim();

    // unwanted dark subspace: dark projector minus the target projector
    let mut p_dark = Array2::<C64>::zeros((d, d));
    for v in dark_vectors(basis) {
        p_dark = p_dark + linalg::outer(v.amplitudes(), v.amplitudes());
    }
    let p_unwanted = p_dark - linalg::outer(target.amplitudes(), target.amplitudes());
    let (values, vectors) = linalg::eigh(&p_unwanted.view());
    let unwanted_cols: Vec<usize> = (0..d).filter(|&i| values[i] > 0.5).collect();
    let unwanted = Array2::from_shape_fn((d, unwanted_cols.len()), |(r, c)| vectors[[r, unwanted_cols[c]]]);

    let u = unitary.entries();
    let mut max_leak: f64 = 0.0;
    for (col, label) in basis.labels().iter().enumerate() {
        if label.is_top() {
            continue;
        }
        let uv = u.dot(&basis.transform().column(col));
        let leak = linalg::norm_sqr(&p_unwanted.dot(&uv)).sqrt();
        max_leak = max_leak.max(leak);
    }
    let protected = max_leak < PROTECTION_TOL;

    // graph nodes with their orthonormal bases
    let mut nodes: Vec<(Node, Array2<C64>)> = Vec::new();
    for s in basis.sectors().iter().filter(|s| !s.is_dark()) {
        let cols = basis.columns_of(s);
        let m = Array2::from_shape_fn((d, cols.len()), |(r, c)| basis.transform()[[r, cols[c]]]);
        nodes.push((Node::Sector(s.clone()), m));
    }
    nodes.push((Node::Target, target.amplitudes().clone().insert_axis(ndarray::Axis(1))));
    if !unwanted_cols.is_empty() {
        nodes.push((Node::Unwanted, unwanted));
    }

    let jump = u.dot(collective(Collective::Minus, n)?.entries());
    let hamiltonian = collective(Collective::Plus, n)?.add(&collective(Collective::Minus, n)?)?;
    let block_norms = |op: &Array2<C64>| -> Vec<Vec<f64>> {
        nodes
            .iter()
            .map(|(_, rows)| {
                let left = linalg::dagger(&rows.view()).dot(op);
                nodes.iter().map(|(_, cols)| linalg::max_abs(&left.dot(cols).view())).collect()
            })
            .collect()
    };
    let jump_blocks = block_norms(&jump);
    let ham_blocks = block_norms(hamiltonian.entries());
    let scale = |blocks: &Vec<Vec<f64>>| blocks.iter().flatten().cloned().fold(0.0, f64::max);
    let jump_cut = RELATIVE_BLOCK_TOL * scale(&jump_blocks);
    let ham_cut = RELATIVE_BLOCK_TOL * scale(&ham_blocks);

    let mut edges = Vec::new();
    for (r, (to, _)) in nodes.iter().enumerate() {
        for (c, (from, _)) in nodes.iter().enumerate() {
            if r != c && jump_blocks[r][c] > jump_cut {
                edges.push(Edge { from: from.clone(), to: to.clone(), kind: EdgeKind::Jump });
            }
        }
    }
    for (r, (to, _)) in nodes.iter().enumerate() {
        for (c, (from, _)) in nodes.iter().enumerate() {
            if ham_blocks[r][c] > ham_cut && (r != c || matches!(from, Node::Sector(_))) {
                edges.push(Edge { from: from.clone(), to: to.clone(), kind: EdgeKind::Hamiltonian });
            }
        }
    }

    // backward search from the target
    let index_of = |node: &Node| nodes.iter().position(|(n, _)| n == node).expect("known node");
    let target_idx = index_of(&Node::Target);
    let mut reaches = vec![false; nodes.len()];
    reaches[target_idx] = true;
    let mut queue = VecDeque::from([target_idx]);
    while let Some(k) = queue.pop_front() {
        for e in &edges {
            if index_of(&e.to) == k {
                let f = index_of(&e.from);
                if !reaches[f] {
                    reaches[f] = true;
                    queue.push_back(f);
                }
            }
        }
    }
    let blocking_sectors: Vec<Node> = nodes
        .iter()
        .zip(&reaches)
        .filter(|((node, _), &ok)| !ok && *node != Node::Unwanted)
        .map(|((node, _), _)| node.clone())
        .collect();

    Ok(StrategyReport {
        protected,
        reachable: blocking_sectors.is_empty(),
        max_leak,
        blocking_sectors,
        edges,
    })
}
