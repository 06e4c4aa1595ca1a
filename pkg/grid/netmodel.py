# tubegrid/grid/netmodel.py
"""
Graph-theoretic and electrical description of the microgrid.

Nodes and edges are 0-based here; scenario files number nodes from 1 and
are converted in conductor.config. Voltage vectors are stacked d then q:
v = [v_d1 .. v_dn, v_q1 .. v_qn].
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from grid.errors import GainError, NetworkError, NonInductiveLineError

if TYPE_CHECKING:
    from grid.control import GainSet

logger = logging.getLogger(__name__)

DEFAULT_LINE_RESISTANCE = 0.05          # ohm
DEFAULT_LINE_INDUCTANCE = 5e-4          # henry
DEFAULT_GRID_FREQUENCY = 2 * np.pi * 50  # rad/s
DEFAULT_CAPACITANCE = 500e-6            # farad

Edge = Tuple[int, int]


def _per_item(value, count: int, name: str) -> np.ndarray:
    """Broadcast a scalar, or check a sequence, to a float vector of length count"""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(count, float(arr))
    if arr.shape != (count,):
        raise NetworkError(f"{name}: expected {count} values, got shape {arr.shape}")
    return arr.copy()


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Topology plus per-node and per-line parameters and constraint sets"""

    node_count: int
    edges: Tuple[Edge, ...]
    capacitance: np.ndarray
    line_resistance: np.ndarray
    line_inductance: np.ndarray
    grid_frequency: float
    rated_voltage: np.ndarray
    nominal_load: np.ndarray        # (n, 2): P_bar [W], Q_bar [var]
    disturbance_bounds: np.ndarray  # (n, 2): dP_max [W], dQ_max [var]
    constraint: np.ndarray          # v_max per node [V]
    constraint_center: Optional[np.ndarray] = None

    @classmethod
    def build(cls, node_count: int, edges: Sequence[Edge],
              capacitance=DEFAULT_CAPACITANCE,
              line_resistance=DEFAULT_LINE_RESISTANCE,
              line_inductance=DEFAULT_LINE_INDUCTANCE,
              grid_frequency: float = DEFAULT_GRID_FREQUENCY,
              rated_voltage=110.0,
              nominal_P=0.0, nominal_Q=0.0,
              dP_max=0.0, dQ_max=0.0,
              v_max=6.0,
              constraint_center=None) -> "NetworkModel":
        """Create a model, broadcasting scalars to per-node / per-edge vectors"""
        n = int(node_count)
        edge_tuple = tuple((int(i), int(j)) for i, j in edges)
        m = len(edge_tuple)
        load = np.column_stack([_per_item(nominal_P, n, "nominal_P"),
                                _per_item(nominal_Q, n, "nominal_Q")])
        bounds = np.column_stack([_per_item(dP_max, n, "dP_max"),
                                  _per_item(dQ_max, n, "dQ_max")])
        center = None
        if constraint_center is not None:
            center = _per_item(constraint_center, n, "constraint_center")
        return cls(
            node_count=n,
            edges=edge_tuple,
            capacitance=_per_item(capacitance, n, "capacitance"),
            line_resistance=_per_item(line_resistance, m, "line_resistance"),
            line_inductance=_per_item(line_inductance, m, "line_inductance"),
            grid_frequency=float(grid_frequency),
            rated_voltage=_per_item(rated_voltage, n, "rated_voltage"),
            nominal_load=load,
            disturbance_bounds=bounds,
            constraint=_per_item(v_max, n, "v_max"),
            constraint_center=center,
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def P_bar(self) -> np.ndarray:
        return self.nominal_load[:, 0]

    @property
    def Q_bar(self) -> np.ndarray:
        return self.nominal_load[:, 1]

    @property
    def dP_max(self) -> np.ndarray:
        return self.disturbance_bounds[:, 0]

    @property
    def dQ_max(self) -> np.ndarray:
        return self.disturbance_bounds[:, 1]

    @property
    def center(self) -> np.ndarray:
        """Centre of each V_i on the d-axis"""
        if self.constraint_center is None:
            return self.rated_voltage
        return self.constraint_center

    @property
    def z_o(self) -> np.ndarray:
        """Rated vector used for the nominal shift (q-component 0)"""
        return np.concatenate([self.rated_voltage, np.zeros(self.node_count)])

    @property
    def reactance(self) -> np.ndarray:
        return self.grid_frequency * self.line_inductance

    @cached_property
    def incidence(self) -> np.ndarray:
        return build_incidence(self.edges, self.node_count)

    @cached_property
    def laplacian(self) -> np.ndarray:
        return build_laplacian(self.incidence, self.line_resistance,
                               self.line_inductance, self.grid_frequency)

    def with_loads(self, nominal_P=None, nominal_Q=None, dP_max=None, dQ_max=None) -> "NetworkModel":
        """Copy with some load parameters replaced"""
        n = self.node_count
        load = self.nominal_load.copy()
        bounds = self.disturbance_bounds.copy()
        if nominal_P is not None:
            load[:, 0] = _per_item(nominal_P, n, "nominal_P")
        if nominal_Q is not None:
            load[:, 1] = _per_item(nominal_Q, n, "nominal_Q")
        if dP_max is not None:
            bounds[:, 0] = _per_item(dP_max, n, "dP_max")
        if dQ_max is not None:
            bounds[:, 1] = _per_item(dQ_max, n, "dQ_max")
        return NetworkModel(
            node_count=n, edges=self.edges, capacitance=self.capacitance,
            line_resistance=self.line_resistance, line_inductance=self.line_inductance,
            grid_frequency=self.grid_frequency, rated_voltage=self.rated_voltage,
            nominal_load=load, disturbance_bounds=bounds, constraint=self.constraint,
            constraint_center=self.constraint_center,
        )

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edges": [list(e) for e in self.edges],
            "capacitance": self.capacitance.tolist(),
            "line_resistance": self.line_resistance.tolist(),
            "line_inductance": self.line_inductance.tolist(),
            "grid_frequency": self.grid_frequency,
            "rated_voltage": self.rated_voltage.tolist(),
            "nominal_load": self.nominal_load.tolist(),
            "disturbance_bounds": self.disturbance_bounds.tolist(),
            "constraint": self.constraint.tolist(),
            "constraint_center": self.center.tolist(),
        }


def six_node_topology() -> List[Edge]:
    """Meshed 6-node, 9-edge graph: ring plus three chords"""
    ring = [(i, (i + 1) % 6) for i in range(6)]
    chords = [(0, 3), (1, 4), (2, 5)]
    return ring + chords


def build_incidence(edges: Sequence[Edge], n: int) -> np.ndarray:
    """Oriented incidence matrix B (m x n): +1 at the tail, -1 at the head"""
    B = np.zeros((len(edges), n), dtype=int)
    for k, (i, j) in enumerate(edges):
        if i == j:
            raise NetworkError(f"edge {k} is a self-loop at node {i}")
        for node in (i, j):
            if not 0 <= node < n:
                raise NetworkError(f"edge {k} ({i}, {j}) references node {node} outside 0..{n - 1}")
        B[k, i] = 1
        B[k, j] = -1
    return B


def edge_weights(r, L, omega_g: float, nodes_of=None) -> np.ndarray:
    """Per-edge weight 1/(omega_g*L - r); rejects non-inductive lines"""
    r = np.asarray(r, dtype=float)
    X = omega_g * np.asarray(L, dtype=float)
    for k in range(r.shape[0]):
        if not X[k] > r[k]:
            nodes = nodes_of(k) if nodes_of else ()
            raise NonInductiveLineError(k, nodes, float(X[k]), float(r[k]))
    return 1.0 / (X - r)


def build_laplacian(B: np.ndarray, r, L, omega_g: float) -> np.ndarray:
    """Network Laplacian B^T diag(1/(omega_g L - r)) B"""
    B = np.asarray(B, dtype=float)

    def nodes_of(k):
        return (int(np.argmax(B[k] > 0)), int(np.argmax(B[k] < 0)))

    W = edge_weights(r, L, omega_g, nodes_of)
    lap = B.T @ (W[:, None] * B)
    # symmetrize away roundoff
    return 0.5 * (lap + lap.T)


def laplacian_spectrum(lap: np.ndarray) -> np.ndarray:
    """Sorted eigenvalues; the second one is the algebraic connectivity"""
    return np.sort(np.linalg.eigvalsh(lap))


def as_graph(model: NetworkModel) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(model.node_count))
    graph.add_edges_from(e for e in model.edges if e[0] != e[1])
    return graph


def validate_network(model: NetworkModel) -> List[str]:
    """Return every violated modelling assumption (empty list = valid)"""
    issues: List[str] = []
    n = model.node_count
    if n < 1:
        return ["node_count must be >= 1"]

    edges_ok = True
    for k, (i, j) in enumerate(model.edges):
        if i == j:
            issues.append(f"edge {k}: self-loop at node {i}")
            edges_ok = False
        if not (0 <= i < n and 0 <= j < n):
            issues.append(f"edge {k}: ({i}, {j}) references a node outside 0..{n - 1}")
            edges_ok = False

    if edges_ok and n > 1 and not nx.is_connected(as_graph(model)):
        components = [sorted(c) for c in nx.connected_components(as_graph(model))]
        issues.append(f"graph is not connected: components {components}")

    positive = {
        "capacitance": model.capacitance,
        "line_resistance": model.line_resistance,
        "line_inductance": model.line_inductance,
        "rated_voltage": model.rated_voltage,
        "constraint (v_max)": model.constraint,
        "constraint_center": model.center,
    }
    for name, values in positive.items():
        bad = np.nonzero(~(values > 0))[0]
        if bad.size:
            issues.append(f"{name} must be > 0 at index {bad.tolist()}")
    if not model.grid_frequency > 0:
        issues.append("grid_frequency must be > 0")
    for col, name in enumerate(("dP_max", "dQ_max")):
        bad = np.nonzero(~(model.disturbance_bounds[:, col] >= 0))[0]
        if bad.size:
            issues.append(f"{name} must be >= 0 at node {bad.tolist()}")

    X = model.grid_frequency * model.line_inductance
    for k, (i, j) in enumerate(model.edges):
        if not X[k] > model.line_resistance[k]:
            issues.append(
                f"non-inductive line: edge {k} ({i}, {j}) omega_g*L = {X[k]:.6g} "
                f"<= r = {model.line_resistance[k]:.6g}"
            )

    if edges_ok:
        for k, (i, j) in enumerate(model.edges):
            if model.rated_voltage[i] != model.rated_voltage[j]:
                issues.append(
                    f"edge {k} ({i}, {j}) joins different rated voltages "
                    f"{model.rated_voltage[i]} / {model.rated_voltage[j]}"
                )

    for issue in issues:
        logger.debug(f"network validation: {issue}")
    return issues


@dataclass(frozen=True)
class NodeSets:
    """Set descriptors of one node: V_i (disk), S_i (disk), Z_i (shifted d-interval)"""

    node: int
    v_center: float
    v_radius: float
    safe_radius: float
    z_lower: float      # shifted, = -z_tilde_m - delta
    z_upper: float      # shifted, = z_tilde_m
    z_o: float

    @property
    def z_range(self) -> Tuple[float, float]:
        """Z_i in unshifted volts"""
        return (self.z_o + self.z_lower, self.z_o + self.z_upper)

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "V": {"center": [self.v_center, 0.0], "radius": self.v_radius},
            "S": {"radius": self.safe_radius},
            "Z": {"shifted": [self.z_lower, self.z_upper], "rms": list(self.z_range)},
        }


def node_sets(model: NetworkModel, gains: "GainSet") -> List[NodeSets]:
    """Per-node constraint, safe and nominal sets"""
    z_m = np.asarray(gains.M, dtype=float) / np.asarray(gains.K_d, dtype=float)
    return node_sets_from(model, gains.e_bar, z_m, gains.delta)


def node_sets_from(model: NetworkModel, e_bar, z_tilde_m, delta) -> List[NodeSets]:
    """node_sets from raw geometry, before any gain is designed"""
    n = model.node_count
    e_bar = np.broadcast_to(np.asarray(e_bar, dtype=float), (n,))
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (n,))
    z_m = np.broadcast_to(np.asarray(z_tilde_m, dtype=float), (n,))
    for name, values in (("e_bar", e_bar), ("delta", delta), ("z_tilde_m", z_m)):
        if np.any(~(values > 0)):
            raise GainError(f"{name} must be > 0, got {values.tolist()}")
    return [
        NodeSets(
            node=i,
            v_center=float(model.center[i]),
            v_radius=float(model.constraint[i]),
            safe_radius=float(np.sqrt(e_bar[i])),
            z_lower=float(-z_m[i] - delta[i]),
            z_upper=float(z_m[i]),
            z_o=float(model.rated_voltage[i]),
        )
        for i in range(model.node_count)
    ]


def line_equilibrium(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    """Substituted line currents (-r + omega_g L)^-1 B v per channel, stacked d then q"""
    n = model.node_count
    W = edge_weights(model.line_resistance, model.line_inductance, model.grid_frequency)
    B = model.incidence
    return np.concatenate([W * (B @ v[:n]), W * (B @ v[n:])])


def exact_line_equilibrium(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    """Algebraic equilibrium of the literal line block: I = (B v)/(r + j omega_g L)"""
    n = model.node_count
    B = model.incidence
    a = B @ v[:n]
    b = B @ v[n:]
    r = model.line_resistance
    X = model.reactance
    den = r * r + X * X
    return np.concatenate([(a * r + b * X) / den, (b * r - a * X) / den])
