# tubegrid/grid/errors.py
"""
Exception hierarchy shared by every tubegrid package.
Report-style checks (validation, certificates) never raise for what they report.
"""

from typing import Any, Dict, List, Optional, Sequence


class TubegridError(Exception):
    """Base class for all tubegrid failures"""


class NetworkError(TubegridError, ValueError):
    """Invalid topology or electrical parameters"""


class NonInductiveLineError(NetworkError):
    """A line violates omega_g * L > r"""

    def __init__(self, edge_index: int, nodes: Sequence[int], reactance: float, resistance: float):
        self.edge_index = edge_index
        self.nodes = tuple(nodes)
        super().__init__(
            f"non-inductive line: edge {edge_index} {self.nodes} has "
            f"omega_g*L = {reactance:.6g} ohm <= r = {resistance:.6g} ohm"
        )


class GainError(TubegridError, ValueError):
    """Controller parameters outside their admissible range"""


class CPLSingularityError(TubegridError, ArithmeticError):
    """Constant power load evaluated too close to zero voltage"""

    def __init__(self, nodes: Sequence[int], magnitude_sq: float, threshold: float):
        self.nodes = tuple(int(i) for i in nodes)
        self.magnitude_sq = magnitude_sq
        super().__init__(
            f"CPL singularity at node(s) {list(self.nodes)}: "
            f"|v|^2 = {magnitude_sq:.3e} V^2 <= {threshold:.1e} V^2"
        )


class DesignError(TubegridError):
    """Gain design is infeasible; carries the failing certificates when available"""

    def __init__(self, message: str, certificates: Optional[List[Any]] = None):
        self.certificates = certificates or []
        super().__init__(message)


class CertificationError(TubegridError):
    """Gains failed certification and the run was not allowed to proceed"""

    def __init__(self, message: str, bundle: Any = None):
        self.bundle = bundle
        super().__init__(message)


class EquilibriumError(TubegridError):
    """Equilibrium solve did not converge"""


class IntegratorStateError(TubegridError):
    """Saturating integrator state left [-1, 1]"""


class SimulationDivergence(TubegridError):
    """Non-finite state during integration"""

    def __init__(self, message: str, time: float, last_state: Any):
        self.time = time
        self.last_state = last_state
        super().__init__(message)


class ConfigError(TubegridError, ValueError):
    """Scenario document failed schema validation"""

    def __init__(self, issues: List[str]):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.issues))

    def as_dict(self) -> Dict[str, Any]:
        return {"error": "config", "issues": self.issues}
