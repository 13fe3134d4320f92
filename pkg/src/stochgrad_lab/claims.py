"""Text templates naming the property each experiment kind tests, and report rows."""

from typing import Any

from .config import ExperimentKind

ERROR_RATE_CLAIM = """
For gamma_n = A/n the interpolated process tracks the flow with error rate
e(X) = -1/(2A); log-damped steps (beta_sched > 0) push e(X) to -infinity.
"""

LIMIT_SET_CLAIM = """
Under the spectral condition ]-1/(2A), 0[ meets the resolvent of the critical
set, the iterates converge to a single point of that set even when it is a
continuum.
"""

DISCRETE_RATE_CLAIM = """
Near a point with Lojasiewicz exponent theta the flow converges at rate
e^{ct} when theta = 1/2 and t^{-theta/(1-2theta)} otherwise; along the
recursion this becomes |x_n - x_inf| = O(1/log(n)^c).
"""

REPULSION_CLAIM = """
A linearly unstable equilibrium set is repulsive when the noise excites its
unstable directions: runs started near it leave the neighborhood and do not
converge there.
"""

POLYA_CLAIM = """
The Polya urn proportion is a martingale converging to a Uniform[0, 1] limit,
so it converges without a common limit point.
"""

SHADOW_CLAIM = """
A pseudo-orbit with small r-weighted defect is shadowed by a true orbit whose
distance to it decays like e^{mu k}.
"""

CLAIMS: dict[ExperimentKind, str] = {
    ExperimentKind.SGD: LIMIT_SET_CLAIM,
    ExperimentKind.ROBBINS_MONRO: LIMIT_SET_CLAIM,
    ExperimentKind.POLYA: POLYA_CLAIM,
    ExperimentKind.ERROR_RATE: ERROR_RATE_CLAIM,
    ExperimentKind.LOJASIEWICZ: """
    V satisfies |V(x) - V(p)|^{1-theta} <= c0 |grad V(x)| near p, with F at an
    angle bounded away from orthogonal to grad V.
    """,
    ExperimentKind.SPECTRUM: LIMIT_SET_CLAIM,
    ExperimentKind.SHADOW: SHADOW_CLAIM,
    ExperimentKind.REPULSION: REPULSION_CLAIM,
    ExperimentKind.RATE_FIT: DISCRETE_RATE_CLAIM,
    ExperimentKind.FLOW: """
    The resolvent of the linearized flow on the critical set, and the expansion
    rate that bounds the admissible error rates from below.
    """,
}

# One-line report rows; placeholders are summary keys
ROW_TEMPLATES: dict[ExperimentKind, str] = {
    ExperimentKind.SGD: "diameter {max_diameter}, distance to set {max_distance}, "
    "spectral condition {spectral_condition}",
    ExperimentKind.ROBBINS_MONRO: "diameter {max_diameter}, distance to set {max_distance}",
    ExperimentKind.POLYA: "KS {ks_statistic} (p = {ks_pvalue}), martingale {martingale_passes}",
    ExperimentKind.ERROR_RATE: "e_hat {e_hat} vs theoretical {theoretical}, "
    "deviation {deviation}",
    ExperimentKind.LOJASIEWICZ: "theta {theta_hat} (R^2 {r_squared}), c1 {c1_hat}",
    ExperimentKind.SPECTRUM: "spectrum {union}, condition {holds} at mu {witness_mu}",
    ExperimentKind.SHADOW: "h/g {ratio}, decay slope {slope} vs mu {mu}",
    ExperimentKind.REPULSION: "escape fraction {escape_fraction}, {ends_inside} end inside",
    ExperimentKind.RATE_FIT: "{rate_kind} exponent {exponent}, predicted c {predicted_c}",
    ExperimentKind.FLOW: "expansion rate {expansion_rate}, misclassified {misclassified}",
}


class _Missing(dict):
    def __missing__(self, key: str) -> str:
        return "n/a"


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, list) and len(value) > 6:
        return f"[{len(value)} values]"
    if value is None:
        return "n/a"
    return value


def claim_text(kind: ExperimentKind | str) -> str:
    """The claim an experiment kind tests, as one line."""
    return " ".join(CLAIMS[ExperimentKind(kind)].split())


def describe(kind: ExperimentKind | str, summary: dict[str, Any]) -> str:
    """Fill the report row template of a kind from a summary dict."""
    values = _Missing({key: _fmt(value) for key, value in summary.items()})
    return ROW_TEMPLATES[ExperimentKind(kind)].format_map(values)
