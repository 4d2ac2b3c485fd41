"""
Exact checks of the weighting identities and the two counterexamples.

Joint distributions are finite lists of atoms (w, a, y0, y1, r) with
probabilities. Probabilities may be ``Fraction`` values, in which case
every derived quantity is exact; the uniform outcome draw of a model is
split into the cells cut by its comparison thresholds.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from exceptions import PositivityError
from stats import RngStream

logger = logging.getLogger(__name__)

Number = Union[Fraction, float]
KeyFn = Callable[["Atom"], Hashable]

MISSING = "*"


@dataclass(frozen=True)
class Atom:
    """
    One support point of a discrete joint distribution.

    Attributes:
        w: Covariate value
        a: Exposure
        y0: Counterfactual outcome under a = 0
        y1: Counterfactual outcome under a = 1
        r: 1 if w is observed, 0 if missing
        p: Probability
        cell: Label of the outcome-draw cell the atom came from
    """

    w: int
    a: int
    y0: int
    y1: int
    r: int = 1
    p: Number = 0.0
    cell: str = ""

    @property
    def y(self) -> int:
        """Observed outcome Y = Y_A."""
        return self.y1 if self.a == 1 else self.y0

    @property
    def v(self) -> Hashable:
        """Observed covariate pattern: w, or '*' when missing."""
        return self.w if self.r == 1 else MISSING


class DiscreteJoint:
    """Finite joint distribution over atoms."""

    def __init__(self, atoms: Sequence[Atom], tolerance: float = 1e-12) -> None:
        self.atoms = tuple(atoms)
        if not self.atoms:
            raise ValueError("A joint distribution needs at least one atom")
        if any(atom.p < 0 for atom in self.atoms):
            raise ValueError("Atom probabilities must be non-negative")
        total = sum((atom.p for atom in self.atoms), Fraction(0))
        if abs(total - 1) > tolerance:
            raise ValueError(f"Atom probabilities sum to {float(total)!r}, not 1")

    def prob(self, event: Callable[[Atom], bool]) -> Number:
        """Pr(event)."""
        return sum((atom.p for atom in self.atoms if event(atom)), Fraction(0))

    def conditional(self, event: Callable[[Atom], bool], given: Callable[[Atom], bool]) -> Number:
        """Pr(event | given)."""
        denominator = self.prob(given)
        if denominator == 0:
            raise PositivityError("Conditioning event has probability zero")
        return self.prob(lambda atom: event(atom) and given(atom)) / denominator

    def levels(self, key: KeyFn) -> List[Hashable]:
        """Distinct values of ``key`` with positive probability, in first-seen order."""
        seen: Dict[Hashable, None] = {}
        for atom in self.atoms:
            if atom.p > 0:
                seen.setdefault(key(atom), None)
        return list(seen)

    def propensity(self, key: KeyFn) -> Dict[Hashable, Number]:
        """Pr(A = 1 | key = k) for every level k."""
        return {
            level: self.conditional(lambda atom: atom.a == 1, lambda atom: key(atom) == level)
            for level in self.levels(key)
        }


@dataclass(frozen=True)
class IdentityCheck:
    """
    One verified quantity.

    ``relation`` is "eq" when computed must equal expected within the
    tolerance and "ne" when it must differ by more than the tolerance.
    """

    name: str
    computed: Number
    expected: Number
    tolerance: float = 1e-12
    relation: str = "eq"

    @property
    def passed(self) -> bool:
        close = abs(self.computed - self.expected) <= self.tolerance
        return close if self.relation == "eq" else not close


@dataclass(frozen=True)
class IdentityReport:
    """Named collection of checks."""

    title: str
    checks: List[IdentityCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def get(self, name: str) -> IdentityCheck:
        """Look up a check by name."""
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(f"No check named '{name}' in {self.title}")

    def to_frame(self) -> pd.DataFrame:
        """Pass/fail table with computed and expected values as floats."""
        return pd.DataFrame(
            [
                {
                    "report": self.title,
                    "check": c.name,
                    "computed": float(c.computed),
                    "expected": float(c.expected),
                    "relation": c.relation,
                    "passed": c.passed,
                }
                for c in self.checks
            ],
            columns=["report", "check", "computed", "expected", "relation", "passed"],
        )


# ----------------------------------------------------------------------
# Weighting identities
# ----------------------------------------------------------------------


def _by_w(atom: Atom) -> Hashable:
    return atom.w


def _by_v(atom: Atom) -> Hashable:
    return atom.v


def odds_weights(joint: DiscreteJoint, generalised: bool = False) -> Dict[Hashable, Number]:
    """
    Normalised unexposed weights per covariate level.

    Returns e/(1 - e) / E[odds | A = 0] for each level of W (or of V when
    ``generalised``), i.e. phi(w, 0) or gamma(v, 0).

    Raises:
        PositivityError: If a score is 0 or 1 on the support
    """
    key = _by_v if generalised else _by_w
    scores = _positive_scores(joint, key)
    p0 = joint.prob(lambda atom: atom.a == 0)
    e0 = _mean_odds_unexposed(joint, key, scores, p0)
    return {level: e / (1 - e) / e0 for level, e in scores.items()}


def _positive_scores(joint: DiscreteJoint, key: KeyFn) -> Dict[Hashable, Number]:
    p1 = joint.prob(lambda atom: atom.a == 1)
    if p1 == 0 or p1 == 1:
        raise PositivityError("Both exposure groups need positive probability")
    scores = joint.propensity(key)
    for level, e in scores.items():
        if e <= 0 or e >= 1:
            raise PositivityError(f"Score {float(e)!r} at level {level!r} violates positivity")
    return scores


def _mean_odds_unexposed(
    joint: DiscreteJoint, key: KeyFn, scores: Dict[Hashable, Number], p0: Number
) -> Number:
    total = sum(
        (
            atom.p * scores[key(atom)] / (1 - scores[key(atom)])
            for atom in joint.atoms
            if atom.a == 0 and atom.p > 0
        ),
        Fraction(0),
    )
    return total / p0


def _weighting_checks(
    joint: DiscreteJoint, key: KeyFn, label: str, tolerance: float
) -> List[IdentityCheck]:
    scores = _positive_scores(joint, key)
    p1 = joint.prob(lambda atom: atom.a == 1)
    p0 = joint.prob(lambda atom: atom.a == 0)

    star_exposed = joint.prob(lambda atom: atom.a == 1) / p1
    star_unexposed = _mean_odds_unexposed(joint, key, scores, p0)
    checks = [
        IdentityCheck(f"E[{label}*|A=1] = 1", star_exposed, Fraction(1), tolerance),
        IdentityCheck(f"E[{label}*|A=0] = Pr(A=1)/Pr(A=0)", star_unexposed, p1 / p0, tolerance),
    ]

    for level, e in scores.items():
        weight = e / (1 - e) / star_unexposed
        lhs = weight * joint.conditional(lambda atom: key(atom) == level, lambda atom: atom.a == 0)
        rhs = joint.conditional(lambda atom: key(atom) == level, lambda atom: atom.a == 1)
        checks.append(IdentityCheck(f"{label} balance at {level}", lhs, rhs, tolerance))

    for y in (0, 1):
        weighted = sum(
            (
                atom.p * scores[key(atom)] / (1 - scores[key(atom)]) / star_unexposed
                for atom in joint.atoms
                if atom.a == 0 and atom.y0 == y and atom.p > 0
            ),
            Fraction(0),
        )
        lhs = weighted / p0
        rhs = joint.conditional(lambda atom: atom.y0 == y, lambda atom: atom.a == 1)
        checks.append(IdentityCheck(f"{label}-weighted Pr(Y0={y}) law", lhs, rhs, tolerance))
    return checks


def verify_phi_identities(joint: DiscreteJoint, tolerance: float = 1e-12) -> IdentityReport:
    """
    Weighting identities for phi*(w, a) = I(a=1) + I(a=0) e(w)/(1 - e(w)).

    Checks E[phi*|A=1] = 1, E[phi*|A=0] = Pr(A=1)/Pr(A=0), covariate
    balance phi(w,0) Pr(W=w|A=0) = Pr(W=w|A=1) at every w, and that the
    weighted law of Y0 among the unexposed equals its law among the
    exposed. The last check holds only under exchangeability given W.

    Raises:
        PositivityError: If e(w) is 0 or 1 on the support
    """
    return IdentityReport("phi identities", _weighting_checks(joint, _by_w, "phi", tolerance))


def verify_gamma_identities(joint: DiscreteJoint, tolerance: float = 1e-12) -> IdentityReport:
    """
    The same identities for gamma weights built on e*(v), with V = W or '*'.

    Raises:
        PositivityError: If e*(v) is 0 or 1 on the support
    """
    return IdentityReport(
        "gamma identities", _weighting_checks(joint, _by_v, "gamma", tolerance)
    )


def random_joint(rng: RngStream, n_w: int = 4, outcome_on: str = "w") -> DiscreteJoint:
    """
    Random joint over w in 0..n_w-1, r, a, y0, y1.

    ``outcome_on`` selects what the exposure and counterfactuals depend on:
    "w" gives exchangeability given W, "v" given V (exposure depends on the
    observed pattern only) and "a" makes Y0 depend on the exposure itself.
    """
    if outcome_on not in ("w", "v", "a"):
        raise ValueError(f"outcome_on must be 'w', 'v' or 'a', got {outcome_on!r}")
    g = rng.generator
    pw = g.dirichlet(np.ones(n_w))
    pr = g.uniform(0.1, 0.9, size=n_w)
    pa_w = g.uniform(0.1, 0.9, size=n_w)
    pa_v = g.uniform(0.1, 0.9, size=n_w + 1)
    py0 = g.uniform(0.1, 0.9, size=(n_w, 2, 2))
    py1 = g.uniform(0.1, 0.9, size=(n_w, 2))

    atoms: List[Atom] = []
    for w in range(n_w):
        for r in (0, 1):
            p_r = pr[w] if r == 1 else 1.0 - pr[w]
            if outcome_on == "v":
                e = pa_v[w] if r == 1 else pa_v[n_w]
            else:
                e = pa_w[w]
            for a in (0, 1):
                p_a = e if a == 1 else 1.0 - e
                q0 = py0[w, r if outcome_on == "v" else 0, a if outcome_on == "a" else 0]
                q1 = py1[w, r if outcome_on == "v" else 0]
                for y0 in (0, 1):
                    for y1 in (0, 1):
                        p_y = (q0 if y0 else 1.0 - q0) * (q1 if y1 else 1.0 - q1)
                        atoms.append(Atom(w, a, y0, y1, r, float(pw[w] * p_r * p_a * p_y)))
    return DiscreteJoint(atoms)


# ----------------------------------------------------------------------
# Counterexamples
# ----------------------------------------------------------------------


def _cells(cuts: Sequence[Fraction]) -> List[tuple]:
    """(label, lower, upper) cells of [0, 1) cut at ``cuts``."""
    bounds = [Fraction(0)] + list(cuts) + [Fraction(1)]
    return [
        (f"[{float(lo):g},{float(hi):g})", lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])
    ]


def appendix_b_joint() -> DiscreteJoint:
    """
    W, A ~ Bernoulli(1/2) independently; Y_a = I(eps < (1 + a)/10);
    Pr(R = 0) = 1/10 + Y/2 with Y = Y_A.
    """
    half = Fraction(1, 2)
    atoms: List[Atom] = []
    for label, lo, hi in _cells([Fraction(1, 10), Fraction(2, 10), Fraction(5, 10)]):
        width = hi - lo
        y0 = int(hi <= Fraction(1, 10))
        y1 = int(hi <= Fraction(2, 10))
        for w in (0, 1):
            for a in (0, 1):
                y = y1 if a == 1 else y0
                p_missing = Fraction(1, 10) + half * y
                for r in (0, 1):
                    p_r = p_missing if r == 0 else 1 - p_missing
                    atoms.append(Atom(w, a, y0, y1, r, half * half * width * p_r, label))
    return DiscreteJoint(atoms)


def appendix_b_mixture(a: int, u: Fraction = Fraction(1, 2)) -> Fraction:
    """
    Pr(eps <= u | A = a, R = 0) as a mixture over Y of Pr(eps <= u | a, y)
    with weights Pr(Y = y | A = a, R = 0) = (1 + 5y)[(1 + a)y + (9 - a)(1 - y)] / (15 + 5a).
    """
    total = Fraction(0)
    for y in (0, 1):
        threshold = Fraction(1 + a, 10)
        q = 1 - y + (-1) ** (1 - y) * min(threshold, u) / u
        cell_mass = Fraction((1 + a) * y, 10) + Fraction((9 - a) * (1 - y), 10)
        within = q * u / cell_mass
        weight = Fraction((1 + 5 * y) * ((1 + a) * y + (9 - a) * (1 - y)), 15 + 5 * a)
        total += within * weight
    return total


def _score_strata(joint: DiscreteJoint) -> Dict[Number, List[Hashable]]:
    strata: Dict[Number, List[Hashable]] = {}
    for level, e in joint.propensity(_by_v).items():
        strata.setdefault(e, []).append(level)
    return strata


def appendix_b_check() -> IdentityReport:
    """
    Balance of W without exchangeability given the generalised score.

    e*(V) is derived from the model (4/7 when W is missing, 16/33 when
    observed). Given e*(V) = 4/7, Pr(eps <= 1/2 | A = a) is 2/3 for a = 0
    and 3/4 for a = 1, both by exhaustive summation and by the mixture
    formula, while W stays balanced across A within every e*(V) stratum.
    """
    joint = appendix_b_joint()
    scores = joint.propensity(_by_v)
    checks = [
        IdentityCheck("e*(*)", scores[MISSING], Fraction(4, 7)),
        IdentityCheck("e*(w=0)", scores[0], Fraction(16, 33)),
        IdentityCheck("e*(w=1)", scores[1], Fraction(16, 33)),
    ]

    def eps_le_half(atom: Atom) -> bool:
        return atom.cell in ("[0,0.1)", "[0.1,0.2)", "[0.2,0.5)")

    expected = {0: Fraction(2, 3), 1: Fraction(3, 4)}
    summed: Dict[int, Number] = {}
    for a in (0, 1):
        summed[a] = joint.conditional(eps_le_half, lambda atom: atom.a == a and atom.r == 0)
        checks.append(IdentityCheck(f"Pr(eps<=0.5|A={a},e*=4/7)", summed[a], expected[a]))
        checks.append(
            IdentityCheck(f"mixture Pr(eps<=0.5|A={a},e*=4/7)", appendix_b_mixture(a), expected[a])
        )

    imbalance = Fraction(0)
    for e, levels in _score_strata(joint).items():
        in_stratum = set(levels)
        p_w = [
            joint.conditional(
                lambda atom: atom.w == 1, lambda atom: atom.a == a and atom.v in in_stratum
            )
            for a in (0, 1)
        ]
        imbalance = max(imbalance, abs(p_w[1] - p_w[0]))
    checks.append(IdentityCheck("W independent of A given e*(V)", imbalance, Fraction(0)))
    checks.append(
        IdentityCheck(
            "counterfactuals dependent on A given e*(V)",
            summed[1] - summed[0],
            Fraction(0),
            relation="ne",
        )
    )
    return IdentityReport("appendix B", checks)


def simulate_appendix_b(n: int, rng: RngStream) -> Dict[int, Dict[str, float]]:
    """
    Monte Carlo estimate of Pr(eps <= 1/2 | A = a, R = 0) for a = 0, 1.

    Returns:
        {a: {"estimate": p_hat, "n": stratum size}}
    """
    g = rng.generator
    a = g.integers(0, 2, size=n)
    eps = g.uniform(size=n)
    y = eps < (1.0 + a) / 10.0
    missing = g.uniform(size=n) < 0.1 + 0.5 * y
    result: Dict[int, Dict[str, float]] = {}
    for level in (0, 1):
        stratum = missing & (a == level)
        size = int(stratum.sum())
        result[level] = {
            "estimate": float(np.mean(eps[stratum] <= 0.5)) if size else float("nan"),
            "n": float(size),
        }
    return result


def appendix_c_joint() -> DiscreteJoint:
    """
    Pr(W = 1) = 1/2, Pr(R = 0) = 1/10, Pr(A = 1 | R) = 2(1 + R)/10 and
    Y = Y0 = Y1 = I(eps < (1 + 2R)/10).
    """
    half = Fraction(1, 2)
    atoms: List[Atom] = []
    for label, lo, hi in _cells([Fraction(1, 10), Fraction(3, 10)]):
        width = hi - lo
        for w in (0, 1):
            for r in (0, 1):
                p_r = Fraction(1, 10) if r == 0 else Fraction(9, 10)
                y = int(hi <= Fraction(1 + 2 * r, 10))
                e = Fraction(2 * (1 + r), 10)
                for a in (0, 1):
                    p_a = e if a == 1 else 1 - e
                    atoms.append(Atom(w, a, y, y, r, half * p_r * p_a * width, label))
    return DiscreteJoint(atoms)


def appendix_c_closed_form(a: int) -> Fraction:
    """(0.2^a 0.8^(1-a) 0.01 + 0.4^a 0.6^(1-a) 0.27) / (0.38^a 0.62^(1-a))."""
    lo = Fraction(2, 10) if a == 1 else Fraction(8, 10)
    hi = Fraction(4, 10) if a == 1 else Fraction(6, 10)
    e = Fraction(38, 100) if a == 1 else Fraction(62, 100)
    return (lo * Fraction(1, 100) + hi * Fraction(27, 100)) / e


def appendix_c_check() -> IdentityReport:
    """
    Exchangeability given the generalised score but not given e(W).

    e(w) = 0.38 for both w, e*(*) = 0.2 and e*(observed) = 0.4. Within
    each e*(V) stratum Pr(Y0 = 1 | A = a) does not depend on a, whereas
    Pr(Y0 = 1 | A = a, e(W) = 0.38) is 17/62 for a = 0 and 11/38 for a = 1.
    """
    joint = appendix_c_joint()
    checks: List[IdentityCheck] = []
    for w, e in joint.propensity(_by_w).items():
        checks.append(IdentityCheck(f"e(w={w})", e, Fraction(38, 100)))
    scores = joint.propensity(_by_v)
    checks.append(IdentityCheck("e*(*)", scores[MISSING], Fraction(2, 10)))
    for w in (0, 1):
        checks.append(IdentityCheck(f"e*(w={w})", scores[w], Fraction(4, 10)))

    stratum_rates = {Fraction(2, 10): Fraction(1, 10), Fraction(4, 10): Fraction(3, 10)}
    for e, levels in _score_strata(joint).items():
        in_stratum = set(levels)
        for a in (0, 1):
            rate = joint.conditional(
                lambda atom: atom.y0 == 1, lambda atom: atom.a == a and atom.v in in_stratum
            )
            checks.append(
                IdentityCheck(f"Pr(Y0=1|A={a},e*={float(e):g})", rate, stratum_rates[e])
            )

    by_a: Dict[int, Number] = {}
    expected = {0: Fraction(17, 62), 1: Fraction(11, 38)}
    for a in (0, 1):
        by_a[a] = joint.conditional(lambda atom: atom.y0 == 1, lambda atom: atom.a == a)
        checks.append(IdentityCheck(f"Pr(Y0=1|A={a},e=0.38)", by_a[a], expected[a]))
        checks.append(
            IdentityCheck(f"closed form Pr(Y0=1|A={a},e=0.38)", appendix_c_closed_form(a), by_a[a])
        )
    checks.append(
        IdentityCheck(
            "Y0 dependent on A given e(W)", by_a[1] - by_a[0], Fraction(0), relation="ne"
        )
    )
    return IdentityReport("appendix C", checks)


def verify_all(rng: Optional[RngStream] = None, n_random: int = 100) -> List[IdentityReport]:
    """Both counterexamples plus the weighting identities on ``n_random`` random joints."""
    rng = rng or RngStream(0)
    reports = [appendix_b_check(), appendix_c_check()]
    phi_checks: List[IdentityCheck] = []
    gamma_checks: List[IdentityCheck] = []
    for k in range(n_random):
        phi_checks.extend(verify_phi_identities(random_joint(rng.substream("phi", k))).checks)
        gamma_checks.extend(
            verify_gamma_identities(random_joint(rng.substream("gamma", k), outcome_on="v")).checks
        )
    reports.append(IdentityReport(f"phi identities ({n_random} random joints)", phi_checks))
    reports.append(IdentityReport(f"gamma identities ({n_random} random joints)", gamma_checks))
    failed = sum(not r.passed for r in reports)
    logger.info(f"Verified {len(reports)} identity reports, {failed} failed")
    return reports
