"""Brute-force robust-risk quantities on a lattice inside the L-infinity ball.

Everything here is restricted to the grid: "there exists x' in the ball" means
"some lattice point in the ball".  The worst-case map z(x) is chosen on the
same lattice, so the inequalities checked below are statements about one
internally consistent finite world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import MlpSpec, ModelParams, init, logits_of, predict_logits, softmax_np

GRID_BUDGET = 10 ** 7
SLACK = 1e-12
TIE_TOL = 1e-9


class GridBudgetError(RuntimeError):
    pass


@dataclass
class GridBall:
    center: np.ndarray
    epsilon: float
    points_per_axis: int
    box: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).ravel()
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        check_budget(self.center.size, self.points_per_axis)

    def axes(self):
        out = []
        for c in self.center:
            if self.epsilon == 0:
                vals = np.array([c])
            else:
                vals = np.linspace(c - self.epsilon, c + self.epsilon, self.points_per_axis)
                vals = np.clip(vals, c - self.epsilon, c + self.epsilon)
                if self.points_per_axis % 2:
                    vals[self.points_per_axis // 2] = c
                else:
                    vals = np.sort(np.append(vals, c))
            if self.box is not None:
                vals = vals[(vals >= self.box[0]) & (vals <= self.box[1])]
            out.append(vals)
        return out

    def points(self):
        """Lattice points in lexicographic scan order (first axis slowest)."""
        axes = self.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def check_budget(dim, points_per_axis):
    if points_per_axis ** dim > GRID_BUDGET:
        raise GridBudgetError(
            f"grid of {points_per_axis}^{dim} points exceeds the budget of {GRID_BUDGET} evaluations")


def random_model(dim, num_classes, hidden, rng, bias_sd=0.5):
    """He-initialised MLP with Gaussian biases, for randomized bound trials.

    Zero biases leave a cone where every hidden unit is off and all logits are
    exactly 0, so exact probability ties would occur with positive probability.
    """
    spec = MlpSpec(dim, tuple(hidden), num_classes, seed=int(rng.integers(2 ** 31)))
    base = init(spec)
    layers = [(w, rng.normal(0.0, bias_sd, size=b.shape)) for w, b in base.layers]
    return ModelParams(spec, layers)


def random_trials(trials, dim, classes, hidden, samples, epsilon_max, rng, epsilon=None):
    """Yield ``(params, x, y, epsilon)`` for randomized bound checks.

    The class count cycles through ``classes``; inputs are uniform on the unit
    box and labels uniform over the classes.
    """
    for t in range(trials):
        c = int(classes[t % len(classes)])
        params = random_model(dim, c, hidden, rng)
        x = rng.uniform(0.0, 1.0, size=(samples, dim))
        y = rng.integers(0, c, size=samples)
        eps = float(epsilon) if epsilon is not None else float(rng.uniform(0.0, epsilon_max))
        yield params, x, y, eps


def worst_case_z(params, ball):
    """First scanned lattice point whose prediction differs from the center's."""
    center = ball.center[None, :]
    base = predict_logits(logits_of(params, center))[0]
    pts = ball.points()
    flips = predict_logits(logits_of(params, pts)) != base
    if np.any(flips):
        return pts[int(np.argmax(flips))]
    return ball.center.copy()


@dataclass
class SampleRecord:
    index: int
    label: int
    pred_clean: int
    z: list
    pred_z: int
    p_label_z: float
    p_label_clean: float
    robust_error: int
    natural_error: int
    boundary_error: int
    flip: int
    label_prob_below_half_at_z: int
    lemma2_lhs: int
    lemma2_rhs: int
    theorem1_row_rhs: int
    theorem2_row_rhs: float
    max_prob_z: float


@dataclass
class RiskReport:
    n: int
    epsilon: float
    points_per_axis: int
    robust_count: int
    natural_count: int
    boundary_count: int
    theorem1_rhs_count: int
    theorem2_rhs_sum: float
    records: list = field(default_factory=list)

    @property
    def robust_risk(self):
        return self.robust_count / self.n

    @property
    def natural_risk(self):
        return self.natural_count / self.n

    @property
    def boundary_risk(self):
        return self.boundary_count / self.n

    @property
    def theorem1_rhs(self):
        return self.theorem1_rhs_count / self.n

    @property
    def theorem2_rhs(self):
        return self.theorem2_rhs_sum / self.n

    def aggregates(self):
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "points_per_axis": self.points_per_axis,
            "robust_risk": self.robust_risk,
            "natural_risk": self.natural_risk,
            "boundary_risk": self.boundary_risk,
            "theorem1_rhs": self.theorem1_rhs,
            "theorem2_rhs": self.theorem2_rhs,
        }


def _scan(params, x, y, epsilon, points_per_axis, box):
    ball = GridBall(x, epsilon, points_per_axis, box)
    pts = ball.points()
    logits = logits_of(params, np.vstack([ball.center[None, :], pts]))
    preds = predict_logits(logits)
    base, grid_preds = preds[0], preds[1:]
    flips = grid_preds != base
    if np.any(flips):
        k = int(np.argmax(flips))
        z, z_logits = pts[k], logits[1 + k]
    else:
        z, z_logits = ball.center.copy(), logits[0]
    p_clean = softmax_np(logits[:1])[0]
    p_z = softmax_np(z_logits[None, :])[0]
    return {
        "pred_clean": int(base),
        "any_flip": bool(np.any(flips)),
        "any_wrong": bool(base != y or np.any(grid_preds != y)),
        "z": z,
        "pred_z": int(predict_logits(z_logits[None, :])[0]),
        "p_label_clean": float(p_clean[y]),
        "p_label_z": float(p_z[y]),
        "max_prob_z": float(p_z.max()),
    }


def empirical_risks(params, inputs, labels, epsilon, points_per_axis, box=(0.0, 1.0)):
    """Grid-restricted robust, natural and boundary risks with per-row detail."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    check_budget(inputs.shape[1], points_per_axis)
    counts = dict(rob=0, nat=0, bdy=0, t1=0)
    t2 = 0.0
    records = []
    for i, (x, y) in enumerate(zip(inputs, labels)):
        s = _scan(params, x, int(y), epsilon, points_per_axis, box)
        nat = int(s["pred_clean"] != y)
        bdy = int(s["pred_clean"] == y and s["any_flip"])
        rob = int(s["any_wrong"])
        flip = int(s["pred_clean"] != s["pred_z"])
        below = int(s["p_label_z"] < 0.5)
        lem_lhs = bdy
        lem_rhs = int(flip and y != s["pred_z"])
        t1_row = nat + flip * below
        t2_row = nat + 2.0 * flip * s["p_label_clean"]
        counts["rob"] += rob
        counts["nat"] += nat
        counts["bdy"] += bdy
        counts["t1"] += t1_row
        t2 += t2_row
        records.append(SampleRecord(
            index=i, label=int(y), pred_clean=s["pred_clean"], z=s["z"].tolist(),
            pred_z=s["pred_z"], p_label_z=s["p_label_z"], p_label_clean=s["p_label_clean"],
            robust_error=rob, natural_error=nat, boundary_error=bdy, flip=flip,
            label_prob_below_half_at_z=below, lemma2_lhs=lem_lhs, lemma2_rhs=lem_rhs,
            theorem1_row_rhs=t1_row, theorem2_row_rhs=t2_row, max_prob_z=s["max_prob_z"],
        ))
    if counts["rob"] != counts["nat"] + counts["bdy"]:
        raise AssertionError(
            f"risk decomposition failed: robust {counts['rob']} != natural {counts['nat']} "
            f"+ boundary {counts['bdy']}")
    return RiskReport(len(labels), float(epsilon), points_per_axis, counts["rob"], counts["nat"],
                      counts["bdy"], counts["t1"], t2, records)


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    report: RiskReport


def theorem1_check(params, inputs, labels, epsilon, points_per_axis, box=(0.0, 1.0), report=None):
    """Robust risk <= natural risk + E[flip(z) * 1{p(y|z) < 1/2}]."""
    r = report or empirical_risks(params, inputs, labels, epsilon, points_per_axis, box)
    return BoundCheck(r.robust_risk, r.theorem1_rhs, r.robust_risk <= r.theorem1_rhs + SLACK, r)


def theorem2_check(params, inputs, labels, epsilon, points_per_axis, box=(0.0, 1.0), report=None):
    """Robust risk <= natural risk + 2 E[flip(z) * p(y|x)]."""
    r = report or empirical_risks(params, inputs, labels, epsilon, points_per_axis, box)
    return BoundCheck(r.robust_risk, r.theorem2_rhs, r.robust_risk <= r.theorem2_rhs + SLACK, r)


def lemma2_check(params, x, y, epsilon, points_per_axis, box=(0.0, 1.0)):
    """1{exists flip, F(x) = y} <= 1{F(x) != F(z), y != F(z)} for one sample."""
    s = _scan(params, np.asarray(x, dtype=np.float64), int(y), epsilon, points_per_axis, box)
    lhs = int(s["pred_clean"] == y and s["any_flip"])
    rhs = int(s["pred_clean"] != s["pred_z"] and y != s["pred_z"])
    return lhs <= rhs


def binary_exactness_audit(report, tie_tol=TIE_TOL):
    """Rows where the Theorem 1 row bound is not tight, excluding near-ties at z.

    Returns ``(checked, mismatches, excluded)``; only meaningful for C = 2.
    """
    checked = excluded = 0
    mismatches = []
    for rec in report.records:
        if abs(rec.max_prob_z - 0.5) < tie_tol:
            excluded += 1
            continue
        checked += 1
        if rec.robust_error != rec.theorem1_row_rhs:
            mismatches.append(rec.index)
    return checked, mismatches, excluded
