"""SDE-with-switching problem definitions, assumption probes and the built-in
catalog.

Coefficient callables are vectorised: ``x`` has shape ``(..., d)`` and
``regime`` is an integer array broadcastable to ``x.shape[:-1]``. They return

* drift ``b``: ``(..., d)``
* diffusion ``sigma``: ``(..., d, m)`` (column ``l`` is ``sigma_(l)``)
* diffusion Jacobians: ``(..., m, d, d)`` (entry ``l`` is ``D sigma_(l)``)
* drift Jacobian: ``(..., d, d)``
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .chain import GeneratorMatrix, validate_generator
from .noise import prefix_sums

PROBE_BOX = 10.0
FD_TOL = 1e-6
# relative allowance for rounding when a declared constant is met with equality
RATIO_SLACK = 1e-9


@dataclass(frozen=True)
class SdewmsProblem:
    name: str
    dim_x: int
    dim_w: int
    generator: GeneratorMatrix
    drift: Callable
    diffusion: Callable
    diffusion_jacobian: Callable
    drift_jacobian: Callable
    x0: np.ndarray
    lipschitz: float
    # Lipschitz constant of the Jacobians of b and sigma_(l)
    curvature: float
    horizon: float = 1.0
    initial_regime: int = 0
    closed_form: Optional[Callable] = None
    initial_law: Optional[Callable] = None
    description: str = ""
    params: dict = field(default_factory=dict, compare=False)

    @property
    def regimes(self):
        return self.generator.states

    def diffusion_column(self, x, regime, l):
        return self.diffusion(x, regime)[..., l]

    def sample_initial(self, stream=None):
        if self.initial_law is None:
            return np.array(self.x0, dtype=float)
        return np.asarray(self.initial_law(stream), dtype=float)

    def with_generator(self, raw):
        gen = raw if isinstance(raw, GeneratorMatrix) else validate_generator(raw)
        if gen.states != self.regimes:
            raise ValueError(f"{self.name} needs a {self.regimes}-state generator, got {gen.states}")
        return replace(self, generator=gen)


# ---------------------------------------------------------------- linear models


def _linear_coefficients(drift_mats, diff_mats):
    """Coefficients for ``b(x, i) = A_i x`` and ``sigma_(l)(x, i) = B_{i,l} x``.

    ``drift_mats`` has shape (m0, d, d), ``diff_mats`` (m0, m, d, d).
    """
    A = np.asarray(drift_mats, dtype=float)
    B = np.asarray(diff_mats, dtype=float)

    def drift(x, regime):
        return np.einsum("...ij,...j->...i", A[regime], x)

    def diffusion(x, regime):
        return np.einsum("...lij,...j->...il", B[regime], x)

    def diffusion_jacobian(x, regime):
        r = np.asarray(regime)
        return np.broadcast_to(B[r], np.shape(x)[:-1] + B.shape[1:])

    def drift_jacobian(x, regime):
        r = np.asarray(regime)
        return np.broadcast_to(A[r], np.shape(x)[:-1] + A.shape[1:])

    return drift, diffusion, diffusion_jacobian, drift_jacobian


def _linear_lipschitz(A, B):
    """An L covering the Lipschitz, product-Lipschitz and growth bounds of a linear model
    (Frobenius norms, which dominate the operator norms)."""
    consts = [0.0]
    for Ai, Bi in zip(A, B):
        consts.append(np.linalg.norm(Ai))
        consts.append(np.sqrt(sum(np.linalg.norm(Bl) ** 2 for Bl in Bi)))
        for Bl in Bi:
            for Bl1 in Bi:
                consts.append(np.linalg.norm(Bl @ Bl1))
    return float(max(consts))


def scalar_gbm_closed_form(a, s):
    """Exact solution of the switching GBM ``dX = a_i X dt + s_i X dW``,
    conditional on the chain and Brownian path: log-increments are summed
    over grid cells, each of which lies inside one chain segment."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)

    def evaluate(chain, noise, x0, times=None):
        pts = noise.grid.points
        widths = np.diff(pts)
        regime = chain.state_at(pts[:-1])
        dw = noise.increments[:, 0]
        logs = prefix_sums((a[regime] - 0.5 * s[regime] ** 2) * widths + s[regime] * dw)
        values = (np.asarray(x0, dtype=float)[0] * np.exp(logs)).astype(float)
        if times is not None:
            values = values[[noise.grid.index_of(t) for t in np.atleast_1d(times)]]
        return values[:, None]

    return evaluate


def linear_problem(name, generator, drift_mats, diff_mats, x0, horizon=1.0, closed_form=None, description="",
                   lipschitz=None, **params):
    A = np.asarray(drift_mats, dtype=float)
    B = np.asarray(diff_mats, dtype=float)
    gen = validate_generator(generator)
    if A.shape[0] != gen.states or B.shape[0] != gen.states:
        raise ValueError("one coefficient matrix per regime is required")
    drift, diffusion, djac, bjac = _linear_coefficients(A, B)
    return SdewmsProblem(
        name=name,
        dim_x=A.shape[1],
        dim_w=B.shape[1],
        generator=gen,
        drift=drift,
        diffusion=diffusion,
        diffusion_jacobian=djac,
        drift_jacobian=bjac,
        x0=np.atleast_1d(np.asarray(x0, dtype=float)),
        lipschitz=_linear_lipschitz(A, B) if lipschitz is None else float(lipschitz),
        curvature=0.0,
        horizon=float(horizon),
        closed_form=closed_form,
        description=description,
        params=dict(params, drift_mats=A.tolist(), diff_mats=B.tolist()),
    )


def switching_gbm(a=(0.5, -0.5), s=(0.4, 0.8), x0=1.0, horizon=1.0, generator=((-1.0, 1.0), (1.0, -1.0)),
                  name="p1_switching_gbm"):
    """P1: ``dX = a_i X dt + s_i X dW`` with regimes driven by the chain."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return linear_problem(
        name,
        generator,
        a[:, None, None],
        s[:, None, None, None],
        [x0],
        horizon=horizon,
        closed_form=scalar_gbm_closed_form(a, s),
        description="1D switching geometric Brownian motion",
        a=a.tolist(),
        s=s.tolist(),
    )


def single_regime_gbm(a=0.3, s=0.5, x0=1.0, horizon=1.0):
    """P3: classical GBM, a one-state chain."""
    return switching_gbm((a,), (s,), x0, horizon, generator=[[0.0]], name="p3_single_regime")


P2_DRIFT = [
    [[-0.5, 0.3], [0.2, -0.4]],
    [[0.2, -0.1], [0.4, 0.1]],
]
P2_DIFFUSION = [
    [[[0.3, 0.0], [0.1, 0.2]], [[0.0, 0.25], [-0.2, 0.1]]],
    [[[0.6, 0.1], [0.0, 0.3]], [[0.1, -0.3], [0.4, 0.0]]],
]


def noncommutative_linear(drift_mats=P2_DRIFT, diff_mats=P2_DIFFUSION, x0=(1.0, 0.5), horizon=1.0,
                          generator=((-1.5, 1.5), (1.0, -1.0))):
    """P2: 2D linear model whose noise columns do not commute, so Levy areas
    enter the Milstein correction."""
    return linear_problem(
        "p2_noncommutative",
        generator,
        drift_mats,
        diff_mats,
        x0,
        horizon=horizon,
        description="2D linear model with non-commuting diffusion columns",
    )


def additive_switching(theta=(1.0, 2.0), mu=(1.0, -1.0), kappa=0.5, c=(0.2, 1.0), x0=0.0, horizon=1.0,
                       generator=((-1.0, 1.0), (1.0, -1.0))):
    """P4: ``dX = (theta_i (mu_i - X) + kappa sin X) dt + c_i dW``.

    The diffusion Jacobian vanishes, so only the switching correction
    separates the Milstein step from Euler-Maruyama.
    """
    theta, mu, c = (np.asarray(v, dtype=float) for v in (theta, mu, c))
    kappa = float(kappa)

    def drift(x, regime):
        r = np.asarray(regime)[..., None]
        return theta[r] * (mu[r] - x) + kappa * np.sin(x)

    def diffusion(x, regime):
        r = np.asarray(regime)
        return np.broadcast_to(c[r][..., None, None], np.shape(x)[:-1] + (1, 1)).copy()

    def diffusion_jacobian(x, regime):
        return np.zeros(np.shape(x)[:-1] + (1, 1, 1))

    def drift_jacobian(x, regime):
        r = np.asarray(regime)[..., None]
        return (-theta[r] + kappa * np.cos(x))[..., None]

    lip = max(float(np.max(theta)) + kappa, float(np.max(theta * np.abs(mu))) + kappa, float(np.max(c)))
    return SdewmsProblem(
        name="p4_additive",
        dim_x=1,
        dim_w=1,
        generator=validate_generator(generator),
        drift=drift,
        diffusion=diffusion,
        diffusion_jacobian=diffusion_jacobian,
        drift_jacobian=drift_jacobian,
        x0=np.array([x0], dtype=float),
        lipschitz=lip,
        curvature=kappa,
        horizon=float(horizon),
        description="additive-noise switching model with nonlinear drift",
        params=dict(theta=theta.tolist(), mu=mu.tolist(), kappa=kappa, c=c.tolist()),
    )


CATALOG = {
    "p1_switching_gbm": switching_gbm,
    "p2_noncommutative": noncommutative_linear,
    "p3_single_regime": single_regime_gbm,
    "p4_additive": additive_switching,
}


def builtin_catalog():
    return [make() for make in CATALOG.values()]


def get_problem(name, **overrides):
    try:
        make = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
    return make(**overrides)


# ----------------------------------------------------------- assumption probes


@dataclass
class CheckResult:
    worst: float
    bound: float

    @property
    def passed(self):
        return self.worst <= self.bound * (1 + RATIO_SLACK)


@dataclass
class ValidationReport:
    problem: str
    probes: int
    box: float
    checks: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def failures(self):
        return [k for k, c in self.checks.items() if not c.passed]

    def rows(self):
        return [(k, c.worst, c.bound, c.passed) for k, c in self.checks.items()]


def _norm(a, axes):
    return np.sqrt(np.sum(a * a, axis=axes))


def _milstein_products(p, x, regime):
    """``D sigma_(l) sigma_(l1)`` for all (l, l1): shape (..., m, m, d)."""
    sig = p.diffusion(x, regime)
    jac = p.diffusion_jacobian(x, regime)
    return np.einsum("...lij,...jk->...lki", jac, sig)


def _central_jacobian(f, x, regime, out_shape):
    """Central finite differences of ``f`` w.r.t. ``x``; last axis is d/dx_j."""
    d = x.shape[-1]
    cols = []
    for j in range(d):
        step = 1e-4 * np.maximum(1.0, np.abs(x[..., j]))
        e = np.zeros_like(x)
        e[..., j] = step
        cols.append((f(x + e, regime) - f(x - e, regime)) / (2 * step.reshape(step.shape + (1,) * len(out_shape))))
    return np.stack(cols, axis=-1)


def validate_problem(p, probes, stream, box=PROBE_BOX):
    """Probe the Lipschitz conditions (coefficients, Jacobians and the products
    ``D sigma_(l) sigma_(l1)``), the linear-growth bound and Jacobian consistency on
    ``probes`` random pairs per regime in ``[-box, box]^d``. Report only."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    d, m = p.dim_x, p.dim_w
    L = p.lipschitz
    worst = dict.fromkeys(
        ["lipschitz_drift", "lipschitz_diffusion", "lipschitz_drift_jacobian", "lipschitz_diffusion_jacobian",
         "lipschitz_milstein_product", "linear_growth", "jacobian_consistency"], 0.0)
    for i0 in range(p.regimes):
        x = stream.uniform(-box, box, (probes, d))
        y = stream.uniform(-box, box, (probes, d))
        r = np.full(probes, i0)
        dist = _norm(x - y, -1)
        ok = dist > 0
        dist = np.where(ok, dist, 1.0)

        def ratio(fx, fy, axes):
            gap = _norm(fx - fy, axes).reshape(probes, -1).max(axis=1)
            return float(np.max(np.where(ok, gap / dist, 0.0)))

        worst["lipschitz_drift"] = max(worst["lipschitz_drift"], ratio(p.drift(x, r), p.drift(y, r), -1))
        worst["lipschitz_diffusion"] = max(worst["lipschitz_diffusion"],
                                           ratio(p.diffusion(x, r), p.diffusion(y, r), (-2, -1)))
        worst["lipschitz_drift_jacobian"] = max(worst["lipschitz_drift_jacobian"],
                                                ratio(p.drift_jacobian(x, r), p.drift_jacobian(y, r), (-2, -1)))
        worst["lipschitz_diffusion_jacobian"] = max(
            worst["lipschitz_diffusion_jacobian"],
            ratio(p.diffusion_jacobian(x, r), p.diffusion_jacobian(y, r), (-2, -1)))
        worst["lipschitz_milstein_product"] = max(
            worst["lipschitz_milstein_product"],
            ratio(_milstein_products(p, x, r), _milstein_products(p, y, r), -1))

        growth = np.maximum(_norm(p.drift(x, r), -1), _norm(p.diffusion(x, r), (-2, -1))) / (1 + _norm(x, -1))
        worst["linear_growth"] = max(worst["linear_growth"], float(growth.max()))

        scale = np.maximum(FD_TOL, FD_TOL * _norm(x, -1))
        fd_sig = _central_jacobian(p.diffusion, x, r, (d, m))            # (..., d, m, d)
        jac_sig = np.moveaxis(p.diffusion_jacobian(x, r), -3, -2)       # (..., d, m, d)
        fd_b = _central_jacobian(p.drift, x, r, (d,))
        err = np.maximum(np.max(np.abs(fd_sig - jac_sig), axis=(-3, -2, -1)),
                         np.max(np.abs(fd_b - p.drift_jacobian(x, r)), axis=(-2, -1)))
        worst["jacobian_consistency"] = max(worst["jacobian_consistency"], float(np.max(err / scale)))

    checks = {k: CheckResult(v, 1.0 if k == "jacobian_consistency" else L) for k, v in worst.items()}
    return ValidationReport(p.name, probes, box, checks)


def taylor_remainders(p, pairs, stream, box=PROBE_BOX):
    """First-order Taylor remainder of every coefficient on random pairs.

    Returns ``(remainder, bound, rounding)`` arrays over pairs, regimes and
    coefficients where ``bound = curvature * |x - x~|^2`` and ``rounding`` is
    a floating-point allowance proportional to the magnitudes involved.
    """
    eps = np.finfo(float).eps
    rem, bound, rnd = [], [], []
    for i0 in range(p.regimes):
        x = stream.uniform(-box, box, (pairs, p.dim_x))
        xt = stream.uniform(-box, box, (pairs, p.dim_x))
        r = np.full(pairs, i0)
        dx = x - xt
        sq = np.sum(dx * dx, axis=-1)
        fx, ft = p.drift(x, r), p.drift(xt, r)
        lin = np.einsum("...ij,...j->...i", p.drift_jacobian(xt, r), dx)
        coeffs = [(fx, ft, lin)]
        sx, st = p.diffusion(x, r), p.diffusion(xt, r)
        jac = p.diffusion_jacobian(xt, r)
        for l in range(p.dim_w):
            coeffs.append((sx[..., l], st[..., l], np.einsum("...ij,...j->...i", jac[..., l, :, :], dx)))
        for a, b, c in coeffs:
            rem.append(_norm(a - b - c, -1))
            bound.append(p.curvature * sq)
            rnd.append(16 * eps * (_norm(a, -1) + _norm(b, -1) + _norm(c, -1)))
    return np.concatenate(rem), np.concatenate(bound), np.concatenate(rnd)
