"""Monte Carlo strong-error experiments, chain jump statistics and moment
checks.

Each path samples its chain once and its Brownian increments once on the
merged fine grid; every step size and scheme is then run on coarsenings of
that same driving path and compared with a reference on the same
probability space.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chain import sample_chain_path
from .errors import PlanInvalid, StepTooLarge
from .noise import DIVIDE_TOL, build_merged_grid, sample_noise
from .rng import make_stream, path_streams
from .scheme import LevelInputs, scheme_name, simulate_batch

REFERENCE_REFINEMENT = 64
BATCH_BYTES = 512 * 2**20
MAX_BATCH = 256


def _divides(big, small):
    k = round(big / small)
    return k >= 1 and abs(k * small - big) <= DIVIDE_TOL * big


@dataclass
class ExperimentPlan:
    problem: object
    steps: tuple
    n_paths: int
    seed: int = 0
    schemes: tuple = ("milstein",)
    reference: str = "auto"
    h_ref: float = None
    batch_size: int = None
    threads: int = 1

    def __post_init__(self):
        self.steps = tuple(float(h) for h in self.steps)
        self.schemes = tuple(scheme_name(s) for s in self.schemes)

    @property
    def reference_mode(self):
        if self.reference == "auto":
            return "closed_form" if self.problem.closed_form is not None else "fine_milstein"
        return self.reference

    @property
    def fine_step(self):
        """Step of the fine grid; defaults to the finest h over 64."""
        return float(self.h_ref) if self.h_ref is not None else self.steps[-1] / REFERENCE_REFINEMENT

    def validate(self):
        """Raise on an inconsistent plan; return warnings for steps in
        ``[1/(2q), 1/q)``."""
        p = self.problem
        if self.n_paths < 2:
            raise PlanInvalid("n_paths must be at least 2")
        if not self.steps:
            raise PlanInvalid("at least one step size is required")
        if not self.schemes:
            raise PlanInvalid("at least one scheme is required")
        if self.reference_mode not in ("closed_form", "fine_milstein"):
            raise PlanInvalid(f"unknown reference mode {self.reference!r}")
        if self.reference_mode == "closed_form" and p.closed_form is None:
            raise PlanInvalid(f"{p.name} has no closed-form solution")
        if any(b >= a for a, b in zip(self.steps, self.steps[1:])):
            raise PlanInvalid("steps must be strictly decreasing")
        for h in self.steps:
            if h <= 0 or not _divides(p.horizon, h):
                raise PlanInvalid(f"step {h!r} does not divide the horizon {p.horizon!r}")
        for coarse, fine in zip(self.steps, self.steps[1:]):
            if not _divides(coarse, fine):
                raise PlanInvalid(f"steps {coarse!r} and {fine!r} are not nested")
        if self.fine_step > self.steps[-1] or not _divides(self.steps[-1], self.fine_step):
            raise PlanInvalid(f"h_ref {self.fine_step!r} must divide the finest step {self.steps[-1]!r}")
        q = p.generator.max_rate
        notes = []
        for h in self.steps:
            if h * q >= 1.0:
                raise StepTooLarge(f"step {h!r} violates h < 1/q = {1.0 / q!r}")
            if 2.0 * h * q >= 1.0:
                notes.append(f"step {h!r} is not below 1/(2q) = {0.5 / q!r}; order-one bound not guaranteed")
        return notes

    def resolved_batch_size(self):
        if self.batch_size:
            return int(self.batch_size)
        p = self.problem
        m, d = p.dim_w, p.dim_x
        n_fine = round(p.horizon / self.fine_step)
        per_step = 8 * (m * (3 + m) + 2 * d + 3) + 8 * m
        return max(1, min(MAX_BATCH, self.n_paths, BATCH_BYTES // (n_fine * per_step)))


@dataclass
class _BatchResult:
    sup_sq_error: dict
    sup_sq_value: dict
    ref_sup_sq: np.ndarray
    modulus: dict
    seconds: dict


def _drivers(plan, index):
    p = plan.problem
    chain_stream, noise_stream, init_stream = path_streams(plan.seed, index)
    chain = sample_chain_path(p.generator, p.initial_regime, p.horizon, chain_stream)
    noise = sample_noise(build_merged_grid(p.horizon, plan.fine_step, chain), p.dim_w, noise_stream)
    return chain, noise, p.sample_initial(init_stream)


def _reference(plan, drivers, x0):
    """Reference solution at the uniform fine nodes, shape ``(B, n_fine+1, d)``."""
    p = plan.problem
    if plan.reference_mode == "closed_form":
        return np.stack([p.closed_form(c, n, x)[n.grid.node_index] for (c, n, x) in drivers])
    level = LevelInputs.stack([LevelInputs.from_path(c, n, plan.fine_step) for (c, n, _) in drivers])
    return simulate_batch(p, "milstein", level, x0)


def _run_batch(plan, start, stop):
    p = plan.problem
    clock = time.perf_counter
    t0 = clock()
    drivers = [_drivers(plan, i) for i in range(start, stop)]
    x0 = np.stack([x for (_, _, x) in drivers])
    ref = _reference(plan, drivers, x0)
    seconds = {"reference": clock() - t0}
    sup_err, sup_val, modulus = {}, {}, {}
    for h in plan.steps:
        r = round(h / plan.fine_step)
        n = round(p.horizon / h)
        x_nodes = ref[:, ::r]
        t1 = clock()
        level = LevelInputs.stack([LevelInputs.from_path(c, nz, h) for (c, nz, _) in drivers])
        prep = clock() - t1
        for kind in plan.schemes:
            t2 = clock()
            y = simulate_batch(p, kind, level, x0)
            sup_err[kind, h] = np.max(np.sum((x_nodes - y) ** 2, axis=-1), axis=1)
            sup_val[kind, h] = np.max(np.sum(y * y, axis=-1), axis=1)
            seconds[kind, h] = clock() - t2 + prep / len(plan.schemes)
        inside = ref[:, 1:].reshape(len(drivers), n, r, p.dim_x)
        base = ref[:, :-1:r][:, :, None, :]
        modulus[h] = np.mean(np.max(np.sum((inside - base) ** 2, axis=-1), axis=-1), axis=-1)
    ref_sup = np.max(np.sum(ref * ref, axis=-1), axis=1)
    return _BatchResult(sup_err, sup_val, ref_sup, modulus, seconds)


def _simulate(plan):
    notes = plan.validate()
    size = plan.resolved_batch_size()
    bounds = [(s, min(s + size, plan.n_paths)) for s in range(0, plan.n_paths, size)]
    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            parts = list(pool.map(lambda b: _run_batch(plan, *b), bounds))
    else:
        parts = [_run_batch(plan, *b) for b in bounds]

    def joined(attr):
        first = getattr(parts[0], attr)
        return {k: np.concatenate([getattr(b, attr)[k] for b in parts]) for k in first}

    seconds = {}
    for b in parts:
        for k, v in b.seconds.items():
            seconds[k] = seconds.get(k, 0.0) + v
    return (joined("sup_sq_error"), joined("sup_sq_value"), np.concatenate([b.ref_sup_sq for b in parts]),
            joined("modulus"), seconds, notes)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


# ------------------------------------------------------------ order fitting


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float


def fit_order(h, values, level=0.95):
    """OLS slope of ``log2(values)`` against ``log2(h)`` with a t-based CI."""
    x = np.log2(np.asarray(h, dtype=float))
    y = np.log2(np.asarray(values, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two points to fit an order")
    fit = stats.linregress(x, y)
    if x.size > 2:
        half = stats.t.ppf(0.5 + level / 2, x.size - 2) * fit.stderr
    else:
        half = float("nan")
    return OrderFit(float(fit.slope), float(fit.intercept), float(fit.stderr),
                    float(fit.slope - half), float(fit.slope + half))


# ---------------------------------------------------------- strong error


@dataclass(frozen=True)
class ErrorEstimate:
    scheme: str
    h: float
    n_paths: int
    mean_sup_sq_error: float
    std_err: float
    wall_ms: float

    @property
    def rms_error(self):
        return math.sqrt(self.mean_sup_sq_error)

    @property
    def rms_std_err(self):
        """Delta-method standard error of the RMS error."""
        return self.std_err / (2 * self.rms_error) if self.rms_error > 0 else 0.0


@dataclass
class ConvergenceReport:
    problem: str
    reference: str
    seed: int
    h_ref: float
    estimates: list
    fits: dict
    notes: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def estimates_for(self, scheme):
        return [e for e in self.estimates if e.scheme == scheme]

    def slope(self, scheme):
        return self.fits[scheme].slope

    def summary(self):
        return {
            "problem": self.problem,
            "reference": self.reference,
            "seed": self.seed,
            "h_ref": self.h_ref,
            "slopes": {
                s: {"slope": f.slope, "stderr": f.stderr, "ci95": [f.ci_low, f.ci_high], "intercept": f.intercept}
                for s, f in self.fits.items()
            },
            "notes": list(self.notes),
            "diagnostics": list(self.diagnostics),
        }


def _diagnostics(estimates, schemes):
    out = []
    by = {(e.scheme, e.h): e for e in estimates}
    for s in schemes:
        rows = sorted((e for e in estimates if e.scheme == s), key=lambda e: -e.h)
        for coarse, fine in zip(rows, rows[1:]):
            pooled = math.hypot(coarse.rms_std_err, fine.rms_std_err)
            if fine.rms_error > coarse.rms_error + 3 * pooled:
                out.append(f"{s}: RMS error grows from h={coarse.h!r} to h={fine.h!r} (Monte Carlo underpowered?)")
    if "euler" in schemes and "milstein" in schemes:
        for e in estimates:
            if e.scheme != "milstein":
                continue
            eu = by["euler", e.h]
            pooled = math.hypot(e.rms_std_err, eu.rms_std_err)
            if e.rms_error > eu.rms_error + 3 * pooled:
                out.append(f"milstein RMS error exceeds euler at h={e.h!r}")
    return out


def run_strong_error(plan):
    """Estimate ``E sup_n |X(t_n) - Y_n|^2`` for every scheme and step size of
    ``plan`` and regress the RMS error against ``h`` on log-log axes."""
    t0 = time.perf_counter()
    sup_err, _, _, _, seconds, notes = _simulate(plan)
    estimates = []
    for kind in plan.schemes:
        for h in plan.steps:
            mean, se = _mean_se(sup_err[kind, h])
            estimates.append(ErrorEstimate(kind, h, plan.n_paths, mean, se, 1000.0 * seconds[kind, h]))
    fits = {}
    for kind in plan.schemes:
        rows = [e for e in estimates if e.scheme == kind]
        if len(rows) >= 2 and all(e.rms_error > 0 for e in rows):
            fits[kind] = fit_order([e.h for e in rows], [e.rms_error for e in rows])
    timings = {"total_s": time.perf_counter() - t0, "reference_s": seconds["reference"]}
    return ConvergenceReport(plan.problem.name, plan.reference_mode, plan.seed, plan.fine_step, estimates, fits,
                             notes, _diagnostics(estimates, plan.schemes), timings)


# ------------------------------------------------------------- moments


@dataclass
class MomentReport:
    problem: str
    scheme: str
    steps: list
    scheme_moment: list       # (mean, se) of E sup_n |Y_n|^2 per h
    modulus: list             # (mean, se) of E sup_[s,s+h] |X(t) - X(s)|^2 per h
    reference_moment: tuple   # (mean, se) of E sup_t |X(t)|^2 on the fine grid
    moment_fit: OrderFit      # None when some estimate is zero
    modulus_fit: OrderFit


def run_moment_check(plan, scheme="milstein"):
    """Scheme second moments across step sizes and the reference path's
    mean-square modulus of continuity over windows of length h."""
    scheme = scheme_name(scheme)
    if scheme not in plan.schemes:
        plan = ExperimentPlan(plan.problem, plan.steps, plan.n_paths, plan.seed, (scheme,), plan.reference,
                              plan.h_ref, plan.batch_size, plan.threads)
    _, sup_val, ref_sup, modulus, _, _ = _simulate(plan)
    moments = [_mean_se(sup_val[scheme, h]) for h in plan.steps]
    mods = [_mean_se(modulus[h]) for h in plan.steps]

    def fit(rows):
        values = [m for m, _ in rows]
        return fit_order(plan.steps, values) if len(values) >= 2 and min(values) > 0 else None

    return MomentReport(plan.problem.name, scheme, list(plan.steps), moments, mods, _mean_se(ref_sup),
                        fit(moments), fit(mods))


# ------------------------------------------------------- chain statistics


@dataclass(frozen=True)
class ChainStatRow:
    quantity: str
    empirical: float
    std_err: float
    bound: float
    slack: float

    @property
    def passed(self):
        return self.empirical <= self.bound + self.slack


@dataclass
class ChainStatsReport:
    max_rate: float
    h: float
    n_intervals: int
    seed: int
    rows: list

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def jump_count_sample(gen, h, n_intervals, seed, initial_state=0):
    """Jump counts on ``n_intervals`` consecutive cells of width ``h`` of one
    long exact chain path."""
    horizon = n_intervals * h
    chain = sample_chain_path(gen, initial_state, horizon, make_stream(seed, 0, 3), block=1024)
    nodes = np.arange(n_intervals + 1) * h
    nodes[-1] = horizon
    return chain.jump_counts(nodes)


def run_chain_statistics(gen, h, n_intervals, seed=0, initial_state=0):
    """Empirical jump-count tails and moments per interval against the bounds
    ``P(N >= k) <= (qh)^k``, ``E N <= 2qh`` and ``E N^2 <= 6``."""
    q = gen.max_rate
    if h <= 0 or q * h > 0.5:
        raise StepTooLarge(f"chain statistics need 0 < q*h <= 1/2, got q*h = {q * h!r}")
    if n_intervals < 1000:
        raise PlanInvalid("chain statistics need at least 1000 intervals")
    counts = jump_count_sample(gen, h, n_intervals, seed, initial_state).astype(float)
    rows = []
    for k in (1, 2, 3):
        hit = counts >= k
        freq = float(np.mean(hit))
        se = float(np.sqrt(freq * (1 - freq) / n_intervals))
        bound = (q * h) ** k
        rows.append(ChainStatRow(f"P(N>={k})", freq, se, bound, 4 * math.sqrt(bound / n_intervals)))
    for name, values, bound in (("E[N]", counts, 2 * q * h), ("E[N^2]", counts ** 2, 6.0)):
        mean, se = _mean_se(values)
        rows.append(ChainStatRow(name, mean, se, bound, 4 * se))
    return ChainStatsReport(q, float(h), int(n_intervals), int(seed), rows)


