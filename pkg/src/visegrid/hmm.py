"""Left-to-right HMMs with diagonal-covariance GMM emissions, trained from flat
start by embedded re-estimation.

Topology is fixed: every unit has the same number of emitting states, entry
always lands in the first state, each state loops or advances (no skips), and
the last state's advance is the unit exit. All path math is in log space.

Training follows a schedule: a fixed number of re-estimation passes over whole
utterances (embedded), an optional switch to state-level statistics from a
Viterbi forced alignment partway through, and mixture growth at set
iterations. Log-likelihood is guaranteed non-decreasing only within runs of
iterations that share a phase and component count; growth and the
embedded-to-aligned switch may step it in either direction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasiblePathError

LOG_2PI = math.log(2.0 * math.pi)
MAX_MIXTURES = 5  # hard ceiling on components per state
MIN_WEIGHT = 1e-5  # components lighter than this are dropped at update time
ABS_MIN_VAR = 1e-4  # fallback for dimensions with zero sample variance
_OCC_EPS = 1e-10


@dataclass
class Gmm:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, d)
    variances: np.ndarray  # (M, d)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def validate(self, tol: float = 1e-8) -> None:
        m, d = self.means.shape
        if self.weights.shape != (m,) or self.variances.shape != (m, d):
            raise ValueError("inconsistent mixture shapes")
        if m < 1 or m > MAX_MIXTURES:
            raise ValueError(f"component count {m} outside 1..{MAX_MIXTURES}")
        if np.any(self.weights <= 0):
            raise ValueError("non-positive mixture weight")
        if abs(self.weights.sum() - 1.0) > tol:
            raise ValueError(f"mixture weights sum to {self.weights.sum()}")
        if np.any(self.variances <= 0):
            raise ValueError("non-positive variance")

    def log_components(self, obs: np.ndarray) -> np.ndarray:
        """(T, M): log weight + log density per component."""
        inv = 1.0 / self.variances  # (M, d)
        const = (
            np.log(self.weights)
            - 0.5 * (LOG_2PI * self.means.shape[1] + np.log(self.variances).sum(axis=1))
            - 0.5 * np.einsum("md,md->m", self.means * self.means, inv)
        )
        return const + obs @ (self.means * inv).T - 0.5 * (obs * obs) @ inv.T

    def log_density(self, obs: np.ndarray) -> np.ndarray:
        """(T,): log of the weighted mixture density."""
        return np.logaddexp.reduce(self.log_components(obs), axis=1)

    def copy(self) -> "Gmm":
        return Gmm(self.weights.copy(), self.means.copy(), self.variances.copy())


@dataclass
class HmmUnit:
    label: str
    trans: np.ndarray  # (S+2, S+2) probabilities; 0 entry, 1..S emitting, S+1 exit
    states: list[Gmm]

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=np.float64)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def loop_prob(self, s: int) -> float:
        return float(self.trans[s + 1, s + 1])

    def advance_prob(self, s: int) -> float:
        """Out of emitting state s: to s+1, or out of the unit if s is last."""
        return float(self.trans[s + 1, s + 2])

    def validate(self, tol: float = 1e-8) -> None:
        s = self.n_states
        if s < 1:
            raise ValueError(f"unit {self.label}: no states")
        if self.trans.shape != (s + 2, s + 2):
            raise ValueError(f"unit {self.label}: transition shape {self.trans.shape}")
        if abs(self.trans[0, 1] - 1.0) > tol:
            raise ValueError(f"unit {self.label}: entry must go to state 1")
        for i in range(1, s + 1):
            row = self.trans[i]
            if np.any(row < 0):
                raise ValueError(f"unit {self.label}: negative transition probability")
            if abs(row.sum() - 1.0) > tol:
                raise ValueError(f"unit {self.label}: row {i} sums to {row.sum()}")
            off = row.sum() - row[i] - row[i + 1]
            if abs(off) > tol:
                raise ValueError(f"unit {self.label}: row {i} has skip transitions")
        for g in self.states:
            g.validate(tol)

    def copy(self) -> "HmmUnit":
        return HmmUnit(self.label, self.trans.copy(), [g.copy() for g in self.states])


def new_unit(label: str, n_states: int, mean: np.ndarray, var: np.ndarray,
             loop_prob: float = 0.6) -> HmmUnit:
    """Fresh unit with identical single-Gaussian states (flat start)."""
    if not 0.0 < loop_prob < 1.0:
        raise ValueError("loop probability must be in (0, 1)")
    s = n_states
    trans = np.zeros((s + 2, s + 2))
    trans[0, 1] = 1.0
    for i in range(1, s + 1):
        trans[i, i] = loop_prob
        trans[i, i + 1] = 1.0 - loop_prob
    trans[s + 1, s + 1] = 1.0
    states = [
        Gmm(np.array([1.0]), mean[None, :].copy(), var[None, :].copy())
        for _ in range(s)
    ]
    return HmmUnit(label, trans, states)


@dataclass
class HmmSet:
    units: dict[str, HmmUnit]
    feature_dim: int
    variance_floor: np.ndarray  # (d,)

    def unit(self, label: str) -> HmmUnit:
        try:
            return self.units[label]
        except KeyError:
            raise ValueError(f"no model for unit {label!r}") from None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.units))

    def max_components(self) -> int:
        return max(g.n_components for u in self.units.values() for g in u.states)

    def validate(self) -> None:
        for label, u in self.units.items():
            if label != u.label:
                raise ValueError(f"unit keyed {label!r} is labelled {u.label!r}")
            u.validate()
            for g in u.states:
                if g.means.shape[1] != self.feature_dim:
                    raise ValueError(f"unit {label}: dim {g.means.shape[1]} != {self.feature_dim}")

    def copy(self) -> "HmmSet":
        return HmmSet(
            {k: u.copy() for k, u in self.units.items()},
            self.feature_dim,
            self.variance_floor.copy(),
        )


def flat_start(observations, labels, n_states: int = 3,
               floor_fraction: float = 0.01, loop_prob: float = 0.6) -> HmmSet:
    """One identical model per label from the global data mean and variance.

    Dimensions with zero sample variance are patched to a small constant with
    a warning; the variance floor is floor_fraction of the (patched) global
    variance, per dimension.
    """
    observations = [np.asarray(o, dtype=np.float64) for o in observations]
    labels = sorted(set(labels))
    if not observations:
        raise ValueError("no training observations for flat start")
    if not labels:
        raise ValueError("no unit labels for flat start")
    pooled = np.concatenate(observations, axis=0)
    mean = pooled.mean(axis=0)
    var = pooled.var(axis=0)
    dead = var <= 0.0
    if np.any(dead):
        warnings.warn(
            f"flat start: {int(dead.sum())} feature dimension(s) have zero variance; "
            f"using {ABS_MIN_VAR}",
            stacklevel=2,
        )
        var = np.where(dead, ABS_MIN_VAR, var)
    floor = floor_fraction * var
    units = {lab: new_unit(lab, n_states, mean, var, loop_prob) for lab in labels}
    return HmmSet(units, pooled.shape[1], floor)


# ---------------------------------------------------------------------------
# Chains: a transcript rendered as one long left-to-right state sequence


class _Chain:
    """Concatenated units for one transcript.

    loop_lp[i] and adv_lp[i] are log transition probabilities out of chain
    state i; adv_lp of the final state is the exit of the last unit, used at
    termination rather than as a shift.
    """

    def __init__(self, models: HmmSet, transcript):
        transcript = list(transcript)
        if not transcript:
            raise ValueError("empty transcript")
        self.labels = transcript
        self.unit_of: list[str] = []
        self.state_of: list[int] = []
        self.occurrence: list[int] = []
        loops, advs = [], []
        for occ, lab in enumerate(transcript):
            unit = models.unit(lab)
            for s in range(unit.n_states):
                self.unit_of.append(lab)
                self.state_of.append(s)
                self.occurrence.append(occ)
                loops.append(unit.loop_prob(s))
                advs.append(unit.advance_prob(s))
        with np.errstate(divide="ignore"):
            self.loop_lp = np.log(np.array(loops))
            self.adv_lp = np.log(np.array(advs))
        self.n = len(self.unit_of)

    def emissions(self, models: HmmSet, obs: np.ndarray,
                  cache: dict | None = None) -> np.ndarray:
        """(T, n) log densities; per-(label, state) columns computed once."""
        cache = {} if cache is None else cache
        cols = []
        for lab, s in zip(self.unit_of, self.state_of):
            key = (lab, s)
            if key not in cache:
                cache[key] = models.unit(lab).states[s].log_density(obs)
            cols.append(cache[key])
        return np.stack(cols, axis=1)


def _check_obs(models: HmmSet, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError("observations must be a (T, d) array with T >= 1")
    if obs.shape[1] != models.feature_dim:
        raise ValueError(f"observation dim {obs.shape[1]} != model dim {models.feature_dim}")
    return obs


def _forward(E: np.ndarray, loop: np.ndarray, adv: np.ndarray) -> tuple[np.ndarray, float]:
    t_len, n = E.shape
    if t_len < n:
        raise InfeasiblePathError(n, t_len)
    alpha = np.full((t_len, n), -np.inf)
    alpha[0, 0] = E[0, 0]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        nxt = prev + loop
        nxt[1:] = np.logaddexp(nxt[1:], prev[:-1] + adv[:-1])
        alpha[t] = E[t] + nxt
    return alpha, float(alpha[-1, -1] + adv[-1])


def _backward(E: np.ndarray, loop: np.ndarray, adv: np.ndarray) -> np.ndarray:
    t_len, n = E.shape
    beta = np.full((t_len, n), -np.inf)
    beta[-1, -1] = adv[-1]
    for t in range(t_len - 2, -1, -1):
        ahead = E[t + 1] + beta[t + 1]
        b = loop + ahead
        b[:-1] = np.logaddexp(b[:-1], adv[:-1] + ahead[1:])
        beta[t] = b
    return beta


def forward_loglik(models: HmmSet, transcript, obs: np.ndarray) -> float:
    """Total log-likelihood of obs under the concatenated transcript model."""
    obs = _check_obs(models, obs)
    chain = _Chain(models, transcript)
    E = chain.emissions(models, obs)
    _, loglik = _forward(E, chain.loop_lp, chain.adv_lp)
    return loglik


@dataclass(frozen=True)
class ForcedAlignment:
    segments: tuple[tuple[str, int, int], ...]  # (label, start, end) end exclusive
    loglik: float


def viterbi_align(models: HmmSet, transcript, obs: np.ndarray) -> ForcedAlignment:
    """Best state path through the transcript chain, as unit time spans.

    Ties prefer staying in the current state, so output is deterministic.
    """
    obs = _check_obs(models, obs)
    chain = _Chain(models, transcript)
    E = chain.emissions(models, obs)
    t_len, n = E.shape
    if t_len < n:
        raise InfeasiblePathError(n, t_len, label=" ".join(chain.labels))
    loop, adv = chain.loop_lp, chain.adv_lp
    delta = np.full((t_len, n), -np.inf)
    delta[0, 0] = E[0, 0]
    moved = np.zeros((t_len, n), dtype=bool)
    for t in range(1, t_len):
        prev = delta[t - 1]
        stay = prev + loop
        move = prev[:-1] + adv[:-1]
        take = move > stay[1:]
        moved[t, 1:] = take
        nxt = stay
        nxt[1:] = np.where(take, move, stay[1:])
        delta[t] = E[t] + nxt
    loglik = float(delta[-1, -1] + adv[-1])

    states = np.empty(t_len, dtype=np.int64)
    states[-1] = n - 1
    for t in range(t_len - 1, 0, -1):
        states[t - 1] = states[t] - 1 if moved[t, states[t]] else states[t]
    segments = []
    start = 0
    for t in range(1, t_len):
        if chain.occurrence[states[t]] != chain.occurrence[states[t - 1]]:
            segments.append((chain.unit_of[states[start]], start, t))
            start = t
    segments.append((chain.unit_of[states[start]], start, t_len))
    return ForcedAlignment(tuple(segments), loglik)


# ---------------------------------------------------------------------------
# Re-estimation


@dataclass
class TrainSchedule:
    iterations: int = 11
    align_at: int = 7  # forced alignment after this pass; 0 disables
    # (after_iteration, target_components) pairs, applied in order
    mixture_growth: tuple[tuple[int, int], ...] = ((2, 2), (4, 4), (6, 5))
    realign_every: bool = False  # refresh the alignment after each later pass

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        afters = [after for after, _ in self.mixture_growth]
        if afters != sorted(set(afters)):
            raise ValueError("growth steps must have strictly increasing iterations")
        for _, target in self.mixture_growth:
            if not 1 <= target <= MAX_MIXTURES:
                raise ValueError(f"growth target {target} outside 1..{MAX_MIXTURES}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int  # 1-based
    phase: str  # "embedded" or "aligned"
    components: int  # max mixture size going into this pass
    loglik: float  # total over the utterances used in this pass
    used: int
    skipped: int


class _Stats:
    """Sufficient statistics for one re-estimation pass."""

    def __init__(self):
        self.occ: dict[tuple[str, int], np.ndarray] = {}
        self.x: dict[tuple[str, int], np.ndarray] = {}
        self.xx: dict[tuple[str, int], np.ndarray] = {}
        self.loop: dict[tuple[str, int], float] = {}
        self.adv: dict[tuple[str, int], float] = {}

    def _ensure(self, key, m, d):
        if key not in self.occ:
            self.occ[key] = np.zeros(m)
            self.x[key] = np.zeros((m, d))
            self.xx[key] = np.zeros((m, d))
            self.loop[key] = 0.0
            self.adv[key] = 0.0


def _accumulate_chain(models: HmmSet, chain: _Chain, obs: np.ndarray,
                      stats: _Stats) -> float:
    """Baum-Welch statistics for one observation sequence against one chain."""
    dens_cache: dict = {}
    E = chain.emissions(models, obs, dens_cache)
    loop, adv = chain.loop_lp, chain.adv_lp
    alpha, loglik = _forward(E, loop, adv)
    beta = _backward(E, loop, adv)
    with np.errstate(under="ignore"):
        gamma = np.exp(alpha + beta - loglik)  # (T, n)
        if alpha.shape[0] > 1:
            ahead = E[1:] + beta[1:]  # (T-1, n)
            loop_post = np.exp(alpha[:-1] + loop + ahead - loglik)
            adv_post = np.exp(alpha[:-1, :-1] + adv[:-1] + ahead[:, 1:] - loglik)

    d = obs.shape[1]
    positions: dict[tuple[str, int], list[int]] = {}
    for i, key in enumerate(zip(chain.unit_of, chain.state_of)):
        positions.setdefault(key, []).append(i)

    for key, idxs in positions.items():
        lab, s = key
        gmm = models.unit(lab).states[s]
        m = gmm.n_components
        stats._ensure(key, m, d)
        g = gamma[:, idxs].sum(axis=1)  # (T,)
        clp = gmm.log_components(obs)
        with np.errstate(under="ignore"):
            resp = np.exp(clp - dens_cache[key][:, None]) * g[:, None]  # (T, M)
        stats.occ[key] += resp.sum(axis=0)
        stats.x[key] += resp.T @ obs
        stats.xx[key] += resp.T @ (obs * obs)
        if alpha.shape[0] > 1:
            stats.loop[key] += float(loop_post[:, idxs].sum())
            last = chain.n - 1
            for i in idxs:
                if i < last:
                    stats.adv[key] += float(adv_post[:, i].sum())
        # The path exits from the final chain state at the final frame with
        # certainty, which is one advance event for that unit state.
        if idxs[-1] == chain.n - 1:
            stats.adv[key] += 1.0
    return loglik


def _apply_updates(models: HmmSet, stats: _Stats) -> HmmSet:
    out = models.copy()
    floor = models.variance_floor
    for lab in out.labels:
        unit = out.units[lab]
        total = sum(
            stats.occ.get((lab, s), np.zeros(1)).sum() for s in range(unit.n_states)
        )
        if total <= _OCC_EPS:
            warnings.warn(f"unit {lab!r} had no occupancy; parameters frozen", stacklevel=2)
            continue
        for s in range(unit.n_states):
            key = (lab, s)
            occ = stats.occ.get(key)
            if occ is None or occ.sum() <= _OCC_EPS:
                warnings.warn(f"unit {lab!r} state {s} had no occupancy; kept", stacklevel=2)
                continue
            w = occ / occ.sum()
            keep = w >= MIN_WEIGHT
            if not np.any(keep):
                keep = w == w.max()
            occ_k = occ[keep]
            means = stats.x[key][keep] / occ_k[:, None]
            variances = stats.xx[key][keep] / occ_k[:, None] - means * means
            variances = np.maximum(variances, floor)
            weights = occ_k / occ_k.sum()
            unit.states[s] = Gmm(weights, means, variances)
            flow = stats.loop[key] + stats.adv[key]
            if flow > _OCC_EPS:
                unit.trans[s + 1, s + 1] = stats.loop[key] / flow
                unit.trans[s + 1, s + 2] = stats.adv[key] / flow
    out.validate()
    return out


def grow_mixtures(unit: HmmUnit, target: int) -> HmmUnit:
    """Split the heaviest component (+/- 0.2 sd) until each state has target.

    Growing to the current count is the identity; shrinking or exceeding the
    ceiling is an error.
    """
    if target > MAX_MIXTURES:
        raise ValueError(f"target {target} exceeds the {MAX_MIXTURES}-component ceiling")
    out = unit.copy()
    for s, gmm in enumerate(out.states):
        if target < gmm.n_components:
            raise ValueError(
                f"unit {unit.label} state {s}: cannot shrink {gmm.n_components} -> {target}"
            )
        w, mu, var = gmm.weights, gmm.means, gmm.variances
        while w.shape[0] < target:
            i = int(np.argmax(w))  # ties: lowest index
            offset = 0.2 * np.sqrt(var[i])
            w = np.concatenate([w[:i], [w[i] / 2.0], w[i + 1:], [w[i] / 2.0]])
            mu = np.concatenate([mu[:i], [mu[i] - offset], mu[i + 1:], [mu[i] + offset]])
            var = np.concatenate([var[:i], [var[i]], var[i + 1:], [var[i]]])
        out.states[s] = Gmm(w, mu, var)
    return out


def _grow_all(models: HmmSet, target: int) -> HmmSet:
    return HmmSet(
        {lab: grow_mixtures(u, target) for lab, u in models.units.items()},
        models.feature_dim,
        models.variance_floor.copy(),
    )


def reestimate(models: HmmSet, train, schedule: TrainSchedule) -> tuple[HmmSet, list[IterationRecord]]:
    """Run the re-estimation schedule over (transcript, observations) pairs.

    Utterances too short for their chain are skipped (logged in the records);
    everything skipped is skipped in every pass, so per-pass log-likelihoods
    within a phase stay comparable. Returns the final models and the log.
    """
    prepared = []
    skipped = 0
    for transcript, obs in train:
        obs = _check_obs(models, obs)
        chain = _Chain(models, transcript)
        if obs.shape[0] < chain.n:
            skipped += 1
            continue
        prepared.append((list(transcript), obs))
    if not prepared:
        raise ValueError("every training utterance is shorter than its chain")

    aligned: list[tuple[list[tuple[str, int, int]], np.ndarray]] | None = None

    def realign(current: HmmSet):
        segs = []
        for transcript, obs in prepared:
            fa = viterbi_align(current, transcript, obs)
            segs.append((list(fa.segments), obs))
        return segs

    log: list[IterationRecord] = []
    for it in range(1, schedule.iterations + 1):
        stats = _Stats()
        total = 0.0
        if aligned is None:
            phase = "embedded"
            for transcript, obs in prepared:
                chain = _Chain(models, transcript)
                total += _accumulate_chain(models, chain, obs, stats)
        else:
            phase = "aligned"
            for segments, obs in aligned:
                for lab, start, end in segments:
                    chain = _Chain(models, [lab])
                    total += _accumulate_chain(models, chain, obs[start:end], stats)
        components = models.max_components()
        models = _apply_updates(models, stats)
        log.append(IterationRecord(it, phase, components, total, len(prepared), skipped))

        if schedule.align_at and it == schedule.align_at and it < schedule.iterations:
            aligned = realign(models)
        elif aligned is not None and schedule.realign_every and it < schedule.iterations:
            aligned = realign(models)
        for after, target in schedule.mixture_growth:
            if it == after and it < schedule.iterations:
                models = _grow_all(models, target)
                if aligned is not None and schedule.realign_every:
                    aligned = realign(models)
    return models, log


# ---------------------------------------------------------------------------
# Model file IO (text, bit-exact round trip via float repr)


def save_models(models: HmmSet, path, header: dict | None = None) -> None:
    def fmt(arr) -> str:
        return " ".join(repr(float(x)) for x in np.asarray(arr).ravel())

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# format: hmmset-v1\n")
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(f"dim {models.feature_dim}\n")
        fh.write(f"floor {fmt(models.variance_floor)}\n")
        for lab in models.labels:
            unit = models.units[lab]
            s = unit.n_states
            fh.write(f"unit {lab} states {s}\n")
            for row in unit.trans:
                fh.write(f"trans {fmt(row)}\n")
            for i, gmm in enumerate(unit.states):
                fh.write(f"state {i} mix {gmm.n_components}\n")
                for m in range(gmm.n_components):
                    fh.write(f"w {float(gmm.weights[m])!r}\n")
                    fh.write(f"mean {fmt(gmm.means[m])}\n")
                    fh.write(f"var {fmt(gmm.variances[m])}\n")


def load_models(path) -> HmmSet:
    dim = None
    floor = None
    units: dict[str, HmmUnit] = {}
    cur_label = None
    cur_states = 0
    trans_rows: list[list[float]] = []
    states: list[Gmm] = []
    mix: list[tuple[float, list[float], list[float]]] = []
    mix_target = 0

    def close_state():
        nonlocal mix
        if mix:
            if len(mix) != mix_target:
                raise ValueError(f"{path}: state declares {mix_target} mixtures, lists {len(mix)}")
            w = np.array([m[0] for m in mix])
            mu = np.array([m[1] for m in mix])
            var = np.array([m[2] for m in mix])
            states.append(Gmm(w, mu, var))
            mix = []

    def close_unit():
        nonlocal cur_label, trans_rows, states
        if cur_label is not None:
            close_state()
            if len(states) != cur_states:
                raise ValueError(f"unit {cur_label}: expected {cur_states} states, got {len(states)}")
            units[cur_label] = HmmUnit(cur_label, np.array(trans_rows), list(states))
            cur_label, trans_rows, states = None, [], []

    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "dim":
                dim = int(tok[1])
            elif tok[0] == "floor":
                floor = np.array([float(x) for x in tok[1:]])
            elif tok[0] == "unit":
                close_unit()
                cur_label, cur_states = tok[1], int(tok[3])
            elif tok[0] == "trans":
                trans_rows.append([float(x) for x in tok[1:]])
            elif tok[0] == "state":
                close_state()
                mix_target = int(tok[3])
            elif tok[0] == "w":
                mix.append((float(tok[1]), [], []))
            elif tok[0] == "mean":
                mix[-1] = (mix[-1][0], [float(x) for x in tok[1:]], mix[-1][2])
            elif tok[0] == "var":
                mix[-1] = (mix[-1][0], mix[-1][1], [float(x) for x in tok[1:]])
            else:
                raise ValueError(f"{path}: unrecognised line {line!r}")
    close_unit()
    if dim is None or floor is None or not units:
        raise ValueError(f"{path}: incomplete model file")
    models = HmmSet(units, dim, floor)
    models.validate()
    return models
