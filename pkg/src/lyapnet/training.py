"""Online training with a largest-exponent regularizer, baselines, and
the loss-ratio benchmark on regime-shift data, plus chaotic attractor
synthesis where the loss is a pure function of the spectrum.

The trainer runs a strict online protocol: one optimizer step per time
point, single pass, no replay. The per-step loss is the squared prediction
error plus, depending on the configured regularizer, alpha * |lambda_max|
(estimated over a short self-generated horizon), an L1/L2 weight penalty,
or nothing (dropout acts inside the forward pass instead).

Hot-loop math runs on the array engine (vector_ad); its gradients are
cross-checked against the scalar tape in the tests.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import lorenz, lyapunov, network
from . import vector_ad as va
from .lyapunov import RankDeficiencyError

REGULARIZERS = ("none", "lyapunov", "l1", "l2", "dropout")


class TrainingError(ArithmeticError):
    def __init__(self, step, msg):
        super().__init__(f"step {step}: {msg}")
        self.step = step


class NonConvergenceError(RuntimeError):
    def __init__(self, spectrum, msg):
        super().__init__(msg)
        self.spectrum = spectrum


@dataclass
class TrainConfig:
    regularizer: str = "none"
    alpha: float = 1.0
    dropout_p: float = 0.2
    lyap_horizon: int = 20
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    layer_sizes: tuple = (3, 50, 50, 50, 3)

    def validate(self):
        problems = []
        if self.regularizer not in REGULARIZERS:
            problems.append(f"regularizer must be one of {REGULARIZERS}")
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if not (0.0 <= self.dropout_p < 1.0):
            problems.append("dropout_p must be in [0, 1)")
        if self.lyap_horizon < 1:
            problems.append("lyap_horizon must be >= 1")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            problems.append("optimizer must be adam or sgd")
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            problems.append("layer_sizes needs >= 2 positive entries")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self):
        d = dict(vars(self))
        d["layer_sizes"] = list(self.layer_sizes)
        return d


@dataclass
class ExperimentResult:
    per_step_mse: np.ndarray
    per_step_reg: np.ndarray       # NaN marks a skipped regularizer step
    post_shift_mse_sum: float
    shift_index: int
    seed: int
    skipped_reg_steps: int
    config: TrainConfig
    final_params: list = field(default_factory=list, repr=False)

    def final_network(self):
        weights = [([list(map(float, row)) for row in W], list(map(float, b)))
                   for W, b in self.final_params]
        return network.Network(list(self.config.layer_sizes), weights)


@dataclass
class RatioReport:
    ratio: float
    ratio_series: np.ndarray
    quartiles: tuple


def stream_seeds(seed):
    """Named sub-seeds derived from one root seed, one per consumer."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return {"data": int(state[0]), "init": int(state[1]),
            "dropout": int(state[2])}


# -- optimizers -----------------------------------------------------------

class Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, shapes, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _make_optimizer(cfg, shapes):
    if cfg.optimizer == "adam":
        return Adam(shapes, cfg.learning_rate)
    return SGD(shapes, cfg.learning_rate)


# -- graph builders -------------------------------------------------------

def _wrap_params(params):
    return [(va.Var(W), va.Var(b)) for W, b in params]


def _forward_graph(wvars, x, masks=None):
    """Forward pass; returns (output, hidden derivative vectors 1 - h^2).

    `x` may be a Var so a self-generated trajectory stays in the graph and
    gradients flow through the visited states, not just the Jacobians.
    """
    h = x if isinstance(x, va.Var) else va.leaf(x)
    derivs = []
    last = len(wvars) - 1
    for k, (Wv, bv) in enumerate(wvars):
        z = va.add(va.matvec(Wv, h), bv)
        if k < last:
            h = va.tanh(z)
            derivs.append(va.add_const(va.scale(va.square(h), -1.0), 1.0))
            if masks is not None:
                h = va.scale(h, masks[k])
        else:
            h = z
    return h, derivs


def _jacobian_graph(wvars, derivs):
    J = wvars[0][0]
    for k in range(1, len(wvars)):
        J = va.matmul(wvars[k][0], va.colscale(derivs[k - 1], J))
    return J


def _lyap_term(wvars, x, horizon):
    """Largest-exponent estimate over a self-generated horizon, as a Var."""
    xv = va.leaf(np.asarray(x, dtype=float))
    d = len(xv.data)
    v = va.leaf(np.eye(d)[0])
    acc = None
    for _ in range(horizon):
        y, derivs = _forward_graph(wvars, xv)
        J = _jacobian_graph(wvars, derivs)
        v = va.matvec(J, v)
        n2 = float(np.sum(v.data * v.data))
        if n2 < 1e-24:
            raise RankDeficiencyError(0, 0, math.sqrt(n2))
        n = va.norm(v)
        acc = va.log(n) if acc is None else va.add(acc, va.log(n))
        v = va.divs(v, n)
        xv = y
        if not np.all(np.isfinite(xv.data)):
            raise RankDeficiencyError(0, 0, float("nan"))
    return va.scale(acc, 1.0 / horizon)


def _weight_penalty(wvars, kind):
    total = None
    for Wv, bv in wvars:
        term = va.sumabs(Wv) if kind == "l1" else va.sumsq(Wv)
        total = term if total is None else va.add(total, term)
    return total


def _collect_grads(wvars):
    # a parameter can fall out of the graph entirely (e.g. the output bias
    # when the generated orbit is detached); its gradient is then zero
    return [v.grad if v.grad is not None else np.zeros_like(v.data)
            for Wv, bv in wvars for v in (Wv, bv)]


# -- online trainer -------------------------------------------------------

def train_online(cfg, traj):
    cfg.validate()
    states = np.asarray(traj.states, dtype=float)
    if len(states) < 2:
        raise ValueError("trajectory needs at least 2 states")
    d = states.shape[1]
    if cfg.layer_sizes[0] != d or cfg.layer_sizes[-1] != d:
        raise ValueError(
            f"network {cfg.layer_sizes} is not a square map on dim {d}")
    sub = stream_seeds(cfg.seed)
    net0 = network.init(cfg.layer_sizes, sub["init"])
    params = [(np.array(W, dtype=float), np.array(b, dtype=float))
              for W, b in net0.weights]
    flat = [a for pair in params for a in pair]
    opt = _make_optimizer(cfg, [a.shape for a in flat])
    drop_rng = np.random.default_rng(sub["dropout"])
    use_drop = cfg.regularizer == "dropout" and cfg.dropout_p > 0.0
    use_lyap = cfg.regularizer == "lyapunov" and cfg.alpha > 0.0
    use_penalty = cfg.regularizer in ("l1", "l2") and cfg.alpha > 0.0

    n_steps = len(states) - 1
    mse_hist = np.empty(n_steps)
    reg_hist = np.zeros(n_steps)
    skipped = 0
    for t in range(n_steps):
        x, target = states[t], states[t + 1]
        wvars = _wrap_params(params)
        masks = None
        if use_drop:
            keep = 1.0 - cfg.dropout_p
            masks = [(drop_rng.random(s) < keep) / keep
                     for s in cfg.layer_sizes[1:-1]]
        y, _ = _forward_graph(wvars, x, masks)
        mse = va.sumsq(va.add_const(y, -target))
        loss = mse
        if use_lyap:
            try:
                lam = _lyap_term(wvars, x, cfg.lyap_horizon)
                loss = va.add(loss, va.scale(va.absval(lam), cfg.alpha))
                reg_hist[t] = abs(lam.data)
            except RankDeficiencyError:
                reg_hist[t] = float("nan")
                skipped += 1
        elif use_penalty:
            pen = _weight_penalty(wvars, cfg.regularizer)
            loss = va.add(loss, va.scale(pen, cfg.alpha))
            reg_hist[t] = pen.data
        if not math.isfinite(loss.data):
            raise TrainingError(t, f"non-finite loss {loss.data}")
        va.backward(loss)
        opt.step(flat, _collect_grads(wvars))
        mse_hist[t] = mse.data

    shift = traj.shift_index if traj.shift_index is not None else 0
    post = float(np.sum(mse_hist[shift:]))
    return ExperimentResult(mse_hist, reg_hist, post, shift, cfg.seed,
                            skipped, cfg,
                            final_params=[(W.copy(), b.copy())
                                          for W, b in params])


# -- evaluation -----------------------------------------------------------

def loss_ratio(vanilla, other):
    if vanilla.shift_index != other.shift_index:
        raise ValueError("results have different shift indices")
    if len(vanilla.per_step_mse) != len(other.per_step_mse):
        raise ValueError("results have different series lengths")
    if other.post_shift_mse_sum == 0.0:
        raise ZeroDivisionError("denominator post-shift MSE sum is zero")
    r = vanilla.post_shift_mse_sum / other.post_shift_mse_sum
    s = vanilla.shift_index
    cv = np.cumsum(vanilla.per_step_mse[s:])
    co = np.cumsum(other.per_step_mse[s:])
    return RatioReport(r, cv / co, (r, r, r))


def default_trajectory(seed, n_per_regime=1000, dt=0.01, scale=30.0,
                       transient=0, beta_b=4.0 / 3.0, sample_every=10,
                       x0=(12.0, 12.0, 24.0)):
    """The benchmark data: slowly-converging Lorenz regime, then a
    strongly chaotic one, switched abruptly halfway.

    Sampling every 10th fine integrator step gives the learned map a time
    step of 0.1, where consecutive states are distinguishable and the true
    per-step exponents sit at the O(0.1) scale the regularizer works on.
    The first half starts away from the stable focus with no discarded
    transient, so it carries a visible decaying oscillation instead of a
    numerically constant tail; the second regime uses the smaller beta,
    whose unstable focus ejects the orbit into chaos within the half
    rather than lingering on a laminar escape."""
    pA = lorenz.LorenzParams(sigma=20.0, rho=28.0, beta=8.0 / 3.0)
    pB = lorenz.LorenzParams(sigma=10.0, rho=28.0, beta=beta_b)
    return lorenz.generate_regime_shift(pA, pB, n_per_regime, dt, x0=x0,
                                        transient=transient, scale=scale,
                                        seed=seed, sample_every=sample_every)


def _variant_config(base_cfg, tag, param, seed):
    cfg = replace(base_cfg, regularizer=tag, seed=seed)
    if tag == "dropout":
        cfg = replace(cfg, dropout_p=param if param is not None else 0.2)
    elif tag != "none" and param is not None:
        cfg = replace(cfg, alpha=param)
    return cfg


def _run_one(args):
    key, cfg, traj = args
    return key, train_online(cfg, traj)


@dataclass
class BenchmarkRow:
    regularizer: str
    param: Optional[float]
    mean_ratio: float
    q1: float
    median: float
    q3: float


@dataclass
class BenchmarkResult:
    rows: list
    ratios: dict              # (tag, param) -> per-seed ratio list
    vanilla_results: list
    variant_results: dict     # (tag, param) -> per-seed ExperimentResult


def run_benchmark(base_cfg, regularizers, n_seeds, traj_factory=None,
                  n_workers=1):
    """Matched-seed comparison: per seed, one trajectory and one shared
    initial network; every variant trains on the identical data. Rows are
    sorted by mean loss ratio, descending."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    traj_factory = traj_factory or default_trajectory
    jobs = []
    trajs = {}
    for seed in range(n_seeds):
        trajs[seed] = traj_factory(seed)
        jobs.append((("none", None, seed),
                     _variant_config(base_cfg, "none", None, seed),
                     trajs[seed]))
        for tag, param in regularizers:
            jobs.append(((tag, param, seed),
                         _variant_config(base_cfg, tag, param, seed),
                         trajs[seed]))
    results = {}
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for key, res in pool.map(_run_one, jobs):
                results[key] = res
    else:
        for job in jobs:
            key, res = _run_one(job)
            results[key] = res

    vanilla = [results[("none", None, s)] for s in range(n_seeds)]
    ratios = {}
    variant_results = {}
    rows = []
    for tag, param in regularizers:
        per_seed = [results[(tag, param, s)] for s in range(n_seeds)]
        rs = [loss_ratio(vanilla[s], per_seed[s]).ratio
              for s in range(n_seeds)]
        ratios[(tag, param)] = rs
        variant_results[(tag, param)] = per_seed
        q1, med, q3 = np.percentile(rs, [25, 50, 75])
        rows.append(BenchmarkRow(tag, param, float(np.mean(rs)),
                                 float(q1), float(med), float(q3)))
    rows.sort(key=lambda r: r.mean_ratio, reverse=True)
    return BenchmarkResult(rows, ratios, vanilla, variant_results)


def sweep_alpha(base_cfg, alphas, n_seeds, traj_factory=None, n_workers=1):
    """Loss-ratio curve over the regularizer weight."""
    if not alphas or any(a < 0 for a in alphas):
        raise ValueError("alphas must be nonempty and >= 0")
    regs = [("lyapunov", float(a)) for a in alphas]
    bench = run_benchmark(base_cfg, regs, n_seeds,
                          traj_factory=traj_factory, n_workers=n_workers)
    by_alpha = {param: row for row in bench.rows
                for param in [row.param]}
    return [(a, by_alpha[float(a)].mean_ratio, by_alpha[float(a)].q1,
             by_alpha[float(a)].median, by_alpha[float(a)].q3)
            for a in alphas]


DEFAULT_ALPHA_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


# -- attractor synthesis --------------------------------------------------

def _spectrum_graph(wvars, x0, horizon, transient, detach_orbit=False):
    """Full QR spectrum over a self-generated horizon; exponents as Vars.

    With detach_orbit the generated states are treated as constants and
    only the Jacobians stay in the graph. That drops the exact derivative's
    trajectory terms, whose variance grows like exp(lambda * horizon) and
    swamps the signal once the dynamics approach chaos; the remaining
    low-variance direction is what makes exponent targeting trainable."""
    xv = np.asarray(x0, dtype=float)
    d = len(xv)
    # transient outside the graph: it positions the start point, the
    # exponents are what the loss controls
    network_arrays = [(Wv.data, bv.data) for Wv, bv in wvars]
    for _ in range(transient):
        h = xv
        for k, (W, b) in enumerate(network_arrays):
            z = W @ h + b
            h = np.tanh(z) if k < len(network_arrays) - 1 else z
        xv = h
    xv = va.leaf(xv)
    q_cols = [va.leaf(np.eye(d)[j]) for j in range(d)]
    accs = [None] * d
    for _ in range(horizon):
        y, derivs = _forward_graph(wvars, xv)
        J = _jacobian_graph(wvars, derivs)
        a_cols = [va.matvec(J, q) for q in q_cols]
        new_q = []
        for j in range(d):
            v = a_cols[j]
            for q in new_q:
                proj = va.dot(q, v)
                v = va.sub(v, va.scalev(proj, q))
            n2 = float(np.sum(v.data * v.data))
            if n2 < 1e-24:
                raise RankDeficiencyError(0, j, math.sqrt(n2))
            n = va.norm(v)
            accs[j] = va.log(n) if accs[j] is None else va.add(accs[j], va.log(n))
            new_q.append(va.divs(v, n))
        q_cols = new_q
        xv = va.leaf(y.data) if detach_orbit else y
        if not np.all(np.isfinite(xv.data)):
            raise RankDeficiencyError(0, 0, float("nan"))
    return [va.scale(a, 1.0 / horizon) for a in accs], xv.data


def _params_to_network(params, layer_sizes):
    weights = [([list(map(float, row)) for row in W], list(map(float, b)))
               for W, b in params]
    return network.Network(list(layer_sizes), weights)


def generate_orbit(net, x0, steps, bound=1e6):
    """Self-generated trajectory of the network map (values only)."""
    arrays = [(np.array(W, dtype=float), np.array(b, dtype=float))
              for W, b in net.weights]
    x = np.asarray(x0, dtype=float)
    out = np.empty((steps, len(x)))
    last = len(arrays) - 1
    for t in range(steps):
        h = x
        for k, (W, b) in enumerate(arrays):
            z = W @ h + b
            h = np.tanh(z) if k < last else z
        x = h
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
            raise lyapunov.DivergenceError(t)
        out[t] = x
    return out


def synthesize_attractor(target_lambda, cfg=None, sum_weight=10.0,
                         sum_margin=0.1, horizon=40, transient=10,
                         max_steps=50000, max_restarts=5, check_every=250,
                         tol=0.05, eval_steps=2000, eval_transient=500,
                         verbose=False):
    """Train a small network so its self-generated dynamics form a chaotic
    attractor with the requested largest exponent.

    Loss = (lambda_1 - target)^2 + sum_weight * max(0, sum(lambda) + sum_margin)^2,
    a pure function of the spectrum. Restarts with a fresh seed on
    divergence or a spent step budget.
    """
    if target_lambda <= 0:
        raise ValueError("target_lambda must be positive")
    cfg = cfg or TrainConfig(layer_sizes=(3, 10, 3), learning_rate=1e-2)
    last_spectrum = None
    for restart in range(max_restarts):
        seed = cfg.seed + 1000 * restart
        rng = np.random.default_rng(stream_seeds(seed)["data"])
        net0 = network.init(cfg.layer_sizes, stream_seeds(seed)["init"])
        params = [(np.array(W), np.array(b)) for W, b in net0.weights]
        flat = [a for pair in params for a in pair]
        opt = _make_optimizer(cfg, [a.shape for a in flat])
        try:
            for step in range(max_steps):
                x0 = rng.uniform(-1.0, 1.0, size=cfg.layer_sizes[0])
                wvars = _wrap_params(params)
                lams, _ = _spectrum_graph(wvars, x0, horizon, transient,
                                          detach_orbit=True)
                lam1 = lams[0]
                total = lams[0]
                for l in lams[1:]:
                    total = va.add(total, l)
                loss = va.add(
                    va.square(va.add_const(lam1, -target_lambda)),
                    va.scale(va.square(va.relu(va.add_const(total, sum_margin))),
                             sum_weight))
                if not math.isfinite(loss.data):
                    raise TrainingError(step, "non-finite synthesis loss")
                va.backward(loss)
                opt.step(flat, _collect_grads(wvars))
                if (step + 1) % check_every == 0:
                    net = _params_to_network(params, cfg.layer_sizes)
                    try:
                        spec = lyapunov.spectrum_of_network(
                            net, rng.uniform(-1, 1, 3), eval_steps,
                            transient=eval_transient)
                    except (lyapunov.DivergenceError, RankDeficiencyError):
                        continue
                    last_spectrum = spec
                    ok, _ = lyapunov.is_chaotic_attractor(spec)
                    lam_val = spec.values()[0]
                    if verbose:
                        print(f"[synth] restart {restart} step {step + 1}: "
                              f"spectrum {spec.values()}")
                    if ok and abs(lam_val - target_lambda) < tol:
                        orbit = generate_orbit(net, rng.uniform(-1, 1, 3),
                                               1500, bound=1e3)
                        traj = lorenz.Trajectory(
                            orbit[1000:], dt=1.0,
                            meta={"generator": "synthesized", "seed": seed})
                        return net, traj, spec
        except (TrainingError, RankDeficiencyError, lyapunov.DivergenceError):
            continue
    raise NonConvergenceError(
        last_spectrum, f"no attractor with lambda_1 ~ {target_lambda} "
                       f"within {max_restarts} restarts")


# -- scalar-tape twin of the per-step loss, for gradient checking ---------

def composite_loss_tape(values_net, x, target, alpha, horizon):
    """Per-step loss (squared error + alpha*|lambda_max|) built on the
    scalar tape. Returns (tape, loss node, parameter nodes)."""
    from . import scalar_ad as ad
    tape = ad.Tape()
    net_nodes = network.attach(values_net, tape)
    y = network.forward(net_nodes, x)
    mse = None
    for yi, ti in zip(y, target):
        term = ad.square(yi - ti)
        mse = term if mse is None else mse + term
    lam = lyapunov.largest_exponent(lyapunov.NetworkMap(net_nodes),
                                    list(x), horizon)
    loss = mse + alpha * ad.absval(lam)
    return tape, loss, network.parameter_nodes(net_nodes)
