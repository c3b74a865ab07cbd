"""Neural estimators for partition-population series.

A population snapshot per grid time is turned into feature windows of the N
most recent (mean, deviation) pairs. Two estimators consume them:

* ``SEModel`` — a recurrent cell over one partition's window, pooled across
  partitions (one set of weights serves every partition).
* ``MEModel`` — four spatio-temporal units over all partitions jointly
  (recurrent, graph-convolutional, and the two stacked orders), fused by
  self-attention into per-partition mean/deviation heads.

Training is Adam with early stopping on a held-out split; models serialize
to JSON with a checksum over the weight payload.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import (
    AdamState,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    gcn_propagation,
    gru_cell,
    gru_params,
    init_uniform,
    matmul,
    regroup_rows,
    relu,
    reshape,
    scale,
    self_attention,
    slice_rows,
    square,
    sub,
    tensor_sum,
    zero_grad,
)
from .nn.layers import GRU_PARAM_KEYS

EPS_SIGMA = 1e-6

SERIES_HEADER = ["partition_id", "t", "mu", "sigma2"]


class SerializationError(ValueError):
    """A model document is malformed or fails its integrity check."""


# ---------------------------------------------------------------------------
# Population series and feature windows


@dataclass(frozen=True)
class PopulationSeries:
    """Population estimates on a uniform time grid.

    ``mu`` and ``sigma`` are (V, T) arrays over ``partitions`` x ``times``;
    ``sigma`` holds standard deviations. ``observed[j]`` is False where grid
    point j had no data and was zero-filled.
    """

    times: np.ndarray
    partitions: tuple[str, ...]
    mu: np.ndarray
    sigma: np.ndarray
    delta: float
    observed: np.ndarray

    def __post_init__(self) -> None:
        v, t = len(self.partitions), len(self.times)
        if self.mu.shape != (v, t) or self.sigma.shape != (v, t):
            raise ValueError("series arrays do not match partitions x times")
        if t >= 2:
            steps = np.diff(self.times)
            if not np.allclose(steps, self.delta, rtol=0, atol=1e-6):
                raise ValueError("series times are not uniformly spaced")

    def partition_row(self, partition_id: str) -> int:
        try:
            return self.partitions.index(partition_id)
        except ValueError:
            raise KeyError(partition_id) from None


def series_from_snapshots(snapshots, delta: float) -> PopulationSeries:
    """Assemble a series from population snapshots (one per grid time).

    Every snapshot must cover the same partitions; deviations are the square
    roots of the snapshot variances.
    """
    if not snapshots:
        raise ValueError("no snapshots")
    snaps = sorted(snapshots, key=lambda s: s.time)
    partitions = tuple(sorted(snaps[0].entries))
    times = np.array([s.time for s in snaps], dtype=np.float64)
    mu = np.zeros((len(partitions), len(times)))
    sigma = np.zeros_like(mu)
    for j, snap in enumerate(snaps):
        if tuple(sorted(snap.entries)) != partitions:
            raise ValueError(f"snapshot at t={snap.time} covers different partitions")
        for i, pid in enumerate(partitions):
            m, var = snap.entries[pid]
            mu[i, j] = m
            sigma[i, j] = np.sqrt(var)
    observed = np.ones(len(times), dtype=bool)
    return PopulationSeries(times, partitions, mu, sigma, float(delta), observed)


def write_population_series(path, series: PopulationSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for j, t in enumerate(series.times):
            if not series.observed[j]:
                continue
            for i, pid in enumerate(series.partitions):
                writer.writerow([pid, repr(float(t)), repr(float(series.mu[i, j])), repr(float(series.sigma[i, j] ** 2))])


def read_population_series(path, delta: float | None = None) -> PopulationSeries:
    """Read a series CSV; grid points absent from the file are zero-filled."""
    cells: dict[tuple[str, float], tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ValueError(f"unexpected series header: {header}")
        for row in reader:
            pid, t, m, s2 = row[0], float(row[1]), float(row[2]), float(row[3])
            cells[(pid, t)] = (m, s2)
    if not cells:
        raise ValueError(f"empty series file: {path}")
    partitions = tuple(sorted({pid for pid, _ in cells}))
    seen_times = np.array(sorted({t for _, t in cells}))
    if delta is None:
        if len(seen_times) < 2:
            raise ValueError("cannot infer grid spacing from a single time")
        delta = float(np.diff(seen_times).min())
    count = int(round((seen_times[-1] - seen_times[0]) / delta)) + 1
    times = seen_times[0] + delta * np.arange(count)
    mu = np.zeros((len(partitions), count))
    sigma = np.zeros_like(mu)
    observed = np.zeros(count, dtype=bool)
    for j, t in enumerate(times):
        # match reconstructed grid times against the seen set to tolerate
        # float formatting drift
        near = seen_times[np.abs(seen_times - t) <= 1e-6]
        if near.size == 0:
            continue
        t_seen = float(near[0])
        observed[j] = True
        for i, pid in enumerate(partitions):
            m, s2 = cells[(pid, t_seen)]
            mu[i, j] = m
            sigma[i, j] = np.sqrt(s2)
    return PopulationSeries(times, partitions, mu, sigma, float(delta), observed)


@dataclass(frozen=True)
class FeatureWindow:
    """Inputs/target pair for one prediction time.

    ``inputs`` is (N, 2) for a single partition or (N, V, 2) jointly;
    ``target`` is (2,) or (V, 2) to match. ``filled`` marks windows whose
    inputs include zero-filled gaps.
    """

    time: float
    inputs: np.ndarray
    target: np.ndarray
    partition: str | None = None
    filled: bool = False


def build_feature_windows(series: PopulationSeries, n_inputs: int, partition: str | None = None) -> list[FeatureWindow]:
    """Per-partition windows: N past (mu, sigma) pairs -> next grid value.

    Yields one window per target grid index j in [N, T) whose target point
    was observed — T - N windows per partition on a fully observed grid.
    """
    if n_inputs < 1:
        raise ValueError("need at least one input step")
    pids = [partition] if partition is not None else list(series.partitions)
    windows: list[FeatureWindow] = []
    for pid in pids:
        row = series.partition_row(pid)
        for j in range(n_inputs, len(series.times)):
            if not series.observed[j]:
                continue
            sl = slice(j - n_inputs, j)
            inputs = np.stack([series.mu[row, sl], series.sigma[row, sl]], axis=1)
            windows.append(
                FeatureWindow(
                    time=float(series.times[j]),
                    inputs=inputs,
                    target=np.array([series.mu[row, j], series.sigma[row, j]]),
                    partition=pid,
                    filled=not bool(series.observed[sl].all()),
                )
            )
    return windows


def build_joint_windows(series: PopulationSeries, n_inputs: int) -> list[FeatureWindow]:
    """All-partition windows for the multi-way estimator: (N, V, 2) inputs."""
    if n_inputs < 1:
        raise ValueError("need at least one input step")
    windows: list[FeatureWindow] = []
    for j in range(n_inputs, len(series.times)):
        if not series.observed[j]:
            continue
        sl = slice(j - n_inputs, j)
        inputs = np.stack([series.mu[:, sl], series.sigma[:, sl]], axis=2).transpose(1, 0, 2)
        target = np.stack([series.mu[:, j], series.sigma[:, j]], axis=1)
        windows.append(
            FeatureWindow(
                time=float(series.times[j]),
                inputs=inputs,
                target=target,
                partition=None,
                filled=not bool(series.observed[sl].all()),
            )
        )
    return windows


def split_windows(windows: Sequence[FeatureWindow], fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)):
    """Chronological train/validation/test split by target time."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    times = sorted({w.time for w in windows})
    n = len(times)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    train_end = times[n_train - 1] if n_train else -np.inf
    val_end = times[n_train + n_val - 1] if n_train + n_val else -np.inf
    train = [w for w in windows if w.time <= train_end]
    val = [w for w in windows if train_end < w.time <= val_end]
    test = [w for w in windows if w.time > val_end]
    return train, val, test


# ---------------------------------------------------------------------------
# Single-way estimator


@dataclass
class SEModel:
    """Recurrent estimator over one partition's window; weights are shared
    across partitions, so a single instance serves the whole venue."""

    hidden_dim: int
    n_inputs: int
    gru: dict[str, Tensor]
    heads: dict[str, Tensor]

    HEAD_KEYS = ("w_mu", "b_mu", "w_sigma", "b_sigma")

    @classmethod
    def build(cls, hidden_dim: int = 16, n_inputs: int = 10, seed: int = 0) -> "SEModel":
        rng = np.random.default_rng(seed)
        gru = gru_params(rng, 2, hidden_dim, prefix="gru.")
        heads = {
            "w_mu": init_uniform(rng, (hidden_dim, 1), hidden_dim, name="head.w_mu"),
            "b_mu": Tensor(np.zeros((1, 1)), requires_grad=True, name="head.b_mu"),
            "w_sigma": init_uniform(rng, (hidden_dim, 1), hidden_dim, name="head.w_sigma"),
            "b_sigma": Tensor(np.zeros((1, 1)), requires_grad=True, name="head.b_sigma"),
        }
        return cls(hidden_dim=hidden_dim, n_inputs=n_inputs, gru=gru, heads=heads)

    def param_items(self) -> list[tuple[str, Tensor]]:
        items = [(f"gru.{k}", self.gru[k]) for k in GRU_PARAM_KEYS]
        items += [(f"head.{k}", self.heads[k]) for k in self.HEAD_KEYS]
        return items

    def params(self) -> list[Tensor]:
        return [t for _, t in self.param_items()]


def _clamp_sigma(s: Tensor, floor: float = EPS_SIGMA) -> Tensor:
    floor_t = Tensor(np.full_like(s.data, floor))
    return add(relu(sub(s, floor_t)), floor_t)


def se_forward(model: SEModel, inputs: np.ndarray, training: bool = False) -> tuple[Tensor, Tensor]:
    """Run windows (B, N, 2) through the cell; returns mu, sigma each (B, 1).

    Deviations are floored at inference so downstream density math never sees
    a non-positive spread; training keeps the raw head output.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    batch, steps, _ = x.shape
    h = Tensor(np.zeros((batch, model.hidden_dim)))
    for t in range(steps):
        h = gru_cell(Tensor(x[:, t, :]), h, model.gru)
    mu = add(matmul(h, model.heads["w_mu"]), model.heads["b_mu"])
    sig = add(matmul(h, model.heads["w_sigma"]), model.heads["b_sigma"])
    if not training:
        sig = _clamp_sigma(sig)
    return mu, sig


def se_predict_window(model: SEModel, inputs: np.ndarray) -> tuple[float, float]:
    mu, sig = se_forward(model, inputs, training=False)
    return float(mu.data[0, 0]), float(sig.data[0, 0])


# ---------------------------------------------------------------------------
# Multi-way estimator


@dataclass
class MEModel:
    """Joint estimator over every partition of one venue.

    Four unit outputs per partition — recurrent (T), graph-convolutional (S),
    convolve-then-recur (TS), recur-then-convolve (ST) — are concatenated,
    flattened per window, fused by self-attention, and mapped to mean and
    deviation heads. The partition order and propagation matrix are baked in
    at build time, so an instance is tied to its venue graph.
    """

    partitions: tuple[str, ...]
    adjacency: np.ndarray
    n_inputs: int
    hidden_dim: int
    attn_dim: int
    gcn_layers: int
    t_gru: dict[str, Tensor]
    s_ws: list[Tensor]
    ts_ws: list[Tensor]
    ts_gru: dict[str, Tensor]
    st_gru: dict[str, Tensor]
    st_ws: list[Tensor]
    attn: dict[str, Tensor]
    heads: dict[str, Tensor]
    prop: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.prop = gcn_propagation(self.adjacency)

    @classmethod
    def build(
        cls,
        partitions: Sequence[str],
        adjacency: np.ndarray,
        n_inputs: int = 10,
        hidden_dim: int = 16,
        attn_dim: int = 16,
        gcn_layers: int = 2,
        seed: int = 0,
    ) -> "MEModel":
        partitions = tuple(partitions)
        v = len(partitions)
        if adjacency.shape != (v, v):
            raise ValueError("adjacency does not match partition count")
        if gcn_layers < 1:
            raise ValueError("need at least one graph-convolution layer")
        rng = np.random.default_rng(seed)
        h = hidden_dim

        def stack(first_in: int, prefix: str) -> list[Tensor]:
            ws = [init_uniform(rng, (first_in, h), first_in, name=f"{prefix}w0")]
            for i in range(1, gcn_layers):
                ws.append(init_uniform(rng, (h, h), h, name=f"{prefix}w{i}"))
            return ws

        t_gru = gru_params(rng, 2, h, prefix="t_gru.")
        s_ws = stack(2 * n_inputs, "s.")
        ts_ws = stack(2, "ts.")
        ts_gru = gru_params(rng, h, h, prefix="ts_gru.")
        st_gru = gru_params(rng, 2, h, prefix="st_gru.")
        st_ws = stack(h, "st.")
        flat = 4 * v * h
        attn = {
            "w_q": init_uniform(rng, (flat, attn_dim), flat, name="attn.w_q"),
            "w_k": init_uniform(rng, (flat, attn_dim), flat, name="attn.w_k"),
            "w_v": init_uniform(rng, (flat, attn_dim), flat, name="attn.w_v"),
        }
        heads = {
            "w_mu": init_uniform(rng, (attn_dim, v), attn_dim, name="head.w_mu"),
            "b_mu": Tensor(np.zeros((1, v)), requires_grad=True, name="head.b_mu"),
            "w_sigma": init_uniform(rng, (attn_dim, v), attn_dim, name="head.w_sigma"),
            "b_sigma": Tensor(np.zeros((1, v)), requires_grad=True, name="head.b_sigma"),
        }
        return cls(
            partitions=partitions,
            adjacency=np.asarray(adjacency, dtype=np.float64),
            n_inputs=n_inputs,
            hidden_dim=h,
            attn_dim=attn_dim,
            gcn_layers=gcn_layers,
            t_gru=t_gru,
            s_ws=s_ws,
            ts_ws=ts_ws,
            ts_gru=ts_gru,
            st_gru=st_gru,
            st_ws=st_ws,
            attn=attn,
            heads=heads,
        )

    def param_items(self) -> list[tuple[str, Tensor]]:
        items = [(f"t_gru.{k}", self.t_gru[k]) for k in GRU_PARAM_KEYS]
        items += [(f"s.w{i}", w) for i, w in enumerate(self.s_ws)]
        items += [(f"ts.w{i}", w) for i, w in enumerate(self.ts_ws)]
        items += [(f"ts_gru.{k}", self.ts_gru[k]) for k in GRU_PARAM_KEYS]
        items += [(f"st_gru.{k}", self.st_gru[k]) for k in GRU_PARAM_KEYS]
        items += [(f"st.w{i}", w) for i, w in enumerate(self.st_ws)]
        items += [(f"attn.{k}", self.attn[k]) for k in ("w_q", "w_k", "w_v")]
        items += [(f"head.{k}", self.heads[k]) for k in SEModel.HEAD_KEYS]
        return items

    def params(self) -> list[Tensor]:
        return [t for _, t in self.param_items()]


def _graph_mix(prop_t: Tensor, h: Tensor, batch: int, v: int) -> Tensor:
    # Rows arrive window-major (b*V + v). Regroup partition-major so the
    # propagation matrix can hit all windows/features in one matmul.
    width = h.data.shape[1]
    vm = regroup_rows(h, batch, v)
    mixed = matmul(prop_t, reshape(vm, (v, batch * width)))
    return regroup_rows(reshape(mixed, (v * batch, width)), v, batch)


def _gcn_stack(prop_t: Tensor, h: Tensor, weights: Sequence[Tensor], batch: int, v: int) -> Tensor:
    for w in weights:
        h = relu(matmul(_graph_mix(prop_t, h, batch, v), w))
    return h


def me_forward(model: MEModel, inputs: np.ndarray, training: bool = False) -> tuple[Tensor, Tensor]:
    """Run joint windows (B, N, V, 2) through all four units.

    Returns mu, sigma each (B, V) in the model's partition order.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 3:
        x = x[None, :, :, :]
    batch, steps, v, _ = x.shape
    if v != len(model.partitions):
        raise ValueError(f"expected {len(model.partitions)} partitions, got {v}")
    if steps != model.n_inputs:
        raise ValueError(f"expected {model.n_inputs} input steps, got {steps}")
    h_dim = model.hidden_dim
    prop_t = Tensor(model.prop)
    rows = batch * v
    step_inputs = [Tensor(x[:, t, :, :].reshape(rows, 2)) for t in range(steps)]

    # T: recurrent over time, each partition independently.
    h_t = Tensor(np.zeros((rows, h_dim)))
    for xt in step_inputs:
        h_t = gru_cell(xt, h_t, model.t_gru)

    # S: whole window flattened per partition, mixed over the graph.
    s_in = Tensor(x.transpose(0, 2, 1, 3).reshape(rows, steps * 2))
    h_s = _gcn_stack(prop_t, s_in, model.s_ws, batch, v)

    # TS: graph-mix every timestep, then recur over the mixed sequence.
    h_ts = Tensor(np.zeros((rows, h_dim)))
    for xt in step_inputs:
        g = _gcn_stack(prop_t, xt, model.ts_ws, batch, v)
        h_ts = gru_cell(g, h_ts, model.ts_gru)

    # ST: recur first, then graph-mix the final states.
    h_st = Tensor(np.zeros((rows, h_dim)))
    for xt in step_inputs:
        h_st = gru_cell(xt, h_st, model.st_gru)
    h_st = _gcn_stack(prop_t, h_st, model.st_ws, batch, v)

    z_all = concat([h_t, h_s, h_ts, h_st], axis=1)  # (B*V, 4H), window-major
    fused_rows = []
    flat = 4 * v * h_dim
    for b in range(batch):
        z_b = reshape(slice_rows(z_all, b * v, (b + 1) * v), (1, flat))
        fused_rows.append(self_attention(z_b, model.attn["w_q"], model.attn["w_k"], model.attn["w_v"], model.attn_dim))
    fused = concat(fused_rows, axis=0) if len(fused_rows) > 1 else fused_rows[0]
    mu = add(matmul(fused, model.heads["w_mu"]), model.heads["b_mu"])
    sig = add(matmul(fused, model.heads["w_sigma"]), model.heads["b_sigma"])
    if not training:
        sig = _clamp_sigma(sig)
    return mu, sig


def me_predict_window(model: MEModel, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, sig = me_forward(model, inputs, training=False)
    return mu.data[0].copy(), sig.data[0].copy()


# ---------------------------------------------------------------------------
# Losses and divergence


def wasserstein_loss(mu_pred: Tensor, sigma_pred: Tensor, mu_true: np.ndarray, sigma_true: np.ndarray) -> Tensor:
    """Squared 2-Wasserstein distance between diagonal Normals, mean per window.

    For one window this is sum (mu - mu_hat)^2 + sum (sigma - sigma_hat)^2.
    """
    batch = mu_pred.data.shape[0]
    d_mu = square(sub(mu_pred, Tensor(mu_true)))
    d_sig = square(sub(sigma_pred, Tensor(sigma_true)))
    return scale(tensor_sum(add(d_mu, d_sig)), 1.0 / batch)


def mse_variance_loss(
    mu_pred: Tensor,
    sigma_pred: Tensor,
    mu_true: np.ndarray,
    sigma_true: np.ndarray,
    lam: float = 1.0,
) -> Tensor:
    """Half the mean-squared error on means plus lam times on variances."""
    batch = mu_pred.data.shape[0]
    d_mu = square(sub(mu_pred, Tensor(mu_true)))
    d_var = square(sub(square(sigma_pred), Tensor(np.asarray(sigma_true) ** 2)))
    return scale(add(tensor_sum(d_mu), scale(tensor_sum(d_var), lam)), 0.5 / batch)


LOSSES = {
    "wasserstein": wasserstein_loss,
    "mse_variance": mse_variance_loss,
}


def kl_normal(mu_true: float, sigma_true: float, mu_pred: float, sigma_pred: float) -> float:
    """KL(predicted || true) for two univariate Normals."""
    if sigma_true <= 0:
        raise ValueError("true deviation must be positive")
    if sigma_pred <= 0:
        raise ValueError("predicted deviation must be positive")
    return (
        np.log(sigma_true / sigma_pred)
        + (sigma_pred**2 + (mu_pred - mu_true) ** 2) / (2.0 * sigma_true**2)
        - 0.5
    )


def average_kl(mu_true, sigma_true, mu_pred, sigma_pred) -> tuple[float, int]:
    """Mean divergence over entries, skipping degenerate true deviations.

    Returns (mean, skipped_count); the mean is NaN when nothing qualifies.
    """
    mt = np.asarray(mu_true, dtype=float).ravel()
    st = np.asarray(sigma_true, dtype=float).ravel()
    mp = np.asarray(mu_pred, dtype=float).ravel()
    sp = np.asarray(sigma_pred, dtype=float).ravel()
    keep = st > 0
    skipped = int((~keep).sum())
    if not keep.any():
        return float("nan"), skipped
    vals = [kl_normal(mt[i], st[i], mp[i], sp[i]) for i in np.nonzero(keep)[0]]
    return float(np.mean(vals)), skipped


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainingConfig:
    lr: float = 0.01
    max_epochs: int = 200
    patience: int = 10
    min_improvement: float = 1e-4
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    loss: str = "wasserstein"

    def __post_init__(self) -> None:
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; options: {sorted(LOSSES)}")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be positive")


@dataclass
class TrainingResult:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val: float

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)


def _windows_to_arrays(windows: Sequence[FeatureWindow], joint: bool):
    xs = np.stack([w.inputs for w in windows])
    targets = np.stack([w.target for w in windows])
    if joint:
        return xs, targets[:, :, 0], targets[:, :, 1]
    return xs, targets[:, 0:1], targets[:, 1:2]


def _eval_loss(model, xs, mu_true, sigma_true, loss_fn) -> float:
    forward = me_forward if isinstance(model, MEModel) else se_forward
    mu, sig = forward(model, xs, training=True)
    return loss_fn(mu, sig, mu_true, sigma_true).item()


def train(model, train_windows: Sequence[FeatureWindow], val_windows: Sequence[FeatureWindow], config: TrainingConfig) -> TrainingResult:
    """Fit in place with Adam; early-stops on the validation loss.

    Stops after ``patience`` epochs without the monitored loss improving by
    at least ``min_improvement``, then restores the best parameters seen.
    With no validation windows, the training loss is monitored instead.
    """
    if not train_windows:
        raise ValueError("no training windows")
    joint = isinstance(model, MEModel)
    forward = me_forward if joint else se_forward
    loss_fn = LOSSES[config.loss]
    xs, mu_true, sigma_true = _windows_to_arrays(train_windows, joint)
    if val_windows:
        val_arrays = _windows_to_arrays(val_windows, joint)
    else:
        val_arrays = None
    params = model.params()
    state = AdamState(params=params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    count = len(train_windows)
    batch_size = config.batch_size or count

    best_val = np.inf
    best_epoch = -1
    best_data: list[np.ndarray] | None = None
    stall = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    for epoch in range(config.max_epochs):
        order = rng.permutation(count)
        epoch_loss = 0.0
        for start in range(0, count, batch_size):
            idx = order[start : start + batch_size]
            mu, sig = forward(model, xs[idx], training=True)
            loss = loss_fn(mu, sig, mu_true[idx], sigma_true[idx])
            zero_grad(params)
            backward(loss)
            adam_step(state)
            epoch_loss += loss.item() * len(idx)
        train_losses.append(epoch_loss / count)

        if val_arrays is not None:
            monitored = _eval_loss(model, *val_arrays, loss_fn)
            val_losses.append(monitored)
        else:
            monitored = train_losses[-1]

        if monitored < best_val - config.min_improvement:
            best_val = monitored
            best_epoch = epoch
            best_data = [p.data.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    if best_data is not None:
        for p, d in zip(params, best_data):
            p.data = d
    return TrainingResult(train_losses=train_losses, val_losses=val_losses, best_epoch=best_epoch, best_val=float(best_val))


# ---------------------------------------------------------------------------
# Serialization


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode("ascii"),
    }


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    arr = np.frombuffer(raw, dtype=np.float64).copy()
    return arr.reshape(doc["shape"])


def _payload_checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def serialize_model(model) -> dict:
    """Model -> JSON-able document with a weight checksum."""
    if isinstance(model, SEModel):
        arch = {"kind": "se", "hidden_dim": model.hidden_dim, "n_inputs": model.n_inputs}
    elif isinstance(model, MEModel):
        arch = {
            "kind": "me",
            "hidden_dim": model.hidden_dim,
            "n_inputs": model.n_inputs,
            "attn_dim": model.attn_dim,
            "gcn_layers": model.gcn_layers,
            "partitions": list(model.partitions),
            "adjacency": model.adjacency.astype(int).tolist(),
        }
    else:
        raise SerializationError(f"cannot serialize {type(model).__name__}")
    payload = {name: _encode_array(t.data) for name, t in model.param_items()}
    return {"format": 1, "arch": arch, "params": payload, "checksum": _payload_checksum(payload)}


def deserialize_model(doc: dict):
    """Document -> model; raises ``SerializationError`` on tampering."""
    try:
        arch = doc["arch"]
        payload = doc["params"]
        stated = doc["checksum"]
    except (KeyError, TypeError) as exc:
        raise SerializationError(f"malformed model document: missing {exc}") from exc
    if doc.get("format") != 1:
        raise SerializationError(f"unsupported format {doc.get('format')!r}")
    if _payload_checksum(payload) != stated:
        raise SerializationError("checksum mismatch: weights corrupted or edited")
    kind = arch.get("kind")
    if kind == "se":
        model = SEModel.build(hidden_dim=arch["hidden_dim"], n_inputs=arch["n_inputs"], seed=0)
    elif kind == "me":
        model = MEModel.build(
            partitions=arch["partitions"],
            adjacency=np.asarray(arch["adjacency"], dtype=np.float64),
            n_inputs=arch["n_inputs"],
            hidden_dim=arch["hidden_dim"],
            attn_dim=arch["attn_dim"],
            gcn_layers=arch["gcn_layers"],
            seed=0,
        )
    else:
        raise SerializationError(f"unknown model kind {kind!r}")
    names = {name for name, _ in model.param_items()}
    if set(payload) != names:
        raise SerializationError("parameter names do not match the architecture")
    for name, tensor in model.param_items():
        arr = _decode_array(payload[name])
        if arr.shape != tensor.data.shape:
            raise SerializationError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
        tensor.data = arr
    return model


def save_model(path, model) -> None:
    with open(path, "w") as fh:
        json.dump(serialize_model(model), fh)


def load_model(path):
    with open(path) as fh:
        return deserialize_model(json.load(fh))
