"""Minimal neural kernel: dense layers, stacked GRU cells, analytic
backpropagation, Adam, and soft target updates.

Everything is plain numpy. Forward passes return a tape holding the
intermediate values the matching backward pass needs; backward passes
accumulate parameter gradients into the owning :class:`ParamStore` and
return the gradient with respect to the inputs.

Conventions, fixed so the finite-difference checks are unambiguous:

* dense layer: ``y = x @ W.T + b`` with ``W`` of shape ``(fan_out, fan_in)``;
* hidden activations are tanh, the output layer is linear;
* GRU cell (reset applied to the hidden state before the candidate matmul)::

      z = sigmoid(Wz x + Uz h + bz)
      r = sigmoid(Wr x + Ur h + br)
      c = tanh(Wh x + Uh (r * h) + bh)
      h' = (1 - z) * h + z * c

* parameters initialize uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

Parameters are single precision in production; all code is dtype-generic
so tests can run the same math in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NanError(RuntimeError):
    """A parameter or gradient stopped being finite."""


class StaleTapeError(RuntimeError):
    """A backward pass was given a tape recorded before a parameter update."""


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Overflow-safe softmax (max subtraction)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


class ParamStore:
    """Named parameter arrays with paired gradient buffers and Adam moments.

    Single writer at a time; concurrent read-only forward passes on an
    immutable snapshot are fine. ``version`` increments whenever parameter
    values change, so tapes recorded against older values can be rejected.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.version = 0

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = np.array(value, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def schema(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, arr in self.params.items():
            out.add(name, arr)
            out.grads[name][...] = self.grads[name]
            out.m[name][...] = self.m[name]
            out.v[name][...] = self.v[name]
        out.step_count = self.step_count
        out.version = self.version
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, arr in self.params.items():
            out.add(name, arr.astype(dtype))
        out.step_count = self.step_count
        return out

    def check_finite(self) -> None:
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise NanError(f"non-finite values in parameter {name!r}")


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One Adam update over every parameter; zeroes gradients afterwards."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NanError(f"non-finite gradient for parameter {name!r}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    store.zero_grads()
    store.version += 1
    store.check_finite()


def soft_update(target: ParamStore, online: ParamStore, tau: float) -> None:
    """Polyak update: target <- tau * online + (1 - tau) * target."""
    if target.schema() != online.schema():
        raise ValueError("soft_update: parameter schemas differ")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for name, tgt in target.params.items():
        tgt *= 1.0 - tau
        tgt += tau * online.params[name]
    target.version += 1


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths for a dense stack: (in, hidden..., out).

    Hidden layers use tanh; the output layer is linear. Two entries give a
    bare linear map, which the gradient tests rely on.
    """

    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(s <= 0 for s in self.sizes):
            raise ValueError(f"widths must be positive, got {self.sizes}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def param_names(self, prefix: str = "") -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"{prefix}W{i}", f"{prefix}b{i}"]
        return names


def init_mlp_params(spec: MlpSpec, store: ParamStore, rng: np.random.Generator,
                    prefix: str = "") -> None:
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        store.add(f"{prefix}W{i}",
                  rng.uniform(-bound, bound, (fan_out, fan_in)).astype(np.float32))
        store.add(f"{prefix}b{i}",
                  rng.uniform(-bound, bound, fan_out).astype(np.float32))


@dataclass
class MlpTape:
    xs: list  # input to each layer; xs[l] has shape (B, sizes[l])
    single: bool  # input arrived as a 1-d vector
    version: int


def mlp_forward(spec: MlpSpec, store: ParamStore, x, prefix: str = ""):
    """Run the dense stack; returns (output, tape).

    Accepts a single vector or a (B, in) batch; the output matches.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != spec input {spec.sizes[0]}")
    xs = [x]
    for i in range(spec.n_layers):
        z = x @ store[f"{prefix}W{i}"].T + store[f"{prefix}b{i}"]
        x = np.tanh(z) if i < spec.n_layers - 1 else z
        xs.append(x)
    tape = MlpTape(xs=xs[:-1], single=single, version=store.version)
    out = xs[-1][0] if single else xs[-1]
    return out, tape


def mlp_backward(spec: MlpSpec, store: ParamStore, tape: MlpTape, dout,
                 prefix: str = ""):
    """Backpropagate through a taped forward pass.

    Accumulates parameter gradients into ``store.grads`` and returns the
    gradient with respect to the input.
    """
    if tape.version != store.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    g = np.asarray(dout)
    if tape.single:
        g = g[None, :]
    for i in range(spec.n_layers - 1, -1, -1):
        x_in = tape.xs[i]
        store.grads[f"{prefix}W{i}"] += g.T @ x_in
        store.grads[f"{prefix}b{i}"] += g.sum(axis=0)
        g = g @ store[f"{prefix}W{i}"]
        if i > 0:
            g = g * (1.0 - np.square(tape.xs[i]))
    return g[0] if tape.single else g


# ---------------------------------------------------------------------------
# GRU stack
# ---------------------------------------------------------------------------

_GATE_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


@dataclass(frozen=True)
class GruSpec:
    input_size: int
    hidden_size: int
    layers: int = 2

    def __post_init__(self):
        if self.input_size <= 0 or self.hidden_size <= 0 or self.layers <= 0:
            raise ValueError("GruSpec dimensions must be positive")

    def layer_input(self, layer: int) -> int:
        return self.input_size if layer == 0 else self.hidden_size

    def param_names(self, prefix: str = "") -> list[str]:
        return [f"{prefix}l{l}.{g}" for l in range(self.layers) for g in _GATE_NAMES]


def init_gru_params(spec: GruSpec, store: ParamStore, rng: np.random.Generator,
                    prefix: str = "") -> None:
    h = spec.hidden_size
    for l in range(spec.layers):
        n_in = spec.layer_input(l)
        bound = 1.0 / np.sqrt(n_in)
        for gate in ("z", "r", "h"):
            store.add(f"{prefix}l{l}.W{gate}",
                      rng.uniform(-bound, bound, (h, n_in)).astype(np.float32))
            store.add(f"{prefix}l{l}.U{gate}",
                      rng.uniform(-bound, bound, (h, h)).astype(np.float32))
            store.add(f"{prefix}l{l}.b{gate}",
                      rng.uniform(-bound, bound, h).astype(np.float32))


@dataclass
class GruTape:
    # per layer: dict with arrays of shape (T, ...) holding x, h_prev, z, r, c
    layers: list = field(default_factory=list)
    version: int = 0


def gru_forward(spec: GruSpec, store: ParamStore, seq, prefix: str = ""):
    """Encode a (T, input_size) sequence; returns (final hidden, tape).

    The final hidden state is the top layer's state after the last step.
    """
    x_seq = np.asarray(seq)
    if x_seq.ndim != 2 or x_seq.shape[1] != spec.input_size:
        raise ValueError(
            f"sequence must be (T, {spec.input_size}), got {x_seq.shape}")
    if x_seq.shape[0] < 1:
        raise ValueError("sequence length must be >= 1")
    tape = GruTape(version=store.version)
    dtype = x_seq.dtype if np.issubdtype(x_seq.dtype, np.floating) else np.float64
    for l in range(spec.layers):
        p = f"{prefix}l{l}."
        Wz, Uz, bz = store[p + "Wz"], store[p + "Uz"], store[p + "bz"]
        Wr, Ur, br = store[p + "Wr"], store[p + "Ur"], store[p + "br"]
        Wh, Uh, bh = store[p + "Wh"], store[p + "Uh"], store[p + "bh"]
        h = np.zeros(spec.hidden_size, dtype=dtype)
        xs, h_prevs, zs, rs, cs = [], [], [], [], []
        outs = []
        for t in range(x_seq.shape[0]):
            x = x_seq[t]
            z = sigmoid(Wz @ x + Uz @ h + bz)
            r = sigmoid(Wr @ x + Ur @ h + br)
            c = np.tanh(Wh @ x + Uh @ (r * h) + bh)
            h_new = (1.0 - z) * h + z * c
            xs.append(x)
            h_prevs.append(h)
            zs.append(z)
            rs.append(r)
            cs.append(c)
            outs.append(h_new)
            h = h_new
        tape.layers.append(
            {"x": np.asarray(xs), "h_prev": np.asarray(h_prevs),
             "z": np.asarray(zs), "r": np.asarray(rs), "c": np.asarray(cs)})
        x_seq = np.asarray(outs)
    return x_seq[-1], tape


def gru_backward(spec: GruSpec, store: ParamStore, tape: GruTape, dh_final,
                 prefix: str = ""):
    """BPTT from a gradient on the final hidden state.

    Accumulates parameter gradients and returns the gradient with respect
    to the input sequence, shape (T, input_size).
    """
    if tape.version != store.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    T = tape.layers[0]["x"].shape[0]
    dh_final = np.asarray(dh_final)
    dout = np.zeros((T, spec.hidden_size), dtype=dh_final.dtype)
    dout[-1] = dh_final
    for l in range(spec.layers - 1, -1, -1):
        p = f"{prefix}l{l}."
        Uz, Ur, Uh = store[p + "Uz"], store[p + "Ur"], store[p + "Uh"]
        rec = tape.layers[l]
        dx_seq = np.zeros((T, spec.layer_input(l)), dtype=dout.dtype)
        dh = np.zeros(spec.hidden_size, dtype=dout.dtype)
        for t in range(T - 1, -1, -1):
            g = dh + dout[t]
            x, h_prev = rec["x"][t], rec["h_prev"][t]
            z, r, c = rec["z"][t], rec["r"][t], rec["c"][t]
            dz = g * (c - h_prev)
            dc = g * z
            dpre_c = dc * (1.0 - np.square(c))
            dpre_z = dz * z * (1.0 - z)
            drh = Uh.T @ dpre_c
            dr = drh * h_prev
            dpre_r = dr * r * (1.0 - r)
            store.grads[p + "Wz"] += np.outer(dpre_z, x)
            store.grads[p + "Uz"] += np.outer(dpre_z, h_prev)
            store.grads[p + "bz"] += dpre_z
            store.grads[p + "Wr"] += np.outer(dpre_r, x)
            store.grads[p + "Ur"] += np.outer(dpre_r, h_prev)
            store.grads[p + "br"] += dpre_r
            store.grads[p + "Wh"] += np.outer(dpre_c, x)
            store.grads[p + "Uh"] += np.outer(dpre_c, r * h_prev)
            store.grads[p + "bh"] += dpre_c
            dx_seq[t] = (store[p + "Wz"].T @ dpre_z
                         + store[p + "Wr"].T @ dpre_r
                         + store[p + "Wh"].T @ dpre_c)
            dh = (g * (1.0 - z) + drh * r
                  + Uz.T @ dpre_z + Ur.T @ dpre_r)
        dout = dx_seq
    return dout


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(store: ParamStore, loss_and_grad, tolerance=1e-4,
                   eps=1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grad(store) -> float`` must run a deterministic forward pass
    and accumulate analytic gradients into ``store.grads``. The check runs
    on a float64 copy of the parameters so finite differences are not
    drowned by single-precision noise. Report only; never raises on failure.
    """
    work = store.astype(np.float64)
    work.zero_grads()
    loss_and_grad(work)
    analytic = {name: g.copy() for name, g in work.grads.items()}
    per_param: dict[str, float] = {}
    worst = 0.0
    for name, p in work.params.items():
        numeric = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_n = numeric.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + eps
            work.zero_grads()
            f_plus = loss_and_grad(work)
            flat_p[j] = orig - eps
            work.zero_grads()
            f_minus = loss_and_grad(work)
            flat_p[j] = orig
            flat_n[j] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name]
        denom = np.maximum(np.abs(a) + np.abs(numeric), 1e-6)
        err = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
        per_param[name] = err
        worst = max(worst, err)
    return GradCheckReport(max_rel_error=worst, per_param=per_param,
                           tolerance=tolerance)
