"""Network blocks built on noisy activations.

Dense layers, GRU and LSTM cells whose gates are noisy hard-sigmoids and
whose candidates are noisy hard-tanh units, and a sequence classifier
(one-hot input, recurrent cell, time-mean pooling, ReLU MLP head).

Every block exposes ``parameters()`` in a fixed order (weights before
biases before activation parameters, layer by layer), which is also the
checkpoint order. Each gate type in a cell owns one shared noise
parameter p; dense layers can opt into per-unit p.

Hard gates are exact: a gate pre-activation at or past the saturation
threshold yields exactly 1.0 (or 0.0), so a fully open gate passes the
cell state through unchanged, with no leak.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ForwardContext, Parameter, Tape, Tensor, VarId, as_tensor
from .activations import (
    HARD_SIGMOID,
    HARD_TANH,
    NoiseMode,
    NoisyActConfig,
    make_noisy_config,
    noisy_forward,
)

# ---------------------------------------------------------------------------
# Weight initializers.


def uniform_fan_in(rng, fan_in: int, fan_out: int) -> Tensor:
    """Uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], shape [fan_in, fan_out]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def orthogonal(rng, rows: int, cols: int, scale: float = 0.01) -> Tensor:
    """Scaled orthogonal matrix (rows or columns orthonormal before scaling)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    if rows < cols:
        q = q.T
    return scale * q[:rows, :cols]


def _recurrent_weight(rng, hidden: int, kind: str) -> Tensor:
    if kind == "orthogonal":
        return orthogonal(rng, hidden, hidden)
    if kind == "uniform":
        return uniform_fan_in(rng, hidden, hidden)
    raise ValueError(f"unknown recurrent init {kind!r}")


# ---------------------------------------------------------------------------
# Dense layer and MLP.

SOFT_ACTIVATIONS = ("relu", "tanh", "sigmoid")


class DenseLayer:
    """Affine map with an optional activation.

    ``activation`` is a NoisyActConfig, one of the soft names
    ("relu"/"tanh"/"sigmoid"), or None for a linear layer.
    """

    def __init__(self, name: str, in_dim: int, out_dim: int, activation, rng) -> None:
        if isinstance(activation, str) and activation not in SOFT_ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.name = name
        self.weight = Parameter(f"{name}.weight", uniform_fan_in(rng, in_dim, out_dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_dim))
        self.activation = activation

    def forward(self, ctx: ForwardContext, x: VarId) -> VarId:
        tape = ctx.tape
        z = tape.broadcast_add(tape.matmul(x, ctx.var(self.weight)), ctx.var(self.bias))
        act = self.activation
        if act is None:
            return z
        if isinstance(act, str):
            return getattr(tape, act)(z)
        return noisy_forward(ctx, act, z)

    def parameters(self) -> list[Parameter]:
        params = [self.weight, self.bias]
        if isinstance(self.activation, NoisyActConfig) and self.activation.p is not None:
            params.append(self.activation.p)
        return params


def dense_forward(layer: DenseLayer, x, rng=None, training: bool = False) -> Tensor:
    """Convenience single-layer evaluation on plain arrays."""
    tape = Tape()
    ctx = ForwardContext(tape, rng=rng, training=training)
    return tape.value(layer.forward(ctx, tape.constant(as_tensor(x))))


class Mlp:
    """Stack of dense layers; the last layer is linear (logits)."""

    def __init__(self, name: str, sizes, rng, activation_for) -> None:
        """``sizes`` is [in, hidden..., out]; ``activation_for(name, units)``
        returns the activation spec for each hidden layer."""
        if len(sizes) < 2:
            raise ValueError("Mlp needs at least input and output sizes")
        self.name = name
        self.layers: list[DenseLayer] = []
        n_layers = len(sizes) - 1
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layer_name = f"{name}.l{i}"
            act = None if i == n_layers - 1 else activation_for(layer_name, b)
            self.layers.append(DenseLayer(layer_name, a, b, act, rng))

    def forward(self, ctx: ForwardContext, x: VarId) -> VarId:
        for layer in self.layers:
            x = layer.forward(ctx, x)
        return x

    def logits(self, ctx: ForwardContext, inputs) -> VarId:
        return self.forward(ctx, ctx.tape.constant(as_tensor(inputs)))

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


# ---------------------------------------------------------------------------
# Recurrent cells.


class _GateBlock:
    """Weights for one gate: input map, recurrent map, bias, activation."""

    def __init__(
        self,
        name: str,
        in_dim: int,
        hidden: int,
        base,
        rng,
        mode: NoiseMode,
        alpha: float,
        c: float,
        sigma_fixed: float,
        recurrent_init: str,
        bias_init: float = 0.0,
        bias_spread: float = 0.0,
        p_init: float = 1.0,
    ) -> None:
        self.w_in = Parameter(f"{name}.w_in", uniform_fan_in(rng, in_dim, hidden))
        self.w_rec = Parameter(f"{name}.w_rec", _recurrent_weight(rng, hidden, recurrent_init))
        # a bias_spread wider than the saturation threshold starts a slice
        # of the units saturated, which only the noise path can train
        bias = np.full(hidden, float(bias_init))
        if bias_spread > 0.0:
            bias = bias + rng.uniform(-bias_spread, bias_spread, (hidden,))
        self.bias = Parameter(f"{name}.bias", bias)
        self.act = make_noisy_config(
            base, mode, rng, alpha=alpha, c=c, sigma_fixed=sigma_fixed,
            p_init=p_init, name=name,
        )

    def pre_activation(self, ctx: ForwardContext, x_t: VarId, h_prev: VarId) -> VarId:
        tape = ctx.tape
        z = tape.add(
            tape.matmul(x_t, ctx.var(self.w_in)), tape.matmul(h_prev, ctx.var(self.w_rec))
        )
        return tape.broadcast_add(z, ctx.var(self.bias))

    def forward(self, ctx: ForwardContext, x_t: VarId, h_prev: VarId) -> VarId:
        return noisy_forward(ctx, self.act, self.pre_activation(ctx, x_t, h_prev))

    def parameters(self) -> list[Parameter]:
        params = [self.w_in, self.w_rec, self.bias]
        if self.act.p is not None:
            params.append(self.act.p)
        return params


class GruCell:
    """Gated recurrent unit with noisy hard gates.

    z and r are noisy hard-sigmoid gates, the candidate is noisy
    hard-tanh, and the state update is ``h_t = (1-z)*h_prev + z*cand``.
    With deterministic mode this is the standard recurrence with
    hard-saturating nonlinearities.
    """

    def __init__(
        self,
        name: str,
        in_dim: int,
        hidden: int,
        rng,
        mode: NoiseMode = NoiseMode.DETERMINISTIC,
        alpha: float = 1.0,
        c: float = 0.5,
        sigma_fixed: float = 0.05,
        recurrent_init: str = "uniform",
        bias_spread: float = 0.0,
        p_init: float = 1.0,
    ) -> None:
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        common = dict(
            in_dim=in_dim, hidden=hidden, rng=rng, mode=mode, alpha=alpha, c=c,
            sigma_fixed=sigma_fixed, recurrent_init=recurrent_init,
            bias_spread=bias_spread, p_init=p_init,
        )
        self.update = _GateBlock(f"{name}.update", base=HARD_SIGMOID, **common)
        self.reset = _GateBlock(f"{name}.reset", base=HARD_SIGMOID, **common)
        self.candidate = _GateBlock(f"{name}.candidate", base=HARD_TANH, **common)

    def initial_state(self, batch: int) -> Tensor:
        return np.zeros((batch, self.hidden))

    def step(self, ctx: ForwardContext, h_prev: VarId, x_t: VarId) -> VarId:
        tape = ctx.tape
        z = self.update.forward(ctx, x_t, h_prev)
        r = self.reset.forward(ctx, x_t, h_prev)
        gated_prev = tape.mul(r, h_prev)
        cand = noisy_forward(
            ctx, self.candidate.act, self.candidate.pre_activation(ctx, x_t, gated_prev)
        )
        keep = tape.sub(tape.constant(np.ones(tape.shape(z))), z)
        return tape.add(tape.mul(keep, h_prev), tape.mul(z, cand))

    def parameters(self) -> list[Parameter]:
        return (
            self.update.parameters() + self.reset.parameters() + self.candidate.parameters()
        )


class LstmCell:
    """LSTM with noisy hard gates.

    Input/forget/output gates are noisy hard-sigmoids; the cell candidate
    and the cell-output nonlinearity are noisy hard-tanh. The state
    update is ``c_t = f*c_prev + i*cand``, ``h_t = o*act(c_t)``. A fully
    open forget gate (pre-activation >= threshold) passes c_prev through
    exactly.
    """

    def __init__(
        self,
        name: str,
        in_dim: int,
        hidden: int,
        rng,
        mode: NoiseMode = NoiseMode.DETERMINISTIC,
        alpha: float = 1.0,
        c: float = 0.5,
        sigma_fixed: float = 0.05,
        recurrent_init: str = "uniform",
        forget_bias: float = 1.0,
        input_bias: float = 0.0,
        bias_spread: float = 0.0,
        p_init: float = 1.0,
    ) -> None:
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        common = dict(
            in_dim=in_dim, hidden=hidden, rng=rng, mode=mode, alpha=alpha, c=c,
            sigma_fixed=sigma_fixed, recurrent_init=recurrent_init,
            bias_spread=bias_spread, p_init=p_init,
        )
        self.gate_in = _GateBlock(
            f"{name}.gate_in", base=HARD_SIGMOID, bias_init=input_bias, **common
        )
        self.gate_forget = _GateBlock(
            f"{name}.gate_forget", base=HARD_SIGMOID, bias_init=forget_bias, **common
        )
        self.gate_out = _GateBlock(f"{name}.gate_out", base=HARD_SIGMOID, **common)
        self.candidate = _GateBlock(f"{name}.candidate", base=HARD_TANH, **common)
        self.cell_act = make_noisy_config(
            HARD_TANH, mode, rng, alpha=alpha, c=c, sigma_fixed=sigma_fixed,
            p_init=p_init, name=f"{name}.cell_act",
        )

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        zeros = np.zeros((batch, self.hidden))
        return zeros, zeros.copy()

    def step(
        self, ctx: ForwardContext, h_prev: VarId, c_prev: VarId, x_t: VarId
    ) -> tuple[VarId, VarId]:
        tape = ctx.tape
        i = self.gate_in.forward(ctx, x_t, h_prev)
        f = self.gate_forget.forward(ctx, x_t, h_prev)
        o = self.gate_out.forward(ctx, x_t, h_prev)
        cand = self.candidate.forward(ctx, x_t, h_prev)
        c_t = tape.add(tape.mul(f, c_prev), tape.mul(i, cand))
        h_t = tape.mul(o, noisy_forward(ctx, self.cell_act, c_t))
        return h_t, c_t

    def parameters(self) -> list[Parameter]:
        params = (
            self.gate_in.parameters()
            + self.gate_forget.parameters()
            + self.gate_out.parameters()
            + self.candidate.parameters()
        )
        if self.cell_act.p is not None:
            params.append(self.cell_act.p)
        return params


def gru_step(cell: GruCell, h_prev, x_t, rng=None, training: bool = False) -> Tensor:
    """One GRU step on plain arrays (fresh tape)."""
    tape = Tape()
    ctx = ForwardContext(tape, rng=rng, training=training)
    h = cell.step(ctx, tape.constant(as_tensor(h_prev)), tape.constant(as_tensor(x_t)))
    return tape.value(h)


def lstm_step(cell: LstmCell, state, x_t, rng=None, training: bool = False):
    """One LSTM step on plain arrays (fresh tape); state is (h, c)."""
    h_prev, c_prev = state
    tape = Tape()
    ctx = ForwardContext(tape, rng=rng, training=training)
    h, c = cell.step(
        ctx,
        tape.constant(as_tensor(h_prev)),
        tape.constant(as_tensor(c_prev)),
        tape.constant(as_tensor(x_t)),
    )
    return tape.value(h), tape.value(c)


# ---------------------------------------------------------------------------
# Sequence classifier: one-hot tokens -> LSTM -> time-mean pool -> ReLU MLP.


class SequenceClassifier:
    """Classify integer token sequences with an LSTM and an MLP head.

    The pooled representation is the arithmetic mean of the hidden states
    over time steps; the head is a one-hidden-layer ReLU MLP.
    """

    def __init__(
        self,
        name: str,
        vocab_size: int,
        n_classes: int,
        rng,
        hidden: int = 32,
        head_hidden: int = 64,
        mode: NoiseMode = NoiseMode.DETERMINISTIC,
        alpha: float = 1.0,
        c: float = 0.5,
        sigma_fixed: float = 0.05,
        recurrent_init: str = "uniform",
        forget_bias: float = 1.0,
        input_bias: float = 0.0,
        bias_spread: float = 0.0,
        p_init: float = 1.0,
        input_scale: float = 1.0,
    ) -> None:
        self.name = name
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        # scaling the one-hot embedding past the gate thresholds makes
        # saturation input-dependent from the start: each unit clips for
        # some tokens and stays linear for others
        self.input_scale = float(input_scale)
        self.cell = LstmCell(
            f"{name}.lstm", vocab_size, hidden, rng, mode=mode, alpha=alpha, c=c,
            sigma_fixed=sigma_fixed, recurrent_init=recurrent_init,
            forget_bias=forget_bias, input_bias=input_bias,
            bias_spread=bias_spread, p_init=p_init,
        )
        self.head = Mlp(
            f"{name}.head", [hidden, head_hidden, n_classes], rng,
            activation_for=lambda _name, _units: "relu",
        )

    def logits(self, ctx: ForwardContext, tokens) -> VarId:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be [batch, time], got shape {list(tokens.shape)}")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise ValueError(
                f"token out of vocabulary: range [{tokens.min()}, {tokens.max()}]"
                f" vs vocab size {self.vocab_size}"
            )
        tape = ctx.tape
        batch, steps = tokens.shape
        eye = np.eye(self.vocab_size) * self.input_scale
        h = tape.constant(np.zeros((batch, self.cell.hidden)))
        c = tape.constant(np.zeros((batch, self.cell.hidden)))
        pooled_sum = None
        for t in range(steps):
            x_t = tape.constant(eye[tokens[:, t]])
            h, c = self.cell.step(ctx, h, c, x_t)
            pooled_sum = h if pooled_sum is None else tape.add(pooled_sum, h)
        pooled = tape.scalar_mul(pooled_sum, 1.0 / steps)
        return self.head.forward(ctx, pooled)

    def parameters(self) -> list[Parameter]:
        return self.cell.parameters() + self.head.parameters()


def classify_sequence(
    model: SequenceClassifier, tokens, rng=None, training: bool = False,
    noise_scale: float | None = None,
) -> Tensor:
    """Logits for a batch of token sequences, on a fresh tape."""
    tape = Tape()
    ctx = ForwardContext(tape, rng=rng, training=training, noise_scale=noise_scale)
    return tape.value(model.logits(ctx, tokens))


def predict_classes(logits) -> np.ndarray:
    """Argmax over the class axis; ties resolve to the lowest index."""
    return np.argmax(as_tensor(logits), axis=1)


# ---------------------------------------------------------------------------
# Checkpoints: one text document, one parameter per line, exact round-trip.

CHECKPOINT_HEADER = "noisyact-checkpoint 1"


def save_checkpoint(path, params) -> None:
    """Write parameters as ``name ndim dims... values...`` lines.

    Values use 17 significant digits, which round-trips float64 exactly.
    """
    params = list(params)
    lines = [f"{CHECKPOINT_HEADER} {len(params)}"]
    for p in params:
        dims = " ".join(str(d) for d in p.value.shape)
        values = " ".join("%.17g" % v for v in p.value.ravel())
        fields = [p.name, str(p.value.ndim)]
        if dims:
            fields.append(dims)
        if values:
            fields.append(values)
        lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, params) -> None:
    """Assign checkpoint values into existing parameters, matched by name."""
    params = list(params)
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or not lines[0].startswith(CHECKPOINT_HEADER):
        raise ValueError(f"{path}: not a checkpoint file")
    count = int(lines[0].split()[2])
    if count != len(lines) - 1:
        raise ValueError(f"{path}: expected {count} parameters, found {len(lines) - 1}")
    stored: dict[str, Tensor] = {}
    for line in lines[1:]:
        fields = line.split()
        name, ndim = fields[0], int(fields[1])
        shape = tuple(int(d) for d in fields[2 : 2 + ndim])
        values = np.array([float(v) for v in fields[2 + ndim :]])
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name}: shape/value count mismatch")
        stored[name] = values.reshape(shape)
    by_name = {p.name: p for p in params}
    if set(stored) != set(by_name):
        missing = sorted(set(by_name) - set(stored))
        extra = sorted(set(stored) - set(by_name))
        raise ValueError(f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    for name, value in stored.items():
        p = by_name[name]
        if value.shape != p.value.shape:
            raise ValueError(
                f"{path}: parameter {name}: shape {list(value.shape)}"
                f" vs expected {list(p.value.shape)}"
            )
        p.value = value
