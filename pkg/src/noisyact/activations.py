"""Hard-saturating activations with saturation-proportional noise.

A hard-saturating function is the clipped first-order expansion of a soft
nonlinearity: linear in a band around zero, exactly flat outside it. Flat
means zero gradient, so training can strand units there. The remedy here
is a noise term whose standard deviation grows with the magnitude of
saturation ``delta = h(x) - u(x)`` (zero in the linear band) and whose
scale is trainable through a free parameter ``p``:

    sigma(x) = c * (sigmoid(p * delta) - 0.5)^2

Noise variants, named by where the noise enters and how it is drawn:

* ``nan``   -- additive normal noise at the output.
* ``nah``   -- additive half-normal noise at the output, signed to push
               saturated outputs back toward the clip value.
* ``nani``  -- normal noise added to the input, fixed scale.
* ``nanil`` -- normal noise added to the input, learned scale sigma(x).
* ``nanis`` -- input noise applied only where the unit saturates.
* ``det``   -- no noise path at all.

At evaluation time the noise is replaced by its expectation (output
variants) or removed (input variants), giving deterministic units.

The stochastic output form is computed as ``u + alpha*delta + noise`` so
that in the linear band (delta == 0, sigma == 0) the output equals the
hard-saturating value bit-for-bit, for every noise draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import (
    ForwardContext,
    Parameter,
    Tensor,
    VarId,
    as_tensor,
    stable_sigmoid,
)

HALF_NORMAL_MEAN = float(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class HardSatFn:
    """A clipped linear activation: ``h(x) = clip(slope*x + intercept)``.

    ``threshold`` is the |x| beyond which the function is exactly flat.
    """

    name: str
    slope: float
    intercept: float
    clip_lo: float
    clip_hi: float
    threshold: float


HARD_SIGMOID = HardSatFn("hard_sigmoid", 0.25, 0.5, 0.0, 1.0, 2.0)
HARD_TANH = HardSatFn("hard_tanh", 1.0, 0.0, -1.0, 1.0, 1.0)

BASE_FUNCTIONS = {f.name: f for f in (HARD_SIGMOID, HARD_TANH)}


class NoiseMode(str, Enum):
    DETERMINISTIC = "det"
    NAN = "nan"
    NAH = "nah"
    NANI = "nani"
    NANIL = "nanil"
    NANIS = "nanis"


OUTPUT_NOISE_MODES = (NoiseMode.NAN, NoiseMode.NAH)
INPUT_NOISE_MODES = (NoiseMode.NANI, NoiseMode.NANIL, NoiseMode.NANIS)
LEARNED_SCALE_MODES = (NoiseMode.NAN, NoiseMode.NAH, NoiseMode.NANIL)


@dataclass(frozen=True)
class NoisyActConfig:
    """One activation site: base function, noise variant, and its knobs.

    ``p`` is the trainable noise-shape parameter; it joins the tape for
    the learned-scale modes. ``sigma_fixed`` is only read by the
    fixed-scale input modes. Immutable after construction; the annealing
    schedule overrides ``c`` per forward pass, never in place.
    """

    base: HardSatFn
    mode: NoiseMode
    alpha: float = 1.0
    c: float = 0.5
    p: Parameter | None = None
    sigma_fixed: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.c <= 0.0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.sigma_fixed < 0.0:
            raise ValueError(f"sigma_fixed must be nonnegative, got {self.sigma_fixed}")
        if self.mode in LEARNED_SCALE_MODES and self.p is None:
            raise ValueError(f"mode {self.mode.value} requires a p parameter")


def make_noisy_config(
    base: HardSatFn,
    mode: NoiseMode,
    rng=None,
    units: int | None = None,
    alpha: float = 1.0,
    c: float = 0.5,
    sigma_fixed: float = 0.05,
    per_unit: bool = False,
    p_init: float = 1.0,
    name: str = "act",
) -> NoisyActConfig:
    """Build a config, drawing p uniformly from [-p_init, p_init] where needed.

    ``per_unit=True`` gives every unit of the layer its own p (shape
    ``[units]``); the default is one shared scalar per site.
    """
    if p_init < 0:
        raise ValueError(f"p_init must be >= 0, got {p_init}")
    p = None
    if mode in LEARNED_SCALE_MODES:
        if rng is None:
            raise ValueError(f"mode {mode.value} needs an rng to initialize p")
        if per_unit:
            if units is None:
                raise ValueError("per_unit=True requires units")
            p = Parameter(f"{name}.p", rng.uniform(-p_init, p_init, (units,)))
        else:
            p = Parameter(f"{name}.p", rng.uniform(-p_init, p_init))
    return NoisyActConfig(
        base=base, mode=mode, alpha=alpha, c=c, p=p, sigma_fixed=sigma_fixed
    )


@dataclass(frozen=True)
class NoiseSample:
    """One draw of the noise variable: the raw normal and the value used."""

    xi: Tensor
    epsilon: Tensor

    @staticmethod
    def draw(rng, shape, half_normal: bool) -> "NoiseSample":
        xi = as_tensor(rng.standard_normal(shape))
        return NoiseSample(xi, np.abs(xi) if half_normal else xi)


# ---------------------------------------------------------------------------
# Plain-value operations (no tape). These are the reference math used by
# evaluation-side code and by tests.


def linearize(base: HardSatFn, x) -> Tensor:
    """The unclipped linear part ``u(x) = slope*x + intercept``."""
    return base.slope * as_tensor(x) + base.intercept


def hard_sat(base: HardSatFn, x) -> Tensor:
    """``h(x) = clip(u(x))``; range [clip_lo, clip_hi], nondecreasing."""
    return np.clip(linearize(base, x), base.clip_lo, base.clip_hi)


def delta(base: HardSatFn, x) -> Tensor:
    """Saturation magnitude ``h(x) - u(x)``: zero in the linear band,
    growing linearly with the distance past the threshold."""
    u = linearize(base, x)
    return np.clip(u, base.clip_lo, base.clip_hi) - u


def noise_std(cfg: NoisyActConfig, delta_value, c: float | None = None) -> Tensor:
    """Learned noise scale ``sigma = c*(sigmoid(p*delta) - 0.5)^2``.

    Zero exactly when delta is zero; bounded by c/4. ``c`` overrides the
    configured scale (annealing path).
    """
    c_eff = cfg.c if c is None else float(c)
    p = cfg.p.value if cfg.p is not None else np.zeros(())
    g = stable_sigmoid(p * as_tensor(delta_value))
    return c_eff * (g - 0.5) ** 2


def _sgn(v) -> Tensor:
    """Sign with sgn(0) = +1."""
    return np.where(as_tensor(v) >= 0.0, 1.0, -1.0)


def direction(x, alpha: float) -> Tensor:
    """Noise direction ``d(x) = -sgn(x) * sgn(1 - alpha)``, values in {-1, +1}.

    For half-normal noise this signs the (always positive) draw so the
    displacement points from the alpha-blended output toward the clipped
    value.
    """
    return -_sgn(x) * float(_sgn(1.0 - alpha))


def expected_epsilon(mode: NoiseMode) -> float:
    """Mean of the noise draw: 0 for signed normal, sqrt(2/pi) for half-normal."""
    return HALF_NORMAL_MEAN if mode is NoiseMode.NAH else 0.0


def output_noise_value(cfg: NoisyActConfig, x, epsilon, c: float | None = None) -> Tensor:
    """Stochastic output for a frozen noise draw (shift form).

    ``u + alpha*delta + d*sigma*epsilon`` -- the same arithmetic as the
    tape forward, exact in the linear band.
    """
    x = as_tensor(x)
    u = linearize(cfg.base, x)
    dl = np.clip(u, cfg.base.clip_lo, cfg.base.clip_hi) - u
    sig = noise_std(cfg, dl, c)
    return u + cfg.alpha * dl + direction(x, cfg.alpha) * sig * as_tensor(epsilon)


def blend_form_value(cfg: NoisyActConfig, x, epsilon, c: float | None = None) -> Tensor:
    """The algebraically equal blend form ``alpha*h + (1-alpha)*u + d*sigma*epsilon``.

    Kept as an independent arrangement for consistency checks; agrees
    with :func:`output_noise_value` to rounding error.
    """
    x = as_tensor(x)
    u = linearize(cfg.base, x)
    h = np.clip(u, cfg.base.clip_lo, cfg.base.clip_hi)
    sig = noise_std(cfg, h - u, c)
    return cfg.alpha * h + (1.0 - cfg.alpha) * u + direction(x, cfg.alpha) * sig * as_tensor(epsilon)


def expected_output_value(cfg: NoisyActConfig, x, c: float | None = None) -> Tensor:
    """Deterministic output: the noise replaced by its expectation."""
    if cfg.mode not in (NoiseMode.DETERMINISTIC,) + OUTPUT_NOISE_MODES:
        raise ValueError(f"expected_output: unsupported mode {cfg.mode.value}")
    x = as_tensor(x)
    u = linearize(cfg.base, x)
    h = np.clip(u, cfg.base.clip_lo, cfg.base.clip_hi)
    if cfg.mode is NoiseMode.DETERMINISTIC:
        return h
    dl = h - u
    out = u + cfg.alpha * dl
    if cfg.mode is NoiseMode.NAN:
        return out
    sig = noise_std(cfg, dl, c)
    return out + direction(x, cfg.alpha) * sig * HALF_NORMAL_MEAN


def analytic_gradients(
    cfg: NoisyActConfig, x, epsilon, c: float | None = None
) -> tuple[Tensor, Tensor]:
    """Closed-form (d phi/d x, d phi/d p) for a frozen output-noise draw.

    The x-gradient has three parts: the clipped path ``alpha*h'``, the
    linear path ``(1-alpha)*u'``, and the noise-scale path
    ``d * sigma'(x) * epsilon``. In the saturated regime with alpha=1 only
    the noise-scale part survives, and it is nonzero whenever epsilon and
    p are -- gradient signal despite the flat activation. Elementwise;
    callers sum the p component if p is shared.
    """
    if cfg.mode not in OUTPUT_NOISE_MODES:
        raise ValueError(f"analytic_gradients: unsupported mode {cfg.mode.value}")
    x = as_tensor(x)
    epsilon = as_tensor(epsilon)
    c_eff = cfg.c if c is None else float(c)
    base = cfg.base
    p = cfg.p.value
    interior = np.abs(x) <= base.threshold
    u_prime = base.slope
    h_prime = base.slope * interior
    delta_prime = h_prime - u_prime
    dl = delta(base, x)
    g = stable_sigmoid(p * dl)
    g_prime = g * (1.0 - g)
    sig_x = 2.0 * c_eff * (g - 0.5) * g_prime * p * delta_prime
    sig_p = 2.0 * c_eff * (g - 0.5) * g_prime * dl
    d = direction(x, cfg.alpha)
    dphi_dx = cfg.alpha * h_prime + (1.0 - cfg.alpha) * u_prime + d * sig_x * epsilon
    dphi_dp = d * sig_p * epsilon
    return dphi_dx, dphi_dp


# ---------------------------------------------------------------------------
# Tape-recorded forwards. These build the differentiable graph used in
# training; gradients flow through the linear, clipped, and noise-scale
# paths (and into p), never through the noise draw itself.


def _linear_graph(tape, base: HardSatFn, x: VarId) -> VarId:
    return tape.add_scalar(tape.scalar_mul(x, base.slope), base.intercept)


def _hard_sat_graph(tape, base: HardSatFn, u: VarId) -> VarId:
    return tape.clip(u, base.clip_lo, base.clip_hi)


def _noise_std_graph(ctx: ForwardContext, cfg: NoisyActConfig, dl: VarId) -> VarId:
    c_eff = cfg.c if ctx.noise_scale is None else float(ctx.noise_scale)
    tape = ctx.tape
    g = tape.sigmoid(tape.broadcast_mul(dl, ctx.var(cfg.p)))
    return tape.scalar_mul(tape.square(tape.add_scalar(g, -0.5)), c_eff)


def forward_output_noise(
    ctx: ForwardContext, cfg: NoisyActConfig, x: VarId, epsilon: Tensor | None = None
) -> VarId:
    """Record the output-noise activation (modes ``nan`` / ``nah``).

    Draws one noise value per element from ``ctx.rng`` unless a frozen
    ``epsilon`` is supplied. Outside training, delegates to
    :func:`expected_output`.
    """
    if cfg.mode not in OUTPUT_NOISE_MODES:
        raise ValueError(f"forward_output_noise: expects mode nan or nah, got {cfg.mode.value}")
    if not ctx.training:
        return expected_output(ctx, cfg, x)
    tape = ctx.tape
    u = _linear_graph(tape, cfg.base, x)
    h = _hard_sat_graph(tape, cfg.base, u)
    dl = tape.sub(h, u)
    sig = _noise_std_graph(ctx, cfg, dl)
    x_val = tape.value(x)
    if epsilon is None:
        epsilon = NoiseSample.draw(ctx.rng, x_val.shape, cfg.mode is NoiseMode.NAH).epsilon
    signed = direction(x_val, cfg.alpha) * as_tensor(epsilon)
    noise = tape.mul(sig, tape.constant(signed))
    return tape.add(tape.add(u, tape.scalar_mul(dl, cfg.alpha)), noise)


def expected_output(ctx: ForwardContext, cfg: NoisyActConfig, x: VarId) -> VarId:
    """Record the deterministic (expectation) output.

    ``det`` gives the plain hard-saturating value; ``nan`` the alpha
    blend; ``nah`` adds the half-normal mean displacement.
    """
    if cfg.mode not in (NoiseMode.DETERMINISTIC,) + OUTPUT_NOISE_MODES:
        raise ValueError(f"expected_output: unsupported mode {cfg.mode.value}")
    tape = ctx.tape
    u = _linear_graph(tape, cfg.base, x)
    h = _hard_sat_graph(tape, cfg.base, u)
    if cfg.mode is NoiseMode.DETERMINISTIC:
        return h
    dl = tape.sub(h, u)
    out = tape.add(u, tape.scalar_mul(dl, cfg.alpha))
    if cfg.mode is NoiseMode.NAN:
        return out
    sig = _noise_std_graph(ctx, cfg, dl)
    mean_shift = direction(tape.value(x), cfg.alpha) * HALF_NORMAL_MEAN
    return tape.add(out, tape.mul(sig, tape.constant(mean_shift)))


def forward_input_noise(
    ctx: ForwardContext, cfg: NoisyActConfig, x: VarId, xi: Tensor | None = None
) -> VarId:
    """Record an input-noise activation (modes ``nani``/``nanil``/``nanis``).

    The noisy pre-activation is ``x + scale * xi`` where the scale is the
    fixed sigma (``nani``), the learned sigma(x) (``nanil``), or the fixed
    sigma gated to the saturated regime (``nanis``). Outside training the
    noise is removed (xi = 0), leaving the plain hard-saturating value.
    """
    if cfg.mode not in INPUT_NOISE_MODES:
        raise ValueError(
            f"forward_input_noise: expects an input-noise mode, got {cfg.mode.value}"
        )
    tape = ctx.tape
    if not ctx.training:
        return _hard_sat_graph(tape, cfg.base, _linear_graph(tape, cfg.base, x))
    x_val = tape.value(x)
    if xi is None:
        xi = NoiseSample.draw(ctx.rng, x_val.shape, half_normal=False).xi
    xi = as_tensor(xi)
    if cfg.mode is NoiseMode.NANI:
        z = tape.add(x, tape.constant(cfg.sigma_fixed * xi))
    elif cfg.mode is NoiseMode.NANIS:
        saturated = np.abs(x_val) >= cfg.base.threshold
        z = tape.add(x, tape.constant(cfg.sigma_fixed * xi * saturated))
    else:  # NANIL: learned scale at the input
        u = _linear_graph(tape, cfg.base, x)
        h = _hard_sat_graph(tape, cfg.base, u)
        sig = _noise_std_graph(ctx, cfg, tape.sub(h, u))
        z = tape.add(x, tape.mul(sig, tape.constant(xi)))
    return _hard_sat_graph(tape, cfg.base, _linear_graph(tape, cfg.base, z))


def noisy_forward(
    ctx: ForwardContext, cfg: NoisyActConfig, x: VarId, frozen_noise: Tensor | None = None
) -> VarId:
    """Apply the configured activation, dispatching on the noise mode."""
    if cfg.mode in OUTPUT_NOISE_MODES:
        return forward_output_noise(ctx, cfg, x, epsilon=frozen_noise)
    if cfg.mode in INPUT_NOISE_MODES:
        return forward_input_noise(ctx, cfg, x, xi=frozen_noise)
    return expected_output(ctx, cfg, x)
