"""Byzantine message generators.

An attack is a pure function of an :class:`AttackContext`. Omniscient attacks
read the honest messages of the current round; none of them can modify those
messages. The classes wrap the functions with their parameters so engines can
bind one instance per Byzantine node.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .numeric import SeededRng, as_vector


@dataclass(frozen=True)
class AttackContext:
    iteration: int
    honest_messages: np.ndarray
    current_model: np.ndarray
    M: int
    rng: SeededRng = None
    node_id: int = None

    @property
    def dim(self):
        if self.current_model is not None:
            return np.asarray(self.current_model).size
        return np.asarray(self.honest_messages).shape[1]


def attack_gradient_control(ctx, target):
    """``M * target - (sum of honest messages)``: a mean aggregate then equals ``target``.

    Only exact when this is the single Byzantine message of the round.
    """
    honest = np.asarray(ctx.honest_messages, dtype=np.float64)
    if honest.ndim != 2 or honest.shape[0] == 0:
        raise ValueError("gradient control needs the honest messages of the round")
    target = as_vector(target, "target")
    return ctx.M * target - honest.sum(axis=0)


def attack_alternating_uniform(ctx, lo_range=(0.0, 1e-5), hi_range=(0.0, 20.0)):
    for lo, hi in (lo_range, hi_range):
        if not lo < hi:
            raise ValueError(f"invalid uniform range ({lo}, {hi})")
    lo, hi = lo_range if ctx.iteration % 2 == 1 else hi_range
    return ctx.rng.open_uniform(lo, hi, ctx.dim)


def attack_lazy_constant(ctx, w_prime):
    return np.array(w_prime, dtype=np.float64)


def attack_coordinate_uniform(ctx, lo=-1.0, hi=0.0):
    if not lo < hi:
        raise ValueError(f"invalid uniform range ({lo}, {hi})")
    return ctx.rng.open_uniform(lo, hi, ctx.dim)


def attack_sign_flip(ctx):
    """Reports the negated sign of the honest consensus direction."""
    honest = np.asarray(ctx.honest_messages, dtype=np.float64)
    return -np.sign(honest.sum(axis=0))


class Attack:
    name = None
    omniscient = False

    def bind(self, dim):
        """Validate against the system dimension; called once at registration."""
        return self

    def __call__(self, ctx):
        raise NotImplementedError

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in vars(self).items())
        return f"{type(self).__name__}({params})"


class GradientControl(Attack):
    """Steers a mean-aggregating server towards ``target_model``.

    Each round the requested aggregate is ``gain * (w_t - target_model)``, so a
    plain gradient step contracts ``w_t`` onto the target. Pass
    ``target_gradient`` instead to request a fixed aggregate.
    """

    name = "gradient_control"
    omniscient = True

    def __init__(self, target_model=None, gain=1.0, target_gradient=None):
        if (target_model is None) == (target_gradient is None):
            raise ValueError("give exactly one of target_model or target_gradient")
        self.target_model = None if target_model is None else as_vector(target_model)
        self.target_gradient = None if target_gradient is None else as_vector(target_gradient)
        self.gain = gain

    def bind(self, dim):
        v = self.target_model if self.target_model is not None else self.target_gradient
        if v.size != dim:
            raise DimensionError(f"attack target has dimension {v.size}, system has {dim}")
        return self

    def target(self, ctx):
        if self.target_gradient is not None:
            return self.target_gradient
        return self.gain * (np.asarray(ctx.current_model) - self.target_model)

    def __call__(self, ctx):
        return attack_gradient_control(ctx, self.target(ctx))


class AlternatingUniform(Attack):
    name = "alternating_uniform"

    def __init__(self, lo_range=(0.0, 1e-5), hi_range=(0.0, 20.0)):
        for lo, hi in (lo_range, hi_range):
            if not lo < hi:
                raise ValueError(f"invalid uniform range ({lo}, {hi})")
        self.lo_range = tuple(lo_range)
        self.hi_range = tuple(hi_range)

    def __call__(self, ctx):
        return attack_alternating_uniform(ctx, self.lo_range, self.hi_range)


class LazyConstant(Attack):
    name = "lazy_constant"

    def __init__(self, value):
        self.value = as_vector(value, "lazy value")

    def bind(self, dim):
        if self.value.size != dim:
            raise DimensionError(f"lazy value has dimension {self.value.size}, system has {dim}")
        return self

    def __call__(self, ctx):
        return attack_lazy_constant(ctx, self.value)


class CoordinateUniform(Attack):
    name = "coordinate_uniform"

    def __init__(self, lo=-1.0, hi=0.0):
        if not lo < hi:
            raise ValueError(f"invalid uniform range ({lo}, {hi})")
        self.lo = lo
        self.hi = hi

    def __call__(self, ctx):
        return attack_coordinate_uniform(ctx, self.lo, self.hi)


class SignFlip(Attack):
    name = "sign_flip"
    omniscient = True

    def __call__(self, ctx):
        return attack_sign_flip(ctx)


ATTACKS = {cls.name: cls for cls in (GradientControl, AlternatingUniform, LazyConstant,
                                      CoordinateUniform, SignFlip)}


def make_attack(name, **params):
    try:
        return ATTACKS[name](**params)
    except KeyError:
        raise ValueError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}") from None
