"""State space, free motion, collision kernels, and the built-in models.

A model bundles a dimension, a free motion (Markov transition over dt), a
collision kernel, and a jump mode. In "bird" mode an accepted collision
moves both particles with a joint increment; in "nanbu" mode exactly one of
the two moves. Jumps are additive increments so that a kernel that "sets" a
state encodes it as (new - old).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CollisionKernel:
    """Joint increment law of an interaction.

    mass(z, a) is the total mass of the jump kernel actually driving the
    events (the two-sided mass in nanbu mode) and must stay below
    mass_bound. sample_joint draws the normalized increment pair (H, K).
    Nanbu-style kernels also provide the one-sided mass and increment.
    """

    mass_bound: float
    mass: Callable
    sample_joint: Callable
    side_mass: Optional[Callable] = None
    sample_side: Optional[Callable] = None

    def __post_init__(self):
        # zero is allowed: a massless kernel never fires, which the forward
        # run handles; backward constructions check positivity themselves
        if not (self.mass_bound >= 0 and math.isfinite(self.mass_bound)):
            raise ValueError("mass_bound must be nonnegative and finite")


@dataclass(frozen=True)
class FreeMotion:
    """Markov transition over a duration: advance(state, dt, rng) -> state.

    advance(s, 0) must return s, and advancing by dt1 then dt2 must agree in
    law with advancing by dt1 + dt2. Deterministic motions ignore rng and
    support exact interpolation of stored paths.
    """

    advance: Callable
    deterministic: bool = True


def identity_motion():
    return FreeMotion(advance=lambda state, dt, rng=None: state, deterministic=True)


def transport_motion():
    """d = 6 free flight: position += velocity * dt."""

    def advance(state, dt, rng=None):
        out = state.copy()
        out[:3] += state[3:] * dt
        return out

    return FreeMotion(advance=advance, deterministic=True)


def em_motion(drift, diffusion, step):
    """Euler-Maruyama diffusion with fixed substep.

    Queries without an rng fall back to drift-only advancement from the last
    stored state, an O(step) interpolation bias documented in the trajectory
    layer.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    def advance(state, dt, rng=None):
        if dt == 0:
            return state
        n = max(1, int(math.ceil(dt / step - 1e-12)))
        h = dt / n
        z = state.astype(float, copy=True)
        for _ in range(n):
            dz = drift(z) * h
            if rng is not None:
                dz = dz + diffusion(z) * math.sqrt(h) * rng.standard_normal(z.size)
            z = z + dz
        return z

    return FreeMotion(advance=advance, deterministic=False)


@dataclass(frozen=True)
class ModelSpec:
    """Complete model: dimension, free motion, kernel, mode, initial law."""

    name: str
    dimension: int
    motion: FreeMotion
    kernel: CollisionKernel
    mode: str
    sample_initial: Callable
    params: dict = field(default_factory=dict)
    fast: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("bird", "nanbu"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.mode == "nanbu" and (self.kernel.side_mass is None or self.kernel.sample_side is None):
            raise ValueError("nanbu mode needs a kernel with side_mass and sample_side")


def bird_jump(kernel, zi, zj, rng):
    """Apply one accepted bird collision: both particles move jointly."""
    m = kernel.mass(zi, zj)
    if m <= 0:
        raise ValueError("bird_jump on a pair with zero collision mass")
    h, k = kernel.sample_joint(zi, zj, rng)
    return zi + h, zj + k


def nanbu_jump(kernel, zi, zj, rng):
    """Apply one accepted nanbu collision: exactly one particle moves.

    The mover is particle i with probability side_mass(zi, zj) / total.
    The side draw consumes one uniform before the increment draw; the
    kernel's sample_joint follows the same order so both jump styles consume
    identical streams.
    """
    if kernel.side_mass is None or kernel.sample_side is None:
        raise ValueError("kernel has no one-sided law; nanbu_jump unavailable")
    mi = kernel.side_mass(zi, zj)
    mj = kernel.side_mass(zj, zi)
    total = mi + mj
    if total <= 0:
        raise ValueError("nanbu_jump on a pair with zero collision mass")
    if rng.random() * total < mi:
        return zi + kernel.sample_side(zi, zj, rng), zj
    return zi, zj + kernel.sample_side(zj, zi, rng)


def apply_jump(model, zi, zj, rng):
    if model.mode == "bird":
        return bird_jump(model.kernel, zi, zj, rng)
    return nanbu_jump(model.kernel, zi, zj, rng)


def nanbu_kernel(mass_bound, side_mass, sample_side):
    """Assemble the symmetric two-sided kernel from a one-sided law.

    The two-sided mass is side_mass(z, a) + side_mass(a, z); sample_joint
    returns (H, 0) or (0, K) with the side chosen proportionally, matching
    nanbu_jump draw for draw.
    """

    def mass(z, a):
        return side_mass(z, a) + side_mass(a, z)

    def sample_joint(z, a, rng):
        mi = side_mass(z, a)
        mj = side_mass(a, z)
        total = mi + mj
        if total <= 0:
            raise ValueError("sample_joint on zero-mass pair")
        if rng.random() * total < mi:
            return sample_side(z, a, rng), np.zeros_like(a)
        return np.zeros_like(z), sample_side(a, z, rng)

    return CollisionKernel(
        mass_bound=mass_bound,
        mass=mass,
        sample_joint=sample_joint,
        side_mass=side_mass,
        sample_side=sample_side,
    )


def maxwell_collision(v, w, nu):
    """Elastic transform v* = v + ((w-v).nu)nu, w* = w + ((v-w).nu)nu.

    The two increments are exact negations of each other, so the momentum
    increment cancels bitwise; energy is conserved algebraically.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    nu = np.asarray(nu, dtype=float)
    norms = (nu * nu).sum(axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("nu must be a unit vector")
    h = ((w - v) * nu).sum(axis=-1, keepdims=True) * nu
    return v + h, w - h


@dataclass(frozen=True)
class CrossSection:
    """Collision weight B(v_rel, nu), nu on the unit sphere.

    sphere_integral(v_rel), when provided, must equal the integral of
    B(v_rel, .) over the sphere; otherwise numeric quadrature is used.
    """

    fn: Callable
    sphere_integral: Optional[Callable] = None


def constant_cross_section(b):
    if b < 0:
        raise ValueError("cross section must be nonnegative")
    return CrossSection(fn=lambda v_rel, nu: b, sphere_integral=lambda v_rel: 4.0 * math.pi * b)


def _sphere_quadrature(fn, v_rel):
    from scipy.integrate import dblquad

    def integrand(theta, phi):
        st = math.sin(theta)
        nu = np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])
        return fn(v_rel, nu) * st

    val, _ = dblquad(integrand, 0.0, TWO_PI, 0.0, math.pi)
    return val


def same_cell(x, y, cell_size):
    return bool(np.all(np.floor(x / cell_size) == np.floor(y / cell_size)))


def mollified_mass(x, v, y, w, cross_section, cell_size):
    """Collision rate of two particles at (x, v), (y, w).

    Zero unless both positions share a cubic cell of side cell_size; in the
    common cell the rate is the sphere integral of B(v - w, .) divided by
    the cell volume.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if not same_cell(np.asarray(x, float), np.asarray(y, float), cell_size):
        return 0.0
    v_rel = np.asarray(v, float) - np.asarray(w, float)
    if cross_section.sphere_integral is not None:
        integral = cross_section.sphere_integral(v_rel)
    else:
        integral = _sphere_quadrature(cross_section.fn, v_rel)
    return integral / cell_size**3


def _uniform_sphere(rng):
    while True:
        n = rng.standard_normal(3)
        r = math.sqrt(float(n @ n))
        if r > 1e-12:
            return n / r


def kac_model(lam=1.0):
    """One-dimensional caricature: no free motion, constant collision mass,
    an accepted collision rotates the velocity pair by a uniform angle."""
    if lam <= 0:
        raise ValueError("lam must be positive")

    def mass(z, a):
        return lam

    def sample_joint(z, a, rng):
        theta = rng.random() * TWO_PI
        c, s = math.cos(theta), math.sin(theta)
        v, w = z[0], a[0]
        return np.array([v * c - w * s - v]), np.array([v * s + w * c - w])

    kernel = CollisionKernel(mass_bound=lam, mass=mass, sample_joint=sample_joint)
    return ModelSpec(
        name="kac",
        dimension=1,
        motion=identity_motion(),
        kernel=kernel,
        mode="bird",
        sample_initial=lambda rng: rng.standard_normal(1),
        params={"lam": lam},
        fast="kac",
    )


def maxwell_model(b=1.0, cell_size=1.0):
    """Mollified elastic model: d = 6 states (position, velocity), free
    transport, constant cross section b, cells of side cell_size, uniform
    scattering direction. Initial positions fill one cell so collisions are
    possible; velocities are standard normal."""
    cs = constant_cross_section(b)
    lam = 4.0 * math.pi * b / cell_size**3

    def mass(z, a):
        return mollified_mass(z[:3], z[3:], a[:3], a[3:], cs, cell_size)

    def sample_joint(z, a, rng):
        nu = _uniform_sphere(rng)
        h_v = ((a[3:] - z[3:]) @ nu) * nu
        h = np.zeros(6)
        k = np.zeros(6)
        h[3:] = h_v
        k[3:] = -h_v
        return h, k

    kernel = CollisionKernel(mass_bound=lam, mass=mass, sample_joint=sample_joint)

    def sample_initial(rng):
        out = np.empty(6)
        out[:3] = rng.random(3) * cell_size
        out[3:] = rng.standard_normal(3)
        return out

    return ModelSpec(
        name="maxwell",
        dimension=6,
        motion=transport_motion(),
        kernel=kernel,
        mode="bird",
        sample_initial=sample_initial,
        params={"b": b, "cell_size": cell_size, "lam": lam},
    )


def linear_toy_model(jump_rate=1.0, mean_jump=0.5, sd_jump=1.0, mean0=0.0, sd0=1.0):
    """Partner-independent jumps: the moving particle gains a Normal
    increment, the other is untouched, so the limit law is compound Poisson.

    jump_rate is the per-particle jump intensity; the two-sided kernel mass
    is 2 * jump_rate, which is also the declared mass bound. Closed form:
    E[Z_t] = mean0 + jump_rate * t * mean_jump (see toy_mean_at).
    """
    if jump_rate <= 0:
        raise ValueError("jump_rate must be positive")

    def side_mass(z, a):
        return jump_rate

    def sample_side(z, a, rng):
        return np.array([mean_jump + sd_jump * rng.standard_normal()])

    kernel = nanbu_kernel(2.0 * jump_rate, side_mass, sample_side)
    return ModelSpec(
        name="linear-toy",
        dimension=1,
        motion=identity_motion(),
        kernel=kernel,
        mode="nanbu",
        sample_initial=lambda rng: np.array([mean0 + sd0 * rng.standard_normal()]),
        params={
            "jump_rate": jump_rate,
            "mean_jump": mean_jump,
            "sd_jump": sd_jump,
            "mean0": mean0,
            "sd0": sd0,
        },
        fast="toy",
    )


def toy_mean_at(model, t):
    """Closed-form mean of the linear toy marginal at time t."""
    p = model.params
    return p["mean0"] + p["jump_rate"] * t * p["mean_jump"]


BUILTIN_MODELS = {
    "kac": kac_model,
    "maxwell": maxwell_model,
    "linear-toy": linear_toy_model,
}


def make_model(name, **params):
    if name not in BUILTIN_MODELS:
        raise ValueError(f"unknown model {name!r}; builtins: {sorted(BUILTIN_MODELS)}")
    return BUILTIN_MODELS[name](**params)
