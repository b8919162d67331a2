import math

import numpy as np
import pytest

from pochaos.models import (
    CollisionKernel,
    CrossSection,
    apply_jump,
    bird_jump,
    constant_cross_section,
    em_motion,
    kac_model,
    linear_toy_model,
    make_model,
    maxwell_collision,
    maxwell_model,
    mollified_mass,
    nanbu_jump,
    nanbu_kernel,
    same_cell,
    toy_mean_at,
    transport_motion,
)
from pochaos.seeding import spawn_rng


def test_maxwell_collision_perpendicular_is_identity():
    v = np.array([1.0, -2.0, 0.0])
    w = np.array([3.0, 0.5, 0.0])
    nu = np.array([0.0, 0.0, 1.0])  # perpendicular to w - v
    vs, ws = maxwell_collision(v, w, nu)
    assert np.array_equal(vs, v)
    assert np.array_equal(ws, w)


def test_maxwell_collision_conserves_momentum_and_energy():
    rng = spawn_rng(1, "maxwell")
    v = rng.normal(size=(500, 3))
    w = rng.normal(size=(500, 3))
    nu = rng.normal(size=(500, 3))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    vs, ws = maxwell_collision(v, w, nu)
    assert np.abs((vs + ws) - (v + w)).max() < 1e-12
    e0 = (v**2).sum(axis=1) + (w**2).sum(axis=1)
    e1 = (vs**2).sum(axis=1) + (ws**2).sum(axis=1)
    assert np.abs(e1 - e0).max() < 1e-12


def test_maxwell_collision_batch_matches_singles():
    rng = spawn_rng(2, "maxwell-batch")
    v = rng.normal(size=(7, 3))
    w = rng.normal(size=(7, 3))
    nu = rng.normal(size=(7, 3))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    vs, ws = maxwell_collision(v, w, nu)
    for i in range(7):
        a, b = maxwell_collision(v[i], w[i], nu[i])
        assert np.array_equal(vs[i], a)
        assert np.array_equal(ws[i], b)


def test_maxwell_collision_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        maxwell_collision(np.zeros(3), np.ones(3), np.array([0.0, 0.0, 2.0]))


def test_maxwell_collision_reflects_relative_velocity():
    v = np.array([0.0, 0.0, 0.0])
    w = np.array([2.0, 0.0, 0.0])
    nu = np.array([1.0, 0.0, 0.0])  # aligned with w - v: full exchange
    vs, ws = maxwell_collision(v, w, nu)
    assert np.allclose(vs, w) and np.allclose(ws, v)


def test_constant_cross_section():
    cs = constant_cross_section(0.7)
    assert cs.fn(np.zeros(3), np.array([0, 0, 1.0])) == 0.7
    assert math.isclose(cs.sphere_integral(np.zeros(3)), 4 * math.pi * 0.7)
    with pytest.raises(ValueError):
        constant_cross_section(-1.0)


def test_sphere_quadrature_matches_closed_form():
    # drop the closed-form integral to force numeric quadrature
    cs = CrossSection(fn=lambda v_rel, nu: 0.7)
    m = mollified_mass(
        np.zeros(3), np.zeros(3), np.full(3, 0.4), np.ones(3), cs, cell_size=1.0
    )
    assert math.isclose(m, 4 * math.pi * 0.7, rel_tol=1e-8)


def test_same_cell_handles_negative_coordinates():
    assert same_cell(np.array([-0.1, 0.2, 0.3]), np.array([-0.9, 0.8, 0.1]), 1.0)
    assert not same_cell(np.array([-0.1, 0.2, 0.3]), np.array([0.1, 0.2, 0.3]), 1.0)
    assert same_cell(np.array([1.1, 0.0, 0.0]), np.array([1.9, 0.0, 0.0]), 2.0)


def test_mollified_mass_cases():
    cs = constant_cross_section(1.0)
    x = np.array([0.2, 0.2, 0.2])
    y = np.array([0.8, 0.8, 0.8])
    far = np.array([1.2, 0.2, 0.2])
    v, w = np.zeros(3), np.ones(3)
    assert mollified_mass(x, v, far, w, cs, 1.0) == 0.0
    assert math.isclose(mollified_mass(x, v, y, w, cs, 1.0), 4 * math.pi)
    assert math.isclose(
        mollified_mass(x, v, y, w, cs, 2.0), 4 * math.pi / 8.0
    )
    with pytest.raises(ValueError):
        mollified_mass(x, v, y, w, cs, 0.0)


def test_kac_kernel_constant_mass_and_energy():
    model = kac_model(lam=1.5)
    rng = spawn_rng(3, "kac-kernel")
    assert model.kernel.mass_bound == 1.5
    for _ in range(200):
        z = rng.normal(size=1)
        a = rng.normal(size=1)
        assert model.kernel.mass(z, a) == 1.5
        h, k = model.kernel.sample_joint(z, a, rng)
        e0 = z[0] ** 2 + a[0] ** 2
        e1 = (z[0] + h[0]) ** 2 + (a[0] + k[0]) ** 2
        assert abs(e1 - e0) < 1e-12 * max(1.0, e0)


def test_kac_jump_rotates_pair():
    model = kac_model()
    rng = spawn_rng(4)
    z, a = np.array([1.0]), np.array([0.0])
    zi, zj = apply_jump(model, z, a, rng)
    # some rotation happened and the pair stayed on the unit circle
    assert abs(zi[0] ** 2 + zj[0] ** 2 - 1.0) < 1e-12
    assert not (np.array_equal(zi, z) and np.array_equal(zj, a))


def test_maxwell_model_increments_are_exact_negations():
    model = maxwell_model()
    rng = spawn_rng(5, "maxwell-joint")
    for _ in range(300):
        z = np.concatenate([rng.random(3), rng.normal(size=3)])
        a = np.concatenate([rng.random(3), rng.normal(size=3)])
        h, k = model.kernel.sample_joint(z, a, rng)
        assert np.array_equal(h[:3], np.zeros(3))  # positions never jump
        assert np.array_equal(k[:3], np.zeros(3))
        assert np.array_equal(h[3:], -k[3:])


def test_maxwell_model_mass_respects_cells():
    model = maxwell_model(b=1.0, cell_size=1.0)
    inside = np.concatenate([np.full(3, 0.25), np.zeros(3)])
    inside2 = np.concatenate([np.full(3, 0.75), np.ones(3)])
    outside = np.concatenate([np.array([1.25, 0.25, 0.25]), np.zeros(3)])
    assert model.kernel.mass(inside, outside) == 0.0
    m = model.kernel.mass(inside, inside2)
    assert math.isclose(m, 4 * math.pi)
    assert m <= model.kernel.mass_bound


def test_bird_jump_zero_mass_raises():
    kernel = CollisionKernel(
        mass_bound=1.0,
        mass=lambda z, a: 0.0,
        sample_joint=lambda z, a, rng: (np.zeros_like(z), np.zeros_like(a)),
    )
    with pytest.raises(ValueError):
        bird_jump(kernel, np.zeros(1), np.zeros(1), spawn_rng(6))


def test_nanbu_jump_requires_side_law():
    model = kac_model()
    with pytest.raises(ValueError):
        nanbu_jump(model.kernel, np.zeros(1), np.zeros(1), spawn_rng(7))


def test_nanbu_jump_moves_exactly_one_side():
    model = linear_toy_model()
    rng = spawn_rng(8, "nanbu-sides")
    z, a = np.array([0.3]), np.array([-0.7])
    moved_i = 0
    n = 4000
    for _ in range(n):
        zi, zj = nanbu_jump(model.kernel, z, a, rng)
        i_moved = not np.array_equal(zi, z)
        j_moved = not np.array_equal(zj, a)
        assert i_moved != j_moved
        moved_i += i_moved
    # toy side masses are equal, so the mover is a fair coin
    assert abs(moved_i / n - 0.5) < 3 * math.sqrt(0.25 / n)


def test_nanbu_jump_side_frequency_tracks_side_mass():
    # side i fires at rate 3, side j at rate 1
    kernel = nanbu_kernel(
        mass_bound=4.0,
        side_mass=lambda z, a: 3.0 if z[0] > a[0] else 1.0,
        sample_side=lambda z, a, rng: np.array([rng.normal()]),
    )
    rng = spawn_rng(9, "nanbu-skew")
    z, a = np.array([1.0]), np.array([0.0])
    n = 4000
    moved_i = 0
    for _ in range(n):
        zi, zj = nanbu_jump(kernel, z, a, rng)
        moved_i += not np.array_equal(zi, z)
    p = 3.0 / 4.0
    assert abs(moved_i / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_nanbu_kernel_joint_matches_jump_stream():
    model = linear_toy_model()
    z, a = np.array([0.2]), np.array([1.4])
    r1 = spawn_rng(10, "stream")
    r2 = spawn_rng(10, "stream")
    for _ in range(50):
        h, k = model.kernel.sample_joint(z, a, r1)
        zi, zj = nanbu_jump(model.kernel, z, a, r2)
        assert np.array_equal(zi, z + h)
        assert np.array_equal(zj, a + k)


def test_nanbu_kernel_one_sided_increments():
    model = linear_toy_model()
    rng = spawn_rng(11)
    for _ in range(50):
        h, k = model.kernel.sample_joint(np.zeros(1), np.ones(1), rng)
        assert h[0] == 0.0 or k[0] == 0.0


def test_toy_mean_at_linear_growth():
    model = linear_toy_model(jump_rate=2.0, mean_jump=0.25, mean0=1.0)
    assert toy_mean_at(model, 0.0) == 1.0
    assert math.isclose(toy_mean_at(model, 3.0), 1.0 + 2.0 * 3.0 * 0.25)


def test_make_model_dispatch():
    m = make_model("kac", lam=2.0)
    assert m.name == "kac" and m.kernel.mass_bound == 2.0
    with pytest.raises(ValueError):
        make_model("unknown-model")


def test_transport_motion_moves_position():
    motion = transport_motion()
    assert motion.deterministic
    state = np.array([1.0, 2.0, 3.0, 0.5, -1.0, 0.0])  # (x, v)
    out = motion.advance(state.copy(), 2.0, None)
    assert np.allclose(out[:3], state[:3] + 2.0 * state[3:])
    assert np.array_equal(out[3:], state[3:])


def test_em_motion_zero_diffusion_is_euler():
    motion = em_motion(drift=lambda x: -x, diffusion=lambda x: 0.0 * x, step=0.5)
    assert not motion.deterministic
    out = motion.advance(np.array([1.0]), 1.0, spawn_rng(12))
    # two explicit euler steps of dx = -x dt
    assert np.allclose(out, [0.25])


def test_model_initial_state_shapes():
    rng = spawn_rng(13)
    assert kac_model().sample_initial(rng).shape == (1,)
    assert maxwell_model().sample_initial(rng).shape == (6,)
    assert linear_toy_model().sample_initial(rng).shape == (1,)
    assert kac_model().dimension == 1
    assert maxwell_model().dimension == 6
