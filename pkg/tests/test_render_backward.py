"""Analytic splatting gradients vs central finite differences."""

import numpy as np
import pytest

from viewedit.gaussians import GaussianScene, render, render_backward

from oracles import identity_camera, random_scene, rel_err

FD_STEP = 1e-5
TOL = 1e-3


def loss_and_grads(scene, cam, w):
    out = render(scene, cam)
    loss = float((out.color * w).sum())
    grads = render_backward(scene, cam, w)
    return loss, grads


def fd_scene(scene, cam, w, field, index, comp=None, step=FD_STEP):
    def ev(delta):
        s = scene.copy()
        if field == "color":
            s.colors[index, comp] += delta
        elif field == "opacity":
            s.opacities[index] += delta
        else:
            s.positions[index, comp] += delta
        return float((render(s, cam).color * w).sum())

    return (ev(step) - ev(-step)) / (2 * step)


def test_single_splat_color_gradient_is_weight():
    cam = identity_camera(31, 31, f=30.0)
    scene = GaussianScene([[0, 0, 3.0]], [[0.4] * 3], [[1.0, 0, 0, 0]],
                          [0.6], [[0.2, 0.5, 0.9]], [0])
    w = np.zeros((31, 31, 3))
    cy, cx = 15, 15
    w[cy, cx, 1] = 1.0
    out = render(scene, cam)
    grads = render_backward(scene, cam, w)
    # dC/dc at each covered pixel is the compositing weight alpha(p)
    assert grads["color"][0, 1] == pytest.approx(out.alpha[cy, cx], rel=1e-12)
    assert grads["color"][0, 0] == 0.0 and grads["color"][0, 2] == 0.0


def test_occluded_back_splat_opacity_attenuated():
    cam = identity_camera(31, 31, f=30.0)
    front_o = 0.4

    def grads_with_front(include_front):
        if include_front:
            scene = GaussianScene([[0, 0, 3.0], [0, 0, 6.0]], [[0.5] * 3] * 2,
                                  [[1.0, 0, 0, 0]] * 2, [front_o, 0.5],
                                  [[1, 0, 0], [0, 0, 1]], [0, 1])
            back = 1
        else:
            scene = GaussianScene([[0, 0, 6.0]], [[0.5] * 3], [[1.0, 0, 0, 0]],
                                  [0.5], [[0, 0, 1]], [1])
            back = 0
        w = np.zeros((31, 31, 3))
        w[15, 15, 2] = 1.0
        return render_backward(scene, cam, w)["opacity"][back]

    alone = grads_with_front(False)
    occluded = grads_with_front(True)
    assert occluded == pytest.approx(alone * (1 - front_o), rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fd_color_opacity_position_10_gaussians(seed):
    rng = np.random.default_rng(1000 + seed)
    cam = identity_camera(16, 16, f=15.0)
    scene = random_scene(rng, 10, span=1.5, z0=4.0, z_spread=1.5)
    # keep opacities away from the clamp and colors interior for clean FD
    scene.opacities[:] = rng.uniform(0.2, 0.8, len(scene))
    scene.colors[:] = rng.uniform(0.1, 0.9, (len(scene), 3))
    w = rng.standard_normal((16, 16, 3))
    _, grads = loss_and_grads(scene, cam, w)

    for i in range(len(scene)):
        for c in range(3):
            fd = fd_scene(scene, cam, w, "color", i, c)
            err = abs(grads["color"][i, c] - fd) / max(abs(fd), 1e-4)
            assert err < TOL, f"color g{i} ch{c}: {grads['color'][i, c]} vs {fd}"
        fd = fd_scene(scene, cam, w, "opacity", i)
        err = abs(grads["opacity"][i] - fd) / max(abs(fd), 1e-4)
        assert err < TOL, f"opacity g{i}: {grads['opacity'][i]} vs {fd}"
        for c in range(3):
            fd = fd_scene(scene, cam, w, "position", i, c)
            scale = max(abs(grads["position"][i]).max(), 1e-3)
            err = abs(grads["position"][i, c] - fd) / scale
            assert err < TOL, f"position g{i} axis{c}: {grads['position'][i, c]} vs {fd}"


def test_gradients_zero_for_behind_camera():
    cam = identity_camera(16, 16)
    scene = GaussianScene([[0, 0, 4.0], [0, 0, -2.0]], [[0.3] * 3] * 2,
                          [[1.0, 0, 0, 0]] * 2, [0.5, 0.5],
                          [[1, 0, 0], [0, 1, 0]], [0, 1])
    grads = render_backward(scene, cam, np.ones((16, 16, 3)))
    np.testing.assert_array_equal(grads["color"][1], 0.0)
    np.testing.assert_array_equal(grads["opacity"][1], 0.0)
    np.testing.assert_array_equal(grads["position"][1], 0.0)
