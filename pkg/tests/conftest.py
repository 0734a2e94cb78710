import numpy as np
import pytest

from thinlayer import GeometryFamily, build_patch


@pytest.fixture(scope="session")
def circle_patch():
    return build_patch(GeometryFamily("circle", {"radius": 1.0}), (96,))


@pytest.fixture(scope="session")
def torus_patch():
    return build_patch(GeometryFamily("torus", {"major": 2.0, "minor": 0.5}), (32, 32))


@pytest.fixture(scope="session")
def sphere_patch():
    return build_patch(GeometryFamily("full-sphere", {"radius": 1.0}), (32, 64))


@pytest.fixture(scope="session")
def segment_patch():
    return build_patch(GeometryFamily("segment", {"length": 1.0}), (64,))


def hairpin_samples(n=400, gap=0.1, turn_radius=0.4):
    """U-shaped curve: half-circle turn joined to arms that pinch to `gap`.

    The turn radius keeps rho_m well above the widths used in tests while the
    arms approach each other closely, so only the injectivity heuristic can
    reject a layer around it.
    """
    half = gap / 2.0
    height = 1.2
    n_turn = n // 3
    n_arm = (n - n_turn) // 2
    alpha = np.linspace(-np.pi, 0.0, n_turn)
    turn = np.stack([turn_radius * np.cos(alpha), turn_radius * np.sin(alpha)], -1)
    y = np.linspace(0.0, height, n_arm + 1)[1:]
    pinch = half + (turn_radius - half) * np.cos(0.5 * np.pi * y / height) ** 2
    right = np.stack([pinch, y], -1)
    left = np.stack([-pinch, y], -1)[::-1]
    return np.concatenate([left, turn, right], 0)
