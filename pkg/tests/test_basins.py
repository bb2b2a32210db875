import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from newton_atlas.basins import (
    NON_CONVERGING,
    BasinGrid,
    Viewport,
    accesses_count,
    bubbles_adjacent,
    center_and_generation,
    channel_diagram,
    identify_bubbles,
    render_basins,
    trace_fixed_internal_rays,
    trace_to_pixels,
    write_image,
)
from newton_atlas.core import NewtonMap, critical_points
from newton_atlas.planar import validate_abstract_channel_diagram

from conftest import nmap_of


def test_p3_labels_are_threefold_symmetric():
    n = nmap_of("p3")
    vp = Viewport(0j, 4.0, (120, 120))
    grid = render_basins(n, vp, max_iter=60)
    # the labels of the rotated pixel centers, rendered as a one-row grid
    w = np.exp(2j * np.pi / 3)
    z = vp.coords().ravel()
    zz = w * z
    for _ in range(60):
        zz = n(zz)
    rot = np.full(z.size, -1)
    d = np.abs(zz[:, None] - n.roots[None, :])
    hit = d.min(axis=1) < 1e-6
    rot[hit] = d[hit].argmin(axis=1)
    a = grid.labels.ravel()
    conv = (a >= 0) & (rot >= 0)
    assert conv.mean() > 0.95
    assert np.mean(rot[conv] == (a[conv] + 1) % 3) > 0.999


def test_free_critical_points_do_not_converge():
    for name in ("d4a", "d4b"):
        n = nmap_of(name)
        vp = Viewport(0j, 1.6, (160, 160))
        grid = render_basins(n, vp, max_iter=80)
        assert np.any(grid.labels == NON_CONVERGING)
        for c in critical_points(n).free:
            r, col = (int(round(float(t))) for t in vp.to_pixel(c))
            assert grid.labels[r, col] == NON_CONVERGING


def test_basin_grid_roundtrip(tmp_path):
    vp = Viewport(0.1 + 0.2j, 3.0, (64, 80))
    grid = render_basins(nmap_of("p3"), vp, max_iter=30)
    grid.save(tmp_path / "g.bin")
    back = BasinGrid.load(tmp_path / "g.bin")
    assert np.array_equal(back.labels, grid.labels)
    assert np.array_equal(back.iterations, grid.iterations)
    assert back.viewport == grid.viewport


def test_write_image_png_and_ppm(tmp_path):
    from PIL import Image

    vp = Viewport(0j, 4.0, (64, 64))
    grid = render_basins(nmap_of("p3"), vp, max_iter=30)
    runs = trace_to_pixels(vp, np.linspace(-1.5, 1.5, 50) + 0j)
    write_image(grid.colors(), tmp_path / "a.png", [(runs[0], {"color": (255, 0, 0), "width": 1})])
    write_image(grid.colors(), tmp_path / "a.ppm")
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    img = np.asarray(Image.open(tmp_path / "a.png"))
    assert img.shape == (64, 64, 3)
    assert np.any(np.all(img == [255, 0, 0], axis=-1))


def test_p3_bubbles_generation_zero():
    n = nmap_of("p3")
    grid = render_basins(n, Viewport(0j, 4.0, (200, 200)), max_iter=60)
    bubbles = identify_bubbles(n, grid, 0)
    assert len(bubbles) == 3
    assert sorted(b.basin for b in bubbles) == [0, 1, 2]


def test_generation_one_point():
    n = nmap_of("p3")
    # the pole 0 separates; a point just right of it maps far into basin of 1
    z = 0.05 + 0j
    w = complex(n(z))
    assert w.real > 10
    center, gen = center_and_generation(n, -0.4 + 0.0j, 0)
    assert gen == 1
    assert abs(complex(n(center)) - 1) < 1e-8


def test_accesses():
    for i in range(3):
        assert accesses_count(nmap_of("p3"), i) == 1
    for i in range(4):
        assert accesses_count(nmap_of("d4a"), i) == 1
    # cubic whose free critical point (the centroid 11/3) sits in an immediate basin
    n = NewtonMap(np.array([0, 1, 10], dtype=complex))
    assert sorted(accesses_count(n, i) for i in range(3)) == [1, 1, 2]


def test_p3_internal_ray_on_positive_axis():
    n = nmap_of("p3")
    (ray,) = trace_fixed_internal_rays(n, 0)
    t = ray.trace[np.isfinite(ray.trace)]
    assert np.max(np.abs(t.imag)) < 1e-8
    assert np.all(t.real >= 1 - 1e-12)


def test_internal_rays_forward_invariant():
    n = nmap_of("d4a")
    for i in range(4):
        (ray,) = trace_fixed_internal_rays(n, i)
        t = ray.trace[np.isfinite(ray.trace) & (np.abs(ray.trace) < 50)]
        img = n(t[::7])
        img = img[np.abs(img) < 50]
        d = np.min(np.abs(img[:, None] - t[None, :]), axis=1)
        # nearest-sample distance, bounded by the sampling density
        step = np.max(np.abs(np.diff(t)))
        assert np.all(d < max(1e-6, step))


@pytest.mark.parametrize("name,edges", [("p3", 3), ("d4a", 4), ("d4b", 4)])
def test_channel_diagram_counts_and_validity(name, edges):
    n = nmap_of(name)
    g = channel_diagram(n)
    assert len(g.edges) == edges
    assert validate_abstract_channel_diagram(g, n.d).verdict
    assert len(g.faces()) == 1


def test_d4b_cyclic_order_at_infinity():
    n = nmap_of("d4b")
    g = channel_diagram(n)
    order = [g.edges[e].ends[0] for e, _ in g.rotations["inf"]]
    # tails of the rays follow the arguments of the roots at infinity
    tail_angle = {}
    for e in g.edges.values():
        t = e.trace[np.isfinite(e.trace)]
        tail_angle[e.ends[0]] = np.angle(t[-1])
    # the chart 1/z at infinity reverses orientation
    expect = sorted(tail_angle, key=lambda v: -tail_angle[v])
    k = expect.index(order[0])
    assert order == expect[k:] + expect[:k]


def test_bubble_adjacency_in_p3():
    n = nmap_of("p3")
    vp = Viewport(0j, 3.0, (300, 300))
    grid = render_basins(n, vp, max_iter=60)
    bubbles = identify_bubbles(n, grid, 1)
    b0 = next(b for b in bubbles if b.generation == 0 and b.basin == 0)
    near_pole = [b for b in bubbles if b.generation == 1 and abs(b.center) < 1.0]
    assert near_pole
    assert any(bubbles_adjacent(n, b0, b, vp.pixel) for b in near_pole)
    for b in bubbles:
        assert abs(complex(n.iterate(b.center, b.generation)) - n.roots[b.basin]) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_pixel_roundtrip(x, y):
    vp = Viewport(0.3 - 0.2j, 3.7, (97, 131))
    r, c = vp.to_pixel(complex(x, y))
    coords = vp.coords()
    ri, ci = int(np.clip(np.rint(r), 0, 96)), int(np.clip(np.rint(c), 0, 130))
    if 0 <= r <= 96 and 0 <= c <= 130:
        assert abs(coords[ri, ci] - complex(x, y)) <= vp.pixel
