import numpy as np
import pytest

import rstensor as rt
from rstensor.errors import (
    DomainError,
    PackingError,
    ParseError,
    ResolutionError,
)


def test_load_single_record(tmp_path):
    path = tmp_path / "one.txt"
    path.write_text("# rs-particles v1 b=1.0\n0 0 0 1.0\n")
    sys = rt.load_particles(path)
    assert sys.count == 1
    assert sys.charges[0] == 1.0
    assert sys.box.half_width == 1.0


def test_loader_accepts_duplicates(tmp_path):
    path = tmp_path / "dup.txt"
    path.write_text("# rs-particles v1 b=2.0\n0.5 0 0 1\n0.5 0 0 -1\n")
    sys = rt.load_particles(path)
    assert sys.count == 2


def test_loader_reports_line_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# rs-particles v1 b=2.0\n0 0 0 1\nnot a number here\n")
    with pytest.raises(ParseError, match="line 3"):
        rt.load_particles(path)


def test_loader_rejects_outside_box(tmp_path):
    path = tmp_path / "out.txt"
    path.write_text("# rs-particles v1 b=1.0\n5 0 0 1\n")
    with pytest.raises(DomainError):
        rt.load_particles(path)


def test_loader_requires_header(tmp_path):
    path = tmp_path / "nohdr.txt"
    path.write_text("0 0 0 1\n")
    with pytest.raises(ParseError, match="line 1"):
        rt.load_particles(path)


def test_roundtrip_is_identity(tmp_path, box20):
    sys = rt.generate_random_cluster(500, box20, min_sep=0.5, seed=9)
    assert rt.separation_distance(sys) >= 0.5
    path = tmp_path / "c.txt"
    rt.save_particles(sys, path)
    back = rt.load_particles(path)
    assert back.box.half_width == sys.box.half_width
    assert np.array_equal(back.positions, sys.positions)
    assert np.array_equal(back.charges, sys.charges)


def test_lattice_two_points():
    sys = rt.generate_lattice((2, 1, 1), spacing=1.0)
    assert sys.count == 2
    assert np.allclose(sys.charges, 1.0)
    d = np.linalg.norm(sys.positions[0] - sys.positions[1])
    assert d == pytest.approx(1.0)


def test_lattice_8cubed(box20):
    sys = rt.generate_lattice((8, 8, 8), spacing=1.0, box=box20)
    assert sys.count == 512


def test_lattice_seed_reproducible(box20):
    a = rt.generate_lattice((12, 12, 12), spacing=1.0, charge_law="uniform", seed=5, box=box20)
    b = rt.generate_lattice((12, 12, 12), spacing=1.0, charge_law="uniform", seed=5, box=box20)
    assert a.count == 1728
    assert np.array_equal(a.charges, b.charges)


def test_lattice_extent_must_fit():
    with pytest.raises(DomainError):
        rt.generate_lattice((8, 8, 8), spacing=1.0, box=rt.Box3(3.0))


def test_cluster_single_point(box20):
    sys = rt.generate_random_cluster(1, box20, min_sep=5.0, seed=0)
    assert sys.count == 1


def test_cluster_respects_min_sep(box20):
    sys = rt.generate_random_cluster(200, box20, min_sep=0.8, seed=4)
    assert rt.separation_distance(sys) >= 0.8


def test_cluster_infeasible_raises():
    with pytest.raises(PackingError):
        rt.generate_random_cluster(2, rt.Box3(1.0), min_sep=10.0, seed=0, max_attempts=200)


def test_separation_two_points():
    sys = rt.ParticleSystem(
        positions=np.array([[0.0, 0, 0], [1.0, 0, 0]]), charges=np.ones(2), box=rt.Box3(3.0)
    )
    assert rt.separation_distance(sys) == pytest.approx(1.0)


def test_separation_lattice_is_spacing(box20):
    sys = rt.generate_lattice((8, 8, 8), spacing=1.25, box=box20)
    assert rt.separation_distance(sys) == pytest.approx(1.25)


def test_separation_matches_bruteforce(box20):
    sys = rt.generate_random_cluster(60, box20, min_sep=1.0, seed=8)
    best = np.inf
    for i in range(sys.count):
        for j in range(i + 1, sys.count):
            best = min(best, float(np.linalg.norm(sys.positions[i] - sys.positions[j])))
    assert rt.separation_distance(sys) == pytest.approx(best, rel=0, abs=0)


def test_separation_needs_two():
    sys = rt.ParticleSystem(positions=np.zeros((1, 3)), charges=np.ones(1), box=rt.Box3(1.0))
    with pytest.raises(DomainError):
        rt.separation_distance(sys)


def test_snap_on_node_zero_displacement(grid64):
    pos = grid64.position(np.array([[10, 20, 30]]))
    sys = rt.ParticleSystem(positions=pos, charges=np.ones(1), box=grid64.box)
    snapped = rt.snap_to_grid(sys, grid64)
    assert snapped.max_displacement == 0.0
    assert tuple(snapped.indices[0]) == (10, 20, 30)


def test_snap_quarter_cell(grid64):
    h = grid64.h
    pos = grid64.position(np.array([[10, 20, 30]])) + np.array([h / 4, 0, 0])
    sys = rt.ParticleSystem(positions=pos, charges=np.ones(1), box=grid64.box)
    snapped = rt.snap_to_grid(sys, grid64)
    assert snapped.max_displacement == pytest.approx(h / 4)
    assert tuple(snapped.indices[0]) == (10, 20, 30)


def test_snap_400_cluster_bound(box20):
    grid = rt.Grid3(1024, box20)
    sys = rt.generate_random_cluster(400, box20, min_sep=0.8, seed=12)
    snapped = rt.snap_to_grid(sys, grid)
    assert snapped.max_displacement <= grid.h * np.sqrt(3) / 2
    assert snapped.max_displacement <= 0.034


def test_snap_idempotent(grid64, box20):
    sys = rt.generate_random_cluster(40, box20, min_sep=2.5, seed=2)
    once = rt.snap_to_grid(sys, grid64)
    twice = rt.snap_to_grid(once.base, grid64)
    assert twice.max_displacement == 0.0
    assert np.array_equal(once.indices, twice.indices)
    assert np.array_equal(once.base.positions, twice.base.positions)


def test_snap_collision_raises(grid64):
    h = grid64.h
    base = grid64.position(np.array([5, 5, 5]))
    pos = np.array([base + h / 8, base - h / 8])
    sys = rt.ParticleSystem(positions=pos, charges=np.ones(2), box=grid64.box)
    with pytest.raises(ResolutionError):
        rt.snap_to_grid(sys, grid64)


def test_grid_h_is_derived(box20):
    grid = rt.Grid3(1024, box20)
    assert grid.h * grid.n == 2 * box20.half_width
    assert grid.coords()[grid.origin_index] == 0.0


def test_grid_rejects_odd_n(box20):
    with pytest.raises(DomainError):
        rt.Grid3(63, box20)


def test_doubled_grid_alignment(grid64):
    doubled = grid64.doubled()
    assert doubled.n == 2 * grid64.n
    assert doubled.h == grid64.h
    assert doubled.coords()[doubled.origin_index] == 0.0
