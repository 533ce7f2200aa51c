import json
import math
import random

import pytest

from evoforge import hdsl
from evoforge.problems import (
    BppInstance,
    InstanceFormatError,
    InvalidPermutation,
    TooLarge,
    TspInstance,
    bpp_best_fit,
    bpp_first_fit,
    bpp_lower_bound,
    bpp_pack,
    gen_bpp,
    gen_tsp,
    load_instance,
    save_instance,
    tsp_brute_force,
    tsp_nearest_neighbor,
    tsp_tour_length,
    tsp_validate,
)

from oracles import all_tours_min, first_fit_bins

FIRST_FIT = hdsl.parse("-index")
BEST_FIT = hdsl.parse("-(cap - item)")


def test_tour_length(unit_square):
    assert tsp_tour_length(unit_square, [0, 1, 2, 3]) == 4.0
    assert tsp_tour_length(unit_square, [0, 2, 1, 3]) == pytest.approx(2 + 2 * math.sqrt(2))
    with pytest.raises(InvalidPermutation):
        tsp_tour_length(unit_square, [0, 1, 1, 3])


@pytest.mark.parametrize("order, n, reason", [
    ([0, 1, 2], 4, "length"),
    ([0, 0, 1, 2], 4, "duplicate"),
    ([0, 1, 5], 3, "range"),
    ([0, 1.0, 2], 3, "type"),
])
def test_validate_errors(order, n, reason):
    with pytest.raises(InvalidPermutation) as info:
        tsp_validate(order, n)
    assert info.value.reason == reason


def test_validate_ok():
    tsp_validate([2, 0, 1], 3)


def test_nearest_neighbor(unit_square):
    assert tsp_nearest_neighbor(unit_square, 0).order == (0, 1, 2, 3)
    line = TspInstance(((0, 0), (1, 0), (2, 0)))
    tour = tsp_nearest_neighbor(line, 0)
    assert tour.order == (0, 1, 2)
    assert tsp_tour_length(line, tour) == 4.0
    for seed in range(20):
        inst = gen_tsp(seed, 7)
        tsp_validate(list(tsp_nearest_neighbor(inst, seed % 7).order), 7)


def test_brute_force_small_cases(unit_square):
    tour, length = tsp_brute_force(unit_square)
    assert length == 4.0 and tour.order[0] == 0 and tour.order[1] < tour.order[-1]
    tri = TspInstance(((0, 0), (3, 0), (0, 4)))
    tour, length = tsp_brute_force(tri)
    assert tour.order == (0, 1, 2) and length == 12.0
    with pytest.raises(TooLarge):
        tsp_brute_force(gen_tsp(1, 11))


def test_brute_force_matches_full_enumeration():
    for seed in range(5):
        inst = gen_tsp(seed, 7)
        assert tsp_brute_force(inst)[1] == pytest.approx(all_tours_min(inst.points), abs=1e-12)


def test_brute_force_beats_nearest_neighbor_and_random_tours():
    rng = random.Random(0)
    for seed in range(3):
        inst = gen_tsp(100 + seed, 8)
        _, opt = tsp_brute_force(inst)
        assert opt <= tsp_tour_length(inst, tsp_nearest_neighbor(inst, 0)) + 1e-12
        for _ in range(1000):
            assert opt <= tsp_tour_length(inst, rng.sample(range(8), 8)) + 1e-12


def test_pack_examples():
    assert bpp_pack(BppInstance(10, (5, 5, 4, 3, 3)), FIRST_FIT) == [[5, 5], [4, 3, 3]]
    assert len(bpp_pack(BppInstance(10, (6, 6, 6, 6)), FIRST_FIT)) == 4
    assert bpp_pack(BppInstance(10, (4, 3, 5, 5, 3)), BEST_FIT) == [[4, 3, 3], [5, 5]]


def test_baselines_hand_simulated():
    assert len(bpp_first_fit(BppInstance(10, (5, 5, 4, 3, 3)))) == 2
    assert len(bpp_best_fit(BppInstance(10, (5, 5, 4, 3, 3)))) == 2
    assert bpp_first_fit(BppInstance(10, (7, 6, 5, 4))) == [[7], [6, 4], [5]]
    assert bpp_best_fit(BppInstance(10, (5, 7, 3))) == [[5], [7, 3]]
    assert bpp_first_fit(BppInstance(10, (5, 7, 3))) == [[5, 3], [7]]


def test_lower_bound():
    assert bpp_lower_bound(BppInstance(10, (5, 5, 4, 3, 3))) == 2
    assert bpp_lower_bound(BppInstance(10, (6, 6, 6, 6))) == 3
    assert bpp_lower_bound(BppInstance(1, (1,))) == 1


def test_pack_equivalence_sweep():
    for seed in range(100):
        inst = gen_bpp(seed, 50, 100, (10, 40))
        ff = bpp_first_fit(inst)
        assert bpp_pack(inst, FIRST_FIT) == ff
        assert ff == first_fit_bins(100, list(inst.items))
        assert bpp_pack(inst, BEST_FIT) == bpp_best_fit(inst)


def test_pack_conserves_items_and_capacity():
    exprs = [hdsl.parse(t) for t in ("cap", "item - cap", "index * cap", "-n_bins", "max(cap, index)")]
    for seed in range(30):
        inst = gen_bpp(seed, 40, 50, (1, 30))
        for e in exprs:
            bins = bpp_pack(inst, e)
            assert sorted(x for b in bins for x in b) == sorted(inst.items)
            assert all(sum(b) <= inst.capacity for b in bins)


def test_pack_domain_error_aborts():
    with pytest.raises(hdsl.DomainError):
        bpp_pack(BppInstance(10, (5, 5)), hdsl.parse("item / (cap - cap)"))
    with pytest.raises(hdsl.UnboundVariable):
        bpp_pack(BppInstance(10, (5, 5)), hdsl.parse("weight"))


def test_generators_are_seeded():
    assert gen_tsp(42, 9).digest == gen_tsp(42, 9).digest
    inst = gen_bpp(7, 50, 100, (10, 40))
    assert all(10 <= s <= 40 for s in inst.items) and len(inst.items) == 50
    assert len({gen_tsp(s, 9).digest for s in range(1000)}) == 1000
    assert len({gen_bpp(s, 50).digest for s in range(1000)}) == 1000
    with pytest.raises(ValueError):
        gen_bpp(1, 5, 10, (5, 20))
    with pytest.raises(ValueError):
        gen_tsp(1, 2)


def test_instance_round_trip(tmp_path, unit_square):
    p = tmp_path / "sq.json"
    save_instance(unit_square, p)
    assert load_instance(p).digest == unit_square.digest
    b = gen_bpp(3, 20)
    save_instance(b, tmp_path / "b.json")
    assert load_instance(tmp_path / "b.json") == b


@pytest.mark.parametrize("data, match", [
    ({"name": "x", "items": [1, 2]}, "capacity"),
    ({"name": "x", "capacity": 10, "items": [11]}, "exceeds capacity"),
    ({"name": "x", "capacity": 10, "items": [1], "extra": 1}, "unknown field 'extra'"),
    ({"name": "x", "points": [[0, 0], [1, 1]]}, "at least 3"),
    ({"name": "x", "points": [[0, 0], [1], [2, 2]]}, r"points'\[1\]"),
])
def test_instance_validation(tmp_path, data, match):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(data))
    with pytest.raises(InstanceFormatError, match=match):
        load_instance(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"name": "x",\n "capacity": }')
    with pytest.raises(InstanceFormatError, match="line 2"):
        load_instance(p)
