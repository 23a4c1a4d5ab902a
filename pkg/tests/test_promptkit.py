from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equillm import geomgraph as gg
from equillm import promptkit as pk
from equillm.errors import ConfigError, ParseError, StatisticsError

seeds = st.integers(0, 2**32 - 1)


def _graph(coords, pairs):
    return gg.GeometricGraph(np.ones((len(coords), 1)), np.asarray(coords, dtype=float), gg.undirected_to_directed(pairs))


def test_single_edge_statistics():
    s = pk.compute_statistics(_graph([[0, 0, 0], [3, 4, 0]], [(0, 1)]))
    assert (s.d_min, s.d_max, s.d_mean) == (5.0, 5.0, 5.0)


def test_triangle_statistics():
    g = gg.GeometricGraph(np.ones((3, 1)), np.array([[0.0, 0, 0], [3, 0, 0], [3, 4, 0]]), np.array([[0, 1], [1, 2], [2, 0]]))
    s = pk.compute_statistics(g)
    assert (s.d_min, s.d_max, s.d_mean) == (3.0, 5.0, 4.0)


def test_statistics_need_edges():
    with pytest.raises(StatisticsError):
        pk.compute_statistics(gg.GeometricGraph(np.ones((2, 1)), np.zeros((2, 3)), np.zeros((0, 2))))


@given(seeds, st.booleans())
@settings(max_examples=50, deadline=None)
def test_raw_statistics_invariant(seed, reflect):
    rng = np.random.default_rng(seed)
    g = _graph(rng.standard_normal((6, 3)) * 3, gg.random_connected_graph(6, 3.0, rng))
    tau = gg.random_transform(rng, reflect=reflect)
    a, b = pk.distance_statistics(g), pk.distance_statistics(gg.apply_transform(g, tau))
    assert max(abs(a.d_min - b.d_min), abs(a.d_max - b.d_max), abs(a.d_mean - b.d_mean)) <= 1e-9


def test_pooled_statistics_over_frames():
    g1 = _graph([[0, 0, 0], [1, 0, 0]], [(0, 1)])
    g2 = _graph([[0, 0, 0], [3, 0, 0]], [(0, 1)])
    s = pk.distance_statistics([g1, g2])
    assert (s.d_min, s.d_max, s.d_mean) == (1.0, 3.0, 2.0)


@pytest.mark.parametrize("x, expected", [(0.0005, "0.001"), (-0.0005, "-0.001"), (2.0745, "2.075"), (1.0, "1.000")])
def test_round_half_away(x, expected):
    assert f"{pk.round_half_away(x, 3):.3f}" == expected


def test_only_task_section():
    spec = pk.PromptSpec("do it", "", "obj", include_object=False, include_statistics=False)
    text = pk.render_prompt(spec, _graph([[0, 0, 0], [1, 0, 0]], [(0, 1)]), None)
    assert "<Task>" in text
    assert not any(m in text for m in pk.MARKERS if m != "<Task>")


def test_section_order_and_format():
    g = _graph([[0, 0, 0], [3, 4, 0], [3, 4, 1]], [(0, 1), (1, 2)])
    text = pk.render_prompt(pk.DYNAMICS_PROMPT, g, pk.compute_statistics(g), T=10, F=10)
    lines = text.split("\n")
    assert [ln.split(" ")[0] for ln in lines] == ["<Task>", "<Object>", "<Statistics>", "<Requirement>"]
    assert lines[2] == "<Statistics> min=1.000, max=5.000, mean=3.000"
    assert "3 nodes" in lines[0] and "10 frames" in lines[0]


def test_render_deterministic():
    rng = np.random.default_rng(0)
    g = _graph(rng.standard_normal((5, 3)), gg.random_connected_graph(5, 2.0, rng))
    stats = pk.compute_statistics(g)
    assert pk.render_prompt(pk.DYNAMICS_PROMPT, g, stats, 10, 10) == pk.render_prompt(pk.DYNAMICS_PROMPT, g, stats, 10, 10)


def test_render_invariant_under_fixed_seed_suite():
    rng = np.random.default_rng(20240601)
    for _ in range(50):
        g = _graph(rng.standard_normal((6, 3)) * 2, gg.random_connected_graph(6, 3.0, rng))
        tau = gg.random_transform(rng)
        h = gg.apply_transform(g, tau)
        a = pk.render_prompt(pk.DYNAMICS_PROMPT, g, pk.compute_statistics(g), 10, 10)
        b = pk.render_prompt(pk.DYNAMICS_PROMPT, h, pk.compute_statistics(h), 10, 10)
        assert a.encode() == b.encode()


def test_tokenize_examples():
    assert pk.tokenize("") == [pk.BOS, pk.EOS]
    assert pk.tokenize("A") == [pk.BOS, 65, pk.EOS]
    assert (pk.BOS, pk.EOS, pk.PAD, pk.VOCAB_SIZE) == (256, 257, 258, 259)


def test_tokenize_round_trip_ascii():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = "".join(chr(c) for c in rng.integers(0, 128, rng.integers(0, 40)))
        assert pk.detokenize(pk.tokenize(s)) == s


@given(st.text())
def test_tokenize_round_trip_unicode(s):
    ids = pk.tokenize(s)
    assert all(0 <= i < pk.VOCAB_SIZE for i in ids)
    assert pk.detokenize(ids) == s


def test_template_file(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("<Task> Forecast {F} frames of {n_nodes} bodies.\n<Requirement> Keep it\nequivariant.\n")
    spec = pk.load_prompt_template(path)
    assert spec.task_text == "Forecast {F} frames of {n_nodes} bodies."
    assert spec.requirement_text == "Keep it\nequivariant."
    assert spec.object_text == pk.DYNAMICS_PROMPT.object_text


def test_template_errors(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("<Task> uses {velocity}\n")
    with pytest.raises(ParseError, match="velocity"):
        pk.load_prompt_template(path)
    path.write_text("preamble\n<Task> x\n")
    with pytest.raises(ParseError, match="line 1"):
        pk.load_prompt_template(path)
    with pytest.raises(ConfigError):
        pk.load_prompt_template(tmp_path / "missing.txt")
