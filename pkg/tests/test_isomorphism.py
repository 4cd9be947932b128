import numpy as np
import pytest

from routegnn.graphs import Graph, graph_from_edges, shortest_distances
from routegnn.isomorphism import (builtin_graphs, gi_separate, separation_model_config,
                                  spectrum_compare, wl_distinguish, wl_refine)


def k3():
    return graph_from_edges(3, [[0, 1], [0, 2], [1, 2]])


def path3():
    return graph_from_edges(3, [[0, 1], [1, 2]])


def random_graph(rng, n, p=0.4):
    upper = np.triu((rng.random((n, n)) < p).astype(int), 1)
    return Graph(upper + upper.T)


# -- color refinement ------------------------------------------------------------------

def test_wl_triangle_stays_one_class():
    coloring = wl_refine(k3())
    assert len(set(coloring.colors)) == 1
    assert all(hist == [3] for hist in coloring.histories)


def test_wl_path_splits_endpoints_from_middle():
    coloring = wl_refine(path3())
    assert coloring.stable
    assert coloring.colors[0] == coloring.colors[2] != coloring.colors[1]
    assert coloring.histories[-1] == [1, 2]


def test_wl_any_regular_graph_is_one_class_forever():
    for name in ("RegN6D3", "RegN8D3", "RegN8D4", "RegN8D5", "RegN7D4"):
        for g in builtin_graphs(name):
            coloring = wl_refine(g)
            assert all(hist == [g.n] for hist in coloring.histories)


def test_wl_refinement_is_monotone():
    rng = np.random.default_rng(0)
    for _ in range(10):
        coloring = wl_refine(random_graph(rng, int(rng.integers(3, 10))))
        sizes = [len(h) for h in coloring.histories]
        assert sizes == sorted(sizes)
        assert coloring.iterations <= coloring.histories[0][0] if coloring.histories else True


def test_wl_distinguish_triangle_vs_path():
    assert wl_distinguish(k3(), path3()) is True


def test_wl_distinguish_self_and_relabelings():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 7)
    assert wl_distinguish(g, g) is False
    assert wl_distinguish(g, g.relabeled(rng.permutation(7))) is False


def test_wl_distinguish_different_sizes():
    assert wl_distinguish(k3(), graph_from_edges(4, [[0, 1]])) is True


def test_wl_fails_on_regular_family_pairs():
    g1, g2 = builtin_graphs("RegN6D3")
    assert wl_distinguish(g1, g2) is False


# -- builtin families --------------------------------------------------------------------

@pytest.mark.parametrize("name,count,degree", [
    ("RegN6D3", 2, 3), ("RegN7D4", 2, 4), ("RegN8D3", 5, 3),
    ("RegN8D4", 6, 4), ("RegN8D5", 3, 5),
])
def test_builtin_regular_families(name, count, degree):
    graphs = builtin_graphs(name)
    assert len(graphs) == count
    spectra = []
    for g in graphs:
        assert np.all(g.degree() == degree)
        spectra.append(np.sort(np.linalg.eigvalsh(g.adjacency.astype(float))))
    # pairwise distinct spectra certify pairwise non-isomorphism
    for i in range(count):
        for j in range(i + 1, count):
            assert not np.allclose(spectra[i], spectra[j], atol=1e-8)


def test_q4_and_hoffman_are_cospectral_4_regular():
    q4, hoffman = builtin_graphs("Q4vsHoffman")
    for g in (q4, hoffman):
        assert g.n == 16
        assert np.all(g.degree() == 4)
    assert spectrum_compare(q4, hoffman, tol=1e-8) is True
    # ...yet not isomorphic: every 4-cube node has one antipode at distance 4,
    # while part of the other graph's nodes reach everything within distance 3
    hists = []
    for g in (q4, hoffman):
        d = shortest_distances(g)
        hists.append(sorted(tuple(np.bincount(row, minlength=5)) for row in d))
    assert hists[0] != hists[1]


def test_builtin_names_are_flexible():
    assert len(builtin_graphs("reg-n8-d3")) == 5
    assert builtin_graphs("q4")[0].n == 16
    with pytest.raises(KeyError, match="unknown builtin"):
        builtin_graphs("nope")


# -- spectrum compare ----------------------------------------------------------------------

def test_spectrum_compare_self():
    assert spectrum_compare(k3(), k3()) is True


def test_spectrum_compare_triangle_vs_path():
    # eigenvalues {2, -1, -1} vs {sqrt(2), 0, -sqrt(2)}
    assert spectrum_compare(k3(), path3()) is False


# -- untrained separation ----------------------------------------------------------------------

def test_separation_reproduces_regular_family_rows():
    for name, n_graphs in (("RegN6D3", 2), ("RegN8D3", 5), ("Q4vsHoffman", 2)):
        report = gi_separate(builtin_graphs(name), seed=0, set_name=name)
        assert report.n_graphs == n_graphs
        assert report.all_separated(), f"{name} not fully separated"
        assert report.graphs_separated() == n_graphs
        assert report.pairs_wl_separated == 0
        doc = report.to_doc()
        assert doc["graphs_separated"] == n_graphs


def test_separation_never_splits_relabeled_copies():
    rng = np.random.default_rng(2)
    g = builtin_graphs("RegN8D3")[0]
    for seed in range(5):
        copy = g.relabeled(rng.permutation(g.n))
        copy.name = "relabeled"
        report = gi_separate([g, copy], seed=seed, set_name="self")
        assert report.pairs_gi_separated == 0


def test_wl_separated_pairs_are_gi_separated():
    # whenever color refinement splits a pair, the untrained network does too
    rng = np.random.default_rng(3)
    pairs = []
    while len(pairs) < 6:
        n = int(rng.integers(4, 9))
        g1, g2 = random_graph(rng, n), random_graph(rng, n)
        if wl_distinguish(g1, g2):
            pairs.append((g1, g2))
    for seed in range(20):
        for g1, g2 in pairs:
            report = gi_separate([g1, g2], seed=seed, set_name="wl-pair")
            assert report.all_separated()


def test_different_spectra_imply_separation_with_full_histogram():
    # sigmoid mode with walk histograms of length n splits every pair whose
    # adjacency spectra differ; channel scaling keeps the long histograms'
    # raw counts from saturating the sigmoid in float64
    rng = np.random.default_rng(4)
    checked = 0
    trials = 0
    while checked < 50 and trials < 500:
        trials += 1
        n = int(rng.integers(3, 9))
        g1, g2 = random_graph(rng, n, p=0.45), random_graph(rng, n, p=0.45)
        if spectrum_compare(g1, g2):
            continue
        config = separation_model_config(score_map="sigmoid", k=n)
        report = gi_separate([g1, g2], config=config, seed=0, set_name="lemma",
                             feature_scale="channel_max")
        assert report.all_separated()
        checked += 1
    assert checked == 50

    for name in ("RegN6D3", "RegN8D3", "RegN8D4", "RegN8D5", "RegN7D4"):
        graphs = builtin_graphs(name)
        config = separation_model_config(score_map="sigmoid", k=graphs[0].n)
        report = gi_separate(graphs, config=config, seed=0, set_name=name,
                             feature_scale="channel_max")
        assert report.all_separated()


def test_separation_report_records_inputs():
    report = gi_separate(builtin_graphs("RegN6D3"), seed=13, threshold=2e-4,
                         norm="l2", set_name="RegN6D3")
    doc = report.to_doc()
    assert doc["seed"] == 13
    assert doc["threshold"] == 2e-4
    assert doc["norm"] == "l2"
    assert doc["score_map"] == "sigmoid"


def test_softmax_mode_also_separates_builtin_families():
    config = separation_model_config(score_map="softmax")
    for name in ("RegN6D3", "RegN8D3", "Q4vsHoffman"):
        report = gi_separate(builtin_graphs(name), config=config, seed=0, set_name=name)
        assert report.all_separated()
