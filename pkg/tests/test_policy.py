import math

import numpy as np
import pytest

from pairview import ContractViolation, EpisodeComplete, GridSpec, ViewIndex
from pairview.fusion import PROB_FLOOR
from pairview.policy import (
    TIE_RTOL,
    EpisodeState,
    build_nbv_targets,
    dispatch_cells,
    fit_nbv_policy,
    fit_quality_predictor,
    load_nbv_policy,
    load_quality_predictor,
    nbv_next,
    nbv_next_cell,
    nbv_policy_from_scores,
    new_episode,
    optimised_next,
    quality_predictor_from_scores,
    recompute_costs,
    save_nbv_policy,
    save_quality_predictor,
    score_trajectory,
    update_costs,
    update_costs_cell,
)
from pairview.sensorium import Observation, gen_world, make_pair, pair_posterior, sample_objects, softmax
from pairview.viewsphere import enumerate_paths, neighbors, relative_pose

G = GridSpec()


def brute_force_next(state, remaining_steps, horizon_cap=5):
    """Every trajectory from every unvisited neighbour, scored over its distinct unobserved views."""
    steps = min(remaining_steps - 1, horizon_cap)
    cands = [u for u in neighbors(state.grid, state.current) if u not in state.visited]
    if not cands:
        free = [v for v in state.grid.views() if v not in state.visited]
        scores = [state.g[state.grid.index(v)] for v in free]
    else:
        free = cands
        scores = [max(score_trajectory(state, t) for t in enumerate_paths(state.grid, u, steps)) for u in cands]
    best = max(scores)
    tol = TIE_RTOL * max(1.0, abs(best))
    return next(v for v, s in zip(free, scores) if s >= best - tol)


def random_state(rng, predictor, n_visited):
    flat = rng.choice(G.n_views, n_visited, replace=False)
    state = new_episode(G)
    for i in flat:
        state = update_costs_cell(state, G.view(int(i)), int(rng.integers(predictor.h_hat.shape[0])), predictor)
    return state


@pytest.fixture(scope="module")
def predictor(world):
    return fit_quality_predictor(world, np.random.default_rng(8), samples_per_cell=10)


def test_nbv_double_loop(world):
    policy = fit_nbv_policy(world)
    targets = dict(build_nbv_targets(world))
    for c in range(world.num_classes):
        for v in G.views()[::7]:
            obs_v = Observation(world.signature(c, v), v)
            best = None
            for u in G.views():
                if u == v:
                    continue
                p = pair_posterior(world, make_pair(G, obs_v, Observation(world.signature(c, u), u)))[c]
                key = (-p, relative_pose(G, v, u))
                if best is None or key < best:
                    best = key
            assert policy.best_pose(c, v) == best[1]
            assert targets[(c, v)] == best[1]


def test_nbv_single_informative_view():
    u0 = ViewIndex(4, 2)
    amb = np.ones(G.n_views)
    amb[G.index(u0)] = 0.0
    w = gen_world(1, 2, G, 3, 1.0, amb)
    policy = fit_nbv_policy(w)
    for c in range(2):
        for v in G.views():
            if v != u0:
                assert policy.best_pose(c, v) == relative_pose(G, v, u0)


def test_nbv_fully_ambiguous_tie_break():
    w = gen_world(1, 3, G, 2, 1.0, 1.0)
    policy = fit_nbv_policy(w)
    for v in (ViewIndex(0, 0), ViewIndex(5, 2), ViewIndex(11, 4)):
        smallest = min(relative_pose(G, v, u) for u in G.views() if u != v)
        for c in range(3):
            assert policy.best_pose(c, v) == smallest


def test_nbv_next_rules(world):
    policy = fit_nbv_policy(world)
    v = ViewIndex(3, 2)
    obs = Observation(world.signature(1, v), v)
    assert policy.dispatch(obs) == 1
    best = G.view(int(policy.order[1, G.index(v), 0]))
    assert nbv_next(policy, obs, "global", {v}) == best
    nxt = nbv_next(policy, obs, "global", {v, best})
    assert nxt not in {v, best}
    adj = nbv_next(policy, obs, "adjacent", {v})
    assert adj in neighbors(G, v)
    # every neighbour visited: fall back to the best unvisited view anywhere
    seen = {v, *neighbors(G, v)}
    fb = nbv_next(policy, obs, "adjacent", seen)
    assert fb not in seen
    assert fb == next(G.view(int(t)) for t in policy.order[1, G.index(v)] if G.view(int(t)) not in seen)
    with pytest.raises(ContractViolation):
        nbv_next(policy, obs, "global", set())
    with pytest.raises(EpisodeComplete):
        nbv_next_cell(policy, 0, v, "global", set(G.views()))


def test_nbv_never_revisits(world):
    policy = fit_nbv_policy(world)
    rng = np.random.default_rng(4)
    for mode in ("global", "adjacent"):
        visited = [G.view(int(rng.integers(60)))]
        while len(visited) < 60:
            nxt = nbv_next_cell(policy, int(rng.integers(4)), visited[-1], mode, visited)
            assert nxt not in visited
            visited.append(nxt)


def test_nbv_roundtrip(world, tmp_path):
    policy = fit_nbv_policy(world)
    save_nbv_policy(policy, tmp_path / "p.csv", tmp_path / "r.csv")
    back = load_nbv_policy(tmp_path / "p.csv", tmp_path / "r.csv", G, world.signatures)
    np.testing.assert_array_equal(back.order, policy.order)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "class,azimuth,elevation,best_d_azimuth,best_d_elevation"


def test_nbv_from_scores_double_loop(train_table):
    policy = nbv_policy_from_scores(train_table)
    c = int(train_table.true_class[0])
    rows = np.flatnonzero(train_table.true_class == c)
    s, t = 7, 40
    expect = np.mean([softmax(train_table.scores[r, s] + train_table.scores[r, t])[c] for r in rows])
    assert policy.scores[c, s, t] == pytest.approx(expect, rel=1e-12)


def test_dispatch_cells(world):
    feats = world.signatures[[2, 0]]
    np.testing.assert_array_equal(dispatch_cells(world.signatures, feats), [[2] * 60, [0] * 60])


def test_quality_monte_carlo(world):
    rng = np.random.default_rng(12)
    n_fit = 40
    pred = fit_quality_predictor(world, rng, samples_per_cell=n_fit)
    c, v, u = 1, 17, 33
    feats = sample_objects(world, np.full(4000, c), np.random.default_rng(99))
    ll = world.loglik_table(feats)
    p = softmax(ll[:, v] + ll[:, u])[:, c]
    ce = -np.log(np.maximum(p, PROB_FLOOR))
    se = ce.std(ddof=1) * math.sqrt(1 / n_fit + 1 / len(ce))
    assert abs(pred.h_hat[c, v, u] - ce.mean()) <= 3 * se


def test_quality_extremes():
    clean = gen_world(2, 3, G, 4, 1e-6, 0.0)
    assert fit_quality_predictor(clean, np.random.default_rng(0), 3).h_hat.max() < 1e-9
    vague = gen_world(2, 3, G, 4, 1.0, 1.0)
    np.testing.assert_allclose(fit_quality_predictor(vague, np.random.default_rng(0), 3).h_hat, math.log(3),
                               rtol=1e-12)


def test_quality_bounds_and_roundtrip(predictor, world, tmp_path):
    h = predictor.h_hat
    assert np.all(h >= 0) and np.all(h <= -math.log(PROB_FLOOR))
    save_quality_predictor(predictor, tmp_path / "q.csv")
    back = load_quality_predictor(tmp_path / "q.csv", G, world.signatures)
    np.testing.assert_array_equal(back.h_hat, h)
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == \
        "class,azimuth,elevation,target_azimuth,target_elevation,h_hat"


def test_quality_from_scores(train_table):
    pred = quality_predictor_from_scores(train_table)
    rows = np.flatnonzero(train_table.true_class == 2)
    ce = [-math.log(softmax(train_table.scores[r, 3] + train_table.scores[r, 50])[2]) for r in rows]
    assert pred.h_hat[2, 3, 50] == pytest.approx(np.mean(ce), rel=1e-12)


def test_costs_incremental(world, predictor):
    rng = np.random.default_rng(5)
    feats = sample_objects(world, [3], rng)[0]
    state = new_episode(G)
    order = rng.choice(60, 12, replace=False)
    for step, i in enumerate(order):
        v = G.view(int(i))
        prev = state
        state = update_costs(state, Observation(feats[i], v), predictor)
        scratch = recompute_costs(G, state.visited, state.cells, predictor)
        np.testing.assert_allclose(state.g, scratch, rtol=0, atol=1e-12)
        if step == 0:
            np.testing.assert_array_equal(state.g, predictor.quality(state.cells[0], v))
        else:
            np.testing.assert_array_equal(state.g, prev.g + predictor.quality(state.cells[-1], v))
    with pytest.raises(ContractViolation):
        update_costs(state, Observation(feats[order[0]], G.view(int(order[0]))), predictor)


def test_score_trajectory(world, predictor):
    state = random_state(np.random.default_rng(6), predictor, 5)
    inside = tuple(state.visited)
    assert score_trajectory(state, inside) == 0.0
    u = next(v for v in G.views() if v not in state.visited)
    w = next(v for v in neighbors(G, u) if v not in state.visited)
    once = score_trajectory(state, (u, w))
    assert score_trajectory(state, (u, w, u)) == once
    assert once == math.fsum([state.g[G.index(u)], state.g[G.index(w)]])


def test_optimised_one_step_is_greedy(predictor):
    rng = np.random.default_rng(7)
    for _ in range(20):
        state = random_state(rng, predictor, int(rng.integers(1, 10)))
        cands = [u for u in neighbors(G, state.current) if u not in state.visited]
        if not cands:
            continue
        best = max(cands, key=lambda u: (state.g[G.index(u)], [-x for x in u]))
        assert optimised_next(state, 1) == best


def test_optimised_ties_lexicographic():
    state = EpisodeState(G, (ViewIndex(5, 2),), (0,), np.ones(G.n_views))
    assert optimised_next(state, 3) == min(neighbors(G, ViewIndex(5, 2)))


def test_optimised_fallback_when_boxed_in():
    centre = ViewIndex(5, 2)
    visited = (*neighbors(G, centre), centre)
    g = np.zeros(G.n_views)
    g[G.index(ViewIndex(0, 0))] = 0.5
    g[G.index(ViewIndex(9, 4))] = 0.9
    state = EpisodeState(G, visited, (0,) * len(visited), g)
    assert optimised_next(state, 4) == ViewIndex(9, 4)


def test_optimised_matches_brute_force(predictor):
    rng = np.random.default_rng(21)
    for k in range(40):
        state = random_state(rng, predictor, int(rng.integers(1, 20)))
        remaining = 1 + k % 4
        assert optimised_next(state, remaining) == brute_force_next(state, remaining)
