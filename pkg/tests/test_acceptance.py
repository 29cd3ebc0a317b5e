"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale pieces
share session fixtures (trained encoder, 1000 walks, held-out benchmark)
from conftest.
"""

import hashlib
import json
import math
import time

import numpy as np

from slatewalk import corpus as corpus_mod
from slatewalk import crs, embedder, evalharness, interactive, seqgen, uttgen


def report(criterion: int, label: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\n[acceptance] criterion {criterion:2d} {status}: {label}{suffix}")
    assert ok, f"criterion {criterion} failed: {label}{suffix}"


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def test_criterion_1_closed_form_solver():
    """Solver objective >= dense grid sweep - 1e-6 on 1000 random triples."""
    start = time.perf_counter()
    n_grid = 10**6
    theta = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rng = np.random.default_rng(0)
    worst_gap = -np.inf
    worst_norm = 0.0
    for trial in range(1000):
        d = 3 if trial % 2 == 0 else 32
        r, z, r_star = (unit(rng.normal(size=d)) for _ in range(3))
        sol = seqgen.solve_weights(r, z, r_star)
        combo = sol.alpha * r + sol.beta * z
        worst_norm = max(worst_norm, abs(float(np.linalg.norm(combo)) - 1.0))
        objective = float(combo @ r_star)
        q = float(r @ z)
        e2 = unit(z - q * r)
        grid_best = float(np.max(float(r @ r_star) * cos_t +
                                 float(e2 @ r_star) * sin_t))
        worst_gap = max(worst_gap, grid_best - objective)
    elapsed = time.perf_counter() - start
    report(1, "closed-form solver matches grid oracle",
           worst_gap <= 1e-6 and worst_norm <= 1e-6 and elapsed < 60.0,
           f"worst gap {worst_gap:.2e}, worst norm err {worst_norm:.2e}, "
           f"{elapsed:.1f}s")


def test_criterion_2_walk_monotonicity(desk_walks):
    """Target similarity never decreases along any of 1000 six-turn walks."""
    steps = violations = 0
    for walk in desk_walks:
        sims = [float(u @ walk.target_vec) for u in walk.user_vecs]
        for before, after in zip(sims, sims[1:]):
            steps += 1
            if after < before - 1e-9:
                violations += 1
    report(2, "walk monotonicity", violations == 0 and steps == 6000,
           f"{steps} steps, {violations} violations")


def test_criterion_3_slate_routing(desk_walks, desk_corpus, desk_stack):
    """Positive weight -> collection slate and "more"; otherwise the item
    neighborhood and "less"; first turn always "init"."""
    _, _, item_index = desk_stack
    bad = 0
    for walk in desk_walks:
        for t_no, turn in enumerate(walk.turns, start=1):
            coll = desk_corpus.collections[turn.source_collection]
            expected_ptype = "init" if t_no == 1 else (
                "more" if turn.beta > 0 else "less")
            if turn.beta > 0:
                ok = turn.slate == tuple(coll.item_ids)
            else:
                nn = tuple(h[0] for h in embedder.nearest(
                    item_index, walk.user_vecs[t_no], 10))
                ok = turn.slate == nn
            if not ok or turn.ptype != expected_ptype:
                bad += 1
    report(3, "slate and preference-type routing", bad == 0,
           f"{bad} bad turns of 6000")


def test_criterion_4_filters_bit_exact(tiny_corpus):
    from slatewalk.corpus import Corpus, Item, ItemCollection
    from slatewalk.seqgen import SlateTurn
    from slatewalk.uttgen import (FilterRules, assemble_conversation,
                                  filter_conversation)

    rules = FilterRules(blocklist=frozenset({"zorblat"}))
    seq = [SlateTurn(slate=("i1",), ptype="init", source_collection="z1",
                     alpha=0.1, beta=0.1)]

    def kept(utterance, corpus_obj=tiny_corpus, sequence=seq):
        conv = assemble_conversation("c", sequence, [utterance], corpus_obj,
                                     "templated")
        return len(filter_conversation(conv, rules).turns) == 1

    checks = []
    checks.append(not kept("x" * 451))           # length 451 dropped
    checks.append(kept("x" * 450))               # length 450 kept
    checks.append(not kept("well zorblat then"))  # blocklisted term dropped

    artist_corpus = Corpus(
        items={"i1": Item(id="i1", title="song", artists=("Lady Gaga",))},
        collections={"a1": ItemCollection(id="a1", title="Lady Gaga",
                                          description="", ctype="artist",
                                          item_ids=("i1",))},
        types=frozenset({"artist"}),
    )
    artist_seq = [SlateTurn(slate=("i1",), ptype="more",
                            source_collection="a1", alpha=0.1, beta=0.1)]
    checks.append(not kept("play something good", artist_corpus, artist_seq))

    sys_resp = uttgen.render_system_response(
        "init", "theme", uttgen.collection_description(
            tiny_corpus.collections["z1"]))
    checks.append(not kept("hm " + sys_resp[:51] + " hm"))  # 51-char overlap
    checks.append(kept("hm " + sys_resp[:50] + " hm"))      # 50-char overlap
    report(4, "all six filter fixtures", all(checks),
           f"results {['ok' if c else 'BAD' for c in checks]}")


def test_criterion_5_gradient_check():
    """Contrastive gradients vs central differences, d=8, 2-example batch."""
    params = embedder.init_params(8, seed=2)
    q_seqs = [np.array([4, 8, 15]), np.array([16, 23])]
    x_seqs = [np.array([42, 8]), np.array([7])]
    tau = 0.05
    _, row_ids, row_grads = embedder.contrastive_loss_grad(params, q_seqs,
                                                           x_seqs, tau)
    eps = 1e-6
    worst_rel = 0.0
    for i, row in enumerate(row_ids):
        for col in range(8):
            original = params.table[int(row), col]
            params.table[int(row), col] = original + eps
            up = embedder.contrastive_loss(params, q_seqs, x_seqs, tau)
            params.table[int(row), col] = original - eps
            down = embedder.contrastive_loss(params, q_seqs, x_seqs, tau)
            params.table[int(row), col] = original
            numeric = (up - down) / (2 * eps)
            analytic = row_grads[i, col]
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
            worst_rel = max(worst_rel, rel)
    report(5, "gradient matches central finite differences", worst_rel < 1e-4,
           f"worst relative error {worst_rel:.2e}")


def _python_dot_ranking(ids, vectors, q):
    scored = []
    for ident, row in zip(ids, vectors):
        scored.append((ident, sum(float(a) * float(b) for a, b in zip(row, q))))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [s[0] for s in scored]


def _bm25_direct(titles, query, k1=1.2, b=0.75):
    docs = [t.lower().split() for t in titles]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    terms = query.lower().split()
    df = {t: sum(1 for d in docs if t in d) for t in terms}
    scores = []
    for idx, doc in enumerate(docs):
        s = 0.0
        for t in terms:
            if df[t] == 0:
                continue
            idf = max(0.0, math.log((n - df[t] + 0.5) / (df[t] + 0.5)))
            tf = doc.count(t)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
        scores.append((f"d{idx:04d}", s))
    scores.sort(key=lambda pair: (-pair[1], pair[0]))
    return [s[0] for s in scores]


def test_criterion_6_retrieval_oracles():
    rng = np.random.default_rng(3)
    dense_ok = sparse_ok = 0
    for trial in range(100):
        n = int(rng.integers(5, 1001))
        d = int(rng.integers(3, 24))
        vectors = rng.normal(size=(n, d))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        ids = [f"v{i:04d}" for i in range(n)]
        index = embedder.build_index(ids, vectors)
        q = unit(rng.normal(size=d))
        k = int(rng.integers(1, 20))
        got = [g[0] for g in embedder.nearest(index, q, k)]
        if got == _python_dot_ranking(ids, vectors, q)[: min(k, n)]:
            dense_ok += 1

    words = ["sun", "moon", "rain", "city", "sea", "road", "night", "gold",
             "dust", "wave"]
    for trial in range(100):
        n = int(rng.integers(3, 1001))
        titles = [" ".join(words[i] for i in rng.integers(0, len(words), size=5))
                  for _ in range(n)]
        items = {f"d{i:04d}": corpus_mod.Item(id=f"d{i:04d}", title=t,
                                              artists=())
                 for i, t in enumerate(titles)}
        corp = corpus_mod.Corpus(items=items, collections={}, types=frozenset())
        query = " ".join(words[i] for i in rng.integers(0, len(words), size=3))
        got = [g[0] for g in evalharness.bm25_rank(corp, query)]
        if got == _bm25_direct(titles, query):
            sparse_ok += 1
    report(6, "nearest and bm25 match brute-force oracles exactly",
           dense_ok == 100 and sparse_ok == 100,
           f"dense {dense_ok}/100, bm25 {sparse_ok}/100")


def test_criterion_7_metric_fixtures():
    macro = evalharness.macro_hits([[1, 0], [1, 1, 1]])
    ranked = [f"r{i}" for i in range(20)]
    boundary = (
        evalharness.hits_at_k(ranked, {"r9"}, 10) == 1
        and evalharness.hits_at_k(ranked, {"r10"}, 10) == 0
    )
    report(7, "metric fixtures", macro == 0.75 and boundary,
           f"macro={macro}, boundary={'ok' if boundary else 'bad'}")


def test_criterion_8_desk_scale_end_to_end(desk_corpus, desk_bench, desk_crs):
    """2000 items / 200 theme collections (plus derived artist collections),
    d=32, 5000 template-mode conversations; checkpoint selection on the dev
    half of the held-out benchmark, scoring on the test half."""
    start = time.perf_counter()
    params, item_index_trained, train_seconds = desk_crs
    test_bench = desk_bench[100:]

    crs_score = evalharness.run_eval(
        "crs", test_bench, ks=(100,), corpus=desk_corpus, params=params,
        item_index=item_index_trained).macro[100]
    random_score = evalharness.run_eval(
        "random", test_bench, ks=(100,), corpus=desk_corpus, seed=1).macro[100]
    untrained_score = evalharness.run_eval(
        "untrained-encoder", test_bench, ks=(100,), corpus=desk_corpus,
        seed=2).macro[100]
    elapsed = train_seconds + (time.perf_counter() - start)
    ok = (crs_score >= 2.0 * random_score and crs_score > untrained_score
          and elapsed < 1800.0)
    report(8, "desk-scale end-to-end dominance", ok,
           f"crs {crs_score:.3f} vs random {random_score:.3f} "
           f"(x{crs_score / max(random_score, 1e-9):.2f}) vs untrained "
           f"{untrained_score:.3f}, {elapsed:.0f}s incl. training")


def test_criterion_9_ablation_direction(desk_corpus, desk_stack, desk_bench):
    _, coll_index, item_index = desk_stack
    config = crs.CrsTrainConfig(dim=32, checkpoints=(400, 800))
    result = evalharness.run_ablation(
        desk_corpus, coll_index, item_index, seqgen.WalkConfig(), budget=800,
        train_config=config, bench=desk_bench, seeds=(0, 1, 2),
    )
    full = result.medians["full"]
    rand_seq = result.medians["random-sequence"]
    scrambled = result.medians["template-utterance"]
    ok = full >= rand_seq and full >= scrambled
    report(9, "ablation direction (3-seed medians)", ok,
           f"full {full:.3f} >= random-sequence {rand_seq:.3f} and "
           f">= scrambled-description control {scrambled:.3f}")


def test_criterion_10_scaling_direction(desk_corpus, desk_stack, desk_bench):
    _, coll_index, item_index = desk_stack
    config = crs.CrsTrainConfig(dim=32, checkpoints=(400, 800))
    result = evalharness.run_scaling_sweep(
        desk_corpus, coll_index, item_index, seqgen.WalkConfig(),
        sizes=(500, 8000), train_config=config, bench=desk_bench,
        seeds=(0, 1, 2),
    )
    ok = result.medians[8000] > result.medians[500]
    report(10, "scaling direction (3-seed medians)", ok,
           f"hits@100 at 8000 convs {result.medians[8000]:.3f} > at 500 "
           f"{result.medians[500]:.3f}")


def test_criterion_11_interleaving_and_calibration():
    rng = np.random.default_rng(3)
    pool = [f"i{j:02d}" for j in range(20)]
    prop_ok = 0
    for _ in range(1000):
        a = list(rng.permutation(pool))[: int(rng.integers(0, 12))]
        b = list(rng.permutation(pool))[: int(rng.integers(0, 12))]
        out = interactive.team_draft_interleave(a, b, int(rng.integers(1, 15)),
                                                rng)
        picks_a = [i for i, t in zip(out.items, out.teams) if t == "A"]
        picks_b = [i for i, t in zip(out.items, out.teams) if t == "B"]
        if (len(set(out.items)) == len(out.items)
                and abs(out.teams.count("A") - out.teams.count("B")) <= 1
                and picks_a == [x for x in a if x in picks_a]
                and picks_b == [x for x in b if x in picks_b]):
            prop_ok += 1

    sim_rng = np.random.default_rng(7)
    rejections = 0
    for sim in range(1000):
        hits_a = sim_rng.integers(0, 2, size=300)
        hits_b = sim_rng.integers(0, 2, size=300)
        if interactive.significance(hits_a, hits_b, resamples=4000,
                                    seed=sim) < 0.05:
            rejections += 1
    rate = rejections / 1000.0
    ok = prop_ok == 1000 and 0.03 <= rate <= 0.07
    report(11, "interleaving properties and permutation-test calibration",
           ok, f"properties {prop_ok}/1000, null rejection rate {rate:.3f}")


def test_criterion_12_determinism(small_corpus, tmp_path):
    checks = {}

    paths = []
    for run in range(2):
        p = tmp_path / f"corpus{run}.jsonl"
        corpus_mod.save_corpus(corpus_mod.make_fixture_corpus(500, 50, seed=9), p)
        paths.append(p.read_bytes())
    checks["fixture-corpus"] = paths[0] == paths[1]

    cfg = embedder.TrainConfig(dim=8, steps=60, batch_size=16, seed=5)
    tables = []
    for run in range(2):
        params = embedder.train_dual_encoder(small_corpus, cfg)
        p = tmp_path / f"params{run}.bin"
        embedder.save_params(params, p)
        tables.append(p.read_bytes())
    checks["encoder-training"] = tables[0] == tables[1]

    params = embedder.load_params(tmp_path / "params0.bin")
    coll_index = embedder.index_corpus_collections(params, small_corpus)
    item_index = embedder.index_corpus_items(params, small_corpus)
    digests = []
    for run in range(2):
        p = tmp_path / f"data{run}.jsonl"
        uttgen.save_dataset(
            uttgen.generate_dataset(small_corpus, coll_index, item_index,
                                    seqgen.WalkConfig(), "template",
                                    np.random.default_rng(13), 40), p)
        digests.append(hashlib.sha256(p.read_bytes()).hexdigest())
    checks["dataset-generation"] = digests[0] == digests[1]

    convs = list(uttgen.generate_dataset(small_corpus, coll_index, item_index,
                                         seqgen.WalkConfig(), "template",
                                         np.random.default_rng(13), 40))
    bench = evalharness.benchmark_from_conversations(convs[:15], small_corpus)
    crs_cfg = crs.CrsTrainConfig(dim=8, batch_size=16, checkpoints=(30,), seed=4)
    crs_tables = []
    for run in range(2):
        trained, _ = crs.train_crs(convs[15:], small_corpus, crs_cfg, bench)
        crs_tables.append(trained.table.tobytes())
    checks["crs-training"] = crs_tables[0] == crs_tables[1]

    reports = []
    for run in range(2):
        rep = evalharness.run_eval("bm25", bench, ks=(10,), corpus=small_corpus)
        reports.append(json.dumps(rep.to_dict(), sort_keys=True))
    checks["evaluation-report"] = reports[0] == reports[1]

    slates = []
    for run in range(2):
        out = interactive.team_draft_interleave(
            ["a", "b", "c", "d"], ["c", "d", "e", "f"], 4,
            np.random.default_rng(2))
        slates.append((out.items, out.teams))
    checks["interleaving"] = slates[0] == slates[1]

    p_values = [interactive.significance([1, 0, 1, 1, 0], [0, 0, 1, 0, 1],
                                         resamples=5000, seed=11)
                for _ in range(2)]
    checks["significance"] = p_values[0] == p_values[1]

    report(12, "byte-identical artifacts for identical seeds and configs",
           all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'DIFFERS'}" for k, v in checks.items()))
