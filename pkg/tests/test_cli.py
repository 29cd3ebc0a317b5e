import json

import pytest

from slatewalk.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny corpus plus trained artifacts shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_path = root / "corpus.jsonl"
    assert main(["corpus", "fixture", "--items", "120", "--collections", "12",
                 "--seed", "5", "--derive-artists", str(corpus_path)]) == 0
    params_path = root / "params.bin"
    assert main(["embed", "train", "--corpus", str(corpus_path),
                 "--out", str(params_path), "--dim", "8", "--steps", "40",
                 "--batch", "16"]) == 0
    return root, corpus_path, params_path


def test_corpus_validate_ok(workdir, capsys):
    _, corpus_path, _ = workdir
    assert main(["corpus", "validate", str(corpus_path)]) == 0
    assert "ok:" in capsys.readouterr().out


def test_corpus_validate_rejects_garbage(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n", encoding="utf-8")
    assert main(["corpus", "validate", str(bad)]) == 1
    assert "invalid" in capsys.readouterr().err


def test_corpus_derive_artists_command(workdir, tmp_path):
    _, corpus_path, _ = workdir
    out = tmp_path / "derived.jsonl"
    assert main(["corpus", "derive-artists", str(corpus_path), str(out)]) == 0
    assert out.exists()


def test_embed_index_and_query(workdir, tmp_path, capsys):
    root, corpus_path, params_path = workdir
    index_path = tmp_path / "items.bin"
    assert main(["embed", "index", "--corpus", str(corpus_path),
                 "--params", str(params_path), "--kind", "item",
                 "--out", str(index_path)]) == 0
    assert main(["embed", "query", "--params", str(params_path),
                 "--index", str(index_path), "--text", "upbeat road",
                 "--k", "3"]) == 0
    out = capsys.readouterr().out
    assert len([l for l in out.splitlines() if "\t" in l]) == 3


def test_seqgen_run(workdir, tmp_path):
    _, corpus_path, params_path = workdir
    out = tmp_path / "seqs.jsonl"
    assert main(["seqgen", "run", "--corpus", str(corpus_path),
                 "--params", str(params_path), "--turns", "4",
                 "--count", "5", "--seed", "2", "--out", str(out)]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 5
    assert all(len(rec["turns"]) == 4 for rec in lines)
    assert all("alpha" in t for rec in lines for t in rec["turns"])


def test_uttgen_run_with_filter_rules(workdir, tmp_path, capsys):
    _, corpus_path, params_path = workdir
    rules_path = tmp_path / "rules.json"
    rules_path.write_text(json.dumps({"blocklist": ["darn"]}), encoding="utf-8")
    out = tmp_path / "data.jsonl"
    assert main(["uttgen", "run", "--corpus", str(corpus_path),
                 "--params", str(params_path), "--mode", "template",
                 "--filters", str(rules_path), "--count", "8",
                 "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 8
    stats = json.loads("".join(capsys.readouterr().out.split("\n", 1)[1]))
    assert stats["conversations_generated"] == 8


def test_uttgen_inpaint_requires_endpoint(workdir, tmp_path, capsys):
    _, corpus_path, params_path = workdir
    assert main(["uttgen", "run", "--corpus", str(corpus_path),
                 "--params", str(params_path), "--mode", "inpaint",
                 "--count", "1", "--out", str(tmp_path / "x.jsonl")]) == 1
    assert "endpoint" in capsys.readouterr().err


def test_crs_train_and_eval_run(workdir, tmp_path, capsys):
    root, corpus_path, params_path = workdir
    data_path = tmp_path / "train.jsonl"
    assert main(["uttgen", "run", "--corpus", str(corpus_path),
                 "--params", str(params_path), "--count", "30",
                 "--seed", "4", "--out", str(data_path)]) == 0

    # Development benchmark from a disjoint generation seed.
    from slatewalk import corpus as corpus_mod
    from slatewalk import embedder, evalharness, seqgen, uttgen
    import numpy as np

    corp = corpus_mod.load_corpus(corpus_path)
    params = embedder.load_params(params_path)
    coll_index = embedder.index_corpus_collections(params, corp)
    item_index = embedder.index_corpus_items(params, corp)
    dev = evalharness.benchmark_from_conversations(
        list(uttgen.generate_dataset(corp, coll_index, item_index,
                                     seqgen.WalkConfig(), "template",
                                     np.random.default_rng(50), 10)), corp)
    dev_path = tmp_path / "dev.jsonl"
    evalharness.save_benchmark(dev, dev_path)

    model_path = tmp_path / "crs.bin"
    assert main(["crs", "train", "--corpus", str(corpus_path),
                 "--data", str(data_path), "--dev", str(dev_path),
                 "--checkpoints", "20,40", "--dim", "8", "--batch", "16",
                 "--out", str(model_path)]) == 0
    assert model_path.exists()

    index_path = tmp_path / "items.bin"
    assert main(["embed", "index", "--corpus", str(corpus_path),
                 "--params", str(model_path), "--kind", "item",
                 "--out", str(index_path)]) == 0
    report_path = tmp_path / "report.json"
    assert main(["eval", "run", "--system", "crs", "--bench", str(dev_path),
                 "--corpus", str(corpus_path), "--params", str(model_path),
                 "--index", str(index_path), "--k", "5,10",
                 "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert set(report["macro"]) == {"5", "10"}

    capsys.readouterr()
    assert main(["crs", "retrieve", "--corpus", str(corpus_path),
                 "--params", str(model_path), "--index", str(index_path),
                 "--query", "something upbeat", "--k", "4"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_eval_run_bm25_needs_no_params(workdir, tmp_path):
    _, corpus_path, params_path = workdir
    from slatewalk import corpus as corpus_mod
    from slatewalk import embedder, evalharness, seqgen, uttgen
    import numpy as np

    corp = corpus_mod.load_corpus(corpus_path)
    params = embedder.load_params(params_path)
    coll_index = embedder.index_corpus_collections(params, corp)
    item_index = embedder.index_corpus_items(params, corp)
    bench = evalharness.benchmark_from_conversations(
        list(uttgen.generate_dataset(corp, coll_index, item_index,
                                     seqgen.WalkConfig(), "template",
                                     np.random.default_rng(60), 8)), corp)
    bench_path = tmp_path / "bench.jsonl"
    evalharness.save_benchmark(bench, bench_path)
    assert main(["eval", "run", "--system", "bm25", "--bench", str(bench_path),
                 "--corpus", str(corpus_path), "--k", "10"]) == 0
