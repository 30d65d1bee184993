"""End-to-end command behavior: files, exit codes, manifests, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from convimpact import data as d
from convimpact import model as m
from convimpact.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """A small synthetic corpus shared by the CLI tests."""
    root = tmp_path_factory.mktemp("synth")
    code = run(
        "synth",
        "--out-data", root / "data.jsonl",
        "--out-embeddings", root / "emb.ueb",
        "--out-truth", root / "truth.jsonl",
        "--n-conversations", 120,
        "--min-len", 4, "--max-len", 8,
        "--dim", 8, "--prototypes", 4,
        "--seed", 5,
    )
    assert code == 0
    return root


@pytest.mark.parametrize(
    "command",
    ["synth", "train", "score", "eval", "pairs", "judge",
     "validate-embeddings", "import-convai"],
)
def test_every_subcommand_documents_itself(command, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main([command, "--help"])
    assert excinfo.value.code == 0
    assert "--" in capsys.readouterr().out or command == "validate-embeddings"


def test_synth_writes_three_files_and_manifest(synth_dir):
    for name in ("data.jsonl", "emb.ueb", "truth.jsonl", "data.jsonl.manifest.json"):
        assert (synth_dir / name).exists(), name
    manifest = json.loads((synth_dir / "data.jsonl.manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 5


def test_synth_is_byte_deterministic(tmp_path):
    outputs = []
    for attempt in ("x", "y"):
        base = tmp_path / attempt
        base.mkdir()
        assert run(
            "synth",
            "--out-data", base / "d.jsonl",
            "--out-embeddings", base / "e.ueb",
            "--out-truth", base / "t.jsonl",
            "--n-conversations", 30,
            "--seed", 7,
        ) == 0
        outputs.append(
            tuple((base / n).read_bytes() for n in ("d.jsonl", "e.ueb", "t.jsonl"))
        )
    assert outputs[0] == outputs[1]


def test_synth_zero_noise_ratings_match_truth(tmp_path):
    assert run(
        "synth",
        "--out-data", tmp_path / "d.jsonl",
        "--out-embeddings", tmp_path / "e.ueb",
        "--out-truth", tmp_path / "t.jsonl",
        "--n-conversations", 20,
        "--noise", 0,
        "--seed", 2,
    ) == 0
    truth = d.load_truth(tmp_path / "t.jsonl")
    for conv in d.load_conversations(tmp_path / "d.jsonl"):
        planted = [
            truth[conv.utterance_id(i)].impact for i in range(len(conv.utterances))
        ]
        assert conv.rating == pytest.approx(float(np.mean(planted)), abs=1e-9)


def test_validate_embeddings_happy_and_sad_paths(synth_dir, tmp_path, capsys):
    assert run("validate-embeddings", synth_dir / "emb.ueb") == 0
    assert "dim 8" in capsys.readouterr().out
    bad = tmp_path / "bad.ueb"
    bad.write_bytes(b"nope")
    assert run("validate-embeddings", bad) == 2


def test_train_score_eval_pipeline(synth_dir, tmp_path, capsys):
    model_path = tmp_path / "model.json"
    config = tmp_path / "train.toml"
    config.write_text("epochs = 6\nlearning_rate = 0.001\nbatch_size = 16\n")
    code = run(
        "train",
        "--variant", "ara",
        "--data", synth_dir / "data.jsonl",
        "--dev", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--config", config,
        "--out", model_path,
        "--seed", 3,
    )
    assert code == 0
    assert model_path.exists()
    assert (tmp_path / "model.json.history.json").exists()
    assert (tmp_path / "model.json.manifest.json").exists()
    capsys.readouterr()

    report_path = tmp_path / "scores.jsonl"
    assert run(
        "score",
        "--model", model_path,
        "--data", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--out", report_path,
    ) == 0
    capsys.readouterr()

    reports = m.read_reports(report_path)
    assert len(reports) == 120
    for rep in reports:
        rs, ws = [], []
        for row in rep.rows:
            assert row.s == row.r * row.w  # exact product in the report
            rs.append(row.r)
            ws.append(row.w)
        recomputed = float(np.dot(rs, ws) / np.sum(ws))
        assert rep.q == pytest.approx(recomputed, abs=1e-9)

    metrics_path = tmp_path / "metrics.json"
    assert run(
        "eval",
        "--scores", report_path,
        "--data", synth_dir / "data.jsonl",
        "--variant", "ara",
        "--out", metrics_path,
    ) == 0
    out = capsys.readouterr().out
    metrics = json.loads(metrics_path.read_text())
    assert "c_index" in metrics["per_seed"][0]
    assert 0.0 <= metrics["per_seed"][0]["c_index"] <= 1.0
    assert "pearson" in metrics["per_seed"][0]
    assert "c_index" in out


def test_score_constant_model_emits_bias(synth_dir, tmp_path):
    params = m.ModelParams(
        "ara", 8, 200, 0,
        {
            "rating_w": np.zeros((8, 1)),
            "rating_b": np.array([[3.25]]),
            "weight_w": np.zeros((8, 1)),
            "weight_b": np.zeros((1, 1)),
        },
    )
    model_path = tmp_path / "const.json"
    m.save_params(params, model_path)
    report_path = tmp_path / "scores.jsonl"
    assert run(
        "score",
        "--model", model_path,
        "--data", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--out", report_path,
    ) == 0
    for rep in m.read_reports(report_path):
        assert all(row.r == 3.25 for row in rep.rows)
        assert all(row.w == 0.5 for row in rep.rows)


def test_train_missing_embeddings_exits_2(synth_dir, tmp_path, capsys):
    code = run(
        "train",
        "--variant", "ara",
        "--data", synth_dir / "data.jsonl",
        "--embeddings", tmp_path / "missing.ueb",
        "--out", tmp_path / "m.json",
    )
    assert code == 2
    assert "missing.ueb" in capsys.readouterr().err


def test_train_init_dimension_mismatch_exits_2(synth_dir, tmp_path, capsys):
    wrong = m.initialize_params("ara", 5, 200, seed=0)
    init_path = tmp_path / "wrong.json"
    m.save_params(wrong, init_path)
    config = tmp_path / "cfg.toml"
    config.write_text("epochs = 1\n")
    code = run(
        "train",
        "--variant", "ara",
        "--data", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--config", config,
        "--init", init_path,
        "--out", tmp_path / "m.json",
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "embed_dim" in err


def test_eval_fit_mode_reports_per_seed_and_mean(synth_dir, tmp_path, capsys):
    config = tmp_path / "cfg.toml"
    config.write_text("epochs = 2\nbatch_size = 32\nlearning_rate = 0.001\n")
    metrics_path = tmp_path / "metrics.json"
    code = run(
        "eval",
        "--variant", "ara",
        "--train", synth_dir / "data.jsonl",
        "--dev", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--config", config,
        "--seeds", "1,2,3",
        "--out", metrics_path,
    )
    assert code == 0
    capsys.readouterr()
    metrics = json.loads(metrics_path.read_text())
    assert metrics["seeds"] == [1, 2, 3]
    assert len(metrics["per_seed"]) == 3
    assert "pearson_dev" in metrics["mean"]
    assert "c_index" in metrics["mean"]


def test_eval_without_labels_exits_2(synth_dir, tmp_path, capsys):
    # strip the labels, keeping scores intact
    conversations = d.load_conversations(synth_dir / "data.jsonl")
    for conv in conversations:
        for u in conv.utterances:
            u.label = None
    unlabeled = tmp_path / "unlabeled.jsonl"
    d.write_conversations(unlabeled, conversations)
    reports = [
        m.ImpactReport(c.id, 3.0, [m.UtteranceRow(i, 1.0, 0.5, 0.5) for i in range(len(c.utterances))])
        for c in conversations
    ]
    scores = tmp_path / "scores.jsonl"
    m.write_reports(scores, reports)
    assert run("eval", "--scores", scores, "--data", unlabeled) == 2
    assert "labeled" in capsys.readouterr().err


def test_pairs_and_judge_round_trip(synth_dir, tmp_path, capsys):
    truth = d.load_truth(synth_dir / "truth.jsonl")
    conversations = d.load_conversations(synth_dir / "data.jsonl")
    # score utterances by planted impact: a perfect model
    reports = [
        m.ImpactReport(
            c.id, c.rating,
            [
                m.UtteranceRow(i, truth[c.utterance_id(i)].impact, 1.0,
                               truth[c.utterance_id(i)].impact)
                for i in range(len(c.utterances))
            ],
        )
        for c in conversations
    ]
    scores = tmp_path / "scores.jsonl"
    m.write_reports(scores, reports)

    pairs_path = tmp_path / "pairs.jsonl"
    key_path = tmp_path / "key.jsonl"
    assert run(
        "pairs",
        "--scores", scores,
        "--data", synth_dir / "data.jsonl",
        "--embeddings", synth_dir / "emb.ueb",
        "--n", 5, "--k-fraction", 0.2, "--seed", 1,
        "--out-pairs", pairs_path,
        "--out-key", key_path,
    ) == 0
    capsys.readouterr()
    assert pairs_path.exists() and key_path.exists()
    assert (str(pairs_path) + ".manifest.json") in [
        str(p) for p in tmp_path.iterdir() if p.name.endswith("manifest.json")
    ] or (tmp_path / "pairs.jsonl.manifest.json").exists()

    pairs = [json.loads(line) for line in pairs_path.read_text().splitlines()]
    assert len(pairs) == 5
    key = {
        json.loads(line)["pair_id"]: json.loads(line)
        for line in key_path.read_text().splitlines()
    }

    # annotator 1 agrees everywhere; annotator 2 flips 2 of 5
    j1 = tmp_path / "j1.jsonl"
    j2 = tmp_path / "j2.jsonl"
    with open(j1, "w") as f:
        for pair_id, entry in key.items():
            f.write(json.dumps({"pair_id": pair_id, "choice": entry["low_member"]}) + "\n")
    with open(j2, "w") as f:
        for i, (pair_id, entry) in enumerate(sorted(key.items())):
            choice = entry["low_member"] if i >= 2 else ("a" if entry["low_member"] == "b" else "b")
            f.write(json.dumps({"pair_id": pair_id, "choice": choice}) + "\n")

    report_path = tmp_path / "accuracy.json"
    assert run("judge", "--key", key_path, "--judgments", j1, j2, "--out", report_path) == 0
    report = json.loads(report_path.read_text())
    assert report["per_annotator"][0]["accuracy"] == 1.0
    assert report["per_annotator"][1]["accuracy"] == pytest.approx(0.6)
    assert report["average"] == pytest.approx(0.8)


def test_eval_scope_conversation_restricts_pairs(tmp_path, capsys):
    # A: issue 1 beats non-issues 2 and 2.5 (2 concordant pairs); B: issue 4
    # above non-issue 3 (1 discordant). Per-conversation pooling gives 2/3;
    # the global pool adds cross-conversation pairs and gives 3/6 = 0.5.
    conversations = [
        d.Conversation("A", 3.0, [
            d.Utterance("user", "x", "bad"),
            d.Utterance("system", "y", "good"),
            d.Utterance("user", "z", "good"),
        ]),
        d.Conversation("B", 3.0, [
            d.Utterance("user", "x", "bad"), d.Utterance("system", "y", "good"),
        ]),
    ]
    data_path = tmp_path / "d.jsonl"
    d.write_conversations(data_path, conversations)
    reports = [
        m.ImpactReport("A", 3.0, [
            m.UtteranceRow(0, 1, 1, 1.0),
            m.UtteranceRow(1, 2, 1, 2.0),
            m.UtteranceRow(2, 2.5, 1, 2.5),
        ]),
        m.ImpactReport("B", 3.0, [m.UtteranceRow(0, 4, 1, 4.0), m.UtteranceRow(1, 3, 1, 3.0)]),
    ]
    scores = tmp_path / "s.jsonl"
    m.write_reports(scores, reports)

    results = {}
    for scope in ("global", "conversation"):
        out = tmp_path / f"{scope}.json"
        assert run("eval", "--scores", scores, "--data", data_path,
                   "--scope", scope, "--out", out) == 0
        capsys.readouterr()
        results[scope] = json.loads(out.read_text())["per_seed"][0]["c_index"]
    assert results["conversation"] == pytest.approx(2.0 / 3.0)
    assert results["global"] == pytest.approx(0.5)


def test_judge_average_of_two_annotators(tmp_path):
    # 100 pairs; annotators agree on 77 and 78 -> average 0.775
    key_path = tmp_path / "key.jsonl"
    with open(key_path, "w") as f:
        for i in range(100):
            f.write(
                json.dumps(
                    {
                        "pair_id": f"p{i:03d}",
                        "low_member": "a",
                        "low_utterance_id": f"c:{i}",
                        "high_utterance_id": f"d:{i}",
                    }
                )
                + "\n"
            )
    for path, agree in ((tmp_path / "a1.jsonl", 77), (tmp_path / "a2.jsonl", 78)):
        with open(path, "w") as f:
            for i in range(100):
                choice = "a" if i < agree else "b"
                f.write(json.dumps({"pair_id": f"p{i:03d}", "choice": choice}) + "\n")
    out_path = tmp_path / "acc.json"
    assert run(
        "judge", "--key", key_path,
        "--judgments", tmp_path / "a1.jsonl", tmp_path / "a2.jsonl",
        "--out", out_path,
    ) == 0
    report = json.loads(out_path.read_text())
    assert report["per_annotator"][0]["accuracy"] == pytest.approx(0.77)
    assert report["per_annotator"][1]["accuracy"] == pytest.approx(0.78)
    assert report["average"] == pytest.approx(0.775)


def test_eval_random_scores_sit_near_half(synth_dir, tmp_path, capsys):
    # random utterance scores against the planted labels: the concordance
    # must land inside the binomial concentration band around 0.5
    rng = np.random.default_rng(17)
    conversations = d.load_conversations(synth_dir / "data.jsonl")
    reports = []
    for c in conversations:
        rows = [
            m.UtteranceRow(i, float(rng.random()), 1.0, float(rng.random()))
            for i in range(len(c.utterances))
        ]
        reports.append(m.ImpactReport(c.id, 3.0, rows))
    scores = tmp_path / "random.jsonl"
    m.write_reports(scores, reports)
    out = tmp_path / "metrics.json"
    assert run("eval", "--scores", scores, "--data", synth_dir / "data.jsonl",
               "--out", out) == 0
    capsys.readouterr()
    metrics = json.loads(out.read_text())
    entry = metrics["per_seed"][0]
    n_pairs = metrics["n_issue"] * metrics["n_non_issue"]
    assert n_pairs >= 2000
    assert 0.45 <= entry["c_index"] <= 0.55


def test_import_convai(tmp_path):
    doc = [
        {
            "dialogId": 3,
            "users": [{"id": "h", "userType": "Human"}, {"id": "b", "userType": "Bot"}],
            "thread": [{"userId": "h", "text": "hey", "evaluation": 0}],
            "evaluation": [{"userId": "h", "quality": 5}],
        }
    ]
    src = tmp_path / "convai.json"
    src.write_text(json.dumps(doc))
    out = tmp_path / "out.jsonl"
    assert run("import-convai", "--input", src, "--out", out) == 0
    conversations = d.load_conversations(out)
    assert conversations[0].id == "convai-3"
    assert conversations[0].rating == 5.0
