import json
from pathlib import Path

import pytest

from frontalize.cli import main
from frontalize.dataset import PROTOCOL_POSES, ATTRIBUTES, ILLUMINATIONS, load_manifest, write_manifest

TOY = {"n_identities": 6, "poses": [[0, 0], [45, 0], [-45, 0], [90, 15]], "size": 32, "seed": 1}
CONFIG = {"image_size": 32, "align": False, "batch_size": 4, "epochs": 1, "gen_base": 4, "disc_base": 4, "local_base": 2}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.splitlines(), err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """toygen -> protocol build -> train (1 epoch), shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    (root / "toy.json").write_text(json.dumps(TOY))
    (root / "cfg.json").write_text(json.dumps(CONFIG))
    codes = [
        main(["toygen", "--spec", str(root / "toy.json"), "--out", str(root / "data")]),
        main(["protocol", "build", "--manifest", str(root / "data/manifest.jsonl"), "--train-subjects", "4",
              "--seed", "0", "--out", str(root / "proto")]),
        main(["train", "--protocol", str(root / "proto"), "--config", str(root / "cfg.json"),
              "--checkpoints", str(root / "ck")]),
    ]
    return root, codes


def test_pipeline_smoke(pipeline):
    root, codes = pipeline
    assert codes == [0, 0, 0]
    assert (root / "ck" / "epoch-0001.ckpt").exists()
    assert (root / "ck" / "LATEST").read_text().strip() == "epoch-0001.ckpt"


def test_protocol_prints_counts_and_paths(pipeline, capsys, tmp_path):
    root, _ = pipeline
    code, out, _ = run(capsys, "protocol", "build", "--manifest", root / "data/manifest.jsonl",
                       "--train-subjects", 4, "--seed", 0, "--out", tmp_path)
    assert code == 0
    assert out[:3] == ["train 16", "probes 6", "gallery 2"]
    assert out[3:] == [str(tmp_path / n) for n in ("train.jsonl", "gallery.jsonl", "probes.jsonl", "protocol.json")]


def test_commands_are_idempotent(pipeline, capsys, tmp_path):
    root, _ = pipeline
    for d in ("a", "b"):
        assert run(capsys, "toygen", "--spec", root / "toy.json", "--out", tmp_path / d)[0] == 0
        assert run(capsys, "protocol", "build", "--manifest", tmp_path / d / "manifest.jsonl",
                   "--train-subjects", 4, "--out", tmp_path / d / "p")[0] == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for rel in ["manifest.jsonl", "p/train.jsonl", "p/probes.jsonl", "s0001/y+000.0_p+00.0_neutral_above.png"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_synthesize_writes_grids(pipeline, capsys, tmp_path):
    root, _ = pipeline
    code, out, _ = run(capsys, "synthesize", "--checkpoint", root / "ck/epoch-0001.ckpt",
                       "--manifest", root / "proto/probes.jsonl", "--out", tmp_path, "--limit", 2)
    assert code == 0
    assert len(out) == 5 and out[-1].endswith("grid.png")
    assert all(Path(p).exists() for p in out)


def test_eval_rank1_report(pipeline, capsys, tmp_path):
    root, _ = pipeline
    args = ("eval", "rank1", "--checkpoint", root / "ck/epoch-0001.ckpt", "--protocol", root / "proto",
            "--extractor", "toy:0", "--report", tmp_path / "r.csv")
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert out[0] == str(tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert "Rank-1 (%) at pitch 0" in text and "Rank-1 (%) at pitch +/-15" in text
    first = (tmp_path / "r.csv").read_bytes()
    assert run(capsys, *args)[0] == 0  # second run reads the embedding cache
    assert (tmp_path / "r.csv").read_bytes() == first
    assert list((tmp_path / "embedding-cache").glob("*.npz"))


def test_eval_missing_gallery_subject(pipeline, capsys, tmp_path):
    root, _ = pipeline
    proto = tmp_path / "proto"
    proto.mkdir()
    for name in ("train.jsonl", "probes.jsonl", "protocol.json"):
        (proto / name).write_bytes((root / "proto" / name).read_bytes())
    gallery = load_manifest(root / "proto/gallery.jsonl")
    write_manifest(gallery[1:], proto / "gallery.jsonl")
    code, _, err = run(capsys, "eval", "rank1", "--checkpoint", root / "ck/epoch-0001.ckpt",
                       "--protocol", proto, "--report", tmp_path / "r.csv")
    assert code == 2
    assert f"[{gallery[0].subject_id}]" in err and "[evaluator]" in err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "verify", "--frobnicate")
    assert code == 1 and "usage:" in err


def test_unknown_command(capsys):
    assert run(capsys, "dance")[0] == 1


def test_bad_manifest_is_validation_error(capsys, tmp_path):
    (tmp_path / "m.jsonl").write_text('{"image_ref": "a"}\n')
    code, _, err = run(capsys, "protocol", "build", "--manifest", tmp_path / "m.jsonl", "--out", tmp_path / "p")
    assert code == 2 and "[dataset]" in err and "row 0" in err


def test_unknown_config_key(pipeline, capsys, tmp_path):
    root, _ = pipeline
    (tmp_path / "cfg.json").write_text('{"learning_rate": 1}')
    code, _, err = run(capsys, "train", "--protocol", root / "proto", "--config", tmp_path / "cfg.json",
                       "--checkpoints", tmp_path / "ck")
    assert code == 2 and "learning_rate" in err


def test_missing_checkpoint_is_runtime_error(pipeline, capsys, tmp_path):
    root, _ = pipeline
    code, _, err = run(capsys, "synthesize", "--checkpoint", tmp_path / "none.ckpt",
                       "--manifest", root / "proto/probes.jsonl", "--out", tmp_path)
    assert code == 3 and "[checkpoint]" in err


def test_unknown_extractor(pipeline, capsys, tmp_path):
    root, _ = pipeline
    code, _, err = run(capsys, "eval", "rank1", "--checkpoint", root / "ck/epoch-0001.ckpt",
                       "--protocol", root / "proto", "--extractor", "lightcnn", "--report", tmp_path / "r.csv")
    assert code == 2 and "lightcnn" in err


def test_verify_subset(capsys):
    code, out, _ = run(capsys, "verify", "--only", "losses", "rank1")
    assert code == 0
    assert len(out) == 2 and all(line.startswith("[PASS]") for line in out)


@pytest.mark.slow
def test_full_size_protocol_counts(capsys, tmp_path):
    spec = {"n_identities": 229, "poses": [list(p) for p in PROTOCOL_POSES], "attributes": list(ATTRIBUTES),
            "illuminations": list(ILLUMINATIONS), "size": 128}
    (tmp_path / "full.json").write_text(json.dumps(spec))
    assert run(capsys, "toygen", "--spec", tmp_path / "full.json", "--out", tmp_path / "m", "--no-images")[0] == 0
    code, out, _ = run(capsys, "protocol", "build", "--manifest", tmp_path / "m/manifest.jsonl",
                       "--train-subjects", 162, "--seed", 0, "--out", tmp_path / "p")
    assert code == 0
    assert out[:3] == ["train 258,552", "probes 105,056", "gallery 67"]
