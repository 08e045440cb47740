import json
import subprocess
import sys

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from subgraph_fl.cli import main
from subgraph_fl.config import derive_seed, expand_sweep, parse_config, serialize
from subgraph_fl.errors import ConfigError
from subgraph_fl.graph import load_graph
from subgraph_fl.partition import load_partition

TINY = {
    "graph": {"kind": "sbm", "num_blocks": 2, "nodes_per_block": 10, "p_in": 0.4, "p_out": 0.05, "feat_dim": 4},
    "partition": {"mode": "blocks", "block_size": 10},
    "model": {"hidden": 4},
    "training": {"rounds": 2, "local_epochs": 1},
    "probe": {"num_blocks": 2, "nodes_per_block": 6},
}


def write_cfg(tmp_path, name="cfg.yaml", **top):
    doc = dict(TINY, **top)
    doc.setdefault("output_dir", str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


# -- parsing ------------------------------------------------------------------

def test_defaults():
    cfg = parse_config({})
    assert cfg.model.hidden == 128
    assert cfg.training.lr == 0.001
    assert cfg.training.lambda1 == cfg.training.lambda2 == 0.001
    assert cfg.training.mask_threshold == 0.5
    assert cfg.tau == 3.0
    assert parse_config({"partition": {"mode": "overlapping"}}).tau == 5.0
    assert parse_config({"strategy": {"tau": 10}}).tau == 10.0


def test_negative_lambda_rejected():
    with pytest.raises(ConfigError, match="lambda1"):
        parse_config({"training": {"lambda1": -1}})


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as exc:
        parse_config({"training": {"learning_rate": 0.1}})
    assert "learning_rate" in str(exc.value) and "'lr'" in str(exc.value)
    with pytest.raises(ConfigError, match="valid keys"):
        parse_config({"bogus": 1})


def test_type_errors():
    with pytest.raises(ConfigError):
        parse_config({"training": {"rounds": "ten"}})
    with pytest.raises(ConfigError):
        parse_config({"strategy": {"kind": "fedsgd"}})
    with pytest.raises(ConfigError):
        parse_config({"training": {"rounds": True}})


def test_yaml_text_and_manifest_accepted():
    cfg = parse_config("training:\n  rounds: 7\n")
    assert cfg.training.rounds == 7
    manifest = {"software_version": "x", "config": serialize(cfg)}
    assert parse_config(manifest) == cfg


@given(
    st.integers(0, 50), st.integers(0, 5), st.floats(1e-4, 1.0), st.floats(0, 2), st.floats(0, 1),
    st.sampled_from(["fedpub", "fedavg", "fedprox", "fedper", "local", "oracle"]),
    st.sampled_from(["disjoint", "overlapping", "random"]), st.integers(0, 2**31),
)
@settings(max_examples=60, deadline=None)
def test_serialize_round_trip(rounds, epochs, lr, lam1, thr, kind, mode, seed):
    cfg = parse_config({
        "training": {"rounds": rounds, "local_epochs": epochs, "lr": lr, "lambda1": lam1, "mask_threshold": thr},
        "strategy": {"kind": kind}, "partition": {"mode": mode}, "seed": seed,
    })
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert parse_config(yaml.safe_load(yaml.safe_dump(serialize(cfg)))) == cfg


# -- seeds --------------------------------------------------------------------

def test_derive_seed_is_stable_and_collision_free():
    assert derive_seed(0, "init") == derive_seed(0, "init")
    seen = {derive_seed(s, tag, c, r) for s in range(5) for tag in ("split", "train")
            for c in range(25) for r in range(40)}
    assert len(seen) == 5 * 2 * 25 * 40
    assert all(0 <= x < 2**63 for x in seen)
    assert derive_seed(1, "split", 3) != derive_seed(1, "split", -1, 3)


# -- sweeps -------------------------------------------------------------------

def test_sweep_expansion():
    runs = expand_sweep({"training": {"lambda1": [0.3, 0.9], "rounds": [1, 2]}, "output_dir": "out"})
    assert len(runs) == 4
    suffixes = [s for s, _ in runs]
    assert suffixes[0] == "lambda1=0.3_rounds=1"
    assert len(set(suffixes)) == 4
    assert {(c.training.lambda1, c.training.rounds) for _, c in runs} == {(0.3, 1), (0.3, 2), (0.9, 1), (0.9, 2)}
    assert all(c.output_dir == f"out/{s}" for s, c in runs)


def test_list_typed_fields_are_not_sweeps():
    runs = expand_sweep({"snapshot_rounds": [1, 2], "graph": {"community_sizes": [2, 3]}})
    assert len(runs) == 1 and runs[0][0] == ""
    assert runs[0][1].snapshot_rounds == [1, 2]


# -- CLI ----------------------------------------------------------------------

def test_cli_gen_and_partition(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["gen", "-c", str(cfg), "-o", str(tmp_path / "g.json")]) == 0
    g = load_graph(tmp_path / "g.json")
    assert g.num_nodes == 20
    assert main(["partition", str(tmp_path / "g.json"), "--mode", "disjoint", "--k", "3",
                 "-o", str(tmp_path / "p.json")]) == 0
    part = load_partition(tmp_path / "p.json")
    assert part.k == 3
    side = json.loads((tmp_path / "p.metrics.json").read_text())
    assert side["num_clients"] == 3 and sum(side["sizes"]) == 20
    assert (tmp_path / "p.missing_edges.csv").exists()
    assert "3 clients" in capsys.readouterr().out


def test_cli_run_zero_rounds(tmp_path):
    cfg = write_cfg(tmp_path)
    doc = yaml.safe_load(cfg.read_text())
    doc["training"]["rounds"] = 0
    cfg.write_text(yaml.safe_dump(doc))
    assert main(["run", str(cfg)]) == 0
    run = tmp_path / "run"
    assert (run / "manifest.json").exists()
    assert not (run / "metrics.csv").exists()


def test_cli_run_twice_is_identical_and_replays_manifest(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert main(["run", str(tmp_path / "a" / "manifest.json"), "--output-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "metrics.csv").read_bytes() == a
    assert main(["report", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "report" / "comm_summary.csv").exists()


def test_cli_sweep_writes_sibling_dirs(tmp_path):
    doc = dict(TINY, output_dir=str(tmp_path / "sw"))
    doc["training"] = dict(TINY["training"], rounds=1, lambda1=[0.1, 0.2])
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(doc))
    assert main(["run", str(tmp_path / "s.yaml")]) == 0
    assert (tmp_path / "sw" / "lambda1=0.1" / "metrics.csv").exists()
    assert (tmp_path / "sw" / "lambda1=0.2" / "metrics.csv").exists()


def test_cli_gradcheck_exit_zero(capsys):
    assert main(["gradcheck", "--instances", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("training:\n  lambda1: -1\n")
    assert main(["run", str(bad)]) == 2
    assert "lambda1" in capsys.readouterr().err
    assert main(["report", str(tmp_path)]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "subgraph_fl.cli", "run", str(tmp_path / "nope.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("error:")
