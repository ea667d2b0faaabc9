import json
import math
import os
import pathlib

import pytest

import gemlab

ROOT = pathlib.Path(os.environ.get("GEMLAB_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def test_softmax_and_entropy():
    p = gemlab.softmax([math.log(0.4), math.log(0.3), math.log(0.2), math.log(0.1)])
    assert p == pytest.approx([0.4, 0.3, 0.2, 0.1], abs=1e-15)
    assert gemlab.entropy([0.8, 0.2]) == pytest.approx(-(0.8 * math.log(0.8) + 0.2 * math.log(0.2)), abs=1e-15)


def test_golden_gradient_and_flows():
    g = gemlab.ce_gradient([0.4, 0.3, 0.2, 0.1], 2)
    assert g == pytest.approx([-0.4, -0.3, 0.8, -0.1], abs=1e-12)
    d = gemlab.flow_decompose([0.4, 0.3, 0.2, 0.1], 2)
    assert [s for s, _ in d["flows"]] == [0, 1, 3]
    assert [w for _, w in d["flows"]] == pytest.approx([0.4, 0.3, 0.1], abs=1e-12)
    assert d["residual"] < 1e-12


def test_gem_gradient_hand_case():
    spec = gemlab.LossSpec.gem(1.0)
    logits = [math.log(v) for v in (0.5, 0.3, 0.2)]
    assert gemlab.loss_ascent(logits, 1, spec) == pytest.approx([-0.5, 0.7, -0.2], abs=1e-14)
    assert gemlab.analytic_vs_numeric(logits, 1, gemlab.LossSpec.gem(0.7)) < 1e-6


def test_equilibrium():
    p = [0.5, 0.3, 0.2]
    out = gemlab.train_equilibrium(p, 0.7)
    assert out["converged"]
    f = gemlab.softmax(out["logits"])
    w = [v**0.7 for v in p]
    z = sum(w)
    assert f == pytest.approx([v / z for v in w], abs=1e-4)
    assert gemlab.closed_form_equilibrium([0.8, 0.2], 0.5) == pytest.approx([2 / 3, 1 / 3], abs=1e-15)
    with pytest.raises(ValueError):
        gemlab.closed_form_equilibrium([1.0, 0.0], 0.5)


def test_prototype_stops_at_argmax():
    t = gemlab.run_gem_prototype([2.0, 1.0, 0.0], 1)
    assert t["terminated_by"] == "stopping-rule"
    fin = t["final_logits"]
    assert max(range(3), key=lambda i: (fin[i], -i)) == 1


def test_metrics():
    assert gemlab.pass_at_k(2, 1, 1) == pytest.approx(0.5)
    assert gemlab.bt_win_prob(math.log(3), 0.0) == pytest.approx(0.75)
    assert gemlab.ngram_diversity([[1, 2, 1, 2]], 2) == pytest.approx(200 / 3)
    assert gemlab.self_bleu_diversity([[1, 2, 3], [1, 2, 3]], 2) == pytest.approx(0.0, abs=1e-9)


def test_run_experiment_small():
    cfg = json.loads((ROOT / "configs" / "standard.json").read_text())
    cfg["task"]["num_contexts"] = 4
    cfg["task"]["samples_per_context"] = 4
    records = gemlab.run_experiment(cfg)
    assert [r["cell"] for r in records] == ["ce", "gem"]
    assert all(r["status"] == "ok" for r in records)
    again = gemlab.run_experiment(cfg)
    assert [r["final_metrics"] for r in records] == [r["final_metrics"] for r in again]


def test_bad_config_raises():
    with pytest.raises(ValueError):
        gemlab.run_experiment({"losses": [{"name": "ce", "kind": "CE"}], "bogus": 1})
