import math
from pathlib import Path

import numpy as np
import pytest

import cinn

ROOT = Path(__file__).resolve().parents[2]


def test_matrix_exp_matches_closed_form():
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    e = cinn.matrix_exp(m)
    assert e[0, 0] == pytest.approx(math.cosh(1.0), rel=1e-13)
    assert e[0, 1] == pytest.approx(math.sinh(1.0), rel=1e-13)


def test_acyclicity_zero_only_for_dags():
    chain = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=float)
    cycle = chain.copy()
    cycle[2, 0] = 1.0
    assert cinn.acyclicity_value(chain) < 1e-12
    assert cinn.acyclicity_value(cycle) > 1e-3
    assert cinn.acyclicity_gradient(cycle).shape == (3, 3)


def test_discover_recovers_a_chain():
    rng = np.random.default_rng(0)
    x = np.empty((1000, 3))
    x[:, 0] = rng.standard_normal(1000)
    x[:, 1] = 1.5 * x[:, 0] + rng.standard_normal(1000)
    x[:, 2] = -1.2 * x[:, 1] + rng.standard_normal(1000)
    out = cinn.discover(x, lambda_=0.1, tau=0.3)
    assert abs(out["h"]) <= 1e-8
    assert sorted(out["edges"]) == [(0, 1), (1, 2)]
    assert cinn.threshold_to_dag(out["w"], 0.3) == out["edges"]


def test_partition_and_refinement():
    edges = [(0, 3), (1, 2), (2, 3), (3, 4)]
    p = cinn.partition(6, edges)
    assert p["isolated"] == [5]
    assert p["roots"] == [0, 1]
    assert p["layers"] == [[2], [3]]
    assert p["leaves"] == [4]
    refined = cinn.apply_refinement(6, edges, "remove 1 2\nadd 0 2\n")
    assert (0, 2) in refined and (1, 2) not in refined
    assert cinn.structural_hamming_distance(6, edges, refined) == 2
    with pytest.raises(cinn.CinnError) as err:
        cinn.apply_refinement(6, edges, "add 4 0\n")
    assert err.value.exit_code == 4


def test_pcgrad_worked_example():
    g1, g2 = np.array([1.0, 0.0]), np.array([-1.0, 1.0])
    np.testing.assert_allclose(cinn.project_out(g1, g2), [0.5, 0.5], atol=1e-12)
    assert cinn.cosine_similarity(g1, g2) < 0
    np.testing.assert_allclose(cinn.pcgrad_combine([g1, g2], seed=3), [0.5, 1.5], atol=1e-12)


def test_architecture_forward_and_losses():
    arch = cinn.Architecture.compile(4, [(0, 2), (1, 2), (2, 3)], target=3, widths=[6, 4, 4, 3])
    assert arch.roots == [0, 1]
    assert arch.layers == [[2]]
    params = arch.init_params(seed=1)
    assert sorted(params) == sorted(arch.param_names)
    assert sum(v.size for v in params.values()) == arch.parameter_count
    rng = np.random.default_rng(1)
    data = rng.standard_normal((10, 4))
    layers, outputs = arch.forward(params, data[:, :2])
    assert layers[0].shape == (10, 1) and outputs.shape == (10, 1)
    mse_b, mse_o = arch.loss_mse(params, data)
    assert mse_b == pytest.approx(np.mean((data[:, 2:3] - layers[0]) ** 2))
    assert mse_o == pytest.approx(np.mean((data[:, 3:4] - outputs) ** 2))
    assert arch.loss_domain(params, data, ["d3/d0 <= 0 eps 0.01"]) >= 0.0
    params["out.W"] = np.zeros((2, 2))
    with pytest.raises(cinn.CinnError):
        arch.forward(params, data[:, :2])


def test_refine_command_on_boston_housing(tmp_path):
    text = (ROOT / "configs" / "bh.yaml").read_text()
    cfg = tmp_path / "bh.yaml"
    base = (ROOT / "configs").as_posix()
    cfg.write_text(text.replace("../", base + "/../").replace(base + "/../runs/bh", str(tmp_path / "out")))
    summary = cinn.run("refine", cfg)
    assert "MEDV" in summary
    assert (tmp_path / "out" / "dag" / "refined.dag").exists()
    with pytest.raises(cinn.CinnError):
        cinn.run("frobnicate", cfg)
