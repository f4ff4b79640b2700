"""Many-instance checks of the end-to-end properties the toolkit promises."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from mixquant.analysis.reports import proxy_eval
from mixquant.calibration.dataset import make_synthetic_dataset
from mixquant.calibration.network import GradientMode, compute_gradients, make_toy_model
from mixquant.cli.main import main
from mixquant.gemm_engine.engine import execute_mixed_linear, reference_linear
from mixquant.gemm_engine.i2f import fast_i2f, native_i2f
from mixquant.gemm_engine.models import I2FMode
from mixquant.mixed_layer.footprint import memory_footprint
from mixquant.mixed_layer.partition import partition_and_quantize, quantize_model
from mixquant.quant_core.models import ACTIVATION_SCHEME, SMALLBIT_SCHEME, QuantScheme
from mixquant.quant_core.quantizer import dequantize_tensor, quantize_tensor
from mixquant.salience_search.search import channel_salience, global_search, local_search, random_assignment

from tests.test_calibration import _numeric_gradient, assert_gradients_close

pytestmark = pytest.mark.slow

DEFAULT_DIMS = [32, 64, 64, 8]


def test_fast_i2f_is_exact_on_its_whole_range() -> None:
    x = np.arange(-(2**22), 2**22, dtype=np.int32)
    fast = fast_i2f(x)
    native = native_i2f(x)
    np.testing.assert_array_equal(fast.view(np.uint32), native.view(np.uint32))


def test_engine_matches_float_oracle_on_random_instances() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(200):
        m = int(rng.integers(1, 65))
        n = int(rng.integers(1, 257))
        k = int(rng.choice([128, 256, 512, 4096]))
        promoted = sorted(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
        layer = partition_and_quantize(rng.normal(size=(n, k)), promoted)
        a = rng.normal(size=(m, k)) * rng.uniform(0.1, 10.0)

        fast = execute_mixed_linear(a, layer, ACTIVATION_SCHEME, i2f_mode=I2FMode.FAST)
        native = execute_mixed_linear(a, layer, ACTIVATION_SCHEME, i2f_mode=I2FMode.NATIVE)
        ref = reference_linear(a, layer, ACTIVATION_SCHEME)
        np.testing.assert_array_equal(fast, native)
        assert np.abs(fast - ref).max() <= 1e-4 * (1.0 + np.abs(ref).max())


@pytest.mark.parametrize(("bits", "symmetric"), [(4, False), (8, False), (4, True), (8, True)])
def test_round_trip_bound_on_random_groups(bits: int, symmetric: bool) -> None:
    rng = np.random.default_rng(bits * 10 + symmetric)
    spread = 10.0 ** rng.uniform(-4, 3, size=(10_000, 1))
    offset = rng.normal(size=(10_000, 1)) * spread * rng.choice([0.0, 3.0], size=(10_000, 1))
    x = rng.normal(size=(10_000, 128)) * spread + offset
    scheme = QuantScheme(bit_width=bits, symmetric=symmetric)
    q = quantize_tensor(x, scheme)
    err = np.abs(dequantize_tensor(q).array - x)
    assert (err <= q.scale_array().astype(np.float64) / 2 * (1 + 1e-6)).all()


def test_constant_groups_are_exact() -> None:
    rng = np.random.default_rng(11)
    values = (rng.normal(size=(10_000, 1)) * 10.0 ** rng.uniform(-3, 3, size=(10_000, 1))).astype(np.float32)
    x = np.repeat(values.astype(np.float64), 64, axis=1)
    for bits in (4, 8):
        q = quantize_tensor(x, QuantScheme(bit_width=bits, symmetric=False, group_size=64))
        np.testing.assert_array_equal(dequantize_tensor(q).array, x)
    zeros = np.zeros((100, 64))
    q = quantize_tensor(zeros, QuantScheme(bit_width=8, symmetric=True, group_size=64))
    np.testing.assert_array_equal(dequantize_tensor(q).array, zeros)


def test_gradients_match_finite_differences_on_random_models() -> None:
    rng = np.random.default_rng(5)
    for seed in range(20):
        dims = [int(d) for d in rng.integers(2, 7, size=int(rng.integers(3, 5)))]
        model = make_toy_model(dims, seed=seed)
        dataset = make_synthetic_dataset(dims, 12, seed=seed)
        grads = compute_gradients(model, dataset)
        for layer in range(len(model.weights)):
            assert_gradients_close(grads.aggregated[layer], _numeric_gradient(model, dataset, layer))


def test_salience_matches_direct_formula() -> None:
    rng = np.random.default_rng(17)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        g = rng.normal(size=n) * 10.0 ** rng.uniform(-3, 1)
        delta = rng.normal(size=n) * 10.0 ** rng.uniform(-3, 0)
        t = sum(float(a) * float(b) for a, b in zip(g, delta, strict=True))
        expected = abs(t + 0.5 * t * t)
        assert channel_salience(g, delta) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_global_search_beats_random_selection() -> None:
    wins = 0
    for seed in range(5):
        model = make_toy_model(DEFAULT_DIMS, seed=seed, sensitive_layer=1, sensitivity=10.0)
        dataset = make_synthetic_dataset(DEFAULT_DIMS, 256, seed=seed)
        grads = compute_gradients(model, dataset, GradientMode.AGGREGATED)
        chosen = global_search(model, grads, SMALLBIT_SCHEME, 0.1)
        assert len(chosen.largebit[1]) / chosen.out_features[1] > 0.1
        baseline = random_assignment(model.layer_names, chosen.out_features, 0.1, seed=seed)
        searched = proxy_eval(model, quantize_model(model, chosen), dataset).loss_delta
        guessed = proxy_eval(model, quantize_model(model, baseline), dataset).loss_delta
        wins += searched < guessed
    assert wins >= 4


def test_global_search_beats_layer_local_selection() -> None:
    wins = 0
    for seed in range(5):
        model = make_toy_model(DEFAULT_DIMS, seed=seed, sensitive_layer=1, sensitivity=10.0)
        dataset = make_synthetic_dataset(DEFAULT_DIMS, 256, seed=seed)
        grads = compute_gradients(model, dataset, GradientMode.AGGREGATED)
        chosen = global_search(model, grads, SMALLBIT_SCHEME, 0.1)
        local = local_search(model, grads, SMALLBIT_SCHEME, 0.1)
        searched = proxy_eval(model, quantize_model(model, chosen), dataset).loss_delta
        per_layer = proxy_eval(model, quantize_model(model, local), dataset).loss_delta
        wins += searched < per_layer
    assert wins >= 4


def test_more_large_bit_channels_never_hurt() -> None:
    for seed in range(5):
        model = make_toy_model(DEFAULT_DIMS, seed=seed)
        dataset = make_synthetic_dataset(DEFAULT_DIMS, 256, seed=seed)
        widths = [shape[0] for shape in model.layer_shapes]
        p100 = quantize_model(model, random_assignment(model.layer_names, widths, 1.0, seed=seed))
        p0 = quantize_model(model, random_assignment(model.layer_names, widths, 0.0, seed=seed))
        assert proxy_eval(model, p100, dataset).loss_delta <= proxy_eval(model, p0, dataset).loss_delta


@pytest.mark.parametrize(("percent", "bits"), [(0.0, 4.0), (0.1, 4.4), (0.2, 4.8), (0.5, 6.0), (1.0, 8.0)])
def test_payload_bits_follow_percent(percent: float, bits: float) -> None:
    names = [f"fc{i}" for i in range(1, 6)]
    assignment = random_assignment(names, [40] * 5, percent, seed=0)
    assert memory_footprint(assignment, [40] * 5).effective_bits == pytest.approx(bits, abs=1e-12)


def _default_pipeline(root: Path, workers: int) -> dict[str, bytes]:
    common = ["--seed", "3", "--workers", str(workers)]
    model, assignment, quantized = root / "model", root / "assignment.json", root / "quantized"
    assert main(["gen-model", "--sensitive-layer", "1", "--out", str(model), *common]) == 0
    assert main(["search", "--model", str(model), "--out", str(assignment), *common]) == 0
    argv = ["quantize", "--model", str(model), "--assignment", str(assignment), "--out", str(quantized)]
    assert main([*argv, *common]) == 0
    argv = ["eval", "--model", str(model), "--quantized", str(quantized), "--out", str(root / "eval.json")]
    assert main([*argv, *common]) == 0
    return {
        str(path.relative_to(root)): path.read_bytes() for path in sorted(root.rglob("*")) if path.is_file()
    }


def test_default_pipeline_is_deterministic_across_worker_counts(workdir: Path) -> None:
    single = _default_pipeline(workdir / "one", workers=1)
    again = _default_pipeline(workdir / "again", workers=1)
    many = _default_pipeline(workdir / "four", workers=4)
    assert single == again == many
