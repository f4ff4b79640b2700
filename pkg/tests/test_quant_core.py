"""Tests for group-wise quantization."""

from __future__ import annotations

import numpy as np
import pytest
from mixquant.errors import QuantizationError, UsageError
from mixquant.quant_core.models import GroupQuantParams, QuantizedTensor, QuantScheme
from mixquant.quant_core.quantizer import (
    dequantize_group,
    dequantize_tensor,
    fake_quantize,
    quantize_group_asym,
    quantize_group_sym,
    quantize_tensor,
    round_half_away,
)
from mixquant.tensor_store.models import DenseTensor, DType


def _scheme(**overrides) -> QuantScheme:
    defaults = {"bit_width": 4, "symmetric": False, "group_size": 128}
    defaults.update(overrides)
    return QuantScheme(**defaults)


# ---------- single groups ----------


class TestAsymmetricGroup:
    def test_linear_ramp(self) -> None:
        codes, params = quantize_group_asym([0.0, 1.0, 2.0, 3.0], 4)
        assert codes.tolist() == [0, 5, 10, 15]
        assert params.zero_point == 0
        assert params.scale == pytest.approx(0.2, rel=1e-7)
        restored = dequantize_group(codes, params)
        assert np.float32(restored).tolist() == [0.0, 1.0, 2.0, 3.0]

    def test_all_zero_group(self) -> None:
        codes, params = quantize_group_asym([0.0] * 8, 4)
        assert set(codes.tolist()) == {params.zero_point}
        assert dequantize_group(codes, params).tolist() == [0.0] * 8

    def test_constant_group(self) -> None:
        codes, params = quantize_group_asym([-2.0, -2.0], 4)
        assert params.scale == 2.0
        assert params.zero_point == 1
        assert codes.tolist() == [0, 0]
        assert dequantize_group(codes, params).tolist() == [-2.0, -2.0]

    def test_codes_stay_in_range(self, rng: np.random.Generator) -> None:
        for bits in (4, 8):
            codes, _ = quantize_group_asym(rng.normal(size=128) * 5, bits)
            assert codes.min() >= 0
            assert codes.max() <= 2**bits - 1

    def test_single_signed_group_respects_bound(self) -> None:
        values = np.array([1.0, 1.5, 2.25, 3.0])
        codes, params = quantize_group_asym(values, 4)
        err = np.abs(dequantize_group(codes, params) - values)
        assert err.max() <= params.scale / 2 * (1 + 1e-6)


class TestSymmetricGroup:
    def test_round_half_away(self) -> None:
        codes, params = quantize_group_sym([-1.0, 0.5], 8)
        assert codes.tolist() == [-127, 64]
        assert params.zero_point == 0
        assert params.scale == pytest.approx(1 / 127, rel=1e-7)

    def test_all_zero(self) -> None:
        codes, params = quantize_group_sym([0.0, 0.0, 0.0], 8)
        assert codes.tolist() == [0, 0, 0]
        assert dequantize_group(codes, params).tolist() == [0.0, 0.0, 0.0]

    def test_exact_round_trip(self) -> None:
        codes, params = quantize_group_sym([127.0], 8)
        assert params.scale == 1.0
        assert codes.tolist() == [127]
        assert dequantize_group(codes, params).tolist() == [127.0]

    def test_sign_symmetry(self, rng: np.random.Generator) -> None:
        values = rng.normal(size=64)
        pos, _ = quantize_group_sym(values, 8)
        neg, _ = quantize_group_sym(-values, 8)
        assert (pos == -neg).all()

    def test_never_emits_most_negative_code(self, rng: np.random.Generator) -> None:
        for bits in (4, 8):
            codes, _ = quantize_group_sym(rng.normal(size=256), bits)
            assert codes.min() >= -(2 ** (bits - 1) - 1)


@pytest.mark.parametrize("fn", [quantize_group_asym, quantize_group_sym])
def test_empty_group_is_usage_error(fn) -> None:
    with pytest.raises(UsageError):
        fn([], 4)


@pytest.mark.parametrize("fn", [quantize_group_asym, quantize_group_sym])
def test_non_finite_group_is_data_error(fn) -> None:
    with pytest.raises(QuantizationError):
        fn([1.0, float("nan")], 8)


def test_bad_bit_width() -> None:
    with pytest.raises(UsageError):
        quantize_group_asym([1.0], 3)


def test_round_half_away_from_zero() -> None:
    assert round_half_away(np.array([0.5, -0.5, 1.5, -2.5, 0.49])).tolist() == [1.0, -1.0, 2.0, -3.0, 0.0]


def test_group_params_invariants() -> None:
    with pytest.raises(ValueError):
        GroupQuantParams(scale=0.5, zero_point=3, bit_width=8, symmetric=True)
    with pytest.raises(ValueError):
        GroupQuantParams(scale=0.5, zero_point=16, bit_width=4, symmetric=False)
    with pytest.raises(ValueError):
        GroupQuantParams(scale=0.0, zero_point=0, bit_width=4, symmetric=False)


# ---------- tensors ----------


class TestQuantizeTensor:
    def test_single_group_row(self, rng: np.random.Generator) -> None:
        q = quantize_tensor(rng.normal(size=(1, 128)), _scheme())
        assert q.n_groups == 1
        assert q.scales.shape == [1, 1]

    def test_ragged_final_group(self, rng: np.random.Generator) -> None:
        scheme = _scheme()
        q = quantize_tensor(rng.normal(size=(1, 200)), scheme)
        assert q.n_groups == 2
        assert scheme.group_sizes(200).tolist() == [128, 72]

    def test_grid_aligned_matrix_is_exact(self, rng: np.random.Generator) -> None:
        # every group spans codes 0..15 on a 0.25 grid with zero point 5
        codes = rng.integers(0, 16, size=(3, 64))
        codes[:, [0, 32]] = 0
        codes[:, [1, 33]] = 15
        values = (codes - 5) * 0.25
        q = quantize_tensor(values, _scheme(group_size=32))
        assert q.zero_point_array().tolist() == [[5, 5]] * 3
        assert np.array_equal(dequantize_tensor(q).array, values)
        assert np.array_equal(fake_quantize(values, _scheme(group_size=32)), values)

    def test_round_trip_bound(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(8, 300)) * 3
        for scheme in (_scheme(), _scheme(bit_width=8, symmetric=True)):
            q = quantize_tensor(x, scheme)
            err = np.abs(dequantize_tensor(q).array - x)
            bound = np.repeat(q.scale_array().astype(np.float64), scheme.group_sizes(300), axis=1) / 2
            assert (err <= bound * (1 + 1e-6)).all()

    def test_payload_dtypes(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(2, 16))
        assert quantize_tensor(x, _scheme()).payload.dtype == DType.U4_PACKED
        assert quantize_tensor(x, _scheme(bit_width=8, symmetric=True)).payload.dtype == DType.I8
        assert quantize_tensor(x, _scheme(bit_width=8)).payload.dtype == DType.U8

    def test_symmetric_four_bit_codes_are_signed(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(4, 32))
        q = quantize_tensor(x, _scheme(symmetric=True))
        assert q.codes().min() < 0
        assert q.codes().max() <= 7

    def test_half_scales_round_to_binary16(self, rng: np.random.Generator) -> None:
        q = quantize_tensor(rng.normal(size=(4, 64)), _scheme(half_scales=True))
        scales = q.scale_array()
        assert (scales.astype(np.float16).astype(np.float32) == scales).all()

    @pytest.mark.parametrize(("bits", "symmetric", "amplitude"), [(8, True, 1e-3), (4, False, 1e-4)])
    def test_half_scales_keep_subnormal_steps(self, bits: int, symmetric: bool, amplitude: float) -> None:
        x = np.linspace(-amplitude, amplitude, 64).reshape(1, -1)
        scheme = _scheme(bit_width=bits, symmetric=symmetric, group_size=64, half_scales=True)
        q = quantize_tensor(x, scheme)
        exact = 2 * amplitude / (2**bits - 1) if not symmetric else amplitude / scheme.qmax
        stored = float(q.scale_array()[0, 0])
        assert stored < np.finfo(np.float16).tiny
        assert abs(stored - exact) <= np.finfo(np.float16).smallest_subnormal
        err = np.abs(dequantize_tensor(q).array - x)
        assert (err <= stored / 2 * (1 + 1e-6)).all()

    def test_half_scale_overflow_is_an_error(self) -> None:
        x = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 2e6, -2e6]])
        with pytest.raises(QuantizationError, match=r"float16 \(row 1, group 1\)") as info:
            quantize_tensor(x, _scheme(group_size=2, half_scales=True))
        assert (info.value.row, info.value.group) == (1, 1)
        assert quantize_tensor(x, _scheme(group_size=2)).scale_array()[1, 1] == pytest.approx(4e6 / 15, rel=1e-6)

    def test_non_finite_reports_location(self) -> None:
        x = np.zeros((3, 40))
        x[2, 35] = np.inf
        with pytest.raises(QuantizationError, match=r"row 2, group 2") as info:
            quantize_tensor(x, _scheme(group_size=16))
        assert info.value.row == 2
        assert info.value.group == 2

    def test_accepts_dense_tensor(self) -> None:
        tensor = DenseTensor.from_array(np.array([[0.0, 1.0, 2.0, 3.0]]))
        q = quantize_tensor(tensor, _scheme(group_size=4))
        assert q.codes().tolist() == [[0, 5, 10, 15]]
        assert q.group_params(0, 0).zero_point == 0

    def test_dequantize_examples(self) -> None:
        q = QuantizedTensor(
            shape=(1, 1),
            scheme=_scheme(bit_width=8, symmetric=True, group_size=1),
            payload=DenseTensor.from_array(np.array([[3]]), DType.I8),
            scales=DenseTensor.from_array(np.array([[1.0]]), DType.F32),
        )
        assert dequantize_tensor(q).array.tolist() == [[3.0]]

    def test_layout_is_validated(self) -> None:
        with pytest.raises(ValueError, match="zero points"):
            QuantizedTensor(
                shape=(1, 4),
                scheme=_scheme(group_size=4),
                payload=DenseTensor.from_array(np.array([[1, 2, 3, 4]]), DType.U4_PACKED),
                scales=DenseTensor.from_array(np.array([[0.5]]), DType.F32),
            )

    def test_zero_points_must_be_u8(self) -> None:
        with pytest.raises(ValueError, match="u8"):
            QuantizedTensor(
                shape=(1, 4),
                scheme=_scheme(group_size=4),
                payload=DenseTensor.from_array(np.array([[1, 2, 3, 4]]), DType.U4_PACKED),
                scales=DenseTensor.from_array(np.array([[0.5]]), DType.F32),
                zero_points=DenseTensor.from_array(np.array([[2]]), DType.I32),
            )
