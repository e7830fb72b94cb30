import math

import numpy as np
import pytest

from shiftselect import numerics as nx
from shiftselect.numerics import Tensor, container, grad_check
from shiftselect.numerics.rng import keyed_normal, keyed_rng
from shiftselect.selfcheck import primitive_cases


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_two_values(self):
        # 1 / (1 + e^2.4) evaluated independently
        lo = 1.0 / (1.0 + math.exp(2.4))
        out = nx.softmax(Tensor([0.8, 3.2])).data
        np.testing.assert_allclose(out, [lo, 1 - lo], atol=1e-12)
        np.testing.assert_allclose(out, [0.08317, 0.91683], atol=1e-4)

    def test_large_logits_do_not_overflow(self):
        out = nx.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_rows_sum_to_one(self):
        x = np.random.default_rng(3).normal(size=(4, 5, 6)) * 10
        for axis in range(3):
            out = nx.softmax(Tensor(x), axis=axis).data
            np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-12)
            assert np.all((out > 0) & (out < 1))

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            nx.softmax(Tensor([1.0, 2.0]), axis=1)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = nx.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_known_values(self):
        out = nx.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
        v = 1.0 / math.sqrt(2.0 / 3.0 + 1e-5)
        np.testing.assert_allclose(out.data, [-v, 0.0, v], atol=1e-12)
        np.testing.assert_allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_zero_gain_gives_bias(self):
        b = np.array([0.5, -1.0, 2.0])
        out = nx.layer_norm(Tensor(np.random.default_rng(0).normal(size=(5, 3))), Tensor(np.zeros(3)), Tensor(b))
        np.testing.assert_array_equal(out.data, np.broadcast_to(b, (5, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nx.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


class TestGradCheck:
    def test_linear_function(self):
        report = grad_check(lambda x: x.sum(), [np.random.default_rng(0).normal(size=7)], tol=1e-9)
        assert report.passed and report.max_rel_error < 1e-9

    def test_softmax_weighted_sum(self):
        rng = np.random.default_rng(1)
        x, w = rng.normal(size=8), rng.normal(size=8)
        report = grad_check(lambda a, b: (nx.softmax(a) * b).sum(), [x, w], tol=1e-5)
        assert report.passed, report

    def test_wrong_gradient_is_caught(self):
        def skewed_square(a):
            return nx.make_op(a.data**2, (a,), lambda g: (g * 2.0 * a.data * 1.1,))

        report = grad_check(lambda a: skewed_square(a).sum(), [np.random.default_rng(2).normal(size=5)], tol=1e-5)
        assert not report.passed
        assert report.max_rel_error > 0.05

    def test_raising_function(self):
        def broken(a):
            raise RuntimeError("boom")

        with pytest.raises(nx.GradCheckError, match="analytic"):
            grad_check(broken, [np.zeros(3)])

    def test_report_fields(self):
        report = grad_check(lambda a, b: (a * b).sum(), [np.ones(2), np.ones(3).reshape(1, 3)[:, :2]], tol=1e-6)
        assert len(report.per_input_errors) == 2
        assert report.passed == (report.max_rel_error <= 1e-6)


class TestPrimitiveGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_every_primitive(self, seed):
        for name, (fn, inputs) in primitive_cases(seed).items():
            report = grad_check(fn, inputs, tol=1e-5, op_name=name)
            assert report.passed, f"seed {seed}: {report}"

    def test_forward_is_deterministic(self):
        for name, (fn, inputs) in primitive_cases(5).items():
            a = fn(*[Tensor(x) for x in inputs]).data
            b = fn(*[Tensor(x) for x in inputs]).data
            assert a.tobytes() == b.tobytes(), name


class TestTape:
    def test_reused_node_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 5.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with nx.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_nonscalar_backward_needs_seed(self):
        with pytest.raises(ValueError):
            (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()

    def test_normalize_guard(self):
        with pytest.raises(nx.NumericGuardError):
            nx.l2_normalize(Tensor(np.zeros((2, 3))))


class TestContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        data = {"a": rng.normal(size=(2, 3)), "b": np.array(7.5), "c": np.zeros((0, 4)), "d": rng.normal(size=(1, 2, 3, 4))}
        container.save(tmp_path / "x.tensors", data)
        back = container.load(tmp_path / "x.tensors")
        assert list(back) == list(data)
        for k in data:
            assert back[k].shape == data[k].shape
            assert back[k].tobytes() == data[k].astype("<f8").tobytes()

    def test_header_format(self):
        raw = container.dumps({"w": np.array([1.0, 2.0])})
        header, payload = raw.split(b"\n", 1)
        assert header == b'{"name":"w","dtype":"f64","shape":[2]}'
        assert payload == np.array([1.0, 2.0], dtype="<f8").tobytes()

    def test_truncated_payload(self):
        raw = container.dumps({"w": np.arange(4.0)})
        with pytest.raises(container.ContainerError, match="truncated payload.*byte"):
            container.loads(raw[:-3])

    def test_malformed_header_reports_offset(self):
        first = container.dumps({"w": np.arange(2.0)})
        with pytest.raises(container.ContainerError, match=f"byte {len(first)}"):
            container.loads(first + b"{not json\n")

    def test_wrong_dtype(self):
        with pytest.raises(container.ContainerError, match="dtype"):
            container.loads(b'{"name":"w","dtype":"f32","shape":[1]}\n\x00\x00\x00\x00')

    def test_text_packing(self):
        assert container.decode_text(container.encode_text("k = 'v' ü")) == "k = 'v' ü"


class TestKeyedRng:
    def test_stream_identity(self):
        np.testing.assert_array_equal(keyed_normal((3, 4), 5, 1), keyed_normal((3, 4), 5, 1))

    def test_streams_differ(self):
        assert not np.array_equal(keyed_normal(8, 5, 1), keyed_normal(8, 5, 2))

    def test_independent_of_call_order(self):
        a = keyed_rng(9, 3).standard_normal(4)
        keyed_rng(9, 2).standard_normal(1000)
        np.testing.assert_array_equal(a, keyed_rng(9, 3).standard_normal(4))
