"""Builds the small ONNX models used by the backbone tests and freezes the
reference runtime's outputs next to them.

    python3 tests/fixtures/make_onnx_fixtures.py

Requires the `onnx` and `numpy` packages. Outputs are committed, so the C++
build does not need Python.
"""

import json
import pathlib

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper
from onnx.reference import ReferenceEvaluator

OUT = pathlib.Path(__file__).resolve().parent / "onnx"
OPSET = 15


def probe_frame(side):
    """HWC frame used by the tests; mirrored in test_backbone.cpp."""
    p = np.arange(side * side, dtype=np.float64)[:, None]
    c = np.arange(3, dtype=np.float64)[None, :]
    return (0.9 * np.sin(0.37 * p + 1.3 * c)).astype(np.float32).reshape(side, side, 3)


def init(rng, name, shape, scale=0.5):
    return numpy_helper.from_array((rng.standard_normal(shape) * scale).astype(np.float32), name)


def save(name, model, side, nhwc, expect=True):
    onnx.checker.check_model(model)
    onnx.save(model, OUT / f"{name}.onnx")
    if not expect:
        return None
    frame = probe_frame(side)
    x = frame[None] if nhwc else frame.transpose(2, 0, 1)[None]
    (y,) = ReferenceEvaluator(model).run(None, {model.graph.input[0].name: x})
    return {"side": side, "nhwc": nhwc, "expected": [float(v) for v in y.reshape(-1)]}


def small_nchw(rng):
    nodes = [
        helper.make_node("Conv", ["x", "w1", "b1"], ["c1"], kernel_shape=[3, 3], pads=[1, 1, 1, 1], strides=[2, 2]),
        helper.make_node("BatchNormalization", ["c1", "bn_s", "bn_b", "bn_m", "bn_v"], ["n1"], epsilon=1e-3),
        helper.make_node("Relu", ["n1"], ["r1"]),
        helper.make_node("MaxPool", ["r1"], ["p1"], kernel_shape=[3, 3], strides=[2, 2], pads=[1, 1, 1, 1]),
        helper.make_node("Conv", ["p1", "w2"], ["c2"], kernel_shape=[3, 3], pads=[1, 1, 1, 1], group=2),
        helper.make_node("Clip", ["c2", "lo", "hi"], ["k2"]),
        helper.make_node("Add", ["k2", "p1"], ["s2"]),
        helper.make_node("GlobalAveragePool", ["s2"], ["g"]),
        helper.make_node("Flatten", ["g"], ["f"]),
        helper.make_node("Gemm", ["f", "wf", "bf"], ["y"], transB=1, alpha=0.5),
    ]
    inits = [
        init(rng, "w1", (4, 3, 3, 3)),
        init(rng, "b1", (4,)),
        numpy_helper.from_array(np.abs(rng.standard_normal(4)).astype(np.float32) + 0.5, "bn_s"),
        init(rng, "bn_b", (4,)),
        init(rng, "bn_m", (4,)),
        numpy_helper.from_array(np.abs(rng.standard_normal(4)).astype(np.float32) + 0.5, "bn_v"),
        init(rng, "w2", (4, 2, 3, 3)),
        numpy_helper.from_array(np.array(-0.5, np.float32), "lo"),
        numpy_helper.from_array(np.array(0.75, np.float32), "hi"),
        init(rng, "wf", (5, 4)),
        init(rng, "bf", (5,)),
    ]
    graph = helper.make_graph(
        nodes, "small_nchw",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, [1, 3, 16, 16])],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, [1, 5])], inits)
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)])


def nhwc_wide(rng):
    """224 px NHWC input with a 2048-wide output, shaped like a Keras export."""
    nodes = [
        helper.make_node("Transpose", ["x"], ["t"], perm=[0, 3, 1, 2]),
        helper.make_node("MaxPool", ["t"], ["p"], kernel_shape=[8, 8], strides=[8, 8]),
        helper.make_node("Conv", ["p", "w", "b"], ["c"], kernel_shape=[1, 1]),
        helper.make_node("Relu", ["c"], ["r"]),
        helper.make_node("ReduceMean", ["r"], ["y"], axes=[2, 3], keepdims=0),
    ]
    inits = [init(rng, "w", (2048, 3, 1, 1)), init(rng, "b", (2048,), 0.1)]
    graph = helper.make_graph(
        nodes, "nhwc_wide",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, [1, 224, 224, 3])],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, [1, 2048])], inits)
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)])


def symbolic(rng):
    """Symbolic input dims and output width; exercises shape arithmetic."""
    nodes = [
        helper.make_node("Pad", ["x", "pads"], ["xp"], mode="constant"),
        helper.make_node("Conv", ["xp", "w"], ["c"], kernel_shape=[3, 3], strides=[2, 2], auto_pad="SAME_UPPER"),
        helper.make_node("Sigmoid", ["c"], ["s"]),
        helper.make_node("AveragePool", ["s"], ["a"], kernel_shape=[2, 2], strides=[2, 2], pads=[0, 0, 1, 1],
                         count_include_pad=1),
        helper.make_node("Tanh", ["a"], ["h"]),
        helper.make_node("Shape", ["h"], ["shp"]),
        helper.make_node("Gather", ["shp", "zero"], ["n"], axis=0),
        helper.make_node("Unsqueeze", ["n", "axis0"], ["n1"]),
        helper.make_node("Concat", ["n1", "minus1"], ["target"], axis=0),
        helper.make_node("Reshape", ["h", "target"], ["flat"]),
        helper.make_node("MatMul", ["flat", "wm"], ["m"]),
        helper.make_node("Unsqueeze", ["m", "axis0"], ["mu"]),
        helper.make_node("Squeeze", ["mu", "axis0"], ["ms"]),
        helper.make_node("Mul", ["ms", "two"], ["mm"]),
        helper.make_node("Sub", ["mm", "one"], ["d"]),
        helper.make_node("Div", ["d", "two"], ["y0"]),
        helper.make_node("Dropout", ["y0"], ["y1"]),
        helper.make_node("Identity", ["y1"], ["y"]),
    ]
    side = 12
    flat = 3 * 4 * 4  # conv: 14 -> 7, pool(ceil via pad): 7 -> 4
    inits = [
        numpy_helper.from_array(np.array([0, 0, 1, 1, 0, 0, 1, 1], np.int64), "pads"),
        init(rng, "w", (3, 3, 3, 3)),
        numpy_helper.from_array(np.array(0, np.int64), "zero"),
        numpy_helper.from_array(np.array([0], np.int64), "axis0"),
        numpy_helper.from_array(np.array([-1], np.int64), "minus1"),
        init(rng, "wm", (flat, 6)),
        numpy_helper.from_array(np.array(2.0, np.float32), "two"),
        numpy_helper.from_array(np.array(1.0, np.float32), "one"),
    ]
    graph = helper.make_graph(
        nodes, "symbolic",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, ["N", 3, "H", "W"])],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, ["N", "D"])], inits)
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)]), side


def unsupported(rng):
    nodes = [
        helper.make_node("Conv", ["x", "w"], ["c"], kernel_shape=[1, 1]),
        helper.make_node("Erf", ["c"], ["e"]),
        helper.make_node("GlobalAveragePool", ["e"], ["g"]),
        helper.make_node("Flatten", ["g"], ["y"]),
    ]
    graph = helper.make_graph(
        nodes, "unsupported",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, [1, 3, 8, 8])],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, [1, 2])], [init(rng, "w", (2, 3, 1, 1))])
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    expected = {
        "small_nchw": save("small_nchw", small_nchw(rng), 16, nhwc=False),
        "nhwc_wide": save("nhwc_wide", nhwc_wide(rng), 224, nhwc=True),
    }
    model, side = symbolic(rng)
    expected["symbolic"] = save("symbolic", model, side, nhwc=False)
    save("unsupported", unsupported(rng), 8, nhwc=False, expect=False)
    (OUT / "expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    main()
