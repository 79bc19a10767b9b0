"""Writes tiny.onnx: [1,3,8,8] -> global average pool -> linear -> sigmoid -> [1,2].

Class 0 responds to the red channel, class 1 to the blue channel.
"""
import onnx
from onnx import TensorProto, helper

weights = helper.make_tensor("W", TensorProto.FLOAT, [3, 2], [8.0, 0.0, 0.0, 0.0, 0.0, 8.0])
bias = helper.make_tensor("B", TensorProto.FLOAT, [2], [-4.0, -4.0])
nodes = [
    helper.make_node("GlobalAveragePool", ["input"], ["pooled"]),
    helper.make_node("Flatten", ["pooled"], ["flat"], axis=1),
    helper.make_node("Gemm", ["flat", "W", "B"], ["logits"]),
    helper.make_node("Sigmoid", ["logits"], ["scores"]),
]
graph = helper.make_graph(
    nodes,
    "tiny",
    [helper.make_tensor_value_info("input", TensorProto.FLOAT, [1, 3, 8, 8])],
    [helper.make_tensor_value_info("scores", TensorProto.FLOAT, [1, 2])],
    initializer=[weights, bias],
)
model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
model.ir_version = 8
onnx.checker.check_model(model)
onnx.save(model, "tiny.onnx")
