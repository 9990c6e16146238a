"""Regenerates tiny_vgg.onnx and its replay fixtures.

The network has VGG-16's layout up to the conv5_1 ReLU: blocks of 2, 2, 3
and 3 padded 3x3 convolutions, each block closed by 2x2 max pooling, then
conv5_1. Hidden layers are narrow so the file stays small; conv5_1 keeps its
512 output channels. Needs torch and onnx.
"""
import struct
from pathlib import Path

import numpy as np
import onnx
import torch
from torch import nn

HERE = Path(__file__).resolve().parent
WIDTH = 4


def build():
    torch.manual_seed(1234)
    layers = []
    cin = 3
    for block, convs in enumerate([2, 2, 3, 3]):
        for _ in range(convs):
            layers += [nn.Conv2d(cin, WIDTH, 3, padding=1), nn.ReLU()]
            cin = WIDTH
        layers.append(nn.MaxPool2d(2, 2))
    layers += [nn.Conv2d(cin, 512, 3, padding=1), nn.ReLU()]
    return nn.Sequential(*layers).eval()


def strip_identities(model):
    inits = {i.name for i in model.graph.initializer}
    rename, keep = {}, []
    for node in model.graph.node:
        if node.op_type == "Identity" and node.input[0] in inits:
            rename[node.output[0]] = node.input[0]
        else:
            keep.append(node)
    for node in keep:
        for i, name in enumerate(node.input):
            node.input[i] = rename.get(name, name)
    del model.graph.node[:]
    model.graph.node.extend(keep)


def write_tensor(f, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    f.write(struct.pack("<I", array.ndim))
    f.write(struct.pack("<%dI" % array.ndim, *array.shape))
    f.write(array.tobytes())


def write_fixture(path, x, y):
    with open(path, "wb") as f:
        f.write(b"MSDSFIX1")
        write_tensor(f, x)
        write_tensor(f, y)


def main():
    net = build()
    probe = torch.zeros(1, 3, 96, 64)
    path = HERE / "tiny_vgg.onnx"
    torch.onnx.export(net, probe, str(path), input_names=["image"],
                      output_names=["features"], opset_version=11,
                      dynamic_axes={"image": {2: "H", 3: "W"},
                                    "features": {2: "h", 3: "w"}},
                      dynamo=False)
    model = onnx.load(str(path))
    strip_identities(model)
    onnx.save(model, str(path))

    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 3, 96, 64)).astype(np.float32)
    with torch.no_grad():
        y = net(torch.from_numpy(x)).numpy()
        write_fixture(HERE / "tiny_vgg_fixture.bin", x, y)
        z = np.zeros((1, 3, 96, 64), np.float32)
        write_fixture(HERE / "tiny_vgg_zero_fixture.bin", z,
                      net(torch.from_numpy(z)).numpy())
    print("output", y.shape)


if __name__ == "__main__":
    main()
