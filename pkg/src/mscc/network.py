"""Executable networks: parameter storage plus a forward pass that walks a
NetworkSpec through the autodiff ops.

Parameters are plain float64 arrays keyed ``layer.kernel`` / ``layer.bias``
/ ``layer.gamma`` / ``layer.beta``; batch-norm running statistics live
alongside them. Initialization is fan-in-scaled uniform from a seeded
generator, so two networks built from the same (spec, seed) are identical.
"""

import numpy as np

from . import autodiff as ad
from .netbuilder import propagate_channels


class Network:
    def __init__(self, spec, seed=0):
        self.spec = spec
        self.channels = propagate_channels(spec)
        self.params = {}
        self.running = {}
        rng = np.random.default_rng(seed)
        for layer in spec.layers:
            if layer.kind == "conv":
                c_in = self.channels[layer.inputs[0]][0]
                kh, kw = layer.kernel
                fan_in = c_in * kh * kw
                limit = np.sqrt(6.0 / fan_in)
                self.params[f"{layer.name}.kernel"] = rng.uniform(
                    -limit, limit, size=(layer.filters, c_in, kh, kw))
                self.params[f"{layer.name}.bias"] = np.zeros(layer.filters)
            elif layer.kind == "upconv":
                c_in = self.channels[layer.inputs[0]][0]
                limit = np.sqrt(6.0 / c_in)
                self.params[f"{layer.name}.kernel"] = rng.uniform(
                    -limit, limit, size=(c_in, layer.filters, 2, 2))
                self.params[f"{layer.name}.bias"] = np.zeros(layer.filters)
            elif layer.kind == "dense":
                c, h, w = self.channels[layer.inputs[0]]
                if h is None:
                    raise ValueError(
                        f"dense layer {layer.name!r} needs a spec with known spatial "
                        f"dims; build it with the input extent")
                fan_in = c * h * w
                limit = np.sqrt(6.0 / fan_in)
                self.params[f"{layer.name}.weight"] = rng.uniform(
                    -limit, limit, size=(layer.filters, fan_in))
                self.params[f"{layer.name}.bias"] = np.zeros(layer.filters)
            elif layer.kind == "bn":
                c = self.channels[layer.inputs[0]][0]
                self.params[f"{layer.name}.gamma"] = np.ones(c)
                self.params[f"{layer.name}.beta"] = np.zeros(c)
                self.running[layer.name] = ad.RunningStats.create(c)

    def forward(self, x, mode="infer"):
        """Run the spec on an NCHW batch; returns (output Tensor, the
        parameter Tensor wrappers used, keyed like ``params``)."""
        track = mode == "train"
        wrappers = {}

        def wrap(key):
            t = ad.Tensor(self.params[key], requires_grad=track)
            wrappers[key] = t
            return t

        values = {}
        for layer in self.spec.layers:
            if layer.kind == "input":
                if x.shape[1] != layer.filters:
                    raise ValueError(
                        f"network expects {layer.filters} input channels, got {x.shape[1]}")
                values[layer.name] = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
                continue
            src = values[layer.inputs[0]]
            if layer.kind == "conv":
                out = ad.conv2d(src, wrap(f"{layer.name}.kernel"),
                                wrap(f"{layer.name}.bias"))
            elif layer.kind == "upconv":
                out = ad.transpose_conv2d(src, wrap(f"{layer.name}.kernel"),
                                          wrap(f"{layer.name}.bias"))
            elif layer.kind == "bn":
                out = ad.batch_norm(src, wrap(f"{layer.name}.gamma"),
                                    wrap(f"{layer.name}.beta"), mode,
                                    self.running[layer.name])
            elif layer.kind == "relu":
                out = ad.relu(src)
            elif layer.kind == "maxpool":
                out = ad.maxpool2x2(src)
            elif layer.kind == "concat":
                out = ad.concat_channels(*[values[s] for s in layer.inputs])
            elif layer.kind == "sigmoid":
                out = ad.sigmoid(src)
            elif layer.kind == "softmax":
                out = ad.softmax(src)
            elif layer.kind == "dense":
                out = ad.dense(src, wrap(f"{layer.name}.weight"),
                               wrap(f"{layer.name}.bias"))
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            values[layer.name] = out
        return values[self.spec.output], wrappers

    def predict(self, x):
        out, _ = self.forward(x, mode="infer")
        return out.data

    def state_arrays(self):
        """All persistent arrays (parameters + running stats), for checkpoints."""
        out = dict(self.params)
        for name, rs in self.running.items():
            out[f"{name}.running_mean"] = rs.mean
            out[f"{name}.running_var"] = rs.var
        return out

    def load_state_arrays(self, arrays):
        for key, arr in self.params.items():
            if key not in arrays:
                raise ValueError(f"checkpoint is missing parameter {key!r}")
            if arrays[key].shape != arr.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {key!r}: "
                    f"{arrays[key].shape} vs {arr.shape}")
            arr[...] = arrays[key]
        for name, rs in self.running.items():
            rs.mean[...] = arrays[f"{name}.running_mean"]
            rs.var[...] = arrays[f"{name}.running_var"]
