"""Sequential CNN assembled from an architecture descriptor.

A descriptor is a ``>``-separated list of stages::

    conv(2,8,relu) > conv(8,16,relu) > pool(3) > conv(16,16,relu) > up(3) > ...

``conv(in,out,act)`` is a 3x3 same-size convolution, optionally with a fourth
``std=<lambda>`` field enabling the weight-std penalty on that layer.
``pool(f)`` is max pooling by ``f`` and ``up(f)`` nearest upsampling by ``f``.
"""
from __future__ import annotations

import re

import numpy as np

from . import tensor as T

_STAGE = re.compile(r"^(conv|pool|up)\(([^)]*)\)$")


def parse_descriptor(descriptor):
    """Return a list of ``(kind, args)`` tuples."""
    stages = []
    for raw in descriptor.split(">"):
        token = raw.strip().replace(" ", "")
        m = _STAGE.match(token)
        if not m:
            raise ValueError(f"bad descriptor stage {raw.strip()!r}")
        kind, body = m.groups()
        fields = [f for f in body.split(",") if f]
        if kind == "conv":
            if len(fields) not in (3, 4):
                raise ValueError(f"conv stage needs in,out,act[,std=lambda]: {token}")
            lam = 0.0
            if len(fields) == 4:
                key, _, val = fields[3].partition("=")
                if key != "std":
                    raise ValueError(f"unknown conv option {fields[3]!r}")
                lam = float(val)
            stages.append(("conv", (int(fields[0]), int(fields[1]), fields[2], lam)))
        else:
            if len(fields) != 1:
                raise ValueError(f"{kind} stage takes a single factor: {token}")
            stages.append((kind, int(fields[0])))
    return stages


def format_descriptor(stages):
    parts = []
    for kind, args in stages:
        if kind == "conv":
            cin, cout, act, lam = args
            extra = f",std={lam!r}" if lam else ""
            parts.append(f"conv({cin},{cout},{act}{extra})")
        else:
            parts.append(f"{kind}({args})")
    return " > ".join(parts)


class Network:
    """Feed-forward stack of conv / pool / upsample stages."""

    def __init__(self, descriptor, seed=0, dtype=np.float32):
        self.stages = parse_descriptor(descriptor)
        self.descriptor = format_descriptor(self.stages)
        rng = np.random.default_rng(seed)
        self.layers = []
        channels = None
        for kind, args in self.stages:
            if kind != "conv":
                continue
            cin, cout, act, lam = args
            if channels is not None and cin != channels:
                raise ValueError(f"conv expects {cin} channels but receives {channels}")
            channels = cout
            kernels = T.xavier_init((cout, cin, 3, 3), rng, dtype=dtype)
            bias = T.NetTensor(np.zeros(cout), dtype=dtype)
            self.layers.append(T.ConvLayer(kernels, bias, act, penalty=lam))
        if not self.layers:
            raise ValueError("descriptor has no convolution stages")
        self._trace = []

    @property
    def in_channels(self):
        return self.layers[0].in_channels

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    @property
    def spatial_multiple(self):
        """Input height/width must be divisible by this."""
        m = 1
        for kind, args in self.stages:
            if kind == "pool":
                m *= args
        return m

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x, train=False):
        """Run the stack on ``(C,H,W)`` or ``(N,C,H,W)`` input.

        With ``train=True`` intermediate state is kept for :meth:`backward`.
        An ``up`` stage directly followed by a ``conv`` runs as one fused
        kernel on the low-resolution grid.
        """
        x = np.asarray(x, dtype=self.layers[0].kernels.values.dtype)
        single = x.ndim == 3
        if x.ndim not in (3, 4):
            raise T.ShapeError(f"expected C x H x W or N x C x H x W, got {x.shape}")
        if x.shape[-3] != self.in_channels:
            raise T.ShapeError(f"input has {x.shape[-3]} channels, "
                               f"network expects {self.in_channels}")
        h = np.ascontiguousarray(x[:, None] if single else x.transpose(1, 0, 2, 3))
        trace = []
        conv_iter = iter(self.layers)
        pending_up = 1
        for kind, args in self.stages:
            if kind == "up":
                pending_up *= args
                continue
            if kind == "conv":
                layer = next(conv_iter)
                if not train:
                    h = T.conv_rows_cn(h, layer, pending_up)
                elif pending_up > 1:
                    h, ctx = T.upconv_forward_cn(h, layer, pending_up)
                    trace.append(("upconv", layer, ctx))
                else:
                    h, ctx = T.conv_forward_cn(h, layer)
                    trace.append(("conv", layer, ctx))
                pending_up = 1
            else:
                h, argmax = T.maxpool_forward(h, args)
                trace.append(("pool", args, argmax))
        if pending_up > 1:
            h = T.upsample_nearest(h, pending_up)
            trace.append(("up", pending_up, None))
        self._trace = trace if train else []
        return np.ascontiguousarray(h[:, 0] if single else h.transpose(1, 0, 2, 3))

    def backward(self, grad, input_grad=False):
        """Backpropagate ``grad`` through the last training forward pass.

        Parameter gradients accumulate into each layer's NetTensors.  The
        gradient with respect to the network input is returned only when
        ``input_grad`` is set.
        """
        if not self._trace:
            raise RuntimeError("backward called without a training forward pass")
        grad = np.asarray(grad)
        single = grad.ndim == 3
        g = np.ascontiguousarray(grad[:, None] if single else grad.transpose(1, 0, 2, 3))
        first = self._trace[0][1] if self._trace[0][0] in ("conv", "upconv") else None
        for kind, item, ctx in reversed(self._trace):
            need = input_grad or item is not first
            if kind == "conv":
                g, _, _ = T.conv_backward_cn(g, item, ctx, input_grad=need)
            elif kind == "upconv":
                g, _, _ = T.upconv_backward_cn(g, item, ctx, input_grad=need)
            elif kind == "pool":
                g = T.maxpool_backward(ctx, g, item)
            else:
                g = T.upsample_backward(g, item)
        self._trace = []
        if not input_grad:
            return None
        return np.ascontiguousarray(g[:, 0] if single else g.transpose(1, 0, 2, 3))

    def predict(self, x):
        """Inference on ``(C,H,W)`` or ``(N,C,H,W)`` input; H, W must be
        multiples of :attr:`spatial_multiple`."""
        x = np.asarray(x)
        m = self.spatial_multiple
        if x.shape[-2] % m or x.shape[-1] % m:
            raise T.ShapeError(f"spatial dims {x.shape[-2:]} must be multiples of {m}")
        return self.forward(x, train=False)

    def penalty(self):
        """Sum of weight-std penalties; gradients go into the kernel buffers."""
        total = 0.0
        for layer in self.layers:
            if layer.penalty:
                value, _ = T.weight_std_penalty(layer, layer.penalty)
                total += value
        return total

    def get_weights(self):
        return [(layer.kernels.values.copy(), layer.bias.values.copy())
                for layer in self.layers]

    def set_weights(self, weights):
        if len(weights) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} layers, got {len(weights)}")
        for layer, (k, b) in zip(self.layers, weights):
            k = np.asarray(k)
            b = np.asarray(b)
            if k.shape != layer.kernels.shape or b.shape != layer.bias.shape:
                raise T.ShapeError(f"weight shapes {k.shape}/{b.shape} do not match "
                                   f"{layer.kernels.shape}/{layer.bias.shape}")
            layer.kernels.values[...] = k
            layer.bias.values[...] = b


def train_network(net, inputs, targets, *, epochs, batch_size=32, seed=0, lr=1e-3,
                  beta1=0.9, beta2=0.999, eps=1e-8, log=None):
    """Minimise MSE(net(inputs), targets) plus the net's weight penalties with Adam.

    Batches are drawn from a fresh permutation each epoch.  Returns the list of
    per-epoch mean losses.
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(seed)
    state = T.AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    params = net.parameters()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = np.sort(order[start:start + batch_size])
            xb, tb = inputs[idx], targets[idx]
            net.zero_grad()
            pred = net.forward(xb, train=True)
            loss, grad = T.mse_loss(pred, tb)
            loss += net.penalty()
            net.backward(grad)
            T.adam_step(params, state)
            total += loss * len(idx)
        history.append(total / n)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs}: loss {history[-1]:.6f}")
    return history
