"""Bundled supernet templates.

Each builder returns a validated :class:`SupernetGraph`.  Costs are FLOPs at
full width: ``2 * k * k * c_in * c_out * h * w`` for dense ops and
``2 * k * k * c * h * w`` for depthwise ops.
"""

from __future__ import annotations

from typing import Any, Callable

from .graph import SupernetGraph, build_graph


class _Builder:
    def __init__(self, first: str):
        self.nodes: list[str] = [first]
        self.edges: list[dict[str, Any]] = []

    def node(self, name: str) -> str:
        self.nodes.append(name)
        return name

    def edge(self, eid, src, dst, kind, c_in, c_out, cost=0.0, always_keep=False):
        self.edges.append(
            dict(id=eid, src=src, dst=dst, kind=kind, c_in=c_in, c_out=c_out, cost=float(cost), always_keep=always_keep)
        )

    def build(self, output: str) -> SupernetGraph:
        return build_graph({"nodes": self.nodes, "edges": self.edges, "input": self.nodes[0], "output": output})


def _conv_cost(k, c_in, c_out, hw):
    return 2 * k * k * c_in * c_out * hw


def chain(n_nodes: int = 3, width: int = 4) -> SupernetGraph:
    """Plain chain of linear layers, ``v0 -> v1 -> ... -> v{n-1}``."""
    b = _Builder("v0")
    for i in range(1, n_nodes):
        b.node(f"v{i}")
        b.edge(f"l{i}", f"v{i-1}", f"v{i}", "linear", width, width, 2 * width * width)
    return b.build(f"v{n_nodes - 1}")


def _inverted_residual(b: _Builder, tag: str, src: str, c: int, expand: int, hw: int, skip: bool, c_out: int | None = None) -> str:
    c_out = c if c_out is None else c_out
    hidden = c * expand
    e = b.node(f"{tag}_exp")
    d = b.node(f"{tag}_dw")
    out = b.node(f"{tag}_out")
    keep = not skip  # stride-2 / width-changing blocks are down-sample layers
    b.edge(f"{tag}.expand", src, e, "conv", c, hidden, _conv_cost(1, c, hidden, hw), keep)
    b.edge(f"{tag}.dw", e, d, "depthwise_conv", hidden, hidden, 2 * 9 * hidden * hw, keep)
    b.edge(f"{tag}.project", d, out, "conv", hidden, c_out, _conv_cost(1, hidden, c_out, hw), keep)
    if skip:
        b.edge(f"{tag}.skip", src, out, "residual_add", c, c, 0.0, True)
    return out


def inverted_residual(channels: int = 16, expand: int = 6, hw: int = 196) -> SupernetGraph:
    """One inverted residual block: 1x1 conv, depthwise conv, 1x1 conv, plus skip."""
    b = _Builder("in")
    out = _inverted_residual(b, "ir", "in", channels, expand, hw, skip=True)
    return b.build(out)


def _basic_block(b: _Builder, tag: str, src: str, c_in: int, c_out: int, hw: int) -> str:
    a = b.node(f"{tag}_a")
    out = b.node(f"{tag}_out")
    down = c_in != c_out
    b.edge(f"{tag}.conv1", src, a, "conv", c_in, c_out, _conv_cost(3, c_in, c_out, hw), down)
    b.edge(f"{tag}.conv2", a, out, "conv", c_out, c_out, _conv_cost(3, c_out, c_out, hw), down)
    if down:
        b.edge(f"{tag}.proj", src, out, "conv", c_in, c_out, _conv_cost(1, c_in, c_out, hw), True)
    else:
        b.edge(f"{tag}.skip", src, out, "residual_add", c_in, c_out, 0.0, True)
    return out


def basic_residual(channels: int = 16, hw: int = 196) -> SupernetGraph:
    """One ResNet BasicBlock: two 3x3 convs plus an identity skip."""
    b = _Builder("in")
    out = _basic_block(b, "bb", "in", channels, channels, hw)
    return b.build(out)


def residual_mlp(depth: int = 20, width: int = 80) -> SupernetGraph:
    """Stack of ``depth`` linear layers, each bypassed by a residual link.

    Layer ``i`` reads ``x{i-1}``; its linear op writes ``h{i}`` and an add op
    merges ``h{i}`` into ``x{i}``, which also receives ``x{i-1}`` through the
    skip.  The skips are always kept; the linear and add ops are optional.
    """
    b = _Builder("x0")
    for i in range(1, depth + 1):
        h = b.node(f"h{i}")
        x = b.node(f"x{i}")
        b.edge(f"lin{i}", f"x{i-1}", h, "linear", width, width, 2 * width * width)
        b.edge(f"add{i}", h, x, "residual_add", width, width, 0.0)
        b.edge(f"skip{i}", f"x{i-1}", x, "residual_add", width, width, 0.0, True)
    return b.build(f"x{depth}")


# (expand, channels, repeats, hw) per stage; the first block of each stage is stride 2.
_MBV2_STAGES = ((1, 16, 1, 3136), (6, 24, 2, 784), (6, 32, 3, 196), (6, 64, 2, 49), (6, 96, 2, 49))


def mobilenet_like(width_mult: float = 1.0) -> SupernetGraph:
    """A reduced MobileNet-v2 style supernet of inverted residual blocks."""
    b = _Builder("image")
    c0 = max(8, int(32 * width_mult))
    stem = b.node("stem")
    b.edge("stem", "image", stem, "io", 3, c0, _conv_cost(3, 3, c0, 12544), True)
    src, c = stem, c0
    for s, (t, ch, n, hw) in enumerate(_MBV2_STAGES):
        ch = max(8, int(ch * width_mult))
        for r in range(n):
            first = r == 0
            hidden_in = c
            if first:
                # Width-changing block: no skip, every op is a down-sample layer.
                src = _inverted_residual(b, f"s{s}b{r}", src, hidden_in, t, hw, skip=False, c_out=ch)
            else:
                src = _inverted_residual(b, f"s{s}b{r}", src, ch, t, hw, skip=True)
            c = ch
    pooled = b.node("pooled")
    b.edge("pool", src, pooled, "pool", c, c, c * 49, True)
    logits = b.node("logits")
    b.edge("head", pooled, logits, "io", c, 10, 2 * c * 10, True)
    return b.build(logits)


def resnet_like(blocks: tuple[int, ...] = (2, 2, 2), base: int = 16) -> SupernetGraph:
    """A small ResNet of BasicBlocks; the first block of later stages changes width."""
    b = _Builder("image")
    stem = b.node("stem")
    b.edge("stem", "image", stem, "io", 3, base, _conv_cost(3, 3, base, 1024), True)
    src, c, hw = stem, base, 1024
    for s, n in enumerate(blocks):
        ch = base * 2**s
        if s:
            hw //= 4
        for r in range(n):
            src = _basic_block(b, f"s{s}b{r}", src, c, ch, hw)
            c = ch
    pooled = b.node("pooled")
    b.edge("pool", src, pooled, "pool", c, c, c * hw, True)
    logits = b.node("logits")
    b.edge("head", pooled, logits, "io", c, 10, 2 * c * 10, True)
    return b.build(logits)


def branchy_mlp(d_in: int = 8, width: int = 32, n_classes: int = 4, stages: int = 3) -> SupernetGraph:
    """Multi-branch MLP used by the toy trainer.

    Each stage offers a deep branch (two linear layers through ``a{j}``) and a
    shallow branch (one linear layer), summed at ``s{j}``.
    """
    b = _Builder("x")
    s0 = b.node("s0")
    b.edge("stem", "x", s0, "io", d_in, width, 2 * d_in * width, True)
    prev = s0
    for j in range(1, stages + 1):
        a = b.node(f"a{j}")
        s = b.node(f"s{j}")
        b.edge(f"deep{j}a", prev, a, "linear", width, width, 2 * width * width)
        b.edge(f"deep{j}b", a, s, "linear", width, width, 2 * width * width)
        b.edge(f"shallow{j}", prev, s, "linear", width, width, 2 * width * width)
        prev = s
    out = b.node("logits")
    b.edge("head", prev, out, "io", width, n_classes, 2 * width * n_classes, True)
    return b.build(out)


TEMPLATES: dict[str, Callable[[], SupernetGraph]] = {
    "chain3": chain,
    "inverted_residual": inverted_residual,
    "basic_residual": basic_residual,
    "residual_mlp": residual_mlp,
    "mobilenet_like": mobilenet_like,
    "resnet_like": resnet_like,
    "branchy_mlp": branchy_mlp,
}


def template(name: str) -> SupernetGraph:
    try:
        return TEMPLATES[name]()
    except KeyError:
        raise KeyError(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None
