"""Encoder / multi-stream messaging processor / decoder on an :class:`EarthGraph`.

The forward pass is built from :mod:`nestcast.tensorcore` primitives, so
gradients of any scalar of the output w.r.t. every parameter come from
``Tensor.backward``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensorcore as tc
from .meshgraph import EarthGraph
from .tensorcore import ParamStore, Segments, Tensor

NODE_FEATS = 3
EDGE_FEATS = 4


@dataclass
class NetworkConfig:
    latent_dim: int = 32
    n_msm_blocks: int = 4
    n_heads: int = 4
    gate_dim: int | None = None
    gate_hidden: int = 64
    attn_hidden: int = 64
    n_channels: int = 4
    in_channels: int | None = None
    messaging: str = "msm"
    predict_increment: bool = True

    def __post_init__(self):
        if self.gate_dim is None:
            self.gate_dim = self.latent_dim
        if self.in_channels is None:
            self.in_channels = self.n_channels
        for name in ("latent_dim", "n_heads", "gate_dim", "gate_hidden", "attn_hidden", "n_channels", "in_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_msm_blocks < 0:
            raise ValueError("n_msm_blocks must be >= 0")
        if self.latent_dim % self.gate_dim:
            raise ValueError(
                f"gate_dim {self.gate_dim} must divide latent_dim {self.latent_dim} "
                "so gates can be tiled onto the edge/node features"
            )
        if self.predict_increment and self.in_channels < self.n_channels:
            raise ValueError("predict_increment needs in_channels >= n_channels")
        if self.messaging not in ("msm", "mlp"):
            raise ValueError(f"unknown messaging {self.messaging!r}")

    @property
    def gate_out(self) -> int:
        return 3 * self.n_heads * self.gate_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentState:
    grid: Tensor
    mesh: Tensor
    mesh_edges: Tensor
    g2m: Tensor
    m2g: Tensor


class GraphIndex:
    """Segment bookkeeping for one graph, built once and reused every step."""

    def __init__(self, graph: EarthGraph):
        self.graph = graph
        ng, nm = graph.n_grid, graph.n_mesh
        self.n_grid, self.n_mesh = ng, nm
        self.mesh_src = Segments(graph.mesh_edges[:, 0], nm)
        self.mesh_dst = Segments(graph.mesh_edges[:, 1], nm)
        self.g2m_src = Segments(graph.g2m[:, 0], ng)
        self.g2m_dst = Segments(graph.g2m[:, 1], nm)
        self.m2g_src = Segments(graph.m2g[:, 0], nm)
        self.m2g_dst = Segments(graph.m2g[:, 1], ng)


def graph_index(graph: EarthGraph) -> GraphIndex:
    idx = getattr(graph, "_index", None)
    if idx is None:
        idx = GraphIndex(graph)
        graph._index = idx
    return idx


# --------------------------------------------------------------------------
# parameters


def _mlp_params(ps: ParamStore, prefix: str, fan_in: int, out: int):
    ps.uniform(f"{prefix}.W", (out, fan_in), fan_in)
    ps.uniform(f"{prefix}.b", (out,), fan_in)
    ps.constant(f"{prefix}.ln.gain", (out,), 1.0)
    ps.constant(f"{prefix}.ln.bias", (out,), 0.0)


def _esmlp_params(ps: ParamStore, prefix: str, d_edge: int, d_src: int, d_dst: int, latent: int):
    ps.uniform(f"{prefix}.We", (latent, d_edge), d_edge)
    ps.uniform(f"{prefix}.Ws", (latent, d_src), d_src)
    ps.uniform(f"{prefix}.Wd", (latent, d_dst), d_dst)
    ps.uniform(f"{prefix}.bd", (latent,), d_dst)
    ps.uniform(f"{prefix}.Wout", (latent, latent), latent)
    ps.uniform(f"{prefix}.bout", (latent,), latent)
    ps.constant(f"{prefix}.ln.gain", (latent,), 1.0)
    ps.constant(f"{prefix}.ln.bias", (latent,), 0.0)


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float64) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) weights, unit LayerNorm gains, zero LN biases."""
    L = cfg.latent_dim
    ps = ParamStore(dtype, seed)
    _mlp_params(ps, "embed.grid", cfg.in_channels, L)
    _mlp_params(ps, "embed.mesh", NODE_FEATS, L)
    _mlp_params(ps, "embed.mesh_edge", EDGE_FEATS, L)
    _mlp_params(ps, "embed.g2m", EDGE_FEATS, L)
    _mlp_params(ps, "embed.m2g", EDGE_FEATS, L)

    _esmlp_params(ps, "encoder.esmlp", L, L, L, L)
    _mlp_params(ps, "encoder.mlp_mesh", 2 * L, L)
    _mlp_params(ps, "encoder.mlp_grid", L, L)

    for k in range(cfg.n_msm_blocks):
        p = f"block{k}"
        _esmlp_params(ps, f"{p}.esmlp", L, L, L, L)
        if cfg.messaging == "msm":
            ps.uniform(f"{p}.gate1.W", (cfg.gate_hidden, 3 * L), 3 * L)
            ps.uniform(f"{p}.gate1.b", (cfg.gate_hidden,), 3 * L)
            ps.uniform(f"{p}.gate2.W", (cfg.gate_out, cfg.gate_hidden), cfg.gate_hidden)
            ps.uniform(f"{p}.gate2.b", (cfg.gate_out,), cfg.gate_hidden)
            ps.uniform(f"{p}.attn1.W", (cfg.attn_hidden, L), L)
            ps.uniform(f"{p}.attn1.b", (cfg.attn_hidden,), L)
            ps.uniform(f"{p}.attn2.W", (cfg.n_heads, cfg.attn_hidden), cfg.attn_hidden)
            ps.uniform(f"{p}.attn2.b", (cfg.n_heads,), cfg.attn_hidden)
            _mlp_params(ps, f"{p}.mlp_node", cfg.n_heads * L + L, L)
        else:
            _mlp_params(ps, f"{p}.mlp_node", 2 * L, L)

    _esmlp_params(ps, "decoder.esmlp", L, L, L, L)
    _mlp_params(ps, "decoder.mlp_grid", 2 * L, L)
    ps.uniform("decoder.out1.W", (L, L), L)
    ps.uniform("decoder.out1.b", (L,), L)
    ps.uniform("decoder.out2.W", (cfg.n_channels, L), L)
    ps.uniform("decoder.out2.b", (cfg.n_channels,), L)
    return ps


def zero_update_branches(params: ParamStore, cfg: NetworkConfig) -> None:
    """Make every residual branch output exactly zero (LN affine to 0, gates shut)."""
    for path, t in params.items():
        if path.startswith("embed.") or path.startswith("decoder.out"):
            continue
        if path.endswith(".ln.gain") or path.endswith(".ln.bias"):
            t.data[...] = 0.0
    for k in range(cfg.n_msm_blocks):
        if cfg.messaging == "msm":
            params[f"block{k}.gate2.W"].data[...] = 0.0
            params[f"block{k}.gate2.b"].data[...] = -1e3


# --------------------------------------------------------------------------
# building blocks


def mlp(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    """LN(SiLU(Linear(x)))."""
    y = tc.silu(tc.linear(x, params[f"{prefix}.W"], params[f"{prefix}.b"]))
    return tc.layernorm(y, params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])


def _esmlp_tail(params, prefix, e, s, d):
    h = tc.add(tc.add(tc.linear(e, params[f"{prefix}.We"]), s), d)
    y = tc.linear(tc.silu(h), params[f"{prefix}.Wout"], params[f"{prefix}.bout"])
    return tc.layernorm(y, params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])


def esmlp(params: ParamStore, prefix: str, edge: Tensor, src: Tensor, dst: Tensor) -> Tensor:
    """LN(W_out SiLU(W_e e + W_s h_s + W_d h_d + b_d) + b_out) on row-aligned inputs."""
    s = tc.linear(src, params[f"{prefix}.Ws"])
    d = tc.linear(dst, params[f"{prefix}.Wd"], params[f"{prefix}.bd"])
    return _esmlp_tail(params, prefix, edge, s, d)


def esmlp_graph(params, prefix, edge, h_src, h_dst, src: Segments, dst: Segments) -> Tensor:
    """:func:`esmlp` with the node projections done per node, then gathered per edge."""
    s = tc.gather_seg(tc.linear(h_src, params[f"{prefix}.Ws"]), src)
    d = tc.gather_seg(tc.linear(h_dst, params[f"{prefix}.Wd"], params[f"{prefix}.bd"]), dst)
    return _esmlp_tail(params, prefix, edge, s, d)


def _expand(x: Tensor, lead: tuple) -> Tensor:
    if not lead:
        return x
    data = np.broadcast_to(x.data, lead + x.shape)
    return tc._op(data, (x,), lambda g: (g.reshape((-1,) + x.shape).sum(axis=0),))


def _const(a, dtype) -> Tensor:
    return Tensor(np.asarray(a, dtype=dtype))


# --------------------------------------------------------------------------
# stages


def field_to_nodes(z: np.ndarray) -> np.ndarray:
    """[..., C, H, W] -> [..., H*W, C]."""
    C, H, W = z.shape[-3:]
    return np.moveaxis(z.reshape(z.shape[:-2] + (H * W,)), -2, -1)


def nodes_to_field(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """[..., H*W, C] -> [..., C, H, W]."""
    return np.moveaxis(x, -1, -2).reshape(x.shape[:-2] + (x.shape[-1], h, w))


def embed(params: ParamStore, cfg: NetworkConfig, graph: EarthGraph, state: np.ndarray) -> LatentState:
    """Five independent LN(SiLU(Linear)) embedders for grid, mesh and the three edge sets."""
    state = np.asarray(state)
    if state.shape[-3:] != (cfg.in_channels,) + graph.shape:
        raise ValueError(
            f"state shape {state.shape[-3:]} does not match (channels, H, W) = "
            f"{(cfg.in_channels,) + graph.shape}"
        )
    dt = params.dtype
    lead = state.shape[:-3]
    grid = mlp(params, "embed.grid", _const(field_to_nodes(state), dt))
    mesh = mlp(params, "embed.mesh", _const(graph.mesh_node_feats, dt))
    me = mlp(params, "embed.mesh_edge", _const(graph.mesh_edge_feats, dt))
    g2m = mlp(params, "embed.g2m", _const(graph.g2m_feats, dt))
    m2g = mlp(params, "embed.m2g", _const(graph.m2g_feats, dt))
    return LatentState(grid, _expand(mesh, lead), _expand(me, lead), _expand(g2m, lead), _expand(m2g, lead))


def encode_grid2mesh(params: ParamStore, ls: LatentState, graph: EarthGraph) -> LatentState:
    gi = graph_index(graph)
    e_upd = esmlp_graph(params, "encoder.esmlp", ls.g2m, ls.grid, ls.mesh, gi.g2m_src, gi.g2m_dst)
    agg = tc.segment_sum(e_upd, gi.g2m_dst)
    mesh_upd = mlp(params, "encoder.mlp_mesh", tc.concat([ls.mesh, agg]))
    grid_upd = mlp(params, "encoder.mlp_grid", ls.grid)
    return LatentState(
        tc.add(ls.grid, grid_upd),
        tc.add(ls.mesh, mesh_upd),
        ls.mesh_edges,
        tc.add(ls.g2m, e_upd),
        ls.m2g,
    )


def dmg_edge_update(params: ParamStore, cfg: NetworkConfig, ls: LatentState, graph: EarthGraph, block: int) -> Tensor:
    """Dynamic multi-head gated edge update; the result already includes the residual ``+ e``."""
    gi = graph_index(graph)
    p = f"block{block}"
    e = ls.mesh_edges
    hs = tc.gather_seg(ls.mesh, gi.mesh_src)
    hd = tc.gather_seg(ls.mesh, gi.mesh_dst)
    c = tc.concat([e, hs, hd])
    z = tc.silu(tc.linear(c, params[f"{p}.gate1.W"], params[f"{p}.gate1.b"]))
    g = tc.sigmoid(tc.linear(z, params[f"{p}.gate2.W"], params[f"{p}.gate2.b"]))
    e_upd = esmlp(params, f"{p}.esmlp", e, hs, hd)
    return tc.add(tc.gated_combine(g, e_upd, hs, hd, cfg.n_heads), e)


def attention_weights(params: ParamStore, e_new: Tensor, graph: EarthGraph, block: int) -> Tensor:
    gi = graph_index(graph)
    p = f"block{block}"
    a = tc.silu(tc.linear(e_new, params[f"{p}.attn1.W"], params[f"{p}.attn1.b"]))
    a = tc.sigmoid(tc.linear(a, params[f"{p}.attn2.W"], params[f"{p}.attn2.b"]))
    return tc.segment_softmax(a, gi.mesh_dst)


def mha_node_update(params: ParamStore, cfg: NetworkConfig, h: Tensor, e_new: Tensor, graph: EarthGraph, block: int) -> Tensor:
    """Multi-head attention aggregation of incoming edges; includes the residual ``+ h``."""
    gi = graph_index(graph)
    alpha = attention_weights(params, e_new, graph, block)
    M = tc.segment_weighted_sum(alpha, e_new, gi.mesh_dst)
    return tc.add(mlp(params, f"block{block}.mlp_node", tc.concat([M, h])), h)


def mlp_message_block(params: ParamStore, ls: LatentState, graph: EarthGraph, block: int) -> LatentState:
    """Ablation processor: plain edge MLP plus sum aggregation, no gates or attention."""
    gi = graph_index(graph)
    p = f"block{block}"
    e_upd = esmlp_graph(params, f"{p}.esmlp", ls.mesh_edges, ls.mesh, ls.mesh, gi.mesh_src, gi.mesh_dst)
    agg = tc.segment_sum(e_upd, gi.mesh_dst)
    h_upd = mlp(params, f"{p}.mlp_node", tc.concat([agg, ls.mesh]))
    return LatentState(ls.grid, tc.add(ls.mesh, h_upd), tc.add(ls.mesh_edges, e_upd), ls.g2m, ls.m2g)


def msm_block(params: ParamStore, cfg: NetworkConfig, ls: LatentState, graph: EarthGraph, block: int) -> LatentState:
    if cfg.messaging == "mlp":
        return mlp_message_block(params, ls, graph, block)
    e_new = dmg_edge_update(params, cfg, ls, graph, block)
    h_new = mha_node_update(params, cfg, ls.mesh, e_new, graph, block)
    return LatentState(ls.grid, h_new, e_new, ls.g2m, ls.m2g)


def decode_mesh2grid(params: ParamStore, ls: LatentState, graph: EarthGraph) -> Tensor:
    """Mesh -> grid; returns per-node outputs [..., H*W, C]."""
    gi = graph_index(graph)
    e_upd = esmlp_graph(params, "decoder.esmlp", ls.m2g, ls.mesh, ls.grid, gi.m2g_src, gi.m2g_dst)
    agg = tc.segment_sum(e_upd, gi.m2g_dst)
    grid = tc.add(ls.grid, mlp(params, "decoder.mlp_grid", tc.concat([ls.grid, agg])))
    y = tc.silu(tc.linear(grid, params["decoder.out1.W"], params["decoder.out1.b"]))
    return tc.linear(y, params["decoder.out2.W"], params["decoder.out2.b"])


def _check_finite(stage: str, *ts: Tensor):
    for t in ts:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"non-finite values after stage '{stage}'")


def forward_nodes(params: ParamStore, cfg: NetworkConfig, graph: EarthGraph, z: np.ndarray) -> Tensor:
    """Full model; output in node layout [..., H*W, C] as a differentiable Tensor."""
    ls = embed(params, cfg, graph, z)
    _check_finite("embed", ls.grid, ls.mesh, ls.mesh_edges)
    ls = encode_grid2mesh(params, ls, graph)
    _check_finite("encode", ls.grid, ls.mesh)
    for k in range(cfg.n_msm_blocks):
        ls = msm_block(params, cfg, ls, graph, k)
        _check_finite(f"block{k}", ls.mesh, ls.mesh_edges)
    out = decode_mesh2grid(params, ls, graph)
    if cfg.predict_increment:
        # the state being advanced is the trailing n_channels of the input
        prev = field_to_nodes(np.asarray(z)[..., -cfg.n_channels :, :, :])
        out = tc.add(out, _const(prev, params.dtype))
    _check_finite("decode", out)
    return out


class Forecaster:
    """A parameter set bound to a graph: ``model(z_t) -> z_{t+1}`` on numpy fields."""

    def __init__(self, cfg: NetworkConfig, graph: EarthGraph, params: ParamStore | None = None, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.graph = graph
        self.params = params if params is not None else init_params(cfg, seed, dtype)

    def forward_nodes(self, z: np.ndarray) -> Tensor:
        return forward_nodes(self.params, self.cfg, self.graph, z)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        h, w = self.graph.shape
        return nodes_to_field(self.forward_nodes(z).data, h, w)


def forward(params: ParamStore, cfg: NetworkConfig, graph: EarthGraph, z_t: np.ndarray) -> np.ndarray:
    h, w = graph.shape
    return nodes_to_field(forward_nodes(params, cfg, graph, z_t).data, h, w)
