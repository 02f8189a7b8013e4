"""Hierarchical spatio-temporal recurrent encoder.

The encoder runs L recurrent layers over a fixed (frame, bone) grid of
Lie-vector entries.  Every cell (i, j) holds a hidden and a cell state
and is updated from layer l-1 state only, so all cells of a layer can
be computed in any order or at once.  Nine gates mix the cell's own
history with its temporal neighbors (frames i-1 and i+1), its spatial
predecessor along the kinematic chain (j-1), a per-frame global
spatial state g_s, and a per-bone global temporal state g_t:

    gate  = act(U p_ij + W [h_l, h_r, h] + Z h_sp + B g_s_i + G g_t_j + b)
    c_new = in.cand + l.c_left + f.c_same + r.c_right + s.c_sp
            + gs.c_gs_i + gt.c_gt_j
    h_new = out . tanh(c_new)

with sigmoid activations everywhere except the tanh candidate.  The
global states are LSTM-like summaries updated after each layer from
the new grid states; one parameter set is shared across frames, bones,
and layers, and the raw inputs p are re-fed at every layer.  Out-of-
grid neighbors contribute zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GATE_ORDER = ("in", "left", "same", "right", "spatial", "gs", "gt", "out", "cand")


@dataclass(frozen=True)
class ChainLayout:
    """How the K Lie entries split into kinematic chains.

    ``entry_counts[c]`` is the number of entries of chain c; entries
    are laid out chain-major, matching the Lie-vector column order.
    """

    entry_counts: tuple[int, ...]

    def __post_init__(self):
        if not self.entry_counts or any(k < 1 for k in self.entry_counts):
            raise ValueError("every chain needs at least one Lie entry")

    @property
    def num_entries(self) -> int:
        return sum(self.entry_counts)

    @classmethod
    def from_topology(cls, topo) -> "ChainLayout":
        return cls(tuple(topo.entry_counts()))

    def entry_chain(self) -> np.ndarray:
        """Chain id of each entry, shape (K,)."""
        return np.repeat(np.arange(len(self.entry_counts)), self.entry_counts)

    def spatial_prev(self) -> np.ndarray:
        """Within-chain predecessor entry of each entry, -1 at chain heads."""
        out = np.empty(self.num_entries, dtype=np.int64)
        z = 0
        for k in self.entry_counts:
            out[z] = -1
            for d in range(1, k):
                out[z + d] = z + d - 1
            z += k
        return out

    def decoder_groups(self) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
        """(trunk, arm, leg) chain ids for the structured decoder.

        Chain 0 is the trunk; the remaining chains split in half, first
        half arms, second half legs (for the five-chain human: arms are
        chains 1-2, legs chains 3-4).
        """
        rest = list(range(1, len(self.entry_counts)))
        half = (len(rest) + 1) // 2
        return (0,), tuple(rest[:half]), tuple(rest[half:])


@dataclass
class GateParams:
    """One gate head.  u: input, w: temporal neighbor triple, z: spatial
    predecessor, gs / gt: global states, bias."""

    u: Tensor   # (3, hidden)
    w: Tensor   # (3 * hidden, hidden)
    z: Tensor   # (hidden, hidden)
    gs: Tensor  # (hidden, hidden)
    gt: Tensor  # (hidden, hidden)
    bias: Tensor  # (hidden,)


@dataclass
class GlobalParams:
    """One global-state updater (temporal or spatial).

    w_c / z_c / b_c gate each grid cell's contribution, w_f / z_f / b_f
    is the forget gate on the previous global cell, w_o / z_o / b_o the
    output gate.  The w_* act on new layer-l grid states, the z_* on
    the previous global hidden state.
    """

    w_c: Tensor
    z_c: Tensor
    b_c: Tensor
    w_f: Tensor
    z_f: Tensor
    b_f: Tensor
    w_o: Tensor
    z_o: Tensor
    b_o: Tensor


@dataclass
class EncoderParams:
    embed_w: Tensor  # (3, hidden)
    embed_b: Tensor  # (hidden,)
    gates: dict[str, GateParams]
    gtemp: GlobalParams
    gspat: GlobalParams

    @property
    def hidden(self) -> int:
        return self.embed_w.data.shape[1]

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, sigma: float = 0.1) -> "EncoderParams":
        def w(*shape):
            return Tensor(rng.normal(0.0, sigma, size=shape))

        def b(*shape):
            return Tensor(np.zeros(shape))

        gates = {
            name: GateParams(
                u=w(3, hidden), w=w(3 * hidden, hidden), z=w(hidden, hidden),
                gs=w(hidden, hidden), gt=w(hidden, hidden), bias=b(hidden),
            )
            for name in GATE_ORDER
        }

        def glob():
            return GlobalParams(
                w_c=w(hidden, hidden), z_c=w(hidden, hidden), b_c=b(hidden),
                w_f=w(hidden, hidden), z_f=w(hidden, hidden), b_f=b(hidden),
                w_o=w(hidden, hidden), z_o=w(hidden, hidden), b_o=b(hidden),
            )

        return cls(
            embed_w=w(3, hidden), embed_b=b(hidden),
            gates=gates, gtemp=glob(), gspat=glob(),
        )

    def named(self) -> dict[str, Tensor]:
        out = {"enc.embed.w": self.embed_w, "enc.embed.b": self.embed_b}
        for name in GATE_ORDER:
            g = self.gates[name]
            for field in ("u", "w", "z", "gs", "gt", "bias"):
                out[f"enc.gate.{name}.{field}"] = getattr(g, field)
        for prefix, g in (("enc.gt", self.gtemp), ("enc.gs", self.gspat)):
            for field in ("w_c", "z_c", "b_c", "w_f", "z_f", "b_f", "w_o", "z_o", "b_o"):
                out[f"{prefix}.{field}"] = getattr(g, field)
        return out


@dataclass
class EncoderState:
    """Grid and global states after some number of layers.

    h and c are (T*K, hidden) with row i*K + j holding cell (i, j);
    g_t / c_gt are per bone (K, hidden), g_s / c_gs per frame
    (T, hidden).
    """

    h: Tensor
    c: Tensor
    g_t: Tensor
    c_gt: Tensor
    g_s: Tensor
    c_gs: Tensor
    frames: int
    entries: int


def init_states(p: np.ndarray, params: EncoderParams, layout: ChainLayout,
                global_temporal: bool = True, global_spatial: bool = True) -> EncoderState:
    """Layer-0 states: h = c = embed(p), globals = means of those."""
    T, K, hidden = p.shape[0], layout.num_entries, params.hidden
    if p.shape != (T, K, 3):
        raise ad.ShapeMismatch(f"expected ({T}, {K}, 3) inputs, got {p.shape}")
    flat = Tensor(p.reshape(T * K, 3), op="input")
    e = ad.add(ad.matmul(flat, params.embed_w), params.embed_b)
    grid = ad.reshape(e, (T, K, hidden))
    if global_temporal:
        g_t = ad.scale(ad.tsum(grid, axis=0), 1.0 / T)
    else:
        g_t = Tensor(np.zeros((K, hidden)))
    if global_spatial:
        g_s = ad.scale(ad.tsum(grid, axis=1), 1.0 / K)
    else:
        g_s = Tensor(np.zeros((T, hidden)))
    return EncoderState(h=e, c=e, g_t=g_t, c_gt=g_t, g_s=g_s, c_gs=g_s,
                        frames=T, entries=K)


def _fused_gate_params(params: EncoderParams):
    gates = [params.gates[name] for name in GATE_ORDER]
    return (
        ad.concat([g.u for g in gates], axis=1),
        ad.concat([g.w for g in gates], axis=1),
        ad.concat([g.z for g in gates], axis=1),
        ad.concat([g.gs for g in gates], axis=1),
        ad.concat([g.gt for g in gates], axis=1),
        ad.concat([g.bias for g in gates], axis=0),
    )


def _mask_mul(t: Tensor, mask: np.ndarray) -> Tensor:
    """Elementwise product with a constant 0/1 mask (no tape leaf)."""
    out_data = t.data * mask
    if not ad._grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        t.grad += g * mask

    return Tensor(out_data, "mask", (t,), vjp)


def _repeat_rows(t: Tensor, times: int) -> Tensor:
    """Each row repeated ``times`` consecutively: (R, h) -> (R*times, h)."""
    out_data = np.repeat(t.data, times, axis=0)
    if not ad._grad_enabled:
        return Tensor(out_data)
    r, h = t.data.shape

    def vjp(g):
        t.grad += g.reshape(r, times, h).sum(axis=1)

    return Tensor(out_data, "repeat", (t,), vjp)


def _tile_rows(t: Tensor, reps: int) -> Tensor:
    """The whole block stacked ``reps`` times: (R, h) -> (reps*R, h)."""
    out_data = np.tile(t.data, (reps, 1))
    if not ad._grad_enabled:
        return Tensor(out_data)
    r, h = t.data.shape

    def vjp(g):
        t.grad += g.reshape(reps, r, h).sum(axis=0)

    return Tensor(out_data, "tile", (t,), vjp)


def _shift_down(t: Tensor, rows: int, zeros: Tensor) -> Tensor:
    """Rows moved down by ``rows`` with a zero block on top."""
    return ad.concat([zeros, t[: t.data.shape[0] - rows]], axis=0)


def _shift_up(t: Tensor, rows: int, zeros: Tensor) -> Tensor:
    return ad.concat([t[rows:], zeros], axis=0)


def _layer_step(state: EncoderState, flat_p: Tensor, fused, params: EncoderParams,
                layout: ChainLayout, sp_mask: np.ndarray,
                global_temporal: bool, global_spatial: bool) -> EncoderState:
    T, K, hidden = state.frames, state.entries, params.hidden
    u_all, w_all, z_all, gs_all, gt_all, b_all = fused
    zrow_k = Tensor(np.zeros((K, hidden)))
    zrow_1 = Tensor(np.zeros((1, hidden)))

    h_left = _shift_down(state.h, K, zrow_k)
    h_right = _shift_up(state.h, K, zrow_k)
    h_sp = _mask_mul(_shift_down(state.h, 1, zrow_1), sp_mask)
    triple = ad.concat([h_left, h_right, state.h], axis=1)
    gs_rows = _repeat_rows(state.g_s, K)
    gt_rows = _tile_rows(state.g_t, T)

    pre = ad.add(
        ad.add(
            ad.add(ad.matmul(flat_p, u_all), ad.matmul(triple, w_all)),
            ad.add(ad.matmul(h_sp, z_all), ad.matmul(gs_rows, gs_all)),
        ),
        ad.add(ad.matmul(gt_rows, gt_all), b_all),
    )
    chunk = {name: pre[:, gi * hidden:(gi + 1) * hidden] for gi, name in enumerate(GATE_ORDER)}
    gate = {name: ad.sigmoid(chunk[name]) for name in GATE_ORDER[:-1]}
    cand = ad.tanh(chunk["cand"])

    c_left = _shift_down(state.c, K, zrow_k)
    c_right = _shift_up(state.c, K, zrow_k)
    c_sp = _mask_mul(_shift_down(state.c, 1, zrow_1), sp_mask)
    cgs_rows = _repeat_rows(state.c_gs, K)
    cgt_rows = _tile_rows(state.c_gt, T)

    c_new = ad.add(
        ad.add(
            ad.add(ad.mul(gate["in"], cand), ad.mul(gate["left"], c_left)),
            ad.add(ad.mul(gate["same"], state.c), ad.mul(gate["right"], c_right)),
        ),
        ad.add(
            ad.add(ad.mul(gate["spatial"], c_sp), ad.mul(gate["gs"], cgs_rows)),
            ad.mul(gate["gt"], cgt_rows),
        ),
    )
    h_new = ad.mul(gate["out"], ad.tanh(c_new))

    if global_temporal:
        g_t, c_gt = _global_step(
            h_new, c_new, state.g_t, state.c_gt, gt_rows, params.gtemp,
            (T, K, hidden), axis=0,
        )
    else:
        g_t, c_gt = state.g_t, state.c_gt
    if global_spatial:
        g_s, c_gs = _global_step(
            h_new, c_new, state.g_s, state.c_gs, gs_rows, params.gspat,
            (T, K, hidden), axis=1,
        )
    else:
        g_s, c_gs = state.g_s, state.c_gs

    return EncoderState(h=h_new, c=c_new, g_t=g_t, c_gt=c_gt, g_s=g_s, c_gs=c_gs,
                        frames=T, entries=K)


def _global_step(h_new: Tensor, c_new: Tensor, g_prev: Tensor, c_prev: Tensor,
                 g_prev_rows: Tensor, gp: GlobalParams, grid_shape, axis: int):
    """Shared update for the global temporal (axis 0, sums over frames)
    and global spatial (axis 1, sums over bones) states.

    Every grid cell's new cell state enters through its own sigmoid
    gate; the previous global cell passes a forget gate; an output
    gate on the mean of the new hidden states exposes the result.
    """
    n = grid_shape[axis]
    f_cell = ad.sigmoid(ad.add(
        ad.add(ad.matmul(h_new, gp.w_c), ad.matmul(g_prev_rows, gp.z_c)), gp.b_c,
    ))
    contrib = ad.tsum(ad.reshape(ad.mul(f_cell, c_new), grid_shape), axis=axis)
    h_mean = ad.scale(ad.tsum(ad.reshape(h_new, grid_shape), axis=axis), 1.0 / n)
    f_glob = ad.sigmoid(ad.add(
        ad.add(ad.matmul(h_mean, gp.w_f), ad.matmul(g_prev, gp.z_f)), gp.b_f,
    ))
    out = ad.sigmoid(ad.add(
        ad.add(ad.matmul(h_mean, gp.w_o), ad.matmul(g_prev, gp.z_o)), gp.b_o,
    ))
    c_next = ad.add(contrib, ad.mul(f_glob, c_prev))
    g_next = ad.mul(out, ad.tanh(c_next))
    return g_next, c_next


def encode(p: np.ndarray, params: EncoderParams, layout: ChainLayout,
           layers: int, global_temporal: bool = True,
           global_spatial: bool = True) -> EncoderState:
    """Run the full encoder over (T, K, 3) Lie-entry inputs.

    Disabling a global state replaces its gate inputs and cell
    contributions with zeros and skips its updates.
    """
    p = np.asarray(p, dtype=np.float64)
    state = init_states(p, params, layout, global_temporal, global_spatial)
    T, K = state.frames, state.entries
    flat_p = Tensor(p.reshape(T * K, 3), op="input")
    fused = _fused_gate_params(params)
    sp_mask = (layout.spatial_prev() >= 0).astype(np.float64)
    sp_mask = np.tile(sp_mask, T)[:, None]  # (T*K, 1)
    for _ in range(layers):
        state = _layer_step(state, flat_p, fused, params, layout, sp_mask,
                            global_temporal, global_spatial)
    return state


# ---------------------------------------------------------------------------
# per-cell reference path
#
# The vectorized encode above and this looped version must agree; the
# looped version makes the simultaneous-update contract directly
# testable, because each cell reads only layer l-1 state and so any
# visitation order gives bit-identical results.
# ---------------------------------------------------------------------------


def local_cell_step(i: int, j: int, h: np.ndarray, c: np.ndarray,
                    g_t: np.ndarray, c_gt: np.ndarray,
                    g_s: np.ndarray, c_gs: np.ndarray,
                    p: np.ndarray, params: EncoderParams,
                    layout: ChainLayout) -> tuple[np.ndarray, np.ndarray]:
    """One grid cell's update from layer l-1 arrays.

    h, c are (T, K, hidden); g_t, c_gt are (K, hidden); g_s, c_gs are
    (T, hidden); p is (T, K, 3).  Returns the cell's new (h, c).
    """
    T, K, hidden = h.shape
    zero = np.zeros(hidden)
    sp = layout.spatial_prev()[j]
    h_l = h[i - 1, j] if i > 0 else zero
    h_r = h[i + 1, j] if i + 1 < T else zero
    h_s = h[i, sp] if sp >= 0 else zero
    triple = np.concatenate([h_l, h_r, h[i, j]])

    def pre(gp: GateParams) -> np.ndarray:
        return (p[i, j] @ gp.u.data + triple @ gp.w.data + h_s @ gp.z.data
                + g_s[i] @ gp.gs.data + g_t[j] @ gp.gt.data + gp.bias.data)

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    g = {name: sig(pre(params.gates[name])) for name in GATE_ORDER[:-1]}
    cand = np.tanh(pre(params.gates["cand"]))
    c_l = c[i - 1, j] if i > 0 else zero
    c_r = c[i + 1, j] if i + 1 < T else zero
    c_s = c[i, sp] if sp >= 0 else zero
    c_new = (g["in"] * cand + g["left"] * c_l + g["same"] * c[i, j]
             + g["right"] * c_r + g["spatial"] * c_s
             + g["gs"] * c_gs[i] + g["gt"] * c_gt[j])
    h_new = g["out"] * np.tanh(c_new)
    return h_new, c_new


def _global_step_reference(h_new, c_new, g_prev, c_prev, gp: GlobalParams, axis: int):
    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    n = h_new.shape[axis]
    if axis == 0:
        prev_rows = g_prev[None, :, :]  # broadcast per bone
    else:
        prev_rows = g_prev[:, None, :]  # broadcast per frame
    f_cell = sig(h_new @ gp.w_c.data + prev_rows @ gp.z_c.data + gp.b_c.data)
    contrib = (f_cell * c_new).sum(axis=axis)
    h_mean = h_new.sum(axis=axis) / n
    f_glob = sig(h_mean @ gp.w_f.data + g_prev @ gp.z_f.data + gp.b_f.data)
    out = sig(h_mean @ gp.w_o.data + g_prev @ gp.z_o.data + gp.b_o.data)
    c_next = contrib + f_glob * c_prev
    return out * np.tanh(c_next), c_next


def encode_reference(p: np.ndarray, params: EncoderParams, layout: ChainLayout,
                     layers: int, global_temporal: bool = True,
                     global_spatial: bool = True,
                     cell_order=None) -> dict[str, np.ndarray]:
    """Looped numpy twin of ``encode``.

    ``cell_order`` is a sequence of (i, j) grid coordinates fixing the
    within-layer visitation order (default row-major).  Because cells
    only read layer l-1 state, the result is identical for every
    permutation.
    """
    p = np.asarray(p, dtype=np.float64)
    T, K, hidden = p.shape[0], layout.num_entries, params.hidden
    e = (p.reshape(T * K, 3) @ params.embed_w.data + params.embed_b.data)
    h = e.reshape(T, K, hidden).copy()
    c = h.copy()
    g_t = h.mean(axis=0) if global_temporal else np.zeros((K, hidden))
    c_gt = g_t.copy()
    g_s = h.mean(axis=1) if global_spatial else np.zeros((T, hidden))
    c_gs = g_s.copy()
    if cell_order is None:
        cell_order = [(i, j) for i in range(T) for j in range(K)]
    for _ in range(layers):
        h_new = np.empty_like(h)
        c_new = np.empty_like(c)
        for i, j in cell_order:
            h_new[i, j], c_new[i, j] = local_cell_step(
                i, j, h, c, g_t, c_gt, g_s, c_gs, p, params, layout)
        if global_temporal:
            g_t, c_gt = _global_step_reference(h_new, c_new, g_t, c_gt, params.gtemp, axis=0)
        if global_spatial:
            g_s, c_gs = _global_step_reference(h_new, c_new, g_s, c_gs, params.gspat, axis=1)
        h, c = h_new, c_new
    return {"h": h, "c": c, "g_t": g_t, "c_gt": c_gt, "g_s": g_s, "c_gs": c_gs}
