"""Alternating optimization of the reconstructor and the kernel network.

The reconstructor never sees the raw field. Its input is the field divided by
a completed kernel: the analytic kernel outside the cone mask and, inside it,
the network's kernel (symmetrized so the quotient stays real) with the analytic
sign and its magnitude clipped to ``[eps, t_cone]``. The network output enters
that input as a constant, so the supervised loss has no gradient with respect
to the network parameters; those are driven by the dipole loss alone.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .classical import sign0
from .dipole import DipoleKernel, Orientation, cone_mask, dipole_kernel
from .errors import EmptyDataset, GridMismatch
from .grid import Spectrum3D, Volume3D, fft_forward, fft_inverse, mirror_index
from .losses import (
    HyperParams,
    loss_dc,
    loss_dipole,
    loss_fill,
    loss_inr,
    loss_qsmnet,
    loss_total,
    sum_gradients,
    weight_mask,
)
from .optim import Adam
from .phantom import orientation_sweep
from .recon import ConvReconstructor, recon_backward, recon_forward
from .siren import SirenNet, kernel_batch, siren_backward, siren_forward

log = logging.getLogger(__name__)

RECON = "recon"
INR = "inr"
HISTORY_COLUMNS = ("step", "phase", "l_qsmnet", "l_inr", "l_fill", "l_dc", "l_dipole", "l_total")


@dataclass(frozen=True)
class TrainConfig:
    siren_depth: int = 5
    siren_width: int = 128
    omega0: float = 30.0
    channels: tuple = (1, 8, 8, 1)
    lr_recon: float = 1e-3
    lr_inr: float = 1e-4
    recon_per_cycle: int = 1
    inr_per_cycle: int = 1
    inr_phase_objective: str = "total"
    dc_mode: str = "as_written"
    pad_cap_deg: float = 30.0

    def __post_init__(self):
        if self.inr_phase_objective not in ("total", "dipole"):
            raise ValueError(f"unknown inr_phase_objective {self.inr_phase_objective!r}")
        if self.dc_mode not in ("as_written", "per_orientation_fields"):
            raise ValueError(f"unknown dc_mode {self.dc_mode!r}")
        if self.recon_per_cycle < 1 or self.inr_per_cycle < 1:
            raise ValueError("alternation ratio entries must be >= 1")
        object.__setattr__(self, "channels", tuple(self.channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class TrainState:
    recon: ConvReconstructor
    siren: SirenNet
    opt_recon: Adam
    opt_inr: Adam
    hp: HyperParams
    cfg: TrainConfig
    iteration: int = 0
    phase: str = RECON
    phase_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    theta_version: int = 0
    _batches: dict = field(default_factory=dict, repr=False)
    _forward_key: tuple = field(default=None, repr=False)


def new_state(hp: HyperParams, seed: int, cfg: TrainConfig = TrainConfig()) -> TrainState:
    rng = np.random.default_rng(seed)
    siren = SirenNet(cfg.siren_depth, cfg.siren_width, cfg.omega0, rng=rng)
    recon = ConvReconstructor(cfg.channels, rng=rng)
    return TrainState(
        recon=recon,
        siren=siren,
        opt_recon=Adam(recon.params, lr=cfg.lr_recon),
        opt_inr=Adam(siren.params, lr=cfg.lr_inr),
        hp=hp,
        cfg=cfg,
    )


def param_hash(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def phase_for_step(step: int, cfg: TrainConfig) -> str:
    cycle = cfg.recon_per_cycle + cfg.inr_per_cycle
    return RECON if step % cycle < cfg.recon_per_cycle else INR


def completed_kernel(d_ref: DipoleKernel, d_hat: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Analytic kernel with its cone bins replaced by the network's magnitudes."""
    cone = cone_mask(d_ref, hp.t_cone).flags
    sym = 0.5 * (d_hat + mirror_index(d_hat))
    mag = np.maximum(hp.eps, np.minimum(np.abs(sym), hp.t_cone))
    return np.where(cone, sign0(d_ref.values) * mag, d_ref.values)


def precondition(field: Volume3D, d_ref: DipoleKernel, d_hat: np.ndarray, hp: HyperParams) -> Volume3D:
    k = completed_kernel(d_ref, d_hat, hp)
    return fft_inverse(Spectrum3D(field.grid, fft_forward(field).data / k))


def kernel_orientations(primary: Orientation, data, hp: HyperParams, cfg: TrainConfig):
    """``hp.M`` orientations: the sample's, then other dataset ones, then cap fill-ins."""
    out = [primary]
    for _, _, o in data:
        if len(out) >= hp.M:
            break
        if o not in out:
            out.append(o)
    if len(out) < hp.M:
        for o in orientation_sweep(hp.M + len(out), cfg.pad_cap_deg, seed=0)[1:]:
            if len(out) >= hp.M:
                break
            if all(abs(float(np.dot(o.b, p.b))) < 1 - 1e-6 for p in out):
                out.append(o)
    return out[: hp.M]


def _validate(data):
    data = list(data)
    if not data:
        raise EmptyDataset("training needs at least one (field, label, orientation) triple")
    grid = data[0][0].grid
    for f, chi, _ in data:
        if f.grid != grid or chi.grid != grid:
            raise GridMismatch("all training volumes must share one grid")
    return data


def _dc_fields(sample_field, orients, data, cfg):
    if cfg.dc_mode == "as_written":
        return sample_field
    by_orient = {o: f for f, _, o in data}
    missing = [o for o in orients if o not in by_orient]
    if missing:
        raise ValueError(f"per_orientation_fields needs fields for {missing}")
    return [by_orient[o] for o in orients]


def _predicted_kernels(state: TrainState, grid, orients):
    key = (grid, tuple(orients))
    batch = state._batches.get(key)
    if batch is None:
        batch = kernel_batch(grid, orients)
        state._batches[key] = batch
    fkey = (key, state.theta_version)
    if state._forward_key == fkey and state.siren._cache is not None \
            and state.siren._cache[0] is batch:
        # parameters unchanged since the last forward on this batch
        out = state.siren._cache[3]
    else:
        out = siren_forward(state.siren, batch)
        state._forward_key = fkey
    n = grid.size
    kernels = [DipoleKernel(grid, o, out[i * n:(i + 1) * n].reshape(grid.dims))
               for i, o in enumerate(orients)]
    return batch, kernels


def train_step(state: TrainState, data) -> dict:
    """One update of whichever module the schedule selects; returns the logged row."""
    hp, cfg = state.hp, state.cfg
    step = state.iteration
    phase = phase_for_step(step, cfg)
    field_, label, orient = data[step % len(data)]
    grid = field_.grid

    orients = kernel_orientations(orient, data, hp, cfg)
    d_refs = [dipole_kernel(grid, o) for o in orients]
    w = weight_mask(d_refs[0], hp.tau)
    batch, d_hat = _predicted_kernels(state, grid, orients)

    x = precondition(field_, d_refs[0], d_hat[0].values, hp)
    chi_hat, rcache = recon_forward(state.recon, x)
    l_q, g_chi = loss_qsmnet(chi_hat, label, field_, d_refs[0], hp)
    l_inr, g_inr = loss_inr(d_hat, d_refs, w)
    l_fill, g_fill = loss_fill(d_hat, w, hp.eps)
    l_dc, _, g_dc = loss_dc(_dc_fields(field_, orients, data, cfg), chi_hat, d_hat, w)
    l_dip = loss_dipole(l_inr, l_fill, l_dc)
    l_tot = loss_total(l_q, l_dip, hp.lam)

    if phase == RECON:
        grads, _ = recon_backward(state.recon, rcache, g_chi)
        state.opt_recon.step(grads)
    else:
        scale = hp.lam if cfg.inr_phase_objective == "total" else 1.0
        g = sum_gradients(g_inr, g_fill, g_dc)
        dl_dout = np.concatenate([scale * gi.ravel() for gi in g])
        state.siren.zero_grad()
        siren_backward(state.siren, batch, dl_dout)
        state.opt_inr.step(state.siren.grads)
        state.theta_version += 1

    row = {"step": step, "phase": phase, "l_qsmnet": l_q, "l_inr": l_inr, "l_fill": l_fill,
           "l_dc": l_dc, "l_dipole": l_dip, "l_total": l_tot}
    state.history.append(row)
    state.phase_trace.append(phase)
    state.iteration += 1
    state.phase = phase_for_step(state.iteration, cfg)
    return row


def alternate_train(data, hp: HyperParams, steps: int, seed: int,
                    cfg: TrainConfig = TrainConfig(), state: TrainState = None,
                    callback=None) -> TrainState:
    """Run ``steps`` alternating updates (reconstructor first) and return the state.

    ``state`` continues an earlier run; ``callback(state, row)`` sees every step.
    """
    data = _validate(data)
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if state is None:
        state = new_state(hp, seed, cfg)
    for _ in range(steps):
        row = train_step(state, data)
        if callback is not None:
            callback(state, row)
        if row["step"] % 100 == 0:
            log.info("step %d %s L_total=%.6g", row["step"], row["phase"], row["l_total"])
    return state


def descent_violations(trace, window: int = 200, edge: int = 50) -> list[int]:
    """Start indices of sliding windows whose last ``edge`` losses average above their first ``edge``."""
    a = np.asarray(trace, dtype=np.float64)
    if len(a) < window:
        return []
    c = np.concatenate([[0.0], np.cumsum(a)])
    starts = np.arange(len(a) - window + 1)
    head = c[starts + edge] - c[starts]
    tail = c[starts + window] - c[starts + window - edge]
    return [int(s) for s in starts[tail > head]]


def predicted_kernel(state: TrainState, grid, orient: Orientation) -> DipoleKernel:
    out = siren_forward(state.siren, kernel_batch(grid, [orient]), keep_cache=False)
    return DipoleKernel(grid, orient, out.reshape(grid.dims))


def reconstruct(state: TrainState, field: Volume3D, orient: Orientation) -> Volume3D:
    """Frozen-model reconstruction of one field acquired at ``orient``."""
    d_ref = dipole_kernel(field.grid, orient)
    cone = cone_mask(d_ref, state.hp.t_cone).flags
    # only cone bins and their mirrors are read by the completed kernel
    needed = cone | mirror_index(cone)
    idx = np.flatnonzero(needed)
    d_hat = np.zeros(field.grid.dims)
    out = siren_forward(state.siren, kernel_batch(field.grid, [orient], idx), keep_cache=False)
    d_hat.flat[idx] = out
    x = precondition(field, d_ref, d_hat, state.hp)
    chi, _ = recon_forward(state.recon, x)
    return chi


def save_state(path, state: TrainState, extra_meta: dict = None):
    """Reconstructor, network and both optimizer states in one checkpoint file."""
    from .io import write_checkpoint

    arrays = {}
    for i, p in enumerate(state.recon.params):
        arrays[f"recon.{i}"] = p
    for i, p in enumerate(state.siren.params):
        arrays[f"siren.{i}"] = p
    for i, a in enumerate(state.opt_recon.state_arrays()):
        arrays[f"adam_recon.{i}"] = a
    for i, a in enumerate(state.opt_inr.state_arrays()):
        arrays[f"adam_inr.{i}"] = a
    meta = {
        "recon": state.recon.header(),
        "siren": state.siren.header(),
        "hp": state.hp.to_dict(),
        "cfg": state.cfg.to_dict(),
        "iteration": state.iteration,
        "theta_version": state.theta_version,
        "adam_t": [state.opt_recon.t, state.opt_inr.t],
    }
    if extra_meta:
        meta.update(extra_meta)
    write_checkpoint(path, arrays, meta)


def load_state(path) -> TrainState:
    from .io import read_checkpoint

    arrays, meta = read_checkpoint(path)
    try:
        cfg = TrainConfig(**meta["cfg"])
        hp = HyperParams(**meta["hp"])
        state = new_state(hp, 0, cfg)
        for prefix, params in (("recon", state.recon.params), ("siren", state.siren.params)):
            for i, p in enumerate(params):
                p[...] = arrays[f"{prefix}.{i}"]
        for prefix, opt, t in (("adam_recon", state.opt_recon, meta["adam_t"][0]),
                               ("adam_inr", state.opt_inr, meta["adam_t"][1])):
            n = 2 * len(opt.params)
            opt.load_state([arrays[f"{prefix}.{i}"] for i in range(n)], t)
        state.iteration = int(meta["iteration"])
        state.theta_version = int(meta["theta_version"])
        state.phase = phase_for_step(state.iteration, cfg)
    except (KeyError, TypeError, ValueError) as exc:
        from .errors import VolumeFormatError

        raise VolumeFormatError(f"{path}: checkpoint does not describe a training state ({exc})") from exc
    return state
