"""The learning functional: data fit over interpolated frames + penalties.

For a sequence of observed histograms h_1..h_P with timestamps t_i, every
frame is compared against the displacement interpolation of the sequence
endpoints at its own timestamp (the endpoints themselves reconstruct to
K h_1 and K h_P, so they contribute a diffusion-blur floor, not zero).
The total over all sequences is

    E(w) = sum_seq sum_i loss(interp(h_1, h_P, t_i), h_i)
         + lambda_c * sum_e (w_e - 1)^2
         + lambda_s * ||D w||^2

optimized in the log domain: the caller supplies wlog, the gradient is
returned with respect to wlog (chain rule g = dE/dw * w).

Reduction order is fixed and documented for bit-reproducibility: frames
accumulate in index order into a per-sequence subtotal, subtotals then
accumulate in sequence order, regularizers are added last.  Worker
threads only change who computes a frame, never the summation order.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .barycenter import barycenter, barycenter_backward
from .diffusion import assemble
from .grids import GridSpec, parallel_difference

LOSS_KINDS = ("l1", "l2", "kl")


@dataclass(frozen=True)
class Sequence:
    """Observed frames (P, N) plus timestamps in [0, 1]."""

    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 2:
            raise ValueError("a sequence needs at least two frames")
        if np.any(frames < 0):
            raise ValueError("frames must be nonnegative")
        if np.any(np.abs(frames.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("every frame must sum to 1 within 1e-12")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if ts.shape != (frames.shape[0],):
            raise ValueError("need one timestamp per frame")
        if ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must increase from 0 to 1")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def default_timestamps(num_frames: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, num_frames)


@dataclass(frozen=True)
class Objective:
    grid: GridSpec
    sequences: tuple
    epsilon: float
    substeps: int
    sinkhorn_iters: int
    loss: str = "l2"
    lambda_c: float = 0.0
    lambda_s: float = 1.0

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError("unknown loss kind %r" % (self.loss,))
        if self.lambda_c < 0 or self.lambda_s < 0:
            raise ValueError("regularizer coefficients must be >= 0")
        n = self.grid.num_vertices
        for seq in self.sequences:
            if seq.frames.shape[1] != n:
                raise ValueError("sequence frame length does not match the grid")
        object.__setattr__(self, "sequences", tuple(self.sequences))


@dataclass(frozen=True)
class ObjectiveParts:
    data_fit: float
    reg_constant: float
    reg_smooth: float


# --- losses --------------------------------------------------------------


def loss_value(kind: str, recon, obs) -> float:
    """Reconstruction loss. KL is evaluated as sum(obs log(obs/recon) - obs + recon),
    the only order that stays finite when observations carry zeros."""
    recon = np.asarray(recon, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if kind == "l1":
        return float(np.abs(recon - obs).sum())
    if kind == "l2":
        diff = recon - obs
        return float(diff @ diff)
    if kind == "kl":
        if np.any(recon <= 0):
            raise ValueError("KL needs a strictly positive reconstruction")
        pos = obs > 0
        val = float(np.sum(obs[pos] * np.log(obs[pos] / recon[pos])))
        val += float(np.sum(recon - obs))
        return val
    raise ValueError("unknown loss kind %r" % (kind,))


def loss_grad(kind: str, recon, obs) -> np.ndarray:
    """Gradient of loss_value with respect to the reconstruction."""
    recon = np.asarray(recon, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if kind == "l1":
        return np.sign(recon - obs)
    if kind == "l2":
        return 2.0 * (recon - obs)
    if kind == "kl":
        if np.any(recon <= 0):
            raise ValueError("KL needs a strictly positive reconstruction")
        return 1.0 - obs / recon
    raise ValueError("unknown loss kind %r" % (kind,))


# --- regularizers ----------------------------------------------------------


def reg_constant(w):
    """Pull toward the unweighted grid: sum (w_e - 1)^2 and its gradient."""
    w = np.asarray(w, dtype=np.float64)
    diff = w - 1.0
    return float(diff @ diff), 2.0 * diff


def reg_smooth(spec: GridSpec, w):
    """Neighborhood smoothness ||D w||^2 and its gradient 2 D(D w)."""
    dw = parallel_difference(spec, w)
    return float(dw @ dw), 2.0 * parallel_difference(spec, dw)


# --- full objective ---------------------------------------------------------


def _frame_term(op, iters: int, seq: Sequence, i: int, kind: str):
    endpoints = np.stack([seq.frames[0], seq.frames[-1]])
    t = seq.timestamps[i]
    lam = np.array([1.0 - t, t])
    recon, tape = barycenter(op, endpoints, lam, iters, record=True)
    val = loss_value(kind, recon, seq.frames[i])
    gbar = loss_grad(kind, recon, seq.frames[i])
    return val, barycenter_backward(tape, gbar)


def evaluate_with_grad(obj: Objective, wlog, threads: int = 1, with_parts: bool = False):
    """Objective value and gradient with respect to log-weights.

    One operator is assembled and factorized per evaluation and shared by
    every frame; with threads > 1 the frames are computed concurrently but
    reduced in the fixed documented order, so results are bit-identical at
    any thread count.
    """
    wlog = np.asarray(wlog, dtype=np.float64)
    if not np.isfinite(wlog).all():
        raise ValueError("non-finite log-weights")
    w = np.exp(wlog)
    op = assemble(obj.grid, w, obj.epsilon, obj.substeps)

    jobs = [(seq, i) for seq in obj.sequences for i in range(seq.num_frames)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(
                lambda job: _frame_term(op, obj.sinkhorn_iters, job[0], job[1], obj.loss),
                jobs))
    else:
        results = [_frame_term(op, obj.sinkhorn_iters, seq, i, obj.loss)
                   for seq, i in jobs]

    data_fit = 0.0
    dw_data = np.zeros_like(w)
    k = 0
    for seq in obj.sequences:
        sub_val = 0.0
        sub_dw = np.zeros_like(w)
        for _ in range(seq.num_frames):
            val, dwi = results[k]
            sub_val += val
            sub_dw += dwi
            k += 1
        data_fit += sub_val
        dw_data += sub_dw

    fc, fc_grad = reg_constant(w)
    fs, fs_grad = reg_smooth(obj.grid, w)
    total = data_fit + obj.lambda_c * fc + obj.lambda_s * fs
    dw_total = dw_data + obj.lambda_c * fc_grad + obj.lambda_s * fs_grad
    grad = dw_total * w
    if with_parts:
        return total, grad, ObjectiveParts(data_fit, fc, fs)
    return total, grad


# --- sequence files ---------------------------------------------------------


def save_sequence(dirpath, spec: GridSpec, seq: Sequence) -> None:
    """One GMLT tensor per frame (grid-shaped) plus a manifest."""
    os.makedirs(dirpath, exist_ok=True)
    names = []
    for i in range(seq.num_frames):
        name = "frame_%03d.gmlt" % i
        tensorio.write_tensor(os.path.join(dirpath, name),
                              seq.frames[i].reshape(spec.dims))
        names.append(name)
    manifest = {
        "dims": list(spec.dims),
        "frames": names,
        "timestamps": [float(t) for t in seq.timestamps],
    }
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_sequence(dirpath):
    """Read a sequence directory back; returns (GridSpec, Sequence)."""
    with open(os.path.join(dirpath, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = GridSpec(tuple(int(n) for n in manifest["dims"]))
    frames = []
    for name in manifest["frames"]:
        t = tensorio.read_tensor(os.path.join(dirpath, name))
        if t.shape != spec.dims:
            raise ValueError("frame %s has shape %r, expected %r"
                             % (name, t.shape, spec.dims))
        frames.append(t.ravel())
    seq = Sequence(np.stack(frames), np.asarray(manifest["timestamps"], dtype=np.float64))
    return spec, seq
