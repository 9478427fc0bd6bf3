"""Deterministic SVG figures (fixed hash salt, no date stamp)."""
from __future__ import annotations

import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "layered-ac"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_profiles(path, x, profiles, labels=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, q in enumerate(profiles):
        lab = labels[i] if labels else f"#{i}"
        ax.plot(x, q[:, 0], label=f"{lab} q1")
        ax.plot(x, q[:, 1], "--", label=f"{lab} q2")
    ax.set_xlabel("x")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_table(path, Ls, values, m2, rate, prefactor):
    """Strip levels against half-width, with the fitted gap on a log axis."""
    Ls = np.asarray(Ls, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(Ls) == 0:
        logger.warning("empty strip table; skipping %s", path)
        return None
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(Ls, values, "o-")
    a1.axhline(m2, color="k", lw=0.8, ls=":")
    a1.set_xlabel("L")
    a1.set_ylabel("m_2,L")
    gap = m2 - values
    ok = gap > 0
    a2.semilogy(Ls[ok], gap[ok], "o", label="m2 - m_2,L")
    if np.isfinite(rate):
        grid = np.linspace(Ls.min(), Ls.max(), 100)
        a2.semilogy(grid, prefactor * np.exp(-rate * grid), "-", label=f"fit, slope {-rate:.4g}")
    a2.set_xlabel("L")
    a2.legend(fontsize=7)
    return _save(fig, path)


def plot_decay(path, y, l2, sup, rate=None, prefactor=None, xlabel="y"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ok = l2 > 0
    ax.semilogy(np.asarray(y)[ok], np.asarray(l2)[ok], label="L2 distance")
    ok = sup > 0
    ax.semilogy(np.asarray(y)[ok], np.asarray(sup)[ok], label="sup distance")
    if rate is not None and np.isfinite(rate):
        ax.semilogy(y, prefactor * np.exp(-rate * np.asarray(y)), ":", label=f"fit, rate {rate:.4g}")
    ax.set_xlabel(xlabel)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_midray(path, rho, distances):
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in sorted(distances):
        ax.semilogy(rho, distances[k], "o-", label=f"ray {k}")
    ax.set_xlabel("rho")
    ax.set_ylabel("sup distance to limit profile")
    ax.legend(fontsize=7)
    return _save(fig, path)
