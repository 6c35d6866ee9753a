"""Static SVG figures drawn from the same data the CSV exports hold (needs matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def trace_plot(rec, path):
    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
    t = rec.t * 1e3
    ax[0].plot(t, rec["chi_x"], lw=0.3)
    ax[0].set_ylabel("chi_x (V)")
    ax[1].plot(t, rec["x"] * 1e9, lw=0.3, label="x")
    ax[1].plot(t, rec["apex_true"] * 1e9, lw=1.0, label="apex")
    ax[1].set_ylabel("x (nm)")
    ax[1].legend(loc="upper right")
    ax[2].plot(t, rec["u"], lw=0.3)
    ax[2].set_ylabel("u (V)")
    ax[2].set_xlabel("t (ms)")
    _save(fig, path)


def psd_plot(psds: dict, path, f_well=None):
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, p in psds.items():
        ax.loglog(p.f[1:], p.S[1:], lw=0.8, label=label)
    if f_well:
        ax.axvline(f_well, color="k", ls=":", lw=0.8)
    ax.set_xlabel("f (Hz)")
    ax.set_ylabel("PSD (V^2/Hz)")
    ax.legend()
    _save(fig, path)


def pdf_plot(pdfs: dict, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, pdf in pdfs.items():
        for w in pdf.windows:
            c = 0.5 * (w.edges[1:] + w.edges[:-1])
            ax.plot(c, w.counts / max(w.counts.sum(), 1), lw=0.5, alpha=0.5)
        ax.set_title(label)
    ax.set_xlabel("chi_x (V)")
    ax.set_ylabel("fraction per bin")
    _save(fig, path)


def pdf_evolution_plot(cmp, path, bins: int = 80):
    """Per-window chi_x histograms as images, one row per variant, plus the command u."""
    recs = cmp.records
    fig, axes = plt.subplots(len(recs), 2, figsize=(10, 2.6 * len(recs)), squeeze=False)
    lo = min(float(np.nanmin(r["chi_x"])) for r in recs.values() if len(r))
    hi = max(float(np.nanmax(r["chi_x"])) for r in recs.values() if len(r))
    for row, (v, rec) in enumerate(recs.items()):
        n = int(round(cmp.cfg.t_avg * rec.sample_rate))
        W = len(rec) // n
        for col, (name, arr, rng) in enumerate((("chi_x (V)", rec["chi_x"], (lo, hi)),
                                                 ("u (V)", rec["u"], (float(rec["u"].min()), float(rec["u"].max()))))):
            img = np.array([np.histogram(arr[w * n:(w + 1) * n], bins=bins, range=rng)[0] for w in range(W)]).T
            ax = axes[row, col]
            ax.imshow(img, aspect="auto", origin="lower", extent=(0, W * cmp.cfg.t_avg * 1e3, rng[0], rng[1]),
                      cmap="viridis")
            ax.set_ylabel(name)
            ax.set_title(v, fontsize=9)
        if v in cmp.reports:
            for i, ok in enumerate(cmp.reports[v].stabilized):
                if ok:
                    axes[row, 0].axvspan(i * cmp.cfg.t_avg * 1e3, (i + 1) * cmp.cfg.t_avg * 1e3, color="g", alpha=0.08)
    for ax in axes[-1]:
        ax.set_xlabel("t (ms)")
    _save(fig, path)
