"""Static SVG overlays of observed and extrapolated survival."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import LongTermAnchor  # noqa: E402
from .km import SurvivalCurve  # noqa: E402


def survival_svg(path, km: SurvivalCurve, curves: Sequence[tuple[str, np.ndarray, np.ndarray]] = (),
                 anchor: LongTermAnchor | None = None, t_max: float | None = None,
                 title: str = "") -> None:
    """Write the KM step curve, any fitted curves and the anchor tick to ``path``.

    Output is byte-stable: SVG ids use a fixed salt and no date is stored.
    """
    with plt.rc_context({"svg.hashsalt": "survext", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        t = np.concatenate(([0.0], km.times))
        s = np.concatenate(([1.0], km.survival))
        end = km.max_time if km.max_time is not None else float(t[-1])
        ax.step(np.append(t, end), np.append(s, s[-1]), where="post", color="black",
                lw=1.2, label="Kaplan-Meier")
        for label, ct, cs in curves:
            ax.plot(ct, cs, lw=1.2, label=label)
        if anchor is not None:
            half = 1.96 * np.sqrt(anchor.var_obs)
            ax.errorbar([anchor.t_obs], [anchor.s_obs], yerr=[[min(half, anchor.s_obs)],
                        [min(half, 1 - anchor.s_obs)]], fmt="_", color="firebrick",
                        markersize=14, capsize=4, label=f"anchor at {anchor.t_obs:g} months")
        right = t_max if t_max is not None else end
        if anchor is not None:
            right = max(right, anchor.t_obs * 1.05)
        ax.set_xlim(0, right)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("months")
        ax.set_ylabel("survival")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
